#include "uasr/selftrain.hpp"

#include <algorithm>

#include "uasr/evalmetrics.hpp"
#include "uasr/segment.hpp"

namespace uasr {

SelfTrainStrategy parse_strategy(const std::string& name) {
  if (name == "hmm") return SelfTrainStrategy::kHmm;
  if (name == "hmm+hmm") return SelfTrainStrategy::kHmmHmm;
  if (name == "ctc") return SelfTrainStrategy::kCtcDirect;
  if (name == "hmm+ctc") return SelfTrainStrategy::kHmmCtc;
  if (name == "hmm+resegment+gan") return SelfTrainStrategy::kHmmResegmentGan;
  throw ConfigError("unknown self-training strategy: " + name +
                    " (want hmm | hmm+hmm | ctc | hmm+ctc | hmm+resegment+gan)");
}

std::string strategy_name(SelfTrainStrategy strategy) {
  switch (strategy) {
    case SelfTrainStrategy::kHmm: return "hmm";
    case SelfTrainStrategy::kHmmHmm: return "hmm+hmm";
    case SelfTrainStrategy::kCtcDirect: return "ctc";
    case SelfTrainStrategy::kHmmCtc: return "hmm+ctc";
    case SelfTrainStrategy::kHmmResegmentGan: return "hmm+resegment+gan";
  }
  return "?";
}

double corpus_per(const std::vector<PhonemeSequence>& hypotheses,
                  const std::vector<PhonemeSequence>& references,
                  const PhonemeInventory& inventory) {
  UASR_REQUIRE(hypotheses.size() == references.size(), "corpus_per: size mismatch");
  std::vector<ErrorReport> reports;
  for (size_t u = 0; u < hypotheses.size(); ++u) {
    std::vector<int> hyp, ref;
    for (int p : hypotheses[u].phones)
      if (inventory.is_scorable(p)) hyp.push_back(p);
    for (int p : references[u].phones)
      if (inventory.is_scorable(p)) ref.push_back(p);
    reports.push_back(edit_distance(ref, hyp));
  }
  return accumulate(reports).rate();
}

namespace {

std::vector<PhonemeSequence> wrap_with_sil(const std::vector<PhonemeSequence>& labels,
                                           const PhonemeInventory& inventory) {
  std::vector<PhonemeSequence> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    PhonemeSequence w;
    w.utterance_id = l.utterance_id;
    w.phones.push_back(inventory.sil_index);
    for (int p : l.phones) {
      if (p == inventory.sil_index && !w.phones.empty() && w.phones.back() == inventory.sil_index)
        continue;
      w.phones.push_back(p);
    }
    if (w.phones.back() != inventory.sil_index) w.phones.push_back(inventory.sil_index);
    out.push_back(std::move(w));
  }
  return out;
}

struct HmmRound {
  HmmModel model;
  std::vector<PhonemeSequence> relabeled;
};

HmmRound run_hmm_round(const SelfTrainInputs& inputs,
                       const std::vector<PhonemeSequence>& labels) {
  const auto& inventory = *inputs.inventory;
  std::vector<PhonemeSequence> train_labels =
      inputs.wrap_labels_with_sil ? wrap_with_sil(labels, inventory) : labels;
  HmmRound round;
  round.model = train_hmm(*inputs.features, train_labels, inventory, inputs.hmm_config);
  DecoderContext phone_decoder =
      build_decoder(make_phoneme_lexicon(inventory), inventory, *inputs.phone_lm);
  round.relabeled = hmm_relabel(round.model, *inputs.features, phone_decoder, inventory,
                                inputs.decode_config);
  return round;
}

}  // namespace

SelfTrainResult self_train_pipeline(SelfTrainStrategy strategy, const SelfTrainInputs& inputs) {
  UASR_REQUIRE(inputs.features && inputs.pseudo_labels && inputs.inventory && inputs.phone_lm,
               "self_train_pipeline: missing inputs");
  UASR_REQUIRE(inputs.features->size() == inputs.pseudo_labels->size(),
               "self_train_pipeline: pseudo-label count mismatch");

  SelfTrainResult result;
  auto add_metric = [&](const std::string& stage, const std::vector<PhonemeSequence>& hyps) {
    StageMetric m;
    m.stage = stage;
    if (inputs.references) m.per = corpus_per(hyps, *inputs.references, *inputs.inventory);
    result.metrics.push_back(m);
  };
  add_metric("pseudo-labels", *inputs.pseudo_labels);

  switch (strategy) {
    case SelfTrainStrategy::kHmm: {
      HmmRound round = run_hmm_round(inputs, *inputs.pseudo_labels);
      add_metric("hmm", round.relabeled);
      result.final_labels = std::move(round.relabeled);
      result.hmm = std::move(round.model);
      break;
    }
    case SelfTrainStrategy::kHmmHmm: {
      HmmRound first = run_hmm_round(inputs, *inputs.pseudo_labels);
      add_metric("hmm", first.relabeled);
      HmmRound second = run_hmm_round(inputs, first.relabeled);
      add_metric("hmm2", second.relabeled);
      result.final_labels = std::move(second.relabeled);
      result.hmm = std::move(second.model);
      break;
    }
    case SelfTrainStrategy::kCtcDirect: {
      CtcModel model =
          train_ctc(*inputs.features, *inputs.pseudo_labels, *inputs.inventory, inputs.ctc_config);
      std::vector<PhonemeSequence> decoded;
      for (const auto& f : *inputs.features) decoded.push_back(ctc_greedy_decode(model, f));
      add_metric("ctc", decoded);
      result.final_labels = std::move(decoded);
      result.ctc = std::move(model);
      break;
    }
    case SelfTrainStrategy::kHmmCtc: {
      HmmRound round = run_hmm_round(inputs, *inputs.pseudo_labels);
      add_metric("hmm", round.relabeled);
      CtcModel model =
          train_ctc(*inputs.features, round.relabeled, *inputs.inventory, inputs.ctc_config);
      std::vector<PhonemeSequence> decoded;
      for (const auto& f : *inputs.features) decoded.push_back(ctc_greedy_decode(model, f));
      add_metric("ctc", decoded);
      result.final_labels = std::move(decoded);
      result.hmm = std::move(round.model);
      result.ctc = std::move(model);
      break;
    }
    case SelfTrainStrategy::kHmmResegmentGan: {
      UASR_REQUIRE(inputs.pca && inputs.gan_config && inputs.text_corpus,
                   "hmm+resegment+gan needs pca, gan_config and text_corpus");
      HmmRound round = run_hmm_round(inputs, *inputs.pseudo_labels);
      add_metric("hmm", round.relabeled);

      // forced-alignment boundaries -> new segment representations
      std::vector<PhonemeSequence> align_labels = inputs.wrap_labels_with_sil
                                                      ? wrap_with_sil(*inputs.pseudo_labels,
                                                                      *inputs.inventory)
                                                      : *inputs.pseudo_labels;
      std::vector<SegmentSequence> reseg;
      for (size_t u = 0; u < inputs.features->size(); ++u) {
        const auto& f = (*inputs.features)[u];
        Alignment alignment = forced_align(round.model, f, align_labels[u]);
        std::vector<int> phone_of_frame(static_cast<size_t>(f.num_frames()));
        for (int t = 0; t < f.num_frames(); ++t) {
          int pos = alignment.phone_position(t, inputs.hmm_config.states_per_phoneme);
          phone_of_frame[size_t(t)] = align_labels[u].phones[size_t(pos)];
        }
        Segmentation seg = boundaries_from_ids(phone_of_frame);
        reseg.push_back(build_segment_reps(f, seg, *inputs.pca));
      }

      TrainResult gan = train_gan(*inputs.gan_config, reseg, *inputs.text_corpus,
                                  *inputs.phone_lm, *inputs.inventory);
      const Checkpoint& last = gan.checkpoints.back();
      std::vector<PhonemeSequence> viterbi;
      for (const auto& s : reseg) viterbi.push_back(viterbi_transcribe(last.generator, s));
      add_metric("resegment-gan", viterbi);
      result.final_labels = std::move(viterbi);
      result.hmm = std::move(round.model);
      break;
    }
  }
  return result;
}

}  // namespace uasr
