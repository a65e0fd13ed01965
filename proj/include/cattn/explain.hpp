// SPDX-License-Identifier: Apache-2.0
//
// Explanations read off a forward trace:
//  - intra-feature: which sentences (embedding leg) or tags (PoS leg) carry
//    the most position-attention weight, and whether the top position falls
//    inside some CNN filter's max-pooled window;
//  - inter-feature-class: the unified model's weights on the two legs.
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cattn/features.hpp"
#include "cattn/model.hpp"
#include "cattn/training.hpp"

namespace cattn {

struct RankedSentence {
  std::size_t index = 0;
  std::string text;
  double attention = 0.0;

  bool operator==(const RankedSentence&) const = default;
};

struct RankedTag {
  std::string tag;
  double attention = 0.0;

  bool operator==(const RankedTag&) const = default;
};

/// Index of the largest weight, lowest index on ties.
std::size_t attention_top(std::span<const double> weights);
/// Shannon entropy (nats) of an attention distribution.
double attention_entropy(std::span<const double> weights);

/// Top `top_n` non-padding utterances by position weight, descending, ties
/// broken by index. `record` is the raw record; it is length-fixed to the
/// trace's position count here.
std::vector<RankedSentence> rank_sentences(const LegOutput& trace, const Record& record,
                                           std::size_t top_n = 3);

/// Top `top_n` tags by the PoS leg's position weights.
std::vector<RankedTag> rank_tags(const LegOutput& trace, const TagVocabulary& vocab,
                                 std::size_t top_n);

/// True iff the attention-top position lies in [start, start + k) for some
/// filter's max-pooled window. Throws ContractError for traces without
/// captures (dense legs).
bool capture_agreement(const LegOutput& trace);

/// Fraction of traces whose PoS weight is strictly larger than the embedding
/// weight. Absent for an empty set.
std::optional<double> leg_dominance(std::span<const std::array<double, 2>> leg_weights);
std::optional<double> leg_weight_summary(std::span<const UnifiedTrace> traces);

struct LegExplanation {
  std::vector<RankedSentence> top_sentences; // embedding leg
  std::vector<RankedTag> top_tags;           // PoS leg
  std::size_t attention_top = 0;
  double attention_entropy = 0.0;
  std::vector<Capture> captures;
  std::size_t kernel_width = 0;
  std::optional<bool> capture_agreement; // absent for dense legs

  bool operator==(const LegExplanation&) const = default;
};

struct ExplanationReport {
  std::string record_id;
  Label label = Label::Control;
  Label predicted = Label::Control;
  double patient_probability = 0.0;
  std::optional<LegExplanation> pos_leg;
  std::optional<LegExplanation> emb_leg;
  std::optional<std::array<double, 2>> leg_weights; // (pos, emb)

  double predicted_probability() const {
    return predicted == Label::Patient ? patient_probability : 1.0 - patient_probability;
  }
  bool operator==(const ExplanationReport&) const = default;
};

struct ExplainOptions {
  std::size_t top_sentences = 3;
  std::size_t top_tags = 5;
};

/// Runs the model on one sample and assembles its report. `record` supplies
/// the sentence text.
ExplanationReport explain_record(const Model& model, const Sample& sample, const Record& record,
                                 const ExplainOptions& options = {});

struct CorpusExplanationSummary {
  std::size_t records = 0;
  std::optional<double> sentence_capture_rate;
  std::optional<double> tag_capture_rate;
  std::optional<double> leg_dominance;
  /// Attention-top tag counts, descending by count, vocabulary order on ties.
  std::vector<std::pair<std::string, std::size_t>> tag_histogram;
  /// Mean entropy of the sentence attention per true class (control, patient).
  std::optional<double> control_sentence_entropy;
  std::optional<double> patient_sentence_entropy;

  bool operator==(const CorpusExplanationSummary&) const = default;
};

CorpusExplanationSummary summarize(std::span<const ExplanationReport> reports);

std::string report_to_json(const ExplanationReport& r);
ExplanationReport report_from_json(std::string_view text);
std::string report_to_text(const ExplanationReport& r);

std::string summary_to_json(const CorpusExplanationSummary& s);
CorpusExplanationSummary summary_from_json(std::string_view text);
std::string summary_to_text(const CorpusExplanationSummary& s);

} // namespace cattn
