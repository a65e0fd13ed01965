// SPDX-License-Identifier: Apache-2.0
#include "cattn/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cattn/error.hpp"

namespace cattn {

using json = nlohmann::json;

std::size_t attention_top(std::span<const double> weights) {
  if (weights.empty())
    throw ContractError("attention_top: empty weight vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < weights.size(); ++i)
    if (weights[i] > weights[best])
      best = i;
  return best;
}

double attention_entropy(std::span<const double> weights) {
  double h = 0.0;
  for (double w : weights)
    if (w > 0.0)
      h -= w * std::log(w);
  return h;
}

namespace {

/// Positions sorted by weight descending, index ascending on ties.
std::vector<std::size_t> ranked_positions(std::span<const double> weights) {
  std::vector<std::size_t> idx(weights.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  return idx;
}

} // namespace

std::vector<RankedSentence> rank_sentences(const LegOutput& trace, const Record& record,
                                           std::size_t top_n) {
  const auto& w = trace.position_weights;
  const Record fixed = fix_length(record, w.size());
  std::vector<RankedSentence> out;
  for (std::size_t i : ranked_positions(w)) {
    if (out.size() >= top_n)
      break;
    if (fixed.utterances[i].empty())
      continue;
    out.push_back({i, utterance_text(fixed.utterances[i]), w[i]});
  }
  return out;
}

std::vector<RankedTag> rank_tags(const LegOutput& trace, const TagVocabulary& vocab,
                                 std::size_t top_n) {
  const auto& w = trace.position_weights;
  if (w.size() != vocab.size())
    throw DimensionError("rank_tags: " + std::to_string(w.size()) + " weights for " +
                         std::to_string(vocab.size()) + " tags");
  std::vector<RankedTag> out;
  for (std::size_t i : ranked_positions(w)) {
    if (out.size() >= top_n)
      break;
    out.push_back({std::string(vocab.tag(i)), w[i]});
  }
  return out;
}

bool capture_agreement(const LegOutput& trace) {
  if (trace.captures.empty() || trace.kernel_width == 0)
    throw ContractError("capture_agreement: trace has no filter captures");
  const std::size_t top = attention_top(trace.position_weights);
  return std::any_of(trace.captures.begin(), trace.captures.end(), [&](const Capture& c) {
    return top >= c.window_start && top < c.window_start + trace.kernel_width;
  });
}

std::optional<double> leg_dominance(std::span<const std::array<double, 2>> leg_weights) {
  if (leg_weights.empty())
    return std::nullopt;
  std::size_t pos = 0;
  for (const auto& w : leg_weights)
    if (w[0] > w[1])
      ++pos;
  return static_cast<double>(pos) / static_cast<double>(leg_weights.size());
}

std::optional<double> leg_weight_summary(std::span<const UnifiedTrace> traces) {
  std::vector<std::array<double, 2>> w;
  w.reserve(traces.size());
  for (const auto& t : traces)
    w.push_back(t.leg_weights);
  return leg_dominance(w);
}

// ---------------------------------------------------------------------------
// Per-record reports

namespace {

LegExplanation explain_leg(const LegOutput& trace) {
  LegExplanation e;
  e.attention_top = attention_top(trace.position_weights);
  e.attention_entropy = attention_entropy(trace.position_weights);
  e.captures = trace.captures;
  e.kernel_width = trace.kernel_width;
  if (!trace.captures.empty())
    e.capture_agreement = capture_agreement(trace);
  return e;
}

} // namespace

ExplanationReport explain_record(const Model& model, const Sample& sample, const Record& record,
                                 const ExplainOptions& options) {
  Tape tape;
  ForwardResult r = forward(tape, model, sample.input);
  ExplanationReport rep;
  rep.record_id = sample.id;
  rep.label = sample.label;
  rep.patient_probability = r.probabilities.value()[1];
  rep.predicted = rep.patient_probability > 0.5 ? Label::Patient : Label::Control;
  if (r.pos_leg) {
    rep.pos_leg = explain_leg(*r.pos_leg);
    rep.pos_leg->top_tags = rank_tags(*r.pos_leg, TagVocabulary::penn_treebank(), options.top_tags);
  }
  if (r.emb_leg) {
    rep.emb_leg = explain_leg(*r.emb_leg);
    rep.emb_leg->top_sentences = rank_sentences(*r.emb_leg, record, options.top_sentences);
  }
  rep.leg_weights = r.leg_weights;
  return rep;
}

CorpusExplanationSummary summarize(std::span<const ExplanationReport> reports) {
  CorpusExplanationSummary s;
  s.records = reports.size();
  std::size_t sent_n = 0, sent_hit = 0, tag_n = 0, tag_hit = 0;
  std::vector<std::array<double, 2>> legs;
  const auto& vocab = TagVocabulary::penn_treebank();
  std::vector<std::size_t> counts(vocab.size(), 0);
  std::array<double, 2> entropy_sum{0.0, 0.0};
  std::array<std::size_t, 2> entropy_n{0, 0};
  for (const auto& r : reports) {
    if (r.emb_leg) {
      if (r.emb_leg->capture_agreement) {
        ++sent_n;
        sent_hit += *r.emb_leg->capture_agreement ? 1 : 0;
      }
      const int c = static_cast<int>(r.label);
      entropy_sum[c] += r.emb_leg->attention_entropy;
      ++entropy_n[c];
    }
    if (r.pos_leg) {
      if (r.pos_leg->capture_agreement) {
        ++tag_n;
        tag_hit += *r.pos_leg->capture_agreement ? 1 : 0;
      }
      ++counts[r.pos_leg->attention_top];
    }
    if (r.leg_weights)
      legs.push_back(*r.leg_weights);
  }
  if (sent_n)
    s.sentence_capture_rate = static_cast<double>(sent_hit) / static_cast<double>(sent_n);
  if (tag_n)
    s.tag_capture_rate = static_cast<double>(tag_hit) / static_cast<double>(tag_n);
  s.leg_dominance = leg_dominance(legs);
  std::vector<std::size_t> order(vocab.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  for (std::size_t i : order)
    if (counts[i] > 0)
      s.tag_histogram.emplace_back(std::string(vocab.tag(i)), counts[i]);
  if (entropy_n[0])
    s.control_sentence_entropy = entropy_sum[0] / static_cast<double>(entropy_n[0]);
  if (entropy_n[1])
    s.patient_sentence_entropy = entropy_sum[1] / static_cast<double>(entropy_n[1]);
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_double(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null())
    return std::nullopt;
  return j.at(key).get<double>();
}

json leg_to_json(const LegExplanation& e, bool sentences) {
  json j;
  if (sentences) {
    json s = json::array();
    for (const auto& r : e.top_sentences)
      s.push_back({{"index", r.index}, {"text", r.text}, {"attention", r.attention}});
    j["top_sentences"] = std::move(s);
  } else {
    json t = json::array();
    for (const auto& r : e.top_tags)
      t.push_back({{"tag", r.tag}, {"attention", r.attention}});
    j["top_tags"] = std::move(t);
  }
  j["attention_top"] = e.attention_top;
  j["attention_entropy"] = e.attention_entropy;
  json caps = json::array();
  for (const auto& c : e.captures)
    caps.push_back({{"filter", c.filter}, {"window_start", c.window_start}});
  j["captures"] = std::move(caps);
  j["kernel_width"] = e.kernel_width;
  j["capture_agreement"] = e.capture_agreement ? json(*e.capture_agreement) : json(nullptr);
  return j;
}

LegExplanation leg_from_json(const json& j) {
  LegExplanation e;
  if (j.contains("top_sentences"))
    for (const auto& s : j.at("top_sentences"))
      e.top_sentences.push_back({s.at("index").get<std::size_t>(), s.at("text").get<std::string>(),
                                 s.at("attention").get<double>()});
  if (j.contains("top_tags"))
    for (const auto& t : j.at("top_tags"))
      e.top_tags.push_back({t.at("tag").get<std::string>(), t.at("attention").get<double>()});
  e.attention_top = j.at("attention_top").get<std::size_t>();
  e.attention_entropy = j.at("attention_entropy").get<double>();
  for (const auto& c : j.at("captures"))
    e.captures.push_back({c.at("filter").get<std::size_t>(), c.at("window_start").get<std::size_t>()});
  e.kernel_width = j.at("kernel_width").get<std::size_t>();
  if (!j.at("capture_agreement").is_null())
    e.capture_agreement = j.at("capture_agreement").get<bool>();
  return e;
}

Label label_from_json(const json& j) {
  const int v = j.get<int>();
  if (v != 0 && v != 1)
    throw IngestionError("label must be 0 or 1");
  return static_cast<Label>(v);
}

const char* label_word(Label l) { return l == Label::Patient ? "patient" : "control"; }

} // namespace

std::string report_to_json(const ExplanationReport& r) {
  json j;
  j["record_id"] = r.record_id;
  j["label"] = static_cast<int>(r.label);
  j["predicted_label"] = static_cast<int>(r.predicted);
  j["patient_probability"] = r.patient_probability;
  if (r.pos_leg)
    j["pos_leg"] = leg_to_json(*r.pos_leg, false);
  if (r.emb_leg)
    j["emb_leg"] = leg_to_json(*r.emb_leg, true);
  if (r.leg_weights)
    j["leg_weights"] = {{"pos", (*r.leg_weights)[0]}, {"emb", (*r.leg_weights)[1]}};
  return j.dump();
}

ExplanationReport report_from_json(std::string_view text) {
  try {
    json j = json::parse(text);
    ExplanationReport r;
    r.record_id = j.at("record_id").get<std::string>();
    r.label = label_from_json(j.at("label"));
    r.predicted = label_from_json(j.at("predicted_label"));
    r.patient_probability = j.at("patient_probability").get<double>();
    if (j.contains("pos_leg"))
      r.pos_leg = leg_from_json(j.at("pos_leg"));
    if (j.contains("emb_leg"))
      r.emb_leg = leg_from_json(j.at("emb_leg"));
    if (j.contains("leg_weights"))
      r.leg_weights = std::array<double, 2>{j.at("leg_weights").at("pos").get<double>(),
                                            j.at("leg_weights").at("emb").get<double>()};
    return r;
  } catch (const json::exception& e) {
    throw IngestionError(std::string("explanation report: ") + e.what());
  }
}

std::string report_to_text(const ExplanationReport& r) {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-6s %-14s %s\n", "Label", "Record", "Important Sentences");
  os << buf;
  const std::string indent(22, ' ');
  bool first = true;
  auto line_prefix = [&]() {
    if (first) {
      char head[64];
      std::snprintf(head, sizeof head, "%-6d %-14s ", static_cast<int>(r.label), r.record_id.c_str());
      first = false;
      return std::string(head);
    }
    return indent;
  };
  if (r.emb_leg && !r.emb_leg->top_sentences.empty()) {
    for (const auto& s : r.emb_leg->top_sentences) {
      std::snprintf(buf, sizeof buf, "[%zu] %.3f  ", s.index, s.attention);
      os << line_prefix() << buf << s.text << '\n';
    }
  } else {
    os << line_prefix() << "(no sentence attention)\n";
  }
  std::snprintf(buf, sizeof buf, "  predicted: %s (p = %.3f)\n", label_word(r.predicted),
                r.predicted_probability());
  os << buf;
  auto leg_line = [&](const char* name, const LegExplanation& e) {
    std::snprintf(buf, sizeof buf, "  %s attention entropy: %.4f, top position %zu", name,
                  e.attention_entropy, e.attention_top);
    os << buf;
    if (e.capture_agreement)
      os << (*e.capture_agreement ? ", captured by CNN" : ", not captured by CNN");
    os << '\n';
  };
  if (r.emb_leg)
    leg_line("sentence", *r.emb_leg);
  if (r.pos_leg) {
    leg_line("tag", *r.pos_leg);
    os << "  top tags:";
    for (const auto& t : r.pos_leg->top_tags) {
      std::snprintf(buf, sizeof buf, " %s %.3f", t.tag.c_str(), t.attention);
      os << buf;
    }
    os << '\n';
  }
  if (r.leg_weights) {
    const auto& w = *r.leg_weights;
    std::snprintf(buf, sizeof buf, "  leg weights: PoS %.3f  embedding %.3f  (sum %.3f)\n", w[0], w[1],
                  w[0] + w[1]);
    os << buf;
  }
  return os.str();
}

std::string summary_to_json(const CorpusExplanationSummary& s) {
  json j;
  j["records"] = s.records;
  j["sentence_capture_rate"] = opt(s.sentence_capture_rate);
  j["tag_capture_rate"] = opt(s.tag_capture_rate);
  j["leg_dominance"] = opt(s.leg_dominance);
  json h = json::array();
  for (const auto& [tag, count] : s.tag_histogram)
    h.push_back({{"tag", tag}, {"count", count}});
  j["tag_histogram"] = std::move(h);
  j["control_sentence_entropy"] = opt(s.control_sentence_entropy);
  j["patient_sentence_entropy"] = opt(s.patient_sentence_entropy);
  return j.dump();
}

CorpusExplanationSummary summary_from_json(std::string_view text) {
  try {
    json j = json::parse(text);
    CorpusExplanationSummary s;
    s.records = j.at("records").get<std::size_t>();
    s.sentence_capture_rate = opt_double(j, "sentence_capture_rate");
    s.tag_capture_rate = opt_double(j, "tag_capture_rate");
    s.leg_dominance = opt_double(j, "leg_dominance");
    for (const auto& e : j.at("tag_histogram"))
      s.tag_histogram.emplace_back(e.at("tag").get<std::string>(), e.at("count").get<std::size_t>());
    s.control_sentence_entropy = opt_double(j, "control_sentence_entropy");
    s.patient_sentence_entropy = opt_double(j, "patient_sentence_entropy");
    return s;
  } catch (const json::exception& e) {
    throw IngestionError(std::string("explanation summary: ") + e.what());
  }
}

std::string summary_to_text(const CorpusExplanationSummary& s) {
  std::ostringstream os;
  char buf[256];
  auto frac = [&](const char* name, const std::optional<double>& v) {
    if (v)
      std::snprintf(buf, sizeof buf, "%-28s %.3f\n", name, *v);
    else
      std::snprintf(buf, sizeof buf, "%-28s %s\n", name, "n/a");
    os << buf;
  };
  std::snprintf(buf, sizeof buf, "%-28s %zu\n", "records", s.records);
  os << buf;
  frac("sentence capture rate", s.sentence_capture_rate);
  frac("tag capture rate", s.tag_capture_rate);
  frac("PoS leg dominance", s.leg_dominance);
  if (s.leg_dominance)
    frac("embedding leg dominance", 1.0 - *s.leg_dominance);
  frac("control sentence entropy", s.control_sentence_entropy);
  frac("patient sentence entropy", s.patient_sentence_entropy);
  os << "top attention tags:";
  if (s.tag_histogram.empty())
    os << " n/a";
  for (const auto& [tag, count] : s.tag_histogram) {
    std::snprintf(buf, sizeof buf, " %s:%zu", tag.c_str(), count);
    os << buf;
  }
  os << '\n';
  return os.str();
}

} // namespace cattn
