#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "cattn/error.hpp"
#include "cattn/features.hpp"

using namespace cattn;

namespace {

Record make_record(std::size_t n_utt, std::size_t dim = 0) {
  Record r;
  r.id = "r";
  for (std::size_t i = 0; i < n_utt; ++i)
    r.utterances.push_back({{"w" + std::to_string(i), "NN"}});
  if (dim) {
    std::vector<std::vector<double>> e;
    for (std::size_t i = 0; i < n_utt; ++i)
      e.push_back(std::vector<double>(dim, static_cast<double>(i + 1)));
    r.embeddings = e;
  }
  return r;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

} // namespace

TEST_CASE("tag vocabulary") {
  const auto& v = TagVocabulary::penn_treebank();
  CHECK(v.size() == 36);
  CHECK(v.tag(0) == "CC");
  CHECK(v.tag(35) == "WRB");
  for (const char* t : {"PRP", "PRP$", "MD", "EX", "NNPS", "WP$"})
    CHECK(v.index_of(t).has_value());
  CHECK_FALSE(v.index_of("NNP$").has_value());
  CHECK_FALSE(v.index_of("XYZ").has_value());
  std::set<std::string_view> unique(v.tags().begin(), v.tags().end());
  CHECK(unique.size() == 36);
}

TEST_CASE("fix_length") {
  CHECK(fix_length(make_record(20)).utterances.size() == 17);
  CHECK(fix_length(make_record(20)).utterances[16] == Utterance{{"w16", "NN"}});
  const Record padded = fix_length(make_record(5, 3));
  CHECK(padded.utterances.size() == 17);
  CHECK(padded.utterances[5].empty());
  CHECK((*padded.embeddings)[16] == std::vector<double>(3, 0.0));
  const Record exact = make_record(17, 2);
  CHECK(fix_length(exact) == exact);
  CHECK_THROWS_AS(fix_length(exact, 0), ConfigError);
}

TEST_CASE("PoS matrix") {
  const auto& v = TagVocabulary::penn_treebank();
  Record empty;
  empty.id = "e";
  const Tensor z = build_pos_matrix(empty, v);
  CHECK(z.shape() == Shape{36, 17});
  CHECK(z == Tensor::matrix(36, 17));

  Record r;
  r.id = "x";
  r.utterances.push_back({{"I", "PRP"}, {"will", "MD"}});
  const Tensor p = build_pos_matrix(r, v);
  double total = 0;
  for (double x : p.values())
    total += x;
  CHECK(total == 2.0);
  CHECK(p(*v.index_of("PRP"), 0) == 1.0);
  CHECK(p(*v.index_of("MD"), 0) == 1.0);

  r.utterances.push_back({{"x", "BOGUS"}});
  const std::string msg = error_of([&] { build_pos_matrix(r, v); });
  CHECK(msg.find("BOGUS") != std::string::npos);
  CHECK(msg.find("'x'") != std::string::npos);
  CHECK_THROWS_AS(build_pos_matrix(r, v), IngestionError);
}

TEST_CASE("embeddings") {
  SUBCASE("precomputed rows are copied, padding is zero") {
    EmbeddingOptions o{EmbeddingProvider::Precomputed, 0, 0};
    const Tensor u = embed(make_record(3, 4), o, 5);
    CHECK(u.shape() == Shape{5, 4});
    CHECK(u(2, 3) == 3.0);
    CHECK(u(3, 0) == 0.0);
    CHECK(u(4, 3) == 0.0);
    CHECK_THROWS_AS(embed(make_record(3), o), IngestionError);
  }
  SUBCASE("hash projection") {
    EmbeddingOptions o{EmbeddingProvider::HashProjection, 16, 11};
    Record r;
    r.id = "h";
    r.utterances = {{{"the", "DT"}, {"boy", "NN"}}, {{"the", "DT"}, {"boy", "NN"}}, {{"jar", "NN"}}};
    const Tensor u = embed(r, o, 4);
    CHECK(u.shape() == Shape{4, 16});
    double n0 = 0;
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(u(0, j) == u(1, j));
      CHECK(u(3, j) == 0.0);
      n0 += u(0, j) * u(0, j);
    }
    CHECK(n0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(embed(r, o, 4) == u);
    CHECK_FALSE(embed(r, EmbeddingOptions{EmbeddingProvider::HashProjection, 16, 12}, 4) == u);
  }
}

TEST_CASE("split sizes") {
  CHECK(split_sizes(100) == std::array<std::size_t, 3>{81, 9, 10});
  CHECK(split_sizes(1229) == std::array<std::size_t, 3>{995, 111, 123});
  for (std::size_t n = 10; n < 500; ++n) {
    const auto s = split_sizes(n);
    REQUIRE(s[0] + s[1] + s[2] == n);
  }
}

TEST_CASE("split_dataset") {
  std::vector<Record> recs;
  for (int i = 0; i < 57; ++i) {
    Record r;
    r.id = "id" + std::to_string(i);
    recs.push_back(r);
  }
  const auto a = split_dataset(recs, 3), b = split_dataset(recs, 3), c = split_dataset(recs, 4);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK_FALSE(a.train == c.train);
  std::set<std::string> seen;
  for (const auto* part : {&a.train, &a.validation, &a.test})
    for (const auto& r : *part)
      CHECK(seen.insert(r.id).second);
  CHECK(seen.size() == 57);
  recs.resize(9);
  CHECK_THROWS_AS(split_dataset(recs, 1), ConfigError);
}

TEST_CASE("synthetic corpus") {
  SyntheticOptions o;
  o.n_records = 200;
  const auto a = generate_synthetic_corpus(o);
  CHECK(a.size() == 200);
  CHECK(generate_synthetic_corpus(o) == a);
  std::size_t patients = 0;
  for (const auto& r : a) {
    patients += r.label == Label::Patient;
    REQUIRE(r.embeddings.has_value());
    REQUIRE(r.embeddings->size() == r.utterances.size());
  }
  CHECK(patients == 162);

  o.n_records = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(o), ConfigError);
  o.n_records = 10;
  o.patient_fraction = 1.0;
  CHECK_THROWS_AS(generate_synthetic_corpus(o), ConfigError);
  o.patient_fraction = 0.5;
  o.signal_strength = 1.5;
  CHECK_THROWS_AS(generate_synthetic_corpus(o), ConfigError);
  o.signal_strength = 0.5;
  o.embedding_dim = 0;
  CHECK_FALSE(generate_synthetic_corpus(o).front().embeddings.has_value());
}

namespace {

// Welch statistic for the difference in per-record boosted-tag rates
// between the classes. Rates are per record because speaker style makes
// tokens within a record correlated.
double boosted_rate_z(const std::vector<Record>& corpus, double* control_rate = nullptr,
                      double* patient_rate = nullptr) {
  std::set<std::string> boosted(boosted_tags().begin(), boosted_tags().end());
  std::vector<double> rates[2];
  for (const auto& r : corpus) {
    double hits = 0, tokens = 0;
    for (const auto& u : r.utterances)
      for (const auto& t : u) {
        tokens += 1;
        hits += boosted.count(t.tag) ? 1 : 0;
      }
    rates[static_cast<int>(r.label)].push_back(hits / tokens);
  }
  double mean[2], var[2];
  for (int c = 0; c < 2; ++c) {
    const double n = static_cast<double>(rates[c].size());
    mean[c] = 0;
    for (double x : rates[c])
      mean[c] += x / n;
    var[c] = 0;
    for (double x : rates[c])
      var[c] += (x - mean[c]) * (x - mean[c]) / (n - 1);
    var[c] /= n;
  }
  if (control_rate)
    *control_rate = mean[0];
  if (patient_rate)
    *patient_rate = mean[1];
  return (mean[1] - mean[0]) / std::sqrt(var[0] + var[1]);
}

} // namespace

TEST_CASE("synthetic signal") {
  CHECK(boosted_tags() == std::vector<std::string>{"EX", "MD", "NNPS", "PRP"});
  SyntheticOptions o;
  o.signal_strength = 0.0;
  // Several seeds; the null must hold for each.
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    o.seed = seed;
    CHECK(std::abs(boosted_rate_z(generate_synthetic_corpus(o))) < 3.0);
  }
  o.signal_strength = 0.8;
  o.seed = 7;
  double c = 0, p = 0;
  CHECK(boosted_rate_z(generate_synthetic_corpus(o), &c, &p) > 10.0);
  CHECK(p > 2 * c);
}

TEST_CASE("JSONL round trip") {
  SyntheticOptions o;
  o.n_records = 12;
  o.embedding_dim = 5;
  const auto corpus = generate_synthetic_corpus(o);
  std::stringstream ss;
  write_corpus(ss, corpus);
  const std::string first = ss.str();
  const auto back = read_corpus(ss);
  CHECK(back == corpus);
  std::stringstream again;
  write_corpus(again, back);
  CHECK(again.str() == first);
}

TEST_CASE("JSONL validation errors carry line numbers") {
  auto fails_with = [](const std::string& text, const std::string& needle) {
    std::stringstream ss(text);
    const std::string msg = error_of([&] { read_corpus(ss); });
    CAPTURE(msg);
    CHECK(msg.find(needle) != std::string::npos);
  };
  const std::string ok = R"({"id":"a","label":0,"utterances":[[["I","PRP"]]]})";
  fails_with(ok + "\n{not json", "line 2: malformed JSON");
  fails_with(ok + "\n" + R"({"id":"b","label":2,"utterances":[]})", "line 2: record 'b': label must be 0 or 1");
  fails_with(R"({"id":"c","label":1,"utterances":[[["x","ZZ"]]]})", "line 1: record 'c': unknown PoS tag 'ZZ'");
  fails_with(R"({"id":"d","label":1,"utterances":[],"extra":1})", "unknown field 'extra'");
  fails_with(R"({"label":1,"utterances":[]})", "missing string field 'id'");
  fails_with(R"({"id":"e","label":1,"utterances":[[["x"]]]})", "token must be");
  fails_with(R"({"id":"f","label":1,"utterances":[[["x","NN"]]],"embeddings":[[1],[2]]})",
             "2 embeddings for 1 utterances");
  fails_with(ok + "\n\n" + ok, "line 3: duplicate record id 'a'");
  std::stringstream blank(ok + "\n   \n");
  CHECK(read_corpus(blank).size() == 1);
  CHECK_THROWS_AS(read_corpus_file("/nonexistent/corpus.jsonl"), IoError);
}
