#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cattn/error.hpp"
#include "cattn/pipeline.hpp"

using namespace cattn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const char* f) const { return (path / f).string(); }
};

} // namespace

TEST_CASE("run config defaults and echo") {
  const RunConfig c;
  const std::string echo = c.echo();
  for (const char* line : {"num_layers = 6\n", "utterances = 17\n", "class_weight_control = 0.7\n",
                           "class_weight_patient = 0.3\n", "variant = \"c-attention-unified\"\n",
                           "num_heads = 2\n", "learning_rate = 0.01\n", "batch_size = 16\n"})
    CHECK(echo.find(line) != std::string::npos);
  std::size_t lines = 0;
  for (char ch : echo)
    lines += ch == '\n';
  CHECK(lines == RunConfig::keys().size());
  CHECK(parse_run_config(echo).echo() == echo);
  CHECK(c.get("variant") == "c-attention-unified");
}

TEST_CASE("run config parsing") {
  const RunConfig c = parse_run_config(
      "# experiment\n"
      "variant = \"attention-ft\"   # ablation\n"
      "\n"
      "epochs=3\n"
      "learning_rate = 5e-3\n"
      "feed_forward = true\n"
      "corpus = \"data/a#b.jsonl\"\n");
  CHECK(c.variant == "attention-ft");
  CHECK(c.epochs == 3);
  CHECK(c.learning_rate == 5e-3);
  CHECK(c.feed_forward);
  CHECK(c.corpus == "data/a#b.jsonl");

  CHECK(error_of([] { parse_run_config("epochs = 3\nbogus_key = 1\n"); }).find("config line 2") !=
        std::string::npos);
  CHECK(error_of([] { parse_run_config("bogus_key = 1\n"); }).find("bogus_key") != std::string::npos);
  CHECK_THROWS_AS(parse_run_config("epochs = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("variant = \"c-lstm\"\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("feed_forward = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model_dim = 33\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("embedding_provider = \"glove\"\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("class_weight_control = 0\n"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.conf"), IoError);

  RunConfig d;
  CHECK_THROWS_AS(d.set("nope", "1"), ConfigError);
  d.set("seed", "99");
  CHECK(d.seed == 99);
}

TEST_CASE("embedding provider resolution") {
  SyntheticOptions o;
  o.n_records = 12;
  o.embedding_dim = 5;
  auto corpus = generate_synthetic_corpus(o);
  RunConfig c;
  auto e = resolve_embedding(c, corpus);
  CHECK(e.provider == EmbeddingProvider::Precomputed);
  CHECK(e.dim == 5);
  corpus[3].embeddings.reset();
  e = resolve_embedding(c, corpus);
  CHECK(e.provider == EmbeddingProvider::HashProjection);
  CHECK(e.dim == 64);
  c.embedding_provider = "precomputed";
  CHECK_THROWS_AS(resolve_embedding(c, corpus), IngestionError);
}

TEST_CASE("generate, train, evaluate, explain") {
  TempDir dir("cattn_pipeline_test");
  SyntheticOptions o;
  o.n_records = 40;
  o.embedding_dim = 8;
  const auto counts = run_generate(o, dir / "c.jsonl");
  CHECK(counts.control + counts.patient == 40);
  run_generate(o, dir / "c2.jsonl");
  CHECK(slurp(dir / "c.jsonl") == slurp(dir / "c2.jsonl"));

  RunConfig c;
  c.corpus = dir / "c.jsonl";
  c.checkpoint = dir / "m.json";
  c.epoch_log = dir / "e.csv";
  c.model_dim = 8;
  c.num_layers = 1;
  c.num_filters = 4;
  c.epochs = 2;
  std::size_t callbacks = 0;
  const auto s = run_train(c, [&](const EpochLog&) { ++callbacks; });
  CHECK(callbacks == 2);
  CHECK(s.train_records + s.validation_records + s.test_records == 40);
  CHECK(s.test_records == 4);
  const std::string ck1 = slurp(dir / "m.json"), log1 = slurp(dir / "e.csv");

  c.checkpoint = dir / "m2.json";
  c.epoch_log = dir / "e2.csv";
  run_train(c);
  CHECK(slurp(dir / "m2.json") == ck1);
  CHECK(slurp(dir / "e2.csv") == log1);

  const Checkpoint ck = load_checkpoint(dir / "m.json");
  CHECK(ck.metadata.at("embedding_provider") == "precomputed");
  const auto corpus = read_corpus_file(dir / "c.jsonl");
  const auto m = run_evaluate(ck, corpus, "test");
  CHECK(m.total() == 4);
  CHECK(run_evaluate(ck, corpus, "all").total() == 40);
  CHECK(run_evaluate(ck, corpus, "validation").total() == s.validation_records);
  CHECK(metrics_to_json(run_evaluate(ck, corpus, "test", 3)) == metrics_to_json(m));
  CHECK_THROWS_AS(run_evaluate(ck, corpus, "holdout"), ConfigError);

  const auto one = run_explain(ck, corpus, corpus[7].id);
  REQUIRE(one.reports.size() == 1);
  CHECK(one.reports[0].record_id == corpus[7].id);
  CHECK_FALSE(one.summary.has_value());
  const auto all = run_explain(ck, corpus, "", "test");
  CHECK(all.reports.size() == 4);
  REQUIRE(all.summary.has_value());
  CHECK(all.summary->records == 4);
  const std::string msg = error_of([&] { run_explain(ck, corpus, "missing-id"); });
  CHECK(msg.find("missing-id") != std::string::npos);
  CHECK(msg.find(corpus[0].id) != std::string::npos);

  RunConfig bad = c;
  bad.corpus = dir / "absent.jsonl";
  CHECK_THROWS_AS(run_train(bad), IoError);
}

TEST_CASE("corpus schema errors surface through training") {
  TempDir dir("cattn_pipeline_schema");
  {
    std::ofstream out(dir / "bad.jsonl");
    out << R"({"id":"a","label":0,"utterances":[[["I","PRP"]]]})" << "\n"
        << R"({"id":"b","label":0,"utterances":[[["I","QQ"]]]})" << "\n";
  }
  RunConfig c;
  c.corpus = dir / "bad.jsonl";
  const std::string msg = error_of([&] { run_train(c); });
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(msg.find("QQ") != std::string::npos);
}
