#include "eco/harness.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"

#include "eco/text.hpp"

namespace harness = eco::harness;
namespace gate = eco::gate;
namespace backend = eco::backend;
namespace fs = std::filesystem;

namespace {

harness::CorpusSpec small_spec() {
  harness::CorpusSpec spec;
  spec.seed = 7;
  spec.forget = 20;
  spec.retain = 300;
  spec.retain_heldout = 40;
  spec.real_authors = 30;
  spec.world_facts = 30;
  spec.general = 40;
  spec.calibration = 60;
  spec.mc = 60;
  return spec;
}

gate::TrainConfig fast_train_config() {
  gate::TrainConfig config;
  config.hash_buckets = 1 << 16;
  config.epochs = 300;
  return config;
}

struct Pipeline {
  harness::Dataset dataset;
  gate::ReferenceClassifier classifier;
  gate::CalibrationArtifact calibration;
  backend::ToyBackend original;
  backend::ToyBackend retained;
  eco::CorruptionSpec spec;
};

Pipeline build_pipeline(const fs::path& dir) {
  harness::gen_synthetic_corpus(small_spec(), dir);
  harness::Dataset dataset = harness::load_dataset(dir);

  std::vector<std::string> forget_corpus, retain_corpus;
  for (const auto& r : dataset.forget) forget_corpus.push_back(r.question);
  for (const auto& r : dataset.retain) retain_corpus.push_back(r.question);
  gate::ReferenceClassifier classifier = gate::train_reference_classifier(
      forget_corpus, retain_corpus, fast_train_config());

  gate::CalibrationArtifact calibration;
  calibration.mode = gate::DecisionMode::SimpleThreshold;
  calibration.tau =
      gate::calibrate_threshold(harness::calibration_scores(dataset, classifier));
  calibration.n_cal = dataset.calibration.size();

  backend::ToyBackendConfig original_config;
  original_config.seed = 11;
  backend::ToyBackendConfig retained_config = original_config;
  retained_config.model_id = "toy-retained";

  backend::ToyBackend original(original_config, dataset.original_table);
  backend::ToyBackend retained(retained_config, dataset.retained_table);

  eco::CorruptionSpec spec;
  spec.kind = eco::CorruptionKind::RandomNoise;
  spec.sigma = 6.0;  // deep in the saturated regime for the small corpus
  spec.dims = eco::DimSelect::first_n(1);

  return Pipeline{std::move(dataset),  std::move(classifier),
                  calibration,         std::move(original),
                  std::move(retained), spec};
}

Pipeline& shared_pipeline() {
  static Pipeline pipeline =
      build_pipeline(fs::temp_directory_path() / "eco_harness_pipeline");
  return pipeline;
}

}  // namespace

TEST_CASE("corpus generation is byte-identical under a fixed seed") {
  const auto dir_a = fs::temp_directory_path() / "eco_corpus_a";
  const auto dir_b = fs::temp_directory_path() / "eco_corpus_b";
  harness::CorpusSpec spec;
  spec.seed = 21;
  spec.forget = 5;
  spec.retain = 20;
  spec.retain_heldout = 5;
  spec.real_authors = 5;
  spec.world_facts = 5;
  spec.general = 5;
  spec.calibration = 10;
  spec.mc = 5;
  harness::gen_synthetic_corpus(spec, dir_a);
  harness::gen_synthetic_corpus(spec, dir_b);
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    const auto name = entry.path().filename();
    std::ifstream a(entry.path(), std::ios::binary);
    std::ifstream b(dir_b / name, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(a)),
                              std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(b)),
                              std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);
  }
  CHECK(harness::load_dataset(dir_a).fingerprint ==
        harness::load_dataset(dir_b).fingerprint);
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("forget and retain vocabularies are disjoint") {
  const auto& p = shared_pipeline();
  std::set<std::string> forget_words, other_words;
  for (const auto& r : p.dataset.forget) {
    for (const auto& w : eco::text::split_ws(r.question)) forget_words.insert(w);
    for (const auto& w : eco::text::split_ws(r.answer)) forget_words.insert(w);
  }
  const auto collect = [&](const std::vector<harness::QaRecord>& records) {
    for (const auto& r : records) {
      for (const auto& w : eco::text::split_ws(r.question)) other_words.insert(w);
      for (const auto& w : eco::text::split_ws(r.answer)) other_words.insert(w);
    }
  };
  collect(p.dataset.retain);
  collect(p.dataset.general);
  collect(p.dataset.real_authors);
  collect(p.dataset.world_facts);
  for (const auto& w : forget_words) CHECK(other_words.count(w) == 0);
}

TEST_CASE("mc prompt renders the zero-shot template") {
  harness::McRecord record;
  record.subject = "zoqu";
  record.question = "which zoqu is it ?";
  record.choices = {"fyfy", "hywu", "wyfu", "huhy"};
  record.gold = 1;
  const std::string prompt = harness::format_mc_prompt(record);
  CHECK(prompt.rfind("The following are multiple choice questions (with "
                     "answers) about zoqu.",
                     0) == 0);
  CHECK(prompt.find("\n\nwhich zoqu is it ?\n") != std::string::npos);
  CHECK(prompt.find("A. fyfy\n") != std::string::npos);
  CHECK(prompt.find("B. hywu\n") != std::string::npos);
  CHECK(prompt.find("C. wyfu\n") != std::string::npos);
  CHECK(prompt.find("D. huhy\n") != std::string::npos);
  CHECK(prompt.substr(prompt.size() - 7) == "Answer:");
  CHECK(harness::format_mc_prompt(record) == prompt);
}

TEST_CASE("retained table excludes exactly the forget-scope knowledge") {
  const auto& p = shared_pipeline();
  for (const auto& r : p.dataset.forget) {
    CHECK(p.dataset.original_table.find(r.question) != nullptr);
    CHECK(p.dataset.retained_table.find(r.question) == nullptr);
  }
  for (const auto& r : p.dataset.retain) {
    CHECK(p.dataset.original_table.find(r.question) != nullptr);
    CHECK(p.dataset.retained_table.find(r.question) != nullptr);
  }
  for (const auto& r : p.dataset.mc) {
    const auto prompt = harness::format_mc_prompt(r);
    const auto canonical = eco::text::join(eco::text::split_ws(prompt));
    CHECK(p.dataset.original_table.find(canonical) != nullptr);
    CHECK(p.dataset.retained_table.find(canonical) == nullptr);
  }
}

TEST_CASE("sigma oracle is deterministic and clamps probe inputs") {
  const auto& p = shared_pipeline();
  harness::OracleSpec oracle_spec;
  const auto target =
      harness::retained_targets(p.dataset, p.retained, oracle_spec);
  auto oracle = harness::make_sigma_oracle(p.dataset, p.original, p.spec,
                                           target, oracle_spec);
  const double at_zero = oracle(0.0);
  const double below_zero = oracle(-0.5);
  CHECK(at_zero == below_zero);  // negative probes evaluate at the boundary
  const double again = oracle(0.0);
  CHECK(at_zero == again);
  CHECK(oracle.calls() == 3);

  // The landscape must reward corruption: saturation beats no corruption.
  const double saturated = oracle(8.0);
  CHECK(saturated < at_zero);
}

TEST_CASE("template oracle rewards template-like generations") {
  const auto& p = shared_pipeline();
  harness::OracleSpec oracle_spec;
  // The fallback continuation plays the refusal template: ungated forget
  // answers look nothing like it, corrupted outputs drift toward it.
  const std::vector<std::string> templates{p.original.config().fallback_text};
  auto oracle = harness::make_template_oracle(p.dataset, p.original, p.spec,
                                              templates, oracle_spec);
  const double uncorrupted = oracle(0.0);
  const double saturated = oracle(10.0);
  CHECK(uncorrupted > 0.95);
  CHECK(saturated < uncorrupted);

  CHECK_THROWS_AS(
      harness::make_template_oracle(p.dataset, p.original, p.spec, {},
                                    oracle_spec),
      std::invalid_argument);
}

TEST_CASE("evaluation: gate confusion equals a brute-force replay") {
  auto& p = shared_pipeline();
  harness::EvalConfig config;
  config.workers = 2;
  config.timestamp = "2026-01-01T00:00:00Z";
  const auto outcome =
      harness::evaluate(p.dataset, p.classifier, p.calibration, p.spec,
                        p.original, p.retained, config);

  const auto replay = [&](const std::vector<harness::QaRecord>& records) {
    std::size_t flagged = 0;
    for (const auto& r : records) {
      if (gate::decide(p.classifier.score(r.question), p.calibration, p.spec)
              .flagged) {
        ++flagged;
      }
    }
    return flagged;
  };
  CHECK(outcome.gate_counts.at("forget").flagged == replay(p.dataset.forget));
  CHECK(outcome.gate_counts.at("retain").flagged == replay(p.dataset.retain));
  CHECK(outcome.gate_counts.at("general").flagged == replay(p.dataset.general));
  CHECK(outcome.gate_counts.at("forget").total == p.dataset.forget.size());
}

TEST_CASE("evaluation: headline metrics on the toy pipeline") {
  auto& p = shared_pipeline();
  harness::EvalConfig config;
  config.workers = 2;
  config.timestamp = "2026-01-01T00:00:00Z";
  const auto outcome =
      harness::evaluate(p.dataset, p.classifier, p.calibration, p.spec,
                        p.original, p.retained, config);

  CHECK(outcome.gate_counts.at("forget").flag_rate() == 1.0);
  CHECK(outcome.gate_counts.at("retain").flag_rate() == 0.0);
  CHECK(outcome.forget_quality >= 0.9);
  CHECK(outcome.retain_passthrough_identical);
  CHECK(outcome.model_utility > 0.0);
  CHECK(outcome.asg < 0.05);
  REQUIRE(outcome.mc_accuracy_ungated.has_value());
  CHECK(*outcome.mc_accuracy_ungated >= 0.95);
  CHECK(outcome.skipped_records == 0);

  // Truth-ratio samples pair up one-to-one with the forget records.
  CHECK(outcome.forget_truth_ratios_gated.size() == p.dataset.forget.size());
  CHECK(outcome.forget_truth_ratios_retained.size() ==
        p.dataset.forget.size());
}

TEST_CASE("evaluation: retained backend against itself reaches quality 1") {
  auto& p = shared_pipeline();
  harness::EvalConfig config;
  config.workers = 2;
  config.timestamp = "2026-01-01T00:00:00Z";
  // Never-flagging artifact + retained backend on both sides: the two
  // truth-ratio samples coincide.
  gate::CalibrationArtifact never;
  never.mode = gate::DecisionMode::SimpleThreshold;
  never.tau = 1.0;

  harness::Dataset no_mc = p.dataset;
  no_mc.mc.clear();  // retained vocabulary has no option letters
  const auto outcome = harness::evaluate(no_mc, p.classifier, never, p.spec,
                                         p.retained, p.retained, config);
  CHECK(outcome.forget_quality == 1.0);
}

TEST_CASE("evaluation: ungated original fails forget quality hard") {
  auto& p = shared_pipeline();
  harness::EvalConfig config;
  config.workers = 2;
  config.timestamp = "2026-01-01T00:00:00Z";
  gate::CalibrationArtifact never;
  never.mode = gate::DecisionMode::SimpleThreshold;
  never.tau = 1.0;  // scores never reach 1.0 on this corpus

  harness::Dataset no_mc = p.dataset;
  no_mc.mc.clear();
  const auto outcome = harness::evaluate(no_mc, p.classifier, never, p.spec,
                                         p.original, p.retained, config);
  CHECK(outcome.gate_counts.at("forget").flagged == 0);
  CHECK(outcome.forget_quality < 1e-6);
  // By construction the ungated model reproduces stored forget answers.
  CHECK(outcome.similarity_unlearned.at("rouge_l_recall") == 1.0);
}

TEST_CASE("evaluation is deterministic end to end") {
  auto& p = shared_pipeline();
  harness::EvalConfig config;
  config.workers = 4;
  config.timestamp = "2026-01-01T00:00:00Z";
  const auto a = harness::evaluate(p.dataset, p.classifier, p.calibration,
                                   p.spec, p.original, p.retained, config);
  config.workers = 1;
  const auto b = harness::evaluate(p.dataset, p.classifier, p.calibration,
                                   p.spec, p.original, p.retained, config);
  CHECK(a.report_json == b.report_json);
  CHECK(a.forget_quality == b.forget_quality);
  CHECK(a.forget_truth_ratios_gated == b.forget_truth_ratios_gated);
}

TEST_CASE("report round-trips byte-stably and validates") {
  auto& p = shared_pipeline();
  harness::EvalConfig config;
  config.workers = 2;
  config.timestamp = "2026-01-01T00:00:00Z";
  const auto outcome =
      harness::evaluate(p.dataset, p.classifier, p.calibration, p.spec,
                        p.original, p.retained, config);
  harness::validate_report(outcome.report_json);

  // serialize -> parse -> serialize is byte-stable
  const auto parsed = nlohmann::ordered_json::parse(outcome.report_json);
  CHECK(parsed.dump(2) + "\n" == outcome.report_json);

  CHECK_THROWS_WITH_AS(harness::validate_report("{}"),
                       "report: missing field 'version'", std::runtime_error);
  CHECK_THROWS_AS(harness::validate_report("not json"), std::runtime_error);
}

namespace {

// Backend that fails after a fixed number of scoring calls.
class FlakyBackend : public backend::ModelBackend {
 public:
  FlakyBackend(const backend::ModelBackend& inner, int budget)
      : inner_(inner), budget_(budget) {}

  std::string model_id() const override { return inner_.model_id(); }
  eco::TokenIdList tokenize(const std::string& prompt) const override {
    return inner_.tokenize(prompt);
  }
  eco::EmbeddingMatrix embed(const eco::TokenIdList& ids) const override {
    return inner_.embed(ids);
  }
  backend::GenerationResult generate_from_embeddings(
      const eco::EmbeddingMatrix& e, int max_tokens,
      std::uint64_t seed) const override {
    return inner_.generate_from_embeddings(e, max_tokens, seed);
  }
  std::array<double, 4> option_logits(
      const eco::EmbeddingMatrix& e,
      const std::array<eco::TokenId, 4>& options) const override {
    return inner_.option_logits(e, options);
  }
  std::vector<double> score_continuation(
      const eco::EmbeddingMatrix& e,
      const eco::TokenIdList& continuation) const override {
    if (++calls_ > budget_) throw std::runtime_error("backend went away");
    return inner_.score_continuation(e, continuation);
  }
  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  eco::TokenId token_id(const std::string& token) const override {
    return inner_.token_id(token);
  }
  const std::string& token_text(eco::TokenId id) const override {
    return inner_.token_text(id);
  }

 private:
  const backend::ModelBackend& inner_;
  mutable std::atomic<int> calls_{0};
  int budget_;
};

}  // namespace

TEST_CASE("backend failure aborts with a partial report flagged invalid") {
  auto& p = shared_pipeline();
  const FlakyBackend flaky(p.original, 10);
  harness::EvalConfig config;
  config.workers = 2;
  config.timestamp = "2026-01-01T00:00:00Z";
  const auto outcome = harness::evaluate(p.dataset, p.classifier, p.calibration,
                                         p.spec, flaky, p.retained, config);
  CHECK_FALSE(outcome.valid);
  CHECK(outcome.error.find("backend went away") != std::string::npos);
  harness::validate_report(outcome.report_json);
  const auto parsed = nlohmann::ordered_json::parse(outcome.report_json);
  CHECK(parsed.at("valid") == false);
  CHECK(parsed.contains("error"));
  // The gate-confusion stage completed before the failure.
  CHECK(parsed.at("gate").at("forget").at("total") == p.dataset.forget.size());
}

TEST_CASE("truth ratio skips records lacking perturbed answers") {
  auto& p = shared_pipeline();
  harness::Dataset clipped = p.dataset;
  clipped.mc.clear();
  for (auto& r : clipped.forget) r.perturbed_answers.clear();
  harness::EvalConfig config;
  config.workers = 2;
  config.timestamp = "2026-01-01T00:00:00Z";
  const auto outcome = harness::evaluate(clipped, p.classifier, p.calibration,
                                         p.spec, p.original, p.retained, config);
  CHECK(outcome.skipped_records >= clipped.forget.size());
  CHECK(outcome.forget_truth_ratios_gated.empty());
}
