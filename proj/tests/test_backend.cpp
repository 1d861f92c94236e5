#include "eco/backend.hpp"

#include <cmath>

#include "doctest.h"
#include "eco/corruption.hpp"
#include "eco/metrics.hpp"
#include "eco/text.hpp"

namespace backend = eco::backend;
using eco::CorruptionKind;
using eco::CorruptionSpec;
using eco::DimSelect;

namespace {

backend::ToyBackend make_backend(double kappa = 1.0) {
  backend::KnowledgeTable table;
  table.add("what is the zoqu xuju ritual",
            "the zoqu rite uses quxo stones and juzo chants every season");
  table.add("where does the mara tela river flow",
            "the mara tela river flows past selin fields into the tesa sea");
  table.add("list the tesa harvest rules",
            "harvest begins when selin fields turn amber under the tesa sun");
  backend::ToyBackendConfig config;
  config.seed = 11;
  config.kappa = kappa;
  return backend::ToyBackend(std::move(config), std::move(table));
}

}  // namespace

TEST_CASE("embed is deterministic and decode inverts it") {
  const auto model = make_backend();
  const auto ids = model.tokenize("what is the zoqu xuju ritual");
  const auto e1 = model.embed(ids);
  const auto e2 = model.embed(ids);
  CHECK(e1 == e2);
  CHECK(model.decode(e1) == ids);
  CHECK(model.corruption_probability(e1) == 0.0);
}

TEST_CASE("uncorrupted generation reproduces the stored answer") {
  const auto model = make_backend();
  const std::string question = "what is the zoqu xuju ritual";
  const std::string answer =
      "the zoqu rite uses quxo stones and juzo chants every season";
  const auto result = model.generate(question, 32, 99);
  CHECK(eco::text::join(result.tokens) == answer);
  for (const double lp : result.logprobs) CHECK(lp == 0.0);

  // ROUGE-L of the generation against the stored answer is exactly 1.
  CHECK(eco::metrics::rouge_l_recall(eco::text::metric_tokens(answer),
                                     result.tokens) == 1.0);
}

TEST_CASE("generation is deterministic under (e, seed)") {
  const auto model = make_backend();
  const auto e = model.embed(model.tokenize("where does the mara tela river flow"));
  CorruptionSpec spec;
  spec.kind = CorruptionKind::RandomNoise;
  spec.sigma = 2.0;
  spec.noise_seed = 7;
  const auto corrupted = eco::corrupt(e, spec);
  const auto a = model.generate_from_embeddings(corrupted, 16, 5);
  const auto b = model.generate_from_embeddings(corrupted, 16, 5);
  CHECK(a.tokens == b.tokens);
  CHECK(a.logprobs == b.logprobs);
  const auto c = model.generate_from_embeddings(corrupted, 16, 6);
  CHECK(a.tokens != c.tokens);  // seed matters once corruption is active
}

TEST_CASE("max_tokens zero yields empty output") {
  const auto model = make_backend();
  const auto e = model.embed(model.tokenize("what is the zoqu xuju ritual"));
  const auto result = model.generate_from_embeddings(e, 0, 1);
  CHECK(result.tokens.empty());
  CHECK(result.logprobs.empty());
}

TEST_CASE("unknown prompts get the fallback continuation") {
  const auto model = make_backend();
  const auto e = model.embed(model.tokenize("never seen this prompt before ok"));
  const auto result = model.generate_from_embeddings(e, 8, 3);
  const auto fallback = eco::text::split_ws(model.config().fallback_text);
  REQUIRE(result.tokens.size() == 8);
  for (std::size_t i = 0; i < result.tokens.size(); ++i) {
    CHECK(result.tokens[i] == fallback[i]);
  }
}

TEST_CASE("fully corrupted embeddings resample every token") {
  const auto model = make_backend();
  const std::string question = "what is the zoqu xuju ritual";
  const auto e = model.embed(model.tokenize(question));
  // Push the matrix far beyond the saturation radius.
  eco::EmbeddingMatrix far = e;
  far.array() += 25.0;
  CHECK(model.corruption_probability(far) == 1.0);

  const auto answer_tokens = eco::text::metric_tokens(
      "the zoqu rite uses quxo stones and juzo chants every season");
  double rouge_sum = 0.0;
  const int trials = 40;
  for (int seed = 0; seed < trials; ++seed) {
    const auto result = model.generate_from_embeddings(
        far, 32, static_cast<std::uint64_t>(seed));
    REQUIRE(!result.tokens.empty());
    for (const double lp : result.logprobs) {
      CHECK(lp == doctest::Approx(-std::log(
                      static_cast<double>(model.vocab_size()))));
    }
    rouge_sum += eco::metrics::rouge_l_recall(answer_tokens, result.tokens);
  }
  // Expected ROUGE against the stored answer sits near the random floor.
  CHECK(rouge_sum / trials < 0.35);
}

TEST_CASE("expected rouge decays monotonically with sigma") {
  const auto model = make_backend();
  const std::string question = "where does the mara tela river flow";
  const std::string answer =
      "the mara tela river flows past selin fields into the tesa sea";
  const auto e = model.embed(model.tokenize(question));
  const auto reference = eco::text::metric_tokens(answer);

  const auto mean_rouge = [&](double sigma) {
    double sum = 0.0;
    const int trials = 25;
    for (int s = 0; s < trials; ++s) {
      CorruptionSpec spec;
      spec.kind = CorruptionKind::RandomNoise;
      spec.sigma = sigma;
      spec.dims = DimSelect::first_n(1);
      spec.noise_seed = static_cast<std::uint64_t>(s);
      const auto gen = model.generate_from_embeddings(
          eco::corrupt(e, spec), 32, static_cast<std::uint64_t>(1000 + s));
      sum += eco::metrics::rouge_l_recall(reference, gen.tokens);
    }
    return sum / trials;
  };

  double previous = 1.1;
  for (const double sigma : {0.0, 0.5, 1.5, 4.0, 12.0}) {
    const double value = mean_rouge(sigma);
    CHECK(value <= previous + 0.08);  // nonincreasing up to Monte Carlo slack
    previous = value;
  }
  CHECK(mean_rouge(0.0) == 1.0);
}

TEST_CASE("score_continuation separates matching and mismatching answers") {
  const auto model = make_backend();
  const std::string question = "list the tesa harvest rules";
  const std::string answer =
      "harvest begins when selin fields turn amber under the tesa sun";
  const auto e = model.embed(model.tokenize(question));

  const auto matched = model.score_continuation(e, model.tokenize(answer));
  const auto mismatched = model.score_continuation(
      e, model.tokenize("wuhy fyfy hywu wyfu huhy fywy wyhu fufy hywy wufy huwy"));
  double matched_sum = 0.0;
  double mismatched_sum = 0.0;
  for (const double lp : matched) {
    CHECK(lp <= 0.0);
    matched_sum += lp;
  }
  for (const double lp : mismatched) {
    CHECK(lp <= 0.0);
    CHECK(std::isfinite(lp));
    mismatched_sum += lp;
  }
  CHECK(matched_sum > mismatched_sum + 5.0);
}

TEST_CASE("option logits pick the gold letter when clean") {
  backend::KnowledgeTable table;
  const std::string prompt = "which zoqu lives here\nA. fyfy\nB. hywu\nC. wyfu\nD. huhy\nAnswer:";
  table.add(prompt, "C");
  backend::ToyBackendConfig config;
  config.seed = 21;
  const backend::ToyBackend model(config, table);

  const std::array<eco::TokenId, 4> options = {
      model.token_id("A"), model.token_id("B"), model.token_id("C"),
      model.token_id("D")};
  const auto e = model.embed(model.tokenize(prompt));
  const auto logits = model.option_logits(e, options);
  int best = 0;
  for (int o = 1; o < 4; ++o) {
    if (logits[static_cast<std::size_t>(o)] > logits[static_cast<std::size_t>(best)]) best = o;
  }
  CHECK(best == 2);

  // Saturated corruption detaches the logits from the gold option.
  eco::EmbeddingMatrix far = e;
  far.array() -= 30.0;
  const auto noisy_a = model.option_logits(far, options);
  const auto noisy_b = model.option_logits(far, options);
  CHECK(noisy_a == noisy_b);  // still deterministic
}

TEST_CASE("two backends with one seed embed shared tokens identically") {
  backend::KnowledgeTable full;
  full.add("mara tela sela", "tesa mare lita");
  full.add("zoqu xuju", "quxo juzo");
  backend::KnowledgeTable reduced;
  reduced.add("mara tela sela", "tesa mare lita");

  backend::ToyBackendConfig config;
  config.seed = 31;
  const backend::ToyBackend a(config, full);
  const backend::ToyBackend b(config, reduced);

  const auto ea = a.embed(a.tokenize("mara tela sela"));
  const auto eb = b.embed(b.tokenize("mara tela sela"));
  CHECK(ea == eb);

  // Tokens outside the reduced vocabulary degrade to the unknown token.
  const auto unknown = b.tokenize("zoqu xuju");
  CHECK(unknown[0] == b.token_id("<unk>"));
}

TEST_CASE("retained-style backend answers forget prompts with the fallback") {
  backend::KnowledgeTable retained;
  retained.add("where does the mara tela river flow",
               "the mara tela river flows past selin fields into the tesa sea");
  backend::ToyBackendConfig config;
  config.seed = 11;
  const backend::ToyBackend model(config, retained);

  const auto e = model.embed(model.tokenize("what is the zoqu xuju ritual"));
  const auto result = model.generate_from_embeddings(e, 6, 0);
  const auto fallback = eco::text::split_ws(model.config().fallback_text);
  REQUIRE(result.tokens.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(result.tokens[i] == fallback[i]);
}
