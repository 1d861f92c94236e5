#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <memory>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "eco/corruption.hpp"
#include "eco/harness.hpp"
#include "eco/text.hpp"

namespace eco::harness {

namespace {

using nlohmann::ordered_json;

/// Index-parallel map; results land by index, so the schedule cannot change
/// the outcome.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (n == 0) return;
  const int used = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (used == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(used));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < used; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

double normalized_continuation_prob(const backend::ModelBackend& model,
                                    const EmbeddingMatrix& e,
                                    const std::string& answer) {
  const TokenIdList ids = model.tokenize(answer);
  if (ids.empty()) {
    throw std::invalid_argument("empty answer continuation");
  }
  const std::vector<double> logprobs = model.score_continuation(e, ids);
  const double sum = std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
  return metrics::answer_probability(sum, ids.size());
}

/// Truth ratio of one record at the given (possibly corrupted) embeddings.
/// Returns nullopt when the record lacks the inputs.
std::optional<double> record_truth_ratio(const backend::ModelBackend& model,
                                         const EmbeddingMatrix& e,
                                         const QaRecord& record) {
  if (record.perturbed_answers.empty()) return std::nullopt;
  const bool use_paraphrase = record.subset == Subset::Forget ||
                              record.subset == Subset::Retain;
  const std::string& denominator_answer =
      use_paraphrase && record.paraphrased_answer ? *record.paraphrased_answer
                                                  : record.answer;
  if (use_paraphrase && !record.paraphrased_answer) return std::nullopt;

  metrics::TruthRatioInputs inputs;
  for (const auto& perturbed : record.perturbed_answers) {
    inputs.perturbed_probs.push_back(
        normalized_continuation_prob(model, e, perturbed));
  }
  inputs.paraphrased_prob =
      normalized_continuation_prob(model, e, denominator_answer);
  return metrics::truth_ratio(inputs);
}

struct GatedEmbedding {
  EmbeddingMatrix e;
  bool flagged = false;
};

GatedEmbedding gate_embed(const backend::ModelBackend& model,
                          const gate::PromptScorer& scorer,
                          const gate::CalibrationArtifact& calibration,
                          const CorruptionSpec& spec,
                          const std::string& prompt) {
  GatedEmbedding out;
  const gate::GateDecision decision =
      gate::decide(scorer.score(prompt), calibration, spec);
  out.flagged = decision.flagged;
  out.e = model.embed(model.tokenize(prompt));
  if (decision.flagged) out.e = corrupt(out.e, *decision.applied_spec);
  return out;
}

ordered_json metric_vector_to_json(const metrics::MetricVector& mv) {
  ordered_json j;
  for (const auto& [name, entry] : mv.entries) {
    j[name] = {
        {"value", entry.value},
        {"orientation", entry.orientation == metrics::Orientation::HigherBetter
                            ? "higher_better"
                            : "lower_better"},
    };
  }
  return j;
}

}  // namespace

zoo::SurrogateTarget retained_targets(const Dataset& dataset,
                                      const backend::ModelBackend& retained,
                                      const OracleSpec& spec) {
  if (dataset.forget.empty()) {
    throw std::invalid_argument("retained_targets: empty forget subset");
  }
  double prob_sum = 0.0;
  double rouge_sum = 0.0;
  for (const auto& record : dataset.forget) {
    const EmbeddingMatrix e = retained.embed(retained.tokenize(record.question));
    prob_sum += normalized_continuation_prob(retained, e, record.answer);
    const auto gen = retained.generate_from_embeddings(e, spec.max_tokens,
                                                       spec.generation_seed);
    rouge_sum += metrics::rouge_l_recall(text::metric_tokens(record.answer),
                                         gen.tokens);
  }
  const double n = static_cast<double>(dataset.forget.size());
  zoo::SurrogateTarget target;
  for (const auto& name : spec.metric_names) {
    if (name == "answer_probability") {
      target.metric_targets[name] = prob_sum / n;
    } else if (name == "rouge_l_recall") {
      target.metric_targets[name] = rouge_sum / n;
    } else {
      throw std::invalid_argument("retained_targets: unknown metric '" + name +
                                  "'");
    }
  }
  return target;
}

zoo::DistanceOracle make_sigma_oracle(const Dataset& dataset,
                                      const backend::ModelBackend& original,
                                      const CorruptionSpec& base_spec,
                                      const zoo::SurrogateTarget& target,
                                      const OracleSpec& spec) {
  if (dataset.forget.empty()) {
    throw std::invalid_argument("make_sigma_oracle: empty forget subset");
  }
  // The evaluation batch is embedded once and shared; each oracle call only
  // re-corrupts and re-scores it.
  auto batch = std::make_shared<std::vector<std::pair<EmbeddingMatrix, QaRecord>>>();
  for (const auto& record : dataset.forget) {
    batch->emplace_back(original.embed(original.tokenize(record.question)),
                        record);
  }
  const OracleSpec oracle_spec = spec;
  return zoo::DistanceOracle([batch, &original, base_spec, target,
                              oracle_spec](double sigma) {
    // Probe points below the sigma domain evaluate at the boundary.
    const CorruptionSpec probe = base_spec.with_sigma(std::max(sigma, 0.0));
    double prob_sum = 0.0;
    double rouge_sum = 0.0;
    for (const auto& [e, record] : *batch) {
      const EmbeddingMatrix corrupted = corrupt(e, probe);
      prob_sum += normalized_continuation_prob(original, corrupted, record.answer);
      const auto gen = original.generate_from_embeddings(
          corrupted, oracle_spec.max_tokens, oracle_spec.generation_seed);
      rouge_sum += metrics::rouge_l_recall(text::metric_tokens(record.answer),
                                           gen.tokens);
    }
    const double n = static_cast<double>(batch->size());
    metrics::MetricVector measured;
    for (const auto& name : oracle_spec.metric_names) {
      if (name == "answer_probability") {
        measured.set(name, prob_sum / n);
      } else if (name == "rouge_l_recall") {
        measured.set(name, rouge_sum / n);
      }
    }
    return zoo::distance(measured, target);
  });
}

zoo::DistanceOracle make_template_oracle(
    const Dataset& dataset, const backend::ModelBackend& original,
    const CorruptionSpec& base_spec,
    const std::vector<std::string>& template_responses,
    const OracleSpec& spec) {
  if (dataset.forget.empty()) {
    throw std::invalid_argument("make_template_oracle: empty forget subset");
  }
  if (template_responses.empty()) {
    throw std::invalid_argument("make_template_oracle: no template responses");
  }
  auto batch = std::make_shared<std::vector<EmbeddingMatrix>>();
  for (const auto& record : dataset.forget) {
    batch->push_back(original.embed(original.tokenize(record.question)));
  }
  auto templates = std::make_shared<std::vector<TokenList>>();
  for (const auto& response : template_responses) {
    templates->push_back(text::metric_tokens(response));
  }
  const OracleSpec oracle_spec = spec;
  return zoo::DistanceOracle([batch, templates, &original, base_spec,
                              oracle_spec](double sigma) {
    const CorruptionSpec probe = base_spec.with_sigma(std::max(sigma, 0.0));
    std::vector<TokenList> generated;
    generated.reserve(batch->size());
    for (const auto& e : *batch) {
      auto gen = original.generate_from_embeddings(
          corrupt(e, probe), oracle_spec.max_tokens, oracle_spec.generation_seed);
      generated.push_back(std::move(gen.tokens));
    }
    return zoo::template_distance(generated, *templates);
  });
}

EvaluationOutcome evaluate(const Dataset& dataset,
                           const gate::PromptScorer& scorer,
                           const gate::CalibrationArtifact& calibration,
                           const CorruptionSpec& spec,
                           const backend::ModelBackend& original,
                           const backend::ModelBackend& retained,
                           const EvalConfig& config) {
  EvaluationOutcome outcome;
  try {
  // --- Gate confusion over every non-calibration subset.
  const auto count_gate = [&](const char* name,
                              const std::vector<QaRecord>& records) {
    GateCounts counts;
    counts.total = records.size();
    for (const auto& record : records) {
      const auto decision =
          gate::decide(scorer.score(record.question), calibration, spec);
      if (decision.flagged) ++counts.flagged;
    }
    outcome.gate_counts[name] = counts;
  };
  count_gate("forget", dataset.forget);
  count_gate("retain", dataset.retain);
  count_gate("retain_heldout", dataset.retain_heldout);
  count_gate("real_authors", dataset.real_authors);
  count_gate("world_facts", dataset.world_facts);
  count_gate("general", dataset.general);

  std::atomic<std::size_t> skipped{0};

  // --- Forget-set truth ratios: gated original vs retained reference.
  {
    const std::size_t n = dataset.forget.size();
    std::vector<double> gated(n, 0.0);
    std::vector<double> reference(n, 0.0);
    std::vector<char> valid(n, 0);
    parallel_for(n, config.workers, [&](std::size_t i) {
      const QaRecord& record = dataset.forget[i];
      const auto gate_result =
          gate_embed(original, scorer, calibration, spec, record.question);
      const auto tr_gated = record_truth_ratio(original, gate_result.e, record);
      const EmbeddingMatrix retained_e =
          retained.embed(retained.tokenize(record.question));
      const auto tr_ref = record_truth_ratio(retained, retained_e, record);
      if (tr_gated && tr_ref) {
        gated[i] = *tr_gated;
        reference[i] = *tr_ref;
        valid[i] = 1;
      } else {
        skipped.fetch_add(1);
      }
    });
    for (std::size_t i = 0; i < n; ++i) {
      if (valid[i]) {
        outcome.forget_truth_ratios_gated.push_back(gated[i]);
        outcome.forget_truth_ratios_retained.push_back(reference[i]);
      }
    }
    if (!outcome.forget_truth_ratios_gated.empty()) {
      outcome.forget_quality =
          metrics::forget_quality(outcome.forget_truth_ratios_gated,
                                  outcome.forget_truth_ratios_retained);
    }
  }

  // --- Nine-component model utility over the gated pipeline.
  struct SubsetUtility {
    double prob = 0.0;
    double truth = 0.0;
    double rouge = 0.0;
  };
  const auto subset_utility = [&](const std::vector<QaRecord>& records,
                                  bool ratio_mode) {
    SubsetUtility sums;
    std::vector<SubsetUtility> per(records.size());
    std::vector<char> valid(records.size(), 0);
    parallel_for(records.size(), config.workers, [&](std::size_t i) {
      const QaRecord& record = records[i];
      const auto gated =
          gate_embed(original, scorer, calibration, spec, record.question);
      SubsetUtility u;
      const double correct =
          normalized_continuation_prob(original, gated.e, record.answer);
      if (ratio_mode) {
        if (record.perturbed_answers.empty()) {
          skipped.fetch_add(1);
          return;
        }
        std::vector<double> perturbed;
        for (const auto& p : record.perturbed_answers) {
          perturbed.push_back(normalized_continuation_prob(original, gated.e, p));
        }
        u.prob = metrics::answer_probability_ratio(correct, perturbed);
      } else {
        u.prob = correct;
      }
      const auto tr = record_truth_ratio(original, gated.e, record);
      if (!tr) {
        skipped.fetch_add(1);
        return;
      }
      u.truth = *tr;
      const auto gen = original.generate_from_embeddings(
          gated.e, config.max_tokens, config.generation_seed);
      u.rouge = metrics::rouge_l_recall(text::metric_tokens(record.answer),
                                        gen.tokens);
      per[i] = u;
      valid[i] = 1;
    });
    std::size_t kept = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!valid[i]) continue;
      sums.prob += per[i].prob;
      sums.truth += per[i].truth;
      sums.rouge += per[i].rouge;
      ++kept;
    }
    if (kept > 0) {
      const double n = static_cast<double>(kept);
      sums.prob /= n;
      sums.truth /= n;
      sums.rouge /= n;
    }
    return sums;
  };

  const SubsetUtility retain_u = subset_utility(dataset.retain, false);
  const SubsetUtility authors_u = subset_utility(dataset.real_authors, true);
  const SubsetUtility facts_u = subset_utility(dataset.world_facts, true);
  outcome.utility_components = {
      {"retain/answer_probability", retain_u.prob},
      {"retain/truth_ratio", retain_u.truth},
      {"retain/rouge_l_recall", retain_u.rouge},
      {"real_authors/answer_probability", authors_u.prob},
      {"real_authors/truth_ratio", authors_u.truth},
      {"real_authors/rouge_l_recall", authors_u.rouge},
      {"world_facts/answer_probability", facts_u.prob},
      {"world_facts/truth_ratio", facts_u.truth},
      {"world_facts/rouge_l_recall", facts_u.rouge},
  };
  {
    std::vector<double> nine;
    nine.reserve(9);
    for (const auto& [name, value] : outcome.utility_components) {
      nine.push_back(value);
    }
    outcome.model_utility = metrics::model_utility(nine);
  }

  // --- Similarity metrics and ASG on the forget set, plus fluency and
  // diversity of the gated generations.
  {
    const std::size_t n = dataset.forget.size();
    std::vector<double> rouge_u(n, 0.0), bleu_u(n, 0.0);
    std::vector<double> rouge_r(n, 0.0), bleu_r(n, 0.0);
    std::vector<double> ppl(n, 1.0), utr(n, 0.0);
    parallel_for(n, config.workers, [&](std::size_t i) {
      const QaRecord& record = dataset.forget[i];
      const TokenList reference = text::metric_tokens(record.answer);
      const auto gated =
          gate_embed(original, scorer, calibration, spec, record.question);
      const auto gen_u = original.generate_from_embeddings(
          gated.e, config.max_tokens, config.generation_seed);
      const auto gen_r = retained.generate(record.question, config.max_tokens,
                                           config.generation_seed);
      rouge_u[i] = metrics::rouge_l_recall(reference, gen_u.tokens);
      rouge_r[i] = metrics::rouge_l_recall(reference, gen_r.tokens);
      if (!gen_u.tokens.empty()) {
        bleu_u[i] = metrics::ngram_precision_bleu(reference, gen_u.tokens);
        ppl[i] = metrics::perplexity(gen_u.logprobs);
        utr[i] = metrics::unique_token_ratio(gen_u.tokens);
      }
      if (!gen_r.tokens.empty()) {
        bleu_r[i] = metrics::ngram_precision_bleu(reference, gen_r.tokens);
      }
    });
    const auto mean = [](const std::vector<double>& v) {
      return v.empty() ? 0.0
                       : std::accumulate(v.begin(), v.end(), 0.0) /
                             static_cast<double>(v.size());
    };
    outcome.similarity_unlearned.set("rouge_l_recall", mean(rouge_u));
    outcome.similarity_unlearned.set("ngram_bleu", mean(bleu_u));
    outcome.similarity_retained.set("rouge_l_recall", mean(rouge_r));
    outcome.similarity_retained.set("ngram_bleu", mean(bleu_r));
    outcome.asg = metrics::average_similarity_gap(outcome.similarity_unlearned,
                                                  outcome.similarity_retained);
    outcome.perplexity = mean(ppl);
    outcome.unique_token_ratio = mean(utr);
  }

  // --- Pass-through byte identity on the retain side.
  {
    std::atomic<bool> identical{true};
    const auto check = [&](const std::vector<QaRecord>& records) {
      parallel_for(records.size(), config.workers, [&](std::size_t i) {
        const QaRecord& record = records[i];
        const auto gated =
            gate_embed(original, scorer, calibration, spec, record.question);
        if (gated.flagged) return;  // counted in gate_counts already
        const auto via_gate = original.generate_from_embeddings(
            gated.e, config.max_tokens, config.generation_seed);
        const auto direct = original.generate(record.question, config.max_tokens,
                                              config.generation_seed);
        if (via_gate.tokens != direct.tokens ||
            via_gate.logprobs != direct.logprobs) {
          identical.store(false);
        }
      });
    };
    check(dataset.retain);
    check(dataset.retain_heldout);
    outcome.retain_passthrough_identical = identical.load();
  }

  // --- Multiple choice + probe leakage.
  if (!dataset.mc.empty()) {
    const std::size_t n = dataset.mc.size();
    metrics::OptionLogits gated_logits(n, 4);
    metrics::OptionLogits clean_logits(n, 4);
    std::vector<int> gold(n, 0);
    const std::array<TokenId, 4> options = {
        original.token_id("A"), original.token_id("B"),
        original.token_id("C"), original.token_id("D")};
    parallel_for(n, config.workers, [&](std::size_t i) {
      const McRecord& record = dataset.mc[i];
      const std::string prompt = format_mc_prompt(record);
      const auto gated =
          gate_embed(original, scorer, calibration, spec, prompt);
      const auto flagged_logits = original.option_logits(gated.e, options);
      const auto plain_logits =
          original.option_logits(original.embed(original.tokenize(prompt)), options);
      for (int o = 0; o < 4; ++o) {
        gated_logits(static_cast<Eigen::Index>(i), o) =
            flagged_logits[static_cast<std::size_t>(o)];
        clean_logits(static_cast<Eigen::Index>(i), o) =
            plain_logits[static_cast<std::size_t>(o)];
      }
      gold[i] = record.gold;
    });
    outcome.mc_accuracy_gated = metrics::mc_accuracy(gated_logits, gold);
    outcome.mc_accuracy_ungated = metrics::mc_accuracy(clean_logits, gold);

    // Even/odd split keeps the halves balanced and deterministic.
    std::vector<Eigen::Index> train_idx, test_idx;
    for (std::size_t i = 0; i < n; ++i) {
      (i % 2 == 0 ? train_idx : test_idx).push_back(static_cast<Eigen::Index>(i));
    }
    Eigen::MatrixXd train(train_idx.size(), 4), test(test_idx.size(), 4);
    std::vector<int> train_y, test_y;
    for (std::size_t i = 0; i < train_idx.size(); ++i) {
      train.row(static_cast<Eigen::Index>(i)) = gated_logits.row(train_idx[i]);
      train_y.push_back(gold[static_cast<std::size_t>(train_idx[i])]);
    }
    for (std::size_t i = 0; i < test_idx.size(); ++i) {
      test.row(static_cast<Eigen::Index>(i)) = gated_logits.row(test_idx[i]);
      test_y.push_back(gold[static_cast<std::size_t>(test_idx[i])]);
    }
    outcome.probe_accuracy =
        metrics::probe_evaluate(train, train_y, test, test_y, 4);
  }

  outcome.skipped_records = skipped.load();
  } catch (const std::exception& e) {
    // Backend failure: abort the pass, emit what was computed, flag invalid.
    outcome.valid = false;
    outcome.error = e.what();
  }

  // --- Report document.
  ordered_json report;
  report["version"] = "1";
  report["valid"] = outcome.valid;
  if (!outcome.valid) report["error"] = outcome.error;
  if (!config.timestamp.empty()) {
    report["timestamp"] = config.timestamp;
  } else {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buffer[32];
    std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    report["timestamp"] = buffer;
  }
  report["dataset_fingerprint"] = dataset.fingerprint;
  report["artifacts"] = {
      {"classifier_fingerprint", config.classifier_fingerprint},
      {"calibration_fingerprint", config.calibration_fingerprint},
      {"calibration_mode",
       calibration.mode == gate::DecisionMode::SimpleThreshold ? "simple"
                                                               : "conformal"},
      {"corruption_kind", to_string(spec.kind)},
      {"sigma", spec.sigma},
  };
  report["config"] = {
      {"max_tokens", config.max_tokens},
      {"generation_seed", config.generation_seed},
  };
  ordered_json gates;
  for (const auto& [name, counts] : outcome.gate_counts) {
    ordered_json g;
    g["total"] = counts.total;
    g["flagged"] = counts.flagged;
    if (name == "forget") {
      g["fnr"] = counts.total == 0 ? 0.0 : 1.0 - counts.flag_rate();
    } else {
      g["fpr"] = counts.flag_rate();
    }
    gates[name] = std::move(g);
  }
  report["gate"] = std::move(gates);
  report["forget_quality"] = outcome.forget_quality;
  report["model_utility"] = outcome.model_utility;
  report["utility_components"] = outcome.utility_components;
  report["similarity"] = {
      {"unlearned", metric_vector_to_json(outcome.similarity_unlearned)},
      {"retained", metric_vector_to_json(outcome.similarity_retained)},
      {"asg", outcome.asg},
  };
  report["fluency"] = {
      {"perplexity", outcome.perplexity},
      {"unique_token_ratio", outcome.unique_token_ratio},
  };
  report["retain_passthrough_identical"] = outcome.retain_passthrough_identical;
  if (outcome.mc_accuracy_gated) {
    report["mc"] = {
        {"accuracy_gated", *outcome.mc_accuracy_gated},
        {"accuracy_ungated", *outcome.mc_accuracy_ungated},
        {"probe_accuracy", *outcome.probe_accuracy},
    };
  }
  report["skipped_records"] = outcome.skipped_records;
  outcome.report_json = report.dump(2) + "\n";
  return outcome;
}

void validate_report(const std::string& report_json) {
  ordered_json report;
  try {
    report = ordered_json::parse(report_json);
  } catch (const ordered_json::exception& e) {
    throw std::runtime_error(std::string("report: invalid JSON: ") + e.what());
  }
  const auto require = [&](const ordered_json& node, const char* field,
                           const char* where) {
    if (!node.contains(field)) {
      throw std::runtime_error(std::string("report: missing field '") + where +
                               field + "'");
    }
  };
  for (const char* field :
       {"version", "valid", "timestamp", "dataset_fingerprint", "artifacts",
        "config", "gate", "forget_quality", "model_utility",
        "utility_components", "similarity", "fluency",
        "retain_passthrough_identical", "skipped_records"}) {
    require(report, field, "");
  }
  if (!report.at("valid").get<bool>()) return;  // partial report
  require(report.at("similarity"), "unlearned", "similarity.");
  require(report.at("similarity"), "retained", "similarity.");
  require(report.at("similarity"), "asg", "similarity.");
  require(report.at("fluency"), "perplexity", "fluency.");
  require(report.at("fluency"), "unique_token_ratio", "fluency.");
  if (report.at("utility_components").size() != 9) {
    throw std::runtime_error("report: utility_components must have 9 entries");
  }
  for (const auto& [name, g] : report.at("gate").items()) {
    require(g, "total", "gate.*.");
    require(g, "flagged", "gate.*.");
  }
  for (const char* side : {"unlearned", "retained"}) {
    for (const auto& [name, m] : report.at("similarity").at(side).items()) {
      require(m, "value", "similarity.*.*.");
      require(m, "orientation", "similarity.*.*.");
    }
  }
}

}  // namespace eco::harness
