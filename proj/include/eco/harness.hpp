#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eco/artifacts.hpp"
#include "eco/backend.hpp"
#include "eco/gate.hpp"
#include "eco/metrics.hpp"
#include "eco/zoo.hpp"

namespace eco::harness {

enum class Subset {
  Forget,
  Retain,
  RealAuthors,
  WorldFacts,
  General,
  Calibration,
};

const char* to_string(Subset subset);
Subset subset_from_string(const std::string& s);

struct QaRecord {
  std::string question;
  std::string answer;
  std::optional<std::string> paraphrased_answer;
  std::vector<std::string> perturbed_answers;
  Subset subset = Subset::Retain;
  /// Calibration records carry their gate label; elsewhere the subset
  /// implies it.
  bool forget_scope = false;
};

struct McRecord {
  std::string subject;
  std::string question;
  std::array<std::string, 4> choices;
  int gold = 0;
};

/// Zero-shot multiple-choice template. Field order and punctuation are part
/// of the wire contract with classifiers trained on rendered prompts.
std::string format_mc_prompt(const McRecord& record);

struct CorpusSpec {
  std::uint64_t seed = 7;
  std::size_t forget = 40;
  std::size_t retain = 3960;
  std::size_t retain_heldout = 200;
  std::size_t real_authors = 100;
  std::size_t world_facts = 100;
  std::size_t general = 300;
  std::size_t calibration = 200;
  std::size_t mc = 1000;
};

struct Dataset {
  std::vector<QaRecord> forget;
  std::vector<QaRecord> retain;
  std::vector<QaRecord> retain_heldout;
  std::vector<QaRecord> real_authors;
  std::vector<QaRecord> world_facts;
  std::vector<QaRecord> general;
  std::vector<QaRecord> calibration;
  std::vector<McRecord> mc;
  backend::KnowledgeTable original_table;
  backend::KnowledgeTable retained_table;
  std::string fingerprint;
};

/// Writes the full synthetic corpus (vocabulary-separable QA subsets with
/// paraphrased and perturbed answers, a labeled calibration split, MC
/// questions, and the original/retained knowledge tables) as line-delimited
/// JSON plus a manifest. Byte-identical for a fixed spec.
void gen_synthetic_corpus(const CorpusSpec& spec,
                          const std::filesystem::path& dir);

Dataset load_dataset(const std::filesystem::path& dir);

/// Scores the labeled calibration split with the given scorer.
std::vector<gate::LabeledScore> calibration_scores(
    const Dataset& dataset, const gate::PromptScorer& scorer);

struct OracleSpec {
  /// Metric set the sigma objective averages over (forget-subset values).
  std::vector<std::string> metric_names = {"answer_probability",
                                           "rouge_l_recall"};
  int max_tokens = 32;
  std::uint64_t generation_seed = 1234;
};

/// Surrogate per-metric targets measured on the retained backend over the
/// forget batch (uncorrupted embeddings).
zoo::SurrogateTarget retained_targets(const Dataset& dataset,
                                      const backend::ModelBackend& retained,
                                      const OracleSpec& spec);

/// Metric-mode distance oracle: one evaluation corrupts the forget batch at
/// sigma, runs the original backend, computes the metric set, and applies
/// the mean-absolute-gap distance. The batch is fixed, so the oracle is
/// deterministic; probe sigmas below zero evaluate at the domain boundary.
zoo::DistanceOracle make_sigma_oracle(const Dataset& dataset,
                                      const backend::ModelBackend& original,
                                      const CorruptionSpec& base_spec,
                                      const zoo::SurrogateTarget& target,
                                      const OracleSpec& spec);

/// Task-agnostic mode: the objective is the mean text-similarity gap between
/// the corrupted generations and a fixed list of template responses, no
/// retained metric values required.
zoo::DistanceOracle make_template_oracle(
    const Dataset& dataset, const backend::ModelBackend& original,
    const CorruptionSpec& base_spec,
    const std::vector<std::string>& template_responses, const OracleSpec& spec);

struct GateCounts {
  std::size_t total = 0;
  std::size_t flagged = 0;

  double flag_rate() const {
    return total == 0 ? 0.0
                      : static_cast<double>(flagged) / static_cast<double>(total);
  }
};

struct EvalConfig {
  int max_tokens = 32;
  std::uint64_t generation_seed = 1234;
  int workers = 4;
  /// Fixed timestamp string for reproducible reports; empty uses wall time.
  std::string timestamp;
  /// Echoed into the report so downstream readers can trace the artifacts.
  std::string classifier_fingerprint;
  std::string calibration_fingerprint;
};

struct EvaluationOutcome {
  /// False when a backend failure aborted the pass; the report is then
  /// partial and carries the error.
  bool valid = true;
  std::string error;
  double forget_quality = 0.0;
  double model_utility = 0.0;
  std::map<std::string, double> utility_components;  // the nine inputs
  double asg = 0.0;
  metrics::MetricVector similarity_unlearned;
  metrics::MetricVector similarity_retained;
  double perplexity = 1.0;
  double unique_token_ratio = 0.0;
  std::map<std::string, GateCounts> gate_counts;  // keyed by subset name
  bool retain_passthrough_identical = true;
  std::optional<double> mc_accuracy_gated;
  std::optional<double> mc_accuracy_ungated;
  std::optional<double> probe_accuracy;
  std::size_t skipped_records = 0;
  std::vector<double> forget_truth_ratios_gated;
  std::vector<double> forget_truth_ratios_retained;
  std::string report_json;
};

/// Full evaluation pass: gate confusion over every subset, truth ratios and
/// forget quality on the forget set, the nine-component model utility,
/// similarity metrics and ASG against the retained backend, MC accuracy and
/// probe leakage when MC records are present. Deterministic under the
/// config seeds.
EvaluationOutcome evaluate(const Dataset& dataset,
                           const gate::PromptScorer& scorer,
                           const gate::CalibrationArtifact& calibration,
                           const CorruptionSpec& spec,
                           const backend::ModelBackend& original,
                           const backend::ModelBackend& retained,
                           const EvalConfig& config = {});

/// Throws with a field-level diagnostic when the document does not match
/// the published report schema (docs/formats.md).
void validate_report(const std::string& report_json);

}  // namespace eco::harness
