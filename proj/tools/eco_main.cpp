#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "eco/artifacts.hpp"
#include "eco/backend.hpp"
#include "eco/gateway.hpp"
#include "eco/harness.hpp"
#include "eco/remote.hpp"
#include "eco/text.hpp"

namespace {

using eco::CorruptionKind;
using eco::CorruptionSpec;
using eco::DimSelect;
using nlohmann::ordered_json;

struct SharedConfig {
  eco::backend::ToyBackendConfig backend;
  int max_tokens = 32;
  std::uint64_t generation_seed = 1234;
  int workers = 4;
};

SharedConfig load_shared_config(const std::string& path) {
  SharedConfig config;
  if (path.empty()) return config;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file: " + path);
  const auto j = ordered_json::parse(in);
  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    config.backend.dim = b.value("dim", config.backend.dim);
    config.backend.seed = b.value("seed", config.backend.seed);
    config.backend.kappa = b.value("kappa", config.backend.kappa);
    config.backend.score_floor =
        b.value("score_floor", config.backend.score_floor);
  }
  config.max_tokens = j.value("max_tokens", config.max_tokens);
  config.generation_seed = j.value("generation_seed", config.generation_seed);
  config.workers = j.value("workers", config.workers);
  return config;
}

CorruptionSpec make_spec(const std::string& kind, double sigma,
                         const std::string& dim_rule, int dim_count,
                         std::uint64_t dim_seed, std::uint64_t noise_seed) {
  CorruptionSpec spec;
  spec.kind = eco::corruption_kind_from_string(kind);
  spec.sigma = sigma;
  if (dim_rule == "first_n") {
    spec.dims = DimSelect::first_n(dim_count);
  } else if (dim_rule == "top_k") {
    spec.dims = DimSelect::top_k(dim_count);
  } else if (dim_rule == "random_n") {
    spec.dims = DimSelect::random_n(dim_count, dim_seed);
  } else {
    throw std::runtime_error("unknown dim rule: " + dim_rule);
  }
  spec.noise_seed = noise_seed;
  spec.validate();
  return spec;
}

std::vector<std::string> questions_of(const std::vector<eco::harness::QaRecord>& records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.question);
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"eco: inference-time unlearning gateway and evaluation harness"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "shared JSON config file")
      ->envname("ECO_CONFIG");

  // --- gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  eco::harness::CorpusSpec corpus_spec;
  std::string gen_out = "data";
  gen->add_option("--seed", corpus_spec.seed, "corpus seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--forget", corpus_spec.forget, "forget subset size");
  gen->add_option("--retain", corpus_spec.retain, "retain subset size");
  gen->add_option("--retain-heldout", corpus_spec.retain_heldout,
                  "held-out retain size");
  gen->add_option("--real-authors", corpus_spec.real_authors,
                  "real-authors subset size");
  gen->add_option("--world-facts", corpus_spec.world_facts,
                  "world-facts subset size");
  gen->add_option("--general", corpus_spec.general, "general subset size");
  gen->add_option("--calibration", corpus_spec.calibration,
                  "calibration subset size");
  gen->add_option("--mc", corpus_spec.mc, "multiple-choice question count");

  // --- train-classifier
  auto* train = app.add_subcommand("train-classifier",
                                   "train the reference prompt classifier");
  std::string train_data;
  std::string train_out = "classifier.bin";
  eco::gate::TrainConfig train_config;
  bool train_on_mc = false;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "classifier artifact path");
  train->add_option("--epochs", train_config.epochs, "training epochs");
  train->add_option("--lr", train_config.learning_rate, "learning rate");
  train->add_option("--seed", train_config.seed, "training seed");
  train->add_flag("--mc-prompts", train_on_mc,
                  "train on rendered MC prompts as the forget corpus");

  // --- calibrate
  auto* calibrate = app.add_subcommand("calibrate", "calibrate the gate");
  std::string cal_mode = "simple";
  double cal_alpha = 0.05;
  std::string cal_data;
  std::string cal_classifier;
  std::string cal_scores_file;
  std::string cal_out = "calibration.json";
  calibrate->add_option("--mode", cal_mode, "simple|conformal")
      ->check(CLI::IsMember({"simple", "conformal"}));
  calibrate->add_option("--alpha", cal_alpha, "conformal error rate");
  calibrate->add_option("--data", cal_data, "dataset directory");
  calibrate->add_option("--classifier", cal_classifier,
                        "classifier artifact path");
  calibrate->add_option("--scores", cal_scores_file,
                        "JSONL of {\"score\":..,\"label\":\"forget|retain\"} "
                        "(bypasses --data/--classifier)");
  calibrate->add_option("--out", cal_out, "calibration artifact path");

  // --- optimize-sigma
  auto* optimize = app.add_subcommand("optimize-sigma",
                                      "learn the corruption strength");
  std::string opt_data;
  std::string opt_out = "sigma.json";
  std::string opt_kind = "random_noise";
  std::string opt_dim_rule = "first_n";
  int opt_dim_count = 1;
  std::uint64_t opt_dim_seed = 0;
  std::uint64_t opt_noise_seed = 0;
  std::string opt_templates;
  eco::zoo::ZooConfig zoo_config;
  optimize->add_option("--data", opt_data, "dataset directory")->required();
  optimize->add_option("--out", opt_out, "sigma artifact path");
  optimize->add_option("--templates", opt_templates,
                       "template responses (one per line); switches the "
                       "objective to the task-agnostic similarity gap");
  optimize->add_option("--kind", opt_kind, "corruption kind");
  optimize->add_option("--dim-rule", opt_dim_rule, "first_n|top_k|random_n");
  optimize->add_option("--dim-count", opt_dim_count, "dims per row");
  optimize->add_option("--dim-seed", opt_dim_seed, "random_n seed");
  optimize->add_option("--noise-seed", opt_noise_seed, "noise stream seed");
  optimize->add_option("--sigma0", zoo_config.sigma0, "initial strength");
  optimize->add_option("--eta", zoo_config.eta, "step size");
  optimize->add_option("--mu", zoo_config.mu, "perturbation size");
  optimize->add_option("--max-iters", zoo_config.max_iters, "iteration cap");
  optimize->add_option("--tol", zoo_config.tol, "convergence threshold");

  // --- corrupt-debug
  auto* debug = app.add_subcommand("corrupt-debug",
                                   "print embedding rows before/after corruption");
  std::string dbg_data;
  std::string dbg_prompt;
  std::string dbg_kind = "random_noise";
  std::string dbg_dim_rule = "first_n";
  int dbg_dim_count = 1;
  double dbg_sigma = 1.0;
  std::uint64_t dbg_noise_seed = 0;
  int dbg_max_dims = 8;
  debug->add_option("--data", dbg_data, "dataset directory")->required();
  debug->add_option("--prompt", dbg_prompt, "prompt text")->required();
  debug->add_option("--kind", dbg_kind, "corruption kind");
  debug->add_option("--dim-rule", dbg_dim_rule, "first_n|top_k|random_n");
  debug->add_option("--dim-count", dbg_dim_count, "dims per row");
  debug->add_option("--sigma", dbg_sigma, "corruption strength");
  debug->add_option("--noise-seed", dbg_noise_seed, "noise stream seed");
  debug->add_option("--max-dims", dbg_max_dims, "columns to print");

  // --- evaluate
  auto* eval = app.add_subcommand("evaluate", "run the evaluation harness");
  std::string eval_data;
  std::string eval_classifier;
  std::string eval_calibration;
  std::string eval_sigma;
  std::string eval_report = "report.json";
  std::string eval_timestamp;
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--classifier", eval_classifier, "classifier artifact")
      ->required();
  eval->add_option("--calibration", eval_calibration, "calibration artifact")
      ->required();
  eval->add_option("--sigma", eval_sigma, "sigma artifact")->required();
  eval->add_option("--report", eval_report, "report output path");
  eval->add_option("--timestamp", eval_timestamp,
                   "fixed report timestamp (reproducible runs)");

  // --- serve
  auto* serve = app.add_subcommand("serve", "run the enforcement gateway");
  std::string serve_config_path;
  serve->add_option("--config", serve_config_path, "gateway config JSON")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  const SharedConfig shared = load_shared_config(config_path);

  if (gen->parsed()) {
    eco::harness::gen_synthetic_corpus(corpus_spec, gen_out);
    std::cout << "corpus written to " << gen_out << "\n";
    return 0;
  }

  if (train->parsed()) {
    const auto dataset = eco::harness::load_dataset(train_data);
    std::vector<std::string> forget_corpus;
    if (train_on_mc) {
      for (const auto& record : dataset.mc) {
        forget_corpus.push_back(eco::harness::format_mc_prompt(record));
      }
    } else {
      forget_corpus = questions_of(dataset.forget);
    }
    auto retain_corpus = questions_of(dataset.retain);
    const auto classifier = eco::gate::train_reference_classifier(
        forget_corpus, retain_corpus, train_config);
    eco::artifacts::save_classifier(classifier, train_out);
    std::cout << "classifier written to " << train_out << " (fingerprint "
              << eco::artifacts::file_fingerprint(train_out) << ")\n";
    return 0;
  }

  if (calibrate->parsed()) {
    std::vector<eco::gate::LabeledScore> scores;
    std::string fingerprint;
    if (!cal_scores_file.empty()) {
      std::ifstream in(cal_scores_file);
      if (!in) throw std::runtime_error("cannot read " + cal_scores_file);
      std::string line;
      std::uint64_t fp = 0xcbf29ce484222325ULL;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        fp = eco::text::fnv1a(line, fp);
        const auto j = ordered_json::parse(line);
        eco::gate::LabeledScore s;
        s.score.p_forget = j.at("score").get<double>();
        s.is_forget = j.at("label").get<std::string>() == "forget";
        scores.push_back(s);
      }
      fingerprint = eco::text::hex64(fp);
    } else {
      if (cal_data.empty() || cal_classifier.empty()) {
        std::cerr << "calibrate: need either --scores or --data + --classifier\n";
        return 2;
      }
      const auto dataset = eco::harness::load_dataset(cal_data);
      const auto classifier = eco::artifacts::load_classifier(cal_classifier);
      scores = eco::harness::calibration_scores(dataset, classifier);
      fingerprint = dataset.fingerprint;
    }
    eco::gate::CalibrationArtifact artifact;
    artifact.n_cal = scores.size();
    artifact.data_fingerprint = fingerprint;
    if (cal_mode == "simple") {
      artifact.mode = eco::gate::DecisionMode::SimpleThreshold;
      artifact.tau = eco::gate::calibrate_threshold(scores);
      std::cout << "tau = " << artifact.tau << "\n";
    } else {
      artifact.mode = eco::gate::DecisionMode::Conformal;
      artifact.alpha = cal_alpha;
      artifact.q_hat = eco::gate::conformal_calibrate(scores, cal_alpha);
      std::cout << "q_hat = " << artifact.q_hat << " (n=" << artifact.n_cal
                << ", alpha=" << cal_alpha << ")\n";
    }
    eco::artifacts::save_calibration(artifact, cal_out);
    std::cout << "calibration written to " << cal_out << "\n";
    return 0;
  }

  if (optimize->parsed()) {
    const auto dataset = eco::harness::load_dataset(opt_data);
    const eco::backend::ToyBackend original(shared.backend,
                                            dataset.original_table);
    eco::backend::ToyBackendConfig retained_config = shared.backend;
    retained_config.model_id = "toy-retained";
    const eco::backend::ToyBackend retained(retained_config,
                                            dataset.retained_table);
    const CorruptionSpec base_spec =
        make_spec(opt_kind, zoo_config.sigma0, opt_dim_rule, opt_dim_count,
                  opt_dim_seed, opt_noise_seed);

    eco::harness::OracleSpec oracle_spec;
    oracle_spec.max_tokens = shared.max_tokens;
    oracle_spec.generation_seed = shared.generation_seed;
    auto oracle = [&] {
      if (!opt_templates.empty()) {
        std::ifstream in(opt_templates);
        if (!in) throw std::runtime_error("cannot read " + opt_templates);
        std::vector<std::string> responses;
        std::string line;
        while (std::getline(in, line)) {
          if (!line.empty()) responses.push_back(line);
        }
        return eco::harness::make_template_oracle(dataset, original, base_spec,
                                                  responses, oracle_spec);
      }
      const auto target =
          eco::harness::retained_targets(dataset, retained, oracle_spec);
      return eco::harness::make_sigma_oracle(dataset, original, base_spec,
                                             target, oracle_spec);
    }();
    const auto result = eco::zoo::optimize_sigma(oracle, zoo_config);

    eco::artifacts::SigmaArtifact artifact;
    artifact.spec = base_spec.with_sigma(result.sigma_star);
    artifact.sigma_star = result.sigma_star;
    artifact.best_distance = result.best_distance;
    artifact.config = zoo_config;
    artifact.iterations = static_cast<int>(result.trace.steps.size());
    artifact.stop_reason = eco::zoo::to_string(result.trace.stop);
    artifact.oracle_calls = result.trace.oracle_calls;
    artifact.oracle_fingerprint = dataset.fingerprint;
    eco::artifacts::save_sigma(artifact, opt_out);
    std::cout << "sigma* = " << result.sigma_star << " (distance "
              << result.best_distance << ", " << artifact.iterations
              << " iterations, " << artifact.stop_reason << ")\n"
              << "sigma artifact written to " << opt_out << "\n";
    return 0;
  }

  if (debug->parsed()) {
    const auto dataset = eco::harness::load_dataset(dbg_data);
    const eco::backend::ToyBackend model(shared.backend, dataset.original_table);
    const auto spec = make_spec(dbg_kind, dbg_sigma, dbg_dim_rule,
                                dbg_dim_count, 0, dbg_noise_seed);
    const auto e = model.embed(model.tokenize(dbg_prompt));
    const auto corrupted = eco::corrupt(e, spec);
    const auto cols = std::min<Eigen::Index>(e.cols(), dbg_max_dims);
    std::cout << "kind=" << eco::to_string(spec.kind) << " sigma=" << spec.sigma
              << " rows=" << e.rows() << " dims=" << e.cols() << "\n";
    for (Eigen::Index t = 0; t < e.rows(); ++t) {
      std::cout << "row " << t << " before:";
      for (Eigen::Index k = 0; k < cols; ++k) std::cout << " " << e(t, k);
      std::cout << "\nrow " << t << " after: ";
      for (Eigen::Index k = 0; k < cols; ++k) std::cout << " " << corrupted(t, k);
      std::cout << "\n";
    }
    return 0;
  }

  if (eval->parsed()) {
    const auto dataset = eco::harness::load_dataset(eval_data);
    const auto classifier = eco::artifacts::load_classifier(eval_classifier);
    const auto calibration = eco::artifacts::load_calibration(eval_calibration);
    const auto sigma = eco::artifacts::load_sigma(eval_sigma);
    const eco::backend::ToyBackend original(shared.backend,
                                            dataset.original_table);
    eco::backend::ToyBackendConfig retained_config = shared.backend;
    retained_config.model_id = "toy-retained";
    const eco::backend::ToyBackend retained(retained_config,
                                            dataset.retained_table);

    eco::harness::EvalConfig config;
    config.max_tokens = shared.max_tokens;
    config.generation_seed = shared.generation_seed;
    config.workers = shared.workers;
    config.timestamp = eval_timestamp;
    config.classifier_fingerprint =
        eco::artifacts::file_fingerprint(eval_classifier);
    config.calibration_fingerprint =
        eco::artifacts::file_fingerprint(eval_calibration);

    const auto outcome =
        eco::harness::evaluate(dataset, classifier, calibration,
                               sigma.spec.with_sigma(sigma.sigma_star),
                               original, retained, config);
    eco::harness::validate_report(outcome.report_json);
    std::ofstream out(eval_report, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + eval_report);
    out << outcome.report_json;
    if (!outcome.valid) {
      std::cerr << "error: evaluation aborted (" << outcome.error
                << "); partial report written to " << eval_report << "\n";
      return 1;
    }
    std::cout << "forget_quality = " << outcome.forget_quality
              << ", model_utility = " << outcome.model_utility
              << ", asg = " << outcome.asg << "\n"
              << "report written to " << eval_report << "\n";
    return 0;
  }

  if (serve->parsed()) {
    std::ifstream in(serve_config_path);
    if (!in) throw std::runtime_error("cannot read " + serve_config_path);
    const auto j = ordered_json::parse(in);

    eco::gateway::GatewayState state;
    const std::string classifier_path = j.at("classifier").get<std::string>();
    const std::string calibration_path = j.at("calibration").get<std::string>();
    state.scorer = std::make_shared<eco::gate::ReferenceClassifier>(
        eco::artifacts::load_classifier(classifier_path));
    state.calibration = eco::artifacts::load_calibration(calibration_path);
    state.classifier_fingerprint =
        eco::artifacts::file_fingerprint(classifier_path);
    state.calibration_fingerprint =
        eco::artifacts::file_fingerprint(calibration_path);
    if (j.contains("sigma")) {
      const auto sigma =
          eco::artifacts::load_sigma(j.at("sigma").get<std::string>());
      state.spec = sigma.spec.with_sigma(sigma.sigma_star);
    } else {
      state.spec =
          eco::artifacts::corruption_spec_from_json(j.at("corruption").dump());
    }

    const auto& b = j.at("backend");
    const std::string type = b.value("type", "toy");
    eco::backend::ToyBackendConfig backend_config = shared.backend;
    backend_config.dim = b.value("dim", backend_config.dim);
    backend_config.seed = b.value("seed", backend_config.seed);
    backend_config.kappa = b.value("kappa", backend_config.kappa);
    const auto dataset =
        eco::harness::load_dataset(b.at("data").get<std::string>());
    if (type == "toy") {
      state.model = std::make_shared<eco::backend::ToyBackend>(
          backend_config, dataset.original_table);
    } else if (type == "remote") {
      eco::backend::RemoteBackendConfig remote;
      remote.host = b.value("host", remote.host);
      remote.port = b.value("port", remote.port);
      remote.timeout_seconds = b.value("timeout_seconds", remote.timeout_seconds);
      remote.retries = b.value("retries", remote.retries);
      remote.auth_token_env = b.value("auth_token_env", remote.auth_token_env);
      state.model = std::make_shared<eco::backend::RemoteBackend>(
          remote, backend_config, dataset.original_table);
    } else {
      throw std::runtime_error("unknown backend type: " + type);
    }

    eco::gateway::GatewayOptions options;
    options.listen_address = j.value("listen_address", options.listen_address);
    options.port = j.value("port", 8187);
    options.concurrency_limit =
        j.value("concurrency_limit", options.concurrency_limit);
    options.expose_decision = j.value("expose_decision", false);
    options.classify_budget_ms =
        j.value("classify_budget_ms", options.classify_budget_ms);

    eco::gateway::Gateway gateway(std::move(state), options);
    gateway.start();
    std::cout << "gateway listening on " << options.listen_address << ":"
              << gateway.port() << " (ctrl-c to stop)\n";
    // Foreground serve: block until interrupted.
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(3600));
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
