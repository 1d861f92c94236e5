#include "eco/artifacts.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "eco/text.hpp"

namespace eco::artifacts {

namespace {

using nlohmann::ordered_json;

constexpr char kClassifierMagic[8] = {'E', 'C', 'O', 'C', 'L', 'S', '1', '\n'};

void write_bytes(std::ofstream& out, const void* data, std::size_t size) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

template <class T>
void write_le(std::ofstream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  // Host is little-endian on every supported target; bytes go out as-is.
  write_bytes(out, &value, sizeof(value));
}

template <class T>
T read_le(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(value));
  if (!in) throw std::runtime_error("classifier artifact: truncated file");
  return value;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path.string());
  }
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open for reading: " + path.string());
  }
  return in;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

double q_hat_from_json(const ordered_json& v) {
  if (v.is_string()) {
    if (v.get<std::string>() == "inf") {
      return std::numeric_limits<double>::infinity();
    }
    throw std::runtime_error("calibration artifact: bad q_hat string");
  }
  return v.get<double>();
}

ordered_json q_hat_to_json(double q_hat) {
  if (std::isinf(q_hat)) return "inf";
  return q_hat;
}

}  // namespace

void save_classifier(const gate::ReferenceClassifier& classifier,
                     const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  const auto& config = classifier.config();
  write_bytes(out, kClassifierMagic, sizeof(kClassifierMagic));
  write_le<std::uint64_t>(out, config.hash_buckets);
  write_le<std::int32_t>(out, config.ngram_min);
  write_le<std::int32_t>(out, config.ngram_max);
  write_le<std::uint64_t>(out, config.context_budget_chars);
  write_le<std::int32_t>(out, config.epochs);
  write_le<double>(out, config.learning_rate);
  write_le<double>(out, config.l2);
  write_le<std::uint64_t>(out, config.seed);
  write_le<double>(out, classifier.bias());
  write_le<double>(out, classifier.class_weight_forget());
  write_le<double>(out, classifier.class_weight_retain());
  write_le<std::uint64_t>(out, classifier.train_fingerprint());
  const auto& w = classifier.weights();
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(w.size()));
  write_bytes(out, w.data(), static_cast<std::size_t>(w.size()) * sizeof(double));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

gate::ReferenceClassifier load_classifier(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kClassifierMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("classifier artifact: bad magic in " + path.string());
  }
  gate::TrainConfig config;
  config.hash_buckets = read_le<std::uint64_t>(in);
  config.ngram_min = read_le<std::int32_t>(in);
  config.ngram_max = read_le<std::int32_t>(in);
  config.context_budget_chars = read_le<std::uint64_t>(in);
  config.epochs = read_le<std::int32_t>(in);
  config.learning_rate = read_le<double>(in);
  config.l2 = read_le<double>(in);
  config.seed = read_le<std::uint64_t>(in);
  const double bias = read_le<double>(in);
  const double w_forget = read_le<double>(in);
  const double w_retain = read_le<double>(in);
  const std::uint64_t fingerprint = read_le<std::uint64_t>(in);
  const std::uint64_t size = read_le<std::uint64_t>(in);
  if (size != config.hash_buckets) {
    throw std::runtime_error("classifier artifact: weight size mismatch");
  }
  Eigen::VectorXd weights(static_cast<Eigen::Index>(size));
  in.read(reinterpret_cast<char*>(weights.data()),
          static_cast<std::streamsize>(size * sizeof(double)));
  if (!in) throw std::runtime_error("classifier artifact: truncated weights");
  return gate::ReferenceClassifier(config, std::move(weights), bias, w_forget,
                                   w_retain, fingerprint);
}

std::string file_fingerprint(const std::filesystem::path& path) {
  return text::hex64(text::fnv1a(read_all(path)));
}

std::string calibration_to_json(const gate::CalibrationArtifact& artifact) {
  ordered_json j;
  j["version"] = artifact.version;
  j["mode"] = artifact.mode == gate::DecisionMode::SimpleThreshold
                  ? "simple"
                  : "conformal";
  if (artifact.mode == gate::DecisionMode::SimpleThreshold) {
    j["tau"] = artifact.tau;
  } else {
    j["alpha"] = artifact.alpha;
    j["q_hat"] = q_hat_to_json(artifact.q_hat);
    j["n_cal"] = artifact.n_cal;
  }
  j["data_fingerprint"] = artifact.data_fingerprint;
  return j.dump(2) + "\n";
}

gate::CalibrationArtifact calibration_from_json(const std::string& textual) {
  ordered_json j;
  try {
    j = ordered_json::parse(textual);
  } catch (const ordered_json::exception& e) {
    throw std::runtime_error(std::string("calibration artifact: ") + e.what());
  }
  gate::CalibrationArtifact artifact;
  artifact.version = j.at("version").get<std::string>();
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "simple") {
    artifact.mode = gate::DecisionMode::SimpleThreshold;
    artifact.tau = j.at("tau").get<double>();
  } else if (mode == "conformal") {
    artifact.mode = gate::DecisionMode::Conformal;
    artifact.alpha = j.at("alpha").get<double>();
    artifact.q_hat = q_hat_from_json(j.at("q_hat"));
    artifact.n_cal = j.at("n_cal").get<std::size_t>();
  } else {
    throw std::runtime_error("calibration artifact: unknown mode '" + mode + "'");
  }
  artifact.data_fingerprint = j.value("data_fingerprint", "");
  artifact.validate();
  return artifact;
}

void save_calibration(const gate::CalibrationArtifact& artifact,
                      const std::filesystem::path& path) {
  artifact.validate();
  std::ofstream out = open_out(path);
  out << calibration_to_json(artifact);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

gate::CalibrationArtifact load_calibration(const std::filesystem::path& path) {
  return calibration_from_json(read_all(path));
}

namespace {

ordered_json dim_select_to_json(const DimSelect& dims) {
  ordered_json j;
  j["rule"] = to_string(dims.rule);
  j["count"] = dims.count;
  if (dims.rule == DimSelect::Rule::RandomN) j["seed"] = dims.seed;
  return j;
}

DimSelect dim_select_from_json(const ordered_json& j) {
  DimSelect dims;
  const auto rule = j.at("rule").get<std::string>();
  if (rule == "first_n") {
    dims.rule = DimSelect::Rule::FirstN;
  } else if (rule == "top_k") {
    dims.rule = DimSelect::Rule::TopK;
  } else if (rule == "random_n") {
    dims.rule = DimSelect::Rule::RandomN;
  } else {
    throw std::runtime_error("corruption spec: unknown dim rule '" + rule + "'");
  }
  dims.count = j.at("count").get<Eigen::Index>();
  dims.seed = j.value("seed", std::uint64_t{0});
  return dims;
}

ordered_json spec_to_json_obj(const CorruptionSpec& spec) {
  ordered_json j;
  j["kind"] = to_string(spec.kind);
  j["sigma"] = spec.sigma;
  j["dims"] = dim_select_to_json(spec.dims);
  j["noise_seed"] = spec.noise_seed;
  return j;
}

CorruptionSpec spec_from_json_obj(const ordered_json& j) {
  CorruptionSpec spec;
  spec.kind = corruption_kind_from_string(j.at("kind").get<std::string>());
  spec.sigma = j.at("sigma").get<double>();
  if (j.contains("dims")) spec.dims = dim_select_from_json(j.at("dims"));
  spec.noise_seed = j.value("noise_seed", std::uint64_t{0});
  spec.validate();
  return spec;
}

}  // namespace

std::string corruption_spec_to_json(const CorruptionSpec& spec) {
  return spec_to_json_obj(spec).dump(2) + "\n";
}

CorruptionSpec corruption_spec_from_json(const std::string& textual) {
  return spec_from_json_obj(ordered_json::parse(textual));
}

void save_sigma(const SigmaArtifact& artifact,
                const std::filesystem::path& path) {
  ordered_json j;
  j["version"] = artifact.version;
  j["spec"] = spec_to_json_obj(artifact.spec);
  j["sigma_star"] = artifact.sigma_star;
  j["best_distance"] = artifact.best_distance;
  j["config"] = {
      {"sigma0", artifact.config.sigma0},   {"eta", artifact.config.eta},
      {"mu", artifact.config.mu},           {"max_iters", artifact.config.max_iters},
      {"tol", artifact.config.tol},         {"clamp_min", artifact.config.clamp_min},
  };
  j["iterations"] = artifact.iterations;
  j["stop_reason"] = artifact.stop_reason;
  j["oracle_calls"] = artifact.oracle_calls;
  j["oracle_fingerprint"] = artifact.oracle_fingerprint;
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

SigmaArtifact load_sigma(const std::filesystem::path& path) {
  ordered_json j = ordered_json::parse(read_all(path));
  SigmaArtifact artifact;
  artifact.version = j.at("version").get<std::string>();
  artifact.spec = spec_from_json_obj(j.at("spec"));
  artifact.sigma_star = j.at("sigma_star").get<double>();
  artifact.best_distance = j.at("best_distance").get<double>();
  const auto& c = j.at("config");
  artifact.config.sigma0 = c.at("sigma0").get<double>();
  artifact.config.eta = c.at("eta").get<double>();
  artifact.config.mu = c.at("mu").get<double>();
  artifact.config.max_iters = c.at("max_iters").get<int>();
  artifact.config.tol = c.at("tol").get<double>();
  artifact.config.clamp_min = c.at("clamp_min").get<double>();
  artifact.iterations = j.at("iterations").get<int>();
  artifact.stop_reason = j.at("stop_reason").get<std::string>();
  artifact.oracle_calls = j.at("oracle_calls").get<std::uint64_t>();
  artifact.oracle_fingerprint = j.value("oracle_fingerprint", "");
  return artifact;
}

}  // namespace eco::artifacts
