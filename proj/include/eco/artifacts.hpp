#pragma once

#include <filesystem>
#include <string>

#include "eco/corruption.hpp"
#include "eco/gate.hpp"
#include "eco/zoo.hpp"

namespace eco::artifacts {

/// Classifier artifact: little-endian binary, magic "ECOCLS1\n", hashing
/// config, weight vector, bias, class weights, training fingerprint.
/// Round-trips bit-exactly. Layout documented in docs/formats.md.
void save_classifier(const gate::ReferenceClassifier& classifier,
                     const std::filesystem::path& path);
gate::ReferenceClassifier load_classifier(const std::filesystem::path& path);

/// Hex fingerprint of a file's bytes; what /health reports for artifacts.
std::string file_fingerprint(const std::filesystem::path& path);

/// Calibration artifact: canonical JSON (sorted keys, q_hat serialized as
/// the string "inf" when infinite). Round-trips bit-exactly.
void save_calibration(const gate::CalibrationArtifact& artifact,
                      const std::filesystem::path& path);
gate::CalibrationArtifact load_calibration(const std::filesystem::path& path);
std::string calibration_to_json(const gate::CalibrationArtifact& artifact);
gate::CalibrationArtifact calibration_from_json(const std::string& text);

/// Learned corruption strength plus the run that produced it.
struct SigmaArtifact {
  CorruptionSpec spec;
  double sigma_star = 0.0;
  double best_distance = 0.0;
  zoo::ZooConfig config;
  int iterations = 0;
  std::string stop_reason;
  std::uint64_t oracle_calls = 0;
  std::string oracle_fingerprint;
  std::string version = "1";
};

void save_sigma(const SigmaArtifact& artifact,
                const std::filesystem::path& path);
SigmaArtifact load_sigma(const std::filesystem::path& path);

/// Corruption spec <-> JSON (shared by config files and artifacts).
std::string corruption_spec_to_json(const CorruptionSpec& spec);
CorruptionSpec corruption_spec_from_json(const std::string& text);

}  // namespace eco::artifacts
