// Drives the installed CLI binary end to end with std::system.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "eco_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string command = std::string(ECO_BIN) + " " + args + " >" +
                              (work_dir() / "stdout.txt").string() + " 2>" +
                              (work_dir() / "stderr.txt").string();
  const int status = std::system(command.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cli: full offline workflow") {
  const auto dir = work_dir();
  const std::string data = (dir / "data").string();

  // gen-corpus twice -> identical tree
  REQUIRE(run("gen-corpus --seed 5 --out " + data +
              " --forget 12 --retain 150 --retain-heldout 20 --real-authors 15"
              " --world-facts 15 --general 20 --calibration 40 --mc 20") == 0);
  const std::string data2 = (dir / "data2").string();
  REQUIRE(run("gen-corpus --seed 5 --out " + data2 +
              " --forget 12 --retain 150 --retain-heldout 20 --real-authors 15"
              " --world-facts 15 --general 20 --calibration 40 --mc 20") == 0);
  for (const auto& entry : fs::directory_iterator(data)) {
    CHECK(slurp(entry.path()) ==
          slurp(fs::path(data2) / entry.path().filename()));
  }

  REQUIRE(run("train-classifier --data " + data + " --out " +
              (dir / "classifier.bin").string() + " --epochs 250") == 0);
  REQUIRE(run("calibrate --mode simple --data " + data + " --classifier " +
              (dir / "classifier.bin").string() + " --out " +
              (dir / "calibration.json").string()) == 0);
  REQUIRE(run("optimize-sigma --data " + data + " --out " +
              (dir / "sigma.json").string() +
              " --eta 4 --mu 0.25 --max-iters 40 --tol 1e-3") == 0);
  REQUIRE(run("evaluate --data " + data + " --classifier " +
              (dir / "classifier.bin").string() + " --calibration " +
              (dir / "calibration.json").string() + " --sigma " +
              (dir / "sigma.json").string() + " --report " +
              (dir / "report.json").string() +
              " --timestamp 2026-01-01T00:00:00Z") == 0);

  const auto report = json::parse(slurp(dir / "report.json"));
  CHECK(report.at("gate").at("forget").at("fnr") == 0.0);
  CHECK(report.at("gate").at("retain").at("fpr") == 0.0);
  CHECK(report.at("forget_quality").get<double>() >= 0.9);
  CHECK(report.at("retain_passthrough_identical") == true);
}

TEST_CASE("cli: conformal calibration from a raw score file") {
  const auto dir = work_dir();
  const auto scores_path = dir / "scores.jsonl";
  {
    std::ofstream out(scores_path);
    for (int i = 0; i < 18; ++i) {
      out << json{{"score", 1.0 - 0.04 * (i + 1)}, {"label", "forget"}}.dump()
          << "\n";
    }
    out << json{{"score", 1.0 - 0.93}, {"label", "forget"}}.dump() << "\n";
  }
  REQUIRE(run("calibrate --mode conformal --alpha 0.05 --scores " +
              scores_path.string() + " --out " +
              (dir / "conformal.json").string()) == 0);
  const auto artifact = json::parse(slurp(dir / "conformal.json"));
  CHECK(artifact.at("mode") == "conformal");
  CHECK(artifact.at("q_hat").get<double>() == 0.93);
  CHECK(artifact.at("n_cal") == 19);
}

TEST_CASE("cli: corrupt-debug prints before/after rows") {
  const auto dir = work_dir();
  REQUIRE(run("corrupt-debug --data " + (dir / "data").string() +
              " --prompt \"hello world\" --sigma 2 --kind sign_flip"
              " --dim-rule first_n --dim-count 2") == 0);
  const auto output = slurp(dir / "stdout.txt");
  CHECK(output.find("before:") != std::string::npos);
  CHECK(output.find("after:") != std::string::npos);
  CHECK(output.find("kind=sign_flip") != std::string::npos);
}

TEST_CASE("cli: usage errors exit with status 2") {
  CHECK(run("no-such-subcommand") == 2);
  CHECK(run("gen-corpus --no-such-flag 1") == 2);
  CHECK(run("calibrate --mode bogus") == 2);
}

TEST_CASE("cli: missing files exit with status 1 and a diagnostic") {
  const auto dir = work_dir();
  CHECK(run("evaluate --data /nonexistent --classifier x --calibration y "
            "--sigma z --report r.json") == 1);
  const auto err = slurp(dir / "stderr.txt");
  CHECK(err.find("error:") != std::string::npos);
}
