#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "moext/data.hpp"
#include "support.hpp"

using namespace moext;
namespace fs = std::filesystem;

namespace {

struct Captured {
  int code = 0;
  std::string out, err;
};

Captured call(std::vector<std::string> args) {
  args.insert(args.begin(), "moext");
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Captured c;
  c.code = cli::run(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  c.out = out.str();
  c.err = err.str();
  return c;
}

std::size_t rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::size_t n = 0;
  std::getline(in, line);
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(std::ifstream(p)); }

}  // namespace

TEST_CASE("synth writes 20 rows") {
  testing::TempDir dir("cli_synth");
  const auto out = dir / "d";
  const auto r = call({"synth", "--subjects", "4", "--clips", "5", "--classes", "3", "--seed", "7", "--out",
                       out.string(), "--log-level", "warn"});
  REQUIRE(r.code == cli::kOk);
  CHECK(rows(out / "manifest.csv") == 20);
  CHECK(fs::exists(out / "landmarks.json"));
  const auto rec = read_json(out / "run_synth.json");
  CHECK(rec.at("config_hash").get<std::string>().size() == 16);
  CHECK(rec.at("micro_samples") == 20);

  // same settings, same hash; a different seed changes it
  const auto again = call({"--seed", "7", "--out", (dir / "e").string(), "synth", "--subjects", "4", "--clips", "5",
                           "--classes", "3", "--log-level", "warn"});
  REQUIRE(again.code == cli::kOk);
  CHECK(read_json(dir / "e" / "run_synth.json").at("config_hash") == rec.at("config_hash"));
  call({"--seed", "8", "--out", (dir / "f").string(), "synth", "--subjects", "4", "--clips", "5", "--classes", "3"});
  CHECK(read_json(dir / "f" / "run_synth.json").at("config_hash") != rec.at("config_hash"));
}

TEST_CASE("help lists every flag") {
  const auto top = call({"--help"});
  CHECK(top.code == 0);
  for (auto sub : {"synth", "preprocess", "pretrain", "finetune", "evaluate", "flow"})
    CHECK(top.out.find(sub) != std::string::npos);
  for (auto flag : {"--config", "--seed", "--out", "--jobs", "--deterministic"})
    CHECK(top.out.find(flag) != std::string::npos);

  const std::map<std::string, std::vector<std::string>> expected{
      {"synth", {"--subjects", "--clips", "--classes", "--macro-clips", "--amplitude", "--raw-size"}},
      {"preprocess", {"--manifest", "--landmarks", "--size"}},
      {"pretrain",
       {"--manifest", "--epochs", "--batch-size", "--lr", "--weight-decay", "--beta1", "--beta2", "--epsilon",
        "--alpha-st", "--alpha-ss", "--m", "--pseudo-apex", "--width-divisor", "--no-macro", "--no-motion-extractor",
        "--no-st-loss", "--no-ss-loss"}},
      {"finetune",
       {"--manifest", "--checkpoint", "--epochs", "--batch-size", "--lr", "--no-augment", "--no-pretrain",
        "--no-motion-extractor", "--width-divisor"}},
      {"evaluate",
       {"--protocol", "--manifest", "--macro-manifest", "--checkpoint", "--exclude-test-subjects-from-pretrain",
        "--classes", "--pretrain-epochs", "--finetune-epochs", "--pretrain-epsilon", "--no-augment", "--no-pretrain",
        "--no-macro", "--no-motion-extractor", "--no-st-loss", "--no-ss-loss", "--width-divisor"}},
      {"flow", {"--frames", "--manifest", "--reference"}},
  };
  for (const auto& [sub, flags] : expected) {
    const auto h = call({sub, "--help"});
    CHECK(h.code == 0);
    for (const auto& f : flags) {
      INFO(sub, " ", f);
      CHECK(h.out.find(f) != std::string::npos);
    }
  }
}

TEST_CASE("exit codes") {
  testing::TempDir dir("cli_codes");
  CHECK(call({"synth", "--bogus"}).code == cli::kUsage);
  CHECK(call({}).code == cli::kUsage);
  CHECK(call({"synth", "--subjects", "zero"}).code == cli::kUsage);
  CHECK(call({"synth", "--classes", "1", "--out", (dir / "x").string()}).code == cli::kUsage);
  CHECK(call({"pretrain", "--manifest", (dir / "absent.csv").string()}).code == cli::kMissingFile);
  CHECK(call({"--config", (dir / "absent.ini").string(), "synth"}).code == cli::kMissingFile);

  std::ofstream(dir / "bad.csv") << "not,a,manifest\n";
  CHECK(call({"pretrain", "--manifest", (dir / "bad.csv").string()}).code == cli::kSchema);

  std::ofstream(dir / "junk.ckpt") << "MOEXTCKP-garbage";
  const auto made = call({"synth", "--subjects", "2", "--clips", "3", "--out", (dir / "s").string(), "--log-level", "off"});
  REQUIRE(made.code == 0);
  const auto missing = call({"evaluate", "--protocol", "CDE_3", "--manifest", (dir / "s" / "manifest.csv").string(),
                             "--log-level", "off"});
  CHECK(missing.code == cli::kMissingDataset);
  CHECK(missing.err.find("\"kind\":\"missing_dataset\"") != std::string::npos);
  CHECK(missing.err.find("SAMM") != std::string::npos);
  CHECK(call({"evaluate", "--protocol", "SDE_FOO"}).code == cli::kUsage);
  CHECK(call({"finetune", "--manifest", (dir / "s" / "manifest.csv").string(), "--checkpoint",
              (dir / "junk.ckpt").string(), "--log-level", "off"})
            .code == cli::kCheckpoint);
}

TEST_CASE("config file, flags win") {
  testing::TempDir dir("cli_config");
  std::ofstream(dir / "run.ini") << "seed=3\n[synth]\nsubjects=2\nclips=2\nclasses=2\n";
  REQUIRE(call({"--config", (dir / "run.ini").string(), "--out", (dir / "a").string(), "synth", "--log-level", "off"})
              .code == 0);
  CHECK(rows(dir / "a" / "manifest.csv") == 4);
  REQUIRE(call({"--config", (dir / "run.ini").string(), "--out", (dir / "b").string(), "synth", "--clips", "3",
                "--log-level", "off"})
              .code == 0);
  CHECK(rows(dir / "b" / "manifest.csv") == 6);
  CHECK(read_json(dir / "a" / "run_synth.json").at("seed") == 3);

  std::ofstream(dir / "typo.ini") << "[synth]\nsubjcts=2\n";
  CHECK(call({"--config", (dir / "typo.ini").string(), "synth"}).code == cli::kUsage);
}

TEST_CASE("full pipeline on synthetic data") {
  testing::TempDir dir("cli_pipe");
  const std::string raw = (dir / "raw").string(), pp = (dir / "pp").string(), pre = (dir / "pre").string(),
                    ev = (dir / "ev").string();
  const std::vector<std::string> quiet{"--log-level", "warn"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), quiet.begin(), quiet.end());
    return call(a);
  };
  REQUIRE(with({"synth", "--subjects", "3", "--clips", "3", "--classes", "3", "--macro-clips", "1", "--out", raw})
              .code == 0);
  REQUIRE(with({"preprocess", "--manifest", raw + "/manifest.csv", "--manifest", raw + "/macro_manifest.csv", "--out",
                pp})
              .code == 0);
  CHECK(rows(fs::path(pp) / "manifest.csv") == 9);
  CHECK(rows(fs::path(pp) / "macro_manifest.csv") == 3);
  REQUIRE(with({"pretrain", "--manifest", pp + "/manifest.csv", "--manifest", pp + "/macro_manifest.csv", "--epochs",
                "1", "--batch-size", "6", "--width-divisor", "16", "--out", pre})
              .code == 0);
  CHECK(rows(fs::path(pre) / "pretrain_history.csv") == 1);
  REQUIRE(with({"finetune", "--manifest", pp + "/manifest.csv", "--checkpoint", pre + "/pretrain.ckpt", "--epochs",
                "1", "--no-augment", "--out", (dir / "ft").string()})
              .code == 0);
  CHECK(fs::exists(dir / "ft" / "finetune.ckpt"));
  const auto r = with({"evaluate", "--protocol", "SDE_SYNTH", "--manifest", pp + "/manifest.csv", "--checkpoint",
                       pre + "/pretrain.ckpt", "--finetune-epochs", "1", "--no-augment", "--out", ev});
  REQUIRE(r.code == 0);
  const auto report = read_json(fs::path(ev) / "report.json");
  CHECK(report.at("folds").size() == 3);
  CHECK(report.at("aggregate").at("metrics").at("n_samples") == 9);
  CHECK(report.at("config_hash") == read_json(fs::path(ev) / "run_evaluate.json").at("config_hash"));
  CHECK(fs::exists(fs::path(ev) / "summary.csv"));

  const auto fl = with({"flow", "--manifest", pp + "/macro_manifest.csv", "--out", (dir / "fl").string()});
  REQUIRE(fl.code == 0);
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(dir / "fl")) csvs += e.path().extension() == ".csv";
  CHECK(csvs == 3);
}
