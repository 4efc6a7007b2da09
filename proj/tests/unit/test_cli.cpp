#include <doctest.h>

#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "ecgstudy/cli.hpp"
#include "ecgstudy/ecg_io.hpp"
#include "ecgstudy/preprocess.hpp"
#include "oracles.hpp"

using namespace ecgstudy;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("cli: usage errors exit 1") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"synth", "--bogus"}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"train", "--manifest", "m.csv"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("cli: data errors exit 2") {
  oracle::TempDir dir;
  const auto r = run({"import", "--manifest", (dir / "missing.csv").string()});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("cli: synth is deterministic per seed") {
  oracle::TempDir dir;
  const auto a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(run({"--seed", "7", "synth", "--per-class", "3", "--out", a}).code == 0);
  REQUIRE(run({"--seed", "7", "synth", "--per-class", "3", "--out", b}).code == 0);
  CHECK(read_text_file(dir / "a/manifest.csv") == read_text_file(dir / "b/manifest.csv"));
  for (const auto& e : std::filesystem::directory_iterator(dir / "a/records")) {
    CHECK(read_binary_file(e.path()) == read_binary_file(dir / "b/records" / e.path().filename()));
  }
  const auto m = load_manifest(dir / "a/manifest.csv", ManifestKind::training);
  CHECK(m.entries.size() == 12);

  REQUIRE(run({"--seed", "8", "synth", "--per-class", "3", "--out", (dir / "c").string()}).code == 0);
  CHECK(read_binary_file(dir / "a/records/afib-0000.dat") != read_binary_file(dir / "c/records/afib-0000.dat"));
}

TEST_CASE("cli: split reports record to segment counts") {
  oracle::TempDir dir;
  const auto rec = synthesize({Rhythm::nsr, 30.0, 250.0, 60.0, 100.0, 1, {}});
  EcgRecord longer = rec;
  longer.samples[0].clear();
  for (int i = 0; i < 3; ++i) longer.samples[0].insert(longer.samples[0].end(), rec.samples[0].begin(), rec.samples[0].end());
  longer.samples[0].resize(70 * 250);
  save_wfdb_record(longer, 1000.0, dir.path());
  write_text_file(dir / "m.csv", fmt::format("record_id,path,label\n{0},{0}.hea,NSR\n", longer.record_id));
  const auto r = run({"split", "--manifest", (dir / "m.csv").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("1 record → 3 segments") != std::string::npos);

  const auto j = run({"--json", "split", "--manifest", (dir / "m.csv").string()});
  CHECK(nlohmann::json::parse(j.out)["segments"] == 3);
}

TEST_CASE("cli: import copies a corpus and reports label counts") {
  oracle::TempDir dir;
  REQUIRE(run({"synth", "--per-class", "2", "--out", (dir / "s").string()}).code == 0);
  const auto r = run({"--json", "import", "--manifest", (dir / "s/manifest.csv").string(), "--kind",
                      "training", "--out", (dir / "copy").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["records"] == 8);
  CHECK(j["labels"]["NOISE"] == 2);
  CHECK(load_manifest(dir / "copy/manifest.csv", ManifestKind::training).entries.size() == 8);
  CHECK(run({"import", "--manifest", (dir / "s/manifest.csv").string()}).code == cli::kExitData);
}

TEST_CASE("cli: train, predict, eval and the study commands") {
  oracle::TempDir dir;
  const auto corpus = (dir / "s").string();
  const auto manifest = corpus + "/manifest.csv";
  const auto ckpt = (dir / "m.ckpt").string();
  REQUIRE(run({"synth", "--per-class", "10", "--out", corpus}).code == 0);
  const auto trained = run({"train", "--manifest", manifest, "--out", ckpt, "--epochs", "40", "--batch-size", "4", "--history",
                            (dir / "h.csv").string()});
  REQUIRE(trained.code == 0);
  CHECK(std::filesystem::exists(ckpt));
  CHECK(read_text_file(dir / "h.csv").rfind("epoch,loss,accuracy\n", 0) == 0);

  const auto eval = run({"--json", "eval", "--checkpoint", ckpt, "--manifest", manifest});
  REQUIRE(eval.code == 0);
  const auto metrics = nlohmann::json::parse(eval.out);
  CHECK(metrics["accuracy"].get<double>() >= 0.85);
  CHECK(metrics["segments"] == 40);

  const auto text = run({"eval", "--checkpoint", ckpt, "--manifest", manifest});
  CHECK(text.out.find("accuracy:") != std::string::npos);

  const auto pred = run({"--json", "predict", "--checkpoint", ckpt, "--record", corpus + "/records/afib-0000.hea"});
  REQUIRE(pred.code == 0);
  CHECK(nlohmann::json::parse(pred.out)["segments"][0]["class"] == "AFIB");

  const auto rec = load_wfdb_record(corpus + "/records/nsr-0000.hea");
  write_text_file(dir / "nsr.csv", write_csv_record(rec));
  CHECK(run({"predict", "--checkpoint", ckpt, "--record", (dir / "nsr.csv").string()}).code == cli::kExitData);
  const auto csv = run({"--json", "predict", "--checkpoint", ckpt, "--record", (dir / "nsr.csv").string(),
                        "--fs", "250"});
  REQUIRE(csv.code == 0);
  CHECK(nlohmann::json::parse(csv.out)["segments"][0]["class"] == "NSR");

  std::string ref = "record_id,path,label\n";
  for (const auto& e : load_manifest(manifest, ManifestKind::training).entries) {
    if (e.label != Rhythm::noise) ref += fmt::format("{},{},{}\n", e.record_id, e.path, to_string(e.label));
  }
  write_text_file(corpus + "/reference.csv", ref);
  const auto data = (dir / "data").string();
  const auto created = run({"--json", "--data-dir", data, "study", "create", "--manifest",
                            corpus + "/reference.csv", "--raters", "r1,r2", "--id", "cli"});
  REQUIRE(created.code == 0);
  CHECK(nlohmann::json::parse(created.out)["items"] == 30);
  CHECK(run({"--data-dir", data, "study", "report", "--id", "cli"}).code == cli::kExitData);
  REQUIRE(run({"--data-dir", data, "study", "model-run", "--id", "cli", "--checkpoint", ckpt}).code == 0);
  CHECK(run({"--data-dir", data, "study", "report", "--id", "cli"}).code == cli::kExitData);
  for (const char* r : {"r1", "r2"}) {
    REQUIRE(run({"--data-dir", data, "study", "partial", "--id", "cli", "--rater", r}).code == 0);
  }
  const auto md = run({"--data-dir", data, "study", "report", "--id", "cli"});
  REQUIRE(md.code == 0);
  CHECK(md.out.find("Model") != std::string::npos);
  const auto js = run({"--data-dir", data, "study", "report", "--id", "cli", "--format", "json"});
  REQUIRE(js.code == 0);
  const auto rep = nlohmann::json::parse(js.out);
  CHECK(rep["excluded_partial_raters"].size() == 2);
}
