#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string& bin() {
  static std::string b = [] {
    const char* env = std::getenv("LUXFORGE_BIN");
    REQUIRE_MESSAGE(env != nullptr, "LUXFORGE_BIN must point at the cli binary");
    return std::string(env);
  }();
  return b;
}

const fs::path& work() {
  static fs::path w = [] {
    fs::path p = fs::temp_directory_path() / "luxforge_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return w;
}

int run(const std::string& args) {
  std::string cmd = bin() + " " + args + " > " + (work() / "last.log").string() +
                    " 2>&1";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

std::string last_log() {
  std::ifstream f(work() / "last.log");
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE_MESSAGE(f.good(), p.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

int count_lines(const fs::path& p) {
  std::ifstream f(p);
  int n = 0;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("argument errors exit with 2, help with 0") {
  CHECK(run("") == 2);                     // a subcommand is required
  CHECK(run("--help") == 0);
  CHECK(run("synth --help") == 0);
  CHECK(run("frobnicate") == 2);           // unknown subcommand
  CHECK(run("synth") == 2);                // missing required --out
  CHECK(run("synth --out x --severity nope") == 2);
  CHECK(run("train --data x --out y") == 2);  // missing required --rec
}

TEST_CASE("full pipeline wiring") {
  const fs::path corpus = work() / "corpus";
  const fs::path recdir = work() / "rec";
  const fs::path traindir = work() / "run";

  // synth
  REQUIRE(run("synth --out " + corpus.string() +
              " --train 12 --val 4 --test 6 --seed 3") == 0);
  CHECK(fs::exists(corpus / "train" / "dark" / "000011.png"));
  CHECK(fs::exists(corpus / "manifest.jsonl"));
  std::string snap = slurp(corpus / "resolved_config.ini");
  CHECK(snap.find("[synth]") != std::string::npos);
  CHECK(snap.find("train=12") != std::string::npos);
  CHECK(snap.find("seed=3") != std::string::npos);

  // a second synth into the same directory must refuse without --force
  CHECK(run("synth --out " + corpus.string() + " --train 12 --val 4 --test 6"
            " --seed 3") == 1);
  CHECK(last_log().find("--force") != std::string::npos);

  // pretrain; the tiny run cannot hit an impossible target
  REQUIRE(run("pretrain --data " + corpus.string() + " --out " +
              recdir.string() + " --steps 60 --target 0.0 --seed 4") == 0);
  const std::string rec = (recdir / "recognizer.lxf").string();
  CHECK(fs::exists(rec));
  auto report = nlohmann::json::parse(slurp(recdir / "pretrain_report.json"));
  CHECK(report["steps"] == 60);
  CHECK(report["reached_target"] == true);
  CHECK(run("pretrain --data " + corpus.string() + " --out " +
            (work() / "rec_fail").string() + " --steps 2 --target 1.1") == 1);

  // train a few steps
  REQUIRE(run("train --data " + corpus.string() + " --rec " + rec + " --out " +
              traindir.string() + " --steps 6 --batch 4 --seed 9") == 0);
  CHECK(fs::exists(traindir / "checkpoint_final.lxf"));
  CHECK(count_lines(traindir / "train_log.jsonl") == 6);
  std::string tsnap = slurp(traindir / "resolved_config.ini");
  CHECK(tsnap.find("lr=0.0005") != std::string::npos);  // default captured

  const std::string ckpt = (traindir / "checkpoint_final.lxf").string();

  // enhance a directory of dark frames
  const fs::path outdir = work() / "enhanced";
  REQUIRE(run("enhance --ckpt " + ckpt + " --in " +
              (corpus / "test" / "dark").string() + " --out " +
              outdir.string()) == 0);
  int produced = 0;
  for (auto& e : fs::directory_iterator(outdir))
    if (e.path().extension() == ".png") ++produced;
  CHECK(produced == 6);
  CHECK(last_log().find("coeff") != std::string::npos);

  // eval, raw baseline then with the checkpoint
  const fs::path evaldir = work() / "eval_raw";
  REQUIRE(run("eval --data " + corpus.string() + " --rec " + rec + " --out " +
              evaldir.string()) == 0);
  auto metrics = nlohmann::json::parse(slurp(evaldir / "metrics.json"));
  CHECK(metrics["miou"]["LL-A"]["images"] == 6);
  CHECK(metrics["params"]["recognizer"] == 43637);

  const fs::path evaldir2 = work() / "eval_ckpt";
  REQUIRE(run("eval --data " + corpus.string() + " --rec " + rec + " --ckpt " +
              ckpt + " --out " + evaldir2.string()) == 0);
  CHECK(fs::exists(evaldir2 / "metrics.json"));

  // train can resume from its own checkpoint to a longer horizon
  REQUIRE(run("train --data " + corpus.string() + " --rec " + rec + " --out " +
              traindir.string() + " --steps 9 --batch 4 --seed 9 --resume " +
              ckpt) == 0);
  CHECK(count_lines(traindir / "train_log.jsonl") == 9);
}

TEST_CASE("config file values load and flags override them") {
  const fs::path corpus = work() / "corpus";  // built by the pipeline case
  REQUIRE(fs::exists(corpus / "manifest.jsonl"));

  const fs::path ini = work() / "cfg.ini";
  {
    std::ofstream f(ini);
    f << "[synth]\ntrain=5\nval=2\ntest=2\nseed=11\n";
  }
  const fs::path out1 = work() / "cfg_corpus1";
  REQUIRE(run("synth --config " + ini.string() + " --out " + out1.string()) == 0);
  std::string snap1 = slurp(out1 / "resolved_config.ini");
  CHECK(snap1.find("train=5") != std::string::npos);
  CHECK(count_lines(out1 / "manifest.jsonl") == 1 + 5 + 2 + 2);

  const fs::path out2 = work() / "cfg_corpus2";
  REQUIRE(run("synth --config " + ini.string() + " --out " + out2.string() +
              " --train 7") == 0);
  std::string snap2 = slurp(out2 / "resolved_config.ini");
  CHECK(snap2.find("train=7") != std::string::npos);  // flag beats file
  CHECK(count_lines(out2 / "manifest.jsonl") == 1 + 7 + 2 + 2);
}

TEST_CASE("runtime failures exit with 1") {
  CHECK(run("enhance --ckpt /nonexistent.lxf --in /tmp --out " +
            (work() / "x").string()) == 1);
  CHECK(run("eval --data /nonexistent_corpus --rec nope.lxf --out " +
            (work() / "y").string()) == 1);
  CHECK(run("train --data /nonexistent_corpus --rec nope.lxf --out " +
            (work() / "z").string()) == 1);
}

TEST_CASE("gradcheck subcommand reports per-op lines") {
  const fs::path out = work() / "gc";
  REQUIRE(run("gradcheck --probes 5 --out " + out.string()) == 0);
  std::string log = last_log();
  CHECK(log.find("enhance_recognizer") != std::string::npos);
  CHECK(log.find("conv2d") != std::string::npos);
  CHECK(fs::exists(out / "gradcheck.jsonl"));
  CHECK(count_lines(out / "gradcheck.jsonl") >= 18);
}

TEST_CASE("bench subcommand prints latency stats") {
  REQUIRE(run("bench --size 32 --iters 50 --warmup 5") == 0);
  std::string log = last_log();
  CHECK(log.find("p50") != std::string::npos);
  CHECK(log.find("enhancer") != std::string::npos);
}

TEST_CASE("ablation subcommand wires all four variants") {
  const fs::path corpus = work() / "corpus";
  const std::string rec = (work() / "rec" / "recognizer.lxf").string();
  REQUIRE(fs::exists(corpus / "manifest.jsonl"));
  REQUIRE(fs::exists(rec));

  const fs::path out = work() / "ablation";
  REQUIRE(run("ablation --data " + corpus.string() + " --rec " + rec +
              " --out " + out.string() + " --steps 2 --batch 4 --seeds 1") == 0);
  auto table = nlohmann::json::parse(slurp(out / "ablation.json"));
  REQUIRE(table["rows"].size() == 4);
  CHECK(table["rows"][0]["variant"] == "none");
  CHECK(table["rows"][3]["variant"] == "full");
  CHECK(table["rows"][1]["runs"][0].contains("loss_smoothed_last"));
  std::string log = last_log();
  CHECK(log.find("4 variants") != std::string::npos);
  CHECK(log.find("LL-A") != std::string::npos);
}
