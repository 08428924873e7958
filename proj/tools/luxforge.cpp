#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "luxforge/ablation.hpp"
#include "luxforge/checkpoint.hpp"
#include "luxforge/common.hpp"
#include "luxforge/gradcheck.hpp"
#include "luxforge/metrics.hpp"
#include "luxforge/synth.hpp"
#include "luxforge/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace luxforge;

namespace {

void write_snapshot(CLI::App& app, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "resolved_config.ini");
  f << app.config_to_str(true, true);
}

uint64_t snapshot_hash(CLI::App& app) {
  return fnv1a64(app.config_to_str(true, false));
}

RecognizerNetwork load_recognizer(const std::string& path, int k_classes) {
  Checkpoint c = load_checkpoint(path);
  RecognizerNetwork net(k_classes, 0);
  restore_tensors(net, c);
  net.freeze();
  return net;
}

Enhancer load_enhancer(const std::string& path) {
  Checkpoint c = load_checkpoint(path);
  Enhancer e(0, true, true);
  restore_tensors(e, c);
  return e;
}

struct SynthArgs {
  std::string out;
  uint64_t seed = 1;
  int train = 512, val = 64, test = 128;
  int width = 16, height = 16;
  std::string severity = "mix";
  bool force = false;
};

int run_synth(CLI::App& app, const SynthArgs& a) {
  CorpusConfig cfg;
  cfg.out_dir = a.out;
  cfg.seed = a.seed;
  cfg.train_count = a.train;
  cfg.val_count = a.val;
  cfg.test_count = a.test;
  cfg.width = a.width;
  cfg.height = a.height;
  cfg.force = a.force;
  if (!parse_severity(a.severity, &cfg.severity))
    throw value_error(cat("unknown severity '", a.severity, "'"));
  build_corpus(cfg);
  write_snapshot(app, a.out);

  // Manifest summary: images per split and per measured subset.
  std::ifstream manifest(fs::path(a.out) / "manifest.jsonl");
  std::string line;
  std::map<std::string, int> split_count, subset_count;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.value("type", "") != "item") continue;
    ++split_count[j.value("split", "?")];
    ++subset_count[j.value("subset", "?")];
  }
  std::cout << "corpus written to " << a.out << " (seed " << a.seed << ", "
            << a.width << "x" << a.height << ")\n";
  for (const auto& [k, v] : split_count) std::cout << "  " << k << ": " << v << "\n";
  std::cout << "subset mix:";
  for (const auto& [k, v] : subset_count) std::cout << " " << k << "=" << v;
  std::cout << "\n";
  return 0;
}

struct PretrainArgs {
  std::string data, out;
  int steps = 2000, batch = 8;
  double lr = 1e-3;
  double target = 0.90;
  uint64_t seed = 1;
};

int run_pretrain(CLI::App& app, const PretrainArgs& a) {
  Dataset train = load_dataset(a.data, "train");
  Dataset val = load_dataset(a.data, "val");
  RecognizerNetwork net(train.k_classes, a.seed);

  PretrainConfig cfg;
  cfg.lr = a.lr;
  cfg.steps = a.steps;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.target_miou = a.target;
  std::cout << "pretraining recognizer: " << a.steps << " steps, lr " << a.lr
            << ", batch " << a.batch << "\n";
  PretrainReport report = pretrain_recognizer(net, train, val, cfg);

  fs::create_directories(a.out);
  Checkpoint c;
  c.step = report.steps_run;
  c.config_hash = snapshot_hash(app);
  collect_tensors(net, &c);
  std::string ckpt_path = (fs::path(a.out) / "recognizer.lxf").string();
  save_checkpoint(ckpt_path, c);
  write_snapshot(app, a.out);
  {
    std::ofstream f(fs::path(a.out) / "pretrain_report.json");
    f << json{{"steps", report.steps_run},
              {"final_loss", report.final_loss},
              {"bright_miou", report.bright_miou},
              {"target_miou", report.target_miou},
              {"reached_target", report.reached_target}}
             .dump(2);
  }
  std::cout << "bright mIoU " << report.bright_miou << " (target "
            << report.target_miou << "), checkpoint " << ckpt_path << "\n";
  if (!report.reached_target) {
    std::cerr << "pretraining failed to reach the target mIoU; the corpus or "
                 "an oracle is off\n";
    return 1;
  }
  return 0;
}

struct TrainArgs {
  std::string data, out, rec, resume, ablate = "none";
  int steps = 6000, batch = 8;
  double lr = 5e-4;
  uint64_t seed = 1;
  int ckpt_interval = 500, eval_interval = 0;
};

int run_train(CLI::App& app, const TrainArgs& a) {
  Dataset train = load_dataset(a.data, "train");
  Dataset val = load_dataset(a.data, "val");
  RecognizerNetwork rec = load_recognizer(a.rec, train.k_classes);

  TrainConfig cfg;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch;
  cfg.total_steps = a.steps;
  cfg.seed = a.seed;
  cfg.checkpoint_interval = a.ckpt_interval;
  cfg.eval_interval = a.eval_interval;
  cfg.gem_enabled = a.ablate != "gem";
  cfg.pam_enabled = a.ablate != "pam";
  cfg.out_dir = a.out;

  Enhancer enh(a.seed, cfg.gem_enabled, cfg.pam_enabled);
  Checkpoint resume_ckpt;
  const Checkpoint* resume = nullptr;
  if (!a.resume.empty()) {
    resume_ckpt = load_checkpoint(a.resume);
    resume = &resume_ckpt;
    std::cout << "resuming from " << a.resume << " at step "
              << resume_ckpt.step << "\n";
  }
  std::cout << "training enhancer (gem " << (cfg.gem_enabled ? "on" : "off")
            << ", pam " << (cfg.pam_enabled ? "on" : "off") << "): "
            << cfg.total_steps << " steps, lr " << cfg.lr << ", batch "
            << cfg.batch_size << "\n";
  TrainResult res =
      train_enhancer(cfg, enh, rec, train, a.eval_interval > 0 ? &val : nullptr,
                     resume);
  write_snapshot(app, a.out);
  if (res.halted_on_divergence) {
    std::cerr << "training diverged after " << res.steps_completed
              << " steps; last good state in " << res.final_checkpoint << "\n";
    return 1;
  }
  std::cout << "done: " << res.steps_completed << " steps, final loss "
            << res.final_loss << ", checkpoint " << res.final_checkpoint
            << "\n";
  return 0;
}

struct EnhanceArgs {
  std::string ckpt, in, out;
};

int run_enhance(CLI::App& app, const EnhanceArgs& a) {
  Enhancer enh = load_enhancer(a.ckpt);
  std::vector<fs::path> inputs;
  fs::path in(a.in);
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in))
      if (e.path().extension() == ".png") inputs.push_back(e.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(in);
  }
  if (inputs.empty()) throw io_error(cat("no .png files under ", a.in));
  fs::create_directories(a.out);

  BnMode mode = enh.bn_stats_ready() ? BnMode::eval : BnMode::train;
  Ctx ctx;
  ctx.update_running_stats = false;

  int ok = 0, failed = 0;
  for (const auto& path : inputs) {
    ImageF img;
    try {
      img = load_png_rgb(path.string());
    } catch (const error& e) {
      std::cerr << "warning: skipping " << path.string() << ": " << e.what()
                << "\n";
      ++failed;
      continue;
    }
    Tensor x = Tensor::from_values({1, 3, img.h, img.w}, img.chw);
    auto res = enhance(ctx, enh, x, mode);
    ImageF out_img{img.h, img.w, res.output.values()};
    fs::path out_path = fs::path(a.out) / path.filename();
    save_png_rgb(out_path.string(), out_img);
    const auto& c = res.coefficients.at(0);
    std::printf(
        "%s: coeff (%.4f, %.4f, %.4f), f_rms %.5f, mean %.2f -> %.2f\n",
        path.filename().string().c_str(), c.r, c.g, c.b, res.f_local_rms,
        mean_pixel_intensity(x), mean_pixel_intensity(res.output));
    ++ok;
  }
  write_snapshot(app, a.out);
  if (ok == 0) {
    std::cerr << "all " << failed << " inputs failed\n";
    return 1;
  }
  return 0;
}

struct EvalArgs {
  std::string data, rec, ckpt, out, split = "test";
  int batch = 8;
};

int run_eval(CLI::App& app, const EvalArgs& a) {
  Dataset ds = load_dataset(a.data, a.split);
  RecognizerNetwork rec = load_recognizer(a.rec, ds.k_classes);

  MetricsReport report;
  Enhancer counted(0, true, true);
  if (!a.ckpt.empty()) {
    Enhancer enh = load_enhancer(a.ckpt);
    report.eval = evaluate_on_dataset(&enh, rec, ds, a.batch);
    report.checkpoint_id = a.ckpt;
    report.params = count_params(enh, rec);
  } else {
    report.eval = evaluate_on_dataset(nullptr, rec, ds, a.batch);
    report.checkpoint_id = "(no enhancer)";
    report.params = count_params(counted, rec);
  }
  report.config_hash = cat(std::hex, snapshot_hash(app));

  fs::create_directories(a.out);
  {
    std::ofstream f(fs::path(a.out) / "metrics.json");
    f << metrics_report_json(report);
  }
  write_snapshot(app, a.out);
  std::cout << metrics_report_table(report);
  return 0;
}

struct BenchArgs {
  std::string ckpt, rec, out;
  int size = 256, warmup = 5, iters = 50;
  uint64_t seed = 1;
};

int run_bench(CLI::App& app, const BenchArgs& a) {
  Enhancer enh = a.ckpt.empty() ? Enhancer(a.seed, true, true)
                                : load_enhancer(a.ckpt);
  RecognizerNetwork rec = a.rec.empty()
                              ? RecognizerNetwork(kNumClasses, a.seed)
                              : load_recognizer(a.rec, kNumClasses);
  if (!rec.stats_ready()) {
    // A fresh recognizer has no batch-norm statistics; one train-mode pass
    // fills them so the timed loop can run in eval mode.
    Rng rng(derive_seed(a.seed, "bench.warm"));
    Tensor warm = Tensor::zeros({2, 3, 32, 32});
    for (auto& v : warm.values()) v = static_cast<float>(rng.uniform());
    Ctx ctx;
    rec.forward(ctx, warm, BnMode::train);
  }
  LatencyReport rep =
      benchmark_latency(enh, rec, a.size, a.size, a.warmup, a.iters);
  MetricsReport report;
  report.latency = rep;
  report.params = count_params(enh, rec);
  report.config_hash = cat(std::hex, snapshot_hash(app));
  report.checkpoint_id = a.ckpt.empty() ? "(fresh init)" : a.ckpt;
  std::printf("latency at %dx%d over %d iters (ms):\n", rep.h, rep.w,
              rep.combined.iters);
  std::printf("  enhancer   mean %8.3f  p50 %8.3f  p95 %8.3f\n",
              rep.enhancer.mean_ms, rep.enhancer.p50_ms, rep.enhancer.p95_ms);
  std::printf("  recognizer mean %8.3f  p50 %8.3f  p95 %8.3f\n",
              rep.recognizer.mean_ms, rep.recognizer.p50_ms,
              rep.recognizer.p95_ms);
  std::printf("  combined   mean %8.3f  p50 %8.3f  p95 %8.3f\n",
              rep.combined.mean_ms, rep.combined.p50_ms, rep.combined.p95_ms);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream f(fs::path(a.out) / "metrics.json");
    f << metrics_report_json(report);
    write_snapshot(app, a.out);
  }
  return 0;
}

struct GradcheckArgs {
  std::string out;
  int probes = 100;
  double tol = 1e-4;
  uint64_t seed = 42;
};

int run_gradcheck(CLI::App& app, const GradcheckArgs& a) {
  GradCheckConfig cfg;
  cfg.min_probes = a.probes;
  cfg.tolerance = a.tol;
  cfg.seed = a.seed;
  auto results = run_gradient_suite(cfg);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << r.summary() << "\n";
    all_pass = all_pass && r.pass;
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream f(fs::path(a.out) / "gradcheck.jsonl");
    for (const auto& r : results)
      f << json{{"op", r.name},
                {"pass", r.pass},
                {"probes", r.probes},
                {"skipped", r.skipped},
                {"max_rel_err", r.max_rel_err},
                {"mean_rel_err", r.mean_rel_err}}
               .dump()
        << "\n";
    write_snapshot(app, a.out);
  }
  std::cout << (all_pass ? "gradient suite: all ops pass\n"
                         : "gradient suite: FAILURES above\n");
  return all_pass ? 0 : 1;
}

struct AblationArgs {
  std::string data, rec, out;
  int steps = 6000, batch = 8;
  double lr = 5e-4;
  std::vector<uint64_t> seeds = {1, 2, 3};
};

int run_ablation_cmd(CLI::App& app, const AblationArgs& a) {
  Dataset train = load_dataset(a.data, "train");
  Dataset test = load_dataset(a.data, "test");
  RecognizerNetwork rec = load_recognizer(a.rec, train.k_classes);

  AblationConfig cfg;
  cfg.out_dir = a.out;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch;
  cfg.steps = a.steps;
  cfg.seeds = a.seeds;
  std::cout << "ablation: 4 variants x " << cfg.seeds.size() << " seeds, "
            << cfg.steps << " steps each\n";
  AblationTable table = run_ablation(train, test, rec, cfg);
  write_snapshot(app, a.out);
  std::cout << ablation_table_text(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"luxforge: low-light enhancement frontend for a frozen recognizer"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config file; flags override file values");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate the synthetic corpus");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--seed", synth.seed, "master seed")->capture_default_str();
  s->add_option("--train", synth.train, "train scenes")->capture_default_str();
  s->add_option("--val", synth.val, "val scenes")->capture_default_str();
  s->add_option("--test", synth.test, "test scenes")->capture_default_str();
  s->add_option("--width", synth.width, "scene width")->capture_default_str();
  s->add_option("--height", synth.height, "scene height")->capture_default_str();
  s->add_option("--severity", synth.severity, "mix|normal|hard|extreme")
      ->capture_default_str()
      ->check(CLI::IsMember({"mix", "normal", "hard", "extreme"}));
  s->add_flag("--force", synth.force, "overwrite a non-empty directory");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "pretrain the recognizer on bright images");
  p->add_option("--data", pre.data, "corpus directory")->required();
  p->add_option("--out", pre.out, "output directory")->required();
  p->add_option("--steps", pre.steps, "training steps")->capture_default_str();
  p->add_option("--lr", pre.lr, "learning rate")->capture_default_str();
  p->add_option("--batch", pre.batch, "batch size")->capture_default_str();
  p->add_option("--seed", pre.seed, "master seed")->capture_default_str();
  p->add_option("--target", pre.target, "bright mIoU pass threshold")
      ->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the enhancer against the frozen recognizer");
  t->add_option("--data", tr.data, "corpus directory")->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--rec", tr.rec, "recognizer checkpoint")->required();
  t->add_option("--steps", tr.steps, "training steps")->capture_default_str();
  t->add_option("--lr", tr.lr, "learning rate")->capture_default_str();
  t->add_option("--batch", tr.batch, "batch size")->capture_default_str();
  t->add_option("--seed", tr.seed, "master seed")->capture_default_str();
  t->add_option("--ablate", tr.ablate, "disable a module: gem|pam|none")
      ->capture_default_str()
      ->check(CLI::IsMember({"gem", "pam", "none"}));
  t->add_option("--resume", tr.resume, "resume from a training checkpoint");
  t->add_option("--ckpt-interval", tr.ckpt_interval, "steps between checkpoints")
      ->capture_default_str();
  t->add_option("--eval-interval", tr.eval_interval, "steps between val evals")
      ->capture_default_str();

  EnhanceArgs en;
  auto* e = app.add_subcommand("enhance", "enhance PNG images with a checkpoint");
  e->add_option("--ckpt", en.ckpt, "enhancer checkpoint")->required();
  e->add_option("--in", en.in, "input PNG file or directory")->required();
  e->add_option("--out", en.out, "output directory")->required();

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "evaluate mIoU on a corpus split");
  v->add_option("--data", ev.data, "corpus directory")->required();
  v->add_option("--rec", ev.rec, "recognizer checkpoint")->required();
  v->add_option("--ckpt", ev.ckpt, "enhancer checkpoint (omit for raw baseline)");
  v->add_option("--out", ev.out, "output directory")->required();
  v->add_option("--split", ev.split, "train|val|test")->capture_default_str();
  v->add_option("--batch", ev.batch, "evaluation batch size")->capture_default_str();

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "benchmark per-image latency");
  b->add_option("--ckpt", be.ckpt, "enhancer checkpoint (default fresh init)");
  b->add_option("--rec", be.rec, "recognizer checkpoint (default fresh init)");
  b->add_option("--out", be.out, "output directory (optional)");
  b->add_option("--size", be.size, "square input size")->capture_default_str();
  b->add_option("--warmup", be.warmup, "warmup iterations")->capture_default_str();
  b->add_option("--iters", be.iters, "timed iterations")->capture_default_str();
  b->add_option("--seed", be.seed, "seed for fresh-init networks")->capture_default_str();

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  g->add_option("--out", gc.out, "output directory (optional)");
  g->add_option("--probes", gc.probes, "probes per op")->capture_default_str();
  g->add_option("--tol", gc.tol, "max relative error")->capture_default_str();
  g->add_option("--seed", gc.seed, "probe seed")->capture_default_str();

  AblationArgs ab;
  auto* ao = app.add_subcommand("ablation", "four-variant ablation study");
  ao->add_option("--data", ab.data, "corpus directory")->required();
  ao->add_option("--rec", ab.rec, "recognizer checkpoint")->required();
  ao->add_option("--out", ab.out, "output directory")->required();
  ao->add_option("--steps", ab.steps, "steps per variant")->capture_default_str();
  ao->add_option("--lr", ab.lr, "learning rate")->capture_default_str();
  ao->add_option("--batch", ab.batch, "batch size")->capture_default_str();
  ao->add_option("--seeds", ab.seeds, "comma-separated seed list")
      ->capture_default_str()
      ->delimiter(',');

  // Sections like [synth] in the config file map onto the subcommands, and
  // --config itself may appear after the subcommand name.
  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    sub->configurable();
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : 2;  // help/version vs usage error
  }

  try {
    if (*s) return run_synth(app, synth);
    if (*p) return run_pretrain(app, pre);
    if (*t) return run_train(app, tr);
    if (*e) return run_enhance(app, en);
    if (*v) return run_eval(app, ev);
    if (*b) return run_bench(app, be);
    if (*g) return run_gradcheck(app, gc);
    if (*ao) return run_ablation_cmd(app, ab);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
