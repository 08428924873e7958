#include "luxforge/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "luxforge/common.hpp"
#include "luxforge/threading.hpp"
#include "luxforge/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace luxforge {

namespace {

struct VariantSpec {
  const char* name;
  bool gem, pam;
};

constexpr VariantSpec kVariants[4] = {
    {"none", false, false},
    {"gem", true, false},
    {"pam", false, true},
    {"full", true, true},
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double window_mean(const std::vector<double>& v, size_t begin, size_t count) {
  count = std::min(count, v.size() - begin);
  if (count == 0) return 0.0;
  double acc = 0.0;
  for (size_t i = begin; i < begin + count; ++i) acc += v[i];
  return acc / static_cast<double>(count);
}

double subset_median(const std::vector<EvalReport>& reports,
                     SubsetScore EvalReport::* field) {
  std::vector<double> vals;
  for (const auto& r : reports)
    if ((r.*field).valid) vals.push_back((r.*field).miou);
  return vals.empty() ? 0.0 : median(std::move(vals));
}

}  // namespace

AblationTable run_ablation(const Dataset& train, const Dataset& test,
                           RecognizerNetwork& rec, const AblationConfig& cfg) {
  if (!rec.frozen()) throw value_error("run_ablation: recognizer must be frozen");
  if (cfg.seeds.empty()) throw value_error("run_ablation: no seeds");
  if (cfg.out_dir.empty()) throw value_error("run_ablation: out_dir not set");

  AblationTable table;
  table.seeds = cfg.seeds;
  for (const auto& v : kVariants) {
    AblationVariantResult r;
    r.name = v.name;
    r.gem = v.gem;
    r.pam = v.pam;
    r.per_seed.resize(cfg.seeds.size());
    if (v.gem || v.pam) {
      r.first_smoothed.resize(cfg.seeds.size(), 0.0);
      r.last_smoothed.resize(cfg.seeds.size(), 0.0);
    }
    table.variants.push_back(std::move(r));
  }

  // One cell per (variant, seed); all cells are independent. The frozen
  // recognizer is shared read-only.
  int64_t cells = static_cast<int64_t>(4 * cfg.seeds.size());
  parallel_for(0, cells, [&](int64_t cell) {
    size_t vi = static_cast<size_t>(cell) / cfg.seeds.size();
    size_t si = static_cast<size_t>(cell) % cfg.seeds.size();
    const VariantSpec& spec = kVariants[vi];
    AblationVariantResult& row = table.variants[vi];
    uint64_t seed = cfg.seeds[si];

    if (!spec.gem && !spec.pam) {
      row.per_seed[si] = evaluate_on_dataset(nullptr, rec, test, cfg.batch_size);
      return;
    }
    Enhancer enh(seed, spec.gem, spec.pam);
    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch_size;
    tc.total_steps = cfg.steps;
    tc.seed = seed;
    tc.gem_enabled = spec.gem;
    tc.pam_enabled = spec.pam;
    tc.checkpoint_interval = 0;  // only the final checkpoint matters here
    tc.out_dir = (fs::path(cfg.out_dir) / cat(spec.name, "_s", seed)).string();
    TrainResult tr = train_enhancer(tc, enh, rec, train);
    if (tr.halted_on_divergence)
      throw training_error(cat("ablation run ", spec.name, " seed ", seed,
                               " diverged at step ", tr.steps_completed));
    row.first_smoothed[si] = window_mean(tr.losses, 0, 100);
    size_t tail = tr.losses.size() > 100 ? tr.losses.size() - 100 : 0;
    row.last_smoothed[si] = window_mean(tr.losses, tail, 100);
    row.per_seed[si] = evaluate_on_dataset(&enh, rec, test, cfg.batch_size);
  });

  for (auto& row : table.variants) {
    row.med_n = subset_median(row.per_seed, &EvalReport::normal);
    row.med_h = subset_median(row.per_seed, &EvalReport::hard);
    row.med_e = subset_median(row.per_seed, &EvalReport::extreme);
    row.med_a = subset_median(row.per_seed, &EvalReport::all);
  }

  fs::create_directories(cfg.out_dir);
  {
    std::ofstream f(fs::path(cfg.out_dir) / "ablation.txt");
    f << ablation_table_text(table);
  }
  {
    std::ofstream f(fs::path(cfg.out_dir) / "ablation.json");
    f << ablation_table_json(table);
  }
  return table;
}

std::string ablation_table_text(const AblationTable& t) {
  std::ostringstream out;
  out << "gem  pam    LL-N    LL-H    LL-E    LL-A   (mIoU, median over "
      << t.seeds.size() << " seeds)\n";
  for (const auto& v : t.variants) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%3s  %3s  %6.4f  %6.4f  %6.4f  %6.4f\n",
                  v.gem ? "yes" : "no", v.pam ? "yes" : "no", v.med_n, v.med_h,
                  v.med_e, v.med_a);
    out << buf;
  }
  return out.str();
}

std::string ablation_table_json(const AblationTable& t) {
  json j;
  j["seeds"] = t.seeds;
  json rows = json::array();
  for (const auto& v : t.variants) {
    json row;
    row["variant"] = v.name;
    row["gem"] = v.gem;
    row["pam"] = v.pam;
    row["median"] = {{"LL-N", v.med_n},
                     {"LL-H", v.med_h},
                     {"LL-E", v.med_e},
                     {"LL-A", v.med_a}};
    json per_seed = json::array();
    for (size_t i = 0; i < v.per_seed.size(); ++i) {
      const EvalReport& r = v.per_seed[i];
      json run;
      run["seed"] = t.seeds[i];
      run["LL-N"] = r.normal.valid ? json(r.normal.miou) : json(nullptr);
      run["LL-H"] = r.hard.valid ? json(r.hard.miou) : json(nullptr);
      run["LL-E"] = r.extreme.valid ? json(r.extreme.miou) : json(nullptr);
      run["LL-A"] = r.all.valid ? json(r.all.miou) : json(nullptr);
      if (!v.first_smoothed.empty()) {
        run["loss_smoothed_first"] = v.first_smoothed[i];
        run["loss_smoothed_last"] = v.last_smoothed[i];
      }
      per_seed.push_back(std::move(run));
    }
    row["runs"] = std::move(per_seed);
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j.dump(2);
}

}  // namespace luxforge
