#include "luxforge/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "luxforge/common.hpp"
#include "luxforge/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace luxforge {

uint64_t train_config_hash(const TrainConfig& cfg) {
  // Horizon and logging cadence are excluded on purpose: extending a run or
  // checkpointing more often does not change the trajectory, so resuming
  // under a longer total_steps stays legal.
  return fnv1a64(cat("lr=", cfg.lr, ";batch=", cfg.batch_size, ";seed=",
                     cfg.seed, ";gem=", cfg.gem_enabled, ";pam=",
                     cfg.pam_enabled));
}

Checkpoint build_train_checkpoint(Enhancer& enh, Adam& adam,
                                  const std::vector<std::string>& names,
                                  int64_t step, uint64_t config_hash,
                                  const Rng& rng) {
  Checkpoint c;
  c.step = step;
  c.config_hash = config_hash;
  c.rng_state = rng.serialize();
  collect_tensors(enh, &c);
  for (size_t i = 0; i < names.size(); ++i) {
    Checkpoint::Entry m{"adam.m." + names[i], adam.moment1()[i].shape(),
                        adam.moment1()[i].values()};
    Checkpoint::Entry v{"adam.v." + names[i], adam.moment2()[i].shape(),
                        adam.moment2()[i].values()};
    c.tensors.push_back(std::move(m));
    c.tensors.push_back(std::move(v));
  }
  c.counters.emplace_back("adam.t", adam.steps_taken());
  return c;
}

namespace {

// Rewrites an existing snapshot's payload in place. Entry layout is fixed for
// the whole run, so steady-state training copies values without allocating.
void refresh_train_checkpoint(Checkpoint& c, Enhancer& enh, Adam& adam,
                              int64_t step, const Rng& rng) {
  c.step = step;
  c.rng_state = rng.serialize();
  size_t idx = 0;
  enh.visit_tensors([&](const std::string&, Tensor& t, bool) {
    std::copy(t.values().begin(), t.values().end(),
              c.tensors[idx++].values.begin());
  });
  for (size_t i = 0; i < adam.moment1().size(); ++i) {
    std::copy(adam.moment1()[i].values().begin(),
              adam.moment1()[i].values().end(),
              c.tensors[idx++].values.begin());
    std::copy(adam.moment2()[i].values().begin(),
              adam.moment2()[i].values().end(),
              c.tensors[idx++].values.begin());
  }
  size_t cidx = 0;
  enh.visit_counters([&](const std::string&, int64_t& v) {
    c.counters[cidx++].second = v;
  });
  c.counters[cidx].second = adam.steps_taken();
}

void restore_train_state(Enhancer& enh, Adam& adam,
                         const std::vector<std::string>& names, Rng& rng,
                         const Checkpoint& c) {
  restore_tensors(enh, c);
  for (size_t i = 0; i < names.size(); ++i) {
    for (auto [tag, moments] : {std::pair{"adam.m.", &adam.moment1()},
                                std::pair{"adam.v.", &adam.moment2()}}) {
      const Checkpoint::Entry* e = c.find(cat(tag, names[i]));
      if (e == nullptr)
        throw shape_error(cat("checkpoint has no optimizer state for ",
                              names[i]));
      if (e->shape != (*moments)[i].shape())
        throw shape_error(cat("optimizer state shape mismatch for ", names[i]));
      std::copy(e->values.begin(), e->values.end(), (*moments)[i].data());
    }
  }
  const int64_t* t = c.find_counter("adam.t");
  if (t == nullptr) throw shape_error("checkpoint has no adam.t counter");
  adam.set_steps_taken(*t);
  rng.deserialize(c.rng_state);
}

}  // namespace

TrainResult train_enhancer(const TrainConfig& cfg, Enhancer& enh,
                           RecognizerNetwork& rec, const Dataset& corpus,
                           const Dataset* val, const Checkpoint* resume) {
  if (!rec.frozen())
    throw value_error("train_enhancer: recognizer must be frozen");
  if (corpus.items.empty()) throw value_error("train_enhancer: empty corpus");
  if (cfg.total_steps < 0) throw value_error("train_enhancer: negative steps");
  if (cfg.batch_size < 2)
    throw value_error("train_enhancer: batch size must be >= 2 for batch norm");
  if (cfg.out_dir.empty()) throw value_error("train_enhancer: out_dir not set");

  enh.gem_enabled = cfg.gem_enabled;
  enh.pam_enabled = cfg.pam_enabled;

  std::vector<std::string> names;
  std::vector<Tensor> params;
  enh.visit_active_params([&](const std::string& n, Tensor& t, bool trainable) {
    if (!trainable) return;
    names.push_back(n);
    params.push_back(t);
  });
  Adam::Config acfg;
  acfg.lr = static_cast<float>(cfg.lr);
  Adam adam(params, acfg);

  uint64_t chash = train_config_hash(cfg);
  Rng rng(derive_seed(cfg.seed, "train"));
  int start_step = 0;
  if (resume != nullptr) {
    if (resume->config_hash != chash)
      throw value_error(cat("train_enhancer: checkpoint was written by a "
                            "different config (hash ",
                            resume->config_hash, " vs ", chash, ")"));
    restore_train_state(enh, adam, names, rng, *resume);
    start_step = static_cast<int>(resume->step);
  }

  fs::create_directories(cfg.out_dir);
  fs::path out(cfg.out_dir);
  std::ofstream log(out / "train_log.jsonl",
                    resume != nullptr ? std::ios::app : std::ios::trunc);
  if (!log)
    throw io_error(cat("train_enhancer: cannot write log in ", cfg.out_dir));

  Checkpoint last_good =
      build_train_checkpoint(enh, adam, names, start_step, chash, rng);

  TrainResult result;
  result.steps_completed = start_step;
  int n = static_cast<int>(corpus.items.size());

  for (int step = start_step; step < cfg.total_steps; ++step) {
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i)
      idx.push_back(rng.uniform_int(0, n - 1));
    auto [x, labels] = pack_batch(corpus, idx, /*dark=*/true);

    Tape tape;
    Ctx ctx;
    ctx.tape = &tape;
    auto eres = enhance(ctx, enh, x, BnMode::train);
    Tensor logits = rec.forward(ctx, eres.output, BnMode::eval);
    Tensor loss = model_specific_loss(ctx, logits, labels);
    double lv = static_cast<double>(loss.item());

    bool diverged = !std::isfinite(lv);
    if (!diverged) {
      adam.zero_grad();
      tape.backward(loss);
      try {
        adam.step();
      } catch (const training_error&) {
        diverged = true;
      }
    }
    if (diverged) {
      restore_train_state(enh, adam, names, rng, last_good);
      std::string path = (out / "checkpoint_last_good.lxf").string();
      save_checkpoint(path, last_good);
      log << json{{"step", step}, {"event", "divergence_halt"}}.dump() << "\n";
      result.halted_on_divergence = true;
      result.final_checkpoint = path;
      return result;
    }

    double cr = 0.0, cg = 0.0, cb = 0.0;
    for (const auto& c : eres.coefficients) {
      cr += c.r;
      cg += c.g;
      cb += c.b;
    }
    double inv = eres.coefficients.empty()
                     ? 0.0
                     : 1.0 / static_cast<double>(eres.coefficients.size());
    log << json{{"step", step},
                {"loss", lv},
                {"coeff_r", cr * inv},
                {"coeff_g", cg * inv},
                {"coeff_b", cb * inv},
                {"f_rms", eres.f_local_rms}}
               .dump()
        << "\n";

    result.losses.push_back(lv);
    result.final_loss = lv;
    result.steps_completed = step + 1;
    refresh_train_checkpoint(last_good, enh, adam, step + 1, rng);

    if (cfg.checkpoint_interval > 0 &&
        (step + 1) % cfg.checkpoint_interval == 0)
      save_checkpoint((out / "checkpoint_latest.lxf").string(), last_good);

    if (val != nullptr && cfg.eval_interval > 0 &&
        (step + 1) % cfg.eval_interval == 0) {
      EvalReport er = evaluate_on_dataset(&enh, rec, *val, cfg.batch_size);
      log << json{{"step", step + 1}, {"val_miou", er.all.miou}}.dump() << "\n";
    }
  }

  std::string final_path = (out / "checkpoint_final.lxf").string();
  save_checkpoint(final_path, last_good);
  save_checkpoint((out / "checkpoint_latest.lxf").string(), last_good);
  result.final_checkpoint = final_path;
  return result;
}

}  // namespace luxforge
