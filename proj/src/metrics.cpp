#include "luxforge/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "luxforge/common.hpp"
#include "luxforge/threading.hpp"

using nlohmann::json;

namespace luxforge {

ConfusionMatrix::ConfusionMatrix(int k_classes) : k(k_classes) {
  if (k_classes < 1)
    throw value_error(cat("confusion matrix: k ", k_classes, " must be >= 1"));
  counts.assign(static_cast<size_t>(k) * k, 0);
}

void ConfusionMatrix::add(const LabelMap& truth, const LabelMap& pred) {
  if (truth.n != pred.n || truth.h != pred.h || truth.w != pred.w)
    throw shape_error(cat("confusion matrix: truth ", truth.n, "x", truth.h,
                          "x", truth.w, " vs pred ", pred.n, "x", pred.h, "x",
                          pred.w));
  for (size_t i = 0; i < truth.values.size(); ++i) {
    int t = truth.values[i], p = pred.values[i];
    if (t == kIgnoreLabel) continue;
    if (t < 0 || t >= k || p < 0 || p >= k)
      throw value_error(cat("confusion matrix: label pair (", t, ",", p,
                            ") outside [0,", k, ") at pixel ", i));
    ++at(t, p);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k != k)
    throw shape_error(cat("confusion matrix: merge k ", other.k, " into ", k));
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

IouResult miou(const ConfusionMatrix& cm) {
  IouResult r;
  r.per_class.assign(static_cast<size_t>(cm.k), 0.0);
  r.present.assign(static_cast<size_t>(cm.k), false);
  double acc = 0.0;
  int present = 0;
  for (int c = 0; c < cm.k; ++c) {
    int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < cm.k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // absent from both truth and prediction
    r.present[static_cast<size_t>(c)] = true;
    r.per_class[static_cast<size_t>(c)] =
        static_cast<double>(tp) / static_cast<double>(denom);
    acc += r.per_class[static_cast<size_t>(c)];
    ++present;
  }
  if (present == 0)
    throw value_error("miou: every class absent from truth and prediction");
  r.mean = acc / present;
  return r;
}

double mean_pixel_intensity(const Tensor& images) {
  if (!images.defined() || images.numel() == 0)
    throw value_error("mean_pixel_intensity: empty batch");
  double acc = 0.0;
  const float* v = images.data();
  for (int64_t i = 0; i < images.numel(); ++i) acc += static_cast<double>(v[i]);
  return acc / static_cast<double>(images.numel()) * 255.0;
}

ParamCounts count_params(Enhancer& enhancer, RecognizerNetwork& recognizer) {
  ParamCounts c;
  c.gem = count_trainable<float>(enhancer.gem);
  c.pam = count_trainable<float>(enhancer.pam);
  c.recognizer = count_trainable<float>(recognizer);
  return c;
}

namespace {

void add_image_slice(ConfusionMatrix& cm, const LabelMap& truth,
                     const LabelMap& pred, int image) {
  int64_t hw = static_cast<int64_t>(truth.h) * truth.w;
  for (int64_t p = image * hw; p < (image + 1) * hw; ++p) {
    int t = truth.values[static_cast<size_t>(p)];
    int q = pred.values[static_cast<size_t>(p)];
    if (t == kIgnoreLabel) continue;
    ++cm.at(t, q);
  }
}

SubsetScore score_from(const ConfusionMatrix& cm, int images) {
  SubsetScore s;
  s.images = images;
  if (images == 0) return s;
  s.miou = miou(cm).mean;
  s.valid = true;
  return s;
}

}  // namespace

EvalReport evaluate_on_dataset(Enhancer* enhancer, RecognizerNetwork& rec,
                               const Dataset& ds, int batch_size) {
  if (ds.items.empty()) throw value_error("evaluate_on_dataset: empty dataset");
  if (batch_size < 1) throw value_error("evaluate_on_dataset: bad batch size");

  int k = rec.k_classes();
  ConfusionMatrix cm_all(k), cm_n(k), cm_h(k), cm_e(k);
  int img_n = 0, img_h = 0, img_e = 0;
  // Untrained batch-norm stats force a train-mode probe; stats stay untouched
  // either way, so evaluation never mutates the networks.
  BnMode emode = (enhancer != nullptr && !enhancer->bn_stats_ready())
                     ? BnMode::train
                     : BnMode::eval;
  Ctx ctx;
  ctx.update_running_stats = false;

  size_t total = ds.items.size();
  for (size_t start = 0; start < total; start += static_cast<size_t>(batch_size)) {
    std::vector<int> idx;
    for (size_t i = start; i < std::min(total, start + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(static_cast<int>(i));
    auto [x, labels] = pack_batch(ds, idx, /*dark=*/true);
    Tensor img = x;
    if (enhancer != nullptr) img = enhance(ctx, *enhancer, x, emode).output;
    LabelMap pred = predict_labels(rec.forward(ctx, img, BnMode::eval));
    cm_all.add(labels, pred);
    for (size_t j = 0; j < idx.size(); ++j) {
      switch (ds.items[static_cast<size_t>(idx[j])].subset) {
        case SubsetTag::normal:
          add_image_slice(cm_n, labels, pred, static_cast<int>(j));
          ++img_n;
          break;
        case SubsetTag::hard:
          add_image_slice(cm_h, labels, pred, static_cast<int>(j));
          ++img_h;
          break;
        case SubsetTag::extreme:
          add_image_slice(cm_e, labels, pred, static_cast<int>(j));
          ++img_e;
          break;
      }
    }
  }

  EvalReport r;
  r.normal = score_from(cm_n, img_n);
  r.hard = score_from(cm_h, img_h);
  r.extreme = score_from(cm_e, img_e);
  r.all = score_from(cm_all, static_cast<int>(total));
  r.overall = miou(cm_all);
  return r;
}

namespace {

LatencyStats stats_from(std::vector<double>& ms) {
  std::sort(ms.begin(), ms.end());
  LatencyStats s;
  s.iters = static_cast<int>(ms.size());
  double acc = 0.0;
  for (double v : ms) acc += v;
  s.mean_ms = acc / static_cast<double>(ms.size());
  auto rank = [&](double q) {  // nearest rank
    size_t i = static_cast<size_t>(std::ceil(q * static_cast<double>(ms.size())));
    return ms[std::min(ms.size() - 1, i == 0 ? 0 : i - 1)];
  };
  s.p50_ms = rank(0.50);
  s.p95_ms = rank(0.95);
  return s;
}

}  // namespace

LatencyReport benchmark_latency(Enhancer& enhancer, RecognizerNetwork& rec,
                                int h, int w, int warmup, int iters) {
  if (h < 1 || w < 1) throw value_error("benchmark_latency: bad input size");
  if (warmup < 5) throw value_error("benchmark_latency: warmup must be >= 5");
  if (iters < 50) throw value_error("benchmark_latency: iters must be >= 50");

  int saved_workers = worker_count();
  set_worker_count(1);

  Rng rng(derive_seed(7, "bench"));
  Tensor input = Tensor::zeros({1, 3, h, w});
  for (auto& v : input.values()) v = static_cast<float>(rng.uniform());

  BnMode emode = enhancer.bn_stats_ready() ? BnMode::eval : BnMode::train;
  Ctx ctx;
  ctx.update_running_stats = false;

  Tensor enhanced = enhance(ctx, enhancer, input, emode).output;

  using clock = std::chrono::steady_clock;
  auto time_one = [&](auto&& fn) {
    auto t0 = clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  std::vector<double> t_enh, t_rec, t_both;
  for (int i = 0; i < warmup + iters; ++i) {
    double e = time_one([&] { (void)enhance(ctx, enhancer, input, emode); });
    double r = time_one([&] { (void)rec.forward(ctx, enhanced, BnMode::eval); });
    double b = time_one([&] {
      Tensor out = enhance(ctx, enhancer, input, emode).output;
      (void)rec.forward(ctx, out, BnMode::eval);
    });
    if (i >= warmup) {
      t_enh.push_back(e);
      t_rec.push_back(r);
      t_both.push_back(b);
    }
  }

  set_worker_count(saved_workers);

  LatencyReport rep;
  rep.h = h;
  rep.w = w;
  rep.enhancer = stats_from(t_enh);
  rep.recognizer = stats_from(t_rec);
  rep.combined = stats_from(t_both);
  return rep;
}

namespace {

json iou_json(const IouResult& r) {
  json per = json::array();
  for (size_t c = 0; c < r.per_class.size(); ++c)
    per.push_back(r.present[c] ? json(r.per_class[c]) : json(nullptr));
  return {{"mean", r.mean}, {"per_class", per}};
}

json subset_json(const SubsetScore& s) {
  json j;
  j["images"] = s.images;
  if (s.valid)
    j["miou"] = s.miou;
  else
    j["miou"] = nullptr;
  return j;
}

json latency_json(const LatencyStats& s) {
  return {{"mean_ms", s.mean_ms},
          {"p50_ms", s.p50_ms},
          {"p95_ms", s.p95_ms},
          {"iters", s.iters}};
}

}  // namespace

std::string metrics_report_json(const MetricsReport& r) {
  json j;
  j["miou"] = {{"LL-N", subset_json(r.eval.normal)},
               {"LL-H", subset_json(r.eval.hard)},
               {"LL-E", subset_json(r.eval.extreme)},
               {"LL-A", subset_json(r.eval.all)}};
  j["per_class_iou"] = iou_json(r.eval.overall);
  j["params"] = {{"gem", r.params.gem},
                 {"pam", r.params.pam},
                 {"enhancer", r.params.enhancer()},
                 {"recognizer", r.params.recognizer},
                 {"total", r.params.total()}};
  if (r.latency.combined.iters > 0) {
    j["latency"] = {{"h", r.latency.h},
                    {"w", r.latency.w},
                    {"enhancer", latency_json(r.latency.enhancer)},
                    {"recognizer", latency_json(r.latency.recognizer)},
                    {"combined", latency_json(r.latency.combined)}};
  }
  if (!r.config_hash.empty()) j["config_hash"] = r.config_hash;
  if (!r.checkpoint_id.empty()) j["checkpoint"] = r.checkpoint_id;
  return j.dump(2);
}

std::string metrics_report_table(const MetricsReport& r) {
  std::ostringstream out;
  auto cell = [](const SubsetScore& s) {
    if (!s.valid) return std::string("   n/a");
    char buf[16];
    std::snprintf(buf, sizeof buf, "%6.4f", s.miou);
    return std::string(buf);
  };
  out << "subset    images  mIoU\n";
  auto row = [&](const char* name, const SubsetScore& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-8s %6d  %s\n", name, s.images,
                  cell(s).c_str());
    out << buf;
  };
  row("LL-N", r.eval.normal);
  row("LL-H", r.eval.hard);
  row("LL-E", r.eval.extreme);
  row("LL-A", r.eval.all);
  out << "params: gem " << r.params.gem << ", pam " << r.params.pam
      << ", enhancer " << r.params.enhancer() << ", recognizer "
      << r.params.recognizer << "\n";
  if (r.latency.combined.iters > 0) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "latency %dx%d (ms): enhancer p50 %.2f, recognizer p50 %.2f, "
                  "combined p50 %.2f\n",
                  r.latency.h, r.latency.w, r.latency.enhancer.p50_ms,
                  r.latency.recognizer.p50_ms, r.latency.combined.p50_ms);
    out << buf;
  }
  return out.str();
}

}  // namespace luxforge
