#include "luxforge/recognizer.hpp"

#include <cmath>

#include "luxforge/adam.hpp"
#include "luxforge/common.hpp"
#include "luxforge/metrics.hpp"

namespace luxforge {

template <typename S>
RecognizerNetworkT<S>::RecognizerNetworkT(int k_classes, uint64_t seed)
    : k_(k_classes) {
  if (k_classes < 2)
    throw value_error(cat("recognizer: k_classes ", k_classes, " must be >= 2"));
  Rng rng(derive_seed(seed, "recognizer.init"));
  conv1_ = Conv2dLayerT<S>(3, 24, 3, 1, 1, rng);
  conv2_ = Conv2dLayerT<S>(24, 48, 3, 1, 1, rng);
  conv3_ = Conv2dLayerT<S>(48, 48, 3, 1, 1, rng);
  conv4_ = Conv2dLayerT<S>(48, 24, 3, 1, 1, rng);
  conv5_ = Conv2dLayerT<S>(24, k_classes, 3, 1, 1, rng);
  bn1_ = BatchNorm2dLayerT<S>(24);
  bn2_ = BatchNorm2dLayerT<S>(48);
  bn3_ = BatchNorm2dLayerT<S>(48);
  bn4_ = BatchNorm2dLayerT<S>(24);
}

template <typename S>
BasicTensor<S> RecognizerNetworkT<S>::forward(Context<S>& ctx,
                                              const BasicTensor<S>& x,
                                              BnMode mode) {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw shape_error(cat("recognizer: expected (N,3,H,W) input, got ",
                          shape_str(x.shape())));
  if (frozen_ && mode == BnMode::train)
    throw value_error("recognizer: train-mode forward on a frozen network");
  auto h = relu(ctx, bn1_.forward(ctx, conv1_.forward(ctx, x), mode));
  h = relu(ctx, bn2_.forward(ctx, conv2_.forward(ctx, h), mode));
  h = relu(ctx, bn3_.forward(ctx, conv3_.forward(ctx, h), mode));
  h = relu(ctx, bn4_.forward(ctx, conv4_.forward(ctx, h), mode));
  return conv5_.forward(ctx, h);
}

template <typename S>
void RecognizerNetworkT<S>::freeze() {
  frozen_ = true;
  set_trainable<S>(*this, false);
}

template <typename S>
bool RecognizerNetworkT<S>::stats_ready() const {
  return bn1_.stats_ready() && bn2_.stats_ready() && bn3_.stats_ready() &&
         bn4_.stats_ready();
}

template <typename S>
void RecognizerNetworkT<S>::visit_tensors(const TensorVisitor<S>& fn) {
  conv1_.visit("rec.conv1", fn);
  bn1_.visit("rec.bn1", fn);
  conv2_.visit("rec.conv2", fn);
  bn2_.visit("rec.bn2", fn);
  conv3_.visit("rec.conv3", fn);
  bn3_.visit("rec.bn3", fn);
  conv4_.visit("rec.conv4", fn);
  bn4_.visit("rec.bn4", fn);
  conv5_.visit("rec.conv5", fn);
}

template <typename S>
LabelMap predict_labels(const BasicTensor<S>& logits) {
  if (logits.rank() != 4)
    throw shape_error(cat("predict_labels: expected (N,K,H,W), got ",
                          shape_str(logits.shape())));
  int n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  LabelMap out;
  out.n = n;
  out.h = h;
  out.w = w;
  out.values.resize(static_cast<size_t>(n) * h * w);
  const S* v = logits.data();
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int64_t p = 0; p < hw; ++p) {
      const S* base = v + (static_cast<int64_t>(i) * k) * hw + p;
      int best = 0;
      S best_v = base[0];
      for (int c = 1; c < k; ++c) {
        S cv = base[static_cast<int64_t>(c) * hw];
        if (cv > best_v) {  // strict: ties keep the lowest index
          best_v = cv;
          best = c;
        }
      }
      out.values[static_cast<size_t>(i * hw + p)] = best;
    }
  return out;
}

std::pair<BasicTensor<float>, LabelMap> pack_batch(
    const Dataset& ds, const std::vector<int>& indices, bool dark) {
  if (indices.empty()) throw value_error("pack_batch: empty index list");
  int n = static_cast<int>(indices.size());
  Tensor x = Tensor::zeros({n, 3, ds.h, ds.w});
  LabelMap labels;
  labels.n = n;
  labels.h = ds.h;
  labels.w = ds.w;
  labels.values.resize(static_cast<size_t>(n) * ds.h * ds.w);
  int64_t chw = static_cast<int64_t>(3) * ds.h * ds.w;
  int64_t hw = static_cast<int64_t>(ds.h) * ds.w;
  for (int i = 0; i < n; ++i) {
    int idx = indices[static_cast<size_t>(i)];
    if (idx < 0 || idx >= static_cast<int>(ds.items.size()))
      throw value_error(cat("pack_batch: index ", idx, " outside dataset of ",
                            ds.items.size()));
    const DatasetItem& item = ds.items[static_cast<size_t>(idx)];
    const ImageF& img = dark ? item.dark : item.bright;
    std::copy(img.chw.begin(), img.chw.end(), x.data() + i * chw);
    std::copy(item.labels.begin(), item.labels.end(),
              labels.values.begin() + i * hw);
  }
  return {x, labels};
}

template <typename S>
void RecognizerNetworkT<S>::visit_counters(const CounterVisitor& fn) {
  bn1_.visit_counters("rec.bn1", fn);
  bn2_.visit_counters("rec.bn2", fn);
  bn3_.visit_counters("rec.bn3", fn);
  bn4_.visit_counters("rec.bn4", fn);
}

namespace {

double holdout_miou(RecognizerNetwork& net, const Dataset& ds, int batch) {
  ConfusionMatrix cm(net.k_classes());
  Ctx ctx;  // no tape, no stat updates
  ctx.update_running_stats = false;
  for (size_t start = 0; start < ds.items.size(); start += static_cast<size_t>(batch)) {
    std::vector<int> idx;
    for (size_t i = start; i < std::min(ds.items.size(), start + batch); ++i)
      idx.push_back(static_cast<int>(i));
    auto [x, labels] = pack_batch(ds, idx, /*dark=*/false);
    Tensor logits = net.forward(ctx, x, BnMode::eval);
    cm.add(labels, predict_labels(logits));
  }
  return miou(cm).mean;
}

}  // namespace

PretrainReport pretrain_recognizer(RecognizerNetwork& net, const Dataset& train,
                                   const Dataset& holdout,
                                   const PretrainConfig& cfg) {
  if (net.frozen()) throw value_error("pretrain: network is already frozen");
  if (train.items.empty() || holdout.items.empty())
    throw value_error("pretrain: empty corpus");
  if (cfg.steps < 1) throw value_error("pretrain: steps must be >= 1");
  if (cfg.batch_size < 2)
    throw value_error("pretrain: batch size must be >= 2 for batch norm");

  std::vector<Tensor> params;
  net.visit_tensors([&](const std::string&, Tensor& t, bool trainable) {
    if (trainable) params.push_back(t);
  });
  Adam::Config acfg;
  acfg.lr = static_cast<float>(cfg.lr);
  Adam adam(params, acfg);

  Rng rng(derive_seed(cfg.seed, "pretrain"));
  PretrainReport report;
  int n = static_cast<int>(train.items.size());
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> idx;
    for (int i = 0; i < cfg.batch_size; ++i)
      idx.push_back(rng.uniform_int(0, n - 1));
    auto [x, labels] = pack_batch(train, idx, /*dark=*/false);

    Tape tape;
    Ctx ctx;
    ctx.tape = &tape;
    Tensor logits = net.forward(ctx, x, BnMode::train);
    Tensor loss = model_specific_loss(ctx, logits, labels);
    double lv = static_cast<double>(loss.item());
    if (!std::isfinite(lv))
      throw training_error(cat("pretrain: non-finite loss at step ", step));
    adam.zero_grad();
    tape.backward(loss);
    adam.step();
    report.final_loss = lv;
    report.steps_run = step + 1;
  }

  net.freeze();
  report.bright_miou = holdout_miou(net, holdout, cfg.batch_size);
  report.target_miou = cfg.target_miou;
  report.reached_target = report.bright_miou >= cfg.target_miou;
  return report;
}

template class RecognizerNetworkT<float>;
template class RecognizerNetworkT<double>;
template LabelMap predict_labels<float>(const BasicTensor<float>&);
template LabelMap predict_labels<double>(const BasicTensor<double>&);

}  // namespace luxforge
