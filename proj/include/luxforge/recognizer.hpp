#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "luxforge/layers.hpp"
#include "luxforge/synth.hpp"
#include "luxforge/tensor.hpp"

namespace luxforge {

// Small fully-convolutional segmentation network: five 3x3 convs at stride 1,
// widths 3->24->48->48->24->K, batch norm + ReLU after the first four. Once
// frozen it only runs in eval mode and its parameters never change.
template <typename S>
class RecognizerNetworkT {
 public:
  RecognizerNetworkT(int k_classes, uint64_t seed);

  BasicTensor<S> forward(Context<S>& ctx, const BasicTensor<S>& x, BnMode mode);

  int k_classes() const { return k_; }
  bool frozen() const { return frozen_; }
  void freeze();
  bool stats_ready() const;
  void visit_tensors(const TensorVisitor<S>& fn);
  void visit_counters(const CounterVisitor& fn);

 private:
  int k_;
  bool frozen_ = false;
  Conv2dLayerT<S> conv1_, conv2_, conv3_, conv4_, conv5_;
  BatchNorm2dLayerT<S> bn1_, bn2_, bn3_, bn4_;
};

using RecognizerNetwork = RecognizerNetworkT<float>;

template <typename S>
BasicTensor<S> recognizer_forward(Context<S>& ctx, RecognizerNetworkT<S>& net,
                                  const BasicTensor<S>& input, BnMode mode) {
  return net.forward(ctx, input, mode);
}

// The downstream model's own training loss: per-pixel softmax cross-entropy.
template <typename S>
BasicTensor<S> model_specific_loss(Context<S>& ctx,
                                   const BasicTensor<S>& logits,
                                   const LabelMap& labels) {
  return softmax_cross_entropy_pixelwise(ctx, logits, labels, kIgnoreLabel);
}

// Per-pixel argmax; exact ties go to the lowest class index.
template <typename S>
LabelMap predict_labels(const BasicTensor<S>& logits);

// Packs dataset items (by index) into an input batch plus matching labels.
std::pair<BasicTensor<float>, LabelMap> pack_batch(
    const Dataset& ds, const std::vector<int>& indices, bool dark);

struct PretrainConfig {
  double lr = 1e-3;
  int steps = 2000;
  int batch_size = 8;
  uint64_t seed = 1;
  double target_miou = 0.90;
};

struct PretrainReport {
  int steps_run = 0;
  double final_loss = 0.0;
  double bright_miou = 0.0;
  double target_miou = 0.0;
  bool reached_target = false;
};

// Trains on the bright images of `train`, freezes the network, then measures
// mIoU on the bright images of `holdout`. Missing the target is reported, not
// thrown; non-finite loss is thrown.
PretrainReport pretrain_recognizer(RecognizerNetwork& net, const Dataset& train,
                                   const Dataset& holdout,
                                   const PretrainConfig& cfg);

}  // namespace luxforge
