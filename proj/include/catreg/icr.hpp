#pragma once

// Image-level categorical regularization: global average pooling over the last
// backbone map followed by a 1x1 convolution (a linear map on the pooled
// vector) giving one sigmoid score per class. Trained on source images only.

#include <span>
#include <string>
#include <vector>

#include "catreg/dataset.hpp"
#include "catreg/detector.hpp"
#include "catreg/layers.hpp"

namespace catreg {

struct ImageLevelPrediction {
  std::vector<double> logits;
  std::vector<double> probs;  // sigmoid(logits), clamped to [eps, 1 - eps]
  std::string image_id;
  Domain domain = Domain::source;
};

Tensor global_average_pool(const Tensor& feature_map);  // (d, h, w) -> (1, d)

class IcrHead {
 public:
  IcrHead() = default;
  IcrHead(int in_channels, int num_classes);

  struct Trace {
    Tensor pooled;  // (1, d)
    ImageLevelPrediction prediction;
  };

  void init(Rng& rng);
  Trace forward(const BackboneFeatures& features, std::string image_id = {}, Domain domain = Domain::source) const;
  // Classifier applied at every location before pooling: (C, h, w).
  Tensor evidence_maps(const BackboneFeatures& features) const;
  // Accumulates into grad_features (shaped like the feature map). Counts
  // updates requested for target images.
  void backward(const BackboneFeatures& features, const Trace& trace, std::span<const double> grad_logits,
                Tensor& grad_features);

  std::vector<Param*> params();
  Linear& classifier() { return classifier_; }
  const Linear& classifier() const { return classifier_; }
  int num_classes() const { return classifier_.out_features(); }
  long target_updates() const { return target_updates_; }

 private:
  Linear classifier_;
  long target_updates_ = 0;
};

struct IcrLoss {
  double value = 0.0;
  std::vector<double> grad_logits;
};

// -sum_c [y log p + (1 - y) log(1 - p)]. Throws ContractError on target predictions.
IcrLoss icr_loss(const ImageLevelPrediction& prediction, std::span<const int> image_labels);

// Per-class probabilities from raw logits (same clamp as the head).
ImageLevelPrediction prediction_from_logits(std::span<const double> logits, std::string image_id = {},
                                            Domain domain = Domain::source);

}  // namespace catreg
