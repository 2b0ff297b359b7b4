#pragma once

// Minimal two-stage detector: 4-layer conv backbone (stride 8), RPN over a
// single feature level, RoIAlign, and a two-layer RoI head. Layers expose
// explicit forward traces and backward passes; the trainer wires them.

#include <array>
#include <span>
#include <vector>

#include "catreg/dataset.hpp"
#include "catreg/layers.hpp"

namespace catreg {

struct BackboneFeatures {
  Tensor feature_map;  // (d, h, w), output of the last conv layer
  int stride = 8;
};

class Backbone {
 public:
  static constexpr int kLayers = 4;
  static constexpr int kEarlyTap = 2;  // activation index used by the local alignment term

  Backbone() = default;
  explicit Backbone(std::array<int, kLayers> widths);

  // acts[0] is the input image, acts[i] the ReLU output of conv i.
  struct Trace {
    std::array<Tensor, kLayers + 1> acts;
  };

  void init(Rng& rng);
  Trace forward(const Tensor& image) const;
  BackboneFeatures features(const Trace& trace) const { return {trace.acts[kLayers], stride()}; }
  // grad_early (optional) is added at acts[kEarlyTap].
  void backward(const Trace& trace, Tensor grad_features, const Tensor* grad_early = nullptr);

  int stride() const { return 8; }
  int out_channels() const { return convs_.back().out_channels(); }
  int early_channels() const { return convs_[kEarlyTap - 1].out_channels(); }
  std::vector<Param*> params();

 private:
  std::array<Conv2d, kLayers> convs_;
};

// In [0, 1]; 0 for disjoint interiors, 1 for identical boxes.
double iou(const BoundingBox& a, const BoundingBox& b);

// One anchor per (cell, scale, ratio), ordered cell-major (row, col), then
// scale, then ratio. Ratio is height / width.
std::vector<BoundingBox> generate_anchors(int feature_h, int feature_w, int stride, std::span<const double> scales,
                                          std::span<const double> ratios);

// Greedy NMS. Returns kept indices in descending score order (ties keep input order).
std::vector<int> nms(std::span<const BoundingBox> boxes, std::span<const double> scores, double threshold,
                     int max_keep);

// Box regression parameterization (dx, dy, dw, dh), divided by `weights`.
std::array<double, 4> encode_box(const BoundingBox& reference, const BoundingBox& target,
                                 const std::array<double, 4>& weights);
BoundingBox decode_box(const BoundingBox& reference, std::span<const double> deltas,
                       const std::array<double, 4>& weights);

inline constexpr std::array<double, 4> kRpnBoxWeights{1.0, 1.0, 1.0, 1.0};
inline constexpr std::array<double, 4> kRoiBoxWeights{10.0, 10.0, 5.0, 5.0};

struct ProposalBatch {
  std::vector<BoundingBox> boxes;
  std::vector<double> objectness;
  Tensor roi_features;      // (R, d, P, P)
  Tensor class_posteriors;  // (R, C + 1); column C is background
  Tensor box_deltas;        // (R, 4)
  std::string image_id;
  Domain domain = Domain::source;

  std::size_t size() const { return boxes.size(); }
};

struct RpnSettings {
  std::vector<double> anchor_scales{12.0, 20.0, 32.0};
  std::vector<double> anchor_ratios{1.0};
  int pre_nms_top = 200;
  int post_nms_top = 48;
  double nms_threshold = 0.7;
  double min_size = 2.0;
  int batch = 64;
  double positive_fraction = 0.5;
  double positive_iou = 0.7;
  double negative_iou = 0.3;

  int anchors_per_cell() const { return static_cast<int>(anchor_scales.size() * anchor_ratios.size()); }
};

class Rpn {
 public:
  Rpn() = default;
  Rpn(int in_channels, int hidden, int anchors_per_cell);

  struct Trace {
    Tensor hidden;  // ReLU output of the 3x3 conv
    Tensor logits;  // (A, h, w)
    Tensor deltas;  // (4A, h, w); channel 4a+k is coordinate k of anchor a
  };

  void init(Rng& rng);
  Trace forward(const Tensor& features) const;
  void backward(const Tensor& features, const Trace& trace, const Tensor& grad_logits, const Tensor& grad_deltas,
                Tensor& grad_features);
  std::vector<Param*> params();

 private:
  Conv2d conv_, cls_, box_;
};

// Objectness logit / deltas of anchor index i, matching generate_anchors ordering.
double anchor_logit(const Rpn::Trace& trace, int anchor_index, int anchors_per_cell);
std::array<double, 4> anchor_deltas(const Rpn::Trace& trace, int anchor_index, int anchors_per_cell);

// Decode, clip, drop tiny boxes, pre-NMS top-N, NMS, keep top-K. Output is
// sorted by objectness (sigmoid of logit), descending.
ProposalBatch select_proposals(std::span<const BoundingBox> anchors, const Rpn::Trace& trace,
                               const RpnSettings& settings, int image_w, int image_h, int max_keep);

struct RoiDiagnostics {
  int clamped_boxes = 0;
};

// RoIAlign over image-space boxes. Zero-area boxes are widened to one pixel
// and counted in diagnostics.
Tensor roi_extract(const Tensor& features, int stride, std::span<const BoundingBox> boxes,
                   kernels::RoiAlignParams params, RoiDiagnostics* diagnostics = nullptr);
// Accumulates dL/dfeatures into grad_features.
void roi_extract_backward(const Tensor& grad_pooled, int stride, std::span<const BoundingBox> boxes,
                          kernels::RoiAlignParams params, Tensor& grad_features);

class RoiHead {
 public:
  RoiHead() = default;
  RoiHead(int in_features, int hidden, int num_classes);

  struct Trace {
    Tensor input;   // (R, d*P*P)
    Tensor hidden;  // (R, hidden)
    Tensor logits;  // (R, C+1)
    Tensor deltas;  // (R, 4), class-agnostic
  };

  void init(Rng& rng);
  Trace forward(const Tensor& pooled) const;
  // Returns dL/dpooled, shaped like the pooled tensor.
  Tensor backward(const Trace& trace, const Tensor& grad_logits, const Tensor& grad_deltas,
                  const std::vector<int>& pooled_shape);
  std::vector<Param*> params();
  int num_classes() const { return cls_.out_features() - 1; }

 private:
  Linear fc_, cls_, box_;
};

Tensor softmax_rows(const Tensor& logits);

struct LossWithGrad {
  double value = 0.0;
  Tensor grad;
};

// Mean over rows of -log softmax(logits)[label].
LossWithGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
// Same loss evaluated on probabilities (clamped before the log).
double cross_entropy_from_posteriors(const Tensor& posteriors, std::span<const int> labels);
// Mean binary cross-entropy over entries with label 0/1; label -1 is ignored.
LossWithGrad sigmoid_cross_entropy(std::span<const double> logits, std::span<const int> labels, int normalizer);
// sum_i mask_i * smoothL1(pred_i - target_i) / normalizer, rows of 4.
LossWithGrad smooth_l1(const Tensor& pred, const Tensor& target, std::span<const int> row_mask, double beta,
                       double normalizer);

struct AnchorTargets {
  std::vector<int> labels;  // per anchor: 1 positive, 0 negative, -1 ignored
  Tensor deltas;            // (N, 4) regression targets (valid where label == 1)
  int sampled = 0;
};

AnchorTargets assign_anchor_targets(std::span<const BoundingBox> anchors, const std::vector<ObjectInstance>& gt,
                                    const RpnSettings& settings, Rng& rng);

struct RoiSettings {
  int batch = 32;
  double fg_fraction = 0.25;
  double fg_iou = 0.5;
  double bg_iou = 0.3;
};

struct RoiTargets {
  std::vector<BoundingBox> boxes;
  std::vector<int> labels;  // class id, or C for background
  Tensor deltas;            // (R, 4) regression targets
  std::vector<int> foreground;
};

// Label proposals (plus ground-truth boxes) by IoU and subsample.
RoiTargets sample_rois(std::span<const BoundingBox> proposals, const std::vector<ObjectInstance>& gt,
                       int num_classes, const RoiSettings& settings, Rng& rng);

// Best-IoU ground-truth class for a proposal, or background (num_classes)
// below fg_iou.
int assign_proposal_class(const BoundingBox& proposal, const std::vector<ObjectInstance>& gt, int num_classes,
                          double fg_iou);

struct DetectionLossTerms {
  double rpn_objectness = 0.0;
  double rpn_box = 0.0;
  double roi_classification = 0.0;
  double roi_box = 0.0;

  double total() const { return rpn_objectness + rpn_box + roi_classification + roi_box; }
};

struct DetectionLossInputs {
  const Rpn::Trace* rpn = nullptr;
  const AnchorTargets* anchor_targets = nullptr;
  int anchors_per_cell = 1;
  const Tensor* roi_logits = nullptr;
  const Tensor* roi_deltas = nullptr;
  const RoiTargets* roi_targets = nullptr;
};

struct DetectionLoss {
  DetectionLossTerms terms;
  Tensor grad_rpn_logits, grad_rpn_deltas;  // shaped like the RPN trace outputs
  Tensor grad_roi_logits, grad_roi_deltas;
};

// L_det on a source sample. Throws ContractError for target samples.
DetectionLoss detection_loss(const DetectionSample& sample, const DetectionLossInputs& inputs);

struct Detection {
  BoundingBox box;
  int class_id = 0;
  double score = 0.0;
};

struct InferenceSettings {
  double score_threshold = 0.01;
  double nms_threshold = 0.3;
  int max_detections = 30;
};

// Per-class decode + NMS on RoI head outputs.
std::vector<Detection> postprocess_detections(const ProposalBatch& proposals, int image_w, int image_h,
                                              const InferenceSettings& settings);

}  // namespace catreg
