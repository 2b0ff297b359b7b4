#include "catreg/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "catreg/errors.hpp"

namespace catreg {

namespace {

const double kMaxLogScale = std::log(1000.0 / 16.0);

std::vector<int> shuffled_prefix(std::vector<int> idx, int keep, Rng& rng) {
  if (static_cast<int>(idx.size()) <= keep) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double smooth_l1_value(double x, double beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  const double a = std::abs(x);
  if (a < beta) return x / beta;
  return x > 0 ? 1.0 : -1.0;
}

}  // namespace

// ---- Backbone ---------------------------------------------------------------

Backbone::Backbone(std::array<int, kLayers> widths) {
  int in = 3;
  for (int i = 0; i < kLayers; ++i) {
    const int stride = i < 3 ? 2 : 1;
    convs_[i] = Conv2d("backbone.conv" + std::to_string(i + 1), in, widths[i], {3, stride, 1});
    in = widths[i];
  }
}

void Backbone::init(Rng& rng) {
  for (auto& c : convs_) c.init(rng);
}

Backbone::Trace Backbone::forward(const Tensor& image) const {
  require(image.rank() == 3 && image.dim(0) == 3, "backbone_forward: image must be (3, H, W)");
  Trace t;
  t.acts[0] = image;
  for (int i = 0; i < kLayers; ++i) {
    t.acts[i + 1] = convs_[i].forward(t.acts[i]);
    relu_inplace(t.acts[i + 1]);
  }
  return t;
}

void Backbone::backward(const Trace& trace, Tensor grad, const Tensor* grad_early) {
  for (int i = kLayers; i >= 1; --i) {
    if (i == kEarlyTap && grad_early != nullptr) {
      require(grad_early->shape() == grad.shape(), "backbone backward: early gradient shape");
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += (*grad_early)[k];
    }
    relu_backward_inplace(trace.acts[i], grad);
    Tensor grad_in;
    convs_[i - 1].backward(trace.acts[i - 1], grad, i > 1 ? &grad_in : nullptr);
    grad = std::move(grad_in);
  }
}

std::vector<Param*> Backbone::params() {
  std::vector<Param*> out;
  for (auto& c : convs_)
    for (Param* p : c.params()) out.push_back(p);
  return out;
}

// ---- Geometry ---------------------------------------------------------------

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<BoundingBox> generate_anchors(int feature_h, int feature_w, int stride, std::span<const double> scales,
                                          std::span<const double> ratios) {
  require(!scales.empty() && !ratios.empty(), "generate_anchors: scales and ratios must be non-empty");
  std::vector<BoundingBox> anchors;
  anchors.reserve(static_cast<std::size_t>(feature_h) * feature_w * scales.size() * ratios.size());
  for (int y = 0; y < feature_h; ++y)
    for (int x = 0; x < feature_w; ++x) {
      const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
      for (double s : scales)
        for (double r : ratios) {
          const double w = s / std::sqrt(r), h = s * std::sqrt(r);
          anchors.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
        }
    }
  return anchors;
}

std::vector<int> nms(std::span<const BoundingBox> boxes, std::span<const double> scores, double threshold,
                     int max_keep) {
  require(boxes.size() == scores.size(), "nms: boxes/scores length mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> keep;
  std::vector<char> removed(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size() && static_cast<int>(keep.size()) < max_keep; ++i) {
    const int a = order[i];
    if (removed[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int b = order[j];
      if (!removed[b] && iou(boxes[a], boxes[b]) > threshold) removed[b] = 1;
    }
  }
  return keep;
}

std::array<double, 4> encode_box(const BoundingBox& ref, const BoundingBox& t, const std::array<double, 4>& w) {
  const double rw = ref.width(), rh = ref.height();
  const double rcx = ref.x_min + 0.5 * rw, rcy = ref.y_min + 0.5 * rh;
  const double tw = t.width(), th = t.height();
  const double tcx = t.x_min + 0.5 * tw, tcy = t.y_min + 0.5 * th;
  return {w[0] * (tcx - rcx) / rw, w[1] * (tcy - rcy) / rh, w[2] * std::log(tw / rw), w[3] * std::log(th / rh)};
}

BoundingBox decode_box(const BoundingBox& ref, std::span<const double> d, const std::array<double, 4>& w) {
  const double rw = ref.width(), rh = ref.height();
  const double rcx = ref.x_min + 0.5 * rw, rcy = ref.y_min + 0.5 * rh;
  const double dw = std::min(d[2] / w[2], kMaxLogScale), dh = std::min(d[3] / w[3], kMaxLogScale);
  const double cx = rcx + d[0] / w[0] * rw, cy = rcy + d[1] / w[1] * rh;
  const double bw = rw * std::exp(dw), bh = rh * std::exp(dh);
  return {cx - 0.5 * bw, cy - 0.5 * bh, cx + 0.5 * bw, cy + 0.5 * bh};
}

// ---- RPN --------------------------------------------------------------------

Rpn::Rpn(int in_channels, int hidden, int anchors_per_cell)
    : conv_("rpn.conv", in_channels, hidden, {3, 1, 1}),
      cls_("rpn.cls", hidden, anchors_per_cell, {1, 1, 0}),
      box_("rpn.box", hidden, 4 * anchors_per_cell, {1, 1, 0}) {}

void Rpn::init(Rng& rng) {
  conv_.init(rng, 0.01);
  cls_.init(rng, 0.01);
  box_.init(rng, 0.01);
}

Rpn::Trace Rpn::forward(const Tensor& features) const {
  Trace t;
  t.hidden = conv_.forward(features);
  relu_inplace(t.hidden);
  t.logits = cls_.forward(t.hidden);
  t.deltas = box_.forward(t.hidden);
  return t;
}

void Rpn::backward(const Tensor& features, const Trace& trace, const Tensor& grad_logits, const Tensor& grad_deltas,
                   Tensor& grad_features) {
  Tensor g_hidden_cls, g_hidden_box;
  cls_.backward(trace.hidden, grad_logits, &g_hidden_cls);
  box_.backward(trace.hidden, grad_deltas, &g_hidden_box);
  for (std::size_t i = 0; i < g_hidden_cls.size(); ++i) g_hidden_cls[i] += g_hidden_box[i];
  relu_backward_inplace(trace.hidden, g_hidden_cls);
  Tensor g_features;
  conv_.backward(features, g_hidden_cls, &g_features);
  for (std::size_t i = 0; i < g_features.size(); ++i) grad_features[i] += g_features[i];
}

std::vector<Param*> Rpn::params() {
  std::vector<Param*> out;
  for (Conv2d* c : {&conv_, &cls_, &box_})
    for (Param* p : c->params()) out.push_back(p);
  return out;
}

double anchor_logit(const Rpn::Trace& trace, int i, int A) {
  const int w = trace.logits.dim(2);
  const int cell = i / A, a = i % A;
  return trace.logits.at(a, cell / w, cell % w);
}

std::array<double, 4> anchor_deltas(const Rpn::Trace& trace, int i, int A) {
  const int w = trace.deltas.dim(2);
  const int cell = i / A, a = i % A;
  std::array<double, 4> d{};
  for (int k = 0; k < 4; ++k) d[k] = trace.deltas.at(4 * a + k, cell / w, cell % w);
  return d;
}

ProposalBatch select_proposals(std::span<const BoundingBox> anchors, const Rpn::Trace& trace,
                               const RpnSettings& settings, int image_w, int image_h, int max_keep) {
  const int A = settings.anchors_per_cell();
  std::vector<BoundingBox> boxes;
  std::vector<double> scores;
  for (int i = 0; i < static_cast<int>(anchors.size()); ++i) {
    const auto d = anchor_deltas(trace, i, A);
    const BoundingBox b = decode_box(anchors[i], d, kRpnBoxWeights).clipped(image_w, image_h);
    if (!(b.width() >= settings.min_size && b.height() >= settings.min_size)) continue;  // also drops NaN boxes
    boxes.push_back(b);
    scores.push_back(sigmoid(anchor_logit(trace, i, A)));
  }
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  if (static_cast<int>(order.size()) > settings.pre_nms_top) order.resize(settings.pre_nms_top);
  std::vector<BoundingBox> top_boxes;
  std::vector<double> top_scores;
  for (int i : order) {
    top_boxes.push_back(boxes[i]);
    top_scores.push_back(scores[i]);
  }
  ProposalBatch out;
  for (int k : nms(top_boxes, top_scores, settings.nms_threshold, max_keep)) {
    out.boxes.push_back(top_boxes[k]);
    out.objectness.push_back(top_scores[k]);
  }
  return out;
}

// ---- RoI extraction ---------------------------------------------------------

namespace {

Tensor feature_space_boxes(int stride, std::span<const BoundingBox> boxes, RoiDiagnostics* diag) {
  Tensor t({static_cast<int>(boxes.size()), 4});
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    BoundingBox b = boxes[r];
    bool clamped = false;
    if (b.width() < 1.0) b.x_max = b.x_min + 1.0, clamped = true;
    if (b.height() < 1.0) b.y_max = b.y_min + 1.0, clamped = true;
    if (clamped && diag) ++diag->clamped_boxes;
    t[r * 4 + 0] = b.x_min / stride - 0.5;
    t[r * 4 + 1] = b.y_min / stride - 0.5;
    t[r * 4 + 2] = b.x_max / stride - 0.5;
    t[r * 4 + 3] = b.y_max / stride - 0.5;
  }
  return t;
}

}  // namespace

Tensor roi_extract(const Tensor& features, int stride, std::span<const BoundingBox> boxes,
                   kernels::RoiAlignParams params, RoiDiagnostics* diagnostics) {
  Tensor out;
  kernels::roi_align_forward(features, feature_space_boxes(stride, boxes, diagnostics), params, out);
  return out;
}

void roi_extract_backward(const Tensor& grad_pooled, int stride, std::span<const BoundingBox> boxes,
                          kernels::RoiAlignParams params, Tensor& grad_features) {
  kernels::roi_align_backward(feature_space_boxes(stride, boxes, nullptr), grad_pooled, params, grad_features);
}

// ---- RoI head ---------------------------------------------------------------

RoiHead::RoiHead(int in_features, int hidden, int num_classes)
    : fc_("head.fc", in_features, hidden), cls_("head.cls", hidden, num_classes + 1), box_("head.box", hidden, 4) {}

void RoiHead::init(Rng& rng) {
  fc_.init(rng);
  cls_.init(rng, 0.01);
  box_.init(rng, 0.001);
}

RoiHead::Trace RoiHead::forward(const Tensor& pooled) const {
  Trace t;
  t.input = pooled;
  const int R = pooled.dim(0);
  t.input.reshape({R, R ? static_cast<int>(pooled.size() / R) : fc_.in_features()});
  t.hidden = fc_.forward(t.input);
  relu_inplace(t.hidden);
  t.logits = cls_.forward(t.hidden);
  t.deltas = box_.forward(t.hidden);
  return t;
}

Tensor RoiHead::backward(const Trace& trace, const Tensor& grad_logits, const Tensor& grad_deltas,
                         const std::vector<int>& pooled_shape) {
  Tensor g_cls, g_box;
  cls_.backward(trace.hidden, grad_logits, &g_cls);
  box_.backward(trace.hidden, grad_deltas, &g_box);
  for (std::size_t i = 0; i < g_cls.size(); ++i) g_cls[i] += g_box[i];
  relu_backward_inplace(trace.hidden, g_cls);
  Tensor g_in;
  fc_.backward(trace.input, g_cls, &g_in);
  g_in.reshape(pooled_shape);
  return g_in;
}

std::vector<Param*> RoiHead::params() {
  std::vector<Param*> out;
  for (Linear* l : {&fc_, &cls_, &box_})
    for (Param* p : l->params()) out.push_back(p);
  return out;
}

// ---- Losses -----------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  const int R = logits.dim(0), K = logits.dim(1);
  for (int r = 0; r < R; ++r) {
    double* row = p.data() + static_cast<std::size_t>(r) * K;
    const double m = *std::max_element(row, row + K);
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += (row[k] = std::exp(row[k] - m));
    for (int k = 0; k < K; ++k) row[k] /= s;
  }
  return p;
}

LossWithGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const int R = logits.dim(0), K = logits.dim(1);
  require(static_cast<int>(labels.size()) == R, "softmax_cross_entropy: label count");
  LossWithGrad out{0.0, softmax_rows(logits)};
  if (R == 0) return out;
  for (int r = 0; r < R; ++r) {
    const double* z = logits.data() + static_cast<std::size_t>(r) * K;
    const double m = *std::max_element(z, z + K);
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += std::exp(z[k] - m);
    out.value += (m + std::log(s)) - z[labels[r]];
    out.grad[static_cast<std::size_t>(r) * K + labels[r]] -= 1.0;
  }
  out.value /= R;
  for (double& g : out.grad.values()) g /= R;
  return out;
}

double cross_entropy_from_posteriors(const Tensor& posteriors, std::span<const int> labels) {
  const int R = posteriors.dim(0), K = posteriors.dim(1);
  require(static_cast<int>(labels.size()) == R, "cross_entropy_from_posteriors: label count");
  if (R == 0) return 0.0;
  double v = 0.0;
  for (int r = 0; r < R; ++r) v -= std::log(clamp_prob(posteriors[static_cast<std::size_t>(r) * K + labels[r]]));
  return v / R;
}

LossWithGrad sigmoid_cross_entropy(std::span<const double> logits, std::span<const int> labels, int normalizer) {
  require(logits.size() == labels.size(), "sigmoid_cross_entropy: length mismatch");
  LossWithGrad out{0.0, Tensor({static_cast<int>(logits.size())})};
  const double norm = std::max(1, normalizer);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (labels[i] < 0) continue;
    const double z = logits[i], y = labels[i];
    out.value += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    out.grad[i] = (sigmoid(z) - y) / norm;
  }
  out.value /= norm;
  return out;
}

LossWithGrad smooth_l1(const Tensor& pred, const Tensor& target, std::span<const int> row_mask, double beta,
                       double normalizer) {
  require(pred.shape() == target.shape() && pred.dim(1) == 4, "smooth_l1: shapes");
  require(static_cast<int>(row_mask.size()) == pred.dim(0), "smooth_l1: mask length");
  LossWithGrad out{0.0, Tensor(pred.shape())};
  const double norm = std::max(1.0, normalizer);
  for (int r = 0; r < pred.dim(0); ++r) {
    if (!row_mask[r]) continue;
    for (int k = 0; k < 4; ++k) {
      const std::size_t i = static_cast<std::size_t>(r) * 4 + k;
      const double x = pred[i] - target[i];
      out.value += smooth_l1_value(x, beta);
      out.grad[i] = smooth_l1_grad(x, beta) / norm;
    }
  }
  out.value /= norm;
  return out;
}

AnchorTargets assign_anchor_targets(std::span<const BoundingBox> anchors, const std::vector<ObjectInstance>& gt,
                                    const RpnSettings& s, Rng& rng) {
  const int N = static_cast<int>(anchors.size()), G = static_cast<int>(gt.size());
  AnchorTargets t;
  t.labels.assign(N, -1);
  t.deltas = Tensor({N, 4});
  std::vector<double> best(N, 0.0);
  std::vector<int> arg(N, -1);
  std::vector<double> gt_best(G, 0.0);
  for (int i = 0; i < N; ++i)
    for (int g = 0; g < G; ++g) {
      const double v = iou(anchors[i], gt[g].box);
      if (v > best[i]) best[i] = v, arg[i] = g;
      gt_best[g] = std::max(gt_best[g], v);
    }
  for (int i = 0; i < N; ++i) {
    if (best[i] < s.negative_iou) t.labels[i] = 0;
    if (best[i] >= s.positive_iou) t.labels[i] = 1;
  }
  for (int g = 0; g < G; ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (int i = 0; i < N; ++i)
      if (iou(anchors[i], gt[g].box) == gt_best[g]) t.labels[i] = 1, arg[i] = g;
  }
  std::vector<int> pos, neg;
  for (int i = 0; i < N; ++i) (t.labels[i] == 1 ? pos : neg).push_back(i);
  neg.erase(std::remove_if(neg.begin(), neg.end(), [&](int i) { return t.labels[i] != 0; }), neg.end());
  const int max_pos = static_cast<int>(s.batch * s.positive_fraction);
  pos = shuffled_prefix(std::move(pos), max_pos, rng);
  neg = shuffled_prefix(std::move(neg), s.batch - static_cast<int>(pos.size()), rng);
  std::fill(t.labels.begin(), t.labels.end(), -1);
  for (int i : pos) {
    t.labels[i] = 1;
    const auto d = encode_box(anchors[i], gt[arg[i]].box, kRpnBoxWeights);
    for (int k = 0; k < 4; ++k) t.deltas[static_cast<std::size_t>(i) * 4 + k] = d[k];
  }
  for (int i : neg) t.labels[i] = 0;
  t.sampled = static_cast<int>(pos.size() + neg.size());
  return t;
}

int assign_proposal_class(const BoundingBox& proposal, const std::vector<ObjectInstance>& gt, int num_classes,
                          double fg_iou) {
  double best = 0.0;
  int cls = num_classes;
  for (const auto& g : gt) {
    const double v = iou(proposal, g.box);
    if (v > best) best = v, cls = g.class_id;
  }
  return best >= fg_iou ? cls : num_classes;
}

RoiTargets sample_rois(std::span<const BoundingBox> proposals, const std::vector<ObjectInstance>& gt,
                       int num_classes, const RoiSettings& s, Rng& rng) {
  std::vector<BoundingBox> cands(proposals.begin(), proposals.end());
  for (const auto& g : gt) cands.push_back(g.box);
  const int N = static_cast<int>(cands.size());
  std::vector<double> best(N, 0.0);
  std::vector<int> arg(N, -1);
  for (int i = 0; i < N; ++i)
    for (int g = 0; g < static_cast<int>(gt.size()); ++g) {
      const double v = iou(cands[i], gt[g].box);
      if (v > best[i]) best[i] = v, arg[i] = g;
    }
  std::vector<int> fg, bg;
  for (int i = 0; i < N; ++i) {
    if (best[i] >= s.fg_iou) fg.push_back(i);
    else if (best[i] < s.bg_iou) bg.push_back(i);
  }
  fg = shuffled_prefix(std::move(fg), static_cast<int>(std::lround(s.batch * s.fg_fraction)), rng);
  bg = shuffled_prefix(std::move(bg), s.batch - static_cast<int>(fg.size()), rng);
  RoiTargets t;
  const int R = static_cast<int>(fg.size() + bg.size());
  t.deltas = Tensor({R, 4});
  for (int i : fg) {
    const int r = static_cast<int>(t.boxes.size());
    t.boxes.push_back(cands[i]);
    t.labels.push_back(gt[arg[i]].class_id);
    t.foreground.push_back(1);
    const auto d = encode_box(cands[i], gt[arg[i]].box, kRoiBoxWeights);
    for (int k = 0; k < 4; ++k) t.deltas[static_cast<std::size_t>(r) * 4 + k] = d[k];
  }
  for (int i : bg) {
    t.boxes.push_back(cands[i]);
    t.labels.push_back(num_classes);
    t.foreground.push_back(0);
  }
  return t;
}

DetectionLoss detection_loss(const DetectionSample& sample, const DetectionLossInputs& in) {
  if (sample.domain() != Domain::source)
    throw ContractError("detection_loss: target-domain sample '" + sample.id() + "' has no training labels");
  require(in.rpn && in.anchor_targets && in.roi_logits && in.roi_deltas && in.roi_targets,
          "detection_loss: missing inputs");
  DetectionLoss out;
  const auto& at = *in.anchor_targets;
  const int A = in.anchors_per_cell;
  const int N = static_cast<int>(at.labels.size());

  std::vector<double> logits(N);
  Tensor pred({N, 4});
  std::vector<int> pos_mask(N);
  for (int i = 0; i < N; ++i) {
    logits[i] = anchor_logit(*in.rpn, i, A);
    const auto d = anchor_deltas(*in.rpn, i, A);
    for (int k = 0; k < 4; ++k) pred[static_cast<std::size_t>(i) * 4 + k] = d[k];
    pos_mask[i] = at.labels[i] == 1;
  }
  const auto obj = sigmoid_cross_entropy(logits, at.labels, at.sampled);
  const auto rbox = smooth_l1(pred, at.deltas, pos_mask, 1.0 / 9.0, at.sampled);
  out.terms.rpn_objectness = obj.value;
  out.terms.rpn_box = rbox.value;
  out.grad_rpn_logits = Tensor(in.rpn->logits.shape());
  out.grad_rpn_deltas = Tensor(in.rpn->deltas.shape());
  const int w = in.rpn->logits.dim(2);
  for (int i = 0; i < N; ++i) {
    const int cell = i / A, a = i % A, y = cell / w, x = cell % w;
    out.grad_rpn_logits.at(a, y, x) = obj.grad[i];
    for (int k = 0; k < 4; ++k) out.grad_rpn_deltas.at(4 * a + k, y, x) = rbox.grad[static_cast<std::size_t>(i) * 4 + k];
  }

  const auto& rt = *in.roi_targets;
  const auto cls = softmax_cross_entropy(*in.roi_logits, rt.labels);
  const auto box = smooth_l1(*in.roi_deltas, rt.deltas, rt.foreground, 1.0, static_cast<double>(rt.labels.size()));
  out.terms.roi_classification = cls.value;
  out.terms.roi_box = box.value;
  out.grad_roi_logits = cls.grad;
  out.grad_roi_deltas = box.grad;
  return out;
}

std::vector<Detection> postprocess_detections(const ProposalBatch& p, int image_w, int image_h,
                                              const InferenceSettings& s) {
  const int R = static_cast<int>(p.size());
  const int K = p.class_posteriors.dim(1), C = K - 1;
  std::vector<Detection> all;
  for (int c = 0; c < C; ++c) {
    std::vector<BoundingBox> boxes;
    std::vector<double> scores;
    for (int r = 0; r < R; ++r) {
      const double score = p.class_posteriors[static_cast<std::size_t>(r) * K + c];
      if (score < s.score_threshold) continue;
      const std::span<const double> d(p.box_deltas.data() + static_cast<std::size_t>(r) * 4, 4);
      const BoundingBox b = decode_box(p.boxes[r], d, kRoiBoxWeights).clipped(image_w, image_h);
      if (!b.valid()) continue;
      boxes.push_back(b);
      scores.push_back(score);
    }
    for (int k : nms(boxes, scores, s.nms_threshold, s.max_detections)) all.push_back({boxes[k], c, scores[k]});
  }
  std::stable_sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(all.size()) > s.max_detections) all.resize(s.max_detections);
  return all;
}

}  // namespace catreg
