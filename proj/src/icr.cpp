#include "catreg/icr.hpp"

#include <cmath>

#include "catreg/errors.hpp"

namespace catreg {

Tensor global_average_pool(const Tensor& fm) {
  const int d = fm.dim(0), hw = fm.dim(1) * fm.dim(2);
  Tensor out({1, d});
  for (int c = 0; c < d; ++c) {
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += fm[static_cast<std::size_t>(c) * hw + i];
    out[c] = s / hw;
  }
  return out;
}

IcrHead::IcrHead(int in_channels, int num_classes) : classifier_("icr.classifier", in_channels, num_classes) {}

void IcrHead::init(Rng& rng) { classifier_.init(rng, 0.01); }

ImageLevelPrediction prediction_from_logits(std::span<const double> logits, std::string image_id, Domain domain) {
  ImageLevelPrediction p;
  p.logits.assign(logits.begin(), logits.end());
  for (double z : logits) p.probs.push_back(clamp_prob(sigmoid(z)));
  p.image_id = std::move(image_id);
  p.domain = domain;
  return p;
}

IcrHead::Trace IcrHead::forward(const BackboneFeatures& features, std::string image_id, Domain domain) const {
  Trace t;
  t.pooled = global_average_pool(features.feature_map);
  const Tensor logits = classifier_.forward(t.pooled);
  t.prediction = prediction_from_logits(logits.values(), std::move(image_id), domain);
  return t;
}

Tensor IcrHead::evidence_maps(const BackboneFeatures& features) const {
  const Tensor& fm = features.feature_map;
  const int d = fm.dim(0), h = fm.dim(1), w = fm.dim(2), C = num_classes();
  Tensor cells({h * w, d});
  for (int c = 0; c < d; ++c)
    for (int i = 0; i < h * w; ++i) cells[static_cast<std::size_t>(i) * d + c] = fm[static_cast<std::size_t>(c) * h * w + i];
  const Tensor scores = classifier_.forward(cells);  // (h*w, C)
  Tensor maps({C, h, w});
  for (int k = 0; k < C; ++k)
    for (int i = 0; i < h * w; ++i) maps[static_cast<std::size_t>(k) * h * w + i] = scores[static_cast<std::size_t>(i) * C + k];
  return maps;
}

void IcrHead::backward(const BackboneFeatures& features, const Trace& trace, std::span<const double> grad_logits,
                       Tensor& grad_features) {
  require(static_cast<int>(grad_logits.size()) == num_classes(), "IcrHead::backward: gradient length");
  if (trace.prediction.domain == Domain::target) ++target_updates_;
  Tensor g({1, num_classes()});
  for (int k = 0; k < num_classes(); ++k) g[k] = grad_logits[k];
  Tensor g_pooled;
  classifier_.backward(trace.pooled, g, &g_pooled);
  const Tensor& fm = features.feature_map;
  const int d = fm.dim(0), hw = fm.dim(1) * fm.dim(2);
  for (int c = 0; c < d; ++c) {
    const double v = g_pooled[c] / hw;
    for (int i = 0; i < hw; ++i) grad_features[static_cast<std::size_t>(c) * hw + i] += v;
  }
}

std::vector<Param*> IcrHead::params() { return classifier_.params(); }

IcrLoss icr_loss(const ImageLevelPrediction& prediction, std::span<const int> labels) {
  if (prediction.domain != Domain::source)
    throw ContractError("icr_loss: image-level labels exist only for source images ('" + prediction.image_id + "')");
  require(labels.size() == prediction.probs.size(), "icr_loss: label vector length must equal class count");
  IcrLoss out;
  out.grad_logits.resize(labels.size());
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const double y = labels[c];
    const double p = clamp_prob(prediction.probs[c]);
    out.value -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    const double raw = prediction.logits.empty() ? p : sigmoid(prediction.logits[c]);
    out.grad_logits[c] = (raw < kProbEpsilon || raw > 1.0 - kProbEpsilon) ? 0.0 : p - y;
  }
  return out;
}

}  // namespace catreg
