#include "catreg/alignment.hpp"

#include <cmath>
#include <numeric>

#include "catreg/errors.hpp"

namespace catreg {

GradientReversal::GradientReversal(GrlConfig config, Mode mode) : config_(config), mode_(mode) {
  require(config.lambda_weight >= 0.0, "GrlConfig: lambda_weight must be nonnegative");
}

Tensor GradientReversal::backward(const Tensor& upstream) const {
  Tensor g = upstream;
  if (mode_ == Mode::identity) return g;
  const double s = -config_.lambda_weight;
  for (double& v : g.values()) v *= s;
  return g;
}

Tensor GradientReversal::backward_weighted_rows(const Tensor& upstream, std::span<const double> row_weights) const {
  require(upstream.rank() >= 1 && static_cast<int>(row_weights.size()) == upstream.dim(0),
          "GradientReversal: one weight per row required");
  Tensor g = backward(upstream);
  const std::size_t row = upstream.dim(0) ? upstream.size() / upstream.dim(0) : 0;
  for (std::size_t r = 0; r < row_weights.size(); ++r)
    for (std::size_t k = 0; k < row; ++k) g[r * row + k] *= row_weights[r];
  return g;
}

ProbLoss image_align_loss(const Tensor& map, Domain domain) {
  const double D = domain_label(domain);
  ProbLoss out;
  out.grad.resize(map.size());
  out.grad_logit.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double p = clamp_prob(map[i]);
    out.value -= D * std::log(p) + (1.0 - D) * std::log(1.0 - p);
    out.grad[i] = -D / p + (1.0 - D) / (1.0 - p);
    out.grad_logit[i] = p - D;
  }
  return out;
}

ProbLoss instance_align_loss(std::span<const double> probs, Domain domain, std::span<const double> weights) {
  if (!weights.empty() && weights.size() != probs.size())
    throw ContractError("instance_align_loss: " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(probs.size()) + " proposals");
  const double D = domain_label(domain);
  ProbLoss out;
  out.grad.resize(probs.size());
  out.grad_logit.resize(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double w = weights.empty() ? 1.0 : weights[j];
    require(std::isfinite(w) && w >= 0.0, "instance_align_loss: weights must be finite and nonnegative");
    const double p = clamp_prob(probs[j]);
    out.value -= w * (D * std::log(p) + (1.0 - D) * std::log(1.0 - p));
    out.grad[j] = w * (-D / p + (1.0 - D) / (1.0 - p));
    out.grad_logit[j] = w * (p - D);
  }
  return out;
}

ConsistencyLoss consistency_loss(const Tensor& map, std::span<const double> inst) {
  ConsistencyLoss out;
  out.grad_map = Tensor(map.shape());
  out.grad_instances.assign(inst.size(), 0.0);
  if (inst.empty() || map.size() == 0) return out;
  const double mean = std::accumulate(map.values().begin(), map.values().end(), 0.0) / map.size();
  double dmean = 0.0;
  for (std::size_t j = 0; j < inst.size(); ++j) {
    const double diff = mean - inst[j];
    out.value += std::abs(diff);
    const double s = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    dmean += s;
    out.grad_instances[j] = -s;
  }
  out.grad_map.fill(dmean / map.size());
  return out;
}

double prob_grad_to_logit(double grad_prob, double logit) {
  const double p = sigmoid(logit);
  if (p < kProbEpsilon || p > 1.0 - kProbEpsilon) return 0.0;
  return grad_prob * p * (1.0 - p);
}

ImageDomainClassifier::ImageDomainClassifier(int in_channels, int hidden)
    : hidden_("img_domain.conv1", in_channels, hidden, {1, 1, 0}), out_("img_domain.conv2", hidden, 1, {1, 1, 0}) {}

void ImageDomainClassifier::init(Rng& rng) {
  hidden_.init(rng);
  out_.init(rng, 0.01);
}

ImageDomainClassifier::Trace ImageDomainClassifier::forward(const Tensor& features) const {
  Trace t;
  t.hidden = hidden_.forward(features);
  relu_inplace(t.hidden);
  t.logits = out_.forward(t.hidden);
  t.probs = Tensor({t.logits.dim(1), t.logits.dim(2)});
  for (std::size_t i = 0; i < t.probs.size(); ++i) t.probs[i] = clamp_prob(sigmoid(t.logits[i]));
  return t;
}

void ImageDomainClassifier::backward(const Tensor& features, const Trace& trace, const Tensor& grad_probs,
                                     Tensor& grad_features) {
  Tensor g_logits(trace.logits.shape());
  for (std::size_t i = 0; i < g_logits.size(); ++i) g_logits[i] = prob_grad_to_logit(grad_probs[i], trace.logits[i]);
  backward_logits(features, trace, g_logits, grad_features);
}

void ImageDomainClassifier::backward_logits(const Tensor& features, const Trace& trace, const Tensor& grad_logits,
                                            Tensor& grad_features) {
  require(grad_logits.size() == trace.logits.size(), "image domain classifier: logit gradient size mismatch");
  Tensor g_logits = grad_logits;
  g_logits.reshape(trace.logits.shape());
  Tensor g_hidden;
  out_.backward(trace.hidden, g_logits, &g_hidden);
  relu_backward_inplace(trace.hidden, g_hidden);
  hidden_.backward(features, g_hidden, &grad_features);
}

std::vector<Param*> ImageDomainClassifier::params() {
  std::vector<Param*> out;
  for (Conv2d* c : {&hidden_, &out_})
    for (Param* p : c->params()) out.push_back(p);
  return out;
}

InstanceDomainClassifier::InstanceDomainClassifier(int in_features, int hidden)
    : hidden_("ins_domain.fc1", in_features, hidden), out_("ins_domain.fc2", hidden, 1) {}

void InstanceDomainClassifier::init(Rng& rng) {
  hidden_.init(rng);
  out_.init(rng, 0.01);
}

InstanceDomainClassifier::Trace InstanceDomainClassifier::forward(const Tensor& pooled) const {
  Trace t;
  t.input = pooled;
  const int R = pooled.dim(0);
  t.input.reshape({R, R ? static_cast<int>(pooled.size() / R) : hidden_.in_features()});
  t.hidden = hidden_.forward(t.input);
  relu_inplace(t.hidden);
  t.logits = out_.forward(t.hidden);
  t.probs.resize(R);
  for (int r = 0; r < R; ++r) t.probs[r] = clamp_prob(sigmoid(t.logits[r]));
  return t;
}

Tensor InstanceDomainClassifier::backward(const Trace& trace, std::span<const double> grad_probs) {
  std::vector<double> g_logits(trace.logits.size());
  for (std::size_t i = 0; i < g_logits.size(); ++i) g_logits[i] = prob_grad_to_logit(grad_probs[i], trace.logits[i]);
  return backward_logits(trace, g_logits);
}

Tensor InstanceDomainClassifier::backward_logits(const Trace& trace, std::span<const double> grad_logits) {
  require(grad_logits.size() == trace.logits.size(), "instance domain classifier: logit gradient size mismatch");
  Tensor g_logits(trace.logits.shape());
  for (std::size_t i = 0; i < g_logits.size(); ++i) g_logits[i] = grad_logits[i];
  Tensor g_hidden, g_input;
  out_.backward(trace.hidden, g_logits, &g_hidden);
  relu_backward_inplace(trace.hidden, g_hidden);
  hidden_.backward(trace.input, g_hidden, &g_input);
  return g_input;
}

std::vector<Param*> InstanceDomainClassifier::params() {
  std::vector<Param*> out;
  for (Linear* l : {&hidden_, &out_})
    for (Param* p : l->params()) out.push_back(p);
  return out;
}

}  // namespace catreg
