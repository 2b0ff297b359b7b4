#pragma once

// Adversarial domain alignment: gradient reversal, the per-activation image
// domain classifier, the per-RoI instance domain classifier, and their losses.
// Losses return gradients with respect to the (clamped) probabilities;
// `prob_grad_to_logit` maps them back through the sigmoid. The cross-entropy
// losses also return the logit gradient w (p - D) directly: it is exact inside
// the clamp and keeps a saturated classifier trainable outside it.

#include <span>
#include <vector>

#include "catreg/dataset.hpp"
#include "catreg/layers.hpp"

namespace catreg {

struct GrlConfig {
  double lambda_weight = 1.0;
};

class GradientReversal {
 public:
  enum class Mode { reverse, identity };

  explicit GradientReversal(GrlConfig config = {}, Mode mode = Mode::reverse);

  const Tensor& forward(const Tensor& x) const { return x; }
  // -lambda * upstream (reverse) or upstream unchanged (identity).
  Tensor backward(const Tensor& upstream) const;
  // Row r of upstream (first dimension) is additionally scaled by row_weights[r].
  Tensor backward_weighted_rows(const Tensor& upstream, std::span<const double> row_weights) const;

  double lambda_weight() const { return config_.lambda_weight; }

 private:
  GrlConfig config_;
  Mode mode_;
};

struct AlignmentOutputs {
  Tensor image_domain_map;  // (h, w), D^(u,v)
  std::vector<double> instance_domain_probs;
  Domain domain = Domain::source;
};

struct ProbLoss {
  double value = 0.0;
  std::vector<double> grad;        // dL/dprob, one entry per input probability
  std::vector<double> grad_logit;  // dL/dlogit
};

inline double domain_label(Domain d) { return d == Domain::target ? 1.0 : 0.0; }

// Summed (not averaged) over locations.
ProbLoss image_align_loss(const Tensor& image_domain_map, Domain domain);
// Empty weights means all ones.
ProbLoss instance_align_loss(std::span<const double> instance_domain_probs, Domain domain,
                             std::span<const double> weights = {});

struct ConsistencyLoss {
  double value = 0.0;
  Tensor grad_map;
  std::vector<double> grad_instances;
};

// sum_j | mean_{u,v} D^(u,v) - D_j |. Zero for an empty proposal set.
ConsistencyLoss consistency_loss(const Tensor& image_domain_map, std::span<const double> instance_domain_probs);

// dL/dz = dL/dp * p (1 - p), zero where the clamp was active.
double prob_grad_to_logit(double grad_prob, double logit);

// Two 1x1 convolutions applied at every location of the backbone map.
class ImageDomainClassifier {
 public:
  ImageDomainClassifier() = default;
  ImageDomainClassifier(int in_channels, int hidden);

  struct Trace {
    Tensor hidden;
    Tensor logits;  // (1, h, w)
    Tensor probs;   // (h, w), clamped
  };

  void init(Rng& rng);
  Trace forward(const Tensor& features) const;
  // grad_probs is (h, w). Writes dL/dfeatures.
  void backward(const Tensor& features, const Trace& trace, const Tensor& grad_probs, Tensor& grad_features);
  // Same, starting from a (1, h, w) logit gradient.
  void backward_logits(const Tensor& features, const Trace& trace, const Tensor& grad_logits, Tensor& grad_features);
  std::vector<Param*> params();

 private:
  Conv2d hidden_, out_;
};

// Two-layer perceptron on flattened RoI features.
class InstanceDomainClassifier {
 public:
  InstanceDomainClassifier() = default;
  InstanceDomainClassifier(int in_features, int hidden);

  struct Trace {
    Tensor input;   // (R, D)
    Tensor hidden;
    Tensor logits;  // (R, 1)
    std::vector<double> probs;
  };

  void init(Rng& rng);
  Trace forward(const Tensor& pooled) const;
  // Returns dL/dinput shaped (R, D).
  Tensor backward(const Trace& trace, std::span<const double> grad_probs);
  Tensor backward_logits(const Trace& trace, std::span<const double> grad_logits);
  std::vector<Param*> params();

 private:
  Linear hidden_, out_;
};

}  // namespace catreg
