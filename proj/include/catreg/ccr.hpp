#pragma once

// Categorical consistency regularization: per-proposal weights from the
// disagreement between the detection head's class confidence and the
// image-level classifier, applied to the instance alignment loss.

#include <span>
#include <vector>

#include "catreg/alignment.hpp"
#include "catreg/detector.hpp"
#include "catreg/icr.hpp"

namespace catreg {

struct InstanceWeight {
  int proposal_index = 0;
  int chosen_class = 0;  // argmax foreground class, or C when the head says background
  double weight = 1.0;   // in [1, e]
};

// exp(|p_hat - y_hat|); both arguments must be probabilities.
double ccr_weight(double p_hat, double y_hat);

// Source proposals and target proposals whose posterior argmax is background
// keep weight 1. Weights are constants: nothing is differentiated through them.
std::vector<InstanceWeight> assign_weights(const ProposalBatch& proposals, const ImageLevelPrediction& image_prediction,
                                           Domain domain);

std::vector<double> weight_values(std::span<const InstanceWeight> weights);

// Instance alignment loss with per-proposal weights.
ProbLoss weighted_instance_align(std::span<const double> instance_domain_probs,
                                 std::span<const InstanceWeight> weights, Domain domain);

struct WeightStats {
  double min = 1.0, mean = 1.0, max = 1.0;
  double foreground_fraction = 0.0;
  int count = 0;
};

WeightStats summarize_weights(std::span<const InstanceWeight> weights, int num_classes);

}  // namespace catreg
