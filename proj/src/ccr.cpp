#include "catreg/ccr.hpp"

#include <algorithm>
#include <cmath>

#include "catreg/errors.hpp"

namespace catreg {

double ccr_weight(double p_hat, double y_hat) {
  if (!(p_hat >= 0.0 && p_hat <= 1.0) || !(y_hat >= 0.0 && y_hat <= 1.0))
    throw ContractError("ccr_weight: arguments must be probabilities in [0, 1]");
  return std::exp(std::abs(p_hat - y_hat));
}

std::vector<InstanceWeight> assign_weights(const ProposalBatch& proposals, const ImageLevelPrediction& pred,
                                           Domain domain) {
  const int R = static_cast<int>(proposals.size());
  const int C = static_cast<int>(pred.probs.size());
  if (proposals.domain != domain || pred.domain != domain)
    throw ContractError("assign_weights: proposals, image prediction and domain disagree");
  if (proposals.image_id != pred.image_id)
    throw ContractError("assign_weights: proposals from '" + proposals.image_id + "' but image prediction from '" +
                        pred.image_id + "'");
  if (R > 0 && proposals.class_posteriors.dim(1) != C + 1)
    throw ContractError("assign_weights: posterior width must be num_classes + 1");

  std::vector<InstanceWeight> out(R);
  for (int j = 0; j < R; ++j) {
    const double* row = proposals.class_posteriors.data() + static_cast<std::size_t>(j) * (C + 1);
    const int arg = static_cast<int>(std::max_element(row, row + C + 1) - row);
    out[j].proposal_index = j;
    out[j].chosen_class = arg;
    if (domain == Domain::source || arg == C) continue;
    out[j].weight = ccr_weight(row[arg], pred.probs[arg]);
  }
  return out;
}

std::vector<double> weight_values(std::span<const InstanceWeight> weights) {
  std::vector<double> v;
  v.reserve(weights.size());
  for (const auto& w : weights) v.push_back(w.weight);
  return v;
}

ProbLoss weighted_instance_align(std::span<const double> probs, std::span<const InstanceWeight> weights,
                                 Domain domain) {
  if (weights.size() != probs.size())
    throw ContractError("weighted_instance_align: " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(probs.size()) + " proposals");
  return instance_align_loss(probs, domain, weight_values(weights));
}

WeightStats summarize_weights(std::span<const InstanceWeight> weights, int num_classes) {
  WeightStats s;
  s.count = static_cast<int>(weights.size());
  if (weights.empty()) return s;
  s.min = s.max = weights[0].weight;
  double sum = 0.0;
  int fg = 0;
  for (const auto& w : weights) {
    s.min = std::min(s.min, w.weight);
    s.max = std::max(s.max, w.weight);
    sum += w.weight;
    fg += w.chosen_class != num_classes;
  }
  s.mean = sum / weights.size();
  s.foreground_fraction = static_cast<double>(fg) / weights.size();
  return s;
}

}  // namespace catreg
