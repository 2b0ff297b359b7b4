#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "catreg/ccr.hpp"
#include "catreg/config.hpp"
#include "catreg/dataset.hpp"
#include "catreg/model.hpp"

namespace catreg {

// Ablation ladder; each mode adds one ingredient to the previous one.
enum class TrainMode { source_only, da_faster, da_faster_icr, da_faster_icr_ccr, sw_structure };

std::string_view to_string(TrainMode m);
TrainMode parse_train_mode(std::string_view s);

// How CCR weights reach the backbone: folded into the loss, or applied to the
// per-proposal gradients passing through the reversal layer. Backbone
// gradients agree; only the instance classifier's own update differs.
enum class CcrRealization { loss_weighting, gradient_weighting };

// How L_img, L_ins and L_cst are reduced inside a step: literal sums over
// map cells / proposals, or means (per image) over them.
enum class AlignmentReduction { sum, mean };

struct RunConfig {
  TrainMode mode = TrainMode::da_faster_icr_ccr;
  double lambda = 0.1;
  double lambda_prime = 1.0;
  int iters_phase1 = 1500;
  int iters_phase2 = 500;
  double lr_phase1 = 1e-2;
  double lr_phase2 = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // 0: only the final checkpoint
  std::optional<double> grl_weight;  // reversal coefficient; unset means lambda (lambda_prime in sw_structure)
  bool consistency = true;      // L_cst on/off in the DA-Faster modes
  bool icr_loss = true;         // ablation switch: drop L_ICR from the objective
  bool ccr = true;              // ablation switch: CCR weights forced to 1
  CcrRealization ccr_realization = CcrRealization::loss_weighting;
  AlignmentReduction alignment_reduction = AlignmentReduction::mean;

  int total_iters() const { return iters_phase1 + iters_phase2; }
  double learning_rate(int iter) const { return iter < iters_phase1 ? lr_phase1 : lr_phase2; }
  bool adaptive() const { return mode != TrainMode::source_only; }
  double reversal_weight() const;
  bool uses_icr() const;
  bool uses_ccr() const;
  void validate() const;
};

RunConfig run_config_from_config(const ConfigMap& map);
ConfigMap run_config_to_config(const RunConfig& c);

// Absent terms are std::nullopt; the metrics log writes them as 0 with a presence flag.
struct LossBundle {
  std::optional<double> l_det, l_icr, l_img, l_ins, l_cst, l_global, l_local;
  double total = 0.0;
};

// Total objective for the mode. Throws ContractError naming a missing
// required term.
double compose_objective(const LossBundle& parts, const RunConfig& config);

struct StepStats {
  WeightStats d_stats;
  int map_cells = 0;        // locations summed by the image alignment loss (per image)
  int source_rois = 0;
  int target_rois = 0;
  double grad_norm = 0.0;   // filled by train()
};

struct StepOutput {
  LossBundle losses;
  StepStats stats;
};

// One two-image forward/backward pass. Accumulates gradients into the model
// parameters (callers zero them first) and returns the logged parts.
StepOutput accumulate_step_gradients(CatRegModel& model, const DetectionSample& source, const DetectionSample& target,
                                     const RunConfig& config, Rng& rng);

// Momentum SGD with L2 weight decay: v = m v + lr (g + wd w); w -= v.
void sgd_update(std::vector<Param*> params, double lr, double momentum, double weight_decay);

// Joint L2 norm of the accumulated gradients.
double grad_norm(const std::vector<Param*>& params);

struct MetricsRecord {
  int iter = 0;
  double lr = 0.0;
  LossBundle losses;
  StepStats stats;
};

std::string metrics_line(const MetricsRecord& r);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints land here
  std::ostream* metrics = nullptr;               // one JSON line per iteration
  std::function<void(const MetricsRecord&)> on_step;
};

struct TrainResult {
  std::vector<MetricsRecord> log;
  long target_annotation_reads = 0;  // must be 0
  long icr_target_updates = 0;       // must be 0
  std::vector<std::filesystem::path> checkpoints;
};

// Runs the schedule on a freshly initialized model (seeded from config.seed).
TrainResult train(CatRegModel& model, const RunConfig& config, const std::vector<DetectionSample>& source,
                  const std::vector<DetectionSample>& target, const TrainOptions& options = {});

// Sample order for one epoch of one domain.
std::vector<int> epoch_order(std::uint64_t seed, Domain domain, int epoch, int count);

}  // namespace catreg
