#pragma once

// Evaluation and analysis: VOC-style mAP, EMD between instance-feature sets,
// feature export, and ICR evidence-map checks. Everything here reads
// annotations through the uncounted eval_* accessors.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "catreg/dataset.hpp"
#include "catreg/detector.hpp"
#include "catreg/model.hpp"

namespace catreg {

struct ImageDetections {
  std::vector<Detection> detections;
  std::vector<ObjectInstance> ground_truth;
};

struct MapResult {
  std::vector<double> per_class_ap;  // NaN for classes without ground truth
  std::vector<int> gt_counts;
  double map = 0.0;
};

// Per class: detections ranked by score (stable), each matched to its best-IoU
// ground truth of that class in the same image; a match at IoU >= threshold
// on a still-unmatched box is a true positive. AP is the area under the
// all-points interpolated PR curve; mAP averages classes with ground truth.
MapResult map_score(std::span<const ImageDetections> images, int num_classes, double iou_threshold = 0.5);

// Area under the monotone precision envelope, given per-rank TP flags.
double average_precision(const std::vector<bool>& ranked_true_positive, int num_ground_truth);

struct FeatureTag {
  Domain domain = Domain::source;
  int class_id = -1;  // -1 for image-level rows
  std::string sample_id;
};

struct FeatureSet {
  Tensor points;  // (N, d)
  std::vector<FeatureTag> tags;

  int rows() const { return points.rank() == 2 ? points.dim(0) : 0; }
  int cols() const { return points.rank() == 2 ? points.dim(1) : 0; }
  void validate() const;  // ContractError on N < 1, tag mismatch or NaN
};

// Minimum-cost perfect matching on a dense n x n cost matrix (row-major).
// Returns column assigned to each row.
std::vector<int> min_cost_assignment(std::span<const double> cost, int n);

// Mean Euclidean distance of the optimal one-to-one matching. Requires equal
// point counts and dimensions.
double emd_distance(const FeatureSet& source, const FeatureSet& target);
double emd_distance(const Tensor& source_points, const Tensor& target_points);

struct InstanceRef {
  int sample = 0;
  int instance = 0;
};

struct BalancedSelection {
  std::vector<std::vector<InstanceRef>> source, target;  // per class
  std::vector<int> skipped_classes;
};

// Per class k = min(per_class_count / 2, n_source, n_target) instances from
// each side, chosen by a seeded shuffle. Classes with k = 0 are skipped and
// reported through `warnings`.
BalancedSelection sample_balanced_instances(const DomainPair& data, int num_classes, int per_class_count,
                                            std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

// Backbone GAP vector per sample.
FeatureSet image_features(const CatRegModel& model, std::span<const DetectionSample> samples);
// Flattened RoIAlign features on ground-truth boxes.
FeatureSet instance_features(const CatRegModel& model, std::span<const DetectionSample> samples,
                             std::span<const InstanceRef> refs);

struct BalancedFeatures {
  FeatureSet source, target;
};
BalancedFeatures balanced_instance_features(const CatRegModel& model, const DomainPair& data,
                                            const BalancedSelection& selection);

// Header line "rows=N cols=D dtype=float64" followed by N*D little-endian
// doubles; tags go to a JSONL sidecar.
void write_feature_set(const FeatureSet& set, const std::filesystem::path& matrix_path,
                       const std::filesystem::path& tags_path);
FeatureSet read_feature_set(const std::filesystem::path& matrix_path, const std::filesystem::path& tags_path);

// Writes image_features.bin / image_tags.jsonl and instance_features.bin /
// instance_tags.jsonl (all ground-truth boxes) into dir.
void export_features(const CatRegModel& model, std::span<const DetectionSample> samples,
                     const std::filesystem::path& dir);

struct EvaluationResult {
  MapResult map;
  int images = 0;
  int detections = 0;
};

EvaluationResult evaluate_model(const CatRegModel& model, std::span<const DetectionSample> samples,
                                double iou_threshold = 0.5);
// ContractError when the checkpoint's class count differs from the samples'.
EvaluationResult evaluate_checkpoint(const std::filesystem::path& checkpoint, std::span<const DetectionSample> samples,
                                     double iou_threshold = 0.5);

// Evidence peak of the highest-scoring present class. hit is true when the
// peak cell center falls inside a ground-truth box of that class.
struct EvidencePeak {
  int class_id = -1;
  int cell_x = 0, cell_y = 0;
  bool hit = false;
};

EvidencePeak evidence_peak(const CatRegModel& model, const DetectionSample& sample);

struct LocalizationScore {
  int hits = 0;
  int images = 0;
  double rate() const { return images ? static_cast<double>(hits) / images : 0.0; }
};

LocalizationScore weak_localization(const CatRegModel& model, std::span<const DetectionSample> samples);

// One PPM of the input and one PGM per class (sigmoid evidence, nearest
// upsampled to image size) per sample.
void write_heatmaps(const CatRegModel& model, std::span<const DetectionSample> samples,
                    const std::filesystem::path& dir);

}  // namespace catreg
