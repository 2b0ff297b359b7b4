#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "catreg/tensor.hpp"

namespace catreg {

struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  BoundingBox clipped(double image_width, double image_height) const;

  bool operator==(const BoundingBox&) const = default;
};

enum class Domain : int { source = 0, target = 1 };

std::string_view to_string(Domain d);
Domain parse_domain(std::string_view s);

struct ObjectInstance {
  BoundingBox box;
  int class_id = 0;

  bool operator==(const ObjectInstance&) const = default;
};

// Reads of target-domain annotations through the training accessors are
// counted here. Evaluation code uses the explicitly named eval_* accessors.
long target_annotation_reads();
void reset_target_annotation_reads();

// One image with its annotations. The image is stored channel-major (3, H, W),
// values in [0, 1].
class DetectionSample {
 public:
  DetectionSample() = default;
  DetectionSample(std::string id, Domain domain, Tensor image, std::vector<ObjectInstance> instances,
                  int num_classes);

  const std::string& id() const { return id_; }
  Domain domain() const { return domain_; }
  const Tensor& image() const { return image_; }
  int height() const { return image_.dim(1); }
  int width() const { return image_.dim(2); }
  int num_classes() const { return num_classes_; }

  // Training-path accessors. Each call on a target sample bumps the
  // target-annotation read counter.
  const std::vector<ObjectInstance>& instances() const;
  const std::vector<int>& image_labels() const;

  // Evaluation/analysis accessors (mAP, EMD sampling, export). Not counted.
  const std::vector<ObjectInstance>& eval_instances() const { return instances_; }
  const std::vector<int>& eval_image_labels() const { return image_labels_; }

  bool operator==(const DetectionSample&) const = default;

 private:
  std::string id_;
  Domain domain_ = Domain::source;
  Tensor image_;
  std::vector<ObjectInstance> instances_;
  std::vector<int> image_labels_;
  int num_classes_ = 0;
};

enum class ShiftKind { fog_blend, color_shift, texture_noise };

std::string_view to_string(ShiftKind k);
ShiftKind parse_shift_kind(std::string_view s);

struct DatasetSpec {
  int num_classes = 3;
  int image_size = 64;
  int samples_per_domain = 200;
  int val_samples_per_domain = 100;
  ShiftKind shift_kind = ShiftKind::fog_blend;
  double shift_strength = 0.6;
  std::uint64_t rng_seed = 7;

  void validate() const;  // throws ConfigError naming the field
};

inline constexpr int kMaxShapeClasses = 8;
inline constexpr double kFogColor = 0.8;
inline constexpr int kMaxInstancesPerImage = 5;
inline constexpr double kMaxInstanceOverlap = 0.3;

struct DomainPair {
  std::vector<DetectionSample> source;
  std::vector<DetectionSample> target;
};

enum class Split { train, val };

// Deterministic in spec; per-sample RNG streams make the output independent of
// how many threads render it.
DomainPair generate_dataset(const DatasetSpec& spec, Split split = Split::train);

// strength 0 is the identity; output stays in [0, 1].
Tensor apply_domain_shift(const Tensor& image, ShiftKind kind, double strength);
Tensor apply_domain_shift(const Tensor& image, std::string_view kind, double strength);

std::vector<int> image_label_vector(const std::vector<ObjectInstance>& instances, int num_classes);

// Unshifted render of one scene; exposed for the zero-strength identity check.
Tensor render_scene(const DatasetSpec& spec, Split split, Domain domain, int index,
                    std::vector<ObjectInstance>* instances = nullptr);

struct DatasetBundle {
  DatasetSpec spec;
  DomainPair train;
  DomainPair val;
};

DatasetBundle generate_bundle(const DatasetSpec& spec);

// Writes images/<id>.ppm, manifest.jsonl and dataset.cfg under dir.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_dataset(const std::filesystem::path& dir);

// Binary PPM (P6) / PGM (P5) helpers.
void write_ppm(const Tensor& image_chw, const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);
void write_pgm(const Tensor& image_hw, const std::filesystem::path& path);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace catreg
