#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "catreg/alignment.hpp"
#include "catreg/detector.hpp"
#include "catreg/icr.hpp"

namespace catreg {

struct ModelConfig {
  int num_classes = 3;
  int image_size = 64;
  std::array<int, Backbone::kLayers> backbone_widths{16, 32, 64, 64};
  int rpn_hidden = 32;
  int head_hidden = 64;
  kernels::RoiAlignParams roi_align{7, 2};
  int image_domain_hidden = 32;
  int instance_domain_hidden = 64;
  RpnSettings rpn;
  RoiSettings roi;
  int target_rois = 32;     // proposals per target image used for alignment / CCR
  int test_proposals = 32;  // proposals per image at inference
  InferenceSettings inference;

  int pooled_features() const {
    return backbone_widths.back() * roi_align.pooled * roi_align.pooled;
  }
};

// Which backbone activation an injected alignment term consumes.
enum class FeatureTap { backbone_output, early_conv };

// Pluggable alignment objective with the contract (features, domain) -> scalar.
// Gradient reversal is applied by the caller; the term reports the plain
// derivative of its loss.
class AlignmentTerm {
 public:
  virtual ~AlignmentTerm() = default;
  virtual std::string name() const = 0;
  virtual FeatureTap tap() const = 0;
  virtual void init(Rng& rng) = 0;
  virtual double evaluate(const Tensor& features, Domain domain) const = 0;
  // Accumulates loss_scale * dL/dparams and writes loss_scale * dL/dfeatures.
  virtual double forward_backward(const Tensor& features, Domain domain, double loss_scale, Tensor& grad_features) = 0;
  virtual std::vector<Param*> params() = 0;
};

// Default L_global: focal-style domain classifier on globally pooled backbone
// features. Stand-in only; not the strong-weak formulation.
class FocalGlobalTerm : public AlignmentTerm {
 public:
  FocalGlobalTerm(int in_channels, int hidden, double gamma = 5.0);
  std::string name() const override { return "global"; }
  FeatureTap tap() const override { return FeatureTap::backbone_output; }
  void init(Rng& rng) override;
  double evaluate(const Tensor& features, Domain domain) const override;
  double forward_backward(const Tensor& features, Domain domain, double loss_scale, Tensor& grad_features) override;
  std::vector<Param*> params() override;

 private:
  Linear hidden_, out_;
  double gamma_;
};

// Default L_local: per-location least-squares domain classifier on an early
// conv layer. Stand-in only.
class LeastSquaresLocalTerm : public AlignmentTerm {
 public:
  LeastSquaresLocalTerm(int in_channels, int hidden);
  std::string name() const override { return "local"; }
  FeatureTap tap() const override { return FeatureTap::early_conv; }
  void init(Rng& rng) override;
  double evaluate(const Tensor& features, Domain domain) const override;
  double forward_backward(const Tensor& features, Domain domain, double loss_scale, Tensor& grad_features) override;
  std::vector<Param*> params() override;

 private:
  Conv2d hidden_, out_;
};

class CatRegModel {
 public:
  explicit CatRegModel(ModelConfig config);
  CatRegModel(const CatRegModel&) = delete;
  CatRegModel& operator=(const CatRegModel&) = delete;

  void init(std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  Rpn& rpn() { return rpn_; }
  const Rpn& rpn() const { return rpn_; }
  RoiHead& head() { return head_; }
  const RoiHead& head() const { return head_; }
  IcrHead& icr() { return icr_; }
  const IcrHead& icr() const { return icr_; }
  ImageDomainClassifier& image_domain() { return image_domain_; }
  const ImageDomainClassifier& image_domain() const { return image_domain_; }
  InstanceDomainClassifier& instance_domain() { return instance_domain_; }
  const InstanceDomainClassifier& instance_domain() const { return instance_domain_; }
  AlignmentTerm& global_term() { return *global_; }
  AlignmentTerm& local_term() { return *local_; }

  // Swap in a different L_global / L_local implementation.
  void set_global_term(std::unique_ptr<AlignmentTerm> term) { global_ = std::move(term); }
  void set_local_term(std::unique_ptr<AlignmentTerm> term) { local_ = std::move(term); }

  // Anchors for the configured image size (cached).
  const std::vector<BoundingBox>& anchors() const { return anchors_; }

  std::vector<Param*> params();
  std::vector<Param*> backbone_params() { return backbone_.params(); }
  void zero_grad();

  void save_checkpoint(const std::filesystem::path& path, std::int64_t iteration = 0);
  // Refuses (DataError) when the header or any parameter shape differs.
  std::int64_t load_checkpoint(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  Backbone backbone_;
  Rpn rpn_;
  RoiHead head_;
  IcrHead icr_;
  ImageDomainClassifier image_domain_;
  InstanceDomainClassifier instance_domain_;
  std::unique_ptr<AlignmentTerm> global_;
  std::unique_ptr<AlignmentTerm> local_;
  std::vector<BoundingBox> anchors_;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct CheckpointHeader {
  std::uint32_t format_version = 0;
  int num_classes = 0;
  int image_size = 0;
  std::vector<std::pair<std::string, std::vector<int>>> shapes;
};

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Everything inference produces for one image.
struct InferenceResult {
  Backbone::Trace backbone;
  Rpn::Trace rpn;
  ProposalBatch proposals;  // with roi_features / class_posteriors / box_deltas filled
  RoiHead::Trace head;
  std::vector<Detection> detections;
};

InferenceResult run_inference(const CatRegModel& model, const DetectionSample& sample, int max_proposals);
inline InferenceResult run_inference(const CatRegModel& model, const DetectionSample& sample) {
  return run_inference(model, sample, model.config().test_proposals);
}

ModelConfig model_config_for(int num_classes, int image_size);

}  // namespace catreg
