#include "catreg/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "catreg/errors.hpp"

namespace catreg {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'T', 'R', 'E', 'G', 'C', 'K'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint truncated");
  return v;
}

int feature_extent(int image_size) {
  int e = image_size;
  for (int i = 0; i < 3; ++i) e = (e + 2 - 3) / 2 + 1;
  return e;
}

}  // namespace

// ---- Injected alignment terms ----------------------------------------------

FocalGlobalTerm::FocalGlobalTerm(int in_channels, int hidden, double gamma)
    : hidden_("sw_global.fc1", in_channels, hidden), out_("sw_global.fc2", hidden, 1), gamma_(gamma) {}

void FocalGlobalTerm::init(Rng& rng) {
  hidden_.init(rng);
  out_.init(rng, 0.01);
}

double FocalGlobalTerm::evaluate(const Tensor& features, Domain domain) const {
  Tensor h = hidden_.forward(global_average_pool(features));
  relu_inplace(h);
  const double p = clamp_prob(sigmoid(out_.forward(h)[0]));
  const double pt = domain == Domain::target ? p : 1.0 - p;
  return -std::pow(1.0 - pt, gamma_) * std::log(pt);
}

double FocalGlobalTerm::forward_backward(const Tensor& features, Domain domain, double loss_scale,
                                         Tensor& grad_features) {
  const Tensor pooled = global_average_pool(features);
  Tensor h = hidden_.forward(pooled);
  relu_inplace(h);
  const Tensor z = out_.forward(h);
  const double p = clamp_prob(sigmoid(z[0]));
  const bool tgt = domain == Domain::target;
  const double pt = tgt ? p : 1.0 - p;
  const double loss = -std::pow(1.0 - pt, gamma_) * std::log(pt);
  const double dpt = gamma_ * std::pow(1.0 - pt, gamma_ - 1.0) * std::log(pt) - std::pow(1.0 - pt, gamma_) / pt;
  Tensor gz({1, 1});
  gz[0] = loss_scale * prob_grad_to_logit(tgt ? dpt : -dpt, z[0]);
  Tensor gh, gp;
  out_.backward(h, gz, &gh);
  relu_backward_inplace(h, gh);
  hidden_.backward(pooled, gh, &gp);
  const int d = features.dim(0), hw = features.dim(1) * features.dim(2);
  grad_features = Tensor(features.shape());
  for (int c = 0; c < d; ++c)
    for (int i = 0; i < hw; ++i) grad_features[static_cast<std::size_t>(c) * hw + i] = gp[c] / hw;
  return loss;
}

std::vector<Param*> FocalGlobalTerm::params() {
  auto a = hidden_.params();
  for (Param* p : out_.params()) a.push_back(p);
  return a;
}

LeastSquaresLocalTerm::LeastSquaresLocalTerm(int in_channels, int hidden)
    : hidden_("sw_local.conv1", in_channels, hidden, {1, 1, 0}), out_("sw_local.conv2", hidden, 1, {1, 1, 0}) {}

void LeastSquaresLocalTerm::init(Rng& rng) {
  hidden_.init(rng);
  out_.init(rng, 0.01);
}

double LeastSquaresLocalTerm::evaluate(const Tensor& features, Domain domain) const {
  Tensor h = hidden_.forward(features);
  relu_inplace(h);
  const Tensor z = out_.forward(h);
  const double D = domain_label(domain);
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = sigmoid(z[i]);
    loss += 0.5 * (p - D) * (p - D);
  }
  return loss / z.size();
}

double LeastSquaresLocalTerm::forward_backward(const Tensor& features, Domain domain, double loss_scale,
                                               Tensor& grad_features) {
  Tensor h = hidden_.forward(features);
  relu_inplace(h);
  const Tensor z = out_.forward(h);
  const double D = domain_label(domain);
  const double n = static_cast<double>(z.size());
  double loss = 0.0;
  Tensor gz(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = sigmoid(z[i]);
    loss += 0.5 * (p - D) * (p - D);
    gz[i] = loss_scale * (p - D) / n * p * (1.0 - p);
  }
  Tensor gh;
  out_.backward(h, gz, &gh);
  relu_backward_inplace(h, gh);
  hidden_.backward(features, gh, &grad_features);
  return loss / n;
}

std::vector<Param*> LeastSquaresLocalTerm::params() {
  auto a = hidden_.params();
  for (Param* p : out_.params()) a.push_back(p);
  return a;
}

// ---- Model ------------------------------------------------------------------

ModelConfig model_config_for(int num_classes, int image_size) {
  ModelConfig c;
  c.num_classes = num_classes;
  c.image_size = image_size;
  return c;
}

CatRegModel::CatRegModel(ModelConfig config)
    : config_(std::move(config)),
      backbone_(config_.backbone_widths),
      rpn_(config_.backbone_widths.back(), config_.rpn_hidden, config_.rpn.anchors_per_cell()),
      head_(config_.pooled_features(), config_.head_hidden, config_.num_classes),
      icr_(config_.backbone_widths.back(), config_.num_classes),
      image_domain_(config_.backbone_widths.back(), config_.image_domain_hidden),
      instance_domain_(config_.pooled_features(), config_.instance_domain_hidden),
      global_(std::make_unique<FocalGlobalTerm>(config_.backbone_widths.back(), 32)),
      local_(std::make_unique<LeastSquaresLocalTerm>(backbone_.early_channels(), 16)) {
  require(config_.num_classes >= 1, "ModelConfig: num_classes must be positive");
  const int e = feature_extent(config_.image_size);
  anchors_ = generate_anchors(e, e, backbone_.stride(), config_.rpn.anchor_scales, config_.rpn.anchor_ratios);
}

void CatRegModel::init(std::uint64_t seed) {
  Rng rng(seed ^ 0x1A17C0DEULL);
  backbone_.init(rng);
  rpn_.init(rng);
  head_.init(rng);
  icr_.init(rng);
  image_domain_.init(rng);
  instance_domain_.init(rng);
  global_->init(rng);
  local_->init(rng);
  for (Param* p : params()) p->momentum.fill(0.0);
  zero_grad();
}

std::vector<Param*> CatRegModel::params() {
  std::vector<Param*> out;
  auto append = [&](std::vector<Param*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  append(backbone_.params());
  append(rpn_.params());
  append(head_.params());
  append(icr_.params());
  append(image_domain_.params());
  append(instance_domain_.params());
  append(global_->params());
  append(local_->params());
  return out;
}

void CatRegModel::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

void CatRegModel::save_checkpoint(const std::filesystem::path& path, std::int64_t iteration) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kCheckpointFormatVersion);
    put<std::int32_t>(os, config_.num_classes);
    put<std::int32_t>(os, config_.image_size);
    const auto ps = params();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ps.size()));
    for (const Param* p : ps) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
      os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
      for (int d : p->value.shape()) put<std::int32_t>(os, d);
    }
    for (const Param* p : ps) {
      os.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * 8));
      os.write(reinterpret_cast<const char*>(p->momentum.data()), static_cast<std::streamsize>(p->momentum.size() * 8));
    }
    put<std::int64_t>(os, iteration);
    if (!os) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

CheckpointHeader read_header(std::istream& is, const std::string& where) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(where + ": not a checkpoint file");
  CheckpointHeader h;
  h.format_version = get<std::uint32_t>(is);
  if (h.format_version != kCheckpointFormatVersion)
    throw DataError(where + ": checkpoint format " + std::to_string(h.format_version) + ", expected " +
                    std::to_string(kCheckpointFormatVersion));
  h.num_classes = get<std::int32_t>(is);
  h.image_size = get<std::int32_t>(is);
  const auto n = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = get<std::uint32_t>(is);
    if (len > 4096) throw DataError(where + ": corrupt parameter name");
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rank = get<std::uint32_t>(is);
    if (rank > 8) throw DataError(where + ": corrupt parameter rank");
    std::vector<int> dims(rank);
    for (auto& d : dims) d = get<std::int32_t>(is);
    h.shapes.emplace_back(std::move(name), std::move(dims));
  }
  return h;
}

}  // namespace

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path.string());
  return read_header(is, path.string());
}

std::int64_t CatRegModel::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path.string());
  const auto h = read_header(is, path.string());
  if (h.num_classes != config_.num_classes)
    throw DataError("checkpoint has " + std::to_string(h.num_classes) + " classes, model expects " +
                    std::to_string(config_.num_classes));
  if (h.image_size != config_.image_size)
    throw DataError("checkpoint image_size " + std::to_string(h.image_size) + " != " +
                    std::to_string(config_.image_size));
  const auto ps = params();
  if (h.shapes.size() != ps.size()) throw DataError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (h.shapes[i].first != ps[i]->name || h.shapes[i].second != ps[i]->value.shape())
      throw DataError("checkpoint parameter '" + h.shapes[i].first + "' does not match model parameter '" +
                      ps[i]->name + "'");
  for (Param* p : ps) {
    is.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * 8));
    is.read(reinterpret_cast<char*>(p->momentum.data()), static_cast<std::streamsize>(p->momentum.size() * 8));
  }
  const auto iteration = get<std::int64_t>(is);
  zero_grad();
  return iteration;
}

InferenceResult run_inference(const CatRegModel& model, const DetectionSample& sample, int max_proposals) {
  const auto& cfg = model.config();
  InferenceResult r;
  r.backbone = model.backbone().forward(sample.image());
  const Tensor& fm = r.backbone.acts.back();
  r.rpn = model.rpn().forward(fm);
  r.proposals = select_proposals(model.anchors(), r.rpn, cfg.rpn, sample.width(), sample.height(), max_proposals);
  r.proposals.image_id = sample.id();
  r.proposals.domain = sample.domain();
  r.proposals.roi_features = roi_extract(fm, model.backbone().stride(), r.proposals.boxes, cfg.roi_align);
  r.head = model.head().forward(r.proposals.roi_features);
  r.proposals.class_posteriors = softmax_rows(r.head.logits);
  r.proposals.box_deltas = r.head.deltas;
  r.detections = postprocess_detections(r.proposals, sample.width(), sample.height(), cfg.inference);
  return r;
}

}  // namespace catreg
