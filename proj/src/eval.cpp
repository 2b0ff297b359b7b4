#include "catreg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "catreg/errors.hpp"

namespace catreg {

double average_precision(const std::vector<bool>& tp, int num_gt) {
  if (num_gt <= 0) return 0.0;
  const std::size_t n = tp.size();
  std::vector<double> precision(n), recall(n);
  int cum_tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    cum_tp += tp[k] ? 1 : 0;
    precision[k] = static_cast<double>(cum_tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(cum_tp) / num_gt;
  }
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (recall[k] > prev_recall) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
  }
  return ap;
}

MapResult map_score(std::span<const ImageDetections> images, int num_classes, double iou_threshold) {
  MapResult r;
  r.per_class_ap.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  r.gt_counts.assign(num_classes, 0);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    struct Ranked {
      double score;
      int image;
      const BoundingBox* box;
    };
    std::vector<Ranked> ranked;
    std::vector<std::vector<int>> gt_index(images.size());
    int num_gt = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (const auto& d : images[i].detections)
        if (d.class_id == c) ranked.push_back({d.score, static_cast<int>(i), &d.box});
      for (std::size_t g = 0; g < images[i].ground_truth.size(); ++g)
        if (images[i].ground_truth[g].class_id == c) gt_index[i].push_back(static_cast<int>(g));
      num_gt += static_cast<int>(gt_index[i].size());
    }
    r.gt_counts[c] = num_gt;
    if (num_gt == 0) continue;
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
    std::vector<std::vector<bool>> used(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(gt_index[i].size(), false);
    std::vector<bool> tp(ranked.size(), false);
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      const auto& gts = gt_index[ranked[k].image];
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const double o = iou(*ranked[k].box, images[ranked[k].image].ground_truth[gts[g]].box);
        if (o > best_iou) {
          best_iou = o;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0 && best_iou >= iou_threshold && !used[ranked[k].image][best]) {
        used[ranked[k].image][best] = true;
        tp[k] = true;
      }
    }
    r.per_class_ap[c] = average_precision(tp, num_gt);
    sum += r.per_class_ap[c];
    ++counted;
  }
  r.map = counted ? sum / counted : 0.0;
  return r;
}

void FeatureSet::validate() const {
  if (points.rank() != 2 || rows() < 1) throw ContractError("feature set: needs at least one row");
  if (static_cast<int>(tags.size()) != rows()) throw ContractError("feature set: tag count differs from row count");
  for (double v : points.values())
    if (!std::isfinite(v)) throw ContractError("feature set: non-finite entry");
}

std::vector<int> min_cost_assignment(std::span<const double> cost, int n) {
  require(n >= 0 && cost.size() == static_cast<std::size_t>(n) * n, "assignment: cost must be n x n");
  // Shortest augmenting path with potentials; arrays are 1-based, column 0 is a sentinel.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double emd_distance(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "emd: point sets must be (N, d) matrices");
  if (a.dim(0) != b.dim(0))
    throw ContractError("emd: unequal point counts; resample with sample_balanced_instances so both sides match");
  require(a.dim(1) == b.dim(1), "emd: point dimensions differ");
  const int n = a.dim(0), d = a.dim(1);
  require(n > 0, "emd: empty point sets");
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = a[static_cast<std::size_t>(i) * d + k] - b[static_cast<std::size_t>(j) * d + k];
        s += diff * diff;
      }
      cost[static_cast<std::size_t>(i) * n + j] = std::sqrt(s);
    }
  const auto match = min_cost_assignment(cost, n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost[static_cast<std::size_t>(i) * n + match[i]];
  return total / n;
}

double emd_distance(const FeatureSet& source, const FeatureSet& target) {
  source.validate();
  target.validate();
  return emd_distance(source.points, target.points);
}

BalancedSelection sample_balanced_instances(const DomainPair& data, int num_classes, int per_class_count,
                                            std::uint64_t seed, std::vector<std::string>* warnings) {
  require(per_class_count >= 0, "balanced sampling: per_class_count must be >= 0");
  BalancedSelection sel;
  sel.source.resize(num_classes);
  sel.target.resize(num_classes);
  auto collect = [&](const std::vector<DetectionSample>& samples, int c) {
    std::vector<InstanceRef> refs;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const auto& inst = samples[s].eval_instances();
      for (std::size_t k = 0; k < inst.size(); ++k)
        if (inst[k].class_id == c) refs.push_back({static_cast<int>(s), static_cast<int>(k)});
    }
    return refs;
  };
  for (int c = 0; c < num_classes; ++c) {
    auto src = collect(data.source, c);
    auto tgt = collect(data.target, c);
    const std::size_t k = std::min({static_cast<std::size_t>(per_class_count / 2), src.size(), tgt.size()});
    if (k == 0) {
      sel.skipped_classes.push_back(c);
      if (warnings)
        warnings->push_back("class " + std::to_string(c) + " skipped: " + std::to_string(src.size()) +
                            " source / " + std::to_string(tgt.size()) + " target instances");
      continue;
    }
    Rng rs(derive_seed(seed, 0xBA1, static_cast<std::uint64_t>(c), 0));
    Rng rt(derive_seed(seed, 0xBA1, static_cast<std::uint64_t>(c), 1));
    std::shuffle(src.begin(), src.end(), rs);
    std::shuffle(tgt.begin(), tgt.end(), rt);
    sel.source[c].assign(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(k));
    sel.target[c].assign(tgt.begin(), tgt.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return sel;
}

FeatureSet image_features(const CatRegModel& model, std::span<const DetectionSample> samples) {
  FeatureSet set;
  const int d = model.backbone().out_channels();
  set.points = Tensor({static_cast<int>(samples.size()), d});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto trace = model.backbone().forward(samples[i].image());
    const Tensor g = global_average_pool(trace.acts[Backbone::kLayers]);
    std::copy(g.values().begin(), g.values().end(), set.points.data() + i * d);
    set.tags.push_back({samples[i].domain(), -1, samples[i].id()});
  }
  return set;
}

FeatureSet instance_features(const CatRegModel& model, std::span<const DetectionSample> samples,
                             std::span<const InstanceRef> refs) {
  FeatureSet set;
  const int d = model.config().pooled_features();
  set.points = Tensor({static_cast<int>(refs.size()), d});
  // Group by sample so each backbone pass is reused.
  std::vector<std::size_t> order(refs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return refs[a].sample < refs[b].sample; });
  set.tags.resize(refs.size());
  int cached = -1;
  Tensor fm;
  for (std::size_t idx : order) {
    const auto& ref = refs[idx];
    require(ref.sample >= 0 && static_cast<std::size_t>(ref.sample) < samples.size(), "instance ref out of range");
    const auto& sample = samples[ref.sample];
    if (ref.sample != cached) {
      fm = std::move(model.backbone().forward(sample.image()).acts[Backbone::kLayers]);
      cached = ref.sample;
    }
    const auto& inst = sample.eval_instances().at(ref.instance);
    const BoundingBox box[1] = {inst.box};
    const Tensor pooled = roi_extract(fm, model.backbone().stride(), box, model.config().roi_align);
    std::copy(pooled.values().begin(), pooled.values().end(), set.points.data() + idx * d);
    set.tags[idx] = {sample.domain(), inst.class_id, sample.id()};
  }
  return set;
}

BalancedFeatures balanced_instance_features(const CatRegModel& model, const DomainPair& data,
                                            const BalancedSelection& selection) {
  std::vector<InstanceRef> src, tgt;
  for (const auto& v : selection.source) src.insert(src.end(), v.begin(), v.end());
  for (const auto& v : selection.target) tgt.insert(tgt.end(), v.begin(), v.end());
  return {instance_features(model, data.source, src), instance_features(model, data.target, tgt)};
}

void write_feature_set(const FeatureSet& set, const std::filesystem::path& matrix_path,
                       const std::filesystem::path& tags_path) {
  set.validate();
  {
    std::ofstream out(matrix_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + matrix_path.string());
    out << "rows=" << set.rows() << " cols=" << set.cols() << " dtype=float64\n";
    out.write(reinterpret_cast<const char*>(set.points.data()),
              static_cast<std::streamsize>(set.points.size() * sizeof(double)));
    if (!out) throw DataError("short write to " + matrix_path.string());
  }
  std::ofstream tags(tags_path);
  if (!tags) throw DataError("cannot write " + tags_path.string());
  for (int r = 0; r < set.rows(); ++r) {
    const auto& t = set.tags[r];
    nlohmann::json j{{"row", r}, {"domain", std::string(to_string(t.domain))}, {"class_id", t.class_id},
                     {"sample_id", t.sample_id}};
    tags << j.dump() << "\n";
  }
}

FeatureSet read_feature_set(const std::filesystem::path& matrix_path, const std::filesystem::path& tags_path) {
  std::ifstream in(matrix_path, std::ios::binary);
  if (!in) throw DataError("cannot read " + matrix_path.string());
  std::string header;
  std::getline(in, header);
  int rows = -1, cols = -1;
  char dtype[32] = {0};
  if (std::sscanf(header.c_str(), "rows=%d cols=%d dtype=%31s", &rows, &cols, dtype) != 3 ||
      std::strcmp(dtype, "float64") != 0 || rows < 0 || cols < 0)
    throw DataError("bad feature header in " + matrix_path.string());
  FeatureSet set;
  set.points = Tensor({rows, cols});
  in.read(reinterpret_cast<char*>(set.points.data()), static_cast<std::streamsize>(set.points.size() * sizeof(double)));
  if (!in) throw DataError("truncated feature matrix " + matrix_path.string());
  std::ifstream tags(tags_path);
  if (!tags) throw DataError("cannot read " + tags_path.string());
  std::string line;
  while (std::getline(tags, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("row").get<int>() != static_cast<int>(set.tags.size())) throw DataError("tag rows out of order");
      set.tags.push_back({parse_domain(j.at("domain").get<std::string>()), j.at("class_id").get<int>(),
                          j.at("sample_id").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad tag record in " + tags_path.string() + ": " + e.what());
    }
  }
  if (static_cast<int>(set.tags.size()) != rows) throw DataError("tag count differs from matrix rows");
  return set;
}

void export_features(const CatRegModel& model, std::span<const DetectionSample> samples,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_feature_set(image_features(model, samples), dir / "image_features.bin", dir / "image_tags.jsonl");
  std::vector<InstanceRef> refs;
  for (std::size_t s = 0; s < samples.size(); ++s)
    for (std::size_t k = 0; k < samples[s].eval_instances().size(); ++k)
      refs.push_back({static_cast<int>(s), static_cast<int>(k)});
  if (!refs.empty())
    write_feature_set(instance_features(model, samples, refs), dir / "instance_features.bin",
                      dir / "instance_tags.jsonl");
}

EvaluationResult evaluate_model(const CatRegModel& model, std::span<const DetectionSample> samples,
                                double iou_threshold) {
  EvaluationResult r;
  std::vector<ImageDetections> images(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].num_classes() != model.config().num_classes)
      throw ContractError("evaluate: sample class count differs from the model's");
    images[i].detections = run_inference(model, samples[i]).detections;
    images[i].ground_truth = samples[i].eval_instances();
    r.detections += static_cast<int>(images[i].detections.size());
  }
  r.images = static_cast<int>(samples.size());
  r.map = map_score(images, model.config().num_classes, iou_threshold);
  return r;
}

EvaluationResult evaluate_checkpoint(const std::filesystem::path& checkpoint, std::span<const DetectionSample> samples,
                                     double iou_threshold) {
  const auto header = read_checkpoint_header(checkpoint);
  if (samples.empty()) throw ContractError("evaluate: no samples");
  if (header.num_classes != samples.front().num_classes())
    throw ContractError("evaluate: checkpoint has " + std::to_string(header.num_classes) + " classes, dataset has " +
                        std::to_string(samples.front().num_classes()));
  CatRegModel model(model_config_for(header.num_classes, header.image_size));
  model.load_checkpoint(checkpoint);
  return evaluate_model(model, samples, iou_threshold);
}

EvidencePeak evidence_peak(const CatRegModel& model, const DetectionSample& sample) {
  EvidencePeak peak;
  const auto trace = model.backbone().forward(sample.image());
  const auto feats = model.backbone().features(trace);
  const auto pred = model.icr().forward(feats, sample.id(), sample.domain()).prediction;
  const auto& labels = sample.eval_image_labels();
  double best = -1.0;
  for (std::size_t c = 0; c < labels.size(); ++c)
    if (labels[c] && pred.probs[c] > best) {
      best = pred.probs[c];
      peak.class_id = static_cast<int>(c);
    }
  if (peak.class_id < 0) return peak;
  const Tensor maps = model.icr().evidence_maps(feats);
  const int h = maps.dim(1), w = maps.dim(2);
  double top = -std::numeric_limits<double>::infinity();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (maps.at(peak.class_id, y, x) > top) {
        top = maps.at(peak.class_id, y, x);
        peak.cell_x = x;
        peak.cell_y = y;
      }
  const double stride = model.backbone().stride();
  const double cx = (peak.cell_x + 0.5) * stride, cy = (peak.cell_y + 0.5) * stride;
  for (const auto& inst : sample.eval_instances())
    if (inst.class_id == peak.class_id && cx >= inst.box.x_min && cx <= inst.box.x_max && cy >= inst.box.y_min &&
        cy <= inst.box.y_max)
      peak.hit = true;
  return peak;
}

LocalizationScore weak_localization(const CatRegModel& model, std::span<const DetectionSample> samples) {
  LocalizationScore s;
  for (const auto& sample : samples) {
    const auto p = evidence_peak(model, sample);
    if (p.class_id < 0) continue;
    ++s.images;
    s.hits += p.hit ? 1 : 0;
  }
  return s;
}

void write_heatmaps(const CatRegModel& model, std::span<const DetectionSample> samples,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int stride = model.backbone().stride();
  for (const auto& sample : samples) {
    write_ppm(sample.image(), dir / (sample.id() + ".ppm"));
    const auto trace = model.backbone().forward(sample.image());
    const Tensor maps = model.icr().evidence_maps(model.backbone().features(trace));
    const int H = sample.height(), W = sample.width();
    for (int c = 0; c < maps.dim(0); ++c) {
      Tensor img({H, W});
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int fy = std::min(y / stride, maps.dim(1) - 1), fx = std::min(x / stride, maps.dim(2) - 1);
          img[static_cast<std::size_t>(y) * W + x] = sigmoid(maps.at(c, fy, fx));
        }
      write_pgm(img, dir / (sample.id() + "_class" + std::to_string(c) + ".pgm"));
    }
  }
}

}  // namespace catreg
