#include "catreg/dataset.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "catreg/config.hpp"
#include "catreg/detector.hpp"
#include "catreg/errors.hpp"

namespace catreg {

namespace {

std::atomic<long> g_target_reads{0};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

bool inside_shape(int shape, double u, double v) {
  const double du = u - 0.5, dv = v - 0.5;
  switch (shape) {
    case 0: return du * du + dv * dv <= 0.25;                                     // disk
    case 1: return true;                                                          // square
    case 2: return std::abs(du) <= 0.5 * v;                                       // triangle
    case 3: return std::abs(du) <= 1.0 / 6 || std::abs(dv) <= 1.0 / 6;            // plus
    case 4: { const double r = du * du + dv * dv; return r <= 0.25 && r >= 0.09; } // ring
    case 5: return std::abs(du) + std::abs(dv) <= 0.5;                            // diamond
    case 6: return std::abs(u - v) <= 0.17 || std::abs(u + v - 1.0) <= 0.17;      // x
    default: return std::max(std::abs(du), std::abs(dv)) >= 0.3;                 // frame
  }
}

double luma(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

std::uint64_t stream_id(Split split, Domain domain) {
  return (split == Split::train ? 0 : 2) + static_cast<std::uint64_t>(domain);
}

// Scene layouts (boxes + classes) for every sample of one domain, before rendering.
std::vector<std::vector<ObjectInstance>> layout_domain(const DatasetSpec& spec, Split split, Domain domain,
                                                       int count) {
  const double S = spec.image_size;
  std::vector<std::vector<ObjectInstance>> layouts(count);
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(derive_seed(spec.rng_seed, stream_id(split, domain), i, 0));
    const int n = uniform_int(rng, 1, kMaxInstancesPerImage);
    const int min_size = std::max(4, static_cast<int>(std::lround(0.19 * S)));
    const int max_size = std::max(min_size, static_cast<int>(std::lround(0.44 * S)));
    auto& inst = layouts[i];
    for (int k = 0; k < n; ++k) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        const int size = uniform_int(rng, min_size, max_size);
        const int x = uniform_int(rng, 0, spec.image_size - size);
        const int y = uniform_int(rng, 0, spec.image_size - size);
        BoundingBox box{double(x), double(y), double(x + size), double(y + size)};
        const bool ok = std::all_of(inst.begin(), inst.end(),
                                    [&](const ObjectInstance& o) { return iou(o.box, box) <= kMaxInstanceOverlap; });
        if (ok) {
          inst.push_back({box, uniform_int(rng, 0, spec.num_classes - 1)});
          break;
        }
      }
    }
  }
  return layouts;
}

// Moves instances off over-represented classes until every class holds at
// least total / (2C) instances.
void rebalance_classes(std::vector<std::vector<ObjectInstance>>& layouts, int num_classes) {
  std::vector<int> counts(num_classes, 0);
  int total = 0;
  for (const auto& l : layouts)
    for (const auto& o : l) ++counts[o.class_id], ++total;
  const int floor_count = std::max(1, total / (2 * num_classes));
  if (total < num_classes) return;
  for (;;) {
    const int starved = static_cast<int>(std::min_element(counts.begin(), counts.end()) - counts.begin());
    if (counts[starved] >= floor_count) break;
    const int rich = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    bool moved = false;
    for (auto it = layouts.rbegin(); it != layouts.rend() && !moved; ++it)
      for (auto& o : *it)
        if (o.class_id == rich) {
          o.class_id = starved;
          --counts[rich];
          ++counts[starved];
          moved = true;
          break;
        }
    if (!moved) break;
  }
}

Tensor render(const DatasetSpec& spec, std::uint64_t seed, const std::vector<ObjectInstance>& instances) {
  const int S = spec.image_size;
  std::mt19937_64 rng(seed);
  Tensor img({3, S, S});
  std::array<double, 3> c0, c1;
  for (auto& v : c0) v = uniform(rng, 0.15, 0.85);
  for (auto& v : c1) v = uniform(rng, 0.15, 0.85);
  const int gradient = uniform_int(rng, 0, 2);  // 0 uniform, 1 horizontal, 2 vertical
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double t = gradient == 0 ? 0.0 : (gradient == 1 ? (x + 0.5) / S : (y + 0.5) / S);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = (1 - t) * c0[c] + t * c1[c];
    }
  for (const auto& inst : instances) {
    const auto& b = inst.box;
    const int cx = static_cast<int>((b.x_min + b.x_max) / 2), cy = static_cast<int>((b.y_min + b.y_max) / 2);
    const std::array<double, 3> bg{img.at(0, cy, cx), img.at(1, cy, cx), img.at(2, cy, cx)};
    std::array<double, 3> fg{};
    for (int attempt = 0; attempt < 32; ++attempt) {
      for (auto& v : fg) v = uniform(rng, 0.0, 1.0);
      if (std::abs(luma(fg) - luma(bg)) >= 0.3) break;
    }
    if (std::abs(luma(fg) - luma(bg)) < 0.3) fg = luma(bg) > 0.5 ? std::array<double, 3>{0.05, 0.05, 0.05}
                                                                   : std::array<double, 3>{0.95, 0.95, 0.95};
    const int shape = inst.class_id % kMaxShapeClasses;
    for (int y = static_cast<int>(b.y_min); y < static_cast<int>(b.y_max); ++y)
      for (int x = static_cast<int>(b.x_min); x < static_cast<int>(b.x_max); ++x) {
        const double u = (x + 0.5 - b.x_min) / b.width(), v = (y + 0.5 - b.y_min) / b.height();
        if (!inside_shape(shape, u, v)) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = fg[c];
      }
  }
  std::normal_distribution<double> noise(0.0, 0.02);
  for (double& v : img.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return img;
}

std::string sample_id(Split split, Domain domain, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%s_%04d", split == Split::train ? "train" : "val",
                domain == Domain::source ? "src" : "tgt", index);
  return buf;
}

// Fixed per-pixel pattern in [-1, 1] used by texture_noise.
double texture_value(int c, int y, int x) {
  const std::uint64_t h = splitmix((static_cast<std::uint64_t>(c) << 40) ^ (static_cast<std::uint64_t>(y) << 20) ^
                                   static_cast<std::uint64_t>(x) ^ 0x5eedULL);
  return (static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53)) * 2.0 - 1.0;
}

}  // namespace

BoundingBox BoundingBox::clipped(double image_width, double image_height) const {
  return {std::clamp(x_min, 0.0, image_width), std::clamp(y_min, 0.0, image_height),
          std::clamp(x_max, 0.0, image_width), std::clamp(y_max, 0.0, image_height)};
}

std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(std::string_view s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw DataError("unknown domain '" + std::string(s) + "'");
}

long target_annotation_reads() { return g_target_reads.load(); }
void reset_target_annotation_reads() { g_target_reads.store(0); }

DetectionSample::DetectionSample(std::string id, Domain domain, Tensor image,
                                 std::vector<ObjectInstance> instances, int num_classes)
    : id_(std::move(id)),
      domain_(domain),
      image_(std::move(image)),
      instances_(std::move(instances)),
      image_labels_(image_label_vector(instances_, num_classes)),
      num_classes_(num_classes) {
  require(image_.rank() == 3 && image_.dim(0) == 3, "DetectionSample: image must be (3, H, W)");
}

const std::vector<ObjectInstance>& DetectionSample::instances() const {
  if (domain_ == Domain::target) ++g_target_reads;
  return instances_;
}

const std::vector<int>& DetectionSample::image_labels() const {
  if (domain_ == Domain::target) ++g_target_reads;
  return image_labels_;
}

std::string_view to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::fog_blend: return "fog_blend";
    case ShiftKind::color_shift: return "color_shift";
    case ShiftKind::texture_noise: return "texture_noise";
  }
  return "?";
}

ShiftKind parse_shift_kind(std::string_view s) {
  if (s == "fog_blend") return ShiftKind::fog_blend;
  if (s == "color_shift") return ShiftKind::color_shift;
  if (s == "texture_noise") return ShiftKind::texture_noise;
  throw ConfigError("shift_kind: unknown kind '" + std::string(s) + "'");
}

void DatasetSpec::validate() const {
  if (num_classes < 2 || num_classes > kMaxShapeClasses)
    throw ConfigError("num_classes: must be in [2, " + std::to_string(kMaxShapeClasses) + "]");
  if (image_size < 32) throw ConfigError("image_size: must be >= 32");
  if (samples_per_domain < 1) throw ConfigError("samples_per_domain: must be >= 1");
  if (val_samples_per_domain < 0) throw ConfigError("val_samples_per_domain: must be >= 0");
  if (!(shift_strength >= 0.0 && shift_strength <= 1.0)) throw ConfigError("shift_strength: must be in [0, 1]");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix(splitmix(splitmix(splitmix(base) ^ a) ^ b) ^ c);
}

std::vector<int> image_label_vector(const std::vector<ObjectInstance>& instances, int num_classes) {
  std::vector<int> labels(num_classes, 0);
  for (const auto& inst : instances) {
    if (inst.class_id < 0 || inst.class_id >= num_classes)
      throw DataError("class id " + std::to_string(inst.class_id) + " outside [0, " +
                      std::to_string(num_classes - 1) + "]");
    labels[inst.class_id] = 1;
  }
  return labels;
}

Tensor apply_domain_shift(const Tensor& image, ShiftKind kind, double strength) {
  require(strength >= 0.0 && strength <= 1.0, "apply_domain_shift: strength must be in [0, 1]");
  Tensor out = image;
  if (strength == 0.0) return out;
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  constexpr std::array<double, 3> kColorOffset{0.35, 0.1, -0.35};
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double v = image.at(c, y, x);
        double r = v;
        switch (kind) {
          case ShiftKind::fog_blend: r = (1.0 - strength) * v + strength * kFogColor; break;
          case ShiftKind::color_shift: r = v + strength * kColorOffset[c % 3]; break;
          case ShiftKind::texture_noise: r = v + strength * 0.5 * texture_value(c, y, x); break;
        }
        out.at(c, y, x) = std::clamp(r, 0.0, 1.0);
      }
  return out;
}

Tensor apply_domain_shift(const Tensor& image, std::string_view kind, double strength) {
  return apply_domain_shift(image, parse_shift_kind(kind), strength);
}

Tensor render_scene(const DatasetSpec& spec, Split split, Domain domain, int index,
                    std::vector<ObjectInstance>* instances) {
  const int count = split == Split::train ? spec.samples_per_domain : spec.val_samples_per_domain;
  auto layouts = layout_domain(spec, split, domain, count);
  rebalance_classes(layouts, spec.num_classes);
  if (instances) *instances = layouts.at(index);
  return render(spec, derive_seed(spec.rng_seed, stream_id(split, domain), index, 1), layouts.at(index));
}

DomainPair generate_dataset(const DatasetSpec& spec, Split split) {
  spec.validate();
  const int count = split == Split::train ? spec.samples_per_domain : spec.val_samples_per_domain;
  DomainPair out;
  for (Domain domain : {Domain::source, Domain::target}) {
    auto layouts = layout_domain(spec, split, domain, count);
    rebalance_classes(layouts, spec.num_classes);
    std::vector<DetectionSample> samples(count);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) {
      Tensor img = render(spec, derive_seed(spec.rng_seed, stream_id(split, domain), i, 1), layouts[i]);
      if (domain == Domain::target) img = apply_domain_shift(img, spec.shift_kind, spec.shift_strength);
      samples[i] = DetectionSample(sample_id(split, domain, i), domain, std::move(img), layouts[i], spec.num_classes);
    }
    (domain == Domain::source ? out.source : out.target) = std::move(samples);
  }
  return out;
}

DatasetBundle generate_bundle(const DatasetSpec& spec) {
  DatasetBundle b;
  b.spec = spec;
  b.train = generate_dataset(spec, Split::train);
  b.val = generate_dataset(spec, Split::val);
  return b;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  const int H = image.dim(1), W = image.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0));
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::string magic;
  int W = 0, H = 0, maxval = 0;
  f >> magic >> W >> H >> maxval;
  if (magic != "P6" || W <= 0 || H <= 0 || maxval != 255) throw DataError("unsupported image " + path.string());
  f.get();
  std::vector<unsigned char> buf(static_cast<std::size_t>(H) * W * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("truncated image " + path.string());
  Tensor img({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0;
  return img;
}

void write_pgm(const Tensor& image, const std::filesystem::path& path) {
  const int H = image.dim(0), W = image.dim(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << "P5\n" << W << " " << H << "\n255\n";
  for (std::size_t i = 0; i < image.size(); ++i)
    f.put(static_cast<char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0)));
}

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  auto emit = [&](const std::vector<DetectionSample>& samples, std::string_view split) {
    for (const auto& s : samples) {
      const std::string rel = "images/" + s.id() + ".ppm";
      write_ppm(s.image(), dir / rel);
      nlohmann::json boxes = nlohmann::json::array(), classes = nlohmann::json::array();
      for (const auto& inst : s.eval_instances()) {
        boxes.push_back({inst.box.x_min, inst.box.y_min, inst.box.x_max, inst.box.y_max});
        classes.push_back(inst.class_id);
      }
      nlohmann::json rec{{"id", s.id()},        {"domain", to_string(s.domain())}, {"split", split},
                         {"image_path", rel},   {"boxes", boxes},                   {"classes", classes}};
      manifest << rec.dump() << "\n";
    }
  };
  emit(bundle.train.source, "train");
  emit(bundle.train.target, "train");
  emit(bundle.val.source, "val");
  emit(bundle.val.target, "val");
  write_config_file(dir / "dataset.cfg", dataset_spec_to_config(bundle.spec));
}

DatasetBundle load_dataset(const std::filesystem::path& dir) {
  DatasetBundle b;
  b.spec = dataset_spec_from_config(read_config_file(dir / "dataset.cfg"));
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("no manifest.jsonl in " + dir.string());
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      std::vector<ObjectInstance> inst;
      const auto& boxes = rec.at("boxes");
      const auto& classes = rec.at("classes");
      if (boxes.size() != classes.size()) throw DataError("boxes/classes length mismatch");
      for (std::size_t i = 0; i < boxes.size(); ++i)
        inst.push_back({{boxes[i].at(0).get<double>(), boxes[i].at(1).get<double>(), boxes[i].at(2).get<double>(),
                         boxes[i].at(3).get<double>()},
                        classes[i].get<int>()});
      const Domain domain = parse_domain(rec.at("domain").get<std::string>());
      DetectionSample s(rec.at("id").get<std::string>(), domain,
                        read_ppm(dir / rec.at("image_path").get<std::string>()), std::move(inst), b.spec.num_classes);
      auto& pair = rec.value("split", std::string("train")) == "val" ? b.val : b.train;
      (domain == Domain::source ? pair.source : pair.target).push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return b;
}

}  // namespace catreg
