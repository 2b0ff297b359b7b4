#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>

#include "doctest.h"

#include "catreg/errors.hpp"
#include "catreg/eval.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace catreg;
using namespace catreg::testing;

namespace {

DetectionSample sample_with(const std::string& id, Domain d, std::vector<int> classes) {
  std::vector<ObjectInstance> inst;
  for (std::size_t i = 0; i < classes.size(); ++i) inst.push_back({{1.0 * i, 0, 1.0 * i + 5, 5}, classes[i]});
  return DetectionSample(id, d, Tensor({3, 32, 32}), inst, 3);
}

}  // namespace

TEST_CASE("map on hand-built fixtures") {
  const BoundingBox g1{0, 0, 10, 10}, g2{20, 20, 30, 30}, miss{40, 40, 50, 50};
  std::vector<ImageDetections> img(1);
  img[0].ground_truth = {{g1, 0}, {g2, 0}};
  img[0].detections = {{g1, 0, 0.9}, {miss, 0, 0.8}, {g2, 0, 0.7}};
  const auto r = map_score(img, 1, 0.5);
  CHECK(r.map == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)).epsilon(1e-12));
  CHECK(r.map == doctest::Approx(0.8333).epsilon(1e-4));

  img[0].detections = {{g1, 0, 1.0}, {g2, 0, 1.0}};
  CHECK(map_score(img, 1, 0.5).map == 1.0);
  img[0].detections.clear();
  CHECK(map_score(img, 1, 0.5).map == 0.0);

  // Duplicate of an already matched box is a false positive.
  img[0].detections = {{g1, 0, 0.9}, {g1, 0, 0.8}};
  CHECK(map_score(img, 1, 0.5).map == doctest::Approx(0.5));

  // Classes without ground truth stay out of the mean.
  img[0].detections = {{g1, 0, 1.0}, {g2, 0, 1.0}, {miss, 1, 0.9}};
  const auto two = map_score(img, 2, 0.5);
  CHECK(two.map == 1.0);
  CHECK(std::isnan(two.per_class_ap[1]));
  CHECK(two.gt_counts == std::vector<int>{2, 0});
}

TEST_CASE("map matches brute-force enumeration on random fixtures") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(0, 40), jitter(-3, 3), score(0, 1);
  std::uniform_int_distribution<int> cls(0, 1), ngt(0, 3), ndet(0, 5), pick(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ImageDetections> images(2);
    for (auto& im : images) {
      for (int g = ngt(rng); g > 0; --g) {
        const double x = pos(rng), y = pos(rng);
        im.ground_truth.push_back({{x, y, x + 10, y + 10}, cls(rng)});
      }
    }
    int budget = ndet(rng);
    while (budget-- > 0) {
      auto& im = images[pick(rng)];
      BoundingBox b;
      if (!im.ground_truth.empty() && pick(rng)) {
        b = im.ground_truth[rng() % im.ground_truth.size()].box;
        b = {b.x_min + jitter(rng), b.y_min + jitter(rng), b.x_max + jitter(rng), b.y_max + jitter(rng)};
      } else {
        const double x = pos(rng), y = pos(rng);
        b = {x, y, x + 10, y + 10};
      }
      // Coarse scores so ties occur.
      im.detections.push_back({b, cls(rng), std::round(score(rng) * 4) / 4});
    }
    const auto r = map_score(images, 2, 0.5);
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < 2; ++c) {
      const double oracle = brute_force_ap(images, c, 0.5);
      if (std::isnan(oracle)) {
        CHECK(std::isnan(r.per_class_ap[c]));
        continue;
      }
      CHECK(std::abs(r.per_class_ap[c] - oracle) < 1e-9);
      sum += oracle;
      ++counted;
    }
    CHECK(std::abs(r.map - (counted ? sum / counted : 0.0)) < 1e-9);
  }
}

TEST_CASE("emd examples") {
  Tensor a({1, 1}), b({1, 1}, 1.0);
  CHECK(emd_distance(a, b) == 1.0);
  Tensor c({2, 1}), d({2, 1});
  c[0] = 0;
  c[1] = 2;
  d[0] = 1;
  d[1] = 3;
  CHECK(emd_distance(c, d) == 1.0);
  CHECK(emd_distance(c, c) == 0.0);
  Tensor three({3, 1});
  CHECK_THROWS_AS(emd_distance(c, three), ContractError);
  Tensor wide({2, 2});
  CHECK_THROWS_AS(emd_distance(c, wide), ContractError);
}

TEST_CASE("emd equals brute force over all matchings") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> size(1, 7), dim(1, 4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng), d = dim(rng);
    const Tensor a = random_tensor({n, d}, rng, -2, 2), b = random_tensor({n, d}, rng, -2, 2);
    CHECK(emd_distance(a, b) == brute_force_emd(a, b));
  }
}

TEST_CASE("emd metric axioms and translation") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor a = random_tensor({5, 1}, rng), b = random_tensor({5, 1}, rng), c = random_tensor({5, 1}, rng);
    const double ab = emd_distance(a, b), ba = emd_distance(b, a), bc = emd_distance(b, c), ac = emd_distance(a, c);
    CHECK(ab >= 0.0);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(emd_distance(a, a) == 0.0);
    CHECK(ac <= ab + bc + 1e-12);
    Tensor shuffled({5, 1});
    for (int i = 0; i < 5; ++i) shuffled[i] = a[(i + 2) % 5];
    CHECK(emd_distance(a, shuffled) == 0.0);
  }
  const Tensor p = random_tensor({1, 3}, rng);
  const std::vector<double> v{0.3, -1.2, 2.0};
  Tensor q = p;
  for (int k = 0; k < 3; ++k) q[k] += v[k];
  CHECK(emd_distance(p, q) == doctest::Approx(std::sqrt(0.09 + 1.44 + 4.0)).epsilon(1e-12));
}

TEST_CASE("balanced instance sampling") {
  DomainPair pair;
  for (int i = 0; i < 20; ++i) pair.source.push_back(sample_with("s" + std::to_string(i), Domain::source, {0, 0, 1}));
  for (int i = 0; i < 15; ++i) pair.target.push_back(sample_with("t" + std::to_string(i), Domain::target, {0, 0}));
  pair.target.push_back(sample_with("t15", Domain::target, {1}));
  // class 0: 40 source, 30 target; class 1: 20 source, 1 target; class 2 absent.
  std::vector<std::string> warnings;
  const auto sel = sample_balanced_instances(pair, 3, 50, 5, &warnings);
  CHECK(sel.source[0].size() == 25);
  CHECK(sel.target[0].size() == 25);
  CHECK(sel.source[1].size() == 1);
  CHECK(sel.target[1].size() == 1);
  CHECK(sel.skipped_classes == std::vector<int>{2});
  CHECK(warnings.size() == 1);

  const auto again = sample_balanced_instances(pair, 3, 50, 5);
  for (int c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < sel.source[c].size(); ++k) {
      CHECK(sel.source[c][k].sample == again.source[c][k].sample);
      CHECK(sel.source[c][k].instance == again.source[c][k].instance);
    }

  DomainPair few;
  for (int i = 0; i < 20; ++i) few.source.push_back(sample_with("s" + std::to_string(i), Domain::source, {0, 0}));
  for (int i = 0; i < 5; ++i) few.target.push_back(sample_with("t" + std::to_string(i), Domain::target, {0, 0}));
  const auto s2 = sample_balanced_instances(few, 3, 50, 1);
  CHECK(s2.source[0].size() == 10);
  CHECK(s2.target[0].size() == 10);

  reset_target_annotation_reads();
  sample_balanced_instances(pair, 3, 50, 5);
  CHECK(target_annotation_reads() == 0);
}

TEST_CASE("feature export round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "catreg_test_features";
  std::filesystem::remove_all(dir);
  const auto pair = small_pair(4);
  CatRegModel model(model_config_for(3, 64));
  model.init(3);
  export_features(model, pair.source, dir);
  const auto img = read_feature_set(dir / "image_features.bin", dir / "image_tags.jsonl");
  CHECK(img.rows() == 4);
  CHECK(img.cols() == 64);
  for (int r = 0; r < 4; ++r) CHECK(img.tags[r].sample_id == pair.source[r].id());
  CHECK(img.points == image_features(model, pair.source).points);
  const auto inst = read_feature_set(dir / "instance_features.bin", dir / "instance_tags.jsonl");
  std::size_t n = 0;
  for (const auto& s : pair.source) n += s.eval_instances().size();
  CHECK(inst.rows() == static_cast<int>(n));
  CHECK(inst.cols() == model.config().pooled_features());
  CHECK(inst.tags[0].class_id == pair.source[0].eval_instances()[0].class_id);

  // Identical inputs give identical rows.
  const std::vector<DetectionSample> twice{pair.source[0], pair.source[0]};
  const auto t = image_features(model, twice);
  for (int k = 0; k < 64; ++k) CHECK(t.points[k] == t.points[64 + k]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint evaluation refuses a class-count mismatch") {
  const auto dir = std::filesystem::temp_directory_path() / "catreg_test_eval_ckpt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  CatRegModel model(model_config_for(4, 64));
  model.init(1);
  model.save_checkpoint(dir / "c.bin");
  const auto pair = small_pair(2);
  CHECK_THROWS_AS(evaluate_checkpoint(dir / "c.bin", pair.source), ContractError);
  CatRegModel three(model_config_for(3, 64));
  three.init(1);
  three.save_checkpoint(dir / "c3.bin");
  const auto r = evaluate_checkpoint(dir / "c3.bin", pair.source);
  CHECK(r.images == 2);
  CHECK(r.map.map >= 0.0);
  CHECK(r.map.map <= 1.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evidence peaks") {
  const auto pair = small_pair(3);
  CatRegModel model(model_config_for(3, 64));
  model.init(2);
  for (const auto& s : pair.source) {
    const auto p = evidence_peak(model, s);
    CHECK(p.class_id >= 0);
    CHECK(s.eval_image_labels()[p.class_id] == 1);
    CHECK(p.cell_x < 8);
    CHECK(p.cell_y < 8);
  }
  const auto score = weak_localization(model, pair.source);
  CHECK(score.images == 3);
}
