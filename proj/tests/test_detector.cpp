#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"

#include "catreg/detector.hpp"
#include "catreg/errors.hpp"
#include "catreg/model.hpp"
#include "catreg/trainer.hpp"

using namespace catreg;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("iou examples") {
  const BoundingBox a{0, 0, 2, 2}, b{1, 1, 3, 3}, far{5, 5, 6, 6}, touching{2, 0, 4, 2};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, far) == 0.0);
  CHECK(iou(a, touching) == 0.0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(iou(a, b) == iou(b, a));
}

TEST_CASE("backbone shapes and determinism") {
  CatRegModel model(model_config_for(3, 64));
  model.init(1);
  std::mt19937_64 rng(2);
  const Tensor img = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
  const auto t1 = model.backbone().forward(img);
  const auto t2 = model.backbone().forward(img);
  const Tensor& fm = t1.acts[Backbone::kLayers];
  CHECK(fm.shape() == std::vector<int>{64, 8, 8});
  CHECK(fm == t2.acts[Backbone::kLayers]);
  const auto z = model.backbone().forward(Tensor({3, 64, 64}));
  for (double v : z.acts[Backbone::kLayers].values()) CHECK(std::isfinite(v));
  const auto odd = model.backbone().forward(Tensor({3, 60, 44}));
  CHECK(odd.acts[Backbone::kLayers].dim(1) == 8);  // ceil(60 / 8)
  CHECK(odd.acts[Backbone::kLayers].dim(2) == 6);  // ceil(44 / 8)
}

TEST_CASE("anchor layout") {
  const std::vector<double> scales{12, 20, 32}, ratios{1.0};
  const auto anchors = generate_anchors(2, 2, 8, scales, ratios);
  REQUIRE(anchors.size() == 12);
  for (int cell = 0; cell < 4; ++cell) {
    const int u = cell % 2, v = cell / 2;
    for (int s = 0; s < 3; ++s) {
      const auto& a = anchors[cell * 3 + s];
      CHECK((a.x_min + a.x_max) / 2 == doctest::Approx((u + 0.5) * 8));
      CHECK((a.y_min + a.y_max) / 2 == doctest::Approx((v + 0.5) * 8));
      CHECK(a.width() == doctest::Approx(scales[s]));
      CHECK(a.height() == doctest::Approx(scales[s]));
    }
  }
  const std::vector<double> two_ratios{0.5, 2.0};
  CHECK(generate_anchors(3, 4, 8, scales, two_ratios).size() == 3 * 4 * 3 * 2);
}

TEST_CASE("nms keeps the higher-scoring overlapping box") {
  // IoU of these two boxes is 0.9.
  const std::vector<BoundingBox> boxes{{0, 0, 10, 10}, {0, 0, 10, 9}};
  REQUIRE(iou(boxes[0], boxes[1]) == doctest::Approx(0.9));
  const std::vector<double> scores{0.8, 0.6};
  CHECK(nms(boxes, scores, 0.7, 10) == std::vector<int>{0});
  const std::vector<double> flipped{0.6, 0.8};
  CHECK(nms(boxes, flipped, 0.7, 10) == std::vector<int>{1});
  CHECK(nms(boxes, scores, 0.95, 10) == std::vector<int>{0, 1});
}

TEST_CASE("proposals are sorted, capped and non-overlapping") {
  CatRegModel model(model_config_for(3, 64));
  model.init(4);
  std::mt19937_64 rng(5);
  const Tensor img = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
  const auto bt = model.backbone().forward(img);
  const auto rt = model.rpn().forward(bt.acts[Backbone::kLayers]);
  const auto batch = select_proposals(model.anchors(), rt, model.config().rpn, 64, 64, 5);
  CHECK(batch.size() <= 5);
  for (std::size_t i = 1; i < batch.size(); ++i) CHECK(batch.objectness[i] <= batch.objectness[i - 1]);
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t j = i + 1; j < batch.size(); ++j)
      CHECK(iou(batch.boxes[i], batch.boxes[j]) <= model.config().rpn.nms_threshold);
}

TEST_CASE("box encoding round trip") {
  const BoundingBox ref{10, 12, 30, 40}, tgt{14, 8, 26, 44};
  for (const auto& w : {kRpnBoxWeights, kRoiBoxWeights}) {
    const auto d = encode_box(ref, tgt, w);
    const auto back = decode_box(ref, d, w);
    CHECK(back.x_min == doctest::Approx(tgt.x_min));
    CHECK(back.y_min == doctest::Approx(tgt.y_min));
    CHECK(back.x_max == doctest::Approx(tgt.x_max));
    CHECK(back.y_max == doctest::Approx(tgt.y_max));
  }
}

TEST_CASE("roi extraction on constant and cell-aligned inputs") {
  Tensor constant({4, 5, 5}, 0.75);
  const std::vector<BoundingBox> boxes{{3, 5, 27, 33}, {0, 0, 40, 40}, {9.5, 9.5, 9.5, 9.5}};
  RoiDiagnostics diag;
  const Tensor pooled = roi_extract(constant, 8, boxes, {7, 2}, &diag);
  CHECK(pooled.shape() == std::vector<int>{3, 4, 7, 7});
  for (double v : pooled.values()) CHECK(v == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(diag.clamped_boxes == 1);

  std::mt19937_64 rng(7);
  const Tensor f = random_tensor({4, 5, 5}, rng);
  const int u = 2, v = 3;
  const std::vector<BoundingBox> cell{{u * 8.0, v * 8.0, (u + 1) * 8.0, (v + 1) * 8.0}};
  const Tensor one = roi_extract(f, 8, cell, {1, 1});
  for (int c = 0; c < 4; ++c) CHECK(one[c] == doctest::Approx(f.at(c, v, u)).epsilon(1e-12));
}

TEST_CASE("roi extraction gradient matches finite differences") {
  std::mt19937_64 rng(8);
  Tensor f = random_tensor({3, 5, 5}, rng);
  const std::vector<BoundingBox> boxes{{2, 3, 29, 21}, {10.3, 0.7, 38.1, 36.9}, {0, 0, 40, 40}};
  const kernels::RoiAlignParams p{3, 2};
  const Tensor pooled = roi_extract(f, 8, boxes, p);
  const Tensor w = random_tensor(pooled.shape(), rng);
  auto objective = [&](const Tensor& feats) {
    const Tensor y = roi_extract(feats, 8, boxes, p);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  Tensor grad(f.shape());
  roi_extract_backward(w, 8, boxes, p, grad);
  double max_rel = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double keep = f[i];
    f[i] = keep + h;
    const double up = objective(f);
    f[i] = keep - h;
    const double down = objective(f);
    f[i] = keep;
    const double fd = (up - down) / (2 * h);
    max_rel = std::max(max_rel, std::abs(fd - grad[i]) / std::max(1.0, std::abs(fd) + std::abs(grad[i])));
  }
  CHECK(max_rel < 1e-3);
}

TEST_CASE("cross-entropy closed forms") {
  Tensor uniform({1, 4});
  const std::vector<int> label{2};
  CHECK(softmax_cross_entropy(uniform, label).value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(cross_entropy_from_posteriors(softmax_rows(uniform), label) == doctest::Approx(std::log(4.0)));

  Tensor confident({1, 4});
  confident[2] = 60.0;
  CHECK(softmax_cross_entropy(confident, label).value < 1e-20);
  Tensor pred({2, 4}, 0.3);
  const std::vector<int> mask{1, 1};
  CHECK(smooth_l1(pred, pred, mask, 1.0, 2.0).value == 0.0);

  std::mt19937_64 rng(9);
  const Tensor logits = random_tensor({5, 4}, rng, -3, 3);
  const Tensor post = softmax_rows(logits);
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) s += post[r * 4 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("smooth l1 closed form") {
  Tensor pred({1, 4}), target({1, 4});
  pred[0] = 0.5;   // quadratic zone with beta 1: 0.5 * 0.25
  pred[1] = -2.0;  // linear zone: 2 - 0.5
  const std::vector<int> mask{1};
  CHECK(smooth_l1(pred, target, mask, 1.0, 1.0).value == doctest::Approx(0.125 + 1.5));
  const std::vector<int> off{0};
  CHECK(smooth_l1(pred, target, off, 1.0, 1.0).value == 0.0);
}

TEST_CASE("proposal class assignment") {
  const std::vector<ObjectInstance> gt{{{0, 0, 10, 10}, 1}, {{30, 30, 40, 40}, 2}};
  CHECK(assign_proposal_class({0, 0, 10, 9}, gt, 3, 0.5) == 1);
  CHECK(assign_proposal_class({29, 31, 40, 40}, gt, 3, 0.5) == 2);
  CHECK(assign_proposal_class({15, 15, 25, 25}, gt, 3, 0.5) == 3);
}

TEST_CASE("detection loss refuses target samples") {
  const DetectionSample t("t0", Domain::target, Tensor({3, 64, 64}), {{{1, 1, 20, 20}, 0}}, 3);
  DetectionLossInputs in;
  CHECK_THROWS_AS(detection_loss(t, in), ContractError);
}

TEST_CASE("detection loss decreases when overfitting one sample") {
  DatasetSpec spec;
  spec.samples_per_domain = 2;
  spec.val_samples_per_domain = 0;
  const auto pair = generate_dataset(spec);
  CatRegModel model(model_config_for(3, 64));
  model.init(11);
  RunConfig cfg;
  cfg.mode = TrainMode::source_only;
  Rng rng(12);
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    model.zero_grad();
    const auto out = accumulate_step_gradients(model, pair.source[0], pair.target[0], cfg, rng);
    losses.push_back(*out.losses.l_det);
    sgd_update(model.params(), 5e-3, 0.9, 0.0);
  }
  const double first = std::accumulate(losses.begin(), losses.begin() + 5, 0.0) / 5;
  const double last = std::accumulate(losses.end() - 5, losses.end(), 0.0) / 5;
  CHECK(last < first);
}
