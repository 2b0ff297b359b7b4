#include "catreg/trainer.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"

#include "catreg/errors.hpp"

namespace catreg {

namespace {

bool is_da_family(TrainMode m) {
  return m == TrainMode::da_faster || m == TrainMode::da_faster_icr || m == TrainMode::da_faster_icr_ccr;
}

void add_into(Tensor& dst, const Tensor& src) {
  require(dst.size() == src.size(), "gradient size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void check_finite(const char* name, const std::optional<double>& v) {
  if (v && !std::isfinite(*v)) throw NumericError(std::string("non-finite loss term ") + name);
}

}  // namespace

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::source_only: return "source_only";
    case TrainMode::da_faster: return "da_faster";
    case TrainMode::da_faster_icr: return "da_faster_icr";
    case TrainMode::da_faster_icr_ccr: return "da_faster_icr_ccr";
    case TrainMode::sw_structure: return "sw_structure";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view s) {
  for (TrainMode m : {TrainMode::source_only, TrainMode::da_faster, TrainMode::da_faster_icr,
                      TrainMode::da_faster_icr_ccr, TrainMode::sw_structure})
    if (s == to_string(m)) return m;
  throw ConfigError("mode: unknown mode '" + std::string(s) + "'");
}

bool RunConfig::uses_icr() const {
  return mode == TrainMode::da_faster_icr || mode == TrainMode::da_faster_icr_ccr || mode == TrainMode::sw_structure;
}

bool RunConfig::uses_ccr() const {
  return ccr && (mode == TrainMode::da_faster_icr_ccr || mode == TrainMode::sw_structure);
}

void RunConfig::validate() const {
  if (adaptive() && !(lambda > 0.0)) throw ConfigError("lambda: must be > 0 for adaptive modes");
  if (mode == TrainMode::sw_structure && !(lambda_prime > 0.0)) throw ConfigError("lambda_prime: must be > 0");
  if (iters_phase1 < 0 || iters_phase2 < 0) throw ConfigError("iters_phase1/iters_phase2: must be >= 0");
  if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0)) throw ConfigError("lr_phase1/lr_phase2: must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum: must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay: must be >= 0");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval: must be >= 0");
  if (grl_weight && *grl_weight < 0.0) throw ConfigError("grl_weight: must be >= 0");
}

double RunConfig::reversal_weight() const {
  if (grl_weight) return *grl_weight;
  return mode == TrainMode::sw_structure ? lambda_prime : lambda;
}

RunConfig run_config_from_config(const ConfigMap& map) {
  ConfigReader r(map);
  RunConfig c;
  c.mode = parse_train_mode(r.get_string("mode", std::string(to_string(c.mode))));
  c.lambda = r.get_double("lambda", c.lambda);
  c.lambda_prime = r.get_double("lambda_prime", c.lambda_prime);
  c.iters_phase1 = r.get_int("iters_phase1", c.iters_phase1);
  c.iters_phase2 = r.get_int("iters_phase2", c.iters_phase2);
  c.lr_phase1 = r.get_double("lr_phase1", c.lr_phase1);
  c.lr_phase2 = r.get_double("lr_phase2", c.lr_phase2);
  c.momentum = r.get_double("momentum", c.momentum);
  c.weight_decay = r.get_double("weight_decay", c.weight_decay);
  c.seed = r.get_u64("seed", c.seed);
  c.checkpoint_interval = r.get_int("checkpoint_interval", c.checkpoint_interval);
  if (map.count("grl_weight")) c.grl_weight = r.get_double("grl_weight", 0.0);
  c.consistency = r.get_bool("consistency", c.consistency);
  c.icr_loss = r.get_bool("icr_loss", c.icr_loss);
  c.ccr = r.get_bool("ccr", c.ccr);
  const auto realization = r.get_string("ccr_realization", "loss_weighting");
  if (realization == "loss_weighting") c.ccr_realization = CcrRealization::loss_weighting;
  else if (realization == "gradient_weighting") c.ccr_realization = CcrRealization::gradient_weighting;
  else throw ConfigError("ccr_realization: expected loss_weighting or gradient_weighting");
  const auto reduction = r.get_string("alignment_reduction", "mean");
  if (reduction == "sum") c.alignment_reduction = AlignmentReduction::sum;
  else if (reduction == "mean") c.alignment_reduction = AlignmentReduction::mean;
  else throw ConfigError("alignment_reduction: expected sum or mean");
  r.reject_unknown();
  c.validate();
  return c;
}

ConfigMap run_config_to_config(const RunConfig& c) {
  ConfigMap m{{"mode", std::string(to_string(c.mode))},
          {"lambda", format_double(c.lambda)},
          {"lambda_prime", format_double(c.lambda_prime)},
          {"iters_phase1", std::to_string(c.iters_phase1)},
          {"iters_phase2", std::to_string(c.iters_phase2)},
          {"lr_phase1", format_double(c.lr_phase1)},
          {"lr_phase2", format_double(c.lr_phase2)},
          {"momentum", format_double(c.momentum)},
          {"weight_decay", format_double(c.weight_decay)},
          {"seed", std::to_string(c.seed)},
          {"checkpoint_interval", std::to_string(c.checkpoint_interval)},
          {"consistency", c.consistency ? "true" : "false"},
          {"icr_loss", c.icr_loss ? "true" : "false"},
          {"ccr", c.ccr ? "true" : "false"},
          {"ccr_realization",
           c.ccr_realization == CcrRealization::loss_weighting ? "loss_weighting" : "gradient_weighting"},
          {"alignment_reduction", c.alignment_reduction == AlignmentReduction::sum ? "sum" : "mean"}};
  if (c.grl_weight) m["grl_weight"] = format_double(*c.grl_weight);
  return m;
}

double compose_objective(const LossBundle& p, const RunConfig& c) {
  auto need = [](const std::optional<double>& v, const char* name) {
    if (!v) throw ContractError(std::string("compose_objective: missing required term ") + name);
    return *v;
  };
  double total = need(p.l_det, "l_det");
  if (c.mode == TrainMode::source_only) return total;
  if (c.uses_icr() && c.icr_loss) total += need(p.l_icr, "l_icr");
  if (c.mode == TrainMode::sw_structure)
    return total + c.lambda_prime * (need(p.l_ins, "l_ins") + need(p.l_global, "l_global") +
                                     need(p.l_local, "l_local"));
  double align = need(p.l_img, "l_img") + need(p.l_ins, "l_ins");
  if (c.consistency) align += need(p.l_cst, "l_cst");
  return total + c.lambda * align;
}

StepOutput accumulate_step_gradients(CatRegModel& model, const DetectionSample& source, const DetectionSample& target,
                                     const RunConfig& config, Rng& rng) {
  require(source.domain() == Domain::source, "training step: first sample must be from the source domain");
  require(target.domain() == Domain::target, "training step: second sample must be from the target domain");
  const ModelConfig& mc = model.config();
  const int C = mc.num_classes;
  const int stride = model.backbone().stride();
  const bool adapt = config.adaptive();
  const bool sw = config.mode == TrainMode::sw_structure;
  const bool da = is_da_family(config.mode);
  const bool icr_head = config.uses_icr();
  const bool icr_loss_on = icr_head && config.icr_loss;
  const bool ccr_on = config.uses_ccr();
  const double scale = sw ? config.lambda_prime : config.lambda;
  const GradientReversal grl({config.reversal_weight()});

  double l_det = 0, l_icr = 0, l_img = 0, l_ins = 0, l_cst = 0, l_global = 0, l_local = 0;
  StepOutput out;
  std::vector<InstanceWeight> all_weights;

  for (const DetectionSample* s : {&source, &target}) {
    const Domain d = s->domain();
    const bool is_source = d == Domain::source;
    if (!is_source && !adapt) continue;

    auto bt = model.backbone().forward(s->image());
    const Tensor& fm = bt.acts[Backbone::kLayers];
    const BackboneFeatures feats = model.backbone().features(bt);
    Tensor grad_fm(fm.shape());
    Tensor grad_early;
    const auto rpn_t = model.rpn().forward(fm);

    ProposalBatch batch;
    Tensor grad_pooled;
    RoiHead::Trace head_t;
    if (is_source) {
      const auto& gt = s->instances();
      const auto at = assign_anchor_targets(model.anchors(), gt, mc.rpn, rng);
      const auto proposals = select_proposals(model.anchors(), rpn_t, mc.rpn, s->width(), s->height(),
                                              mc.rpn.post_nms_top);
      const auto rt = sample_rois(proposals.boxes, gt, C, mc.roi, rng);
      batch.boxes = rt.boxes;
      batch.roi_features = roi_extract(fm, stride, batch.boxes, mc.roi_align);
      head_t = model.head().forward(batch.roi_features);
      DetectionLossInputs in;
      in.rpn = &rpn_t;
      in.anchor_targets = &at;
      in.anchors_per_cell = mc.rpn.anchors_per_cell();
      in.roi_logits = &head_t.logits;
      in.roi_deltas = &head_t.deltas;
      in.roi_targets = &rt;
      const auto dl = detection_loss(*s, in);
      l_det += dl.terms.total();
      grad_pooled = model.head().backward(head_t, dl.grad_roi_logits, dl.grad_roi_deltas, batch.roi_features.shape());
      model.rpn().backward(fm, rpn_t, dl.grad_rpn_logits, dl.grad_rpn_deltas, grad_fm);
      out.stats.source_rois = static_cast<int>(batch.size());
    } else {
      batch = select_proposals(model.anchors(), rpn_t, mc.rpn, s->width(), s->height(), mc.target_rois);
      batch.roi_features = roi_extract(fm, stride, batch.boxes, mc.roi_align);
      grad_pooled = Tensor(batch.roi_features.shape());
      if (ccr_on) head_t = model.head().forward(batch.roi_features);
      out.stats.target_rois = static_cast<int>(batch.size());
    }
    batch.image_id = s->id();
    batch.domain = d;

    IcrHead::Trace icr_t;
    if (icr_head) {
      icr_t = model.icr().forward(feats, s->id(), d);
      if (is_source && icr_loss_on) {
        const auto li = icr_loss(icr_t.prediction, s->image_labels());
        l_icr += li.value;
        model.icr().backward(feats, icr_t, li.grad_logits, grad_fm);
      }
    }

    if (adapt) {
      const auto ins_t = model.instance_domain().forward(grl.forward(batch.roi_features));
      const int R = static_cast<int>(batch.size());
      std::vector<InstanceWeight> weights(R);
      for (int j = 0; j < R; ++j) weights[j] = {j, C, 1.0};
      if (ccr_on && R > 0) {
        batch.class_posteriors = softmax_rows(head_t.logits);
        weights = assign_weights(batch, icr_t.prediction, d);
      }
      all_weights.insert(all_weights.end(), weights.begin(), weights.end());
      const auto w = weight_values(weights);
      const auto ins = instance_align_loss(ins_t.probs, d, w);
      const bool mean = config.alignment_reduction == AlignmentReduction::mean;
      const double per_roi = mean && R > 0 ? 1.0 / R : 1.0;
      const double ins_scale = scale * per_roi;
      l_ins += per_roi * ins.value;

      ConsistencyLoss cst;
      if (da) {
        const auto img_t = model.image_domain().forward(grl.forward(fm));
        const auto img = image_align_loss(img_t.probs, d);
        out.stats.map_cells = static_cast<int>(img_t.probs.size());
        if (config.consistency) cst = consistency_loss(img_t.probs, ins_t.probs);
        const double per_cell = mean ? 1.0 / static_cast<double>(img_t.probs.size()) : 1.0;
        l_img += per_cell * img.value;
        l_cst += per_roi * cst.value;
        Tensor g_logits(img_t.logits.shape());
        for (std::size_t i = 0; i < g_logits.size(); ++i) {
          g_logits[i] = scale * per_cell * img.grad_logit[i];
          if (config.consistency) g_logits[i] += prob_grad_to_logit(ins_scale * cst.grad_map[i], img_t.logits[i]);
        }
        Tensor g_in;
        model.image_domain().backward_logits(fm, img_t, g_logits, g_in);
        add_into(grad_fm, grl.backward(g_in));
      }

      const bool has_cst = da && config.consistency && R > 0;
      Tensor g_rows;
      if (config.ccr_realization == CcrRealization::loss_weighting) {
        std::vector<double> g(R);
        for (int j = 0; j < R; ++j) {
          g[j] = ins_scale * ins.grad_logit[j];
          if (has_cst) g[j] += prob_grad_to_logit(ins_scale * cst.grad_instances[j], ins_t.logits[j]);
        }
        g_rows = grl.backward(model.instance_domain().backward_logits(ins_t, g));
      } else {
        const auto plain = instance_align_loss(ins_t.probs, d);
        std::vector<double> g(R);
        for (int j = 0; j < R; ++j) g[j] = ins_scale * plain.grad_logit[j];
        g_rows = grl.backward_weighted_rows(model.instance_domain().backward_logits(ins_t, g), w);
        if (has_cst) {
          for (int j = 0; j < R; ++j) g[j] = ins_scale * cst.grad_instances[j];
          add_into(g_rows, grl.backward(model.instance_domain().backward(ins_t, g)));
        }
      }
      if (R > 0) add_into(grad_pooled, g_rows);

      if (sw) {
        Tensor g_global, g_local;
        l_global += model.global_term().forward_backward(fm, d, scale, g_global);
        add_into(grad_fm, grl.backward(g_global));
        const Tensor& early = bt.acts[Backbone::kEarlyTap];
        l_local += model.local_term().forward_backward(early, d, scale, g_local);
        grad_early = grl.backward(g_local);
      }
    }

    if (batch.size() > 0) roi_extract_backward(grad_pooled, stride, batch.boxes, mc.roi_align, grad_fm);
    model.backbone().backward(bt, std::move(grad_fm), sw && adapt ? &grad_early : nullptr);
  }

  LossBundle& L = out.losses;
  L.l_det = l_det;
  if (icr_loss_on) L.l_icr = l_icr;
  if (adapt) L.l_ins = l_ins;
  if (da) {
    L.l_img = l_img;
    if (config.consistency) L.l_cst = l_cst;
  }
  if (sw) {
    L.l_global = l_global;
    L.l_local = l_local;
  }
  L.total = compose_objective(L, config);
  out.stats.d_stats = summarize_weights(all_weights, C);
  return out;
}

void sgd_update(std::vector<Param*> params, double lr, double momentum, double weight_decay) {
  for (Param* p : params) {
    const double wd = p->decay ? weight_decay : 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i] + wd * p->value[i];
      p->momentum[i] = momentum * p->momentum[i] + lr * g;
      p->value[i] -= p->momentum[i];
    }
  }
}

double grad_norm(const std::vector<Param*>& params) {
  double sq = 0.0;
  for (const Param* p : params)
    for (double g : p->grad.values()) sq += g * g;
  return std::sqrt(sq);
}

std::string metrics_line(const MetricsRecord& r) {
  nlohmann::json j;
  j["iter"] = r.iter;
  j["lr"] = r.lr;
  const auto& L = r.losses;
  nlohmann::json present = nlohmann::json::array();
  auto put = [&](const char* name, const std::optional<double>& v) {
    j[name] = v.value_or(0.0);
    if (v) present.push_back(name);
  };
  put("l_det", L.l_det);
  put("l_icr", L.l_icr);
  put("l_img", L.l_img);
  put("l_ins", L.l_ins);
  put("l_cst", L.l_cst);
  if (L.l_global || L.l_local) {
    put("l_global", L.l_global);
    put("l_local", L.l_local);
  }
  j["total"] = L.total;
  j["present"] = present;
  const auto& d = r.stats.d_stats;
  j["d_stats"] = {{"min", d.min}, {"mean", d.mean}, {"max", d.max}, {"fg_fraction", d.foreground_fraction},
                  {"count", d.count}};
  j["map_cells"] = r.stats.map_cells;
  j["grad_norm"] = r.stats.grad_norm;
  return j.dump();
}

std::vector<int> epoch_order(std::uint64_t seed, Domain domain, int epoch, int count) {
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0xE90C, static_cast<std::uint64_t>(domain), static_cast<std::uint64_t>(epoch)));
  for (int i = count - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

TrainResult train(CatRegModel& model, const RunConfig& config, const std::vector<DetectionSample>& source,
                  const std::vector<DetectionSample>& target, const TrainOptions& options) {
  if (source.empty() || target.empty()) throw ContractError("train: both domains need at least one sample");
  if (config.lambda < 0.0 || config.lambda_prime < 0.0) throw ConfigError("lambda: must be >= 0");
  for (const auto& s : source)
    if (s.num_classes() != model.config().num_classes) throw ContractError("train: class count mismatch");

  model.init(config.seed);
  Rng rng(derive_seed(config.seed, 0x7EA1));
  TrainResult result;
  const long reads_before = target_annotation_reads();
  const long icr_before = model.icr().target_updates();
  const int ns = static_cast<int>(source.size()), nt = static_cast<int>(target.size());
  std::vector<int> order_s, order_t;
  const int total = config.total_iters();

  for (int it = 0; it < total; ++it) {
    if (it % ns == 0) order_s = epoch_order(config.seed, Domain::source, it / ns, ns);
    if (it % nt == 0) order_t = epoch_order(config.seed, Domain::target, it / nt, nt);
    model.zero_grad();
    const auto step = accumulate_step_gradients(model, source[order_s[it % ns]], target[order_t[it % nt]], config, rng);
    const auto& L = step.losses;
    check_finite("l_det", L.l_det);
    check_finite("l_icr", L.l_icr);
    check_finite("l_img", L.l_img);
    check_finite("l_ins", L.l_ins);
    check_finite("l_cst", L.l_cst);
    check_finite("l_global", L.l_global);
    check_finite("l_local", L.l_local);
    if (!std::isfinite(L.total)) throw NumericError("non-finite total loss");

    const double lr = config.learning_rate(it);
    StepStats stats = step.stats;
    const auto params = model.params();
    stats.grad_norm = grad_norm(params);
    sgd_update(params, lr, config.momentum, config.weight_decay);

    MetricsRecord rec{it, lr, L, stats};
    if (options.metrics) *options.metrics << metrics_line(rec) << "\n";
    if (options.on_step) options.on_step(rec);
    result.log.push_back(std::move(rec));

    if (options.out_dir && config.checkpoint_interval > 0 && (it + 1) % config.checkpoint_interval == 0 &&
        it + 1 < total) {
      const auto p = *options.out_dir / ("checkpoint_" + std::to_string(it + 1) + ".bin");
      model.save_checkpoint(p, it + 1);
      result.checkpoints.push_back(p);
    }
  }
  if (options.out_dir) {
    const auto p = *options.out_dir / "checkpoint.bin";
    model.save_checkpoint(p, total);
    result.checkpoints.push_back(p);
  }
  result.target_annotation_reads = target_annotation_reads() - reads_before;
  result.icr_target_updates = model.icr().target_updates() - icr_before;
  return result;
}

}  // namespace catreg
