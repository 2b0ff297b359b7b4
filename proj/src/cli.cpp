#include "catreg/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "catreg/errors.hpp"

namespace catreg {

namespace fs = std::filesystem;

#ifndef CATREG_VERSION
#define CATREG_VERSION "unknown"
#endif

std::string code_version() { return CATREG_VERSION; }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

namespace {

void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string make_run_id(const std::string& command, std::uint64_t seed) {
  const auto ns = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
  return command + "-s" + std::to_string(seed) + "-" + std::to_string(ns);
}

Split parse_set(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw ConfigError("--set: expected train or val");
}

const DomainPair& pick_set(const DatasetBundle& b, Split s) { return s == Split::train ? b.train : b.val; }

const std::vector<DetectionSample>& pick_domain(const DomainPair& p, Domain d) {
  return d == Domain::source ? p.source : p.target;
}

std::unique_ptr<CatRegModel> load_model(const fs::path& checkpoint) {
  const auto header = read_checkpoint_header(checkpoint);
  auto model = std::make_unique<CatRegModel>(model_config_for(header.num_classes, header.image_size));
  model->load_checkpoint(checkpoint);
  return model;
}

void check_compatible(const CatRegModel& model, const DatasetSpec& spec) {
  if (model.config().num_classes != spec.num_classes)
    throw ContractError("checkpoint has " + std::to_string(model.config().num_classes) + " classes, dataset has " +
                        std::to_string(spec.num_classes));
  if (model.config().image_size != spec.image_size) throw ContractError("checkpoint image size differs from dataset");
}

nlohmann::json map_json(const MapResult& m) {
  nlohmann::json per = nlohmann::json::array();
  for (double ap : m.per_class_ap) per.push_back(std::isnan(ap) ? nlohmann::json(nullptr) : nlohmann::json(ap));
  return {{"map", m.map}, {"per_class_ap", per}, {"gt_counts", m.gt_counts}};
}

struct TrainArtifacts {
  TrainResult result;
  fs::path checkpoint;
};

TrainArtifacts train_into(CatRegModel& model, const RunConfig& config, const DatasetBundle& data, const fs::path& out,
                          const std::string& command) {
  fs::create_directories(out);
  ExperimentManifest m;
  m.run_id = make_run_id(command, config.seed);
  m.command = command;
  m.config = run_config_to_config(config);
  for (const auto& [k, v] : dataset_spec_to_config(data.spec)) m.config["data." + k] = v;
  m.code_version = code_version();
  m.seed = config.seed;
  m.started = utc_timestamp();
  write_manifest(m, out);
  write_config_file(out / "run.cfg", run_config_to_config(config));

  std::ofstream metrics(out / "metrics.jsonl");
  TrainOptions opts;
  opts.out_dir = out;
  opts.metrics = &metrics;
  TrainArtifacts a;
  a.result = train(model, config, data.train.source, data.train.target, opts);
  a.checkpoint = a.result.checkpoints.back();
  metrics.close();

  m.finished = utc_timestamp();
  m.artifacts = {{"metrics", (out / "metrics.jsonl").string()},
                 {"checkpoint", a.checkpoint.string()},
                 {"config", (out / "run.cfg").string()}};
  write_manifest(m, out);
  return a;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

void write_manifest(const ExperimentManifest& m, const fs::path& dir) {
  nlohmann::json j;
  j["run_id"] = m.run_id;
  j["command"] = m.command;
  j["config"] = m.config;
  j["code_version"] = m.code_version;
  j["seed"] = m.seed;
  j["started"] = m.started;
  j["finished"] = m.finished.empty() ? nlohmann::json(nullptr) : nlohmann::json(m.finished);
  nlohmann::json art = nlohmann::json::object();
  for (const auto& [k, v] : m.artifacts) art[k] = v;
  j["artifacts"] = art;
  write_atomically(dir / "manifest.json", j.dump(2) + "\n");
}

std::vector<AblationRun> run_ablation(const DatasetBundle& data, const AblationOptions& options) {
  std::vector<AblationRun> runs;
  const auto mc = model_config_for(data.spec.num_classes, data.spec.image_size);
  for (std::uint64_t seed : options.seeds) {
    for (TrainMode mode : options.modes) {
      const auto t0 = std::chrono::steady_clock::now();
      RunConfig cfg = options.base;
      cfg.mode = mode;
      cfg.seed = seed;
      CatRegModel model(mc);
      AblationRun r;
      r.mode = mode;
      r.seed = seed;
      TrainResult tr;
      if (options.out_dir) {
        const auto dir = *options.out_dir / (std::string(to_string(mode)) + "_seed" + std::to_string(seed));
        tr = train_into(model, cfg, data, dir, "ablate").result;
      } else {
        tr = train(model, cfg, data.train.source, data.train.target);
      }
      r.target_annotation_reads = tr.target_annotation_reads;
      r.icr_target_updates = tr.icr_target_updates;
      r.target_map = evaluate_model(model, data.val.target).map.map;
      r.source_map = evaluate_model(model, data.val.source).map.map;
      const auto sel = sample_balanced_instances(data.val, data.spec.num_classes, options.emd_per_class, seed);
      const auto feats = balanced_instance_features(model, data.val, sel);
      r.emd_points = feats.source.rows();
      r.emd = r.emd_points > 0 ? emd_distance(feats.source, feats.target) : 0.0;
      r.localization = weak_localization(model, data.val.source);
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (options.on_run) options.on_run(r);
      runs.push_back(r);
    }
  }
  return runs;
}

std::string ablation_table(const std::vector<AblationRun>& runs) {
  std::vector<TrainMode> modes;
  std::vector<std::uint64_t> seeds;
  for (const auto& r : runs) {
    if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }
  std::ostringstream os;
  os << std::left << std::setw(20) << "mode";
  for (auto s : seeds) os << std::right << std::setw(10) << ("seed" + std::to_string(s));
  os << std::setw(10) << "mean_mAP" << std::setw(10) << "mean_EMD" << "\n";
  os << std::fixed << std::setprecision(4);
  for (TrainMode m : modes) {
    os << std::left << std::setw(20) << to_string(m) << std::right;
    std::vector<double> maps, emds;
    for (auto s : seeds) {
      const auto it = std::find_if(runs.begin(), runs.end(), [&](const AblationRun& r) { return r.mode == m && r.seed == s; });
      if (it == runs.end()) {
        os << std::setw(10) << "-";
        continue;
      }
      os << std::setw(10) << it->target_map;
      maps.push_back(it->target_map);
      emds.push_back(it->emd);
    }
    os << std::setw(10) << mean(maps) << std::setw(10) << mean(emds) << "\n";
  }
  return os.str();
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Categorical regularization for domain-adaptive detection on a synthetic benchmark", "catreg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version());

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "Render the paired-domain dataset");
  std::string gen_out, gen_config;
  DatasetSpec cli_spec;
  gen->add_option("--out", gen_out, "Output directory (must not exist or be empty)")->required();
  gen->add_option("--config", gen_config, "key=value dataset config");
  auto* o_classes = gen->add_option("--classes", cli_spec.num_classes, "Number of shape classes");
  auto* o_size = gen->add_option("--image-size", cli_spec.image_size, "Square image side in pixels");
  auto* o_samples = gen->add_option("--samples", cli_spec.samples_per_domain, "Train samples per domain");
  auto* o_val = gen->add_option("--val-samples", cli_spec.val_samples_per_domain, "Val samples per domain");
  std::string shift_kind;
  auto* o_shift = gen->add_option("--shift", shift_kind, "fog_blend | color_shift | texture_noise");
  auto* o_strength = gen->add_option("--strength", cli_spec.shift_strength, "Shift strength in [0, 1]");
  auto* o_seed = gen->add_option("--seed", cli_spec.rng_seed, "Generator seed");

  // train
  auto* tr = app.add_subcommand("train", "Train one configuration");
  std::string tr_config, tr_data, tr_out;
  std::uint64_t tr_seed = 0;
  tr->add_option("--config", tr_config, "key=value run config")->required();
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Run directory")->required();
  auto* o_tr_seed = tr->add_option("--seed", tr_seed, "Override the config seed");

  // eval
  auto* ev = app.add_subcommand("eval", "mAP of a checkpoint on one domain");
  std::string ev_ckpt, ev_data, ev_split = "target", ev_set = "val", ev_out;
  double ev_iou = 0.5;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "Domain: source | target")->check(CLI::IsMember({"source", "target"}));
  ev->add_option("--set", ev_set, "train | val")->check(CLI::IsMember({"train", "val"}));
  ev->add_option("--iou", ev_iou, "IoU threshold")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--out", ev_out, "Write the result as JSON here");

  // emd
  auto* em = app.add_subcommand("emd", "EMD between balanced source/target GT-instance features");
  std::string em_ckpt, em_data, em_out, em_set = "val", em_export;
  int em_per_class = 50;
  std::uint64_t em_seed = 0;
  em->add_option("--checkpoint", em_ckpt, "Checkpoint file")->required();
  em->add_option("--data", em_data, "Dataset directory")->required();
  em->add_option("--per-class", em_per_class, "Instances per class, split evenly across domains")
      ->check(CLI::PositiveNumber);
  em->add_option("--out", em_out, "Result JSON")->required();
  em->add_option("--set", em_set, "train | val")->check(CLI::IsMember({"train", "val"}));
  em->add_option("--seed", em_seed, "Sampling seed");
  em->add_option("--export", em_export, "Also write feature matrices and tags into this directory");

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "Write ICR class-evidence maps");
  std::string hm_ckpt, hm_data, hm_out, hm_split = "source", hm_set = "val";
  int hm_count = 8;
  hm->add_option("--checkpoint", hm_ckpt, "Checkpoint file")->required();
  hm->add_option("--data", hm_data, "Dataset directory")->required();
  hm->add_option("--out", hm_out, "Output directory")->required();
  hm->add_option("--split", hm_split, "Domain: source | target")->check(CLI::IsMember({"source", "target"}));
  hm->add_option("--set", hm_set, "train | val")->check(CLI::IsMember({"train", "val"}));
  hm->add_option("--count", hm_count, "Number of images")->check(CLI::PositiveNumber);

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train the mode ladder over several seeds and tabulate target mAP");
  std::string ab_data, ab_out, ab_config;
  int ab_seeds = 3;
  ab->add_option("--data", ab_data, "Dataset directory")->required();
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->add_option("--config", ab_config, "Base run config (mode and seed are overridden)");
  ab->add_option("--seeds", ab_seeds, "Seeds 0..N-1")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }

  try {
    if (*gen) {
      DatasetSpec spec;
      if (!gen_config.empty()) spec = dataset_spec_from_config(read_config_file(gen_config));
      if (*o_classes) spec.num_classes = cli_spec.num_classes;
      if (*o_size) spec.image_size = cli_spec.image_size;
      if (*o_samples) spec.samples_per_domain = cli_spec.samples_per_domain;
      if (*o_val) spec.val_samples_per_domain = cli_spec.val_samples_per_domain;
      if (*o_shift) spec.shift_kind = parse_shift_kind(shift_kind);
      if (*o_strength) spec.shift_strength = cli_spec.shift_strength;
      if (*o_seed) spec.rng_seed = cli_spec.rng_seed;
      spec.validate();
      const fs::path dir(gen_out);
      if (fs::exists(dir) && !fs::is_empty(dir)) throw ConfigError("--out: " + dir.string() + " is not empty");
      const auto bundle = generate_bundle(spec);
      save_dataset(bundle, dir);
      out << "wrote " << bundle.train.source.size() + bundle.train.target.size() << " train and "
          << bundle.val.source.size() + bundle.val.target.size() << " val images to " << dir.string() << "\n";
      return 0;
    }

    if (*tr) {
      RunConfig cfg = run_config_from_config(read_config_file(tr_config));
      if (*o_tr_seed) cfg.seed = tr_seed;
      const auto data = load_dataset(tr_data);
      CatRegModel model(model_config_for(data.spec.num_classes, data.spec.image_size));
      const auto a = train_into(model, cfg, data, tr_out, "train");
      const auto& last = a.result.log.back().losses;
      out << "trained " << to_string(cfg.mode) << " for " << cfg.total_iters() << " iterations; final total "
          << last.total << "; checkpoint " << a.checkpoint.string() << "\n";
      if (a.result.target_annotation_reads != 0) {
        err << "error: training read target annotations\n";
        return 1;
      }
      return 0;
    }

    if (*ev) {
      const auto data = load_dataset(ev_data);
      const auto model = load_model(ev_ckpt);
      check_compatible(*model, data.spec);
      const auto& samples = pick_domain(pick_set(data, parse_set(ev_set)), parse_domain(ev_split));
      const auto r = evaluate_model(*model, samples, ev_iou);
      out << "mAP@" << ev_iou << " on " << ev_split << "/" << ev_set << ": " << std::fixed << std::setprecision(4)
          << r.map.map << "\n";
      for (std::size_t c = 0; c < r.map.per_class_ap.size(); ++c)
        out << "  class " << c << ": " << r.map.per_class_ap[c] << " (" << r.map.gt_counts[c] << " gt)\n";
      if (!ev_out.empty()) {
        auto j = map_json(r.map);
        j["split"] = ev_split;
        j["set"] = ev_set;
        j["iou"] = ev_iou;
        j["checkpoint"] = ev_ckpt;
        write_atomically(ev_out, j.dump(2) + "\n");
      }
      return 0;
    }

    if (*em) {
      const auto data = load_dataset(em_data);
      const auto model = load_model(em_ckpt);
      check_compatible(*model, data.spec);
      const auto& pair = pick_set(data, parse_set(em_set));
      std::vector<std::string> warnings;
      const auto sel = sample_balanced_instances(pair, data.spec.num_classes, em_per_class, em_seed, &warnings);
      for (const auto& w : warnings) err << "warning: " << w << "\n";
      const auto feats = balanced_instance_features(*model, pair, sel);
      if (feats.source.rows() == 0) throw DataError("no class has instances in both domains");
      const double d = emd_distance(feats.source, feats.target);
      out << "EMD (" << feats.source.rows() << " points per side): " << d << "\n";
      if (!em_export.empty()) {
        fs::create_directories(em_export);
        write_feature_set(feats.source, fs::path(em_export) / "source_instances.bin",
                          fs::path(em_export) / "source_instances.jsonl");
        write_feature_set(feats.target, fs::path(em_export) / "target_instances.bin",
                          fs::path(em_export) / "target_instances.jsonl");
      }
      nlohmann::json j{{"emd", d},
                       {"points_per_side", feats.source.rows()},
                       {"per_class", em_per_class},
                       {"skipped_classes", sel.skipped_classes},
                       {"checkpoint", em_ckpt},
                       {"set", em_set}};
      write_atomically(em_out, j.dump(2) + "\n");
      return 0;
    }

    if (*hm) {
      const auto data = load_dataset(hm_data);
      const auto model = load_model(hm_ckpt);
      check_compatible(*model, data.spec);
      const auto& samples = pick_domain(pick_set(data, parse_set(hm_set)), parse_domain(hm_split));
      const std::size_t n = std::min<std::size_t>(samples.size(), static_cast<std::size_t>(hm_count));
      write_heatmaps(*model, std::span(samples).first(n), hm_out);
      const auto score = weak_localization(*model, samples);
      out << "wrote " << n << " heatmap sets to " << hm_out << "; evidence peak inside a matching box on "
          << score.hits << "/" << score.images << " images\n";
      return 0;
    }

    if (*ab) {
      AblationOptions opts;
      if (!ab_config.empty()) opts.base = run_config_from_config(read_config_file(ab_config));
      opts.seeds.clear();
      for (int s = 0; s < ab_seeds; ++s) opts.seeds.push_back(static_cast<std::uint64_t>(s));
      const auto data = load_dataset(ab_data);
      opts.out_dir = fs::path(ab_out);
      fs::create_directories(ab_out);
      opts.on_run = [&](const AblationRun& r) {
        out << to_string(r.mode) << " seed " << r.seed << ": target mAP " << r.target_map << ", EMD " << r.emd
            << " (" << r.seconds << " s)\n";
        out.flush();
      };
      const auto runs = run_ablation(data, opts);
      const auto table = ablation_table(runs);
      out << table;
      nlohmann::json j = nlohmann::json::array();
      for (const auto& r : runs)
        j.push_back({{"mode", std::string(to_string(r.mode))},
                     {"seed", r.seed},
                     {"target_map", r.target_map},
                     {"source_map", r.source_map},
                     {"emd", r.emd},
                     {"emd_points", r.emd_points},
                     {"localization_hits", r.localization.hits},
                     {"localization_images", r.localization.images},
                     {"target_annotation_reads", r.target_annotation_reads}});
      write_atomically(fs::path(ab_out) / "ablation.json", j.dump(2) + "\n");
      write_atomically(fs::path(ab_out) / "ablation.txt", table);
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace catreg
