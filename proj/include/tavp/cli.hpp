/* Copyright 2026 The TAVP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef TAVP_CLI_HPP_
#define TAVP_CLI_HPP_

// Command-line entry point: gen | preprocess | train | eval | viz | config.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tavp/checkpoint.hpp"
#include "tavp/config.hpp"
#include "tavp/datasets.hpp"
#include "tavp/eval.hpp"
#include "tavp/model.hpp"
#include "tavp/trainer.hpp"

namespace tavp::cli {

namespace fs = std::filesystem;

inline constexpr const char* kOutEnv = "TAVP_OUT";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kConfigFile = "config.json";

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> shot;
  bool no_cdtap = false;
  bool no_mff = false;
  std::string prompt_combine;
  bool resume = false;
  bool oracle = false;
  bool print_defaults = false;
  std::string checkpoint;
  std::string benchmark;
  std::string in_dir;
  int count = 4;
};

// File config (or defaults) with command-line overrides applied, validated.
inline RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.no_cdtap) c.model.use_cdtap = false;
  if (o.no_mff) c.model.use_mff = false;
  if (!o.prompt_combine.empty()) c.model.prompt_combine = parse_prompt_combine(o.prompt_combine);
  if (o.shot) {
    c.train.shot = *o.shot;
    c.eval.shots = {*o.shot};
  }
  c.validate();
  return c;
}

// --out wins; otherwise TAVP_OUT replaces the parent of the configured
// output directory.
inline fs::path output_dir(const RunConfig& c, const Options& o) {
  if (!o.out.empty()) return o.out;
  const char* root = std::getenv(kOutEnv);
  if (root && *root) return fs::path(root) / fs::path(c.out_dir).filename();
  return c.out_dir;
}

inline std::vector<Dataset> build_datasets(const RunConfig& c) {
  if (!c.data.data_dir.empty()) return load_datasets(c.data.data_dir);
  std::vector<Dataset> out;
  for (const DomainSpec& d : c.data.domains) {
    out.push_back(generate_synthetic_dataset(d, c.data.classes_per_domain, c.data.samples_per_class,
                                             mix_seed(c.data_seed(), detail::fnv1a(d.domain_id))));
  }
  return out;
}

inline std::vector<Dataset> select_domains(const std::vector<Dataset>& all, const std::vector<std::string>& held_out,
                                           bool want_held_out) {
  std::vector<Dataset> out;
  for (const Dataset& ds : all) {
    const bool held = std::find(held_out.begin(), held_out.end(), ds.domain_id) != held_out.end();
    if (held == want_held_out) out.push_back(ds);
  }
  if (out.empty()) throw ConfigError(want_held_out ? "no held-out domain found in the data" : "no training domain found in the data");
  return out;
}

// Held-out domains, restricted to the selected class fold.
inline std::vector<Dataset> evaluation_domains(const RunConfig& c) {
  std::vector<Dataset> out = select_domains(build_datasets(c), c.data.held_out, true);
  if (c.data.folds <= 1) return out;
  for (Dataset& ds : out) ds = restrict_classes(ds, fold_classes(ds.classes(), c.data.folds, c.data.fold).second);
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

// ---------------------------------------------------------------------------

inline int cmd_config(const Options& o) {
  const RunConfig c = o.print_defaults ? RunConfig{} : resolve_config(o);
  std::cout << to_json(c).dump(2) << "\n";
  return 0;
}

inline int cmd_gen(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path dir = o.out.empty() ? output_dir(c, o) / "data" : fs::path(o.out);
  RunConfig synthetic = c;
  synthetic.data.data_dir.clear();
  const std::vector<Dataset> ds = build_datasets(synthetic);
  save_datasets(ds, dir);
  std::size_t n = 0;
  for (const Dataset& d : ds) n += d.samples.size();
  spdlog::info("wrote {} samples in {} domains to {}", n, ds.size(), dir.string());
  return 0;
}

inline LabeledImage read_deepglobe_pair(const fs::path& image, const fs::path& labels) {
  LabeledImage li;
  li.image = read_png(image);
  const detail::RawPng raw = read_png_raw(labels);
  if (raw.height != li.image.height || raw.width != li.image.width) {
    throw ShapeError("label map " + labels.string() + " does not match image " + image.string());
  }
  li.labels.resize(static_cast<std::size_t>(raw.height) * raw.width);
  for (std::size_t p = 0; p < li.labels.size(); ++p) {
    const std::uint8_t* px = &raw.bytes[p * raw.channels];
    li.labels[p] = raw.channels >= 3 ? deepglobe_class_from_rgb(px[0], px[1], px[2])
                                     : deepglobe_class_from_rgb(px[0], px[0], px[0]);
  }
  return li;
}

// deepglobe: <id>_sat.png with <id>_mask.png color-coded labels.
// isic, chestx: <id>.png with binary <id>_mask.png.
inline int cmd_preprocess(const Options& o) {
  if (o.in_dir.empty() || o.out.empty()) throw ConfigError("preprocess needs --in and --out");
  if (!fs::is_directory(o.in_dir)) throw IoError("input directory not found: " + o.in_dir);
  int target = 0;
  if (o.benchmark == "isic") target = kIsicSize;
  else if (o.benchmark == "chestx") target = kChestXSize;
  else if (o.benchmark != "deepglobe") throw ConfigError("unknown benchmark '" + o.benchmark + "' (deepglobe|isic|chestx)");

  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(o.in_dir)) {
    const std::string stem = e.path().stem().string();
    if (e.path().extension() != ".png" || stem.ends_with("_mask")) continue;
    inputs.push_back(e.path());
  }
  std::sort(inputs.begin(), inputs.end());
  Dataset out{o.benchmark, {}};
  for (const fs::path& img : inputs) {
    std::string id = img.stem().string();
    if (target == 0) {
      if (!id.ends_with("_sat")) continue;
      id.resize(id.size() - 4);
    }
    const fs::path mask = img.parent_path() / (id + "_mask.png");
    if (!fs::exists(mask)) throw IoError("missing mask " + mask.string() + " for " + img.string());
    if (target == 0) {
      for (const Tile& t : tile_deepglobe(read_deepglobe_pair(img, mask))) {
        for (Sample& s : tile_samples(t, o.benchmark)) out.samples.push_back(std::move(s));
      }
    } else {
      Sample s;
      s.image = read_png(img);
      s.mask = read_mask_png(mask);
      s.class_id = 0;
      s.domain_id = o.benchmark;
      out.samples.push_back(resize_benchmark(s, target));
    }
  }
  save_datasets({out}, o.out);
  spdlog::info("{}: {} inputs -> {} samples in {}", o.benchmark, inputs.size(), out.samples.size(), o.out);
  return 0;
}

inline int cmd_train(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path dir = output_dir(c, o);
  fs::create_directories(dir);
  const std::vector<Dataset> train = select_domains(build_datasets(c), c.data.held_out, false);

  TavpModel model(c.model, c.model_seed());
  Trainer trainer(model, c.resolved_train());
  const fs::path ck_path = dir / kCheckpointFile;
  if (o.resume) {
    restore_checkpoint(read_checkpoint(ck_path), model, &trainer);
    spdlog::info("resumed from {} at step {}", ck_path.string(), trainer.global_step());
  } else {
    fs::remove(dir / kMetricsFile);
  }
  trainer.set_metrics_log((dir / kMetricsFile).string());
  trainer.train(train);
  save_checkpoint(ck_path, model, &trainer, to_json(c));
  write_text(dir / kConfigFile, to_json(c).dump(2) + "\n");
  spdlog::info("checkpoint written to {}", ck_path.string());
  return 0;
}

// Model configured from the checkpoint's stored run config.
inline std::unique_ptr<TavpModel> load_model(const fs::path& path, RunConfig& c) {
  const CheckpointData ck = read_checkpoint(path);
  if (ck.header.contains("config")) {
    const RunConfig stored = run_config_from_json(ck.header["config"]);
    c.model = stored.model;
  }
  auto model = std::make_unique<TavpModel>(c.model, c.model_seed());
  restore_checkpoint(ck, *model);
  return model;
}

inline std::string model_id(const RunConfig& c) {
  std::string id = "tavp";
  if (!c.model.use_cdtap) id += "-no-cdtap";
  if (!c.model.use_mff) id += "-no-mff";
  if (c.model.prompt_combine != PromptCombine::kAdd) id += std::string("-") + to_string(c.model.prompt_combine);
  return id;
}

inline int cmd_eval(const Options& o) {
  RunConfig c = resolve_config(o);
  const fs::path dir = output_dir(c, o);
  const std::vector<Dataset> test = evaluation_domains(c);
  EvalReport report;
  if (o.oracle) {
    report = evaluate(oracle_predictor(), test, c.eval.shots, c.eval.episodes, c.eval_seed(), "oracle");
  } else {
    const fs::path ck = o.checkpoint.empty() ? dir / kCheckpointFile : fs::path(o.checkpoint);
    auto model = load_model(ck, c);
    report = evaluate(model_predictor(*model), test, c.eval.shots, c.eval.episodes, c.eval_seed(), model_id(c));
  }
  write_report(report, dir);
  std::cout << report_table(report);
  return 0;
}

inline int cmd_viz(const Options& o) {
  RunConfig c = resolve_config(o);
  const fs::path dir = output_dir(c, o);
  const std::vector<Dataset> test = evaluation_domains(c);
  const fs::path ck = o.checkpoint.empty() ? dir / kCheckpointFile : fs::path(o.checkpoint);
  std::unique_ptr<TavpModel> model;
  if (!o.oracle) model = load_model(ck, c);
  const Predictor predict = o.oracle ? oracle_predictor() : model_predictor(*model);
  const fs::path viz = dir / "viz";
  fs::create_directories(viz);
  for (const Dataset& ds : test) {
    for (int shot : c.eval.shots) {
      const auto episodes = evaluation_episodes(ds, shot, o.count, c.eval_seed());
      for (std::size_t i = 0; i < episodes.size(); ++i) {
        const fs::path path = viz / (ds.domain_id + "_" + std::to_string(shot) + "shot_" + std::to_string(i) + ".png");
        render_overlay(episodes[i], predict(episodes[i]), path);
      }
    }
  }
  spdlog::info("overlays written to {}", viz.string());
  return 0;
}

// ---------------------------------------------------------------------------

inline void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "run config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory");
}

inline void add_model_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--shot", o.shot, "support images per episode")->check(CLI::IsMember({1, 5}));
  cmd->add_flag("--no-cdtap", o.no_cdtap, "disable the adaptive prompt path");
  cmd->add_flag("--no-mff", o.no_mff, "use the last encoder level only");
  cmd->add_option("--prompt-combine", o.prompt_combine, "add|mul")->check(CLI::IsMember({"add", "mul"}));
}

// Returns the process exit code.
inline int run(int argc, char** argv) {
  CLI::App app{"tavp: few-shot cross-domain segmentation"};
  app.require_subcommand(1);
  Options o;
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  auto* gen = app.add_subcommand("gen", "generate the synthetic domain suite");
  add_common(gen, o);
  auto* pre = app.add_subcommand("preprocess", "tile or resize a benchmark export");
  pre->add_option("benchmark", o.benchmark, "deepglobe|isic|chestx")->required();
  pre->add_option("--in", o.in_dir, "input directory")->required();
  pre->add_option("--out", o.out, "output directory")->required();
  auto* train = app.add_subcommand("train", "train the adapter modules");
  add_common(train, o);
  add_model_flags(train, o);
  train->add_flag("--resume", o.resume, "continue from <out>/checkpoint.bin");
  auto* ev = app.add_subcommand("eval", "evaluate on held-out domains");
  add_common(ev, o);
  add_model_flags(ev, o);
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out>/checkpoint.bin)");
  ev->add_flag("--oracle", o.oracle, "predict the ground truth");
  auto* viz = app.add_subcommand("viz", "render prediction overlays");
  add_common(viz, o);
  add_model_flags(viz, o);
  viz->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out>/checkpoint.bin)");
  viz->add_option("--count", o.count, "episodes per domain and shot")->check(CLI::PositiveNumber);
  viz->add_flag("--oracle", o.oracle, "predict the ground truth");
  auto* cfg = app.add_subcommand("config", "print the resolved config");
  add_common(cfg, o);
  add_model_flags(cfg, o);
  cfg->add_flag("--print-defaults", o.print_defaults, "print built-in defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (*gen) return cmd_gen(o);
    if (*pre) return cmd_preprocess(o);
    if (*train) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*viz) return cmd_viz(o);
    if (*cfg) return cmd_config(o);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 1;
  }
  return 1;
}

}  // namespace tavp::cli

#endif  // TAVP_CLI_HPP_
