// cffm command-line front end.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cffm/bench.hpp"
#include "cffm/cft.hpp"
#include "cffm/config.hpp"
#include "cffm/cost.hpp"
#include "cffm/gradcheck.hpp"
#include "cffm/stream.hpp"
#include "cffm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cffm;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

// Report goes to stdout, and to --out (file or directory) when given.
void emit(const json& report, const std::string& out, const std::string& default_name) {
  const auto text = report.dump(2);
  std::cout << text << "\n";
  if (out.empty()) return;
  fs::path path(out);
  if (fs::is_directory(path) || path.extension().empty()) {
    fs::create_directories(path);
    path /= default_name;
  } else if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text << "\n";
}

RunConfig run_config(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig config = path.empty() ? RunConfig::toy() : RunConfig::load(path);
  if (seed) {
    config.seed = *seed;
    config.data.seed = *seed;
  }
  for (const auto& w : config.validate()) std::cerr << "warning: " << w << "\n";
  return config;
}

void save_clip(const Clip& clip, const fs::path& dir) {
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "masks");
  char name[32];
  for (std::size_t t = 0; t < clip.length(); ++t) {
    std::snprintf(name, sizeof name, "%05zu.cft", t);
    cft::save(dir / "frames" / name, clip.images[t]);
    cft::save(dir / "masks" / name, clip.gt.frame_tensor(t));
  }
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".cft") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Accepts a directory of mask files or a clip directory with masks/ inside.
MaskSequence load_masks(const fs::path& dir) {
  MaskSequence seq;
  const fs::path src = fs::is_directory(dir / "masks") ? dir / "masks" : dir;
  for (const auto& f : sorted_files(src)) seq.push(cft::load<std::uint8_t>(f));
  if (seq.length() == 0) throw std::runtime_error("no .cft masks in " + dir.string());
  return seq;
}

Clip load_clip(const fs::path& dir, std::size_t classes) {
  Clip clip;
  for (const auto& f : sorted_files(dir / "frames")) clip.images.push_back(cft::load<float>(f));
  clip.gt = load_masks(dir / "masks");
  clip.gt.classes = classes;
  if (clip.images.size() != clip.gt.length()) throw std::runtime_error("frame and mask counts differ in " + dir.string());
  return clip;
}

template <typename T>
json train_and_save(const RunConfig& config, const std::string& out) {
  const auto clips = gen_clips(config.data, config.train.clips);
  auto result = train_toy<T>(config, clips, [&](std::size_t it, double loss) {
    if (it % 10 == 0 || it + 1 == config.train.iterations) std::cerr << "iter " << it << " loss " << loss << "\n";
  });
  if (!out.empty()) save_checkpoint(result.model, fs::path(out) / "checkpoint");
  return train_report(result);
}

template <typename T>
json stream_and_save(const std::string& checkpoint, const Clip& clip, const std::string& out) {
  auto model = load_checkpoint<T>(checkpoint);
  auto result = stream_segment(clip, model);
  auto pred = predicted_masks(result, clip.gt);
  if (!out.empty()) {
    fs::create_directories(fs::path(out) / "pred");
    char name[32];
    for (std::size_t t = 0; t < pred.length(); ++t) {
      std::snprintf(name, sizeof name, "%05zu.cft", t);
      cft::save(fs::path(out) / "pred" / name, pred.frame_tensor(t));
    }
  }
  json report{{"frames", clip.length()}, {"encoder_calls", result.encoder_calls}};
  std::vector<MaskSequence> gt{clip.gt}, pr{pred};
  report["iou"] = iou_report(gt, pr, model.config.classes);
  for (auto n : model.config.vc_windows)
    if (n <= clip.length()) report["vc"][std::to_string(n)] = vc_n(clip.gt, pred, n, model.config.vc_strict);
  return report;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine video feature mining toolkit"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub, bool config_required = false) {
    auto* opt = sub->add_option("--config", config_path, "JSON configuration");
    if (config_required) opt->required();
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_option("--out", out, "Output file or directory");
  };

  auto* gen = app.add_subcommand("gen", "Generate synthetic clips as CFT1 files");
  common(gen);
  std::size_t gen_clips_count = 0;
  gen->add_option("--clips", gen_clips_count, "Number of clips (default: train.clips)");

  auto* train = app.add_subcommand("train-toy", "Train the toy model on synthetic clips");
  common(train);
  std::optional<std::size_t> iterations;
  train->add_option("--iterations", iterations, "Override train.iterations");

  auto* stream = app.add_subcommand("stream", "Streaming inference with a checkpoint");
  common(stream);
  std::string checkpoint, clip_dir;
  stream->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  stream->add_option("--clip", clip_dir, "Clip directory written by gen (default: generate one)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  common(grad);
  std::string only;
  grad->add_option("--only", only, "Check only parameters whose name contains this");

  auto* bench_cmd = app.add_subcommand("bench", "Time CFFM against full attention");
  common(bench_cmd);
  std::optional<std::size_t> reps;
  bench_cmd->add_option("--reps", reps, "Override repetitions");

  auto* cost = app.add_subcommand("cost", "Analytic multiply and pair counts");
  common(cost, true);
  bool measure = false, with_baseline = false;
  cost->add_flag("--measure", measure, "Also run an instrumented forward");
  cost->add_flag("--baseline", with_baseline, "With --measure, also measure full attention");

  auto* eval = app.add_subcommand("eval-vc", "Video consistency and IoU of predicted masks");
  std::string gt_dir, pred_dir, n_list = "8,16";
  std::optional<std::size_t> classes;
  bool strict = false;
  eval->add_option("--gt", gt_dir, "Ground-truth mask directory")->required();
  eval->add_option("--pred", pred_dir, "Predicted mask directory")->required();
  eval->add_option("--n", n_list, "Comma-separated window lengths");
  eval->add_option("--classes", classes, "Class count (default: largest label + 1)");
  eval->add_flag("--strict", strict, "Require predicted labels to match the ground truth");
  eval->add_option("--out", out, "Output file or directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto config = run_config(config_path, seed);
      const std::size_t count = gen_clips_count ? gen_clips_count : config.train.clips;
      const auto clips = gen_clips(config.data, count);
      const fs::path dir = out.empty() ? fs::path("clips") : fs::path(out);
      char name[32];
      for (std::size_t i = 0; i < clips.size(); ++i) {
        std::snprintf(name, sizeof name, "clip_%03zu", i);
        save_clip(clips[i], dir / name);
      }
      json report{{"clips", count}, {"dir", dir.string()}, {"data", config.data}};
      std::ofstream(dir / "spec.json") << report.dump(2) << "\n";
      std::cout << report.dump(2) << "\n";
    } else if (*train) {
      auto config = run_config(config_path, seed);
      if (iterations) config.train.iterations = *iterations;
      auto report = config.precision == Precision::f64 ? train_and_save<double>(config, out)
                                                       : train_and_save<float>(config, out);
      emit(report, out, "report.json");
    } else if (*stream) {
      const auto manifest = read_json((fs::path(checkpoint) / "manifest.json").string());
      auto config = manifest.at("config").get<RunConfig>();
      if (!config_path.empty()) config.data = RunConfig::load(config_path).data;
      if (seed) config.data.seed = *seed;
      const Clip clip = clip_dir.empty() ? gen_clip(config.data) : load_clip(clip_dir, config.classes);
      auto report = config.precision == Precision::f64 ? stream_and_save<double>(checkpoint, clip, out)
                                                       : stream_and_save<float>(checkpoint, clip, out);
      emit(report, out, "stream.json");
    } else if (*grad) {
      GradcheckConfig config = config_path.empty() ? GradcheckConfig{} : read_json(config_path).get<GradcheckConfig>();
      if (seed) config.seed = *seed;
      if (!only.empty()) config.only = only;
      auto report = gradcheck(config);
      emit(report, out, "gradcheck.json");
      return report.pass ? 0 : 1;
    } else if (*bench_cmd) {
      BenchConfig config = config_path.empty() ? BenchConfig{} : read_json(config_path).get<BenchConfig>();
      if (seed) config.seed = *seed;
      if (reps) config.reps = *reps;
      emit(bench(config), out, "bench.json");
    } else if (*cost) {
      const auto j = read_json(config_path);
      json report;
      if (j.contains("schedule")) {
        const auto schedule = j.at("schedule").get<ContextSchedule>();
        for (const auto& w : schedule.validate()) std::cerr << "warning: " << w << "\n";
        const auto model = CostModel::from_schedule(schedule, j.at("h"), j.at("w"), j.at("c"), j.value("N", 1),
                                                    j.value("H", 1));
        if (measure) {
          MeasureOptions options;
          options.baseline = with_baseline;
          options.seed = seed.value_or(j.value("seed", std::uint64_t{0}));
          report = measured_cost(model, schedule, options);
          if (!with_baseline) report["baseline"] = baseline_cost(model);
        } else {
          report = {{"cffm", cffm_cost(model)}, {"baseline", baseline_cost(model)}};
        }
        report["model"] = model;
      } else {
        if (measure) throw ContractError("--measure needs a schedule in the config");
        const auto model = j.get<CostModel>();
        report = {{"model", model}, {"cffm", cffm_cost(model)}, {"baseline", baseline_cost(model)}};
      }
      emit(report, out, "cost.json");
    } else if (*eval) {
      std::vector<MaskSequence> gts, preds;
      const bool single = fs::is_directory(fs::path(gt_dir) / "masks") || sorted_dirs(gt_dir).empty();
      if (single) {
        gts.push_back(load_masks(gt_dir));
        preds.push_back(load_masks(pred_dir));
      } else {
        for (const auto& d : sorted_dirs(gt_dir)) {
          gts.push_back(load_masks(d));
          preds.push_back(load_masks(fs::path(pred_dir) / d.filename()));
        }
      }
      std::size_t k = 0;
      for (const auto* group : {&gts, &preds})
        for (const auto& seq : *group)
          for (const auto& f : seq.frames)
            for (auto v : f)
              if (v != seq.ignore) k = std::max<std::size_t>(k, static_cast<std::size_t>(v) + 1);
      k = classes.value_or(k);
      for (auto* group : {&gts, &preds})
        for (auto& seq : *group) {
          seq.classes = k;
          seq.validate();
        }
      MetricReport report;
      for (auto n : parse_list(n_list)) {
        auto& per_video = report.vc[n];
        for (std::size_t v = 0; v < gts.size(); ++v) per_video.push_back(vc_n(gts[v], preds[v], n, strict));
        bool any = false;
        for (const auto& x : per_video) any = any || x.value.has_value();
        report.mvc[n] = any ? std::optional<double>(mvc(per_video)) : std::nullopt;
      }
      report.iou = iou_report(gts, preds, k);
      emit(report, out, "metrics.json");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
