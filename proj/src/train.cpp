#include "cffm/train.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <utility>

#include "cffm/cft.hpp"
#include "cffm/stream.hpp"

namespace cffm {

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, const OptimizerConfig& config)
    : params_(std::move(params)), config_(config) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) {
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor<T>(p->value.shape());
    p->zero_grad();
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T lr = static_cast<T>(config_.lr), eps = static_cast<T>(config_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto value = params_[i]->value.data();
    auto grad = params_[i]->grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * grad[j];
      v[j] = b2 * v[j] + (T(1) - b2) * grad[j] * grad[j];
      const T mhat = m[j] / static_cast<T>(c1);
      const T vhat = v[j] / static_cast<T>(c2);
      value[j] -= lr * (mhat / (std::sqrt(vhat) + eps));
    }
  }
}

template <typename T>
MetricReport evaluate(SegModel<T>& model, std::span<const Clip> clips) {
  if (clips.empty()) throw ContractError("evaluate: no clips");
  std::vector<MaskSequence> gt, pred;
  for (const auto& clip : clips) {
    gt.push_back(clip.gt);
    pred.push_back(predicted_masks(stream_segment(clip, model), clip.gt));
  }
  MetricReport report;
  std::size_t shortest = gt.front().length();
  for (const auto& g : gt) shortest = std::min(shortest, g.length());
  for (auto n : model.config.vc_windows) {
    if (n > shortest) continue;
    auto& per_video = report.vc[n];
    for (std::size_t v = 0; v < gt.size(); ++v) per_video.push_back(vc_n(gt[v], pred[v], n, model.config.vc_strict));
    bool any = false;
    for (const auto& x : per_video) any = any || x.value.has_value();
    report.mvc[n] = any ? std::optional<double>(mvc(per_video)) : std::nullopt;
  }
  report.iou = iou_report(gt, pred, model.config.classes);
  return report;
}

template <typename T>
TrainResult<T> train_toy(const RunConfig& config, std::span<const Clip> clips, const ProgressFn& progress) {
  if (clips.empty()) throw ContractError("train_toy: need at least one clip");
  TrainResult<T> result{SegModel<T>::init(config), {}, {}, {}};
  auto& model = result.model;
  const auto params = model.parameters();
  Adam<T> adam(params, config.optimizer);
  Rng rng = Rng(config.seed).fork(4);

  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    if (clips[c].gt.classes != config.classes) throw ContractError("train_toy: clip class count differs from K");
    for (std::size_t t = 0; t < clips[c].length(); ++t) samples.emplace_back(c, t);
  }
  std::size_t cursor = samples.size();
  auto next_sample = [&]() {
    if (cursor == samples.size()) {
      for (std::size_t i = samples.size(); i > 1; --i) std::swap(samples[i - 1], samples[rng.below(i)]);
      cursor = 0;
    }
    return samples[cursor++];
  };

  auto record_miou = [&](std::size_t iteration) {
    auto report = evaluate(model, clips);
    result.miou.push_back({iteration, report.iou->miou});
    return report;
  };

  const T inv_batch = T(1) / static_cast<T>(config.train.batch);
  for (std::size_t it = 0; it < config.train.iterations; ++it) {
    adam.zero_grad();
    double loss_sum = 0.0;
    try {
      for (std::size_t b = 0; b < config.train.batch; ++b) {
        const auto [c, t] = next_sample();
        const Clip& clip = clips[c];
        const auto plan = model.plan(clip.gt.h, clip.gt.w);
        // Each distinct source frame is encoded once per sample.
        std::map<std::size_t, Var<T>> encoded;
        auto features = [&](std::size_t frame) {
          auto it2 = encoded.find(frame);
          if (it2 == encoded.end()) it2 = encoded.emplace(frame, model.encode(clip.images[frame])).first;
          return it2->second;
        };
        std::vector<FrameFeature<T>> frames{{0, features(t)}};
        for (auto k : config.offsets) frames.push_back({k, features(source_frame(t, k))});
        auto out = model.predict(std::span<const FrameFeature<T>>(frames), plan, true);
        auto loss = segmentation_loss(out.logits, std::span<const std::int32_t>(clip.gt.frames[t]), out.aux,
                                      static_cast<T>(config.aux_weight));
        const double value = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(value)) throw NumericError("non-finite loss");
        loss_sum += value;
        scale(loss, inv_batch).backward();
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    adam.step();
    const double mean = loss_sum / static_cast<double>(config.train.batch);
    result.losses.push_back(mean);
    if (progress) progress(it, mean);
    const std::size_t done = it + 1;
    if (config.train.eval_every > 0 && done % config.train.eval_every == 0 && done < config.train.iterations) {
      record_miou(done);
    }
  }
  result.report = record_miou(config.train.iterations);
  return result;
}

namespace {

std::string file_name(std::size_t index, const std::string& name) {
  std::string out = std::to_string(index) + "_";
  for (char ch : name) out += (ch == '/' || ch == '\\') ? '_' : ch;
  return out + ".cft";
}

}  // namespace

template <typename T>
void save_checkpoint(SegModel<T>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["config"] = model.config;
  manifest["parameters"] = nlohmann::json::array();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto file = file_name(i, params[i]->name);
    cft::save(dir / file, params[i]->value);
    manifest["parameters"].push_back(
        {{"name", params[i]->name}, {"file", file}, {"shape", params[i]->value.shape()}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

template <typename T>
SegModel<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  in >> manifest;
  auto model = SegModel<T>::init(manifest.at("config").get<RunConfig>());
  std::map<std::string, Parameter<T>*> by_name;
  for (auto* p : model.parameters()) by_name[p->name] = p;
  std::size_t loaded = 0;
  for (const auto& entry : manifest.at("parameters")) {
    const auto name = entry.at("name").get<std::string>();
    auto found = by_name.find(name);
    if (found == by_name.end()) throw ContractError("checkpoint parameter '" + name + "' is not part of the model");
    auto value = cft::load<T>(dir / entry.at("file").get<std::string>());
    if (value.shape() != found->second->value.shape()) {
      throw DimensionError("checkpoint parameter '" + name + "' has shape " + shape_str(value.shape()) +
                           ", model expects " + shape_str(found->second->value.shape()));
    }
    found->second->value = std::move(value);
    ++loaded;
  }
  if (loaded != by_name.size()) throw ContractError("checkpoint is missing parameters");
  return model;
}

template <typename T>
nlohmann::json train_report(const TrainResult<T>& result) {
  nlohmann::json j;
  j["config"] = result.model.config;
  j["losses"] = result.losses;
  j["miou_trajectory"] = nlohmann::json::array();
  for (const auto& p : result.miou) j["miou_trajectory"].push_back({{"iteration", p.iteration}, {"miou", p.miou}});
  j["metrics"] = result.report;
  return j;
}

#define CFFM_INSTANTIATE(T)                                                                               \
  template class Adam<T>;                                                                                 \
  template MetricReport evaluate<T>(SegModel<T>&, std::span<const Clip>);                                 \
  template TrainResult<T> train_toy<T>(const RunConfig&, std::span<const Clip>, const ProgressFn&);       \
  template void save_checkpoint<T>(SegModel<T>&, const std::filesystem::path&);                          \
  template SegModel<T> load_checkpoint<T>(const std::filesystem::path&);                                 \
  template nlohmann::json train_report<T>(const TrainResult<T>&);

CFFM_INSTANTIATE(float)
CFFM_INSTANTIATE(double)
#undef CFFM_INSTANTIATE

}  // namespace cffm
