#pragma once

// Toy training loop, evaluation and checkpoints.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "cffm/metrics.hpp"
#include "cffm/model.hpp"
#include "cffm/synth.hpp"

namespace cffm {

/// Adaptive moment estimation with bias correction.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, const OptimizerConfig& config);

  void zero_grad();
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  OptimizerConfig config_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

struct EvalPoint {
  std::size_t iteration = 0;
  double miou = 0.0;
};

template <typename T>
struct TrainResult {
  SegModel<T> model;
  std::vector<double> losses;      // per iteration, batch mean
  std::vector<EvalPoint> miou;     // train-set mIoU trajectory
  MetricReport report;             // final metrics on the training clips
};

/// Streams every clip through the model and scores the argmax masks:
/// VC_n for each n in config.vc_windows that fits the clips, mVC_n, IoU.
template <typename T>
MetricReport evaluate(SegModel<T>& model, std::span<const Clip> clips);

using ProgressFn = std::function<void(std::size_t iteration, double loss)>;

/// Samples (clip, frame) pairs in shuffled epochs, `batch` per iteration.
/// A non-finite loss throws NumericError naming the iteration.
template <typename T>
TrainResult<T> train_toy(const RunConfig& config, std::span<const Clip> clips, const ProgressFn& progress = {});

/// Directory with one CFT1 file per parameter and manifest.json.
template <typename T>
void save_checkpoint(SegModel<T>& model, const std::filesystem::path& dir);

template <typename T>
SegModel<T> load_checkpoint(const std::filesystem::path& dir);

template <typename T>
nlohmann::json train_report(const TrainResult<T>& result);

}  // namespace cffm
