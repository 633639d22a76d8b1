// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "drat/model.hpp"

namespace drat {

/// Raised when the loss stops being finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Worker count from DRAT_THREADS (default: hardware concurrency, capped at 8).
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Exceptions are
/// rethrown on the caller (the lowest failing index wins).
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

struct Dataset {
  std::vector<synth::SyntheticClip> train;
  std::vector<synth::SyntheticClip> test;
};

Dataset load_dataset(const std::filesystem::path& dir);

/// Linear warm-up to cfg.lr, then cosine decay to zero at total_steps.
double learning_rate(const ModelConfig& cfg, std::size_t step);

/// Adam with decoupled weight decay, beta = (0.9, 0.999), eps = 1e-8.
class AdamW {
 public:
  AdamW(ParamList params, double weight_decay);
  /// Applies one update with the given per-parameter gradients.
  void step(double lr, const std::vector<std::vector<double>>& grads);
  std::size_t steps() const { return t_; }

 private:
  ParamList params_;
  double weight_decay_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainOptions {
  /// When non-empty, a checkpoint is written here after training.
  std::filesystem::path checkpoint_dir;
  /// Receives every metrics JSON line as it is produced.
  std::function<void(const std::string&)> on_metric;
  std::size_t threads = 0;  // 0: thread_count()
  bool eval_each_epoch = true;
};

struct TrainResult {
  std::vector<std::string> metrics;  // JSON lines
  std::vector<double> epoch_accuracy;
  double test_accuracy = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

TrainResult train(const Dataset& data, const ModelConfig& cfg, ModelParams& params, const TrainOptions& options = {});

/// Fraction of clips whose argmax logit equals the label.
double evaluate(const std::vector<synth::SyntheticClip>& clips, const ModelConfig& cfg, const ModelParams& params,
                std::size_t threads = 0);

/// Uniform nearest-index resampling of a clip to `frames` frames: frame i
/// takes source frame round(i * (T-1) / (frames-1)). Identity when frames == T.
synth::SyntheticClip resample_frames(const synth::SyntheticClip& clip, std::size_t frames);

struct Checkpoint {
  ModelConfig cfg;
  ModelParams params;
  std::string metrics_json;
};

void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, ModelParams& params,
                     const std::string& metrics_json);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace drat
