// SPDX-License-Identifier: Apache-2.0
#include "drat/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "drat/ops.hpp"
#include "drat/tensor_io.hpp"

namespace drat {

using nlohmann::json;

std::size_t thread_count() {
  if (const char* env = std::getenv("DRAT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  const auto hw = std::thread::hardware_concurrency();
  return std::clamp<std::size_t>(hw ? hw : 1, 1, 8);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  for (const auto& entry : synth::load_manifest(dir)) (entry.train ? d.train : d.test).push_back(synth::load_clip(entry));
  return d;
}

double learning_rate(const ModelConfig& cfg, std::size_t step) {
  const std::size_t warm = std::min(cfg.warmup(), cfg.total_steps);
  if (step < warm) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (cfg.total_steps <= warm) return cfg.lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(cfg.total_steps - warm);
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

AdamW::AdamW(ParamList params, double weight_decay) : params_(std::move(params)), weight_decay_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor->size(), 0.0);
    v_.emplace_back(p.tensor->size(), 0.0);
  }
}

void AdamW::step(double lr, const std::vector<std::vector<double>>& grads) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  DRAT_REQUIRE(grads.size() == params_.size(), "AdamW: gradient list does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].tensor->data_mut();
    const auto& g = grads[i];
    DRAT_REQUIRE(g.size() == w.size(), "AdamW: gradient size mismatch for " + params_[i].name);
    const double decay = params_[i].decay ? weight_decay_ : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g[j];
      v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g[j] * g[j];
      const double update = (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps) + decay * w[j];
      w[j] -= lr * update;
    }
  }
}

namespace {

std::string metric_line(const json& j) { return j.dump(); }

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// A worker's private copy of the parameters so graphs never share leaves.
struct Replica {
  ModelParams params;
  ParamList trainable;
};

}  // namespace

double evaluate(const std::vector<synth::SyntheticClip>& clips, const ModelConfig& cfg, const ModelParams& params,
                std::size_t threads) {
  if (clips.empty()) return 0.0;
  std::vector<int> correct(clips.size(), 0);
  parallel_for(clips.size(), threads ? threads : thread_count(), [&](std::size_t i) {
    NoGradGuard guard;
    const auto logits = forward(clips[i], cfg, params);
    correct[i] = argmax(logits.data()) == clips[i].label ? 1 : 0;
  });
  std::size_t n = 0;
  for (int c : correct) n += static_cast<std::size_t>(c);
  return static_cast<double>(n) / static_cast<double>(clips.size());
}

namespace {

double evaluate_cached(const std::vector<ClipFeatures>& feats, const std::vector<synth::SyntheticClip>& clips,
                       const ModelConfig& cfg, const ModelParams& params, std::size_t threads) {
  std::vector<int> correct(clips.size(), 0);
  parallel_for(clips.size(), threads, [&](std::size_t i) {
    NoGradGuard guard;
    correct[i] = argmax(forward_features(feats[i], cfg, params).data()) == clips[i].label ? 1 : 0;
  });
  std::size_t n = 0;
  for (int c : correct) n += static_cast<std::size_t>(c);
  return static_cast<double>(n) / static_cast<double>(clips.size());
}

}  // namespace

TrainResult train(const Dataset& data, const ModelConfig& cfg, ModelParams& params, const TrainOptions& options) {
  cfg.validate();
  DRAT_REQUIRE(!data.train.empty(), "training split is empty");
  for (const auto* split : {&data.train, &data.test})
    for (const auto& clip : *split)
      DRAT_REQUIRE(clip.label >= 0 && static_cast<std::size_t>(clip.label) < cfg.num_classes,
                   "clip label outside [0, num_classes)");
  const std::size_t threads = options.threads ? options.threads : thread_count();
  TrainResult result;
  const auto emit = [&](const json& j) {
    result.metrics.push_back(metric_line(j));
    if (options.on_metric) options.on_metric(result.metrics.back());
  };

  // With a frozen backbone the per-clip features never change.
  std::vector<ClipFeatures> cache, test_cache;
  if (!cfg.trainable_backbone) {
    const auto extract_all = [&](const std::vector<synth::SyntheticClip>& clips, std::vector<ClipFeatures>& out) {
      out.resize(clips.size());
      parallel_for(clips.size(), threads, [&](std::size_t i) {
        NoGradGuard guard;
        out[i] = extract_features(clips[i].video, clips[i].skeleton, cfg, params);
      });
    };
    extract_all(data.train, cache);
    extract_all(data.test, test_cache);
  }
  const auto test_accuracy = [&] {
    if (data.test.empty()) return 0.0;
    return cfg.trainable_backbone ? evaluate(data.test, cfg, params, threads)
                                  : evaluate_cached(test_cache, data.test, cfg, params, threads);
  };

  auto master = params.trainable(cfg);
  AdamW opt(master, cfg.weight_decay);
  std::vector<Replica> replicas;
  for (std::size_t w = 0; w < std::min(threads, cfg.batch_size); ++w) replicas.push_back({ModelParams::create(cfg), {}});
  // ParamList holds pointers, so build the lists once the replicas stop moving.
  for (auto& r : replicas) r.trainable = r.params.trainable(cfg);
  // Frozen parameters (the backbone) are copied once.
  {
    auto src = params.all();
    for (auto& r : replicas) copy_values(src, r.params.all());
  }

  const std::size_t n_train = data.train.size();
  std::vector<std::size_t> order(n_train);
  std::size_t cursor = n_train, epoch = 0;
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    if (cursor >= n_train) {
      for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
      Rng shuffle_rng = Rng::derive(cfg.seed, 0x5EED0000ULL + epoch);
      shuffle_rng.shuffle(std::span<std::size_t>(order));
      cursor = 0;
    }
    const std::size_t b = std::min(cfg.batch_size, n_train - cursor);
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   order.begin() + static_cast<std::ptrdiff_t>(cursor + b));
    cursor += b;

    for (auto& r : replicas) copy_values(master, r.trainable);
    std::vector<std::vector<std::vector<double>>> sample_grads(b);
    std::vector<double> sample_loss(b, 0.0);
    const std::size_t workers = std::min(replicas.size(), b);
    try {
      parallel_for(workers, workers, [&](std::size_t w) {
        auto& rep = replicas[w];
        for (std::size_t s = w; s < b; s += workers) {
          for (auto& p : rep.trainable) p.tensor->zero_grad();
          const auto& clip = data.train[batch[s]];
          const auto feats = cfg.trainable_backbone ? extract_features(clip.video, clip.skeleton, cfg, rep.params)
                                                    : cache[batch[s]];
          const auto logits = forward_features(feats, cfg, rep.params);
          const int label = clip.label;
          const auto loss = ops::cross_entropy(logits, std::span<const int>(&label, 1));
          loss.backward();
          sample_loss[s] = loss.item();
          auto& out = sample_grads[s];
          for (auto& p : rep.trainable) {
            if (p.tensor->has_grad()) {
              auto g = p.tensor->grad();
              out.emplace_back(g.begin(), g.end());
            } else {
              out.emplace_back(p.tensor->size(), 0.0);
            }
          }
        }
      });
    } catch (const NumericError& e) {
      throw TrainingError("training diverged at step " + std::to_string(step) + ": " + e.what(), step);
    }

    // Fixed-order reduction keeps results independent of the thread count.
    std::vector<std::vector<double>> grads(master.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < master.size(); ++i) grads[i].assign(master[i].tensor->size(), 0.0);
    for (std::size_t s = 0; s < b; ++s) {
      loss += sample_loss[s];
      for (std::size_t i = 0; i < master.size(); ++i)
        for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += sample_grads[s][i][j];
    }
    const double inv = 1.0 / static_cast<double>(b);
    loss *= inv;
    for (auto& g : grads)
      for (auto& x : g) x *= inv;
    if (!std::isfinite(loss)) throw TrainingError("loss is not finite at step " + std::to_string(step), step);

    const double lr = learning_rate(cfg, step);
    opt.step(lr, grads);
    result.final_loss = loss;
    result.steps = step + 1;
    emit({{"step", step}, {"loss", loss}, {"lr", lr}});

    const bool epoch_done = cursor >= n_train;
    const bool last = step + 1 == cfg.total_steps;
    if (epoch_done || last) {
      if ((options.eval_each_epoch && epoch_done) || last) {
        const double acc = test_accuracy();
        result.epoch_accuracy.push_back(acc);
        result.test_accuracy = acc;
        emit({{"epoch", epoch}, {"test_acc", acc}});
      }
      if (epoch_done) ++epoch;
    }
  }
  if (cfg.total_steps == 0) result.test_accuracy = test_accuracy();

  if (!options.checkpoint_dir.empty()) {
    json metrics = {{"test_acc", result.test_accuracy},
                    {"final_loss", result.final_loss},
                    {"steps", result.steps},
                    {"epoch_test_acc", result.epoch_accuracy},
                    {"seed", cfg.seed}};
    save_checkpoint(options.checkpoint_dir, cfg, params, metrics.dump(1));
    std::ofstream log(options.checkpoint_dir / "metrics.jsonl", std::ios::trunc);
    for (const auto& line : result.metrics) log << line << '\n';
    if (!log) throw IoError("failed writing metrics.jsonl");
  }
  return result;
}

synth::SyntheticClip resample_frames(const synth::SyntheticClip& clip, std::size_t frames) {
  DRAT_REQUIRE(frames >= 1, "frame count must be positive");
  const std::size_t T = clip.skeleton.frames();
  std::vector<std::size_t> index(frames);
  for (std::size_t i = 0; i < frames; ++i)
    index[i] = frames == 1 ? 0 : static_cast<std::size_t>(std::llround(static_cast<double>(i) * static_cast<double>(T - 1) / static_cast<double>(frames - 1)));
  synth::SyntheticClip out;
  out.label = clip.label;
  out.skeleton = clip.skeleton.select_frames(index);
  const std::size_t H = clip.video.dim(2), W = clip.video.dim(3), plane = H * W;
  std::vector<double> v(3 * frames * plane);
  auto src = clip.video.data();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < frames; ++t)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((c * T + index[t]) * plane), plane,
                  v.begin() + static_cast<std::ptrdiff_t>((c * frames + t) * plane));
  out.video = Tensor::from({3, frames, H, W}, std::move(v));
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, ModelParams& params,
                     const std::string& metrics_json) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "params", ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  for (const auto& p : params.all()) save_tensor(dir / "params" / (p.name + ".tnsr"), *p.tensor, DType::F64);
  std::ofstream c(dir / "config.json", std::ios::trunc);
  c << config_to_json(cfg) << '\n';
  std::ofstream m(dir / "metrics.json", std::ios::trunc);
  m << metrics_json << '\n';
  if (!c || !m) throw IoError("failed writing checkpoint metadata in " + dir.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto read = [](const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  Checkpoint ck{parse_config(read(dir / "config.json")), {}, {}};
  ck.params = ModelParams::create(ck.cfg);
  for (const auto& p : ck.params.all()) {
    const auto t = load_tensor(dir / "params" / (p.name + ".tnsr"));
    DRAT_REQUIRE(t.shape() == p.tensor->shape(), "checkpoint tensor " + p.name + " has shape " + shape_str(t.shape()));
    std::copy(t.data().begin(), t.data().end(), p.tensor->data_mut().begin());
  }
  const auto metrics = dir / "metrics.json";
  if (std::filesystem::exists(metrics)) ck.metrics_json = read(metrics);
  return ck;
}

}  // namespace drat
