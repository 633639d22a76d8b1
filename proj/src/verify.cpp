// SPDX-License-Identifier: Apache-2.0
#include "drat/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>

#include <json.hpp>

#include "drat/deformable.hpp"
#include "drat/gradcheck.hpp"
#include "drat/model.hpp"
#include "drat/ops.hpp"
#include "drat/pose.hpp"
#include "drat/reference.hpp"
#include "drat/stride.hpp"

namespace drat::verify {

using nlohmann::json;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0, bool grad = false) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

json tensor_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

// Tracks the worst trial of a repeated check.
struct Worst {
  double error = -1.0;
  json config;
  json inputs;
  void offer(double e, json cfg, const std::function<json()>& make_inputs) {
    if (e > error) {
      error = e;
      config = std::move(cfg);
      inputs = make_inputs();
    }
  }
};

CheckResult finish(std::string name, std::uint64_t seed, double tol, Worst& w) {
  CheckResult r;
  r.name = std::move(name);
  r.seed = seed;
  r.tolerance = tol;
  r.max_error = std::max(0.0, w.error);
  r.passed = w.error >= 0.0 && w.error <= tol;
  r.config_json = w.config.is_null() ? "{}" : w.config.dump();
  if (!r.passed) r.inputs_json = w.inputs.dump();
  return r;
}

ref::Matrix stack_rows(std::span<const Tensor> parts) {
  return ref::from_tensor(parts.size() == 1 ? parts[0] : ops::concat(parts, 0));
}

std::uint64_t dots_of(const std::function<void()>& fn) {
  OpCounter counter;
  CountingScope scope(counter);
  fn();
  return counter.dot_products;
}

}  // namespace

ComplexityRow measure_joint_complexity(std::size_t T, std::size_t R, std::size_t wnd, std::size_t stride) {
  NoGradGuard guard;
  Rng rng(0xC0FFEE);
  const std::size_t D = 8, heads = 2;
  const auto plan = stride ? stride::window_starts(R, wnd, stride) : stride::window_starts(R, wnd);
  const auto block = BlockParams::create(D, rng);
  const auto p = random_tensor({T * R, D}, rng);
  const Tensor modal[] = {random_tensor({T, D}, rng), random_tensor({T, D}, rng)};
  ComplexityRow row{"joints", T, R, 0, wnd, plan.stride, 0, 0, 0.0};
  row.stride_dot_products = dots_of([&] { stride::joint_stride_attention(p, T, modal, block, plan, heads); });
  const Tensor parts[] = {p, modal[0], modal[1]};
  const auto all = ops::concat(parts, 0);
  row.oracle_dot_products = dots_of([&] { full_attention_oracle(all, all, all, heads); });
  row.ratio = static_cast<double>(row.stride_dot_products) / static_cast<double>(row.oracle_dot_products);
  return row;
}

ComplexityRow measure_temporal_complexity(std::size_t T, std::size_t hw, std::size_t R, std::size_t wnd,
                                          std::size_t stride) {
  NoGradGuard guard;
  Rng rng(0xBEEF);
  const std::size_t D = 8, heads = 2;
  const auto plan = stride ? stride::window_starts(T, wnd, stride) : stride::window_starts(T, wnd);
  const auto block = BlockParams::create(D, rng);
  const Tensor groups[] = {random_tensor({T * hw, D}, rng), random_tensor({T * R, D}, rng), random_tensor({T, D}, rng),
                           random_tensor({T, D}, rng), random_tensor({T, D}, rng)};
  ComplexityRow row{"time", T, R, hw + R + 3, wnd, plan.stride, 0, 0, 0.0};
  row.stride_dot_products = dots_of([&] { stride::temporal_stride_attention(groups, T, block, plan, heads); });
  const auto all = ops::concat(groups, 0);
  row.oracle_dot_products = dots_of([&] { full_attention_oracle(all, all, all, heads); });
  row.ratio = static_cast<double>(row.stride_dot_products) / static_cast<double>(row.oracle_dot_products);
  return row;
}

std::string complexity_json(std::span<const ComplexityRow> rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"axis", r.axis},
                   {"T", r.T},
                   {"R", r.R},
                   {"D_n", r.D_n},
                   {"wnd", r.wnd},
                   {"stride", r.stride},
                   {"stride_dot_products", r.stride_dot_products},
                   {"oracle_dot_products", r.oracle_dot_products},
                   {"ratio", r.ratio}});
  return out.dump(1);
}

CheckResult check_identity_sampling(std::uint64_t seed, std::size_t trials) {
  Worst worst;
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng = Rng::derive(seed, i);
    const deform::GridExtents g{1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(5)};
    const std::size_t D = 1 + rng.below(8);
    const auto z = random_tensor({g.count(), D}, rng);
    const auto grid = deform::make_reference_grid(g, g);
    const auto out = deform::three_d_token_search(z, grid, Tensor::zeros({g.count(), 3}));
    double e = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) e = std::max(e, std::abs(out.data()[j] - z.data()[j]));
    worst.offer(e, {{"t", g.t}, {"h", g.h}, {"w", g.w}, {"D", D}, {"trial", i}}, [&] { return json{{"Z", tensor_json(z)}}; });
  }
  return finish("identity_sampling", seed, 1e-12, worst);
}

CheckResult check_joint_equivalence(std::uint64_t seed, std::size_t trials) {
  Worst worst;
  for (std::size_t i = 0; i < trials; ++i) {
    NoGradGuard guard;
    Rng rng = Rng::derive(seed, 1000 + i);
    const std::size_t T = 1 + rng.below(4), R = 1 + rng.below(6), heads = 1 + rng.below(2), D = 4 * heads;
    const auto block = BlockParams::create(D, rng);
    const auto p = random_tensor({T * R, D}, rng);
    const Tensor modal[] = {random_tensor({T, D}, rng), random_tensor({T, D}, rng)};
    const auto out = stride::joint_stride_attention(p, T, modal, block, stride::window_starts(R, R), heads);
    const Tensor inputs[] = {p, modal[0], modal[1]};
    const Tensor outputs[] = {out.main, out.modal[0], out.modal[1]};
    const auto all = stack_rows(inputs);
    const double e = ref::max_abs_diff(stack_rows(outputs), ref::attention_block(block, all, all, heads));
    worst.offer(e, {{"T", T}, {"R", R}, {"D", D}, {"heads", heads}, {"wnd", R}, {"trial", i}},
                [&] { return json{{"P", tensor_json(p)}, {"M_pose", tensor_json(modal[0])}, {"M_cls", tensor_json(modal[1])}}; });
  }
  return finish("joint_stride_vs_full_attention", seed, 1e-9, worst);
}

CheckResult check_temporal_equivalence(std::uint64_t seed, std::size_t trials) {
  Worst worst;
  for (std::size_t i = 0; i < trials; ++i) {
    NoGradGuard guard;
    Rng rng = Rng::derive(seed, 2000 + i);
    const std::size_t T = 1 + rng.below(4), hw = 1 + rng.below(4), R = 1 + rng.below(4);
    const std::size_t heads = 1 + rng.below(2), D = 4 * heads;
    const auto block = BlockParams::create(D, rng);
    const Tensor groups[] = {random_tensor({T * hw, D}, rng), random_tensor({T * R, D}, rng), random_tensor({T, D}, rng),
                             random_tensor({T, D}, rng), random_tensor({T, D}, rng)};
    const auto out = stride::temporal_stride_attention(groups, T, block, stride::window_starts(T, T), heads);
    const auto all = stack_rows(groups);
    const double e = ref::max_abs_diff(stack_rows(out), ref::attention_block(block, all, all, heads));
    worst.offer(e, {{"T", T}, {"hw", hw}, {"R", R}, {"D_n", hw + R + 3}, {"D", D}, {"heads", heads}, {"wnd", T}, {"trial", i}},
                [&] {
                  json in = json::array();
                  for (const auto& g : groups) in.push_back(tensor_json(g));
                  return json{{"groups", in}};
                });
  }
  return finish("temporal_stride_vs_full_attention", seed, 1e-9, worst);
}

CheckResult check_deformable_equivalence(std::uint64_t seed, std::size_t trials) {
  Worst worst;
  for (std::size_t i = 0; i < trials; ++i) {
    NoGradGuard guard;
    Rng rng = Rng::derive(seed, 3000 + i);
    const deform::GridExtents g{1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
    const std::size_t heads = 1 + rng.below(2), D = 4 * heads;
    const deform::AttentionConfig cfg{heads, 1, 1, 0.5};
    const auto params = deform::DeformableParams::create(D, 1, rng, true);
    const auto z = random_tensor({g.count(), D}, rng);
    const Tensor modal[] = {random_tensor({g.t, D}, rng), random_tensor({g.t, D}, rng)};
    const auto out = deform::deformable_block(z, g, modal, params, cfg);
    const Tensor inputs[] = {z, modal[0], modal[1]};
    const Tensor outputs[] = {out.main, out.modal[0], out.modal[1]};
    const auto x = stack_rows(inputs);
    const double e = ref::max_abs_diff(stack_rows(outputs), ref::attention_block(params.block, x, x, heads));
    worst.offer(e, {{"t", g.t}, {"h", g.h}, {"w", g.w}, {"D", D}, {"heads", heads}, {"trial", i}},
                [&] { return json{{"Z", tensor_json(z)}}; });
  }
  return finish("deformable_zero_offset_vs_full_attention", seed, 1e-9, worst);
}

namespace {

// Scalar probe: weighted sum of all outputs, weights fixed per check.
Tensor probe(const Tensor& out, const Tensor& weights) { return ops::sum(ops::mul(out, weights)); }

CheckResult grad_result(std::string name, std::uint64_t seed, double tol, const GradcheckResult& g, json config) {
  CheckResult r;
  r.name = std::move(name);
  r.seed = seed;
  r.tolerance = tol;
  r.max_error = g.max_relative_error;
  r.passed = g.max_relative_error < tol;
  config["components"] = g.components;
  config["max_absolute_error"] = g.max_absolute_error;
  r.config_json = config.dump();
  if (!r.passed)
    r.inputs_json = json{{"worst_leaf", g.worst_leaf},
                         {"worst_index", g.worst_index},
                         {"analytic", g.worst_analytic},
                         {"numeric", g.worst_numeric}}
                        .dump();
  return r;
}

}  // namespace

std::vector<CheckResult> gradcheck_battery(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng = Rng::derive(seed, 4000);
  const double tol = 1e-5;
  const auto run = [&](std::string name, std::vector<Tensor> leaves, const std::function<Tensor()>& f, json config = json::object()) {
    const auto w = random_tensor(f().shape(), rng, -1.0, 1.0);
    const auto g = gradcheck([&] { return probe(f(), w); }, leaves);
    out.push_back(grad_result("gradcheck_" + name, seed, tol, g, std::move(config)));
  };
  const auto leaf = [&](Shape s) { return random_tensor(std::move(s), rng, -2.0, 2.0, true); };

  {
    auto a = leaf({4, 5}), b = leaf({5, 3});
    run("matmul", {a, b}, [=] { return ops::matmul(a, b); });
  }
  {
    auto a = leaf({3, 4}), b = leaf({3, 4});
    run("add_mul", {a, b}, [=] { return ops::mul(ops::add(a, b), a); });
  }
  {
    auto x = leaf({3, 4}), w = leaf({4, 5}), b = leaf({5});
    run("linear", {x, w, b}, [=] { return ops::linear(x, w, b); });
  }
  {
    auto a = leaf({2, 3}), b = leaf({4, 3});
    run("concat_slice", {a, b}, [=] {
      const Tensor parts[] = {a, b};
      return ops::slice(ops::concat(parts, 0), 0, 1, 5);
    });
  }
  {
    auto x = leaf({3, 5});
    run("tanh", {x}, [=] { return ops::tanh(x); });
    run("gelu", {x}, [=] { return ops::gelu(x); });
    run("softmax", {x}, [=] { return ops::softmax(x); });
    run("mean", {x}, [=] { return ops::mean(x, 0); });
  }
  {
    auto x = leaf({3, 6}), g = leaf({6}), b = leaf({6});
    run("layer_norm", {x, g, b}, [=] { return ops::layer_norm(x, g, b); });
  }
  {
    auto x = leaf({4, 5});
    const std::vector<int> labels{0, 3, 1, 4};
    run("cross_entropy", {x}, [=] { return ops::cross_entropy(x, labels); });
  }
  {
    auto x = leaf({2, 4, 4, 3}), k = leaf({3, 2, 2, 2, 2});
    run("conv3d", {x, k}, [=] { return ops::conv3d(x, k, ops::Stride3{2, 1, 1}); });
  }
  {
    auto q = leaf({5, 8}), k = leaf({6, 8}), v = leaf({6, 8});
    run("attention", {q, k, v}, [=] { return ops::attention(q, k, v, 2); });
  }
  {
    auto x = leaf({4, 3});
    const std::vector<std::size_t> rows{0, 2, 2, 3, 1, 3};
    const std::vector<std::size_t> targets{0, 1, 1, 2, 3, 0};
    run("gather_scatter", {x}, [=] { return ops::scatter_mean_rows(ops::gather_rows(x, rows), targets, 4); });
  }
  {
    auto fa = leaf({3, 2, 5, 5});
    synth::SkeletonSequence sk(2, 3);
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t r = 0; r < 3; ++r) sk.set(t, r, rng.uniform(0.0, 4.9), rng.uniform(0.0, 4.9));
    const auto heat = pose::gaussian_heatmap(sk, 1.0, 5, 5);
    run("pose_pooling", {fa}, [=] { return pose::pool_joint_features(fa, heat); });
  }
  {
    // Offsets kept away from cell boundaries so the piecewise-linear sampler is smooth.
    const deform::GridExtents g{3, 3, 4};
    const auto grid = deform::make_reference_grid(g, {2, 2, 3});
    auto z = leaf({g.count(), 4});
    std::vector<double> off(grid.output.count() * 3);
    for (auto& o : off) o = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 0.4);
    auto offsets = Tensor::from({grid.output.count(), 3}, off, true);
    run("token_search", {z, offsets}, [=] { return deform::three_d_token_search(z, grid, offsets); });
  }
  {
    // 4C = 8, T = 3, 2 x 2 spatial grid.
    const deform::GridExtents g{3, 2, 2};
    const deform::AttentionConfig cfg{2, 2, 1, 0.5};
    auto params = deform::DeformableParams::create(8, 2, rng, false);
    auto z = leaf({g.count(), 8});
    auto m1 = leaf({3, 8}), m2 = leaf({3, 8});
    ParamList plist;
    params.collect("", plist);
    std::vector<Tensor> leaves{z, m1, m2};
    for (auto& p : plist) leaves.push_back(*p.tensor);
    run("deformable_block", leaves, [=] {
      const Tensor modal[] = {m1, m2};
      auto o = deform::deformable_block(z, g, modal, params, cfg);
      const Tensor parts[] = {o.main, o.modal[0], o.modal[1]};
      return ops::concat(parts, 0);
    }, {{"D", 8}, {"T", 3}, {"h", 2}, {"w", 2}, {"kernel", 2}});
  }
  {
    auto block = BlockParams::create(8, rng);
    auto p = leaf({2 * 5, 8}), m = leaf({2, 8});
    ParamList plist;
    block.collect("", plist);
    std::vector<Tensor> leaves{p, m};
    for (auto& q : plist) leaves.push_back(*q.tensor);
    const auto plan = stride::window_starts(5, 2);
    run("joint_stride", leaves, [=] {
      const Tensor modal[] = {m};
      auto o = stride::joint_stride_attention(p, 2, modal, block, plan, 2);
      const Tensor parts[] = {o.main, o.modal[0]};
      return ops::concat(parts, 0);
    });
    const auto tplan = stride::window_starts(5, 2);
    auto z = leaf({5 * 2, 8});
    run("temporal_stride", {z, p}, [=] {
      auto q = ops::slice(p, 0, 0, 5);
      const Tensor groups[] = {z, q};
      const auto o = stride::temporal_stride_attention(groups, 5, block, tplan, 2);
      return ops::concat(o, 0);
    });
  }
  return out;
}

CheckResult check_end_to_end_gradient(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.C = 2;
  cfg.T = 3;
  cfg.H = cfg.W = 8;
  cfg.R = 2;
  cfg.L = 1;
  cfg.heads = 2;
  cfg.kernel = 1;
  cfg.offset_stride = 1;
  cfg.trainable_backbone = true;
  cfg.seed = seed;
  auto params = ModelParams::create(cfg);
  Rng rng = Rng::derive(seed, 5000);
  // Random offset heads keep sampling points off the integer grid.
  for (auto& layer : params.layers) {
    layer.deformable.offsets = deform::OffsetNetParams::create(cfg.dim(), cfg.kernel, rng, false);
  }
  const auto clip = synth::make_clip(synth::Motion::TranslateRight, {cfg.T, cfg.H, cfg.W, cfg.R}, seed);
  std::vector<Tensor> leaves;
  for (auto& p : params.trainable(cfg)) leaves.push_back(*p.tensor);
  const int label = 1;
  const auto g = gradcheck(
      [&] { return ops::cross_entropy(forward(clip, cfg, params), std::span<const int>(&label, 1)); }, leaves);
  return grad_result("gradcheck_end_to_end_micro", seed, 1e-4, g,
                     {{"C", 2}, {"T", 3}, {"H", 8}, {"W", 8}, {"R", 2}, {"L", 1}, {"heads", 2}});
}

std::vector<CheckResult> complexity_checks() {
  std::vector<CheckResult> out;
  const auto factor_check = [&](std::string name, const ComplexityRow& a, const ComplexityRow& b) {
    const double sf = static_cast<double>(b.stride_dot_products) / static_cast<double>(a.stride_dot_products);
    const double of = static_cast<double>(b.oracle_dot_products) / static_cast<double>(a.oracle_dot_products);
    CheckResult r;
    r.name = std::move(name);
    r.tolerance = 0.2;
    // Distance of each factor from its admissible interval.
    const double es = std::max({0.0, 1.8 - sf, sf - 2.2});
    const double eo = std::max({0.0, 3.8 - of, of - 4.2});
    r.max_error = std::max(es, eo);
    r.passed = es == 0.0 && eo == 0.0;
    const std::array<ComplexityRow, 2> rows{a, b};
    r.config_json = json{{"stride_factor", sf}, {"oracle_factor", of}, {"rows", json::parse(complexity_json(rows))}}.dump();
    out.push_back(std::move(r));
  };
  factor_check("complexity_joints_doubling", measure_joint_complexity(2, 64, 4), measure_joint_complexity(2, 128, 4));
  factor_check("complexity_time_doubling", measure_temporal_complexity(32, 16, 5, 4),
               measure_temporal_complexity(64, 16, 5, 4));
  return out;
}

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string SuiteReport::to_json() const {
  json entries = json::array();
  for (const auto& c : checks) {
    json e = {{"check_name", c.name},
              {"status", c.passed ? "pass" : "fail"},
              {"max_error", c.max_error},
              {"tolerance", c.tolerance},
              {"config", json::parse(c.config_json)},
              {"seed", c.seed}};
    if (!c.inputs_json.empty()) e["inputs"] = json::parse(c.inputs_json);
    entries.push_back(std::move(e));
  }
  return json{{"seed", seed}, {"passed", passed()}, {"seconds", seconds}, {"checks", entries}}.dump(1);
}

SuiteReport run_equivalence_suite(const SuiteOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  SuiteReport report;
  report.seed = options.seed;
  std::optional<ops::fault::SkipAttentionScaling> fault;
  if (options.inject_scaling_fault) fault.emplace();
  report.checks.push_back(check_identity_sampling(options.seed, options.trials));
  report.checks.push_back(check_deformable_equivalence(options.seed, options.trials));
  report.checks.push_back(check_joint_equivalence(options.seed, options.trials));
  report.checks.push_back(check_temporal_equivalence(options.seed, options.trials));
  for (auto& c : gradcheck_battery(options.seed)) report.checks.push_back(std::move(c));
  report.checks.push_back(check_end_to_end_gradient(options.seed));
  for (auto& c : complexity_checks()) report.checks.push_back(std::move(c));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace drat::verify
