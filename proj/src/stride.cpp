// SPDX-License-Identifier: Apache-2.0
#include "drat/stride.hpp"

#include <algorithm>

#include "drat/ops.hpp"

namespace drat::stride {

std::size_t WindowPlan::pairing(std::size_t j) const {
  DRAT_REQUIRE(j < query_starts.size(), "query window index out of range");
  return std::min(j, kv_starts.size() - 1);
}

WindowPlan window_starts(std::size_t axis_length, std::size_t wnd) {
  return window_starts(axis_length, wnd, std::max<std::size_t>(1, wnd / 2));
}

WindowPlan window_starts(std::size_t axis_length, std::size_t wnd, std::size_t stride) {
  DRAT_REQUIRE(wnd >= 1 && wnd <= axis_length,
               "window " + std::to_string(wnd) + " must lie in [1, " + std::to_string(axis_length) + "]");
  DRAT_REQUIRE(stride >= 1 && stride <= wnd, "window stride must lie in [1, wnd]");
  WindowPlan plan{axis_length, wnd, stride, {}, {}};
  for (std::size_t s = 0; s + wnd <= axis_length; s += stride) plan.query_starts.push_back(s);
  if (plan.query_starts.back() + wnd < axis_length) plan.query_starts.push_back(axis_length - wnd);
  for (std::size_t s = stride; s + wnd <= axis_length; s += stride) plan.kv_starts.push_back(s);
  if (plan.kv_starts.empty()) {
    plan.kv_starts.push_back(0);
  } else if (plan.kv_starts.back() + wnd < axis_length) {
    plan.kv_starts.push_back(axis_length - wnd);
  }
  return plan;
}

namespace {

struct WindowedResult {
  Tensor all;
  std::vector<std::vector<std::size_t>> kv_rows;
  std::vector<std::vector<double>> probs;
};

// Runs one attention block per query window on rows gathered from `all`,
// then averages every output row over the windows that produced it.
WindowedResult run_windows(const Tensor& all, const std::vector<std::vector<std::size_t>>& query_rows,
                           const std::vector<std::vector<std::size_t>>& kv_rows, const WindowPlan& plan,
                           const BlockParams& params, std::size_t heads, bool keep_probs) {
  WindowedResult res;
  std::vector<Tensor> outputs;
  std::vector<std::size_t> targets;
  for (std::size_t j = 0; j < query_rows.size(); ++j) {
    const auto& kv = kv_rows[plan.pairing(j)];
    const auto q = ops::gather_rows(all, query_rows[j]);
    const auto k = ops::gather_rows(all, kv);
    std::vector<double> probs;
    outputs.push_back(attention_block(params, q, k, heads, keep_probs ? &probs : nullptr));
    targets.insert(targets.end(), query_rows[j].begin(), query_rows[j].end());
    res.kv_rows.push_back(kv);
    if (keep_probs) res.probs.push_back(std::move(probs));
  }
  const auto stacked = outputs.size() == 1 ? outputs.front() : ops::concat(outputs, 0);
  res.all = ops::scatter_mean_rows(stacked, targets, all.dim(0));
  return res;
}

}  // namespace

StrideOutput joint_stride_attention(const Tensor& p, std::size_t frames, std::span<const Tensor> modal,
                                    const BlockParams& params, const WindowPlan& plan, std::size_t heads,
                                    ForwardTrace* trace) {
  DRAT_REQUIRE(frames >= 1 && p.rank() == 2 && p.dim(0) % frames == 0, "joint_stride_attention: P must be (T*R) x D");
  const std::size_t R = p.dim(0) / frames, D = p.dim(1);
  DRAT_REQUIRE(plan.axis_length == R, "joint_stride_attention: plan covers " + std::to_string(plan.axis_length) +
                                          " joints, P has " + std::to_string(R));
  DRAT_REQUIRE(D == params.dim(), "joint_stride_attention: token width does not match block");
  for (const auto& m : modal)
    DRAT_REQUIRE(m.rank() == 2 && m.dim(0) == frames && m.dim(1) == D, "joint_stride_attention: modal tokens must be T x D");

  std::vector<Tensor> parts{p};
  parts.insert(parts.end(), modal.begin(), modal.end());
  const auto all = parts.size() == 1 ? p : ops::concat(parts, 0);
  const std::size_t modal_base = frames * R;

  const auto rows_for = [&](std::size_t start) {
    std::vector<std::size_t> rows;
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t r = start; r < start + plan.wnd; ++r) rows.push_back(t * R + r);
    for (std::size_t m = 0; m < modal.size(); ++m)
      for (std::size_t t = 0; t < frames; ++t) rows.push_back(modal_base + m * frames + t);
    return rows;
  };
  std::vector<std::vector<std::size_t>> q_rows, kv_rows;
  for (auto s : plan.query_starts) q_rows.push_back(rows_for(s));
  for (auto s : plan.kv_starts) kv_rows.push_back(rows_for(s));

  auto res = run_windows(all, q_rows, kv_rows, plan, params, heads, trace != nullptr);

  if (trace) {
    // Attention received by joint (t, r), averaged over heads, queries and
    // the windows whose keys contain it.
    std::vector<double> received(R * frames, 0.0), hits(R * frames, 0.0);
    for (std::size_t j = 0; j < q_rows.size(); ++j) {
      const auto& kv = res.kv_rows[j];
      const auto& pr = res.probs[j];
      const std::size_t nq = q_rows[j].size(), nk = kv.size();
      for (std::size_t key = 0; key < nk; ++key) {
        if (kv[key] >= modal_base) continue;
        double s = 0.0;
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t q = 0; q < nq; ++q) s += pr[(h * nq + q) * nk + key];
        const std::size_t t = kv[key] / R, r = kv[key] % R;
        received[r * frames + t] += s / static_cast<double>(heads * nq);
        hits[r * frames + t] += 1.0;
      }
      trace->maps.push_back({"joint", trace->layer, j, heads, nq, nk, std::move(res.probs[j])});
    }
    for (std::size_t i = 0; i < received.size(); ++i)
      if (hits[i] > 0.0) received[i] /= hits[i];
    trace->joint_series.push_back({trace->layer, R, frames, std::move(received)});
  }

  StrideOutput out;
  out.main = modal.empty() ? res.all : ops::slice(res.all, 0, 0, modal_base);
  for (std::size_t m = 0; m < modal.size(); ++m)
    out.modal.push_back(ops::slice(res.all, 0, modal_base + m * frames, modal_base + (m + 1) * frames));
  return out;
}

std::vector<Tensor> temporal_stride_attention(std::span<const Tensor> groups, std::size_t frames,
                                              const BlockParams& params, const WindowPlan& plan, std::size_t heads,
                                              ForwardTrace* trace) {
  DRAT_REQUIRE(!groups.empty() && frames >= 1, "temporal_stride_attention needs token groups");
  DRAT_REQUIRE(plan.axis_length == frames, "temporal_stride_attention: plan covers " +
                                               std::to_string(plan.axis_length) + " frames, tokens have " +
                                               std::to_string(frames));
  std::vector<std::size_t> per_frame, base;
  std::size_t total = 0;
  for (const auto& g : groups) {
    DRAT_REQUIRE(g.rank() == 2 && g.dim(0) % frames == 0 && g.dim(1) == params.dim(),
                 "temporal_stride_attention: group " + shape_str(g.shape()) + " is not (T*n) x D");
    per_frame.push_back(g.dim(0) / frames);
    base.push_back(total);
    total += g.dim(0);
  }
  const auto all = groups.size() == 1 ? groups.front() : ops::concat(groups, 0);

  const auto rows_for = [&](std::size_t start) {
    std::vector<std::size_t> rows;
    for (std::size_t t = start; t < start + plan.wnd; ++t)
      for (std::size_t g = 0; g < groups.size(); ++g)
        for (std::size_t k = 0; k < per_frame[g]; ++k) rows.push_back(base[g] + t * per_frame[g] + k);
    return rows;
  };
  std::vector<std::vector<std::size_t>> q_rows, kv_rows;
  for (auto s : plan.query_starts) q_rows.push_back(rows_for(s));
  for (auto s : plan.kv_starts) kv_rows.push_back(rows_for(s));

  auto res = run_windows(all, q_rows, kv_rows, plan, params, heads, trace != nullptr);
  if (trace)
    for (std::size_t j = 0; j < q_rows.size(); ++j)
      trace->maps.push_back({"temporal", trace->layer, j, heads, q_rows[j].size(), res.kv_rows[j].size(),
                             std::move(res.probs[j])});

  std::vector<Tensor> out;
  for (std::size_t g = 0; g < groups.size(); ++g)
    out.push_back(groups.size() == 1 ? res.all : ops::slice(res.all, 0, base[g], base[g] + groups[g].dim(0)));
  return out;
}

}  // namespace drat::stride
