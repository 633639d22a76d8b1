// SPDX-License-Identifier: Apache-2.0
#include "drat/deformable.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "drat/ops.hpp"

namespace drat::deform {

void AttentionConfig::validate(std::size_t dim) const {
  DRAT_REQUIRE(heads >= 1 && dim % heads == 0,
               "token width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  DRAT_REQUIRE(kernel >= 1 && offset_stride >= 1, "offset kernel and stride must be positive");
  DRAT_REQUIRE(offset_range > 0.0 && std::isfinite(offset_range), "offset_range must be positive");
}

namespace {

double anchor(std::size_t j, std::size_t n, std::size_t extent) {
  if (extent == 1) return 0.0;
  if (n == 1) return static_cast<double>(extent - 1) / 2.0;
  return static_cast<double>(j) * static_cast<double>(extent - 1) / static_cast<double>(n - 1);
}

double to_normalized(double idx, std::size_t extent) {
  return extent == 1 ? 0.0 : 2.0 * idx / static_cast<double>(extent - 1) - 1.0;
}

std::array<std::size_t, 3> xyz_extents(const GridExtents& g) { return {g.w, g.h, g.t}; }

}  // namespace

ReferenceGrid make_reference_grid(GridExtents input, GridExtents output) {
  DRAT_REQUIRE(input.count() > 0 && output.count() > 0, "reference grid extents must be positive");
  DRAT_REQUIRE(output.t <= input.t && output.h <= input.h && output.w <= input.w,
               "reference grid cannot be denser than its input");
  ReferenceGrid g{input, output, {}};
  g.index.reserve(output.count() * 3);
  for (std::size_t z = 0; z < output.t; ++z)
    for (std::size_t y = 0; y < output.h; ++y)
      for (std::size_t x = 0; x < output.w; ++x) {
        g.index.push_back(anchor(x, output.w, input.w));
        g.index.push_back(anchor(y, output.h, input.h));
        g.index.push_back(anchor(z, output.t, input.t));
      }
  return g;
}

Tensor ReferenceGrid::points() const {
  const std::size_t n = output.count();
  const auto ext = xyz_extents(input);
  std::vector<double> v(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < 3; ++a) v[a * n + i] = to_normalized(index[i * 3 + a], ext[a]);
  return Tensor::from({3, output.t, output.h, output.w}, std::move(v));
}

GridExtents offset_grid_extents(GridExtents input, const AttentionConfig& cfg) {
  return {ops::conv_out_extent(input.t, cfg.kernel, cfg.offset_stride),
          ops::conv_out_extent(input.h, cfg.kernel, cfg.offset_stride),
          ops::conv_out_extent(input.w, cfg.kernel, cfg.offset_stride)};
}

OffsetNetParams OffsetNetParams::create(std::size_t dim, std::size_t kernel, Rng& rng, bool zero_final) {
  OffsetNetParams p;
  p.conv = init_normal({dim, dim, kernel, kernel, kernel}, 1.0 / std::sqrt(static_cast<double>(dim * kernel * kernel * kernel)), rng);
  p.ln_gamma = init_constant({dim}, 1.0);
  p.ln_beta = init_constant({dim}, 0.0);
  if (zero_final) {
    p.proj_w = init_constant({dim, 3}, 0.0);
    p.proj_b = init_constant({3}, 0.0);
  } else {
    p.proj_w = init_normal({dim, 3}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    p.proj_b = init_normal({3}, 0.1, rng);
  }
  return p;
}

void OffsetNetParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "conv", &conv, true});
  out.push_back({prefix + "ln_gamma", &ln_gamma, false});
  out.push_back({prefix + "ln_beta", &ln_beta, false});
  out.push_back({prefix + "proj_w", &proj_w, true});
  out.push_back({prefix + "proj_b", &proj_b, false});
}

Tensor offset_network(const Tensor& z, GridExtents input, const OffsetNetParams& p, const AttentionConfig& cfg) {
  DRAT_REQUIRE(z.rank() == 2 && z.dim(0) == input.count(), "offset_network: Z rows do not match the grid extents");
  const std::size_t dim = z.dim(1);
  DRAT_REQUIRE(p.conv.dim(0) == dim && p.conv.dim(2) == cfg.kernel, "offset_network: kernel does not match config");
  DRAT_REQUIRE(input.t >= cfg.kernel && input.h >= cfg.kernel && input.w >= cfg.kernel,
               "offset_network: every extent must be >= kernel " + std::to_string(cfg.kernel));
  const auto grid = ops::transpose(z).reshape({dim, input.t, input.h, input.w});
  const auto conv = ops::conv3d(grid, p.conv, cfg.offset_stride);
  const std::size_t n = conv.dim(1) * conv.dim(2) * conv.dim(3);
  const auto tokens = ops::transpose(conv.reshape({dim, n}));
  const auto hidden = ops::gelu(ops::layer_norm(tokens, p.ln_gamma, p.ln_beta));
  return ops::scale(ops::tanh(ops::linear(hidden, p.proj_w, p.proj_b)), cfg.offset_range);
}

namespace {

// Per-axis sampling state of one deformed point.
struct AxisSample {
  std::size_t i0 = 0;
  double f = 0.0;         // fractional part towards i0 + 1
  bool has_upper = false; // extent > 1
  bool clamped = false;
  double half_span = 0.0; // d idx / d offset
};

AxisSample sample_axis(double ref, double offset, std::size_t extent) {
  AxisSample s;
  if (extent == 1) return s;
  const double span = static_cast<double>(extent - 1);
  s.half_span = span / 2.0;
  s.has_upper = true;
  double idx = ref + offset * s.half_span;
  if (idx < 0.0) {
    idx = 0.0;
    s.clamped = true;
  } else if (idx > span) {
    idx = span;
    s.clamped = true;
  }
  s.i0 = std::min(static_cast<std::size_t>(std::floor(idx)), extent - 2);
  s.f = idx - static_cast<double>(s.i0);
  return s;
}

}  // namespace

Tensor three_d_token_search(const Tensor& z, const ReferenceGrid& grid, const Tensor& offsets) {
  const std::size_t n = grid.output.count();
  DRAT_REQUIRE(z.rank() == 2 && z.dim(0) == grid.input.count(), "3DTS: Z rows do not match the grid input extents");
  DRAT_REQUIRE(offsets.rank() == 2 && offsets.dim(0) == n && offsets.dim(1) == 3,
               "3DTS: offsets must be " + std::to_string(n) + " x 3, got " + shape_str(offsets.shape()));
  require_finite(z.data(), "3DTS");
  require_finite(offsets.data(), "3DTS");
  const std::size_t D = z.dim(1);
  const auto ext = xyz_extents(grid.input);
  const std::size_t row_stride[3] = {1, grid.input.w, grid.input.w * grid.input.h};

  std::vector<std::array<AxisSample, 3>> samples(n);
  auto off = offsets.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < 3; ++a) samples[i][a] = sample_axis(grid.index[i * 3 + a], off[i * 3 + a], ext[a]);

  auto zd = z.data();
  std::vector<double> out(n * D, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    double* o = out.data() + i * D;
    for (unsigned corner = 0; corner < 8; ++corner) {
      double w = 1.0;
      std::size_t row = 0;
      bool valid = true;
      for (std::size_t a = 0; a < 3; ++a) {
        const bool up = (corner >> a) & 1U;
        if (up && !s[a].has_upper) {
          valid = false;
          break;
        }
        w *= up ? s[a].f : 1.0 - s[a].f;
        row += (s[a].i0 + (up ? 1 : 0)) * row_stride[a];
      }
      if (!valid) continue;
      const double* zr = zd.data() + row * D;
      for (std::size_t c = 0; c < D; ++c) o[c] += w * zr[c];
    }
  }

  auto zn = z.node();
  auto on = offsets.node();
  return make_result({n, D}, std::move(out), {z, offsets},
                     [zn, on, samples = std::move(samples), row_stride0 = row_stride[1], row_stride1 = row_stride[2], n, D](const Node& self) {
    const std::size_t stride[3] = {1, row_stride0, row_stride1};
    std::span<double> gz = zn->requires_grad ? zn->grad_buffer() : std::span<double>{};
    std::span<double> goff = on->requires_grad ? on->grad_buffer() : std::span<double>{};
    const auto& zd = zn->data;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = samples[i];
      const double* g = self.grad.data() + i * D;
      double dotc[3] = {0.0, 0.0, 0.0};
      for (unsigned corner = 0; corner < 8; ++corner) {
        double fac[3];
        std::size_t row = 0;
        bool valid = true;
        for (std::size_t a = 0; a < 3; ++a) {
          const bool up = (corner >> a) & 1U;
          if (up && !s[a].has_upper) {
            valid = false;
            break;
          }
          fac[a] = up ? s[a].f : 1.0 - s[a].f;
          row += (s[a].i0 + (up ? 1 : 0)) * stride[a];
        }
        if (!valid) continue;
        const double w = fac[0] * fac[1] * fac[2];
        const double* zr = zd.data() + row * D;
        double gdotz = 0.0;
        for (std::size_t c = 0; c < D; ++c) gdotz += g[c] * zr[c];
        if (!gz.empty()) {
          double* gr = gz.data() + row * D;
          for (std::size_t c = 0; c < D; ++c) gr[c] += w * g[c];
        }
        for (std::size_t a = 0; a < 3; ++a) {
          const bool up = (corner >> a) & 1U;
          const double others = fac[(a + 1) % 3] * fac[(a + 2) % 3];
          dotc[a] += (up ? others : -others) * gdotz;
        }
      }
      if (!goff.empty())
        for (std::size_t a = 0; a < 3; ++a)
          if (s[a].has_upper && !s[a].clamped) goff[i * 3 + a] += dotc[a] * s[a].half_span;
    }
  });
}

std::vector<double> deformed_points(const ReferenceGrid& grid, std::span<const double> offsets) {
  const std::size_t n = grid.output.count();
  DRAT_REQUIRE(offsets.size() == n * 3, "deformed_points: offsets length mismatch");
  const auto ext = xyz_extents(grid.input);
  std::vector<double> out(n * 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < 3; ++a) {
      const double q = to_normalized(grid.index[i * 3 + a], ext[a]) + (ext[a] == 1 ? 0.0 : offsets[i * 3 + a]);
      out[i * 3 + a] = std::clamp(q, -1.0, 1.0);
    }
  return out;
}

DeformableParams DeformableParams::create(std::size_t dim, std::size_t kernel, Rng& rng, bool zero_final) {
  DeformableParams p;
  p.offsets = OffsetNetParams::create(dim, kernel, rng, zero_final);
  p.block = BlockParams::create(dim, rng);
  return p;
}

void DeformableParams::collect(const std::string& prefix, ParamList& out) {
  offsets.collect(prefix + "offset.", out);
  block.collect(prefix + "block.", out);
}

BlockOutput deformable_block(const Tensor& z, GridExtents input, std::span<const Tensor> modal,
                             const DeformableParams& p, const AttentionConfig& cfg, ForwardTrace* trace) {
  DRAT_REQUIRE(z.rank() == 2 && z.dim(0) == input.count(), "deformable_block: Z rows do not match extents");
  const std::size_t dim = z.dim(1);
  cfg.validate(dim);
  for (const auto& m : modal)
    DRAT_REQUIRE(m.rank() == 2 && m.dim(0) == input.t && m.dim(1) == dim,
                 "deformable_block: modal tokens must be T x D, got " + shape_str(m.shape()));

  const auto offsets = offset_network(z, input, p.offsets, cfg);
  const auto grid = make_reference_grid(input, offset_grid_extents(input, cfg));
  const auto sampled = three_d_token_search(z, grid, offsets);

  std::vector<Tensor> xs{z}, ks{sampled};
  for (const auto& m : modal) {
    xs.push_back(m);
    ks.push_back(m);
  }
  const auto x = modal.empty() ? z : ops::concat(xs, 0);
  const auto k = modal.empty() ? sampled : ops::concat(ks, 0);

  std::vector<double> probs;
  const auto y = attention_block(p.block, x, k, cfg.heads, trace ? &probs : nullptr);
  if (trace) {
    trace->maps.push_back({"deformable", trace->layer, 0, cfg.heads, x.dim(0), k.dim(0), std::move(probs)});
    trace->points.push_back({trace->layer, grid.output.t, grid.output.h, grid.output.w,
                             deformed_points(grid, offsets.data())});
  }

  BlockOutput out;
  std::size_t row = input.count();
  out.main = modal.empty() ? y : ops::slice(y, 0, 0, row);
  for (std::size_t i = 0; i < modal.size(); ++i, row += input.t) out.modal.push_back(ops::slice(y, 0, row, row + input.t));
  return out;
}

}  // namespace drat::deform
