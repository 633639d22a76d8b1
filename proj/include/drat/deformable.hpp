// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "drat/block.hpp"
#include "drat/params.hpp"
#include "drat/tensor.hpp"
#include "drat/trace.hpp"

namespace drat::deform {

struct AttentionConfig {
  std::size_t heads = 4;
  std::size_t kernel = 2;
  std::size_t offset_stride = 2;
  double offset_range = 0.5;

  /// Throws ContractViolation unless `dim` splits evenly into heads etc.
  void validate(std::size_t dim) const;
};

struct GridExtents {
  std::size_t t = 1, h = 1, w = 1;
  std::size_t count() const { return t * h * w; }
  bool operator==(const GridExtents&) const = default;
};

/// Regular sampling anchors over an input token grid. Anchor j along an axis
/// of n anchors and input extent E sits at index j*(E-1)/(n-1), so the end
/// anchors land on the first and last input index; a lone anchor sits at
/// the centre.
struct ReferenceGrid {
  GridExtents input;
  GridExtents output;
  std::vector<double> index;  // count x 3 in index units, order (x, y, z)

  /// Normalized coordinates, 3 x t x h x w (channel 0 = x, 1 = y, 2 = z).
  Tensor points() const;
};

ReferenceGrid make_reference_grid(GridExtents input, GridExtents output);

/// Output extents of the offset network over `input`.
GridExtents offset_grid_extents(GridExtents input, const AttentionConfig& cfg);

struct OffsetNetParams {
  Tensor conv;               // D x D x k x k x k
  Tensor ln_gamma, ln_beta;  // D
  Tensor proj_w;             // D x 3 (a 1x1x1 convolution on tokens)
  Tensor proj_b;             // 3

  /// `zero_final` zeroes proj_w/proj_b so offsets start at exactly zero.
  static OffsetNetParams create(std::size_t dim, std::size_t kernel, Rng& rng, bool zero_final = true);
  void collect(const std::string& prefix, ParamList& out);
};

/// Z tokens ((t*h*w) x D, row t*h*w + y*w + x) -> offsets (count x 3),
/// each component in (-offset_range, offset_range).
Tensor offset_network(const Tensor& z, GridExtents input, const OffsetNetParams& p, const AttentionConfig& cfg);

/// Trilinear gather of Z at anchors displaced by `offsets` (count x 3,
/// normalized units). Deformed points are clamped to [-1, 1]. Returns count x D.
Tensor three_d_token_search(const Tensor& z, const ReferenceGrid& grid, const Tensor& offsets);

/// Clamped deformed points in normalized units, count x 3.
std::vector<double> deformed_points(const ReferenceGrid& grid, std::span<const double> offsets);

struct DeformableParams {
  OffsetNetParams offsets;
  BlockParams block;

  static DeformableParams create(std::size_t dim, std::size_t kernel, Rng& rng, bool zero_final = true);
  void collect(const std::string& prefix, ParamList& out);
};

struct BlockOutput {
  Tensor main;
  std::vector<Tensor> modal;
};

/// X = [Z || modal...], X~ = [3DTS(Z) || modal...];
/// X <- X + MSA(X Wq, X~ Wk, X~ Wv); X <- X + FFN(LN(X)); split back.
/// Each modal tensor is T x D (one token per time step).
BlockOutput deformable_block(const Tensor& z, GridExtents input, std::span<const Tensor> modal,
                             const DeformableParams& p, const AttentionConfig& cfg, ForwardTrace* trace = nullptr);

}  // namespace drat::deform
