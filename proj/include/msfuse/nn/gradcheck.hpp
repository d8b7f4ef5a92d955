#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "msfuse/geometry.hpp"
#include "msfuse/nn/tensor.hpp"

namespace msfuse::nn {

/// A differentiable piece of network evaluated in double precision. The
/// check differentiates the scalar <r, forward(inputs, params)> for a fixed
/// random projection r.
struct GradCheckFragment {
  using Forward = std::function<TensorD(const std::vector<TensorD>& inputs,
                                        const std::vector<TensorD>& params)>;
  /// Gradients of <grad_out, forward(...)>: one per input, then one per param.
  using Backward = std::function<std::vector<TensorD>(const std::vector<TensorD>& inputs,
                                                      const std::vector<TensorD>& params,
                                                      const TensorD& grad_out)>;

  std::string name;
  std::vector<TensorD> inputs;
  std::vector<TensorD> params;
  Forward forward;
  Backward backward;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_entry;
};

/// Max over every input and parameter entry of
/// |analytic - central difference| / max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(const GradCheckFragment& fragment, double epsilon = 1e-4,
                           std::uint64_t projection_seed = 1);

/// Ready-made fragments for every layer kind, with inputs drawn from `rng`
/// and kept clear of kinks (ReLU zero, max ties) by a margin well above epsilon.
namespace fragments {

GradCheckFragment conv2d(std::mt19937_64& rng, std::size_t n, std::size_t c_in,
                         std::size_t c_out, std::size_t h, std::size_t w, std::size_t kernel,
                         std::size_t stride, std::size_t pad);
GradCheckFragment nin(std::mt19937_64& rng, std::size_t n, std::size_t c_in, std::size_t c_out,
                      std::size_t h, std::size_t w);
GradCheckFragment fully_connected(std::mt19937_64& rng, std::size_t n, std::size_t in,
                                  std::size_t out);
GradCheckFragment relu(std::mt19937_64& rng, Shape shape);
GradCheckFragment maxpool2x2(std::mt19937_64& rng, Shape shape);
GradCheckFragment softmax(std::mt19937_64& rng, std::size_t n, std::size_t c);
GradCheckFragment concat_channels(std::mt19937_64& rng, std::size_t n, std::size_t c_a,
                                  std::size_t c_b, std::size_t h, std::size_t w);
/// concat of two branches followed by a 1x1 reduction, as at a fusion junction.
GradCheckFragment concat_nin(std::mt19937_64& rng, std::size_t c_a, std::size_t c_b,
                             std::size_t c_out, std::size_t h, std::size_t w);
GradCheckFragment roi_pool(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w,
                           std::vector<BBox> rois, float spatial_scale, std::size_t out_h,
                           std::size_t out_w);

}  // namespace fragments

}  // namespace msfuse::nn
