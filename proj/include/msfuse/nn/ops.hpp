#pragma once

// Forward and backward kernels for every layer kind. Templated on the scalar
// so the float engine and the double-precision gradient oracle share one
// implementation.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msfuse/errors.hpp"
#include "msfuse/geometry.hpp"
#include "msfuse/nn/tensor.hpp"

namespace msfuse::nn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Column layout: row (ic * k + ky) * k + kx, column oy * ow + ox.
template <typename T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* col) {
  const std::size_t cols = oh * ow;
  for (std::size_t ic = 0; ic < c; ++ic) {
    const T* plane = img + ic * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ic * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + ow, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* img) {
  const std::size_t cols = oh * ow;
  for (std::size_t ic = 0; ic < c; ++ic) {
    T* plane = img + ic * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ic * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          const T* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, square kernels)

inline Shape conv2d_output_shape(const Shape& input, const Shape& weight, std::size_t stride,
                                 std::size_t pad) {
  if (input.c != weight.c) {
    throw ContractViolation("conv2d: input shape " + input.str() +
                            " does not match weight shape " + weight.str() + " (c_in)");
  }
  if (weight.h != weight.w || weight.h == 0) {
    throw ContractViolation("conv2d: weight shape " + weight.str() + " is not a square kernel");
  }
  if (stride < 1) throw ContractViolation("conv2d: stride must be >= 1");
  if (input.h + 2 * pad < weight.h || input.w + 2 * pad < weight.w) {
    throw ContractViolation("conv2d: input shape " + input.str() +
                            " smaller than kernel of weight shape " + weight.str());
  }
  return {input.n, weight.n, (input.h + 2 * pad - weight.h) / stride + 1,
          (input.w + 2 * pad - weight.w) / stride + 1};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      std::span<const T> bias, std::size_t stride, std::size_t pad) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  const Shape os = conv2d_output_shape(is, ws, stride, pad);
  if (bias.size() != ws.n) {
    throw ContractViolation("conv2d: bias length " + std::to_string(bias.size()) +
                            " does not match weight shape " + ws.str());
  }
  BasicTensor<T> out(os);
  const std::size_t k = ws.h;
  const std::size_t kdim = is.c * k * k;
  const std::size_t cols = os.h * os.w;
  const bool direct = (k == 1 && stride == 1 && pad == 0);
  std::vector<T> col(direct ? 0 : kdim * cols);
  detail::ConstMatMap<T> wmat(weight.data(), static_cast<long>(ws.n), static_cast<long>(kdim));
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.data(), static_cast<long>(ws.n));
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* src = input.data() + n * is.item_size();
    if (!direct) {
      detail::im2col(src, is.c, is.h, is.w, k, stride, pad, os.h, os.w, col.data());
      src = col.data();
    }
    detail::ConstMatMap<T> cmat(src, static_cast<long>(kdim), static_cast<long>(cols));
    detail::MatMap<T> omat(out.data() + n * os.item_size(), static_cast<long>(os.c),
                           static_cast<long>(cols));
    omat.noalias() = wmat * cmat;
    omat.colwise() += bvec;
  }
  return out;
}

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::vector<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                             std::size_t stride, std::size_t pad,
                             const BasicTensor<T>& grad_out) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  const Shape os = conv2d_output_shape(is, ws, stride, pad);
  if (grad_out.shape() != os) {
    throw ContractViolation("conv2d backward: gradient shape " + grad_out.shape().str() +
                            " does not match output shape " + os.str());
  }
  const std::size_t k = ws.h;
  const std::size_t kdim = is.c * k * k;
  const std::size_t cols = os.h * os.w;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  ConvGrads<T> g{BasicTensor<T>(is), BasicTensor<T>(ws), std::vector<T>(ws.n, T{0})};
  std::vector<T> col(direct ? 0 : kdim * cols);
  std::vector<T> dcol(direct ? 0 : kdim * cols);
  detail::ConstMatMap<T> wmat(weight.data(), static_cast<long>(ws.n), static_cast<long>(kdim));
  detail::MatMap<T> dwmat(g.weight.data(), static_cast<long>(ws.n), static_cast<long>(kdim));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dbvec(g.bias.data(), static_cast<long>(ws.n));
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* src = input.data() + n * is.item_size();
    if (!direct) {
      detail::im2col(src, is.c, is.h, is.w, k, stride, pad, os.h, os.w, col.data());
      src = col.data();
    }
    detail::ConstMatMap<T> cmat(src, static_cast<long>(kdim), static_cast<long>(cols));
    detail::ConstMatMap<T> gmat(grad_out.data() + n * os.item_size(), static_cast<long>(os.c),
                                static_cast<long>(cols));
    dwmat.noalias() += gmat * cmat.transpose();
    dbvec += gmat.rowwise().sum();
    T* dst = g.input.data() + n * is.item_size();
    if (direct) {
      detail::MatMap<T> dimat(dst, static_cast<long>(kdim), static_cast<long>(cols));
      dimat.noalias() = wmat.transpose() * gmat;
    } else {
      detail::MatMap<T> dcmat(dcol.data(), static_cast<long>(kdim), static_cast<long>(cols));
      dcmat.noalias() = wmat.transpose() * gmat;
      detail::col2im_add(dcol.data(), is.c, is.h, is.w, k, stride, pad, os.h, os.w, dst);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  if (x.shape() != grad_out.shape()) {
    throw ContractViolation("relu backward: gradient shape " + grad_out.shape().str() +
                            " does not match input shape " + x.shape().str());
  }
  BasicTensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T{0} ? grad_out[i] : T{0};
  return g;
}

// ---------------------------------------------------------------------------
// maxpool2x2, stride 2. An odd trailing row/column is dropped.

inline Shape maxpool2x2_output_shape(const Shape& in) {
  if (in.h < 2 || in.w < 2) {
    throw ContractViolation("maxpool2x2: input shape " + in.str() + " smaller than 2x2");
  }
  return {in.n, in.c, in.h / 2, in.w / 2};
}

namespace detail {
// Index (within the plane) of the first maximum of the 2x2 window.
template <typename T>
std::size_t window_argmax(const T* plane, std::size_t w, std::size_t oy, std::size_t ox) {
  const std::size_t base = 2 * oy * w + 2 * ox;
  const std::size_t idx[4] = {base, base + 1, base + w, base + w + 1};
  std::size_t best = idx[0];
  for (int i = 1; i < 4; ++i) {
    if (plane[idx[i]] > plane[best]) best = idx[i];
  }
  return best;
}
}  // namespace detail

template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& x) {
  const Shape is = x.shape();
  const Shape os = maxpool2x2_output_shape(is);
  BasicTensor<T> y(os);
  for (std::size_t p = 0; p < is.n * is.c; ++p) {
    const T* plane = x.data() + p * is.plane();
    T* out = y.data() + p * os.plane();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        out[oy * os.w + ox] = plane[detail::window_argmax(plane, is.w, oy, ox)];
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  const Shape is = x.shape();
  const Shape os = maxpool2x2_output_shape(is);
  if (grad_out.shape() != os) {
    throw ContractViolation("maxpool2x2 backward: gradient shape " + grad_out.shape().str() +
                            " does not match output shape " + os.str());
  }
  BasicTensor<T> g(is);
  for (std::size_t p = 0; p < is.n * is.c; ++p) {
    const T* plane = x.data() + p * is.plane();
    const T* go = grad_out.data() + p * os.plane();
    T* gi = g.data() + p * is.plane();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        gi[detail::window_argmax(plane, is.w, oy, ox)] += go[oy * os.w + ox];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// fully connected: weight (out, in, 1, 1), input flattened per batch item.

inline Shape fully_connected_output_shape(const Shape& in, const Shape& weight) {
  if (in.item_size() != weight.c * weight.h * weight.w) {
    throw ContractViolation("fully_connected: input shape " + in.str() +
                            " does not match weight shape " + weight.str());
  }
  return {in.n, weight.n, 1, 1};
}

template <typename T>
BasicTensor<T> fully_connected(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                               std::span<const T> bias) {
  const Shape os = fully_connected_output_shape(x.shape(), weight.shape());
  if (bias.size() != os.c) {
    throw ContractViolation("fully_connected: bias length " + std::to_string(bias.size()) +
                            " does not match weight shape " + weight.shape().str());
  }
  const long n = static_cast<long>(os.n);
  const long in = static_cast<long>(x.shape().item_size());
  const long out = static_cast<long>(os.c);
  BasicTensor<T> y(os);
  detail::ConstMatMap<T> xm(x.data(), n, in);
  detail::ConstMatMap<T> wm(weight.data(), out, in);
  detail::MatMap<T> ym(y.data(), n, out);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), out);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += b;
  return y;
}

template <typename T>
struct FcGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::vector<T> bias;
};

template <typename T>
FcGrads<T> fully_connected_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                    const BasicTensor<T>& grad_out) {
  const Shape os = fully_connected_output_shape(x.shape(), weight.shape());
  if (grad_out.shape() != os) {
    throw ContractViolation("fully_connected backward: gradient shape " +
                            grad_out.shape().str() + " does not match output shape " + os.str());
  }
  const long n = static_cast<long>(os.n);
  const long in = static_cast<long>(x.shape().item_size());
  const long out = static_cast<long>(os.c);
  FcGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(weight.shape()),
               std::vector<T>(os.c, T{0})};
  detail::ConstMatMap<T> xm(x.data(), n, in);
  detail::ConstMatMap<T> wm(weight.data(), out, in);
  detail::ConstMatMap<T> gm(grad_out.data(), n, out);
  detail::MatMap<T>(g.input.data(), n, in).noalias() = gm * wm;
  detail::MatMap<T>(g.weight.data(), out, in).noalias() = gm.transpose() * xm;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.bias.data(), out) = gm.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// softmax over the channel axis at every (n, y, x).

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  const Shape s = x.shape();
  BasicTensor<T> y(s);
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = n * s.item_size() + p;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < s.c; ++c) mx = std::max(mx, x[base + c * plane]);
      T sum{0};
      for (std::size_t c = 0; c < s.c; ++c) {
        const T e = std::exp(x[base + c * plane] - mx);
        y[base + c * plane] = e;
        sum += e;
      }
      for (std::size_t c = 0; c < s.c; ++c) y[base + c * plane] /= sum;
    }
  }
  return y;
}

/// Gradient given the softmax output (not its input).
template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& y, const BasicTensor<T>& grad_out) {
  const Shape s = y.shape();
  if (grad_out.shape() != s) {
    throw ContractViolation("softmax backward: gradient shape " + grad_out.shape().str() +
                            " does not match output shape " + s.str());
  }
  BasicTensor<T> g(s);
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = n * s.item_size() + p;
      T dot{0};
      for (std::size_t c = 0; c < s.c; ++c) dot += y[base + c * plane] * grad_out[base + c * plane];
      for (std::size_t c = 0; c < s.c; ++c) {
        g[base + c * plane] = y[base + c * plane] * (grad_out[base + c * plane] - dot);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// channel concatenation

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ContractViolation("concat_channels: shapes " + sa.str() + " and " + sb.str() +
                            " disagree on batch or spatial extent");
  }
  BasicTensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  for (std::size_t n = 0; n < sa.n; ++n) {
    T* dst = out.data() + n * out.shape().item_size();
    std::copy_n(a.data() + n * sa.item_size(), sa.item_size(), dst);
    std::copy_n(b.data() + n * sb.item_size(), sb.item_size(), dst + sa.item_size());
  }
  return out;
}

/// Inverse of concat_channels: channels [0, first_channels) and the rest.
/// Also serves as the concat backward pass.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& t,
                                                         std::size_t first_channels) {
  const Shape s = t.shape();
  if (first_channels > s.c) {
    throw ContractViolation("split_channels: split index " + std::to_string(first_channels) +
                            " exceeds channels of " + s.str());
  }
  BasicTensor<T> a({s.n, first_channels, s.h, s.w});
  BasicTensor<T> b({s.n, s.c - first_channels, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = t.data() + n * s.item_size();
    std::copy_n(src, a.shape().item_size(), a.data() + n * a.shape().item_size());
    std::copy_n(src + a.shape().item_size(), b.shape().item_size(),
                b.data() + n * b.shape().item_size());
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// RoI max pooling.
//
// The RoI corners are scaled by spatial_scale, floored and clamped to the
// map; the window spans the inclusive cell range between them (at least one
// cell). Bin i of an extent of L cells covers [floor(i*L/out), ceil((i+1)*L/out)).

struct RoiWindow {
  std::size_t y0 = 0;
  std::size_t x0 = 0;
  std::size_t h = 1;
  std::size_t w = 1;
};

inline RoiWindow project_roi(const BBox& roi, float spatial_scale, std::size_t map_h,
                             std::size_t map_w) {
  auto cell = [](float v, std::size_t extent) {
    const double f = std::floor(static_cast<double>(v));
    return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(extent - 1)));
  };
  const std::size_t x1 = cell(roi.x1 * spatial_scale, map_w);
  const std::size_t y1 = cell(roi.y1 * spatial_scale, map_h);
  const std::size_t x2 = std::max(x1, cell(roi.x2 * spatial_scale, map_w));
  const std::size_t y2 = std::max(y1, cell(roi.y2 * spatial_scale, map_h));
  return {y1, x1, y2 - y1 + 1, x2 - x1 + 1};
}

inline std::pair<std::size_t, std::size_t> roi_bin(std::size_t i, std::size_t extent,
                                                   std::size_t bins) {
  const std::size_t start = (i * extent) / bins;
  const std::size_t end = ((i + 1) * extent + bins - 1) / bins;
  return {start, std::min(end, extent)};
}

namespace detail {
inline void check_roi_args(const Shape& fs, std::span<const BBox> rois, std::size_t out_h,
                           std::size_t out_w) {
  if (fs.n != 1) {
    throw ContractViolation("roi_pool: feature shape " + fs.str() + " must have batch 1");
  }
  if (fs.h == 0 || fs.w == 0) throw ContractViolation("roi_pool: empty feature map " + fs.str());
  if (out_h < 1 || out_w < 1) throw ContractViolation("roi_pool: output size must be >= 1");
  for (const BBox& r : rois) require_valid(r, "roi_pool");
}

// Calls fn(roi, channel, bin_y, bin_x, argmax_offset_in_plane).
template <typename T, typename Fn>
void for_each_roi_bin(const BasicTensor<T>& features, std::span<const BBox> rois,
                      float spatial_scale, std::size_t out_h, std::size_t out_w, Fn&& fn) {
  const Shape fs = features.shape();
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const RoiWindow win = project_roi(rois[r], spatial_scale, fs.h, fs.w);
    for (std::size_t c = 0; c < fs.c; ++c) {
      const T* plane = features.data() + c * fs.plane();
      for (std::size_t by = 0; by < out_h; ++by) {
        const auto [ys, ye] = roi_bin(by, win.h, out_h);
        for (std::size_t bx = 0; bx < out_w; ++bx) {
          const auto [xs, xe] = roi_bin(bx, win.w, out_w);
          std::size_t best = (win.y0 + ys) * fs.w + win.x0 + xs;
          for (std::size_t y = ys; y < ye; ++y) {
            for (std::size_t x = xs; x < xe; ++x) {
              const std::size_t off = (win.y0 + y) * fs.w + win.x0 + x;
              if (plane[off] > plane[best]) best = off;
            }
          }
          fn(r, c, by, bx, best);
        }
      }
    }
  }
}
}  // namespace detail

/// Pools each RoI of a (1, c, h, w) map into (R, c, out_h, out_w).
template <typename T>
BasicTensor<T> roi_pool(const BasicTensor<T>& features, std::span<const BBox> rois,
                        float spatial_scale, std::size_t out_h, std::size_t out_w) {
  const Shape fs = features.shape();
  detail::check_roi_args(fs, rois, out_h, out_w);
  BasicTensor<T> out({rois.size(), fs.c, out_h, out_w});
  detail::for_each_roi_bin(features, rois, spatial_scale, out_h, out_w,
                           [&](std::size_t r, std::size_t c, std::size_t by, std::size_t bx,
                               std::size_t best) {
                             out.at(r, c, by, bx) = features[c * fs.plane() + best];
                           });
  return out;
}

template <typename T>
BasicTensor<T> roi_pool_backward(const BasicTensor<T>& features, std::span<const BBox> rois,
                                 float spatial_scale, std::size_t out_h, std::size_t out_w,
                                 const BasicTensor<T>& grad_out) {
  const Shape fs = features.shape();
  detail::check_roi_args(fs, rois, out_h, out_w);
  const Shape expected{rois.size(), fs.c, out_h, out_w};
  if (grad_out.shape() != expected) {
    throw ContractViolation("roi_pool backward: gradient shape " + grad_out.shape().str() +
                            " does not match output shape " + expected.str());
  }
  BasicTensor<T> g(fs);
  detail::for_each_roi_bin(features, rois, spatial_scale, out_h, out_w,
                           [&](std::size_t r, std::size_t c, std::size_t by, std::size_t bx,
                               std::size_t best) {
                             g[c * fs.plane() + best] += grad_out.at(r, c, by, bx);
                           });
  return g;
}

}  // namespace msfuse::nn
