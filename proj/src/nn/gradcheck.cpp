#include "msfuse/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msfuse/nn/ops.hpp"

namespace msfuse::nn {

namespace {

double projected(const TensorD& y, const TensorD& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

TensorD uniform(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  TensorD t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Distinct values at spacing 0.05 in random order, jittered by < 0.005, so no
// two entries come within 0.04 of each other.
TensorD well_separated(std::mt19937_64& rng, Shape shape) {
  std::vector<std::size_t> order(shape.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> jitter(-0.005, 0.005);
  TensorD t(shape);
  const double offset = 0.025 * static_cast<double>(shape.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = 0.05 * static_cast<double>(order[i]) - offset + jitter(rng);
  }
  return t;
}

std::span<const double> bias_span(const TensorD& b) { return b.values(); }

TensorD as_bias_tensor(const std::vector<double>& b) {
  return TensorD({1, b.size(), 1, 1}, b);
}

}  // namespace

GradCheckReport grad_check(const GradCheckFragment& fragment, double epsilon,
                           std::uint64_t projection_seed) {
  std::vector<TensorD> inputs = fragment.inputs;
  std::vector<TensorD> params = fragment.params;
  const TensorD y0 = fragment.forward(inputs, params);
  std::mt19937_64 rng(projection_seed);
  const TensorD r = uniform(rng, y0.shape(), -1.0, 1.0);
  const std::vector<TensorD> analytic = fragment.backward(inputs, params, r);
  if (analytic.size() != inputs.size() + params.size()) {
    throw ContractViolation("grad_check: fragment '" + fragment.name + "' returned " +
                            std::to_string(analytic.size()) + " gradients, expected " +
                            std::to_string(inputs.size() + params.size()));
  }

  GradCheckReport report;
  auto check_group = [&](std::vector<TensorD>& group, std::size_t first, const char* label) {
    for (std::size_t t = 0; t < group.size(); ++t) {
      const TensorD& g = analytic[first + t];
      if (g.shape() != group[t].shape()) {
        throw ContractViolation("grad_check: gradient shape " + g.shape().str() +
                                " does not match " + group[t].shape().str());
      }
      for (std::size_t i = 0; i < group[t].size(); ++i) {
        const double saved = group[t][i];
        group[t][i] = saved + epsilon;
        const double plus = projected(fragment.forward(inputs, params), r);
        group[t][i] = saved - epsilon;
        const double minus = projected(fragment.forward(inputs, params), r);
        group[t][i] = saved;
        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double denom = std::max({std::abs(g[i]), std::abs(numeric), 1e-8});
        const double err = std::abs(g[i] - numeric) / denom;
        ++report.entries_checked;
        if (err > report.max_relative_error) {
          report.max_relative_error = err;
          report.worst_entry = std::string(label) + "[" + std::to_string(t) + "][" +
                               std::to_string(i) + "] analytic=" + std::to_string(g[i]) +
                               " numeric=" + std::to_string(numeric);
        }
      }
    }
  };
  check_group(inputs, 0, "input");
  check_group(params, inputs.size(), "param");
  return report;
}

namespace fragments {

GradCheckFragment conv2d(std::mt19937_64& rng, std::size_t n, std::size_t c_in,
                         std::size_t c_out, std::size_t h, std::size_t w, std::size_t kernel,
                         std::size_t stride, std::size_t pad) {
  GradCheckFragment f;
  f.name = "conv2d";
  f.inputs = {uniform(rng, {n, c_in, h, w}, -1.0, 1.0)};
  f.params = {uniform(rng, {c_out, c_in, kernel, kernel}, -0.5, 0.5),
              uniform(rng, {1, c_out, 1, 1}, -0.5, 0.5)};
  f.forward = [stride, pad](const auto& in, const auto& p) {
    return nn::conv2d(in[0], p[0], bias_span(p[1]), stride, pad);
  };
  f.backward = [stride, pad](const auto& in, const auto& p, const TensorD& go) {
    auto g = conv2d_backward(in[0], p[0], stride, pad, go);
    return std::vector<TensorD>{std::move(g.input), std::move(g.weight), as_bias_tensor(g.bias)};
  };
  return f;
}

GradCheckFragment nin(std::mt19937_64& rng, std::size_t n, std::size_t c_in, std::size_t c_out,
                      std::size_t h, std::size_t w) {
  GradCheckFragment f = conv2d(rng, n, c_in, c_out, h, w, 1, 1, 0);
  f.name = "nin";
  return f;
}

GradCheckFragment fully_connected(std::mt19937_64& rng, std::size_t n, std::size_t in,
                                  std::size_t out) {
  GradCheckFragment f;
  f.name = "fully_connected";
  f.inputs = {uniform(rng, {n, in, 1, 1}, -1.0, 1.0)};
  f.params = {uniform(rng, {out, in, 1, 1}, -0.5, 0.5), uniform(rng, {1, out, 1, 1}, -0.5, 0.5)};
  f.forward = [](const auto& x, const auto& p) {
    return nn::fully_connected(x[0], p[0], bias_span(p[1]));
  };
  f.backward = [](const auto& x, const auto& p, const TensorD& go) {
    auto g = fully_connected_backward(x[0], p[0], go);
    return std::vector<TensorD>{std::move(g.input), std::move(g.weight), as_bias_tensor(g.bias)};
  };
  return f;
}

GradCheckFragment relu(std::mt19937_64& rng, Shape shape) {
  GradCheckFragment f;
  f.name = "relu";
  TensorD x = uniform(rng, shape, 0.02, 1.0);
  std::bernoulli_distribution negative(0.5);
  for (double& v : x.values()) {
    if (negative(rng)) v = -v;
  }
  f.inputs = {std::move(x)};
  f.forward = [](const auto& in, const auto&) { return nn::relu(in[0]); };
  f.backward = [](const auto& in, const auto&, const TensorD& go) {
    return std::vector<TensorD>{relu_backward(in[0], go)};
  };
  return f;
}

GradCheckFragment maxpool2x2(std::mt19937_64& rng, Shape shape) {
  GradCheckFragment f;
  f.name = "maxpool2x2";
  f.inputs = {well_separated(rng, shape)};
  f.forward = [](const auto& in, const auto&) { return nn::maxpool2x2(in[0]); };
  f.backward = [](const auto& in, const auto&, const TensorD& go) {
    return std::vector<TensorD>{maxpool2x2_backward(in[0], go)};
  };
  return f;
}

GradCheckFragment softmax(std::mt19937_64& rng, std::size_t n, std::size_t c) {
  GradCheckFragment f;
  f.name = "softmax";
  f.inputs = {uniform(rng, {n, c, 1, 1}, -2.0, 2.0)};
  f.forward = [](const auto& in, const auto&) { return nn::softmax(in[0]); };
  f.backward = [](const auto& in, const auto&, const TensorD& go) {
    return std::vector<TensorD>{softmax_backward(nn::softmax(in[0]), go)};
  };
  return f;
}

GradCheckFragment concat_channels(std::mt19937_64& rng, std::size_t n, std::size_t c_a,
                                  std::size_t c_b, std::size_t h, std::size_t w) {
  GradCheckFragment f;
  f.name = "concat_channels";
  f.inputs = {uniform(rng, {n, c_a, h, w}, -1.0, 1.0), uniform(rng, {n, c_b, h, w}, -1.0, 1.0)};
  f.forward = [](const auto& in, const auto&) { return nn::concat_channels(in[0], in[1]); };
  f.backward = [c_a](const auto&, const auto&, const TensorD& go) {
    auto [ga, gb] = split_channels(go, c_a);
    return std::vector<TensorD>{std::move(ga), std::move(gb)};
  };
  return f;
}

GradCheckFragment concat_nin(std::mt19937_64& rng, std::size_t c_a, std::size_t c_b,
                             std::size_t c_out, std::size_t h, std::size_t w) {
  GradCheckFragment f;
  f.name = "concat_nin";
  f.inputs = {uniform(rng, {1, c_a, h, w}, -1.0, 1.0), uniform(rng, {1, c_b, h, w}, -1.0, 1.0)};
  f.params = {uniform(rng, {c_out, c_a + c_b, 1, 1}, -0.5, 0.5),
              uniform(rng, {1, c_out, 1, 1}, -0.5, 0.5)};
  f.forward = [](const auto& in, const auto& p) {
    return nn::conv2d(nn::concat_channels(in[0], in[1]), p[0], bias_span(p[1]), 1, 0);
  };
  f.backward = [c_a](const auto& in, const auto& p, const TensorD& go) {
    const TensorD joined = nn::concat_channels(in[0], in[1]);
    auto g = conv2d_backward(joined, p[0], 1, 0, go);
    auto [ga, gb] = split_channels(g.input, c_a);
    return std::vector<TensorD>{std::move(ga), std::move(gb), std::move(g.weight),
                                as_bias_tensor(g.bias)};
  };
  return f;
}

GradCheckFragment roi_pool(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w,
                           std::vector<BBox> rois, float spatial_scale, std::size_t out_h,
                           std::size_t out_w) {
  GradCheckFragment f;
  f.name = "roi_pool";
  f.inputs = {well_separated(rng, {1, c, h, w})};
  f.forward = [=](const auto& in, const auto&) {
    return nn::roi_pool(in[0], std::span<const BBox>(rois), spatial_scale, out_h, out_w);
  };
  f.backward = [=](const auto& in, const auto&, const TensorD& go) {
    return std::vector<TensorD>{
        roi_pool_backward(in[0], std::span<const BBox>(rois), spatial_scale, out_h, out_w, go)};
  };
  return f;
}

}  // namespace fragments

}  // namespace msfuse::nn
