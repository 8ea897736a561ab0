#pragma once

// Independent reference implementations and a central finite-difference
// harness. Everything here is written against the math directly, with loop
// structures deliberately different from the library kernels, so a test that
// compares both routes actually compares two derivations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "hnfl/tensor.hpp"

namespace hnfl::oracle {

/// Relative error with a unit absolute floor: |a-b| / max(1, |a|, |b|).
inline double rel_err(double a, double b) {
  double denom = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

inline double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = a.data.size() == b.data.size() ? 0.0
                                                : std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.data.size() && i < b.data.size(); ++i) {
    worst = std::max(worst, rel_err(a.data[i], b.data[i]));
  }
  return worst;
}

/// Central finite-difference gradient of scalar-valued f wrt every element of
/// x. f must read the current contents of x on each call.
inline Tensor fd_grad(Tensor& x, const std::function<double()>& f, double eps = 1e-5) {
  Tensor g = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    double saved = x.data[i];
    x.data[i] = saved + eps;
    double hi = f();
    x.data[i] = saved - eps;
    double lo = f();
    x.data[i] = saved;
    g.data[i] = (hi - lo) / (2.0 * eps);
  }
  return g;
}

/// Reference matrix product y = x W + b, accumulated row-by-row with a long
/// double accumulator (different order and precision than the kernel).
inline Tensor matmul_ref(const Tensor& x, const Tensor& W, const Tensor& b) {
  std::int64_t batch = x.dim(0), in = x.dim(1), out = W.dim(1);
  Tensor y = Tensor::zeros({batch, out});
  for (std::int64_t r = 0; r < batch; ++r) {
    for (std::int64_t j = 0; j < out; ++j) {
      long double acc = b[j];
      for (std::int64_t k = 0; k < in; ++k) acc += static_cast<long double>(x.at(r, k)) * W.at(k, j);
      y.at(r, j) = static_cast<double>(acc);
    }
  }
  return y;
}

/// Reference cross-correlation via an explicitly zero-padded copy of the
/// input, no bounds tests in the inner loops.
inline Tensor conv2d_ref(const Tensor& x, const Tensor& K, const Tensor& b, std::int64_t stride,
                         std::int64_t padding) {
  std::int64_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::int64_t cout = K.dim(0), kh = K.dim(2), kw = K.dim(3);
  std::int64_t hp = h + 2 * padding, wp = w + 2 * padding;
  Tensor xp = Tensor::zeros({batch, cin, hp, wp});
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < cin; ++c)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j)
          xp.at(n, c, i + padding, j + padding) = x.at(n, c, i, j);

  std::int64_t ho = (hp - kh) / stride + 1;
  std::int64_t wo = (wp - kw) / stride + 1;
  Tensor y = Tensor::zeros({batch, cout, ho, wo});
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t oh = 0; oh < ho; ++oh)
        for (std::int64_t ow = 0; ow < wo; ++ow) {
          long double acc = b.numel() > 0 ? b[co] : 0.0;
          for (std::int64_t ci = 0; ci < cin; ++ci)
            for (std::int64_t r = 0; r < kh; ++r)
              for (std::int64_t c = 0; c < kw; ++c)
                acc += static_cast<long double>(xp.at(n, ci, oh * stride + r, ow * stride + c)) *
                       K.at(co, ci, r, c);
          y.at(n, co, oh, ow) = static_cast<double>(acc);
        }
  return y;
}

/// Reference mean cross-entropy by the direct formula, long double throughout.
inline double cross_entropy_ref(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  std::int64_t batch = logits.dim(0), c = logits.dim(1);
  long double total = 0.0;
  for (std::int64_t r = 0; r < batch; ++r) {
    long double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(static_cast<long double>(logits.at(r, j)));
    total += std::log(z) - static_cast<long double>(logits.at(r, labels[static_cast<std::size_t>(r)]));
  }
  return static_cast<double>(total / batch);
}

/// Reference distillation loss by the direct formula.
inline double kd_ref(const Tensor& student, const Tensor& teacher, double T) {
  std::int64_t batch = student.dim(0), c = student.dim(1);
  long double total = 0.0;
  for (std::int64_t r = 0; r < batch; ++r) {
    long double zs = 0.0, zt = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      zs += std::exp(static_cast<long double>(student.at(r, j)) / T);
      zt += std::exp(static_cast<long double>(teacher.at(r, j)) / T);
    }
    for (std::int64_t j = 0; j < c; ++j) {
      long double p = std::exp(static_cast<long double>(teacher.at(r, j)) / T) / zt;
      long double q = std::exp(static_cast<long double>(student.at(r, j)) / T) / zs;
      total += p * (std::log(p) - std::log(q));
    }
  }
  return static_cast<double>(T * T * total / batch);
}

/// Reference momentum-SGD trajectory on a scalar parameter.
inline double sgd_trace_ref(double p, const std::vector<double>& grads, double lr, double mu,
                            double wd) {
  double buf = 0.0;
  for (double g : grads) {
    double ge = g + wd * p;
    buf = mu * buf + ge;
    p -= lr * buf;
  }
  return p;
}

/// Reference bias-corrected Adam trajectory on a scalar parameter.
inline double adam_trace_ref(double p, const std::vector<double>& grads, double lr, double b1,
                             double b2, double eps) {
  double m = 0.0, u = 0.0;
  int t = 0;
  for (double g : grads) {
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    u = b2 * u + (1.0 - b2) * g * g;
    double mh = m / (1.0 - std::pow(b1, t));
    double uh = u / (1.0 - std::pow(b2, t));
    p -= lr * mh / (std::sqrt(uh) + eps);
  }
  return p;
}

}  // namespace hnfl::oracle
