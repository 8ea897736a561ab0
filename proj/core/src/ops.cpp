#include "hnfl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hnfl {

namespace {

void require_2d(const Tensor& t, const char* what) {
  require_shape(t.ndim() == 2, std::string(what) + " must be 2-d, got " + shape_str(t.shape));
}

void require_4d(const Tensor& t, const char* what) {
  require_shape(t.ndim() == 4, std::string(what) + " must be 4-d, got " + shape_str(t.shape));
}

std::int64_t pooled_size(std::int64_t in, std::int64_t kernel, std::int64_t stride) {
  return (in - kernel) / stride + 1;
}

}  // namespace

Tensor dense_forward(const Tensor& x, const Tensor& W, const Tensor& b, DenseCache& cache) {
  require_2d(x, "dense input");
  require_2d(W, "dense weight");
  std::int64_t batch = x.dim(0), in = x.dim(1), out = W.dim(1);
  require_shape(W.dim(0) == in, "dense: weight rows " + std::to_string(W.dim(0)) +
                                    " != input features " + std::to_string(in));
  require_shape(b.ndim() == 1 && b.dim(0) == out,
                "dense: bias shape " + shape_str(b.shape) + " != [" + std::to_string(out) + "]");

  Tensor y = Tensor::zeros({batch, out});
  for (std::int64_t r = 0; r < batch; ++r) {
    const double* xr = x.data.data() + r * in;
    double* yr = y.data.data() + r * out;
    for (std::int64_t j = 0; j < out; ++j) yr[j] = b[j];
    for (std::int64_t k = 0; k < in; ++k) {
      double xv = xr[k];
      const double* wk = W.data.data() + k * out;
      for (std::int64_t j = 0; j < out; ++j) yr[j] += xv * wk[j];
    }
  }
  check_finite(y, "dense_forward output");
  cache.x = x;
  cache.W = W;
  return y;
}

void dense_backward(const Tensor& grad_y, const DenseCache& cache, Tensor& grad_x,
                    Tensor& grad_W, Tensor& grad_b) {
  const Tensor& x = cache.x;
  const Tensor& W = cache.W;
  std::int64_t batch = x.dim(0), in = x.dim(1), out = W.dim(1);
  require_shape(grad_y.ndim() == 2 && grad_y.dim(0) == batch && grad_y.dim(1) == out,
                "dense_backward: upstream shape " + shape_str(grad_y.shape));

  grad_x = Tensor::zeros({batch, in});
  grad_W = Tensor::zeros({in, out});
  grad_b = Tensor::zeros({out});
  for (std::int64_t r = 0; r < batch; ++r) {
    const double* gyr = grad_y.data.data() + r * out;
    const double* xr = x.data.data() + r * in;
    double* gxr = grad_x.data.data() + r * in;
    for (std::int64_t j = 0; j < out; ++j) grad_b[j] += gyr[j];
    for (std::int64_t k = 0; k < in; ++k) {
      const double* wk = W.data.data() + k * out;
      double* gwk = grad_W.data.data() + k * out;
      double acc = 0.0;
      double xv = xr[k];
      for (std::int64_t j = 0; j < out; ++j) {
        acc += gyr[j] * wk[j];
        gwk[j] += xv * gyr[j];
      }
      gxr[k] = acc;
    }
  }
  check_finite(grad_x, "dense_backward grad_x");
  check_finite(grad_W, "dense_backward grad_W");
  check_finite(grad_b, "dense_backward grad_b");
}

Tensor conv2d_forward(const Tensor& x, const Tensor& K, const Tensor& b, std::int64_t stride,
                      std::int64_t padding, Conv2dCache& cache) {
  require_4d(x, "conv input");
  require_4d(K, "conv kernel");
  require_shape(stride >= 1 && padding >= 0, "conv: stride must be >= 1 and padding >= 0");
  std::int64_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::int64_t cout = K.dim(0), kh = K.dim(2), kw = K.dim(3);
  require_shape(K.dim(1) == cin, "conv: kernel expects " + std::to_string(K.dim(1)) +
                                     " input channels, input has " + std::to_string(cin));
  bool has_bias = b.numel() > 0;
  if (has_bias) {
    require_shape(b.ndim() == 1 && b.dim(0) == cout,
                  "conv: bias shape " + shape_str(b.shape) + " != [" + std::to_string(cout) + "]");
  }
  require_shape(kh <= h + 2 * padding && kw <= w + 2 * padding,
                "conv: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " exceeds padded input " + std::to_string(h + 2 * padding) + "x" +
                    std::to_string(w + 2 * padding));
  std::int64_t ho = (h + 2 * padding - kh) / stride + 1;
  std::int64_t wo = (w + 2 * padding - kw) / stride + 1;

  Tensor y = Tensor::zeros({batch, cout, ho, wo});
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t co = 0; co < cout; ++co) {
      double bias = has_bias ? b[co] : 0.0;
      for (std::int64_t oh = 0; oh < ho; ++oh) {
        for (std::int64_t ow = 0; ow < wo; ++ow) {
          double acc = bias;
          std::int64_t ih0 = oh * stride - padding;
          std::int64_t iw0 = ow * stride - padding;
          for (std::int64_t ci = 0; ci < cin; ++ci) {
            for (std::int64_t r = 0; r < kh; ++r) {
              std::int64_t ih = ih0 + r;
              if (ih < 0 || ih >= h) continue;
              for (std::int64_t c = 0; c < kw; ++c) {
                std::int64_t iw = iw0 + c;
                if (iw < 0 || iw >= w) continue;
                acc += x.at(n, ci, ih, iw) * K.at(co, ci, r, c);
              }
            }
          }
          y.at(n, co, oh, ow) = acc;
        }
      }
    }
  }
  check_finite(y, "conv2d_forward output");
  cache.x = x;
  cache.K = K;
  cache.stride = stride;
  cache.padding = padding;
  cache.has_bias = has_bias;
  return y;
}

void conv2d_backward(const Tensor& grad_y, const Conv2dCache& cache, Tensor& grad_x,
                     Tensor& grad_K, Tensor& grad_b) {
  const Tensor& x = cache.x;
  const Tensor& K = cache.K;
  std::int64_t stride = cache.stride, padding = cache.padding;
  std::int64_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::int64_t cout = K.dim(0), kh = K.dim(2), kw = K.dim(3);
  std::int64_t ho = (h + 2 * padding - kh) / stride + 1;
  std::int64_t wo = (w + 2 * padding - kw) / stride + 1;
  require_shape(grad_y.ndim() == 4 && grad_y.dim(0) == batch && grad_y.dim(1) == cout &&
                    grad_y.dim(2) == ho && grad_y.dim(3) == wo,
                "conv2d_backward: upstream shape " + shape_str(grad_y.shape));

  grad_x = Tensor::zeros({batch, cin, h, w});
  grad_K = Tensor::zeros({cout, cin, kh, kw});
  grad_b = cache.has_bias ? Tensor::zeros({cout}) : Tensor{};
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t co = 0; co < cout; ++co) {
      for (std::int64_t oh = 0; oh < ho; ++oh) {
        for (std::int64_t ow = 0; ow < wo; ++ow) {
          double gy = grad_y.at(n, co, oh, ow);
          if (cache.has_bias) grad_b[co] += gy;
          if (gy == 0.0) continue;
          std::int64_t ih0 = oh * stride - padding;
          std::int64_t iw0 = ow * stride - padding;
          for (std::int64_t ci = 0; ci < cin; ++ci) {
            for (std::int64_t r = 0; r < kh; ++r) {
              std::int64_t ih = ih0 + r;
              if (ih < 0 || ih >= h) continue;
              for (std::int64_t c = 0; c < kw; ++c) {
                std::int64_t iw = iw0 + c;
                if (iw < 0 || iw >= w) continue;
                grad_x.at(n, ci, ih, iw) += gy * K.at(co, ci, r, c);
                grad_K.at(co, ci, r, c) += gy * x.at(n, ci, ih, iw);
              }
            }
          }
        }
      }
    }
  }
  check_finite(grad_x, "conv2d_backward grad_x");
  check_finite(grad_K, "conv2d_backward grad_K");
  if (cache.has_bias) check_finite(grad_b, "conv2d_backward grad_b");
}

Tensor maxpool2d_forward(const Tensor& x, std::int64_t kernel, std::int64_t stride,
                         MaxPool2dCache& cache) {
  require_4d(x, "maxpool input");
  require_shape(kernel >= 1 && stride >= 1, "maxpool: kernel and stride must be >= 1");
  std::int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  require_shape(kernel <= h && kernel <= w, "maxpool: window " + std::to_string(kernel) +
                                                " exceeds input " + std::to_string(h) + "x" +
                                                std::to_string(w));
  std::int64_t ho = pooled_size(h, kernel, stride);
  std::int64_t wo = pooled_size(w, kernel, stride);

  Tensor y = Tensor::zeros({batch, ch, ho, wo});
  cache.in_shape = x.shape;
  cache.argmax.assign(static_cast<std::size_t>(y.numel()), 0);
  std::int64_t out_idx = 0;
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < ch; ++c) {
      for (std::int64_t oh = 0; oh < ho; ++oh) {
        for (std::int64_t ow = 0; ow < wo; ++ow, ++out_idx) {
          std::int64_t ih0 = oh * stride, iw0 = ow * stride;
          double best = x.at(n, c, ih0, iw0);
          std::int64_t best_flat = ((n * ch + c) * h + ih0) * w + iw0;
          for (std::int64_t r = 0; r < kernel; ++r) {
            for (std::int64_t s = 0; s < kernel; ++s) {
              double v = x.at(n, c, ih0 + r, iw0 + s);
              if (v > best) {
                best = v;
                best_flat = ((n * ch + c) * h + ih0 + r) * w + iw0 + s;
              }
            }
          }
          y.data[static_cast<std::size_t>(out_idx)] = best;
          cache.argmax[static_cast<std::size_t>(out_idx)] = best_flat;
        }
      }
    }
  }
  check_finite(y, "maxpool2d_forward output");
  return y;
}

Tensor maxpool2d_backward(const Tensor& grad_y, const MaxPool2dCache& cache) {
  require_shape(grad_y.numel() == static_cast<std::int64_t>(cache.argmax.size()),
                "maxpool2d_backward: upstream element count mismatch");
  Tensor grad_x = Tensor::zeros(cache.in_shape);
  for (std::size_t i = 0; i < cache.argmax.size(); ++i) {
    grad_x.data[static_cast<std::size_t>(cache.argmax[i])] += grad_y.data[i];
  }
  check_finite(grad_x, "maxpool2d_backward grad_x");
  return grad_x;
}

Tensor avgpool2d_forward(const Tensor& x, std::int64_t kernel, std::int64_t stride,
                         AvgPool2dCache& cache) {
  require_4d(x, "avgpool input");
  require_shape(kernel >= 1 && stride >= 1, "avgpool: kernel and stride must be >= 1");
  std::int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  require_shape(kernel <= h && kernel <= w, "avgpool: window " + std::to_string(kernel) +
                                                " exceeds input " + std::to_string(h) + "x" +
                                                std::to_string(w));
  std::int64_t ho = pooled_size(h, kernel, stride);
  std::int64_t wo = pooled_size(w, kernel, stride);

  Tensor y = Tensor::zeros({batch, ch, ho, wo});
  double inv = 1.0 / static_cast<double>(kernel * kernel);
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < ch; ++c) {
      for (std::int64_t oh = 0; oh < ho; ++oh) {
        for (std::int64_t ow = 0; ow < wo; ++ow) {
          double acc = 0.0;
          for (std::int64_t r = 0; r < kernel; ++r) {
            for (std::int64_t s = 0; s < kernel; ++s) {
              acc += x.at(n, c, oh * stride + r, ow * stride + s);
            }
          }
          y.at(n, c, oh, ow) = acc * inv;
        }
      }
    }
  }
  check_finite(y, "avgpool2d_forward output");
  cache.in_shape = x.shape;
  cache.kernel = kernel;
  cache.stride = stride;
  return y;
}

Tensor avgpool2d_backward(const Tensor& grad_y, const AvgPool2dCache& cache) {
  std::int64_t batch = cache.in_shape[0], ch = cache.in_shape[1];
  std::int64_t h = cache.in_shape[2], w = cache.in_shape[3];
  std::int64_t kernel = cache.kernel, stride = cache.stride;
  std::int64_t ho = pooled_size(h, kernel, stride);
  std::int64_t wo = pooled_size(w, kernel, stride);
  require_shape(grad_y.ndim() == 4 && grad_y.dim(0) == batch && grad_y.dim(1) == ch &&
                    grad_y.dim(2) == ho && grad_y.dim(3) == wo,
                "avgpool2d_backward: upstream shape " + shape_str(grad_y.shape));

  Tensor grad_x = Tensor::zeros(cache.in_shape);
  double inv = 1.0 / static_cast<double>(kernel * kernel);
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < ch; ++c) {
      for (std::int64_t oh = 0; oh < ho; ++oh) {
        for (std::int64_t ow = 0; ow < wo; ++ow) {
          double g = grad_y.at(n, c, oh, ow) * inv;
          for (std::int64_t r = 0; r < kernel; ++r) {
            for (std::int64_t s = 0; s < kernel; ++s) {
              grad_x.at(n, c, oh * stride + r, ow * stride + s) += g;
            }
          }
        }
      }
    }
  }
  check_finite(grad_x, "avgpool2d_backward grad_x");
  return grad_x;
}

Tensor relu_forward(const Tensor& x, ReluCache& cache) {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
  check_finite(y, "relu_forward output");
  cache.x = x;
  return y;
}

Tensor relu_backward(const Tensor& grad_y, const ReluCache& cache) {
  require_shape(grad_y.shape == cache.x.shape, "relu_backward: upstream shape " +
                                                   shape_str(grad_y.shape) + " != input " +
                                                   shape_str(cache.x.shape));
  Tensor grad_x = grad_y;
  for (std::size_t i = 0; i < grad_x.data.size(); ++i) {
    if (cache.x.data[i] <= 0.0) grad_x.data[i] = 0.0;
  }
  check_finite(grad_x, "relu_backward grad_x");
  return grad_x;
}

Tensor flatten_forward(const Tensor& x, FlattenCache& cache) {
  require_shape(x.ndim() >= 2, "flatten input must have a batch dimension");
  cache.in_shape = x.shape;
  Tensor y = x;
  std::int64_t batch = x.dim(0);
  y.shape = {batch, x.numel() / batch};
  return y;
}

Tensor flatten_backward(const Tensor& grad_y, const FlattenCache& cache) {
  require_shape(grad_y.numel() == Tensor::numel_of(cache.in_shape),
                "flatten_backward: upstream element count mismatch");
  Tensor grad_x = grad_y;
  grad_x.shape = cache.in_shape;
  return grad_x;
}

Tensor residual_add(const Tensor& a, const Tensor& b) {
  require_shape(a.shape == b.shape, "residual_add: shapes " + shape_str(a.shape) + " vs " +
                                        shape_str(b.shape));
  Tensor y = a;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
  check_finite(y, "residual_add output");
  return y;
}

Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         Tensor& running_mean, Tensor& running_var, bool training,
                         double momentum, double eps, BatchNormCache& cache) {
  require_4d(x, "batchnorm input");
  std::int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto chk = [&](const Tensor& t, const char* what) {
    require_shape(t.ndim() == 1 && t.dim(0) == ch,
                  std::string("batchnorm: ") + what + " shape " + shape_str(t.shape) + " != [" +
                      std::to_string(ch) + "]");
  };
  chk(gamma, "gamma");
  chk(beta, "beta");
  chk(running_mean, "running_mean");
  chk(running_var, "running_var");

  std::int64_t m = batch * h * w;
  Tensor mean = Tensor::zeros({ch});
  Tensor var = Tensor::zeros({ch});
  if (training) {
    require_shape(m >= 2, "batchnorm: training needs at least 2 values per channel");
    for (std::int64_t n = 0; n < batch; ++n)
      for (std::int64_t c = 0; c < ch; ++c)
        for (std::int64_t i = 0; i < h; ++i)
          for (std::int64_t j = 0; j < w; ++j) mean[c] += x.at(n, c, i, j);
    for (std::int64_t c = 0; c < ch; ++c) mean[c] /= static_cast<double>(m);
    for (std::int64_t n = 0; n < batch; ++n)
      for (std::int64_t c = 0; c < ch; ++c)
        for (std::int64_t i = 0; i < h; ++i)
          for (std::int64_t j = 0; j < w; ++j) {
            double d = x.at(n, c, i, j) - mean[c];
            var[c] += d * d;
          }
    for (std::int64_t c = 0; c < ch; ++c) var[c] /= static_cast<double>(m);
    double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
    for (std::int64_t c = 0; c < ch; ++c) {
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c] * unbias;
    }
  } else {
    mean = running_mean;
    var = running_var;
    // Stored statistics may come from an external source (e.g. a generated
    // parameter vector) where variance entries can be negative; normalization
    // needs var + eps > 0, so negative entries are floored at zero.
    for (std::int64_t c = 0; c < ch; ++c) var[c] = std::max(var[c], 0.0);
  }

  Tensor y = Tensor::zeros(x.shape);
  for (std::int64_t c = 0; c < ch; ++c) {
    double inv_std = 1.0 / std::sqrt(var[c] + eps);
    double g = gamma[c], bet = beta[c], mu = mean[c];
    for (std::int64_t n = 0; n < batch; ++n)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          y.at(n, c, i, j) = g * (x.at(n, c, i, j) - mu) * inv_std + bet;
        }
  }
  check_finite(y, "batchnorm_forward output");
  cache.x = x;
  cache.gamma = gamma;
  cache.mean = mean;
  cache.var = var;
  cache.eps = eps;
  cache.training = training;
  return y;
}

void batchnorm_backward(const Tensor& grad_y, const BatchNormCache& cache, Tensor& grad_x,
                        Tensor& grad_gamma, Tensor& grad_beta) {
  const Tensor& x = cache.x;
  require_shape(grad_y.shape == x.shape, "batchnorm_backward: upstream shape " +
                                             shape_str(grad_y.shape) + " != input " +
                                             shape_str(x.shape));
  std::int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::int64_t m = batch * h * w;

  grad_x = Tensor::zeros(x.shape);
  grad_gamma = Tensor::zeros({ch});
  grad_beta = Tensor::zeros({ch});
  for (std::int64_t c = 0; c < ch; ++c) {
    double mu = cache.mean[c];
    double inv_std = 1.0 / std::sqrt(cache.var[c] + cache.eps);
    double g = cache.gamma[c];

    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (std::int64_t n = 0; n < batch; ++n)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          double gy = grad_y.at(n, c, i, j);
          double xhat = (x.at(n, c, i, j) - mu) * inv_std;
          sum_gy += gy;
          sum_gy_xhat += gy * xhat;
        }
    grad_beta[c] = sum_gy;
    grad_gamma[c] = sum_gy_xhat;

    if (cache.training) {
      // Batch statistics depend on x, so their gradient terms enter here.
      double inv_m = 1.0 / static_cast<double>(m);
      for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t i = 0; i < h; ++i)
          for (std::int64_t j = 0; j < w; ++j) {
            double gy = grad_y.at(n, c, i, j);
            double xhat = (x.at(n, c, i, j) - mu) * inv_std;
            grad_x.at(n, c, i, j) =
                g * inv_std * (gy - inv_m * sum_gy - xhat * inv_m * sum_gy_xhat);
          }
    } else {
      for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t i = 0; i < h; ++i)
          for (std::int64_t j = 0; j < w; ++j) {
            grad_x.at(n, c, i, j) = grad_y.at(n, c, i, j) * g * inv_std;
          }
    }
  }
  check_finite(grad_x, "batchnorm_backward grad_x");
  check_finite(grad_gamma, "batchnorm_backward grad_gamma");
  check_finite(grad_beta, "batchnorm_backward grad_beta");
}

Tensor softmax(const Tensor& logits) {
  require_2d(logits, "softmax input");
  std::int64_t batch = logits.dim(0), c = logits.dim(1);
  Tensor p = Tensor::zeros(logits.shape);
  for (std::int64_t r = 0; r < batch; ++r) {
    const double* lr = logits.data.data() + r * c;
    double* pr = p.data.data() + r * c;
    double mx = lr[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, lr[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      pr[j] = std::exp(lr[j] - mx);
      z += pr[j];
    }
    for (std::int64_t j = 0; j < c; ++j) pr[j] /= z;
  }
  check_finite(p, "softmax output");
  return p;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels,
                             Tensor& grad_logits) {
  require_2d(logits, "cross-entropy logits");
  std::int64_t batch = logits.dim(0), c = logits.dim(1);
  require_shape(static_cast<std::int64_t>(labels.size()) == batch,
                "cross-entropy: " + std::to_string(labels.size()) + " labels for batch " +
                    std::to_string(batch));
  for (auto y : labels) {
    require_shape(y >= 0 && y < c, "cross-entropy: label " + std::to_string(y) +
                                       " outside [0, " + std::to_string(c) + ")");
  }

  Tensor p = softmax(logits);
  double loss = 0.0;
  grad_logits = p;
  double inv_b = 1.0 / static_cast<double>(batch);
  for (std::int64_t r = 0; r < batch; ++r) {
    std::int64_t y = labels[static_cast<std::size_t>(r)];
    double py = p.at(r, y);
    loss -= std::log(std::max(py, 1e-300));
    grad_logits.at(r, y) -= 1.0;
  }
  loss *= inv_b;
  for (auto& v : grad_logits.data) v *= inv_b;
  check_finite(loss, "softmax_cross_entropy loss");
  check_finite(grad_logits, "softmax_cross_entropy grad");
  return loss;
}

double kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature,
               Tensor& grad_student) {
  if (!(temperature > 0.0)) {
    throw numeric_error("kd_loss: temperature must be positive");
  }
  require_2d(student_logits, "kd student logits");
  require_shape(student_logits.shape == teacher_logits.shape,
                "kd_loss: student shape " + shape_str(student_logits.shape) + " != teacher " +
                    shape_str(teacher_logits.shape));
  std::int64_t batch = student_logits.dim(0), c = student_logits.dim(1);

  Tensor s = student_logits;
  Tensor t = teacher_logits;
  double inv_t = 1.0 / temperature;
  for (auto& v : s.data) v *= inv_t;
  for (auto& v : t.data) v *= inv_t;
  Tensor q = softmax(s);
  Tensor p = softmax(t);

  // log-probabilities computed the same way for both nets, so identical
  // logits cancel exactly and the loss is a hard 0.
  auto log_prob = [c](const Tensor& scaled, std::int64_t r, std::int64_t j) {
    const double* row = scaled.data.data() + r * c;
    double mx = row[0];
    for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (std::int64_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    return row[j] - mx - std::log(z);
  };

  double loss = 0.0;
  double inv_b = 1.0 / static_cast<double>(batch);
  grad_student = Tensor::zeros(student_logits.shape);
  for (std::int64_t r = 0; r < batch; ++r) {
    for (std::int64_t j = 0; j < c; ++j) {
      double pj = p.at(r, j);
      if (pj > 0.0) loss += pj * (log_prob(t, r, j) - log_prob(s, r, j));
      grad_student.at(r, j) = temperature * inv_b * (q.at(r, j) - pj);
    }
  }
  loss *= temperature * temperature * inv_b;
  check_finite(loss, "kd_loss value");
  check_finite(grad_student, "kd_loss grad");
  return loss;
}

void sgd_step(Tensor& p, const Tensor& g, Tensor& buf, double lr, double momentum,
              double weight_decay) {
  require_shape(p.shape == g.shape, "sgd_step: param shape " + shape_str(p.shape) +
                                        " != grad " + shape_str(g.shape));
  if (buf.numel() == 0) buf = Tensor::zeros(p.shape);
  require_shape(buf.shape == p.shape, "sgd_step: momentum buffer shape mismatch");
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    double gi = g.data[i] + weight_decay * p.data[i];
    buf.data[i] = momentum * buf.data[i] + gi;
    p.data[i] -= lr * buf.data[i];
  }
  check_finite(p, "sgd_step params");
}

void SgdState::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                    const std::vector<bool>* trainable) {
  require_shape(params.size() == grads.size(), "sgd: parameter/gradient count mismatch");
  if (buf.size() != params.size()) buf.assign(params.size(), Tensor{});
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    sgd_step(params[i], grads[i], buf[i], lr, momentum, weight_decay);
  }
}

void adam_step(Tensor& p, const Tensor& g, AdamSlot& slot, double lr, double beta1, double beta2,
               double eps) {
  require_shape(p.shape == g.shape, "adam_step: param shape " + shape_str(p.shape) +
                                        " != grad " + shape_str(g.shape));
  if (slot.m.numel() == 0 && slot.t == 0) {
    slot.m = Tensor::zeros(p.shape);
    slot.u = Tensor::zeros(p.shape);
  }
  require_shape(slot.m.shape == p.shape && slot.u.shape == p.shape,
                "adam_step: moment buffer shape mismatch");
  slot.t += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(slot.t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(slot.t));
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    double gi = g.data[i];
    slot.m.data[i] = beta1 * slot.m.data[i] + (1.0 - beta1) * gi;
    slot.u.data[i] = beta2 * slot.u.data[i] + (1.0 - beta2) * gi * gi;
    double mhat = slot.m.data[i] / bc1;
    double uhat = slot.u.data[i] / bc2;
    p.data[i] -= lr * mhat / (std::sqrt(uhat) + eps);
  }
  check_finite(p, "adam_step params");
}

void AdamState::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                     const std::vector<bool>* mask) {
  require_shape(params.size() == grads.size(), "adam: parameter/gradient count mismatch");
  if (slots.size() != params.size()) slots.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    adam_step(params[i], grads[i], slots[i], lr, beta1, beta2, eps);
  }
}

}  // namespace hnfl
