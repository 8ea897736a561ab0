#pragma once

#include <cstdint>
#include <vector>

#include "hnfl/tensor.hpp"

namespace hnfl {

// Hand-written forward/backward kernels. Conventions shared by all of them:
//   - forward fills a cache struct holding exactly what backward needs;
//   - backward never mutates the cache and allocates its outputs;
//   - every kernel validates shapes up front (shape_error) and checks its
//     outputs for NaN/Inf (numeric_error);
//   - kernels are pure functions, safe to run from multiple workers.

struct DenseCache {
  Tensor x;  // [batch, in]
  Tensor W;  // [in, out]
};

/// y = x W + b with x [batch, in], W [in, out], b [out] broadcast over batch.
Tensor dense_forward(const Tensor& x, const Tensor& W, const Tensor& b, DenseCache& cache);
void dense_backward(const Tensor& grad_y, const DenseCache& cache, Tensor& grad_x,
                    Tensor& grad_W, Tensor& grad_b);

struct Conv2dCache {
  Tensor x;  // [batch, cin, h, w]
  Tensor K;  // [cout, cin, kh, kw]
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  bool has_bias = true;
};

/// Cross-correlation with zero padding. Output spatial size is
/// floor((h + 2*padding - kh) / stride) + 1. Pass an empty bias tensor for a
/// bias-free convolution.
Tensor conv2d_forward(const Tensor& x, const Tensor& K, const Tensor& b, std::int64_t stride,
                      std::int64_t padding, Conv2dCache& cache);
void conv2d_backward(const Tensor& grad_y, const Conv2dCache& cache, Tensor& grad_x,
                     Tensor& grad_K, Tensor& grad_b);

struct MaxPool2dCache {
  std::vector<std::int64_t> in_shape;
  // Flat index into the input buffer of each output element's argmax.
  // Ties resolve to the first element in row-major window order.
  std::vector<std::int64_t> argmax;
};

Tensor maxpool2d_forward(const Tensor& x, std::int64_t kernel, std::int64_t stride,
                         MaxPool2dCache& cache);
/// Scatter: each upstream value lands on its window's saved argmax position.
Tensor maxpool2d_backward(const Tensor& grad_y, const MaxPool2dCache& cache);

struct AvgPool2dCache {
  std::vector<std::int64_t> in_shape;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
};

Tensor avgpool2d_forward(const Tensor& x, std::int64_t kernel, std::int64_t stride,
                         AvgPool2dCache& cache);
Tensor avgpool2d_backward(const Tensor& grad_y, const AvgPool2dCache& cache);

struct ReluCache {
  Tensor x;
};

Tensor relu_forward(const Tensor& x, ReluCache& cache);
/// Gradient is masked where the forward input was <= 0.
Tensor relu_backward(const Tensor& grad_y, const ReluCache& cache);

struct FlattenCache {
  std::vector<std::int64_t> in_shape;
};

/// [batch, d1, d2, ...] -> [batch, d1*d2*...].
Tensor flatten_forward(const Tensor& x, FlattenCache& cache);
Tensor flatten_backward(const Tensor& grad_y, const FlattenCache& cache);

/// y = a + b elementwise; backward duplicates the upstream gradient to both
/// branches, so no cache is needed.
Tensor residual_add(const Tensor& a, const Tensor& b);

struct BatchNormCache {
  Tensor x;      // [batch, c, h, w]
  Tensor gamma;  // [c]
  Tensor mean;   // [c], statistics used for normalization
  Tensor var;    // [c], biased batch variance (training) or running variance (eval)
  double eps = 1e-5;
  bool training = true;
};

/// Per-channel affine batch normalization over [batch, c, h, w]. Training mode
/// normalizes with batch statistics and updates running_mean/running_var in
/// place (momentum-weighted, unbiased variance); eval mode normalizes with the
/// running statistics and leaves them untouched.
Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         Tensor& running_mean, Tensor& running_var, bool training,
                         double momentum, double eps, BatchNormCache& cache);
void batchnorm_backward(const Tensor& grad_y, const BatchNormCache& cache, Tensor& grad_x,
                        Tensor& grad_gamma, Tensor& grad_beta);

/// Row-wise numerically-stable softmax of [batch, c].
Tensor softmax(const Tensor& logits);

/// Mean over the batch of -log softmax(logits)[label]. grad_logits is resized
/// and filled with (softmax - onehot) / batch.
double softmax_cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels,
                             Tensor& grad_logits);

/// Distillation loss: T^2 * KL(softmax(teacher/T) || softmax(student/T)),
/// mean over the batch. The teacher is a constant; grad_student receives
/// T * (softmax(student/T) - softmax(teacher/T)) / batch. Identical logits
/// give exactly zero loss.
double kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature,
               Tensor& grad_student);

/// One momentum-SGD step on a single tensor:
///   g' = g + weight_decay * p;  buf = momentum * buf + g';  p -= lr * buf.
/// buf must be zeros-of-p on the first call.
void sgd_step(Tensor& p, const Tensor& g, Tensor& buf, double lr, double momentum,
              double weight_decay);

/// Momentum buffers for a parameter list, lazily shaped on the first step.
struct SgdState {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<Tensor> buf;

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
            const std::vector<bool>* trainable = nullptr);
};

struct AdamSlot {
  Tensor m;
  Tensor u;
  std::int64_t t = 0;
};

/// One bias-corrected Adam step on a single tensor. The slot's moments are
/// lazily shaped on the first call; t counts steps taken on this tensor.
void adam_step(Tensor& p, const Tensor& g, AdamSlot& slot, double lr, double beta1, double beta2,
               double eps);

/// Per-tensor Adam slots for a parameter list. Tensors excluded by the mask
/// are skipped entirely: no moment update, no step-count change, so a masked
/// tensor's bytes never move.
struct AdamState {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<AdamSlot> slots;

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
            const std::vector<bool>* mask = nullptr);
};

}  // namespace hnfl
