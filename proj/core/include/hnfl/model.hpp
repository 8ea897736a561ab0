#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hnfl/arch.hpp"
#include "hnfl/ops.hpp"
#include "hnfl/rng.hpp"
#include "hnfl/tensor.hpp"

namespace hnfl {

/// Per-layer forward caches. One entry per arch layer; only the members for
/// that layer's kind are populated. Residual blocks use the r* members.
struct StepCache {
  DenseCache dense;
  Conv2dCache conv;
  MaxPool2dCache maxp;
  AvgPool2dCache avgp;
  ReluCache relu;
  FlattenCache flat;
  BatchNormCache bn;

  Conv2dCache rc1, rc2, rcp;
  BatchNormCache rb1, rb2, rbp;
  ReluCache rr1, rrout;
  bool proj_used = false;
};

struct ModelCache {
  std::vector<StepCache> steps;
};

/// A client model instance: the architecture plus one tensor per parameter
/// slot (generated and local-only layers alike; parameterless layers own
/// nothing). Tensor order equals canonical packing order, with local-only
/// layers interleaved at their declaration position.
class Model {
public:
  explicit Model(ArchitectureSpec arch);

  const ArchitectureSpec& arch() const { return arch_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const std::vector<PackedTensorInfo>& slots() const { return slots_; }

  /// Dense and convolution weights/biases drawn uniform within
  /// +-1/sqrt(fan_in); batchnorm starts at gamma=1, beta=0, running mean 0,
  /// running variance 1. One pass over tensors in declaration order, so a
  /// given seed always produces the same model.
  void init_params(Rng& rng);

  /// x is [batch, ...input_shape]. Training mode uses batch statistics in
  /// batchnorm layers and updates their running stats; frozen batchnorm
  /// layers run in eval mode regardless.
  Tensor forward(const Tensor& x, bool training, ModelCache& cache);

  /// Gradients aligned with tensors(); running statistics get zeros.
  std::vector<Tensor> backward(const Tensor& grad_logits, const ModelCache& cache);

  /// False for tensors of frozen layers and for batchnorm running stats.
  std::vector<bool> trainable_mask() const;

  FlatParams pack() const;
  void unpack(const FlatParams& flat);

private:
  Tensor& slot_tensor(int layer, int sub, ParamRole role);
  const Tensor& slot_tensor(int layer, int sub, ParamRole role) const;

  ArchitectureSpec arch_;
  std::vector<PackedTensorInfo> slots_;  // all parameterful tensors, in order
  std::vector<Tensor> tensors_;
};

/// One SGD step on the mean cross-entropy over the batch. Returns the loss
/// at the pre-step parameters. Frozen layers receive no update.
double train_step_ce(Model& model, const Tensor& x, const std::vector<std::int64_t>& labels,
                     SgdState& opt);

/// One SGD step on lambda * cross-entropy + (1 - lambda) * distillation
/// against fixed teacher logits at the given temperature.
double train_step_kd(Model& model, const Tensor& x, const std::vector<std::int64_t>& labels,
                     const Tensor& teacher_logits, double lambda, double temperature,
                     SgdState& opt);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::int64_t correct = 0;
  std::int64_t total = 0;
};

/// Eval-mode forward over the whole set in batches; accuracy by argmax with
/// ties resolved to the lowest class index.
EvalResult evaluate_model(Model& model, const Tensor& x, const std::vector<std::int64_t>& labels,
                          std::int64_t batch_size = 256);

}  // namespace hnfl
