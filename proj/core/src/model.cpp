#include "hnfl/model.hpp"

#include <algorithm>
#include <cmath>

#include "hnfl/errors.hpp"

namespace hnfl {

namespace {

constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;

double init_bound(const PackedTensorInfo& slot, const LayerSpec& layer) {
  // +-1/sqrt(fan_in) for weights and their biases.
  switch (layer.kind) {
    case LayerKind::dense:
      return 1.0 / std::sqrt(static_cast<double>(layer.in));
    case LayerKind::conv2d:
      return 1.0 / std::sqrt(static_cast<double>(layer.in * layer.kernel * layer.kernel));
    case LayerKind::residual_block: {
      std::int64_t fan = slot.sub == 0 ? layer.in * 9
                         : slot.sub == 1 ? layer.out * 9
                                         : layer.in;  // 1x1 projection
      return 1.0 / std::sqrt(static_cast<double>(fan));
    }
    default:
      return 0.0;
  }
}

}  // namespace

Model::Model(ArchitectureSpec arch) : arch_(std::move(arch)) {
  validate_arch(arch_);
  slots_ = model_layout(arch_);
  tensors_.reserve(slots_.size());
  for (const PackedTensorInfo& s : slots_) {
    Tensor t = Tensor::zeros(s.shape);
    if (s.role == ParamRole::bn_gamma || s.role == ParamRole::bn_var) {
      for (auto& v : t.data) v = 1.0;
    }
    tensors_.push_back(std::move(t));
  }
}

void Model::init_params(Rng& rng) {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const PackedTensorInfo& s = slots_[i];
    const LayerSpec& layer = arch_.layers[static_cast<std::size_t>(s.layer)];
    Tensor& t = tensors_[i];
    switch (s.role) {
      case ParamRole::weight:
      case ParamRole::bias: {
        double bound = init_bound(s, layer);
        for (auto& v : t.data) v = rng.uniform(-bound, bound);
        break;
      }
      case ParamRole::bn_gamma:
      case ParamRole::bn_var:
        for (auto& v : t.data) v = 1.0;
        break;
      case ParamRole::bn_beta:
      case ParamRole::bn_mean:
        for (auto& v : t.data) v = 0.0;
        break;
    }
  }
}

Tensor& Model::slot_tensor(int layer, int sub, ParamRole role) {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].layer == layer && slots_[i].sub == sub && slots_[i].role == role) {
      return tensors_[i];
    }
  }
  throw shape_error("model '" + arch_.name + "': no tensor for layer " + std::to_string(layer));
}

const Tensor& Model::slot_tensor(int layer, int sub, ParamRole role) const {
  return const_cast<Model*>(this)->slot_tensor(layer, sub, role);
}

Tensor Model::forward(const Tensor& x, bool training, ModelCache& cache) {
  require_shape(x.ndim() >= 2, "model forward: input needs a batch dimension");
  {
    std::vector<std::int64_t> per_sample(x.shape.begin() + 1, x.shape.end());
    require_shape(per_sample == arch_.input_shape,
                  "model forward: sample shape " + shape_str(per_sample) + " != arch input " +
                      shape_str(arch_.input_shape));
  }
  cache.steps.assign(arch_.layers.size(), StepCache{});

  Tensor cur = x;
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    const LayerSpec& l = arch_.layers[i];
    StepCache& sc = cache.steps[i];
    int li = static_cast<int>(i);
    bool bn_training = training && !l.frozen;
    switch (l.kind) {
      case LayerKind::dense: {
        const Tensor& w = slot_tensor(li, 0, ParamRole::weight);
        Tensor zero_bias;
        const Tensor& b = l.bias ? slot_tensor(li, 0, ParamRole::bias)
                                 : (zero_bias = Tensor::zeros({l.out}));
        cur = dense_forward(cur, w, b, sc.dense);
        break;
      }
      case LayerKind::conv2d: {
        const Tensor& w = slot_tensor(li, 0, ParamRole::weight);
        Tensor empty;
        const Tensor& b = l.bias ? slot_tensor(li, 0, ParamRole::bias) : empty;
        cur = conv2d_forward(cur, w, b, l.stride, l.padding, sc.conv);
        break;
      }
      case LayerKind::maxpool:
        cur = maxpool2d_forward(cur, l.kernel, l.stride, sc.maxp);
        break;
      case LayerKind::avgpool:
        cur = avgpool2d_forward(cur, l.kernel, l.stride, sc.avgp);
        break;
      case LayerKind::relu:
        cur = relu_forward(cur, sc.relu);
        break;
      case LayerKind::flatten:
        cur = flatten_forward(cur, sc.flat);
        break;
      case LayerKind::batchnorm:
        cur = batchnorm_forward(cur, slot_tensor(li, 0, ParamRole::bn_gamma),
                                slot_tensor(li, 0, ParamRole::bn_beta),
                                slot_tensor(li, 0, ParamRole::bn_mean),
                                slot_tensor(li, 0, ParamRole::bn_var), bn_training, kBnMomentum,
                                kBnEps, sc.bn);
        break;
      case LayerKind::residual_block: {
        Tensor empty;
        Tensor h = conv2d_forward(cur, slot_tensor(li, 0, ParamRole::weight), empty, l.stride, 1,
                                  sc.rc1);
        h = batchnorm_forward(h, slot_tensor(li, 0, ParamRole::bn_gamma),
                              slot_tensor(li, 0, ParamRole::bn_beta),
                              slot_tensor(li, 0, ParamRole::bn_mean),
                              slot_tensor(li, 0, ParamRole::bn_var), bn_training, kBnMomentum,
                              kBnEps, sc.rb1);
        h = relu_forward(h, sc.rr1);
        h = conv2d_forward(h, slot_tensor(li, 1, ParamRole::weight), empty, 1, 1, sc.rc2);
        h = batchnorm_forward(h, slot_tensor(li, 1, ParamRole::bn_gamma),
                              slot_tensor(li, 1, ParamRole::bn_beta),
                              slot_tensor(li, 1, ParamRole::bn_mean),
                              slot_tensor(li, 1, ParamRole::bn_var), bn_training, kBnMomentum,
                              kBnEps, sc.rb2);
        sc.proj_used = l.stride != 1 || l.in != l.out;
        Tensor shortcut;
        if (sc.proj_used) {
          shortcut = conv2d_forward(cur, slot_tensor(li, 2, ParamRole::weight), empty, l.stride,
                                    0, sc.rcp);
          shortcut = batchnorm_forward(shortcut, slot_tensor(li, 2, ParamRole::bn_gamma),
                                       slot_tensor(li, 2, ParamRole::bn_beta),
                                       slot_tensor(li, 2, ParamRole::bn_mean),
                                       slot_tensor(li, 2, ParamRole::bn_var), bn_training,
                                       kBnMomentum, kBnEps, sc.rbp);
        } else {
          shortcut = cur;
        }
        cur = relu_forward(residual_add(h, shortcut), sc.rrout);
        break;
      }
    }
  }
  return cur;
}

std::vector<Tensor> Model::backward(const Tensor& grad_logits, const ModelCache& cache) {
  require_shape(cache.steps.size() == arch_.layers.size(),
                "model backward: cache does not match architecture");
  std::vector<Tensor> grads(tensors_.size());
  for (std::size_t i = 0; i < tensors_.size(); ++i) grads[i] = Tensor::zeros(tensors_[i].shape);

  auto grad_of = [&](int layer, int sub, ParamRole role) -> Tensor& {
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (slots_[i].layer == layer && slots_[i].sub == sub && slots_[i].role == role) {
        return grads[i];
      }
    }
    throw shape_error("model backward: missing gradient slot");
  };

  Tensor g = grad_logits;
  for (std::size_t ri = arch_.layers.size(); ri-- > 0;) {
    const LayerSpec& l = arch_.layers[ri];
    const StepCache& sc = cache.steps[ri];
    int li = static_cast<int>(ri);
    switch (l.kind) {
      case LayerKind::dense: {
        Tensor gx, gw, gb;
        dense_backward(g, sc.dense, gx, gw, gb);
        grad_of(li, 0, ParamRole::weight) = std::move(gw);
        if (l.bias) grad_of(li, 0, ParamRole::bias) = std::move(gb);
        g = std::move(gx);
        break;
      }
      case LayerKind::conv2d: {
        Tensor gx, gw, gb;
        conv2d_backward(g, sc.conv, gx, gw, gb);
        grad_of(li, 0, ParamRole::weight) = std::move(gw);
        if (l.bias) grad_of(li, 0, ParamRole::bias) = std::move(gb);
        g = std::move(gx);
        break;
      }
      case LayerKind::maxpool:
        g = maxpool2d_backward(g, sc.maxp);
        break;
      case LayerKind::avgpool:
        g = avgpool2d_backward(g, sc.avgp);
        break;
      case LayerKind::relu:
        g = relu_backward(g, sc.relu);
        break;
      case LayerKind::flatten:
        g = flatten_backward(g, sc.flat);
        break;
      case LayerKind::batchnorm: {
        Tensor gx, gg, gb;
        batchnorm_backward(g, sc.bn, gx, gg, gb);
        grad_of(li, 0, ParamRole::bn_gamma) = std::move(gg);
        grad_of(li, 0, ParamRole::bn_beta) = std::move(gb);
        g = std::move(gx);
        break;
      }
      case LayerKind::residual_block: {
        Tensor g_sum = relu_backward(g, sc.rrout);

        Tensor g_short;
        if (sc.proj_used) {
          Tensor gx, gg, gb;
          batchnorm_backward(g_sum, sc.rbp, gx, gg, gb);
          grad_of(li, 2, ParamRole::bn_gamma) = std::move(gg);
          grad_of(li, 2, ParamRole::bn_beta) = std::move(gb);
          Tensor gw, gbias;
          conv2d_backward(gx, sc.rcp, g_short, gw, gbias);
          grad_of(li, 2, ParamRole::weight) = std::move(gw);
        } else {
          g_short = g_sum;
        }

        Tensor gx, gg, gb, gw, gbias;
        batchnorm_backward(g_sum, sc.rb2, gx, gg, gb);
        grad_of(li, 1, ParamRole::bn_gamma) = std::move(gg);
        grad_of(li, 1, ParamRole::bn_beta) = std::move(gb);
        Tensor gmain;
        conv2d_backward(gx, sc.rc2, gmain, gw, gbias);
        grad_of(li, 1, ParamRole::weight) = std::move(gw);
        gmain = relu_backward(gmain, sc.rr1);
        batchnorm_backward(gmain, sc.rb1, gx, gg, gb);
        grad_of(li, 0, ParamRole::bn_gamma) = std::move(gg);
        grad_of(li, 0, ParamRole::bn_beta) = std::move(gb);
        conv2d_backward(gx, sc.rc1, gmain, gw, gbias);
        grad_of(li, 0, ParamRole::weight) = std::move(gw);

        g = residual_add(gmain, g_short);
        break;
      }
    }
  }
  return grads;
}

std::vector<bool> Model::trainable_mask() const {
  std::vector<bool> mask(slots_.size(), true);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const PackedTensorInfo& s = slots_[i];
    if (s.role == ParamRole::bn_mean || s.role == ParamRole::bn_var) mask[i] = false;
    if (arch_.layers[static_cast<std::size_t>(s.layer)].frozen) mask[i] = false;
  }
  return mask;
}

FlatParams Model::pack() const {
  FlatParams flat;
  flat.arch_name = arch_.name;
  flat.values.resize(static_cast<std::size_t>(flat_param_count(arch_)));
  for (const PackedTensorInfo& p : flat_layout(arch_)) {
    const Tensor& t = slot_tensor(p.layer, p.sub, p.role);
    std::copy(t.data.begin(), t.data.end(),
              flat.values.begin() + static_cast<std::ptrdiff_t>(p.offset));
  }
  return flat;
}

void Model::unpack(const FlatParams& flat) {
  if (flat.arch_name != arch_.name) {
    throw shape_error("unpack: flat params for arch '" + flat.arch_name +
                      "' applied to model '" + arch_.name + "'");
  }
  std::int64_t want = flat_param_count(arch_);
  if (flat.size() != want) {
    throw shape_error("unpack: " + std::to_string(flat.size()) + " values for arch '" +
                      arch_.name + "' expecting " + std::to_string(want));
  }
  for (const PackedTensorInfo& p : flat_layout(arch_)) {
    Tensor& t = slot_tensor(p.layer, p.sub, p.role);
    std::copy(flat.values.begin() + static_cast<std::ptrdiff_t>(p.offset),
              flat.values.begin() + static_cast<std::ptrdiff_t>(p.offset + Tensor::numel_of(p.shape)),
              t.data.begin());
  }
}

double train_step_ce(Model& model, const Tensor& x, const std::vector<std::int64_t>& labels,
                     SgdState& opt) {
  ModelCache cache;
  Tensor logits = model.forward(x, true, cache);
  Tensor grad_logits;
  double loss = softmax_cross_entropy(logits, labels, grad_logits);
  std::vector<Tensor> grads = model.backward(grad_logits, cache);
  std::vector<bool> mask = model.trainable_mask();
  opt.step(model.tensors(), grads, &mask);
  return loss;
}

double train_step_kd(Model& model, const Tensor& x, const std::vector<std::int64_t>& labels,
                     const Tensor& teacher_logits, double lambda, double temperature,
                     SgdState& opt) {
  ModelCache cache;
  Tensor logits = model.forward(x, true, cache);
  Tensor grad_ce;
  double ce = softmax_cross_entropy(logits, labels, grad_ce);
  Tensor grad_kd;
  double kd = kd_loss(logits, teacher_logits, temperature, grad_kd);
  Tensor grad_logits = Tensor::zeros(logits.shape);
  for (std::size_t i = 0; i < grad_logits.data.size(); ++i) {
    grad_logits.data[i] = lambda * grad_ce.data[i] + (1.0 - lambda) * grad_kd.data[i];
  }
  std::vector<Tensor> grads = model.backward(grad_logits, cache);
  std::vector<bool> mask = model.trainable_mask();
  opt.step(model.tensors(), grads, &mask);
  return lambda * ce + (1.0 - lambda) * kd;
}

EvalResult evaluate_model(Model& model, const Tensor& x, const std::vector<std::int64_t>& labels,
                          std::int64_t batch_size) {
  require_shape(x.ndim() >= 2, "evaluate: input needs a batch dimension");
  std::int64_t n = x.dim(0);
  require_shape(static_cast<std::int64_t>(labels.size()) == n,
                "evaluate: label count != sample count");
  require_shape(batch_size >= 1, "evaluate: batch_size must be positive");

  std::int64_t per_sample = n > 0 ? x.numel() / n : 0;
  EvalResult res;
  double loss_sum = 0.0;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    std::int64_t count = std::min(batch_size, n - start);
    std::vector<std::int64_t> bshape = x.shape;
    bshape[0] = count;
    Tensor xb{bshape, std::vector<double>(
                          x.data.begin() + static_cast<std::ptrdiff_t>(start * per_sample),
                          x.data.begin() + static_cast<std::ptrdiff_t>((start + count) * per_sample))};
    std::vector<std::int64_t> yb(labels.begin() + static_cast<std::ptrdiff_t>(start),
                                 labels.begin() + static_cast<std::ptrdiff_t>(start + count));
    ModelCache cache;
    Tensor logits = model.forward(xb, false, cache);
    Tensor grad;
    loss_sum += softmax_cross_entropy(logits, yb, grad) * static_cast<double>(count);
    std::int64_t classes = logits.dim(1);
    for (std::int64_t r = 0; r < count; ++r) {
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < classes; ++j) {
        if (logits.at(r, j) > logits.at(r, best)) best = j;
      }
      if (best == yb[static_cast<std::size_t>(r)]) ++res.correct;
    }
  }
  res.total = n;
  res.loss = n > 0 ? loss_sum / static_cast<double>(n) : 0.0;
  res.accuracy = n > 0 ? static_cast<double>(res.correct) / static_cast<double>(n) : 0.0;
  return res;
}

}  // namespace hnfl
