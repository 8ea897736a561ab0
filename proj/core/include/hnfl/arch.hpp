#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hnfl/tensor.hpp"

namespace hnfl {

enum class LayerKind {
  dense,
  conv2d,
  maxpool,
  avgpool,
  relu,
  flatten,
  residual_block,
  batchnorm,
};

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

/// One declarative layer. Geometry fields are used per kind:
///   dense:          in, out
///   conv2d:         in, out (channels), kernel, stride, padding, bias
///   maxpool/avgpool: kernel, stride
///   residual-block: in, out (channels), stride; two 3x3 convolutions with
///                   batchnorm, plus a 1x1 projection shortcut when stride
///                   or channel count changes; all convolutions bias-free
///   batchnorm:      in (channels)
///   relu/flatten:   no geometry
/// Flags: generated layers are produced by the server and enter FlatParams;
/// local-only layers stay on the client and never enter FlatParams; frozen
/// layers are served but receive no training update. Parameterless kinds
/// ignore all flags.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::int64_t in = 0;
  std::int64_t out = 0;
  std::int64_t kernel = 0;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  bool bias = true;
  bool generated = true;
  bool local_only = false;
  bool frozen = false;
};

struct ArchitectureSpec {
  std::string name;
  std::vector<std::int64_t> input_shape;  // per-sample shape, no batch dim
  std::int64_t classes = 0;
  std::vector<LayerSpec> layers;
};

bool layer_has_params(LayerKind kind);

/// Element count of one layer's parameters (weights + biases; batchnorm
/// counts gamma, beta and both running statistics).
std::int64_t layer_param_count(const LayerSpec& layer);

/// Checks flag consistency and that consecutive layer shapes compose from
/// input_shape down to [classes]. Throws shape_error with the failing layer.
void validate_arch(const ArchitectureSpec& arch);

/// Number of served parameters: sum over generated (non-local) layers.
/// Frozen layers count; local-only layers do not.
std::int64_t flat_param_count(const ArchitectureSpec& arch);

/// A model's served parameters in canonical packing order: generated layers
/// in declaration order; within a layer weight tensor first (row-major),
/// then bias; batchnorm packs gamma, beta, running_mean, running_var; a
/// residual block packs conv1, bn1, conv2, bn2, then the projection pair.
struct FlatParams {
  std::string arch_name;
  std::vector<double> values;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
};

/// Role of one packed tensor within its layer.
enum class ParamRole { weight, bias, bn_gamma, bn_beta, bn_mean, bn_var };

/// One contiguous tensor inside the canonical flat layout.
struct PackedTensorInfo {
  int layer = 0;      // index into arch.layers
  int sub = 0;        // expansion index inside a residual block, 0 otherwise
  ParamRole role = ParamRole::weight;
  std::vector<std::int64_t> shape;
  std::int64_t offset = 0;  // position of the first element in FlatParams
};

/// The canonical layout of FlatParams for an architecture: every packed
/// tensor with its shape and offset, in packing order.
std::vector<PackedTensorInfo> flat_layout(const ArchitectureSpec& arch);

/// Same enumeration but over every parameterful layer, local-only ones
/// included: the tensors a live model instance owns. Offsets index that
/// larger concatenation, not FlatParams.
std::vector<PackedTensorInfo> model_layout(const ArchitectureSpec& arch);

/// Human-readable one-line-per-tensor rendering of flat_layout, used to pin
/// the packing order in golden tests.
std::string flat_layout_text(const ArchitectureSpec& arch);

/// FNV-1a over flat_layout_text.
std::uint64_t flat_layout_hash(const ArchitectureSpec& arch);

/// Parse an architecture from its JSON description. Schema: object with
/// "name", "input" (list), "classes", "layers" (list of objects with "kind",
/// geometry keys per kind, and optional "flags" list of "generated",
/// "local-only", "frozen"). Unknown keys are rejected.
ArchitectureSpec parse_arch_json(const std::string& text);
ArchitectureSpec load_arch_file(const std::string& path);

}  // namespace hnfl
