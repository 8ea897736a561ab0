#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hnfl/arch.hpp"

namespace hnfl {

/// Names accepted by make_arch. Full-size CIFAR architectures take a 3x32x32
/// input; the tiny_* companions take 3x8x8 (or a flat 64-vector for
/// tiny_mlp) and exist for fast tests and desk-scale runs.
std::vector<std::string> zoo_names();

/// Builds a validated architecture by name with the given class count.
/// Throws config_error for unknown names.
ArchitectureSpec make_arch(const std::string& name, std::int64_t classes);

/// The VGG8 first linear layer's output width is configurable. The default
/// 108 matches the 108x64 layer that follows; any other value fails shape
/// validation rather than being silently corrected.
ArchitectureSpec make_vgg8(std::int64_t classes, std::int64_t linear1_out = 108);

}  // namespace hnfl
