#include "hnfl/arch.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hnfl/errors.hpp"

namespace hnfl {

namespace {

const char* role_name(ParamRole role) {
  switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::bn_gamma: return "gamma";
    case ParamRole::bn_beta: return "beta";
    case ParamRole::bn_mean: return "running_mean";
    case ParamRole::bn_var: return "running_var";
  }
  return "?";
}

bool resblock_has_projection(const LayerSpec& layer) {
  return layer.stride != 1 || layer.in != layer.out;
}

std::vector<std::int64_t> walk_layer_shape(const ArchitectureSpec& arch, std::size_t idx,
                                           const std::vector<std::int64_t>& cur) {
  const LayerSpec& l = arch.layers[idx];
  auto fail = [&](const std::string& why) {
    throw shape_error("arch '" + arch.name + "' layer " + std::to_string(idx) + " (" +
                      layer_kind_name(l.kind) + "): " + why + "; incoming shape " +
                      shape_str(cur));
  };
  auto need_3d = [&] {
    if (cur.size() != 3) fail("expects [channels, h, w] input");
  };
  auto pooled = [&](std::int64_t size) { return (size - l.kernel) / l.stride + 1; };

  switch (l.kind) {
    case LayerKind::dense:
      if (l.in <= 0 || l.out <= 0) fail("in/out must be positive");
      if (cur.size() != 1 || cur[0] != l.in) {
        fail("expects [" + std::to_string(l.in) + "] input");
      }
      return {l.out};
    case LayerKind::conv2d: {
      need_3d();
      if (l.in <= 0 || l.out <= 0 || l.kernel <= 0 || l.stride <= 0 || l.padding < 0) {
        fail("bad geometry");
      }
      if (cur[0] != l.in) fail("expects " + std::to_string(l.in) + " channels");
      std::int64_t hp = cur[1] + 2 * l.padding, wp = cur[2] + 2 * l.padding;
      if (l.kernel > hp || l.kernel > wp) fail("kernel exceeds padded input");
      return {l.out, (hp - l.kernel) / l.stride + 1, (wp - l.kernel) / l.stride + 1};
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      need_3d();
      if (l.kernel <= 0 || l.stride <= 0) fail("bad pooling geometry");
      if (l.kernel > cur[1] || l.kernel > cur[2]) fail("window exceeds input");
      return {cur[0], pooled(cur[1]), pooled(cur[2])};
    case LayerKind::relu:
      return cur;
    case LayerKind::flatten:
      return {Tensor::numel_of(cur)};
    case LayerKind::residual_block: {
      need_3d();
      if (l.in <= 0 || l.out <= 0 || l.stride <= 0) fail("bad geometry");
      if (cur[0] != l.in) fail("expects " + std::to_string(l.in) + " channels");
      if (cur[1] < 1 || cur[2] < 1) fail("empty spatial input");
      // Both 3x3(pad 1) and the 1x1 projection map size n to (n-1)/stride+1.
      return {l.out, (cur[1] - 1) / l.stride + 1, (cur[2] - 1) / l.stride + 1};
    }
    case LayerKind::batchnorm:
      need_3d();
      if (cur[0] != l.in) fail("expects " + std::to_string(l.in) + " channels");
      return cur;
  }
  fail("unknown layer kind");
  return cur;
}

}  // namespace

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::residual_block: return "residual-block";
    case LayerKind::batchnorm: return "batchnorm";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "maxpool") return LayerKind::maxpool;
  if (name == "avgpool") return LayerKind::avgpool;
  if (name == "relu") return LayerKind::relu;
  if (name == "flatten") return LayerKind::flatten;
  if (name == "residual-block") return LayerKind::residual_block;
  if (name == "batchnorm") return LayerKind::batchnorm;
  throw config_error("unknown layer kind '" + name + "'");
}

bool layer_has_params(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense:
    case LayerKind::conv2d:
    case LayerKind::residual_block:
    case LayerKind::batchnorm:
      return true;
    default:
      return false;
  }
}

std::int64_t layer_param_count(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::dense:
      return layer.in * layer.out + (layer.bias ? layer.out : 0);
    case LayerKind::conv2d:
      return layer.out * layer.in * layer.kernel * layer.kernel + (layer.bias ? layer.out : 0);
    case LayerKind::batchnorm:
      return 4 * layer.in;
    case LayerKind::residual_block: {
      std::int64_t n = layer.out * layer.in * 9 + 4 * layer.out;   // conv1 + bn1
      n += layer.out * layer.out * 9 + 4 * layer.out;              // conv2 + bn2
      if (resblock_has_projection(layer)) {
        n += layer.out * layer.in + 4 * layer.out;                 // 1x1 proj + bn
      }
      return n;
    }
    default:
      return 0;
  }
}

void validate_arch(const ArchitectureSpec& arch) {
  if (arch.name.empty()) throw shape_error("arch has no name");
  if (arch.classes <= 0) throw shape_error("arch '" + arch.name + "': classes must be positive");
  if (arch.input_shape.empty()) {
    throw shape_error("arch '" + arch.name + "': empty input shape");
  }
  for (auto d : arch.input_shape) {
    if (d <= 0) throw shape_error("arch '" + arch.name + "': non-positive input dimension");
  }

  std::vector<std::int64_t> cur = arch.input_shape;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    if (layer_has_params(l.kind)) {
      if (l.generated == l.local_only) {
        throw shape_error("arch '" + arch.name + "' layer " + std::to_string(i) +
                          ": a parameterful layer must be exactly one of generated or local-only");
      }
    }
    cur = walk_layer_shape(arch, i, cur);
  }
  if (cur.size() != 1 || cur[0] != arch.classes) {
    throw shape_error("arch '" + arch.name + "': final shape " + shape_str(cur) +
                      " != [" + std::to_string(arch.classes) + "]");
  }
}

std::int64_t flat_param_count(const ArchitectureSpec& arch) {
  std::int64_t k = 0;
  for (const LayerSpec& l : arch.layers) {
    if (layer_has_params(l.kind) && l.generated && !l.local_only) k += layer_param_count(l);
  }
  return k;
}

namespace {

std::vector<PackedTensorInfo> enumerate_layout(const ArchitectureSpec& arch, bool packed_only) {
  std::vector<PackedTensorInfo> out;
  std::int64_t offset = 0;
  auto push = [&](int layer, int sub, ParamRole role, std::vector<std::int64_t> shape) {
    PackedTensorInfo info;
    info.layer = layer;
    info.sub = sub;
    info.role = role;
    info.shape = std::move(shape);
    info.offset = offset;
    offset += Tensor::numel_of(info.shape);
    out.push_back(std::move(info));
  };
  auto push_bn = [&](int layer, int sub, std::int64_t ch) {
    push(layer, sub, ParamRole::bn_gamma, {ch});
    push(layer, sub, ParamRole::bn_beta, {ch});
    push(layer, sub, ParamRole::bn_mean, {ch});
    push(layer, sub, ParamRole::bn_var, {ch});
  };

  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    if (!layer_has_params(l.kind)) continue;
    if (packed_only && (!l.generated || l.local_only)) continue;
    int li = static_cast<int>(i);
    switch (l.kind) {
      case LayerKind::dense:
        push(li, 0, ParamRole::weight, {l.in, l.out});
        if (l.bias) push(li, 0, ParamRole::bias, {l.out});
        break;
      case LayerKind::conv2d:
        push(li, 0, ParamRole::weight, {l.out, l.in, l.kernel, l.kernel});
        if (l.bias) push(li, 0, ParamRole::bias, {l.out});
        break;
      case LayerKind::batchnorm:
        push_bn(li, 0, l.in);
        break;
      case LayerKind::residual_block:
        push(li, 0, ParamRole::weight, {l.out, l.in, 3, 3});
        push_bn(li, 0, l.out);
        push(li, 1, ParamRole::weight, {l.out, l.out, 3, 3});
        push_bn(li, 1, l.out);
        if (resblock_has_projection(l)) {
          push(li, 2, ParamRole::weight, {l.out, l.in, 1, 1});
          push_bn(li, 2, l.out);
        }
        break;
      default:
        break;
    }
  }
  return out;
}

}  // namespace

std::vector<PackedTensorInfo> flat_layout(const ArchitectureSpec& arch) {
  return enumerate_layout(arch, true);
}

std::vector<PackedTensorInfo> model_layout(const ArchitectureSpec& arch) {
  return enumerate_layout(arch, false);
}

std::string flat_layout_text(const ArchitectureSpec& arch) {
  std::ostringstream os;
  for (const PackedTensorInfo& t : flat_layout(arch)) {
    os << t.layer << " " << layer_kind_name(arch.layers[static_cast<std::size_t>(t.layer)].kind)
       << " sub" << t.sub << " " << role_name(t.role) << " " << shape_str(t.shape) << " @"
       << t.offset << "\n";
  }
  return os.str();
}

std::uint64_t flat_layout_hash(const ArchitectureSpec& arch) {
  std::string text = flat_layout_text(arch);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || it.key() == key;
    if (!ok) throw config_error(where + ": unknown key '" + it.key() + "'");
  }
}

std::int64_t require_int(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw config_error(where + ": missing key '" + key + "'");
  if (!obj[key].is_number_integer()) throw config_error(where + ": '" + key + "' must be an integer");
  return obj[key].get<std::int64_t>();
}

std::int64_t optional_int(const json& obj, const char* key, std::int64_t fallback,
                          const std::string& where) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) throw config_error(where + ": '" + key + "' must be an integer");
  return obj[key].get<std::int64_t>();
}

LayerSpec parse_layer(const json& obj, std::size_t idx) {
  std::string where = "layer " + std::to_string(idx);
  if (!obj.is_object()) throw config_error(where + ": must be an object");
  if (!obj.contains("kind") || !obj["kind"].is_string()) {
    throw config_error(where + ": missing string key 'kind'");
  }
  LayerSpec l;
  l.kind = layer_kind_from_name(obj["kind"].get<std::string>());
  where += " (" + layer_kind_name(l.kind) + ")";

  switch (l.kind) {
    case LayerKind::dense:
      reject_unknown_keys(obj, {"kind", "in", "out", "bias", "flags"}, where);
      l.in = require_int(obj, "in", where);
      l.out = require_int(obj, "out", where);
      if (obj.contains("bias")) l.bias = obj["bias"].get<bool>();
      break;
    case LayerKind::conv2d:
      reject_unknown_keys(obj, {"kind", "in", "out", "kernel", "stride", "padding", "bias", "flags"},
                          where);
      l.in = require_int(obj, "in", where);
      l.out = require_int(obj, "out", where);
      l.kernel = require_int(obj, "kernel", where);
      l.stride = optional_int(obj, "stride", 1, where);
      l.padding = optional_int(obj, "padding", 0, where);
      if (obj.contains("bias")) l.bias = obj["bias"].get<bool>();
      break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      reject_unknown_keys(obj, {"kind", "kernel", "stride", "flags"}, where);
      l.kernel = require_int(obj, "kernel", where);
      l.stride = optional_int(obj, "stride", l.kernel, where);
      break;
    case LayerKind::residual_block:
      reject_unknown_keys(obj, {"kind", "in", "out", "stride", "flags"}, where);
      l.in = require_int(obj, "in", where);
      l.out = require_int(obj, "out", where);
      l.stride = optional_int(obj, "stride", 1, where);
      break;
    case LayerKind::batchnorm:
      reject_unknown_keys(obj, {"kind", "channels", "flags"}, where);
      l.in = require_int(obj, "channels", where);
      break;
    case LayerKind::relu:
    case LayerKind::flatten:
      reject_unknown_keys(obj, {"kind", "flags"}, where);
      break;
  }

  if (obj.contains("flags")) {
    if (!obj["flags"].is_array()) throw config_error(where + ": 'flags' must be a list");
    for (const auto& f : obj["flags"]) {
      std::string flag = f.get<std::string>();
      if (flag == "generated") {
        l.generated = true;
      } else if (flag == "local-only") {
        l.local_only = true;
        l.generated = false;
      } else if (flag == "frozen") {
        l.frozen = true;
      } else {
        throw config_error(where + ": unknown flag '" + flag + "'");
      }
    }
  }
  return l;
}

}  // namespace

ArchitectureSpec parse_arch_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("architecture file: ") + e.what());
  }
  if (!doc.is_object()) throw config_error("architecture file: top level must be an object");
  reject_unknown_keys(doc, {"name", "input", "classes", "layers"}, "architecture file");

  ArchitectureSpec arch;
  if (!doc.contains("name") || !doc["name"].is_string()) {
    throw config_error("architecture file: missing string key 'name'");
  }
  arch.name = doc["name"].get<std::string>();
  if (!doc.contains("input") || !doc["input"].is_array()) {
    throw config_error("architecture file: missing list key 'input'");
  }
  for (const auto& d : doc["input"]) arch.input_shape.push_back(d.get<std::int64_t>());
  arch.classes = require_int(doc, "classes", "architecture file");
  if (!doc.contains("layers") || !doc["layers"].is_array()) {
    throw config_error("architecture file: missing list key 'layers'");
  }
  for (std::size_t i = 0; i < doc["layers"].size(); ++i) {
    arch.layers.push_back(parse_layer(doc["layers"][i], i));
  }
  validate_arch(arch);
  return arch;
}

ArchitectureSpec load_arch_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open architecture file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_arch_json(buf.str());
}

}  // namespace hnfl
