#include "hnfl/zoo.hpp"

#include "hnfl/errors.hpp"

namespace hnfl {

namespace {

LayerSpec dense(std::int64_t in, std::int64_t out) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in = in;
  l.out = out;
  return l;
}

LayerSpec conv(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
               std::int64_t padding, bool bias = true) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.in = in;
  l.out = out;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.bias = bias;
  return l;
}

LayerSpec pool(LayerKind kind, std::int64_t kernel) {
  LayerSpec l;
  l.kind = kind;
  l.kernel = kernel;
  l.stride = kernel;
  return l;
}

LayerSpec relu() {
  LayerSpec l;
  l.kind = LayerKind::relu;
  return l;
}

LayerSpec flatten() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  return l;
}

LayerSpec batchnorm(std::int64_t channels) {
  LayerSpec l;
  l.kind = LayerKind::batchnorm;
  l.in = channels;
  return l;
}

LayerSpec resblock(std::int64_t in, std::int64_t out, std::int64_t stride) {
  LayerSpec l;
  l.kind = LayerKind::residual_block;
  l.in = in;
  l.out = out;
  l.stride = stride;
  return l;
}

ArchitectureSpec finish(ArchitectureSpec arch) {
  validate_arch(arch);
  return arch;
}

ArchitectureSpec make_lenet(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "lenet";
  a.input_shape = {3, 32, 32};
  a.classes = classes;
  a.layers = {conv(3, 16, 3, 1, 1), relu(), pool(LayerKind::maxpool, 2),
              conv(16, 32, 3, 1, 1), relu(), pool(LayerKind::maxpool, 2),
              flatten(),
              dense(2048, 108), relu(),
              dense(108, 64), relu(),
              dense(64, classes)};
  return finish(a);
}

ArchitectureSpec make_mlp(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "mlp";
  a.input_shape = {3, 32, 32};
  a.classes = classes;
  a.layers = {flatten(), dense(3072, 128), relu(), dense(128, 64), relu(), dense(64, classes)};
  return finish(a);
}

/// Shared residual trunk: stem, three block groups, pooled head.
ArchitectureSpec make_resnet(const std::string& name, std::int64_t classes, int blocks2,
                             int blocks3, int blocks4) {
  ArchitectureSpec a;
  a.name = name;
  a.input_shape = {3, 32, 32};
  a.classes = classes;
  a.layers = {conv(3, 16, 3, 1, 1, false), batchnorm(16), relu()};
  for (int i = 0; i < blocks2; ++i) a.layers.push_back(resblock(16, 16, 1));
  a.layers.push_back(resblock(16, 32, 2));
  for (int i = 1; i < blocks3; ++i) a.layers.push_back(resblock(32, 32, 1));
  a.layers.push_back(resblock(32, 64, 2));
  for (int i = 1; i < blocks4; ++i) a.layers.push_back(resblock(64, 64, 1));
  a.layers.push_back(pool(LayerKind::avgpool, 8));
  a.layers.push_back(flatten());
  a.layers.push_back(dense(64, classes));
  return finish(a);
}

ArchitectureSpec make_tiny_mlp(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "tiny_mlp";
  a.input_shape = {64};
  a.classes = classes;
  a.layers = {dense(64, 16), relu(), dense(16, classes)};
  return finish(a);
}

ArchitectureSpec make_tiny_cnn(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "tiny_cnn";
  a.input_shape = {3, 8, 8};
  a.classes = classes;
  a.layers = {conv(3, 8, 3, 1, 1), relu(), pool(LayerKind::maxpool, 2), flatten(),
              dense(128, classes)};
  return finish(a);
}

ArchitectureSpec make_tiny_lenet(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "tiny_lenet";
  a.input_shape = {3, 8, 8};
  a.classes = classes;
  a.layers = {conv(3, 4, 3, 1, 1), relu(), pool(LayerKind::maxpool, 2),
              conv(4, 8, 3, 1, 1), relu(), pool(LayerKind::maxpool, 2),
              flatten(),
              dense(32, 16), relu(),
              dense(16, classes)};
  return finish(a);
}

ArchitectureSpec make_tiny_vgg(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "tiny_vgg";
  a.input_shape = {3, 8, 8};
  a.classes = classes;
  a.layers = {conv(3, 4, 3, 1, 1), relu(), conv(4, 4, 3, 1, 1), relu(),
              pool(LayerKind::maxpool, 2),
              conv(4, 8, 3, 1, 1), relu(), pool(LayerKind::maxpool, 2),
              flatten(),
              dense(32, 16), relu(),
              dense(16, classes)};
  return finish(a);
}

ArchitectureSpec make_tiny_resnet(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "tiny_resnet";
  a.input_shape = {3, 8, 8};
  a.classes = classes;
  a.layers = {conv(3, 4, 3, 1, 1, false), batchnorm(4), relu(),
              resblock(4, 4, 1),
              resblock(4, 8, 2),
              pool(LayerKind::avgpool, 4),
              flatten(),
              dense(8, classes)};
  return finish(a);
}

ArchitectureSpec make_tiny_mlp_deep(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "tiny_mlp_deep";
  a.input_shape = {3, 8, 8};
  a.classes = classes;
  a.layers = {flatten(), dense(192, 64), relu(), dense(64, 16), relu(), dense(16, classes)};
  return finish(a);
}

ArchitectureSpec make_tiny_mlp192(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "tiny_mlp192";
  a.input_shape = {3, 8, 8};
  a.classes = classes;
  a.layers = {flatten(), dense(192, 16), relu(), dense(16, classes)};
  return finish(a);
}

}  // namespace

ArchitectureSpec make_vgg8(std::int64_t classes, std::int64_t linear1_out) {
  ArchitectureSpec a;
  a.name = "vgg8";
  a.input_shape = {3, 32, 32};
  a.classes = classes;
  a.layers = {conv(3, 16, 3, 1, 1), relu(), conv(16, 16, 3, 1, 1), relu(),
              pool(LayerKind::maxpool, 2),
              conv(16, 32, 3, 1, 1), relu(), conv(32, 32, 3, 1, 1), relu(),
              pool(LayerKind::maxpool, 2),
              conv(32, 64, 3, 1, 1), relu(), conv(64, 64, 3, 1, 1), relu(),
              pool(LayerKind::maxpool, 2),
              flatten(),
              dense(1024, linear1_out), relu(),
              dense(108, 64), relu(),
              dense(64, classes)};
  return finish(a);
}

std::vector<std::string> zoo_names() {
  return {"lenet",      "mlp",        "vgg8",          "resnet10",    "resnet12",
          "resnet18",   "tiny_mlp",   "tiny_cnn",      "tiny_lenet",  "tiny_vgg",
          "tiny_resnet", "tiny_mlp_deep", "tiny_mlp192"};
}

ArchitectureSpec make_arch(const std::string& name, std::int64_t classes) {
  if (name == "lenet") return make_lenet(classes);
  if (name == "mlp") return make_mlp(classes);
  if (name == "vgg8") return make_vgg8(classes);
  if (name == "resnet10") return make_resnet("resnet10", classes, 3, 3, 4);
  if (name == "resnet12") return make_resnet("resnet12", classes, 1, 5, 6);
  if (name == "resnet18") return make_resnet("resnet18", classes, 6, 6, 6);
  if (name == "tiny_mlp") return make_tiny_mlp(classes);
  if (name == "tiny_cnn") return make_tiny_cnn(classes);
  if (name == "tiny_lenet") return make_tiny_lenet(classes);
  if (name == "tiny_vgg") return make_tiny_vgg(classes);
  if (name == "tiny_resnet") return make_tiny_resnet(classes);
  if (name == "tiny_mlp_deep") return make_tiny_mlp_deep(classes);
  if (name == "tiny_mlp192") return make_tiny_mlp192(classes);
  std::string known;
  for (const std::string& n : zoo_names()) known += (known.empty() ? "" : ", ") + n;
  throw config_error("unknown architecture '" + name + "'; available: " + known);
}

}  // namespace hnfl
