#include "hnfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "hnfl/errors.hpp"
#include "hnfl/rng.hpp"

namespace hnfl {

namespace {

std::int64_t example_numel(const Tensor& features) {
  std::int64_t n = 1;
  for (std::size_t i = 1; i < features.shape.size(); ++i) n *= features.shape[i];
  return n;
}

/// Integer allocation proportional to weights, conserving the total exactly:
/// floors first, then the largest fractional parts get the leftovers (ties
/// to the lower index).
std::vector<std::int64_t> largest_remainder(const std::vector<double>& weights,
                                            std::int64_t total) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  std::vector<std::int64_t> counts(weights.size(), 0);
  if (total == 0) return counts;
  if (sum <= 0.0) throw config_error("allocation weights must have a positive sum");

  std::vector<double> frac(weights.size());
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double ideal = static_cast<double>(total) * (weights[i] / sum);
    counts[i] = static_cast<std::int64_t>(std::floor(ideal));
    frac[i] = ideal - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(weights.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < total; ++k) {
    counts[order[k % order.size()]] += 1;
    ++assigned;
  }
  return counts;
}

std::vector<std::vector<std::int64_t>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(ds.classes));
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
  }
  return by_class;
}

PartitionPlan finish_plan(const Dataset& ds, std::string scheme, std::uint64_t seed,
                          std::vector<std::vector<std::int64_t>> pools) {
  PartitionPlan plan;
  plan.scheme = std::move(scheme);
  plan.seed = seed;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    plan.clients.push_back(split_train_test(ds, std::move(pools[i]),
                                            mix_seed(seed, "split", static_cast<std::uint64_t>(i))));
  }
  return plan;
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw config_error("dataset '" + name + "' is empty");
  if (classes < 1) throw config_error("dataset '" + name + "' has no classes");
  if (features.shape.empty() || features.shape[0] != size()) {
    throw shape_error("dataset '" + name + "' feature count does not match label count");
  }
  for (auto l : labels) {
    if (l < 0 || l >= classes) {
      throw config_error("dataset '" + name + "' has a label outside [0, classes)");
    }
  }
}

Tensor gather_features(const Dataset& ds, const std::vector<std::int64_t>& indices) {
  std::int64_t per = example_numel(ds.features);
  std::vector<std::int64_t> shape = ds.features.shape;
  shape[0] = static_cast<std::int64_t>(indices.size());
  Tensor out = Tensor::zeros(shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::int64_t i = indices[k];
    require_shape(i >= 0 && i < ds.size(), "gather index out of range");
    std::copy(ds.features.data.begin() + i * per, ds.features.data.begin() + (i + 1) * per,
              out.data.begin() + static_cast<std::int64_t>(k) * per);
  }
  return out;
}

std::vector<std::int64_t> gather_labels(const Dataset& ds,
                                        const std::vector<std::int64_t>& indices) {
  std::vector<std::int64_t> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    require_shape(i >= 0 && i < ds.size(), "gather index out of range");
    out.push_back(ds.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

Dataset reshape_features(Dataset ds, const std::vector<std::int64_t>& example_shape) {
  std::int64_t want = 1;
  for (auto d : example_shape) want *= d;
  require_shape(want == example_numel(ds.features),
                "feature reshape changes the per-example element count");
  std::vector<std::int64_t> shape = {ds.features.shape.empty() ? 0 : ds.features.shape[0]};
  shape.insert(shape.end(), example_shape.begin(), example_shape.end());
  ds.features.shape = shape;
  return ds;
}

Dataset concat_datasets(const std::vector<Dataset>& parts, std::string name) {
  if (parts.empty()) throw config_error("nothing to concatenate");
  Dataset out;
  out.name = std::move(name);
  out.classes = parts[0].classes;
  std::vector<std::int64_t> shape = parts[0].features.shape;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require_shape(p.classes == out.classes, "class count mismatch in concatenation");
    require_shape(std::equal(shape.begin() + 1, shape.end(), p.features.shape.begin() + 1,
                             p.features.shape.end()),
                  "feature geometry mismatch in concatenation");
    total += p.size();
  }
  shape[0] = total;
  out.features = Tensor::zeros(shape);
  auto cursor = out.features.data.begin();
  for (const auto& p : parts) {
    cursor = std::copy(p.features.data.begin(), p.features.data.end(), cursor);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

PartitionPlan partition_quantity_skew(const Dataset& ds, std::int64_t n_clients,
                                      std::int64_t classes_per_client, std::uint64_t seed,
                                      bool strict_coverage) {
  ds.validate();
  if (n_clients < 1) throw config_error("client count must be positive");
  if (classes_per_client < 1 || classes_per_client > ds.classes) {
    throw config_error("classes per client must be in [1, class count]");
  }
  if (strict_coverage && n_clients * classes_per_client < ds.classes) {
    throw config_error("clients cannot cover every class: " + std::to_string(n_clients) + " x " +
                       std::to_string(classes_per_client) + " < " +
                       std::to_string(ds.classes));
  }

  std::size_t n = static_cast<std::size_t>(n_clients);
  std::size_t c_total = static_cast<std::size_t>(ds.classes);
  std::vector<std::vector<std::int64_t>> selected(n);
  std::vector<std::int64_t> selector_count(c_total, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Rng crng(mix_seed(seed, "classes", static_cast<std::uint64_t>(i)));
    std::vector<std::int64_t> perm(c_total);
    for (std::size_t c = 0; c < c_total; ++c) perm[c] = static_cast<std::int64_t>(c);
    crng.shuffle(perm);
    perm.resize(static_cast<std::size_t>(classes_per_client));
    std::sort(perm.begin(), perm.end());
    for (auto c : perm) selector_count[static_cast<std::size_t>(c)] += 1;
    selected[i] = std::move(perm);
  }

  // Classes nobody drew are swapped in round-robin for a class its new
  // holder shares with someone else, keeping every class set the same size.
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < c_total; ++c) {
    if (selector_count[c] != 0) continue;
    bool placed = false;
    for (std::size_t tried = 0; tried < n && !placed; ++tried) {
      std::size_t i = cursor % n;
      cursor += 1;
      std::int64_t donor = -1;
      std::int64_t donor_count = 1;
      for (auto cls : selected[i]) {
        std::int64_t cnt = selector_count[static_cast<std::size_t>(cls)];
        if (cnt > donor_count) {
          donor = cls;
          donor_count = cnt;
        }
      }
      if (donor < 0) continue;
      auto& set = selected[i];
      set.erase(std::find(set.begin(), set.end(), donor));
      set.insert(std::upper_bound(set.begin(), set.end(), static_cast<std::int64_t>(c)),
                 static_cast<std::int64_t>(c));
      selector_count[static_cast<std::size_t>(donor)] -= 1;
      selector_count[c] = 1;
      placed = true;
    }
  }

  auto by_class = indices_by_class(ds);
  std::vector<std::vector<std::int64_t>> pools(n);
  for (std::size_t c = 0; c < c_total; ++c) {
    if (selector_count[c] == 0) continue;
    std::vector<std::size_t> selectors;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::binary_search(selected[i].begin(), selected[i].end(),
                             static_cast<std::int64_t>(c))) {
        selectors.push_back(i);
      }
    }
    Rng arng(mix_seed(seed, "class-alloc", static_cast<std::uint64_t>(c)));
    std::vector<double> alphas;
    for (std::size_t s = 0; s < selectors.size(); ++s) alphas.push_back(arng.uniform(0.4, 0.6));
    std::vector<std::int64_t> samples = by_class[c];
    arng.shuffle(samples);
    auto counts = largest_remainder(alphas, static_cast<std::int64_t>(samples.size()));
    std::size_t pos = 0;
    for (std::size_t s = 0; s < selectors.size(); ++s) {
      auto& pool = pools[selectors[s]];
      pool.insert(pool.end(), samples.begin() + static_cast<std::int64_t>(pos),
                  samples.begin() + static_cast<std::int64_t>(pos + counts[s]));
      pos += static_cast<std::size_t>(counts[s]);
    }
  }
  return finish_plan(ds, "quantity-skew", seed, std::move(pools));
}

PartitionPlan partition_dirichlet(const Dataset& ds, std::int64_t n_clients, double beta,
                                  std::uint64_t seed) {
  ds.validate();
  if (n_clients < 1) throw config_error("client count must be positive");
  if (!(beta > 0.0)) throw config_error("concentration must be positive");

  std::size_t n = static_cast<std::size_t>(n_clients);
  auto by_class = indices_by_class(ds);
  std::vector<std::vector<std::int64_t>> pools(n);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) continue;
    Rng crng(mix_seed(seed, "dirichlet", static_cast<std::uint64_t>(c)));
    std::vector<double> shares(n);
    double sum = 0.0;
    for (auto& s : shares) {
      s = gamma_sample(crng, beta);
      sum += s;
    }
    if (sum <= 0.0) {
      // Every draw underflowed; fall back to a deterministic point mass.
      shares.assign(n, 0.0);
      shares[c % n] = 1.0;
    }
    std::vector<std::int64_t> samples = by_class[c];
    crng.shuffle(samples);
    auto counts = largest_remainder(shares, static_cast<std::int64_t>(samples.size()));
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      pools[i].insert(pools[i].end(), samples.begin() + static_cast<std::int64_t>(pos),
                      samples.begin() + static_cast<std::int64_t>(pos + counts[i]));
      pos += static_cast<std::size_t>(counts[i]);
    }
  }

  // Empty clients take one sample from whichever client is largest.
  for (std::size_t i = 0; i < n; ++i) {
    if (!pools[i].empty()) continue;
    std::size_t donor = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (pools[j].size() > pools[donor].size()) donor = j;
    }
    if (pools[donor].size() < 2) {
      throw config_error("dataset too small to give every client a sample");
    }
    pools[i].push_back(pools[donor].back());
    pools[donor].pop_back();
  }
  return finish_plan(ds, "dirichlet", seed, std::move(pools));
}

ClientIndices split_train_test(const Dataset& ds, std::vector<std::int64_t> pool,
                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<std::int64_t>> by_label(static_cast<std::size_t>(ds.classes));
  for (auto i : pool) by_label[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);

  std::int64_t total = static_cast<std::int64_t>(pool.size());
  std::int64_t train_total = std::llround(0.75 * static_cast<double>(total));
  std::vector<double> weights;
  std::vector<std::size_t> labels;
  for (std::size_t l = 0; l < by_label.size(); ++l) {
    if (by_label[l].empty()) continue;
    weights.push_back(static_cast<double>(by_label[l].size()));
    labels.push_back(l);
  }
  ClientIndices out;
  if (labels.empty()) return out;
  auto train_counts = largest_remainder(weights, train_total);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    auto& bucket = by_label[labels[k]];
    rng.shuffle(bucket);
    out.train.insert(out.train.end(), bucket.begin(), bucket.begin() + train_counts[k]);
    out.test.insert(out.test.end(), bucket.begin() + train_counts[k], bucket.end());
  }
  return out;
}

void validate_partition(const PartitionPlan& plan, const Dataset& ds) {
  std::vector<bool> seen(static_cast<std::size_t>(ds.size()), false);
  for (std::size_t i = 0; i < plan.clients.size(); ++i) {
    const auto& c = plan.clients[i];
    std::int64_t total = static_cast<std::int64_t>(c.train.size() + c.test.size());
    std::int64_t want_train = std::llround(0.75 * static_cast<double>(total));
    if (std::llabs(static_cast<std::int64_t>(c.train.size()) - want_train) > 1) {
      throw config_error("client " + std::to_string(i) + " train share is not 75% of its pool");
    }
    for (const auto* list : {&c.train, &c.test}) {
      for (auto idx : *list) {
        if (idx < 0 || idx >= ds.size()) {
          throw config_error("partition index out of range for client " + std::to_string(i));
        }
        if (seen[static_cast<std::size_t>(idx)]) {
          throw config_error("sample " + std::to_string(idx) + " appears twice in the partition");
        }
        seen[static_cast<std::size_t>(idx)] = true;
      }
    }
  }
}

void save_partition_plan(const PartitionPlan& plan, std::ostream& out) {
  out << "partition-plan v1\n";
  out << "scheme " << plan.scheme << "\n";
  out << "seed " << plan.seed << "\n";
  out << "clients " << plan.clients.size() << "\n";
  for (std::size_t i = 0; i < plan.clients.size(); ++i) {
    for (const char* part : {"train", "test"}) {
      const auto& list =
          part == std::string("train") ? plan.clients[i].train : plan.clients[i].test;
      out << "client " << i << " " << part << " " << list.size() << ":";
      for (auto idx : list) out << " " << idx;
      out << "\n";
    }
  }
  if (!out) throw io_error("failed to write partition plan");
}

PartitionPlan load_partition_plan(std::istream& in) {
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) throw io_error(std::string("partition plan missing ") + what);
    return line;
  };
  if (next_line("header") != "partition-plan v1") {
    throw io_error("not a partition plan file");
  }
  PartitionPlan plan;
  {
    std::istringstream s(next_line("scheme"));
    std::string key;
    if (!(s >> key >> plan.scheme) || key != "scheme") throw io_error("bad scheme line");
  }
  {
    std::istringstream s(next_line("seed"));
    std::string key;
    if (!(s >> key >> plan.seed) || key != "seed") throw io_error("bad seed line");
  }
  std::size_t count = 0;
  {
    std::istringstream s(next_line("client count"));
    std::string key;
    if (!(s >> key >> count) || key != "clients") throw io_error("bad clients line");
  }
  plan.clients.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (const char* part : {"train", "test"}) {
      std::istringstream s(next_line("client list"));
      std::string key, got_part;
      std::size_t id = 0, len = 0;
      char colon = 0;
      if (!(s >> key >> id >> got_part >> len >> colon) || key != "client" || id != i ||
          got_part != part || colon != ':') {
        throw io_error("bad client list line: " + line);
      }
      auto& list = part == std::string("train") ? plan.clients[i].train : plan.clients[i].test;
      list.resize(len);
      for (auto& idx : list) {
        if (!(s >> idx)) throw io_error("client list shorter than its declared length");
      }
      std::int64_t extra;
      if (s >> extra) throw io_error("client list longer than its declared length");
    }
  }
  return plan;
}

void save_partition_plan_file(const PartitionPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  save_partition_plan(plan, out);
}

PartitionPlan load_partition_plan_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path + "'");
  return load_partition_plan(in);
}

namespace {

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

Tensor load_idx_tensor(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 4) throw io_error("'" + path + "' is too short for an IDX header");
  if (bytes[0] != 0 || bytes[1] != 0) throw io_error("'" + path + "' has a malformed IDX magic");
  if (bytes[2] != 0x08) throw io_error("'" + path + "': only unsigned-byte IDX data is supported");
  std::size_t nd = bytes[3];
  if (nd == 0 || bytes.size() < 4 + 4 * nd) {
    throw io_error("'" + path + "' has a malformed IDX dimension header");
  }
  std::vector<std::int64_t> shape(nd);
  std::int64_t count = 1;
  for (std::size_t i = 0; i < nd; ++i) {
    std::size_t o = 4 + 4 * i;
    std::int64_t dim = (std::int64_t{bytes[o]} << 24) | (std::int64_t{bytes[o + 1]} << 16) |
                       (std::int64_t{bytes[o + 2]} << 8) | std::int64_t{bytes[o + 3]};
    shape[i] = dim;
    count *= dim;
  }
  if (count == 0) throw io_error("'" + path + "' declares zero items");
  if (bytes.size() != 4 + 4 * nd + static_cast<std::size_t>(count)) {
    throw io_error("'" + path + "' length does not match its IDX header");
  }
  Tensor t = Tensor::zeros(shape);
  for (std::int64_t i = 0; i < count; ++i) {
    t.data[static_cast<std::size_t>(i)] =
        static_cast<double>(bytes[4 + 4 * nd + static_cast<std::size_t>(i)]);
  }
  return t;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::string name, std::int64_t classes) {
  Tensor images = load_idx_tensor(images_path);
  Tensor raw_labels = load_idx_tensor(labels_path);
  if (raw_labels.shape.size() != 1) {
    throw io_error("'" + labels_path + "' is not a one-dimensional label file");
  }
  if (images.shape.empty() || images.shape[0] != raw_labels.shape[0]) {
    throw io_error("image and label counts disagree between '" + images_path + "' and '" +
                   labels_path + "'");
  }
  Dataset ds;
  ds.name = std::move(name);
  for (auto& v : images.data) v /= 255.0;
  ds.features = std::move(images);
  std::int64_t max_label = 0;
  for (double v : raw_labels.data) {
    ds.labels.push_back(static_cast<std::int64_t>(v));
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.classes = classes > 0 ? classes : max_label + 1;
  ds.validate();
  return ds;
}

Dataset load_cifar_binary(const std::string& path, bool fine_labels) {
  auto bytes = read_file_bytes(path);
  std::size_t row = fine_labels ? 3074 : 3073;
  if (bytes.empty() || bytes.size() % row != 0) {
    throw io_error("'" + path + "' is not a whole number of " + std::to_string(row) +
                   "-byte records");
  }
  std::size_t n = bytes.size() / row;
  Dataset ds;
  ds.name = fine_labels ? "cifar100" : "cifar10";
  ds.classes = fine_labels ? 100 : 10;
  ds.features = Tensor::zeros({static_cast<std::int64_t>(n), 3, 32, 32});
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * row;
    ds.labels.push_back(static_cast<std::int64_t>(fine_labels ? rec[1] : rec[0]));
    const unsigned char* pixels = rec + (fine_labels ? 2 : 1);
    for (std::size_t p = 0; p < 3072; ++p) {
      ds.features.data[i * 3072 + p] = static_cast<double>(pixels[p]) / 255.0;
    }
  }
  ds.validate();
  return ds;
}

Dataset synth_blobs(std::int64_t classes, std::int64_t per_class, std::int64_t dim,
                    double spread, std::uint64_t seed) {
  if (classes < 1 || per_class < 1 || dim < 1) {
    throw config_error("blob dataset needs positive classes, per-class count, and dimension");
  }
  if (spread < 0.0) throw config_error("blob spread must be non-negative");

  Rng mrng(mix_seed(seed, "blob-means"));
  std::vector<std::vector<double>> means(static_cast<std::size_t>(classes));
  for (auto& mean : means) {
    mean.resize(static_cast<std::size_t>(dim));
    double norm = 0.0;
    for (auto& v : mean) {
      v = mrng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      mean.assign(static_cast<std::size_t>(dim), 0.0);
      mean[0] = 1.0;
    } else {
      for (auto& v : mean) v /= norm;
    }
  }

  Dataset ds;
  ds.name = "synth_blobs";
  ds.classes = classes;
  ds.features = Tensor::zeros({classes * per_class, dim});
  for (std::int64_t c = 0; c < classes; ++c) {
    Rng crng(mix_seed(seed, "blob-class", static_cast<std::uint64_t>(c)));
    for (std::int64_t k = 0; k < per_class; ++k) {
      std::int64_t idx = c * per_class + k;
      ds.labels.push_back(c);
      for (std::int64_t j = 0; j < dim; ++j) {
        ds.features.at(idx, j) = means[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] +
                                 crng.normal(0.0, spread);
      }
    }
  }
  ds.validate();
  return ds;
}

double gamma_sample(Rng& rng, double shape) {
  if (!(shape > 0.0)) throw config_error("gamma shape must be positive");
  if (shape < 1.0) {
    double u = rng.uniform();
    if (u < 1e-300) u = 1e-300;
    return gamma_sample(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze; expected iterations per draw is close to one.
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u < 1e-300) u = 1e-300;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace hnfl
