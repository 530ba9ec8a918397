#include "dfpl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <ostream>

#include <fmt/format.h>

#include "dfpl/random.hpp"

namespace dfpl {

LabeledSet LabeledSet::subset(std::span<const std::size_t> indices) const {
  LabeledSet out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(indices[r]));
    out.labels.push_back(labels[indices[r]]);
  }
  return out;
}

std::vector<std::size_t> LabeledSet::class_histogram() const {
  std::vector<std::size_t> h(num_classes, 0);
  for (auto y : labels) ++h[y];
  return h;
}

void LabeledSet::validate() const {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw InvalidArgument(fmt::format("{} labels for {} feature rows", labels.size(), features.rows()));
  for (auto y : labels)
    if (y >= num_classes) throw InvalidArgument(fmt::format("label {} outside class universe {}", y, num_classes));
  if (!features.allFinite()) throw InvalidArgument("features contain non-finite values");
}

// ---- IDX ------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::kNotFound, fmt::format("dataset not found: {}", p.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::filesystem::path& p) {
  if (b.size() < at + 4)
    throw LoadError(LoadError::Kind::kTruncated, fmt::format("truncated IDX header in {}", p.string()));
  return std::uint32_t{b[at]} << 24 | std::uint32_t{b[at + 1]} << 16 | std::uint32_t{b[at + 2]} << 8 | b[at + 3];
}

void expect_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& p) {
  if (got != want)
    throw LoadError(LoadError::Kind::kBadMagic,
                    fmt::format("bad magic 0x{:08x} in {} (expected 0x{:08x})", got, p.string(), want));
}

}  // namespace

LabeledSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);

  expect_magic(be32(img, 0, images), kIdxImagesMagic, images);
  expect_magic(be32(lab, 0, labels), kIdxLabelsMagic, labels);

  const std::size_t n_img = be32(img, 4, images);
  const std::size_t rows = be32(img, 8, images);
  const std::size_t cols = be32(img, 12, images);
  const std::size_t n_lab = be32(lab, 4, labels);
  if (n_img != n_lab)
    throw LoadError(LoadError::Kind::kCountMismatch,
                    fmt::format("count mismatch: {} images but {} labels", n_img, n_lab));

  const std::size_t dim = rows * cols;
  if (img.size() < 16 + n_img * dim)
    throw LoadError(LoadError::Kind::kTruncated, fmt::format("truncated image payload in {}", images.string()));
  if (lab.size() < 8 + n_lab)
    throw LoadError(LoadError::Kind::kTruncated, fmt::format("truncated label payload in {}", labels.string()));
  if (n_img == 0) throw LoadError(LoadError::Kind::kTruncated, "IDX files contain no samples");

  LabeledSet out;
  out.features.resize(static_cast<Eigen::Index>(n_img), static_cast<Eigen::Index>(dim));
  const std::uint8_t* px = img.data() + 16;
  for (std::size_t i = 0; i < n_img; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = px[i * dim + j] / 255.0;

  out.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(n_lab));
  out.num_classes = static_cast<std::size_t>(*std::max_element(out.labels.begin(), out.labels.end())) + 1;
  return out;
}

// ---- synthetic ------------------------------------------------------------

LabeledSet synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread,
                       std::uint64_t seed) {
  if (classes == 0 || per_class == 0 || dim == 0) throw InvalidArgument("synth_blobs counts must be positive");
  if (!(spread >= 0.0)) throw InvalidArgument("spread must be non-negative");
  Rng rng(seed);

  const auto d = static_cast<Eigen::Index>(dim);
  MatXd centres(d, static_cast<Eigen::Index>(classes));
  for (std::size_t c = 0; c < classes; ++c) {
    VecXd u(d);
    do {
      for (Eigen::Index j = 0; j < d; ++j) u[j] = rng.normal();
    } while (u.norm() == 0.0);
    centres.col(static_cast<Eigen::Index>(c)) = (0.5 + 0.25 * (u / u.norm()).array()).matrix();
  }

  LabeledSet out;
  out.num_classes = classes;
  out.features.resize(static_cast<Eigen::Index>(classes * per_class), d);
  out.labels.reserve(classes * per_class);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      for (Eigen::Index j = 0; j < d; ++j) {
        const double v = centres(j, static_cast<Eigen::Index>(c)) + spread * rng.normal();
        out.features(row, j) = std::clamp(v, 0.0, 1.0);
      }
      out.labels.push_back(static_cast<ClassId>(c));
    }
  }
  return out;
}

// ---- partitioning ---------------------------------------------------------

void PartitionSpec::validate(std::size_t num_classes) const {
  if (clients < 1) throw InvalidArgument("K must be at least 1");
  if (!(avg >= 1.0 && avg <= static_cast<double>(num_classes)))
    throw InvalidArgument(fmt::format("avg must lie in [1, {}]", num_classes));
  if (!(std >= 0.0)) throw InvalidArgument("std must be non-negative");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw InvalidArgument("train_fraction must lie in (0, 1]");
  if (max_retries < 1) throw InvalidArgument("max_retries must be positive");
}

Partition partition_non_iid(const LabeledSet& data, const PartitionSpec& spec) {
  data.validate();
  if (data.empty()) throw InvalidArgument("cannot partition an empty set");
  spec.validate(data.num_classes);

  const std::size_t n_classes = data.num_classes;
  const auto histogram = data.class_histogram();
  Rng rng(spec.seed);

  std::vector<std::vector<ClassId>> owned(spec.clients);
  int attempt = 0;
  for (;; ++attempt) {
    if (attempt >= spec.max_retries)
      throw Error(fmt::format("class coverage not reached after {} draws", spec.max_retries));
    std::vector<bool> covered(n_classes, false);
    for (auto& cls : owned) {
      const double draw = std::round(rng.normal(spec.avg, spec.std));
      const auto n_k = static_cast<std::size_t>(std::clamp(draw, 1.0, static_cast<double>(n_classes)));
      std::vector<ClassId> pool(n_classes);
      for (std::size_t c = 0; c < n_classes; ++c) pool[c] = static_cast<ClassId>(c);
      // Partial Fisher-Yates: first n_k entries are a uniform n_k-subset.
      for (std::size_t i = 0; i < n_k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.uniform_index(n_classes - i));
        std::swap(pool[i], pool[j]);
      }
      cls.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_k));
      std::sort(cls.begin(), cls.end());
      for (auto c : cls) covered[c] = true;
    }
    bool ok = true;
    for (std::size_t c = 0; c < n_classes; ++c) ok = ok && (covered[c] || histogram[c] == 0);
    if (ok) break;
  }

  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t r = 0; r < data.size(); ++r) by_class[data.labels[r]].push_back(r);

  Partition out;
  out.attempts = attempt + 1;
  out.shards.resize(spec.clients);
  for (std::size_t k = 0; k < spec.clients; ++k) out.shards[k].classes = owned[k];

  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> owners;
    for (std::size_t k = 0; k < spec.clients; ++k)
      if (std::binary_search(owned[k].begin(), owned[k].end(), static_cast<ClassId>(c))) owners.push_back(k);
    if (owners.empty()) continue;

    auto& rows = by_class[c];
    rng.shuffle(rows);
    const std::size_t base = rows.size() / owners.size();
    const std::size_t extra = rows.size() % owners.size();
    std::size_t pos = 0;
    for (std::size_t o = 0; o < owners.size(); ++o) {
      const std::size_t take = base + (o < extra ? 1 : 0);
      const auto n_train = static_cast<std::size_t>(std::round(spec.train_fraction * static_cast<double>(take)));
      auto& shard = out.shards[owners[o]];
      shard.train_rows.insert(shard.train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(pos),
                              rows.begin() + static_cast<std::ptrdiff_t>(pos + n_train));
      shard.test_rows.insert(shard.test_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(pos + n_train),
                             rows.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
    }
  }

  for (std::size_t k = 0; k < spec.clients; ++k) {
    auto& shard = out.shards[k];
    if (shard.train_rows.empty())
      throw Error(fmt::format("client {} received no training samples; the data set is too small for K={}", k,
                              spec.clients));
    rng.shuffle(shard.train_rows);
    rng.shuffle(shard.test_rows);
    shard.train = data.subset(shard.train_rows);
    shard.test = data.subset(shard.test_rows);
  }
  return out;
}

Eigen::MatrixXi distribution_heatmap(std::span<const ClientShard> shards, std::size_t num_classes) {
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(shards.size()),
                                            static_cast<Eigen::Index>(num_classes));
  for (std::size_t k = 0; k < shards.size(); ++k)
    for (auto y : shards[k].train.labels) {
      if (y >= num_classes) throw InvalidArgument("label outside heatmap class range");
      ++m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(y));
    }
  return m;
}

void write_heatmap_csv(std::ostream& out, const Eigen::MatrixXi& heatmap) {
  out << "client";
  for (Eigen::Index c = 0; c < heatmap.cols(); ++c) out << ',' << c;
  out << '\n';
  for (Eigen::Index k = 0; k < heatmap.rows(); ++k) {
    out << k;
    for (Eigen::Index c = 0; c < heatmap.cols(); ++c) out << ',' << heatmap(k, c);
    out << '\n';
  }
}

}  // namespace dfpl
