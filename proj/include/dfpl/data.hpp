#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "dfpl/types.hpp"

namespace dfpl {

/// Samples (rows of `features`, scaled into [0, 1]) with their class labels.
struct LabeledSet {
  TensorXd features;
  std::vector<ClassId> labels;
  std::size_t num_classes = 0;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] Eigen::Index input_dim() const { return features.cols(); }
  [[nodiscard]] bool empty() const { return labels.empty(); }

  /// Rows `indices` of this set, in the given order.
  [[nodiscard]] LabeledSet subset(std::span<const std::size_t> indices) const;

  /// Number of samples per class, length num_classes.
  [[nodiscard]] std::vector<std::size_t> class_histogram() const;

  /// Throws InvalidArgument when labels or features break the invariants.
  void validate() const;
};

class LoadError : public Error {
 public:
  enum class Kind { kNotFound, kBadMagic, kTruncated, kCountMismatch };
  LoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image/label pair (big-endian headers, unsigned byte payload).
/// Pixels are scaled by 1/255; the class universe is max(label) + 1.
LabeledSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Gaussian blobs, one centre per class on a sphere around 0.5, clamped to [0, 1].
LabeledSet synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread,
                       std::uint64_t seed);

struct PartitionSpec {
  std::size_t clients = 1;
  double avg = 1.0;
  double std = 0.0;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  int max_retries = 1000;

  void validate(std::size_t num_classes) const;
};

struct ClientShard {
  LabeledSet train;
  LabeledSet test;
  /// Rows of the parent set that landed in each shard.
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  /// Classes assigned to this client, ascending.
  std::vector<ClassId> classes;
};

struct Partition {
  std::vector<ClientShard> shards;
  /// Number of redraws needed to reach full class coverage.
  int attempts = 0;
};

/// Class-space non-IID split. Client k draws
/// n_k = clamp(round(N(avg, std)), 1, |I|) distinct classes uniformly; class
/// sets are redrawn until every class present in `data` has an owner. Each
/// class's samples are shuffled and split evenly among its owners (remainder
/// to the lowest client ids); each client-class chunk is then split
/// train/test by `train_fraction`.
Partition partition_non_iid(const LabeledSet& data, const PartitionSpec& spec);

/// K x |I| matrix of training-sample counts.
Eigen::MatrixXi distribution_heatmap(std::span<const ClientShard> shards, std::size_t num_classes);

/// CSV with header "client,0,1,...": one row per client.
void write_heatmap_csv(std::ostream& out, const Eigen::MatrixXi& heatmap);

}  // namespace dfpl
