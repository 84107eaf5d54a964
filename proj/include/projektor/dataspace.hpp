#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace projektor {

using FeatureMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_string(const std::string& s);

/// Point on the probability simplex. Construction validates
/// p_i in [0,1] and |sum - 1| <= 1e-9.
class MixingRatio {
 public:
  static constexpr double kSumTolerance = 1e-9;

  MixingRatio() = default;
  explicit MixingRatio(std::vector<double> p);

  static MixingRatio uniform(std::size_t m);
  static MixingRatio vertex(std::size_t m, std::size_t i);
  // Clips negatives to zero and rescales to unit sum. Throws when nothing
  // positive remains.
  static MixingRatio normalized(std::vector<double> weights);

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  std::span<const double> values() const noexcept { return p_; }
  const std::vector<double>& vector() const noexcept { return p_; }

  bool operator==(const MixingRatio&) const = default;

 private:
  std::vector<double> p_;
};

/// Labeled or unlabeled point cloud. Unlabeled mode is `labels == nullopt`.
///
/// Datasets produced by `compose` also carry the index of the source each
/// row came from and the ratio that was requested; learners that read the
/// composition (the synthetic oracle) and the calibrated OT gradient use
/// these.
struct Dataset {
  FeatureMatrix features;
  std::optional<std::vector<int>> labels;
  std::string id;

  std::vector<int> source_of;
  std::optional<std::vector<double>> mixture;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(features.rows());
  }
  std::size_t dim() const noexcept {
    return static_cast<std::size_t>(features.cols());
  }
  bool labeled() const noexcept { return labels.has_value(); }
  // 1 + largest label, or 0 when unlabeled.
  int num_classes() const;

  // Throws on any violated invariant (n >= 1, label count, label >= 0).
  void validate() const;

  Dataset subset(std::span<const std::size_t> rows) const;
};

struct DataSource {
  Dataset full;
  std::size_t pilot_size = 0;
};

struct MixtureSpec {
  std::size_t budget = 0;
  MixingRatio ratio;
  std::uint64_t seed = 0;
};

struct PermutationSampling {};
struct BernoulliSampling {
  double rate = 1.0;
};
using SamplingProtocol = std::variant<PermutationSampling, BernoulliSampling>;

Dataset sample_pilot(const DataSource& source, const SamplingProtocol& protocol,
                     std::uint64_t seed);

/// Largest-remainder apportionment of budget * p_i, ties to lowest index.
std::vector<std::size_t> apportion(std::size_t budget, const MixingRatio& ratio);

/// Union of per-source uniform subsamples (without replacement) whose sizes
/// are the apportioned counts. Rows are grouped by source in source order.
///
/// Subsample seeds derive from `spec.seed` and the source id (falling back
/// to the index for anonymous sources), so permuting sources permutes the
/// drawn subsets along with them.
Dataset compose(std::span<const Dataset> sources, const MixtureSpec& spec);

Dataset corrupt_labels(const Dataset& data, double fraction, int num_classes,
                       std::uint64_t seed);

Dataset strip_labels(const Dataset& data);

Dataset concatenate(std::span<const Dataset> parts, std::string id = {});

// CSV with header `label,f0,...,f{d-1}`; `NA` marks an unlabeled row.
Dataset read_dataset_csv(std::istream& in, std::string id = {});
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_dataset_csv(const std::string& path, const Dataset& data);

}  // namespace projektor
