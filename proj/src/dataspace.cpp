#include "projektor/dataspace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "projektor/errors.hpp"

namespace projektor {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// MixingRatio

MixingRatio::MixingRatio(std::vector<double> p) : p_(std::move(p)) {
  if (p_.empty()) throw DimensionError("mixing ratio must have at least one entry");
  double sum = 0.0;
  for (double v : p_) {
    if (!(v >= 0.0 && v <= 1.0))
      throw DimensionError("mixing ratio entries must lie in [0,1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSumTolerance)
    throw DimensionError("mixing ratio must sum to 1");
}

MixingRatio MixingRatio::uniform(std::size_t m) {
  return MixingRatio(std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

MixingRatio MixingRatio::vertex(std::size_t m, std::size_t i) {
  std::vector<double> p(m, 0.0);
  p.at(i) = 1.0;
  return MixingRatio(std::move(p));
}

MixingRatio MixingRatio::normalized(std::vector<double> w) {
  double sum = 0.0;
  for (double& v : w) {
    if (!(v > 0.0)) v = 0.0;
    sum += v;
  }
  if (!(sum > 0.0)) throw DimensionError("cannot normalize a nonpositive weight vector");
  for (double& v : w) v /= sum;
  // Absorb rounding so the sum check is met even for long vectors.
  double residual = 1.0 - std::accumulate(w.begin(), w.end(), 0.0);
  auto largest = std::max_element(w.begin(), w.end());
  *largest = std::clamp(*largest + residual, 0.0, 1.0);
  return MixingRatio(std::move(w));
}

// ---------------------------------------------------------------------------
// Dataset

int Dataset::num_classes() const {
  if (!labels || labels->empty()) return 0;
  return *std::max_element(labels->begin(), labels->end()) + 1;
}

void Dataset::validate() const {
  if (features.rows() < 1) throw SizeError("dataset '" + id + "' is empty");
  if (labels) {
    if (labels->size() != size())
      throw DimensionError("dataset '" + id + "': label count does not match rows");
    for (int y : *labels)
      if (y < 0) throw DimensionError("dataset '" + id + "': negative label");
  }
  if (!source_of.empty() && source_of.size() != size())
    throw DimensionError("dataset '" + id + "': source map does not match rows");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.id = id;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  if (labels) out.labels.emplace();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) =
        features.row(static_cast<Eigen::Index>(rows[r]));
    if (labels) out.labels->push_back((*labels)[rows[r]]);
    if (!source_of.empty()) out.source_of.push_back(source_of[rows[r]]);
  }
  return out;
}

Dataset concatenate(std::span<const Dataset> parts, std::string id) {
  Dataset out;
  out.id = std::move(id);
  Eigen::Index rows = 0;
  Eigen::Index dim = -1;
  bool labeled = !parts.empty();
  for (const auto& p : parts) {
    if (p.size() == 0) continue;
    if (dim >= 0 && p.features.cols() != dim)
      throw DimensionError("cannot concatenate datasets of different dimension");
    dim = p.features.cols();
    rows += p.features.rows();
    labeled = labeled && p.labeled();
  }
  out.features.resize(rows, std::max<Eigen::Index>(dim, 0));
  if (labeled) out.labels.emplace();
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    if (p.size() == 0) continue;
    out.features.middleRows(at, p.features.rows()) = p.features;
    at += p.features.rows();
    if (labeled) out.labels->insert(out.labels->end(), p.labels->begin(), p.labels->end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

// First k entries of a seeded uniform permutation of 0..n-1.
std::vector<std::size_t> permutation_prefix(std::size_t n, std::size_t k,
                                            std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

Dataset sample_pilot(const DataSource& source, const SamplingProtocol& protocol,
                     std::uint64_t seed) {
  const std::size_t n = source.full.size();
  std::vector<std::size_t> rows;
  if (std::holds_alternative<PermutationSampling>(protocol)) {
    if (source.pilot_size > n)
      throw SizeError("pilot size " + std::to_string(source.pilot_size) +
                      " exceeds source size " + std::to_string(n));
    rows = permutation_prefix(n, source.pilot_size, seed);
  } else {
    const double rate = std::get<BernoulliSampling>(protocol).rate;
    if (!(rate > 0.0 && rate <= 1.0))
      throw SizeError("bernoulli rate must lie in (0,1]");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(rate);
    for (std::size_t i = 0; i < n; ++i)
      if (keep(rng)) rows.push_back(i);
    if (rows.empty()) throw EmptySampleError("bernoulli sampling selected no points");
  }
  Dataset out = source.full.subset(rows);
  out.source_of.clear();
  out.mixture.reset();
  return out;
}

std::vector<std::size_t> apportion(std::size_t budget, const MixingRatio& ratio) {
  const std::size_t m = ratio.size();
  std::vector<std::size_t> counts(m);
  std::vector<double> frac(m);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < m; ++i) {
    double quota = static_cast<double>(budget) * ratio[i];
    double nearest = std::round(quota);
    // Quotas that are integers up to rounding noise carry no remainder.
    if (std::abs(quota - nearest) < 1e-9) quota = nearest;
    double fl = std::floor(quota);
    counts[i] = static_cast<std::size_t>(fl);
    frac[i] = quota - fl;
    assigned += counts[i];
  }
  // Rounding-noise snapping can overshoot by a unit; take it back from the
  // smallest fractional parts, highest index first.
  while (assigned > budget) {
    std::size_t best = m;
    for (std::size_t i = m; i-- > 0;)
      if (counts[i] > 0 && (best == m || frac[i] < frac[best])) best = i;
    --counts[best];
    --assigned;
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Remainders equal up to rounding noise count as ties (lowest index wins).
  std::vector<long long> key(m);
  for (std::size_t i = 0; i < m; ++i) key[i] = std::llround(frac[i] * 1e9);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  for (std::size_t k = 0; assigned < budget; ++k, ++assigned) ++counts[order[k % m]];
  return counts;
}

Dataset compose(std::span<const Dataset> sources, const MixtureSpec& spec) {
  const std::size_t m = sources.size();
  if (spec.ratio.size() != m)
    throw DimensionError("mixing ratio has " + std::to_string(spec.ratio.size()) +
                         " entries for " + std::to_string(m) + " sources");
  if (spec.budget == 0) throw SizeError("budget must be positive");
  const auto counts = apportion(spec.budget, spec.ratio);

  std::vector<Dataset> parts;
  parts.reserve(m);
  std::vector<int> source_of;
  for (std::size_t i = 0; i < m; ++i) {
    if (counts[i] == 0) continue;
    if (counts[i] > sources[i].size())
      throw InsufficientDataError(
          "source " + std::to_string(i) + " ('" + sources[i].id + "') holds " +
              std::to_string(sources[i].size()) + " points but " +
              std::to_string(counts[i]) + " were requested",
          i);
    const std::uint64_t tag =
        sources[i].id.empty() ? static_cast<std::uint64_t>(i) : hash_string(sources[i].id);
    auto rows = permutation_prefix(sources[i].size(), counts[i], mix_seed(spec.seed, tag));
    parts.push_back(sources[i].subset(rows));
    source_of.insert(source_of.end(), counts[i], static_cast<int>(i));
  }
  Dataset out = concatenate(parts, "compose");
  out.source_of = std::move(source_of);
  out.mixture = spec.ratio.vector();
  return out;
}

// ---------------------------------------------------------------------------
// Labels

Dataset corrupt_labels(const Dataset& data, double fraction, int num_classes,
                       std::uint64_t seed) {
  if (!data.labeled()) throw ModeError("corrupt_labels requires a labeled dataset");
  if (num_classes < 2) throw ConfigError("corrupt_labels needs at least two classes");
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ConfigError("corruption fraction must lie in [0,1]");
  Dataset out = data;
  const std::size_t n = data.size();
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  auto rows = permutation_prefix(n, k, seed);
  std::mt19937_64 rng(mix_seed(seed, 1));
  std::uniform_int_distribution<int> shift(1, num_classes - 1);
  for (std::size_t r : rows) {
    int& y = (*out.labels)[r];
    y = (y + shift(rng)) % num_classes;
  }
  return out;
}

Dataset strip_labels(const Dataset& data) {
  Dataset out = data;
  out.labels.reset();
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

}  // namespace

Dataset read_dataset_csv(std::istream& in, std::string id) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("dataset csv: missing header");
  auto header = split_csv_line(trim(line));
  if (header.empty() || trim(header[0]) != "label")
    throw ParseError("dataset csv: header must start with 'label'");
  const std::size_t d = header.size() - 1;
  for (std::size_t k = 0; k < d; ++k)
    if (trim(header[k + 1]) != "f" + std::to_string(k))
      throw ParseError("dataset csv: expected column f" + std::to_string(k));

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t na = 0, rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != d + 1)
      throw ParseError("dataset csv: ragged row at line " + std::to_string(lineno));
    const std::string lab = trim(cells[0]);
    if (lab == "NA") {
      ++na;
      labels.push_back(-1);
    } else {
      std::size_t used = 0;
      int y = 0;
      try {
        y = std::stoi(lab, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != lab.size() || y < 0)
        throw ParseError("dataset csv: bad label '" + lab + "' at line " +
                         std::to_string(lineno));
      labels.push_back(y);
    }
    for (std::size_t k = 0; k < d; ++k) {
      const std::string cell = trim(cells[k + 1]);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cell.size() || cell.empty())
        throw ParseError("dataset csv: bad feature '" + cell + "' at line " +
                         std::to_string(lineno));
      values.push_back(v);
    }
    ++rows;
  }
  if (na != 0 && na != rows)
    throw ParseError("dataset csv: mixes labeled and NA rows");

  Dataset out;
  out.id = std::move(id);
  out.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < d; ++k)
      out.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
          values[r * d + k];
  if (na == 0) out.labels = std::move(labels);
  return out;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file " + path);
  return read_dataset_csv(in, path);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "label";
  for (std::size_t k = 0; k < data.dim(); ++k) out << ",f" << k;
  out << '\n';
  out.precision(17);
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (data.labeled())
      out << (*data.labels)[r];
    else
      out << "NA";
    for (std::size_t k = 0; k < data.dim(); ++k)
      out << ',' << data.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
    out << '\n';
  }
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write dataset file " + path);
  write_dataset_csv(out, data);
}

}  // namespace projektor
