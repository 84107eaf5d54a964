#include "projektor/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "projektor/errors.hpp"

namespace projektor {

namespace {

int class_count(const Dataset& train, const Dataset& val) {
  return std::max(train.num_classes(), val.num_classes());
}

double accuracy_of(const Eigen::VectorXi& predicted, const std::vector<int>& truth) {
  long hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    hits += predicted[static_cast<Eigen::Index>(i)] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

EvalResult nearest_centroid(const Dataset& train, const Dataset& val) {
  const int k = class_count(train, val);
  const auto d = static_cast<Eigen::Index>(train.dim());
  Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(k, d);
  std::vector<long> count(static_cast<std::size_t>(k), 0);
  const auto& y = *train.labels;
  for (std::size_t i = 0; i < train.size(); ++i) {
    centroid.row(y[i]) += train.features.row(static_cast<Eigen::Index>(i));
    ++count[static_cast<std::size_t>(y[i])];
  }
  Eigen::VectorXi predicted(static_cast<Eigen::Index>(val.size()));
  for (Eigen::Index r = 0; r < predicted.size(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (int c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] == 0) continue;  // absent class never predicted
      const double dist =
          (val.features.row(r) - centroid.row(c) / static_cast<double>(count[static_cast<std::size_t>(c)]))
              .squaredNorm();
      if (dist < best) {
        best = dist;
        arg = c;
      }
    }
    predicted[r] = arg;
  }
  EvalResult res;
  res.accuracy = accuracy_of(predicted, *val.labels);
  res.raw = res.accuracy;
  return res;
}

EvalResult logistic(const LogisticRegression& cfg, std::uint64_t seed, const Dataset& train,
                    const Dataset& val) {
  const int k = class_count(train, val);
  const auto n = static_cast<Eigen::Index>(train.size());
  const auto d = static_cast<Eigen::Index>(train.dim());
  // Augment with a bias column.
  Eigen::MatrixXd x(n, d + 1);
  x.leftCols(d) = train.features;
  x.col(d).setOnes();
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, (*train.labels)[static_cast<std::size_t>(i)]) = 1.0;

  // Small seeded initialization keeps runs distinct per seed yet reproducible.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> init(0.0, 1e-3);
  Eigen::MatrixXd w(d + 1, k);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = init(rng);

  EvalResult res;
  auto softmax_loss = [&](const Eigen::MatrixXd& weights, Eigen::MatrixXd* prob) {
    Eigen::MatrixXd z = x * weights;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = z.row(i).maxCoeff();
      z.row(i).array() -= mx;
      const double lse = std::log(z.row(i).array().exp().sum());
      loss -= (z.row(i).array() * onehot.row(i).array()).sum() - lse;
      if (prob) z.row(i) = (z.row(i).array() - lse).exp().matrix();
    }
    if (prob) *prob = std::move(z);
    return loss / static_cast<double>(n) + 0.5 * cfg.l2 * weights.squaredNorm();
  };
  Eigen::MatrixXd prob;
  for (int e = 0; e < cfg.epochs; ++e) {
    res.loss_trace.push_back(softmax_loss(w, &prob));
    const Eigen::MatrixXd grad = x.transpose() * (prob - onehot) / static_cast<double>(n) + cfg.l2 * w;
    w -= cfg.lr * grad;
  }

  Eigen::MatrixXd xv(static_cast<Eigen::Index>(val.size()), d + 1);
  xv.leftCols(d) = val.features;
  xv.col(d).setOnes();
  const Eigen::MatrixXd scores = xv * w;
  Eigen::VectorXi predicted(scores.rows());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) scores.row(r).maxCoeff(&predicted[r]);
  res.accuracy = accuracy_of(predicted, *val.labels);
  res.raw = res.accuracy;
  return res;
}

}  // namespace

double SyntheticLogLinear::raw(std::span<const double> p, double n) const {
  if (p.size() != alpha_coeffs.size() || p.size() != c_coeffs.size())
    throw DimensionError("synthetic oracle coefficients do not match the ratio length");
  double alpha = 0.0, c = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    alpha += alpha_coeffs[i] * p[i];
    c += c_coeffs[i] * p[i];
    spread += p[i] * (1.0 - p[i]);
  }
  return -alpha * std::log(n) + c + quad_weight * spread;
}

void LearnerSpec::validate() const {
  if (const auto* lr = std::get_if<LogisticRegression>(&kind)) {
    if (!(lr->lr > 0.0)) throw ConfigError("logistic learning rate must be positive");
    if (lr->epochs < 1) throw ConfigError("logistic epochs must be at least 1");
  }
  if (const auto* s = std::get_if<SyntheticLogLinear>(&kind)) {
    if (s->alpha_coeffs.size() != s->c_coeffs.size())
      throw ConfigError("synthetic oracle alpha and c lengths differ");
  }
}

EvalResult train_eval(const LearnerSpec& spec, const Dataset& train, const Dataset& val) {
  spec.validate();
  if (train.size() == 0) throw EmptySampleError("empty training set");
  EvalResult res;
  if (const auto* s = std::get_if<SyntheticLogLinear>(&spec.kind)) {
    if (!train.mixture) throw ModeError("synthetic oracle needs composition metadata");
    res.raw = s->raw(*train.mixture, static_cast<double>(train.size()));
    res.accuracy = std::clamp(res.raw, 0.0, 1.0);
  } else {
    if (!train.labeled() || !val.labeled())
      throw ModeError("training and validation sets must be labeled");
    if (val.size() == 0) throw EmptySampleError("empty validation set");
    if (train.dim() != val.dim()) throw DimensionError("train and val feature dims differ");
    if (std::holds_alternative<NearestCentroid>(spec.kind))
      res = nearest_centroid(train, val);
    else
      res = logistic(std::get<LogisticRegression>(spec.kind), spec.seed, train, val);
  }
  res.n_train = static_cast<long>(train.size());
  if (train.mixture) res.ratio = *train.mixture;
  return res;
}

double replicate_accuracy(const LearnerSpec& spec, const TrainComposer& compose_train,
                          const Dataset& val, int reps) {
  if (reps < 1) throw ConfigError("replicate count must be at least 1");
  // Running mean: identical replicates reproduce their value bit for bit.
  double mean = 0.0;
  for (int r = 0; r < reps; ++r) {
    LearnerSpec child = spec;
    child.seed = mix_seed(spec.seed, static_cast<std::uint64_t>(r));
    const double acc = train_eval(child, compose_train(r), val).accuracy;
    mean += (acc - mean) / static_cast<double>(r + 1);
  }
  return mean;
}

}  // namespace projektor
