#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "projektor/dataspace.hpp"

namespace projektor {

struct NearestCentroid {};

struct LogisticRegression {
  double lr = 0.1;
  int epochs = 100;
  double l2 = 0.0;
};

/// Deterministic oracle: -(alpha . p) log n + c . p + q * sum_i p_i (1 - p_i).
/// With q >= 0 the ratio term is concave in p.
struct SyntheticLogLinear {
  std::vector<double> alpha_coeffs;
  std::vector<double> c_coeffs;
  double quad_weight = 0.0;

  double raw(std::span<const double> p, double n) const;
};

struct LearnerSpec {
  std::variant<NearestCentroid, LogisticRegression, SyntheticLogLinear> kind;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalResult {
  double accuracy = 0.0;
  long n_train = 0;
  std::vector<double> ratio;   // composition metadata, empty when absent
  double raw = 0.0;            // pre-clamp value (equals accuracy for real learners)
  std::vector<double> loss_trace;  // per-epoch training loss (logistic only)
};

EvalResult train_eval(const LearnerSpec& spec, const Dataset& train, const Dataset& val);

/// Composes a training set for replicate `r`.
using TrainComposer = std::function<Dataset(int replicate)>;

/// Mean accuracy over `reps` compositions; replicate r trains with seed
/// mix_seed(spec.seed, r).
double replicate_accuracy(const LearnerSpec& spec, const TrainComposer& compose_train,
                          const Dataset& val, int reps);

}  // namespace projektor
