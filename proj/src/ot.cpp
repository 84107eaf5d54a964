#include "projektor/ot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>

#include "projektor/errors.hpp"

namespace projektor {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double feature_cost(const FeatureMatrix& x, Eigen::Index i, const FeatureMatrix& y,
                    Eigen::Index j, FeatureMetric metric) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const double d = x(i, k) - y(j, k);
    s += d * d;
  }
  return metric == FeatureMetric::Euclidean ? std::sqrt(s) : s;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double hi = *mid;
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

void check_weights(const Eigen::VectorXd& w, Eigen::Index expected, const char* which) {
  if (w.size() != expected)
    throw DimensionError(std::string(which) + " weights do not match the cost matrix");
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (!(w[i] >= 0.0) || !std::isfinite(w[i]))
      throw NumericError(std::string(which) + " weights must be finite and nonnegative");
  if (std::abs(w.sum() - 1.0) > 1e-9)
    throw DimensionError(std::string(which) + " weights must sum to 1");
}

void balance_gauge(TransportResult& r, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double shift = 0.5 * (a.dot(r.dual_train) - b.dot(r.dual_val));
  r.dual_train.array() -= shift;
  r.dual_val.array() += shift;
}

Eigen::VectorXd uniform_weights(Eigen::Index n) {
  return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
}

// Damped Newton on the concave entropic dual at fixed eps. Used to finish
// stalled final stages on instances small enough for a dense solve; plain
// Sinkhorn's linear rate degrades badly when eps is far below the cost scale.
// Returns the final L1 marginal violation (f, g updated in place).
double newton_polish(const CostMatrix& cost, const Eigen::ArrayXd& log_a,
                     const Eigen::ArrayXd& log_b, double eps, double tol, int max_steps,
                     Eigen::ArrayXd& f, Eigen::ArrayXd& g) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index t = cost.cols();
  const Eigen::ArrayXd a = log_a.exp();
  const Eigen::ArrayXd b = log_b.exp();
  CostMatrix plan(n, t);
  auto fill = [&](const Eigen::ArrayXd& ff, const Eigen::ArrayXd& gg) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < t; ++j)
        plan(i, j) = std::exp(log_a[i] + log_b[j] + (ff[i] + gg[j] - cost(i, j)) / eps);
    return a.matrix().dot(ff.matrix()) + b.matrix().dot(gg.matrix()) - eps * plan.sum();
  };
  double dual = fill(f, g);
  Eigen::VectorXd rows = plan.rowwise().sum();
  Eigen::VectorXd cols = plan.colwise().sum().transpose();
  double err = (rows - a.matrix()).lpNorm<1>() + (cols - b.matrix()).lpNorm<1>();
  // The last column potential is pinned to remove the gauge direction.
  const Eigen::Index dim = n + t - 1;
  for (int step = 0; step < max_steps && err > tol; ++step) {
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd grad(dim);
    hess.topLeftCorner(n, n).diagonal() = rows;
    hess.topRightCorner(n, t - 1) = plan.leftCols(t - 1);
    hess.bottomLeftCorner(t - 1, n) = plan.leftCols(t - 1).transpose();
    hess.bottomRightCorner(t - 1, t - 1).diagonal() = cols.head(t - 1);
    hess /= eps;
    hess.diagonal().array() += 1e-14 * hess.diagonal().maxCoeff();
    grad.head(n) = a.matrix() - rows;
    grad.tail(t - 1) = b.matrix().head(t - 1) - cols.head(t - 1);
    const Eigen::VectorXd dir = hess.ldlt().solve(grad);
    if (!dir.allFinite()) break;
    const double slope = grad.dot(dir);
    if (!(slope > 0.0)) break;
    bool moved = false;
    for (double alpha = 1.0; alpha > 1e-10; alpha *= 0.5) {
      Eigen::ArrayXd ff = f + alpha * dir.head(n).array();
      Eigen::ArrayXd gg = g;
      gg.head(t - 1) += alpha * dir.tail(t - 1).array();
      const double cand = fill(ff, gg);
      if (std::isfinite(cand) && cand >= dual + 1e-4 * alpha * slope) {
        f = std::move(ff);
        g = std::move(gg);
        dual = cand;
        moved = true;
        break;
      }
    }
    if (!moved) {
      fill(f, g);
      break;
    }
    rows = plan.rowwise().sum();
    cols = plan.colwise().sum().transpose();
    err = (rows - a.matrix()).lpNorm<1>() + (cols - b.matrix()).lpNorm<1>();
  }
  return err;
}

}  // namespace

// ---------------------------------------------------------------------------
// Costs

double default_label_weight(const Dataset& train, const Dataset& val, FeatureMetric metric) {
  if (train.dim() != val.dim()) throw DimensionError("feature dimensions differ");
  std::vector<double> costs;
  costs.reserve(train.size() * val.size());
  for (Eigen::Index i = 0; i < train.features.rows(); ++i)
    for (Eigen::Index j = 0; j < val.features.rows(); ++j)
      costs.push_back(feature_cost(train.features, i, val.features, j, metric));
  return 10.0 * median_of(std::move(costs));
}

CostMatrix cost_matrix(const Dataset& train, const Dataset& val, const CostSpec& spec) {
  if (train.dim() != val.dim())
    throw DimensionError("feature dimensions differ: " + std::to_string(train.dim()) +
                         " vs " + std::to_string(val.dim()));
  if (!(spec.label_weight >= 0.0)) throw ConfigError("label weight must be nonnegative");
  const bool use_labels = spec.label_weight > 0.0;
  if (use_labels && (!train.labeled() || !val.labeled()))
    throw ModeError("a positive label weight requires both datasets to be labeled");

  CostMatrix c(train.features.rows(), val.features.rows());
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      double v = feature_cost(train.features, i, val.features, j, spec.feature_metric);
      if (use_labels && (*train.labels)[static_cast<std::size_t>(i)] !=
                            (*val.labels)[static_cast<std::size_t>(j)])
        v += spec.label_weight;
      c(i, j) = v;
    }
  return c;
}

// ---------------------------------------------------------------------------
// Sinkhorn (log domain, epsilon annealing)

TransportResult sinkhorn(const CostMatrix& cost, const Eigen::VectorXd& a,
                         const Eigen::VectorXd& b, const SinkhornConfig& config,
                         bool keep_coupling) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index t = cost.cols();
  if (n == 0 || t == 0) throw SizeError("sinkhorn needs two nonempty measures");
  check_weights(a, n, "train");
  check_weights(b, t, "val");
  if (!cost.allFinite()) throw NumericError("cost matrix contains non-finite entries");
  if (!(config.anneal_factor > 0.0 && config.anneal_factor < 1.0))
    throw ConfigError("anneal factor must lie in (0,1)");

  std::vector<double> flat(cost.data(), cost.data() + cost.size());
  const double mean = std::accumulate(flat.begin(), flat.end(), 0.0) /
                      static_cast<double>(flat.size());
  const double median = median_of(std::move(flat));
  double scale = median > 0.0 ? median : (mean > 0.0 ? mean : 1.0);
  const double eps_final = config.epsilon_final.value_or(config.epsilon_final_ratio * scale);
  if (!(eps_final > 0.0)) throw ConfigError("final epsilon must be positive");
  double eps_start = config.epsilon_start.value_or(mean);
  if (!(eps_start > eps_final)) eps_start = eps_final;

  std::vector<double> schedule;
  for (double e = eps_start; e > eps_final; e *= config.anneal_factor) schedule.push_back(e);
  schedule.push_back(eps_final);

  const CostMatrix cost_t = cost.transpose();
  const Eigen::ArrayXd log_a = a.array().log();
  const Eigen::ArrayXd log_b = b.array().log();
  Eigen::ArrayXd f = Eigen::ArrayXd::Zero(n);
  Eigen::ArrayXd g = Eigen::ArrayXd::Zero(t);
  Eigen::ArrayXd h(t);
  std::vector<double> buf(static_cast<std::size_t>(std::max(n, t)));

  // out_i = -eps * log sum_k w_k exp((pot_k - M_ik) / eps), M rows contiguous.
  auto soft_min = [&buf](const CostMatrix& m, const Eigen::ArrayXd& pot,
                         const Eigen::ArrayXd& log_w, double eps, Eigen::ArrayXd& out) {
    const double inv = 1.0 / eps;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double* row = m.data() + i * m.cols();
      double mx = -kInf;
      for (Eigen::Index k = 0; k < m.cols(); ++k) {
        const double v = log_w[k] + (pot[k] - row[k]) * inv;
        buf[static_cast<std::size_t>(k)] = v;
        mx = std::max(mx, v);
      }
      double s = 0.0;
      if (mx > -kInf)
        for (Eigen::Index k = 0; k < m.cols(); ++k)
          s += std::exp(buf[static_cast<std::size_t>(k)] - mx);
      out[i] = mx > -kInf ? -eps * (mx + std::log(s)) : kInf;
    }
  };

  // Within a stage the iteration runs on scalings u, v against the kernel
  // K = exp((f + g - C) / eps); the scalings are folded back into the
  // potentials whenever they drift far from 1 or the kernel underflows.
  constexpr double kAbsorbBound = 50.0;
  // Stalled final stages of at most this many points get a Newton finish.
  constexpr long kNewtonAfter = 1000;
  constexpr Eigen::Index kNewtonMaxDim = 600;
  CostMatrix kernel(n, t);
  Eigen::ArrayXd u = Eigen::ArrayXd::Ones(n);
  Eigen::ArrayXd v = Eigen::ArrayXd::Ones(t);
  Eigen::ArrayXd kv(n), ktu(t), v_new(t);
  double eps = schedule.front();

  auto rebuild = [&] {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < t; ++j)
        kernel(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / eps);
  };
  auto absorb = [&] {
    f += eps * u.log();
    g += eps * v.log();
    u.setOnes();
    v.setOnes();
    rebuild();
  };
  auto in_range = [](const Eigen::ArrayXd& x) {
    return x.allFinite() && (x > 0.0).all() && x.log().abs().maxCoeff() <= kAbsorbBound;
  };
  // f update; exact log-domain fallback when the kernel product underflows.
  auto update_f = [&] {
    kv = (kernel * (b.array() * v).matrix()).array();
    Eigen::ArrayXd cand = kv.inverse();
    if (in_range(cand)) {
      u = cand;
      return;
    }
    g += eps * v.log();
    v.setOnes();
    Eigen::ArrayXd f_new(n);
    soft_min(cost, g, log_b, eps, f_new);
    f = f_new;
    u.setOnes();
    rebuild();
  };
  // Candidate g update as a multiplier on v; false when it left the safe range.
  auto candidate_g = [&]() -> bool {
    ktu = (kernel.transpose() * (a.array() * u).matrix()).array();
    v_new = ktu.inverse();
    return in_range(v_new);
  };

  long iterations = 0;
  double err = kInf;
  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    eps = schedule[stage];
    const bool last = stage + 1 == schedule.size();
    const double stage_tol = last ? config.tol : std::max(config.tol, 1e-3);
    const long stage_cap = last ? config.max_iters : 5000;
    long stage_iters = 0;

    rebuild();
    update_f();
    for (;;) {
      if (!candidate_g()) {
        absorb();
        if (!candidate_g()) {
          // Kernel underflow on a column: take the exact log-domain step.
          soft_min(cost_t, f, log_a, eps, h);
          if (!h.allFinite()) throw NumericError("sinkhorn potentials became non-finite");
          v_new = ((h - g) / eps).exp();
          if (!v_new.allFinite() || !(v_new > 0.0).all())
            throw NumericError("sinkhorn potentials became non-finite");
        }
      }
      if (!f.allFinite() || !g.allFinite() || !u.allFinite())
        throw NumericError("sinkhorn potentials became non-finite");
      // Rows are exact after the f update; this is the column violation.
      err = 0.0;
      for (Eigen::Index j = 0; j < t; ++j)
        if (b[j] > 0.0) err += b[j] * std::abs(v[j] / v_new[j] - 1.0);
      if (err <= stage_tol) break;
      if (last && stage_iters == kNewtonAfter && n + t <= kNewtonMaxDim) {
        f += eps * u.log();
        g += eps * v.log();
        u.setOnes();
        v.setOnes();
        Eigen::ArrayXd f_try = f, g_try = g;
        const double polished =
            newton_polish(cost, log_a, log_b, eps, config.tol, 100, f_try, g_try);
        if (polished <= config.tol) {
          f = std::move(f_try);
          g = std::move(g_try);
          err = polished;
          break;
        }
        rebuild();
        update_f();
        ++iterations;
        ++stage_iters;
        continue;
      }
      if (iterations >= config.max_iters || stage_iters >= stage_cap) {
        if (last || iterations >= config.max_iters)
          throw ConvergenceError("sinkhorn did not converge within " +
                                     std::to_string(config.max_iters) + " iterations",
                                 err);
        break;
      }
      v = v_new;
      if (!in_range(u) || !in_range(v)) absorb();
      update_f();
      ++iterations;
      ++stage_iters;
    }
    f += eps * u.log();
    g += eps * v.log();
    u.setOnes();
    v.setOnes();
  }

  TransportResult r;
  r.epsilon = eps;
  r.iterations = iterations;
  double total = 0.0;
  CostMatrix plan;
  if (keep_coupling) plan.resize(n, t);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < t; ++j) {
      const double pij = std::exp(log_a[i] + log_b[j] + (f[i] + g[j] - cost(i, j)) / eps);
      total += pij * cost(i, j);
      if (keep_coupling) plan(i, j) = pij;
    }
  if (!std::isfinite(total)) throw NumericError("sinkhorn cost is not finite");
  r.cost = std::max(total, 0.0);
  r.dual_train = f.matrix();
  r.dual_val = g.matrix();
  balance_gauge(r, a, b);
  if (keep_coupling) r.coupling = std::move(plan);
  return r;
}

TransportResult sinkhorn(const Dataset& train, const Dataset& val, const CostSpec& spec,
                         const SinkhornConfig& config) {
  return sinkhorn(cost_matrix(train, val, spec), uniform_weights(train.features.rows()),
                  uniform_weights(val.features.rows()), config);
}

// ---------------------------------------------------------------------------
// Exact OT: successive shortest paths with Johnson potentials.

namespace {

struct SspSolution {
  CostMatrix flow;
  Eigen::VectorXd potential;  // nodes: 0 = source, 1..n train, n+1..n+t val, n+t+1 sink
};

SspSolution successive_shortest_paths(const CostMatrix& c, const Eigen::VectorXd& supply,
                                      const Eigen::VectorXd& demand, double cap_eps,
                                      double stop_eps) {
  const Eigen::Index n = c.rows();
  const Eigen::Index t = c.cols();
  const Eigen::Index src = 0;
  const Eigen::Index sink = n + t + 1;
  const Eigen::Index nodes = n + t + 2;
  auto train_node = [](Eigen::Index i) { return 1 + i; };
  auto val_node = [n](Eigen::Index j) { return 1 + n + j; };

  CostMatrix flow = CostMatrix::Zero(n, t);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);  // shipped from train i
  Eigen::VectorXd in = Eigen::VectorXd::Zero(t);   // received by val j
  Eigen::VectorXd pot = Eigen::VectorXd::Zero(nodes);
  Eigen::VectorXd dist(nodes);
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(nodes));
  std::vector<char> done(static_cast<std::size_t>(nodes));

  double remaining = supply.sum();
  using Item = std::pair<double, Eigen::Index>;
  while (remaining > stop_eps) {
    dist.setConstant(kInf);
    std::fill(done.begin(), done.end(), 0);
    std::fill(parent.begin(), parent.end(), -1);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[src] = 0.0;
    heap.emplace(0.0, src);

    auto relax = [&](Eigen::Index u, Eigen::Index v, double cost_uv) {
      const double nd = dist[u] + std::max(0.0, cost_uv + pot[u] - pot[v]);
      if (nd < dist[v]) {
        dist[v] = nd;
        parent[static_cast<std::size_t>(v)] = u;
        heap.emplace(nd, v);
      }
    };

    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      if (done[static_cast<std::size_t>(u)]) continue;
      done[static_cast<std::size_t>(u)] = 1;
      if (u == sink) break;
      if (u == src) {
        for (Eigen::Index i = 0; i < n; ++i)
          if (supply[i] - out[i] > cap_eps) relax(u, train_node(i), 0.0);
      } else if (u <= n) {
        const Eigen::Index i = u - 1;
        for (Eigen::Index j = 0; j < t; ++j) relax(u, val_node(j), c(i, j));
        if (out[i] > cap_eps) relax(u, src, 0.0);
      } else {
        const Eigen::Index j = u - 1 - n;
        for (Eigen::Index i = 0; i < n; ++i)
          if (flow(i, j) > cap_eps) relax(u, train_node(i), -c(i, j));
        if (demand[j] - in[j] > cap_eps) relax(u, sink, 0.0);
      }
    }
    if (!done[static_cast<std::size_t>(sink)])
      throw NumericError("exact OT: no augmenting path although supply remains");

    const double dsink = dist[sink];
    for (Eigen::Index v = 0; v < nodes; ++v)
      pot[v] += done[static_cast<std::size_t>(v)] ? std::min(dist[v], dsink) : dsink;

    // Bottleneck along sink <- j <- ... <- i <- src.
    double push = kInf;
    for (Eigen::Index v = sink; v != src;) {
      const Eigen::Index u = parent[static_cast<std::size_t>(v)];
      if (u == src) push = std::min(push, supply[v - 1] - out[v - 1]);
      else if (v == sink) push = std::min(push, demand[u - 1 - n] - in[u - 1 - n]);
      else if (u > n && v >= 1 && v <= n) push = std::min(push, flow(v - 1, u - 1 - n));
      else if (v == src) push = std::min(push, out[u - 1]);
      v = u;
    }
    for (Eigen::Index v = sink; v != src;) {
      const Eigen::Index u = parent[static_cast<std::size_t>(v)];
      if (u == src) out[v - 1] += push;
      else if (v == sink) in[u - 1 - n] += push;
      else if (u >= 1 && u <= n && v > n) flow(u - 1, v - 1 - n) += push;
      else if (u > n && v >= 1 && v <= n) flow(v - 1, u - 1 - n) -= push;
      else if (v == src) out[u - 1] -= push;
      v = u;
    }
    remaining -= push;
  }
  return {std::move(flow), std::move(pot)};
}

TransportResult finish_exact(const CostMatrix& cost, const SspSolution& sol, double mass,
                             double shift, const Eigen::VectorXd& a,
                             const Eigen::VectorXd& b, bool keep_coupling) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index t = cost.cols();
  TransportResult r;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < t; ++j) total += sol.flow(i, j) * cost(i, j);
  r.cost = std::max(0.0, total / mass);
  r.dual_train.resize(n);
  r.dual_val.resize(t);
  for (Eigen::Index i = 0; i < n; ++i) r.dual_train[i] = -sol.potential[1 + i] + shift;
  for (Eigen::Index j = 0; j < t; ++j) r.dual_val[j] = sol.potential[1 + n + j];
  balance_gauge(r, a, b);
  r.epsilon = 0.0;
  r.iterations = 0;
  if (keep_coupling) r.coupling = sol.flow / mass;
  return r;
}

void check_exact_size(const CostMatrix& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) throw SizeError("exact OT needs two nonempty measures");
  if (static_cast<std::size_t>(cost.size()) > kExactOtMaxEntries)
    throw InstanceTooLargeError("exact OT instance has " + std::to_string(cost.size()) +
                                " cost entries; limit is " +
                                std::to_string(kExactOtMaxEntries));
  if (!cost.allFinite()) throw NumericError("cost matrix contains non-finite entries");
}

}  // namespace

TransportResult exact_ot(const CostMatrix& cost, bool keep_coupling) {
  check_exact_size(cost);
  const Eigen::Index n = cost.rows();
  const Eigen::Index t = cost.cols();
  const double shift = cost.minCoeff();
  const CostMatrix shifted = cost.array() - shift;
  // Integer units: every train point ships t, every val point receives n.
  const Eigen::VectorXd supply = Eigen::VectorXd::Constant(n, static_cast<double>(t));
  const Eigen::VectorXd demand = Eigen::VectorXd::Constant(t, static_cast<double>(n));
  auto sol = successive_shortest_paths(shifted, supply, demand, 0.5, 0.5);
  TransportResult r = finish_exact(shifted, sol, static_cast<double>(n * t), shift,
                                   uniform_weights(n), uniform_weights(t), keep_coupling);
  r.cost += shift;
  return r;
}

TransportResult exact_ot(const CostMatrix& cost, const Eigen::VectorXd& a,
                         const Eigen::VectorXd& b, bool keep_coupling) {
  check_exact_size(cost);
  check_weights(a, cost.rows(), "train");
  check_weights(b, cost.cols(), "val");
  const double shift = cost.minCoeff();
  const CostMatrix shifted = cost.array() - shift;
  auto sol = successive_shortest_paths(shifted, a, b, 1e-15,
                                       1e-13 * static_cast<double>(a.size() + b.size()));
  TransportResult r = finish_exact(shifted, sol, 1.0, shift, a, b, keep_coupling);
  r.cost += shift;
  return r;
}

TransportResult exact_ot(const Dataset& train, const Dataset& val, const CostSpec& spec) {
  return exact_ot(cost_matrix(train, val, spec));
}

TransportResult transport(const Dataset& train, const Dataset& val, const CostSpec& spec,
                          const SinkhornConfig& config, OtSolver solver, bool keep_coupling) {
  const CostMatrix c = cost_matrix(train, val, spec);
  const bool exact = solver == OtSolver::Exact ||
                     (solver == OtSolver::Auto &&
                      static_cast<std::size_t>(c.size()) <= kExactOtMaxEntries);
  if (exact) return exact_ot(c, keep_coupling);
  return sinkhorn(c, uniform_weights(c.rows()), uniform_weights(c.cols()), config,
                  keep_coupling);
}

// ---------------------------------------------------------------------------
// Calibrated gradient

SourceGradient calibrated_gradient(const TransportResult& result,
                                   std::span<const int> source_index_of, std::size_t m) {
  const auto n_total = static_cast<std::size_t>(result.dual_train.size());
  if (source_index_of.size() != n_total)
    throw DimensionError("source map does not match the training duals");
  std::vector<double> sum(m, 0.0);
  std::vector<std::size_t> count(m, 0);
  double all = 0.0;
  for (std::size_t j = 0; j < n_total; ++j) {
    const int s = source_index_of[j];
    if (s < 0 || static_cast<std::size_t>(s) >= m)
      throw DimensionError("training point assigned to source outside [0, m)");
    sum[static_cast<std::size_t>(s)] += result.dual_train[static_cast<Eigen::Index>(j)];
    ++count[static_cast<std::size_t>(s)];
    all += result.dual_train[static_cast<Eigen::Index>(j)];
  }
  SourceGradient out;
  out.g.assign(m, 0.0);
  out.empty_source.assign(m, false);
  for (std::size_t i = 0; i < m; ++i) {
    const auto ni = static_cast<double>(count[i]);
    if (count[i] == 0) {
      out.empty_source[i] = true;
      continue;
    }
    if (count[i] == n_total)
      throw DegeneracyError("calibrated gradient undefined: source " + std::to_string(i) +
                            " holds every training point");
    const double rest = static_cast<double>(n_total) - ni;
    out.g[i] = (sum[i] - ni / rest * (all - sum[i])) / ni;
  }
  return out;
}

Eigen::VectorXd mixture_point_weights(std::span<const int> source_index_of,
                                      std::span<const double> ratio) {
  std::vector<std::size_t> count(ratio.size(), 0);
  for (int s : source_index_of) {
    if (s < 0 || static_cast<std::size_t>(s) >= ratio.size())
      throw DimensionError("point assigned to source outside the ratio");
    ++count[static_cast<std::size_t>(s)];
  }
  for (std::size_t s = 0; s < ratio.size(); ++s)
    if (ratio[s] > 0.0 && count[s] == 0)
      throw DegeneracyError("source " + std::to_string(s) +
                            " has mass but no points in the support");
  Eigen::VectorXd w(static_cast<Eigen::Index>(source_index_of.size()));
  for (std::size_t j = 0; j < source_index_of.size(); ++j) {
    const auto s = static_cast<std::size_t>(source_index_of[j]);
    w[static_cast<Eigen::Index>(j)] = ratio[s] / static_cast<double>(count[s]);
  }
  return w / w.sum();
}

void write_transport_csv(const std::string& path, const TransportResult& result) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write transport dump " + path);
  out.precision(17);
  out << "kind,index,j,value\n";
  out << "cost,0,0," << result.cost << '\n';
  out << "epsilon,0,0," << result.epsilon << '\n';
  for (Eigen::Index i = 0; i < result.dual_train.size(); ++i)
    out << "dual_train," << i << ",0," << result.dual_train[i] << '\n';
  for (Eigen::Index j = 0; j < result.dual_val.size(); ++j)
    out << "dual_val," << j << ",0," << result.dual_val[j] << '\n';
  if (result.coupling)
    for (Eigen::Index i = 0; i < result.coupling->rows(); ++i)
      for (Eigen::Index j = 0; j < result.coupling->cols(); ++j)
        if ((*result.coupling)(i, j) != 0.0)
          out << "coupling," << i << ',' << j << ',' << (*result.coupling)(i, j) << '\n';
}

}  // namespace projektor
