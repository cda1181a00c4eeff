#include "salprune/metrics.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "salprune/rng.hpp"

namespace salprune {

double gini(std::span<const double> values) {
  const std::size_t d = values.size();
  if (d == 0) throw DegenerateAttributionError("gini of an empty attribution");
  std::vector<double> a(d);
  for (std::size_t i = 0; i < d; ++i) a[i] = std::abs(values[i]);
  std::sort(a.begin(), a.end());
  double l1 = 0.0;
  for (double v : a) l1 += v;
  if (l1 == 0.0) throw DegenerateAttributionError("gini undefined for an all-zero attribution");
  double weighted = 0.0;
  const double dd = static_cast<double>(d);
  for (std::size_t k = 0; k < d; ++k) weighted += (a[k] / l1) * ((dd - static_cast<double>(k + 1) + 0.5) / dd);
  return 1.0 - 2.0 * weighted;
}

double gini(const Attribution& attr) { return gini(attr.raw.data()); }

GiniSummary mean_gini(std::span<const Attribution> attrs) {
  GiniSummary s;
  double sum = 0.0;
  for (const Attribution& a : attrs) {
    try {
      sum += gini(a);
      ++s.evaluated;
    } catch (const DegenerateAttributionError&) {
      ++s.skipped;
    }
  }
  if (s.evaluated == 0) {
    throw DegenerateAttributionError("every attribution in the set is all-zero (" + std::to_string(s.skipped) + ")");
  }
  s.mean = sum / s.evaluated;
  return s;
}

SparsityScore sparsity_delta(std::span<const Attribution> model_attrs, std::span<const Attribution> natural_attrs) {
  const GiniSummary m = mean_gini(model_attrs);
  const GiniSummary n = mean_gini(natural_attrs);
  return {m.mean, n.mean, m.mean - n.mean, m.skipped, n.skipped};
}

SparsityScore sparsity_delta(const MethodConfig& method, const ScoreModel& model, const ScoreModel& natural_model,
                             const Dataset& eval_set) {
  if (eval_set.size() == 0) throw std::invalid_argument("sparsity_delta: empty evaluation set");
  if (model.input_shape() != natural_model.input_shape() || model.num_classes() != natural_model.num_classes()) {
    throw std::invalid_argument("sparsity_delta: models do not share a descriptor");
  }
  const auto a = explain_dataset(model, eval_set, method);
  const auto b = explain_dataset(natural_model, eval_set, method);
  return sparsity_delta(a, b);
}

void RoadConfig::validate() const {
  if (!(step > 0.0 && step <= 1.0)) throw std::invalid_argument("ROAD step must be in (0, 1]");
  if (!(noise >= 0.0)) throw std::invalid_argument("ROAD imputation noise must be >= 0");
  if (!(tolerance > 0.0)) throw std::invalid_argument("ROAD solver tolerance must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("ROAD solver iteration cap must be >= 1");
}

namespace {

struct Grid {
  int h, w;
  template <typename F>
  void neighbours(int p, F&& f) const {
    const int y = p / w, x = p % w;
    if (y > 0) f(p - w);
    if (y + 1 < h) f(p + w);
    if (x > 0) f(p - 1);
    if (x + 1 < w) f(p + 1);
  }
  int degree(int p) const {
    int n = 0;
    neighbours(p, [&](int) { ++n; });
    return n;
  }
};

// Max over unknown pixels of |u_p - mean of neighbours| in one channel plane.
double neighbour_residual(const Grid& g, const double* u, const std::vector<int>& unknowns) {
  double r = 0.0;
  for (int p : unknowns) {
    double s = 0.0;
    int n = 0;
    g.neighbours(p, [&](int q) {
      s += u[q];
      ++n;
    });
    r = std::max(r, std::abs(u[p] - s / n));
  }
  return r;
}

}  // namespace

ImputationResult impute(const Tensor& image, std::span<const std::uint8_t> removal_mask, const RoadConfig& cfg,
                        std::uint64_t rng_seed) {
  cfg.validate();
  if (image.rank() != 3) throw ShapeError("imputation expects a [C×H×W] image, got " + shape_string(image.shape()));
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const int P = H * W;
  if (static_cast<int>(removal_mask.size()) != P) {
    throw ShapeError("imputation: removal mask has " + std::to_string(removal_mask.size()) + " entries for " +
                     std::to_string(P) + " pixels");
  }
  ImputationResult res;
  res.image = image;
  const Grid grid{H, W};

  std::vector<int> removed;
  for (int p = 0; p < P; ++p)
    if (removal_mask[static_cast<std::size_t>(p)]) removed.push_back(p);
  res.unknowns = static_cast<int>(removed.size());
  if (removed.empty()) return res;

  // Regions of removed pixels with no known neighbour are fixed to a constant.
  std::vector<int> comp(static_cast<std::size_t>(P), -1);
  std::vector<char> anchored;
  {
    std::vector<int> stack;
    int next = 0;
    for (int s : removed) {
      if (comp[static_cast<std::size_t>(s)] >= 0) continue;
      bool touches_known = false;
      comp[static_cast<std::size_t>(s)] = next;
      stack.push_back(s);
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        grid.neighbours(p, [&](int q) {
          if (!removal_mask[static_cast<std::size_t>(q)]) {
            touches_known = true;
          } else if (comp[static_cast<std::size_t>(q)] < 0) {
            comp[static_cast<std::size_t>(q)] = next;
            stack.push_back(q);
          }
        });
      }
      anchored.push_back(touches_known);
      ++next;
    }
  }
  std::vector<int> system;  // solved unknowns
  std::vector<int> slot(static_cast<std::size_t>(P), -1);
  for (int p : removed) {
    if (anchored[static_cast<std::size_t>(comp[static_cast<std::size_t>(p)])]) {
      slot[static_cast<std::size_t>(p)] = static_cast<int>(system.size());
      system.push_back(p);
    } else {
      for (int c = 0; c < C; ++c) res.image[static_cast<std::size_t>(c) * P + p] = 0.5;
    }
  }
  const int n = static_cast<int>(system.size());
  res.direct = n <= cfg.direct_limit;

  if (n > 0 && res.direct) {
    // degree(p) u_p - sum_{unknown q} u_q = sum_{known q} x_q: SPD on anchored regions.
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n) * 5);
    for (int i = 0; i < n; ++i) {
      const int p = system[static_cast<std::size_t>(i)];
      trip.emplace_back(i, i, grid.degree(p));
      grid.neighbours(p, [&](int q) {
        const int j = slot[static_cast<std::size_t>(q)];
        if (j >= 0) trip.emplace_back(i, j, -1.0);
      });
    }
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
    if (solver.info() != Eigen::Success) throw ImputationError("imputation: factorization failed", INFINITY);
    Eigen::VectorXd b(n);
    for (int c = 0; c < C; ++c) {
      double* plane = res.image.data().data() + static_cast<std::size_t>(c) * P;
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        grid.neighbours(system[static_cast<std::size_t>(i)], [&](int q) {
          if (!removal_mask[static_cast<std::size_t>(q)]) s += plane[q];
        });
        b[i] = s;
      }
      const Eigen::VectorXd u = solver.solve(b);
      for (int i = 0; i < n; ++i) plane[system[static_cast<std::size_t>(i)]] = u[i];
    }
  } else if (n > 0) {
    for (int c = 0; c < C; ++c) {
      double* plane = res.image.data().data() + static_cast<std::size_t>(c) * P;
      double known_mean = 0.0;
      int known = 0;
      for (int p = 0; p < P; ++p)
        if (!removal_mask[static_cast<std::size_t>(p)]) {
          known_mean += plane[p];
          ++known;
        }
      known_mean /= std::max(1, known);
      for (int p : system) plane[p] = known_mean;
      double r = INFINITY;
      int sweeps = 0;
      while (sweeps < cfg.max_iterations) {
        for (int p : system) {
          double s = 0.0;
          int k = 0;
          grid.neighbours(p, [&](int q) {
            s += plane[q];
            ++k;
          });
          plane[p] = s / k;
        }
        ++sweeps;
        if (sweeps % 16 == 0 && (r = neighbour_residual(grid, plane, system)) <= cfg.tolerance) break;
      }
      r = neighbour_residual(grid, plane, system);
      if (r > cfg.tolerance) {
        throw ImputationError("imputation did not converge in " + std::to_string(cfg.max_iterations) +
                                  " sweeps (residual " + std::to_string(r) + ")",
                              r);
      }
    }
  }

  for (int c = 0; c < C; ++c) {
    res.residual = std::max(res.residual, neighbour_residual(grid, res.image.data().data() + static_cast<std::size_t>(c) * P, removed));
  }

  SplitMix64 rng(rng_seed);
  for (int c = 0; c < C; ++c) {
    double* plane = res.image.data().data() + static_cast<std::size_t>(c) * P;
    for (int p : removed) {
      const double noisy = cfg.noise > 0.0 ? plane[p] + cfg.noise * rng.gaussian() : plane[p];
      plane[p] = std::clamp(noisy, 0.0, 1.0);
    }
  }
  return res;
}

Tensor noisy_linear_imputation(const Tensor& image, std::span<const std::uint8_t> removal_mask,
                               const RoadConfig& cfg, std::uint64_t rng_seed) {
  return impute(image, removal_mask, cfg, rng_seed).image;
}

std::vector<int> morf_order(const SaliencyMap& saliency) {
  const auto v = saliency.values.data();
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&v](int a, int b) { return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)]; });
  return idx;
}

RoadCurve road_curve(const ScoreModel& model, const Dataset& eval_set, std::span<const Attribution> attributions,
                     const RoadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int N = eval_set.size();
  if (N == 0) throw std::invalid_argument("road_curve: empty evaluation set");
  if (static_cast<int>(attributions.size()) != N) {
    throw std::invalid_argument("road_curve: need one attribution per evaluation sample");
  }
  std::vector<std::vector<int>> orders;
  orders.reserve(static_cast<std::size_t>(N));
  for (const Attribution& a : attributions) orders.push_back(morf_order(to_saliency(a)));

  const Shape ishape = eval_set.images.shape();
  const int C = ishape[1], H = ishape[2], W = ishape[3];
  const int P = H * W;
  const std::size_t per = static_cast<std::size_t>(C) * P;
  const int steps = static_cast<int>(std::ceil(1.0 / cfg.step - 1e-9));

  RoadCurve curve;
  for (int t = 0; t <= steps; ++t) {
    const double frac = std::min(1.0, t * cfg.step);
    const int remove = std::min(P, static_cast<int>(std::floor(frac * P + 0.5)));
    Tensor batch(ishape);
    for (int i = 0; i < N; ++i) {
      const Tensor img = eval_set.image(i);
      double* dst = batch.data().data() + per * static_cast<std::size_t>(i);
      if (remove == 0) {
        std::copy(img.data().begin(), img.data().end(), dst);
        continue;
      }
      std::vector<std::uint8_t> mask(static_cast<std::size_t>(P), 0);
      for (int k = 0; k < remove; ++k) mask[static_cast<std::size_t>(orders[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)])] = 1;
      const Tensor out = noisy_linear_imputation(
          img, mask, cfg, stream_seed(seed, Stream::road, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(t)}));
      std::copy(out.data().begin(), out.data().end(), dst);
    }
    int correct = 0;
    constexpr int chunk = 50;
    for (int start = 0; start < N; start += chunk) {
      const int count = std::min(chunk, N - start);
      Shape s = ishape;
      s[0] = count;
      std::vector<double> buf(batch.data().begin() + static_cast<std::ptrdiff_t>(per * start),
                              batch.data().begin() + static_cast<std::ptrdiff_t>(per * (start + count)));
      const Tensor logits = model.logits(Tensor(s, std::move(buf)));
      const int K = logits.dim(1);
      for (int k = 0; k < count; ++k) {
        const double* row = logits.data().data() + static_cast<std::size_t>(k) * K;
        const int pred = static_cast<int>(std::max_element(row, row + K) - row);
        correct += pred == eval_set.labels[static_cast<std::size_t>(start + k)];
      }
    }
    curve.fraction.push_back(frac);
    curve.accuracy.push_back(static_cast<double>(correct) / N);
  }
  return curve;
}

double road_auc(const RoadCurve& curve) {
  const std::size_t n = curve.fraction.size();
  if (n == 0) return 0.0;
  if (n == 1) return curve.accuracy[0];
  double area = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    area += 0.5 * (curve.accuracy[i] + curve.accuracy[i - 1]) * (curve.fraction[i] - curve.fraction[i - 1]);
  }
  return area / (curve.fraction.back() - curve.fraction.front());
}

GradientNormStats gradient_norm_stats(std::span<const Attribution> vanilla_attrs) {
  GradientNormStats s;
  s.count = static_cast<int>(vanilla_attrs.size());
  if (s.count == 0) return s;
  std::vector<double> norms;
  for (const auto& a : vanilla_attrs) norms.push_back(l2_norm(a.raw.data()));
  s.mean = std::accumulate(norms.begin(), norms.end(), 0.0) / s.count;
  double var = 0.0;
  for (double v : norms) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / s.count);
  return s;
}

GradientNormStats gradient_norm_stats(const ScoreModel& model, const Dataset& eval_set) {
  if (eval_set.size() == 0) throw std::invalid_argument("gradient_norm_stats: empty evaluation set");
  MethodConfig vg;
  vg.kind = AttributionKind::vanilla;
  const auto attrs = explain_dataset(model, eval_set, vg);
  return gradient_norm_stats(attrs);
}

}  // namespace salprune
