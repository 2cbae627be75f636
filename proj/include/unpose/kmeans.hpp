// Copyright 2026 The Unpose Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "unpose/error.hpp"
#include "unpose/matrix.hpp"
#include "unpose/random.hpp"

namespace unpose {

struct CentroidModel {
  std::size_t k = 0;
  std::size_t dimension = 0;
  Matrix centroids;  // k x dimension
  std::uint64_t feature_config_fingerprint = 0;
  double objective = 0.0;
  std::size_t iterations_run = 0;

  std::span<const double> centroid(std::size_t j) const { return centroids.row(j); }

  friend bool operator==(const CentroidModel&, const CentroidModel&) = default;
};

struct Assignment {
  std::string image_id;
  std::string product_id;
  std::size_t centroid_index = 0;
  double distance = 0.0;  // squared Euclidean
};

struct KMeansOptions {
  std::size_t k = 8;
  std::uint64_t seed = 0;
  std::size_t max_iter = 300;
  double tol = 1e-6;  // relative objective improvement
  std::size_t restarts = 1;
  std::size_t threads = 1;
};

struct KMeansResult {
  CentroidModel model;
  std::vector<std::size_t> labels;
  // Objective after each assignment step and refinement sweep of the winning
  // restart, closed by the objective of the final centroids.
  std::vector<double> objective_trace;
};

namespace detail {

inline std::pair<std::size_t, double> nearest(const Matrix& centroids, std::span<const double> v) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.rows(); ++j) {
    const double d = squared_distance(centroids.row(j), v);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return {best, best_d};
}

// Row-parallel assignment; each row's result depends only on that row, so
// any thread count gives identical output.
inline void assign_rows(const Matrix& data, const Matrix& centroids, std::size_t threads,
                        std::vector<std::size_t>& labels, std::vector<double>& dists) {
  const std::size_t n = data.rows();
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto [j, d] = nearest(centroids, data.row(i));
      labels[i] = j;
      dists[i] = d;
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n / 256 + 1));
  if (threads == 1) {
    work(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(work, begin, end);
  }
  for (auto& th : pool) th.join();
}

inline double sum_in_order(const std::vector<double>& values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

inline Matrix kmeanspp_seed(const Matrix& data, std::size_t k, Rng& rng) {
  const std::size_t n = data.rows();
  Matrix centers(k, data.cols());
  std::size_t first = rng.below(n);
  std::copy(data.row(first).begin(), data.row(first).end(), centers.row(0).begin());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(data.row(i), centers.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    const double total = sum_in_order(d2);
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] > 0.0 && target < d2[i]) {
          pick = i;
          break;
        }
        target -= d2[i];
      }
      // Guard against rounding landing on an already-chosen point.
      while (d2[pick] == 0.0 && pick > 0) --pick;
    } else {
      pick = rng.below(n);
    }
    std::copy(data.row(pick).begin(), data.row(pick).end(), centers.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(data.row(i), centers.row(c)));
    }
  }
  return centers;
}

inline void recompute_means(const Matrix& data, const std::vector<std::size_t>& labels,
                            const std::vector<std::size_t>& counts, Matrix& centers) {
  Matrix sums(centers.rows(), data.cols());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    auto row = data.row(i);
    auto s = sums.row(labels[i]);
    for (std::size_t c = 0; c < data.cols(); ++c) s[c] += row[c];
  }
  for (std::size_t j = 0; j < centers.rows(); ++j) {
    if (counts[j] == 0) continue;
    auto s = sums.row(j);
    auto dst = centers.row(j);
    for (std::size_t c = 0; c < data.cols(); ++c) dst[c] = s[c] / static_cast<double>(counts[j]);
  }
}

struct LloydRun {
  Matrix centers;
  std::vector<std::size_t> labels;
  std::vector<double> trace;
  std::size_t iterations = 0;
};

inline LloydRun lloyd(const Matrix& data, Matrix centers, const KMeansOptions& opt) {
  const std::size_t n = data.rows();
  const std::size_t k = centers.rows();
  LloydRun run;
  std::vector<std::size_t> labels(n);
  std::vector<double> dists(n);
  std::vector<std::size_t> counts(k);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < opt.max_iter; ++iter) {
    assign_rows(data, centers, opt.threads, labels, dists);
    const double objective = sum_in_order(dists);
    run.trace.push_back(objective);
    ++run.iterations;
    const bool converged =
        objective == 0.0 ||
        (std::isfinite(previous) && (previous - objective) <= opt.tol * previous);
    if (converged && iter > 0) break;
    previous = objective;

    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[labels[i]];
    // Empty clusters take the point farthest from its centroid. Moving a
    // point to its own singleton cannot raise the objective.
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[labels[i]] < 2) continue;
        if (far == n || dists[i] > dists[far]) far = i;
      }
      if (far == n) break;
      --counts[labels[far]];
      labels[far] = j;
      dists[far] = 0.0;
      counts[j] = 1;
    }

    recompute_means(data, labels, counts, centers);
  }
  run.centers = std::move(centers);
  run.labels = std::move(labels);
  return run;
}

/// Single-point refinement of a converged Lloyd run: moves a point to another
/// cluster whenever that lowers the objective once both means shift. Stable
/// partitions here are also Lloyd-stable, and each accepted move strictly
/// lowers the objective, so the trace stays non-increasing.
inline void refine_single_moves(const Matrix& data, LloydRun& run, const KMeansOptions& opt) {
  const std::size_t n = data.rows();
  const std::size_t k = run.centers.rows();
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t l : run.labels) ++counts[l];
  recompute_means(data, run.labels, counts, run.centers);
  for (std::size_t sweep = 0; sweep < opt.max_iter; ++sweep) {
    bool moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = run.labels[i];
      if (counts[a] < 2) continue;
      const double na = static_cast<double>(counts[a]);
      const double leave = na / (na - 1.0) * squared_distance(data.row(i), run.centers.row(a));
      double best_gain = 0.0;
      std::size_t target = a;
      for (std::size_t b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(counts[b]);
        const double join = nb / (nb + 1.0) * squared_distance(data.row(i), run.centers.row(b));
        const double gain = leave - join;
        if (gain > best_gain && gain > 1e-12 * leave) {
          best_gain = gain;
          target = b;
        }
      }
      if (target == a) continue;
      --counts[a];
      ++counts[target];
      run.labels[i] = target;
      recompute_means(data, run.labels, counts, run.centers);
      moved = true;
    }
    if (!moved) break;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      objective += squared_distance(data.row(i), run.centers.row(run.labels[i]));
    }
    run.trace.push_back(objective);
  }
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations and single-point
/// refinement. With several restarts the
/// run with the lowest final objective wins (earliest on ties). Centroids that
/// end up bit-identical are merged, so the returned k can be smaller than
/// requested only when the data has fewer distinct points than k.
inline KMeansResult kmeans_fit(const Matrix& data, const KMeansOptions& opt,
                               std::span<const std::string> row_ids = {}) {
  const std::size_t n = data.rows();
  if (opt.k == 0) throw Error(ErrorKind::kPrecondition, "k must be at least 1");
  if (n < opt.k) {
    throw Error(ErrorKind::kPrecondition, "clustering needs at least k=" + std::to_string(opt.k) +
                                              " rows, got " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!all_finite(data.row(i))) {
      const std::string id = i < row_ids.size() ? row_ids[i] : "row " + std::to_string(i);
      throw Error(ErrorKind::kNonFinite, "non-finite embedding for '" + id + "'");
    }
  }

  std::optional<detail::LloydRun> best;
  double best_objective = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opt.restarts); ++r) {
    Rng rng = Rng::derived(opt.seed, r);
    auto run = detail::lloyd(data, detail::kmeanspp_seed(data, opt.k, rng), opt);
    detail::refine_single_moves(data, run, opt);
    std::vector<std::size_t> labels(n);
    std::vector<double> dists(n);
    detail::assign_rows(data, run.centers, opt.threads, labels, dists);
    const double objective = detail::sum_in_order(dists);
    if (!best || objective < best_objective) {
      best_objective = objective;
      run.labels = std::move(labels);
      best = std::move(run);
    }
  }

  // Merge duplicate centroids, keeping the first occurrence.
  Matrix unique;
  std::vector<std::size_t> remap(opt.k);
  for (std::size_t j = 0; j < opt.k; ++j) {
    std::size_t found = unique.rows();
    for (std::size_t u = 0; u < unique.rows(); ++u) {
      if (std::equal(unique.row(u).begin(), unique.row(u).end(), best->centers.row(j).begin())) {
        found = u;
        break;
      }
    }
    if (found == unique.rows()) unique.append_row(best->centers.row(j));
    remap[j] = found;
  }

  KMeansResult result;
  result.model.k = unique.rows();
  result.model.dimension = data.cols();
  result.model.centroids = std::move(unique);
  result.model.objective = best_objective;
  result.model.iterations_run = best->iterations;
  result.labels = std::move(best->labels);
  for (auto& l : result.labels) l = remap[l];
  result.objective_trace = std::move(best->trace);
  result.objective_trace.push_back(best_objective);
  return result;
}

/// Nearest centroid by squared Euclidean distance; exact ties go to the
/// lowest index.
inline Assignment nearest_centroid(const CentroidModel& model, std::span<const double> vector,
                                   std::string image_id = {}, std::string product_id = {}) {
  if (vector.size() != model.dimension) {
    throw Error(ErrorKind::kDimensionMismatch, "vector of length " + std::to_string(vector.size()) +
                                                   " queried against " +
                                                   std::to_string(model.dimension) + "-dim centroids");
  }
  const auto [j, d] = detail::nearest(model.centroids, vector);
  return {std::move(image_id), std::move(product_id), j, d};
}

inline std::vector<Assignment> assign_all(const CentroidModel& model, const Matrix& data,
                                          std::span<const std::string> image_ids = {},
                                          std::span<const std::string> product_ids = {}) {
  std::vector<Assignment> out;
  out.reserve(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    out.push_back(nearest_centroid(model, data.row(i), i < image_ids.size() ? image_ids[i] : "",
                                   i < product_ids.size() ? product_ids[i] : ""));
  }
  return out;
}

inline double kmeans_objective(const CentroidModel& model, const Matrix& data,
                               std::span<const Assignment> assignments) {
  if (assignments.size() != data.rows()) {
    throw Error(ErrorKind::kDimensionMismatch,
                std::to_string(assignments.size()) + " assignments for " +
                    std::to_string(data.rows()) + " rows");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const std::size_t j = assignments[i].centroid_index;
    if (j >= model.k) throw Error(ErrorKind::kPrecondition, "assignment index out of range");
    total += squared_distance(data.row(i), model.centroid(j));
  }
  return total;
}

}  // namespace unpose
