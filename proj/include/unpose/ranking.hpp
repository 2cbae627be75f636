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
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "unpose/error.hpp"
#include "unpose/kmeans.hpp"

namespace unpose {

struct ProductRecord {
  std::string product_id;
  std::string category;
  std::string subcategory;
  std::string product_type;
  double avg_rating = 0.0;
  std::int64_t num_reviews = 0;
  std::vector<std::string> image_ids;

  friend bool operator==(const ProductRecord&, const ProductRecord&) = default;
};

struct Cohort {
  std::string category;
  std::string subcategory;
  std::string product_type;

  static Cohort of(const ProductRecord& p) { return {p.category, p.subcategory, p.product_type}; }
};

/// avg_rating * log10(1 + num_reviews).
inline double popularity_target(const ProductRecord& p) {
  return p.avg_rating * std::log10(1.0 + static_cast<double>(p.num_reviews));
}

/// One-hot layout: [centroid 0..k-1][categories..., unknown]
/// [subcategories..., unknown][product types..., unknown]. Values within a
/// block are sorted so the layout depends only on the set of values seen.
struct FeatureEncoding {
  std::size_t k = 0;
  std::vector<std::string> categories;
  std::vector<std::string> subcategories;
  std::vector<std::string> product_types;

  static FeatureEncoding from_products(std::size_t k, std::span<const ProductRecord> products) {
    FeatureEncoding enc;
    enc.k = k;
    auto collect = [&](auto member) {
      std::vector<std::string> values;
      for (const auto& p : products) values.push_back(p.*member);
      std::sort(values.begin(), values.end());
      values.erase(std::unique(values.begin(), values.end()), values.end());
      return values;
    };
    enc.categories = collect(&ProductRecord::category);
    enc.subcategories = collect(&ProductRecord::subcategory);
    enc.product_types = collect(&ProductRecord::product_type);
    return enc;
  }

  std::size_t width() const {
    return k + categories.size() + subcategories.size() + product_types.size() + 3;
  }

  std::vector<double> encode(std::size_t centroid, const Cohort& cohort) const {
    std::vector<double> x(width(), 0.0);
    x[centroid] = 1.0;
    std::size_t offset = k;
    auto put = [&](const std::vector<std::string>& values, const std::string& v) {
      auto it = std::lower_bound(values.begin(), values.end(), v);
      const std::size_t slot = (it != values.end() && *it == v)
                                   ? static_cast<std::size_t>(it - values.begin())
                                   : values.size();  // unknown
      x[offset + slot] = 1.0;
      offset += values.size() + 1;
    };
    put(categories, cohort.category);
    put(subcategories, cohort.subcategory);
    put(product_types, cohort.product_type);
    return x;
  }

  friend bool operator==(const FeatureEncoding&, const FeatureEncoding&) = default;
};

struct TrainingRow {
  std::vector<double> features;
  double target = 0.0;
  std::size_t centroid_index = 0;
  std::string category;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left when x[feature] < threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const {
    std::size_t at = 0;
    while (nodes[at].feature >= 0) {
      const TreeNode& n = nodes[at];
      at = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left
                                                                                            : n.right);
    }
    return nodes[at].value;
  }

  std::size_t depth() const {
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
    std::size_t deepest = 0;
    while (!stack.empty()) {
      auto [at, d] = stack.back();
      stack.pop_back();
      deepest = std::max(deepest, d);
      if (nodes[at].feature >= 0) {
        stack.push_back({static_cast<std::size_t>(nodes[at].left), d + 1});
        stack.push_back({static_cast<std::size_t>(nodes[at].right), d + 1});
      }
    }
    return deepest;
  }

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

enum class RankerKind : std::uint8_t { kGradientBoosting = 0, kFrequency = 1 };

struct RankerConfig {
  std::size_t num_rounds = 100;
  std::size_t max_depth = 3;
  double learning_rate = 0.1;
  std::size_t min_samples_leaf = 5;
  // Below this many rows the occurrence-count ranker is used instead.
  std::size_t min_rows_for_boosting = 50;
};

struct RankModel {
  RankerKind kind = RankerKind::kGradientBoosting;
  std::vector<RegressionTree> trees;
  double learning_rate = 0.1;
  double base_score = 0.0;
  FeatureEncoding feature_encoding;
  std::size_t num_rounds = 0;
  std::size_t max_depth = 0;
  // Frequency ranker tables: occurrences per centroid among rows whose
  // target is at least the median, globally and per category.
  std::vector<double> frequency_global;
  std::map<std::string, std::vector<double>> frequency_by_category;

  double predict(std::span<const double> x) const {
    double y = base_score;
    for (const auto& t : trees) y += learning_rate * t.predict(x);
    return y;
  }

  friend bool operator==(const RankModel&, const RankModel&) = default;
};

struct CentroidScore {
  std::size_t centroid_index = 0;
  double score = 0.0;

  friend bool operator==(const CentroidScore&, const CentroidScore&) = default;
};

/// One row per assigned image: one-hot centroid and cohort attributes, with
/// the owning product's popularity as target.
inline std::vector<TrainingRow> build_training_rows(std::span<const Assignment> assignments,
                                                    std::span<const ProductRecord> products,
                                                    const FeatureEncoding& encoding) {
  std::unordered_map<std::string, const ProductRecord*> by_id;
  for (const auto& p : products) by_id.emplace(p.product_id, &p);
  std::vector<TrainingRow> rows;
  rows.reserve(assignments.size());
  for (const auto& a : assignments) {
    auto it = by_id.find(a.product_id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::kPrecondition, "image '" + a.image_id + "' refers to unknown product '" +
                                                a.product_id + "'");
    }
    if (a.centroid_index >= encoding.k) {
      throw Error(ErrorKind::kPrecondition, "centroid index out of range for feature encoding");
    }
    const ProductRecord& p = *it->second;
    rows.push_back({encoding.encode(a.centroid_index, Cohort::of(p)), popularity_target(p),
                    a.centroid_index, p.category});
  }
  return rows;
}

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(std::span<const TrainingRow> rows, const std::vector<double>& residuals,
              const RankerConfig& config)
      : rows_(rows), residuals_(residuals), config_(config) {}

  RegressionTree build() {
    std::vector<std::size_t> all(rows_.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    grow(all, 0);
    return std::move(tree_);
  }

 private:
  std::int32_t grow(const std::vector<std::size_t>& idx, std::size_t depth) {
    const auto at = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.push_back({});
    double sum = 0.0;
    for (auto i : idx) sum += residuals_[i];
    const double n = static_cast<double>(idx.size());
    tree_.nodes[static_cast<std::size_t>(at)].value = sum / n;
    if (depth >= config_.max_depth || idx.size() < 2 * config_.min_samples_leaf) return at;

    const std::size_t width = rows_[idx.front()].features.size();
    double best_gain = 1e-12;
    std::int32_t best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, double>> values;  // (feature value, residual)
    for (std::size_t f = 0; f < width; ++f) {
      values.clear();
      for (auto i : idx) values.push_back({rows_[i].features[f], residuals_[i]});
      std::sort(values.begin(), values.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      double left_sum = 0.0;
      for (std::size_t s = 1; s < values.size(); ++s) {
        left_sum += values[s - 1].second;
        if (values[s].first == values[s - 1].first) continue;
        const double nl = static_cast<double>(s);
        const double nr = n - nl;
        if (s < config_.min_samples_leaf || values.size() - s < config_.min_samples_leaf) continue;
        const double right_sum = sum - left_sum;
        const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - sum * sum / n;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<std::int32_t>(f);
          best_threshold = (values[s - 1].first + values[s].first) / 2.0;
        }
      }
    }
    if (best_feature < 0) return at;

    std::vector<std::size_t> left, right;
    for (auto i : idx) {
      (rows_[i].features[static_cast<std::size_t>(best_feature)] < best_threshold ? left : right)
          .push_back(i);
    }
    const auto l = grow(left, depth + 1);
    const auto r = grow(right, depth + 1);
    TreeNode& node = tree_.nodes[static_cast<std::size_t>(at)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return at;
  }

  std::span<const TrainingRow> rows_;
  const std::vector<double>& residuals_;
  const RankerConfig& config_;
  RegressionTree tree_;
};

inline RankModel fit_frequency_ranker(std::span<const TrainingRow> rows, const FeatureEncoding& enc) {
  RankModel model;
  model.kind = RankerKind::kFrequency;
  model.feature_encoding = enc;
  model.learning_rate = 0.0;
  std::vector<double> targets;
  for (const auto& r : rows) targets.push_back(r.target);
  std::sort(targets.begin(), targets.end());
  const double median = targets[(targets.size() - 1) / 2];
  double sum = 0.0;
  for (double t : targets) sum += t;
  model.base_score = sum / static_cast<double>(targets.size());
  model.frequency_global.assign(enc.k, 0.0);
  for (const auto& r : rows) {
    if (r.target < median) continue;
    model.frequency_global[r.centroid_index] += 1.0;
    auto& per = model.frequency_by_category[r.category];
    per.resize(enc.k, 0.0);
    per[r.centroid_index] += 1.0;
  }
  return model;
}

}  // namespace detail

/// Squared-error gradient boosting over shallow regression trees, or the
/// occurrence-count ranker when there are fewer than
/// config.min_rows_for_boosting rows. Boosting stops early once a round can
/// no longer split, so constant targets give a model with zero trees.
inline RankModel fit_ranker(std::span<const TrainingRow> rows, const FeatureEncoding& encoding,
                            const RankerConfig& config = {},
                            std::vector<double>* mse_trace = nullptr) {
  if (rows.size() < 2) throw Error(ErrorKind::kPrecondition, "ranker needs at least 2 rows");
  if (rows.size() < config.min_rows_for_boosting) {
    return detail::fit_frequency_ranker(rows, encoding);
  }
  RankModel model;
  model.kind = RankerKind::kGradientBoosting;
  model.feature_encoding = encoding;
  model.learning_rate = config.learning_rate;
  model.max_depth = config.max_depth;
  double sum = 0.0;
  for (const auto& r : rows) sum += r.target;
  model.base_score = sum / static_cast<double>(rows.size());

  std::vector<double> prediction(rows.size(), model.base_score);
  std::vector<double> residuals(rows.size());
  auto mse = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      residuals[i] = rows[i].target - prediction[i];
      s += residuals[i] * residuals[i];
    }
    return s / static_cast<double>(rows.size());
  };
  const double initial = mse();
  if (mse_trace) mse_trace->push_back(initial);
  for (std::size_t round = 0; round < config.num_rounds; ++round) {
    RegressionTree tree = detail::TreeBuilder(rows, residuals, config).build();
    if (tree.nodes.size() == 1) break;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      prediction[i] += model.learning_rate * tree.predict(rows[i].features);
    }
    model.trees.push_back(std::move(tree));
    const double err = mse();
    if (mse_trace) mse_trace->push_back(err);
  }
  model.num_rounds = model.trees.size();
  return model;
}

inline std::vector<CentroidScore> score_centroids(const RankModel& model, const Cohort& cohort,
                                                  std::span<const std::size_t> candidates) {
  std::vector<CentroidScore> out;
  out.reserve(candidates.size());
  const auto& enc = model.feature_encoding;
  for (std::size_t c : candidates) {
    if (c >= enc.k) throw Error(ErrorKind::kPrecondition, "candidate centroid out of range");
    double score;
    if (model.kind == RankerKind::kFrequency) {
      const double total = std::accumulate(model.frequency_global.begin(),
                                           model.frequency_global.end(), 0.0);
      // Category counts dominate; global counts break ties.
      score = model.frequency_global[c] / (total + 1.0);
      auto it = model.frequency_by_category.find(cohort.category);
      if (it != model.frequency_by_category.end()) score += it->second[c];
    } else {
      score = model.predict(enc.encode(c, cohort));
    }
    out.push_back({c, score});
  }
  return out;
}

/// Descending score, ascending centroid index on ties.
inline std::vector<std::size_t> sort_by_rank(std::vector<CentroidScore> scores) {
  std::sort(scores.begin(), scores.end(), [](const CentroidScore& a, const CentroidScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.centroid_index < b.centroid_index;
  });
  std::vector<std::size_t> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.push_back(s.centroid_index);
  return order;
}

}  // namespace unpose
