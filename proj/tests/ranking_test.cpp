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

#include <gtest/gtest.h>

#include <cmath>

#include "unpose/random.hpp"
#include "unpose/ranking.hpp"

namespace unpose {
namespace {

ProductRecord product(std::string id, std::string cat, std::string sub, std::string type, double rating,
                      std::int64_t reviews) {
  return {std::move(id), std::move(cat), std::move(sub), std::move(type), rating, reviews, {"img"}};
}

// n rows on centroid 0 with target `high` and n rows on centroid 1 with
// target `low`, all in one cohort.
std::vector<TrainingRow> separable(const FeatureEncoding& enc, std::size_t n, double high, double low) {
  std::vector<TrainingRow> rows;
  const Cohort cohort{"Clothing", "Polo", "Shirt"};
  for (std::size_t i = 0; i < n; ++i) {
    rows.push_back({enc.encode(0, cohort), high, 0, "Clothing"});
    rows.push_back({enc.encode(1, cohort), low, 1, "Clothing"});
  }
  return rows;
}

FeatureEncoding simple_encoding(std::size_t k) {
  const std::vector<ProductRecord> ps = {product("A", "Clothing", "Polo", "Shirt", 4, 10)};
  return FeatureEncoding::from_products(k, ps);
}

TEST(Popularity, Examples) {
  EXPECT_EQ(popularity_target(product("a", "", "", "", 0.0, 12345)), 0.0);
  EXPECT_DOUBLE_EQ(popularity_target(product("a", "", "", "", 4.0, 999)), 12.0);
  EXPECT_EQ(popularity_target(product("a", "", "", "", 5.0, 0)), 0.0);
}

TEST(Popularity, MonotoneInBothInputs) {
  for (std::int64_t r = 0; r < 2000; r += 7) {
    EXPECT_LE(popularity_target(product("a", "", "", "", 3.5, r)),
              popularity_target(product("a", "", "", "", 3.5, r + 1)));
  }
  for (double rating = 0.0; rating < 5.0; rating += 0.1) {
    EXPECT_LE(popularity_target(product("a", "", "", "", rating, 40)),
              popularity_target(product("a", "", "", "", rating + 0.1, 40)));
  }
}

TEST(Encoding, LayoutArithmetic) {
  const std::vector<ProductRecord> ps = {
      product("A", "Men", "Polo", "Shirt", 4, 10),
      product("B", "Women", "Polo", "Dress", 4, 10),
  };
  const auto enc = FeatureEncoding::from_products(8, ps);
  // k + (categories + unknown) + (subcategories + unknown) + (types + unknown)
  EXPECT_EQ(enc.width(), 8u + 3u + 2u + 3u);
  const auto x = enc.encode(5, Cohort::of(ps[1]));
  ASSERT_EQ(x.size(), enc.width());
  std::vector<double> expect(enc.width(), 0.0);
  expect[5] = 1.0;
  expect[8 + 1] = 1.0;       // Women
  expect[11 + 0] = 1.0;      // Polo
  expect[13 + 0] = 1.0;      // Dress sorts before Shirt
  EXPECT_EQ(x, expect);
}

TEST(Encoding, UnknownValuesUseReservedSlots) {
  const auto enc = simple_encoding(3);
  const auto x = enc.encode(0, Cohort{"Shoes", "Boot", "Heel"});
  EXPECT_EQ(x[3 + 1], 1.0);
  EXPECT_EQ(x[5 + 1], 1.0);
  EXPECT_EQ(x[7 + 1], 1.0);
  double ones = 0.0;
  for (double v : x) ones += v;
  EXPECT_EQ(ones, 4.0);
}

TEST(TrainingRows, HandChecked) {
  const std::vector<ProductRecord> ps = {
      product("P1", "Men", "Polo", "Shirt", 4.0, 999),
      product("P2", "Women", "Tee", "Shirt", 5.0, 9),
  };
  const auto enc = FeatureEncoding::from_products(3, ps);
  const std::vector<Assignment> as = {
      {"i1", "P1", 0, 0.0}, {"i2", "P1", 2, 0.0}, {"i3", "P2", 1, 0.0}, {"i4", "P2", 1, 0.0}};
  const auto rows = build_training_rows(as, ps, enc);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_DOUBLE_EQ(rows[0].target, 12.0);
  EXPECT_EQ(rows[0].target, rows[1].target);
  EXPECT_DOUBLE_EQ(rows[2].target, 5.0);
  EXPECT_EQ(rows[2].features, rows[3].features);
  // width = 3 + 3 + 3 + 2
  EXPECT_EQ(rows[0].features, (std::vector<double>{1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0}));
  EXPECT_EQ(rows[1].features, (std::vector<double>{0, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0}));
  EXPECT_EQ(rows[2].features, (std::vector<double>{0, 1, 0, 0, 1, 0, 0, 1, 0, 1, 0}));
  EXPECT_EQ(rows[2].category, "Women");
}

TEST(TrainingRows, UnknownProductIsNamed) {
  const auto enc = simple_encoding(2);
  const std::vector<ProductRecord> ps = {product("A", "Clothing", "Polo", "Shirt", 4, 10)};
  const std::vector<Assignment> as = {{"i1", "ghost", 0, 0.0}};
  try {
    build_training_rows(as, ps, enc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(Gbdt, ConstantTargetsGiveNoTrees) {
  const auto enc = simple_encoding(2);
  const auto rows = separable(enc, 40, 7.0, 7.0);
  const auto m = fit_ranker(rows, enc);
  EXPECT_EQ(m.kind, RankerKind::kGradientBoosting);
  EXPECT_TRUE(m.trees.empty());
  EXPECT_EQ(m.base_score, 7.0);
  for (const auto& r : rows) EXPECT_EQ(m.predict(r.features), 7.0);
}

TEST(Gbdt, OneRoundMovesTowardGroupMeans) {
  const auto enc = simple_encoding(2);
  const auto rows = separable(enc, 30, 10.0, 2.0);
  RankerConfig cfg;
  cfg.num_rounds = 1;
  cfg.max_depth = 1;
  const auto m = fit_ranker(rows, enc, cfg);
  ASSERT_EQ(m.trees.size(), 1u);
  EXPECT_EQ(m.trees[0].depth(), 1u);
  EXPECT_DOUBLE_EQ(m.base_score, 6.0);
  EXPECT_NEAR(m.predict(rows[0].features), 6.0 + 0.1 * 4.0, 1e-12);
  EXPECT_NEAR(m.predict(rows[1].features), 6.0 - 0.1 * 4.0, 1e-12);
  const std::vector<std::size_t> cands = {0, 1};
  const auto scores = score_centroids(m, Cohort{"Clothing", "Polo", "Shirt"}, cands);
  EXPECT_GT(scores[0].score, scores[1].score);
}

TEST(Gbdt, TrainingErrorNeverIncreases) {
  Rng rng(3);
  const std::vector<ProductRecord> ps = {
      product("A", "Men", "Polo", "Shirt", 4, 10), product("B", "Women", "Tee", "Top", 3, 50),
      product("C", "Kids", "Tee", "Shirt", 2, 500)};
  const auto enc = FeatureEncoding::from_products(6, ps);
  std::vector<TrainingRow> rows;
  for (int i = 0; i < 300; ++i) {
    const auto& p = ps[rng.below(3)];
    const std::size_t c = rng.below(6);
    rows.push_back({enc.encode(c, Cohort::of(p)), 0.5 * static_cast<double>(c) + rng.gaussian(), c, p.category});
  }
  std::vector<double> trace;
  const auto m = fit_ranker(rows, enc, RankerConfig{}, &trace);
  ASSERT_EQ(trace.size(), m.trees.size() + 1);
  for (std::size_t t = 1; t < trace.size(); ++t) EXPECT_LE(trace[t], trace[t - 1] + 1e-12);
  for (const auto& tree : m.trees) EXPECT_LE(tree.depth(), 3u);
}

TEST(Gbdt, ShiftingTargetsShiftsPredictions) {
  Rng rng(4);
  const auto enc = simple_encoding(4);
  std::vector<TrainingRow> rows, shifted;
  for (int i = 0; i < 120; ++i) {
    const std::size_t c = rng.below(4);
    rows.push_back({enc.encode(c, Cohort{"Clothing", "Polo", "Shirt"}), static_cast<double>(c * c) + rng.uniform(), c, "Clothing"});
  }
  shifted = rows;
  for (auto& r : shifted) r.target += 3.25;
  const auto a = fit_ranker(rows, enc), b = fit_ranker(shifted, enc);
  for (const auto& r : rows) EXPECT_NEAR(b.predict(r.features), a.predict(r.features) + 3.25, 1e-9);
}

TEST(Gbdt, Deterministic) {
  const auto enc = simple_encoding(2);
  const auto rows = separable(enc, 30, 10.0, 2.0);
  EXPECT_EQ(fit_ranker(rows, enc), fit_ranker(rows, enc));
}

TEST(Gbdt, LeafSizeIsRespected) {
  const auto enc = simple_encoding(3);
  auto rows = separable(enc, 30, 10.0, 2.0);
  // Only 3 rows on centroid 2: too few to isolate with a leaf of 5.
  for (int i = 0; i < 3; ++i) rows.push_back({enc.encode(2, Cohort{"Clothing", "Polo", "Shirt"}), 100.0, 2, "Clothing"});
  const auto m = fit_ranker(rows, enc);
  for (const auto& tree : m.trees) {
    for (const auto& node : tree.nodes) {
      if (node.feature == 2) FAIL() << "split isolates a 3-row group";
    }
  }
}

TEST(Ranker, NeedsTwoRows) {
  const auto enc = simple_encoding(2);
  std::vector<TrainingRow> one = {{enc.encode(0, Cohort{}), 1.0, 0, ""}};
  EXPECT_THROW(fit_ranker(one, enc), Error);
}

TEST(FrequencyRanker, UsedForSmallCorporaAndCountsTopRows) {
  const std::vector<ProductRecord> ps = {product("A", "Men", "Polo", "Shirt", 4, 10),
                                         product("B", "Women", "Tee", "Top", 4, 10)};
  const auto enc = FeatureEncoding::from_products(4, ps);
  std::vector<TrainingRow> rows;
  auto add = [&](std::size_t c, double t, const ProductRecord& p) {
    rows.push_back({enc.encode(c, Cohort::of(p)), t, c, p.category});
  };
  add(0, 9, ps[0]);
  add(0, 9, ps[0]);
  add(1, 9, ps[1]);
  add(2, 1, ps[0]);
  add(3, 1, ps[1]);
  add(3, 1, ps[1]);
  // median target is 1, so every row counts.
  const auto m = fit_ranker(rows, enc);
  EXPECT_EQ(m.kind, RankerKind::kFrequency);
  EXPECT_EQ(m.frequency_global, (std::vector<double>{2, 1, 1, 2}));
  const std::vector<std::size_t> all = {0, 1, 2, 3};
  EXPECT_EQ(sort_by_rank(score_centroids(m, Cohort::of(ps[0]), all)),
            (std::vector<std::size_t>{0, 2, 3, 1}));
  EXPECT_EQ(sort_by_rank(score_centroids(m, Cohort::of(ps[1]), all)),
            (std::vector<std::size_t>{3, 1, 0, 2}));
  // Unknown category falls back to global counts.
  EXPECT_EQ(sort_by_rank(score_centroids(m, Cohort{"Shoes", "", ""}, all)),
            (std::vector<std::size_t>{0, 3, 1, 2}));
}

TEST(FrequencyRanker, RowsBelowMedianAreIgnored) {
  const auto enc = simple_encoding(3);
  std::vector<TrainingRow> rows;
  for (double t : {1.0, 2.0, 3.0, 4.0, 5.0}) {
    const std::size_t c = t < 3.0 ? 2 : (t < 5.0 ? 0 : 1);
    rows.push_back({enc.encode(c, Cohort{"Clothing", "Polo", "Shirt"}), t, c, "Clothing"});
  }
  const auto m = fit_ranker(rows, enc);
  EXPECT_EQ(m.frequency_global, (std::vector<double>{2, 1, 0}));
}

TEST(Score, EmptyAndRepeatable) {
  const auto enc = simple_encoding(2);
  const auto m = fit_ranker(separable(enc, 30, 10.0, 2.0), enc);
  EXPECT_TRUE(score_centroids(m, Cohort{}, {}).empty());
  const std::vector<std::size_t> twice = {1, 1};
  const auto s = score_centroids(m, Cohort{"Clothing", "Polo", "Shirt"}, twice);
  EXPECT_EQ(s[0].score, s[1].score);
  const std::vector<std::size_t> bad = {5};
  EXPECT_THROW(score_centroids(m, Cohort{}, bad), Error);
}

TEST(Score, UnknownCohortStillScores) {
  const auto enc = simple_encoding(2);
  const auto m = fit_ranker(separable(enc, 30, 10.0, 2.0), enc);
  const std::vector<std::size_t> c = {0, 1};
  const auto s = score_centroids(m, Cohort{"Furniture", "Chair", "Stool"}, c);
  for (const auto& x : s) EXPECT_TRUE(std::isfinite(x.score));
}

TEST(SortByRank, Examples) {
  EXPECT_EQ(sort_by_rank({{0, 3.0}, {1, 5.0}, {2, 1.0}}), (std::vector<std::size_t>{1, 0, 2}));
  EXPECT_EQ(sort_by_rank({{2, 1.0}, {0, 1.0}}), (std::vector<std::size_t>{0, 2}));
  EXPECT_TRUE(sort_by_rank({}).empty());
}

TEST(SortByRank, InvariantUnderIncreasingTransforms) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<CentroidScore> s, t;
    for (std::size_t c = 0; c < 8; ++c) {
      const double v = std::round(rng.uniform(-3.0, 3.0) * 4.0) / 4.0;  // some ties
      s.push_back({c, v});
      t.push_back({c, std::exp(v) * 2.0 + 1.0});
    }
    EXPECT_EQ(sort_by_rank(s), sort_by_rank(t));
  }
}

}  // namespace
}  // namespace unpose
