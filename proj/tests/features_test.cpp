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

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "unpose/features.hpp"
#include "unpose/random.hpp"

namespace unpose {
namespace {

using testing::grid_record;
using testing::undetected_record;

std::size_t feature_index(const FeatureConfig& c, const std::string& name) {
  auto it = std::find(c.feature_names.begin(), c.feature_names.end(), name);
  if (it == c.feature_names.end()) throw std::out_of_range(name);
  return static_cast<std::size_t>(it - c.feature_names.begin());
}

NormalizedLandmarkSet random_pose(TopologyName topo, Rng& rng) {
  auto rec = grid_record(topo);
  for (auto& kp : rec.keypoints) {
    kp.x = rng.uniform(0.0, rec.width);
    kp.y = rng.uniform(0.0, rec.height);
    if (kp.z) kp.z = rng.uniform(-1.0, 1.0);
  }
  return normalize(rec);
}

TEST(FeatureConfig, Dimensions) {
  const auto c2 = FeatureConfig::for_topology(TopologyName::kPose2D17);
  const auto c3 = FeatureConfig::for_topology(TopologyName::kPose3D33);
  EXPECT_EQ(c2.dimension, 61u);
  EXPECT_EQ(c3.dimension, 77u);
  EXPECT_EQ(c2.feature_names.size(), 61u);
  EXPECT_EQ(c3.feature_names.size(), 77u);
}

TEST(FeatureConfig, NamesAreUnique) {
  for (auto t : {TopologyName::kPose2D17, TopologyName::kPose3D33}) {
    const auto c = FeatureConfig::for_topology(t);
    const std::set<std::string> unique(c.feature_names.begin(), c.feature_names.end());
    EXPECT_EQ(unique.size(), c.feature_names.size());
  }
}

TEST(FeatureConfig, FingerprintTracksContent) {
  const auto a = FeatureConfig::for_topology(TopologyName::kPose2D17);
  EXPECT_EQ(a.fingerprint, a.compute_fingerprint());
  EXPECT_EQ(a.fingerprint, FeatureConfig::for_topology(TopologyName::kPose2D17).fingerprint);
  EXPECT_NE(a.fingerprint, FeatureConfig::for_topology(TopologyName::kPose3D33).fingerprint);
  EXPECT_NE(a.fingerprint, FeatureConfig::for_topology(TopologyName::kPose2D17, 5.0).fingerprint);
  auto renamed = a;
  renamed.feature_names[0] = "x_something_else";
  EXPECT_NE(renamed.compute_fingerprint(), a.fingerprint);
}

TEST(SafeRatio, Examples) {
  const auto c = FeatureConfig::for_topology(TopologyName::kPose2D17);
  EXPECT_EQ(safe_ratio(0.4, 0.2, c), 2.0);
  EXPECT_EQ(safe_ratio(0.5, 0.0, c), 10.0);
  EXPECT_EQ(safe_ratio(-0.5, 0.0, c), -10.0);
  EXPECT_EQ(safe_ratio(0.0, 0.0, c), 0.0);
  EXPECT_EQ(safe_ratio(0.5, 1e-7, c), 10.0);
  EXPECT_EQ(safe_ratio(100.0, 1.0, c), 10.0);
  EXPECT_EQ(safe_ratio(-100.0, 1.0, c), -10.0);
}

TEST(Embedding, LengthsPerTopology) {
  EXPECT_EQ(build_embedding(normalize(grid_record(TopologyName::kPose2D17)),
                            FeatureConfig::for_topology(TopologyName::kPose2D17))
                .vector.size(),
            61u);
  EXPECT_EQ(build_embedding(normalize(grid_record(TopologyName::kPose3D33)),
                            FeatureConfig::for_topology(TopologyName::kPose3D33))
                .vector.size(),
            77u);
}

TEST(Embedding, UndetectedIsZeroSentinel) {
  for (auto t : {TopologyName::kPose2D17, TopologyName::kPose3D33}) {
    const auto c = FeatureConfig::for_topology(t);
    const auto e = build_embedding(normalize(undetected_record(t)), c);
    EXPECT_TRUE(e.is_no_pose);
    EXPECT_EQ(e.vector, std::vector<double>(c.dimension, 0.0));
  }
}

TEST(Embedding, ShoulderRatioFromSymmetricTemplate) {
  for (auto t : {TopologyName::kPose2D17, TopologyName::kPose3D33}) {
    const auto c = FeatureConfig::for_topology(t);
    const auto& topo = topology_for(t);
    auto rec = grid_record(t, "a", "p", 1, 1);
    rec.keypoints[topo.index_of("left_shoulder")].x = 0.6;
    rec.keypoints[topo.index_of("right_shoulder")].x = 0.4;
    const auto e = build_embedding(normalize(rec), c);
    EXPECT_DOUBLE_EQ(e.vector[feature_index(c, "xratio_shoulder")], 1.5);
  }
}

TEST(Embedding, RawBlockIsNormalizedCoordinates) {
  const auto c = FeatureConfig::for_topology(TopologyName::kPose3D33);
  const auto lm = normalize(grid_record(TopologyName::kPose3D33));
  const auto e = build_embedding(lm, c);
  for (std::size_t i = 0; i < lm.coords.size(); ++i) {
    EXPECT_EQ(e.vector[2 * i], lm.coords[i].x);
    EXPECT_EQ(e.vector[2 * i + 1], lm.coords[i].y);
  }
}

TEST(Embedding, HandComputed2DTail) {
  const auto c = FeatureConfig::for_topology(TopologyName::kPose2D17);
  const auto& topo = pose2d17();
  auto rec = grid_record(TopologyName::kPose2D17, "a", "p", 1, 1);
  for (auto& kp : rec.keypoints) kp = {0.5, 0.5, std::nullopt, 1.0};
  auto set = [&](const char* name, double x, double y) {
    rec.keypoints[topo.index_of(name)] = {x, y, std::nullopt, 1.0};
  };
  set("nose", 0.5, 0.1);
  set("left_shoulder", 0.7, 0.3);
  set("right_shoulder", 0.3, 0.3);
  set("left_hip", 0.6, 0.6);
  set("right_hip", 0.4, 0.6);
  set("left_ankle", 0.6, 0.9);
  set("right_ankle", 0.2, 0.9);
  const auto e = build_embedding(normalize(rec), c);
  auto at = [&](const char* n) { return e.vector[feature_index(c, n)]; };
  EXPECT_NEAR(at("bbox_width"), 0.5, 1e-12);
  EXPECT_NEAR(at("bbox_height"), 0.8, 1e-12);
  EXPECT_NEAR(at("bbox_aspect"), 0.625, 1e-12);
  EXPECT_NEAR(at("bbox_center_x"), 0.45, 1e-12);
  EXPECT_NEAR(at("bbox_center_y"), 0.5, 1e-12);
  EXPECT_NEAR(at("span_shoulder"), 0.4, 1e-12);
  EXPECT_NEAR(at("span_hip"), 0.2, 1e-12);
  EXPECT_NEAR(at("torso_length"), 0.3, 1e-12);
  EXPECT_NEAR(at("neck_length"), 0.2, 1e-12);
  EXPECT_NEAR(at("leg_left"), 0.3, 1e-12);
  EXPECT_NEAR(at("leg_right"), std::hypot(0.2, 0.3), 1e-12);
  EXPECT_NEAR(at("xratio_shoulder"), 0.7 / 0.3, 1e-12);
  EXPECT_NEAR(at("yratio_shoulder"), 1.0, 1e-12);
}

TEST(Embedding, HandComputed3DTail) {
  const auto c = FeatureConfig::for_topology(TopologyName::kPose3D33);
  const auto& topo = pose3d33();
  auto rec = grid_record(TopologyName::kPose3D33, "a", "p", 1, 1);
  for (auto& kp : rec.keypoints) kp.z = 0.0;
  rec.keypoints[topo.index_of("nose")].z = -0.4;
  rec.keypoints[topo.index_of("left_shoulder")].z = 0.2;
  rec.keypoints[topo.index_of("right_shoulder")].z = 0.4;
  const auto e = build_embedding(normalize(rec), c);
  EXPECT_NEAR(e.vector[feature_index(c, "z_mean")], 0.2 / 33.0, 1e-12);
  EXPECT_NEAR(e.vector[feature_index(c, "z_nose_minus_shoulders")], -0.7, 1e-12);
  EXPECT_NEAR(e.vector[feature_index(c, "z_span")], 0.8, 1e-12);
}

TEST(Embedding, TopologyMismatchNamesBoth) {
  const auto c = FeatureConfig::for_topology(TopologyName::kPose3D33);
  try {
    build_embedding(normalize(grid_record(TopologyName::kPose2D17)), c);
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("POSE2D17"), std::string::npos);
    EXPECT_NE(msg.find("POSE3D33"), std::string::npos);
  }
}

TEST(Embedding, DeterministicBitIdentical) {
  Rng rng(3);
  const auto c = FeatureConfig::for_topology(TopologyName::kPose3D33);
  const auto lm = random_pose(TopologyName::kPose3D33, rng);
  EXPECT_EQ(build_embedding(lm, c), build_embedding(lm, c));
}

TEST(Embedding, TranslationShiftsRawFeatures) {
  Rng rng(11);
  for (auto t : {TopologyName::kPose2D17, TopologyName::kPose3D33}) {
    const auto c = FeatureConfig::for_topology(t);
    for (int trial = 0; trial < 20; ++trial) {
      auto lm = random_pose(t, rng);
      for (auto& p : lm.coords) p.x *= 0.8;
      auto shifted = lm;
      for (auto& p : shifted.coords) p.x += 0.1;
      const auto a = build_embedding(lm, c), b = build_embedding(shifted, c);
      for (std::size_t i = 0; i < lm.coords.size(); ++i) {
        EXPECT_NEAR(b.vector[2 * i] - a.vector[2 * i], 0.1, 1e-12);
        EXPECT_EQ(b.vector[2 * i + 1], a.vector[2 * i + 1]);
      }
    }
  }
}

TEST(Embedding, MirrorInvertsPairRatios) {
  Rng rng(5);
  for (auto t : {TopologyName::kPose2D17, TopologyName::kPose3D33}) {
    const auto c = FeatureConfig::for_topology(t);
    const auto& topo = topology_for(t);
    for (int trial = 0; trial < 20; ++trial) {
      auto lm = random_pose(t, rng);
      for (auto& p : lm.coords) {
        p.x = 0.2 + 0.6 * p.x;
        p.y = 0.2 + 0.6 * p.y;
      }
      auto mirrored = lm;
      for (auto [l, r] : topo.symmetric_pairs) std::swap(mirrored.coords[l], mirrored.coords[r]);
      const auto a = build_embedding(lm, c), b = build_embedding(mirrored, c);
      for (std::size_t i = 0; i < c.dimension; ++i) {
        const auto& name = c.feature_names[i];
        if (name.rfind("xratio_", 0) == 0 || name.rfind("yratio_", 0) == 0) {
          EXPECT_NEAR(b.vector[i], 1.0 / a.vector[i], 1e-12) << name;
        }
      }
    }
  }
}

TEST(Embedding, DetectedPosesNeverHitTheSentinel) {
  Rng rng(9);
  for (auto t : {TopologyName::kPose2D17, TopologyName::kPose3D33}) {
    const auto c = FeatureConfig::for_topology(t);
    for (int trial = 0; trial < 200; ++trial) {
      const auto e = build_embedding(random_pose(t, rng), c);
      EXPECT_FALSE(e.is_no_pose);
      EXPECT_TRUE(std::any_of(e.vector.begin(), e.vector.end(), [](double v) { return v != 0.0; }));
      for (double v : e.vector) EXPECT_TRUE(std::isfinite(v));
    }
  }
}

TEST(Embedding, RatiosStayWithinClamp) {
  Rng rng(13);
  const auto c = FeatureConfig::for_topology(TopologyName::kPose2D17);
  for (int trial = 0; trial < 200; ++trial) {
    auto lm = random_pose(TopologyName::kPose2D17, rng);
    lm.coords[trial % 17].x = 0.0;
    const auto e = build_embedding(lm, c);
    for (std::size_t i = 0; i < c.dimension; ++i) {
      if (c.feature_names[i].find("ratio") != std::string::npos) {
        EXPECT_LE(std::abs(e.vector[i]), c.ratio_clamp);
      }
    }
  }
}

TEST(Embedding, DegeneratePoseHasZeroSpans) {
  const auto c = FeatureConfig::for_topology(TopologyName::kPose2D17);
  auto rec = grid_record(TopologyName::kPose2D17, "a", "p", 1, 1);
  for (auto& kp : rec.keypoints) kp = {0.3, 0.4, std::nullopt, 1.0};
  const auto e = build_embedding(normalize(rec), c);
  for (const char* n : {"bbox_width", "bbox_height", "span_shoulder", "span_hip", "torso_length",
                        "neck_length", "leg_left", "leg_right", "bbox_aspect"}) {
    EXPECT_EQ(e.vector[feature_index(c, n)], 0.0) << n;
  }
  EXPECT_EQ(e.vector[feature_index(c, "xratio_hip")], 1.0);
  EXPECT_FALSE(e.is_no_pose);
}

TEST(Embedding, DetectionAtOriginCountsAsNoPose) {
  const auto c = FeatureConfig::for_topology(TopologyName::kPose2D17);
  auto rec = grid_record(TopologyName::kPose2D17);
  for (auto& kp : rec.keypoints) kp = {0.0, 0.0, std::nullopt, 1.0};
  EXPECT_TRUE(build_embedding(normalize(rec), c).is_no_pose);
}

TEST(EmbedCorpus, OrderAndSentinelRows) {
  const auto c = FeatureConfig::for_topology(TopologyName::kPose2D17);
  std::vector<NormalizedLandmarkSet> in = {
      normalize(grid_record(TopologyName::kPose2D17, "a")),
      normalize(undetected_record(TopologyName::kPose2D17, "b")),
      normalize(grid_record(TopologyName::kPose2D17, "c")),
  };
  const auto rows = embed_corpus(in, c);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].image_id, "a");
  EXPECT_EQ(rows[1].image_id, "b");
  EXPECT_EQ(rows[2].image_id, "c");
  const Matrix m = to_matrix(rows);
  double norm_b = 0.0, norm_a = 0.0;
  for (double v : m.row(1)) norm_b += v * v;
  for (double v : m.row(0)) norm_a += v * v;
  EXPECT_EQ(norm_b, 0.0);
  EXPECT_GT(norm_a, 0.0);
  EXPECT_TRUE(embed_corpus({}, c).empty());
  EXPECT_EQ(to_matrix({}).rows(), 0u);
}

TEST(EmbedCorpus, ErrorsCarryImageId) {
  const auto c = FeatureConfig::for_topology(TopologyName::kPose2D17);
  std::vector<NormalizedLandmarkSet> in = {normalize(grid_record(TopologyName::kPose3D33, "wrong-one"))};
  try {
    embed_corpus(in, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("wrong-one"), std::string::npos);
  }
}

}  // namespace
}  // namespace unpose
