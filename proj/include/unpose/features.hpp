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
#include <span>
#include <string>
#include <vector>

#include "unpose/error.hpp"
#include "unpose/landmarks.hpp"
#include "unpose/matrix.hpp"

namespace unpose {

inline constexpr std::size_t kEmbeddingDim2D = 61;
inline constexpr std::size_t kEmbeddingDim3D = 77;

// Number of symmetric pairs that feed the ratio block in both topologies.
inline constexpr std::size_t kRatioPairs = 8;

/// Layout and numeric guards of the engineered pose embedding.
///
/// POSE2D17 (61): x,y per keypoint (34), x- and y-ratio left/right per pair
/// (16), bounding box width/height/aspect/center (5), skeletal spans (6).
/// POSE3D33 (77): x,y per keypoint (66), x-ratio left/right for the first
/// eight pairs (8), z mean / nose depth relative to shoulders / z span (3).
struct FeatureConfig {
  TopologyName topology = TopologyName::kPose2D17;
  std::size_t dimension = 0;
  double ratio_clamp = 10.0;
  double ratio_epsilon = 1e-6;
  std::vector<std::string> feature_names;
  std::uint64_t fingerprint = 0;

  static FeatureConfig for_topology(TopologyName topology, double ratio_clamp = 10.0,
                                    double ratio_epsilon = 1e-6);

  std::uint64_t compute_fingerprint() const {
    detail::Fnv1a h;
    h.update(topology_string(topology));
    h.update_pod(static_cast<std::uint64_t>(dimension));
    h.update_pod(ratio_clamp);
    h.update_pod(ratio_epsilon);
    for (const auto& name : feature_names) h.update(name);
    return h.digest();
  }

  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

namespace detail {

inline std::string pair_label(const Topology& topology, std::pair<int, int> pair) {
  // "left_shoulder" -> "shoulder", "mouth_left" -> "mouth"
  std::string name = topology.keypoint_names[static_cast<std::size_t>(pair.first)];
  if (name.rfind("left_", 0) == 0) return name.substr(5);
  if (auto pos = name.rfind("_left"); pos != std::string::npos) return name.substr(0, pos);
  return name;
}

inline std::vector<std::string> feature_layout(TopologyName name) {
  const Topology& topology = topology_for(name);
  std::vector<std::string> names;
  for (const auto& kp : topology.keypoint_names) {
    names.push_back("x_" + kp);
    names.push_back("y_" + kp);
  }
  for (std::size_t p = 0; p < kRatioPairs; ++p) {
    const std::string label = pair_label(topology, topology.symmetric_pairs[p]);
    names.push_back("xratio_" + label);
    if (!topology.has_z) names.push_back("yratio_" + label);
  }
  if (topology.has_z) {
    names.insert(names.end(), {"z_mean", "z_nose_minus_shoulders", "z_span"});
  } else {
    names.insert(names.end(), {"bbox_width", "bbox_height", "bbox_aspect", "bbox_center_x",
                               "bbox_center_y", "span_shoulder", "span_hip", "torso_length",
                               "neck_length", "leg_left", "leg_right"});
  }
  return names;
}

}  // namespace detail

inline FeatureConfig FeatureConfig::for_topology(TopologyName topology, double ratio_clamp,
                                                 double ratio_epsilon) {
  FeatureConfig config;
  config.topology = topology;
  config.feature_names = detail::feature_layout(topology);
  config.dimension = config.feature_names.size();
  config.ratio_clamp = ratio_clamp;
  config.ratio_epsilon = ratio_epsilon;
  config.fingerprint = config.compute_fingerprint();
  return config;
}

struct PoseEmbedding {
  std::string image_id;
  std::string product_id;
  std::vector<double> vector;
  bool is_no_pose = false;

  friend bool operator==(const PoseEmbedding&, const PoseEmbedding&) = default;
};

/// Total division: saturates to +-ratio_clamp when the denominator is below
/// ratio_epsilon in magnitude, and 0/0 is 0.
inline double safe_ratio(double numerator, double denominator, const FeatureConfig& config) {
  const double clamp = config.ratio_clamp;
  if (std::abs(denominator) < config.ratio_epsilon) {
    if (numerator == 0.0) return 0.0;
    return numerator > 0.0 ? clamp : -clamp;
  }
  return std::clamp(numerator / denominator, -clamp, clamp);
}

namespace detail {

struct Point2 {
  double x, y;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }
inline Point2 midpoint(Point2 a, Point2 b) { return {(a.x + b.x) / 2.0, (a.y + b.y) / 2.0}; }

}  // namespace detail

inline PoseEmbedding build_embedding(const NormalizedLandmarkSet& lm, const FeatureConfig& config) {
  if (lm.topology != config.topology) {
    throw Error(ErrorKind::kDimensionMismatch,
                "landmarks of '" + lm.image_id + "' use topology " +
                    std::string(topology_string(lm.topology)) + " but feature config expects " +
                    std::string(topology_string(config.topology)));
  }
  PoseEmbedding out{lm.image_id, lm.product_id, std::vector<double>(config.dimension, 0.0), false};
  if (!lm.detected) {
    out.is_no_pose = true;
    return out;
  }
  const Topology& topology = topology_for(lm.topology);
  if (lm.coords.size() != topology.keypoint_count()) {
    throw Error(ErrorKind::kValidation, "landmarks of '" + lm.image_id + "' have " +
                                            std::to_string(lm.coords.size()) + " keypoints, expected " +
                                            std::to_string(topology.keypoint_count()));
  }

  std::vector<double>& v = out.vector;
  std::size_t at = 0;
  for (const auto& c : lm.coords) {
    v[at++] = c.x;
    v[at++] = c.y;
  }
  for (std::size_t p = 0; p < kRatioPairs; ++p) {
    const auto [l, r] = topology.symmetric_pairs[p];
    const auto& left = lm.coords[static_cast<std::size_t>(l)];
    const auto& right = lm.coords[static_cast<std::size_t>(r)];
    v[at++] = safe_ratio(left.x, right.x, config);
    if (!topology.has_z) v[at++] = safe_ratio(left.y, right.y, config);
  }

  auto point = [&](const char* name) {
    const auto& c = lm.coords[static_cast<std::size_t>(topology.index_of(name))];
    return detail::Point2{c.x, c.y};
  };

  if (topology.has_z) {
    double sum = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    for (std::size_t i = 0; i < lm.coords.size(); ++i) {
      if (!lm.coords[i].z) {
        throw Error(ErrorKind::kValidation, "landmarks of '" + lm.image_id + "' lack z values");
      }
      const double z = *lm.coords[i].z;
      sum += z;
      lo = i == 0 ? z : std::min(lo, z);
      hi = i == 0 ? z : std::max(hi, z);
    }
    auto z_of = [&](const char* name) {
      return *lm.coords[static_cast<std::size_t>(topology.index_of(name))].z;
    };
    v[at++] = sum / static_cast<double>(lm.coords.size());
    v[at++] = z_of("nose") - (z_of("left_shoulder") + z_of("right_shoulder")) / 2.0;
    v[at++] = hi - lo;
  } else {
    double min_x = lm.coords[0].x, max_x = min_x;
    double min_y = lm.coords[0].y, max_y = min_y;
    for (const auto& c : lm.coords) {
      min_x = std::min(min_x, c.x);
      max_x = std::max(max_x, c.x);
      min_y = std::min(min_y, c.y);
      max_y = std::max(max_y, c.y);
    }
    const double bw = max_x - min_x;
    const double bh = max_y - min_y;
    v[at++] = bw;
    v[at++] = bh;
    v[at++] = safe_ratio(bw, bh, config);
    v[at++] = (min_x + max_x) / 2.0;
    v[at++] = (min_y + max_y) / 2.0;

    const auto ls = point("left_shoulder"), rs = point("right_shoulder");
    const auto lh = point("left_hip"), rh = point("right_hip");
    const auto shoulder_mid = detail::midpoint(ls, rs);
    v[at++] = detail::distance(ls, rs);
    v[at++] = detail::distance(lh, rh);
    v[at++] = detail::distance(shoulder_mid, detail::midpoint(lh, rh));
    v[at++] = detail::distance(point("nose"), shoulder_mid);
    v[at++] = detail::distance(lh, point("left_ankle"));
    v[at++] = detail::distance(rh, point("right_ankle"));
  }

  // A detection collapsed onto the origin carries no pose information and
  // is indistinguishable from the sentinel.
  out.is_no_pose = std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
  return out;
}

inline std::vector<PoseEmbedding> embed_corpus(std::span<const NormalizedLandmarkSet> records,
                                               const FeatureConfig& config) {
  std::vector<PoseEmbedding> rows;
  rows.reserve(records.size());
  for (const auto& lm : records) {
    try {
      rows.push_back(build_embedding(lm, config));
    } catch (const Error& e) {
      throw Error(e.kind(), "image '" + lm.image_id + "': " + e.what());
    }
  }
  return rows;
}

inline Matrix to_matrix(std::span<const PoseEmbedding> rows) {
  Matrix m;
  for (const auto& r : rows) m.append_row(r.vector);
  return m;
}

}  // namespace unpose
