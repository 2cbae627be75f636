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
#include <array>
#include <cmath>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unpose/error.hpp"

namespace unpose {

enum class TopologyName { kPose3D33, kPose2D17 };

struct Topology {
  TopologyName name;
  std::vector<std::string> keypoint_names;
  bool has_z;
  // Left/right anatomical pairs. For POSE3D33 the first eight pairs line up
  // with the eight POSE2D17 pairs so both topologies share a ratio block.
  std::vector<std::pair<int, int>> symmetric_pairs;

  std::size_t keypoint_count() const { return keypoint_names.size(); }

  int index_of(std::string_view keypoint) const {
    for (std::size_t i = 0; i < keypoint_names.size(); ++i) {
      if (keypoint_names[i] == keypoint) return static_cast<int>(i);
    }
    throw Error(ErrorKind::kPrecondition,
                "unknown keypoint '" + std::string(keypoint) + "'");
  }
};

inline std::string_view topology_string(TopologyName name) {
  return name == TopologyName::kPose3D33 ? "POSE3D33" : "POSE2D17";
}

inline std::optional<TopologyName> parse_topology_name(std::string_view s) {
  if (s == "POSE3D33") return TopologyName::kPose3D33;
  if (s == "POSE2D17") return TopologyName::kPose2D17;
  return std::nullopt;
}

// BlazePose 33-point layout.
inline const Topology& pose3d33() {
  static const Topology topology{
      TopologyName::kPose3D33,
      {"nose",           "left_eye_inner",   "left_eye",        "left_eye_outer",
       "right_eye_inner", "right_eye",       "right_eye_outer", "left_ear",
       "right_ear",      "mouth_left",       "mouth_right",     "left_shoulder",
       "right_shoulder", "left_elbow",       "right_elbow",     "left_wrist",
       "right_wrist",    "left_pinky",       "right_pinky",     "left_index",
       "right_index",    "left_thumb",       "right_thumb",     "left_hip",
       "right_hip",      "left_knee",        "right_knee",      "left_ankle",
       "right_ankle",    "left_heel",        "right_heel",      "left_foot_index",
       "right_foot_index"},
      true,
      {{2, 5},     // eyes
       {7, 8},     // ears
       {11, 12},   // shoulders
       {13, 14},   // elbows
       {15, 16},   // wrists
       {23, 24},   // hips
       {25, 26},   // knees
       {27, 28},   // ankles
       {9, 10},    // mouth corners
       {29, 30},   // heels
       {31, 32},   // foot tips
       {17, 18}},  // pinkies
  };
  return topology;
}

// COCO 17-point layout.
inline const Topology& pose2d17() {
  static const Topology topology{
      TopologyName::kPose2D17,
      {"nose", "left_eye", "right_eye", "left_ear", "right_ear", "left_shoulder",
       "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
       "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle",
       "right_ankle"},
      false,
      {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}},
  };
  return topology;
}

inline const Topology& topology_for(TopologyName name) {
  return name == TopologyName::kPose3D33 ? pose3d33() : pose2d17();
}

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  std::optional<double> z;
  double visibility = 1.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct LandmarkRecord {
  std::string image_id;
  std::string product_id;
  TopologyName topology = TopologyName::kPose2D17;
  int width = 0;
  int height = 0;
  bool detected = false;
  std::vector<Keypoint> keypoints;

  friend bool operator==(const LandmarkRecord&, const LandmarkRecord&) = default;
};

struct NormalizedKeypoint {
  double x = 0.0;
  double y = 0.0;
  std::optional<double> z;
  double visibility = 1.0;

  friend bool operator==(const NormalizedKeypoint&, const NormalizedKeypoint&) = default;
};

struct NormalizedLandmarkSet {
  std::string image_id;
  std::string product_id;
  TopologyName topology = TopologyName::kPose2D17;
  bool detected = false;
  std::vector<NormalizedKeypoint> coords;

  friend bool operator==(const NormalizedLandmarkSet&, const NormalizedLandmarkSet&) = default;
};

enum class Severity { kWarning, kError };

struct Diagnostic {
  std::size_t line = 0;  // 1-based; 0 when not tied to a file line
  Severity severity = Severity::kError;
  std::string message;
};

struct ParseResult {
  std::vector<LandmarkRecord> records;
  std::vector<Diagnostic> diagnostics;

  std::size_t error_count() const {
    return static_cast<std::size_t>(
        std::count_if(diagnostics.begin(), diagnostics.end(),
                      [](const Diagnostic& d) { return d.severity == Severity::kError; }));
  }
};

/// Checks a record against its declared topology. Out-of-frame coordinates
/// are clamped into [0, width] x [0, height] in place and reported as
/// warnings; everything else that is wrong is reported as an error.
/// The record is usable iff no error-severity diagnostic is returned.
inline std::vector<Diagnostic> validate_topology(LandmarkRecord& record) {
  std::vector<Diagnostic> out;
  auto error = [&](std::string msg) {
    out.push_back({0, Severity::kError, std::move(msg)});
  };
  if (record.width <= 0 || record.height <= 0) {
    error("image dimensions must be positive");
    return out;
  }
  const Topology& topology = topology_for(record.topology);
  if (!record.detected) {
    if (!record.keypoints.empty()) error("undetected record must have no keypoints");
    return out;
  }
  if (record.keypoints.size() != topology.keypoint_count()) {
    error("keypoint count mismatch: " + std::string(topology_string(record.topology)) +
          " expects " + std::to_string(topology.keypoint_count()) + ", got " +
          std::to_string(record.keypoints.size()));
    return out;
  }
  for (std::size_t i = 0; i < record.keypoints.size(); ++i) {
    Keypoint& kp = record.keypoints[i];
    const std::string where = " (keypoint " + topology.keypoint_names[i] + ")";
    if (!std::isfinite(kp.x) || !std::isfinite(kp.y) ||
        (kp.z && !std::isfinite(*kp.z)) || !std::isfinite(kp.visibility)) {
      error("non-finite coordinate" + where);
      continue;
    }
    if (topology.has_z && !kp.z) error("z required for 3D topology" + where);
    if (!topology.has_z && kp.z) error("z not allowed for 2D topology" + where);
    if (kp.visibility < 0.0 || kp.visibility > 1.0) {
      error("visibility outside [0,1]" + where);
    }
    const double cx = std::clamp(kp.x, 0.0, static_cast<double>(record.width));
    const double cy = std::clamp(kp.y, 0.0, static_cast<double>(record.height));
    if (cx != kp.x || cy != kp.y) {
      std::ostringstream msg;
      msg << "out-of-frame keypoint clamped" << where << ": (" << kp.x << ", " << kp.y
          << ") -> (" << cx << ", " << cy << ")";
      out.push_back({0, Severity::kWarning, msg.str()});
      kp.x = cx;
      kp.y = cy;
    }
  }
  return out;
}

namespace detail {

inline LandmarkRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("line is not an object");
  static constexpr std::array<std::string_view, 7> kFields = {
      "image_id", "product_id", "topology", "width", "height", "detected", "keypoints"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(kFields.begin(), kFields.end(), key) == kFields.end()) {
      throw std::invalid_argument("unknown field '" + key + "'");
    }
  }
  auto field = [&](const char* name) -> const nlohmann::json& {
    auto it = j.find(name);
    if (it == j.end()) throw std::invalid_argument(std::string("missing field '") + name + "'");
    return *it;
  };
  auto string_field = [&](const char* name) {
    const auto& v = field(name);
    if (!v.is_string()) throw std::invalid_argument(std::string("field '") + name + "' must be a string");
    return v.get<std::string>();
  };
  auto int_field = [&](const char* name) {
    const auto& v = field(name);
    if (!v.is_number_integer()) throw std::invalid_argument(std::string("field '") + name + "' must be an integer");
    return v.get<long long>();
  };
  auto number = [](const nlohmann::json& v, const char* name) {
    if (!v.is_number()) throw std::invalid_argument(std::string("keypoint field '") + name + "' must be a number");
    return v.get<double>();
  };

  LandmarkRecord rec;
  rec.image_id = string_field("image_id");
  rec.product_id = string_field("product_id");
  const std::string topo = string_field("topology");
  auto name = parse_topology_name(topo);
  if (!name) throw std::invalid_argument("unknown topology '" + topo + "'");
  rec.topology = *name;
  const long long width = int_field("width");
  const long long height = int_field("height");
  if (width <= 0 || height <= 0 || width > INT32_MAX || height > INT32_MAX) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  rec.width = static_cast<int>(width);
  rec.height = static_cast<int>(height);
  const auto& detected = field("detected");
  if (!detected.is_boolean()) throw std::invalid_argument("field 'detected' must be a boolean");
  rec.detected = detected.get<bool>();
  const auto& kps = field("keypoints");
  if (!kps.is_array()) throw std::invalid_argument("field 'keypoints' must be an array");
  rec.keypoints.reserve(kps.size());
  for (const auto& k : kps) {
    if (!k.is_object()) throw std::invalid_argument("keypoint must be an object");
    for (const auto& [key, _] : k.items()) {
      if (key != "x" && key != "y" && key != "z" && key != "visibility") {
        throw std::invalid_argument("unknown keypoint field '" + key + "'");
      }
    }
    Keypoint kp;
    if (!k.contains("x") || !k.contains("y")) throw std::invalid_argument("keypoint missing x or y");
    kp.x = number(k["x"], "x");
    kp.y = number(k["y"], "y");
    if (k.contains("z")) kp.z = number(k["z"], "z");
    if (k.contains("visibility")) kp.visibility = number(k["visibility"], "visibility");
    rec.keypoints.push_back(kp);
  }
  return rec;
}

}  // namespace detail

/// Parses line-delimited landmark records. Malformed lines are skipped with
/// an error diagnostic carrying their 1-based line number; blank lines are
/// ignored. Throws only if the stream itself cannot be read.
inline ParseResult parse_landmark_records(std::istream& in) {
  if (!in) throw Error(ErrorKind::kIo, "landmark stream is not readable");
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    LandmarkRecord rec;
    try {
      rec = detail::record_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      result.diagnostics.push_back({line_no, Severity::kError, std::string("malformed line: ") + e.what()});
      continue;
    } catch (const std::invalid_argument& e) {
      result.diagnostics.push_back({line_no, Severity::kError, e.what()});
      continue;
    }
    bool ok = true;
    for (Diagnostic& d : validate_topology(rec)) {
      d.line = line_no;
      if (d.severity == Severity::kError) ok = false;
      result.diagnostics.push_back(std::move(d));
    }
    if (ok) result.records.push_back(std::move(rec));
  }
  if (in.bad()) throw Error(ErrorKind::kIo, "failed while reading landmark stream");
  return result;
}

inline ParseResult parse_landmark_records(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_landmark_records(in);
}

inline std::string serialize_landmark_record(const LandmarkRecord& rec) {
  nlohmann::ordered_json j;
  j["image_id"] = rec.image_id;
  j["product_id"] = rec.product_id;
  j["topology"] = topology_string(rec.topology);
  j["width"] = rec.width;
  j["height"] = rec.height;
  j["detected"] = rec.detected;
  auto kps = nlohmann::ordered_json::array();
  for (const Keypoint& kp : rec.keypoints) {
    nlohmann::ordered_json k;
    k["x"] = kp.x;
    k["y"] = kp.y;
    if (kp.z) k["z"] = *kp.z;
    k["visibility"] = kp.visibility;
    kps.push_back(std::move(k));
  }
  j["keypoints"] = std::move(kps);
  return j.dump();
}

inline NormalizedLandmarkSet normalize(const LandmarkRecord& record) {
  if (record.width <= 0 || record.height <= 0) {
    throw Error(ErrorKind::kValidation,
                "record '" + record.image_id + "' has non-positive image dimensions");
  }
  NormalizedLandmarkSet out{record.image_id, record.product_id, record.topology,
                            record.detected, {}};
  if (!record.detected) return out;
  const double w = record.width;
  const double h = record.height;
  out.coords.reserve(record.keypoints.size());
  for (const Keypoint& kp : record.keypoints) {
    out.coords.push_back({kp.x / w, kp.y / h, kp.z, kp.visibility});
  }
  return out;
}

}  // namespace unpose
