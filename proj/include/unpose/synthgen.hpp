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
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "unpose/error.hpp"
#include "unpose/landmarks.hpp"
#include "unpose/random.hpp"
#include "unpose/ranking.hpp"

namespace unpose::synth {

inline constexpr int kNumClasses = 8;
inline constexpr int kNoPoseClass = 5;
inline constexpr int kImageWidth = 1000;
inline constexpr int kImageHeight = 1500;

/// Canonical pose for one archetype, as normalized BlazePose-33 coordinates
/// with depth. Keypoints outside the frame are clamped to its border and
/// masked invisible, which is how closeups are expressed.
struct PoseTemplate {
  int class_id = 0;
  std::string description;
  std::array<std::array<double, 3>, 33> base_keypoints{};  // x, y, z
  std::array<bool, 33> visible_mask{};
  bool is_no_pose = false;
};

namespace detail {

// Skeleton in body units: nose at (0, 0), one unit = nose-to-ankle height.
// Each entry is (x offset toward the subject's left, y down, z toward
// camera negative).
struct BodyShape {
  double eye_spread = 0.022;
  double ear_spread = 0.045;
  double shoulder = 0.11;
  double elbow_x = 0.13, elbow_y = 0.32;
  double wrist_x = 0.14, wrist_y = 0.46;
  double hip = 0.07, hip_y = 0.5;
  double knee_x = 0.075, knee_y = 0.72;
  double ankle_x = 0.08, ankle_y = 0.93;
  // Per-side overrides for asymmetric stances (left leg).
  double left_knee_x = -1, left_knee_y = -1, left_ankle_x = -1, left_ankle_y = -1;
};

struct Framing {
  double scale = 0.8;       // image units per body unit
  double anchor_body_y = 0; // body y that lands on anchor_image_y
  double anchor_image_y = 0.1;
  double center_x = 0.5;
  bool back_view = false;
  double width_factor = 1.0;  // extra horizontal scale
};

inline std::array<std::array<double, 3>, 33> build_skeleton(const BodyShape& b, const Framing& f) {
  // (dx toward subject's left, y, z) for keypoints in BlazePose order; the
  // right side mirrors dx.
  auto side = [](double v, double override_v) { return override_v >= 0 ? override_v : v; };
  const double hand_y = b.wrist_y + 0.04;
  const double hand_x = b.wrist_x + 0.005;
  const std::array<std::array<double, 3>, 33> body = {{
      {0, 0, -0.30},                                      // nose
      {0.012, -0.02, -0.28},                              // left_eye_inner
      {b.eye_spread, -0.02, -0.28},                       // left_eye
      {0.03, -0.02, -0.27},                               // left_eye_outer
      {-0.012, -0.02, -0.28},                             // right_eye_inner
      {-b.eye_spread, -0.02, -0.28},                      // right_eye
      {-0.03, -0.02, -0.27},                              // right_eye_outer
      {b.ear_spread, -0.01, -0.10},                       // left_ear
      {-b.ear_spread, -0.01, -0.10},                      // right_ear
      {0.015, 0.03, -0.28},                               // mouth_left
      {-0.015, 0.03, -0.28},                              // mouth_right
      {b.shoulder, 0.15, -0.05},                          // left_shoulder
      {-b.shoulder, 0.15, -0.05},                         // right_shoulder
      {b.elbow_x, b.elbow_y, -0.05},                      // left_elbow
      {-b.elbow_x, b.elbow_y, -0.05},                     // right_elbow
      {b.wrist_x, b.wrist_y, -0.10},                      // left_wrist
      {-b.wrist_x, b.wrist_y, -0.10},                     // right_wrist
      {hand_x + 0.01, hand_y, -0.12},                     // left_pinky
      {-hand_x - 0.01, hand_y, -0.12},                    // right_pinky
      {hand_x, hand_y + 0.005, -0.12},                    // left_index
      {-hand_x, hand_y + 0.005, -0.12},                   // right_index
      {hand_x - 0.01, hand_y - 0.01, -0.12},              // left_thumb
      {-hand_x + 0.01, hand_y - 0.01, -0.12},             // right_thumb
      {b.hip, b.hip_y, 0.0},                              // left_hip
      {-b.hip, b.hip_y, 0.0},                             // right_hip
      {side(b.knee_x, b.left_knee_x), side(b.knee_y, b.left_knee_y), -0.02},  // left_knee
      {-b.knee_x, b.knee_y, -0.02},                       // right_knee
      {side(b.ankle_x, b.left_ankle_x), side(b.ankle_y, b.left_ankle_y), 0.05},  // left_ankle
      {-b.ankle_x, b.ankle_y, 0.05},                      // right_ankle
      {side(b.ankle_x, b.left_ankle_x), side(b.ankle_y, b.left_ankle_y) + 0.02, 0.08},  // left_heel
      {-b.ankle_x, b.ankle_y + 0.02, 0.08},               // right_heel
      {side(b.ankle_x, b.left_ankle_x) + 0.01, side(b.ankle_y, b.left_ankle_y) + 0.03, -0.05},
      {-b.ankle_x - 0.01, b.ankle_y + 0.03, -0.05},       // right_foot_index
  }};
  std::array<std::array<double, 3>, 33> out{};
  // Facing the camera, the subject's left appears at larger image x.
  const double facing = f.back_view ? -1.0 : 1.0;
  const double closer = -0.1 * (f.scale / 0.8 - 1.0);
  for (std::size_t i = 0; i < body.size(); ++i) {
    out[i][0] = f.center_x + facing * body[i][0] * f.scale * f.width_factor;
    out[i][1] = f.anchor_image_y + (body[i][1] - f.anchor_body_y) * f.scale;
    out[i][2] = facing * body[i][2] * f.scale / 0.8 + closer;
  }
  return out;
}

}  // namespace detail

inline const std::array<PoseTemplate, kNumClasses>& pose_templates() {
  static const auto templates = [] {
    using detail::BodyShape;
    using detail::Framing;
    std::array<PoseTemplate, kNumClasses> t;
    auto finish = [](PoseTemplate& p, int id, std::string desc, const BodyShape& b, const Framing& f) {
      p.class_id = id;
      p.description = std::move(desc);
      p.base_keypoints = detail::build_skeleton(b, f);
      for (std::size_t i = 0; i < 33; ++i) {
        const auto& k = p.base_keypoints[i];
        p.visible_mask[i] = k[0] >= 0.0 && k[0] <= 1.0 && k[1] >= 0.0 && k[1] <= 1.0;
      }
    };

    // Upper body to the waist, framed so the hips sit near the bottom edge.
    const Framing waist{1.6, 0.0, 0.15, 0.5, false};
    finish(t[0], 0, "Upper body till waist | nose visible | front", BodyShape{}, waist);

    BodyShape half_turn;
    half_turn.elbow_x = 0.1;
    half_turn.wrist_x = 0.11;
    half_turn.hip = 0.055;
    Framing back = waist;
    back.back_view = true;
    back.anchor_image_y = 0.12;
    finish(t[1], 1, "Upper body till waist | half | back", half_turn, back);

    // Crouch: knees bent outward, hands resting on them, body low in frame.
    BodyShape knee_bent;
    knee_bent.elbow_x = 0.17;
    knee_bent.elbow_y = 0.36;
    knee_bent.wrist_x = 0.15;
    knee_bent.wrist_y = 0.56;
    knee_bent.hip_y = 0.46;
    knee_bent.knee_x = 0.2;
    knee_bent.knee_y = 0.6;
    knee_bent.ankle_x = 0.1;
    knee_bent.ankle_y = 0.78;
    finish(t[2], 2, "Full body | knee bent | front", knee_bent, Framing{0.8, 0.0, 0.36, 0.5, false});

    // Mouth near the top edge, chest filling the frame.
    finish(t[3], 3, "Close up | chin visible | chest", BodyShape{},
           Framing{3.0, 0.03, 0.03, 0.5, false, 0.65});

    finish(t[4], 4, "Full body", BodyShape{}, Framing{0.8, 0.0, 0.14, 0.5, false});

    t[5].class_id = 5;
    t[5].description = "Non-human | tables | fabric closeup";
    t[5].is_no_pose = true;

    // Shoulders high in the frame, head cropped away.
    finish(t[6], 6, "Chin to torso", BodyShape{}, Framing{1.8, 0.15, 0.15, 0.5, false});

    // Second full-body archetype: wide stance with arms raised outward.
    BodyShape wide;
    wide.elbow_x = 0.22;
    wide.elbow_y = 0.14;
    wide.wrist_x = 0.3;
    wide.wrist_y = 0.06;
    wide.knee_x = 0.13;
    wide.ankle_x = 0.18;
    wide.ankle_y = 0.91;
    finish(t[7], 7, "Full body", wide, Framing{0.8, 0.0, 0.12, 0.5, false});
    return t;
  }();
  return templates;
}

inline const PoseTemplate& pose_template(int class_id) {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw Error(ErrorKind::kPrecondition, "unknown pose class " + std::to_string(class_id));
  }
  return pose_templates()[static_cast<std::size_t>(class_id)];
}

// BlazePose index of each COCO-17 keypoint.
inline constexpr std::array<std::size_t, 17> kCocoFromBlaze = {0,  2,  5,  7,  8,  11, 12, 13, 14,
                                                                15, 16, 23, 24, 25, 26, 27, 28};

inline std::string sample_image_id(int class_id, std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "img-c%d-%05zu", class_id, index);
  return buf;
}

/// Template plus seeded Gaussian jitter (normalized units), clamped to the
/// frame and converted to pixels. The no-pose class yields an undetected
/// record. Deterministic in (class_id, noise_sigma, seed, index).
inline LandmarkRecord generate_class_sample(int class_id, double noise_sigma, std::uint64_t seed,
                                            std::size_t index,
                                            TopologyName topology = TopologyName::kPose2D17) {
  const PoseTemplate& tpl = pose_template(class_id);
  if (noise_sigma < 0.0) throw Error(ErrorKind::kPrecondition, "noise_sigma must be >= 0");
  LandmarkRecord rec;
  rec.image_id = sample_image_id(class_id, index);
  rec.topology = topology;
  rec.width = kImageWidth;
  rec.height = kImageHeight;
  if (tpl.is_no_pose) {
    rec.detected = false;
    return rec;
  }
  rec.detected = true;
  Rng rng = Rng::derived(seed, (static_cast<std::uint64_t>(class_id) << 40) ^ index);
  std::array<Keypoint, 33> full;
  for (std::size_t i = 0; i < 33; ++i) {
    const auto& base = tpl.base_keypoints[i];
    const double x = std::clamp(base[0] + noise_sigma * rng.gaussian(), 0.0, 1.0);
    const double y = std::clamp(base[1] + noise_sigma * rng.gaussian(), 0.0, 1.0);
    const double z = base[2] + noise_sigma * rng.gaussian();
    full[i] = {x * kImageWidth, y * kImageHeight, z, tpl.visible_mask[i] ? 1.0 : 0.0};
  }
  if (topology == TopologyName::kPose3D33) {
    rec.keypoints.assign(full.begin(), full.end());
  } else {
    for (std::size_t i : kCocoFromBlaze) {
      Keypoint kp = full[i];
      kp.z.reset();
      rec.keypoints.push_back(kp);
    }
  }
  return rec;
}

struct CorpusSpec {
  std::vector<int> classes{0, 1, 2, 3, 4, 5};
  std::size_t per_class = 200;
  double noise_sigma = 0.02;
  TopologyName topology = TopologyName::kPose2D17;
  std::uint64_t seed = 1;
  std::size_t product_grouping = 8;

  void validate() const {
    if (classes.empty()) throw Error(ErrorKind::kPrecondition, "corpus needs at least one class");
    for (int c : classes) pose_template(c);
    if (per_class < 1) throw Error(ErrorKind::kPrecondition, "per_class must be >= 1");
    if (noise_sigma < 0.0) throw Error(ErrorKind::kPrecondition, "noise_sigma must be >= 0");
    if (product_grouping < 1) throw Error(ErrorKind::kPrecondition, "product_grouping must be >= 1");
  }
};

struct GroundTruth {
  std::string image_id;
  int class_id = 0;
};

struct SynthCorpus {
  std::vector<LandmarkRecord> records;
  std::vector<GroundTruth> ground_truth;
  std::vector<ProductRecord> products;
};

// Rating uplift contributed by an image of each class.
inline constexpr std::array<double, kNumClasses> kClassAppeal = {1.5, 0.5, 1.0, -0.5,
                                                                 0.8, -1.5, 0.2, 1.2};

inline SynthCorpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  SynthCorpus corpus;
  for (int c : spec.classes) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      corpus.records.push_back(generate_class_sample(c, spec.noise_sigma, spec.seed, i, spec.topology));
      corpus.ground_truth.push_back({corpus.records.back().image_id, c});
    }
  }
  Rng rng = Rng::derived(spec.seed, 0x5ca1ab1eULL);
  std::vector<std::size_t> order(corpus.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());

  static const std::array<const char*, 4> kSubcategories = {"Polo", "T-Shirt", "Shirt", "Dress"};
  static const std::array<const char*, 2> kTypes = {"Men", "Women"};
  std::vector<LandmarkRecord> records;
  std::vector<GroundTruth> truth;
  for (std::size_t start = 0; start < order.size(); start += spec.product_grouping) {
    ProductRecord p;
    char id[32];
    std::snprintf(id, sizeof id, "P%05zu", start / spec.product_grouping);
    p.product_id = id;
    p.category = "Clothing";
    p.subcategory = kSubcategories[rng.below(kSubcategories.size())];
    p.product_type = kTypes[rng.below(kTypes.size())];
    double appeal = 0.0;
    const std::size_t end = std::min(order.size(), start + spec.product_grouping);
    for (std::size_t i = start; i < end; ++i) {
      LandmarkRecord rec = corpus.records[order[i]];
      rec.product_id = p.product_id;
      p.image_ids.push_back(rec.image_id);
      appeal += kClassAppeal[static_cast<std::size_t>(corpus.ground_truth[order[i]].class_id)];
      truth.push_back(corpus.ground_truth[order[i]]);
      records.push_back(std::move(rec));
    }
    appeal /= static_cast<double>(end - start);
    const double rating = std::clamp(3.2 + 0.8 * appeal + 0.2 * rng.gaussian(), 1.0, 5.0);
    p.avg_rating = std::round(rating * 10.0) / 10.0;
    p.num_reviews = static_cast<std::int64_t>(5 + rng.below(5000));
    corpus.products.push_back(std::move(p));
  }
  corpus.records = std::move(records);
  corpus.ground_truth = std::move(truth);
  return corpus;
}

}  // namespace unpose::synth
