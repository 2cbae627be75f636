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

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "unpose/landmarks.hpp"

namespace unpose::testing {

// A detected record whose keypoints sit on a simple grid inside a
// width x height frame.
inline LandmarkRecord grid_record(TopologyName topology, std::string image_id = "img-1",
                                  std::string product_id = "P1", int width = 500,
                                  int height = 1000) {
  const Topology& t = topology_for(topology);
  LandmarkRecord r{std::move(image_id), std::move(product_id), topology, width, height, true, {}};
  for (std::size_t i = 0; i < t.keypoint_count(); ++i) {
    Keypoint kp;
    kp.x = width * (0.2 + 0.6 * static_cast<double>(i % 5) / 4.0);
    kp.y = height * (0.05 + 0.9 * static_cast<double>(i) / static_cast<double>(t.keypoint_count()));
    if (t.has_z) kp.z = -0.1 + 0.01 * static_cast<double>(i);
    r.keypoints.push_back(kp);
  }
  return r;
}

inline LandmarkRecord undetected_record(TopologyName topology, std::string image_id = "img-x",
                                        std::string product_id = "P1") {
  return {std::move(image_id), std::move(product_id), topology, 640, 480, false, {}};
}

// Scratch directory removed on scope exit; unique per process and tag.
class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() /
              ("unpose-" + tag + "-" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace unpose::testing
