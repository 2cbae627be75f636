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

#include <filesystem>

#include "fixtures.hpp"
#include "unpose/bundle.hpp"
#include "unpose/pipeline.hpp"
#include "unpose/synthgen.hpp"

namespace unpose {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

ModelBundle small_bundle(bool autoencoder, TopologyName topo = TopologyName::kPose2D17) {
  synth::CorpusSpec spec;
  spec.classes = {0, 2, 4, 5};
  spec.per_class = 20;
  spec.topology = topo;
  spec.seed = 3;
  const auto corpus = synth::generate_corpus(spec);
  TrainConfig cfg;
  cfg.k = 4;
  cfg.seed = 3;
  cfg.use_autoencoder = autoencoder;
  cfg.autoencoder.epochs = 3;
  cfg.trained_at = 1700000000;
  return train_flow(corpus.records, corpus.products, cfg).bundle;
}

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::kIo;
}

TEST(Bundle, RoundTripIsExact) {
  for (bool ae : {false, true}) {
    for (auto topo : {TopologyName::kPose2D17, TopologyName::kPose3D33}) {
      const auto b = small_bundle(ae, topo);
      const std::string bytes = serialize_bundle(b);
      const auto back = deserialize_bundle(bytes);
      EXPECT_EQ(back, b);
      EXPECT_EQ(serialize_bundle(back), bytes);
      EXPECT_EQ(back.autoencoder.has_value(), ae);
    }
  }
}

TEST(Bundle, SaveLoadSaveIsByteIdentical) {
  TempDir dir("bundle");
  const auto b = small_bundle(true);
  save_bundle(b, dir / "a.bin");
  save_bundle(load_bundle(dir / "a.bin"), dir / "b.bin");
  EXPECT_EQ(read_file(dir / "a.bin"), read_file(dir / "b.bin"));
  EXPECT_FALSE(fs::exists(dir / "a.bin.tmp"));
}

TEST(Bundle, FrequencyRankerRoundTrips) {
  auto b = small_bundle(false);
  ASSERT_EQ(b.rank_model.kind, RankerKind::kGradientBoosting);
  RankModel freq;
  freq.kind = RankerKind::kFrequency;
  freq.learning_rate = 0.0;
  freq.feature_encoding = b.rank_model.feature_encoding;
  freq.frequency_global.assign(b.centroid_model.k, 1.0);
  freq.frequency_by_category["Clothing"].assign(b.centroid_model.k, 2.0);
  b.rank_model = freq;
  EXPECT_EQ(deserialize_bundle(serialize_bundle(b)), b);
}

TEST(Bundle, TruncationIsCorruptFile) {
  const std::string bytes = serialize_bundle(small_bundle(true));
  for (std::size_t len = 0; len < bytes.size(); len += 1 + len / 16) {
    EXPECT_EQ(kind_of([&] { deserialize_bundle(std::string_view(bytes).substr(0, len)); }),
              ErrorKind::kCorruptFile)
        << "length " << len;
  }
}

TEST(Bundle, TrailingBytesAreRejected) {
  const std::string bytes = serialize_bundle(small_bundle(false)) + "x";
  EXPECT_EQ(kind_of([&] { deserialize_bundle(bytes); }), ErrorKind::kCorruptFile);
}

TEST(Bundle, BadMagic) {
  std::string bytes = serialize_bundle(small_bundle(false));
  bytes[0] = 'X';
  EXPECT_EQ(kind_of([&] { deserialize_bundle(bytes); }), ErrorKind::kCorruptFile);
}

TEST(Bundle, UnknownVersion) {
  std::string bytes = serialize_bundle(small_bundle(false));
  bytes[8] = 2;
  EXPECT_EQ(kind_of([&] { deserialize_bundle(bytes); }), ErrorKind::kVersionMismatch);
}

TEST(Bundle, EditedFeatureConfigIsFingerprintMismatch) {
  std::string bytes = serialize_bundle(small_bundle(true));
  const auto at = bytes.find("x_left_shoulder");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 2] = 'L';
  EXPECT_EQ(kind_of([&] { deserialize_bundle(bytes); }), ErrorKind::kFingerprintMismatch);
}

TEST(Bundle, MismatchedCentroidFingerprint) {
  auto b = small_bundle(false);
  b.centroid_model.feature_config_fingerprint ^= 1;
  EXPECT_EQ(kind_of([&] { check_bundle_consistency(b); }), ErrorKind::kFingerprintMismatch);
  EXPECT_EQ(kind_of([&] { deserialize_bundle(serialize_bundle(b)); }), ErrorKind::kFingerprintMismatch);
}

TEST(Bundle, SingleByteFlipsNeverCrash) {
  const std::string bytes = serialize_bundle(small_bundle(true));
  std::size_t rejected = 0, loaded = 0;
  for (std::size_t i = 0; i < bytes.size(); i += 7) {
    std::string mutated = bytes;
    mutated[i] = static_cast<char>(mutated[i] ^ 0x5a);
    try {
      const auto b = deserialize_bundle(mutated);
      check_bundle_consistency(b);
      ++loaded;
    } catch (const Error&) {
      ++rejected;
    }
  }
  EXPECT_GT(rejected, 0u);
  EXPECT_GT(loaded, 0u);  // flips inside weights are indistinguishable from training
}

TEST(Bundle, MissingFileIsIoError) {
  EXPECT_EQ(kind_of([] { load_bundle("/nonexistent/dir/model.bin"); }), ErrorKind::kIo);
}

TEST(Bundle, FailedSaveLeavesNoPartialFile) {
  TempDir dir("bundle");
  auto b = small_bundle(false);
  b.centroid_model.feature_config_fingerprint ^= 1;
  EXPECT_THROW(save_bundle(b, dir / "bad.bin"), Error);
  EXPECT_FALSE(fs::exists(dir / "bad.bin"));
  EXPECT_FALSE(fs::exists(dir / "bad.bin.tmp"));
}

}  // namespace
}  // namespace unpose
