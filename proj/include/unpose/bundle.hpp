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

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unpose/autoencoder.hpp"
#include "unpose/error.hpp"
#include "unpose/features.hpp"
#include "unpose/kmeans.hpp"
#include "unpose/ranking.hpp"

namespace unpose {

inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr std::string_view kBundleMagic{"UNPOSEMB", 8};

struct TrainingSummary {
  std::uint64_t n_products = 0;
  std::uint64_t n_images = 0;
  std::uint64_t k = 0;
  double objective = 0.0;
  std::int64_t trained_at = 0;  // unix seconds, caller supplied

  friend bool operator==(const TrainingSummary&, const TrainingSummary&) = default;
};

struct ModelBundle {
  std::uint32_t version = kBundleVersion;
  FeatureConfig feature_config;
  std::optional<AutoencoderModel> autoencoder;
  CentroidModel centroid_model;
  RankModel rank_model;
  TrainingSummary training_summary;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Throws kFingerprintMismatch when the config, autoencoder and centroids
/// do not belong together, kCorruptFile on structural inconsistencies.
inline void check_bundle_consistency(const ModelBundle& b) {
  const auto& fc = b.feature_config;
  if (fc.compute_fingerprint() != fc.fingerprint) {
    throw Error(ErrorKind::kFingerprintMismatch, "feature config does not match its fingerprint");
  }
  if (fc.feature_names.size() != fc.dimension) {
    throw Error(ErrorKind::kFingerprintMismatch, "feature config dimension disagrees with its layout");
  }
  if (b.centroid_model.feature_config_fingerprint != fc.fingerprint) {
    throw Error(ErrorKind::kFingerprintMismatch, "centroids were trained under a different feature config");
  }
  std::size_t expected_dim = fc.dimension;
  if (b.autoencoder) {
    if (b.autoencoder->config_fingerprint != fc.fingerprint) {
      throw Error(ErrorKind::kFingerprintMismatch,
                  "autoencoder was trained under a different feature config");
    }
    if (b.autoencoder->input_dim() != fc.dimension) {
      throw Error(ErrorKind::kFingerprintMismatch, "autoencoder input width disagrees with feature config");
    }
    expected_dim = kBottleneckDim;
  }
  const auto& cm = b.centroid_model;
  if (cm.dimension != expected_dim || cm.centroids.cols() != cm.dimension ||
      cm.centroids.rows() != cm.k || cm.k == 0) {
    throw Error(ErrorKind::kCorruptFile, "centroid matrix shape is inconsistent");
  }
  if (b.rank_model.feature_encoding.k != cm.k) {
    throw Error(ErrorKind::kCorruptFile, "rank model covers a different number of centroids");
  }
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    bytes_.append(s);
  }
  void reals(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void strings(const std::vector<std::string>& v) {
    u64(v.size());
    for (const auto& s : v) str(s);
  }
  void raw(std::string_view s) { bytes_.append(s); }
  std::string& bytes() { return bytes_; }

 private:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  }
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
  std::int64_t i64() { return static_cast<std::int64_t>(get<std::uint64_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str() { return std::string(take(count(1))); }
  std::vector<double> reals() {
    std::vector<double> v(count(8));
    for (double& x : v) x = f64();
    return v;
  }
  std::vector<std::string> strings() {
    std::vector<std::string> v(count(8));
    for (auto& s : v) s = str();
    return v;
  }
  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - at_) throw Error(ErrorKind::kCorruptFile, "bundle is truncated");
    auto out = bytes_.substr(at_, n);
    at_ += n;
    return out;
  }
  bool done() const { return at_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - at_; }

 private:
  // Element count, rejected early if it could not possibly fit.
  std::size_t count(std::size_t min_element_size) {
    const std::uint64_t n = u64();
    if (n > (bytes_.size() - at_) / min_element_size) {
      throw Error(ErrorKind::kCorruptFile, "bundle is truncated");
    }
    return static_cast<std::size_t>(n);
  }
  template <typename T>
  T get() {
    auto b = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(b[i])) << (8 * i);
    }
    return v;
  }
  std::string_view bytes_;
  std::size_t at_ = 0;
};

inline void write_layers(ByteWriter& w, const std::vector<DenseLayer>& layers) {
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) {
    w.u64(l.in);
    w.u64(l.out);
    w.u8(l.relu ? 1 : 0);
    w.reals(l.weights);
    w.reals(l.biases);
  }
}

inline std::vector<DenseLayer> read_layers(ByteReader& r) {
  // Smallest possible layer: two u64 dims, a flag and two empty arrays.
  constexpr std::size_t kMinLayerBytes = 8 + 8 + 1 + 8 + 8;
  const std::uint32_t count = r.u32();
  if (count > r.remaining() / kMinLayerBytes) throw Error(ErrorKind::kCorruptFile, "bundle is truncated");
  std::vector<DenseLayer> layers(count);
  for (auto& l : layers) {
    l.in = r.u64();
    l.out = r.u64();
    const auto relu = r.u8();
    if (relu > 1) throw Error(ErrorKind::kCorruptFile, "bad activation flag");
    l.relu = relu == 1;
    l.weights = r.reals();
    l.biases = r.reals();
    if (l.weights.size() != l.in * l.out || l.biases.size() != l.out) {
      throw Error(ErrorKind::kCorruptFile, "layer weights do not match declared shape");
    }
  }
  return layers;
}

inline void section(ByteWriter& out, std::string_view tag, ByteWriter& payload) {
  out.raw(tag);
  out.u64(payload.bytes().size());
  out.raw(payload.bytes());
}

}  // namespace detail

/// Serialized layout: magic "UNPOSEMB", u32 version, u32 section count, then
/// tagged sections (4-byte tag, u64 length, payload) CONF, SUMM, CENT,
/// optional AENC, RANK. Integers and IEEE-754 doubles are little-endian.
inline std::string serialize_bundle(const ModelBundle& b) {
  using detail::ByteWriter;
  ByteWriter conf;
  conf.str(topology_string(b.feature_config.topology));
  conf.u64(b.feature_config.dimension);
  conf.f64(b.feature_config.ratio_clamp);
  conf.f64(b.feature_config.ratio_epsilon);
  conf.strings(b.feature_config.feature_names);
  conf.u64(b.feature_config.fingerprint);

  ByteWriter summ;
  summ.u64(b.training_summary.n_products);
  summ.u64(b.training_summary.n_images);
  summ.u64(b.training_summary.k);
  summ.f64(b.training_summary.objective);
  summ.i64(b.training_summary.trained_at);

  const auto& cm = b.centroid_model;
  ByteWriter cent;
  cent.u64(cm.feature_config_fingerprint);
  cent.u64(cm.k);
  cent.u64(cm.dimension);
  cent.reals(cm.centroids.data());
  cent.f64(cm.objective);
  cent.u64(cm.iterations_run);

  const auto& rm = b.rank_model;
  ByteWriter rank;
  rank.u8(static_cast<std::uint8_t>(rm.kind));
  rank.f64(rm.learning_rate);
  rank.f64(rm.base_score);
  rank.u64(rm.num_rounds);
  rank.u64(rm.max_depth);
  rank.u64(rm.feature_encoding.k);
  rank.strings(rm.feature_encoding.categories);
  rank.strings(rm.feature_encoding.subcategories);
  rank.strings(rm.feature_encoding.product_types);
  rank.u64(rm.trees.size());
  for (const auto& t : rm.trees) {
    rank.u64(t.nodes.size());
    for (const auto& n : t.nodes) {
      rank.i32(n.feature);
      rank.f64(n.threshold);
      rank.i32(n.left);
      rank.i32(n.right);
      rank.f64(n.value);
    }
  }
  rank.reals(rm.frequency_global);
  rank.u64(rm.frequency_by_category.size());
  for (const auto& [category, counts] : rm.frequency_by_category) {
    rank.str(category);
    rank.reals(counts);
  }

  ByteWriter out;
  out.raw(kBundleMagic);
  out.u32(b.version);
  out.u32(b.autoencoder ? 5 : 4);
  detail::section(out, "CONF", conf);
  detail::section(out, "SUMM", summ);
  detail::section(out, "CENT", cent);
  if (b.autoencoder) {
    ByteWriter aenc;
    aenc.u64(b.autoencoder->config_fingerprint);
    detail::write_layers(aenc, b.autoencoder->encoder);
    detail::write_layers(aenc, b.autoencoder->decoder);
    aenc.reals(b.autoencoder->input_mean);
    aenc.reals(b.autoencoder->input_scale);
    detail::section(out, "AENC", aenc);
  }
  detail::section(out, "RANK", rank);
  return std::move(out.bytes());
}

inline ModelBundle deserialize_bundle(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < kBundleMagic.size() || in.take(kBundleMagic.size()) != kBundleMagic) {
    throw Error(ErrorKind::kCorruptFile, "not a model bundle (bad magic)");
  }
  ModelBundle b;
  b.version = in.u32();
  if (b.version != kBundleVersion) {
    throw Error(ErrorKind::kVersionMismatch, "unsupported bundle version " + std::to_string(b.version));
  }
  const std::uint32_t sections = in.u32();
  bool have_conf = false, have_summ = false, have_cent = false, have_rank = false;
  for (std::uint32_t s = 0; s < sections; ++s) {
    const std::string tag(in.take(4));
    const std::uint64_t length = in.u64();
    if (length > bytes.size()) throw Error(ErrorKind::kCorruptFile, "bundle is truncated");
    detail::ByteReader r(in.take(static_cast<std::size_t>(length)));
    if (tag == "CONF" && !have_conf) {
      auto& fc = b.feature_config;
      const std::string topo = r.str();
      auto name = parse_topology_name(topo);
      if (!name) throw Error(ErrorKind::kFingerprintMismatch, "feature config names unknown topology");
      fc.topology = *name;
      fc.dimension = r.u64();
      fc.ratio_clamp = r.f64();
      fc.ratio_epsilon = r.f64();
      fc.feature_names = r.strings();
      fc.fingerprint = r.u64();
      have_conf = true;
    } else if (tag == "SUMM" && !have_summ) {
      auto& ts = b.training_summary;
      ts.n_products = r.u64();
      ts.n_images = r.u64();
      ts.k = r.u64();
      ts.objective = r.f64();
      ts.trained_at = r.i64();
      have_summ = true;
    } else if (tag == "CENT" && !have_cent) {
      auto& cm = b.centroid_model;
      cm.feature_config_fingerprint = r.u64();
      cm.k = r.u64();
      cm.dimension = r.u64();
      auto values = r.reals();
      if (cm.k == 0 || cm.dimension == 0 || values.size() % cm.dimension != 0 ||
          values.size() / cm.dimension != cm.k) {
        throw Error(ErrorKind::kCorruptFile, "centroid matrix does not match declared shape");
      }
      cm.centroids = Matrix(cm.k, cm.dimension);
      cm.centroids.data() = std::move(values);
      cm.objective = r.f64();
      cm.iterations_run = r.u64();
      have_cent = true;
    } else if (tag == "AENC" && !b.autoencoder) {
      AutoencoderModel ae;
      ae.config_fingerprint = r.u64();
      ae.encoder = detail::read_layers(r);
      ae.decoder = detail::read_layers(r);
      ae.input_mean = r.reals();
      ae.input_scale = r.reals();
      if (ae.encoder.size() != 4 || ae.decoder.size() != 2 ||
          ae.encoder.back().out != kBottleneckDim || ae.decoder.front().in != kBottleneckDim ||
          ae.decoder.back().out != ae.encoder.front().in) {
        throw Error(ErrorKind::kCorruptFile, "autoencoder layer stack is malformed");
      }
      for (std::size_t l = 1; l < ae.encoder.size(); ++l) {
        if (ae.encoder[l].in != ae.encoder[l - 1].out) {
          throw Error(ErrorKind::kCorruptFile, "autoencoder layer stack is malformed");
        }
      }
      if (ae.decoder[1].in != ae.decoder[0].out) {
        throw Error(ErrorKind::kCorruptFile, "autoencoder layer stack is malformed");
      }
      if (ae.input_scale.size() != ae.input_mean.size() ||
          (!ae.input_mean.empty() && ae.input_mean.size() != ae.encoder.front().in)) {
        throw Error(ErrorKind::kCorruptFile, "autoencoder input scaling is malformed");
      }
      for (double s : ae.input_scale) {
        if (!(s > 0.0)) throw Error(ErrorKind::kCorruptFile, "autoencoder input scaling is malformed");
      }
      b.autoencoder = std::move(ae);
    } else if (tag == "RANK" && !have_rank) {
      auto& rm = b.rank_model;
      const auto kind = r.u8();
      if (kind > 1) throw Error(ErrorKind::kCorruptFile, "unknown ranker kind");
      rm.kind = static_cast<RankerKind>(kind);
      rm.learning_rate = r.f64();
      rm.base_score = r.f64();
      rm.num_rounds = r.u64();
      rm.max_depth = r.u64();
      rm.feature_encoding.k = r.u64();
      rm.feature_encoding.categories = r.strings();
      rm.feature_encoding.subcategories = r.strings();
      rm.feature_encoding.product_types = r.strings();
      const std::size_t width = rm.feature_encoding.width();
      rm.trees.resize(static_cast<std::size_t>(std::min<std::uint64_t>(r.u64(), length)));
      for (auto& t : rm.trees) {
        const std::uint64_t count = r.u64();
        if (count == 0 || count > length) throw Error(ErrorKind::kCorruptFile, "bad tree size");
        t.nodes.resize(static_cast<std::size_t>(count));
        for (auto& n : t.nodes) {
          n.feature = r.i32();
          n.threshold = r.f64();
          n.left = r.i32();
          n.right = r.i32();
          n.value = r.f64();
        }
        // Children must point forward so traversal always terminates.
        for (std::size_t i = 0; i < t.nodes.size(); ++i) {
          const auto& n = t.nodes[i];
          if (n.feature < 0) continue;
          const auto valid = [&](std::int32_t c) {
            return c > static_cast<std::int32_t>(i) && static_cast<std::size_t>(c) < t.nodes.size();
          };
          if (static_cast<std::size_t>(n.feature) >= width || !valid(n.left) || !valid(n.right)) {
            throw Error(ErrorKind::kCorruptFile, "tree node references are out of range");
          }
        }
      }
      rm.frequency_global = r.reals();
      const std::uint64_t categories = r.u64();
      if (categories > length) throw Error(ErrorKind::kCorruptFile, "bundle is truncated");
      for (std::uint64_t c = 0; c < categories; ++c) {
        std::string name = r.str();
        rm.frequency_by_category[name] = r.reals();
      }
      if (rm.kind == RankerKind::kFrequency) {
        if (rm.frequency_global.size() != rm.feature_encoding.k) {
          throw Error(ErrorKind::kCorruptFile, "frequency table size mismatch");
        }
        for (const auto& [_, v] : rm.frequency_by_category) {
          if (v.size() != rm.feature_encoding.k) {
            throw Error(ErrorKind::kCorruptFile, "frequency table size mismatch");
          }
        }
      }
      have_rank = true;
    } else {
      throw Error(ErrorKind::kCorruptFile, "unexpected bundle section '" + tag + "'");
    }
    if (!r.done()) throw Error(ErrorKind::kCorruptFile, "section '" + tag + "' has trailing bytes");
  }
  if (!in.done()) throw Error(ErrorKind::kCorruptFile, "bundle has trailing bytes");
  if (!have_conf || !have_summ || !have_cent || !have_rank) {
    throw Error(ErrorKind::kCorruptFile, "bundle is missing a required section");
  }
  check_bundle_consistency(b);
  return b;
}

/// Writes atomically: the bundle goes to a sibling temporary file that is
/// renamed over the destination only after a complete write.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorKind::kIo, "failed writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::kIo, "cannot move bundle into place at '" + path.string() + "'");
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  check_bundle_consistency(bundle);
  write_file_atomic(path, serialize_bundle(bundle));
}

inline ModelBundle load_bundle(const std::filesystem::path& path) {
  return deserialize_bundle(read_file(path));
}

}  // namespace unpose
