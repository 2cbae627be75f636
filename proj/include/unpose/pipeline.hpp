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
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "unpose/autoencoder.hpp"
#include "unpose/bundle.hpp"
#include "unpose/error.hpp"
#include "unpose/features.hpp"
#include "unpose/kmeans.hpp"
#include "unpose/landmarks.hpp"
#include "unpose/ranking.hpp"

namespace unpose {

inline constexpr std::size_t kDefaultPThreshold = 5;

// ---------------------------------------------------------------------------
// Product metadata and label files

inline ProductRecord product_from_json(const nlohmann::json& j) {
  ProductRecord p;
  try {
    p.product_id = j.at("product_id").get<std::string>();
    p.category = j.at("category").get<std::string>();
    p.subcategory = j.at("subcategory").get<std::string>();
    p.product_type = j.at("product_type").get<std::string>();
    p.avg_rating = j.at("avg_rating").get<double>();
    p.num_reviews = j.at("num_reviews").get<std::int64_t>();
    p.image_ids = j.at("image_ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("bad product record: ") + e.what());
  }
  if (!(p.avg_rating >= 0.0 && p.avg_rating <= 5.0)) {
    throw Error(ErrorKind::kValidation, "product '" + p.product_id + "' avg_rating outside [0,5]");
  }
  if (p.num_reviews < 0) {
    throw Error(ErrorKind::kValidation, "product '" + p.product_id + "' has negative num_reviews");
  }
  return p;
}

inline std::string serialize_product(const ProductRecord& p) {
  nlohmann::ordered_json j;
  j["product_id"] = p.product_id;
  j["category"] = p.category;
  j["subcategory"] = p.subcategory;
  j["product_type"] = p.product_type;
  j["avg_rating"] = p.avg_rating;
  j["num_reviews"] = p.num_reviews;
  j["image_ids"] = p.image_ids;
  return j.dump();
}

namespace detail {

template <typename Fn>
void for_each_json_line(std::istream& in, const char* what, Fn&& fn) {
  if (!in) throw Error(ErrorKind::kIo, std::string(what) + " stream is not readable");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace detail

/// Line-delimited product metadata; duplicate product ids are rejected.
inline std::vector<ProductRecord> read_products(std::istream& in) {
  std::vector<ProductRecord> out;
  std::set<std::string> seen;
  detail::for_each_json_line(in, "products", [&](const nlohmann::json& j) {
    out.push_back(product_from_json(j));
    if (!seen.insert(out.back().product_id).second) {
      throw Error(ErrorKind::kValidation, "duplicate product_id '" + out.back().product_id + "'");
    }
  });
  return out;
}

struct MissingLabel {
  std::string product_id;
  std::vector<std::size_t> true_missing;
};

inline std::vector<MissingLabel> read_labels(std::istream& in) {
  std::vector<MissingLabel> out;
  detail::for_each_json_line(in, "labels", [&](const nlohmann::json& j) {
    MissingLabel l;
    l.product_id = j.at("product_id").get<std::string>();
    l.true_missing = j.at("true_missing").get<std::vector<std::size_t>>();
    out.push_back(std::move(l));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reference selection

/// Products with at least min_images images, most popular first (ties by
/// product_id), truncated to top_k.
inline std::vector<std::string> select_reference(std::span<const ProductRecord> products,
                                                 std::size_t min_images = 10,
                                                 std::size_t top_k = 3000) {
  if (products.empty()) throw Error(ErrorKind::kPrecondition, "no products to select from");
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& p : products) {
    if (p.image_ids.size() >= min_images) ranked.push_back({popularity_target(p), p.product_id});
  }
  if (ranked.empty()) {
    throw Error(ErrorKind::kPrecondition,
                "no product has at least " + std::to_string(min_images) +
                    " images; relax the minimum image count");
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  if (ranked.size() > top_k) ranked.resize(top_k);
  std::vector<std::string> ids;
  for (auto& r : ranked) ids.push_back(std::move(r.second));
  return ids;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t k = 8;
  std::uint64_t seed = 0;
  bool use_autoencoder = true;
  TrainingHyperparams autoencoder;
  AutoencoderShape autoencoder_shape;
  std::size_t kmeans_restarts = 4;
  std::size_t kmeans_max_iter = 300;
  double kmeans_tol = 1e-6;
  RankerConfig ranker;
  std::size_t threads = 1;
  std::int64_t trained_at = 0;
  // When set, only products passing select_reference are used.
  std::optional<std::pair<std::size_t, std::size_t>> reference_filter;  // (min_images, top_k)
};

struct TrainResult {
  ModelBundle bundle;
  std::vector<Assignment> assignments;  // one per training image, input order
  std::vector<double> autoencoder_loss;
  std::vector<Diagnostic> warnings;
};

namespace detail {

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

inline void throw_on_parse_errors(const ParseResult& parsed) {
  for (const auto& d : parsed.diagnostics) {
    if (d.severity == Severity::kError) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(d.line) + ": " + d.message);
    }
  }
}

}  // namespace detail

/// Embeds records the way the bundle expects: engineered features, then the
/// encoder when the bundle carries one.
inline Matrix embed_for_bundle(const ModelBundle& bundle, std::span<const LandmarkRecord> records) {
  std::vector<NormalizedLandmarkSet> normalized;
  for (const auto& r : records) {
    if (r.topology != bundle.feature_config.topology) {
      throw Error(ErrorKind::kFingerprintMismatch,
                  "image '" + r.image_id + "' uses topology " + std::string(topology_string(r.topology)) +
                      " but the model was trained on " +
                      std::string(topology_string(bundle.feature_config.topology)));
    }
    normalized.push_back(normalize(r));
  }
  Matrix raw = to_matrix(embed_corpus(normalized, bundle.feature_config));
  if (raw.empty()) raw = Matrix(0, bundle.feature_config.dimension);
  if (bundle.autoencoder) return encode_matrix(*bundle.autoencoder, raw);
  return raw;
}

/// parse -> normalize -> embed -> [autoencoder] -> k-means -> ranking.
inline TrainResult train_flow(std::span<const LandmarkRecord> landmarks,
                              std::span<const ProductRecord> products, const TrainConfig& config) {
  TrainResult result;
  std::vector<LandmarkRecord> records(landmarks.begin(), landmarks.end());

  std::vector<ProductRecord> reference(products.begin(), products.end());
  if (config.reference_filter) {
    const auto ids = detail::stage("select-reference", [&] {
      return select_reference(products, config.reference_filter->first,
                              config.reference_filter->second);
    });
    const std::set<std::string> keep(ids.begin(), ids.end());
    std::erase_if(reference, [&](const ProductRecord& p) { return !keep.count(p.product_id); });
    std::erase_if(records, [&](const LandmarkRecord& r) { return !keep.count(r.product_id); });
  }

  detail::stage("validate", [&] {
    if (records.empty()) throw Error(ErrorKind::kPrecondition, "no training images");
    std::set<std::string> known;
    for (const auto& p : reference) known.insert(p.product_id);
    for (const auto& r : records) {
      if (r.topology != records.front().topology) {
        throw Error(ErrorKind::kValidation, "mixed topologies in training landmarks");
      }
      if (!known.count(r.product_id)) {
        throw Error(ErrorKind::kPrecondition,
                    "image '" + r.image_id + "' refers to unknown product '" + r.product_id + "'");
      }
    }
  });

  ModelBundle& bundle = result.bundle;
  bundle.feature_config = FeatureConfig::for_topology(records.front().topology);
  const auto& fc = bundle.feature_config;

  std::vector<std::string> image_ids, product_ids;
  for (const auto& r : records) {
    image_ids.push_back(r.image_id);
    product_ids.push_back(r.product_id);
  }

  Matrix features = detail::stage("embed", [&] {
    std::vector<NormalizedLandmarkSet> normalized;
    for (const auto& r : records) normalized.push_back(normalize(r));
    return to_matrix(embed_corpus(normalized, fc));
  });

  if (config.use_autoencoder) {
    features = detail::stage("autoencoder", [&] {
      TrainingHyperparams hyper = config.autoencoder;
      hyper.seed = config.seed;
      auto trained = train_autoencoder(init_autoencoder(fc.dimension, config.seed, config.autoencoder_shape),
                                       features, hyper);
      trained.model.config_fingerprint = fc.fingerprint;
      result.autoencoder_loss = std::move(trained.loss_trace);
      bundle.autoencoder = std::move(trained.model);
      return encode_matrix(*bundle.autoencoder, features);
    });
  }

  detail::stage("cluster", [&] {
    KMeansOptions opt;
    opt.k = config.k;
    opt.seed = config.seed;
    opt.max_iter = config.kmeans_max_iter;
    opt.tol = config.kmeans_tol;
    opt.restarts = config.kmeans_restarts;
    opt.threads = config.threads;
    auto fit = kmeans_fit(features, opt, image_ids);
    bundle.centroid_model = std::move(fit.model);
    bundle.centroid_model.feature_config_fingerprint = fc.fingerprint;
    result.assignments = assign_all(bundle.centroid_model, features, image_ids, product_ids);
  });

  detail::stage("rank", [&] {
    std::set<std::string> used(product_ids.begin(), product_ids.end());
    std::vector<ProductRecord> used_products;
    for (const auto& p : reference) {
      if (used.count(p.product_id)) used_products.push_back(p);
    }
    const auto encoding = FeatureEncoding::from_products(bundle.centroid_model.k, used_products);
    const auto rows = build_training_rows(result.assignments, used_products, encoding);
    bundle.rank_model = fit_ranker(rows, encoding, config.ranker);
    bundle.training_summary = {used_products.size(), records.size(), bundle.centroid_model.k,
                               bundle.centroid_model.objective, config.trained_at};
  });
  check_bundle_consistency(bundle);
  return result;
}

inline TrainResult train_flow(std::istream& landmarks, std::span<const ProductRecord> products,
                              const TrainConfig& config) {
  ParseResult parsed = detail::stage("parse", [&] {
    auto p = parse_landmark_records(landmarks);
    detail::throw_on_parse_errors(p);
    return p;
  });
  auto result = train_flow(parsed.records, products, config);
  result.warnings = std::move(parsed.diagnostics);
  return result;
}

// ---------------------------------------------------------------------------
// Inference

struct MissingReport {
  std::string product_id;
  std::vector<Assignment> assignments;          // one per subject image
  std::vector<std::size_t> present_centroids;   // ascending
  std::vector<CentroidScore> missing_centroids; // descending score
  bool qualifies = false;                       // fewer images than the p-threshold

  std::vector<std::size_t> missing_indices() const {
    std::vector<std::size_t> out;
    for (const auto& m : missing_centroids) out.push_back(m.centroid_index);
    return out;
  }
};

/// Assigns each subject image to its nearest pose class and reports every
/// class without an image, most important first.
inline MissingReport infer_flow(const ModelBundle& bundle, std::span<const LandmarkRecord> subject,
                                const ProductRecord& product_meta,
                                std::size_t p_threshold = kDefaultPThreshold) {
  for (const auto& r : subject) {
    if (r.product_id != product_meta.product_id) {
      throw Error(ErrorKind::kPrecondition, "image '" + r.image_id + "' belongs to product '" +
                                                r.product_id + "', not '" + product_meta.product_id + "'");
    }
  }
  MissingReport report;
  report.product_id = product_meta.product_id;
  report.qualifies = subject.size() < p_threshold;

  const Matrix x = embed_for_bundle(bundle, subject);
  std::vector<bool> present(bundle.centroid_model.k, false);
  for (std::size_t i = 0; i < subject.size(); ++i) {
    report.assignments.push_back(
        nearest_centroid(bundle.centroid_model, x.row(i), subject[i].image_id, subject[i].product_id));
    present[report.assignments.back().centroid_index] = true;
  }
  std::vector<std::size_t> missing;
  for (std::size_t j = 0; j < present.size(); ++j) {
    (present[j] ? report.present_centroids : missing).push_back(j);
  }
  auto scores = score_centroids(bundle.rank_model, Cohort::of(product_meta), missing);
  std::map<std::size_t, double> by_index;
  for (const auto& s : scores) by_index[s.centroid_index] = s.score;
  for (std::size_t j : sort_by_rank(std::move(scores))) report.missing_centroids.push_back({j, by_index[j]});
  return report;
}

inline std::string serialize_report(const MissingReport& r) {
  nlohmann::ordered_json j;
  j["product_id"] = r.product_id;
  j["image_count"] = r.assignments.size();
  j["qualifies"] = r.qualifies;
  auto images = nlohmann::ordered_json::array();
  for (const auto& a : r.assignments) {
    nlohmann::ordered_json e;
    e["image_id"] = a.image_id;
    e["centroid"] = a.centroid_index;
    e["distance"] = a.distance;
    images.push_back(std::move(e));
  }
  j["assignments"] = std::move(images);
  j["present_centroids"] = r.present_centroids;
  auto missing = nlohmann::ordered_json::array();
  for (const auto& m : r.missing_centroids) {
    nlohmann::ordered_json e;
    e["centroid"] = m.centroid_index;
    e["score"] = m.score;
    missing.push_back(std::move(e));
  }
  j["missing_centroids"] = std::move(missing);
  return j.dump();
}

// ---------------------------------------------------------------------------
// Evaluation

struct LabeledImageset {
  ProductRecord product;
  std::vector<LandmarkRecord> images;
  std::vector<std::size_t> true_missing;
};

struct EvalEntry {
  std::string product_id;
  std::vector<std::size_t> detected_missing;  // ascending
  std::vector<std::size_t> true_missing;      // ascending
  // |detected| / |true|; can exceed 1 on over-detection. Absent when the
  // imageset has no true missing labels.
  std::optional<double> accuracy;
  double precision = 1.0;       // |detected ∩ true| / |detected|, 1 when nothing detected
  std::optional<double> recall; // |detected ∩ true| / |true|
};

struct EvalReport {
  std::vector<EvalEntry> entries;
  std::optional<double> mean_accuracy;
  std::optional<double> mean_precision;
  std::optional<double> mean_recall;
  std::vector<std::string> warnings;
};

inline EvalEntry score_imageset(std::string product_id, std::vector<std::size_t> detected,
                                std::vector<std::size_t> truth) {
  std::sort(detected.begin(), detected.end());
  detected.erase(std::unique(detected.begin(), detected.end()), detected.end());
  std::sort(truth.begin(), truth.end());
  truth.erase(std::unique(truth.begin(), truth.end()), truth.end());
  std::vector<std::size_t> both;
  std::set_intersection(detected.begin(), detected.end(), truth.begin(), truth.end(),
                        std::back_inserter(both));
  EvalEntry e;
  e.product_id = std::move(product_id);
  const double hits = static_cast<double>(both.size());
  if (!truth.empty()) {
    e.accuracy = static_cast<double>(detected.size()) / static_cast<double>(truth.size());
    e.recall = hits / static_cast<double>(truth.size());
  }
  if (!detected.empty()) e.precision = hits / static_cast<double>(detected.size());
  e.detected_missing = std::move(detected);
  e.true_missing = std::move(truth);
  return e;
}

/// Unweighted means over imagesets; imagesets without true labels are left
/// out of the accuracy and recall means with a warning.
inline EvalReport aggregate(std::vector<EvalEntry> entries) {
  EvalReport report;
  double acc = 0.0, prec = 0.0, rec = 0.0;
  std::size_t n_acc = 0;
  for (const auto& e : entries) {
    prec += e.precision;
    if (e.accuracy) {
      acc += *e.accuracy;
      rec += *e.recall;
      ++n_acc;
    } else {
      report.warnings.push_back("imageset '" + e.product_id +
                                "' has no true missing labels; excluded from accuracy");
    }
  }
  if (n_acc > 0) {
    report.mean_accuracy = acc / static_cast<double>(n_acc);
    report.mean_recall = rec / static_cast<double>(n_acc);
  }
  if (!entries.empty()) report.mean_precision = prec / static_cast<double>(entries.size());
  report.entries = std::move(entries);
  return report;
}

inline EvalReport evaluate(const ModelBundle& bundle, std::span<const LabeledImageset> sets,
                           std::size_t p_threshold = kDefaultPThreshold) {
  std::vector<EvalEntry> entries;
  for (const auto& s : sets) {
    for (std::size_t j : s.true_missing) {
      if (j >= bundle.centroid_model.k) {
        throw Error(ErrorKind::kPrecondition, "label for '" + s.product.product_id +
                                                  "' references centroid " + std::to_string(j) +
                                                  " but the model has " +
                                                  std::to_string(bundle.centroid_model.k));
      }
    }
    const auto report = infer_flow(bundle, s.images, s.product, p_threshold);
    entries.push_back(score_imageset(s.product.product_id, report.missing_indices(), s.true_missing));
  }
  return aggregate(std::move(entries));
}

inline std::string serialize_eval_entry(const EvalEntry& e) {
  nlohmann::ordered_json j;
  j["product_id"] = e.product_id;
  j["detected_missing"] = e.detected_missing;
  j["true_missing"] = e.true_missing;
  j["accuracy"] = e.accuracy ? nlohmann::ordered_json(*e.accuracy) : nlohmann::ordered_json();
  j["precision"] = e.precision;
  j["recall"] = e.recall ? nlohmann::ordered_json(*e.recall) : nlohmann::ordered_json();
  return j.dump();
}

inline std::string serialize_eval_summary(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
  };
  nlohmann::ordered_json j;
  j["aggregate"] = true;
  j["imagesets"] = r.entries.size();
  j["mean_accuracy"] = opt(r.mean_accuracy);
  j["mean_precision"] = opt(r.mean_precision);
  j["mean_recall"] = opt(r.mean_recall);
  return j.dump();
}

}  // namespace unpose
