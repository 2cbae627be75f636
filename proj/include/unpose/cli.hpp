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
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "unpose/bundle.hpp"
#include "unpose/error.hpp"
#include "unpose/landmarks.hpp"
#include "unpose/pipeline.hpp"
#include "unpose/synthgen.hpp"

namespace unpose::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

enum class LogLevel { kQuiet = 0, kError = 1, kWarn = 2, kInfo = 3, kDebug = 4 };

// Verbosity comes from UNPOSE_LOG (quiet|error|warn|info|debug).
class Logger {
 public:
  explicit Logger(std::ostream& err) : err_(err) {
    if (const char* env = std::getenv("UNPOSE_LOG")) {
      const std::string v = env;
      if (v == "quiet") level_ = LogLevel::kQuiet;
      else if (v == "error") level_ = LogLevel::kError;
      else if (v == "warn") level_ = LogLevel::kWarn;
      else if (v == "debug") level_ = LogLevel::kDebug;
    }
  }
  void error(const std::string& m) const { log(LogLevel::kError, "error", m); }
  void warn(const std::string& m) const { log(LogLevel::kWarn, "warn", m); }
  void info(const std::string& m) const { log(LogLevel::kInfo, "info", m); }
  void debug(const std::string& m) const { log(LogLevel::kDebug, "debug", m); }

 private:
  void log(LogLevel at, const char* tag, const std::string& m) const {
    if (static_cast<int>(level_) >= static_cast<int>(at)) err_ << "unpose: " << tag << ": " << m << "\n";
  }
  std::ostream& err_;
  LogLevel level_ = LogLevel::kInfo;
};

struct CliConfig {
  std::string landmarks;
  std::string products;
  std::string labels;
  std::string model;
  std::string out;
  std::size_t k = 8;
  std::uint64_t seed = 0;
  bool no_autoencoder = false;
  std::string topology;
  std::size_t threads = 1;
  std::size_t per_class = 200;
  std::string classes = "6";
  double noise = 0.02;
  std::size_t epochs = 50;
  double learning_rate = 0.01;
  std::size_t p_threshold = kDefaultPThreshold;
  std::size_t min_images = 0;
  std::size_t top_k = 3000;
};

namespace detail {

inline std::vector<LandmarkRecord> load_landmarks(const std::string& path, const Logger& log) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open landmark file '" + path + "'");
  auto parsed = parse_landmark_records(in);
  for (const auto& d : parsed.diagnostics) {
    const std::string msg = path + ":" + std::to_string(d.line) + ": " + d.message;
    if (d.severity == Severity::kWarning) {
      log.warn(msg);
    } else {
      throw Error(ErrorKind::kParse, msg);
    }
  }
  return std::move(parsed.records);
}

inline std::vector<ProductRecord> load_products(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open product file '" + path + "'");
  return read_products(in);
}

inline std::vector<int> parse_classes(const std::string& spec) {
  std::vector<int> classes;
  if (spec.find(',') == std::string::npos) {
    const int n = std::stoi(spec);
    if (n < 1 || n > synth::kNumClasses) {
      throw Error(ErrorKind::kPrecondition, "--classes must be between 1 and 8");
    }
    for (int c = 0; c < n; ++c) classes.push_back(c);
    return classes;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) classes.push_back(std::stoi(item));
  return classes;
}

inline TopologyName topology_flag(const std::string& value) {
  auto t = parse_topology_name(value);
  if (!t) throw Error(ErrorKind::kPrecondition, "unknown topology '" + value + "'");
  return *t;
}

// Writes to --out atomically, or to stdout when no path was given.
inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

inline std::int64_t trained_at_from_env() {
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) return std::strtoll(env, nullptr, 10);
  return 0;
}

inline std::map<std::string, std::vector<LandmarkRecord>> group_by_product(
    std::vector<LandmarkRecord> records) {
  std::map<std::string, std::vector<LandmarkRecord>> groups;
  for (auto& r : records) groups[r.product_id].push_back(std::move(r));
  return groups;
}

inline const ProductRecord& find_product(const std::vector<ProductRecord>& products,
                                         const std::string& id) {
  for (const auto& p : products) {
    if (p.product_id == id) return p;
  }
  throw Error(ErrorKind::kPrecondition, "no product metadata for '" + id + "'");
}

}  // namespace detail

inline int cmd_train(const CliConfig& c, std::ostream& out, const Logger& log) {
  auto records = detail::load_landmarks(c.landmarks, log);
  if (!c.topology.empty()) {
    const auto want = detail::topology_flag(c.topology);
    for (const auto& r : records) {
      if (r.topology != want) {
        throw Error(ErrorKind::kValidation, "image '" + r.image_id + "' is not " + c.topology);
      }
    }
  }
  const auto products = detail::load_products(c.products);
  TrainConfig config;
  config.k = c.k;
  config.seed = c.seed;
  config.use_autoencoder = !c.no_autoencoder;
  config.autoencoder.epochs = c.epochs;
  config.autoencoder.learning_rate = c.learning_rate;
  config.threads = c.threads;
  config.trained_at = detail::trained_at_from_env();
  if (c.min_images > 0) config.reference_filter = {{c.min_images, c.top_k}};
  log.info("training on " + std::to_string(records.size()) + " images, k=" + std::to_string(c.k) +
           (config.use_autoencoder ? ", autoencoder on" : ", autoencoder off"));
  auto result = train_flow(records, products, config);
  save_bundle(result.bundle, c.out);
  const auto& s = result.bundle.training_summary;
  nlohmann::ordered_json j;
  j["n_products"] = s.n_products;
  j["n_images"] = s.n_images;
  j["k"] = s.k;
  j["objective"] = s.objective;
  j["trained_at"] = s.trained_at;
  out << j.dump() << "\n";
  log.info("wrote " + c.out);
  return kExitOk;
}

inline int cmd_infer(const CliConfig& c, std::ostream& out, const Logger& log) {
  const ModelBundle bundle = load_bundle(c.model);
  auto records = detail::load_landmarks(c.landmarks, log);
  if (records.empty()) throw Error(ErrorKind::kPrecondition, "no images for product");
  const auto products = detail::load_products(c.products);
  std::string text;
  for (const auto& [product_id, images] : detail::group_by_product(std::move(records))) {
    const auto report = infer_flow(bundle, images, detail::find_product(products, product_id),
                                   c.p_threshold);
    text += serialize_report(report) + "\n";
  }
  detail::emit(c.out, text, out);
  return kExitOk;
}

inline int cmd_eval(const CliConfig& c, std::ostream& out, const Logger& log) {
  const ModelBundle bundle = load_bundle(c.model);
  auto groups = detail::group_by_product(detail::load_landmarks(c.landmarks, log));
  const auto products = detail::load_products(c.products);
  std::ifstream label_in(c.labels);
  if (!label_in) throw Error(ErrorKind::kIo, "cannot open label file '" + c.labels + "'");
  std::vector<LabeledImageset> sets;
  for (auto& label : read_labels(label_in)) {
    LabeledImageset s;
    s.product = detail::find_product(products, label.product_id);
    if (auto it = groups.find(label.product_id); it != groups.end()) s.images = it->second;
    s.true_missing = std::move(label.true_missing);
    sets.push_back(std::move(s));
  }
  const auto report = evaluate(bundle, sets, c.p_threshold);
  for (const auto& w : report.warnings) log.warn(w);
  std::string text;
  for (const auto& e : report.entries) text += serialize_eval_entry(e) + "\n";
  text += serialize_eval_summary(report) + "\n";
  detail::emit(c.out, text, out);
  return kExitOk;
}

inline int cmd_synth(const CliConfig& c, std::ostream&, const Logger& log) {
  synth::CorpusSpec spec;
  spec.classes = detail::parse_classes(c.classes);
  spec.per_class = c.per_class;
  spec.noise_sigma = c.noise;
  spec.seed = c.seed;
  if (!c.topology.empty()) spec.topology = detail::topology_flag(c.topology);
  const auto corpus = synth::generate_corpus(spec);

  std::string landmarks, products, truth;
  for (const auto& r : corpus.records) landmarks += serialize_landmark_record(r) + "\n";
  for (const auto& p : corpus.products) products += serialize_product(p) + "\n";
  for (const auto& g : corpus.ground_truth) {
    nlohmann::ordered_json j;
    j["image_id"] = g.image_id;
    j["class_id"] = g.class_id;
    truth += j.dump() + "\n";
  }
  const std::filesystem::path dir(c.out);
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "landmarks.jsonl", landmarks);
  write_file_atomic(dir / "products.jsonl", products);
  write_file_atomic(dir / "ground_truth.jsonl", truth);
  log.info("wrote " + std::to_string(corpus.records.size()) + " images in " +
           std::to_string(corpus.products.size()) + " products to " + dir.string());
  return kExitOk;
}

inline int cmd_inspect(const CliConfig& c, std::ostream& out, const Logger&) {
  const ModelBundle b = load_bundle(c.model);
  std::ostringstream fp;
  fp << std::hex << std::setw(16) << std::setfill('0') << b.feature_config.fingerprint;
  nlohmann::ordered_json j;
  j["version"] = b.version;
  j["topology"] = topology_string(b.feature_config.topology);
  j["feature_dimension"] = b.feature_config.dimension;
  j["ratio_clamp"] = b.feature_config.ratio_clamp;
  j["ratio_epsilon"] = b.feature_config.ratio_epsilon;
  j["fingerprint"] = fp.str();
  if (b.autoencoder) {
    j["autoencoder"] = {{"encoder", b.autoencoder->encoder_dims()},
                        {"decoder", b.autoencoder->decoder_dims()}};
  } else {
    j["autoencoder"] = nullptr;
  }
  j["k"] = b.centroid_model.k;
  j["centroid_dimension"] = b.centroid_model.dimension;
  j["ranker"] = b.rank_model.kind == RankerKind::kFrequency ? "frequency" : "gbdt";
  j["trees"] = b.rank_model.trees.size();
  const auto& s = b.training_summary;
  j["training_summary"] = {{"n_products", s.n_products}, {"n_images", s.n_images}, {"k", s.k},
                           {"objective", s.objective}, {"trained_at", s.trained_at}};
  out << j.dump() << "\n";
  return kExitOk;
}

/// Runs one CLI invocation. args excludes the program name. Returns the
/// process exit code: 0 success, 1 pipeline failure, 2 usage error.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CliConfig c;
  CLI::App app{"unpose: find the product-photo poses missing from a listing"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "learn pose classes and their ranking from a reference corpus");
  train->add_option("--landmarks", c.landmarks, "landmark record file")->required();
  train->add_option("--products", c.products, "product metadata file")->required();
  train->add_option("--out", c.out, "model bundle to write")->required();
  train->add_option("--k", c.k, "number of pose classes")->check(CLI::PositiveNumber);
  train->add_option("--seed", c.seed, "seed for all randomness");
  train->add_option("--topology", c.topology, "expected topology (POSE2D17|POSE3D33)");
  train->add_flag("--no-autoencoder", c.no_autoencoder, "cluster engineered features directly");
  train->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  train->add_option("--epochs", c.epochs, "autoencoder epochs");
  train->add_option("--lr", c.learning_rate, "autoencoder initial learning rate");
  train->add_option("--min-images", c.min_images, "restrict to reference products with this many images");
  train->add_option("--top-k", c.top_k, "reference products kept when --min-images is set");

  auto* infer = app.add_subcommand("infer", "report missing poses per product");
  infer->add_option("--model", c.model, "model bundle")->required();
  infer->add_option("--landmarks", c.landmarks, "landmark record file")->required();
  infer->add_option("--products", c.products, "product metadata file")->required();
  infer->add_option("--out", c.out, "report file (stdout when omitted)");
  infer->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  infer->add_option("--p-threshold", c.p_threshold, "imageset size below which a product qualifies");

  auto* eval = app.add_subcommand("eval", "score missing-pose detection against human labels");
  eval->add_option("--model", c.model, "model bundle")->required();
  eval->add_option("--landmarks", c.landmarks, "landmark record file")->required();
  eval->add_option("--products", c.products, "product metadata file")->required();
  eval->add_option("--labels", c.labels, "label file")->required();
  eval->add_option("--out", c.out, "report file (stdout when omitted)");
  eval->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
  synth->add_option("--out", c.out, "output directory")->required();
  synth->add_option("--classes", c.classes, "class count N (classes 0..N-1) or comma list");
  synth->add_option("--per-class", c.per_class, "images per class")->check(CLI::PositiveNumber);
  synth->add_option("--noise", c.noise, "keypoint jitter in normalized units")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", c.seed, "generator seed");
  synth->add_option("--topology", c.topology, "POSE2D17 or POSE3D33");
  synth->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);

  auto* inspect = app.add_subcommand("inspect", "summarize a model bundle");
  inspect->add_option("--model", c.model, "model bundle")->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "unpose: usage error: " << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return kExitUsage;
  }

  const Logger log(err);
  try {
    if (train->parsed()) return cmd_train(c, out, log);
    if (infer->parsed()) return cmd_infer(c, out, log);
    if (eval->parsed()) return cmd_eval(c, out, log);
    if (synth->parsed()) return cmd_synth(c, out, log);
    if (inspect->parsed()) return cmd_inspect(c, out, log);
  } catch (const Error& e) {
    log.error(std::string(to_string(e.kind())) + ": " + e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    log.error(e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace unpose::cli
