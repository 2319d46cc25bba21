#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccl/contrastive.hpp"
#include "ccl/datastream.hpp"
#include "ccl/encoder.hpp"
#include "ccl/error.hpp"
#include "ccl/evaluation.hpp"
#include "ccl/rehearsal.hpp"

namespace ccl {

using json = nlohmann::json;

enum class Method { kCcl, kFinetune, kSimpleRehearsal, kUpperBound };
enum class SamplerKind { kNone, kRandom, kVariance };
enum class MemoryMode { kPerClass, kFixedTotal };
enum class DataSource { kSynthetic, kCsv };

NLOHMANN_JSON_SERIALIZE_ENUM(Method, {{Method::kCcl, "ccl"},
                                      {Method::kFinetune, "finetune"},
                                      {Method::kSimpleRehearsal, "simple_rehearsal"},
                                      {Method::kUpperBound, "upper_bound"}})
NLOHMANN_JSON_SERIALIZE_ENUM(SamplerKind,
                             {{SamplerKind::kNone, "none"}, {SamplerKind::kRandom, "random"}, {SamplerKind::kVariance, "variance"}})
NLOHMANN_JSON_SERIALIZE_ENUM(MemoryMode, {{MemoryMode::kPerClass, "per_class"}, {MemoryMode::kFixedTotal, "fixed_total"}})
NLOHMANN_JSON_SERIALIZE_ENUM(DataSource, {{DataSource::kSynthetic, "synthetic"}, {DataSource::kCsv, "csv"}})
NLOHMANN_JSON_SERIALIZE_ENUM(EsqRows, {{EsqRows::kAll, "all"}, {EsqRows::kNewOnly, "new_only"}})

// Which parts of the method are active. Derived from the method name unless
// overridden (the ablation ladder toggles them one at a time).
struct Components {
  SamplerKind sampler = SamplerKind::kVariance;
  bool kd = true;
  bool esq = true;

  static Components for_method(Method m) {
    switch (m) {
      case Method::kCcl: return {SamplerKind::kVariance, true, true};
      case Method::kSimpleRehearsal: return {SamplerKind::kRandom, false, false};
      case Method::kFinetune:
      case Method::kUpperBound: return {SamplerKind::kNone, false, false};
    }
    return {};
  }
};

struct SamplerConfig {
  std::size_t kmeans_k = 0;  // 0: number of classes in the finished task
  std::size_t n_per_cluster = 20;
  std::size_t views = 6;
  MemoryMode memory_mode = MemoryMode::kPerClass;
  std::size_t memory_per_step = 40;  // used by fixed_total
  KMeansOptions kmeans;
};

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  int num_classes = 10;
  int per_class = 200;
  int input_dim = 32;
  double class_spread = 1.0;
  double within_spread = 0.3;
  std::string csv_path;
};

struct RunConfig {
  Method method = Method::kCcl;
  Components components = Components::for_method(Method::kCcl);
  std::uint64_t seed = 0;
  int t_steps = 5;
  std::size_t epochs_per_task = 30;
  std::size_t batch_size = 32;
  double lambda1 = 0.9;
  double lambda2 = 0.1;
  double lambda3 = 0.1;
  double tau = 0.2;
  double tau_kd = 0.1;
  double momentum_key = 0.99;
  double momentum_teacher = 0.996;
  std::size_t queue_size = 256;
  std::size_t esq_size = 128;
  EsqRows esq_rows = EsqRows::kAll;
  double replay_ratio = 0.0;  // 0: old and new rows share one shuffled pool
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t embedding_dim = 16;
  SgdConfig optimizer;
  AugmentSpec augment;
  SamplerConfig sampler;
  DataConfig data;
  ProbeConfig probe;

  Architecture architecture() const {
    Architecture a;
    a.input_dim = static_cast<std::size_t>(data.input_dim);
    a.widths = hidden;
    a.widths.push_back(embedding_dim);
    return a;
  }

  // Loss weights after switching off disabled components.
  double effective_lambda2() const { return components.esq ? lambda2 : 0.0; }
  double effective_lambda3() const { return components.kd ? lambda3 : 0.0; }
};

namespace detail {

// Reads one JSON object, remembering which keys were consumed so unknown
// keys can be rejected by name.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label("") + ": expected an object");
  }

  template <typename T>
  void optional(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    read(key, out);
  }

  template <typename T>
  void required(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError("missing required field \"" + label(key) + "\"");
    read(key, out);
  }

  bool has(const char* key) const { return j_.contains(key); }

  ObjectReader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return ObjectReader(j_.contains(key) ? j_.at(key) : empty, label(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown field \"" + label(k) + "\"");
  }

  std::string label(const std::string& key) const {
    if (path_.empty()) return key;
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  template <typename T>
  void read(const char* key, T& out) {
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>)
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_enum_v<T>) {
        if (!v.is_string()) throw ConfigError("");
        const T parsed = v.get<T>();
        if (json(parsed) != v) throw ConfigError("");
        out = parsed;
        return;
      }
      out = v.get<T>();
    } catch (const ConfigError&) {
      throw ConfigError("invalid value for field \"" + label(key) + "\": " + v.dump());
    } catch (const json::exception&) {
      throw ConfigError("invalid value for field \"" + label(key) + "\": " + v.dump());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace detail

// Every range constraint on a resolved config; messages name the field.
inline void validate(const RunConfig& c) {
  using detail::check;
  check(c.t_steps >= 1, "\"t_steps\" must be at least 1");
  check(c.epochs_per_task >= 1, "\"epochs_per_task\" must be at least 1");
  check(c.batch_size >= 1, "\"batch_size\" must be at least 1");
  check(c.lambda1 >= 0.0, "\"lambda1\" must be non-negative");
  check(c.lambda2 >= 0.0, "\"lambda2\" must be non-negative");
  check(c.lambda3 >= 0.0, "\"lambda3\" must be non-negative");
  check(c.tau > 0.0, "\"tau\" must be positive");
  check(c.tau_kd > 0.0, "\"tau_kd\" must be positive");
  check(c.momentum_key >= 0.0 && c.momentum_key <= 1.0, "\"momentum_key\" must lie in [0, 1]");
  check(c.momentum_teacher >= 0.0 && c.momentum_teacher <= 1.0, "\"momentum_teacher\" must lie in [0, 1]");
  check(c.replay_ratio >= 0.0 && c.replay_ratio < 1.0, "\"replay_ratio\" must lie in [0, 1)");
  check(c.embedding_dim >= 1, "\"encoder.embedding_dim\" must be at least 1");
  for (auto w : c.hidden) check(w >= 1, "\"encoder.hidden\" widths must be at least 1");
  check(c.optimizer.lr > 0.0, "\"optimizer.lr\" must be positive");
  check(c.optimizer.momentum >= 0.0 && c.optimizer.momentum < 1.0, "\"optimizer.momentum\" must lie in [0, 1)");
  check(c.optimizer.weight_decay >= 0.0, "\"optimizer.weight_decay\" must be non-negative");
  try {
    c.augment.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("augment: ") + e.what());
  }
  check(c.sampler.n_per_cluster >= 1, "\"sampler.n_per_cluster\" must be at least 1");
  check(c.sampler.views >= 2, "\"sampler.views\" must be at least 2");
  check(c.sampler.memory_per_step >= 1, "\"sampler.memory_per_step\" must be at least 1");
  check(c.sampler.kmeans.max_iter >= 1, "\"sampler.kmeans_max_iter\" must be at least 1");
  check(c.sampler.kmeans.tol >= 0.0, "\"sampler.kmeans_tol\" must be non-negative");
  if (c.data.source == DataSource::kSynthetic) {
    check(c.data.num_classes >= 1, "\"data.num_classes\" must be at least 1");
    check(c.data.per_class >= 1, "\"data.per_class\" must be at least 1");
    check(c.data.class_spread > 0.0, "\"data.class_spread\" must be positive");
    check(c.data.within_spread > 0.0, "\"data.within_spread\" must be positive");
    check(c.t_steps <= c.data.num_classes, "\"t_steps\" exceeds \"data.num_classes\"");
  } else {
    check(!c.data.csv_path.empty(), "\"data.csv_path\" is required when data.source is csv");
  }
  check(c.data.input_dim >= 1, "\"data.input_dim\" must be at least 1");
  c.probe.validate();
}

// Parses a run configuration. "method" and the three loss weights are
// required; every other field falls back to its documented default.
inline RunConfig parse_config(const json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "");
  r.required("method", c.method);
  c.components = Components::for_method(c.method);
  r.required("lambda1", c.lambda1);
  r.required("lambda2", c.lambda2);
  r.required("lambda3", c.lambda3);
  r.optional("seed", c.seed);
  r.optional("t_steps", c.t_steps);
  r.optional("epochs_per_task", c.epochs_per_task);
  r.optional("batch_size", c.batch_size);
  r.optional("tau", c.tau);
  r.optional("tau_kd", c.tau_kd);
  r.optional("momentum_key", c.momentum_key);
  r.optional("momentum_teacher", c.momentum_teacher);
  r.optional("queue_size", c.queue_size);
  r.optional("esq_size", c.esq_size);
  r.optional("esq_rows", c.esq_rows);
  r.optional("replay_ratio", c.replay_ratio);
  {
    auto s = r.child("components");
    s.optional("sampler", c.components.sampler);
    s.optional("kd", c.components.kd);
    s.optional("esq", c.components.esq);
    s.finish();
  }
  {
    auto s = r.child("encoder");
    s.optional("hidden", c.hidden);
    s.optional("embedding_dim", c.embedding_dim);
    s.finish();
  }
  {
    auto s = r.child("optimizer");
    s.optional("lr", c.optimizer.lr);
    s.optional("momentum", c.optimizer.momentum);
    s.optional("weight_decay", c.optimizer.weight_decay);
    s.finish();
  }
  {
    auto s = r.child("augment");
    s.optional("noise_sigma", c.augment.noise_sigma);
    s.optional("drop_prob", c.augment.drop_prob);
    s.optional("scale_jitter", c.augment.scale_jitter);
    s.finish();
  }
  {
    auto s = r.child("sampler");
    s.optional("kmeans_k", c.sampler.kmeans_k);
    s.optional("n_per_cluster", c.sampler.n_per_cluster);
    s.optional("views", c.sampler.views);
    s.optional("memory_mode", c.sampler.memory_mode);
    s.optional("memory_per_step", c.sampler.memory_per_step);
    s.optional("kmeans_max_iter", c.sampler.kmeans.max_iter);
    s.optional("kmeans_tol", c.sampler.kmeans.tol);
    s.finish();
  }
  {
    auto s = r.child("data");
    s.optional("source", c.data.source);
    s.optional("num_classes", c.data.num_classes);
    s.optional("per_class", c.data.per_class);
    s.optional("input_dim", c.data.input_dim);
    s.optional("class_spread", c.data.class_spread);
    s.optional("within_spread", c.data.within_spread);
    s.optional("csv_path", c.data.csv_path);
    s.finish();
  }
  {
    auto s = r.child("probe");
    s.optional("epochs", c.probe.epochs);
    s.optional("lr", c.probe.lr);
    s.optional("decay_epoch", c.probe.decay_epoch);
    s.optional("decay_factor", c.probe.decay_factor);
    s.optional("weight_decay", c.probe.weight_decay);
    s.optional("train_fraction", c.probe.train_fraction);
    s.optional("seed", c.probe.seed);
    s.finish();
  }
  r.finish();
  validate(c);
  return c;
}

// Fully materialised config; parse_config(to_json(c)) reproduces c.
inline json to_json(const RunConfig& c) {
  return json{
      {"method", c.method},
      {"seed", c.seed},
      {"t_steps", c.t_steps},
      {"epochs_per_task", c.epochs_per_task},
      {"batch_size", c.batch_size},
      {"lambda1", c.lambda1},
      {"lambda2", c.lambda2},
      {"lambda3", c.lambda3},
      {"tau", c.tau},
      {"tau_kd", c.tau_kd},
      {"momentum_key", c.momentum_key},
      {"momentum_teacher", c.momentum_teacher},
      {"queue_size", c.queue_size},
      {"esq_size", c.esq_size},
      {"esq_rows", c.esq_rows},
      {"replay_ratio", c.replay_ratio},
      {"components", {{"sampler", c.components.sampler}, {"kd", c.components.kd}, {"esq", c.components.esq}}},
      {"encoder", {{"hidden", c.hidden}, {"embedding_dim", c.embedding_dim}}},
      {"optimizer",
       {{"lr", c.optimizer.lr}, {"momentum", c.optimizer.momentum}, {"weight_decay", c.optimizer.weight_decay}}},
      {"augment",
       {{"noise_sigma", c.augment.noise_sigma},
        {"drop_prob", c.augment.drop_prob},
        {"scale_jitter", c.augment.scale_jitter}}},
      {"sampler",
       {{"kmeans_k", c.sampler.kmeans_k},
        {"n_per_cluster", c.sampler.n_per_cluster},
        {"views", c.sampler.views},
        {"memory_mode", c.sampler.memory_mode},
        {"memory_per_step", c.sampler.memory_per_step},
        {"kmeans_max_iter", c.sampler.kmeans.max_iter},
        {"kmeans_tol", c.sampler.kmeans.tol}}},
      {"data",
       {{"source", c.data.source},
        {"num_classes", c.data.num_classes},
        {"per_class", c.data.per_class},
        {"input_dim", c.data.input_dim},
        {"class_spread", c.data.class_spread},
        {"within_spread", c.data.within_spread},
        {"csv_path", c.data.csv_path}}},
      {"probe",
       {{"epochs", c.probe.epochs},
        {"lr", c.probe.lr},
        {"decay_epoch", c.probe.decay_epoch},
        {"decay_factor", c.probe.decay_factor},
        {"weight_decay", c.probe.weight_decay},
        {"train_fraction", c.probe.train_fraction},
        {"seed", c.probe.seed}}},
  };
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read config " + path);  // I/O, not a config defect
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path + ": " + e.what());
  }
}

}  // namespace ccl
