#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ccl/config.hpp"
#include "ccl/error.hpp"
#include "ccl/experiment.hpp"

namespace ccl::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kIoError = 1, kConfigError = 2, kDiverged = 3 };

// Maps exceptions onto the documented exit codes.
template <typename Fn>
int guarded(Fn&& fn, std::ostream& err = std::cerr) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DivergedError& e) {
    err << "training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  }
}

inline RunConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  json j = read_json_file(path.string());
  if (seed_override) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    j["seed"] = *seed_override;
  }
  return parse_config(j);
}

inline void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
}

// Single run: report.json, accuracy.csv, task{t}.ckpt, resolved_config.json.
inline RunReport execute_run(const RunConfig& cfg, const fs::path& out_dir) {
  make_dir(out_dir);
  write_text(out_dir / "resolved_config.json", to_json(cfg).dump(2) + "\n");
  RunReport rep = run_experiment(cfg, out_dir);
  write_run_artifacts(rep, out_dir);
  return rep;
}

inline int cmd_run(const fs::path& config_path, const fs::path& out_dir,
                   std::optional<std::uint64_t> seed = {}, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        const RunConfig cfg = load_config(config_path, seed);
        const RunReport rep = execute_run(cfg, out_dir);
        std::cout << "final_top1 " << format_double(rep.final_top1) << "\n";
        return int{kOk};
      },
      err);
}

// One sweep cell: a label for the swept value and the config it produces.
struct SweepCell {
  std::string value;
  RunConfig config;
};

// The component ladder: finetune, + random sampling, + variance sampling,
// + distillation, + extra sample queue.
inline const std::vector<std::string>& ladder_names() {
  static const std::vector<std::string> names = {"finetune", "random_sampling", "variance_sampling", "kd", "esq"};
  return names;
}

inline RunConfig ladder_config(RunConfig base, const std::string& rung) {
  if (rung == "finetune") {
    base.method = Method::kFinetune;
    base.components = Components::for_method(Method::kFinetune);
  } else if (rung == "random_sampling") {
    base.method = Method::kSimpleRehearsal;
    base.components = Components::for_method(Method::kSimpleRehearsal);
  } else if (rung == "variance_sampling") {
    base.method = Method::kCcl;
    base.components = {SamplerKind::kVariance, false, false};
  } else if (rung == "kd") {
    base.method = Method::kCcl;
    base.components = {SamplerKind::kVariance, true, false};
  } else if (rung == "esq") {
    base.method = Method::kCcl;
    base.components = {SamplerKind::kVariance, true, true};
  } else {
    throw ConfigError("unknown components value \"" + rung + "\"");
  }
  return base;
}

struct SweepSpec {
  std::string axis;
  std::vector<SweepCell> cells;
  std::vector<std::uint64_t> seeds;
};

// Reads {"sweep": {"axis", "values", "seeds"}} next to an ordinary run config.
inline SweepSpec parse_sweep(json j, std::optional<std::uint64_t> seed_override) {
  if (!j.is_object() || !j.contains("sweep")) throw ConfigError("missing required field \"sweep\"");
  json sweep = j.at("sweep");
  j.erase("sweep");
  if (seed_override) j["seed"] = *seed_override;
  const RunConfig base = parse_config(j);

  if (!sweep.is_object()) throw ConfigError("\"sweep\" must be an object");
  for (const auto& [k, v] : sweep.items())
    if (k != "axis" && k != "values" && k != "seeds") throw ConfigError("unknown field \"sweep." + k + "\"");
  if (!sweep.contains("axis") || !sweep.at("axis").is_string()) throw ConfigError("missing required field \"sweep.axis\"");

  SweepSpec spec;
  spec.axis = sweep.at("axis").get<std::string>();
  if (sweep.contains("seeds")) {
    if (!sweep.at("seeds").is_array() || sweep.at("seeds").empty()) throw ConfigError("\"sweep.seeds\" must be a non-empty array");
    for (const auto& s : sweep.at("seeds")) {
      if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError("invalid value in \"sweep.seeds\": " + s.dump());
      spec.seeds.push_back(s.get<std::uint64_t>());
    }
  } else {
    spec.seeds.push_back(base.seed);
  }

  json values = sweep.contains("values") ? sweep.at("values") : json::array();
  if (!values.is_array()) throw ConfigError("\"sweep.values\" must be an array");

  if (spec.axis == "components") {
    if (values.empty()) values = ladder_names();
    for (const auto& v : values) {
      if (!v.is_string()) throw ConfigError("invalid value in \"sweep.values\": " + v.dump());
      spec.cells.push_back({v.get<std::string>(), ladder_config(base, v.get<std::string>())});
    }
  } else if (spec.axis == "esq_size" || spec.axis == "kmeans_k") {
    if (values.empty()) throw ConfigError("\"sweep.values\" must be non-empty for axis " + spec.axis);
    for (const auto& v : values) {
      if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("invalid value in \"sweep.values\": " + v.dump());
      RunConfig c = base;
      if (spec.axis == "esq_size") {
        c.esq_size = v.get<std::size_t>();
      } else {
        if (v.get<std::size_t>() == 0) throw ConfigError("\"sweep.values\" for kmeans_k must be positive");
        c.sampler.kmeans_k = v.get<std::size_t>();
      }
      spec.cells.push_back({std::to_string(v.get<std::size_t>()), c});
    }
  } else {
    throw ConfigError("unknown sweep axis \"" + spec.axis + "\"");
  }
  return spec;
}

struct SummaryRow {
  std::string axis;
  std::string value;
  std::vector<double> top1;
  std::vector<double> forgetting;
};

inline std::pair<double, double> mean_stdev(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {m, sd};
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "axis,value,n_seeds,mean_top1,stdev_top1,mean_forgetting,stdev_forgetting\n";
  for (const auto& r : rows) {
    const auto [m, s] = mean_stdev(r.top1);
    const auto [fm, fs] = mean_stdev(r.forgetting);
    out += r.axis + "," + r.value + "," + std::to_string(r.top1.size()) + "," + format_double(m) + "," +
           format_double(s) + "," + (r.forgetting.empty() ? std::string() : format_double(fm)) + "," +
           (r.forgetting.empty() ? std::string() : format_double(fs)) + "\n";
  }
  return out;
}

// Runs every (value, seed) cell, each into out/<value>/seed<s>/, then writes
// out/summary.csv with one row per value. Cells run on up to `jobs` threads.
inline std::vector<SummaryRow> run_sweep(const SweepSpec& spec, const fs::path& out_dir, unsigned jobs) {
  make_dir(out_dir);
  struct Job {
    std::size_t cell;
    std::size_t seed;
  };
  std::vector<Job> queue;
  for (std::size_t c = 0; c < spec.cells.size(); ++c)
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) queue.push_back({c, s});

  std::vector<std::vector<std::optional<RunReport>>> results(spec.cells.size(),
                                                             std::vector<std::optional<RunReport>>(spec.seeds.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < queue.size(); i = next++) {
      const Job& job = queue[i];
      RunConfig cfg = spec.cells[job.cell].config;
      cfg.seed = spec.seeds[job.seed];
      try {
        RunReport rep = execute_run(cfg, out_dir / spec.cells[job.cell].value / ("seed" + std::to_string(cfg.seed)));
        rep.checkpoints.clear();
        results[job.cell][job.seed] = std::move(rep);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(queue.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<SummaryRow> rows;
  for (std::size_t c = 0; c < spec.cells.size(); ++c) {
    SummaryRow row{spec.axis, spec.cells[c].value, {}, {}};
    for (const auto& rep : results[c]) {
      row.top1.push_back(rep->final_top1);
      if (rep->forgetting) row.forgetting.push_back(*rep->forgetting);
    }
    rows.push_back(std::move(row));
  }
  write_text(out_dir / "summary.csv", summary_csv(rows));
  return rows;
}

inline int cmd_ablate(const fs::path& config_path, const fs::path& out_dir, std::optional<std::uint64_t> seed = {},
                      unsigned jobs = 1, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        const SweepSpec spec = parse_sweep(read_json_file(config_path.string()), seed);
        run_sweep(spec, out_dir, jobs);
        return int{kOk};
      },
      err);
}

// Probes a checkpoint on every task of the configured data stream and on
// the pooled data. CSV: task_j,accuracy with "pooled" as the last row.
inline std::string probe_csv(const EncoderParams& params, const RunConfig& config) {
  const Experiment ex = prepare_experiment(config);
  if (params.arch.input_dim != static_cast<std::size_t>(ex.config.data.input_dim))
    throw CheckpointError("checkpoint input dimension does not match the dataset");
  const ProbeConfig probe = resolved_probe(ex.config);
  std::string out = "task_j,accuracy\n";
  for (std::size_t j = 0; j < ex.tasks.size(); ++j) {
    const ProbeSplit split = task_split(ex.tasks.tasks[j], probe, j);
    out += std::to_string(j + 1) + "," + format_double(linear_probe(params, split.train, split.test, probe)) + "\n";
  }
  out += "pooled," + format_double(pooled_top1(params, ex.data, probe)) + "\n";
  return out;
}

inline int cmd_probe(const fs::path& checkpoint, const fs::path& config_path, const fs::path& out,
                     std::optional<std::uint64_t> seed = {}, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        const RunConfig cfg = load_config(config_path, seed);
        const EncoderParams params = load_checkpoint(checkpoint.string());
        write_text(out, probe_csv(params, cfg));
        return int{kOk};
      },
      err);
}

// Trains the first task of the configured run and dumps the variance-based
// exemplar selection: task_id,sample_index,cluster_id,variance_score.
inline std::string sample_csv(const RunConfig& config) {
  const Experiment ex = prepare_experiment(config);
  const RunConfig& cfg = ex.config;
  ModelState state = init_state(cfg, cfg.architecture());
  const Matrix& samples = ex.tasks.tasks[0].samples;
  train_task(state, samples, cfg, 0);
  RunConfig variance = cfg;
  variance.components.sampler = SamplerKind::kVariance;
  std::string out = "task_id,sample_index,cluster_id,variance_score\n";
  for (const auto& e : collect_exemplars(state, samples, variance, 0, ex.tasks.class_sets[0].size()))
    out += "1," + std::to_string(e.source_index) + "," + std::to_string(e.cluster) + "," + format_double(e.score) + "\n";
  return out;
}

inline int cmd_sample(const fs::path& config_path, const fs::path& out, std::optional<std::uint64_t> seed = {},
                      std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        write_text(out, sample_csv(load_config(config_path, seed)));
        return int{kOk};
      },
      err);
}

// Aggregates run directories into one row per (method, setting).
inline std::string report_csv(const std::vector<fs::path>& run_dirs) {
  struct Group {
    std::vector<double> top1, forgetting, transfer;
  };
  std::map<std::pair<std::string, std::string>, Group> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& dir : run_dirs) {
    const json r = read_json_file((dir / "report.json").string());
    std::string method;
    std::string setting;
    try {
      method = r.at("method").get<std::string>();
      setting = "T=" + std::to_string(r.at("t_steps").get<int>());
    } catch (const json::exception&) {
      throw ConfigError("malformed report in " + dir.string());
    }
    const auto key = std::make_pair(method, setting);
    if (!groups.count(key)) order.push_back(key);
    auto& g = groups[key];
    g.top1.push_back(r.at("final_top1").get<double>());
    if (!r.at("forgetting").is_null()) g.forgetting.push_back(r.at("forgetting").get<double>());
    if (!r.at("forward_transfer").is_null()) g.transfer.push_back(r.at("forward_transfer").get<double>());
  }
  std::string out = "method,setting,n_runs,mean_top1,stdev_top1,mean_forgetting,mean_forward_transfer\n";
  for (const auto& key : order) {
    const auto& g = groups[key];
    const auto [m, s] = mean_stdev(g.top1);
    out += key.first + "," + key.second + "," + std::to_string(g.top1.size()) + "," + format_double(m) + "," +
           format_double(s) + "," + (g.forgetting.empty() ? "" : format_double(mean_stdev(g.forgetting).first)) + "," +
           (g.transfer.empty() ? "" : format_double(mean_stdev(g.transfer).first)) + "\n";
  }
  return out;
}

inline int cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        write_text(out, report_csv(run_dirs));
        return int{kOk};
      },
      err);
}

}  // namespace ccl::cli
