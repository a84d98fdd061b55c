#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include "dop/harness/config.hpp"

namespace dop::harness {

// Runs fn(0..n-1) on up to `threads` workers; the first exception is
// rethrown after all workers stop.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k; (k = next++) < n;) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

inline void write_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << csv_header() << '\n';
  for (const auto& r : rows) out << csv_row(r) << '\n';
}

enum class CellStatus { Completed, Diverged, Failed };

inline const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Completed: return "completed";
    case CellStatus::Diverged: return "diverged";
    case CellStatus::Failed: return "failed";
  }
  return "failed";
}

struct CellResult {
  std::string algorithm;
  std::uint64_t seed = 0;
  std::string run_id;
  std::string csv;  // file name relative to the output directory
  long rows = 0;
  CellStatus status = CellStatus::Completed;
  long failed_step = -1;
  std::string message;
};

struct RunOptions {
  std::optional<std::string> out_dir;  // overrides the config's output_dir
  int parallel = 1;
  std::uint64_t seed_offset = 0;
};

struct RunSummary {
  std::filesystem::path out_dir;
  std::vector<CellResult> cells;

  // 0 when every cell completed, 3 when any diverged, 1 on other failures.
  int exit_code() const {
    int code = 0;
    for (const auto& c : cells) {
      if (c.status == CellStatus::Diverged) code = 3;
      if (c.status == CellStatus::Failed && code == 0) code = 1;
    }
    return code;
  }
};

// Trains one (algorithm, seed) cell and writes its CSV. A non-finite loss
// stops the cell; the rows logged so far are kept and a "divergence" row
// records the offending step.
inline CellResult run_cell(const RunConfig& cfg, const std::string& algorithm, std::uint64_t seed,
                           const std::filesystem::path& out_dir) {
  CellResult res;
  res.algorithm = algorithm;
  res.seed = seed;
  const auto settings = run_settings(cfg, algorithm, seed);
  res.run_id = settings.run_id;
  res.csv = res.run_id + ".csv";
  MetricBuffer buf;
  try {
    const auto env = make_environment(cfg);
    auto trainer = make_trainer(cfg, algorithm, *env, settings);
    trainer->run(buf.sink());
  } catch (const TrainingError& e) {
    res.status = CellStatus::Diverged;
    res.failed_step = e.step();
    res.message = e.what();
    MetricRecord r;
    r.record_type = "divergence";
    r.run_id = res.run_id;
    r.seed = seed;
    r.step = e.step();
    buf.records.push_back(r);
  } catch (const std::exception& e) {
    res.status = CellStatus::Failed;
    res.message = e.what();
  }
  write_csv(out_dir / res.csv, buf.records);
  res.rows = static_cast<long>(buf.records.size());
  return res;
}

inline json manifest_json(const RunConfig& cfg, const RunOptions& opt, const std::vector<std::optional<CellResult>>& cells) {
  json m;
  m["config"] = to_json(cfg);
  m["seed_offset"] = opt.seed_offset;
  m["columns"] = csv_columns();
  json list = json::array();
  for (const auto& c : cells) {
    if (!c) continue;
    json e{{"algorithm", c->algorithm}, {"seed", c->seed},     {"run_id", c->run_id},
           {"csv", c->csv},             {"rows", c->rows},     {"status", to_string(c->status)}};
    if (c->status == CellStatus::Diverged) e["failed_step"] = c->failed_step;
    if (c->status != CellStatus::Completed) e["message"] = c->message;
    list.push_back(e);
  }
  m["cells"] = list;
  return m;
}

// Executes every (algorithm, seed) cell and keeps manifest.json current as
// cells finish. The manifest writer is the only shared resource.
inline RunSummary run_config(const RunConfig& cfg, const RunOptions& opt = {}) {
  RunSummary sum;
  sum.out_dir = opt.out_dir.value_or(cfg.output_dir);
  std::filesystem::create_directories(sum.out_dir);
  struct Job {
    std::string algorithm;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& a : cfg.algorithms)
    for (auto s : cfg.seeds) jobs.push_back({a, s + opt.seed_offset});

  std::vector<std::optional<CellResult>> done(jobs.size());
  std::mutex manifest_mutex;
  auto write_manifest = [&] {
    std::ofstream out(sum.out_dir / "manifest.json", std::ios::binary);
    out << manifest_json(cfg, opt, done).dump(2) << '\n';
  };
  parallel_for(jobs.size(), opt.parallel, [&](std::size_t k) {
    CellResult r = run_cell(cfg, jobs[k].algorithm, jobs[k].seed, sum.out_dir);
    std::lock_guard<std::mutex> lock(manifest_mutex);
    done[k] = std::move(r);
    write_manifest();
  });
  if (jobs.empty()) write_manifest();
  for (auto& d : done) sum.cells.push_back(std::move(*d));
  return sum;
}

}  // namespace dop::harness
