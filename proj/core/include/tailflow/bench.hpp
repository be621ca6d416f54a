#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tailflow/datagen.hpp"
#include "tailflow/flow.hpp"
#include "tailflow/metrics.hpp"

namespace tailflow::bench {

struct MethodSpec {
  flow::TransformMode mode = flow::TransformMode::Adaptive;
  flow::ScheduleKind schedule = flow::ScheduleKind::Linear;
  double clamp = transforms::kNoClamp;
  std::size_t steps = 100;

  std::string name() const;
  static MethodSpec from_name(const std::string& name);
};

// One benchmark cell: a dataset recipe identified by a stable id. The
// per-replication dataset seed is derived inside run_grid.
struct CellSpec {
  datagen::DatasetSpec dataset;
  std::string id;
};

struct BenchConfig {
  std::vector<CellSpec> cells;
  std::vector<MethodSpec> methods;
  std::size_t replications = 5;
  std::uint64_t base_seed = 0;
  std::string out_dir;
  std::size_t jobs = 1;
  bool save_checkpoints = false;

  // Training knobs shared across methods.
  std::size_t max_epochs = 5000;
  std::size_t patience = 100;
  double lr = 5e-3;
  double weight_decay = 1e-5;
  double clip = 10.0;
  double alpha_max = 4.0;
  bool standardize = false;
  std::size_t hidden_width = 256;
  std::size_t hidden_layers = 4;
  std::size_t embed_dim = 256;
  std::size_t n_gen = 0;  // generated sample size; 0 means n_test

  std::uint64_t fingerprint() const;

  // Desk preset: d in {10, 20} x alpha in {1.5, 2.0}, Gumbel and Gaussian
  // copulas at tau = 0.5, 5 replications, n = 5000/2500/10000.
  static BenchConfig desk(std::uint64_t seed, const std::string& out_dir);
  // The full published grid (expensive).
  static BenchConfig paper(std::uint64_t seed, const std::string& out_dir);
};

struct RunRecord {
  std::string cell_id;
  std::uint64_t cell_fingerprint = 0;
  std::string method;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::size_t epochs_trained = 0;
  std::string divergence_reason;
  metrics::MetricsReport report;
  double wall_seconds = 0.0;

  static std::string csv_header();
  std::string to_csv_row() const;
  static RunRecord from_csv_row(const std::string& line);
};

// Runs every (cell, method, replication) task, persisting incrementally to
// <out_dir>/runs.csv (+ manifest.json). Tasks already present in runs.csv are
// skipped when the manifest fingerprint matches. Row order and content are
// deterministic regardless of worker count.
std::vector<RunRecord> run_grid(const BenchConfig& cfg);

struct AggregateRow {
  std::string cell_id;
  std::string method;
  std::size_t n_reps = 0;
  metrics::MetricsReport median;  // field-wise medians
  double frac_severe = 0.0;
  double frac_catastrophic = 0.0;  // fraction with w1_pareto > 1
};

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records);
void write_summary(const std::vector<RunRecord>& records, const std::string& path);

// Runs the full theory-verification battery (EVT Monte Carlo checks plus the
// analytic-field integrator checks); prints one block per check and returns
// the number of failures.
int verify_all(std::uint64_t seed, std::ostream& out);

}  // namespace tailflow::bench
