#include "tailflow/bench.hpp"

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tailflow/evt.hpp"
#include "tailflow/io.hpp"
#include "tailflow/rng.hpp"

namespace tailflow::bench {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Method and config plumbing
// ---------------------------------------------------------------------------

std::string MethodSpec::name() const {
  switch (mode) {
    case flow::TransformMode::Adaptive: return "logfm_adaptive";
    case flow::TransformMode::Uniform: return "logfm_uniform";
    case flow::TransformMode::Arcsinh: return "arcsinh_fm";
    case flow::TransformMode::Identity: return "identity_fm";
  }
  return "?";
}

MethodSpec MethodSpec::from_name(const std::string& name) {
  MethodSpec m;
  if (name == "logfm_adaptive") {
    m.mode = flow::TransformMode::Adaptive;
  } else if (name == "logfm_uniform") {
    m.mode = flow::TransformMode::Uniform;
  } else if (name == "arcsinh_fm") {
    m.mode = flow::TransformMode::Arcsinh;
  } else if (name == "identity_fm") {
    m.mode = flow::TransformMode::Identity;
  } else {
    throw std::invalid_argument("unknown method: " + name);
  }
  return m;
}

std::uint64_t BenchConfig::fingerprint() const {
  std::uint64_t h = 0x62656e6368ull;  // "bench"
  for (const auto& c : cells) h = hash_combine(h, c.dataset.fingerprint());
  for (const auto& m : methods) {
    h = hash_combine(h, static_cast<std::uint64_t>(m.mode));
    h = hash_combine(h, static_cast<std::uint64_t>(m.schedule));
    h = hash_combine(h, std::bit_cast<std::uint64_t>(m.clamp));
    h = hash_combine(h, m.steps);
  }
  h = hash_combine(h, replications);
  h = hash_combine(h, base_seed);
  h = hash_combine(h, max_epochs);
  h = hash_combine(h, patience);
  h = hash_combine(h, std::bit_cast<std::uint64_t>(lr));
  h = hash_combine(h, std::bit_cast<std::uint64_t>(weight_decay));
  h = hash_combine(h, n_gen);
  h = hash_combine(h, hidden_width);
  h = hash_combine(h, hidden_layers);
  h = hash_combine(h, embed_dim);
  return h;
}

namespace {

std::string cell_id_for(datagen::CopulaKind copula, double dep, std::size_t d,
                        double alpha) {
  std::ostringstream os;
  os << datagen::to_string(copula) << "_dep" << dep << "_d" << d << "_a" << alpha;
  return os.str();
}

}  // namespace

BenchConfig BenchConfig::desk(std::uint64_t seed, const std::string& out_dir) {
  BenchConfig cfg;
  cfg.base_seed = seed;
  cfg.out_dir = out_dir;
  cfg.replications = 5;
  cfg.max_epochs = 1500;
  for (auto copula : {datagen::CopulaKind::Gumbel, datagen::CopulaKind::Gaussian}) {
    for (std::size_t d : {std::size_t{10}, std::size_t{20}}) {
      for (double alpha : {1.5, 2.0}) {
        CellSpec cell;
        cell.dataset = datagen::DatasetSpec::benchmark(copula, 0.5, d, alpha, 5000,
                                                       2500, 10000, 0);
        cell.id = cell_id_for(copula, 0.5, d, alpha);
        cfg.cells.push_back(std::move(cell));
      }
    }
  }
  cfg.methods = {MethodSpec{flow::TransformMode::Adaptive},
                 MethodSpec{flow::TransformMode::Uniform},
                 MethodSpec{flow::TransformMode::Arcsinh},
                 MethodSpec{flow::TransformMode::Identity}};
  return cfg;
}

BenchConfig BenchConfig::paper(std::uint64_t seed, const std::string& out_dir) {
  BenchConfig cfg;
  cfg.base_seed = seed;
  cfg.out_dir = out_dir;
  cfg.replications = 20;
  cfg.max_epochs = 5000;
  const std::vector<std::pair<datagen::CopulaKind, std::vector<double>>> copulas = {
      {datagen::CopulaKind::Gaussian, {0.25, 0.5, 0.75}},
      {datagen::CopulaKind::Gumbel, {0.25, 0.5, 0.75}},
      {datagen::CopulaKind::HuslerReiss, {0.1, 0.5, 0.9}}};
  for (const auto& [copula, deps] : copulas) {
    for (double dep : deps) {
      for (std::size_t d : {std::size_t{10}, std::size_t{20}, std::size_t{50},
                            std::size_t{100}}) {
        for (double alpha : {1.5, 1.75, 2.0, 2.5}) {
          CellSpec cell;
          cell.dataset = datagen::DatasetSpec::benchmark(copula, dep, d, alpha, 10000,
                                                         5000, 20000, 0);
          cell.id = cell_id_for(copula, dep, d, alpha);
          cfg.cells.push_back(std::move(cell));
        }
      }
    }
  }
  cfg.methods = {MethodSpec{flow::TransformMode::Adaptive},
                 MethodSpec{flow::TransformMode::Uniform},
                 MethodSpec{flow::TransformMode::Arcsinh},
                 MethodSpec{flow::TransformMode::Identity}};
  return cfg;
}

// ---------------------------------------------------------------------------
// RunRecord CSV
// ---------------------------------------------------------------------------

std::string RunRecord::csv_header() {
  return "cell_id,cell_fingerprint,method,replication,seed,epochs,divergence_reason," +
         metrics::MetricsReport::csv_header() + ",wall_seconds";
}

std::string RunRecord::to_csv_row() const {
  std::ostringstream os;
  os << cell_id << ',' << cell_fingerprint << ',' << method << ',' << replication
     << ',' << seed << ',' << epochs_trained << ',' << divergence_reason << ','
     << report.to_csv_row() << ',';
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", wall_seconds);
  os << buf;
  return os.str();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

RunRecord RunRecord::from_csv_row(const std::string& line) {
  const auto f = split_csv(line);
  constexpr std::size_t kHead = 7;
  if (f.size() != kHead + metrics::MetricsReport::kCsvFieldCount + 1) {
    throw std::invalid_argument("RunRecord: unexpected field count in row");
  }
  RunRecord r;
  r.cell_id = f[0];
  r.cell_fingerprint = std::stoull(f[1]);
  r.method = f[2];
  r.replication = std::stoull(f[3]);
  r.seed = std::stoull(f[4]);
  r.epochs_trained = std::stoull(f[5]);
  r.divergence_reason = f[6];
  r.report = metrics::MetricsReport::from_csv_fields(
      std::span<const std::string>(f).subspan(kHead, metrics::MetricsReport::kCsvFieldCount));
  r.wall_seconds = std::stod(f.back());
  return r;
}

// ---------------------------------------------------------------------------
// Grid execution
// ---------------------------------------------------------------------------

namespace {

// Distinct sub-stream ranges keep dataset seeds, run seeds and metric seeds
// provably disjoint under the bijective seed derivation.
constexpr std::uint64_t kRunStream = 0;
constexpr std::uint64_t kDataStream = std::uint64_t{1} << 40;

struct Task {
  std::size_t index = 0;
  std::size_t cell = 0;
  std::size_t method = 0;
  std::size_t rep = 0;
};

RunRecord execute_task(const BenchConfig& cfg, const Task& task) {
  const auto t0 = std::chrono::steady_clock::now();
  const CellSpec& cell = cfg.cells[task.cell];
  const MethodSpec& method = cfg.methods[task.method];

  RunRecord rec;
  rec.cell_id = cell.id;
  rec.cell_fingerprint = cell.dataset.fingerprint();
  rec.method = method.name();
  rec.replication = task.rep;
  rec.seed = derive_seed(cfg.base_seed, kRunStream + task.index);

  // All methods see the same data within a (cell, replication) pair.
  datagen::DatasetSpec ds = cell.dataset;
  ds.seed = derive_seed(cfg.base_seed, kDataStream + task.cell * cfg.replications + task.rep);
  const datagen::Dataset data = datagen::generate(ds);

  flow::TrainConfig tc;
  tc.schedule = method.schedule;
  tc.mode = method.mode;
  tc.alpha_max = cfg.alpha_max;
  tc.max_epochs = cfg.max_epochs;
  tc.patience = cfg.patience;
  tc.opt.lr = cfg.lr;
  tc.opt.weight_decay = cfg.weight_decay;
  tc.opt.clip_norm = cfg.clip;
  tc.standardize = cfg.standardize;
  tc.hidden_width = cfg.hidden_width;
  tc.hidden_layers = cfg.hidden_layers;
  tc.embed_dim = cfg.embed_dim;
  tc.seed = rec.seed;

  const std::size_t n_gen = cfg.n_gen ? cfg.n_gen : ds.n_test;
  bool diverged = false;
  try {
    flow::TrainedModel model = flow::train(data.train, data.val, tc);
    rec.epochs_trained = model.log.epochs;
    if (cfg.save_checkpoints && !cfg.out_dir.empty()) {
      const fs::path dir = fs::path(cfg.out_dir) / "models";
      fs::create_directories(dir);
      std::ostringstream name;
      name << cell.id << "__" << rec.method << "__r" << task.rep << ".ckpt";
      io::save_checkpoint((dir / name.str()).string(), model);
    }
    flow::SampleResult gen = flow::sample(model, n_gen, method.steps, method.clamp,
                                          derive_seed(rec.seed, 7001));
    if (gen.diverged) {
      diverged = true;
      rec.divergence_reason = gen.reason;
    } else {
      rec.report = metrics::evaluate(gen.sample, data.test, derive_seed(rec.seed, 7002));
    }
  } catch (const flow::DivergenceError& e) {
    diverged = true;
    rec.divergence_reason = e.what();
  }

  if (diverged) {
    // Divergent runs carry the +inf sentinel on every metric.
    datagen::SampleMatrix bad;
    bad.data = Matrix(1, cell.dataset.d, std::numeric_limits<double>::quiet_NaN());
    bad.labels = data.test.labels;
    rec.report = metrics::evaluate(bad, data.test, 0);
    // CSV rows are comma-separated; scrub the reason.
    for (auto& c : rec.divergence_reason) {
      if (c == ',' || c == '\n') c = ';';
    }
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace

std::vector<RunRecord> run_grid(const BenchConfig& cfg) {
  if (cfg.cells.empty() || cfg.methods.empty() || cfg.replications == 0) {
    throw std::invalid_argument("run_grid: empty grid");
  }
  const std::size_t n_tasks = cfg.cells.size() * cfg.methods.size() * cfg.replications;
  std::vector<Task> tasks;
  tasks.reserve(n_tasks);
  for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
    for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
      for (std::size_t r = 0; r < cfg.replications; ++r) {
        tasks.push_back(Task{tasks.size(), c, m, r});
      }
    }
  }

  std::vector<std::optional<RunRecord>> results(n_tasks);
  std::ofstream runs_out;
  std::size_t already_done = 0;

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    const fs::path manifest_path = fs::path(cfg.out_dir) / "manifest.json";
    const fs::path runs_path = fs::path(cfg.out_dir) / "runs.csv";

    if (fs::exists(manifest_path)) {
      std::ifstream min(manifest_path);
      nlohmann::json manifest = nlohmann::json::parse(min);
      if (manifest.at("config_fingerprint").get<std::uint64_t>() != cfg.fingerprint()) {
        throw std::runtime_error(
            "run_grid: output directory holds a different configuration "
            "(fingerprint mismatch); refusing to resume");
      }
      if (fs::exists(runs_path)) {
        std::ifstream rin(runs_path);
        std::string line;
        std::getline(rin, line);  // header
        while (std::getline(rin, line)) {
          if (line.empty()) continue;
          RunRecord rec = RunRecord::from_csv_row(line);
          // Rows are written in task order, so completed rows form a prefix.
          if (already_done < n_tasks) {
            results[already_done] = std::move(rec);
            ++already_done;
          }
        }
      }
    } else {
      nlohmann::json manifest;
      manifest["config_fingerprint"] = cfg.fingerprint();
      manifest["base_seed"] = cfg.base_seed;
      manifest["cells"] = nlohmann::json::array();
      for (const auto& c : cfg.cells) {
        manifest["cells"].push_back({{"id", c.id}, {"fingerprint", c.dataset.fingerprint()}});
      }
      std::vector<std::string> method_names;
      for (const auto& m : cfg.methods) method_names.push_back(m.name());
      manifest["methods"] = method_names;
      manifest["replications"] = cfg.replications;
      std::ofstream mout(manifest_path);
      mout << manifest.dump(2) << '\n';
    }

    const bool fresh = already_done == 0 && !fs::exists(runs_path);
    runs_out.open(runs_path, fresh ? std::ios::out : std::ios::app);
    if (!runs_out) throw std::runtime_error("run_grid: cannot open runs.csv");
    if (fresh) runs_out << RunRecord::csv_header() << '\n';
  }

  // Workers pull tasks; a single writer emits rows strictly in task order so
  // the persisted file is identical for any worker count.
  std::atomic<std::size_t> next_task{already_done};
  std::mutex mu;
  std::condition_variable cv;
  std::size_t write_cursor = already_done;

  const std::size_t n_workers = std::max<std::size_t>(1, cfg.jobs);
  std::vector<std::thread> workers;
  std::exception_ptr first_error;

  auto worker_fn = [&]() {
    for (;;) {
      const std::size_t i = next_task.fetch_add(1);
      if (i >= n_tasks) return;
      try {
        RunRecord rec = execute_task(cfg, tasks[i]);
        std::lock_guard<std::mutex> lock(mu);
        results[i] = std::move(rec);
        cv.notify_all();
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first_error) first_error = std::current_exception();
        cv.notify_all();
        return;
      }
    }
  };
  for (std::size_t w = 0; w < n_workers; ++w) workers.emplace_back(worker_fn);

  {
    std::unique_lock<std::mutex> lock(mu);
    while (write_cursor < n_tasks) {
      cv.wait(lock, [&] {
        return first_error || (write_cursor < n_tasks && results[write_cursor].has_value());
      });
      if (first_error) break;
      while (write_cursor < n_tasks && results[write_cursor].has_value()) {
        if (runs_out.is_open()) {
          runs_out << results[write_cursor]->to_csv_row() << '\n';
          runs_out.flush();
        }
        ++write_cursor;
      }
    }
  }
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);

  std::vector<RunRecord> records;
  records.reserve(n_tasks);
  for (auto& r : results) records.push_back(std::move(*r));

  if (!cfg.out_dir.empty()) {
    write_summary(records, (fs::path(cfg.out_dir) / "summary.csv").string());
  }
  return records;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

namespace {

// Median with +inf ordered last; NaN (absent metric) stays NaN.
double median_of(std::vector<double> v) {
  if (v.empty()) return metrics::MetricsReport::kNaN;
  for (double x : v) {
    if (std::isnan(x)) return metrics::MetricsReport::kNaN;
  }
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  std::vector<AggregateRow> rows;
  std::vector<std::pair<std::string, std::string>> seen;
  for (const auto& rec : records) {
    const auto key = std::make_pair(rec.cell_id, rec.method);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);

    std::vector<const RunRecord*> group;
    for (const auto& r : records) {
      if (r.cell_id == rec.cell_id && r.method == rec.method) group.push_back(&r);
    }
    AggregateRow row;
    row.cell_id = rec.cell_id;
    row.method = rec.method;
    row.n_reps = group.size();
    const auto collect = [&](auto field) {
      std::vector<double> v;
      v.reserve(group.size());
      for (const auto* g : group) v.push_back(g->report.*field);
      return median_of(std::move(v));
    };
    row.median.w1_all = collect(&metrics::MetricsReport::w1_all);
    row.median.w1_pareto = collect(&metrics::MetricsReport::w1_pareto);
    row.median.w1_gauss = collect(&metrics::MetricsReport::w1_gauss);
    row.median.hill_err = collect(&metrics::MetricsReport::hill_err);
    row.median.var99_rel = collect(&metrics::MetricsReport::var99_rel);
    row.median.cvar99_rel = collect(&metrics::MetricsReport::cvar99_rel);
    row.median.q995_rel = collect(&metrics::MetricsReport::q995_rel);
    row.median.q999_rel = collect(&metrics::MetricsReport::q999_rel);
    row.median.ake = collect(&metrics::MetricsReport::ake);
    row.median.angular_w2 = collect(&metrics::MetricsReport::angular_w2);
    row.median.sliced_w = collect(&metrics::MetricsReport::sliced_w);
    row.median.energy = collect(&metrics::MetricsReport::energy);
    std::size_t severe = 0, cata = 0;
    for (const auto* g : group) {
      severe += g->report.severe ? 1 : 0;
      cata += g->report.catastrophic ? 1 : 0;
    }
    row.frac_severe = static_cast<double>(severe) / static_cast<double>(group.size());
    row.frac_catastrophic = static_cast<double>(cata) / static_cast<double>(group.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_summary(const std::vector<RunRecord>& records, const std::string& path) {
  const auto rows = aggregate(records);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_summary: cannot open " + path);
  out << "cell_id,method,n_reps," << metrics::MetricsReport::csv_header()
      << ",frac_severe,frac_w1p_gt_1\n";
  for (const auto& row : rows) {
    metrics::MetricsReport med = row.median;
    med.diverged = false;
    med.severe = row.frac_severe > 0.0;
    med.catastrophic = row.frac_catastrophic > 0.0;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", row.frac_severe,
                  row.frac_catastrophic);
    out << row.cell_id << ',' << row.method << ',' << row.n_reps << ','
        << med.to_csv_row() << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// verify: theory suite plus analytic-field integrator checks
// ---------------------------------------------------------------------------

namespace {

evt::VerifyReport check_analytic_euler(std::uint64_t seed) {
  const double sigma = 1.5;
  const std::size_t n = 100000, d = 2;
  const flow::Schedule sched{flow::ScheduleKind::Linear};
  Rng rng(seed);
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.normal();
  }
  const auto res =
      flow::euler_reverse(flow::gaussian_path_velocity(sched, sigma), std::move(x), 100);

  evt::VerifyReport rep;
  rep.name = "analytic_gaussian_euler sigma=1.5 K=100";
  double mean = 0.0, var = 0.0;
  const double count = static_cast<double>(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean += res.x(i, j);
  }
  mean /= count;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = res.x(i, j) - mean;
      var += c * c;
    }
  }
  var /= count;
  rep.lines.push_back({"sample_mean", 0.0, mean, 0.02, std::abs(mean) <= 0.02,
                       res.diverged ? "integration diverged" : ""});
  rep.lines.push_back({"sample_variance", sigma * sigma, var, 0.05 * sigma * sigma,
                       std::abs(var - sigma * sigma) <= 0.05 * sigma * sigma, ""});
  if (res.diverged) rep.lines.front().pass = false;
  return rep;
}

evt::VerifyReport check_analytic_nll(std::uint64_t seed) {
  const std::size_t n = 100000, d = 1;
  const flow::Schedule sched{flow::ScheduleKind::Linear};
  Rng rng(seed);
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) x(i, 0) = rng.normal();
  const auto core =
      flow::nll_core(flow::gaussian_path_velocity(sched, 1.0),
                     flow::gaussian_path_jvp(sched, 1.0), x, 10,
                     derive_seed(seed, 1), 1e-5, 1e-5);
  double mean = 0.0;
  for (double v : core.nll) mean += v;
  mean /= static_cast<double>(n);
  const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  evt::VerifyReport rep;
  rep.name = "analytic_gaussian_nll dopri5 tol=1e-5";
  rep.lines.push_back({"nll_per_dim", entropy, mean, 0.01,
                       std::abs(mean - entropy) <= 0.01,
                       "n=" + std::to_string(n) + " steps=" + std::to_string(core.n_steps)});
  return rep;
}

evt::VerifyReport check_ddim_variance(std::uint64_t seed) {
  // K = 400: the conditional-mean denoiser drops the x0-posterior spread,
  // which biases the terminal variance down by O(1/K).
  const std::size_t n = 100000, d = 1, steps = 400;
  const double sigma = 1.25;
  const flow::Schedule sched{flow::ScheduleKind::VPTrig};
  Rng rng(seed);
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) x(i, 0) = rng.normal();
  Rng rng2(derive_seed(seed, 1));
  const auto res = flow::ddim_reverse(flow::gaussian_path_denoiser(sched, sigma), sched,
                                      std::move(x), steps, flow::EtaMode::Zero, rng2);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += res.x(i, 0) * res.x(i, 0);
  var /= static_cast<double>(n);
  evt::VerifyReport rep;
  rep.name = "analytic_ddim_eta0 VP-trig sigma=1.25 K=400";
  rep.lines.push_back({"terminal_variance", sigma * sigma, var, 0.02 * sigma * sigma,
                       std::abs(var - sigma * sigma) <= 0.02 * sigma * sigma,
                       res.diverged ? "integration diverged" : ""});
  return rep;
}

evt::VerifyReport check_hutchinson(std::uint64_t seed) {
  const std::size_t d = 8, probes = 10000;
  Rng rng(seed);
  std::vector<double> A(d * d);
  for (auto& a : A) a = rng.normal();
  // Probe noise scales with the off-diagonal mass, not the trace; use a
  // trace-dominant field so the 1% band is meaningful at this probe count.
  for (std::size_t i = 0; i < d; ++i) A[i * d + i] += 5.0;
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += A[i * d + i];

  Rng prng(derive_seed(seed, 1));
  double est = 0.0;
  std::vector<double> e(d), ae(d);
  for (std::size_t p = 0; p < probes; ++p) {
    for (std::size_t i = 0; i < d; ++i) e[i] = prng.rademacher();
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += A[i * d + j] * e[j];
      ae[i] = s;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += ae[i] * e[i];
    est += dot;
  }
  est /= static_cast<double>(probes);
  evt::VerifyReport rep;
  rep.name = "hutchinson_trace linear field d=8";
  rep.lines.push_back({"divergence_estimate", trace, est, 0.01 * std::abs(trace),
                       std::abs(est - trace) <= 0.01 * std::abs(trace),
                       std::to_string(probes) + " probes"});
  return rep;
}

evt::VerifyReport check_hill_gating(std::uint64_t seed) {
  evt::VerifyReport rep;
  rep.name = "hill_gating 14 Pareto(2) + 6 Gaussian, d=20";
  const auto spec = datagen::DatasetSpec::benchmark(datagen::CopulaKind::Gumbel, 0.5,
                                                    20, 2.0, 10000, 1, 1, seed);
  const auto data = datagen::generate(spec);
  for (double alpha_max : {3.0, 4.0, 5.0}) {
    const auto mask = evt::hill_mask(data.train.data, alpha_max,
                                     evt::default_gate_k(data.train.data.rows()));
    bool exact = true;
    for (std::size_t j = 0; j < 20; ++j) {
      const bool want = j < 14;
      if (mask[j] != want) exact = false;
    }
    std::size_t selected = 0;
    for (bool b : mask) selected += b ? 1 : 0;
    rep.lines.push_back({"mask@alpha_max=" + std::to_string(alpha_max), 14.0,
                         static_cast<double>(selected), 0.0, exact,
                         exact ? "exactly the Pareto coordinates" : "wrong selection"});
  }
  return rep;
}

}  // namespace

int verify_all(std::uint64_t seed, std::ostream& out) {
  std::vector<evt::VerifyReport> reports;
  reports.push_back(evt::verify_power_lemma(0.5, 2.0, 100000, derive_seed(seed, 10), 0.10));
  reports.push_back(evt::verify_power_lemma(0.4, 0.5, 100000, derive_seed(seed, 11), 0.15));
  reports.push_back(evt::verify_breiman(2.0, 1000000, derive_seed(seed, 12), 0.15));
  reports.push_back(evt::verify_breiman(1.5, 1000000, derive_seed(seed, 13), 0.15));
  reports.push_back(evt::verify_potter_sandwich(1.5, 0.3, 1000000, derive_seed(seed, 14)));
  reports.push_back(evt::verify_potter_sandwich(2.0, 0.3, 1000000, derive_seed(seed, 15)));
  reports.push_back(evt::verify_log_score(0.5, 1000000, derive_seed(seed, 16)));
  reports.push_back(evt::verify_log_score(1.0, 1000000, derive_seed(seed, 17)));
  {
    const double path[] = {1.0, 0.75, 0.5};
    reports.push_back(evt::verify_annealing_path(0.5, path, 200000, derive_seed(seed, 18)));
  }
  reports.push_back(check_analytic_euler(derive_seed(seed, 19)));
  reports.push_back(check_analytic_nll(derive_seed(seed, 20)));
  reports.push_back(check_ddim_variance(derive_seed(seed, 21)));
  reports.push_back(check_hutchinson(derive_seed(seed, 22)));
  reports.push_back(check_hill_gating(derive_seed(seed, 23)));

  int failures = 0;
  for (const auto& rep : reports) {
    out << rep.to_text();
    if (!rep.pass()) ++failures;
  }
  out << (failures == 0 ? "verify: all checks passed\n"
                        : "verify: " + std::to_string(failures) + " check(s) FAILED\n");
  return failures;
}

}  // namespace tailflow::bench
