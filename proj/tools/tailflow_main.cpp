// tailflow: log-space flow matching for heavy-tailed data.
//
// Subcommands: generate, train, sample, nll, evaluate, bench, verify.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tailflow/bench.hpp"
#include "tailflow/datagen.hpp"
#include "tailflow/evt.hpp"
#include "tailflow/flow.hpp"
#include "tailflow/io.hpp"
#include "tailflow/metrics.hpp"

namespace fs = std::filesystem;
using namespace tailflow;

namespace {

datagen::DatasetSpec dataset_from_config(io::KeyValueConfig& cfg) {
  datagen::DatasetSpec spec;
  const std::string copula = cfg.get_string("copula", "gumbel");
  spec.d = cfg.get_size("d", 10);
  const double alpha = cfg.get_double("alpha", 2.0);
  const double frac = cfg.get_double("pareto_fraction", 0.7);
  spec.n_train = cfg.get_size("n_train", 10000);
  spec.n_val = cfg.get_size("n_val", 5000);
  spec.n_test = cfg.get_size("n_test", 20000);
  spec.seed = cfg.get_u64("seed", 0);

  if (copula == "hickling") {
    // Not a copula recipe; handled by the caller.
    throw std::invalid_argument("dataset_from_config: use generate --hickling");
  }
  spec.copula.kind = datagen::copula_from_string(copula);
  spec.copula.param = cfg.get_double(
      spec.copula.kind == datagen::CopulaKind::HuslerReiss ? "rho" : "tau", 0.5);

  const auto n_pareto =
      static_cast<std::size_t>(std::ceil(frac * static_cast<double>(spec.d)));
  spec.margins.resize(spec.d);
  for (std::size_t j = 0; j < spec.d; ++j) {
    spec.margins[j] = j < n_pareto
                          ? datagen::Margin{datagen::MarginKind::SymmetrizedPareto, alpha}
                          : datagen::Margin{datagen::MarginKind::Gaussian, 0.0};
  }
  return spec;
}

flow::TrainConfig train_config_from(io::KeyValueConfig& cfg, std::uint64_t seed) {
  flow::TrainConfig tc;
  tc.schedule = flow::schedule_from_string(cfg.get_string("schedule", "linear"));
  tc.mode = flow::transform_mode_from_string(cfg.get_string("transform", "adaptive"));
  tc.alpha_max = cfg.get_double("alpha_max", 4.0);
  tc.hill_k = cfg.get_size("hill_k", 0);
  tc.max_epochs = cfg.get_size("epochs", 5000);
  tc.patience = cfg.get_size("patience", 100);
  tc.opt.lr = cfg.get_double("lr", 5e-3);
  tc.opt.weight_decay = cfg.get_double("weight_decay", 1e-5);
  tc.opt.clip_norm = cfg.get_double("clip", 10.0);
  tc.standardize = cfg.get_bool("standardize", false);
  tc.hidden_width = cfg.get_size("hidden_width", 256);
  tc.hidden_layers = cfg.get_size("hidden_layers", 4);
  tc.embed_dim = cfg.get_size("embed_dim", 256);
  tc.seed = seed;
  return tc;
}

int cmd_generate(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed_override, bool hickling) {
  io::KeyValueConfig cfg = config_path.empty() ? io::KeyValueConfig::parse("")
                                               : io::KeyValueConfig::load(config_path);
  fs::create_directories(out_dir);
  if (hickling) {
    const std::size_t d = cfg.get_size("d", 10);
    const double nu = cfg.get_double("nu", 2.0);
    const std::size_t n = cfg.get_size("n", 5000);
    std::uint64_t seed = cfg.get_u64("seed", 0);
    if (seed_override) seed = seed_override;
    cfg.assert_all_consumed();
    const auto sample = datagen::sample_hickling(d, nu, n, seed);
    // 40/20/40 split.
    const std::size_t n_train = (n * 2) / 5;
    const std::size_t n_val = n / 5;
    datagen::SampleMatrix part;
    part.labels = sample.labels;
    part.fingerprint = sample.fingerprint;
    part.data = sample.data.slice_rows(0, n_train);
    io::write_sample((fs::path(out_dir) / "train.csv").string(), part, seed);
    part.data = sample.data.slice_rows(n_train, n_train + n_val);
    io::write_sample((fs::path(out_dir) / "val.csv").string(), part, seed);
    part.data = sample.data.slice_rows(n_train + n_val, n);
    io::write_sample((fs::path(out_dir) / "test.csv").string(), part, seed);
    std::cout << "wrote hickling dataset (d=" << d << ", nu=" << nu << ", n=" << n
              << ") to " << out_dir << "\n";
    return 0;
  }
  datagen::DatasetSpec spec = dataset_from_config(cfg);
  if (seed_override) spec.seed = seed_override;
  cfg.assert_all_consumed();
  const auto ds = datagen::generate(spec);
  io::write_sample((fs::path(out_dir) / "train.csv").string(), ds.train, spec.seed);
  io::write_sample((fs::path(out_dir) / "val.csv").string(), ds.val, spec.seed);
  io::write_sample((fs::path(out_dir) / "test.csv").string(), ds.test, spec.seed);
  std::cout << "wrote dataset " << spec.fingerprint() << " to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& val_path,
              const std::string& config_path, const std::string& out_path,
              std::uint64_t seed) {
  io::KeyValueConfig cfg = config_path.empty() ? io::KeyValueConfig::parse("")
                                               : io::KeyValueConfig::load(config_path);
  flow::TrainConfig tc = train_config_from(cfg, seed);
  cfg.assert_all_consumed();

  datagen::SampleMatrix train_data, val_data;
  if (fs::is_directory(data_path)) {
    train_data = io::read_sample((fs::path(data_path) / "train.csv").string());
    val_data = io::read_sample((fs::path(data_path) / "val.csv").string());
  } else {
    train_data = io::read_sample(data_path);
    if (!val_path.empty()) {
      val_data = io::read_sample(val_path);
    } else {
      // Hold out the last fifth for validation.
      const std::size_t n = train_data.data.rows();
      const std::size_t n_val = std::max<std::size_t>(1, n / 5);
      val_data.data = train_data.data.slice_rows(n - n_val, n);
      val_data.labels = train_data.labels;
      train_data.data = train_data.data.slice_rows(0, n - n_val);
    }
  }

  try {
    const flow::TrainedModel model = flow::train(train_data, val_data, tc);
    io::save_checkpoint(out_path, model);
    std::cout << "trained " << model.log.epochs << " epochs (best epoch "
              << model.log.best_epoch << ", val loss "
              << (model.log.val_loss.empty() ? 0.0
                                             : model.log.val_loss[model.log.best_epoch])
              << "); checkpoint: " << out_path << "\n";
    return 0;
  } catch (const flow::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 2;
  }
}

int cmd_sample(const std::string& model_path, std::size_t n, std::size_t steps,
               double clamp, std::uint64_t seed, const std::string& out_path,
               const std::string& ddim_mode) {
  const flow::TrainedModel model = io::load_checkpoint(model_path);
  flow::SampleResult res;
  if (ddim_mode.empty()) {
    res = flow::sample(model, n, steps, clamp, seed);
  } else {
    res = flow::ddim_sample(model, n, steps, flow::eta_mode_from_string(ddim_mode), seed);
  }
  if (res.diverged) {
    std::cerr << "sampling diverged: " << res.reason << "\n";
    return 2;
  }
  io::write_sample(out_path, res.sample, seed);
  std::cout << "wrote " << n << " samples to " << out_path << "\n";
  return 0;
}

int cmd_nll(const std::string& model_path, const std::string& data_path,
            std::size_t probes, std::uint64_t seed) {
  const flow::TrainedModel model = io::load_checkpoint(model_path);
  const datagen::SampleMatrix data = io::read_sample(data_path);
  const flow::NLLEstimate est = flow::nll(model, data.data, probes, seed);
  std::cout << "nll_per_dim=" << est.nll_per_dim << " jacobian_term=" << est.jacobian_term
            << " probes=" << est.hutchinson_probes << " points=" << est.n_points << "\n";
  return 0;
}

int cmd_evaluate(const std::string& gen_path, const std::string& ref_path,
                 const std::string& out_path, std::uint64_t seed) {
  const datagen::SampleMatrix gen = io::read_sample(gen_path);
  const datagen::SampleMatrix ref = io::read_sample(ref_path);
  const metrics::MetricsReport rep = metrics::evaluate(gen, ref, seed);
  if (!out_path.empty()) {
    const bool fresh = !fs::exists(out_path);
    std::ofstream out(out_path, std::ios::app);
    if (!out) throw std::runtime_error("evaluate: cannot open " + out_path);
    if (fresh) out << metrics::MetricsReport::csv_header() << '\n';
    out << rep.to_csv_row() << '\n';
  }
  std::cout << metrics::MetricsReport::csv_header() << "\n" << rep.to_csv_row() << "\n";
  return 0;
}

int cmd_bench(const std::string& preset, const std::string& config_path,
              const std::string& out_dir, std::uint64_t seed, std::size_t jobs) {
  bench::BenchConfig cfg;
  if (preset == "desk") {
    cfg = bench::BenchConfig::desk(seed, out_dir);
  } else if (preset == "paper") {
    cfg = bench::BenchConfig::paper(seed, out_dir);
  } else {
    throw std::invalid_argument("unknown preset: " + preset);
  }
  if (!config_path.empty()) {
    io::KeyValueConfig file = io::KeyValueConfig::load(config_path);
    // Cell axes.
    const auto copulas = file.get_string_list("copulas", {});
    const auto deps = file.get_double_list("dependence", {});
    const auto dims = file.get_double_list("dims", {});
    const auto alphas = file.get_double_list("alphas", {});
    const std::size_t n_train = file.get_size("n_train", 5000);
    const std::size_t n_val = file.get_size("n_val", 2500);
    const std::size_t n_test = file.get_size("n_test", 10000);
    if (!copulas.empty() || !deps.empty() || !dims.empty() || !alphas.empty()) {
      const auto use_copulas = copulas.empty() ? std::vector<std::string>{"gumbel"} : copulas;
      const auto use_deps = deps.empty() ? std::vector<double>{0.5} : deps;
      const auto use_dims = dims.empty() ? std::vector<double>{10} : dims;
      const auto use_alphas = alphas.empty() ? std::vector<double>{2.0} : alphas;
      cfg.cells.clear();
      for (const auto& cop : use_copulas) {
        for (double dep : use_deps) {
          for (double dd : use_dims) {
            for (double aa : use_alphas) {
              bench::CellSpec cell;
              cell.dataset = datagen::DatasetSpec::benchmark(
                  datagen::copula_from_string(cop), dep,
                  static_cast<std::size_t>(dd), aa, n_train, n_val, n_test, 0);
              std::ostringstream id;
              id << cop << "_dep" << dep << "_d" << dd << "_a" << aa;
              cell.id = id.str();
              cfg.cells.push_back(std::move(cell));
            }
          }
        }
      }
    }
    const auto methods = file.get_string_list("methods", {});
    if (!methods.empty()) {
      cfg.methods.clear();
      for (const auto& m : methods) cfg.methods.push_back(bench::MethodSpec::from_name(m));
    }
    for (auto& m : cfg.methods) {
      m.schedule = flow::schedule_from_string(file.get_string("schedule", "linear"));
      m.steps = file.get_size("steps", 100);
      m.clamp = file.get_double("clamp", transforms::kNoClamp);
    }
    cfg.replications = file.get_size("replications", cfg.replications);
    cfg.max_epochs = file.get_size("epochs", cfg.max_epochs);
    cfg.patience = file.get_size("patience", cfg.patience);
    cfg.lr = file.get_double("lr", cfg.lr);
    cfg.weight_decay = file.get_double("weight_decay", cfg.weight_decay);
    cfg.clip = file.get_double("clip", cfg.clip);
    cfg.alpha_max = file.get_double("alpha_max", cfg.alpha_max);
    cfg.standardize = file.get_bool("standardize", cfg.standardize);
    cfg.hidden_width = file.get_size("hidden_width", cfg.hidden_width);
    cfg.hidden_layers = file.get_size("hidden_layers", cfg.hidden_layers);
    cfg.embed_dim = file.get_size("embed_dim", cfg.embed_dim);
    cfg.n_gen = file.get_size("n_gen", cfg.n_gen);
    cfg.save_checkpoints = file.get_bool("save_checkpoints", cfg.save_checkpoints);
    file.assert_all_consumed();
  }
  cfg.jobs = jobs;
  cfg.out_dir = out_dir;
  cfg.base_seed = seed;

  const auto records = bench::run_grid(cfg);
  std::cout << "completed " << records.size() << " runs; results in " << out_dir << "\n";
  std::size_t diverged = 0;
  for (const auto& r : records) diverged += r.report.diverged ? 1 : 0;
  if (diverged) std::cout << diverged << " run(s) diverged\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tailflow: log-space flow matching for heavy-tailed generative modeling"};
  app.require_subcommand(1);

  std::string config_path, data_path, val_path, out_path, model_path, gen_path, ref_path;
  std::string preset = "desk", ddim_mode;
  std::uint64_t seed = 0;
  std::size_t n = 10000, steps = 100, probes = 10, jobs = 1;
  double clamp = transforms::kNoClamp;
  bool hickling = false;

  auto* generate = app.add_subcommand("generate", "generate a synthetic benchmark dataset");
  generate->add_option("--config", config_path, "key=value dataset config");
  generate->add_option("--out", out_path, "output directory")->required();
  generate->add_option("--seed", seed, "seed override");
  generate->add_flag("--hickling", hickling, "conditional Student-t benchmark layout");

  auto* train = app.add_subcommand("train", "train a velocity model");
  train->add_option("--data", data_path, "dataset directory or train CSV")->required();
  train->add_option("--val", val_path, "validation CSV (when --data is a CSV)");
  train->add_option("--config", config_path, "key=value training config");
  train->add_option("--out", out_path, "checkpoint path")->required();
  train->add_option("--seed", seed, "training seed");

  auto* sample = app.add_subcommand("sample", "draw samples from a trained model");
  sample->add_option("--model", model_path, "checkpoint path")->required();
  sample->add_option("--n", n, "number of samples");
  sample->add_option("--steps", steps, "Euler steps");
  sample->add_option("--clamp", clamp, "log-space clamp (inf disables)");
  sample->add_option("--seed", seed, "sampling seed");
  sample->add_option("--ddim", ddim_mode, "DDIM mode: zero|ddpm|max (default: Euler)");
  sample->add_option("--out", out_path, "output CSV")->required();

  auto* nllc = app.add_subcommand("nll", "negative log-likelihood of data under a model");
  nllc->add_option("--model", model_path, "checkpoint path")->required();
  nllc->add_option("--data", data_path, "data CSV")->required();
  nllc->add_option("--probes", probes, "Hutchinson probes");
  nllc->add_option("--seed", seed, "probe seed");

  auto* evaluate = app.add_subcommand("evaluate", "compare generated vs reference CSV");
  evaluate->add_option("--gen", gen_path, "generated sample CSV")->required();
  evaluate->add_option("--ref", ref_path, "reference sample CSV (labels sidecar)")->required();
  evaluate->add_option("--out", out_path, "results CSV to append to");
  evaluate->add_option("--seed", seed, "metric seed");

  auto* benchc = app.add_subcommand("bench", "run an experiment grid");
  benchc->add_option("--preset", preset, "desk|paper");
  benchc->add_option("--config", config_path, "key=value grid config");
  benchc->add_option("--out", out_path, "output directory")->required();
  benchc->add_option("--seed", seed, "base seed");
  benchc->add_option("--jobs", jobs, "worker count");

  auto* verify = app.add_subcommand("verify", "Monte Carlo checks of the tail-annealing theory");
  verify->add_option("--seed", seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(config_path, out_path, seed, hickling);
    if (train->parsed()) return cmd_train(data_path, val_path, config_path, out_path, seed);
    if (sample->parsed()) return cmd_sample(model_path, n, steps, clamp, seed, out_path, ddim_mode);
    if (nllc->parsed()) return cmd_nll(model_path, data_path, probes, seed);
    if (evaluate->parsed()) return cmd_evaluate(gen_path, ref_path, out_path, seed);
    if (benchc->parsed()) return cmd_bench(preset, config_path, out_path, seed, jobs);
    if (verify->parsed()) return bench::verify_all(seed, std::cout) == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
