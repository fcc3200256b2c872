#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "abi/baselines.hpp"
#include "abi/engine.hpp"
#include "abi/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

// Config problems exit with code 2 and a file:line prefix.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int line_of_byte(const std::string& text, std::size_t byte) {
  const std::size_t end = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(end), '\n'));
}

int line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return 1;
  return line_of_byte(text, pos);
}

struct ConfigFile {
  std::string path;
  std::string text;
  json root;
};

ConfigFile load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ":1: cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  ConfigFile cf;
  cf.path = path;
  cf.text = buf.str();
  try {
    cf.root = json::parse(cf.text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ":" + std::to_string(line_of_byte(cf.text, e.byte)) +
                      ": " + e.what());
  }
  if (!cf.root.is_object()) throw ConfigError(path + ":1: top level must be an object");
  return cf;
}

[[noreturn]] void fail_key(const ConfigFile& cf, const std::string& key,
                           const std::string& msg) {
  throw ConfigError(cf.path + ":" + std::to_string(line_of_key(cf.text, key)) + ": " + msg);
}

double get_number(const ConfigFile& cf, const json& block, const std::string& key,
                  double fallback) {
  if (!block.contains(key)) return fallback;
  if (!block[key].is_number()) fail_key(cf, key, "'" + key + "' must be a number");
  return block[key].get<double>();
}

long get_integer(const ConfigFile& cf, const json& block, const std::string& key,
                 long fallback) {
  if (!block.contains(key)) return fallback;
  if (!block[key].is_number_integer()) fail_key(cf, key, "'" + key + "' must be an integer");
  return block[key].get<long>();
}

std::string get_string(const ConfigFile& cf, const json& block, const std::string& key,
                       const std::string& fallback) {
  if (!block.contains(key)) return fallback;
  if (!block[key].is_string()) fail_key(cf, key, "'" + key + "' must be a string");
  return block[key].get<std::string>();
}

abisim::MswConfig parse_msw(const ConfigFile& cf, const json& block) {
  abisim::MswConfig msw;
  msw.p = get_number(cf, block, "p", msw.p);
  msw.delta = get_number(cf, block, "delta", msw.delta);
  msw.lambda = get_number(cf, block, "lambda", msw.lambda);
  msw.num_slices = static_cast<int>(get_integer(cf, block, "num_slices", msw.num_slices));
  msw.num_bins = static_cast<int>(get_integer(cf, block, "num_bins", msw.num_bins));
  return msw;
}

abisim::QuantileNetConfig parse_net(const ConfigFile& cf, const json& block) {
  abisim::QuantileNetConfig net;
  if (block.contains("hidden")) {
    if (!block["hidden"].is_array()) fail_key(cf, "hidden", "'hidden' must be an array");
    net.hidden.clear();
    for (const auto& v : block["hidden"]) {
      if (!v.is_number_integer()) fail_key(cf, "hidden", "'hidden' entries must be integers");
      net.hidden.push_back(v.get<int>());
    }
  }
  net.kappa = get_number(cf, block, "kappa", net.kappa);
  net.epochs = static_cast<int>(get_integer(cf, block, "epochs", net.epochs));
  net.batch_size = static_cast<int>(get_integer(cf, block, "batch_size", net.batch_size));
  net.adam.learning_rate = get_number(cf, block, "learning_rate", net.adam.learning_rate);
  net.adam.beta1 = get_number(cf, block, "adam_beta1", net.adam.beta1);
  net.adam.beta2 = get_number(cf, block, "adam_beta2", net.adam.beta2);
  net.adam.epsilon = get_number(cf, block, "adam_epsilon", net.adam.epsilon);
  net.holdout_fraction = get_number(cf, block, "holdout_fraction", net.holdout_fraction);
  net.patience = static_cast<int>(get_integer(cf, block, "patience", net.patience));
  net.weight_decay = get_number(cf, block, "weight_decay", net.weight_decay);
  return net;
}

abisim::GmmConfig parse_density(const ConfigFile& cf, const json& block) {
  abisim::GmmConfig g;
  g.min_components = static_cast<int>(get_integer(cf, block, "min_components", g.min_components));
  g.max_components = static_cast<int>(get_integer(cf, block, "max_components", g.max_components));
  g.kmeans_iters = static_cast<int>(get_integer(cf, block, "kmeans_iters", g.kmeans_iters));
  g.em_max_iters = static_cast<int>(get_integer(cf, block, "em_max_iters", g.em_max_iters));
  g.em_rel_tol = get_number(cf, block, "em_rel_tol", g.em_rel_tol);
  g.cov_regularization = get_number(cf, block, "cov_regularization", g.cov_regularization);
  return g;
}

ordered_json echo_msw(const abisim::MswConfig& m) {
  return ordered_json{{"p", m.p},
                      {"delta", m.delta},
                      {"lambda", m.lambda},
                      {"num_slices", m.num_slices},
                      {"num_bins", m.num_bins}};
}

ordered_json echo_net(const abisim::QuantileNetConfig& n) {
  return ordered_json{{"hidden", n.hidden},
                      {"kappa", n.kappa},
                      {"epochs", n.epochs},
                      {"batch_size", n.batch_size},
                      {"learning_rate", n.adam.learning_rate},
                      {"adam_beta1", n.adam.beta1},
                      {"adam_beta2", n.adam.beta2},
                      {"adam_epsilon", n.adam.epsilon},
                      {"holdout_fraction", n.holdout_fraction},
                      {"patience", n.patience},
                      {"weight_decay", n.weight_decay}};
}

ordered_json echo_density(const abisim::GmmConfig& g) {
  return ordered_json{{"min_components", g.min_components},
                      {"max_components", g.max_components},
                      {"kmeans_iters", g.kmeans_iters},
                      {"em_max_iters", g.em_max_iters},
                      {"em_rel_tol", g.em_rel_tol},
                      {"cov_regularization", g.cov_regularization}};
}

struct RunSettings {
  std::string model;
  std::string method;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int posterior_draws = 10000;
  std::string xstar_csv;  // empty: use the bundle's pinned observation

  abisim::AbiConfig abi;
  std::string statistic = "msw";
  std::vector<double> schedule;

  long budget = 100000;
  double keep_fraction = 0.01;
  abisim::QuantileNetConfig summary_net;  // abc-ss only
};

RunSettings parse_run_config(const ConfigFile& cf) {
  RunSettings s;
  if (!cf.root.contains("model")) fail_key(cf, "model", "missing required key 'model'");
  s.model = get_string(cf, cf.root, "model", "");
  if (!cf.root.contains("method")) fail_key(cf, "method", "missing required key 'method'");
  s.method = get_string(cf, cf.root, "method", "");

  const auto names = abisim::model_names();
  if (std::find(names.begin(), names.end(), s.model) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    fail_key(cf, "model", "unknown model '" + s.model + "'; available models: " + list);
  }
  const std::vector<std::string> methods{"abi", "wabc", "abc-ss", "rejection-abc"};
  if (std::find(methods.begin(), methods.end(), s.method) == methods.end())
    fail_key(cf, "method", "unknown method '" + s.method +
                               "'; expected one of abi, wabc, abc-ss, rejection-abc");
  if (!cf.root.contains(s.method))
    fail_key(cf, "method", "missing method block '" + s.method + "'");
  const json& block = cf.root[s.method];
  if (!block.is_object()) fail_key(cf, s.method, "method block must be an object");

  s.seed = static_cast<std::uint64_t>(get_integer(cf, cf.root, "seed", 1));
  s.output_dir = get_string(cf, cf.root, "output_dir", s.output_dir);
  s.posterior_draws =
      static_cast<int>(get_integer(cf, cf.root, "posterior_draws", s.posterior_draws));
  if (s.posterior_draws < 1) fail_key(cf, "posterior_draws", "'posterior_draws' must be >= 1");
  s.xstar_csv = get_string(cf, cf.root, "xstar_csv", "");

  if (s.method == "abi") {
    s.abi.iterations = static_cast<int>(get_integer(cf, block, "iterations", s.abi.iterations));
    s.abi.proposals_per_iter = static_cast<int>(
        get_integer(cf, block, "proposals_per_iter", s.abi.proposals_per_iter));
    s.abi.train_pairs_per_iter = static_cast<int>(
        get_integer(cf, block, "train_pairs_per_iter", s.abi.train_pairs_per_iter));
    s.abi.ars_budget = static_cast<int>(get_integer(cf, block, "ars_budget", s.abi.ars_budget));
    s.abi.quantile_fraction =
        get_number(cf, block, "quantile_fraction", s.abi.quantile_fraction);
    if (block.contains("msw")) s.abi.msw = parse_msw(cf, block["msw"]);
    if (block.contains("net")) s.abi.net = parse_net(cf, block["net"]);
    if (block.contains("density")) s.abi.density = parse_density(cf, block["density"]);
    s.statistic = get_string(cf, block, "statistic", s.statistic);
    if (s.statistic != "msw" && s.statistic != "euclidean")
      fail_key(cf, "statistic", "'statistic' must be \"msw\" or \"euclidean\"");
    if (block.contains("tolerance_schedule")) {
      if (!block["tolerance_schedule"].is_array())
        fail_key(cf, "tolerance_schedule", "'tolerance_schedule' must be an array");
      for (const auto& v : block["tolerance_schedule"]) {
        if (!v.is_number())
          fail_key(cf, "tolerance_schedule", "'tolerance_schedule' entries must be numbers");
        s.schedule.push_back(v.get<double>());
      }
      if (s.schedule.empty())
        fail_key(cf, "tolerance_schedule", "'tolerance_schedule' must be nonempty");
      for (std::size_t i = 1; i < s.schedule.size(); ++i)
        if (!(s.schedule[i] <= s.schedule[i - 1]))
          fail_key(cf, "tolerance_schedule", "'tolerance_schedule' must be non-increasing");
    }
    try {
      s.abi.validate();
    } catch (const std::exception& e) {
      fail_key(cf, s.method, e.what());
    }
  } else {
    s.budget = get_integer(cf, block, "budget", s.budget);
    if (s.budget < 1) fail_key(cf, "budget", "'budget' must be >= 1");
    s.keep_fraction = get_number(cf, block, "keep_fraction", s.keep_fraction);
    if (!(s.keep_fraction > 0.0) || s.keep_fraction > 1.0)
      fail_key(cf, "keep_fraction", "'keep_fraction' must lie in (0, 1]");
    if (s.method == "abc-ss") {
      if (block.contains("net")) s.summary_net = parse_net(cf, block["net"]);
      try {
        s.summary_net.validate();
      } catch (const std::exception& e) {
        fail_key(cf, "net", e.what());
      }
    }
  }
  return s;
}

ordered_json echo_config(const RunSettings& s) {
  ordered_json echo;
  echo["model"] = s.model;
  echo["method"] = s.method;
  echo["seed"] = s.seed;
  echo["output_dir"] = s.output_dir;
  echo["posterior_draws"] = s.posterior_draws;
  echo["xstar_csv"] = s.xstar_csv.empty() ? ordered_json(nullptr) : ordered_json(s.xstar_csv);
  if (s.method == "abi") {
    ordered_json block;
    block["iterations"] = s.abi.iterations;
    block["proposals_per_iter"] = s.abi.proposals_per_iter;
    block["train_pairs_per_iter"] = s.abi.train_pairs_per_iter;
    block["ars_budget"] = s.abi.ars_budget;
    block["quantile_fraction"] = s.abi.quantile_fraction;
    block["statistic"] = s.statistic;
    block["tolerance_schedule"] =
        s.schedule.empty() ? ordered_json(nullptr) : ordered_json(s.schedule);
    block["msw"] = echo_msw(s.abi.msw);
    block["net"] = echo_net(s.abi.net);
    block["density"] = echo_density(s.abi.density);
    echo["abi"] = block;
  } else {
    ordered_json block;
    block["budget"] = s.budget;
    block["keep_fraction"] = s.keep_fraction;
    if (s.method == "abc-ss") block["net"] = echo_net(s.summary_net);
    echo[s.method] = block;
  }
  return echo;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

ordered_json json_or_null(double v) {
  if (std::isfinite(v)) return ordered_json(v);
  return ordered_json(nullptr);
}

int cmd_run(const std::string& config_path, std::optional<long> seed_override,
            const std::string& out_override, bool quiet) {
  const ConfigFile cf = load_config(config_path);
  RunSettings s = parse_run_config(cf);
  if (seed_override) s.seed = static_cast<std::uint64_t>(*seed_override);
  if (!out_override.empty()) s.output_dir = out_override;

  const abisim::SimulatorBundle model = abisim::make_model(s.model);
  abisim::Vec x_star = model.observed_xstar;
  if (!s.xstar_csv.empty()) {
    x_star = abisim::read_xstar_csv(s.xstar_csv);
    if (x_star.size() != model.data_dim)
      throw ConfigError(config_path + ":" + std::to_string(line_of_key(cf.text, "xstar_csv")) +
                        ": x* length " + std::to_string(x_star.size()) +
                        " does not match data dimension " + std::to_string(model.data_dim));
  }

  fs::create_directories(s.output_dir);
  const fs::path out_dir(s.output_dir);
  write_text(out_dir / "config_echo.json", echo_config(s).dump(2) + "\n");

  const auto t0 = std::chrono::steady_clock::now();
  ordered_json report;
  report["model"] = s.model;
  report["method"] = s.method;
  report["seed"] = s.seed;

  abisim::Mat posterior;
  if (s.method == "abi") {
    abisim::AbiResult result;
    if (s.statistic == "euclidean") {
      const abisim::Vec xs = x_star;
      auto dist = [xs](const abisim::Vec& x) { return (x - xs).norm(); };
      result = s.schedule.empty()
                   ? abisim::run_abi(model, x_star, dist, s.abi, s.seed)
                   : abisim::run_abi_fixed_schedule(model, x_star, s.schedule, dist, s.abi, s.seed);
    } else {
      result = s.schedule.empty()
                   ? abisim::run_abi(model, x_star, s.abi, s.seed)
                   : abisim::run_abi_fixed_schedule(model, x_star, s.schedule, nullptr, s.abi, s.seed);
    }
    ordered_json iterations = ordered_json::array();
    for (const auto& r : result.reports) {
      if (!quiet)
        std::cerr << "iteration " << r.t << ": epsilon=" << r.epsilon
                  << " acceptance=" << r.ars_acceptance_rate
                  << " retained=" << r.retained_count << "\n";
      iterations.push_back(ordered_json{{"t", r.t},
                                        {"epsilon", r.epsilon},
                                        {"ars_acceptance_rate", r.ars_acceptance_rate},
                                        {"retained_count", r.retained_count},
                                        {"discarded_budget_exhausted", r.discarded_budget_exhausted},
                                        {"quantile_train_loss", json_or_null(r.quantile_train_loss)},
                                        {"simulator_calls", r.simulator_calls},
                                        {"accepted_pairs", r.accepted_pairs}});
    }
    report["iterations"] = iterations;
    abisim::RandomStream draw_rng(abisim::derive_seed(s.seed, "posterior-draws", 0));
    posterior = abisim::sample_posterior_rows(result, model, s.posterior_draws, draw_rng);
  } else {
    abisim::RandomStream rng(abisim::derive_seed(s.seed, "baseline", 0));
    abisim::RejectionResult rej;
    if (s.method == "wabc") {
      rej = abisim::wasserstein_abc(model, x_star, s.budget, s.keep_fraction, rng);
    } else if (s.method == "abc-ss") {
      rej = abisim::abc_ss(model, x_star, s.budget, s.keep_fraction, s.summary_net, rng);
    } else {
      rej = abisim::rejection_abc(model, x_star, s.budget, s.keep_fraction, rng);
    }
    if (!quiet)
      std::cerr << s.method << ": retained " << rej.retained_theta.rows() << " of "
                << s.budget << " draws\n";
    report["budget"] = s.budget;
    report["keep_fraction"] = s.keep_fraction;
    report["retained_count"] = rej.retained_theta.rows();
    report["simulator_calls"] = rej.simulator_calls;
    report["max_retained_distance"] =
        rej.distances.empty() ? ordered_json(nullptr) : json_or_null(rej.distances.back());
    posterior = rej.retained_theta;
  }

  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report["wall_clock_seconds"] = elapsed;

  abisim::write_matrix_csv((out_dir / "posterior_samples.csv").string(), model.param_names,
                        posterior);
  write_text(out_dir / "report.json", report.dump(2) + "\n");
  if (!quiet) std::cerr << "wrote " << (out_dir / "posterior_samples.csv").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& path_a, const std::string& path_b,
             const std::string& out_dir, bool quiet) {
  abisim::CsvTable a, b;
  try {
    a = abisim::read_matrix_csv(path_a);
    b = abisim::read_matrix_csv(path_b);
  } catch (const std::exception& e) {
    throw ConfigError(std::string(e.what()));
  }
  if (a.rows.cols() != b.rows.cols())
    throw ConfigError("eval: column counts differ (" + std::to_string(a.rows.cols()) +
                      " vs " + std::to_string(b.rows.cols()) + ")");
  const abisim::EvalReport rep = abisim::evaluate(a.rows, b.rows);
  const std::string text = rep.to_json() + "\n";
  std::cout << text;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "eval_report.json", text);
    if (!quiet) std::cerr << "wrote " << (fs::path(out_dir) / "eval_report.json").string() << "\n";
  }
  return 0;
}

int cmd_demo_curse(const std::vector<int>& dims, double epsilon, long trials,
                   long seed, const std::string& out_dir, bool quiet) {
  if (dims.empty()) throw ConfigError("demo-curse: dims must be nonempty");
  if (!(epsilon > 0.0)) throw ConfigError("demo-curse: epsilon must be positive");
  if (trials < 1) throw ConfigError("demo-curse: trials must be >= 1");
  abisim::RandomStream rng(abisim::derive_seed(static_cast<std::uint64_t>(seed), "curse", 0));
  const auto rows = abisim::curse_of_dim_demo(dims, epsilon, trials, rng);
  fs::create_directories(out_dir.empty() ? "." : out_dir);
  const fs::path path = fs::path(out_dir.empty() ? "." : out_dir) / "curse.csv";
  abisim::Mat table(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    table(static_cast<Eigen::Index>(i), 0) = rows[i].dim;
    table(static_cast<Eigen::Index>(i), 1) = rows[i].rate;
  }
  abisim::write_matrix_csv(path.string(), {"n", "acceptance_rate"}, table);
  const double slope = abisim::curse_log_slope(rows);
  std::cerr << "log acceptance-rate slope vs n: " << abisim::format_double(slope) << "\n";
  if (!quiet) std::cerr << "wrote " << path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Likelihood-free inference runner: adaptive posterior matching and ABC baselines"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<long> seed_override;
  std::string out_dir;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run an inference method from a JSON config");
  run->add_option("--config", config_path, "Path to the JSON config")->required();
  long seed_raw = 0;
  auto* seed_opt = run->add_option("--seed", seed_raw, "Override the config seed");
  run->add_option("--out", out_dir, "Override the output directory");
  run->add_flag("--quiet", quiet, "Suppress progress output");

  std::string eval_a, eval_b, eval_out;
  auto* eval = app.add_subcommand("eval", "Compare two posterior sample CSVs");
  eval->add_option("samples_a", eval_a, "First samples CSV")->required();
  eval->add_option("samples_b", eval_b, "Second samples CSV")->required();
  eval->add_option("--out", eval_out, "Directory for eval_report.json");
  eval->add_flag("--quiet", quiet, "Suppress progress output");

  std::vector<int> dims{1, 2, 4, 8, 16};
  double epsilon = 0.5;
  long trials = 100000;
  long curse_seed = 1;
  std::string curse_out = ".";
  auto* curse = app.add_subcommand("demo-curse", "Rejection-rate decay with dimension");
  curse->add_option("--dims", dims, "Data dimensions to probe");
  curse->add_option("--epsilon", epsilon, "Acceptance radius");
  curse->add_option("--trials", trials, "Monte Carlo trials per dimension");
  curse->add_option("--seed", curse_seed, "Random seed");
  curse->add_option("--out", curse_out, "Directory for curse.csv");
  curse->add_flag("--quiet", quiet, "Suppress progress output");

  auto* list = app.add_subcommand("list-models", "List registered benchmark models");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) seed_override = seed_raw;

  try {
    if (run->parsed()) return cmd_run(config_path, seed_override, out_dir, quiet);
    if (eval->parsed()) return cmd_eval(eval_a, eval_b, eval_out, quiet);
    if (curse->parsed()) return cmd_demo_curse(dims, epsilon, trials, curse_seed, curse_out, quiet);
    if (list->parsed()) {
      for (const auto& name : abisim::model_names()) std::cout << name << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
