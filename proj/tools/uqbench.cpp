// Command-line front end: SPC sweeps, gradient checks, and the 2D/regression
// toy dumps. See README.md for usage examples.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uqbench/gradcheck.hpp"
#include "uqbench/harness.hpp"

namespace fs = std::filesystem;
using namespace uq;

namespace {

std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (out.empty()) throw CLI::ValidationError("expected a comma-separated list, got '" + csv + "'");
  return out;
}

std::vector<std::string> parse_string_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Options {
  std::string dataset = "two_moons";
  std::string ood_dataset;  // empty = dataset-specific default
  std::string data_dir = "data";
  std::string methods = "baseline";
  std::string aggregator = "l1_norm";
  std::string spc = "1,5,10,50,100,250,500,1000,5000";
  std::string samples = "25,50,100,200";  // regression toy training sizes
  std::string mode = "two-moons";         // toy subcommand
  std::size_t trials = 5;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::size_t mc_samples = 50;
  std::size_t ensemble_size = 5;
  std::size_t grid_resolution = 100;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config_path;
  bool inject_error = false;
};

std::string default_ood(const std::string& dataset) {
  if (dataset == "two_moons") return "uniform_box";
  if (dataset == "fashion_mnist") return "mnist";
  if (dataset == "cifar10") return "svhn";
  return "";
}

struct LoadedData {
  data::LabeledDataset train_full;
  data::LabeledDataset test_id;
  data::LabeledDataset test_ood;
  methods::Backbone backbone = methods::Backbone::kMlp32;
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("data file not found: " + path);
}

data::LabeledDataset load_idx_split(const std::string& dir, bool train) {
  const std::string images = dir + (train ? "/train-images-idx3-ubyte" : "/t10k-images-idx3-ubyte");
  const std::string labels = dir + (train ? "/train-labels-idx1-ubyte" : "/t10k-labels-idx1-ubyte");
  require_file(images);
  require_file(labels);
  return data::load_idx(images, labels);
}

data::LabeledDataset load_named_split(const Options& opt, const std::string& name, bool train) {
  if (name == "cifar10") {
    const std::string dir = opt.data_dir + "/cifar10";
    std::vector<std::string> paths;
    if (train) {
      for (int i = 1; i <= 5; ++i) paths.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    } else {
      paths.push_back(dir + "/test_batch.bin");
    }
    for (const auto& p : paths) require_file(p);
    return data::load_cifar10_binary(paths);
  }
  // Everything else ships in the IDX container under data_dir/<name>/.
  return load_idx_split(opt.data_dir + "/" + name, train);
}

LoadedData load_datasets(const Options& opt, std::size_t max_spc) {
  LoadedData out;
  const std::string ood = opt.ood_dataset.empty() ? default_ood(opt.dataset) : opt.ood_dataset;
  if (ood.empty()) throw std::runtime_error("no --ood-dataset given for dataset " + opt.dataset);
  if (opt.dataset == "two_moons") {
    const std::size_t pool = std::max<std::size_t>(1000, max_spc);
    out.train_full = data::make_two_moons(pool, 0.1, derive_seed(opt.seed, 0xd001));
    out.test_id = data::make_two_moons(500, 0.1, derive_seed(opt.seed, 0xd002));
    out.backbone = methods::Backbone::kMlp32;
    if (ood == "uniform_box") {
      out.test_ood = data::make_uniform_box(1000, -2.5, 3.5, -2.0, 2.5, derive_seed(opt.seed, 0xd003));
    } else {
      throw std::runtime_error("unsupported --ood-dataset for two_moons: " + ood);
    }
    return out;
  }
  out.train_full = load_named_split(opt, opt.dataset, true);
  out.test_id = load_named_split(opt, opt.dataset, false);
  out.test_ood = load_named_split(opt, ood, false);
  out.backbone = methods::Backbone::kMiniCnn;
  if (out.test_ood.sample_shape() != out.test_id.sample_shape()) {
    throw std::runtime_error("OOD sample shape " + shape_to_string(out.test_ood.sample_shape()) +
                             " does not match " + shape_to_string(out.test_id.sample_shape()));
  }
  return out;
}

methods::MethodConfig method_config(const Options& opt, methods::Method m) {
  methods::MethodConfig cfg;
  cfg.method = m;
  cfg.mc_samples = opt.mc_samples;
  cfg.ensemble_size = opt.ensemble_size;
  cfg.aggregator = methods::parse_aggregator(opt.aggregator);
  cfg.validate();
  return cfg;
}

nn::TrainConfig train_config(const Options& opt) {
  nn::TrainConfig cfg;
  cfg.epochs = opt.epochs;
  cfg.batch_size = opt.batch_size;
  cfg.seed = opt.seed;
  return cfg;
}

std::string sweep_csv_name(const Options& opt, methods::Method m, methods::Backbone backbone) {
  const bool gradient = m == methods::Method::kGradient;
  std::string method_tag = methods::method_name(m);
  if (gradient) method_tag += "-" + std::string(methods::aggregator_name(methods::parse_aggregator(opt.aggregator)));
  return std::string(gradient ? "maxprob" : "entropy") + "-vs-SPC-" + opt.dataset + "-results-" +
         methods::backbone_name(backbone) + "-" + method_tag + "-combined.csv";
}

std::vector<std::pair<std::string, std::string>> config_echo(const Options& opt) {
  return {
      {"dataset", opt.dataset},
      {"ood_dataset", opt.ood_dataset.empty() ? default_ood(opt.dataset) : opt.ood_dataset},
      {"data_dir", opt.data_dir},
      {"method", opt.methods},
      {"aggregator", opt.aggregator},
      {"spc", opt.spc},
      {"trials", std::to_string(opt.trials)},
      {"epochs", std::to_string(opt.epochs)},
      {"batch_size", std::to_string(opt.batch_size)},
      {"mc_samples", std::to_string(opt.mc_samples)},
      {"ensemble_size", std::to_string(opt.ensemble_size)},
      {"seed", std::to_string(opt.seed)},
      {"out_dir", opt.out_dir},
  };
}

int cmd_sweep(const Options& opt) {
  const std::vector<std::string> method_names = parse_string_list(opt.methods);
  if (method_names.empty()) throw CLI::ValidationError("--method: empty method list");
  std::vector<methods::Method> method_list;
  for (const auto& name : method_names) {
    try {
      method_list.push_back(methods::parse_method(name));
    } catch (const std::invalid_argument& e) {
      throw CLI::ValidationError(std::string("--method: ") + e.what());
    }
  }
  harness::SweepPlan plan;
  plan.spc_values = parse_size_list(opt.spc);
  plan.trials = opt.trials;
  plan.base_seed = opt.seed;
  plan.validate();

  const std::size_t max_spc = *std::max_element(plan.spc_values.begin(), plan.spc_values.end());
  const LoadedData loaded = load_datasets(opt, max_spc);
  fs::create_directories(opt.out_dir);

  for (methods::Method m : method_list) {
    const auto t0 = std::chrono::steady_clock::now();
    const methods::MethodConfig mcfg = method_config(opt, m);
    const auto rows = harness::run_sweep(mcfg, loaded.backbone, loaded.train_full, loaded.test_id,
                                         loaded.test_ood, plan, train_config(opt));
    const std::string csv_path = opt.out_dir + "/" + sweep_csv_name(opt, m, loaded.backbone);
    harness::write_sweep_csv(rows, csv_path);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto manifest = config_echo(opt);
    manifest.emplace_back("this_method", methods::method_name(m));
    manifest.emplace_back("backbone", methods::backbone_name(loaded.backbone));
    for (std::size_t spc : plan.spc_values) {
      for (std::size_t trial = 0; trial < plan.trials; ++trial) {
        manifest.emplace_back(
            "trial_seed." + std::to_string(spc) + "." + std::to_string(trial),
            std::to_string(harness::trial_seed(plan.base_seed, spc, trial)));
      }
    }
    manifest.emplace_back("wall_time_seconds", harness::format_double(wall));
    harness::write_manifest(csv_path + ".manifest", manifest);
    std::cout << "wrote " << csv_path << "\n";
  }
  return 0;
}

int cmd_gradcheck(const Options& opt) {
  const auto items = nn::gradcheck_battery(opt.seed ? opt.seed : 12345, opt.inject_error);
  bool all_ok = true;
  for (const auto& item : items) {
    const bool ok = item.max_rel_err < nn::kGradCheckTolerance;
    all_ok = all_ok && ok;
    std::printf("%-16s %12.3e  %s\n", item.name.c_str(), item.max_rel_err, ok ? "ok" : "FAIL");
  }
  std::printf("worst relative error tolerance: %.0e\n", nn::kGradCheckTolerance);
  return all_ok ? 0 : 1;
}

void write_grid_csv(const std::string& path, const std::vector<std::array<double, 3>>& rows) {
  std::ostringstream os;
  os << "x;y;confidence\n";
  for (const auto& row : rows) {
    os << harness::format_double(row[0]) << ';' << harness::format_double(row[1]) << ';'
       << harness::format_double(row[2]) << "\n";
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
    f << os.str();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot move " + tmp + " into place");
  }
}

int cmd_toy_two_moons(const Options& opt) {
  const std::vector<std::string> method_names = parse_string_list(opt.methods);
  std::vector<std::size_t> spc_values = parse_size_list(opt.spc);
  const std::size_t max_spc = *std::max_element(spc_values.begin(), spc_values.end());
  const std::size_t pool_n = std::max<std::size_t>(1000, max_spc);
  const data::LabeledDataset pool = data::make_two_moons(pool_n, 0.1, derive_seed(opt.seed, 0xd001));
  fs::create_directories(opt.out_dir);

  // Dense evaluation grid over the moons with margin.
  const double x_lo = -2.0, x_hi = 3.0, y_lo = -1.5, y_hi = 2.0;
  const std::size_t res = opt.grid_resolution;
  Tensor grid({res * res, 2});
  for (std::size_t iy = 0; iy < res; ++iy) {
    for (std::size_t ix = 0; ix < res; ++ix) {
      grid.at(iy * res + ix, 0) = x_lo + (x_hi - x_lo) * static_cast<double>(ix) / (res - 1);
      grid.at(iy * res + ix, 1) = y_lo + (y_hi - y_lo) * static_cast<double>(iy) / (res - 1);
    }
  }

  for (const auto& name : method_names) {
    methods::Method m;
    try {
      m = methods::parse_method(name);
    } catch (const std::invalid_argument& e) {
      throw CLI::ValidationError(std::string("--method: ") + e.what());
    }
    const methods::MethodConfig mcfg = method_config(opt, m);
    for (std::size_t spc : spc_values) {
      const std::uint64_t seed = harness::trial_seed(opt.seed, spc, 0);
      const data::LabeledDataset sub = data::subsample_per_class(pool, spc, derive_seed(seed, 1));
      const nn::ModelSpec spec = methods::make_classifier_spec(methods::Backbone::kMlp32,
                                                               sub.sample_shape(), 2, mcfg);
      nn::TrainConfig tcfg = train_config(opt);
      tcfg.seed = derive_seed(seed, 3);

      methods::PredictionSet pred;
      switch (m) {
        case methods::Method::kDeepEnsemble: {
          auto members =
              methods::train_ensemble(spec, sub, tcfg, mcfg.ensemble_size, derive_seed(seed, 5));
          pred = methods::predict_ensemble(members, grid);
          break;
        }
        case methods::Method::kDropout:
        case methods::Method::kDropConnect: {
          nn::Model model(spec, derive_seed(seed, 2));
          nn::train(model, sub, tcfg);
          RngStream mc(derive_seed(seed, 4));
          pred = methods::predict_mc(model, grid, mcfg.mc_samples, m, mc);
          break;
        }
        case methods::Method::kFlipout: {
          nn::Model model(spec, derive_seed(seed, 2));
          nn::train(model, sub, tcfg);
          RngStream mc(derive_seed(seed, 4));
          pred = methods::predict_flipout(model, grid, mcfg.mc_samples, mc);
          break;
        }
        case methods::Method::kDuq: {
          nn::Model model(spec, derive_seed(seed, 2));
          nn::train(model, sub, tcfg);
          pred = methods::predict_duq(model, grid);
          break;
        }
        case methods::Method::kGradient: {
          nn::Model model(spec, derive_seed(seed, 2));
          nn::train(model, sub, tcfg);
          pred = methods::predict_gradient(model, grid, mcfg.aggregator);
          break;
        }
        case methods::Method::kBaseline: {
          nn::Model model(spec, derive_seed(seed, 2));
          nn::train(model, sub, tcfg);
          pred = methods::predict_baseline(model, grid);
          break;
        }
      }
      std::vector<std::array<double, 3>> rows(grid.dim(0));
      for (std::size_t i = 0; i < grid.dim(0); ++i) {
        rows[i] = {grid.at(i, 0), grid.at(i, 1), pred.maxprob_score(i)};
      }
      std::string method_tag = methods::method_name(m);
      if (m == methods::Method::kGradient) {
        method_tag += "-" + std::string(methods::aggregator_name(mcfg.aggregator));
      }
      const std::string path =
          opt.out_dir + "/two-moons-grid-" + method_tag + "-spc" + std::to_string(spc) + ".csv";
      write_grid_csv(path, rows);
      std::cout << "wrote " << path << "\n";
    }
  }
  return 0;
}

int cmd_toy_regression(const Options& opt) {
  const std::vector<std::string> method_names = parse_string_list(opt.methods);
  const std::vector<std::size_t> sizes = parse_size_list(opt.samples);
  fs::create_directories(opt.out_dir);
  for (const auto& name : method_names) {
    harness::RegressionMethod m;
    try {
      m = harness::parse_regression_method(name);
    } catch (const std::invalid_argument& e) {
      throw CLI::ValidationError(std::string("--method: ") + e.what());
    }
    for (std::size_t n : sizes) {
      nn::TrainConfig cfg = train_config(opt);
      cfg.seed = harness::trial_seed(opt.seed, n, 0);
      const harness::RegressionCurves curves =
          harness::run_regression_toy(m, n, cfg, 281, opt.mc_samples, opt.ensemble_size);

      std::ostringstream os;
      os << "x;mu;sigma_aleatoric;sigma_epistemic\n";
      const bool deterministic = m == harness::RegressionMethod::kBaselineMse;
      for (std::size_t i = 0; i < curves.x.size(); ++i) {
        os << harness::format_double(curves.x[i]) << ';' << harness::format_double(curves.mean[i])
           << ';';
        if (curves.aleatoric_variance) {
          os << harness::format_double(std::sqrt((*curves.aleatoric_variance)[i]));
        }
        os << ';';
        if (!deterministic) os << harness::format_double(curves.epistemic_std[i]);
        os << "\n";
      }
      const std::string path = opt.out_dir + "/regression-" +
                               harness::regression_method_name(m) + "-n" + std::to_string(n) +
                               ".csv";
      const std::string tmp = path + ".tmp";
      {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
        f << os.str();
      }
      if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("cannot move " + tmp + " into place");
      }
      std::cout << "wrote " << path << "\n";
    }
  }
  return 0;
}

void add_common_options(CLI::App* cmd, Options& opt) {
  cmd->add_option("--dataset", opt.dataset, "Dataset: two_moons, fashion_mnist, cifar10, or any IDX directory name");
  cmd->add_option("--ood-dataset", opt.ood_dataset, "OOD dataset (default pairs with --dataset)");
  cmd->add_option("--data-dir", opt.data_dir, "Directory holding dataset subdirectories");
  cmd->add_option("--method", opt.methods, "Comma-separated method list");
  cmd->add_option("--aggregator", opt.aggregator, "Gradient aggregator: l1_norm, l2_norm, mean, std, min, max");
  cmd->add_option("--spc", opt.spc, "Comma-separated samples-per-class values");
  cmd->add_option("--trials", opt.trials, "Trials per SPC value");
  cmd->add_option("--epochs", opt.epochs, "Training epochs");
  cmd->add_option("--batch-size", opt.batch_size, "Mini-batch size");
  cmd->add_option("--mc-samples", opt.mc_samples, "Monte-Carlo forward passes");
  cmd->add_option("--ensemble-size", opt.ensemble_size, "Deep ensemble members");
  cmd->add_option("--seed", opt.seed, "Base RNG seed");
  cmd->add_option("--out-dir", opt.out_dir, "Output directory");
  cmd->add_option("--config", opt.config_path, "Flat key=value config file (flags take precedence)");
}

// Applies config-file entries as defaults: every key maps to the long flag
// of the same name (underscores become dashes) and is appended only when the
// flag was not given on the command line.
std::vector<std::string> merge_config_file(const std::vector<std::string>& args,
                                           const CLI::App* subcommand) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;

  std::vector<std::string> merged = args;
  for (const auto& [key, value] : harness::read_manifest(config_path)) {
    std::string flag = "--";
    for (char c : key) flag += (c == '_') ? '-' : c;
    if (flag == "--config") continue;
    if (subcommand->get_option_no_throw(flag) == nullptr) {
      // manifest echoes carry run metadata (trial seeds, wall time); skip
      // anything that is not a known flag but reject outright typos
      if (key.find('.') != std::string::npos || key == "this_method" || key == "backbone" ||
          key == "wall_time_seconds") {
        continue;
      }
      throw CLI::ValidationError("config file: unknown key '" + key + "'");
    }
    bool given = false;
    for (const auto& arg : args) {
      if (arg == flag || arg.rfind(flag + "=", 0) == 0) given = true;
    }
    if (!given) {
      merged.push_back(flag);
      merged.push_back(value);
    }
  }
  return merged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-set-size benchmarks for uncertainty quantification methods"};
  app.require_subcommand(1);

  Options sweep_opt, toy_opt, grad_opt;

  CLI::App* sweep = app.add_subcommand("sweep", "Run an SPC sweep and write per-method CSVs");
  add_common_options(sweep, sweep_opt);

  CLI::App* toy = app.add_subcommand("toy", "Dump 2D confidence grids or regression curves");
  add_common_options(toy, toy_opt);
  toy->add_option("--mode", toy_opt.mode, "two-moons or regression")
      ->check(CLI::IsMember({"two-moons", "regression"}));
  toy->add_option("--grid-resolution", toy_opt.grid_resolution, "Grid points per axis (two-moons)");
  toy->add_option("--samples", toy_opt.samples, "Training set sizes (regression)");

  CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference check of every layer and loss");
  grad->add_option("--seed", grad_opt.seed, "Base RNG seed");
  grad->add_flag("--inject-error", grad_opt.inject_error, "Corrupt one gradient (negative control)")
      ->group("");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (!args.empty()) {
      const CLI::App* sub = app.get_subcommand_no_throw(args.front());
      if (sub != nullptr) args = merge_config_file(args, sub);
    }
    // CLI11 consumes vector arguments back to front.
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (sweep->parsed()) return cmd_sweep(sweep_opt);
    if (grad->parsed()) return cmd_gradcheck(grad_opt);
    if (toy->parsed()) {
      return toy_opt.mode == "regression" ? cmd_toy_regression(toy_opt) : cmd_toy_two_moons(toy_opt);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
