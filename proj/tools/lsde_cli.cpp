#include <cstdint>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lsde/error.hpp"
#include "lsde/eval.hpp"
#include "lsde/experiment.hpp"
#include "lsde/lamperti.hpp"

namespace fs = std::filesystem;
using namespace lsde;

namespace {

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + item + "' in list '" + s + "'");
    }
  }
  return out;
}

Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct DatasetFlags {
  std::string spec = "ou2d";
  std::string map = "random_smooth";
  std::string noise = "none";
  std::string dt_schedule;
  bool no_rescale = false;
};

void add_dataset_flags(CLI::App* app, DatasetConfig& d, DatasetFlags& f) {
  app->add_option("--spec", f.spec, "SDE catalog name");
  app->add_option("--map", f.map, "random_smooth | raster_ball | linear");
  app->add_option("--n", d.n, "ambient dimension");
  app->add_option("--steps", d.steps, "Euler-Maruyama steps");
  app->add_option("--dt", d.dt, "time step");
  app->add_option("--dt-schedule", f.dt_schedule, "comma-separated gaps (overrides --steps/--dt)");
  app->add_option("--noise", f.noise, "none | gaussian:VAR | student_t:VAR[:DOF]");
  app->add_flag("--no-rescale", f.no_rescale, "keep raw latent coordinates");
  app->add_option("--seed", d.seed, "simulation and noise seed");
  app->add_option("--map-seed", d.map_seed, "ambient map seed");
  app->add_option("--side", d.map_options.side, "raster_ball grid side");
  app->add_option("--identity", d.map_options.identity, "linear map [I; 0]");
  app->add_option("--trajectories", d.n_trajectories, "independent trajectories");
}

void apply_dataset_flags(DatasetConfig& d, const DatasetFlags& f, const CLI::App* app) {
  if (app->count("--spec")) d.spec = f.spec;
  if (app->count("--map")) d.map = map_kind_from_string(f.map);
  if (app->count("--noise")) d.noise = parse_noise(f.noise);
  if (!f.dt_schedule.empty()) d.dt_schedule = parse_list(f.dt_schedule);
  if (f.no_rescale) d.rescale = false;
}

struct ModelFlags {
  std::string encoder_hidden;
  std::string decoder_hidden;
  std::string activation;
  bool diag = false;
  bool diagonal_cov = false;
};

void add_model_flags(CLI::App* app, VaeConfig& m, TrainConfig& t, ModelFlags& f) {
  app->add_option("--d", m.d, "latent dimension (0: SDE dimension)");
  app->add_option("--tau", m.tau, "decoder noise variance");
  app->add_option("--nu", m.nu, "prior precision");
  app->add_flag("--diffusion-diag", f.diag, "learn a diagonal diffusion D");
  app->add_option("--lambda1", m.lambda1, "l1 weight on D");
  app->add_flag("--diagonal-cov", f.diagonal_cov, "diagonal encoder covariance");
  app->add_option("--encoder-hidden", f.encoder_hidden, "comma-separated widths");
  app->add_option("--decoder-hidden", f.decoder_hidden, "comma-separated widths");
  app->add_option("--activation", f.activation, "encoder/decoder activation");
  app->add_option("--model-seed", m.seed, "initialisation seed");
  app->add_option("--epochs", t.epochs, "training epochs");
  app->add_option("--lr", t.adam.lr, "Adam learning rate");
  app->add_option("--decay", t.adam.decay, "learning rate decay per epoch");
  app->add_option("--val", t.val, "trailing validation pairs");
  app->add_option("--batch-size", t.batch_size, "pairs per step (0: full batch)");
  app->add_option("--train-seed", t.seed, "reparameterisation seed");
}

std::vector<int> to_ints(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_list(s)) out.push_back(static_cast<int>(v));
  return out;
}

void apply_model_flags(VaeConfig& m, const ModelFlags& f) {
  auto widths = [](const std::string& s) {
    return s == "none" ? std::vector<int>{} : to_ints(s);
  };
  if (!f.encoder_hidden.empty()) m.encoder_hidden = widths(f.encoder_hidden);
  if (!f.decoder_hidden.empty()) m.decoder_hidden = widths(f.decoder_hidden);
  if (!f.activation.empty()) m.activation = activation_from_string(f.activation);
  if (f.diag) m.diffusion_diag = true;
  if (f.diagonal_cov) m.full_covariance = false;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent SDE identification: generate, train, evaluate"};
  app.require_subcommand(1);

  // Config values become the flag defaults, so explicit flags override them.
  ExperimentConfig cfg;
  std::string config_path;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) config_path = argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) config_path = arg.substr(9);
  }
  try {
    if (!config_path.empty()) cfg = load_experiment_config(config_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  }
  DatasetFlags dflags;
  dflags.spec = cfg.dataset.spec;
  dflags.map = to_string(cfg.dataset.map);
  dflags.noise = to_string(cfg.dataset.noise);
  ModelFlags mflags;

  auto* gen = app.add_subcommand("generate", "simulate a latent SDE and embed it");
  std::string out_dir;
  add_dataset_flags(gen, cfg.dataset, dflags);
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  std::string data_dir, model_dir;
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "output directory")->required();
  add_model_flags(tr, cfg.model, cfg.training, mflags);
  std::uint64_t train_both_seed = 0;
  tr->add_option("--seed", train_both_seed, "model and training seed (unless set separately)");
  bool verbose = false;
  tr->add_flag("-v,--verbose", verbose, "progress on stderr");

  auto* ev = app.add_subcommand("evaluate", "score a trained model");
  std::string mode = "orthogonal", csv_path, metrics_out;
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--model", model_dir, "model directory")->required();
  ev->add_option("--mode", mode, "orthogonal | affine");
  ev->add_option("--out", metrics_out, "metrics.json path (default: stdout)");
  ev->add_option("--csv", csv_path, "append a results row");

  auto* run = app.add_subcommand("run", "generate, train and evaluate");
  int repeat = 1;
  run->add_option("--config", config_path, "ExperimentConfig JSON");
  run->add_option("--repeat", repeat, "independent model/training seeds");
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_flag("-v,--verbose", verbose, "progress on stderr");
  add_dataset_flags(run, cfg.dataset, dflags);
  add_model_flags(run, cfg.model, cfg.training, mflags);

  auto* ds = app.add_subcommand("dimsearch", "select the latent dimension");
  std::string dim_mode = "linear_likelihood", sizes = "1,2,3,4,5";
  double threshold = cfg.evaluation.diag_threshold;
  ds->add_option("--config", config_path, "ExperimentConfig JSON");
  ds->add_option("--data", data_dir, "existing dataset (otherwise generated from config)");
  ds->add_option("--mode", dim_mode, "diag_heuristic | linear_likelihood");
  ds->add_option("--sizes", sizes, "comma-separated candidate sizes");
  ds->add_option("--threshold", threshold, "diag_heuristic threshold relative to the leading entry");
  ds->add_option("--out", out_dir, "write report.json here");
  ds->add_flag("-v,--verbose", verbose, "progress on stderr");
  add_dataset_flags(ds, cfg.dataset, dflags);
  add_model_flags(ds, cfg.model, cfg.training, mflags);

  auto* lc = app.add_subcommand("lamperti-check", "reducibility residuals and transformed drift");
  std::string lspec = "gbm1d", base, points;
  bool no_spd = false;
  lc->add_option("--spec", lspec, "SDE catalog name");
  lc->add_option("--base", base, "integration origin, comma-separated");
  lc->add_option("--points", points, "semicolon-separated evaluation points");
  lc->add_flag("--no-spd", no_spd, "skip the symmetric positive definite check");

  auto* cr = app.add_subcommand("crlb", "Cramer-Rao bound d / (dt N)");
  int cd = 2;
  double cdt = 0.01;
  std::size_t cn = 1000;
  cr->add_option("--d", cd, "latent dimension");
  cr->add_option("--dt", cdt, "time step");
  cr->add_option("--n", cn, "number of pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      apply_dataset_flags(cfg.dataset, dflags, gen);
      const PairedDataset data = make_dataset(cfg.dataset);
      save_dataset(data, out_dir);
      std::cout << "wrote " << data.size() << " pairs (n=" << data.ambient_dim()
                << ", injectivity margin " << data.meta.injectivity_margin << ") to " << out_dir
                << '\n';
      for (int k : data.meta.rescale_skipped) {
        std::cerr << "warning: latent coordinate " << k << " has zero range; not rescaled\n";
      }
    } else if (*tr) {
      apply_model_flags(cfg.model, mflags);
      if (tr->count("--seed")) {
        if (!tr->count("--model-seed")) cfg.model.seed = train_both_seed;
        if (!tr->count("--train-seed")) cfg.training.seed = train_both_seed;
      }
      const PairedDataset data = load_dataset(data_dir);
      VaeModel model(resolve_model(cfg, data));
      const TrainResult res = train(model, data, cfg.training, [&](const EpochLog& e) {
        if (verbose && e.epoch % 100 == 0) {
          std::cerr << "epoch " << e.epoch << " total " << e.train.total << " val " << e.val_total
                    << '\n';
        }
      });
      save_model(model, fs::path(out_dir));
      write_loss_log(res.log, fs::path(out_dir) / "loss_log.csv");
      std::cout << "best epoch " << res.best_epoch << " val_total " << res.best_val << '\n';
    } else if (*ev) {
      const PairedDataset data = load_dataset(data_dir);
      const VaeModel model = load_model(model_dir);
      const MetricsReport r = evaluate(model, data, align_mode_from_string(mode));
      nlohmann::json j = to_json(r);
      j["seeds"] = {{"dataset", data.meta.generation.seed},
                    {"map", data.meta.map_seed},
                    {"model", model.config().seed}};
      if (metrics_out.empty()) {
        print_json(j);
      } else {
        std::ofstream(metrics_out) << j.dump(2) << '\n';
      }
      if (!csv_path.empty()) {
        const bool fresh = !fs::exists(csv_path);
        std::ofstream csv(csv_path, std::ios::app);
        csv.precision(10);
        if (fresh) csv << "dataset,sde,L_latent,L_mu,CRLB,recon_mse\n";
        csv << to_string(data.meta.map_kind) << ',' << data.meta.generation.spec_name << ','
            << r.l_latent << ',' << r.l_mu << ',' << r.crlb << ',' << r.reconstruction_mse << '\n';
      }
    } else if (*run) {
      apply_dataset_flags(cfg.dataset, dflags, run);
      apply_model_flags(cfg.model, mflags);
      const RunSummary s = run_experiment(cfg, out_dir, repeat, verbose);
      for (const auto& st : s.stats) {
        std::cout << std::setw(20) << std::left << st.name << st.mean << " +- " << st.std << '\n';
      }
    } else if (*ds) {
      apply_dataset_flags(cfg.dataset, dflags, ds);
      apply_model_flags(cfg.model, mflags);
      if (ds->count("--threshold")) cfg.evaluation.diag_threshold = threshold;
      const PairedDataset data = data_dir.empty() ? make_dataset(cfg.dataset) : load_dataset(data_dir);
      const DimsearchReport r =
          dimsearch(cfg, data, dim_mode_from_string(dim_mode), to_ints(sizes), verbose);
      for (const auto& row : r.rows) {
        std::cout << "size " << row.size;
        if (r.mode == DimMode::kLinearLikelihood) {
          std::cout << "  loglik " << row.loglik;
        } else {
          std::cout << "  |D|";
          for (double v : row.diagonal) std::cout << ' ' << v;
          std::cout << "  above threshold " << row.suggested;
        }
        std::cout << '\n';
      }
      std::cout << "selected dimension " << r.selected << '\n';
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "report.json") << to_json(r).dump(2) << '\n';
      }
    } else if (*lc) {
      const SdeSpec spec = catalog(lspec);
      LampertiOptions opts;
      opts.base_point = base.empty() ? default_initial_state(spec) : to_vec(parse_list(base));
      opts.reducibility.require_spd = !no_spd;
      const auto grid = default_probe_grid(opts.base_point);
      const ReducibilityReport rep = check_reducible(spec, grid, opts.reducibility);
      std::cout << "y,t,curl_residual,asymmetry,min_eigenvalue,singular\n";
      for (const auto& p : rep.points) {
        std::cout << '"';
        for (Eigen::Index k = 0; k < p.y.size(); ++k) std::cout << (k ? " " : "") << p.y[k];
        std::cout << "\"," << p.t << ',' << p.curl_residual << ',' << p.asymmetry << ','
                  << p.min_eigenvalue << ',' << (p.singular ? 1 : 0) << '\n';
      }
      std::cout << "# reducible " << (rep.reducible ? "yes" : "no") << ", max curl residual "
                << rep.max_curl_residual << '\n';
      if (!rep.reducible) {
        std::cout << "# " << rep.failure << '\n';
        return 4;
      }
      const LampertiMap map = LampertiMap::build(spec, opts);
      std::vector<Vec> ys;
      if (points.empty()) {
        for (const auto& p : grid) ys.push_back(p.y);
      } else {
        std::stringstream ss(points);
        for (std::string item; std::getline(ss, item, ';');) ys.push_back(to_vec(parse_list(item)));
      }
      std::cout << "y,z,mu_tilde\n";
      for (const Vec& y : ys) {
        const Vec z = map.h(y, 0.0);
        const Vec m = map.transformed_drift(z, 0.0);
        auto row = [](const Vec& v) {
          std::ostringstream os;
          os << '"';
          for (Eigen::Index k = 0; k < v.size(); ++k) os << (k ? " " : "") << v[k];
          os << '"';
          return os.str();
        };
        std::cout << row(y) << ',' << row(z) << ',' << row(m) << '\n';
      }
    } else if (*cr) {
      std::cout << std::setprecision(17) << crlb(cd, cdt, cn) << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
