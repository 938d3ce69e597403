#include "polyrom/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "polyrom/datagen.hpp"
#include "polyrom/errors.hpp"
#include "polyrom/lpv.hpp"
#include "polyrom/pae.hpp"
#include "polyrom/polytope.hpp"
#include "polyrom/storage.hpp"
#include "polyrom/svgplot.hpp"
#include "polyrom/version.hpp"

namespace polyrom {

namespace {

namespace fs = std::filesystem;

std::string fmt10(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

void ensure_parent_dir(const std::string& path) {
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string file_crc_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for hashing");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", crc32_bytes(bytes.data(), bytes.size()));
  return buf;
}

// Smooth periodic profile with seeded mode amplitudes and phases.
Vector burgers_initial(int n, double length, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  const double a1 = dist(rng), a2 = dist(rng), a3 = dist(rng);
  const double p1 = dist(rng), p2 = dist(rng);
  Vector v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double x = 2.0 * M_PI * static_cast<double>(i) / n;
    (void)length;
    v[static_cast<std::size_t>(i)] =
        a1 * std::sin(x + p1) + 0.5 * a2 * std::sin(2.0 * x + p2) + 0.25 * a3 * std::sin(3.0 * x);
  }
  return v;
}

void write_loss_history_csv(const TrainResult* result, const std::string& path) {
  std::ostringstream out;
  out << "step,epoch,loss\n";
  if (result != nullptr) {
    const Vector* histories[3] = {&result->history1, &result->history2, &result->history3};
    for (int step = 0; step < 3; ++step) {
      const Vector& h = *histories[step];
      for (std::size_t e = 0; e < h.size(); ++e) {
        out << (step + 1) << ',' << (e + 1) << ',' << fmt10(h[e]) << '\n';
      }
    }
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << out.str();
  if (!f) throw Error("write to '" + path + "' failed");
}

void write_activation_csv(const Vector& rates, const std::string& path) {
  std::ostringstream out;
  out << "component,rate\n";
  for (std::size_t i = 0; i < rates.size(); ++i) {
    out << (i + 1) << ',' << fmt10(rates[i]) << '\n';
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << out.str();
  if (!f) throw Error("write to '" + path + "' failed");
}

void write_snapshot_csv(const SnapshotErrors& errs, const SnapshotSet& data,
                        const std::string& path) {
  std::ostringstream out;
  out << "index,time,half,vnorm,rec_abs,rec_rel,poly_abs,poly_rel\n";
  for (int t = 0; t < data.count(); ++t) {
    const std::size_t u = static_cast<std::size_t>(t);
    out << t << ',' << fmt10(data.times[u]) << ',' << (t < data.split ? "train" : "test") << ','
        << fmt10(errs.vnorm[u]) << ',' << fmt10(errs.rec_abs[u]) << ',' << fmt10(errs.rec_rel[u])
        << ',' << fmt10(errs.poly_abs[u]) << ',' << fmt10(errs.poly_rel[u]) << '\n';
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << out.str();
  if (!f) throw Error("write to '" + path + "' failed");
}

double split_time(const SnapshotSet& data) {
  if (data.split <= 0 || data.split >= data.count()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  const std::size_t s = static_cast<std::size_t>(data.split);
  return 0.5 * (data.times[s - 1] + data.times[s]);
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

// ---- command options -------------------------------------------------------

struct GenerateOpts {
  std::string dataset;
  int n = 0;  // 0 means dataset default
  int steps = 0;
  double dt = 0.01;
  double viscosity = 0.01;
  double length = 1.0;
  int phases = 60;
  unsigned seed = 0;
  std::string out;
};

struct TrainOpts {
  std::string model;
  int r = 3;
  int k = 3;
  bool k_given = false;
  std::string data;
  std::string epochs = "200,100,200";
  int batch = 64;
  double lr = 1e-4;
  double lambda = 1e-4;
  unsigned seed = 0;
  std::string out;
};

struct EvalOpts {
  std::string model;
  std::string data;
  std::string out;
  double tol = 1e-9;
  int threads = 1;
};

struct PolyErrOpts {
  std::string model;
  std::string data;
  double tol = 1e-9;
  std::string out;
};

struct LpvExportOpts {
  std::string model;
  std::string system;
  std::string out;
};

int do_generate(const GenerateOpts& o) {
  Timer timer;
  RunManifest manifest;
  manifest.command = "generate";
  manifest.version = kVersion;
  manifest.seed = o.seed;

  DatasetArtifact artifact;
  if (o.dataset == "burgers1d") {
    const int n = o.n > 0 ? o.n : 128;
    const int steps = o.steps > 0 ? o.steps : 500;
    QuadraticOde ode = assemble_burgers(n, o.viscosity, o.length);
    artifact.data = integrate(ode, burgers_initial(n, o.length, o.seed), o.dt, steps);
    artifact.has_burgers = true;
    artifact.burgers_viscosity = o.viscosity;
    artifact.burgers_length = o.length;
    manifest.config["viscosity"] = fmt10(o.viscosity);
    manifest.config["length"] = fmt10(o.length);
  } else {
    const int side = o.n > 0 ? o.n : 32;
    const int steps = o.steps > 0 ? o.steps : 449;
    LimitCycleConfig cfg;
    cfg.jitter_seed = o.seed;
    LimitCycleData cycle = generate_limit_cycle_2d(side, side, steps + 1, o.phases, cfg);
    artifact.data = std::move(cycle.snapshots);
    for (std::size_t i = 0; i < artifact.data.times.size(); ++i) {
      artifact.data.times[i] = static_cast<double>(i) * o.dt;
    }
    artifact.source_xy = std::move(cycle.source_xy);
    artifact.source_h = cycle.source_h;
    artifact.source_w = cycle.source_w;
    manifest.config["phases"] = std::to_string(o.phases);
  }
  ensure_parent_dir(o.out);
  save_dataset(artifact, o.out);
  load_dataset(o.out);  // read-back validation

  manifest.config["dataset"] = o.dataset;
  manifest.config["n"] = std::to_string(o.n);
  manifest.config["steps"] = std::to_string(o.steps);
  manifest.config["dt"] = fmt10(o.dt);
  manifest.outputs.push_back(o.out);
  manifest.duration_seconds = timer.seconds();
  write_manifest(manifest, o.out + ".manifest.json");

  std::cout << "wrote " << o.out << " (" << artifact.data.dim() << " x "
            << artifact.data.count() << " snapshots, split " << artifact.data.split << ")\n";
  return 0;
}

int do_train(const TrainOpts& o) {
  Timer timer;
  RunManifest manifest;
  manifest.command = "train";
  manifest.version = kVersion;
  manifest.seed = o.seed;
  manifest.inputs["data"] = o.data;

  DatasetArtifact dataset = load_dataset(o.data);
  const std::string loss_csv = o.out + ".loss.csv";
  ensure_parent_dir(o.out);

  if (o.model == "pod") {
    PodModel model = fit_pod(dataset.data, o.r);
    save_pod_model(model, o.out);
    load_pod_model(o.out);  // read-back validation
    write_loss_history_csv(nullptr, loss_csv);
    std::cout << "wrote " << o.out << " (pod basis, r=" << o.r << ")\n";
  } else {
    const int k = o.model == "cae" ? 1 : o.k;
    TrainConfig cfg;
    std::sscanf(o.epochs.c_str(), "%d,%d,%d", &cfg.epochs1, &cfg.epochs2, &cfg.epochs3);
    cfg.batch_size = o.batch;
    cfg.lr = o.lr;
    cfg.lambda = o.lambda;
    cfg.seed = o.seed;

    std::optional<GridMap> grid;
    if (!dataset.source_xy.empty()) {
      const int nodes = dataset.source_h * dataset.source_w;
      if (nodes <= 0 || dataset.data.dim() % nodes != 0) {
        throw DimensionError("dataset source lattice does not divide the state dimension");
      }
      grid = cycle_grid_from_sources(dataset.source_xy, dataset.source_h, dataset.source_w,
                                     dataset.data.dim() / nodes);
    }
    TrainResult result = train_three_step(dataset.data, cfg, k, o.r, grid);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    save_pae_model(result.model, o.out);
    load_pae_model(o.out);  // read-back validation
    write_loss_history_csv(&result, loss_csv);
    std::cout << "wrote " << o.out << " (" << o.model << ", r=" << o.r << ", k=" << k
              << ", train loss " << fmt10(result.final_loss) << ")\n";
    manifest.config["epochs"] = o.epochs;
    manifest.config["batch"] = std::to_string(o.batch);
    manifest.config["lr"] = fmt10(o.lr);
    manifest.config["lambda"] = fmt10(o.lambda);
    manifest.config["k"] = std::to_string(k);
  }

  manifest.config["model"] = o.model;
  manifest.config["r"] = std::to_string(o.r);
  manifest.outputs.push_back(o.out);
  manifest.outputs.push_back(loss_csv);
  manifest.duration_seconds = timer.seconds();
  write_manifest(manifest, o.out + ".manifest.json");
  return 0;
}

int do_eval(const EvalOpts& o) {
  Timer timer;
  RunManifest manifest;
  manifest.command = "eval";
  manifest.version = kVersion;
  manifest.inputs["model"] = o.model;
  manifest.inputs["data"] = o.data;
  manifest.config["tol"] = fmt10(o.tol);
  manifest.config["threads"] = std::to_string(o.threads);

  StoredModel stored = load_model(o.model);
  DatasetArtifact dataset = load_dataset(o.data);
  const SnapshotSet& data = dataset.data;

  SnapshotErrors errs;
  EvalReport report;
  int r = 0, k = 1;
  if (stored.kind == ModelKind::pod) {
    if (stored.pod.n() != data.dim()) {
      throw DimensionError("model dimension " + std::to_string(stored.pod.n()) +
                           " does not match data dimension " + std::to_string(data.dim()));
    }
    errs = pod_snapshot_errors(stored.pod, data);
    report = evaluate_pod(stored.pod, data);
    r = stored.pod.r();
  } else {
    if (stored.pae.n != data.dim()) {
      throw DimensionError("model dimension " + std::to_string(stored.pae.n) +
                           " does not match data dimension " + std::to_string(data.dim()));
    }
    errs = per_snapshot_errors(stored.pae, data, o.tol, o.threads);
    report = evaluate(stored.pae, data, o.tol, o.threads);
    r = stored.pae.r;
    k = stored.pae.k;
  }
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";

  fs::create_directories(o.out);
  const std::string metrics_path = (fs::path(o.out) / "metrics.csv").string();
  const std::string activation_path = (fs::path(o.out) / "activation.csv").string();
  const std::string snapshots_path = (fs::path(o.out) / "snapshots.csv").string();
  const std::string error_svg = (fs::path(o.out) / "error_vs_time.svg").string();
  const std::string latent_svg = (fs::path(o.out) / "latents.svg").string();

  write_metrics_csv({metrics_row(stored.kind, r, k, report)}, metrics_path);
  read_metrics_csv(metrics_path);  // read-back validation
  write_activation_csv(report.activation, activation_path);
  write_snapshot_csv(errs, data, snapshots_path);

  const double sep = split_time(data);
  {
    std::vector<PlotSeries> series;
    series.push_back({"reconstruction", data.times, errs.rec_rel});
    if (stored.kind != ModelKind::pod) {
      series.push_back({"polytope", data.times, errs.poly_rel});
    }
    PlotConfig cfg;
    cfg.title = "relative error over time";
    cfg.x_label = "time";
    cfg.y_label = "relative error";
    cfg.separator_x = sep;
    write_line_plot(series, cfg, error_svg);
  }
  {
    std::vector<PlotSeries> series;
    for (int j = 0; j < r; ++j) {
      Vector y(static_cast<std::size_t>(data.count()));
      for (int t = 0; t < data.count(); ++t) y[static_cast<std::size_t>(t)] = errs.latents(j, t);
      series.push_back({"rho_" + std::to_string(j + 1), data.times, std::move(y)});
    }
    PlotConfig cfg;
    cfg.title = "latent trajectories";
    cfg.x_label = "time";
    cfg.y_label = "latent value";
    cfg.separator_x = sep;
    write_line_plot(series, cfg, latent_svg);
  }

  manifest.outputs = {metrics_path, activation_path, snapshots_path, error_svg, latent_svg};
  manifest.duration_seconds = timer.seconds();
  write_manifest(manifest, (fs::path(o.out) / "manifest.json").string());

  std::cout << "train error " << fmt10(report.train_error) << ", test error "
            << fmt10(report.test_error) << ", polytope error " << fmt10(report.poly_error)
            << "\n";
  return 0;
}

int do_polytope_error(const PolyErrOpts& o) {
  Timer timer;
  RunManifest manifest;
  manifest.command = "polytope-error";
  manifest.version = kVersion;
  manifest.inputs["model"] = o.model;
  manifest.inputs["data"] = o.data;
  manifest.config["tol"] = fmt10(o.tol);

  StoredModel stored = load_model(o.model);
  if (stored.kind == ModelKind::pod) {
    throw InvalidArgument("polytope error needs an autoencoder model; pod bounding-box "
                          "coordinates are not implemented");
  }
  DatasetArtifact dataset = load_dataset(o.data);
  if (stored.pae.n != dataset.data.dim()) {
    throw DimensionError("model dimension does not match data dimension");
  }
  std::vector<std::string> warnings;
  Polytope poly{stored.pae.vertices, dataset.data.weight};
  const double eps =
      averaged_relative_polytope_error(dataset.data.states, poly, o.tol, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  const std::string out = o.out.empty() ? o.model + ".poly_err.txt" : o.out;
  ensure_parent_dir(out);
  {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw Error("cannot open '" + out + "' for writing");
    f << fmt10(eps) << "\n";
    if (!f) throw Error("write to '" + out + "' failed");
  }
  std::cout << fmt10(eps) << "\n";

  manifest.outputs.push_back(out);
  manifest.duration_seconds = timer.seconds();
  write_manifest(manifest, out + ".manifest.json");
  return 0;
}

int do_lpv_export(const LpvExportOpts& o) {
  Timer timer;
  RunManifest manifest;
  manifest.command = "lpv-export";
  manifest.version = kVersion;
  manifest.inputs["model"] = o.model;
  manifest.inputs["system"] = o.system;
  manifest.inputs["model_crc32"] = file_crc_hex(o.model);

  StoredModel stored = load_model(o.model);
  if (stored.kind == ModelKind::pod) {
    throw InvalidArgument("lpv export needs an autoencoder model with a vertex matrix");
  }
  DatasetArtifact system = load_dataset(o.system);
  if (!system.has_burgers) {
    throw InvalidArgument("system container does not describe a supported ODE "
                          "(expected a simulated viscous-flow dataset)");
  }
  if (stored.pae.n != system.data.dim()) {
    throw DimensionError("model dimension does not match the system dimension");
  }
  QuadraticOde ode =
      assemble_burgers(system.data.dim(), system.burgers_viscosity, system.burgers_length);
  SdcSystem sdc = sdc_from_burgers(ode);
  Polytope poly{stored.pae.vertices, ode.M};
  LpvSystem lpv = build_vertices(sdc, poly);

  ensure_parent_dir(o.out);
  save_lpv_system(lpv, o.out);
  load_lpv_system(o.out);  // read-back validation

  manifest.outputs.push_back(o.out);
  manifest.duration_seconds = timer.seconds();
  write_manifest(manifest, o.out + ".manifest.json");

  std::cout << "wrote " << o.out << " (" << lpv.vertex_matrices.size()
            << " vertex matrices)\n";
  return 0;
}

}  // namespace

void write_manifest(const RunManifest& m, const std::string& path) {
  nlohmann::json j;
  j["command"] = m.command;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["duration_seconds"] = m.duration_seconds;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["config"] = m.config;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << j.dump(2) << "\n";
  if (!f) throw Error("write to '" + path + "' failed");
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Polytopic autoencoder toolkit for reduced-order modelling"};
  app.require_subcommand(1);

  GenerateOpts gen;
  CLI::App* cmd_gen = app.add_subcommand("generate", "Simulate a dataset and store it");
  cmd_gen->add_option("--dataset", gen.dataset, "burgers1d or cycle2d")
      ->required()
      ->check(CLI::IsMember({"burgers1d", "cycle2d"}));
  cmd_gen->add_option("--n", gen.n, "state nodes (burgers1d) or lattice side (cycle2d)");
  cmd_gen->add_option("--steps", gen.steps, "number of time steps");
  cmd_gen->add_option("--dt", gen.dt, "time step")->check(CLI::PositiveNumber);
  cmd_gen->add_option("--viscosity", gen.viscosity, "burgers1d viscosity")
      ->check(CLI::NonNegativeNumber);
  cmd_gen->add_option("--length", gen.length, "burgers1d domain length")
      ->check(CLI::PositiveNumber);
  cmd_gen->add_option("--phases", gen.phases, "cycle2d snapshots per revolution")
      ->check(CLI::PositiveNumber);
  cmd_gen->add_option("--seed", gen.seed, "random seed")->envname("POLYROM_SEED");
  cmd_gen->add_option("--out", gen.out, "output container path")->required();

  TrainOpts tr;
  CLI::App* cmd_tr = app.add_subcommand("train", "Fit a reduced model on a stored dataset");
  cmd_tr->add_option("--model", tr.model, "pod, cae, or pae")
      ->required()
      ->check(CLI::IsMember({"pod", "cae", "pae"}));
  cmd_tr->add_option("--r", tr.r, "latent dimension")->check(CLI::PositiveNumber);
  CLI::Option* kopt =
      cmd_tr->add_option("--k", tr.k, "cluster count (pae)")->check(CLI::PositiveNumber);
  cmd_tr->add_option("--data", tr.data, "dataset container")->required();
  cmd_tr->add_option("--epochs", tr.epochs, "N1,N2,N3 epoch counts")
      ->check([](const std::string& s) -> std::string {
        int a = 0, b = 0, c = 0;
        char tail = 0;
        if (std::sscanf(s.c_str(), "%d,%d,%d%c", &a, &b, &c, &tail) != 3 || a < 1 || b < 1 ||
            c < 1) {
          return "expected three comma-separated positive epoch counts";
        }
        return {};
      });
  cmd_tr->add_option("--batch", tr.batch, "batch size")->check(CLI::PositiveNumber);
  cmd_tr->add_option("--lr", tr.lr, "learning rate")->check(CLI::PositiveNumber);
  cmd_tr->add_option("--lambda", tr.lambda, "clustering-loss weight")
      ->check(CLI::NonNegativeNumber);
  cmd_tr->add_option("--seed", tr.seed, "random seed")->envname("POLYROM_SEED");
  cmd_tr->add_option("--out", tr.out, "output model path")->required();

  EvalOpts ev;
  CLI::App* cmd_ev = app.add_subcommand("eval", "Evaluate a model on a dataset");
  cmd_ev->add_option("--model", ev.model, "model container")->required();
  cmd_ev->add_option("--data", ev.data, "dataset container")->required();
  cmd_ev->add_option("--out", ev.out, "output directory")->required();
  cmd_ev->add_option("--tol", ev.tol, "polytope solver tolerance")->check(CLI::PositiveNumber);
  cmd_ev->add_option("--threads", ev.threads, "evaluation threads")->check(CLI::PositiveNumber);

  PolyErrOpts pe;
  CLI::App* cmd_pe =
      app.add_subcommand("polytope-error", "Averaged relative polytope error of a model");
  cmd_pe->add_option("--model", pe.model, "model container")->required();
  cmd_pe->add_option("--data", pe.data, "dataset container")->required();
  cmd_pe->add_option("--tol", pe.tol, "solver tolerance")->check(CLI::PositiveNumber);
  cmd_pe->add_option("--out", pe.out, "output text file (default <model>.poly_err.txt)");

  LpvExportOpts lx;
  CLI::App* cmd_lx =
      app.add_subcommand("lpv-export", "Export vertex coefficient matrices for a model");
  cmd_lx->add_option("--model", lx.model, "model container")->required();
  cmd_lx->add_option("--system", lx.system, "dataset container describing the system")
      ->required();
  cmd_lx->add_option("--out", lx.out, "output container path")->required();

  try {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("polyrom");
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (cmd_tr->parsed()) {
      tr.k_given = kopt->count() > 0;
      if (tr.model == "pod" && tr.k_given) {
        throw CLI::ValidationError("--k cannot be combined with --model pod");
      }
      if (tr.model == "cae" && tr.k_given && tr.k != 1) {
        throw CLI::ValidationError("--k must be 1 for --model cae");
      }
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (cmd_gen->parsed()) return do_generate(gen);
    if (cmd_tr->parsed()) return do_train(tr);
    if (cmd_ev->parsed()) return do_eval(ev);
    if (cmd_pe->parsed()) return do_polytope_error(pe);
    if (cmd_lx->parsed()) return do_lpv_export(lx);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace polyrom
