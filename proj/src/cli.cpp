#include "evgen/cli.hpp"

#include "evgen/dataio.hpp"
#include "evgen/eval.hpp"
#include "evgen/gmm.hpp"
#include "evgen/scgan.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace evgen::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string log_level = "info";
};

struct SynthArgs {
  int modes = 2;
  int n = 20000;
  std::string day = "2021-06-01";
  std::string file = "sessions.csv";
};

struct IngestArgs {
  std::string sessions;
  double ratio = 0.95;
};

struct GmmArgs {
  std::string data;
  gmm::EmConfig em;
};

struct GanArgs {
  std::string data;
  std::string condition = "continuous";
  scgan::TrainConfig train;
};

struct GenerateArgs {
  std::string model;
  int n = 500;
  std::vector<std::string> fix_c;
  int category = -1;
  std::string file = "generated.csv";
};

struct EvaluateArgs {
  std::string real;
  std::vector<std::string> synth;
  std::vector<int> sweep_k;
  std::string fit;
  int n_synth = 2000;
  gmm::EmConfig em;
  bool plots = true;
};

struct SweepArgs {
  std::string model;
  int var = 0;
  std::vector<double> values{0.0, 0.5, 1.0, 1.5};
  int n_per_value = 200;
};

void setup_logging(const std::string& level) {
  auto logger = spdlog::get("evgen");
  if (!logger) {
    logger = std::make_shared<spdlog::logger>("evgen", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    spdlog::register_logger(logger);
  }
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const auto parsed = spdlog::level::from_str(level);
  if (parsed == spdlog::level::off && level != "off")
    throw InputError("unknown log level '" + level + "'");
  spdlog::set_level(parsed);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

dataio::LoadCurveDataset to_kw(const dataio::LoadCurveDataset& d) { return dataio::denormalize(d); }

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string model_format(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_object() || !j.contains("format")) throw InputError(path.string() + ": not a model file");
  return j.at("format").get<std::string>();
}

std::string quoted(const std::string& v) { return '"' + v + '"'; }

// TOML that `--config` reads back: globals first, then a section for the subcommand.
std::string config_echo(const CLI::App& app, const CLI::App& cmd) {
  std::ostringstream os;
  auto emit = [&os](const CLI::App& a) {
    for (const CLI::Option* opt : a.get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      if (opt->get_expected_min() == 0) {
        if (opt->count() > 0) os << name << "=true\n";
        continue;
      }
      if (opt->count() == 0) {
        const std::string def = opt->get_default_str();
        if (def.empty() || def == "{}" || def == "[]") continue;
        os << name << '=' << (def.front() == '[' ? def : quoted(def)) << '\n';
        continue;
      }
      const auto& values = opt->results();
      if (values.size() == 1 && opt->get_expected_max() <= 1) {
        os << name << '=' << quoted(values.front()) << '\n';
        continue;
      }
      os << name << "=[";
      for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << quoted(values[i]);
      os << "]\n";
    }
  };
  emit(app);
  os << "\n[" << cmd.get_name() << "]\n";
  emit(cmd);
  return os.str();
}

int cmd_synth(const Globals& g, const SynthArgs& a) {
  const auto day = dataio::parse_timestamp(a.day + "T00:00");
  if (!day) throw InputError("synth: --day must be YYYY-MM-DD");
  const auto sessions =
      dataio::synth_sessions(dataio::example_population(a.modes, a.n, g.seed), *day);
  std::ostringstream os;
  dataio::write_sessions(os, sessions);
  write_text(fs::path(g.out) / a.file, os.str());
  std::cout << "wrote " << sessions.size() << " sessions to " << (fs::path(g.out) / a.file).string()
            << '\n';
  return kOk;
}

int cmd_ingest(const Globals& g, const IngestArgs& a) {
  const auto parsed = dataio::parse_sessions(fs::path(a.sessions));
  for (const auto& e : parsed.errors) spdlog::warn("row {}: {}", e.row, e.message);
  if (parsed.sessions.empty()) throw InputError("ingest: every row was rejected");

  std::vector<dataio::LoadCurve> curves;
  curves.reserve(parsed.sessions.size());
  double truncated = 0.0;
  std::size_t truncated_sessions = 0;
  for (const auto& s : parsed.sessions) {
    const auto r = dataio::session_to_curve(s, dataio::midnight_of(s.start));
    curves.push_back(r.curve);
    if (r.truncated_kwh > 0.0) {
      truncated += r.truncated_kwh;
      ++truncated_sessions;
    }
  }
  const auto raw = dataio::make_dataset(curves);
  const auto normalized = dataio::normalize(raw);
  const auto parts = dataio::split(normalized, a.ratio, g.seed);
  const fs::path out(g.out);
  dataio::write_dataset(out / "train.csv", parts.train);
  dataio::write_dataset(out / "test.csv", parts.test);

  json errors = json::array();
  for (const auto& e : parsed.errors) errors.push_back({{"row", e.row}, {"message", e.message}});
  const json report{{"sessions", parsed.sessions.size()},
                    {"rejected", parsed.errors.size()},
                    {"rejections", std::move(errors)},
                    {"train", parts.train.size()},
                    {"test", parts.test.size()},
                    {"ratio", a.ratio},
                    {"scale", normalized.normalization->scale},
                    {"scheme", normalized.normalization->scheme},
                    {"truncated_sessions", truncated_sessions},
                    {"truncated_kwh", truncated}};
  write_text(out / "ingest_report.json", report.dump(1) + "\n");
  std::cout << "sessions " << parsed.sessions.size() << ", rejected " << parsed.errors.size()
            << ", train " << parts.train.size() << ", test " << parts.test.size() << ", scale "
            << dataio::format_double(normalized.normalization->scale) << " kW\n";
  return kOk;
}

int cmd_train_gmm(const Globals& g, GmmArgs a) {
  a.em.seed = g.seed;
  const auto data = dataio::read_dataset(fs::path(a.data));
  const auto triples = gmm::extract_triples(data).triples;
  const auto fit = gmm::em_fit(triples, a.em);
  gmm::GmmModelFile model{fit.params, fit.iterations, fit.log_likelihood_trace.back(),
                          fit.converged, a.em};
  const fs::path out(g.out);
  gmm::save_model(out / "gmm_model.json", model);
  std::ostringstream trace;
  trace << "iteration,mean_log_likelihood\n";
  for (std::size_t i = 0; i < fit.log_likelihood_trace.size(); ++i)
    trace << i << ',' << dataio::format_double(fit.log_likelihood_trace[i]) << '\n';
  write_text(out / "gmm_trace.csv", trace.str());
  std::cout << "K=" << a.em.clusters << " iterations=" << fit.iterations
            << " converged=" << (fit.converged ? "yes" : "no")
            << " mean_log_likelihood=" << dataio::format_double(fit.log_likelihood_trace.back())
            << '\n';
  return kOk;
}

int cmd_train_gan(const Globals& g, GanArgs a) {
  a.train.seed = g.seed;
  a.train.kind = scgan::condition_kind_from_string(a.condition);
  const fs::path out(g.out);
  a.train.checkpoint_dir = out / "checkpoints";
  auto data = dataio::read_dataset(fs::path(a.data));
  if (!data.normalized()) {
    spdlog::info("train-gan: normalizing raw dataset by its global maximum");
    data = dataio::normalize(data);
  }
  try {
    const auto model = scgan::train(data, a.train, [](const scgan::GanModel&, const scgan::TraceRow& r) {
      spdlog::info("epoch {} critic_loss={:.5g} W={:.5g} gp={:.4g} sc={:.4g}", r.epoch,
                   r.critic_loss, r.wasserstein_estimate, r.gp_term, r.sc_term);
    });
    scgan::save_model(out / "gan_model.json", model);
    std::ostringstream trace;
    scgan::write_trace(trace, model.trace);
    write_text(out / "trace.csv", trace.str());
    std::cout << "trained " << model.epochs_trained << " epochs; model "
              << (out / "gan_model.json").string() << '\n';
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n'
              << "last checkpoint: " << (e.checkpoint().empty() ? "(none)" : e.checkpoint())
              << '\n';
    return kDiverged;
  }
  return kOk;
}

int cmd_generate(const Globals& g, const GenerateArgs& a) {
  const fs::path out(g.out);
  const std::string format = model_format(a.model);
  dataio::LoadCurveDataset result;
  if (format == "evgen-gmm") {
    if (!a.fix_c.empty() || a.category >= 0)
      throw InputError("generate: --fix-c/--category apply to GAN models only");
    result = gmm::gmm_generate(gmm::load_model(fs::path(a.model)).params, a.n, g.seed);
  } else if (format == "evgen-gan") {
    const auto model = scgan::load_model(fs::path(a.model));
    auto latent = scgan::sample_latent(a.n, model.kind, g.seed, model.categories);
    if (model.kind == scgan::ConditionKind::Discrete) {
      if (!a.fix_c.empty()) throw InputError("generate: --fix-c needs a continuous model");
      if (a.category >= 0) {
        if (a.category >= model.categories) throw InputError("generate: --category out of range");
        latent.c.setZero();
        latent.c.col(a.category).setOnes();
      }
    } else if (a.category >= 0) {
      throw InputError("generate: --category needs a discrete model");
    }
    for (const auto& spec : a.fix_c) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos) throw InputError("generate: --fix-c expects INDEX=VALUE");
      int index = 0;
      double value = 0.0;
      try {
        index = std::stoi(spec.substr(0, eq));
        value = std::stod(spec.substr(eq + 1));
      } catch (const std::exception&) {
        throw InputError("generate: malformed --fix-c '" + spec + "'");
      }
      if (index < 0 || index >= scgan::kConditionDims)
        throw InputError("generate: --fix-c index must lie in [0, 7]");
      latent.c.col(index).setConstant(value);
    }
    const auto gen = scgan::generate(model, latent);
    spdlog::info("generate: {:.3g}% of outputs floored at 0", 100.0 * gen.clamp_rate);
    result = gen.data;
  } else {
    throw InputError("generate: unknown model format '" + format + "'");
  }
  dataio::write_dataset(out / a.file, result);
  std::cout << "wrote " << result.size() << " curves to " << (out / a.file).string() << '\n';
  return kOk;
}

int cmd_evaluate(const Globals& g, EvaluateArgs a, const std::string& echo) {
  if (a.synth.empty() && a.sweep_k.empty())
    throw InputError("evaluate: give --synth files and/or --sweep-k cluster counts");
  const fs::path out(g.out);
  const auto real = to_kw(dataio::read_dataset(fs::path(a.real)));
  std::cout << "name,ks_distance,log_spectral_distance_db\n";
  auto emit = [&](eval::EvalReport report, const std::string& stem) {
    report.config_echo = echo;
    eval::save_report(out / ("report_" + stem + ".json"), report);
    if (a.plots) eval::write_plots(out / "plots" / stem, report);
    std::cout << stem << ',' << dataio::format_double(report.ks_distance) << ','
              << dataio::format_double(report.log_spectral_distance) << '\n';
  };
  for (const auto& file : a.synth) {
    const auto synth = to_kw(dataio::read_dataset(fs::path(file)));
    const std::string stem = fs::path(file).stem().string();
    emit(eval::compare(real, synth, fs::path(a.real).stem().string(), stem), stem);
  }
  if (!a.sweep_k.empty()) {
    a.em.seed = g.seed;
    const auto fit_data = a.fit.empty() ? real : to_kw(dataio::read_dataset(fs::path(a.fit)));
    auto sweep = eval::gmm_cluster_sweep(fit_data, a.sweep_k, a.em, a.n_synth);
    for (auto& r : sweep) {
      // Sweep reports compare against the evaluation reference, not the fit data.
      const auto synth = gmm::gmm_generate(r.fit.params, a.n_synth, a.em.seed + 1);
      emit(eval::compare(real, synth, fs::path(a.real).stem().string(),
                         "gmm K=" + std::to_string(r.clusters)),
           "gmm_k" + std::to_string(r.clusters));
    }
  }
  return kOk;
}

int cmd_sweep(const Globals& g, const SweepArgs& a) {
  const auto model = scgan::load_model(fs::path(a.model));
  const auto entries = scgan::condition_sweep(model, a.var, a.values, a.n_per_value, g.seed);
  json j{{"variable", a.var}, {"n_per_value", a.n_per_value}, {"units", "kW"}};
  json list = json::array();
  std::vector<std::pair<double, eval::SummaryStats>> plot;
  for (const auto& e : entries) {
    list.push_back({{"value", e.value}, {"mean", e.stats.mean}, {"p10", e.stats.p10}, {"p90", e.stats.p90}});
    plot.emplace_back(e.value, e.stats);
  }
  j["entries"] = std::move(list);
  const fs::path out(g.out);
  write_text(out / "sweep.json", j.dump() + "\n");
  eval::write_sweep_plot(out / "sweep.svg", a.var, plot);
  std::cout << "swept c" << a.var << " over " << entries.size() << " values\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"EV charging load generators (SC-WGAN-GP and GMM) with CDF/PSD evaluation",
               "evgen"};
  app.set_config("--config", "", "TOML/INI file of option values; flags override it");
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every stochastic step");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic session CSV");
  synth_cmd->add_option("--modes", synth.modes, "Population modes (1, 2 or 3)");
  synth_cmd->add_option("--n", synth.n, "Number of sessions");
  synth_cmd->add_option("--day", synth.day, "Calendar day YYYY-MM-DD");
  synth_cmd->add_option("--file", synth.file, "Output file name inside --out");

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Session CSV -> normalized train/test datasets");
  ingest_cmd->add_option("--sessions", ingest.sessions, "Session CSV")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--ratio", ingest.ratio, "Training fraction")->check(CLI::Range(0.0, 1.0));

  GmmArgs gmm_args;
  auto* gmm_cmd = app.add_subcommand("train-gmm", "Fit the GMM baseline with EM");
  gmm_cmd->add_option("--data", gmm_args.data, "Dataset file")->required()->check(CLI::ExistingFile);
  gmm_cmd->add_option("--clusters", gmm_args.em.clusters, "Cluster count K");
  gmm_cmd->add_option("--tol", gmm_args.em.tol, "Mean log-likelihood tolerance");
  gmm_cmd->add_option("--max-iter", gmm_args.em.max_iter, "EM iteration cap");
  gmm_cmd->add_option("--floor-scale", gmm_args.em.covariance_floor_scale,
                      "Covariance eigenvalue floor relative to trace(cov)/3");
  gmm_cmd->add_option("--init", gmm_args.em.init, "kmeans++|random");

  GanArgs gan;
  auto* gan_cmd = app.add_subcommand("train-gan", "Train the SC-WGAN-GP");
  gan_cmd->add_option("--data", gan.data, "Normalized dataset file")->required()->check(CLI::ExistingFile);
  gan_cmd->add_option("--condition", gan.condition, "continuous|discrete")
      ->check(CLI::IsMember({"continuous", "discrete"}));
  gan_cmd->add_option("--categories", gan.train.categories, "Active one-hot categories (discrete)");
  gan_cmd->add_option("--batch", gan.train.batch_size, "Mini-batch size");
  gan_cmd->add_option("--epochs", gan.train.epochs, "Epochs");
  gan_cmd->add_option("--lambda-sc", gan.train.lambda_sc, "Similarity-constraint weight");
  gan_cmd->add_option("--lambda-gp", gan.train.lambda_gp, "Gradient-penalty weight");
  gan_cmd->add_option("--n-critic", gan.train.n_critic, "Critic updates per generator update");
  gan_cmd->add_option("--lr", gan.train.adam.lr, "ADAM learning rate");
  gan_cmd->add_option("--beta1", gan.train.adam.beta1, "ADAM beta1");
  gan_cmd->add_option("--beta2", gan.train.adam.beta2, "ADAM beta2");
  gan_cmd->add_option("--patience", gan.train.plateau.patience, "Plateau epochs before halving lr (0 = off)");
  gan_cmd->add_option("--checkpoint-every", gan.train.checkpoint_every, "Checkpoint cadence in epochs");
  gan_cmd->add_option("--eval-samples", gan.train.eval_samples, "Curves generated to score checkpoints");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Sample curves from a GAN or GMM model");
  gen_cmd->add_option("--model", gen.model, "Model file")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--n", gen.n, "Number of curves")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--fix-c", gen.fix_c, "INDEX=VALUE, continuous GAN only (repeatable)");
  gen_cmd->add_option("--category", gen.category, "One-hot category, discrete GAN only");
  gen_cmd->add_option("--file", gen.file, "Output file name inside --out");

  EvaluateArgs ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Compare synthetic curves against real ones");
  ev_cmd->add_option("--real", ev.real, "Reference dataset")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--synth", ev.synth, "Synthetic dataset(s)")->check(CLI::ExistingFile);
  ev_cmd->add_option("--sweep-k", ev.sweep_k, "GMM cluster counts to fit and evaluate")->delimiter(',');
  ev_cmd->add_option("--fit", ev.fit, "Dataset the sweep GMMs are fitted on (default: --real)")
      ->check(CLI::ExistingFile);
  ev_cmd->add_option("--n-synth", ev.n_synth, "Curves generated per sweep entry");
  ev_cmd->add_option("--tol", ev.em.tol, "EM tolerance for the sweep");
  ev_cmd->add_option("--max-iter", ev.em.max_iter, "EM iteration cap for the sweep");
  ev_cmd->add_flag("!--no-plots", ev.plots, "Skip SVG plots");

  SweepArgs sw;
  auto* sw_cmd = app.add_subcommand("sweep", "Condition sweep of a continuous GAN");
  sw_cmd->add_option("--model", sw.model, "GAN checkpoint")->required()->check(CLI::ExistingFile);
  sw_cmd->add_option("--var", sw.var, "Condition index 0..7");
  sw_cmd->add_option("--values", sw.values, "Values to fix the condition at")->delimiter(',');
  sw_cmd->add_option("--n-per-value", sw.n_per_value, "Curves per value");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    setup_logging(g.log_level);
    fs::create_directories(g.out);
    const auto* cmd = app.get_subcommands().front();
    const std::string echo = config_echo(app, *cmd);
    write_text(fs::path(g.out) / (cmd->get_name() + ".config.toml"), echo);
    if (cmd == synth_cmd) return cmd_synth(g, synth);
    if (cmd == ingest_cmd) return cmd_ingest(g, ingest);
    if (cmd == gmm_cmd) return cmd_train_gmm(g, gmm_args);
    if (cmd == gan_cmd) return cmd_train_gan(g, gan);
    if (cmd == gen_cmd) return cmd_generate(g, gen);
    if (cmd == ev_cmd) return cmd_evaluate(g, ev, echo);
    if (cmd == sw_cmd) return cmd_sweep(g, sw);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace evgen::cli
