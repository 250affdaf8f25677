#include "evgen/scgan.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace evgen::scgan {

using nn::LayerKind;
using nn::LayerSpec;
using nn::NetworkSpec;

std::string to_string(ConditionKind kind) {
  return kind == ConditionKind::Continuous ? "continuous" : "discrete";
}

ConditionKind condition_kind_from_string(const std::string& name) {
  if (name == "continuous") return ConditionKind::Continuous;
  if (name == "discrete") return ConditionKind::Discrete;
  throw InputError("unknown condition kind '" + name + "' (expected continuous|discrete)");
}

namespace {

LayerSpec dense(std::string name, int units) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.name = std::move(name);
  s.units = units;
  s.leaky_slope = kLeakySlope;
  return s;
}

LayerSpec conv(std::string name, int filters) {
  LayerSpec s;
  s.kind = LayerKind::Conv1d;
  s.name = std::move(name);
  s.units = filters;
  s.kernel = 5;
  s.leaky_slope = kLeakySlope;
  return s;
}

LayerSpec pool(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.name = std::move(name);
  s.pool = 2;
  return s;
}

LayerSpec reshape(std::string name, std::vector<int> target) {
  LayerSpec s;
  s.kind = LayerKind::Reshape;
  s.name = std::move(name);
  s.target = std::move(target);
  return s;
}

}  // namespace

NetworkSpec generator_spec() {
  NetworkSpec spec;
  spec.input = {kLatentDims};
  spec.layers = {
      dense("fc1", 150),
      reshape("expand", {1, 150}),
      conv("conv1", 32),
      conv("conv2", 16),
      conv("conv3", 8),
      conv("conv4", 1),
      reshape("squeeze", {150}),
      dense("fc2", 125),
      dense("fc3", 100),
      dense("fc4", kSlots),
  };
  return spec;
}

NetworkSpec critic_spec() {
  NetworkSpec spec;
  spec.input = {kSlots};
  spec.layers = {
      reshape("expand", {1, kSlots}),
      conv("conv1", 32),
      pool("pool1"),
      conv("conv2", 16),
      pool("pool2"),
      conv("conv3", 8),
      reshape("flatten", {192}),
      dense("fc1", 50),
      dense("fc2", 15),
      dense("fc3", 1),
  };
  return spec;
}

nn::Network build_generator(const NetworkSpec& spec, std::uint64_t seed) {
  auto net = nn::Network::build(spec, seed);
  if (net.input_shape() != nn::Shape{{kLatentDims}} || net.output_shape() != nn::Shape{{kSlots}})
    throw InputError("generator must map (N, 88) to (N, 96), got " + net.input_shape().str() +
                     " -> " + net.output_shape().str());
  return net;
}

nn::Network build_critic(const NetworkSpec& spec, std::uint64_t seed) {
  auto net = nn::Network::build(spec, seed);
  if (net.input_shape() != nn::Shape{{kSlots}} || net.output_shape() != nn::Shape{{1}})
    throw InputError("critic must map (N, 96) to (N, 1), got " + net.input_shape().str() +
                     " -> " + net.output_shape().str());
  return net;
}

Matrix LatentBatch::codes() const {
  Matrix out(z.rows(), z.cols() + c.cols());
  out << z, c;
  return out;
}

LatentBatch sample_latent(Eigen::Index n, ConditionKind kind, Rng& rng, int categories) {
  if (n < 1) throw InputError("sample_latent: n must be >= 1");
  if (categories < 1 || categories > kConditionDims)
    throw InputError("sample_latent: categories must lie in [1, 8]");
  LatentBatch b;
  b.kind = kind;
  b.z.resize(n, kNoiseDims);
  b.c.setZero(n, kConditionDims);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < kNoiseDims; ++k) b.z(i, k) = rng.uniform();
    if (kind == ConditionKind::Continuous) {
      for (int k = 0; k < kConditionDims; ++k) b.c(i, k) = rng.uniform();
    } else {
      b.c(i, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(categories)))) = 1.0;
    }
  }
  return b;
}

LatentBatch sample_latent(Eigen::Index n, ConditionKind kind, std::uint64_t seed, int categories) {
  Rng rng(seed);
  return sample_latent(n, kind, rng, categories);
}

namespace {

void save_checkpoint(const std::filesystem::path& path, const GanModel& model) {
  std::filesystem::create_directories(path.parent_path());
  save_model(path, model);
}

double normalized_ks(const GanModel& model, const eval::CdfCurve& reference, int n,
                     std::uint64_t seed) {
  const LatentBatch latent = sample_latent(n, model.kind, seed, model.categories);
  const Matrix out = model.generator.forward(latent.codes()).cwiseMax(0.0);
  return eval::ks_distance(eval::empirical_cdf(out), reference);
}

}  // namespace

GanModel train(const dataio::LoadCurveDataset& train_set, const TrainConfig& cfg,
               const EpochCallback& on_epoch) {
  if (!train_set.normalized()) throw InputError("train: dataset must be normalized");
  if (cfg.batch_size < 2) throw InputError("train: batch_size must be >= 2");
  if (train_set.size() < cfg.batch_size)
    throw InputError("train: " + std::to_string(train_set.size()) +
                     " curves is fewer than one batch of " + std::to_string(cfg.batch_size));
  if (cfg.n_critic < 1 || cfg.epochs < 0) throw InputError("train: n_critic/epochs out of range");
  if (cfg.lambda_gp < 0.0 || cfg.lambda_sc < 0.0) throw InputError("train: weights must be >= 0");
#if defined(__GLIBC__)
  // The per-step temporaries are a few MB each; keep them off mmap so every
  // step does not page-fault fresh memory.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  if (cfg.kind == ConditionKind::Discrete && (cfg.categories < 1 || cfg.categories > kConditionDims))
    throw InputError("train: categories must lie in [1, 8]");

  Rng rng(cfg.seed);
  GanModel model;
  model.generator = build_generator(generator_spec(), rng.split());
  model.critic = build_critic(critic_spec(), rng.split());
  model.kind = cfg.kind;
  model.categories = cfg.kind == ConditionKind::Discrete ? cfg.categories : kConditionDims;
  model.normalization = *train_set.normalization;
  model.config = cfg;

  nn::Adam gen_opt(model.generator.parameter_count(), cfg.adam.lr, cfg.adam.beta1, cfg.adam.beta2);
  nn::Adam critic_opt(model.critic.parameter_count(), cfg.adam.lr, cfg.adam.beta1, cfg.adam.beta2);
  std::vector<double> gen_grad(model.generator.parameter_count());
  std::vector<double> critic_grad(model.critic.parameter_count());

  const Eigen::Index n = train_set.size();
  const Eigen::Index batch = cfg.batch_size;
  const Eigen::Index steps_per_epoch = n / batch;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Eigen::Index cursor = n;  // forces a shuffle on first use
  Matrix real(batch, kSlots);
  auto next_real = [&]() {
    if (cursor + batch > n) {
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
      cursor = 0;
    }
    for (Eigen::Index i = 0; i < batch; ++i)
      real.row(i) = train_set.curves.row(order[static_cast<std::size_t>(cursor + i)]);
    cursor += batch;
  };

  const bool checkpoints = !cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0;
  std::string last_checkpoint;
  const eval::CdfCurve reference = eval::empirical_cdf(train_set.curves);
  double best_ks = std::numeric_limits<double>::infinity();
  double best_w = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    TraceRow row;
    row.epoch = epoch;
    row.lr = gen_opt.lr();
    long critic_steps = 0;
    try {
      for (Eigen::Index step = 0; step < steps_per_epoch; ++step) {
        for (int k = 0; k < cfg.n_critic; ++k) {
          next_real();
          const LatentBatch latent = sample_latent(batch, cfg.kind, rng, model.categories);
          const Matrix fake = model.generator.forward(latent.codes());
          std::fill(critic_grad.begin(), critic_grad.end(), 0.0);
          const CriticLoss loss =
              critic_loss(model.critic, real, fake, cfg.lambda_gp, rng.split(), critic_grad);
          if (!std::isfinite(loss.total)) throw DivergenceError("non-finite critic loss");
          critic_opt.step(model.critic.parameters(), critic_grad);
          row.critic_loss += loss.total;
          row.wasserstein_estimate += loss.wasserstein;
          row.gp_term += loss.gradient_penalty;
          ++critic_steps;
        }
        const LatentBatch latent = sample_latent(batch, cfg.kind, rng, model.categories);
        std::fill(gen_grad.begin(), gen_grad.end(), 0.0);
        const GeneratorLoss gloss =
            generator_loss(model.generator, model.critic, latent, cfg.lambda_sc, gen_grad);
        if (!std::isfinite(gloss.total)) throw DivergenceError("non-finite generator loss");
        gen_opt.step(model.generator.parameters(), gen_grad);
        row.sc_term += gloss.sc;
      }
    } catch (const DivergenceError& e) {
      spdlog::error("training diverged at epoch {}: {}", epoch, e.what());
      throw DivergenceError(std::string("training diverged at epoch ") + std::to_string(epoch) +
                                ": " + e.what(),
                            last_checkpoint);
    }
    if (critic_steps > 0) {
      row.critic_loss /= static_cast<double>(critic_steps);
      row.wasserstein_estimate /= static_cast<double>(critic_steps);
      row.gp_term /= static_cast<double>(critic_steps);
      row.sc_term /= static_cast<double>(steps_per_epoch);
    }
    model.trace.push_back(row);
    model.epochs_trained = epoch;
    spdlog::debug("epoch {} critic={:.5g} W={:.5g} gp={:.5g} sc={:.5g} lr={:.3g}", epoch,
                  row.critic_loss, row.wasserstein_estimate, row.gp_term, row.sc_term, row.lr);

    // The estimate grows from ~0 while the critic learns, so the first
    // `patience` epochs are not tracked.
    if (cfg.plateau.patience > 0 && epoch > cfg.plateau.patience) {
      if (row.wasserstein_estimate < best_w) {
        best_w = row.wasserstein_estimate;
        since_best = 0;
      } else if (++since_best >= cfg.plateau.patience) {
        const double lr = std::max(cfg.plateau.min_lr, gen_opt.lr() * cfg.plateau.factor);
        gen_opt.set_lr(lr);
        critic_opt.set_lr(lr);
        since_best = 0;
        best_w = row.wasserstein_estimate;
        spdlog::info("epoch {}: Wasserstein estimate plateaued, lr -> {:.3g}", epoch, lr);
      }
    }

    if (checkpoints && (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%05d.json", epoch);
      const auto path = cfg.checkpoint_dir / name;
      save_checkpoint(path, model);
      last_checkpoint = path.string();
      const double ks = normalized_ks(model, reference, cfg.eval_samples, cfg.seed ^ 0x5eedULL);
      if (ks < best_ks) {
        best_ks = ks;
        save_checkpoint(cfg.checkpoint_dir / "best_ks.json", model);
      }
      spdlog::info("epoch {}: checkpoint {} (KS {:.4f}, best {:.4f})", epoch, path.string(), ks,
                   best_ks);
    }
    if (on_epoch) on_epoch(model, row);
  }
  return model;
}

GenerateResult generate(const GanModel& model, const LatentBatch& codes) {
  if (codes.z.cols() != kNoiseDims || codes.c.cols() != kConditionDims ||
      codes.z.rows() != codes.c.rows())
    throw InputError("generate: latent codes must be n x 80 and n x 8");
  if (codes.kind != model.kind)
    throw InputError("generate: codes are " + to_string(codes.kind) + " but the model is " +
                     to_string(model.kind));
  const Matrix out = model.generator.forward(codes.codes());
  GenerateResult result;
  result.clamp_rate = static_cast<double>((out.array() < 0.0).count()) / static_cast<double>(out.size());
  result.data.curves = out.cwiseMax(0.0) * model.normalization.scale;
  if (result.clamp_rate > 0.0)
    spdlog::debug("generate: floored {:.3g}% of outputs at 0", 100.0 * result.clamp_rate);
  return result;
}

GenerateResult generate_category(const GanModel& model, int category, int n, std::uint64_t seed) {
  if (model.kind != ConditionKind::Discrete)
    throw InputError("generate_category: model has continuous conditions");
  if (category < 0 || category >= model.categories)
    throw InputError("generate_category: category out of range");
  LatentBatch latent = sample_latent(n, ConditionKind::Discrete, seed, model.categories);
  latent.c.setZero();
  latent.c.col(category).setOnes();
  return generate(model, latent);
}

std::vector<SweepEntry> condition_sweep(const GanModel& model, int var_index,
                                        const std::vector<double>& values, int n_per_value,
                                        std::uint64_t seed) {
  if (model.kind != ConditionKind::Continuous)
    throw InputError("condition_sweep: model has discrete conditions");
  if (var_index < 0 || var_index >= kConditionDims)
    throw InputError("condition_sweep: variable index must lie in [0, 7]");
  if (n_per_value < 1) throw InputError("condition_sweep: n_per_value must be >= 1");
  std::vector<SweepEntry> out;
  out.reserve(values.size());
  for (const double v : values) {
    // Same z and remaining c for every value, so only c[var_index] differs.
    LatentBatch latent = sample_latent(n_per_value, ConditionKind::Continuous, seed);
    latent.c.col(var_index).setConstant(v);
    out.push_back({v, eval::summary_stats(generate(model, latent).data.curves)});
  }
  return out;
}

namespace {

constexpr int kGanVersion = 1;

nlohmann::json network_to_json(const nn::Network& net) {
  using nlohmann::json;
  json layers = json::array();
  for (const auto& l : net.spec().layers) {
    json j{{"kind", nn::to_string(l.kind)}, {"name", l.name}};
    switch (l.kind) {
      case LayerKind::Dense: j["units"] = l.units; break;
      case LayerKind::Conv1d:
        j["filters"] = l.units;
        j["kernel"] = l.kernel;
        j["padding"] = "replicate";
        break;
      case LayerKind::MaxPool: j["pool"] = l.pool; break;
      case LayerKind::Reshape: j["target"] = l.target; break;
    }
    if (l.leaky_slope) j["leaky_relu"] = *l.leaky_slope;
    layers.push_back(std::move(j));
  }
  const auto params = net.parameters();
  return json{{"input", net.spec().input},
              {"layers", std::move(layers)},
              {"parameters", std::vector<double>(params.begin(), params.end())}};
}

nn::Network network_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.input = j.at("input").get<std::vector<int>>();
  for (const auto& l : j.at("layers")) {
    LayerSpec s;
    s.kind = nn::layer_kind_from_string(l.at("kind").get<std::string>());
    s.name = l.value("name", "");
    if (s.kind == LayerKind::Dense) s.units = l.at("units").get<int>();
    if (s.kind == LayerKind::Conv1d) {
      s.units = l.at("filters").get<int>();
      s.kernel = l.at("kernel").get<int>();
    }
    if (s.kind == LayerKind::MaxPool) s.pool = l.at("pool").get<int>();
    if (s.kind == LayerKind::Reshape) s.target = l.at("target").get<std::vector<int>>();
    if (l.contains("leaky_relu")) s.leaky_slope = l.at("leaky_relu").get<double>();
    spec.layers.push_back(std::move(s));
  }
  auto net = nn::Network::build(spec, 0);
  const auto params = j.at("parameters").get<std::vector<double>>();
  if (params.size() != net.parameter_count())
    throw InputError("GAN checkpoint: parameter count does not match the layer specs");
  std::copy(params.begin(), params.end(), net.parameters().begin());
  return net;
}

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lambda_gp", c.lambda_gp},
          {"lambda_sc", c.lambda_sc},
          {"n_critic", c.n_critic},
          {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}}},
          {"plateau",
           {{"patience", c.plateau.patience},
            {"factor", c.plateau.factor},
            {"min_lr", c.plateau.min_lr}}},
          {"epochs", c.epochs},
          {"condition", to_string(c.kind)},
          {"categories", c.categories},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_samples", c.eval_samples}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.lambda_gp = j.at("lambda_gp").get<double>();
  c.lambda_sc = j.at("lambda_sc").get<double>();
  c.n_critic = j.at("n_critic").get<int>();
  c.adam.lr = j.at("adam").at("lr").get<double>();
  c.adam.beta1 = j.at("adam").at("beta1").get<double>();
  c.adam.beta2 = j.at("adam").at("beta2").get<double>();
  c.plateau.patience = j.at("plateau").at("patience").get<int>();
  c.plateau.factor = j.at("plateau").at("factor").get<double>();
  c.plateau.min_lr = j.at("plateau").at("min_lr").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.kind = condition_kind_from_string(j.at("condition").get<std::string>());
  c.categories = j.at("categories").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.eval_samples = j.at("eval_samples").get<int>();
  return c;
}

}  // namespace

void save_model(std::ostream& out, const GanModel& model) {
  using nlohmann::json;
  json trace = json::array();
  for (const auto& r : model.trace) {
    trace.push_back({r.epoch, r.critic_loss, r.wasserstein_estimate, r.gp_term, r.sc_term, r.lr});
  }
  const json j{{"format", "evgen-gan"},
               {"version", kGanVersion},
               {"condition", to_string(model.kind)},
               {"categories", model.categories},
               {"normalization",
                {{"scale", model.normalization.scale}, {"scheme", model.normalization.scheme}}},
               {"epochs", model.epochs_trained},
               {"config", config_to_json(model.config)},
               {"trace", std::move(trace)},
               {"generator", network_to_json(model.generator)},
               {"critic", network_to_json(model.critic)}};
  out << j.dump() << '\n';
}

void save_model(const std::filesystem::path& path, const GanModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write GAN checkpoint " + path.string());
  save_model(out, model);
}

GanModel load_model(std::istream& in) {
  using nlohmann::json;
  try {
    json j;
    in >> j;
    if (j.at("format") != "evgen-gan") throw InputError("not a GAN checkpoint");
    if (j.at("version").get<int>() != kGanVersion) throw InputError("unsupported GAN checkpoint version");
    GanModel m;
    m.kind = condition_kind_from_string(j.at("condition").get<std::string>());
    m.categories = j.at("categories").get<int>();
    m.normalization.scale = j.at("normalization").at("scale").get<double>();
    m.normalization.scheme = j.at("normalization").at("scheme").get<std::string>();
    m.epochs_trained = j.at("epochs").get<int>();
    m.config = config_from_json(j.at("config"));
    for (const auto& r : j.at("trace")) {
      m.trace.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(),
                         r.at(3).get<double>(), r.at(4).get<double>(), r.at(5).get<double>()});
    }
    m.generator = network_from_json(j.at("generator"));
    m.critic = network_from_json(j.at("critic"));
    return m;
  } catch (const json::exception& e) {
    throw InputError(std::string("GAN checkpoint: ") + e.what());
  }
}

GanModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open GAN checkpoint " + path.string());
  return load_model(in);
}

void write_trace(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "epoch,critic_loss,wasserstein_estimate,gp_term,sc_term,lr\n";
  for (const auto& r : trace) {
    out << r.epoch << ',' << dataio::format_double(r.critic_loss) << ','
        << dataio::format_double(r.wasserstein_estimate) << ',' << dataio::format_double(r.gp_term)
        << ',' << dataio::format_double(r.sc_term) << ',' << dataio::format_double(r.lr) << '\n';
  }
}

}  // namespace evgen::scgan
