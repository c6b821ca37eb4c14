// Command-line pipeline: synthetic data generation, joint model training,
// forecast evaluation, counterfactual ATE grids, influence ranking, and a
// combined markdown report. Every command is deterministic given its
// resolved config and writes that config next to its outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sigcast/counterfactual.hpp"
#include "sigcast/io.hpp"
#include "sigcast/metrics.hpp"
#include "sigcast/model.hpp"
#include "sigcast/rng.hpp"
#include "sigcast/synthgen.hpp"
#include "sigcast/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace sigcast;

namespace {

// --- config schema ----------------------------------------------------------

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  ObservationWindow window;
  DatasetConfig data;
  ModelConfig model;
  TrainConfig train;
  int n_bootstrap = 200;
  std::string population = "all";  // "all" or "test"
  fs::path out_dir;
  fs::path data_dir;     // defaults to out_dir/"data"
  fs::path checkpoint;   // defaults to out_dir/"checkpoint.bin"
};

Duration days(double d) { return static_cast<Duration>(std::llround(d * kDay)); }
Duration hours(double h) { return static_cast<Duration>(std::llround(h * kHour)); }

RunConfig parse_config(const fs::path& path) {
  json j;
  {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  check_keys(j, "config",
             {"seed", "threads", "window", "data", "model", "train", "counterfactual",
              "paths"});

  RunConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", 1);
  c.threads = get_or<int>(j, "threads", 1);

  if (j.contains("window")) {
    const json& w = j.at("window");
    check_keys(w, "window", {"tau_obs_days", "dt_days", "horizon_days"});
    c.window.tau_obs = days(get_or<double>(w, "tau_obs_days", 2.0));
    c.window.dt = days(get_or<double>(w, "dt_days", 1.0));
    c.window.horizon = days(get_or<double>(w, "horizon_days", 7.0));
  }
  c.window.validate();

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data",
               {"n_posts", "n_sources", "eta_lo", "eta_hi", "t0_margin_days",
                "t0_spread_days", "snapshot_every_hours", "treat_threshold", "scenario",
                "dgp"});
    c.data.n_posts = get_or<int>(d, "n_posts", 100);
    c.data.n_sources = get_or<int>(d, "n_sources", 1);
    c.data.eta_lo = get_or<double>(d, "eta_lo", 0.0);
    c.data.eta_hi = get_or<double>(d, "eta_hi", 0.0);
    c.data.t0_margin = days(get_or<double>(d, "t0_margin_days", 2.0));
    c.data.t0_spread = days(get_or<double>(d, "t0_spread_days", 20.0));
    c.data.snapshot_every = hours(get_or<double>(d, "snapshot_every_hours", 1.0));
    c.data.treat_threshold = get_or<double>(d, "treat_threshold", 50.0);
    if (d.contains("scenario")) {
      const json& s = d.at("scenario");
      check_keys(s, "data.scenario",
                 {"start", "grid_step_minutes", "days", "baseline", "noise", "spikes"});
      c.data.scenario.start = get_or<Timestamp>(s, "start", 1600000000);
      c.data.scenario.grid_step =
          static_cast<Duration>(std::llround(get_or<double>(s, "grid_step_minutes", 10.0) *
                                             kMinute));
      const double span_days = get_or<double>(s, "days", 32.0);
      c.data.scenario.n_points = static_cast<std::size_t>(
          days(span_days) / c.data.scenario.grid_step + 1);
      c.data.scenario.baseline = get_or<double>(s, "baseline", 8.0);
      c.data.scenario.noise_scale = get_or<double>(s, "noise", 0.0);
      if (s.contains("spikes")) {
        for (const json& sp : s.at("spikes")) {
          check_keys(sp, "data.scenario.spikes[]", {"day", "amplitude", "width_days"});
          Spike spk;
          spk.offset = days(sp.at("day").get<double>());
          spk.amplitude = get_or<double>(sp, "amplitude", 60.0);
          spk.width = days(get_or<double>(sp, "width_days", 1.0));
          c.data.scenario.spikes.push_back(spk);
        }
      }
    }
    if (d.contains("dgp")) {
      const json& g = d.at("dgp");
      check_keys(g, "data.dgp",
                 {"mu", "eta", "phi", "kappa", "mark_probs", "steps", "step_hours"});
      c.data.dgp.mu = get_or<double>(g, "mu", 0.4);
      c.data.dgp.eta = get_or<double>(g, "eta", 2.0);
      c.data.dgp.phi = get_or<double>(g, "phi", 0.3);
      c.data.dgp.kappa = get_or<double>(g, "kappa", 0.5);
      if (g.contains("mark_probs")) {
        const auto probs = g.at("mark_probs").get<std::vector<double>>();
        if (probs.size() != kEngagementDims) {
          throw ConfigError("data.dgp.mark_probs must have 4 entries");
        }
        std::copy(probs.begin(), probs.end(), c.data.dgp.mark_probs.begin());
      }
      c.data.dgp.step_len = hours(get_or<double>(g, "step_hours", 1.0));
      c.data.dgp.steps = get_or<int>(
          g, "steps",
          static_cast<int>((c.window.tau_obs + c.window.horizon) / c.data.dgp.step_len));
    }
  }
  // make sure the generator always covers the forecast horizon
  if (c.data.dgp.steps * c.data.dgp.step_len < c.window.tau_obs + c.window.horizon) {
    c.data.dgp.steps =
        static_cast<int>((c.window.tau_obs + c.window.horizon) / c.data.dgp.step_len);
  }
  if (c.data.scenario.n_points == 0) {
    c.data.scenario.n_points = static_cast<std::size_t>(
        days(32.0) / c.data.scenario.grid_step + 1);
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model",
               {"backbone", "integration", "depth", "embed_dim", "hidden_dim", "heads",
                "state_dim", "lag_w", "lag_tau_hours", "lag_mode", "beta_mask"});
    c.model.backbone = backbone_from_string(get_or<std::string>(m, "backbone", "ssm"));
    c.model.integration =
        integration_from_string(get_or<std::string>(m, "integration", "adapter"));
    c.model.depth = get_or<int>(m, "depth", 2);
    c.model.embed_dim = get_or<int>(m, "embed_dim", 32);
    c.model.hidden_dim = get_or<int>(m, "hidden_dim", 64);
    c.model.heads = get_or<int>(m, "heads", 4);
    c.model.state_dim = get_or<int>(m, "state_dim", 16);
    c.model.lag_w = get_or<int>(m, "lag_w", 6);
    c.model.lag_tau = hours(get_or<double>(m, "lag_tau_hours", 24.0));
    c.model.lag_mode = get_or<std::string>(m, "lag_mode", "strided") == "recent"
                           ? LagMode::recent
                           : LagMode::strided;
    c.model.beta_mask = get_or<double>(m, "beta_mask", 0.1);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train",
               {"alpha", "beta_aux", "lr", "weight_decay", "batch", "patience",
                "max_epochs"});
    c.train.alpha = get_or<double>(t, "alpha", 0.5);
    c.train.beta_aux = get_or<double>(t, "beta_aux", 0.1);
    c.train.lr = get_or<double>(t, "lr", 1e-4);
    c.train.weight_decay = get_or<double>(t, "weight_decay", 0.01);
    c.train.batch = get_or<int>(t, "batch", 16);
    c.train.patience = get_or<int>(t, "patience", 10);
    c.train.max_epochs = get_or<int>(t, "max_epochs", 100);
  }

  if (j.contains("counterfactual")) {
    const json& cf = j.at("counterfactual");
    check_keys(cf, "counterfactual", {"n_bootstrap", "population"});
    c.n_bootstrap = get_or<int>(cf, "n_bootstrap", 200);
    c.population = get_or<std::string>(cf, "population", "all");
  }

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    check_keys(p, "paths", {"data_dir", "checkpoint"});
    if (p.contains("data_dir")) c.data_dir = p.at("data_dir").get<std::string>();
    if (p.contains("checkpoint")) c.checkpoint = p.at("checkpoint").get<std::string>();
  }
  return c;
}

ordered_json resolved_config(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["window"] = {{"tau_obs_days", static_cast<double>(c.window.tau_obs) / kDay},
                 {"dt_days", static_cast<double>(c.window.dt) / kDay},
                 {"horizon_days", static_cast<double>(c.window.horizon) / kDay}};
  ordered_json spikes = ordered_json::array();
  for (const Spike& s : c.data.scenario.spikes) {
    spikes.push_back({{"day", static_cast<double>(s.offset) / kDay},
                      {"amplitude", s.amplitude},
                      {"width_days", static_cast<double>(s.width) / kDay}});
  }
  j["data"] = {
      {"n_posts", c.data.n_posts},
      {"n_sources", c.data.n_sources},
      {"eta_lo", c.data.eta_lo},
      {"eta_hi", c.data.eta_hi},
      {"t0_margin_days", static_cast<double>(c.data.t0_margin) / kDay},
      {"t0_spread_days", static_cast<double>(c.data.t0_spread) / kDay},
      {"snapshot_every_hours", static_cast<double>(c.data.snapshot_every) / kHour},
      {"treat_threshold", c.data.treat_threshold},
      {"scenario",
       {{"start", c.data.scenario.start},
        {"grid_step_minutes", static_cast<double>(c.data.scenario.grid_step) / kMinute},
        {"days",
         static_cast<double>(static_cast<Duration>(c.data.scenario.n_points - 1) *
                             c.data.scenario.grid_step) /
             kDay},
        {"baseline", c.data.scenario.baseline},
        {"noise", c.data.scenario.noise_scale},
        {"spikes", spikes}}},
      {"dgp",
       {{"mu", c.data.dgp.mu},
        {"eta", c.data.dgp.eta},
        {"phi", c.data.dgp.phi},
        {"kappa", c.data.dgp.kappa},
        {"mark_probs", c.data.dgp.mark_probs},
        {"steps", c.data.dgp.steps},
        {"step_hours", static_cast<double>(c.data.dgp.step_len) / kHour}}}};
  j["model"] = {{"backbone", to_string(c.model.backbone)},
                {"integration", to_string(c.model.integration)},
                {"depth", c.model.depth},
                {"embed_dim", c.model.embed_dim},
                {"hidden_dim", c.model.hidden_dim},
                {"heads", c.model.heads},
                {"state_dim", c.model.state_dim},
                {"lag_w", c.model.lag_w},
                {"lag_tau_hours", static_cast<double>(c.model.lag_tau) / kHour},
                {"lag_mode", c.model.lag_mode == LagMode::strided ? "strided" : "recent"},
                {"beta_mask", c.model.beta_mask}};
  j["train"] = {{"alpha", c.train.alpha},
                {"beta_aux", c.train.beta_aux},
                {"lr", c.train.lr},
                {"weight_decay", c.train.weight_decay},
                {"batch", c.train.batch},
                {"patience", c.train.patience},
                {"max_epochs", c.train.max_epochs}};
  j["counterfactual"] = {{"n_bootstrap", c.n_bootstrap}, {"population", c.population}};
  j["paths"] = {{"data_dir", c.data_dir.string()}, {"checkpoint", c.checkpoint.string()}};
  return j;
}

void finalize_paths(RunConfig& c) {
  if (c.data_dir.empty()) c.data_dir = c.out_dir / "data";
  if (c.checkpoint.empty()) c.checkpoint = c.out_dir / "checkpoint.bin";
}

void write_resolved(const RunConfig& c, const std::string& command) {
  fs::create_directories(c.out_dir);
  io::write_text_file(c.out_dir / (command + "_resolved_config.json"),
                      resolved_config(c).dump(2) + "\n");
}

// --- dataset round trip -------------------------------------------------------

struct LoadedData {
  SignalTimeline signal;
  std::vector<Post> posts;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  DgpParams dgp;
  ObservationWindow window;
  double treat_threshold = 50.0;
  std::array<double, kEngagementDims> ate_scale{1, 1, 1, 1};
  std::vector<SourceInfo> sources;
  std::uint64_t dataset_seed = 0;
  Duration snapshot_every = kHour;
};

void write_dataset(const Dataset& ds, const RunConfig& c) {
  fs::create_directories(c.data_dir);
  io::write_posts_jsonl(c.data_dir / "posts.jsonl", ds.posts);
  io::write_signal_csv(c.data_dir / "signal.csv", ds.signal);

  ordered_json oracle;
  oracle["seed"] = c.seed;
  oracle["treat_threshold"] = ds.treat_threshold;
  oracle["snapshot_every_seconds"] = c.data.snapshot_every;
  oracle["window"] = {{"tau_obs", ds.window.tau_obs},
                      {"dt", ds.window.dt},
                      {"horizon", ds.window.horizon}};
  oracle["dgp"] = {{"mu", ds.dgp.mu},         {"eta", ds.dgp.eta},
                   {"phi", ds.dgp.phi},       {"kappa", ds.dgp.kappa},
                   {"mark_probs", ds.dgp.mark_probs},
                   {"steps", ds.dgp.steps},   {"step_len", ds.dgp.step_len}};
  ordered_json sources = ordered_json::array();
  for (const SourceInfo& s : ds.sources) {
    sources.push_back({{"user_ref", s.user_ref}, {"eta", s.eta}, {"n_posts", s.n_posts}});
  }
  oracle["sources"] = std::move(sources);
  auto ids = [&](const std::vector<std::size_t>& idx) {
    ordered_json arr = ordered_json::array();
    for (std::size_t i : idx) arr.push_back(ds.posts[i].post_id);
    return arr;
  };
  oracle["splits"] = {{"train", ids(ds.train_idx)},
                      {"val", ids(ds.val_idx)},
                      {"test", ids(ds.test_idx)}};
  const auto scale = ate_normalization(ds);
  oracle["ate_normalization"] = scale;

  // analytic effects for the scenario grid and the full-suppression contrast
  ordered_json true_ates;
  const std::uint64_t mask_seed = rng::key({c.seed, rng::hash_str("cf_masks")});
  auto put = [&](const std::string& name, const CounterfactualSpec& hi,
                 const CounterfactualSpec* lo) {
    std::array<double, kEngagementDims> delta = oracle_ate(ds, hi);
    if (lo != nullptr) {
      const auto base = oracle_ate(ds, *lo);
      for (int d = 0; d < kEngagementDims; ++d)
        delta[static_cast<std::size_t>(d)] -= base[static_cast<std::size_t>(d)];
    }
    true_ates[name] = {{"per_metric", delta},
                       {"normalized", normalized_ate(delta, scale)}};
  };
  const std::uint64_t s1 = rng::key({mask_seed, rng::hash_str("cf1")});
  const auto e00 = CounterfactualSpec::exposure(0.0, s1);
  const auto e20 = CounterfactualSpec::exposure(0.2, s1);
  const auto e40 = CounterfactualSpec::exposure(0.4, s1);
  const auto e60 = CounterfactualSpec::exposure(0.6, s1);
  put("full_suppression", e00, nullptr);
  put("CF1-1", e20, &e00);
  put("CF1-2", e40, &e20);
  put("CF1-3", e60, &e40);
  put("CF2-1", CounterfactualSpec::timing(-5 * kDay), nullptr);
  put("CF2-2", CounterfactualSpec::timing(-3 * kDay), nullptr);
  put("CF2-3", CounterfactualSpec::timing(-1 * kDay), nullptr);
  put("CF3-1", CounterfactualSpec::duration_of(1 * kDay), nullptr);
  put("CF3-2", CounterfactualSpec::duration_of(3 * kDay), nullptr);
  put("CF3-3", CounterfactualSpec::duration_of(5 * kDay), nullptr);
  oracle["true_ate"] = std::move(true_ates);

  io::write_text_file(c.data_dir / "oracle.json", oracle.dump(2) + "\n");
}

LoadedData load_dataset(const RunConfig& c) {
  LoadedData d;
  d.posts = io::read_posts_jsonl(c.data_dir / "posts.jsonl");
  d.signal = io::read_signal_csv(c.data_dir / "signal.csv");
  const json oracle = json::parse(io::read_text_file(c.data_dir / "oracle.json"));
  d.treat_threshold = oracle.at("treat_threshold").get<double>();
  d.dataset_seed = oracle.at("seed").get<std::uint64_t>();
  d.snapshot_every = oracle.at("snapshot_every_seconds").get<Duration>();
  const json& w = oracle.at("window");
  d.window.tau_obs = w.at("tau_obs").get<Duration>();
  d.window.dt = w.at("dt").get<Duration>();
  d.window.horizon = w.at("horizon").get<Duration>();
  const json& g = oracle.at("dgp");
  d.dgp.mu = g.at("mu").get<double>();
  d.dgp.eta = g.at("eta").get<double>();
  d.dgp.phi = g.at("phi").get<double>();
  d.dgp.kappa = g.at("kappa").get<double>();
  const auto probs = g.at("mark_probs").get<std::vector<double>>();
  std::copy(probs.begin(), probs.end(), d.dgp.mark_probs.begin());
  d.dgp.steps = g.at("steps").get<int>();
  d.dgp.step_len = g.at("step_len").get<Duration>();
  for (const json& s : oracle.at("sources")) {
    d.sources.push_back({s.at("user_ref").get<std::string>(), s.at("eta").get<double>(),
                         s.at("n_posts").get<int>()});
  }
  const auto scale = oracle.at("ate_normalization").get<std::vector<double>>();
  std::copy(scale.begin(), scale.end(), d.ate_scale.begin());

  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < d.posts.size(); ++i) by_id[d.posts[i].post_id] = i;
  auto read_split = [&](const char* name, std::vector<std::size_t>& out) {
    for (const json& id : oracle.at("splits").at(name)) {
      out.push_back(by_id.at(id.get<std::string>()));
    }
  };
  read_split("train", d.train_idx);
  read_split("val", d.val_idx);
  read_split("test", d.test_idx);
  return d;
}

json read_oracle(const RunConfig& c) {
  return json::parse(io::read_text_file(c.data_dir / "oracle.json"));
}

NormStats fit_norm(const LoadedData& d) {
  std::vector<Post> train;
  for (std::size_t i : d.train_idx) train.push_back(d.posts[i]);
  return fit_norm_stats(train, d.window);
}

std::vector<Post> population_posts(const LoadedData& d, const std::string& population) {
  if (population == "test") {
    std::vector<Post> out;
    for (std::size_t i : d.test_idx) out.push_back(d.posts[i]);
    return out;
  }
  return d.posts;
}

std::string fmt(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// --- commands -----------------------------------------------------------------

int cmd_gen_data(RunConfig c) {
  finalize_paths(c);
  DatasetConfig dc = c.data;
  dc.window = c.window;
  dc.seed = rng::key({c.seed, rng::hash_str("data")});
  const Dataset ds = make_dataset(dc);
  write_dataset(ds, c);
  write_resolved(c, "gen-data");
  std::cout << "wrote " << ds.posts.size() << " posts, signal with " << ds.signal.size()
            << " points to " << c.data_dir.string() << "\n";
  return 0;
}

int cmd_train(RunConfig c) {
  finalize_paths(c);
  const LoadedData d = load_dataset(c);
  const NormStats norm = fit_norm(d);

  ModelConfig mc = c.model;
  mc.seed = rng::key({c.seed, rng::hash_str("init")});
  JointModel model(mc);

  TrainData td;
  td.signal = &d.signal;
  td.window = d.window;
  td.norm = norm;
  td.treat_threshold = d.treat_threshold;
  for (std::size_t i : d.train_idx) {
    td.train.push_back(make_sequence_batch(d.posts[i], d.signal, d.window, norm,
                                           mc.lag_spec(), d.treat_threshold));
  }
  for (std::size_t i : d.val_idx) td.val_posts.push_back(&d.posts[i]);

  TrainConfig tc = c.train;
  tc.seed = rng::key({c.seed, rng::hash_str("train")});
  const TrainReport report = train(model, td, tc);
  model.save(c.checkpoint);

  ordered_json rj;
  rj["model"] = model.config().name();
  rj["parameters"] = model.params().total_parameters();
  rj["best_epoch"] = report.best_epoch;
  rj["stopped_epoch"] = report.stopped_epoch;
  rj["best_val_rmse"] = report.best_val_rmse;
  rj["clamp_frequency"] = report.clamp_frequency;
  ordered_json epochs = ordered_json::array();
  for (std::size_t e = 0; e < report.train_epochs.size(); ++e) {
    const EpochStats& tr = report.train_epochs[e];
    const EpochStats& va = report.val_epochs[e];
    epochs.push_back({{"epoch", e},
                      {"train_total", tr.total},
                      {"train_mse", tr.mse},
                      {"train_bce", tr.bce},
                      {"train_aux", tr.aux},
                      {"val_total", va.total},
                      {"val_mse", va.mse},
                      {"val_bce", va.bce},
                      {"val_aux", va.aux},
                      {"val_rmse", report.val_rmse[e]}});
  }
  rj["epochs"] = std::move(epochs);
  io::write_text_file(c.out_dir / "train_report.json", rj.dump(2) + "\n");
  write_resolved(c, "train");
  std::cout << "trained " << model.config().name() << ": best val RMSE "
            << report.best_val_rmse << " at epoch " << report.best_epoch << "\n";
  return 0;
}

// Forecast quality on the test split: factual, plus each counterfactual
// scenario with ground truth regenerated from the same cascade seeds under
// the transformed signal.
int cmd_evaluate(RunConfig c) {
  finalize_paths(c);
  const LoadedData d = load_dataset(c);
  const NormStats norm = fit_norm(d);
  const JointModel model = JointModel::load(c.checkpoint);

  struct Scenario {
    std::string name;
    CounterfactualSpec spec;
    bool factual;
  };
  const std::uint64_t mask_seed = rng::key({d.dataset_seed, rng::hash_str("cf_masks")});
  const std::uint64_t s1 = rng::key({mask_seed, rng::hash_str("cf1")});
  std::vector<Scenario> scenarios;
  scenarios.push_back({"base", CounterfactualSpec::exposure(1.0, s1), true});
  scenarios.push_back({"exposure_20", CounterfactualSpec::exposure(0.2, s1), false});
  scenarios.push_back({"exposure_40", CounterfactualSpec::exposure(0.4, s1), false});
  scenarios.push_back({"exposure_60", CounterfactualSpec::exposure(0.6, s1), false});
  scenarios.push_back({"timing_m5d", CounterfactualSpec::timing(-5 * kDay), false});
  scenarios.push_back({"timing_m3d", CounterfactualSpec::timing(-3 * kDay), false});
  scenarios.push_back({"timing_m1d", CounterfactualSpec::timing(-1 * kDay), false});
  scenarios.push_back({"duration_1d", CounterfactualSpec::duration_of(1 * kDay), false});
  scenarios.push_back({"duration_3d", CounterfactualSpec::duration_of(3 * kDay), false});
  scenarios.push_back({"duration_5d", CounterfactualSpec::duration_of(5 * kDay), false});

  ordered_json results = ordered_json::array();
  std::string csv = "scenario,rmse,rmse_normalized,bce\n";
  for (const Scenario& sc : scenarios) {
    double sq = 0.0, sqn = 0.0, bce_sum = 0.0;
    std::size_t n = 0, n_bce = 0;
    for (std::size_t ti : d.test_idx) {
      const Post& post = d.posts[ti];
      SignalTimeline sig = d.signal;
      Post truth = post;
      if (!sc.factual) {
        sig = apply_cf(d.signal, sc.spec.anchored(post.t0, d.window));
        // regenerate the same cascade under the transformed signal
        DgpParams dgp = d.dgp;
        for (const SourceInfo& s : d.sources) {
          if (s.user_ref == post.user_ref) dgp.eta = s.eta;
        }
        const std::size_t index = static_cast<std::size_t>(
            std::stoll(post.post_id.substr(1)));
        const std::uint64_t post_key =
            rng::key({rng::key({d.dataset_seed, rng::hash_str("data")}),
                      rng::hash_str("post"), index});
        CascadeId id{post.post_id, post.user_ref, post.category, post.t0,
                     d.snapshot_every};
        truth = gen_cascade(sig, dgp, post_key, id);
      }
      const Trajectory traj = rollout(model, post, sig, d.window, norm);
      for (std::size_t k = 0; k < traj.points.size(); ++k) {
        const auto tru = truth.history.counts_at(traj.points[k].t);
        const auto tru_norm = normalize_engagement(tru, norm);
        for (int dim = 0; dim < kEngagementDims; ++dim) {
          const double raw = traj.points[k].counts[static_cast<std::size_t>(dim)] -
                             static_cast<double>(tru.counts[static_cast<std::size_t>(dim)]);
          double pred_norm =
              std::log1p(std::max(0.0, traj.points[k].counts[static_cast<std::size_t>(dim)])) /
              norm.scale[static_cast<std::size_t>(dim)];
          sq += raw * raw;
          const double dn = pred_norm - tru_norm[static_cast<std::size_t>(dim)];
          sqn += dn * dn;
          ++n;
        }
        const double a_true = sig.value_at(traj.points[k].t, 0.0) >= d.treat_threshold
                                  ? 1.0
                                  : 0.0;
        const double p = std::clamp(traj.lambda[k], 1e-7, 1.0 - 1e-7);
        bce_sum -= a_true * std::log(p) + (1.0 - a_true) * std::log(1.0 - p);
        ++n_bce;
      }
    }
    const double r = n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
    const double rn = n ? std::sqrt(sqn / static_cast<double>(n)) : 0.0;
    const double b = n_bce ? bce_sum / static_cast<double>(n_bce) : 0.0;
    results.push_back({{"scenario", sc.name},
                       {"rmse", r},
                       {"rmse_normalized", rn},
                       {"bce", b}});
    csv += sc.name + "," + fmt(r) + "," + fmt(rn) + "," + fmt(b) + "\n";
  }

  ordered_json out;
  out["horizon_days"] = static_cast<double>(d.window.horizon) / kDay;
  out["description"] = "forecast error over a " +
                       std::to_string(d.window.horizon / kDay) + "-day horizon";
  out["test_posts"] = d.test_idx.size();
  out["results"] = std::move(results);
  io::write_text_file(c.out_dir / "evaluation.json", out.dump(2) + "\n");
  io::write_text_file(c.out_dir / "evaluation.csv", csv);
  write_resolved(c, "evaluate");
  std::cout << "evaluated " << d.test_idx.size() << " test posts over a "
            << d.window.horizon / kDay << "-day horizon\n";
  return 0;
}

int cmd_counterfactual(RunConfig c) {
  finalize_paths(c);
  const LoadedData d = load_dataset(c);
  const NormStats norm = fit_norm(d);
  const JointModel model = JointModel::load(c.checkpoint);
  const std::vector<Post> posts = population_posts(d, c.population);
  const std::uint64_t mask_seed = rng::key({d.dataset_seed, rng::hash_str("cf_masks")});

  const auto grid = scenario_grid(model, posts, d.signal, d.window, norm, d.ate_scale,
                                  c.n_bootstrap, mask_seed, c.threads);
  const json oracle = read_oracle(c);

  std::string csv = "scenario,ate,ci_lo,ci_hi,ate_likes,ate_shares,ate_comments,ate_emoji,"
                    "oracle_ate\n";
  std::string long_csv = "scenario,metric,value\n";
  for (const ScenarioCell& cell : grid) {
    const AteEstimate& e = cell.estimate;
    const double truth =
        oracle.at("true_ate").at(cell.name).at("normalized").get<double>();
    csv += cell.name + "," + fmt(e.ate_normalized) + "," + fmt(e.ci_lo) + "," +
           fmt(e.ci_hi) + "," + fmt(e.ate_per_metric[0]) + "," + fmt(e.ate_per_metric[1]) +
           "," + fmt(e.ate_per_metric[2]) + "," + fmt(e.ate_per_metric[3]) + "," +
           fmt(truth) + "\n";
    long_csv += cell.name + ",ate," + fmt(e.ate_normalized) + "\n";
    long_csv += cell.name + ",ci_lo," + fmt(e.ci_lo) + "\n";
    long_csv += cell.name + ",ci_hi," + fmt(e.ci_hi) + "\n";
    long_csv += cell.name + ",oracle," + fmt(truth) + "\n";
  }
  io::write_text_file(c.out_dir / "ate_grid.csv", csv);
  io::write_text_file(c.out_dir / "ate_grid_long.csv", long_csv);

  // full-suppression contrast against the analytic truth
  const AteEstimate full = ate_gcomp(model, posts, d.signal,
                                     CounterfactualSpec::exposure(0.0, 0), d.window, norm,
                                     d.ate_scale, c.n_bootstrap,
                                     rng::key({mask_seed, rng::hash_str("boot_full")}),
                                     c.threads);
  ordered_json fj;
  fj["spec"] = "exposure_0pct";
  fj["ate_normalized"] = full.ate_normalized;
  fj["ci95"] = {full.ci_lo, full.ci_hi};
  fj["ate_per_metric"] = full.ate_per_metric;
  fj["oracle_normalized"] =
      oracle.at("true_ate").at("full_suppression").at("normalized").get<double>();
  fj["oracle_per_metric"] =
      oracle.at("true_ate").at("full_suppression").at("per_metric").get<std::vector<double>>();
  fj["n_posts"] = posts.size();
  fj["n_bootstrap"] = c.n_bootstrap;
  io::write_text_file(c.out_dir / "ate_full_suppression.json", fj.dump(2) + "\n");
  write_resolved(c, "counterfactual");
  std::cout << "counterfactual grid over " << posts.size() << " posts written ("
            << grid.size() << " scenarios)\n";
  return 0;
}

int cmd_influence(RunConfig c) {
  finalize_paths(c);
  const LoadedData d = load_dataset(c);
  const NormStats norm = fit_norm(d);
  const JointModel model = JointModel::load(c.checkpoint);

  const auto scores = influence_scores(model, d.posts, d.signal, d.window, norm, c.threads);

  std::string csv = "user_ref,raw_effect,percentile,n_posts,true_eta\n";
  std::vector<double> inf, eta, n_posts;
  for (const SourceScore& s : scores) {
    double true_eta = 0.0;
    for (const SourceInfo& src : d.sources) {
      if (src.user_ref == s.user_ref) true_eta = src.eta;
    }
    csv += s.user_ref + "," + fmt(s.raw) + "," + fmt(s.percentile) + "," +
           std::to_string(s.n_posts) + "," + fmt(true_eta) + "\n";
    inf.push_back(s.raw);
    eta.push_back(true_eta);
    n_posts.push_back(static_cast<double>(s.n_posts));
  }
  io::write_text_file(c.out_dir / "influence.csv", csv);

  ordered_json rs;
  if (scores.size() >= 3) {
    const RankStats effect_vs_eta = rank_stats(inf, eta);
    const RankStats count_vs_eta = rank_stats(n_posts, eta);
    rs["causal_effect_vs_true_gain"] = {{"spearman", effect_vs_eta.spearman},
                                        {"kendall_w", effect_vs_eta.kendall_w},
                                        {"ccc", effect_vs_eta.ccc}};
    rs["post_count_vs_true_gain"] = {{"spearman", count_vs_eta.spearman},
                                     {"kendall_w", count_vs_eta.kendall_w},
                                     {"ccc", count_vs_eta.ccc}};
  }
  rs["n_sources"] = scores.size();
  io::write_text_file(c.out_dir / "influence_rank_stats.json", rs.dump(2) + "\n");

  if (scores.size() >= 10) {
    const auto cells = decile_matrix(inf, eta);
    std::string dcsv = "decile_effect\\decile_eta";
    for (int j = 0; j < 10; ++j) dcsv += ",d" + std::to_string(j);
    dcsv += "\n";
    for (int i = 0; i < 10; ++i) {
      dcsv += "d" + std::to_string(i);
      for (int j = 0; j < 10; ++j) {
        dcsv += "," + std::to_string(cells[static_cast<std::size_t>(i)]
                                          [static_cast<std::size_t>(j)]);
      }
      dcsv += "\n";
    }
    io::write_text_file(c.out_dir / "influence_deciles.csv", dcsv);
  }
  write_resolved(c, "influence");
  std::cout << "influence scores for " << scores.size() << " sources written\n";
  return 0;
}

int cmd_report(RunConfig c) {
  finalize_paths(c);
  std::string md = "# Run report\n\n";
  auto maybe = [&](const fs::path& p) {
    return fs::exists(p) ? io::read_text_file(p) : std::string();
  };

  const std::string train_rep = maybe(c.out_dir / "train_report.json");
  if (!train_rep.empty()) {
    const json tr = json::parse(train_rep);
    md += "## Training\n\n";
    md += "- model: " + tr.at("model").get<std::string>() + "\n";
    md += "- parameters: " + std::to_string(tr.at("parameters").get<long long>()) + "\n";
    md += "- best epoch: " + std::to_string(tr.at("best_epoch").get<int>()) + "\n";
    md += "- best validation RMSE: " + fmt(tr.at("best_val_rmse").get<double>()) + "\n";
    md += "- intensity clamp frequency: " +
          fmt(tr.at("clamp_frequency").get<double>()) + "\n\n";
  }

  const std::string eval_rep = maybe(c.out_dir / "evaluation.json");
  if (!eval_rep.empty()) {
    const json ev = json::parse(eval_rep);
    md += "## Forecast quality (" + fmt(ev.at("horizon_days").get<double>()) +
          "-day horizon)\n\n";
    md += "| scenario | RMSE | RMSE (normalized) | BCE |\n|---|---|---|---|\n";
    for (const json& r : ev.at("results")) {
      md += "| " + r.at("scenario").get<std::string>() + " | " +
            fmt(r.at("rmse").get<double>()) + " | " +
            fmt(r.at("rmse_normalized").get<double>()) + " | " +
            fmt(r.at("bce").get<double>()) + " |\n";
    }
    md += "\n";
  }

  const std::string grid = maybe(c.out_dir / "ate_grid.csv");
  if (!grid.empty()) {
    md += "## Counterfactual ATE grid\n\n";
    md += "| scenario | ATE | 95% CI | oracle |\n|---|---|---|---|\n";
    std::istringstream ss(grid);
    std::string line;
    std::getline(ss, line);  // header
    while (std::getline(ss, line)) {
      std::vector<std::string> cols;
      std::size_t pos = 0;
      while (pos != std::string::npos) {
        const std::size_t comma = line.find(',', pos);
        cols.push_back(line.substr(pos, comma - pos));
        pos = comma == std::string::npos ? comma : comma + 1;
      }
      if (cols.size() >= 9) {
        md += "| " + cols[0] + " | " + cols[1] + " | [" + cols[2] + ", " + cols[3] +
              "] | " + cols[8] + " |\n";
      }
    }
    md += "\n";
  }

  const std::string inf = maybe(c.out_dir / "influence_rank_stats.json");
  if (!inf.empty()) {
    const json ir = json::parse(inf);
    md += "## Influence ranking\n\n";
    if (ir.contains("causal_effect_vs_true_gain")) {
      const json& a = ir.at("causal_effect_vs_true_gain");
      const json& b = ir.at("post_count_vs_true_gain");
      md += "- causal effect vs true gain: Spearman " +
            fmt(a.at("spearman").get<double>()) + ", Kendall W " +
            fmt(a.at("kendall_w").get<double>()) + ", CCC " +
            fmt(a.at("ccc").get<double>()) + "\n";
      md += "- post count vs true gain: Spearman " +
            fmt(b.at("spearman").get<double>()) + ", Kendall W " +
            fmt(b.at("kendall_w").get<double>()) + ", CCC " +
            fmt(b.at("ccc").get<double>()) + "\n";
    }
    md += "\n";
  }

  io::write_text_file(c.out_dir / "report.md", md);
  write_resolved(c, "report");
  std::cout << "report written to " << (c.out_dir / "report.md").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint engagement-forecasting and counterfactual analysis pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::int64_t seed_override = -1;
  int threads_override = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed_override, "override the config seed");
    sub->add_option("--threads", threads_override, "override the config thread count");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  CLI::App* tr = app.add_subcommand("train", "train the joint model");
  CLI::App* ev = app.add_subcommand("evaluate", "forecast quality report");
  CLI::App* cf = app.add_subcommand("counterfactual", "ATE scenario grid");
  CLI::App* infl = app.add_subcommand("influence", "per-source influence ranking");
  CLI::App* rep = app.add_subcommand("report", "aggregate artifacts into markdown");
  for (CLI::App* sub : {gen, tr, ev, cf, infl, rep}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig c = parse_config(config_path);
    if (seed_override >= 0) c.seed = static_cast<std::uint64_t>(seed_override);
    if (threads_override > 0) c.threads = threads_override;
    c.out_dir = out_dir;

    if (gen->parsed()) return cmd_gen_data(std::move(c));
    if (tr->parsed()) return cmd_train(std::move(c));
    if (ev->parsed()) return cmd_evaluate(std::move(c));
    if (cf->parsed()) return cmd_counterfactual(std::move(c));
    if (infl->parsed()) return cmd_influence(std::move(c));
    if (rep->parsed()) return cmd_report(std::move(c));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
