#include "sigcast/training.hpp"

#include <algorithm>
#include <cmath>

#include "sigcast/rng.hpp"

namespace sigcast {

void TrainConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta_aux >= 0.0)) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (batch < 1 || patience < 1 || max_epochs < 1) {
    throw ConfigError("batch, patience and max_epochs must be positive");
  }
}

JointLossParts joint_loss(Tape& tape, const HeadOutputs& out, const SequenceBatch& batch,
                          double alpha) {
  const int rows = batch.valid_rows;
  if (rows < 1) throw ShapeError("joint_loss: no valid target rows");
  if (tape.val(out.y).rows() != batch.targets_y.rows()) {
    throw ShapeError("joint_loss: head rows " + tape.val(out.y).shape_str() +
                     " vs targets " + batch.targets_y.shape_str());
  }
  Var y_pred = tape.slice_rows(out.y, 0, rows);
  Var y_true = tape.constant(Tensor({rows, kEngagementDims},
                                    std::vector<double>(batch.targets_y.data().begin(),
                                                        batch.targets_y.data().begin() +
                                                            rows * kEngagementDims)));
  JointLossParts parts;
  parts.mse = tape.scale(tape.sse(y_pred, y_true), 1.0 / (rows * kEngagementDims));

  Var l_pred = tape.slice_rows(out.lambda, 0, rows);
  Var a_true = tape.constant(Tensor(
      {rows, 1}, std::vector<double>(batch.targets_a.data().begin(),
                                     batch.targets_a.data().begin() + rows)));
  parts.bce = tape.bce(l_pred, a_true);
  parts.total = tape.add(parts.mse, tape.scale(parts.bce, alpha));
  return parts;
}

Var temporal_coherence(Tape& tape, const std::vector<ScanRecord>& scans) {
  if (scans.empty()) {
    throw ContractError("temporal_coherence requires an ssm backbone with recorded scans");
  }
  Var acc;
  int total_steps = 0;
  for (const ScanRecord& scan : scans) {
    const int steps = tape.val(scan.transitions).rows();
    Var h_prev = tape.slice_rows(scan.states, 0, steps);
    Var h_next = tape.slice_rows(scan.states, 1, steps);
    Var predicted = tape.mul(scan.transitions, h_prev);
    Var term = tape.sse(h_next, predicted);
    acc = acc.valid() ? tape.add(acc, term) : term;
    total_steps += steps;
  }
  return tape.scale(acc, 1.0 / total_steps);
}

namespace {

// Uniform causal pair (i, j <= i) from a triangular index.
std::pair<int, int> decode_causal_pair(std::uint64_t idx) {
  int i = 0;
  while ((static_cast<std::uint64_t>(i) + 1) * (static_cast<std::uint64_t>(i) + 2) / 2 <=
         idx) {
    ++i;
  }
  const int j = static_cast<int>(idx - static_cast<std::uint64_t>(i) *
                                           (static_cast<std::uint64_t>(i) + 1) / 2);
  return {i, j};
}

double pair_weight(double dt_ij, double dt_kl, double sigma) {
  const double d = dt_ij - dt_kl;
  return std::exp(-(d * d) / (sigma * sigma));
}

}  // namespace

Var attention_consistency(Tape& tape, const HeadOutputs& out, int sample_budget,
                          double sigma_days, std::uint64_t seed) {
  if (out.attention.empty()) {
    throw ContractError("attention_consistency requires a transformer backbone");
  }
  const auto& times = out.attn_time_days;
  rng::Stream stream(seed);
  Var acc = tape.constant(Tensor::scalar(0.0));
  for (int s = 0; s < sample_budget; ++s) {
    const std::size_t m =
        static_cast<std::size_t>(stream.next_below(out.attention.size()));
    Var map = out.attention[m];
    const int rows = tape.val(map).rows();
    const std::uint64_t n_pairs =
        static_cast<std::uint64_t>(rows) * (static_cast<std::uint64_t>(rows) + 1) / 2;
    const auto [i, j] = decode_causal_pair(stream.next_below(n_pairs));
    const auto [k, l] = decode_causal_pair(stream.next_below(n_pairs));
    const double w = pair_weight(times[static_cast<std::size_t>(i)] -
                                     times[static_cast<std::size_t>(j)],
                                 times[static_cast<std::size_t>(k)] -
                                     times[static_cast<std::size_t>(l)],
                                 sigma_days);
    Var diff = tape.sub(tape.element(map, i, j), tape.element(map, k, l));
    acc = tape.add(acc, tape.scale(tape.mul(diff, diff), w));
  }
  return tape.scale(acc, 1.0 / sample_budget);
}

double attention_consistency_full(const Tape& tape, const HeadOutputs& out,
                                  double sigma_days) {
  if (out.attention.empty()) {
    throw ContractError("attention_consistency requires a transformer backbone");
  }
  const auto& times = out.attn_time_days;
  double total = 0.0;
  std::uint64_t count = 0;
  for (Var map : out.attention) {
    const Tensor& a = tape.val(map);
    const int rows = a.rows();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j <= i; ++j)
        for (int k = 0; k < rows; ++k)
          for (int l = 0; l <= k; ++l) {
            const double w = pair_weight(times[static_cast<std::size_t>(i)] -
                                             times[static_cast<std::size_t>(j)],
                                         times[static_cast<std::size_t>(k)] -
                                             times[static_cast<std::size_t>(l)],
                                         sigma_days);
            const double d = a(i, j) - a(k, l);
            total += w * d * d;
            ++count;
          }
  }
  return total / static_cast<double>(count);
}

// --- rollout --------------------------------------------------------------------

namespace {

using Cums = std::vector<std::array<double, kEngagementDims>>;

// Inputs and lag features for rows 0..n_rows-1 from a real-valued
// cumulative trajectory (cums[i] at time t0 + i*dt).
SequenceBatch batch_from_cums(const Cums& cums, int n_rows, Timestamp t0,
                              const SignalTimeline& signal, const ObservationWindow& win,
                              const NormStats& norm, const LagSpec& lag) {
  SequenceBatch b;
  b.inputs = Tensor({n_rows, kBaseFeatures});
  b.lag = Tensor({n_rows, lag.w});
  b.targets_y = Tensor({n_rows, kEngagementDims});
  b.targets_a = Tensor({n_rows, 1});
  b.time_days.resize(static_cast<std::size_t>(n_rows));
  b.gap_days.resize(static_cast<std::size_t>(n_rows));
  const double dt_days = static_cast<double>(win.dt) / kDay;
  for (int i = 0; i < n_rows; ++i) {
    const Timestamp t_i = t0 + static_cast<Duration>(i) * win.dt;
    for (int d = 0; d < kEngagementDims; ++d) {
      const double inc = std::max(
          0.0, cums[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] -
                   (i > 0 ? cums[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(d)]
                          : 0.0));
      b.inputs(i, d) = std::log1p(inc) / norm.scale[static_cast<std::size_t>(d)];
    }
    const double tau = static_cast<double>(t_i - t0) / kDay;
    b.inputs(i, 4) = std::sin(2.0 * std::numbers::pi * tau);
    b.inputs(i, 5) = std::cos(2.0 * std::numbers::pi * tau);
    b.inputs(i, 6) = std::sin(2.0 * std::numbers::pi * tau / 7.0);
    b.inputs(i, 7) = std::cos(2.0 * std::numbers::pi * tau / 7.0);
    b.inputs(i, 8) = std::log1p(dt_days);
    b.time_days[static_cast<std::size_t>(i)] = tau;
    b.gap_days[static_cast<std::size_t>(i)] = dt_days;
    const LagFeature f = lag_features(signal, t_i + win.dt, lag);
    for (int k = 0; k < lag.w; ++k) b.lag(i, k) = f.values[static_cast<std::size_t>(k)];
  }
  b.valid_rows = n_rows;
  b.obs_rows = n_rows;
  return b;
}

}  // namespace

Trajectory rollout(const JointModel& model, const Post& post, const SignalTimeline& signal,
                   const ObservationWindow& win, const NormStats& norm) {
  win.validate();
  if (win.tau_obs % win.dt != 0) {
    throw ConfigError("tau_obs must be a whole number of prediction steps");
  }
  if (post.history.empty()) {
    throw EmptyHistoryError("rollout: post " + post.post_id + " has no observations");
  }
  const int n_obs = static_cast<int>(win.tau_obs / win.dt);
  const int k_pred = win.steps();
  const LagSpec lag = model.config().lag_spec();

  Trajectory traj;
  if (k_pred == 0) return traj;

  Cums cums(static_cast<std::size_t>(n_obs + k_pred + 1));
  for (int i = 0; i <= n_obs; ++i) {
    const auto c = post.history.counts_at(post.t0 + static_cast<Duration>(i) * win.dt);
    for (int d = 0; d < kEngagementDims; ++d) {
      cums[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] =
          static_cast<double>(c.counts[static_cast<std::size_t>(d)]);
    }
  }

  for (int k = 1; k <= k_pred; ++k) {
    const int rows = n_obs + k;  // rows 0..n_obs+k-1; last row predicts t_{n_obs+k}
    SequenceBatch b = batch_from_cums(cums, rows, post.t0, signal, win, norm, lag);
    Tape tape;
    JointModel::Bound pv = model.bind(tape, false);
    HeadOutputs out = model.forward(tape, pv, b);
    std::array<double, kEngagementDims> next{};
    for (int d = 0; d < kEngagementDims; ++d) {
      const double pred_norm = tape.val(out.y)(rows - 1, d);
      const double pred_count =
          std::expm1(pred_norm * norm.scale[static_cast<std::size_t>(d)]);
      // cumulative counts never decrease
      next[static_cast<std::size_t>(d)] =
          std::max(cums[static_cast<std::size_t>(rows - 1)][static_cast<std::size_t>(d)],
                   pred_count);
    }
    cums[static_cast<std::size_t>(rows)] = next;
    traj.points.push_back(
        {post.t0 + static_cast<Duration>(rows) * win.dt, next});
    traj.lambda.push_back(tape.val(out.lambda)(rows - 1, 0));
  }
  return traj;
}

double rollout_rmse(const JointModel& model, const std::vector<const Post*>& posts,
                    const SignalTimeline& signal, const ObservationWindow& win,
                    const NormStats& norm) {
  if (posts.empty()) return 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const Post* p : posts) {
    const Trajectory traj = rollout(model, *p, signal, win, norm);
    for (const TrajectoryPoint& pt : traj.points) {
      const auto truth = p->history.counts_at(pt.t);
      for (int d = 0; d < kEngagementDims; ++d) {
        const double diff = pt.counts[static_cast<std::size_t>(d)] -
                            static_cast<double>(truth.counts[static_cast<std::size_t>(d)]);
        sq += diff * diff;
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(n));
}

// --- optimizer and training loop ---------------------------------------------------

namespace {

struct AdamState {
  std::vector<Tensor> m, v;
  long long t = 0;
};

void adam_step(ParamStore& store, const std::vector<Tensor>& grads, AdamState& st,
               const TrainConfig& cfg) {
  ++st.t;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Tensor& p = store.tensor(i);
    const Tensor& g = grads[i];
    Tensor& m = st.m[i];
    Tensor& v = st.v[i];
    for (int j = 0; j < p.numel(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      // decoupled weight decay
      p[j] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * p[j]);
    }
  }
}

struct ForwardLoss {
  double total, mse, bce, aux;
  long long lambda_clamped, lambda_total;
};

}  // namespace

TrainReport train(JointModel& model, const TrainData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("train: empty training split");
  if (data.val_posts.empty()) throw ConfigError("train: empty validation split");
  if (data.signal == nullptr) throw ConfigError("train: missing signal timeline");
  const bool is_ssm = model.config().backbone == Backbone::ssm;

  // teacher-forced validation batches
  std::vector<SequenceBatch> val_batches;
  for (const Post* p : data.val_posts) {
    val_batches.push_back(make_sequence_batch(*p, *data.signal, data.window, data.norm,
                                              model.config().lag_spec(),
                                              data.treat_threshold));
  }

  ParamStore& store = model.params();
  AdamState adam;
  adam.m.reserve(store.size());
  adam.v.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    adam.m.emplace_back(store.tensor(i).shape());
    adam.v.emplace_back(store.tensor(i).shape());
  }

  auto run_post = [&](const SequenceBatch& batch, bool with_grad,
                      std::vector<Tensor>* grads, std::uint64_t att_seed) -> ForwardLoss {
    Tape tape;
    JointModel::Bound pv = model.bind(tape, with_grad);
    HeadOutputs out = model.forward(tape, pv, batch);
    JointLossParts joint = joint_loss(tape, out, batch, cfg.alpha);
    Var aux;
    if (cfg.beta_aux > 0.0) {
      aux = is_ssm ? temporal_coherence(tape, out.scans)
                   : attention_consistency(tape, out, cfg.att_sample_budget,
                                           cfg.att_sigma_days, att_seed);
    }
    Var total = aux.valid() ? tape.add(joint.total, tape.scale(aux, cfg.beta_aux))
                            : joint.total;
    ForwardLoss fl{};
    fl.total = tape.val(total)[0];
    fl.mse = tape.val(joint.mse)[0];
    fl.bce = tape.val(joint.bce)[0];
    fl.aux = aux.valid() ? tape.val(aux)[0] : 0.0;
    const Tensor& lam = tape.val(out.lambda);
    for (int i = 0; i < lam.numel(); ++i) {
      fl.lambda_total++;
      if (lam[i] >= 1.0) fl.lambda_clamped++;
    }
    if (with_grad) {
      tape.backward(total);
      for (std::size_t i = 0; i < store.size(); ++i) {
        const Tensor& g = tape.grad(pv.vars[i]);
        Tensor& acc = (*grads)[i];
        for (int j = 0; j < g.numel(); ++j) acc[j] += g[j];
      }
    }
    return fl;
  };

  TrainReport report;
  std::vector<Tensor> best_params;
  long long clamp_hits = 0, clamp_total = 0;

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Tensor> grads;
  grads.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) grads.emplace_back(store.tensor(i).shape());

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng::Stream shuffle_stream(
        rng::key({cfg.seed, rng::hash_str("shuffle"), static_cast<std::uint64_t>(epoch)}));
    rng::shuffle(order, shuffle_stream);

    EpochStats stats;
    std::size_t cursor = 0;
    std::size_t batches = 0;
    while (cursor < order.size()) {
      const std::size_t take =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), order.size() - cursor);
      for (std::size_t i = 0; i < store.size(); ++i) {
        Tensor& g = grads[i];
        for (int j = 0; j < g.numel(); ++j) g[j] = 0.0;
      }
      EpochStats bstats;
      for (std::size_t b = 0; b < take; ++b) {
        const std::size_t idx = order[cursor + b];
        const std::uint64_t att_seed = rng::key({cfg.seed, rng::hash_str("att"),
                                                 static_cast<std::uint64_t>(epoch), idx});
        ForwardLoss fl = run_post(data.train[idx], true, &grads, att_seed);
        if (!std::isfinite(fl.total)) {
          report.diverged = true;
          const double freq =
              clamp_total > 0 ? static_cast<double>(clamp_hits) / clamp_total : 0.0;
          throw DivergenceError(
              "training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
              "; intensity clamp frequency " + std::to_string(freq));
        }
        bstats.total += fl.total;
        bstats.mse += fl.mse;
        bstats.bce += fl.bce;
        bstats.aux += fl.aux;
        clamp_hits += fl.lambda_clamped;
        clamp_total += fl.lambda_total;
      }
      for (std::size_t i = 0; i < store.size(); ++i) {
        Tensor& g = grads[i];
        for (int j = 0; j < g.numel(); ++j) g[j] /= static_cast<double>(take);
      }
      adam_step(store, grads, adam, cfg);
      stats.total += bstats.total;
      stats.mse += bstats.mse;
      stats.bce += bstats.bce;
      stats.aux += bstats.aux;
      cursor += take;
      ++batches;
    }
    const double n_train = static_cast<double>(data.train.size());
    stats.total /= n_train;
    stats.mse /= n_train;
    stats.bce /= n_train;
    stats.aux /= n_train;
    report.train_epochs.push_back(stats);

    EpochStats vstats;
    for (std::size_t i = 0; i < val_batches.size(); ++i) {
      ForwardLoss fl = run_post(val_batches[i], false, nullptr,
                                rng::key({cfg.seed, rng::hash_str("att_val"), i}));
      vstats.total += fl.total;
      vstats.mse += fl.mse;
      vstats.bce += fl.bce;
      vstats.aux += fl.aux;
    }
    if (!val_batches.empty()) {
      const double nv = static_cast<double>(val_batches.size());
      vstats.total /= nv;
      vstats.mse /= nv;
      vstats.bce /= nv;
      vstats.aux /= nv;
    }
    report.val_epochs.push_back(vstats);

    const double vrmse = rollout_rmse(model, data.val_posts, *data.signal, data.window,
                                      data.norm);
    report.val_rmse.push_back(vrmse);
    report.stopped_epoch = epoch;

    if (vrmse < report.best_val_rmse) {
      report.best_val_rmse = vrmse;
      report.best_epoch = epoch;
      best_params.clear();
      for (std::size_t i = 0; i < store.size(); ++i) best_params.push_back(store.tensor(i));
    } else if (epoch - report.best_epoch >= cfg.patience) {
      break;
    }
  }

  if (!best_params.empty()) {
    for (std::size_t i = 0; i < store.size(); ++i) store.tensor(i) = best_params[i];
  }
  report.clamp_frequency =
      clamp_total > 0 ? static_cast<double>(clamp_hits) / static_cast<double>(clamp_total)
                      : 0.0;
  return report;
}

}  // namespace sigcast
