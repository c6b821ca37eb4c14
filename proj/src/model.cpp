#include "sigcast/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

namespace sigcast {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kMaskNegInf = -1e30;

std::vector<double> xavier(std::size_t fan_in, std::size_t fan_out, std::size_t n,
                           std::mt19937_64& gen) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> v(n);
  for (double& x : v) x = dist(gen);
  return v;
}

}  // namespace

std::string to_string(Backbone b) {
  return b == Backbone::transformer ? "transformer" : "ssm";
}

std::string to_string(Integration i) {
  switch (i) {
    case Integration::none: return "none";
    case Integration::token: return "token";
    case Integration::attention: return "attention";
    case Integration::selection: return "selection";
    case Integration::layer: return "layer";
    case Integration::adapter: return "adapter";
  }
  return "none";
}

Backbone backbone_from_string(const std::string& s) {
  if (s == "transformer") return Backbone::transformer;
  if (s == "ssm" || s == "mamba") return Backbone::ssm;
  throw ConfigError("unknown backbone '" + s + "'");
}

Integration integration_from_string(const std::string& s) {
  if (s == "none") return Integration::none;
  if (s == "token") return Integration::token;
  if (s == "attention") return Integration::attention;
  if (s == "selection") return Integration::selection;
  if (s == "layer") return Integration::layer;
  if (s == "adapter") return Integration::adapter;
  throw ConfigError("unknown integration '" + s + "'");
}

void ModelConfig::validate() const {
  if (depth < 1 || embed_dim < 1 || hidden_dim < 1 || heads < 1 || state_dim < 1 ||
      lag_w < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("embed_dim must be divisible by the head count");
  }
  if (integration == Integration::attention && backbone != Backbone::transformer) {
    throw ConfigError("attention integration requires the transformer backbone");
  }
  if (integration == Integration::selection && backbone != Backbone::ssm) {
    throw ConfigError("selection integration requires the ssm backbone");
  }
}

std::string ModelConfig::name() const {
  if (integration == Integration::none) return to_string(backbone);
  return to_string(backbone) + "+" + to_string(integration);
}

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
  index_[name] = params_.size();
  params_.emplace_back(name, std::move(init));
  return params_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
  return params_[index_of(name)].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  return params_[index_of(name)].second;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

long long ParamStore::total_parameters() const {
  long long n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

Var JointModel::Bound::operator[](const std::string& name) const {
  return vars[store->index_of(name)];
}

JointModel::JointModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  build_params();
}

void JointModel::build_params() {
  std::mt19937_64 gen(cfg_.seed);
  const int d = cfg_.embed_dim;
  const int h = cfg_.hidden_dim;
  const int ns = cfg_.state_dim;
  const int w = cfg_.lag_w;
  const int r = cfg_.adapter_bottleneck();

  auto mat = [&](const std::string& name, int rows, int cols) {
    store_.add(name, Tensor({rows, cols},
                            xavier(static_cast<std::size_t>(rows),
                                   static_cast<std::size_t>(cols),
                                   static_cast<std::size_t>(rows) *
                                       static_cast<std::size_t>(cols),
                                   gen)));
  };
  auto vec0 = [&](const std::string& name, int n) { store_.add(name, Tensor({n})); };

  mat("embed.w_in", kBaseFeatures, d);
  vec0("embed.b_in", d);
  if (cfg_.signal_aware()) {
    mat("embed.w_sig", w, d);
    vec0("embed.b_sig", d);
  }

  const bool adapters = cfg_.integration == Integration::adapter;
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    if (cfg_.backbone == Backbone::transformer) {
      mat(p + "attn.wq", d, d);
      mat(p + "attn.wk", d, d);
      mat(p + "attn.wv", d, d);
      mat(p + "attn.wo", d, d);
      vec0(p + "attn.bo", d);
      mat(p + "ffn.w1", d, h);
      vec0(p + "ffn.b1", h);
      mat(p + "ffn.w2", h, d);
      vec0(p + "ffn.b2", d);
      if (cfg_.integration == Integration::layer) {
        mat(p + "sigmlp.w1", d, h);
        vec0(p + "sigmlp.b1", h);
        mat(p + "sigmlp.w2", h, d);
        vec0(p + "sigmlp.b2", d);
        mat(p + "cross.wq", d, d);
        mat(p + "cross.wk", d, d);
        mat(p + "cross.wv", d, d);
        mat(p + "cross.wo", d, d);
        vec0(p + "cross.bo", d);
      }
      if (adapters) {
        for (const char* a : {"adapter1.", "adapter2."}) {
          mat(p + a + "down", d, r);
          vec0(p + a + "bdown", r);
          mat(p + a + "up", r, d);
          vec0(p + a + "bup", d);
        }
      }
    } else {
      mat(p + "ssm.w_u", d, ns);
      vec0(p + "ssm.b_u", ns);
      const int gate_in = cfg_.integration == Integration::selection ? d + w : d;
      mat(p + "ssm.w_gate", gate_in, ns);
      vec0(p + "ssm.b_gate", ns);
      {
        // stable diagonal transition generator in (-1, -0.01)
        std::uniform_real_distribution<double> dist(-1.0, -0.01);
        Tensor a0({ns});
        for (int i = 0; i < ns; ++i) a0[i] = dist(gen);
        store_.add(p + "ssm.a0", std::move(a0));
      }
      if (cfg_.integration == Integration::selection ||
          cfg_.integration == Integration::adapter) {
        vec0(p + "ssm.da", ns);  // zero: signal leaves transitions untouched at init
        mat(p + "ssm.w_siga", w, ns);
      }
      mat(p + "ssm.w_c", ns, d);
      vec0(p + "ssm.b_c", d);
      mat(p + "ssm.w_skip", ns, d);
      if (cfg_.integration == Integration::layer) {
        mat(p + "sigmlp.w1", d, h);
        vec0(p + "sigmlp.b1", h);
        mat(p + "sigmlp.w2", h, d);
        vec0(p + "sigmlp.b2", d);
        mat(p + "sigmlp.proj", d, ns);
      }
      if (adapters) {
        mat(p + "adapter.down", d, r);
        vec0(p + "adapter.bdown", r);
        mat(p + "adapter.up", r, d);
        vec0(p + "adapter.bup", d);
      }
    }
  }

  mat("head.w_y", d, kEngagementDims);
  vec0("head.b_y", kEngagementDims);
  mat("head.w_l", d, 1);
  vec0("head.b_l", 1);
}

JointModel::Bound JointModel::bind(Tape& tape, bool trainable) const {
  Bound b;
  b.store = &store_;
  b.vars.reserve(store_.size());
  for (std::size_t i = 0; i < store_.size(); ++i) {
    b.vars.push_back(tape.leaf(store_.tensor(i), trainable));
  }
  return b;
}

Tensor attention_log_mask(const std::vector<double>& pos_days, double beta) {
  const int n = static_cast<int>(pos_days.size());
  Tensor m({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j > i) {
        m(i, j) = kMaskNegInf;
      } else if (beta != 0.0) {
        m(i, j) = -beta * std::abs(pos_days[static_cast<std::size_t>(i)] -
                                   pos_days[static_cast<std::size_t>(j)]);
      }
    }
  }
  return m;
}

namespace {

struct AttnResult {
  Var out;
  std::vector<Var> maps;
};

AttnResult multihead_attention(Tape& tape, Var x_norm, Var wq, Var wk, Var wv, Var wo,
                               Var bo, int heads, Var causal_mask, Var temporal_mask,
                               int temporal_from_head) {
  const int d = tape.val(x_norm).cols();
  const int dh = d / heads;
  Var q = tape.matmul(x_norm, wq);
  Var k = tape.matmul(x_norm, wk);
  Var v = tape.matmul(x_norm, wv);
  AttnResult res;
  Var ctx;
  for (int hidx = 0; hidx < heads; ++hidx) {
    Var qh = tape.slice_cols(q, hidx * dh, dh);
    Var kh = tape.slice_cols(k, hidx * dh, dh);
    Var vh = tape.slice_cols(v, hidx * dh, dh);
    Var logits = tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(dh));
    const bool temporal = temporal_mask.valid() && hidx >= temporal_from_head;
    logits = tape.add(logits, temporal ? temporal_mask : causal_mask);
    Var attn = tape.softmax_rows(logits);
    res.maps.push_back(attn);
    Var ctx_h = tape.matmul(attn, vh);
    ctx = hidx == 0 ? ctx_h : tape.concat(ctx, ctx_h, 1);
  }
  res.out = tape.add_rowvec(tape.matmul(ctx, wo), bo);
  return res;
}

Var bottleneck_adapter(Tape& tape, Var x, Var sig, const JointModel::Bound& pv,
                       const std::string& prefix) {
  // h_out = h_in + W_up . gelu(W_down . (h_in + e_g) + b_down) + b_up
  Var ain = sig.valid() ? tape.add(x, sig) : x;
  Var mid = tape.gelu(tape.add_rowvec(tape.matmul(ain, pv[prefix + "down"]),
                                      pv[prefix + "bdown"]));
  Var up = tape.add_rowvec(tape.matmul(mid, pv[prefix + "up"]), pv[prefix + "bup"]);
  return tape.add(x, up);
}

}  // namespace

HeadOutputs JointModel::forward(Tape& tape, const Bound& pv,
                                const SequenceBatch& batch) const {
  const int s_rows = batch.inputs.rows();
  if (s_rows == 0) throw ShapeError("forward: empty batch");
  if (batch.inputs.cols() != kBaseFeatures) {
    throw ShapeError("forward: expected " + std::to_string(kBaseFeatures) +
                     " base features, got " + batch.inputs.shape_str());
  }

  Var base_in = tape.constant(batch.inputs);
  Var base = tape.add_rowvec(tape.matmul(base_in, pv["embed.w_in"]), pv["embed.b_in"]);

  Var sig_embed;  // S x d signal token embeddings
  if (cfg_.signal_aware()) {
    Var lag_in = tape.constant(batch.lag);
    sig_embed = tape.add_rowvec(tape.matmul(lag_in, pv["embed.w_sig"]), pv["embed.b_sig"]);
  }

  Var tokens;
  std::vector<double> pos_days, pos_gaps;
  if (cfg_.integration == Integration::token) {
    // interleave engagement and signal tokens; outputs are read at the
    // signal-token positions so step i sees both tokens of step i
    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(2 * s_rows));
    for (int i = 0; i < s_rows; ++i) {
      rows.push_back(tape.row(base, i));
      rows.push_back(tape.row(sig_embed, i));
      pos_days.push_back(batch.time_days[static_cast<std::size_t>(i)]);
      pos_days.push_back(batch.time_days[static_cast<std::size_t>(i)]);
      pos_gaps.push_back(batch.gap_days[static_cast<std::size_t>(i)]);
      pos_gaps.push_back(0.0);
    }
    tokens = tape.stack_rows(rows);
  } else if (cfg_.integration == Integration::attention) {
    tokens = tape.add(base, sig_embed);
    pos_days = batch.time_days;
    pos_gaps = batch.gap_days;
  } else {
    tokens = base;
    pos_days = batch.time_days;
    pos_gaps = batch.gap_days;
  }

  HeadOutputs out = cfg_.backbone == Backbone::transformer
                        ? forward_transformer(tape, pv, batch, tokens, sig_embed, pos_days,
                                              pos_gaps)
                        : forward_ssm(tape, pv, batch, tokens, sig_embed, pos_days,
                                      pos_gaps);
  out.seq_rows = s_rows;
  out.attn_time_days = pos_days;
  return out;
}

HeadOutputs JointModel::forward_transformer(Tape& tape, const Bound& pv,
                                            const SequenceBatch& batch, Var tokens,
                                            Var sig_embed,
                                            const std::vector<double>& pos_days,
                                            const std::vector<double>& /*pos_gaps*/) const {
  HeadOutputs out;
  Var causal = tape.constant(attention_log_mask(pos_days, 0.0));
  Var temporal;
  if (cfg_.integration == Integration::attention) {
    temporal = tape.constant(attention_log_mask(pos_days, cfg_.beta_mask));
  }

  Var sig_stream = sig_embed;  // evolves through per-layer MLPs in layer mode
  Var x = tokens;
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Var xn = tape.layernorm_rows(x);
    AttnResult attn = multihead_attention(tape, xn, pv[p + "attn.wq"], pv[p + "attn.wk"],
                                          pv[p + "attn.wv"], pv[p + "attn.wo"],
                                          pv[p + "attn.bo"], cfg_.heads, causal, temporal,
                                          cfg_.heads / 2);
    for (Var m : attn.maps) out.attention.push_back(m);
    x = tape.add(x, attn.out);
    if (cfg_.integration == Integration::adapter) {
      x = bottleneck_adapter(tape, x, sig_embed, pv, p + "adapter1.");
    }
    if (cfg_.integration == Integration::layer) {
      // signal stream through this layer's MLP, merged by cross-attention
      Var mid = tape.gelu(tape.add_rowvec(tape.matmul(sig_stream, pv[p + "sigmlp.w1"]),
                                          pv[p + "sigmlp.b1"]));
      sig_stream = tape.add_rowvec(tape.matmul(mid, pv[p + "sigmlp.w2"]),
                                   pv[p + "sigmlp.b2"]);
      Var q = tape.matmul(tape.layernorm_rows(x), pv[p + "cross.wq"]);
      Var k = tape.matmul(sig_stream, pv[p + "cross.wk"]);
      Var v = tape.matmul(sig_stream, pv[p + "cross.wv"]);
      Var logits = tape.scale(tape.matmul(q, tape.transpose(k)),
                              1.0 / std::sqrt(cfg_.embed_dim));
      Var attn_x = tape.softmax_rows(tape.add(logits, causal));
      out.attention.push_back(attn_x);
      Var merged = tape.add_rowvec(tape.matmul(tape.matmul(attn_x, v), pv[p + "cross.wo"]),
                                   pv[p + "cross.bo"]);
      x = tape.add(x, merged);
    }
    Var x2 = tape.layernorm_rows(x);
    Var ffn = tape.add_rowvec(
        tape.matmul(tape.gelu(tape.add_rowvec(tape.matmul(x2, pv[p + "ffn.w1"]),
                                              pv[p + "ffn.b1"])),
                    pv[p + "ffn.w2"]),
        pv[p + "ffn.b2"]);
    x = tape.add(x, ffn);
    if (cfg_.integration == Integration::adapter) {
      x = bottleneck_adapter(tape, x, sig_embed, pv, p + "adapter2.");
    }
  }

  Var hidden = tape.layernorm_rows(x);
  Var rows_out = hidden;
  if (cfg_.integration == Integration::token) {
    std::vector<Var> sel;
    for (int i = 0; i < batch.inputs.rows(); ++i) sel.push_back(tape.row(hidden, 2 * i + 1));
    rows_out = tape.stack_rows(sel);
  }
  out.y = tape.add_rowvec(tape.matmul(rows_out, pv["head.w_y"]), pv["head.b_y"]);
  out.lambda = tape.square_clamp01(
      tape.add_rowvec(tape.matmul(rows_out, pv["head.w_l"]), pv["head.b_l"]));
  return out;
}

HeadOutputs JointModel::forward_ssm(Tape& tape, const Bound& pv, const SequenceBatch& batch,
                                    Var tokens, Var sig_embed,
                                    const std::vector<double>& /*pos_days*/,
                                    const std::vector<double>& pos_gaps) const {
  HeadOutputs out;
  const int rows = tape.val(tokens).rows();
  const int ns = cfg_.state_dim;

  // per-position gaps as a (rows x ns) constant so transitions and drives
  // can be formed with plain elementwise ops
  Tensor gap_mat({rows, ns});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < ns; ++j) gap_mat(i, j) = pos_gaps[static_cast<std::size_t>(i)];
  Var gaps = tape.constant(gap_mat);

  // lag features aligned to token positions (duplicated in token mode)
  Var lag_pos;
  const bool conditions_transitions = cfg_.integration == Integration::selection ||
                                      cfg_.integration == Integration::adapter;
  if (conditions_transitions || cfg_.integration == Integration::selection) {
    lag_pos = tape.constant(batch.lag);
  }

  Var sig_stream = sig_embed;
  Var x = tokens;
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Var xn = tape.layernorm_rows(x);
    Var u = tape.add_rowvec(tape.matmul(xn, pv[p + "ssm.w_u"]), pv[p + "ssm.b_u"]);
    if (cfg_.integration == Integration::layer) {
      Var mid = tape.gelu(tape.add_rowvec(tape.matmul(sig_stream, pv[p + "sigmlp.w1"]),
                                          pv[p + "sigmlp.b1"]));
      sig_stream = tape.add_rowvec(tape.matmul(mid, pv[p + "sigmlp.w2"]),
                                   pv[p + "sigmlp.b2"]);
      u = tape.add(u, tape.matmul(sig_stream, pv[p + "sigmlp.proj"]));
    }

    Var gate_in = xn;
    if (cfg_.integration == Integration::selection) {
      gate_in = tape.concat(xn, lag_pos, 1);
    }
    Var gate = tape.sigmoid(
        tape.add_rowvec(tape.matmul(gate_in, pv[p + "ssm.w_gate"]), pv[p + "ssm.b_gate"]));

    // transition generator rows: A0, optionally shifted by the signal path
    Var a_rows = tape.add_rowvec(tape.constant(Tensor({rows, ns})), pv[p + "ssm.a0"]);
    if (conditions_transitions) {
      Var act = tape.sigmoid(tape.matmul(lag_pos, pv[p + "ssm.w_siga"]));
      a_rows = tape.add(a_rows, tape.mul_rowvec(act, pv[p + "ssm.da"]));
    }
    Var trans = tape.exp(tape.mul(a_rows, gaps));  // zero-order hold per gap
    Var drive = tape.mul(tape.mul(gate, u), gaps);

    std::vector<Var> states;
    states.reserve(static_cast<std::size_t>(rows) + 1);
    states.push_back(tape.constant(Tensor({ns})));  // h_0 = 0
    for (int j = 0; j < rows; ++j) {
      states.push_back(
          tape.add(tape.mul(tape.row(trans, j), states.back()), tape.row(drive, j)));
    }
    Var h_mat = tape.stack_rows(states);
    out.scans.push_back(ScanRecord{h_mat, trans, drive});

    Var y = tape.add_rowvec(tape.matmul(tape.slice_rows(h_mat, 1, rows), pv[p + "ssm.w_c"]),
                            pv[p + "ssm.b_c"]);
    y = tape.add(y, tape.matmul(u, pv[p + "ssm.w_skip"]));
    x = tape.add(x, y);
    if (cfg_.integration == Integration::adapter) {
      x = bottleneck_adapter(tape, x, sig_embed, pv, p + "adapter.");
    }
  }

  Var hidden = tape.layernorm_rows(x);
  Var rows_out = hidden;
  if (cfg_.integration == Integration::token) {
    std::vector<Var> sel;
    for (int i = 0; i < batch.inputs.rows(); ++i) sel.push_back(tape.row(hidden, 2 * i + 1));
    rows_out = tape.stack_rows(sel);
  }
  out.y = tape.add_rowvec(tape.matmul(rows_out, pv["head.w_y"]), pv["head.b_y"]);
  out.lambda = tape.square_clamp01(
      tape.add_rowvec(tape.matmul(rows_out, pv["head.w_l"]), pv["head.b_l"]));
  return out;
}

// --- batch assembly -----------------------------------------------------------

SequenceBatch make_sequence_batch(const Post& post, const SignalTimeline& signal,
                                  const ObservationWindow& win, const NormStats& norm,
                                  const LagSpec& lag, double treat_threshold) {
  win.validate();
  if (win.tau_obs % win.dt != 0) {
    throw ConfigError("tau_obs must be a whole number of prediction steps");
  }
  const int n_obs = static_cast<int>(win.tau_obs / win.dt);
  const int k_pred = win.steps();
  const int s_rows = n_obs + k_pred;
  if (s_rows == 0) throw ConfigError("empty model grid");

  SequenceBatch b;
  b.inputs = Tensor({s_rows, kBaseFeatures});
  b.lag = Tensor({s_rows, lag.w});
  b.targets_y = Tensor({s_rows, kEngagementDims});
  b.targets_a = Tensor({s_rows, 1});
  b.time_days.resize(static_cast<std::size_t>(s_rows));
  b.gap_days.resize(static_cast<std::size_t>(s_rows));
  b.obs_rows = n_obs;

  const Timestamp last_obs = post.history.empty() ? post.t0 : post.history.obs.back().t;
  const double dt_days = static_cast<double>(win.dt) / kDay;

  auto norm_cum = [&](Timestamp t) {
    return normalize_engagement(post.history.counts_at(t), norm);
  };

  auto prev_cum = post.history.counts_at(post.t0);
  int valid = 0;
  for (int i = 0; i < s_rows; ++i) {
    const Timestamp t_i = post.t0 + static_cast<Duration>(i) * win.dt;
    const Timestamp t_next = t_i + win.dt;
    const auto cum_i = post.history.counts_at(t_i);

    // normalized increment over (t_{i-1}, t_i]
    for (int d = 0; d < kEngagementDims; ++d) {
      const auto inc = cum_i.counts[static_cast<std::size_t>(d)] -
                       prev_cum.counts[static_cast<std::size_t>(d)];
      b.inputs(i, d) = std::log1p(static_cast<double>(std::max<std::int64_t>(inc, 0))) /
                       norm.scale[static_cast<std::size_t>(d)];
    }
    prev_cum = cum_i;

    const double tau = static_cast<double>(t_i - post.t0) / kDay;
    b.inputs(i, 4) = std::sin(2.0 * std::numbers::pi * tau);
    b.inputs(i, 5) = std::cos(2.0 * std::numbers::pi * tau);
    b.inputs(i, 6) = std::sin(2.0 * std::numbers::pi * tau / 7.0);
    b.inputs(i, 7) = std::cos(2.0 * std::numbers::pi * tau / 7.0);
    b.inputs(i, 8) = std::log1p(dt_days);
    b.time_days[static_cast<std::size_t>(i)] = tau;
    b.gap_days[static_cast<std::size_t>(i)] = dt_days;

    // lag features anchored at the end of the predicted interval: strictly
    // past signal relative to t_next
    const LagFeature f = lag_features(signal, t_next, lag);
    for (int k = 0; k < lag.w; ++k) b.lag(i, k) = f.values[static_cast<std::size_t>(k)];

    const auto y_next = norm_cum(t_next);
    for (int d = 0; d < kEngagementDims; ++d)
      b.targets_y(i, d) = y_next[static_cast<std::size_t>(d)];
    b.targets_a(i, 0) = signal.value_at(t_next, 0.0) >= treat_threshold ? 1.0 : 0.0;
    if (t_next <= last_obs) valid = i + 1;
  }
  b.valid_rows = valid;
  return b;
}

NormStats fit_norm_stats(const std::vector<Post>& train_posts,
                         const ObservationWindow& win) {
  NormStats stats;
  std::array<double, kEngagementDims> max_log{};
  const int n_obs = static_cast<int>(win.tau_obs / win.dt);
  const int s_rows = n_obs + win.steps();
  for (const Post& p : train_posts) {
    for (int i = 0; i <= s_rows; ++i) {
      const Timestamp t = p.t0 + static_cast<Duration>(i) * win.dt;
      const auto cum = p.history.counts_at(t);
      for (int d = 0; d < kEngagementDims; ++d) {
        max_log[static_cast<std::size_t>(d)] =
            std::max(max_log[static_cast<std::size_t>(d)],
                     std::log1p(static_cast<double>(cum.counts[static_cast<std::size_t>(d)])));
      }
    }
  }
  for (int d = 0; d < kEngagementDims; ++d) {
    stats.scale[static_cast<std::size_t>(d)] =
        max_log[static_cast<std::size_t>(d)] > 0.0 ? max_log[static_cast<std::size_t>(d)]
                                                   : 1.0;
  }
  return stats;
}

// --- checkpoints ---------------------------------------------------------------

void JointModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());

  ordered_json header;
  header["format"] = "sigcast-checkpoint";
  header["version"] = 1;
  header["config"] = {
      {"backbone", to_string(cfg_.backbone)},
      {"integration", to_string(cfg_.integration)},
      {"depth", cfg_.depth},
      {"embed_dim", cfg_.embed_dim},
      {"hidden_dim", cfg_.hidden_dim},
      {"heads", cfg_.heads},
      {"state_dim", cfg_.state_dim},
      {"lag_w", cfg_.lag_w},
      {"lag_tau", cfg_.lag_tau},
      {"lag_mode", cfg_.lag_mode == LagMode::strided ? "strided" : "recent"},
      {"beta_mask", cfg_.beta_mask},
      {"seed", cfg_.seed},
  };
  json params = json::array();
  for (std::size_t i = 0; i < store_.size(); ++i) {
    params.push_back({{"name", store_.name(i)}, {"shape", store_.tensor(i).shape()}});
  }
  header["params"] = std::move(params);

  const std::string hdr = header.dump();
  const std::uint64_t magic = 0x31304b4353474953ULL;  // "SIGSCK01"
  const std::uint32_t hlen = static_cast<std::uint32_t>(hdr.size());
  out.write(reinterpret_cast<const char*>(&magic), sizeof(magic));
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (std::size_t i = 0; i < store_.size(); ++i) {
    const Tensor& t = store_.tensor(i);
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(sizeof(double) * t.data().size()));
  }
}

JointModel JointModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("missing checkpoint " + path.string());
  std::uint64_t magic = 0;
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || magic != 0x31304b4353474953ULL) {
    throw ConfigError("not a checkpoint file: " + path.string());
  }
  std::string hdr(hlen, '\0');
  in.read(hdr.data(), hlen);
  json header = json::parse(hdr);
  if (header.at("version").get<int>() != 1) {
    throw ConfigError("unsupported checkpoint version");
  }
  const json& c = header.at("config");
  ModelConfig cfg;
  cfg.backbone = backbone_from_string(c.at("backbone").get<std::string>());
  cfg.integration = integration_from_string(c.at("integration").get<std::string>());
  cfg.depth = c.at("depth").get<int>();
  cfg.embed_dim = c.at("embed_dim").get<int>();
  cfg.hidden_dim = c.at("hidden_dim").get<int>();
  cfg.heads = c.at("heads").get<int>();
  cfg.state_dim = c.at("state_dim").get<int>();
  cfg.lag_w = c.at("lag_w").get<int>();
  cfg.lag_tau = c.at("lag_tau").get<Duration>();
  cfg.lag_mode =
      c.at("lag_mode").get<std::string>() == "strided" ? LagMode::strided : LagMode::recent;
  cfg.beta_mask = c.at("beta_mask").get<double>();
  cfg.seed = c.at("seed").get<std::uint64_t>();

  JointModel model(cfg);
  for (const auto& pj : header.at("params")) {
    const std::string name = pj.at("name").get<std::string>();
    const std::vector<int> shape = pj.at("shape").get<std::vector<int>>();
    Tensor& t = model.store_.at(name);
    if (t.shape() != shape) {
      throw ConfigError("checkpoint shape mismatch for " + name);
    }
    in.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(sizeof(double) * t.data().size()));
  }
  if (!in) throw ConfigError("truncated checkpoint " + path.string());
  return model;
}

}  // namespace sigcast
