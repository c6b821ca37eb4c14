#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "sigcast/tape.hpp"
#include "sigcast/timeline.hpp"

namespace sigcast {

enum class Backbone { transformer, ssm };

// How external-signal features enter the backbone:
//   none      - vanilla baseline, fully signal-blind
//   token     - signal tokens interleaved with engagement tokens
//   attention - temporally-masked attention heads (transformer only)
//   selection - scan gates conditioned on signal features (ssm only)
//   layer     - per-layer signal MLP merged through cross-attention / scan input
//   adapter   - bottleneck adapters fed signal-shifted activations
enum class Integration { none, token, attention, selection, layer, adapter };

std::string to_string(Backbone b);
std::string to_string(Integration i);
Backbone backbone_from_string(const std::string& s);
Integration integration_from_string(const std::string& s);

struct ModelConfig {
  Backbone backbone = Backbone::ssm;
  Integration integration = Integration::adapter;
  int depth = 2;
  int embed_dim = 32;
  int hidden_dim = 64;
  int heads = 4;      // transformer
  int state_dim = 16; // ssm
  int lag_w = 6;      // signal lag feature width
  Duration lag_tau = 24 * kHour;
  LagMode lag_mode = LagMode::strided;
  double beta_mask = 0.1;  // temporal attention decay, per day
  std::uint64_t seed = 1;

  int adapter_bottleneck() const { return std::max(1, embed_dim / 8); }
  bool signal_aware() const { return integration != Integration::none; }
  LagSpec lag_spec() const { return LagSpec{lag_tau, lag_w, lag_mode, true}; }
  void validate() const;
  std::string name() const;
};

// Named parameter tensors in fixed insertion order; the order defines the
// optimizer state layout and the checkpoint layout.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }
  const std::string& name(std::size_t i) const { return params_[i].first; }
  Tensor& tensor(std::size_t i) { return params_[i].second; }
  const Tensor& tensor(std::size_t i) const { return params_[i].second; }
  std::size_t index_of(const std::string& name) const;
  long long total_parameters() const;

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One post, aligned on the model step grid t_i = t0 + i*dt.
// Row i carries the engagement increment over (t_{i-1}, t_i], time encodings
// of t_i, and lag features anchored at t_{i+1} (the end of the interval the
// row's outputs predict, strictly past signal only). Targets are the
// normalized cumulative engagement and treatment indicator at t_{i+1}.
struct SequenceBatch {
  Tensor inputs;     // S x 9: 4 normalized increments + 5 time encodings
  Tensor lag;        // S x w
  Tensor targets_y;  // S x 4
  Tensor targets_a;  // S x 1
  std::vector<double> time_days;  // t_i - t0 in days
  std::vector<double> gap_days;   // t_i - t_{i-1} in days (leading gap = dt)
  int valid_rows = 0;             // prefix of rows with observed targets
  int obs_rows = 0;               // rows inside the observation window
};

constexpr int kBaseFeatures = 9;

struct ScanRecord {
  Var states;       // (S+1) x n_s, h_0 first
  Var transitions;  // S x n_s, the diagonal discrete transition per step
  Var drive;        // S x n_s, the per-step input contribution
};

struct HeadOutputs {
  Var y;       // S x 4 predicted normalized cumulative engagement at t_{i+1}
  Var lambda;  // S x 1 treatment probability for step t_{i+1}
  std::vector<Var> attention;            // softmax maps, per layer and head
  std::vector<double> attn_time_days;    // time of each attention position
  std::vector<ScanRecord> scans;         // per layer (ssm backbone)
  int seq_rows = 0;
};

class JointModel {
 public:
  explicit JointModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  struct Bound {
    std::vector<Var> vars;  // aligned with ParamStore order
    const ParamStore* store = nullptr;
    Var operator[](const std::string& name) const;
  };
  Bound bind(Tape& tape, bool trainable = true) const;
  HeadOutputs forward(Tape& tape, const Bound& pv, const SequenceBatch& batch) const;

  void save(const std::filesystem::path& path) const;
  static JointModel load(const std::filesystem::path& path);

 private:
  void build_params();
  HeadOutputs forward_transformer(Tape& tape, const Bound& pv, const SequenceBatch& batch,
                                  Var tokens, Var sig_embed,
                                  const std::vector<double>& pos_days,
                                  const std::vector<double>& pos_gaps) const;
  HeadOutputs forward_ssm(Tape& tape, const Bound& pv, const SequenceBatch& batch,
                          Var tokens, Var sig_embed, const std::vector<double>& pos_days,
                          const std::vector<double>& pos_gaps) const;

  ModelConfig cfg_;
  ParamStore store_;
};

// Batch assembly from raw post data.
SequenceBatch make_sequence_batch(const Post& post, const SignalTimeline& signal,
                                  const ObservationWindow& win, const NormStats& norm,
                                  const LagSpec& lag, double treat_threshold);

// Normalization scales from a training split (log1p max-scaling over the
// model grid).
NormStats fit_norm_stats(const std::vector<Post>& train_posts, const ObservationWindow& win);

// Additive attention mask: -inf above the diagonal, and -beta*|dt_days|
// below it. Adding the decay on the log scale multiplies the softmax
// numerator by exp(-beta*|dt|); beta = 0 reduces to the plain causal mask.
Tensor attention_log_mask(const std::vector<double>& pos_days, double beta);

}  // namespace sigcast
