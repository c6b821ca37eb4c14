#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "sigcast/model.hpp"
#include "sigcast/parallel.hpp"
#include "sigcast/timeline.hpp"

namespace sigcast {

struct TrainConfig {
  double alpha = 0.5;     // weight of the intensity BCE in the joint loss
  double beta_aux = 0.1;  // weight of the backbone-specific auxiliary loss
  double lr = 1e-4;
  double weight_decay = 0.01;
  int batch = 16;
  int patience = 10;  // epochs without val RMSE improvement before stopping
  int max_epochs = 100;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int att_sample_budget = 512;  // pair-of-pairs samples per post
  double att_sigma_days = 1.0;

  void validate() const;
};

struct EpochStats {
  double total = 0.0, mse = 0.0, bce = 0.0, aux = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> train_epochs;
  std::vector<EpochStats> val_epochs;
  std::vector<double> val_rmse;  // de-normalized, over the prediction grid
  int best_epoch = -1;
  int stopped_epoch = -1;
  double best_val_rmse = std::numeric_limits<double>::infinity();
  double clamp_frequency = 0.0;  // fraction of intensity outputs hitting the clamp
  bool diverged = false;
};

class DivergenceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// MSE over valid rows plus alpha times the intensity BCE (Eq-style joint
// objective). All terms are means over the masked region.
struct JointLossParts {
  Var total, mse, bce;
};
JointLossParts joint_loss(Tape& tape, const HeadOutputs& out, const SequenceBatch& batch,
                          double alpha);

// Mean squared deviation of the recorded state sequence from its own
// per-step discrete transition; zero when nothing but the transition moves
// the state. ssm backbones only.
Var temporal_coherence(Tape& tape, const std::vector<ScanRecord>& scans);

// Monte-Carlo estimate of the attention-consistency penalty: sampled
// pair-of-pairs weighted by exp(-(dt_ij - dt_kl)^2 / sigma^2). transformer
// backbones only. Deterministic given the seed.
Var attention_consistency(Tape& tape, const HeadOutputs& out, int sample_budget,
                          double sigma_days, std::uint64_t seed);
// Exact full sum over all pair-of-pairs, for small sequences; the
// value-level oracle of the sampled estimator.
double attention_consistency_full(const Tape& tape, const HeadOutputs& out,
                                  double sigma_days);

struct TrainData {
  std::vector<SequenceBatch> train;
  std::vector<const Post*> val_posts;
  const SignalTimeline* signal = nullptr;
  ObservationWindow window;
  NormStats norm;
  double treat_threshold = 50.0;
};

TrainReport train(JointModel& model, const TrainData& data, const TrainConfig& cfg);

// Autoregressive forecast: consume the observed window, then step through
// the prediction grid feeding back de-normalized predictions (clamped
// non-decreasing) and the provided signal's lag features.
struct TrajectoryPoint {
  Timestamp t = 0;
  std::array<double, kEngagementDims> counts{};  // de-normalized cumulative
};
struct Trajectory {
  std::vector<TrajectoryPoint> points;  // one per prediction step
  std::vector<double> lambda;           // treatment probability per step
};

Trajectory rollout(const JointModel& model, const Post& post, const SignalTimeline& signal,
                   const ObservationWindow& win, const NormStats& norm);

// Rollout RMSE against observed trajectories, on de-normalized counts.
double rollout_rmse(const JointModel& model, const std::vector<const Post*>& posts,
                    const SignalTimeline& signal, const ObservationWindow& win,
                    const NormStats& norm);

}  // namespace sigcast
