#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "sigcast/counterfactual.hpp"
#include "sigcast/rng.hpp"
#include "sigcast/training.hpp"

using namespace sigcast;

namespace {

struct Fixture {
  Dataset ds;
  NormStats norm;
  TrainData data;
  ModelConfig model_cfg;

  explicit Fixture(int n_posts, std::uint64_t seed, Backbone backbone,
                   Integration integration) {
    ds = make_dataset(testfix::toy_config(n_posts, seed));
    std::vector<Post> train_posts;
    for (std::size_t i : ds.train_idx) train_posts.push_back(ds.posts[i]);
    norm = fit_norm_stats(train_posts, ds.window);

    model_cfg.backbone = backbone;
    model_cfg.integration = integration;
    model_cfg.depth = 2;
    model_cfg.embed_dim = 16;
    model_cfg.hidden_dim = 32;
    model_cfg.heads = 2;
    model_cfg.state_dim = 8;
    model_cfg.seed = 7;

    data.signal = &ds.signal;
    data.window = ds.window;
    data.norm = norm;
    data.treat_threshold = ds.treat_threshold;
    for (std::size_t i : ds.train_idx) {
      data.train.push_back(make_sequence_batch(ds.posts[i], ds.signal, ds.window, norm,
                                               model_cfg.lag_spec(), ds.treat_threshold));
    }
    for (std::size_t i : ds.val_idx) data.val_posts.push_back(&ds.posts[i]);
  }
};

HeadOutputs crafted_outputs(Tape& tape, const Tensor& y, const Tensor& lambda) {
  HeadOutputs out;
  out.y = tape.leaf(y, false);
  out.lambda = tape.leaf(lambda, false);
  out.seq_rows = y.rows();
  return out;
}

}  // namespace

TEST_CASE("joint loss") {
  SequenceBatch batch;
  const int rows = 4;
  batch.targets_y = Tensor({rows, kEngagementDims});
  batch.targets_a = Tensor({rows, 1});
  batch.valid_rows = rows;

  SUBCASE("alpha 0 equals the standalone MSE") {
    Tape tape;
    Tensor y({rows, kEngagementDims});
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int i = 0; i < y.numel(); ++i) y[i] = dist(gen);
    for (int i = 0; i < batch.targets_y.numel(); ++i) batch.targets_y[i] = dist(gen);
    const auto out = crafted_outputs(tape, y, Tensor::full({rows, 1}, 0.5));
    const auto parts = joint_loss(tape, out, batch, 0.0);
    double mse = 0.0;
    for (int i = 0; i < y.numel(); ++i) {
      mse += (y[i] - batch.targets_y[i]) * (y[i] - batch.targets_y[i]);
    }
    mse /= y.numel();
    CHECK(std::abs(tape.val(parts.total)[0] - mse) < 1e-12);
  }
  SUBCASE("perfect predictions cost almost nothing") {
    Tape tape;
    for (int i = 0; i < rows; ++i) batch.targets_a(i, 0) = i % 2 ? 1.0 : 0.0;
    Tensor lam({rows, 1});
    for (int i = 0; i < rows; ++i) lam(i, 0) = batch.targets_a(i, 0);
    const auto out = crafted_outputs(tape, batch.targets_y, lam);
    const auto parts = joint_loss(tape, out, batch, 0.5);
    CHECK(tape.val(parts.total)[0] < 1e-6);
  }
  SUBCASE("hand-computed combination") {
    Tape tape;
    Tensor y({rows, kEngagementDims});
    for (int i = 0; i < y.numel(); ++i) y[i] = 0.2;  // squared error 0.04 each
    const auto out = crafted_outputs(tape, y, Tensor::full({rows, 1}, 0.5));
    const auto parts = joint_loss(tape, out, batch, 0.5);
    CHECK(tape.val(parts.mse)[0] == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(tape.val(parts.bce)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(tape.val(parts.total)[0] == doctest::Approx(0.38657).epsilon(1e-4));
  }
}

TEST_CASE("temporal coherence loss") {
  SUBCASE("zero input drive gives zero loss") {
    Fixture fx(12, 31, Backbone::ssm, Integration::none);
    JointModel model(fx.model_cfg);
    for (int l = 0; l < fx.model_cfg.depth; ++l) {
      for (const std::string suffix : {".ssm.w_u", ".ssm.b_u"}) {
        Tensor& t = model.params().at("layer" + std::to_string(l) + suffix);
        for (int i = 0; i < t.numel(); ++i) t[i] = 0.0;
      }
    }
    Tape tape;
    const auto out = model.forward(tape, model.bind(tape, false), fx.data.train[0]);
    const Var loss = temporal_coherence(tape, out.scans);
    CHECK(tape.val(loss)[0] < 1e-10);
  }
  SUBCASE("identity transition with a constant state costs nothing") {
    Tape tape;
    ScanRecord scan;
    scan.states = tape.leaf(Tensor::full({5, 3}, 0.7), false);
    scan.transitions = tape.leaf(Tensor::full({4, 3}, 1.0), false);
    scan.drive = tape.leaf(Tensor({4, 3}), false);
    const Var loss = temporal_coherence(tape, {scan});
    CHECK(tape.val(loss)[0] == 0.0);
  }
  SUBCASE("random case matches a reference loop") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor states({5, 3}), trans({4, 3});
    for (int i = 0; i < states.numel(); ++i) states[i] = dist(gen);
    for (int i = 0; i < trans.numel(); ++i) trans[i] = dist(gen);
    Tape tape;
    ScanRecord scan{tape.leaf(states, false), tape.leaf(trans, false),
                    tape.leaf(Tensor({4, 3}), false)};
    const Var loss = temporal_coherence(tape, {scan});
    double expect = 0.0;
    for (int j = 0; j < 4; ++j) {
      for (int c = 0; c < 3; ++c) {
        const double diff = states(j + 1, c) - trans(j, c) * states(j, c);
        expect += diff * diff;
      }
    }
    expect /= 4.0;
    CHECK(std::abs(tape.val(loss)[0] - expect) < 1e-12);
  }
  SUBCASE("transformer backbones are rejected") {
    Tape tape;
    CHECK_THROWS_AS((void)temporal_coherence(tape, {}), ContractError);
  }
}

TEST_CASE("attention consistency loss") {
  SUBCASE("uniform attention costs nothing") {
    Tape tape;
    HeadOutputs out;
    Tensor uniform({4, 4});
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j <= i; ++j) uniform(i, j) = 1.0 / (i + 1);
    // rows are uniform over the causal prefix; identical gaps then compare
    // identical values. Use a fully uniform square to make every entry equal.
    Tensor flat = Tensor::full({4, 4}, 0.25);
    out.attention = {tape.leaf(flat, false)};
    out.attn_time_days = {0.0, 1.0, 2.0, 3.0};
    const Var loss = attention_consistency(tape, out, 256, 1.0, 9);
    CHECK(tape.val(loss)[0] == 0.0);
    CHECK(attention_consistency_full(tape, out, 1.0) == 0.0);
  }
  SUBCASE("vanishing sigma keeps only equal-gap pairs") {
    Tape tape;
    HeadOutputs out;
    Tensor a({2, 2});
    a(0, 0) = 0.3;
    a(1, 0) = 0.5;
    a(1, 1) = 0.7;
    out.attention = {tape.leaf(a, false)};
    out.attn_time_days = {0.0, 1.0};
    // equal-gap pairs: (0,0) vs (1,1) in both orders, each w=1 and diff^2=0.16;
    // 9 ordered pair-of-pairs in total
    const double full = attention_consistency_full(tape, out, 1e-6);
    CHECK(full == doctest::Approx(2.0 * 0.16 / 9.0).epsilon(1e-9));
  }
  SUBCASE("sampled estimator is unbiased for the full sum") {
    Fixture fx(8, 33, Backbone::transformer, Integration::attention);
    JointModel model(fx.model_cfg);
    Tape tape;
    const auto out = model.forward(tape, model.bind(tape, false), fx.data.train[0]);
    const double oracle = attention_consistency_full(tape, out, 1.0);
    const int draws = 200;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < draws; ++i) {
      const Var est = attention_consistency(tape, out, 128, 1.0,
                                            rng::key({77, static_cast<std::uint64_t>(i)}));
      const double v = tape.val(est)[0];
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum_sq / draws - mean * mean) / draws);
    CHECK(std::abs(mean - oracle) <= 3.0 * se + 1e-12);
  }
  SUBCASE("ssm backbones are rejected") {
    Tape tape;
    HeadOutputs out;
    CHECK_THROWS_AS((void)attention_consistency(tape, out, 16, 1.0, 1), ContractError);
  }
}

TEST_CASE("training mechanics") {
  SUBCASE("zero learning rate leaves parameters untouched and losses flat") {
    Fixture fx(12, 35, Backbone::ssm, Integration::adapter);
    JointModel model(fx.model_cfg);
    std::vector<Tensor> before;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      before.push_back(model.params().tensor(i));
    }
    TrainConfig tc;
    tc.lr = 0.0;
    tc.weight_decay = 0.0;
    tc.max_epochs = 3;
    tc.batch = 8;
    const TrainReport rep = train(model, fx.data, tc);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      for (int j = 0; j < before[i].numel(); ++j) {
        CHECK(model.params().tensor(i)[j] == before[i][j]);
      }
    }
    for (std::size_t e = 1; e < rep.train_epochs.size(); ++e) {
      CHECK(rep.train_epochs[e].total ==
            doctest::Approx(rep.train_epochs[0].total).epsilon(1e-12));
    }
  }
  SUBCASE("early stopping fires exactly at best_epoch + patience") {
    Fixture fx(12, 37, Backbone::ssm, Integration::none);
    JointModel model(fx.model_cfg);
    TrainConfig tc;
    tc.lr = 0.0;  // val RMSE can never improve after the first epoch
    tc.patience = 4;
    tc.max_epochs = 50;
    const TrainReport rep = train(model, fx.data, tc);
    CHECK(rep.best_epoch == 0);
    CHECK(rep.stopped_epoch == 4);
  }
  SUBCASE("same seed twice gives bit-identical reports") {
    for (Backbone bb : {Backbone::ssm, Backbone::transformer}) {
      Fixture fx(10, 39, bb,
                 bb == Backbone::ssm ? Integration::adapter : Integration::attention);
      TrainConfig tc;
      tc.lr = 2e-3;
      tc.max_epochs = 3;
      tc.seed = 99;
      JointModel m1(fx.model_cfg);
      JointModel m2(fx.model_cfg);
      const TrainReport r1 = train(m1, fx.data, tc);
      const TrainReport r2 = train(m2, fx.data, tc);
      REQUIRE(r1.train_epochs.size() == r2.train_epochs.size());
      for (std::size_t e = 0; e < r1.train_epochs.size(); ++e) {
        CHECK(r1.train_epochs[e].total == r2.train_epochs[e].total);
        CHECK(r1.val_rmse[e] == r2.val_rmse[e]);
      }
      for (std::size_t i = 0; i < m1.params().size(); ++i) {
        for (int j = 0; j < m1.params().tensor(i).numel(); ++j) {
          CHECK(m1.params().tensor(i)[j] == m2.params().tensor(i)[j]);
        }
      }
    }
  }
  SUBCASE("loss drops by at least 30 percent on a small dataset") {
    Fixture fx(50, 41, Backbone::ssm, Integration::adapter);
    JointModel model(fx.model_cfg);
    TrainConfig tc;
    tc.lr = 3e-3;
    tc.max_epochs = 30;
    tc.patience = 30;
    const TrainReport rep = train(model, fx.data, tc);
    REQUIRE(!rep.train_epochs.empty());
    CHECK(rep.train_epochs.back().total < 0.7 * rep.train_epochs.front().total);
  }
}

TEST_CASE("rollout") {
  Fixture fx(12, 43, Backbone::ssm, Integration::adapter);
  const Post& post = fx.ds.posts[fx.ds.train_idx[0]];

  SUBCASE("zero horizon gives an empty trajectory") {
    JointModel model(fx.model_cfg);
    ObservationWindow w = fx.ds.window;
    w.horizon = w.dt / 2;  // floor -> 0 steps
    const Trajectory t = rollout(model, post, fx.ds.signal, w, fx.norm);
    CHECK(t.points.empty());
  }
  SUBCASE("zero weights hold the last observed value") {
    JointModel model(fx.model_cfg);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      Tensor& t = model.params().tensor(i);
      for (int j = 0; j < t.numel(); ++j) t[j] = 0.0;
    }
    const Trajectory t = rollout(model, post, fx.ds.signal, fx.ds.window, fx.norm);
    const auto last = post.history.counts_at(post.t0 + fx.ds.window.tau_obs);
    REQUIRE(t.points.size() == 7);
    for (const auto& pt : t.points) {
      for (int d = 0; d < kEngagementDims; ++d) {
        CHECK(pt.counts[static_cast<std::size_t>(d)] ==
              doctest::Approx(static_cast<double>(last.counts[static_cast<std::size_t>(d)]))
                  .epsilon(1e-12));
      }
    }
  }
  SUBCASE("identity counterfactual reproduces the factual rollout bitwise") {
    JointModel model(fx.model_cfg);
    const auto spec =
        CounterfactualSpec::exposure(1.0, 11).anchored(post.t0, fx.ds.window);
    const SignalTimeline same = apply_cf(fx.ds.signal, spec);
    const Trajectory a = rollout(model, post, fx.ds.signal, fx.ds.window, fx.norm);
    const Trajectory b = rollout(model, post, same, fx.ds.window, fx.norm);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t k = 0; k < a.points.size(); ++k) {
      for (int d = 0; d < kEngagementDims; ++d) {
        CHECK(a.points[k].counts[static_cast<std::size_t>(d)] ==
              b.points[k].counts[static_cast<std::size_t>(d)]);
      }
    }
  }
  SUBCASE("predictions are monotone non-decreasing") {
    std::mt19937_64 gen(5);
    for (int rep = 0; rep < 5; ++rep) {
      ModelConfig cfg = fx.model_cfg;
      cfg.seed = gen();
      JointModel model(cfg);
      const Trajectory t = rollout(model, post, fx.ds.signal, fx.ds.window, fx.norm);
      for (std::size_t k = 1; k < t.points.size(); ++k) {
        for (int d = 0; d < kEngagementDims; ++d) {
          CHECK(t.points[k].counts[static_cast<std::size_t>(d)] >=
                t.points[k - 1].counts[static_cast<std::size_t>(d)]);
        }
      }
    }
  }
}

TEST_CASE("a trained model beats the zero-weight baseline on held-out posts") {
  Fixture fx(60, 47, Backbone::ssm, Integration::adapter);
  JointModel model(fx.model_cfg);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.max_epochs = 40;
  tc.patience = 40;
  train(model, fx.data, tc);

  JointModel zero(fx.model_cfg);
  for (std::size_t i = 0; i < zero.params().size(); ++i) {
    Tensor& t = zero.params().tensor(i);
    for (int j = 0; j < t.numel(); ++j) t[j] = 0.0;
  }
  std::vector<const Post*> test_posts;
  for (std::size_t i : fx.ds.test_idx) test_posts.push_back(&fx.ds.posts[i]);
  const double trained =
      rollout_rmse(model, test_posts, fx.ds.signal, fx.ds.window, fx.norm);
  const double baseline =
      rollout_rmse(zero, test_posts, fx.ds.signal, fx.ds.window, fx.norm);
  CHECK(trained < baseline);
}
