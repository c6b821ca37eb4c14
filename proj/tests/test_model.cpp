#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "sigcast/model.hpp"
#include "sigcast/rng.hpp"

using namespace sigcast;

namespace {

std::vector<ModelConfig> all_variants(int d = 8, int depth = 2) {
  std::vector<ModelConfig> out;
  const std::vector<std::pair<Backbone, Integration>> combos = {
      {Backbone::transformer, Integration::none},
      {Backbone::transformer, Integration::token},
      {Backbone::transformer, Integration::attention},
      {Backbone::transformer, Integration::layer},
      {Backbone::transformer, Integration::adapter},
      {Backbone::ssm, Integration::none},
      {Backbone::ssm, Integration::token},
      {Backbone::ssm, Integration::selection},
      {Backbone::ssm, Integration::layer},
      {Backbone::ssm, Integration::adapter},
  };
  for (auto [b, i] : combos) {
    ModelConfig cfg;
    cfg.backbone = b;
    cfg.integration = i;
    cfg.depth = depth;
    cfg.embed_dim = d;
    cfg.hidden_dim = 2 * d;
    cfg.heads = 2;
    cfg.state_dim = d;
    cfg.seed = 12345;
    out.push_back(cfg);
  }
  return out;
}

SequenceBatch random_batch(int s_rows, int w, std::uint64_t seed) {
  SequenceBatch b;
  b.inputs = Tensor({s_rows, kBaseFeatures});
  b.lag = Tensor({s_rows, w});
  b.targets_y = Tensor({s_rows, kEngagementDims});
  b.targets_a = Tensor({s_rows, 1});
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < b.inputs.numel(); ++i) b.inputs[i] = dist(gen);
  for (int i = 0; i < b.lag.numel(); ++i) b.lag[i] = 100.0 * dist(gen);
  for (int i = 0; i < b.targets_y.numel(); ++i) b.targets_y[i] = dist(gen);
  for (int i = 0; i < s_rows; ++i) b.targets_a(i, 0) = gen() % 2 ? 1.0 : 0.0;
  for (int i = 0; i < s_rows; ++i) {
    b.time_days.push_back(static_cast<double>(i));
    b.gap_days.push_back(1.0);
  }
  b.valid_rows = s_rows;
  b.obs_rows = s_rows;
  return b;
}

}  // namespace

TEST_CASE("every variant constructs and produces well-formed outputs") {
  const SequenceBatch batch = random_batch(5, 6, 7);
  for (const ModelConfig& cfg : all_variants()) {
    CAPTURE(cfg.name());
    JointModel model(cfg);
    Tape tape;
    const auto pv = model.bind(tape, false);
    const HeadOutputs out = model.forward(tape, pv, batch);
    CHECK(tape.val(out.y).rows() == 5);
    CHECK(tape.val(out.y).cols() == kEngagementDims);
    CHECK(tape.val(out.lambda).rows() == 5);
    for (int i = 0; i < 5; ++i) {
      CHECK(tape.val(out.lambda)(i, 0) >= 0.0);
      CHECK(tape.val(out.lambda)(i, 0) <= 1.0);
    }
    CHECK(tape.val(out.y).all_finite());
    if (cfg.backbone == Backbone::ssm) {
      CHECK(out.scans.size() == static_cast<std::size_t>(cfg.depth));
    } else {
      CHECK(out.attention.size() >= static_cast<std::size_t>(cfg.depth * cfg.heads));
    }
  }
}

TEST_CASE("token integration doubles the attended sequence") {
  ModelConfig cfg;
  cfg.backbone = Backbone::transformer;
  cfg.integration = Integration::token;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  const int s_rows = 4;
  const SequenceBatch batch = random_batch(s_rows, cfg.lag_w, 3);
  JointModel model(cfg);
  Tape tape;
  const auto out = model.forward(tape, model.bind(tape, false), batch);
  CHECK(tape.val(out.attention[0]).rows() == 2 * s_rows);
  CHECK(tape.val(out.y).rows() == s_rows);
}

TEST_CASE("attention rows are probability vectors under the temporal mask") {
  for (Integration integ : {Integration::attention, Integration::token, Integration::none}) {
    ModelConfig cfg;
    cfg.backbone = Backbone::transformer;
    cfg.integration = integ;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.beta_mask = 0.7;
    JointModel model(cfg);
    const SequenceBatch batch = random_batch(6, cfg.lag_w, 11);
    Tape tape;
    const auto out = model.forward(tape, model.bind(tape, false), batch);
    for (Var m : out.attention) {
      const Tensor& a = tape.val(m);
      for (int i = 0; i < a.rows(); ++i) {
        double row = 0.0;
        for (int j = 0; j < a.cols(); ++j) {
          row += a(i, j);
          if (j > i) CHECK(a(i, j) == 0.0);  // causal
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("beta 0 reduces the temporal mask to the plain causal mask") {
  const std::vector<double> pos = {0.0, 1.0, 2.5, 7.0};
  const Tensor none = attention_log_mask(pos, 0.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (j > i) {
        CHECK(none(i, j) < -1e29);
      } else {
        CHECK(none(i, j) == 0.0);
      }
    }
  const Tensor decayed = attention_log_mask(pos, 0.1);
  CHECK(decayed(2, 1) == doctest::Approx(-0.1 * 1.5));
  CHECK(decayed(3, 0) == doctest::Approx(-0.7));
}

TEST_CASE("adapter with zero up/down weights is the identity") {
  ModelConfig cfg;
  cfg.backbone = Backbone::transformer;
  cfg.integration = Integration::adapter;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.depth = 1;
  JointModel with(cfg);
  // zero all adapter weights; compare against the same weights run as vanilla
  for (const char* name :
       {"layer0.adapter1.down", "layer0.adapter1.up", "layer0.adapter1.bdown",
        "layer0.adapter1.bup", "layer0.adapter2.down", "layer0.adapter2.up",
        "layer0.adapter2.bdown", "layer0.adapter2.bup"}) {
    Tensor& t = with.params().at(name);
    for (int i = 0; i < t.numel(); ++i) t[i] = 0.0;
  }
  const SequenceBatch batch = random_batch(5, cfg.lag_w, 13);

  Tape t1;
  const auto out1 = with.forward(t1, with.bind(t1, false), batch);

  ModelConfig vcfg = cfg;
  vcfg.integration = Integration::none;
  JointModel vanilla(vcfg);
  // copy the shared parameters so both models compute the same function
  for (std::size_t i = 0; i < vanilla.params().size(); ++i) {
    const std::string& name = vanilla.params().name(i);
    vanilla.params().tensor(i) = with.params().at(name);
  }
  Tape t2;
  const auto out2 = vanilla.forward(t2, vanilla.bind(t2, false), batch);
  for (int i = 0; i < t1.val(out1.y).numel(); ++i) {
    CHECK(t1.val(out1.y)[i] == doctest::Approx(t2.val(out2.y)[i]).epsilon(1e-12));
  }
}

TEST_CASE("adapter parameter count is 2dr + d + r per insertion point") {
  ModelConfig cfg;
  cfg.backbone = Backbone::ssm;
  cfg.integration = Integration::adapter;
  cfg.embed_dim = 32;
  cfg.depth = 1;
  JointModel model(cfg);
  const int d = cfg.embed_dim;
  const int r = cfg.adapter_bottleneck();
  CHECK(r == 4);  // d/8
  long long adapter_params = 0;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    if (model.params().name(i).find("adapter") != std::string::npos) {
      adapter_params += model.params().tensor(i).numel();
    }
  }
  CHECK(adapter_params == 2LL * d * r + d + r);
}

TEST_CASE("ssm transitions ignore the signal when the delta path is zero") {
  ModelConfig cfg;
  cfg.backbone = Backbone::ssm;
  cfg.integration = Integration::selection;
  cfg.embed_dim = 8;
  cfg.state_dim = 6;
  cfg.depth = 1;
  JointModel model(cfg);  // ssm.da is zero-initialized
  SequenceBatch b1 = random_batch(5, cfg.lag_w, 17);
  SequenceBatch b2 = b1;
  for (int i = 0; i < b2.lag.numel(); ++i) b2.lag[i] = 100.0 - b2.lag[i];

  Tape t1, t2;
  const auto o1 = model.forward(t1, model.bind(t1, false), b1);
  const auto o2 = model.forward(t2, model.bind(t2, false), b2);
  const Tensor& tr1 = t1.val(o1.scans[0].transitions);
  const Tensor& tr2 = t2.val(o2.scans[0].transitions);
  for (int i = 0; i < tr1.numel(); ++i) CHECK(tr1[i] == tr2[i]);
  // outputs still differ because the gates see the lag features
  bool any_diff = false;
  for (int i = 0; i < t1.val(o1.y).numel(); ++i) {
    if (t1.val(o1.y)[i] != t2.val(o2.y)[i]) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("scan states match a sequential loop over recorded transitions and drives") {
  for (Integration integ :
       {Integration::none, Integration::selection, Integration::adapter}) {
    ModelConfig cfg;
    cfg.backbone = Backbone::ssm;
    cfg.integration = integ;
    cfg.embed_dim = 8;
    cfg.state_dim = 5;
    JointModel model(cfg);
    const SequenceBatch batch = random_batch(6, cfg.lag_w, 19);
    Tape tape;
    const auto out = model.forward(tape, model.bind(tape, false), batch);
    for (const ScanRecord& scan : out.scans) {
      const Tensor& h = tape.val(scan.states);
      const Tensor& tr = tape.val(scan.transitions);
      const Tensor& dr = tape.val(scan.drive);
      std::vector<double> state(static_cast<std::size_t>(h.cols()), 0.0);
      for (int j = 0; j < tr.rows(); ++j) {
        for (int c = 0; c < h.cols(); ++c) {
          state[static_cast<std::size_t>(c)] =
              tr(j, c) * state[static_cast<std::size_t>(c)] + dr(j, c);
          CHECK(std::abs(state[static_cast<std::size_t>(c)] - h(j + 1, c)) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("causality: outputs at steps before a perturbation are bit-identical") {
  std::mt19937_64 gen(23);
  const int s_rows = 6;
  for (const ModelConfig& cfg : all_variants()) {
    CAPTURE(cfg.name());
    JointModel model(cfg);
    const SequenceBatch base = random_batch(s_rows, cfg.lag_w, 29);
    Tape t1;
    const auto o1 = model.forward(t1, model.bind(t1, false), base);
    for (int probe = 0; probe < 10; ++probe) {
      const int step = 1 + static_cast<int>(gen() % (s_rows - 1));
      SequenceBatch mod = base;
      for (int c = 0; c < kBaseFeatures; ++c) mod.inputs(step, c) += 0.37;
      for (int c = 0; c < cfg.lag_w; ++c) mod.lag(step, c) = 100.0 - mod.lag(step, c);
      Tape t2;
      const auto o2 = model.forward(t2, model.bind(t2, false), mod);
      for (int i = 0; i < step; ++i) {
        for (int d = 0; d < kEngagementDims; ++d) {
          CHECK(t1.val(o1.y)(i, d) == t2.val(o2.y)(i, d));
        }
        CHECK(t1.val(o1.lambda)(i, 0) == t2.val(o2.lambda)(i, 0));
      }
    }
  }
}

TEST_CASE("zero hidden state gives bias-squared intensity") {
  ModelConfig cfg;
  cfg.backbone = Backbone::ssm;
  cfg.integration = Integration::none;
  cfg.embed_dim = 8;
  JointModel model(cfg);
  // zero every parameter, then set the intensity head bias
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    Tensor& t = model.params().tensor(i);
    for (int j = 0; j < t.numel(); ++j) t[j] = 0.0;
  }
  model.params().at("head.b_l")[0] = 0.6;
  const SequenceBatch batch = random_batch(4, cfg.lag_w, 31);
  Tape tape;
  const auto out = model.forward(tape, model.bind(tape, false), batch);
  for (int i = 0; i < 4; ++i) {
    CHECK(tape.val(out.y)(i, 0) == 0.0);
    CHECK(tape.val(out.lambda)(i, 0) == doctest::Approx(0.36));
  }
}

TEST_CASE("intensity head stays within [0,1] for random weights") {
  std::mt19937_64 gen(37);
  const SequenceBatch batch = random_batch(5, 6, 41);
  for (int rep = 0; rep < 50; ++rep) {
    ModelConfig cfg;
    cfg.backbone = rep % 2 ? Backbone::ssm : Backbone::transformer;
    cfg.integration = Integration::none;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.seed = gen();
    JointModel model(cfg);
    Tape tape;
    const auto out = model.forward(tape, model.bind(tape, false), batch);
    for (int i = 0; i < 5; ++i) {
      CHECK(tape.val(out.lambda)(i, 0) >= 0.0);
      CHECK(tape.val(out.lambda)(i, 0) <= 1.0);
    }
  }
}

TEST_CASE("prediction head is affine in the hidden state") {
  Tape tape;
  std::mt19937_64 gen(43);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor w({8, 4}), b({4}), ha({3, 8}), hb({3, 8});
  for (int i = 0; i < w.numel(); ++i) w[i] = dist(gen);
  for (int i = 0; i < b.numel(); ++i) b[i] = dist(gen);
  for (int i = 0; i < ha.numel(); ++i) ha[i] = dist(gen);
  for (int i = 0; i < hb.numel(); ++i) hb[i] = dist(gen);
  auto head = [&](Var h) {
    return tape.add_rowvec(tape.matmul(h, tape.constant(w)), tape.constant(b));
  };
  Tensor hsum = ha;
  for (int i = 0; i < hsum.numel(); ++i) hsum[i] += hb[i];
  const Var sum_out = head(tape.constant(hsum));
  const Var a_out = head(tape.constant(ha));
  const Var b_out = head(tape.constant(hb));
  const Var zero_out = head(tape.constant(Tensor({3, 8})));
  for (int i = 0; i < tape.val(sum_out).numel(); ++i) {
    CHECK(tape.val(sum_out)[i] ==
          doctest::Approx(tape.val(a_out)[i] + tape.val(b_out)[i] - tape.val(zero_out)[i])
              .epsilon(1e-9));
  }
}

TEST_CASE("signal embedding of a zero signal with zero bias is zero") {
  ModelConfig cfg;
  cfg.backbone = Backbone::transformer;
  cfg.integration = Integration::token;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  JointModel model(cfg);
  SequenceBatch batch = random_batch(3, cfg.lag_w, 47);
  for (int i = 0; i < batch.lag.numel(); ++i) batch.lag[i] = 0.0;
  // b_sig is zero-initialized; the embedding must vanish
  Tape tape;
  const auto pv = model.bind(tape, false);
  Var lag_in = tape.constant(batch.lag);
  Var sig = tape.add_rowvec(tape.matmul(lag_in, pv["embed.w_sig"]), pv["embed.b_sig"]);
  for (int i = 0; i < tape.val(sig).numel(); ++i) CHECK(tape.val(sig)[i] == 0.0);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  ModelConfig cfg;
  cfg.backbone = Backbone::ssm;
  cfg.integration = Integration::adapter;
  cfg.embed_dim = 16;
  cfg.state_dim = 8;
  JointModel model(cfg);
  const auto path = std::filesystem::temp_directory_path() / "sigcast_ckpt_test.bin";
  model.save(path);
  const JointModel loaded = JointModel::load(path);
  CHECK(loaded.config().name() == model.config().name());
  REQUIRE(loaded.params().size() == model.params().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const Tensor& a = model.params().tensor(i);
    const Tensor& b = loaded.params().tensor(i);
    REQUIRE(a.numel() == b.numel());
    for (int j = 0; j < a.numel(); ++j) CHECK(a[j] == b[j]);
  }
  const SequenceBatch batch = random_batch(4, cfg.lag_w, 53);
  Tape t1, t2;
  const auto o1 = model.forward(t1, model.bind(t1, false), batch);
  const auto o2 = loaded.forward(t2, loaded.bind(t2, false), batch);
  for (int i = 0; i < t1.val(o1.y).numel(); ++i) {
    CHECK(t1.val(o1.y)[i] == t2.val(o2.y)[i]);
  }
  CHECK_THROWS_AS((void)JointModel::load("/nonexistent/model.bin"), ConfigError);
}

TEST_CASE("invalid configurations are rejected") {
  ModelConfig bad;
  bad.embed_dim = 10;
  bad.heads = 4;  // not divisible
  CHECK_THROWS_AS(JointModel{bad}, ConfigError);

  ModelConfig wrong_combo;
  wrong_combo.backbone = Backbone::ssm;
  wrong_combo.integration = Integration::attention;
  CHECK_THROWS_AS(JointModel{wrong_combo}, ConfigError);

  ModelConfig sel_tf;
  sel_tf.backbone = Backbone::transformer;
  sel_tf.integration = Integration::selection;
  CHECK_THROWS_AS(JointModel{sel_tf}, ConfigError);
}
