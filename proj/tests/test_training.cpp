#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "mason/config.hpp"
#include "mason/loss.hpp"
#include "mason/optim.hpp"
#include "mason/train.hpp"

using namespace mason;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dice loss
// ---------------------------------------------------------------------------

TEST(DiceLoss, PerfectOverlapNearZero) {
  RngStream rng = make_stream(1, "dice");
  Tensor<double> target({10, 10});
  for (auto& v : target.vec()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  Tensor<double> logits({10, 10});
  for (std::size_t i = 0; i < logits.size(); ++i)
    logits[i] = target[i] > 0 ? 20.0 : -20.0;
  EXPECT_LT(dice_loss(logits, target), 1e-6);
}

TEST(DiceLoss, DisjointCaseFormula) {
  // p = 1 everywhere, target empty, N = 100: 1 - 1/101
  Tensor<double> logits = Tensor<double>::full({10, 10}, 20.0);
  Tensor<double> target({10, 10});
  EXPECT_NEAR(dice_loss(logits, target), 1.0 - 1.0 / 101.0, 1e-9);
}

TEST(DiceLoss, EmptyTargetEmptyPrediction) {
  Tensor<double> logits = Tensor<double>::full({10, 10}, -20.0);
  Tensor<double> target({10, 10});
  EXPECT_NEAR(dice_loss(logits, target), 0.0, 1e-6);
}

TEST(DiceLoss, BoundsOnRandomInputs) {
  RngStream rng = make_stream(2, "dice_bounds");
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<double> logits({8, 8}), target({8, 8});
    for (auto& v : logits.vec()) v = rng.normal() * 10;
    for (auto& v : target.vec()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double loss = dice_loss(logits, target);
    EXPECT_GE(loss, 0.0);
    EXPECT_LT(loss, 1.0);
  }
}

TEST(DiceLoss, PermutationInvariance) {
  RngStream rng = make_stream(3, "dice_perm");
  Tensor<double> logits({8, 8}), target({8, 8});
  for (auto& v : logits.vec()) v = rng.normal();
  for (auto& v : target.vec()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  std::vector<std::size_t> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 64; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  Tensor<double> logits_p({8, 8}), target_p({8, 8});
  for (std::size_t i = 0; i < 64; ++i) {
    logits_p[perm[i]] = logits[i];
    target_p[perm[i]] = target[i];
  }
  EXPECT_NEAR(dice_loss(logits, target), dice_loss(logits_p, target_p), 1e-12);
}

TEST(DiceLoss, GradientMatchesFiniteDifferences) {
  RngStream rng = make_stream(4, "dice_fd");
  Tensor<double> logits({8, 8}), target({8, 8});
  for (auto& v : logits.vec()) v = rng.normal() * 2;
  for (auto& v : target.vec()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  Tensor<double> grad({8, 8});
  dice_loss_grad(logits, target, grad);
  const double h = 1e-4;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Tensor<double> lp = logits, lm = logits;
    lp[i] += h;
    lm[i] -= h;
    const double fd = (dice_loss(lp, target) - dice_loss(lm, target)) / (2 * h);
    EXPECT_NEAR(grad[i], fd, 1e-4 * std::max(1e-4, std::abs(fd)));
  }
}

TEST(DiceLoss, ShapeMismatchRejected) {
  Tensor<double> a({4, 4}), b({4, 5});
  EXPECT_THROW(dice_loss(a, b), Error);
}

// ---------------------------------------------------------------------------
// Cosine schedule
// ---------------------------------------------------------------------------

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr<double>(0, 1000, 1e-5), 1e-5);
  EXPECT_NEAR(cosine_lr<double>(1000, 1000, 1e-5), 0.0, 1e-20);
  EXPECT_NEAR(cosine_lr<double>(500, 1000, 1e-5), 0.5e-5, 1e-12);
}

TEST(CosineLr, MonotoneNonIncreasing) {
  double prev = 1.0;
  for (std::size_t s = 0; s <= 200; ++s) {
    const double lr = cosine_lr<double>(s, 200, 1.0);
    EXPECT_LE(lr, prev + 1e-15);
    prev = lr;
  }
}

TEST(CosineLr, StepOutOfRange) {
  EXPECT_THROW(cosine_lr<double>(1001, 1000, 1.0), Error);
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

TEST(AdamW, DecoupledDecayAndGroups) {
  Tensor<double> w = Tensor<double>::full({2}, 1.0);
  Tensor<double> g({2});
  AdamW<double> opt;
  opt.add_group({{"w", &w, &g, true}}, 0.1, 0.5);
  g.fill(0.0);
  opt.step(1.0);
  // zero gradient: only the decay term acts, w -= lr*wd*w
  EXPECT_NEAR(w[0], 1.0 - 0.1 * 0.5, 1e-12);

  Tensor<double> q = Tensor<double>::full({1}, 0.85);
  Tensor<double> qg({1});
  AdamW<double> opt2;
  opt2.add_group({{"q", &q, &qg, false}}, 0.1, 0.5);
  qg.fill(0.0);
  opt2.step(1.0);
  EXPECT_DOUBLE_EQ(q[0], 0.85);  // no decay on the quantile group
}

TEST(AdamW, FirstStepMagnitude) {
  Tensor<double> w({1});
  Tensor<double> g = Tensor<double>::full({1}, 3.0);
  AdamW<double> opt;
  opt.add_group({{"w", &w, &g, false}}, 1e-3, 0.0);
  opt.step(1.0);
  // bias-corrected first step moves by about lr regardless of gradient scale
  EXPECT_NEAR(w[0], -1e-3, 1e-6);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct TinySetup {
  std::vector<BiTemporalSample> data;
  Encoder encoder = Encoder::create(EncoderSpec{});
  TrainConfig tc;
  ChangeGenConfig cg;
  DecoderConfig dc;

  TinySetup() {
    SyntheticSceneConfig sc;
    sc.image_size = 64;
    sc.num_samples = 8;
    sc.seed = 3;
    data = generate_synthetic_dataset(sc);
    tc.iterations = 1;
    tc.batch_size = 4;
    dc.width = 8;
  }
};

}  // namespace

TEST(Train, OneIterationSmokeAndCheckpointRoundTrip) {
  TinySetup s;
  const fs::path path = fs::temp_directory_path() / "mason_smoke.ckpt";
  s.tc.checkpoint_path = path.string();
  TrainResult res = train(s.tc, s.data, s.encoder, s.cg, s.dc);
  EXPECT_EQ(res.log.size(), 1u);
  EXPECT_TRUE(fs::exists(path));

  Checkpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.iteration, 1u);
  EXPECT_FLOAT_EQ(loaded.q_irrelevant, res.checkpoint.q_irrelevant);

  // round trip reproduces identical forward outputs
  ChangeDetector a(s.encoder, res.checkpoint);
  ChangeDetector b(s.encoder, loaded);
  PredictionMap pa = a.predict_logits(s.data[0]);
  PredictionMap pb = b.predict_logits(s.data[0]);
  EXPECT_TRUE(pa.logits == pb.logits);
}

TEST(Train, EncoderFrozenDuringTraining) {
  TinySetup s;
  s.tc.iterations = 3;
  const std::uint64_t before = s.encoder.weight_hash();
  train(s.tc, s.data, s.encoder, s.cg, s.dc);
  EXPECT_EQ(s.encoder.weight_hash(), before);
}

TEST(Train, QuantilesStayClampedAndRecorded) {
  TinySetup s;
  s.tc.iterations = 5;
  s.tc.lr_quantiles = 0.5f;  // absurd rate to force clamping pressure
  TrainResult res = train(s.tc, s.data, s.encoder, s.cg, s.dc);
  EXPECT_GE(res.checkpoint.q_irrelevant, 0.01f);
  EXPECT_LE(res.checkpoint.q_irrelevant, 0.99f);
  EXPECT_GE(res.checkpoint.q_relevant, 0.01f);
  EXPECT_LE(res.checkpoint.q_relevant, 0.99f);
  for (const auto& row : res.log) {
    // clamp bounds are stored as float32
    EXPECT_GE(row.q_irrelevant, double(0.01f) - 1e-12);
    EXPECT_LE(row.q_relevant, double(0.99f) + 1e-12);
  }
}

TEST(Train, NanLossAbortsWithSigmaDiagnostic) {
  TinySetup s;
  // poison one input so features and scales go non-finite
  s.data[0].t1.at(0, 3, 3) = std::numeric_limits<float>::quiet_NaN();
  s.tc.iterations = 2;
  s.tc.augment = false;
  s.tc.batch_size = 8;  // guarantees the poisoned sample enters the batch
  try {
    train(s.tc, s.data, s.encoder, s.cg, s.dc);
    FAIL() << "expected numeric_failure";
  } catch (const Error& e) {
    EXPECT_EQ(e.error_class(), ErrorClass::numeric_failure);
    EXPECT_NE(std::string(e.what()).find("sigma"), std::string::npos);
  }
}

TEST(Train, ValidationErrors) {
  TinySetup s;
  s.tc.lr_decoder = -1.f;
  EXPECT_THROW(train(s.tc, s.data, s.encoder, s.cg, s.dc), Error);
  s.tc = TrainConfig{};
  s.tc.iterations = 0;
  EXPECT_THROW(train(s.tc, s.data, s.encoder, s.cg, s.dc), Error);
  s.tc = TrainConfig{};
  EXPECT_THROW(train(s.tc, {}, s.encoder, s.cg, s.dc), Error);
}

TEST(Train, DeterministicRerun) {
  TinySetup s;
  s.tc.iterations = 3;
  TrainResult a = train(s.tc, s.data, s.encoder, s.cg, s.dc);
  TrainResult b = train(s.tc, s.data, s.encoder, s.cg, s.dc);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i)
    EXPECT_DOUBLE_EQ(a.log[i].loss, b.log[i].loss);
  for (std::size_t i = 0; i < a.checkpoint.decoder_state.size(); ++i)
    EXPECT_TRUE(a.checkpoint.decoder_state[i].tensor ==
                b.checkpoint.decoder_state[i].tensor);
}

TEST(Train, LogCsvWritten) {
  TinySetup s;
  const fs::path path = fs::temp_directory_path() / "mason_log.csv";
  s.tc.log_csv_path = path.string();
  s.tc.iterations = 2;
  train(s.tc, s.data, s.encoder, s.cg, s.dc);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header,
            "step,loss,lr,q_irrelevant,q_relevant,mean_sigma_irrelevant,"
            "mean_sigma_relevant");
  std::string row;
  std::size_t rows = 0;
  while (std::getline(is, row))
    if (!row.empty()) ++rows;
  EXPECT_EQ(rows, 2u);
}

TEST(Train, PixelSpaceArmRuns) {
  TinySetup s;
  s.cg.pixel_space = true;
  s.tc.iterations = 2;
  TrainResult res = train(s.tc, s.data, s.encoder, s.cg, s.dc);
  EXPECT_EQ(res.log.size(), 2u);
  EXPECT_TRUE(std::isfinite(res.log.back().loss));
}

TEST(Train, CheckpointRejectsWrongEncoder) {
  TinySetup s;
  TrainResult res = train(s.tc, s.data, s.encoder, s.cg, s.dc);
  EncoderSpec other;
  other.weight_seed = 4242;
  Encoder wrong = Encoder::create(other);
  EXPECT_THROW(ChangeDetector(wrong, res.checkpoint), Error);
}
