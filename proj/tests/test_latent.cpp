#include <gtest/gtest.h>

#include <filesystem>

#include "nmrom/latent.hpp"

using namespace nmrom;

namespace {

struct Fixture {
  SnapshotSet train;
  CaeModel cae;
};

Fixture& fixture() {
  static Fixture f = [] {
    Fixture x;
    fvm::NclProblem p;
    p.grid = Grid(12, 12);
    p.t_final = 0.02;
    x.train = build_snapshot_set(p, {0.8, 1.2}, 2);
    x.cae = build_cae("ncl", 12, 12, 3);
    nn::TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 6;
    train_cae(x.cae, x.train, cfg);
    return x;
  }();
  return f;
}

nn::TrainConfig lstm_cfg(int epochs) {
  nn::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 2;
  cfg.lr_halving_patience = 500;
  cfg.weight_decay = 0.0;
  return cfg;
}

}  // namespace

TEST(Lstm, LayerAndHeadShapes) {
  auto m = build_lstm();
  EXPECT_EQ(m.lstm.input_size(), 2u);
  EXPECT_EQ(m.lstm.hidden_size(), 100u);
  EXPECT_EQ(m.lstm.layers(), 2u);
  EXPECT_EQ(m.head.shape_chain()[1], (nn::Shape{50, 1, 1}));
  EXPECT_EQ(m.head.output_shape(), (nn::Shape{4, 1, 1}));
}

TEST(Lstm, OverfitsTwoTrajectories) {
  auto& f = fixture();
  auto m = build_lstm(100, 2, 1);
  const auto hist = train_lstm(m, f.cae, f.train, lstm_cfg(1500));
  ASSERT_FALSE(hist.aborted);
  EXPECT_LT(hist.loss.back(), 1e-3);
  EXPECT_LT(hist.loss.back(), hist.loss.front());
  EXPECT_DOUBLE_EQ(m.stride, 2e-3);
}

TEST(Lstm, BatchedRolloutEqualsSequentialAndIsStateless) {
  auto& f = fixture();
  auto m = build_lstm(100, 2, 2);
  train_lstm(m, f.cae, f.train, lstm_cfg(5));
  const std::vector<double> times{0.0, 2e-3, 4e-3, 6e-3};
  const std::vector<double> mus{0.7, 0.9, 1.1};
  const auto batched = lstm_rollout(m, mus, times);
  for (std::size_t i = 0; i < mus.size(); ++i) {
    const auto single = lstm_rollout(m, {mus[i]}, times);
    for (std::size_t t = 0; t < times.size(); ++t)
      EXPECT_LT((single[0].states[t] - batched[i].states[t]).cwiseAbs().maxCoeff(), 1e-12);
  }
  const auto again = lstm_rollout(m, mus, times);
  for (std::size_t i = 0; i < mus.size(); ++i) EXPECT_EQ(again[i].states, batched[i].states);
  EXPECT_EQ(lstm_rollout(m, {1.0}, {0.0})[0].states.size(), 1u);
}

TEST(Lstm, RejectsForeignStride) {
  auto& f = fixture();
  auto m = build_lstm(100, 2, 2);
  EXPECT_THROW(lstm_rollout(m, {1.0}, {0.0}), ConfigError);
  train_lstm(m, f.cae, f.train, lstm_cfg(1));
  EXPECT_THROW(lstm_rollout(m, {1.0}, {0.0, 1e-3, 2e-3}), std::invalid_argument);
  EXPECT_THROW(lstm_rollout(m, {1.0}, {2e-3, 4e-3}), std::invalid_argument);
  EXPECT_NO_THROW(lstm_rollout(m, {1.0}, {0.0, 2e-3}));
}

TEST(Lstm, DeterministicTrainingAndCheckpoint) {
  auto& f = fixture();
  auto a = build_lstm(100, 2, 4), b = build_lstm(100, 2, 4);
  const auto ha = train_lstm(a, f.cae, f.train, lstm_cfg(10));
  const auto hb = train_lstm(b, f.cae, f.train, lstm_cfg(10));
  EXPECT_EQ(ha.loss, hb.loss);
  const auto path = std::filesystem::temp_directory_path() / "nmrom_lstm.ckpt";
  save_lstm(a, path);
  auto c = load_lstm(path);
  std::filesystem::remove(path);
  const std::vector<double> times{0.0, 2e-3};
  EXPECT_EQ(lstm_rollout(c, {1.0}, times)[0].states, lstm_rollout(a, {1.0}, times)[0].states);
}

TEST(Lstm, ReportHonoursTimeCut) {
  auto& f = fixture();
  auto m = build_lstm(100, 2, 5);
  train_lstm(m, f.cae, f.train, lstm_cfg(5));
  const auto full = lstm_report(m, f.cae, f.train);
  const auto cut = lstm_report(m, f.cae, f.train, 3);
  ASSERT_EQ(full.size(), 2u);
  EXPECT_EQ(full[0].count, f.train.times[0].size());
  EXPECT_EQ(cut[0].count, f.train.times[0].size() - 3);
  for (const auto& e : full) EXPECT_GE(e.max, e.mean);
}
