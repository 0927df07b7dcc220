#include <doctest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "cosrec/checkpoint.hpp"
#include "cosrec/train.hpp"

using namespace cosrec;

namespace {

RunConfig small_run() {
  RunConfig run;
  run.dim = 8;
  run.block1_channels = 4;
  run.block2_channels = 8;
  run.mlp_hidden = 16;
  run.batch_size = 16;
  run.validation_fraction = 0.0;
  run.learning_rate = 0.01;
  run.seed = 11;
  return run;
}

std::string checkpoint_bytes(const RunConfig& run, const TrainOutcome<float>& o) {
  std::ostringstream out;
  save_checkpoint(make_checkpoint(run, o.model, &o.optimizer, o.rng), out);
  return out.str();
}

}  // namespace

TEST_CASE("batch ranges cover every window and never end with a singleton") {
  using R = std::vector<std::pair<std::size_t, std::size_t>>;
  CHECK(batch_ranges(10, 4) == R{{0, 4}, {4, 8}, {8, 10}});
  CHECK(batch_ranges(9, 4) == R{{0, 4}, {4, 9}});
  CHECK(batch_ranges(8, 4) == R{{0, 4}, {4, 8}});
  CHECK(batch_ranges(3, 8) == R{{0, 3}});
  for (std::size_t n = 2; n < 40; ++n) {
    for (std::size_t b = 2; b < 9; ++b) {
      const auto r = batch_ranges(n, b);
      CHECK(r.front().first == 0);
      CHECK(r.back().second == n);
      for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(r[i].second - r[i].first >= 2);
        if (i) CHECK(r[i].first == r[i - 1].second);
      }
    }
  }
}

TEST_CASE("training loss falls on a learnable toy") {
  const Dataset d = cyclic_pattern_dataset(40, 20, 5, 12);
  for (Variant v : {Variant::cnn, Variant::mlp_base}) {
    RunConfig run = small_run();
    run.variant = v;
    run.epochs = 50;
    const auto o = train_model<float>(d, run);
    REQUIRE(o.epochs.size() == 50);
    CHECK(o.epochs.back().loss < 0.5 * o.epochs.front().loss);
    CHECK(o.epochs.front().windows > 0);
  }
}

TEST_CASE("same seed, same checkpoint; different seed, different checkpoint") {
  const Dataset d = cyclic_pattern_dataset(30, 15, 5, 10);
  RunConfig run = small_run();
  run.epochs = 3;
  run.validation_fraction = 0.2;
  const auto a = checkpoint_bytes(run, train_model<float>(d, run));
  const auto b = checkpoint_bytes(run, train_model<float>(d, run));
  CHECK(a == b);
  run.seed = 12;
  CHECK(a != checkpoint_bytes(run, train_model<float>(d, run)));
}

TEST_CASE("early stopping keeps the best epoch") {
  const Dataset d = cyclic_pattern_dataset(30, 15, 5, 10);
  RunConfig run = small_run();
  run.epochs = 30;
  run.validation_fraction = 0.3;
  run.patience = 2;
  std::size_t callbacks = 0;
  const auto o = train_model<float>(d, run, [&](const EpochLog& e) {
    ++callbacks;
    CHECK(e.validation.has_value());
  });
  CHECK(callbacks == o.epochs.size());
  REQUIRE(o.best_epoch >= 1);
  double best = -1;
  for (const auto& e : o.epochs) best = std::max(best, e.validation->map);
  CHECK(o.epochs[o.best_epoch - 1].validation->map == best);
  if (o.epochs.size() < 30) CHECK(o.epochs.size() == o.best_epoch + 2);
}

TEST_CASE("epoch log and metrics lines are flat JSON") {
  EpochLog e;
  e.epoch = 3;
  e.loss = 1.25;
  e.windows = 100;
  e.seconds = 0.5;
  auto j = nlohmann::json::parse(format_epoch_log(e));
  CHECK(j["epoch"] == 3);
  CHECK(j["loss"].get<double>() == doctest::Approx(1.25));
  CHECK(!j.contains("val_map"));
  MetricsReport m;
  m.map = 0.123456;
  m.precision = {0.5, 0.25, 0.125};
  m.recall = {0.1, 0.2, 0.3};
  e.validation = m;
  j = nlohmann::json::parse(format_epoch_log(e));
  CHECK(j["val_map"].get<double>() == doctest::Approx(0.1235));
  const auto metrics = nlohmann::json::parse(format_metrics(m));
  for (const char* key : {"map", "prec@1", "prec@5", "prec@10", "recall@1", "recall@5", "recall@10"}) {
    CHECK(metrics.contains(key));
  }
  CHECK(metrics["recall@10"].get<double>() == doctest::Approx(0.3));
}

TEST_CASE("run config defaults and JSON round trip") {
  const RunConfig ml = RunConfig::defaults_for(DatasetKind::ml1m);
  const RunConfig gw = RunConfig::defaults_for(DatasetKind::gowalla);
  CHECK(ml.dim == 50);
  CHECK(gw.dim == 100);
  CHECK(ml.markov_order == 5);
  CHECK(ml.horizon == 3);
  CHECK(ml.negatives == 3);
  CHECK(ml.batch_size == 512);
  CHECK(ml.learning_rate == 0.001);
  CHECK(ml.dropout == 0.5);
  RunConfig odd = gw;
  odd.variant = Variant::mlp_base;
  odd.learning_rate = 0.1 + 0.2;
  odd.first_kernel = 5;
  odd.seed = 0xFFFFFFFFFFFFFFFFull;
  CHECK(RunConfig::from_json(odd.to_json()) == odd);
  CHECK(parse_dataset_kind("ml-1m") == DatasetKind::ml1m);
  CHECK_THROWS_AS(parse_dataset_kind("netflix"), std::invalid_argument);
  CHECK_THROWS_AS(parse_variant("rnn"), std::invalid_argument);
}

TEST_CASE("non-finite loss raises a numeric error") {
  const Dataset d = cyclic_pattern_dataset(20, 10, 5, 10);
  RunConfig run = small_run();
  run.epochs = 2;
  run.learning_rate = 1e30;
  CHECK_THROWS_AS(train_model<float>(d, run), NumericError);
}
