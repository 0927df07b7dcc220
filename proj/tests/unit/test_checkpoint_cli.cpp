#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cosrec/checkpoint.hpp"
#include "cosrec/cli.hpp"
#include "cosrec/rng.hpp"

using namespace cosrec;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cosrec_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Result {
  int code;
  std::string out, err;
};

Result cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// 12 users with 8..15 ratings each over 20 movies, in a shuffled line order.
void write_movielens(const std::string& path) {
  Rng rng(17);
  std::vector<std::string> lines;
  for (int u = 1; u <= 12; ++u) {
    const int n = 8 + static_cast<int>(rng.below(8));
    for (int k = 0; k < n; ++k) {
      const int movie = 1 + static_cast<int>(rng.below(20));
      lines.push_back(std::to_string(u) + "::" + std::to_string(100 + movie) + "::" +
                      std::to_string(1 + rng.below(5)) + "::" + std::to_string(978300000 + 60 * k + u));
    }
  }
  for (std::size_t i = lines.size(); i > 1; --i) std::swap(lines[i - 1], lines[rng.below(i)]);
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

TEST_CASE("checkpoint round trip is exact") {
  RunConfig run;
  run.dim = 6;
  run.block1_channels = 3;
  run.block2_channels = 5;
  run.first_kernel = 3;
  CosRecModel<float> model(run.model_config(4, 9));
  model.init_parameters(2);
  Adam<float> adam(run.adam_options());
  Rng rng(8);
  rng.normal();
  const Checkpoint ck = make_checkpoint(run, model, &adam, rng);
  std::stringstream bytes;
  save_checkpoint(ck, bytes);
  const std::string first = bytes.str();
  CHECK(first.substr(0, 8) == "COSRECCK");
  const Checkpoint back = load_checkpoint(bytes);
  CHECK(back == ck);
  std::ostringstream again;
  save_checkpoint(back, again);
  CHECK(again.str() == first);

  const auto restored = restore_model<float>(back);
  CHECK(restored.config() == model.config());
  auto pa = model.parameters();
  auto pb = const_cast<CosRecModel<float>&>(restored).parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].value == *pb[i].value);

  std::istringstream cut(first.substr(0, first.size() / 2));
  CHECK_THROWS(load_checkpoint(cut));
  std::string wrong = first;
  wrong[0] = 'X';
  std::istringstream bad(wrong);
  CHECK_THROWS(load_checkpoint(bad));
}

TEST_CASE("command line: preprocess, train, evaluate, export") {
  TempDir tmp;
  const auto raw = tmp / "ratings.dat";
  write_movielens(raw);

  SUBCASE("preprocess is deterministic and writes stats") {
    const auto a = cli({"preprocess", "--input", raw, "--output", tmp / "a.bin"});
    const auto b = cli({"preprocess", "--input", raw, "--output", tmp / "b.bin"});
    REQUIRE(a.code == kExitOk);
    CHECK(a.out == b.out);
    CHECK(slurp(tmp / "a.bin") == slurp(tmp / "b.bin"));
    const auto stats = nlohmann::json::parse(slurp(tmp / "a.bin.stats.json"));
    CHECK(stats["users"] == 12);
    CHECK(stats == nlohmann::json::parse(a.out));
  }

  SUBCASE("missing input and bad flags are usage errors") {
    const auto missing = cli({"preprocess", "--input", tmp / "nope.dat", "--output", tmp / "x.bin"});
    CHECK(missing.code == kExitUsage);
    CHECK(missing.err.find("nope.dat") != std::string::npos);
    CHECK(cli({"preprocess", "--dataset", "netflix", "--input", raw, "--output", tmp / "x.bin"}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"train", "--data", tmp / "nope.bin", "--out", tmp / "m.ck"}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
  }

  SUBCASE("train, evaluate and export filters") {
    REQUIRE(cli({"preprocess", "--input", raw, "--output", tmp / "d.bin"}).code == kExitOk);
    const std::vector<std::string> common = {"train", "--data", tmp / "d.bin", "--d", "6", "--D1", "3", "--D2", "4",
                                             "--batch-size", "8", "--epochs", "2", "--val-fraction", "0"};
    auto train = common;
    for (const char* a : {"--out", "", "--log", ""}) train.push_back(a);
    train[train.size() - 3] = tmp / "m.ck";
    train[train.size() - 1] = tmp / "logs/train.jsonl";
    const auto t = cli(train);
    REQUIRE(t.code == kExitOk);
    CHECK(slurp(tmp / "logs/train.jsonl") == t.out);
    std::istringstream lines(t.out);
    std::string line;
    std::size_t epochs = 0;
    while (std::getline(lines, line)) CHECK(nlohmann::json::parse(line)["epoch"] == ++epochs);
    CHECK(epochs == 2);

    const auto ev = cli({"evaluate", "--data", tmp / "d.bin", "--checkpoint", tmp / "m.ck", "--threads", "2"});
    REQUIRE(ev.code == kExitOk);
    CHECK(nlohmann::json::parse(ev.out).contains("map"));
    const auto pop = cli({"evaluate", "--data", tmp / "d.bin", "--model", "poprec"});
    CHECK(pop.code == kExitOk);
    CHECK(cli({"evaluate", "--data", tmp / "d.bin", "--model", "poprec", "--checkpoint", tmp / "m.ck"}).code ==
          kExitUsage);

    const auto ex = cli({"export-filters", "--checkpoint", tmp / "m.ck", "--layer", "conv1_1", "--out", tmp / "f"});
    REQUIRE(ex.code == kExitOk);
    CHECK(nlohmann::json::parse(ex.out)["grids"] == 3 * 12);
    CHECK(slurp(tmp / "f/conv1_1_o0_i0.csv").find(',') == std::string::npos);  // 1 x 1 kernels
    const auto index = slurp(tmp / "f/index.csv");
    CHECK(index.rfind("out_channel,in_channel,kernel,file\n", 0) == 0);

    const auto unknown = cli({"export-filters", "--checkpoint", tmp / "m.ck", "--layer", "fc", "--out", tmp / "g"});
    CHECK(unknown.code == kExitUsage);
    CHECK(unknown.err.find("conv2_2") != std::string::npos);

    // a 5 x 5 first kernel exported and parsed back matches the stored weights
    auto wide = common;
    for (const char* a : {"--first-kernel", "5", "--out", ""}) wide.push_back(a);
    wide.back() = tmp / "wide.ck";
    REQUIRE(cli(wide).code == kExitOk);
    REQUIRE(cli({"export-filters", "--checkpoint", tmp / "wide.ck", "--layer", "conv1_1", "--out", tmp / "w1"}).code ==
            kExitOk);
    REQUIRE(cli({"export-filters", "--checkpoint", tmp / "wide.ck", "--layer", "conv1_1", "--out", tmp / "w2"}).code ==
            kExitOk);
    std::ifstream ck_in(tmp / "wide.ck", std::ios::binary);
    const Checkpoint ck = load_checkpoint(ck_in);
    const auto& w = ck.find("conv1_1.weight")->value;
    CHECK(w.dim(2) == 5);
    for (std::size_t o = 0; o < w.dim(0); ++o) {
      for (std::size_t i = 0; i < w.dim(1); ++i) {
        const std::string file = "conv1_1_o" + std::to_string(o) + "_i" + std::to_string(i) + ".csv";
        const std::string text = slurp(tmp / ("w1/" + file));
        CHECK(text == slurp(tmp / ("w2/" + file)));
        std::istringstream rows(text);
        std::string row;
        std::size_t r = 0;
        while (std::getline(rows, row)) {
          std::istringstream cells(row);
          std::string cell;
          std::size_t c = 0;
          while (std::getline(cells, cell, ',')) {
            CHECK(std::stof(cell) == w.at(o, i, r, c));
            ++c;
          }
          CHECK(c == 5);
          ++r;
        }
        CHECK(r == 5);
      }
    }

    // vocabulary mismatch against a different dataset
    const Dataset other = Dataset::from_sequences(3, {{1, 2, 3, 1, 2}});
    {
      std::ofstream f(tmp / "other.bin", std::ios::binary);
      save_dataset(other, f);
    }
    const auto mismatch = cli({"evaluate", "--data", tmp / "other.bin", "--checkpoint", tmp / "m.ck"});
    CHECK(mismatch.code == kExitUsage);
    CHECK(mismatch.err.find("vocabulary") != std::string::npos);
  }
}
