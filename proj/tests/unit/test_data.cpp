#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "cosrec/data.hpp"

using namespace cosrec;

TEST_CASE("movielens lines") {
  std::istringstream in("1::1193::5::978300760\n2::661::3::978302109\n");
  const auto rows = parse_movielens(in);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == RawInteraction{"1", "1193", 978300760});
  std::istringstream empty("");
  CHECK(parse_movielens(empty).empty());
  std::istringstream bad("1::1193::5::978300760\n1::2::3\n");
  try {
    parse_movielens(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("gowalla lines and timestamps") {
  CHECK(parse_utc_timestamp("2010-10-19T23:55:27Z") == 1287532527);
  CHECK(parse_utc_timestamp("1970-01-01T00:00:00Z") == 0);
  CHECK(parse_utc_timestamp("2000-02-29T12:00:00Z") == 951825600);
  CHECK_THROWS(parse_utc_timestamp("2010-13-19T23:55:27Z"));
  CHECK_THROWS(parse_utc_timestamp("2010-10-19 23:55:27"));
  std::istringstream in("0\t2010-10-19T23:55:27Z\t30.2359091167\t-97.7951395833\t22847\n");
  const auto rows = parse_gowalla(in);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0] == RawInteraction{"0", "22847", 1287532527});
  std::istringstream bad("0\t2010-10-19T23:55:27Z\t1\t2\t3\n0\tnot-a-time\t1\t2\t3\n");
  try {
    parse_gowalla(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::istringstream empty("");
  CHECK(parse_gowalla(empty).empty());
}

TEST_CASE("train boundary is ceil(0.8 n)") {
  for (std::size_t n = 1; n < 200; ++n) CHECK(train_boundary(n) == static_cast<std::uint32_t>(std::ceil(0.8 * n - 1e-9)));
  CHECK(train_boundary(5) == 4);
  CHECK(train_boundary(6) == 5);
  CHECK(train_boundary(10) == 8);
}

TEST_CASE("preprocess filters, reindexes by first appearance and sorts stably") {
  // item "z" appears once; user "b" then has one action left
  const std::vector<RawInteraction> raw{
      {"a", "x", 30}, {"b", "z", 5}, {"a", "y", 10}, {"b", "x", 7}, {"a", "x", 10}, {"c", "y", 1}, {"c", "x", 2},
  };
  const Dataset d = preprocess(raw, PreprocessOptions{2, 2, 9});
  REQUIRE(d.num_users() == 2);
  CHECK(d.user_key(0) == "a");
  CHECK(d.user_key(1) == "c");
  REQUIRE(d.num_items() == 2);
  CHECK(d.item_key(1) == "x");
  CHECK(d.item_key(2) == "y");
  // a: y@10, x@10 (input order kept), x@30
  const std::vector<ItemId> a(d.sequence(0).begin(), d.sequence(0).end());
  CHECK(a == std::vector<ItemId>{2, 1, 1});
  CHECK(d.boundary(0) == 3);
  CHECK(d.options().seed == 9);
  CHECK_THROWS(preprocess(raw, PreprocessOptions{10, 1, 0}));

  // reindexing is a bijection back to the filtered log
  std::multiset<std::tuple<std::string, std::string>> back, want;
  for (UserId u = 0; u < d.num_users(); ++u)
    for (ItemId i : d.sequence(u)) back.emplace(d.user_key(u), d.item_key(i));
  for (const auto& r : raw)
    if (r.user_key != "b") want.emplace(r.user_key, r.item_key);
  CHECK(back == want);
}

TEST_CASE("dataset files round trip") {
  const std::vector<RawInteraction> raw{{"u1", "i1", 3}, {"u1", "i2", 1}, {"u2", "i1", 2}, {"u2", "i2", 2}, {"u1", "i3", 0}};
  const Dataset d = preprocess(raw, PreprocessOptions{1, 1, 4});
  std::stringstream a, b;
  save_dataset(d, a);
  save_dataset(d, b);
  CHECK(a.str() == b.str());
  const Dataset back = load_dataset(a);
  CHECK(back == d);
  std::stringstream junk("nonsense");
  CHECK_THROWS(load_dataset(junk));
  std::string cut = b.str();
  cut.resize(cut.size() - 3);
  std::stringstream truncated(cut);
  CHECK_THROWS(load_dataset(truncated));
}

TEST_CASE("windows") {
  // user 0 trains on 8 items, user 1 on 4, user 2 on 2
  const Dataset d = Dataset::from_split(10, {{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, {1, 2, 3, 4, 5}, {1, 2, 3}}, {8, 4, 2});
  const auto w = generate_windows(d, 5, 3);
  REQUIRE(w.size() == 2);
  CHECK(w[0] == TrainWindow{0, {1, 2, 3, 4, 5}, {6, 7, 8}});
  CHECK(w[1] == TrainWindow{1, {0, 0, 0, 0, 1}, {2, 3, 4}});
  CHECK(generate_windows(d, 2, 3).size() == 4 + 1);
  CHECK(last_window(d, 1, 5) == std::vector<ItemId>{0, 1, 2, 3, 4});
  CHECK(last_window(d, 0, 3) == std::vector<ItemId>{6, 7, 8});
}

TEST_CASE("validation split holds out the end of training") {
  const Dataset d = Dataset::from_sequences(20, {{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20}});
  const Dataset v = d.with_validation_split(0.1);
  CHECK(v.sequence(0).size() == 16);
  CHECK(v.test(0).size() == 1);
  CHECK(v.test(0)[0] == 16);
  CHECK_THROWS(d.with_validation_split(1.0));
}

TEST_CASE("negative sampling") {
  SUBCASE("never returns training items and is uniform over the rest") {
    const Dataset d = Dataset::from_split(10, {{2, 5, 7, 1}}, {3});
    const NegativeSampler s(d, 2);
    CHECK(s.candidate_count(0) == 7);
    Rng rng(3);
    std::map<ItemId, int> counts;
    const TrainWindow w{0, {0, 2}, {5}};
    const int rounds = 50000;  // 2 draws each = 1e5
    for (int r = 0; r < rounds; ++r) {
      for (ItemId i : s.sample(w, rng)) ++counts[i];
    }
    CHECK(counts.size() == 7);
    const double n = 2.0 * rounds, p = 1.0 / 7, sigma = std::sqrt(n * p * (1 - p));
    for (auto [item, c] : counts) {
      CHECK(item != 2);
      CHECK(item != 5);
      CHECK(item != 7);
      CHECK(std::abs(c - n * p) < 3 * sigma);
    }
  }
  SUBCASE("dense consumers use the complement") {
    const Dataset d = Dataset::from_split(5, {{1, 2, 3, 4, 5}}, {4});
    const NegativeSampler s(d, 3);
    Rng rng(1);
    for (ItemId i : s.sample(TrainWindow{0, {1}, {2, 3}}, rng)) CHECK(i == 5);
  }
  SUBCASE("users who consumed everything are rejected") {
    const Dataset d = Dataset::from_split(2, {{1, 2, 1}}, {2});
    const NegativeSampler s(d, 3);
    Rng rng(1);
    CHECK_THROWS(s.sample(TrainWindow{0, {1}, {2}}, rng));
  }
}

TEST_CASE("cyclic pattern toy") {
  const Dataset d = cyclic_pattern_dataset(200, 50, 10, 10);
  CHECK(d.num_users() == 200);
  CHECK(d.num_items() == 50);
  for (UserId u = 0; u < 200; ++u) {
    CHECK(d.train(u).size() == 8);
    std::set<ItemId> all(d.sequence(u).begin(), d.sequence(u).end());
    CHECK(all.size() == 10);
  }
  const auto s = dataset_stats(d);
  CHECK(s.actions == 2000);
  CHECK(s.actions_per_user == doctest::Approx(10.0));
}
