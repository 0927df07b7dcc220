#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cosrec/rng.hpp"

namespace cosrec {

using ItemId = std::uint32_t;
using UserId = std::uint32_t;

// Left-fill for windows shorter than the Markov order. Never a target,
// negative, or ranking candidate.
inline constexpr ItemId kPaddingItem = 0;

struct RawInteraction {
  std::string user_key;
  std::string item_key;
  std::int64_t timestamp = 0;

  friend bool operator==(const RawInteraction&, const RawInteraction&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// `UserID::MovieID::Rating::Timestamp`; the rating is dropped.
std::vector<RawInteraction> parse_movielens(std::istream& in);

// `user<TAB>YYYY-MM-DDTHH:MM:SSZ<TAB>lat<TAB>lon<TAB>location`; coordinates dropped.
std::vector<RawInteraction> parse_gowalla(std::istream& in);

// Seconds since the Unix epoch for a `YYYY-MM-DDTHH:MM:SSZ` string.
std::int64_t parse_utc_timestamp(std::string_view text);

struct PreprocessOptions {
  std::uint32_t min_user_actions = 5;
  std::uint32_t min_item_actions = 5;
  std::uint64_t seed = 0;

  friend bool operator==(const PreprocessOptions&, const PreprocessOptions&) = default;
};

// Users [0, |U|) and items [1, |I|], each user's sequence in chronological
// order with the first ceil(0.8 n) actions as training.
class Dataset {
 public:
  Dataset() = default;

  // Builds a dataset from already-indexed sequences, splitting each at
  // ceil(0.8 n). Keys default to the decimal ids.
  static Dataset from_sequences(std::size_t num_items, std::vector<std::vector<ItemId>> sequences);

  // Same, with explicit per-user training lengths.
  static Dataset from_split(std::size_t num_items, std::vector<std::vector<ItemId>> sequences,
                            std::vector<std::uint32_t> boundaries);

  std::size_t num_users() const { return sequences_.size(); }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_actions() const;

  std::span<const ItemId> sequence(UserId u) const { return sequences_.at(u); }
  std::span<const ItemId> train(UserId u) const { return sequence(u).first(boundaries_.at(u)); }
  std::span<const ItemId> test(UserId u) const { return sequence(u).subspan(boundaries_.at(u)); }
  std::uint32_t boundary(UserId u) const { return boundaries_.at(u); }

  const std::string& user_key(UserId u) const { return user_keys_.at(u); }
  const std::string& item_key(ItemId i) const { return item_keys_.at(i); }

  const PreprocessOptions& options() const { return options_; }

  // Restricts every user to the training portion and holds out its last
  // floor(fraction * |train|) actions as the new test portion.
  Dataset with_validation_split(double fraction) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

  friend Dataset preprocess(const std::vector<RawInteraction>&, const PreprocessOptions&);
  friend Dataset load_dataset(std::istream&);

 private:
  void validate() const;

  std::size_t num_items_ = 0;
  std::vector<std::vector<ItemId>> sequences_;
  std::vector<std::uint32_t> boundaries_;
  std::vector<std::string> user_keys_;
  std::vector<std::string> item_keys_;  // index 0 is the padding item
  PreprocessOptions options_;
};

std::uint32_t train_boundary(std::size_t sequence_length);

// Drops items with fewer than min_item_actions interactions, then users with
// fewer than min_user_actions remaining interactions (one pass each). Ids are
// assigned in order of first appearance; per-user order is a stable sort on
// timestamp.
Dataset preprocess(const std::vector<RawInteraction>& raw, const PreprocessOptions& options);

inline constexpr std::string_view kDatasetFormat = "COSREC-DATASET";
inline constexpr std::uint32_t kDatasetVersion = 1;

// Length-prefixed little-endian 32-bit binary layout.
void save_dataset(const Dataset& dataset, std::ostream& out);
Dataset load_dataset(std::istream& in);

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t actions = 0;
  double actions_per_user = 0.0;
  double actions_per_item = 0.0;
};

DatasetStats dataset_stats(const Dataset& dataset);

struct TrainWindow {
  UserId user = 0;
  std::vector<ItemId> input;    // L ids, possibly left-padded with kPaddingItem
  std::vector<ItemId> targets;  // T ids following the input

  friend bool operator==(const TrainWindow&, const TrainWindow&) = default;
};

// Every window of L inputs + T targets inside each user's training portion.
// Training portions shorter than L + T (but at least T + 1 long) yield one
// window whose input is left-padded; shorter ones yield none.
std::vector<TrainWindow> generate_windows(const Dataset& dataset, std::size_t markov_order,
                                          std::size_t horizon);

// The last L training items of a user, left-padded.
std::vector<ItemId> last_window(const Dataset& dataset, UserId user, std::size_t markov_order);

class NegativeSampler {
 public:
  NegativeSampler(const Dataset& dataset, std::size_t rate);

  std::size_t rate() const { return rate_; }

  // rate ids per target, uniform over items the user never trained on.
  std::vector<ItemId> sample(const TrainWindow& window, Rng& rng) const;

  std::size_t candidate_count(UserId user) const;

 private:
  std::size_t num_items_;
  std::size_t rate_;
  std::vector<std::vector<ItemId>> consumed_;  // sorted distinct training items
};

// 200-user style toy: users are split into groups sharing one pattern of
// pattern_length distinct items, each user walking its group's pattern from
// its own phase for sequence_length steps.
Dataset cyclic_pattern_dataset(std::size_t num_users, std::size_t num_items, std::size_t pattern_length,
                               std::size_t sequence_length);

}  // namespace cosrec
