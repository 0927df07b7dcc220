#include "cosrec/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace cosrec {

ParseError::ParseError(std::size_t line, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

namespace {

std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

template <typename Int>
bool parse_int(std::string_view text, Int& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace

std::vector<RawInteraction> parse_movielens(std::istream& in) {
  std::vector<RawInteraction> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string_view text = strip_cr(line);
    if (text.empty()) continue;
    const auto fields = split(text, "::");
    if (fields.size() != 4) {
      throw ParseError(number, "expected UserID::MovieID::Rating::Timestamp, got " +
                                   std::to_string(fields.size()) + " fields");
    }
    std::int64_t ts = 0;
    double rating = 0.0;
    if (fields[0].empty() || fields[1].empty()) throw ParseError(number, "empty user or item id");
    if (!parse_int(fields[3], ts) || ts < 0) throw ParseError(number, "bad timestamp '" + std::string(fields[3]) + "'");
    auto [ptr, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), rating);
    if (ec != std::errc() || ptr != fields[2].data() + fields[2].size()) {
      throw ParseError(number, "bad rating '" + std::string(fields[2]) + "'");
    }
    out.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  return out;
}

std::int64_t parse_utc_timestamp(std::string_view text) {
  // YYYY-MM-DDTHH:MM:SSZ
  if (text.size() != 20 || text[4] != '-' || text[7] != '-' || text[10] != 'T' || text[13] != ':' ||
      text[16] != ':' || text[19] != 'Z') {
    throw std::invalid_argument("malformed timestamp '" + std::string(text) + "'");
  }
  int year = 0;
  unsigned month = 0, day = 0, hour = 0, minute = 0, second = 0;
  if (!parse_int(text.substr(0, 4), year) || !parse_int(text.substr(5, 2), month) ||
      !parse_int(text.substr(8, 2), day) || !parse_int(text.substr(11, 2), hour) ||
      !parse_int(text.substr(14, 2), minute) || !parse_int(text.substr(17, 2), second)) {
    throw std::invalid_argument("malformed timestamp '" + std::string(text) + "'");
  }
  using namespace std::chrono;
  const year_month_day date{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!date.ok() || hour > 23 || minute > 59 || second > 60) {
    throw std::invalid_argument("timestamp out of range '" + std::string(text) + "'");
  }
  const auto days = sys_days{date}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + hour * 3600 + minute * 60 + second;
}

std::vector<RawInteraction> parse_gowalla(std::istream& in) {
  std::vector<RawInteraction> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string_view text = strip_cr(line);
    if (text.empty()) continue;
    const auto fields = split(text, "\t");
    if (fields.size() != 5) {
      throw ParseError(number, "expected user, check-in time, latitude, longitude, location; got " +
                                   std::to_string(fields.size()) + " fields");
    }
    if (fields[0].empty() || fields[4].empty()) throw ParseError(number, "empty user or location id");
    std::int64_t ts = 0;
    try {
      ts = parse_utc_timestamp(fields[1]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(number, e.what());
    }
    if (ts < 0) throw ParseError(number, "timestamp before epoch");
    out.push_back({std::string(fields[0]), std::string(fields[4]), ts});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::uint32_t train_boundary(std::size_t n) {
  return static_cast<std::uint32_t>((4 * n + 4) / 5);
}

std::size_t Dataset::num_actions() const {
  std::size_t n = 0;
  for (const auto& s : sequences_) n += s.size();
  return n;
}

void Dataset::validate() const {
  if (boundaries_.size() != sequences_.size() || user_keys_.size() != sequences_.size() ||
      item_keys_.size() != num_items_ + 1) {
    throw std::invalid_argument("dataset tables disagree in size");
  }
  for (std::size_t u = 0; u < sequences_.size(); ++u) {
    if (boundaries_[u] > sequences_[u].size()) {
      throw std::invalid_argument("user " + std::to_string(u) + ": boundary beyond sequence end");
    }
    for (ItemId i : sequences_[u]) {
      if (i == kPaddingItem || i > num_items_) {
        throw std::invalid_argument("user " + std::to_string(u) + ": item id " + std::to_string(i) +
                                    " outside [1, " + std::to_string(num_items_) + "]");
      }
    }
  }
}

Dataset Dataset::from_split(std::size_t num_items, std::vector<std::vector<ItemId>> sequences,
                            std::vector<std::uint32_t> boundaries) {
  Dataset d;
  d.num_items_ = num_items;
  d.sequences_ = std::move(sequences);
  d.boundaries_ = std::move(boundaries);
  for (std::size_t u = 0; u < d.sequences_.size(); ++u) d.user_keys_.push_back(std::to_string(u));
  d.item_keys_.push_back("");
  for (std::size_t i = 1; i <= num_items; ++i) d.item_keys_.push_back(std::to_string(i));
  d.options_ = {1, 1, 0};
  d.validate();
  return d;
}

Dataset Dataset::from_sequences(std::size_t num_items, std::vector<std::vector<ItemId>> sequences) {
  std::vector<std::uint32_t> boundaries;
  for (const auto& s : sequences) boundaries.push_back(train_boundary(s.size()));
  return from_split(num_items, std::move(sequences), std::move(boundaries));
}

Dataset Dataset::with_validation_split(double fraction) const {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::invalid_argument("validation fraction must be in [0, 1)");
  Dataset out = *this;
  for (std::size_t u = 0; u < sequences_.size(); ++u) {
    const std::uint32_t n = boundaries_[u];
    const auto held = static_cast<std::uint32_t>(std::floor(fraction * n));
    out.sequences_[u].resize(n);
    out.boundaries_[u] = n - held;
  }
  return out;
}

Dataset preprocess(const std::vector<RawInteraction>& raw, const PreprocessOptions& options) {
  if (options.min_user_actions < 1 || options.min_item_actions < 1) {
    throw std::invalid_argument("preprocess: thresholds must be >= 1");
  }
  std::unordered_map<std::string_view, std::size_t> item_count;
  for (const auto& r : raw) ++item_count[r.item_key];

  std::vector<std::size_t> kept;
  kept.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (item_count[raw[i].item_key] >= options.min_item_actions) kept.push_back(i);
  }
  std::unordered_map<std::string_view, std::size_t> user_count;
  for (auto i : kept) ++user_count[raw[i].user_key];
  std::erase_if(kept, [&](std::size_t i) { return user_count[raw[i].user_key] < options.min_user_actions; });
  if (kept.empty()) throw std::runtime_error("preprocess: no interactions survive filtering");

  Dataset d;
  d.options_ = options;
  d.item_keys_.push_back("");
  std::unordered_map<std::string_view, UserId> user_id;
  std::unordered_map<std::string_view, ItemId> item_id;
  std::vector<std::vector<std::size_t>> rows;
  for (auto i : kept) {
    const auto& r = raw[i];
    auto [uit, new_user] = user_id.try_emplace(r.user_key, static_cast<UserId>(rows.size()));
    if (new_user) {
      rows.emplace_back();
      d.user_keys_.push_back(r.user_key);
    }
    auto [iit, new_item] = item_id.try_emplace(r.item_key, static_cast<ItemId>(d.item_keys_.size()));
    if (new_item) d.item_keys_.push_back(r.item_key);
    rows[uit->second].push_back(i);
  }
  d.num_items_ = d.item_keys_.size() - 1;
  for (auto& user_rows : rows) {
    std::stable_sort(user_rows.begin(), user_rows.end(),
                     [&](std::size_t a, std::size_t b) { return raw[a].timestamp < raw[b].timestamp; });
    std::vector<ItemId> seq;
    seq.reserve(user_rows.size());
    for (auto i : user_rows) seq.push_back(item_id.at(raw[i].item_key));
    d.boundaries_.push_back(train_boundary(seq.size()));
    d.sequences_.push_back(std::move(seq));
  }
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                  static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), 4);
}

void put_string(std::ostream& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw std::runtime_error("dataset file truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_string(std::istream& in, std::size_t limit = 1u << 20) {
  const std::uint32_t n = get_u32(in);
  if (n > limit) throw std::runtime_error("dataset file: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("dataset file truncated");
  return s;
}

}  // namespace

void save_dataset(const Dataset& d, std::ostream& out) {
  put_string(out, kDatasetFormat);
  put_u32(out, kDatasetVersion);
  put_u32(out, static_cast<std::uint32_t>(d.num_users()));
  put_u32(out, static_cast<std::uint32_t>(d.num_items()));
  put_u32(out, d.options().min_user_actions);
  put_u32(out, d.options().min_item_actions);
  put_u32(out, static_cast<std::uint32_t>(d.options().seed & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(d.options().seed >> 32));
  for (UserId u = 0; u < d.num_users(); ++u) {
    const auto seq = d.sequence(u);
    put_u32(out, u);
    put_u32(out, static_cast<std::uint32_t>(seq.size()));
    put_u32(out, d.boundary(u));
    for (ItemId i : seq) put_u32(out, i);
  }
  for (ItemId i = 1; i <= d.num_items(); ++i) put_string(out, d.item_key(i));
  for (UserId u = 0; u < d.num_users(); ++u) put_string(out, d.user_key(u));
  if (!out) throw std::runtime_error("failed writing dataset");
}

Dataset load_dataset(std::istream& in) {
  if (get_string(in, 64) != kDatasetFormat) throw std::runtime_error("not a cosrec dataset file");
  const std::uint32_t version = get_u32(in);
  if (version != kDatasetVersion) {
    throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  }
  Dataset d;
  const std::uint32_t users = get_u32(in);
  d.num_items_ = get_u32(in);
  d.options_.min_user_actions = get_u32(in);
  d.options_.min_item_actions = get_u32(in);
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  d.options_.seed = lo | (hi << 32);
  d.sequences_.resize(users);
  d.boundaries_.resize(users);
  for (std::uint32_t u = 0; u < users; ++u) {
    if (get_u32(in) != u) throw std::runtime_error("dataset file: user records out of order");
    const std::uint32_t len = get_u32(in);
    d.boundaries_[u] = get_u32(in);
    d.sequences_[u].resize(len);
    for (auto& i : d.sequences_[u]) i = get_u32(in);
  }
  d.item_keys_.push_back("");
  for (std::size_t i = 0; i < d.num_items_; ++i) d.item_keys_.push_back(get_string(in));
  for (std::uint32_t u = 0; u < users; ++u) d.user_keys_.push_back(get_string(in));
  d.validate();
  return d;
}

DatasetStats dataset_stats(const Dataset& d) {
  DatasetStats s;
  s.users = d.num_users();
  s.items = d.num_items();
  s.actions = d.num_actions();
  s.actions_per_user = s.users ? static_cast<double>(s.actions) / static_cast<double>(s.users) : 0.0;
  s.actions_per_item = s.items ? static_cast<double>(s.actions) / static_cast<double>(s.items) : 0.0;
  return s;
}

// ---------------------------------------------------------------------------

std::vector<TrainWindow> generate_windows(const Dataset& d, std::size_t L, std::size_t T) {
  if (L == 0 || T == 0) throw std::invalid_argument("generate_windows: L and T must be >= 1");
  std::vector<TrainWindow> windows;
  for (UserId u = 0; u < d.num_users(); ++u) {
    const auto train = d.train(u);
    const std::size_t n = train.size();
    if (n >= L + T) {
      for (std::size_t start = 0; start + L + T <= n; ++start) {
        TrainWindow w;
        w.user = u;
        w.input.assign(train.begin() + start, train.begin() + start + L);
        w.targets.assign(train.begin() + start + L, train.begin() + start + L + T);
        windows.push_back(std::move(w));
      }
    } else if (n >= T + 1) {
      TrainWindow w;
      w.user = u;
      const std::size_t real = n - T;
      w.input.assign(L - real, kPaddingItem);
      w.input.insert(w.input.end(), train.begin(), train.begin() + real);
      w.targets.assign(train.begin() + real, train.end());
      windows.push_back(std::move(w));
    }
  }
  return windows;
}

std::vector<ItemId> last_window(const Dataset& d, UserId u, std::size_t L) {
  const auto train = d.train(u);
  std::vector<ItemId> w;
  const std::size_t real = std::min(L, train.size());
  w.assign(L - real, kPaddingItem);
  w.insert(w.end(), train.end() - static_cast<std::ptrdiff_t>(real), train.end());
  return w;
}

NegativeSampler::NegativeSampler(const Dataset& d, std::size_t rate) : num_items_(d.num_items()), rate_(rate) {
  consumed_.reserve(d.num_users());
  for (UserId u = 0; u < d.num_users(); ++u) {
    const auto train = d.train(u);
    std::vector<ItemId> items(train.begin(), train.end());
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    consumed_.push_back(std::move(items));
  }
}

std::size_t NegativeSampler::candidate_count(UserId user) const {
  return num_items_ - consumed_.at(user).size();
}

std::vector<ItemId> NegativeSampler::sample(const TrainWindow& window, Rng& rng) const {
  const auto& consumed = consumed_.at(window.user);
  if (candidate_count(window.user) == 0) {
    throw std::runtime_error("negative sampling: user " + std::to_string(window.user) +
                             " has consumed every item");
  }
  std::vector<ItemId> out;
  out.reserve(rate_ * window.targets.size());
  const std::size_t wanted = rate_ * window.targets.size();
  // Dense consumers draw from the explicit complement instead of rejecting.
  if (consumed.size() * 2 > num_items_) {
    std::vector<ItemId> pool;
    pool.reserve(candidate_count(window.user));
    auto it = consumed.begin();
    for (ItemId i = 1; i <= num_items_; ++i) {
      if (it != consumed.end() && *it == i) {
        ++it;
        continue;
      }
      pool.push_back(i);
    }
    for (std::size_t k = 0; k < wanted; ++k) out.push_back(pool[rng.below(pool.size())]);
    return out;
  }
  while (out.size() < wanted) {
    const auto item = static_cast<ItemId>(1 + rng.below(num_items_));
    if (!std::binary_search(consumed.begin(), consumed.end(), item)) out.push_back(item);
  }
  return out;
}

Dataset cyclic_pattern_dataset(std::size_t num_users, std::size_t num_items, std::size_t pattern_length,
                               std::size_t sequence_length) {
  if (pattern_length == 0 || num_items < pattern_length) {
    throw std::invalid_argument("cyclic_pattern_dataset: need at least one full pattern of items");
  }
  const std::size_t groups = num_items / pattern_length;
  std::vector<std::vector<ItemId>> sequences(num_users);
  for (std::size_t u = 0; u < num_users; ++u) {
    const std::size_t group = u % groups;
    const std::size_t phase = (u / groups) % pattern_length;
    for (std::size_t step = 0; step < sequence_length; ++step) {
      const std::size_t pos = (phase + step) % pattern_length;
      sequences[u].push_back(static_cast<ItemId>(group * pattern_length + pos + 1));
    }
  }
  return Dataset::from_sequences(num_items, std::move(sequences));
}

}  // namespace cosrec
