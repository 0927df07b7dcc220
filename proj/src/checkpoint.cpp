#include "cosrec/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace cosrec {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_string(std::ostream& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensor(std::ostream& out, const Tensor<float>& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw std::runtime_error("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

std::string get_string(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  if (n > (1u << 24)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint truncated");
  return s;
}

Tensor<float> get_tensor(std::istream& in) {
  const std::uint32_t rank = get_u32(in);
  if (rank > 8) throw std::runtime_error("checkpoint: implausible tensor rank");
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(in);
  Tensor<float> t(shape);
  for (auto& v : t.data()) v = std::bit_cast<float>(get_u32(in));
  return t;
}

}  // namespace

const StoredTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& t : tensors) out.push_back(t.name);
  return out;
}

void save_checkpoint(const Checkpoint& c, std::ostream& out) {
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  put_u32(out, kCheckpointVersion);
  put_string(out, c.run.to_json().dump());
  put_u32(out, c.num_users);
  put_u32(out, c.num_items);
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    put_string(out, t.name);
    put_tensor(out, t.value);
  }
  put_u32(out, c.adam ? 1 : 0);
  if (c.adam) {
    put_u64(out, c.adam->steps);
    put_u32(out, static_cast<std::uint32_t>(c.adam->first.size()));
    for (const auto& t : c.adam->first) put_tensor(out, t);
    for (const auto& t : c.adam->second) put_tensor(out, t);
  }
  put_string(out, c.rng_state);
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

Checkpoint load_checkpoint(std::istream& in) {
  std::string magic(kCheckpointMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kCheckpointMagic) throw std::runtime_error("not a cosrec checkpoint");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.run = RunConfig::from_json(nlohmann::json::parse(get_string(in)));
  c.num_users = get_u32(in);
  c.num_items = get_u32(in);
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = get_string(in);
    t.value = get_tensor(in);
    c.tensors.push_back(std::move(t));
  }
  if (get_u32(in) != 0) {
    StoredAdam adam;
    adam.steps = get_u64(in);
    const std::uint32_t n = get_u32(in);
    for (std::uint32_t i = 0; i < n; ++i) adam.first.push_back(get_tensor(in));
    for (std::uint32_t i = 0; i < n; ++i) adam.second.push_back(get_tensor(in));
    c.adam = std::move(adam);
  }
  c.rng_state = get_string(in);
  return c;
}

template <typename T>
Checkpoint make_checkpoint(const RunConfig& run, const CosRecModel<T>& model, const Adam<T>* optimizer,
                           const Rng& rng) {
  Checkpoint c;
  c.run = run;
  c.num_users = static_cast<std::uint32_t>(model.config().num_users);
  c.num_items = static_cast<std::uint32_t>(model.config().num_items);
  for (const auto& p : model.parameters()) c.tensors.push_back({p.name, p.value->template cast<float>()});
  for (const auto& b : model.buffers()) c.tensors.push_back({b.name, b.value->template cast<float>()});
  if (optimizer && optimizer->steps() > 0) {
    StoredAdam adam;
    adam.steps = optimizer->steps();
    for (const auto& m : optimizer->first_moments()) adam.first.push_back(m.template cast<float>());
    for (const auto& v : optimizer->second_moments()) adam.second.push_back(v.template cast<float>());
    c.adam = std::move(adam);
  }
  c.rng_state = rng.state();
  return c;
}

template <typename T>
CosRecModel<T> restore_model(const Checkpoint& c) {
  CosRecModel<T> model(c.run.model_config(c.num_users, c.num_items));
  auto load = [&](const std::string& name, Tensor<T>& dst) {
    const StoredTensor* t = c.find(name);
    if (!t) throw std::runtime_error("checkpoint lacks tensor '" + name + "'");
    if (t->value.shape() != dst.shape()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_string(t->value.shape()) +
                               ", model expects " + shape_string(dst.shape()));
    }
    dst = t->value.template cast<T>();
  };
  for (auto& p : model.parameters()) load(p.name, *p.value);
  for (auto& b : model.buffers()) load(b.name, *b.value);
  return model;
}

template <typename T>
Adam<T> restore_optimizer(const Checkpoint& c) {
  Adam<T> adam(c.run.adam_options());
  if (c.adam) {
    std::vector<Tensor<T>> first, second;
    for (const auto& m : c.adam->first) first.push_back(m.template cast<T>());
    for (const auto& v : c.adam->second) second.push_back(v.template cast<T>());
    adam.restore(c.adam->steps, std::move(first), std::move(second));
  }
  return adam;
}

template Checkpoint make_checkpoint(const RunConfig&, const CosRecModel<float>&, const Adam<float>*, const Rng&);
template Checkpoint make_checkpoint(const RunConfig&, const CosRecModel<double>&, const Adam<double>*, const Rng&);
template CosRecModel<float> restore_model(const Checkpoint&);
template CosRecModel<double> restore_model(const Checkpoint&);
template Adam<float> restore_optimizer(const Checkpoint&);
template Adam<double> restore_optimizer(const Checkpoint&);

}  // namespace cosrec
