#include "robdet/checkpoint.hpp"

#include <cstring>
#include <utility>

#include "file_io.hpp"
#include "robdet/errors.hpp"

namespace robdet {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'P', 'C'};
constexpr std::uint16_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  template <typename Derived>
  void put_all(const Eigen::DenseBase<Derived>& m) {
    // row-major traversal regardless of storage order
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(m(r, c));
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  template <typename T>
  T get() {
    if (in_.size() - pos_ < sizeof(T)) throw FormatError("truncated checkpoint at byte offset " + std::to_string(pos_));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  template <typename Derived>
  void get_all(Eigen::DenseBase<Derived>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>();
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  const auto& spec = p.spec;
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.input_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.hidden_dims.size()));
  for (auto h : spec.hidden_dims) w.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  w.put<double>(spec.dropout_rate);
  w.put<double>(spec.bn_epsilon);
  w.put<double>(spec.bn_momentum);
  w.put<std::uint8_t>(spec.batch_norm ? 1 : 0);
  for (const auto& l : p.hidden) {
    w.put_all(l.weight);
    w.put_all(l.bias);
    w.put_all(l.bn_scale);
    w.put_all(l.bn_shift);
    w.put_all(l.running_mean);
    w.put_all(l.running_var);
  }
  w.put_all(p.out_weight);
  w.put<double>(p.out_bias);
  w.put<std::uint8_t>(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const auto& s = *ckpt.optimizer;
    if (s.first.size() != blocks(p).size()) throw ArgumentError("optimizer state does not match model");
    w.put<std::uint64_t>(s.step);
    for (std::size_t i = 0; i < s.first.size(); ++i) {
      w.put_all(s.first[i]);
      w.put_all(s.second[i]);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  Reader r(bytes);
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic at byte offset 0");
  if (auto v = r.get<std::uint16_t>(); v != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v) + " at byte offset 4");

  MlpSpec spec;
  spec.input_dim = r.get<std::uint32_t>();
  const auto n_hidden = r.get<std::uint32_t>();
  if (n_hidden > 4096) throw FormatError("implausible hidden layer count at byte offset 10");
  spec.hidden_dims.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) spec.hidden_dims.push_back(r.get<std::uint32_t>());
  spec.dropout_rate = r.get<double>();
  spec.bn_epsilon = r.get<double>();
  spec.bn_momentum = r.get<double>();
  const auto spec_end = r.offset();
  spec.batch_norm = r.get<std::uint8_t>() != 0;
  try {
    spec.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("invalid model spec ending at byte offset ") + std::to_string(spec_end) + ": " +
                      e.what());
  }

  {
    // overflow-safe count of the doubles the shapes require
    const std::size_t budget = (bytes.size() - r.offset()) / sizeof(double);
    std::size_t need = 1, fan_in = spec.input_dim;
    bool fits = fan_in <= budget;
    for (auto h : spec.hidden_dims) {
      if (!fits) break;
      fits = h <= budget && fan_in + 5 <= (budget - need) / h;
      if (fits) need += h * (fan_in + 5);
      fan_in = h;
    }
    fits = fits && fan_in <= budget - need;
    if (!fits)
      throw FormatError("checkpoint too short for its declared shapes at byte offset " + std::to_string(r.offset()));
  }

  Checkpoint ckpt;
  // shapes come from a zero-seeded init, values are overwritten below
  ckpt.params = zeros_like(init_params<double>(spec, 0));
  auto& p = ckpt.params;
  for (auto& l : p.hidden) {
    r.get_all(l.weight);
    r.get_all(l.bias);
    r.get_all(l.bn_scale);
    r.get_all(l.bn_shift);
    r.get_all(l.running_mean);
    r.get_all(l.running_var);
  }
  r.get_all(p.out_weight);
  p.out_bias = r.get<double>();

  for (std::size_t i = 0; i < p.hidden.size(); ++i)
    if (!(p.hidden[i].running_var.array() > 0).all())
      throw FormatError("non-positive running variance in hidden layer " + std::to_string(i));
  for (const auto& b : blocks(std::as_const(p)))
    if (!b.allFinite()) throw FormatError("non-finite parameter in checkpoint");

  const auto flag_at = r.offset();
  const auto has_opt = r.get<std::uint8_t>();
  if (has_opt > 1) throw FormatError("bad optimizer flag at byte offset " + std::to_string(flag_at));
  if (has_opt) {
    auto s = AdamWState<double>::zeros_for(p);
    s.step = r.get<std::uint64_t>();
    for (std::size_t i = 0; i < s.first.size(); ++i) {
      r.get_all(s.first[i]);
      r.get_all(s.second[i]);
    }
    ckpt.optimizer = std::move(s);
  }
  if (!r.done()) throw FormatError("trailing bytes at byte offset " + std::to_string(r.offset()));
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto bytes = encode_checkpoint(ckpt);
  detail::write_atomically(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto data = detail::read_file(path);
  try {
    return decode_checkpoint(std::as_bytes(std::span(data.data(), data.size())));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace robdet
