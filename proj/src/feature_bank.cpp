#include "robdet/feature_bank.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numeric>

#include "file_io.hpp"
#include "robdet/errors.hpp"
#include "robdet/rng.hpp"

namespace robdet {

static_assert(std::endian::native == std::endian::little,
              "binary bank I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'B', 'N', 'K'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::vector<std::byte>& out, T value) {
  const auto* p = reinterpret_cast<const std::byte*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::byte> bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

FeatureBank::FeatureBank(FeatureMatrix features, std::vector<std::uint8_t> labels)
    : features_(std::move(features)), labels_(std::move(labels)) {
  if (features_.cols() == 0) throw ArgumentError("feature bank dim must be >= 1");
  if (static_cast<std::size_t>(features_.rows()) != labels_.size())
    throw ArgumentError("feature rows and labels disagree in count");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] > 1) throw ArgumentError("label outside {0,1} at sample " + std::to_string(i));
  }
  if (!features_.allFinite()) throw ArgumentError("non-finite feature value");
}

FeatureBank::FeatureBank(std::size_t dim, std::span<const Sample> samples)
    : FeatureBank(
          [&] {
            FeatureMatrix m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(dim));
            for (std::size_t i = 0; i < samples.size(); ++i) {
              if (static_cast<std::size_t>(samples[i].features.size()) != dim)
                throw ArgumentError("sample " + std::to_string(i) + " has wrong dimension");
              m.row(static_cast<Eigen::Index>(i)) = samples[i].features.transpose();
            }
            return m;
          }(),
          [&] {
            std::vector<std::uint8_t> l(samples.size());
            std::transform(samples.begin(), samples.end(), l.begin(), [](const Sample& s) { return s.label; });
            return l;
          }()) {}

FeatureBank FeatureBank::select(std::span<const std::size_t> rows) const {
  FeatureMatrix m(static_cast<Eigen::Index>(rows.size()), features_.cols());
  std::vector<std::uint8_t> l(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(rows[i]));
    l[i] = labels_.at(rows[i]);
  }
  return FeatureBank(std::move(m), std::move(l));
}

bool operator==(const FeatureBank& a, const FeatureBank& b) {
  if (a.labels_ != b.labels_ || a.features_.rows() != b.features_.rows() ||
      a.features_.cols() != b.features_.cols())
    return false;
  // bitwise, so -0.0 and 0.0 differ
  return std::memcmp(a.features_.data(), b.features_.data(),
                     sizeof(float) * static_cast<std::size_t>(a.features_.size())) == 0;
}

BankFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? BankFormat::csv : BankFormat::binary;
}

std::vector<std::byte> encode_bank_binary(const FeatureBank& bank) {
  std::vector<std::byte> out;
  out.reserve(kBankHeaderBytes + bank.size() * (bank.dim() * 4 + 1));
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.dim()));
  put<std::uint64_t>(out, bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    for (std::size_t j = 0; j < bank.dim(); ++j)
      put<float>(out, bank.features()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out.push_back(static_cast<std::byte>(bank.label(i)));
  }
  return out;
}

FeatureBank parse_bank_binary(std::span<const std::byte> bytes) {
  if (bytes.size() < kBankHeaderBytes)
    throw FormatError("truncated header at byte offset " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic at byte offset 0");
  if (auto v = get<std::uint16_t>(bytes, 4); v != kVersion)
    throw FormatError("unsupported version " + std::to_string(v) + " at byte offset 4");
  const auto dim = get<std::uint32_t>(bytes, 6);
  const auto count = get<std::uint64_t>(bytes, 10);
  if (dim == 0) throw FormatError("dim must be >= 1 at byte offset 6");

  const std::size_t record = std::size_t{dim} * 4 + 1;
  const std::size_t body = bytes.size() - kBankHeaderBytes;
  if (count > body / record) {
    const std::size_t complete = body / record;
    throw FormatError("truncated data: sample " + std::to_string(complete) + " incomplete at byte offset " +
                      std::to_string(kBankHeaderBytes + complete * record));
  }
  if (body != count * record)
    throw FormatError("trailing bytes at byte offset " + std::to_string(kBankHeaderBytes + count * record));

  FeatureMatrix m(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  std::vector<std::uint8_t> labels(count);
  std::size_t off = kBankHeaderBytes;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < dim; ++j, off += 4) {
      float v = get<float>(bytes, off);
      if (!std::isfinite(v)) throw FormatError("non-finite feature at byte offset " + std::to_string(off));
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
    auto label = static_cast<std::uint8_t>(bytes[off]);
    if (label > 1)
      throw FormatError("label " + std::to_string(label) + " outside {0,1} at byte offset " + std::to_string(off));
    labels[i] = label;
    ++off;
  }
  return FeatureBank(std::move(m), std::move(labels));
}

std::string encode_bank_csv(const FeatureBank& bank) {
  std::string out = "# dim=" + std::to_string(bank.dim()) + "\n";
  char buf[64];
  for (std::size_t i = 0; i < bank.size(); ++i) {
    for (std::size_t j = 0; j < bank.dim(); ++j) {
      // shortest round-trip representation
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf,
                                   bank.features()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out.append(buf, p);
      out.push_back(',');
    }
    out.push_back(bank.label(i) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

FeatureBank parse_bank_csv(std::string_view text) {
  std::size_t dim = 0;
  bool dim_declared = false;
  std::vector<float> values;
  std::vector<std::uint8_t> labels;

  std::size_t line_no = 0;
  std::size_t row_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty()) continue;
    auto where = [&] { return "line " + std::to_string(line_no); };

    if (line.front() == '#') {
      if (line_no != 1) throw FormatError("header only allowed on the first line, " + where());
      auto rest = trim(line.substr(1));
      if (!rest.starts_with("dim=")) throw FormatError("malformed header, " + where());
      rest.remove_prefix(4);
      auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), dim);
      if (ec != std::errc{} || p != rest.data() + rest.size() || dim == 0)
        throw FormatError("malformed dim in header, " + where());
      dim_declared = true;
      continue;
    }

    ++row_no;
    std::vector<std::string_view> fields;
    for (std::size_t start = 0;;) {
      auto comma = line.find(',', start);
      fields.push_back(trim(line.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!dim_declared && row_no == 1) {
      if (fields.size() < 2) throw FormatError("row 1 needs at least one feature and a label, " + where());
      dim = fields.size() - 1;
    }
    if (fields.size() != dim + 1)
      throw FormatError("row " + std::to_string(row_no) + " has " + std::to_string(fields.size() - 1) +
                        " values, expected " + std::to_string(dim) + ", " + where());

    for (std::size_t j = 0; j < dim; ++j) {
      auto f = fields[j];
      float v{};
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || p != f.data() + f.size())
        throw FormatError("bad number '" + std::string(f) + "' in row " + std::to_string(row_no) + ", " + where());
      if (!std::isfinite(v)) throw FormatError("non-finite value in row " + std::to_string(row_no) + ", " + where());
      values.push_back(v);
    }
    auto lf = fields.back();
    if (lf != "0" && lf != "1")
      throw FormatError("label '" + std::string(lf) + "' outside {0,1} in row " + std::to_string(row_no) + ", " +
                        where());
    labels.push_back(lf == "1" ? kReal : kFake);
  }
  if (dim == 0) throw FormatError("empty csv bank without dim header");

  FeatureMatrix m = Eigen::Map<FeatureMatrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                              static_cast<Eigen::Index>(dim));
  return FeatureBank(std::move(m), std::move(labels));
}

FeatureBank load_bank(const std::filesystem::path& path, BankFormat format) {
  auto data = detail::read_file(path);
  try {
    if (format == BankFormat::csv) return parse_bank_csv(data);
    return parse_bank_binary(std::as_bytes(std::span(data.data(), data.size())));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

FeatureBank load_bank(const std::filesystem::path& path) { return load_bank(path, format_from_path(path)); }

void save_bank(const FeatureBank& bank, const std::filesystem::path& path, BankFormat format) {
  if (format == BankFormat::csv) {
    detail::write_atomically(path, encode_bank_csv(bank));
  } else {
    auto bytes = encode_bank_binary(bank);
    detail::write_atomically(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }
}

void save_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  save_bank(bank, path, format_from_path(path));
}

ClassCounts class_counts(const FeatureBank& bank) {
  ClassCounts c;
  c.n_real = static_cast<std::size_t>(std::count(bank.labels().begin(), bank.labels().end(), kReal));
  c.n_fake = bank.size() - c.n_real;
  return c;
}

std::pair<FeatureBank, FeatureBank> split_bank(const FeatureBank& bank, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ArgumentError("val_fraction must lie in (0,1)");

  std::vector<char> to_val(bank.size(), 0);
  for (std::uint8_t cls : {kFake, kReal}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < bank.size(); ++i)
      if (bank.label(i) == cls) idx.push_back(i);
    if (idx.empty()) continue;
    auto rng = make_stream(seed, {cls});
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_val = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(idx.size())));
    if (n_val >= idx.size())
      throw ArgumentError("val_fraction leaves class " + std::to_string(cls) + " empty in the training split");
    for (std::size_t k = 0; k < n_val; ++k) to_val[idx[k]] = 1;
  }

  std::vector<std::size_t> train_rows, val_rows;
  for (std::size_t i = 0; i < bank.size(); ++i) (to_val[i] ? val_rows : train_rows).push_back(i);
  if (train_rows.empty() || val_rows.empty()) throw ArgumentError("split leaves an empty partition");
  return {bank.select(train_rows), bank.select(val_rows)};
}

FeatureBank generate_synthetic(std::size_t n_real, std::size_t n_fake, std::size_t dim, double separation,
                               std::uint64_t seed) {
  if (n_real == 0 || n_fake == 0) throw ArgumentError("n_real and n_fake must be >= 1");
  if (dim == 0) throw ArgumentError("dim must be >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw ArgumentError("separation must be finite and >= 0");

  const std::size_t n = n_real + n_fake;
  FeatureMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::vector<std::uint8_t> labels(n);
  auto rng = make_stream(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool real = i < n_real;
    labels[i] = real ? kReal : kFake;
    for (std::size_t j = 0; j < dim; ++j) {
      double v = normal(rng);
      if (j == 0) v += real ? separation / 2 : -separation / 2;
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<float>(v);
    }
  }
  return FeatureBank(std::move(m), std::move(labels));
}

}  // namespace robdet
