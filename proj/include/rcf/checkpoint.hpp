#pragma once

// Versioned binary checkpoint. Layout, all integers and doubles little-endian:
//
//   "RCFC1"
//   u8 cell_kind | u64 layer_count | u64 units[layer_count]
//   u64 filters | u64 kernel_len | u64 window_size
//   u8 hidden_activation | u8 output_activation | u8 convlstm_g_activation
//   u64 init_seed | u64 shuffle_seed
//   u64 tensor_count, then per tensor: u64 rows | u64 cols | f64 values[rows*cols]
//   u64 history_len | f64 history[history_len]
//   u64 scaler_entries, then per entry: u64 name_len | name bytes | f64 min | f64 max
//   i64 scaler_fitted_through

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "rcf/errors.hpp"
#include "rcf/model.hpp"

namespace rcf {

inline constexpr std::string_view kCheckpointMagic = "RCFC1";

namespace detail {

class ByteWriter {
 public:
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::vector<char> take() { return std::move(bytes_); }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

  std::string_view raw(std::size_t n) {
    need(n);
    std::string_view s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  /// A count that must fit in what is left of the stream at `unit` bytes each.
  std::size_t count(std::size_t unit) {
    const std::uint64_t n = u64();
    if (unit != 0 && n > (bytes_.size() - pos_) / unit) {
      throw FormatError("checkpoint truncated: count " + std::to_string(n) + " exceeds stream");
    }
    return static_cast<std::size_t>(n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }

  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

template <class Enum>
Enum enum_from(std::uint8_t v, std::uint8_t max, const char* what) {
  if (v > max) throw FormatError(std::string("checkpoint has invalid ") + what + " tag");
  return static_cast<Enum>(v);
}

}  // namespace detail

inline std::vector<char> checkpoint_save(const TrainedModel& model) {
  detail::ByteWriter w;
  const ModelSpec& s = model.spec;
  w.raw(kCheckpointMagic);
  w.u8(static_cast<std::uint8_t>(s.cell_kind));
  w.u64(s.layer_units.size());
  for (std::size_t u : s.layer_units) w.u64(u);
  w.u64(s.filters);
  w.u64(s.kernel_len);
  w.u64(s.window_size);
  w.u8(static_cast<std::uint8_t>(s.hidden_activation));
  w.u8(static_cast<std::uint8_t>(s.output_activation));
  w.u8(static_cast<std::uint8_t>(s.convlstm_g_activation));
  w.u64(model.init_seed);
  w.u64(model.shuffle_seed);

  const auto tensors = model.net.tensors();
  w.u64(tensors.size());
  for (const Matrix* t : tensors) {
    w.u64(t->rows());
    w.u64(t->cols());
    for (double v : t->values()) w.f64(v);
  }
  w.u64(model.history.size());
  for (double v : model.history) w.f64(v);
  w.u64(model.scaler.ranges().size());
  for (const auto& [name, r] : model.scaler.ranges()) {
    w.u64(name.size());
    w.raw(name);
    w.f64(r.min);
    w.f64(r.max);
  }
  w.i64(model.scaler.fitted_through);
  return w.take();
}

inline TrainedModel checkpoint_load(std::span<const char> bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() ||
      r.raw(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("not a checkpoint: bad magic or unsupported version");
  }
  TrainedModel m;
  ModelSpec& s = m.spec;
  s.cell_kind = detail::enum_from<CellKind>(r.u8(), 4, "cell kind");
  s.layer_units.resize(r.count(8));
  for (auto& u : s.layer_units) u = r.u64();
  s.filters = r.u64();
  s.kernel_len = r.u64();
  s.window_size = r.u64();
  s.hidden_activation = detail::enum_from<ActivationKind>(r.u8(), 3, "activation");
  s.output_activation = detail::enum_from<ActivationKind>(r.u8(), 3, "activation");
  s.convlstm_g_activation = detail::enum_from<ActivationKind>(r.u8(), 3, "activation");
  m.init_seed = r.u64();
  m.shuffle_seed = r.u64();
  try {
    m.net = init_network(s, 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint spec is invalid: ") + e.what());
  }

  auto tensors = m.net.tensors();
  const std::size_t n = r.count(16);
  if (n != tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(n) + " tensors, spec implies " +
                      std::to_string(tensors.size()));
  }
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t rows = r.u64(), cols = r.u64();
    if (rows != tensors[k]->rows() || cols != tensors[k]->cols()) {
      throw FormatError("checkpoint tensor " + std::to_string(k) + " is " + std::to_string(rows) +
                        "x" + std::to_string(cols) + ", spec implies " + tensors[k]->shape_str());
    }
    for (double& v : tensors[k]->values()) v = r.f64();
  }
  m.history.resize(r.count(8));
  for (double& v : m.history) v = r.f64();
  const std::size_t entries = r.count(24);
  for (std::size_t k = 0; k < entries; ++k) {
    const std::string name(r.raw(r.count(1)));
    const double lo = r.f64(), hi = r.f64();
    try {
      m.scaler.set(name, {lo, hi});
    } catch (const DataError& e) {
      throw FormatError(std::string("checkpoint scaler: ") + e.what());
    }
  }
  m.scaler.fitted_through = static_cast<int>(r.i64());
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  return m;
}

/// Write-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

inline void checkpoint_save_file(const TrainedModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_save(model));
}

inline TrainedModel checkpoint_load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_load(bytes);
}

}  // namespace rcf
