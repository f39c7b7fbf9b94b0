#include "rdcnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rdcnet/errors.hpp"

namespace rdc {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'C', 'N'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& data, const std::string& origin) : data_(data), origin_(origin) {}

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(origin_ + ": truncated at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) +
                        " more)");
    }
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * k);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& data_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

void write_tensor_values(Writer& w, const Tensor& t) {
  for (double v : t.to_vector()) w.f32(static_cast<float>(v));
}

Tensor read_tensor_values(Reader& r, const Shape& shape) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  r.need(4 * n);
  std::vector<double> values(n);
  for (auto& v : values) v = r.f32();
  return Tensor::from_values(shape, values);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string() + ": read failed");
  return bytes;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const RDCNetConfig& config, const ParamGroup& params,
                                               bool include_optimizer) {
  if (config.dilation_rates.size() > static_cast<std::size_t>(kMaxDilationRates)) {
    throw ConfigError("model.dilation_rates: at most " + std::to_string(kMaxDilationRates) + " rates serializable");
  }
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.i32(config.in_channels);
  w.i32(config.groups);
  w.i32(config.group_channels);
  w.i32(config.iterations);
  w.i32(config.scale);
  w.i32(config.stem_channels);
  w.i32(config.embedding_dim);
  w.i32(config.semantic_classes);
  w.u32(static_cast<std::uint32_t>(config.dilation_rates.size()));
  for (int k = 0; k < kMaxDilationRates; ++k) {
    w.i32(k < static_cast<int>(config.dilation_rates.size()) ? config.dilation_rates[static_cast<std::size_t>(k)] : 0);
  }
  w.f64(config.dropout_p);
  w.f64(config.leaky_slope);
  w.u8(include_optimizer ? 1 : 0);
  w.i64(include_optimizer ? params.step() : 0);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u32(static_cast<std::uint32_t>(e.value.ndim()));
    for (auto d : e.value.shape()) w.i64(d);
    write_tensor_values(w, e.value);
    if (include_optimizer) {
      write_tensor_values(w, e.first_moment);
      write_tensor_values(w, e.second_moment);
    }
  }
  return w.take();
}

void save_checkpoint(const std::filesystem::path& path, const RDCNetConfig& config, const ParamGroup& params,
                     bool include_optimizer) {
  const auto bytes = serialize_checkpoint(config, params, include_optimizer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  const std::string magic = r.str(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError(origin + ": bad magic, not an rdcnet checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(origin + ": unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  auto& c = ck.config;
  c.in_channels = r.i32();
  c.groups = r.i32();
  c.group_channels = r.i32();
  c.iterations = r.i32();
  c.scale = r.i32();
  c.stem_channels = r.i32();
  c.embedding_dim = r.i32();
  c.semantic_classes = r.i32();
  const std::uint32_t n_rates = r.u32();
  if (n_rates > static_cast<std::uint32_t>(kMaxDilationRates)) throw FormatError(origin + ": invalid dilation count");
  c.dilation_rates.clear();
  for (int k = 0; k < kMaxDilationRates; ++k) {
    const std::int32_t rate = r.i32();
    if (static_cast<std::uint32_t>(k) < n_rates) c.dilation_rates.push_back(rate);
  }
  c.dropout_p = r.f64();
  c.leaky_slope = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(origin + ": stored config invalid (" + e.what() + ")");
  }
  ck.has_optimizer = r.u8() != 0;
  const std::int64_t step = r.i64();
  const std::uint32_t n_params = r.u32();
  const auto expected = parameter_shapes(c);
  if (n_params != expected.size()) {
    throw FormatError(origin + ": " + std::to_string(n_params) + " parameter records, topology needs " +
                      std::to_string(expected.size()));
  }
  for (const auto& [want_name, want_shape] : expected) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    if (name != want_name) {
      throw FormatError(origin + ": parameter record '" + name + "' where '" + want_name + "' was expected");
    }
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw FormatError(origin + ": parameter '" + name + "' has implausible rank");
    Shape shape(ndim);
    for (auto& d : shape) d = r.i64();
    if (shape != want_shape) {
      throw ConfigError(origin + ": parameter '" + name + "' has shape " + shape_string(shape) + ", config implies " +
                        shape_string(want_shape));
    }
    Tensor value = read_tensor_values(r, shape);
    ck.params.add(name, value);
    if (ck.has_optimizer) {
      auto& e = ck.params.entries().back();
      e.first_moment = read_tensor_values(r, shape);
      e.second_moment = read_tensor_values(r, shape);
    }
  }
  if (!r.done()) throw FormatError(origin + ": trailing bytes after byte " + std::to_string(r.pos()));
  ck.params.set_step(ck.has_optimizer ? step : 0);
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path), path.string());
}

void load_checkpoint_into(const std::filesystem::path& path, ParamGroup& params) {
  Checkpoint ck = load_checkpoint(path);
  const auto& src = ck.params.entries();
  auto& dst = params.entries();
  for (std::size_t k = 0; k < std::max(src.size(), dst.size()); ++k) {
    if (k >= src.size() || k >= dst.size() || src[k].name != dst[k].name) {
      const std::string name = k < dst.size() ? dst[k].name : src[k].name;
      throw ConfigError(path.string() + ": parameter '" + name + "' missing or out of order");
    }
    if (src[k].value.shape() != dst[k].value.shape()) {
      throw ConfigError(path.string() + ": shape mismatch for parameter '" + dst[k].name + "': checkpoint " +
                        shape_string(src[k].value.shape()) + " vs model " + shape_string(dst[k].value.shape()));
    }
  }
  for (std::size_t k = 0; k < dst.size(); ++k) {
    const DType dt = dst[k].value.dtype();
    auto convert = [&](const Tensor& t) {
      const auto v = t.to_vector();
      DTypeGuard guard(dt);
      return Tensor::from_values(t.shape(), v);
    };
    Tensor value = convert(src[k].value);
    value.set_requires_grad(true);
    dst[k].value = value;
    dst[k].first_moment = convert(src[k].first_moment);
    dst[k].second_moment = convert(src[k].second_moment);
  }
  params.set_step(ck.params.step());
}

}  // namespace rdc
