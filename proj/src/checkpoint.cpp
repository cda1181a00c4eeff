#include "salprune/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace salprune {
namespace {

using Kind = CheckpointError::Kind;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > end_) {
      throw CheckpointError(Kind::truncated, std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; checkpoints are far below 4 GiB.
  c = crc32(c, data, static_cast<uInt>(n));
  return static_cast<std::uint32_t>(c);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string encode_header(const ModelState& m) {
  const auto& d = m.descriptor;
  const auto& p = m.provenance;
  std::ostringstream os;
  os << "input=" << d.channels << ',' << d.height << ',' << d.width << '\n';
  os << "layers=" << d.layers_string() << '\n';
  os << "classes=" << d.classes << '\n';
  os << "seed=" << p.seed << '\n';
  os << "regime=" << p.regime << '\n';
  os << "pruning=" << p.pruning << '\n';
  os << "epochs=" << p.epochs << '\n';
  os << "epsilon=" << format_double(p.epsilon) << '\n';
  os << "history=" << p.history << '\n';
  return os.str();
}

template <typename T>
T parse_number(const std::string& s, const char* key) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw CheckpointError(Kind::malformed, std::string("checkpoint header: bad value for ") + key + ": '" + s + "'");
  }
  return v;
}

void decode_header(const std::string& text, ModelState& m) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(Kind::malformed, "checkpoint header line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError(Kind::malformed, std::string("checkpoint header missing key ") + key);
    return it->second;
  };
  auto& d = m.descriptor;
  if (std::sscanf(get("input").c_str(), "%d,%d,%d", &d.channels, &d.height, &d.width) != 3) {
    throw CheckpointError(Kind::malformed, "checkpoint header: bad input shape");
  }
  try {
    d.layers = ArchitectureDescriptor::parse_layers(get("layers"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::malformed, std::string("checkpoint header: ") + e.what());
  }
  d.classes = parse_number<int>(get("classes"), "classes");
  auto& p = m.provenance;
  p.seed = parse_number<std::uint64_t>(get("seed"), "seed");
  p.regime = get("regime");
  p.pruning = get("pruning");
  p.epochs = parse_number<int>(get("epochs"), "epochs");
  p.epsilon = std::strtod(get("epsilon").c_str(), nullptr);
  p.history = get("history");
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelState& model) {
  Writer w;
  w.bytes("PSCK", 4);
  w.u32(kCheckpointVersion);
  const std::string header = encode_header(model);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header.data(), header.size());
  w.u32(static_cast<std::uint32_t>(model.parameters.size() * 2));
  for (const auto& p : model.parameters) {
    for (std::uint8_t kind = 0; kind < 2; ++kind) {
      w.u16(static_cast<std::uint16_t>(p.name.size()));
      w.bytes(p.name.data(), p.name.size());
      w.u8(static_cast<std::uint8_t>(p.value.rank()));
      for (int dim : p.value.shape()) w.u32(static_cast<std::uint32_t>(dim));
      w.u8(kind);
      if (kind == 0) {
        for (double v : p.value.data()) w.f32(static_cast<float>(v));
      } else {
        w.bytes(p.mask.data(), p.mask.size());
      }
    }
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc32_of(buf.data(), buf.size());
  w.u32(crc);
  return std::move(buf);
}

ModelState decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw CheckpointError(Kind::truncated, "checkpoint truncated: no magic");
  if (std::memcmp(bytes.data(), "PSCK", 4) != 0) throw CheckpointError(Kind::bad_magic, "not a checkpoint: bad magic");
  Reader r(bytes, bytes.size());
  r.text(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::version_mismatch, "checkpoint version " + std::to_string(version) +
                                                      " unsupported (expected " +
                                                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t header_len = r.u32("header length");
  const std::string header = r.text(header_len, "header");

  struct Entry {
    std::string name;
    Shape shape;
    std::uint8_t kind;
    std::vector<float> values;
    std::vector<std::uint8_t> mask;
  };
  const std::uint32_t count = r.u32("entry count");
  std::vector<Entry> entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    Entry en;
    const std::uint16_t nlen = r.u16("entry name length");
    en.name = r.text(nlen, "entry name");
    const std::uint8_t rank = r.u8("entry rank");
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::uint32_t dim = r.u32("entry dims");
      en.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    en.kind = r.u8("payload kind");
    if (en.kind == 0) {
      r.need(4 * n, "parameter payload");
      en.values.resize(n);
      for (auto& v : en.values) v = r.f32("parameter payload");
    } else if (en.kind == 1) {
      r.need(n, "mask payload");
      en.mask.resize(n);
      for (auto& v : en.mask) v = r.u8("mask payload");
    } else {
      throw CheckpointError(Kind::malformed, "unknown payload kind " + std::to_string(en.kind));
    }
    entries.push_back(std::move(en));
  }
  if (bytes.size() - r.pos() < 4) throw CheckpointError(Kind::truncated, "checkpoint truncated: missing crc32");
  if (bytes.size() - r.pos() > 4) throw CheckpointError(Kind::malformed, "trailing bytes after checkpoint crc32");
  const std::uint32_t stored = r.u32("crc32");
  const std::uint32_t actual = crc32_of(bytes.data(), bytes.size() - 4);
  if (stored != actual) throw CheckpointError(Kind::checksum, "checkpoint checksum mismatch");

  ModelState m;
  decode_header(header, m);
  ModelState fresh;
  try {
    fresh = init_model(m.descriptor, 0);
  } catch (const ShapeError& e) {
    throw CheckpointError(Kind::malformed, std::string("checkpoint descriptor invalid: ") + e.what());
  }
  if (entries.size() != fresh.parameters.size() * 2) {
    throw CheckpointError(Kind::malformed, "checkpoint entry count does not match descriptor");
  }
  m.parameters = std::move(fresh.parameters);
  for (std::size_t i = 0; i < m.parameters.size(); ++i) {
    Parameter& p = m.parameters[i];
    const Entry& ve = entries[2 * i];
    const Entry& me = entries[2 * i + 1];
    if (ve.name != p.name || me.name != p.name || ve.kind != 0 || me.kind != 1 ||
        ve.shape != p.value.shape() || me.shape != p.value.shape()) {
      throw CheckpointError(Kind::malformed, "checkpoint entry mismatch at parameter " + p.name);
    }
    for (std::size_t j = 0; j < ve.values.size(); ++j) p.value[j] = static_cast<double>(ve.values[j]);
    for (std::uint8_t v : me.mask)
      if (v > 1) throw CheckpointError(Kind::malformed, "non-binary mask value in " + p.name);
    p.mask = me.mask;
  }
  return m;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(Kind::io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

ModelState quantized_f32(const ModelState& model) {
  ModelState q = model;
  for (auto& p : q.parameters)
    for (auto& v : p.value.data()) v = static_cast<double>(static_cast<float>(v));
  return q;
}

}  // namespace salprune
