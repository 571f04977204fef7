#include "rotatek/trace.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace rotatek {
namespace {

using json = nlohmann::json;

// Upper bound on any single declared dimension or element count; keeps size
// arithmetic on corrupted headers far from overflow.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 40;

std::uint32_t load_u32(std::span<const std::byte> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

void store_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

std::size_t dtype_width(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
  }
  return 0;
}

std::string dtype_name(DType t) {
  switch (t) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::u8: return "u8";
  }
  return "?";
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  if (s == "u8") return DType::u8;
  throw MalformedHeader("unknown dtype '" + s + "'");
}

std::uint64_t element_count(const std::vector<std::uint64_t>& shape, const std::string& name) {
  std::uint64_t n = 1;
  for (auto dim : shape) {
    if (dim > kMaxElements || (dim != 0 && n > kMaxElements / dim)) {
      throw ManifestMismatch("tensor '" + name + "' declares an implausibly large shape");
    }
    n *= dim;
  }
  return n;
}

void check_finite(const TensorEntry& t) {
  if (t.dtype == DType::f32) {
    for (std::size_t i = 0; i * 4 < t.bytes.size(); ++i) {
      std::uint32_t bits = load_u32(t.bytes, i * 4);
      if (!std::isfinite(std::bit_cast<float>(bits))) throw NonFiniteValue(t.name, i);
    }
  } else if (t.dtype == DType::f64) {
    for (std::size_t i = 0; i * 8 < t.bytes.size(); ++i) {
      std::uint64_t bits = static_cast<std::uint64_t>(load_u32(t.bytes, i * 8)) |
                           (static_cast<std::uint64_t>(load_u32(t.bytes, i * 8 + 4)) << 32);
      if (!std::isfinite(std::bit_cast<double>(bits))) throw NonFiniteValue(t.name, i);
    }
  }
}

std::string hex_bytes(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (auto b : bytes) {
    if (!out.empty()) out += ' ';
    out += kHex[b >> 4];
    out += kHex[b & 0xF];
  }
  return out;
}

std::uint64_t as_u64(const json& j, const std::string& what) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    throw MalformedHeader(what + " must be a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

MatrixF matrix_from(std::span<const float> flat, std::size_t rows, std::size_t cols) {
  return MatrixF(rows, cols, std::vector<float>(flat.begin(), flat.end()));
}

}  // namespace

BadMagic::BadMagic(std::vector<std::uint8_t> found)
    : TraceError(TraceErrc::bad_magic, "bad magic: expected \"RTKC\", found [" + hex_bytes(found) + "]"),
      found_(std::move(found)) {}

const TensorEntry& Container::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw ManifestMismatch("missing tensor '" + name + "'");
}

std::int64_t Container::attribute(const std::string& key) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) throw MalformedHeader("missing attribute '" + key + "'");
  return it->second;
}

std::vector<std::byte> pack_f32(std::span<const float> values) {
  std::vector<std::byte> out;
  out.reserve(values.size() * 4);
  for (float v : values) store_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

std::vector<std::byte> pack_f64(std::span<const double> values) {
  std::vector<std::byte> out;
  out.reserve(values.size() * 8);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    store_u32(out, static_cast<std::uint32_t>(bits & 0xFFFFFFFFu));
    store_u32(out, static_cast<std::uint32_t>(bits >> 32));
  }
  return out;
}

std::vector<float> unpack_f32(std::span<const std::byte> bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(load_u32(bytes, i * 4));
  return out;
}

std::vector<double> unpack_f64(std::span<const std::byte> bytes) {
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint64_t bits = static_cast<std::uint64_t>(load_u32(bytes, i * 8)) |
                               (static_cast<std::uint64_t>(load_u32(bytes, i * 8 + 4)) << 32);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

std::vector<std::byte> encode_container(const Container& c) {
  json header;
  header["kind"] = c.kind;
  header["attributes"] = json::object();
  for (const auto& [k, v] : c.attributes) header["attributes"][k] = v;
  header["tensors"] = json::array();
  std::uint64_t offset = 0;
  std::set<std::string> names;
  for (const auto& t : c.tensors) {
    if (!names.insert(t.name).second) throw ManifestMismatch("duplicate tensor '" + t.name + "'");
    const std::uint64_t expected = element_count(t.shape, t.name) * dtype_width(t.dtype);
    if (expected != t.bytes.size()) {
      throw ManifestMismatch("tensor '" + t.name + "' holds " + std::to_string(t.bytes.size()) +
                             " bytes, shape implies " + std::to_string(expected));
    }
    header["tensors"].push_back({{"name", t.name},
                                 {"dtype", dtype_name(t.dtype)},
                                 {"shape", t.shape},
                                 {"segment", t.segment},
                                 {"offset", offset},
                                 {"nbytes", t.bytes.size()}});
    offset += t.bytes.size();
  }
  const std::string text = header.dump();

  std::vector<std::byte> out;
  out.reserve(12 + text.size() + offset);
  for (char ch : kTraceMagic) out.push_back(static_cast<std::byte>(ch));
  store_u32(out, kTraceVersion);
  store_u32(out, static_cast<std::uint32_t>(text.size()));
  for (char ch : text) out.push_back(static_cast<std::byte>(ch));
  for (const auto& t : c.tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  return out;
}

Container decode_container(std::span<const std::byte> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTraceMagic.data(), 4) != 0) {
    std::vector<std::uint8_t> found;
    for (std::size_t i = 0; i < std::min<std::size_t>(4, bytes.size()); ++i)
      found.push_back(static_cast<std::uint8_t>(bytes[i]));
    throw BadMagic(std::move(found));
  }
  if (bytes.size() < 12) throw TruncatedHeader(12, bytes.size());
  const std::uint32_t version = load_u32(bytes, 4);
  if (version != kTraceVersion) throw UnsupportedVersion(version);
  const std::uint64_t header_len = load_u32(bytes, 8);
  if (bytes.size() - 12 < header_len) throw TruncatedHeader(12 + header_len, bytes.size());

  json header;
  try {
    header = json::parse(reinterpret_cast<const char*>(bytes.data() + 12),
                         reinterpret_cast<const char*>(bytes.data() + 12 + header_len));
  } catch (const json::exception& e) {
    throw MalformedHeader(e.what());
  }

  Container c;
  std::uint64_t declared = 0;
  std::vector<std::uint64_t> sizes;
  try {
    if (!header.is_object()) throw MalformedHeader("header is not a JSON object");
    if (!header.contains("kind") || !header["kind"].is_string()) throw MalformedHeader("missing 'kind'");
    c.kind = header["kind"].get<std::string>();
    if (header.contains("attributes")) {
      if (!header["attributes"].is_object()) throw MalformedHeader("'attributes' is not an object");
      for (const auto& [k, v] : header["attributes"].items()) {
        if (!v.is_number_integer()) throw MalformedHeader("attribute '" + k + "' is not an integer");
        c.attributes[k] = v.get<std::int64_t>();
      }
    }
    if (!header.contains("tensors") || !header["tensors"].is_array()) throw MalformedHeader("missing 'tensors'");
    std::set<std::string> names;
    for (const auto& jt : header["tensors"]) {
      if (!jt.is_object()) throw MalformedHeader("manifest entry is not an object");
      TensorEntry t;
      if (!jt.contains("name") || !jt["name"].is_string()) throw MalformedHeader("manifest entry without name");
      t.name = jt["name"].get<std::string>();
      if (!names.insert(t.name).second) throw ManifestMismatch("duplicate tensor '" + t.name + "'");
      if (!jt.contains("dtype") || !jt["dtype"].is_string()) throw MalformedHeader("tensor '" + t.name + "' without dtype");
      t.dtype = parse_dtype(jt["dtype"].get<std::string>());
      if (!jt.contains("shape") || !jt["shape"].is_array()) throw MalformedHeader("tensor '" + t.name + "' without shape");
      for (const auto& dim : jt["shape"]) t.shape.push_back(as_u64(dim, "shape of '" + t.name + "'"));
      if (jt.contains("segment")) {
        if (!jt["segment"].is_string()) throw MalformedHeader("segment of '" + t.name + "' is not a string");
        t.segment = jt["segment"].get<std::string>();
      }
      const std::uint64_t offset = as_u64(jt.value("offset", json()), "offset of '" + t.name + "'");
      const std::uint64_t nbytes = as_u64(jt.value("nbytes", json()), "nbytes of '" + t.name + "'");
      const std::uint64_t expected = element_count(t.shape, t.name) * dtype_width(t.dtype);
      if (nbytes != expected) {
        throw ManifestMismatch("tensor '" + t.name + "' declares " + std::to_string(nbytes) +
                               " bytes but its shape implies " + std::to_string(expected));
      }
      if (offset != declared) {
        throw ManifestMismatch("tensor '" + t.name + "' starts at offset " + std::to_string(offset) +
                               ", expected " + std::to_string(declared));
      }
      declared += nbytes;
      sizes.push_back(nbytes);
      c.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw MalformedHeader(e.what());
  }

  const std::uint64_t payload = bytes.size() - 12 - header_len;
  if (payload < declared) throw TruncatedPayload(declared, payload);
  if (payload > declared) {
    throw ManifestMismatch(std::to_string(payload - declared) + " trailing bytes beyond the declared payload");
  }
  std::size_t at = 12 + header_len;
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    auto& t = c.tensors[i];
    t.bytes.assign(bytes.begin() + at, bytes.begin() + at + sizes[i]);
    at += sizes[i];
    check_finite(t);
  }
  return c;
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("failed reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void TraceData::validate() const {
  try {
    layout.validate();
  } catch (const ConfigError& e) {
    throw ManifestMismatch(e.what());
  }
  const std::size_t s = seq_len();
  const std::size_t d = layout.head_dim;
  auto check = [&](const std::vector<MatrixF>& ms, std::size_t heads, const char* name) {
    if (ms.size() != layers * heads) {
      throw ManifestMismatch(std::string(name) + " holds " + std::to_string(ms.size()) + " head matrices, expected " +
                             std::to_string(layers * heads));
    }
    for (const auto& m : ms)
      if (m.rows() != s || m.cols() != d) {
        throw ManifestMismatch(std::string(name) + " head matrix is " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()) + ", expected " + std::to_string(s) + "x" + std::to_string(d));
      }
  };
  check(queries, layout.heads_q, "Q");
  check(keys, layout.heads_kv, "K");
  check(values, layout.heads_kv, "V");
  if (!token_mask.empty() && token_mask.size() != layout.n_visual) {
    throw ManifestMismatch("token_mask has " + std::to_string(token_mask.size()) + " entries, expected " +
                           std::to_string(layout.n_visual));
  }
}

std::vector<std::byte> encode_trace(const TraceData& trace) {
  trace.validate();
  const auto& lay = trace.layout;
  Container c;
  c.kind = "trace";
  c.attributes = {{"n_visual", static_cast<std::int64_t>(lay.n_visual)},
                  {"n_text", static_cast<std::int64_t>(lay.n_text)},
                  {"head_dim", static_cast<std::int64_t>(lay.head_dim)},
                  {"heads_q", static_cast<std::int64_t>(lay.heads_q)},
                  {"heads_kv", static_cast<std::int64_t>(lay.heads_kv)},
                  {"layers", static_cast<std::int64_t>(trace.layers)}};
  auto flatten = [](const std::vector<MatrixF>& ms) {
    std::vector<float> flat;
    for (const auto& m : ms) flat.insert(flat.end(), m.data().begin(), m.data().end());
    return flat;
  };
  const std::uint64_t s = trace.seq_len();
  const std::uint64_t d = lay.head_dim;
  c.tensors.push_back({"Q", DType::f32, {trace.layers, lay.heads_q, s, d}, "prefill", pack_f32(flatten(trace.queries))});
  c.tensors.push_back({"K", DType::f32, {trace.layers, lay.heads_kv, s, d}, "prefill", pack_f32(flatten(trace.keys))});
  c.tensors.push_back({"V", DType::f32, {trace.layers, lay.heads_kv, s, d}, "prefill", pack_f32(flatten(trace.values))});
  if (!trace.token_mask.empty()) {
    std::vector<std::byte> mask(trace.token_mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = static_cast<std::byte>(trace.token_mask[i]);
    c.tensors.push_back({"token_mask", DType::u8, {lay.n_visual}, "mask", std::move(mask)});
  }
  return encode_container(c);
}

TraceData decode_trace(std::span<const std::byte> bytes) {
  const Container c = decode_container(bytes);
  if (c.kind != "trace") throw ManifestMismatch("container kind is '" + c.kind + "', expected 'trace'");

  auto count = [&](const std::string& key) {
    const std::int64_t v = c.attribute(key);
    if (v < 0 || static_cast<std::uint64_t>(v) > kMaxElements) {
      throw MalformedHeader("attribute '" + key + "' out of range");
    }
    return static_cast<std::size_t>(v);
  };
  TraceData t;
  t.layout.n_visual = count("n_visual");
  t.layout.n_text = count("n_text");
  t.layout.head_dim = count("head_dim");
  t.layout.heads_q = count("heads_q");
  t.layout.heads_kv = count("heads_kv");
  t.layers = count("layers");
  try {
    t.layout.validate();
  } catch (const ConfigError& e) {
    throw ManifestMismatch(e.what());
  }
  const std::uint64_t s = t.seq_len();
  const std::uint64_t d = t.layout.head_dim;
  if (t.layers < 1) throw ManifestMismatch("trace declares no layers");
  if (s == 0) throw ManifestMismatch("trace declares no tokens");

  auto unpack_heads = [&](const std::string& name, std::size_t heads) {
    const TensorEntry& e = c.tensor(name);
    const std::vector<std::uint64_t> want = {t.layers, heads, s, d};
    if (e.dtype != DType::f32 || e.shape != want) {
      throw ManifestMismatch("tensor '" + name + "' does not match the declared layout");
    }
    const std::vector<float> flat = unpack_f32(e.bytes);
    std::vector<MatrixF> out;
    const std::size_t per = static_cast<std::size_t>(s * d);
    for (std::size_t i = 0; i < t.layers * heads; ++i)
      out.push_back(matrix_from(std::span<const float>(flat).subspan(i * per, per), s, d));
    return out;
  };
  t.queries = unpack_heads("Q", t.layout.heads_q);
  t.keys = unpack_heads("K", t.layout.heads_kv);
  t.values = unpack_heads("V", t.layout.heads_kv);

  for (const auto& e : c.tensors) {
    if (e.name != "token_mask") continue;
    if (e.dtype != DType::u8 || e.shape != std::vector<std::uint64_t>{t.layout.n_visual}) {
      throw ManifestMismatch("token_mask does not match n_visual");
    }
    t.token_mask.resize(e.bytes.size());
    for (std::size_t i = 0; i < e.bytes.size(); ++i) {
      const auto v = static_cast<std::uint8_t>(e.bytes[i]);
      if (v > 1) throw ManifestMismatch("token_mask entry " + std::to_string(i) + " is not 0 or 1");
      t.token_mask[i] = v;
    }
  }
  return t;
}

void trace_write(const std::filesystem::path& path, const TraceData& trace) {
  const auto bytes = encode_trace(trace);
  write_file(path, bytes);
}

TraceData trace_read(const std::filesystem::path& path) { return decode_trace(read_file(path)); }

}  // namespace rotatek
