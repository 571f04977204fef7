#include <string>

#include "rotatek/trace.hpp"

namespace rotatek {
namespace {

std::string key(std::size_t head, const char* field) { return "kv" + std::to_string(head) + "." + field; }

TensorEntry f32_entry(std::string name, const MatrixF& m, const char* segment) {
  return {std::move(name), DType::f32, {m.rows(), m.cols()}, segment, pack_f32(m.data())};
}

MatrixF f32_matrix(const Container& c, const std::string& name, std::size_t cols) {
  const TensorEntry& e = c.tensor(name);
  if (e.dtype != DType::f32 || e.shape.size() != 2 || e.shape[1] != cols) {
    throw ManifestMismatch("tensor '" + name + "' has an unexpected dtype or shape");
  }
  return MatrixF(e.shape[0], e.shape[1], unpack_f32(e.bytes));
}

std::vector<double> f64_tensor(const Container& c, const std::string& name, std::vector<std::uint64_t> shape) {
  const TensorEntry& e = c.tensor(name);
  if (e.dtype != DType::f64 || e.shape != shape) {
    throw ManifestMismatch("tensor '" + name + "' has an unexpected dtype or shape");
  }
  return unpack_f64(e.bytes);
}

}  // namespace

std::vector<std::byte> encode_cache(const CompressedCache& cache) {
  const auto& lay = cache.layout;
  Container c;
  c.kind = "compressed_cache";
  c.attributes = {{"n_visual", static_cast<std::int64_t>(lay.n_visual)},
                  {"n_text", static_cast<std::int64_t>(lay.n_text)},
                  {"head_dim", static_cast<std::int64_t>(lay.head_dim)},
                  {"heads_q", static_cast<std::int64_t>(lay.heads_q)},
                  {"heads_kv", static_cast<std::int64_t>(lay.heads_kv)},
                  {"layer", static_cast<std::int64_t>(cache.layer)},
                  {"n_kept", static_cast<std::int64_t>(cache.n_kept)},
                  {"rank", static_cast<std::int64_t>(cache.rank())}};
  for (std::size_t h = 0; h < cache.heads.size(); ++h) {
    const auto& head = cache.heads[h];
    const auto& rot = head.rotation;
    c.tensors.push_back(f32_entry(key(h, "visual_keys_rot"), head.visual_keys_rot, "visual"));
    c.tensors.push_back(f32_entry(key(h, "visual_values"), head.visual_values, "visual"));
    c.tensors.push_back(f32_entry(key(h, "text_keys"), head.text_keys, "text"));
    c.tensors.push_back(f32_entry(key(h, "text_values"), head.text_values, "text"));
    c.tensors.push_back({key(h, "basis"), DType::f64, {rot.basis.rows(), rot.basis.cols()}, "rotation",
                         pack_f64(rot.basis.data())});
    c.tensors.push_back({key(h, "mean"), DType::f64, {rot.mean.size()}, "rotation", pack_f64(rot.mean)});
    c.tensors.push_back(
        {key(h, "mean_residual"), DType::f64, {rot.mean_residual.size()}, "rotation", pack_f64(rot.mean_residual)});
  }
  return encode_container(c);
}

CompressedCache decode_cache(std::span<const std::byte> bytes) {
  const Container c = decode_container(bytes);
  if (c.kind != "compressed_cache") {
    throw ManifestMismatch("container kind is '" + c.kind + "', expected 'compressed_cache'");
  }
  auto count = [&](const char* name) {
    const std::int64_t v = c.attribute(name);
    if (v < 0 || v > (std::int64_t{1} << 40)) throw MalformedHeader(std::string("attribute '") + name + "' out of range");
    return static_cast<std::size_t>(v);
  };
  CompressedCache cache;
  cache.layout.n_visual = count("n_visual");
  cache.layout.n_text = count("n_text");
  cache.layout.head_dim = count("head_dim");
  cache.layout.heads_q = count("heads_q");
  cache.layout.heads_kv = count("heads_kv");
  cache.layer = count("layer");
  cache.n_kept = count("n_kept");
  const std::size_t rank = count("rank");
  try {
    cache.layout.validate();
  } catch (const ConfigError& e) {
    throw ManifestMismatch(e.what());
  }
  const std::size_t d = cache.layout.head_dim;
  if (rank < 1 || rank > d) throw ManifestMismatch("rank outside [1, head_dim]");

  cache.heads.resize(cache.layout.heads_kv);
  for (std::size_t h = 0; h < cache.heads.size(); ++h) {
    auto& head = cache.heads[h];
    head.visual_keys_rot = f32_matrix(c, key(h, "visual_keys_rot"), rank);
    head.visual_values = f32_matrix(c, key(h, "visual_values"), d);
    head.text_keys = f32_matrix(c, key(h, "text_keys"), d);
    head.text_values = f32_matrix(c, key(h, "text_values"), d);
    if (head.visual_keys_rot.rows() != cache.n_kept || head.visual_values.rows() != cache.n_kept ||
        head.text_keys.rows() != cache.layout.n_text || head.text_values.rows() != cache.layout.n_text) {
      throw ManifestMismatch("kv head " + std::to_string(h) + " token counts disagree with the layout");
    }
    head.rotation.basis = Matrix(d, rank, f64_tensor(c, key(h, "basis"), {d, rank}));
    head.rotation.mean = f64_tensor(c, key(h, "mean"), {d});
    head.rotation.mean_residual = f64_tensor(c, key(h, "mean_residual"), {d});
    head.rank_exceeds_tokens = rank > cache.n_kept;
  }
  return cache;
}

}  // namespace rotatek
