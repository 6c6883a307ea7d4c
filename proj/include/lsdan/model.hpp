#pragma once

// Long-short distance aggregation network.
//
// One layer runs masked graph attention once per hop mask B^k with a shared
// projection W1 and score vector r, then mixes the per-hop embeddings with a
// per-node softmax over hops whose keys are W2 applied to the layer input.
// Layers stack as: first layer without residual, middle layers with
// U^{l+1} = U^l + O^l, last layer projecting to a single logit.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lsdan/graph.hpp"
#include "lsdan/tensor.hpp"

namespace lsdan {

enum class Activation { elu, relu, identity };

/// Which tensor the hop-attention keys W2·x are taken from.
enum class KeySource {
  layer_input,   // U^l at layer l (raw features at layer 1)
  raw_features,  // X at every layer
};

NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::elu, "elu"},
                                          {Activation::relu, "relu"},
                                          {Activation::identity, "identity"}})
NLOHMANN_JSON_SERIALIZE_ENUM(KeySource, {{KeySource::layer_input, "layer_input"},
                                         {KeySource::raw_features, "raw_features"}})

struct NetworkConfig {
  std::size_t kappa = 4;
  std::size_t layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t input_dim = 0;
  double leaky_slope = 0.2;
  Activation hidden_activation = Activation::elu;
  // The last layer emits raw logits for the sigmoid.
  Activation output_activation = Activation::identity;
  KeySource key = KeySource::layer_input;
  static constexpr std::size_t final_dim = 1;

  void validate() const {
    if (kappa < 1) throw ConfigError("kappa must be >= 1");
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in (0,1)");
  }

  // (d_in, d_out) of 0-based layer l.
  std::pair<std::size_t, std::size_t> layer_dims(std::size_t l) const {
    const std::size_t in = l == 0 ? input_dim : hidden_dim;
    const std::size_t out = l + 1 == layers ? final_dim : hidden_dim;
    return {in, out};
  }

  std::size_t key_dim(std::size_t l) const { return key == KeySource::raw_features ? input_dim : layer_dims(l).first; }

  Activation activation(std::size_t l) const { return l + 1 == layers ? output_activation : hidden_activation; }
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"kappa", c.kappa},
       {"layers", c.layers},
       {"hidden_dim", c.hidden_dim},
       {"input_dim", c.input_dim},
       {"leaky_slope", c.leaky_slope},
       {"hidden_activation", c.hidden_activation},
       {"output_activation", c.output_activation},
       {"key", c.key}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  j.at("kappa").get_to(c.kappa);
  j.at("layers").get_to(c.layers);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("input_dim").get_to(c.input_dim);
  j.at("leaky_slope").get_to(c.leaky_slope);
  j.at("hidden_activation").get_to(c.hidden_activation);
  j.at("output_activation").get_to(c.output_activation);
  j.at("key").get_to(c.key);
}

/// Trainable tensors of one layer.
struct LayerParams {
  Tensor w1;  // [d_out x d_in] shared projection
  Tensor r;   // [2 d_out x 1] neighbor score vector
  Tensor w2;  // [d_out x d_key] hop-attention key transform

  std::size_t in_dim() const noexcept { return w1.cols(); }
  std::size_t out_dim() const noexcept { return w1.rows(); }

  std::vector<Tensor> tensors() const { return {w1, r, w2}; }
};

using HopPatterns = std::vector<std::shared_ptr<const SparsePattern>>;

inline HopPatterns all_hops(const HopMaskSet& masks) { return masks.patterns; }

struct LayerOutput {
  std::vector<Tensor> per_hop;             // H^k, [n x d_out] each
  std::vector<Tensor> neighbor_attention;  // alpha over B^k support, [nnz_k x 1] each
  Tensor hop_attention;                    // [n x kappa], rows sum to 1
  Tensor output;                           // O, [n x d_out]
};

struct ForwardResult {
  Tensor logits;  // [n x 1]
  std::vector<LayerOutput> layers;
};

inline Tensor activate(const Tensor& x, Activation g) {
  switch (g) {
    case Activation::elu:
      return elu(x);
    case Activation::relu:
      return relu(x);
    case Activation::identity:
      return x;
  }
  return x;
}

namespace detail {

inline Tensor glorot(std::size_t rows, std::size_t cols, double fan_in, double fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor(rows, cols, std::move(v), true);
}

// Row-per-node projection: row i of the result is W x_i.
inline Tensor project(const Tensor& x, const Tensor& w) {
  if (x.cols() != w.cols())
    throw ShapeError("projection: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  return matmul(x, transpose(w));
}

}  // namespace detail

/// Glorot-uniform initialisation of every layer, deterministic per seed.
inline std::vector<LayerParams> init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::vector<LayerParams> params;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    auto [in, out] = cfg.layer_dims(l);
    const std::size_t key = cfg.key_dim(l);
    LayerParams p;
    p.w1 = detail::glorot(out, in, double(in), double(out), rng);
    p.r = detail::glorot(2 * out, 1, double(2 * out), 1.0, rng);
    p.w2 = detail::glorot(out, key, double(key), double(out), rng);
    params.push_back(std::move(p));
  }
  return params;
}

/// Masked attention over projected rows z = X W1^T, for one hop mask.
/// Scores t_ij = LeakyReLU(r_src . z_i + r_dst . z_j) are evaluated only on the
/// mask support and normalised per row; the result is g(sum_j alpha_ij z_j).
inline Tensor attend(const Tensor& z, const Tensor& r, const std::shared_ptr<const SparsePattern>& mask, double slope,
                     Activation g, Tensor* alpha_out = nullptr) {
  const std::size_t d = z.cols();
  if (r.rows() != 2 * d || r.cols() != 1)
    throw ShapeError("attention score vector " + to_string(r.shape()) + " for embedding width " + std::to_string(d));
  if (mask->rows() != z.rows() || mask->cols() != z.rows())
    throw ShapeError("hop mask " + to_string(Shape{mask->rows(), mask->cols()}) + " for " + std::to_string(z.rows()) +
                     " nodes");
  const Tensor src = matmul(z, slice_rows(r, 0, d));
  const Tensor dst = matmul(z, slice_rows(r, d, d));
  const Tensor scores = leaky_relu(edge_sum(src, dst, mask), slope);
  const Tensor alpha = segment_softmax(scores, mask);
  if (alpha_out) *alpha_out = alpha;
  return activate(edge_aggregate(alpha, z, mask), g);
}

inline Tensor short_distance_attention(const Tensor& x, const std::shared_ptr<const SparsePattern>& mask,
                                       const LayerParams& params, double slope = 0.2,
                                       Activation g = Activation::elu, Tensor* alpha_out = nullptr) {
  return attend(detail::project(x, params.w1), params.r, mask, slope, g, alpha_out);
}

/// Mixes per-hop embeddings with a per-node softmax over hops.
/// Raw weight of hop k at node i is h_i^k . (W2 key_i). Returns (O, hop attention).
inline std::pair<Tensor, Tensor> long_distance_attention(std::span<const Tensor> per_hop, const Tensor& key_input,
                                                         const LayerParams& params) {
  if (per_hop.empty()) throw ShapeError("long_distance_attention: no hop embeddings");
  const Tensor keys = detail::project(key_input, params.w2);
  std::vector<Tensor> raw;
  raw.reserve(per_hop.size());
  for (const auto& h : per_hop) {
    if (h.shape() != per_hop.front().shape())
      throw ShapeError("hop embeddings " + to_string(per_hop.front().shape()) + " vs " + to_string(h.shape()));
    raw.push_back(row_dot(h, keys));
  }
  const Tensor weights = softmax_rows(concat_rows(raw));
  Tensor out = scale_rows(per_hop[0], column(weights, 0));
  for (std::size_t k = 1; k < per_hop.size(); ++k) out = add(out, scale_rows(per_hop[k], column(weights, k)));
  return {out, weights};
}

inline LayerOutput lsdan_layer(const Tensor& x, const Tensor& key_input, const HopPatterns& masks,
                               const LayerParams& params, double slope = 0.2, Activation g = Activation::elu) {
  if (masks.empty()) throw ConfigError("lsdan_layer: at least one hop mask is required");
  LayerOutput out;
  const Tensor z = detail::project(x, params.w1);
  for (const auto& mask : masks) {
    Tensor alpha;
    out.per_hop.push_back(attend(z, params.r, mask, slope, g, &alpha));
    out.neighbor_attention.push_back(alpha);
  }
  std::tie(out.output, out.hop_attention) = long_distance_attention(out.per_hop, key_input, params);
  return out;
}

inline LayerOutput lsdan_layer(const Tensor& x, const HopMaskSet& masks, const LayerParams& params) {
  return lsdan_layer(x, x, all_hops(masks), params);
}

inline ForwardResult forward(const Tensor& x, const HopPatterns& masks, std::span<const LayerParams> params,
                             const NetworkConfig& cfg) {
  cfg.validate();
  if (params.size() != cfg.layers)
    throw ShapeError("forward: " + std::to_string(params.size()) + " parameter sets for " + std::to_string(cfg.layers) +
                     " layers");
  if (masks.size() != cfg.kappa)
    throw ConfigError("forward: " + std::to_string(masks.size()) + " hop masks for kappa=" + std::to_string(cfg.kappa));
  if (x.cols() != cfg.input_dim)
    throw ShapeError("forward: features " + to_string(x.shape()) + " for input_dim " + std::to_string(cfg.input_dim));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    auto [in, out] = cfg.layer_dims(l);
    const Shape w1{out, in}, r{2 * out, 1}, w2{out, cfg.key_dim(l)};
    if (params[l].w1.shape() != w1 || params[l].r.shape() != r || params[l].w2.shape() != w2)
      throw ShapeError("forward: layer " + std::to_string(l + 1) + " expects W1 " + to_string(w1) + ", r " +
                       to_string(r) + ", W2 " + to_string(w2));
  }

  ForwardResult result;
  Tensor u = x;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const Tensor& key = cfg.key == KeySource::raw_features ? x : u;
    LayerOutput layer = lsdan_layer(u, key, masks, params[l], cfg.leaky_slope, cfg.activation(l));
    const bool first = l == 0;
    const bool last = l + 1 == cfg.layers;
    if (last)
      result.logits = layer.output;
    else
      u = first ? layer.output : add(u, layer.output);
    result.layers.push_back(std::move(layer));
  }
  return result;
}

inline ForwardResult forward(const Tensor& x, const HopMaskSet& masks, std::span<const LayerParams> params,
                             const NetworkConfig& cfg) {
  return forward(x, all_hops(masks), params, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON
//   {"format": "lsdan-checkpoint", "version": 1, "network": {...NetworkConfig},
//    "layers": [{"W1": T, "r": T, "W2": T}, ...]}
// with T = {"rows": r, "cols": c, "values": [row-major doubles]}.

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j, bool requires_grad) {
  return Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("values").get<std::vector<double>>(), requires_grad);
}

inline nlohmann::json checkpoint_to_json(const NetworkConfig& cfg, std::span<const LayerParams> params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& p : params)
    layers.push_back({{"W1", tensor_to_json(p.w1)}, {"r", tensor_to_json(p.r)}, {"W2", tensor_to_json(p.w2)}});
  return {{"format", "lsdan-checkpoint"}, {"version", kCheckpointVersion}, {"network", cfg}, {"layers", layers}};
}

struct Checkpoint {
  NetworkConfig network;
  std::vector<LayerParams> params;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "lsdan-checkpoint") throw ConfigError("not an lsdan checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  Checkpoint c;
  c.network = j.at("network").get<NetworkConfig>();
  for (const auto& l : j.at("layers"))
    c.params.push_back({tensor_from_json(l.at("W1"), true), tensor_from_json(l.at("r"), true),
                        tensor_from_json(l.at("W2"), true)});
  if (c.params.size() != c.network.layers) throw ConfigError("checkpoint layer count does not match its config");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& cfg,
                            std::span<const LayerParams> params) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << checkpoint_to_json(cfg, params).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  try {
    return checkpoint_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

}  // namespace lsdan
