#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lsdan/bit_matrix.hpp"
#include "lsdan/errors.hpp"

namespace lsdan {

using Edge = std::pair<std::size_t, std::size_t>;

struct EdgeReport {
  std::size_t input_edges = 0;
  std::size_t self_edges_dropped = 0;
  std::size_t duplicates_merged = 0;
};

/// Undirected, unweighted graph on n nodes with a zero diagonal.
class Adjacency {
 public:
  Adjacency() = default;

  std::size_t n() const noexcept { return dense_.rows(); }
  // Unique undirected edges as (i, j) with i < j, sorted.
  std::span<const Edge> edges() const noexcept { return edges_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  const BitMatrix& dense() const noexcept { return dense_; }
  const SparsePattern& neighbors() const noexcept { return neighbors_; }
  const EdgeReport& report() const noexcept { return report_; }
  bool connected(std::size_t i, std::size_t j) const noexcept { return dense_.get(i, j); }
  std::size_t degree(std::size_t i) const noexcept { return neighbors_.row(i).size(); }

 private:
  friend Adjacency build_adjacency(std::span<const Edge>, std::size_t);

  std::vector<Edge> edges_;
  BitMatrix dense_;
  SparsePattern neighbors_;
  EdgeReport report_;
};

/// Symmetric closure of an edge list. Self-edges are dropped and counted,
/// repeated edges (in either direction) collapse to one.
inline Adjacency build_adjacency(std::span<const Edge> edges, std::size_t n) {
  Adjacency adj;
  adj.report_.input_edges = edges.size();
  adj.edges_.reserve(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    auto [a, b] = edges[k];
    if (a >= n || b >= n)
      throw ParseError("edge list", k + 1,
                       "node id out of range (" + std::to_string(a) + ", " + std::to_string(b) + ") for n=" +
                           std::to_string(n));
    if (a == b) {
      ++adj.report_.self_edges_dropped;
      continue;
    }
    adj.edges_.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(adj.edges_.begin(), adj.edges_.end());
  const auto before = adj.edges_.size();
  adj.edges_.erase(std::unique(adj.edges_.begin(), adj.edges_.end()), adj.edges_.end());
  adj.report_.duplicates_merged = before - adj.edges_.size();

  adj.dense_ = BitMatrix(n, n);
  for (auto [a, b] : adj.edges_) {
    adj.dense_.set(a, b);
    adj.dense_.set(b, a);
  }
  adj.neighbors_ = SparsePattern(adj.dense_);
  return adj;
}

enum class WalkMode {
  // B^k marks length-k walks on A + I: hops accumulate, no row is ever empty.
  with_self_loops,
  // B^k marks length-k walks on A itself. Rows left empty receive their
  // diagonal entry so that attention stays defined; see patched_rows.
  exact,
};

/// Boolean k-hop reachability masks B^1..B^kappa. Immutable once built.
struct HopMaskSet {
  std::size_t kappa = 0;
  bool with_self_loops = true;
  std::vector<BitMatrix> masks;
  std::vector<std::shared_ptr<const SparsePattern>> patterns;
  // Per hop, rows that had no walk and were given a self entry (exact mode only).
  std::vector<std::size_t> patched_rows;

  std::size_t n() const noexcept { return masks.empty() ? 0 : masks.front().rows(); }
  const BitMatrix& mask(std::size_t k) const { return masks.at(k - 1); }  // 1-based hop
  const std::shared_ptr<const SparsePattern>& pattern(std::size_t k) const { return patterns.at(k - 1); }
};

namespace detail {

// out = base · prev over the boolean semiring, row by row:
// row i of out is the OR of rows prev[j] for every j adjacent to i in base.
inline BitMatrix boolean_product(const SparsePattern& base, const BitMatrix& prev) {
  BitMatrix out(prev.rows(), prev.cols());
  const std::size_t w = prev.words_per_row();
  for (std::size_t i = 0; i < base.rows(); ++i) {
    auto dst = out.row_words(i);
    for (auto j : base.row(i)) {
      auto src = prev.row_words(j);
      for (std::size_t k = 0; k < w; ++k) dst[k] |= src[k];
    }
  }
  return out;
}

}  // namespace detail

inline HopMaskSet compute_hop_masks(const Adjacency& adj, std::size_t kappa, WalkMode mode = WalkMode::with_self_loops) {
  if (kappa < 1) throw ConfigError("compute_hop_masks: kappa must be >= 1");
  const std::size_t n = adj.n();
  HopMaskSet set;
  set.kappa = kappa;
  set.with_self_loops = mode == WalkMode::with_self_loops;

  BitMatrix base = adj.dense();
  if (set.with_self_loops)
    for (std::size_t i = 0; i < n; ++i) base.set(i, i);
  const SparsePattern base_rows(base);

  BitMatrix power = base;
  for (std::size_t k = 1; k <= kappa; ++k) {
    if (k > 1) power = detail::boolean_product(base_rows, power);
    BitMatrix mask = power;
    std::size_t patched = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask.row_count(i) == 0) {
        mask.set(i, i);
        ++patched;
      }
    set.patched_rows.push_back(patched);
    set.patterns.push_back(std::make_shared<const SparsePattern>(mask));
    set.masks.push_back(std::move(mask));
  }
  return set;
}

// ---------------------------------------------------------------------------
// On-disk mask cache.
//
// Little-endian layout:
//   char[8]  magic "LSDANHOP"
//   u32      format version (1)
//   u64      n
//   u32      kappa
//   u8       with_self_loops
//   u64      dataset hash
//   kappa x { u64 patched_rows; n * ceil(n/64) u64 row words }

inline constexpr std::uint32_t kHopCacheVersion = 1;

/// FNV-1a, 64-bit. Used to key caches on dataset contents.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace detail {

template <class T>
void write_pod(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "mask cache assumes a little-endian host");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError(path, 0, "truncated mask cache");
  return v;
}

}  // namespace detail

inline void save_hop_masks(const std::filesystem::path& path, const HopMaskSet& set, std::uint64_t dataset_hash) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write mask cache " + path.string());
  os.write("LSDANHOP", 8);
  detail::write_pod<std::uint32_t>(os, kHopCacheVersion);
  detail::write_pod<std::uint64_t>(os, set.n());
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(set.kappa));
  detail::write_pod<std::uint8_t>(os, set.with_self_loops ? 1 : 0);
  detail::write_pod<std::uint64_t>(os, dataset_hash);
  for (std::size_t k = 0; k < set.kappa; ++k) {
    detail::write_pod<std::uint64_t>(os, set.patched_rows[k]);
    auto words = set.masks[k].words();
    os.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 8));
  }
  if (!os) throw IoError("failed writing mask cache " + path.string());
}

struct LoadedHopMasks {
  HopMaskSet masks;
  std::uint64_t dataset_hash = 0;
};

inline LoadedHopMasks load_hop_masks(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open mask cache " + p);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "LSDANHOP", 8) != 0) throw ParseError(p, 0, "not a hop-mask cache");
  const auto version = detail::read_pod<std::uint32_t>(is, p);
  if (version != kHopCacheVersion)
    throw ParseError(p, 0, "unsupported mask cache version " + std::to_string(version));
  LoadedHopMasks out;
  const auto n = detail::read_pod<std::uint64_t>(is, p);
  out.masks.kappa = detail::read_pod<std::uint32_t>(is, p);
  if (n > (std::uint64_t{1} << 22) || out.masks.kappa > 64) throw ParseError(p, 0, "implausible mask cache header");
  out.masks.with_self_loops = detail::read_pod<std::uint8_t>(is, p) != 0;
  out.dataset_hash = detail::read_pod<std::uint64_t>(is, p);
  for (std::size_t k = 0; k < out.masks.kappa; ++k) {
    out.masks.patched_rows.push_back(detail::read_pod<std::uint64_t>(is, p));
    BitMatrix m(n, n);
    auto words = m.words();
    if (!is.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * 8)))
      throw ParseError(p, 0, "truncated mask cache");
    out.masks.patterns.push_back(std::make_shared<const SparsePattern>(m));
    out.masks.masks.push_back(std::move(m));
  }
  return out;
}

}  // namespace lsdan
