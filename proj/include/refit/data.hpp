#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "refit/exec.hpp"
#include "refit/rng.hpp"

namespace refit::data {

using ItemId = std::uint32_t;
using UserId = std::uint32_t;
using ItemRow = std::vector<ItemId>;

// Binary implicit-feedback matrix stored as per-user sorted item lists.
struct InteractionMatrix {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<ItemRow> rows;

  std::size_t nnz() const;
  std::span<const ItemId> row(UserId u) const { return rows[u]; }
  // Dense 0/1 vector of length num_items.
  std::vector<double> dense_row(UserId u) const;
  bool contains(UserId u, ItemId i) const;

  // Throws DataError when an index is out of range or a row is unsorted
  // or has duplicates. Empty rows are allowed only if allow_empty.
  void validate(bool allow_empty = false) const;
};

bool operator==(const InteractionMatrix& a, const InteractionMatrix& b);

struct DataSplit {
  InteractionMatrix train;
  InteractionMatrix val;
  InteractionMatrix test;
  // Users with fewer than 3 interactions; their whole row lives in train.
  std::vector<UserId> flagged_users;
};

struct Neighbor {
  UserId user;
  double similarity;
};

struct SimilarityIndex {
  std::size_t d = 0;
  std::vector<std::vector<Neighbor>> neighbors;  // per user, similarity descending
};

enum class Format { TripletTsv, CsrBinary };

Format parse_format(std::string_view name);
std::string_view format_name(Format f);

struct LoadOptions {
  // Declared item count; ids at or beyond it are a parse error.
  std::optional<std::size_t> num_items;
  // Re-index items densely by ascending raw id. Off by default so that the
  // item index equals the raw id.
  bool remap_items = false;
};

// Raw ids for each dense index.
struct IdMap {
  std::vector<std::uint64_t> user_raw;
  std::vector<std::uint64_t> item_raw;
};

struct LoadResult {
  InteractionMatrix matrix;
  IdMap ids;
  // Raw ids of users dropped because their row was empty.
  std::vector<std::uint64_t> dropped_users;
};

LoadResult load_interactions(const std::filesystem::path& path, Format format,
                             const LoadOptions& opts = {});
LoadResult parse_triplet_tsv(std::string_view text, const LoadOptions& opts = {});

void save_triplet_tsv(const InteractionMatrix& m, const std::filesystem::path& path);

// csr-binary layout (all little-endian):
//   u64 num_users, u64 num_items, u64 nnz,
//   u64 row_offsets[num_users + 1], u32 col_indices[nnz]
void save_csr_binary(const InteractionMatrix& m, const std::filesystem::path& path);

DataSplit split_holdout(const InteractionMatrix& m, double train_frac, double val_frac, Seed seed);

// Every cell is 1 independently with probability 1 - sparsity; empty users
// get one uniform-random item.
InteractionMatrix generate_synthetic(std::size_t num_users, std::size_t num_items, double sparsity,
                                     Seed seed);

// Planted-community variant used by the desk-scale fine-tuning fixtures:
// users and items are assigned round-robin to `clusters` groups; a cell is 1
// with probability p_in inside the user's group and p_out elsewhere.
InteractionMatrix generate_clustered(std::size_t num_users, std::size_t num_items,
                                     std::size_t clusters, double p_in, double p_out, Seed seed);

// Cosine similarity of two binary rows.
double cosine(std::span<const ItemId> a, std::span<const ItemId> b);

// Exact top-d neighbours by cosine on the rows of m, ties by ascending user id.
SimilarityIndex build_similarity_index(const InteractionMatrix& m, std::size_t d,
                                       Exec exec = Exec::Parallel);

// Top-d neighbours of a single user, scanning every other user once.
std::vector<Neighbor> top_similar_users(const InteractionMatrix& m, UserId u, std::size_t d);

}  // namespace refit::data
