#include "refit/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <string>

#include "refit/error.hpp"

namespace refit::data {

std::size_t InteractionMatrix::nnz() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.size();
  return n;
}

std::vector<double> InteractionMatrix::dense_row(UserId u) const {
  std::vector<double> v(num_items, 0.0);
  for (ItemId i : rows[u]) v[i] = 1.0;
  return v;
}

bool InteractionMatrix::contains(UserId u, ItemId i) const {
  return std::binary_search(rows[u].begin(), rows[u].end(), i);
}

void InteractionMatrix::validate(bool allow_empty) const {
  if (rows.size() != num_users)
    throw DataError("row count " + std::to_string(rows.size()) + " != num_users " +
                    std::to_string(num_users));
  for (std::size_t u = 0; u < rows.size(); ++u) {
    const auto& r = rows[u];
    if (r.empty() && !allow_empty) throw DataError("user " + std::to_string(u) + " has no interactions");
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (r[k] >= num_items)
        throw DataError("item " + std::to_string(r[k]) + " out of range for user " + std::to_string(u));
      if (k > 0 && r[k] <= r[k - 1])
        throw DataError("row " + std::to_string(u) + " is not sorted and duplicate-free");
    }
  }
}

bool operator==(const InteractionMatrix& a, const InteractionMatrix& b) {
  return a.num_users == b.num_users && a.num_items == b.num_items && a.rows == b.rows;
}

Format parse_format(std::string_view name) {
  if (name == "triplet-tsv") return Format::TripletTsv;
  if (name == "csr-binary") return Format::CsrBinary;
  throw ConfigError("unknown data format '" + std::string(name) + "'");
}

std::string_view format_name(Format f) {
  return f == Format::TripletTsv ? "triplet-tsv" : "csr-binary";
}

namespace {

// Builds a matrix from raw (user, item) pairs. Users are indexed densely by
// ascending raw id; items likewise when remapping is requested.
LoadResult assemble(std::map<std::uint64_t, std::vector<std::uint64_t>>& by_user,
                    std::vector<std::uint64_t> empty_users, const LoadOptions& opts,
                    std::uint64_t max_item) {
  LoadResult out;
  out.dropped_users = std::move(empty_users);
  std::map<std::uint64_t, ItemId> item_index;
  if (opts.remap_items) {
    for (auto& [u, items] : by_user)
      for (auto i : items) item_index.emplace(i, 0);
    ItemId next = 0;
    for (auto& [raw, idx] : item_index) {
      idx = next++;
      out.ids.item_raw.push_back(raw);
    }
    out.matrix.num_items = item_index.size();
  } else {
    out.matrix.num_items = opts.num_items ? *opts.num_items : static_cast<std::size_t>(max_item) + 1;
    out.ids.item_raw.resize(out.matrix.num_items);
    for (std::size_t i = 0; i < out.ids.item_raw.size(); ++i) out.ids.item_raw[i] = i;
  }
  for (auto& [u, items] : by_user) {
    ItemRow row;
    row.reserve(items.size());
    for (auto i : items) row.push_back(opts.remap_items ? item_index.at(i) : static_cast<ItemId>(i));
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    out.ids.user_raw.push_back(u);
    out.matrix.rows.push_back(std::move(row));
  }
  out.matrix.num_users = out.matrix.rows.size();
  out.matrix.validate();
  return out;
}

bool parse_uint(std::string_view s, std::uint64_t& v) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

LoadResult parse_triplet_tsv(std::string_view text, const LoadOptions& opts) {
  std::map<std::uint64_t, std::vector<std::uint64_t>> by_user;
  std::uint64_t max_item = 0;
  std::size_t line_no = 0;
  std::size_t pairs = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty() || line.front() == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw ParseError(line_no, "expected 'user<TAB>item'");
    std::uint64_t u = 0, i = 0;
    if (!parse_uint(trim(line.substr(0, tab)), u)) throw ParseError(line_no, "bad user id");
    if (!parse_uint(trim(line.substr(tab + 1)), i)) throw ParseError(line_no, "bad item id");
    if (opts.num_items && i >= *opts.num_items)
      throw ParseError(line_no, "item id " + std::to_string(i) + " >= declared num_items " +
                                    std::to_string(*opts.num_items));
    if (!opts.remap_items && i > std::numeric_limits<ItemId>::max() - 1)
      throw ParseError(line_no, "item id too large without remapping");
    by_user[u].push_back(i);
    max_item = std::max(max_item, i);
    ++pairs;
  }
  if (pairs == 0) throw DataError("empty dataset");
  return assemble(by_user, {}, opts, max_item);
}

namespace {

template <class T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t k = 0; k < sizeof(T); ++k) buf[k] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * k)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw DataError("truncated csr-binary file");
  std::uint64_t v = 0;
  for (std::size_t k = 0; k < sizeof(T); ++k) v |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
  return static_cast<T>(v);
}

LoadResult load_csr(const std::filesystem::path& path, const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  if (size == 0) throw DataError("empty dataset");
  const auto nu = read_le<std::uint64_t>(in);
  const auto ni = read_le<std::uint64_t>(in);
  const auto nnz = read_le<std::uint64_t>(in);
  const std::uint64_t expected = 24 + 8 * (nu + 1) + 4 * nnz;
  if (nu > size || nnz > size || size != expected)
    throw DataError("csr-binary size mismatch: header implies " + std::to_string(expected) +
                    " bytes, file has " + std::to_string(size));
  if (opts.num_items && ni > *opts.num_items)
    throw DataError("num_items " + std::to_string(ni) + " exceeds declared " + std::to_string(*opts.num_items));
  std::vector<std::uint64_t> offsets(nu + 1);
  for (auto& o : offsets) o = read_le<std::uint64_t>(in);
  if (offsets.front() != 0 || offsets.back() != nnz) throw DataError("csr-binary offsets do not span nnz");
  std::map<std::uint64_t, std::vector<std::uint64_t>> by_user;
  std::vector<std::uint64_t> empty;
  std::uint64_t max_item = 0;
  for (std::uint64_t u = 0; u < nu; ++u) {
    if (offsets[u + 1] < offsets[u]) throw DataError("csr-binary offsets decrease at row " + std::to_string(u));
    const auto len = offsets[u + 1] - offsets[u];
    if (len == 0) {
      empty.push_back(u);
      continue;
    }
    auto& row = by_user[u];
    for (std::uint64_t k = 0; k < len; ++k) {
      auto i = read_le<std::uint32_t>(in);
      if (i >= ni) throw DataError("item " + std::to_string(i) + " out of range in row " + std::to_string(u));
      row.push_back(i);
      max_item = std::max<std::uint64_t>(max_item, i);
    }
  }
  if (by_user.empty()) throw DataError("empty dataset");
  LoadOptions o = opts;
  if (!o.num_items) o.num_items = ni;
  return assemble(by_user, std::move(empty), o, max_item);
}

}  // namespace

LoadResult load_interactions(const std::filesystem::path& path, Format format, const LoadOptions& opts) {
  if (!std::filesystem::exists(path)) throw DataError("no such file: " + path.string());
  if (format == Format::CsrBinary) return load_csr(path, opts);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_triplet_tsv(text, opts);
}

void save_triplet_tsv(const InteractionMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t u = 0; u < m.num_users; ++u)
    for (auto i : m.rows[u]) out << u << '\t' << i << '\n';
}

void save_csr_binary(const InteractionMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_le<std::uint64_t>(out, m.num_users);
  write_le<std::uint64_t>(out, m.num_items);
  write_le<std::uint64_t>(out, m.nnz());
  std::uint64_t off = 0;
  write_le<std::uint64_t>(out, off);
  for (const auto& r : m.rows) {
    off += r.size();
    write_le<std::uint64_t>(out, off);
  }
  for (const auto& r : m.rows)
    for (auto i : r) write_le<std::uint32_t>(out, i);
}

DataSplit split_holdout(const InteractionMatrix& m, double train_frac, double val_frac, Seed seed) {
  if (!(train_frac > 0 && train_frac < 1) || !(val_frac > 0 && val_frac < 1) || train_frac + val_frac >= 1)
    throw ConfigError("split fractions must lie in (0,1) and sum below 1");
  DataSplit s;
  for (auto* part : {&s.train, &s.val, &s.test}) {
    part->num_users = m.num_users;
    part->num_items = m.num_items;
    part->rows.resize(m.num_users);
  }
  for (std::size_t u = 0; u < m.num_users; ++u) {
    const auto& row = m.rows[u];
    const auto n = row.size();
    if (n < 3) {
      s.train.rows[u] = row;
      s.flagged_users.push_back(static_cast<UserId>(u));
      continue;
    }
    ItemRow shuffled = row;
    Rng rng(derive_seed(seed, u));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto round = [](double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); };
    const std::size_t n_train = std::clamp<std::size_t>(round(n * train_frac), 1, n - 2);
    const std::size_t n_val = std::clamp<std::size_t>(round(n * val_frac), 1, n - n_train - 1);
    auto a = shuffled.begin();
    auto b = a + static_cast<std::ptrdiff_t>(n_train);
    auto c = b + static_cast<std::ptrdiff_t>(n_val);
    s.train.rows[u].assign(a, b);
    s.val.rows[u].assign(b, c);
    s.test.rows[u].assign(c, shuffled.end());
    for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->rows[u].begin(), part->rows[u].end());
  }
  return s;
}

InteractionMatrix generate_synthetic(std::size_t num_users, std::size_t num_items, double sparsity, Seed seed) {
  if (num_users == 0 || num_items == 0) throw ConfigError("num_users and num_items must be positive");
  if (!(sparsity > 0 && sparsity < 1)) throw ConfigError("sparsity must lie in (0,1)");
  const double p = 1.0 - sparsity;
  InteractionMatrix m;
  m.num_users = num_users;
  m.num_items = num_items;
  m.rows.resize(num_users);
  for (std::size_t u = 0; u < num_users; ++u) {
    Rng rng(derive_seed(seed, u));
    // Gaps between successes of independent Bernoulli(p) cells are geometric.
    std::geometric_distribution<std::uint64_t> gap(p);
    auto& row = m.rows[u];
    std::uint64_t i = gap(rng);
    while (i < num_items) {
      row.push_back(static_cast<ItemId>(i));
      i += 1 + gap(rng);
    }
    if (row.empty()) {
      std::uniform_int_distribution<std::uint64_t> pick(0, num_items - 1);
      row.push_back(static_cast<ItemId>(pick(rng)));
    }
  }
  return m;
}

InteractionMatrix generate_clustered(std::size_t num_users, std::size_t num_items, std::size_t clusters,
                                     double p_in, double p_out, Seed seed) {
  if (num_users == 0 || num_items == 0) throw ConfigError("num_users and num_items must be positive");
  if (clusters == 0 || clusters > num_items) throw ConfigError("clusters must lie in [1, num_items]");
  if (!(p_in > 0 && p_in <= 1) || !(p_out >= 0 && p_out < 1)) throw ConfigError("cluster probabilities out of range");
  InteractionMatrix m;
  m.num_users = num_users;
  m.num_items = num_items;
  m.rows.resize(num_users);
  for (std::size_t u = 0; u < num_users; ++u) {
    Rng rng(derive_seed(seed, u));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const std::size_t cu = u % clusters;
    auto& row = m.rows[u];
    for (std::size_t i = 0; i < num_items; ++i) {
      const double p = (i % clusters == cu) ? p_in : p_out;
      if (coin(rng) < p) row.push_back(static_cast<ItemId>(i));
    }
    if (row.empty()) row.push_back(static_cast<ItemId>(cu));
  }
  return m;
}

namespace {

// sqrt(c^2 / (n_a n_b)): numerator and denominator are exact in double, so
// equal cosines map to the same value.
double cosine_from_counts(std::uint64_t common, std::uint64_t na, std::uint64_t nb) {
  const double c = static_cast<double>(common);
  return std::sqrt(c * c / (static_cast<double>(na) * static_cast<double>(nb)));
}

}  // namespace

double cosine(std::span<const ItemId> a, std::span<const ItemId> b) {
  if (a.empty() || b.empty()) return 0.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  return cosine_from_counts(common, a.size(), b.size());
}

namespace {

// Cosine kept as the exact pair (common, |row v|); the query norm is shared.
struct Cand {
  UserId user;
  std::uint64_t common;
  std::uint64_t size;
};

// Strict "ranks ahead of" order: higher similarity first, then lower id.
// Similarities are compared as c_x^2 / n_x against c_y^2 / n_y in integers so
// that equal cosines tie exactly.
bool ahead(const Cand& x, const Cand& y) {
  const auto lhs = static_cast<unsigned __int128>(x.common) * x.common * y.size;
  const auto rhs = static_cast<unsigned __int128>(y.common) * y.common * x.size;
  if (lhs != rhs) return lhs > rhs;
  return x.user < y.user;
}

std::vector<Neighbor> top_similar_with(const InteractionMatrix& m, UserId u, std::size_t d,
                                       std::vector<std::uint8_t>& mark) {
  const auto& ru = m.rows[u];
  for (auto i : ru) mark[i] = 1;
  // Max-heap under `ahead` keeps the worst retained neighbour on top.
  std::priority_queue<Cand, std::vector<Cand>, decltype(&ahead)> heap(&ahead);
  for (std::size_t v = 0; v < m.num_users; ++v) {
    if (v == u) continue;
    const auto& rv = m.rows[v];
    Cand cand{static_cast<UserId>(v), 0, 1};
    if (!ru.empty() && !rv.empty()) {
      for (auto i : rv) cand.common += mark[i];
      cand.size = rv.size();
    }
    if (heap.size() < d) {
      heap.push(cand);
    } else if (ahead(cand, heap.top())) {
      heap.pop();
      heap.push(cand);
    }
  }
  for (auto i : ru) mark[i] = 0;
  std::vector<Neighbor> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    const Cand& c = heap.top();
    out.push_back({c.user, c.common == 0 ? 0.0 : cosine_from_counts(c.common, ru.size(), c.size)});
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<Neighbor> top_similar_users(const InteractionMatrix& m, UserId u, std::size_t d) {
  if (d == 0 || d >= m.num_users) throw ConfigError("d must lie in [1, num_users)");
  std::vector<std::uint8_t> mark(m.num_items, 0);
  return top_similar_with(m, u, d, mark);
}

SimilarityIndex build_similarity_index(const InteractionMatrix& m, std::size_t d, Exec exec) {
  if (d == 0 || d >= m.num_users) throw ConfigError("d must lie in [1, num_users)");
  SimilarityIndex idx;
  idx.d = d;
  idx.neighbors.resize(m.num_users);
  const auto n = static_cast<std::ptrdiff_t>(m.num_users);
  if (exec == Exec::Serial) {
    std::vector<std::uint8_t> mark(m.num_items, 0);
    for (std::ptrdiff_t u = 0; u < n; ++u) idx.neighbors[u] = top_similar_with(m, static_cast<UserId>(u), d, mark);
    return idx;
  }
#pragma omp parallel
  {
    std::vector<std::uint8_t> mark(m.num_items, 0);
#pragma omp for schedule(dynamic, 16)
    for (std::ptrdiff_t u = 0; u < n; ++u) idx.neighbors[u] = top_similar_with(m, static_cast<UserId>(u), d, mark);
  }
  return idx;
}

}  // namespace refit::data
