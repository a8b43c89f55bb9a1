#include "refit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "refit/error.hpp"

namespace refit {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'F', 'I', 'T', 'C', 'K', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

template <class T>
T get(std::istream& is) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated checkpoint");
  return v;
}

std::vector<double> get_doubles(std::istream& is, std::size_t n) {
  std::vector<double> v(n);
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw DataError("truncated checkpoint");
  return v;
}

}  // namespace

diffusion::DiffusionSchedule Checkpoint::schedule() const {
  return diffusion::build_schedule(steps, beta_start, beta_end);
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, ck.optimizer ? 1u : 0u);
  const auto& a = ck.model.arch();
  put<std::uint64_t>(out, a.num_items);
  put<std::uint64_t>(out, a.hidden);
  put<std::uint64_t>(out, a.time_embedding);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(ck.steps));
  put<double>(out, ck.beta_start);
  put<double>(out, ck.beta_end);
  put<std::uint64_t>(out, ck.model.num_params());
  put_doubles(out, ck.model.params());
  if (ck.optimizer) {
    put<std::uint64_t>(out, ck.optimizer->steps);
    put_doubles(out, ck.optimizer->m);
    put_doubles(out, ck.optimizer->v);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  if (get<std::uint32_t>(in) != kVersion) throw DataError("unsupported checkpoint version");
  const auto flags = get<std::uint32_t>(in);
  diffusion::Architecture a;
  a.num_items = get<std::uint64_t>(in);
  a.hidden = get<std::uint64_t>(in);
  a.time_embedding = get<std::uint64_t>(in);
  Checkpoint ck;
  ck.steps = static_cast<int>(get<std::uint64_t>(in));
  ck.beta_start = get<double>(in);
  ck.beta_end = get<double>(in);
  const auto n = get<std::uint64_t>(in);
  if (n != a.num_params()) throw DataError("checkpoint parameter count does not match its architecture");
  ck.model = diffusion::Denoiser(a, get_doubles(in, n));
  if (flags & 1u) {
    OptimizerState st;
    st.steps = get<std::uint64_t>(in);
    st.m = get_doubles(in, n);
    st.v = get_doubles(in, n);
    ck.optimizer = std::move(st);
  }
  return ck;
}

}  // namespace refit
