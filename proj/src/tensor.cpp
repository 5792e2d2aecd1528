#include "decorfuse/tensor.hpp"

#include "decorfuse/error.hpp"

namespace decorfuse {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingKey: return "MissingKey";
    case ErrorKind::WrongCount: return "WrongCount";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::TruncatedRecord: return "TruncatedRecord";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::BadDims: return "BadDims";
    case ErrorKind::StrideMismatch: return "StrideMismatch";
    case ErrorKind::SpatialMismatch: return "SpatialMismatch";
    case ErrorKind::EmptyKeySet: return "EmptyKeySet";
    case ErrorKind::BadClass: return "BadClass";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::PlacementFailure: return "PlacementFailure";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::BadFormat: return "BadFormat";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw Error(ErrorKind::ShapeMismatch, "matmul inner dims");
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    double* crow = c.data.data() + static_cast<std::size_t>(i) * c.cols;
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw Error(ErrorKind::ShapeMismatch, "matmul_tn inner dims");
  Matrix c(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k) {
    const double* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
    for (int i = 0; i < a.cols; ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* crow = c.data.data() + static_cast<std::size_t>(i) * c.cols;
      for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw Error(ErrorKind::ShapeMismatch, "matmul_nt inner dims");
  Matrix c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + static_cast<std::size_t>(j) * b.cols;
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

void add_inplace(std::span<double> dst, std::span<const double> src) {
  if (dst.size() != src.size()) throw Error(ErrorKind::ShapeMismatch, "add_inplace sizes");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (splitmix64(b) + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

}  // namespace decorfuse
