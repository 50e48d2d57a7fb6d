#include "udufact/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace udufact::kernels {
namespace {

struct Table {
  double (*dot)(const double*, const double*, std::size_t);
  double (*weighted_dot)(const double*, const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  double (*sum_squares)(const double*, std::size_t);
  void (*scale)(double, double*, std::size_t);
};

constexpr Table kScalar{scalar::dot, scalar::weighted_dot, scalar::axpy, scalar::sum_squares,
                        scalar::scale};
#if defined(UDUFACT_HAVE_AVX2)
constexpr Table kAvx2{avx2::dot, avx2::weighted_dot, avx2::axpy, avx2::sum_squares, avx2::scale};
#endif
#if defined(UDUFACT_HAVE_NEON)
constexpr Table kNeon{neon::dot, neon::weighted_dot, neon::axpy, neon::sum_squares, neon::scale};
#endif

const Table& table_for(Isa isa) {
  switch (isa) {
#if defined(UDUFACT_HAVE_AVX2)
    case Isa::Avx2:
      return kAvx2;
#endif
#if defined(UDUFACT_HAVE_NEON)
    case Isa::Neon:
      return kNeon;
#endif
    default:
      return kScalar;
  }
}

Isa detect() {
  if (const char* env = std::getenv("UDUFACT_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return Isa::Scalar;
  }
  if (isa_available(Isa::Avx2)) return Isa::Avx2;
  if (isa_available(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("kernel operands differ in length");
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Avx2:
      return "avx2";
    case Isa::Neon:
      return "neon";
    default:
      return "scalar";
  }
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(UDUFACT_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(UDUFACT_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("instruction set not available: " + std::string(isa_name(isa)));
  }
  active().store(isa, std::memory_order_relaxed);
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_sizes(a.size(), b.size());
  return table_for(active_isa()).dot(a.data(), b.data(), a.size());
}

double weighted_dot(std::span<const double> a, std::span<const double> b,
                    std::span<const double> w) {
  check_sizes(a.size(), b.size());
  check_sizes(a.size(), w.size());
  return table_for(active_isa()).weighted_dot(a.data(), b.data(), w.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_sizes(x.size(), y.size());
  table_for(active_isa()).axpy(alpha, x.data(), y.data(), x.size());
}

double sum_squares(std::span<const double> a) {
  return table_for(active_isa()).sum_squares(a.data(), a.size());
}

void scale(double alpha, std::span<double> x) {
  table_for(active_isa()).scale(alpha, x.data(), x.size());
}

}  // namespace udufact::kernels
