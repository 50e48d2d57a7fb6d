#pragma once

// Dense double-precision inner-loop kernels used by the measurement operators
// and projections. Each kernel has a scalar reference implementation and SIMD
// variants (AVX2+FMA on x86-64, NEON on AArch64). The active variant is chosen
// once at startup from the CPU feature set; UDUFACT_SIMD=scalar forces the
// reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace udufact::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);

/// Instruction set currently used by the dispatching entry points below.
Isa active_isa();

/// True when `isa` can run on this machine (Scalar is always available).
bool isa_available(Isa isa);

/// Overrides the dispatch choice. Throws std::invalid_argument if `isa` is
/// not available on this CPU. Intended for tests and benchmarks.
void set_active_isa(Isa isa);

// Dispatching entry points. All spans in one call must have equal length.

/// sum_i a[i] * b[i]
double dot(std::span<const double> a, std::span<const double> b);

/// sum_i a[i] * w[i] * b[i]
double weighted_dot(std::span<const double> a, std::span<const double> b,
                    std::span<const double> w);

/// y[i] += alpha * x[i]
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// sum_i a[i]^2
double sum_squares(std::span<const double> a);

/// x[i] *= alpha
void scale(double alpha, std::span<double> x);

// Per-ISA implementations, exposed for equivalence tests.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double weighted_dot(const double* a, const double* b, const double* w, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double sum_squares(const double* a, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
}  // namespace scalar

#if defined(UDUFACT_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double weighted_dot(const double* a, const double* b, const double* w, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double sum_squares(const double* a, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
}  // namespace avx2
#endif

#if defined(UDUFACT_HAVE_NEON)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
double weighted_dot(const double* a, const double* b, const double* w, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double sum_squares(const double* a, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
}  // namespace neon
#endif

}  // namespace udufact::kernels
