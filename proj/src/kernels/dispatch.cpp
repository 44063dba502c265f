#include <atomic>
#include <cstdlib>
#include <string>

#include "lfuse/error.hpp"
#include "lfuse/kernels.hpp"

namespace lfuse::kernels {
namespace {

// -1 means "not yet resolved".
std::atomic<int> g_backend{-1};

Backend detect() {
  if (const char* env = std::getenv("LFUSE_KERNELS"); env && *env) {
    const Backend requested = parse_backend(env);
    if (!backend_supported(requested)) {
      throw ConfigError(std::string("LFUSE_KERNELS=") + env +
                        " is not supported on this machine");
    }
    return requested;
  }
  if (backend_supported(Backend::kAvx2)) return Backend::kAvx2;
  if (backend_supported(Backend::kNeon)) return Backend::kNeon;
  return Backend::kScalar;
}

}  // namespace

bool backend_supported(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return true;
    case Backend::kAvx2:
#if defined(LFUSE_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::kNeon:
#if defined(LFUSE_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() {
  int current = g_backend.load(std::memory_order_acquire);
  if (current < 0) {
    current = static_cast<int>(detect());
    int expected = -1;
    if (!g_backend.compare_exchange_strong(expected, current)) current = expected;
  }
  return static_cast<Backend>(current);
}

void set_backend(Backend backend) {
  if (!backend_supported(backend)) {
    throw ConfigError("kernel backend '" + std::string(backend_name(backend)) +
                      "' is not supported on this machine");
  }
  g_backend.store(static_cast<int>(backend), std::memory_order_release);
}

Backend parse_backend(std::string_view name) {
  if (name == "scalar") return Backend::kScalar;
  if (name == "avx2") return Backend::kAvx2;
  if (name == "neon") return Backend::kNeon;
  throw ConfigError("unknown kernel backend '" + std::string(name) +
                    "' (expected scalar, avx2 or neon)");
}

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
    case Backend::kNeon:
      return "neon";
  }
  return "unknown";
}

template <>
const KernelTable<float>& table_for<float>(Backend backend) {
  switch (backend) {
#if defined(LFUSE_HAVE_AVX2)
    case Backend::kAvx2:
      return avx2_table_f32();
#endif
#if defined(LFUSE_HAVE_NEON)
    case Backend::kNeon:
      return neon_table_f32();
#endif
    default:
      return scalar_table_f32();
  }
}

template <>
const KernelTable<double>& table_for<double>(Backend backend) {
  switch (backend) {
#if defined(LFUSE_HAVE_AVX2)
    case Backend::kAvx2:
      return avx2_table_f64();
#endif
#if defined(LFUSE_HAVE_NEON)
    case Backend::kNeon:
      return neon_table_f64();
#endif
    default:
      return scalar_table_f64();
  }
}

}  // namespace lfuse::kernels
