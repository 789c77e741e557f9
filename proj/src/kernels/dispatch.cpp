#include <atomic>
#include <cstdlib>
#include <string>

#include "blockpool/kernels.hpp"

namespace blockpool::kernels {

#if defined(BLOCKPOOL_HAVE_AVX2)
const KernelTable& avx2_table_impl();
#endif
#if defined(__aarch64__)
const KernelTable& neon_table_impl();
#endif

const KernelTable* avx2_table() {
#if defined(BLOCKPOOL_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  static const bool supported =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(__aarch64__)
  return &neon_table_impl();
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* best_available() {
  if (const KernelTable* t = avx2_table()) return t;
  if (const KernelTable* t = neon_table()) return t;
  return &scalar_table();
}

const KernelTable* lookup(std::string_view name) {
  if (name == "scalar") return &scalar_table();
  if (name == "avx2") return avx2_table();
  if (name == "neon") return neon_table();
  if (name == "auto" || name.empty()) return best_available();
  return nullptr;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{[] {
    const char* env = std::getenv("BLOCKPOOL_SIMD");
    const KernelTable* t = env ? lookup(env) : nullptr;
    return t ? t : best_available();
  }()};
  return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

bool select(std::string_view name) {
  const KernelTable* t = lookup(name);
  if (t == nullptr) return false;
  slot().store(t, std::memory_order_relaxed);
  return true;
}

}  // namespace blockpool::kernels
