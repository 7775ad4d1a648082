#include <cstdlib>

#include "lls/kernels.hpp"

namespace lls::kernels {
namespace {

const Ops* g_override = nullptr;
const char* g_override_name = nullptr;

struct Detected {
    const Ops* ops;
    const char* name;
};

Detected detect() {
    if (const char* force = std::getenv("LLS_FORCE_SCALAR"); force && force[0] == '1')
        return {&scalar_ops(), "scalar"};
#if defined(__x86_64__)
    if (cpu_has_avx2()) return {&avx2_ops(), "avx2"};
#endif
#if defined(__aarch64__)
    return {&neon_ops(), "neon"};
#endif
    return {&scalar_ops(), "scalar"};
}

const Detected& detected() {
    static const Detected d = detect();
    return d;
}

}  // namespace

const Ops& active() { return g_override ? *g_override : *detected().ops; }
const char* active_name() { return g_override ? g_override_name : detected().name; }

void set_active(const Ops* ops, const char* name) {
    g_override = ops;
    g_override_name = name;
}

}  // namespace lls::kernels
