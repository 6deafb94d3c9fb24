#include "tabattack/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tabattack {

namespace {
int g_max_threads =
#ifdef _OPENMP
    0;  // 0 = use the OpenMP default
#else
    1;
#endif
}

void set_max_threads(int n) { g_max_threads = n; }

int max_threads() {
#ifdef _OPENMP
    return g_max_threads > 0 ? g_max_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace tabattack
