#pragma once

#include <cstddef>

namespace tabattack {

/// Global execution-unit cap. 1 selects the serial reference path; the
/// parallel kernels must produce bit-identical results at any setting.
void set_max_threads(int n);
int max_threads();

}  // namespace tabattack
