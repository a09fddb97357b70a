#pragma once

#include <cstdint>

namespace mfp {

// Worker count used by the kernels. Work is always split by output index, so
// results do not depend on this value.
void set_num_threads(int n);
int num_threads();

}  // namespace mfp
