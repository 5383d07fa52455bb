#pragma once

namespace mtnet {

#ifdef MTNET_USE_FLOAT32
using Real = float;
#else
using Real = double;
#endif

}  // namespace mtnet
