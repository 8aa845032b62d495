#pragma once

#define MPSEG_VERSION_MAJOR 0
#define MPSEG_VERSION_MINOR 1
#define MPSEG_VERSION_PATCH 0
#define MPSEG_VERSION "0.1.0"

namespace mpseg {

inline const char* version() { return MPSEG_VERSION; }

} // namespace mpseg
