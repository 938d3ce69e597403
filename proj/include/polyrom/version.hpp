#ifndef POLYROM_VERSION_HPP
#define POLYROM_VERSION_HPP

namespace polyrom {

inline constexpr const char* kVersion = "0.1.0";

}

#endif
