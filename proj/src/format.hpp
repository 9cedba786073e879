#pragma once

#include <optional>
#include <string>

#include <fmt/format.h>

namespace ideodepth::detail {

/// Shortest representation that round-trips.
inline std::string num(double x) { return fmt::format("{}", x); }

inline std::string num(const std::optional<double>& x) { return x ? num(*x) : std::string("NA"); }

}  // namespace ideodepth::detail
