#pragma once

#include "rsosplat/gaussian.hpp"

#include <filesystem>
#include <string>

namespace rsosplat {

/// Writes the community splat layout: binary little-endian float32
/// properties x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2
/// rot_0..3, with f_rest holding the coefficients of the active SH degree
/// (45 at degree 3). Opacity is the logit, scales are logs.
void write_ply(const std::filesystem::path& path, const GaussianCloud& cloud);
std::string encode_ply(const GaussianCloud& cloud);

/// Reads the same layout (property order free, f_rest may hold 0, 9, 24 or
/// 45 entries). The SH degree is set from the f_rest count. Throws
/// MalformedPly.
GaussianCloud read_ply(const std::filesystem::path& path);
GaussianCloud decode_ply(const std::string& bytes);

} // namespace rsosplat
