#pragma once

#include <filesystem>

#include "msfuse/nn/tensor.hpp"

namespace msfuse {

/// 8-bit binary PPM (P6) from a (1,3,h,w) tensor in [0, 1]; values are
/// rounded to the nearest level.
void save_ppm(const std::filesystem::path& path, const nn::Tensor& color);
/// 8-bit binary PGM (P5) from a (1,1,h,w) tensor in [0, 1].
void save_pgm(const std::filesystem::path& path, const nn::Tensor& gray);

/// Loaded values are level / 255. Throws ParseError on a malformed header or
/// short pixel data, InputError when the file cannot be opened.
nn::Tensor load_ppm(const std::filesystem::path& path);
nn::Tensor load_pgm(const std::filesystem::path& path);

}  // namespace msfuse
