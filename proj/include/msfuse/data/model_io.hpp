#pragma once

#include <filesystem>
#include <string>

#include "msfuse/arch/detector.hpp"

namespace msfuse {

inline constexpr int kModelVersion = 1;

/// Text manifest: version, fusion stage, configuration, then every layer
/// with kind, hyperparameters and output shape, and every parameter with its
/// shape, in blob order.
std::string format_model_manifest(const DetectorModel& model);

/// Writes `path` (manifest) and `path` + ".bin" (little-endian float32
/// parameters in manifest order).
void save_model(const std::filesystem::path& path, const DetectorModel& model);

/// Rebuilds the graph from the manifest and fills it from the blob. Throws
/// ParseError for malformed or inconsistent files.
DetectorModel load_model(const std::filesystem::path& path);

}  // namespace msfuse
