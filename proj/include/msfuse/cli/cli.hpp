#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace msfuse {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one subcommand (synth, train, detect, score-fuse, eval, compare,
/// proposals). `args` excludes the program name. Returns kExitOk, kExitUsage
/// for bad flags or values, kExitData for unreadable or inconsistent inputs.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msfuse
