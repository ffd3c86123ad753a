#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace zerolight {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point of the `zerolight` tool. Subcommands: train-prompts, train,
/// enhance, stats, histeq. Returns 0 on success, 1 on runtime failure and 2
/// on configuration errors (including bad flags).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace zerolight
