#pragma once

namespace tritier::cli {

// Exit codes: 0 success, 2 config error, 3 empty build, 4 infrastructure,
// 5 corrupt catalog, 6 empty catalog.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitEmptyBuild = 3;
constexpr int kExitInfrastructure = 4;
constexpr int kExitCorruptCatalog = 5;
constexpr int kExitEmptyCatalog = 6;

/// Full command dispatch (also the test entry point; main() is a shim).
int run(int argc, const char* const* argv);

}  // namespace tritier::cli
