#pragma once

namespace sire {

/// Exit codes: 0 success, 1 invalid input, 2 runtime failure.
int run_cli(int argc, char** argv);

}  // namespace sire
