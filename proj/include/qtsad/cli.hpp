// ============================================================================
// cli.hpp - the qtsad command line
//
//   qtsad synth|preprocess|train|calibrate|detect|evaluate|plot
//         [--config FILE] [--seed N] [--out PATH] [--checkpoint FILE]
//
// Exit codes: 0 success, 2 usage or input error, 3 numeric failure.
// ============================================================================
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qtsad::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

// args excludes the program name. Environment overrides (QTSAD_*) are read
// from the process environment.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace qtsad::cli
