#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "crisp/error.hpp"
#include "crisp/image.hpp"

namespace crisp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// 1 for errors in the caller's inputs (config, arguments, manifests, ground
// truth, masks), 2 for everything else.
int exit_code_for(ErrorCode code);

// Parses "x,y,w,h" as a rectangle; anything else is read as a mask PNG.
VisibilityMask parse_mask_argument(const std::string& text, int height, int width);

// Entry point of the crisp command. Output goes to out, diagnostics and
// "ERROR <code>: ..." lines to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace crisp::cli
