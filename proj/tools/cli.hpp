// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mgc::cli {

enum ExitCode : int { kOk = 0, kDataError = 1, kConfigError = 2 };

/// Runs one `ecapa-mgc` invocation. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mgc::cli
