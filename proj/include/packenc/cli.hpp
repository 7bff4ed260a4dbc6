// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace packenc::cli {

/// Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage
/// or runtime errors.
enum ExitCode { kOk = 0, kCheckFailed = 1, kError = 2 };

/// Runs the packenc command line in-process. `args` excludes the program
/// name. Reports go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace packenc::cli
