#pragma once

namespace dsgq::cli {

/// Exit codes: 0 success, 1 configuration error, 2 runtime failure.
int cli_main(int argc, const char* const* argv);

}  // namespace dsgq::cli
