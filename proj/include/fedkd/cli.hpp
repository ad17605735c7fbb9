#pragma once

namespace fedkd::cli {

/// Subcommand dispatcher: simulate | compare | score | verify-lemmas |
/// gradcheck. Returns 0 on success, 1 on validation/usage errors, 2 on
/// runtime errors.
int run(int argc, const char* const* argv);

}  // namespace fedkd::cli
