// The acceptance gate: nine behavioral checks with pinned tolerances,
// runnable from the dedicated test binary and from the CLI selftest
// subcommand. Each check returns one pass/fail line.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tokalign {

struct CheckResult {
    std::string name;     // e.g. "A3 transport-correctness"
    bool passed = false;
    std::string detail;   // measured values or the first failure
    double seconds = 0;
};

std::vector<CheckResult> run_acceptance_checks();

// Prints one line per criterion to `out`; returns true when all passed.
bool print_acceptance(std::ostream& out);

}  // namespace tokalign
