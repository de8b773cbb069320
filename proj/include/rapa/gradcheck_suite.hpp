#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rapa::gradcheck {

struct BlockResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct SuiteResult {
    std::vector<BlockResult> blocks;
    bool all_pass() const {
        for (const auto& b : blocks)
            if (!b.pass) return false;
        return !blocks.empty();
    }
};

// Double-precision finite-difference audit: one block per operation, then
// the four loss branches, the regularizer, and the complete objective on a
// miniature model (2 identities x 2 clips x 2 frames, 8-channel maps).
// bug_factor != 1 corrupts the analytic gradients so callers can verify
// the audit actually fails on wrong derivatives.
SuiteResult run_suite(double tolerance, double step, int64_t max_checks_per_param,
                      double bug_factor, std::ostream& out);

}  // namespace rapa::gradcheck
