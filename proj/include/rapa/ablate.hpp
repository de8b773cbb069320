#pragma once

#include <string>
#include <vector>

#include "rapa/config.hpp"
#include "rapa/metrics.hpp"

namespace rapa::ablate {

// Component ladder, cumulative left to right:
//   a  global branch only
//   b  + part attention, first-frame reference, fixed thirds, plain mean
//   c  + inter-frame regularizer
//   d  + temporal channel scores
//   e  + keypoint part bands
//   f  + quality-based reference selection
inline const std::vector<char>& variant_ladder() {
    static const std::vector<char> v{'a', 'b', 'c', 'd', 'e', 'f'};
    return v;
}

// Applies a ladder rung's switches on top of a base config.
Config variant_config(const Config& base, char variant);

struct VariantRow {
    std::string name;          // "a".."f" ladder rung or a branch-slice row
    double rank1 = 0, rank5 = 0, rank20 = 0, map = 0;  // seed averages, in [0,1]
    std::vector<metrics::RetrievalResult> per_seed;
};

struct AblateReport {
    std::vector<VariantRow> ladder;    // a..f
    std::vector<VariantRow> branches;  // global / local / global+local from rung f
};

// Trains and evaluates every rung over ablate.num_seeds seeds (shared
// dataset, shared batch sequences), then splits rung f's embeddings by
// branch for the global/local comparison. Writes ablate_table.csv,
// ablate_branches.csv, ablate_seeds.csv and ablate_report.json.
AblateReport run_ablate(const Config& cfg, const std::string& data_dir,
                        const std::string& out_dir);

}  // namespace rapa::ablate
