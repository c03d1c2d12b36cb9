#pragma once

#include <cstdint>
#include <string>

#include "fedstab/experiment.hpp"
#include "fedstab/stability.hpp"

namespace fedstab {

// Everything a run needs, parsed from one JSON document. The sweep and bounds
// plans inherit data/model/algo from the top level; jobs and out_dir describe
// the run environment and never enter the campaign identity hash.
struct ExperimentConfig {
    DataGenSpec data;
    ModelSpec model;
    AlgoConfig algo;
    StabilityProtocol stability;
    SweepPlan sweep;
    BoundCampaign bounds;
    std::string out_dir = "out";
    std::uint64_t master_seed = 1;
    int jobs = 1;
    std::size_t oracle_size = 50000;
    double init_scale = 0.5;
};

// Strict parse: unknown or ill-typed fields fail with the full field path.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Resolved round-trippable form: parse(dump_config(c)) reproduces c exactly.
std::string dump_config(const ExperimentConfig& cfg);

// Campaign identity: hash of the resolved config with the run-environment
// fields (out_dir, jobs) neutralized, folded with the master seed.
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace fedstab
