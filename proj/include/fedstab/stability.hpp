#pragma once

#include <cstdint>
#include <vector>

#include "fedstab/data.hpp"
#include "fedstab/fedalgo.hpp"
#include "fedstab/model.hpp"

namespace fedstab {

// One coupled pair of trainings on neighboring datasets: same theta0, same
// tape, datasets differing in exactly one sample of one client. The recorded
// server-model divergence is the quantity the divergence bounds cap.
struct TwinSetup {
    DataGenSpec data;
    AlgoConfig algo;
    int probe_client = 0;
    std::size_t probe_position = 0;
    double init_scale = 0.5;
    std::uint64_t seed = 1;  // expands into data/init/tape/replacement streams
    // Identity mode replaces the probed sample with itself; the twins then
    // coincide and the divergence must be exactly zero at every round.
    bool identity_replacement = false;
};

struct TwinResult {
    std::vector<double> divergence;  // ||theta_t - theta'_t||, t = 0..T
    double final_divergence = 0.0;
    double loss_gap = 0.0;  // |l(theta_T; z') - l(theta'_T; z')| at the replacement
    Sample replacement;
    TrajectoryRecord run_s;         // kept when keep_records
    TrajectoryRecord run_neighbor;  // kept when keep_records
};

TwinResult run_twin(const LossModel& model, const TwinSetup& setup, const TrainOptions& topts = {},
                    bool keep_records = false);

struct StabilityProtocol {
    std::vector<int> probe_clients = {0, 1, 2};
    int positions_per_client = 5;
    int repeats = 50;
    double init_scale = 0.5;
    int jobs = 1;
    void validate(const DataGenSpec& spec) const;
};

struct ProbeStat {
    int client = 0;
    std::size_t position = 0;
    double mean_gap = 0.0;
    double se_gap = 0.0;
    double mean_divergence = 0.0;
    double se_divergence = 0.0;
    std::vector<double> gap_samples;
};

struct StabilityEstimate {
    double eps_hat = 0.0;  // max over probes of the per-probe mean loss gap
    double eps_se = 0.0;   // standard error of the probe attaining the max
    std::vector<ProbeStat> probes;
    int repeats = 0;
};

// Monte Carlo Def.-2 estimate: fresh (dataset, replacement, tape, theta0) per
// repeat, loss gap evaluated at the replacement sample, max over the probe set.
StabilityEstimate estimate_stability(const LossModel& model, const DataGenSpec& spec,
                                     const AlgoConfig& cfg, const StabilityProtocol& protocol,
                                     std::uint64_t seed);

struct LossGapCheck {
    bool pass = true;
    double max_ratio = 0.0;  // loss gap / (L * divergence), over repeats with divergence > 0
    int violations = 0;
    int first_violation = -1;
};

// Every loss-gap sample must sit below L_hat times its repeat's final
// divergence (plus slack); pairs are (loss_gap, final_divergence).
LossGapCheck loss_gap_vs_divergence(const std::vector<std::pair<double, double>>& pairs,
                                    double l_hat, double slack = 1e-9);

// Does the stability budget cover the measured generalization gap,
// i.e. gen_gap <= eps_hat + 3 * combined SE?
struct CoverageCheck {
    double gen_gap = 0.0;
    double gen_gap_se = 0.0;
    double eps_hat = 0.0;
    double eps_se = 0.0;
    double margin = 0.0;  // eps_hat + 3*combined_se - gen_gap
    bool pass = false;
};

CoverageCheck check_stability_coverage(double gen_gap, double gen_gap_se, const StabilityEstimate& est);

// Mean and standard error of the mean.
std::pair<double, double> mean_se(const std::vector<double>& xs);

}  // namespace fedstab
