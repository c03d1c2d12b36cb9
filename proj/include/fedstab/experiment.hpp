#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fedstab/bounds.hpp"
#include "fedstab/data.hpp"
#include "fedstab/fedalgo.hpp"
#include "fedstab/model.hpp"
#include "fedstab/stability.hpp"

namespace fedstab {

// Rank correlation with average ranks on ties; NaN when fewer than two points
// or one side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// One slice of a trained run: either the first round at or below a target
// train-loss level (level finite) or a fixed round (level NaN). Train risk is
// recomputed from the dataset and must agree with the recorded series.
struct RunGap {
    double level = std::numeric_limits<double>::quiet_NaN();
    int t = -1;
    bool reached = false;
    double train_loss = 0.0;
    double test_loss = 0.0;
    double gap = 0.0;         // |test - train|
    double signed_gap = 0.0;  // test - train
};

std::vector<RunGap> measure_gen_gap(const LossModel& model, const TrajectoryRecord& rec,
                                    const FederatedDataset& fed, const ClientDataset& oracle,
                                    const std::vector<double>& levels,
                                    const std::vector<int>& at_rounds, bool at_final = true);

// Aggregated cell of a sweep: one (rho, algorithm, slice) with Monte Carlo
// mean and SE over repeats. Level NaN marks the final-model slice.
struct GapRow {
    double rho = 0.0;
    Algo algo = Algo::FedAvg;
    double level = std::numeric_limits<double>::quiet_NaN();
    double mean_round = 0.0;  // mean crossing round over the reached repeats
    int repeats = 0;
    int reached = 0;  // repeats that attained the level (all, for final rows)
    double gap = 0.0;
    double gap_se = 0.0;
    double signed_gap = 0.0;
    double signed_gap_se = 0.0;
    std::uint64_t cell_seed = 0;
};

struct TrendStat {
    Algo algo = Algo::FedAvg;
    double level = std::numeric_limits<double>::quiet_NaN();  // NaN = final slice
    double spearman_gap_vs_rho = std::numeric_limits<double>::quiet_NaN();
    int cells = 0;  // rho points with at least one reached repeat
};

struct SweepPlan {
    std::vector<double> rho_grid{0.0, 0.2, 0.5, 0.8, 1.0};
    std::vector<Algo> algos{Algo::FedAvg, Algo::Scaffold, Algo::FedProx};
    std::vector<double> levels{0.2, 0.08, 0.05, 0.01, 0.005};  // strictly decreasing
    int t_cap = 1000;
    int repeats = 20;
    DataGenSpec data;  // rho overridden per cell
    ModelSpec model;
    AlgoConfig algo_base;  // rounds <- t_cap, algo <- cell
    std::size_t oracle_size = 50000;
    double init_scale = 0.5;
    bool stop_at_min_level = true;  // stop a run once the last level is crossed
    int jobs = 1;
    void validate() const;
};

struct GenGapReport {
    std::vector<GapRow> rows;
    std::vector<TrendStat> trends;
    std::uint64_t seed = 0;
};

// Full factorial over (rho, algorithm, repeat); per-cell aggregation in fixed
// order, repeats parallelized with derived per-repeat streams.
GenGapReport sweep_rho(const SweepPlan& plan, std::uint64_t seed);

struct BoundCampaign {
    std::vector<double> rho_grid{0.0, 0.5, 1.0};
    std::vector<Algo> algos{Algo::FedAvg, Algo::Scaffold, Algo::FedProx};
    int repeats = 50;
    int probe_client = 0;
    std::size_t probe_position = 0;
    DataGenSpec data;  // rho overridden per cell
    ModelSpec model;
    AlgoConfig algo_base;
    std::size_t oracle_size = 50000;
    double init_scale = 0.5;
    int jobs = 1;
    ConstantOptions constants;
    void validate() const;
};

// Measured twin divergence against the matching divergence bound. The
// averaged mode (gradient-norm series averaged over repeats) carries the
// verdict; per-run plug-in evaluations are reported alongside. Hard pass/fail
// applies to convex models only.
struct BoundMeasuredCell {
    double rho = 0.0;
    Algo algo = Algo::FedAvg;
    int probe_client = 0;
    int repeats = 0;
    double mean_divergence = 0.0;
    double se_divergence = 0.0;
    double mean_loss_gap = 0.0;
    double se_loss_gap = 0.0;
    BoundReport rhs;          // averaged mode
    double rhs_band_lo = 0.0; // grad series at -2 SE (floored at 0)
    double rhs_band_hi = 0.0; // grad series at +2 SE
    double plugin_mean_rhs = 0.0;
    double plugin_min_ratio = 0.0;  // min over runs of rhs_run / divergence_run
    double ratio = 0.0;             // rhs.total / (mean + 2 SE)
    double eps_from_bound = 0.0;    // lipschitz * rhs.total
    bool asserted = false;
    bool pass = true;  // mean + 2 SE <= rhs.total, when asserted
    ConstantEstimates constants;
    double d_i = 0.0;
    std::uint64_t cell_seed = 0;
};

struct BoundCampaignReport {
    std::vector<BoundMeasuredCell> cells;
    bool all_pass = true;  // over asserted cells
    std::uint64_t seed = 0;
};

BoundCampaignReport bound_vs_measured(const BoundCampaign& campaign, std::uint64_t seed);

// CSV emission. One shared schema; inapplicable cells stay empty. Doubles are
// printed with round-trip precision so re-runs compare byte for byte.
std::string csv_header();
std::string format_cell(double v);  // empty for NaN
void append_sweep_csv(std::string& out, const std::string& campaign_id, std::uint64_t master_seed,
                      const GenGapReport& rep);
void append_bounds_csv(std::string& out, const std::string& campaign_id, std::uint64_t master_seed,
                       const BoundCampaignReport& rep);
void append_stability_csv(std::string& out, const std::string& campaign_id,
                          std::uint64_t master_seed, std::uint64_t cell_seed, double rho, Algo algo,
                          int t, const StabilityEstimate& est);

// Gap-versus-rho line plot for one algorithm, one polyline per slice.
std::string gap_svg(const GenGapReport& rep, Algo algo);

}  // namespace fedstab
