#pragma once

#include <vector>

#include "fedstab/fedalgo.hpp"
#include "fedstab/model.hpp"

namespace fedstab {

// Everything a divergence bound consumes: estimated problem constants, the
// probed client's heterogeneity, per-round stepsize aggregates, and the
// population gradient-norm series along the trajectory. Schedules are uniform
// across clients, so alpha_tilde serves every client and alpha_hat equals it
// under equal weights.
struct BoundInputs {
    int n = 0;  // total sample count across clients
    double lipschitz = 0.0;
    double beta = 0.0;
    double sigma = 0.0;
    double mu = 0.0;  // curvature floor magnitude, nonconvex only
    double d_i = 0.0; // TV divergence of the perturbed client
    std::vector<double> grad_norm;    // E||grad R(theta_t)||, t = 0..T-1
    std::vector<double> alpha_tilde;  // per-round local stepsize sum (eta for FedProx)
    std::vector<double> alpha_hat;    // per-round weighted mean of alpha_tilde
    int local_steps = 1;              // K, for the nonconvex drift factors
    void validate() const;
    int rounds() const { return static_cast<int>(grad_norm.size()); }
};

struct BoundReport {
    double total = 0.0;
    std::vector<double> cumulative;  // running RHS after each round
    // the three-term split: heterogeneity (2LD_i), convergence (grad norms),
    // sampling variance (sigma)
    double heterogeneity = 0.0;
    double convergence = 0.0;
    double variance = 0.0;
    double c_tilde = 0.0;            // nonconvex FedAvg/SCAFFOLD drift constant
    double prefactor = 1.0;          // nonconvex FedProx product of 1/(1-delta_t)
    double implied_exponent = 0.0;   // log(prefactor)/log(T)
};

// Convex divergence bounds on E||theta_T - theta'_T||.
BoundReport fedavg_divergence_bound(const BoundInputs& in);
BoundReport scaffold_divergence_bound(const BoundInputs& in);
BoundReport fedprox_divergence_bound(const BoundInputs& in);

// Nonconvex counterparts: FedAvg via the unrolled exponential form (with a
// forward-recursion cross-check in `cumulative`), SCAFFOLD by forward
// recursion of its per-round inequality, FedProx via the product-prefactor
// closed form. FedProx requires max_t eta_t * mu < 1.
BoundReport nonconvex_divergence_bound(const BoundInputs& in, Algo variant);

// Loss-gap bound from a divergence bound: L times the worst probed client.
double generalization_bound(const std::vector<BoundReport>& per_client, double lipschitz);
// The weight-averaged alternative; always <= the max form.
double generalization_bound_weighted(const std::vector<BoundReport>& per_client,
                                     const std::vector<double>& weights, double lipschitz);

// Partial sums of the convergence-theorem left-hand sides along a recorded
// trajectory, plus a growth exponent fitted on dyadic checkpoints of the
// partial-sum curve. Sublinear growth (exponent < 1) is the certified regime.
struct ConvergenceSums {
    double total = 0.0;
    std::vector<double> partial;
    double exponent = 0.0;
};
ConvergenceSums convergence_sums(const TrajectoryRecord& traj, double beta, Algo variant);

}  // namespace fedstab
