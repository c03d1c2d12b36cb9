#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fedstab/data.hpp"
#include "fedstab/model.hpp"
#include "fedstab/vec.hpp"

namespace fedstab {

enum class Algo { FedAvg, Scaffold, FedProx };

std::string algo_name(Algo a);
Algo algo_from_name(const std::string& s);

// Per-round stepsize, shared by all local steps of that round. The diminishing
// variant follows the cap 1 / (24 beta K (t+1)) that keeps the certified
// convergence regime; for FedProx it plays the role of the per-round eta with
// K fixed to 1 in the formula.
struct StepSchedule {
    enum class Kind { Constant, TheoryDiminishing };
    Kind kind = Kind::Constant;
    double alpha0 = 0.05;                                  // Constant value
    double beta = 1.0;                                     // TheoryDiminishing smoothness
    int k = 1;                                             // TheoryDiminishing local-step count
    double cap = std::numeric_limits<double>::infinity();  // extra ceiling, both kinds
    double value(int t) const;
    void validate() const;
};

struct AlgoConfig {
    Algo algo = Algo::FedAvg;
    int rounds = 50;      // T
    int local_steps = 5;  // K; ignored by FedProx
    int batch = 1;        // per-step sample count; 0 = deterministic full batch
    StepSchedule steps;   // alpha for FedAvg/Scaffold, eta for FedProx
    double prox_tol = 1e-8;
    double mu_hat = 0.0;  // curvature floor handed to nonconvex prox solves
    void validate() const;
};

// Pre-drawn sample positions for every (round, client, local step, batch slot),
// plus one batch per (round, client) for the round-start control variates.
// Two runs sharing a tape on equal-sized datasets touch the same positions,
// which is what couples a twin pair everywhere except the swapped sample.
class RandomTape {
  public:
    static RandomTape generate(int rounds, int clients, int local_steps, int batch,
                               const std::vector<std::size_t>& client_sizes, std::uint64_t seed);
    const std::uint32_t* step_batch(int t, int i, int k) const;
    const std::uint32_t* control_batch(int t, int i) const;
    int rounds() const { return rounds_; }
    int clients() const { return clients_; }
    int local_steps() const { return local_steps_; }
    int batch() const { return batch_; }
    std::uint64_t seed() const { return seed_; }

  private:
    int rounds_ = 0, clients_ = 0, local_steps_ = 0, batch_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<std::uint32_t> step_idx_;
    std::vector<std::uint32_t> cv_idx_;
};

struct RoundClientStats {
    double drift_max = 0.0;        // max_k ||theta_{i,k} - theta_t||
    double local_grad_norm = 0.0;  // full-batch client gradient norm at round start
    double alpha_tilde = 0.0;      // sum of local stepsizes (eta for FedProx)
};

struct RoundStats {
    double alpha_hat = 0.0;  // weighted mean of the client alpha_tilde values
    double oracle_grad_norm = std::numeric_limits<double>::quiet_NaN();
    std::vector<RoundClientStats> client;  // filled when drift stats are on
};

struct TrajectoryRecord {
    Algo algo = Algo::FedAvg;
    std::vector<Vec> theta;         // T+1 iterates
    std::vector<double> train_loss; // T+1 values of the pooled empirical risk
    std::vector<RoundStats> rounds; // T entries
    std::vector<double> alpha_tilde;// per-round sum of local stepsizes (uniform schedule)
    bool complete = false;
    int rounds_run = 0;
};

struct TrainOptions {
    const ClientDataset* oracle = nullptr;  // record mean-gradient norm on this set each round
    bool drift_stats = false;
    int jobs = 1;
    double blowup_norm = 1e8;
    double stop_train_loss = -1.0;  // stop once pooled loss falls to this level; <0 = never
};

// Anchored weighted mean: out = locals[0] + sum_j w_j (locals[j] - locals[0]).
// Identical locals aggregate to exactly that vector, bit for bit, which the
// coupling identities rely on. Weights must sum to 1.
Vec aggregate(const std::vector<Vec>& locals, const std::vector<double>& weights);

TrajectoryRecord run_training(const LossModel& model, const FederatedDataset& fed,
                              const AlgoConfig& cfg, const RandomTape& tape, const Vec& theta0,
                              const TrainOptions& opts = {});

// Sample mean of the loss over all clients' samples; the quantity recorded
// per round in TrajectoryRecord::train_loss.
double pooled_empirical_loss(const LossModel& model, const Vec& theta, const FederatedDataset& fed);

}  // namespace fedstab
