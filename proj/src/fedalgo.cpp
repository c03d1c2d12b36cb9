#include "fedstab/fedalgo.hpp"

#include <cmath>

#include "fedstab/error.hpp"
#include "fedstab/parallel.hpp"
#include "fedstab/rng.hpp"

namespace fedstab {

std::string algo_name(Algo a) {
    switch (a) {
        case Algo::FedAvg: return "fedavg";
        case Algo::Scaffold: return "scaffold";
        case Algo::FedProx: return "fedprox";
    }
    throw std::invalid_argument("algo_name: bad enum");
}

Algo algo_from_name(const std::string& s) {
    if (s == "fedavg") return Algo::FedAvg;
    if (s == "scaffold") return Algo::Scaffold;
    if (s == "fedprox") return Algo::FedProx;
    throw std::invalid_argument("unknown algorithm: " + s);
}

void StepSchedule::validate() const {
    if (kind == Kind::Constant) {
        if (!(alpha0 > 0.0)) throw std::invalid_argument("schedule: constant stepsize must be positive");
    } else {
        if (!(beta > 0.0)) throw std::invalid_argument("schedule: beta must be positive");
        if (k < 1) throw std::invalid_argument("schedule: local-step count must be >= 1");
    }
    if (!(cap > 0.0)) throw std::invalid_argument("schedule: cap must be positive");
}

double StepSchedule::value(int t) const {
    if (kind == Kind::Constant) return std::min(alpha0, cap);
    return std::min(cap, 1.0 / (24.0 * beta * static_cast<double>(k) * (static_cast<double>(t) + 1.0)));
}

void AlgoConfig::validate() const {
    if (rounds < 0) throw std::invalid_argument("config: rounds must be >= 0");
    if (algo != Algo::FedProx && local_steps < 1)
        throw std::invalid_argument("config: local_steps must be >= 1");
    if (batch < 0) throw std::invalid_argument("config: batch must be >= 0");
    if (!(prox_tol > 0.0)) throw std::invalid_argument("config: prox_tol must be positive");
    if (mu_hat < 0.0) throw std::invalid_argument("config: mu_hat must be >= 0");
    steps.validate();
}

RandomTape RandomTape::generate(int rounds, int clients, int local_steps, int batch,
                                const std::vector<std::size_t>& client_sizes, std::uint64_t seed) {
    if (rounds < 0 || clients < 1 || local_steps < 1 || batch < 1)
        throw std::invalid_argument("tape: bad shape parameters");
    if (client_sizes.size() != static_cast<std::size_t>(clients))
        throw std::invalid_argument("tape: need one dataset size per client");
    for (std::size_t n : client_sizes)
        if (n == 0) throw std::invalid_argument("tape: empty client dataset");
    RandomTape tape;
    tape.rounds_ = rounds;
    tape.clients_ = clients;
    tape.local_steps_ = local_steps;
    tape.batch_ = batch;
    tape.seed_ = seed;
    Rng rng(seed);
    Rng steps = rng.child("steps");
    Rng cv = rng.child("control");
    tape.step_idx_.resize(static_cast<std::size_t>(rounds) * clients * local_steps * batch);
    tape.cv_idx_.resize(static_cast<std::size_t>(rounds) * clients * batch);
    std::size_t s = 0, c = 0;
    for (int t = 0; t < rounds; ++t) {
        for (int i = 0; i < clients; ++i) {
            std::uint64_t n = client_sizes[static_cast<std::size_t>(i)];
            for (int k = 0; k < local_steps; ++k)
                for (int b = 0; b < batch; ++b) tape.step_idx_[s++] = static_cast<std::uint32_t>(steps.below(n));
            for (int b = 0; b < batch; ++b) tape.cv_idx_[c++] = static_cast<std::uint32_t>(cv.below(n));
        }
    }
    return tape;
}

const std::uint32_t* RandomTape::step_batch(int t, int i, int k) const {
    std::size_t off = ((static_cast<std::size_t>(t) * clients_ + i) * local_steps_ + k) * batch_;
    return step_idx_.data() + off;
}

const std::uint32_t* RandomTape::control_batch(int t, int i) const {
    std::size_t off = (static_cast<std::size_t>(t) * clients_ + i) * batch_;
    return cv_idx_.data() + off;
}

Vec aggregate(const std::vector<Vec>& locals, const std::vector<double>& weights) {
    if (locals.empty()) throw std::invalid_argument("aggregate: no locals");
    if (locals.size() != weights.size()) throw std::invalid_argument("aggregate: weight count mismatch");
    double ws = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("aggregate: weights must be nonnegative");
        ws += w;
    }
    if (std::abs(ws - 1.0) > 1e-12) throw std::invalid_argument("aggregate: weights must sum to 1");
    Vec out = locals[0];
    for (std::size_t j = 0; j < locals.size(); ++j) {
        check_same_size(locals[j], out, "aggregate");
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += weights[j] * (locals[j][i] - locals[0][i]);
    }
    return out;
}

double pooled_empirical_loss(const LossModel& model, const Vec& theta, const FederatedDataset& fed) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& c : fed.clients) {
        for (const auto& z : c.samples) s += model.loss(theta, z);
        n += c.size();
    }
    return s / static_cast<double>(n);
}

namespace {

void check_iterate(const Vec& th, double blowup, int round, int client) {
    if (!all_finite(th))
        throw DivergedError("training diverged: non-finite iterate at round " + std::to_string(round) +
                                ", client " + std::to_string(client),
                            round, client);
    if (norm2(th) > blowup)
        throw DivergedError("training diverged: iterate norm exceeded " + std::to_string(blowup) +
                                " at round " + std::to_string(round) + ", client " + std::to_string(client),
                            round, client);
}

}  // namespace

TrajectoryRecord run_training(const LossModel& model, const FederatedDataset& fed,
                              const AlgoConfig& cfg, const RandomTape& tape, const Vec& theta0,
                              const TrainOptions& opts) {
    cfg.validate();
    if (fed.clients.empty()) throw std::invalid_argument("run_training: no clients");
    for (const auto& c : fed.clients)
        if (c.samples.empty()) throw std::invalid_argument("run_training: empty client dataset");
    if (theta0.size() != static_cast<std::size_t>(model.dim()))
        throw std::invalid_argument("run_training: theta0 has wrong dimension");
    int m = static_cast<int>(fed.clients.size());
    bool needs_tape = cfg.batch > 0 && cfg.algo != Algo::FedProx;
    if (needs_tape) {
        if (tape.clients() != m || tape.rounds() < cfg.rounds || tape.local_steps() < cfg.local_steps ||
            tape.batch() != cfg.batch)
            throw std::invalid_argument("run_training: tape shape does not cover this configuration");
    }
    auto p = fed.weights();

    TrajectoryRecord rec;
    rec.algo = cfg.algo;
    rec.theta.reserve(static_cast<std::size_t>(cfg.rounds) + 1);
    rec.theta.push_back(theta0);
    rec.train_loss.push_back(pooled_empirical_loss(model, theta0, fed));

    std::vector<Vec> locals(static_cast<std::size_t>(m));
    std::vector<Vec> corrections;
    std::vector<RoundClientStats> cstats(static_cast<std::size_t>(m));

    for (int t = 0; t < cfg.rounds; ++t) {
        const Vec& cur = rec.theta.back();
        if (opts.stop_train_loss >= 0.0 && rec.train_loss.back() <= opts.stop_train_loss) break;

        RoundStats rs;
        if (opts.oracle) rs.oracle_grad_norm = norm2(batch_grad(model, cur, *opts.oracle));

        double a = cfg.steps.value(t);
        double a_tilde =
            cfg.algo == Algo::FedProx ? a : a * static_cast<double>(cfg.local_steps);

        if (cfg.algo == Algo::Scaffold) {
            // round-start control variates at the tape-designated positions
            std::vector<Vec> cvg(static_cast<std::size_t>(m));
            for (int i = 0; i < m; ++i) {
                const auto& cd = fed.clients[static_cast<std::size_t>(i)];
                cvg[static_cast<std::size_t>(i)] =
                    cfg.batch == 0 ? batch_grad(model, cur, cd)
                                   : batch_grad_at(model, cur, cd, tape.control_batch(t, i),
                                                   static_cast<std::size_t>(cfg.batch));
            }
            Vec gbar = aggregate(cvg, p);
            corrections.assign(static_cast<std::size_t>(m), Vec());
            for (int i = 0; i < m; ++i) {
                Vec corr = gbar;
                axpy(-1.0, cvg[static_cast<std::size_t>(i)], corr);
                corrections[static_cast<std::size_t>(i)] = std::move(corr);
            }
        }

        auto local_work = [&](std::size_t iu) {
            int i = static_cast<int>(iu);
            const auto& cd = fed.clients[iu];
            RoundClientStats cs;
            cs.alpha_tilde = a_tilde;
            if (opts.drift_stats) cs.local_grad_norm = norm2(batch_grad(model, cur, cd));
            if (cfg.algo == Algo::FedProx) {
                ProxOptions po;
                po.tol = cfg.prox_tol;
                po.mu_hat = cfg.mu_hat;
                po.warm_start = &cur;
                Vec sol = prox_solve(model, cd, cur, a, po);
                check_iterate(sol, opts.blowup_norm, t, i);
                cs.drift_max = dist(sol, cur);
                locals[iu] = std::move(sol);
            } else {
                Vec th = cur;
                Vec g;
                for (int k = 0; k < cfg.local_steps; ++k) {
                    g = cfg.batch == 0 ? batch_grad(model, th, cd)
                                       : batch_grad_at(model, th, cd, tape.step_batch(t, i, k),
                                                       static_cast<std::size_t>(cfg.batch));
                    if (cfg.algo == Algo::Scaffold) axpy(1.0, corrections[iu], g);
                    axpy(-a, g, th);
                    check_iterate(th, opts.blowup_norm, t, i);
                    if (opts.drift_stats) cs.drift_max = std::max(cs.drift_max, dist(th, cur));
                }
                locals[iu] = std::move(th);
            }
            cstats[iu] = cs;
        };
        parallel_for(static_cast<std::size_t>(m), opts.jobs, local_work);

        Vec next = aggregate(locals, p);
        check_iterate(next, opts.blowup_norm, t, -1);

        rs.alpha_hat = 0.0;
        for (int i = 0; i < m; ++i)
            rs.alpha_hat += p[static_cast<std::size_t>(i)] * cstats[static_cast<std::size_t>(i)].alpha_tilde;
        if (opts.drift_stats) rs.client = cstats;
        rec.rounds.push_back(std::move(rs));
        rec.alpha_tilde.push_back(a_tilde);
        rec.theta.push_back(std::move(next));
        rec.train_loss.push_back(pooled_empirical_loss(model, rec.theta.back(), fed));
        rec.rounds_run = t + 1;
    }
    rec.complete = true;
    return rec;
}

}  // namespace fedstab
