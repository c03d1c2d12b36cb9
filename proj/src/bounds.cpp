#include "fedstab/bounds.hpp"

#include <cmath>

#include "fedstab/error.hpp"

namespace fedstab {

void BoundInputs::validate() const {
    if (n < 1) throw std::invalid_argument("bound inputs: n must be >= 1");
    if (grad_norm.empty()) throw std::invalid_argument("bound inputs: empty gradient-norm series");
    if (alpha_tilde.size() != grad_norm.size() || alpha_hat.size() != grad_norm.size())
        throw std::invalid_argument("bound inputs: series lengths disagree");
    if (lipschitz < 0 || beta < 0 || sigma < 0 || mu < 0 || d_i < 0)
        throw std::invalid_argument("bound inputs: constants must be nonnegative");
    if (local_steps < 1) throw std::invalid_argument("bound inputs: local_steps must be >= 1");
    auto finite_nonneg = [](const std::vector<double>& xs) {
        for (double x : xs)
            if (!(x >= 0.0) || !std::isfinite(x)) return false;
        return true;
    };
    if (!finite_nonneg(grad_norm) || !finite_nonneg(alpha_tilde) || !finite_nonneg(alpha_hat))
        throw std::invalid_argument("bound inputs: series must be finite and nonnegative");
}

BoundReport fedavg_divergence_bound(const BoundInputs& in) {
    in.validate();
    BoundReport rep;
    double pref = 2.0 / static_cast<double>(in.n);
    double acc = 0.0;
    for (int t = 0; t < in.rounds(); ++t) {
        double at = in.alpha_tilde[static_cast<std::size_t>(t)];
        double w = pref * at * (1.0 + in.beta * at);
        double h = w * 2.0 * in.lipschitz * in.d_i;
        double c = w * in.grad_norm[static_cast<std::size_t>(t)];
        double v = w * in.sigma;
        rep.heterogeneity += h;
        rep.convergence += c;
        rep.variance += v;
        acc += h + c + v;
        rep.cumulative.push_back(acc);
    }
    rep.total = acc;
    return rep;
}

BoundReport scaffold_divergence_bound(const BoundInputs& in) {
    in.validate();
    BoundReport rep;
    double pref = 2.0 / static_cast<double>(in.n);
    // suffix sums of alpha_hat for the exponential factor, empty sum at t = T-1
    int T = in.rounds();
    std::vector<double> suffix(static_cast<std::size_t>(T) + 1, 0.0);
    for (int t = T - 1; t >= 0; --t)
        suffix[static_cast<std::size_t>(t)] =
            suffix[static_cast<std::size_t>(t) + 1] + in.alpha_hat[static_cast<std::size_t>(t)];
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
        double at = in.alpha_tilde[static_cast<std::size_t>(t)];
        double ah = in.alpha_hat[static_cast<std::size_t>(t)];
        double g1 = 2.0 * at + ah;
        double g2 = g1 + in.beta * at * at;
        double e = std::exp(2.0 * in.beta * suffix[static_cast<std::size_t>(t) + 1]);
        double h = pref * e * 2.0 * in.lipschitz * in.d_i * g1;
        double c = pref * e * g2 * in.grad_norm[static_cast<std::size_t>(t)];
        double v = pref * e * g2 * in.sigma;
        rep.heterogeneity += h;
        rep.convergence += c;
        rep.variance += v;
        acc += h + c + v;
        rep.cumulative.push_back(acc);
    }
    rep.total = acc;
    return rep;
}

BoundReport fedprox_divergence_bound(const BoundInputs& in) {
    // identical shape to the FedAvg sum with eta in the alpha_tilde slot
    return fedavg_divergence_bound(in);
}

namespace {

// c with alpha_{i,k} <= c / beta over all emitted per-step stepsizes
double step_ratio_c(const BoundInputs& in, bool per_step) {
    double amax = 0.0;
    for (double a : in.alpha_tilde) amax = std::max(amax, a);
    if (per_step) amax /= static_cast<double>(in.local_steps);
    return in.beta * amax;
}

double alpha_tilde_max(const BoundInputs& in) {
    double m = 0.0;
    for (double a : in.alpha_tilde) m = std::max(m, a);
    return m;
}

BoundReport fedavg_nonconvex(const BoundInputs& in) {
    BoundReport rep;
    int T = in.rounds();
    double c = step_ratio_c(in, true);
    double K = static_cast<double>(in.local_steps);
    rep.c_tilde = 1.0 + std::pow(1.0 + c, K - 1.0) * in.beta * alpha_tilde_max(in);
    double pref = 2.0 * rep.c_tilde / static_cast<double>(in.n);

    std::vector<double> suffix(static_cast<std::size_t>(T) + 1, 0.0);
    for (int t = T - 1; t >= 0; --t)
        suffix[static_cast<std::size_t>(t)] =
            suffix[static_cast<std::size_t>(t) + 1] + in.alpha_tilde[static_cast<std::size_t>(t)];
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
        double at = in.alpha_tilde[static_cast<std::size_t>(t)];
        double e = std::exp(in.beta * suffix[static_cast<std::size_t>(t) + 1]) * at *
                   std::exp(in.beta * at);
        double h = pref * e * 2.0 * in.lipschitz * in.d_i;
        double g = pref * e * in.grad_norm[static_cast<std::size_t>(t)];
        double v = pref * e * in.sigma;
        rep.heterogeneity += h;
        rep.convergence += g;
        rep.variance += v;
        acc += h + g + v;
        rep.cumulative.push_back(acc);
    }
    rep.total = acc;
    return rep;
}

BoundReport scaffold_nonconvex(const BoundInputs& in) {
    BoundReport rep;
    int T = in.rounds();
    double c = step_ratio_c(in, true);
    double K = static_cast<double>(in.local_steps);
    rep.c_tilde = 1.0 + in.beta * alpha_tilde_max(in) * std::pow(1.0 + c, K + 1.0);
    double two_n = 2.0 / static_cast<double>(in.n);

    // forward recursion d_{t+1} = carry_t * d_t + b_t
    std::vector<double> carry(static_cast<std::size_t>(T));
    double d = 0.0;
    for (int t = 0; t < T; ++t) {
        double at = in.alpha_tilde[static_cast<std::size_t>(t)];
        double ea = std::exp(in.beta * at);
        double gnorm = in.grad_norm[static_cast<std::size_t>(t)];
        double e_t = 2.0 * in.lipschitz * in.d_i + gnorm + in.sigma;  // bound on E||g_i(theta_t)||
        carry[static_cast<std::size_t>(t)] = (1.0 + 2.0 * in.beta * at) * ea;
        double b = two_n * in.beta * at * ea * e_t + two_n * at * ea * e_t +
                   two_n * at * ea * (rep.c_tilde * (gnorm + in.sigma) + 2.0 * in.lipschitz * in.d_i);
        d = carry[static_cast<std::size_t>(t)] * d + b;
        rep.cumulative.push_back(d);
    }
    rep.total = d;

    // the recursion is linear in d, so each additive term's pieces propagate
    // through the product of the remaining carries; split them exactly
    std::vector<double> mult(static_cast<std::size_t>(T) + 1, 1.0);
    for (int t = T - 1; t >= 0; --t)
        mult[static_cast<std::size_t>(t)] =
            mult[static_cast<std::size_t>(t) + 1] * carry[static_cast<std::size_t>(t)];
    for (int t = 0; t < T; ++t) {
        double at = in.alpha_tilde[static_cast<std::size_t>(t)];
        double ea = std::exp(in.beta * at);
        double gnorm = in.grad_norm[static_cast<std::size_t>(t)];
        double base = two_n * at * ea;
        double m = mult[static_cast<std::size_t>(t) + 1];
        rep.heterogeneity += m * base * (in.beta + 2.0) * 2.0 * in.lipschitz * in.d_i;
        rep.convergence += m * base * ((in.beta + 1.0) * gnorm + rep.c_tilde * gnorm);
        rep.variance += m * base * ((in.beta + 1.0) * in.sigma + rep.c_tilde * in.sigma);
    }
    return rep;
}

BoundReport fedprox_nonconvex(const BoundInputs& in) {
    BoundReport rep;
    int T = in.rounds();
    double delta = 0.0, eta_max = 0.0;
    double prefactor = 1.0;
    for (int t = 0; t < T; ++t) {
        double eta = in.alpha_tilde[static_cast<std::size_t>(t)];
        double dt = eta * in.mu;
        if (dt >= 1.0)
            throw std::invalid_argument(
                "fedprox nonconvex bound: eta * mu >= 1 at round " + std::to_string(t) +
                "; the curvature condition requires eta below 1/mu");
        delta = std::max(delta, dt);
        eta_max = std::max(eta_max, eta);
        prefactor /= (1.0 - dt);
    }
    rep.prefactor = prefactor;
    rep.implied_exponent = T > 1 ? std::log(prefactor) / std::log(static_cast<double>(T)) : 0.0;
    // (1 + beta*tau/mu) with tau = delta/(1-delta); tau/mu = eta_max/(1-delta)
    // exactly, which also covers mu = 0
    double factor = 1.0 + in.beta * eta_max / (1.0 - delta);
    double pref = prefactor * 2.0 / static_cast<double>(in.n);
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
        double eta = in.alpha_tilde[static_cast<std::size_t>(t)];
        double w = pref * eta * factor;
        double h = w * 2.0 * in.lipschitz * in.d_i;
        double g = w * in.grad_norm[static_cast<std::size_t>(t)];
        double v = w * in.sigma;
        rep.heterogeneity += h;
        rep.convergence += g;
        rep.variance += v;
        acc += h + g + v;
        rep.cumulative.push_back(acc);
    }
    rep.total = acc;
    return rep;
}

}  // namespace

BoundReport nonconvex_divergence_bound(const BoundInputs& in, Algo variant) {
    in.validate();
    switch (variant) {
        case Algo::FedAvg: return fedavg_nonconvex(in);
        case Algo::Scaffold: return scaffold_nonconvex(in);
        case Algo::FedProx: return fedprox_nonconvex(in);
    }
    throw std::invalid_argument("nonconvex_divergence_bound: bad variant");
}

double generalization_bound(const std::vector<BoundReport>& per_client, double lipschitz) {
    if (per_client.empty()) throw std::invalid_argument("generalization_bound: no reports");
    double mx = 0.0;
    for (const auto& r : per_client) mx = std::max(mx, r.total);
    return lipschitz * mx;
}

double generalization_bound_weighted(const std::vector<BoundReport>& per_client,
                                     const std::vector<double>& weights, double lipschitz) {
    if (per_client.size() != weights.size())
        throw std::invalid_argument("generalization_bound_weighted: weight count mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < per_client.size(); ++i) s += weights[i] * per_client[i].total;
    return lipschitz * s;
}

ConvergenceSums convergence_sums(const TrajectoryRecord& traj, double beta, Algo variant) {
    if (!traj.complete) throw std::invalid_argument("convergence_sums: incomplete trajectory");
    int T = traj.rounds_run;
    if (T < 1) throw std::invalid_argument("convergence_sums: empty trajectory");
    std::vector<double> g(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        double v = traj.rounds[static_cast<std::size_t>(t)].oracle_grad_norm;
        if (!std::isfinite(v))
            throw std::invalid_argument("convergence_sums: trajectory lacks oracle gradient norms");
        g[static_cast<std::size_t>(t)] = v;
    }
    std::vector<double> suffix(static_cast<std::size_t>(T) + 1, 0.0);
    for (int t = T - 1; t >= 0; --t)
        suffix[static_cast<std::size_t>(t)] =
            suffix[static_cast<std::size_t>(t) + 1] +
            traj.rounds[static_cast<std::size_t>(t)].alpha_hat;

    ConvergenceSums cs;
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
        double at = traj.alpha_tilde[static_cast<std::size_t>(t)];
        double term = 0.0;
        switch (variant) {
            case Algo::FedAvg:
            case Algo::FedProx:
                term = at * (1.0 + beta * at) * g[static_cast<std::size_t>(t)];
                break;
            case Algo::Scaffold: {
                double ah = traj.rounds[static_cast<std::size_t>(t)].alpha_hat;
                double g2 = 2.0 * at + ah + beta * at * at;
                term = std::exp(2.0 * beta * suffix[static_cast<std::size_t>(t) + 1]) * g2 *
                       g[static_cast<std::size_t>(t)];
                break;
            }
        }
        acc += term;
        cs.partial.push_back(acc);
    }
    cs.total = acc;

    // log-log fit of partial sums at dyadic checkpoints
    std::vector<double> lx, ly;
    for (int t = 1; t <= T; t *= 2) {
        double s = cs.partial[static_cast<std::size_t>(t - 1)];
        if (s > 0.0) {
            lx.push_back(std::log(static_cast<double>(t)));
            ly.push_back(std::log(s));
        }
    }
    if (static_cast<int>(lx.size()) < 2 || T < 4) {
        cs.exponent = 0.0;
        return cs;
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(lx.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    cs.exponent = den > 0.0 ? num / den : 0.0;
    return cs;
}

}  // namespace fedstab
