#include "fedstab/model.hpp"

#include <algorithm>
#include <cmath>

#include "fedstab/error.hpp"

namespace fedstab {

// ---- least squares ----

LeastSquaresModel::LeastSquaresModel(int feature_dim) : feature_dim_(feature_dim) {
    if (feature_dim < 1) throw std::invalid_argument("least_squares: feature_dim must be positive");
}

double LeastSquaresModel::loss(const Vec& theta, const Sample& z) const {
    double r = dot(theta, z.x) - static_cast<double>(z.label);
    return 0.5 * r * r;
}

void LeastSquaresModel::grad(const Vec& theta, const Sample& z, Vec& out) const {
    double r = dot(theta, z.x) - static_cast<double>(z.label);
    out.resize(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) out[i] = r * z.x[i];
}

// ---- multiclass logistic ----

LogisticModel::LogisticModel(int num_classes, int feature_dim)
    : num_classes_(num_classes), feature_dim_(feature_dim) {
    if (num_classes < 2) throw std::invalid_argument("logistic: need at least 2 classes");
    if (feature_dim < 1) throw std::invalid_argument("logistic: feature_dim must be positive");
}

void LogisticModel::logits(const Vec& theta, const Vec& x, Vec& out) const {
    out.assign(static_cast<std::size_t>(num_classes_), 0.0);
    for (int c = 0; c < num_classes_; ++c) {
        const double* row = theta.data() + static_cast<std::size_t>(c) * x.size();
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) s += row[j] * x[j];
        out[static_cast<std::size_t>(c)] = s;
    }
}

double LogisticModel::loss(const Vec& theta, const Sample& z) const {
    Vec l;
    logits(theta, z.x, l);
    double mx = *std::max_element(l.begin(), l.end());
    double se = 0.0;
    for (double v : l) se += std::exp(v - mx);
    return mx + std::log(se) - l[static_cast<std::size_t>(z.label)];
}

void LogisticModel::grad(const Vec& theta, const Sample& z, Vec& out) const {
    Vec l;
    logits(theta, z.x, l);
    double mx = *std::max_element(l.begin(), l.end());
    double se = 0.0;
    for (double& v : l) {
        v = std::exp(v - mx);
        se += v;
    }
    out.resize(theta.size());
    for (int c = 0; c < num_classes_; ++c) {
        double pc = l[static_cast<std::size_t>(c)] / se - (c == z.label ? 1.0 : 0.0);
        double* row = out.data() + static_cast<std::size_t>(c) * z.x.size();
        for (std::size_t j = 0; j < z.x.size(); ++j) row[j] = pc * z.x[j];
    }
}

// ||p - e_y|| <= sqrt(2) and features stay in the unit ball.
double LogisticModel::grad_norm_cap() const { return std::sqrt(2.0); }

// ---- mlp ----

namespace {

double softplus(double t) {
    if (t > 30.0) return t;
    if (t < -30.0) return std::exp(t);
    return std::log1p(std::exp(t));
}

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace

MlpModel::MlpModel(int feature_dim, int hidden, int num_classes)
    : feature_dim_(feature_dim), hidden_(hidden), num_classes_(num_classes) {
    if (feature_dim < 1 || hidden < 1 || num_classes < 2)
        throw std::invalid_argument("mlp: bad layer sizes");
}

int MlpModel::dim() const { return hidden_ * feature_dim_ + hidden_ + num_classes_ * hidden_ + num_classes_; }

double MlpModel::loss(const Vec& theta, const Sample& z) const {
    const std::size_t d = static_cast<std::size_t>(feature_dim_);
    const std::size_t H = static_cast<std::size_t>(hidden_);
    const std::size_t C = static_cast<std::size_t>(num_classes_);
    const double* w1 = theta.data();
    const double* b1 = w1 + H * d;
    const double* w2 = b1 + H;
    const double* b2 = w2 + C * H;

    Vec h(H);
    for (std::size_t i = 0; i < H; ++i) {
        double s = b1[i];
        const double* row = w1 + i * d;
        for (std::size_t j = 0; j < d; ++j) s += row[j] * z.x[j];
        h[i] = softplus(s);
    }
    Vec a2(C);
    for (std::size_t c = 0; c < C; ++c) {
        double s = b2[c];
        const double* row = w2 + c * H;
        for (std::size_t i = 0; i < H; ++i) s += row[i] * h[i];
        a2[c] = s;
    }
    double mx = *std::max_element(a2.begin(), a2.end());
    double se = 0.0;
    for (double v : a2) se += std::exp(v - mx);
    return mx + std::log(se) - a2[static_cast<std::size_t>(z.label)];
}

void MlpModel::grad(const Vec& theta, const Sample& z, Vec& out) const {
    const std::size_t d = static_cast<std::size_t>(feature_dim_);
    const std::size_t H = static_cast<std::size_t>(hidden_);
    const std::size_t C = static_cast<std::size_t>(num_classes_);
    const double* w1 = theta.data();
    const double* b1 = w1 + H * d;
    const double* w2 = b1 + H;
    const double* b2 = w2 + C * H;

    Vec a1(H), h(H);
    for (std::size_t i = 0; i < H; ++i) {
        double s = b1[i];
        const double* row = w1 + i * d;
        for (std::size_t j = 0; j < d; ++j) s += row[j] * z.x[j];
        a1[i] = s;
        h[i] = softplus(s);
    }
    Vec p(C);
    for (std::size_t c = 0; c < C; ++c) {
        double s = b2[c];
        const double* row = w2 + c * H;
        for (std::size_t i = 0; i < H; ++i) s += row[i] * h[i];
        p[c] = s;
    }
    double mx = *std::max_element(p.begin(), p.end());
    double se = 0.0;
    for (double& v : p) {
        v = std::exp(v - mx);
        se += v;
    }
    for (double& v : p) v /= se;
    p[static_cast<std::size_t>(z.label)] -= 1.0;  // now the output-layer error

    out.assign(theta.size(), 0.0);
    double* gw1 = out.data();
    double* gb1 = gw1 + H * d;
    double* gw2 = gb1 + H;
    double* gb2 = gw2 + C * H;

    Vec dh(H, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        double* row = gw2 + c * H;
        const double* w2row = w2 + c * H;
        for (std::size_t i = 0; i < H; ++i) {
            row[i] = p[c] * h[i];
            dh[i] += w2row[i] * p[c];
        }
        gb2[c] = p[c];
    }
    for (std::size_t i = 0; i < H; ++i) {
        double d1 = dh[i] * sigmoid(a1[i]);
        double* row = gw1 + i * d;
        for (std::size_t j = 0; j < d; ++j) row[j] = d1 * z.x[j];
        gb1[i] = d1;
    }
}

std::unique_ptr<LossModel> make_model(const ModelSpec& spec) {
    if (spec.kind == "least_squares") return std::make_unique<LeastSquaresModel>(spec.feature_dim);
    if (spec.kind == "logistic") return std::make_unique<LogisticModel>(spec.num_classes, spec.feature_dim);
    if (spec.kind == "mlp") return std::make_unique<MlpModel>(spec.feature_dim, spec.hidden, spec.num_classes);
    throw std::invalid_argument("unknown model kind: " + spec.kind);
}

// ---- batch helpers ----

double batch_loss(const LossModel& model, const Vec& theta, const ClientDataset& data) {
    if (data.samples.empty()) throw std::invalid_argument("batch_loss: empty dataset");
    double s = 0.0;
    for (const auto& z : data.samples) s += model.loss(theta, z);
    return s / static_cast<double>(data.size());
}

Vec batch_grad(const LossModel& model, const Vec& theta, const ClientDataset& data) {
    if (data.samples.empty()) throw std::invalid_argument("batch_grad: empty dataset");
    Vec acc(theta.size(), 0.0), g;
    for (const auto& z : data.samples) {
        model.grad(theta, z, g);
        axpy(1.0, g, acc);
    }
    scale(1.0 / static_cast<double>(data.size()), acc);
    return acc;
}

Vec batch_grad_at(const LossModel& model, const Vec& theta, const ClientDataset& data,
                  const std::uint32_t* positions, std::size_t count) {
    if (count == 0) throw std::invalid_argument("batch_grad_at: empty position list");
    Vec acc(theta.size(), 0.0), g;
    for (std::size_t k = 0; k < count; ++k) {
        std::uint32_t p = positions[k];
        if (p >= data.size()) throw std::invalid_argument("batch_grad_at: position out of range");
        model.grad(theta, data.samples[p], g);
        axpy(1.0, g, acc);
    }
    scale(1.0 / static_cast<double>(count), acc);
    return acc;
}

Vec batch_grad_at(const LossModel& model, const Vec& theta, const ClientDataset& data,
                  const std::vector<std::uint32_t>& positions) {
    return batch_grad_at(model, theta, data, positions.data(), positions.size());
}

Vec fd_grad(const LossModel& model, const Vec& theta, const Sample& z, double h) {
    Vec g(theta.size());
    Vec t = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double orig = t[i];
        t[i] = orig + h;
        double lp = model.loss(t, z);
        t[i] = orig - h;
        double lm = model.loss(t, z);
        t[i] = orig;
        g[i] = (lp - lm) / (2.0 * h);
    }
    return g;
}

Vec hvp(const LossModel& model, const Vec& theta, const ClientDataset& data, const Vec& v, double h) {
    double nv = norm2(v);
    if (nv == 0.0) return Vec(theta.size(), 0.0);
    Vec tp = theta, tm = theta;
    axpy(h / nv, v, tp);
    axpy(-h / nv, v, tm);
    Vec gp = batch_grad(model, tp, data);
    Vec gm = batch_grad(model, tm, data);
    Vec out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) out[i] = (gp[i] - gm[i]) * nv / (2.0 * h);
    return out;
}

double smoothness_constant(const LossModel& model, const ClientDataset* data) {
    double max_x2 = 1.0;  // certified by the unit-ball feature invariant
    if (data) {
        max_x2 = 0.0;
        for (const auto& z : data->samples) max_x2 = std::max(max_x2, dot(z.x, z.x));
    }
    if (model.name() == "least_squares") return max_x2;
    if (model.name() == "logistic") return 0.5 * max_x2;
    throw std::invalid_argument("smoothness_constant: no certified bound for " + model.name());
}

// ---- prox ----

namespace {

// In-place Cholesky solve of M x = b for symmetric positive definite M (row-major d x d).
Vec chol_solve(std::vector<double> M, Vec b) {
    std::size_t d = b.size();
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = M[i * d + j];
            for (std::size_t k = 0; k < j; ++k) s -= M[i * d + k] * M[j * d + k];
            if (i == j) {
                if (s <= 0.0) throw Error("prox_solve: normal matrix not positive definite");
                M[i * d + i] = std::sqrt(s);
            } else {
                M[i * d + j] = s / M[j * d + j];
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= M[i * d + k] * b[k];
        b[i] = s / M[i * d + i];
    }
    for (std::size_t i = d; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < d; ++k) s -= M[k * d + i] * b[k];
        b[i] = s / M[i * d + i];
    }
    return b;
}

}  // namespace

Vec prox_solve(const LossModel& model, const ClientDataset& data, const Vec& anchor, double eta,
               const ProxOptions& opts) {
    if (!(eta > 0.0)) throw std::invalid_argument("prox_solve: eta must be positive");
    if (anchor.size() != static_cast<std::size_t>(model.dim()))
        throw std::invalid_argument("prox_solve: anchor has wrong dimension");
    if (data.samples.empty()) throw std::invalid_argument("prox_solve: empty dataset");
    if (!model.convex() && opts.mu_hat > 0.0 && eta * opts.mu_hat >= 1.0)
        throw std::invalid_argument("prox_solve: eta * mu_hat must stay below 1 for nonconvex losses");

    if (model.name() == "least_squares") {
        std::size_t d = anchor.size();
        std::vector<double> M(d * d, 0.0);
        Vec b(d, 0.0);
        double inv_n = 1.0 / static_cast<double>(data.size());
        for (const auto& z : data.samples) {
            for (std::size_t i = 0; i < d; ++i) {
                b[i] += inv_n * static_cast<double>(z.label) * z.x[i];
                for (std::size_t j = 0; j <= i; ++j) M[i * d + j] += inv_n * z.x[i] * z.x[j];
            }
        }
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = i + 1; j < d; ++j) M[i * d + j] = M[j * d + i];
            M[i * d + i] += 1.0 / eta;
            b[i] += anchor[i] / eta;
        }
        return chol_solve(std::move(M), std::move(b));
    }

    // Gradient descent with a curvature-derived fixed step. Objective-based
    // line searches stall once true decreases drop below the floating-point
    // resolution of the loss; gradient norms stay accurate to ~1e-14, so both
    // the step rule and the stopping test work on gradients alone.
    Vec theta = opts.warm_start ? *opts.warm_start : anchor;
    auto gradient = [&](const Vec& t) {
        Vec g = batch_grad(model, t, data);
        for (std::size_t i = 0; i < t.size(); ++i) g[i] += (t[i] - anchor[i]) / eta;
        return g;
    };
    double l_est = 1.0 / eta;  // the prox term's curvature is known exactly
    if (model.convex()) l_est += smoothness_constant(model, &data);
    Vec g = gradient(theta);
    double gn = norm2(g);
    Vec best = theta, best_g = g;
    double best_gn = gn;
    for (int it = 0; it < opts.max_iter; ++it) {
        if (!std::isfinite(gn)) throw Error("prox_solve: gradient went non-finite");
        if (gn <= opts.tol) return theta;
        double s = 1.0 / l_est;
        Vec trial = theta;
        axpy(-s, g, trial);
        Vec tg = gradient(trial);
        double tgn = norm2(tg);
        // secant curvature along the step keeps an estimated l_est honest
        Vec dg = tg;
        axpy(-1.0, g, dg);
        l_est = std::max(l_est, 1.05 * norm2(dg) / (s * gn));
        if (tgn > gn) {  // overshoot: tighten the step, restart from the best point
            l_est *= 2.0;
            theta = best;
            g = best_g;
            gn = best_gn;
            continue;
        }
        theta = std::move(trial);
        g = std::move(tg);
        gn = tgn;
        if (gn < best_gn) {
            best = theta;
            best_g = g;
            best_gn = gn;
        }
    }
    throw ProxError("prox_solve: no convergence after " + std::to_string(opts.max_iter) +
                        " iterations, residual " + std::to_string(gn),
                    gn);
}

// ---- constants ----

namespace {

double power_iteration_norm(const LossModel& model, const Vec& theta, const ClientDataset& data,
                            int iters, Rng& rng) {
    Vec v(theta.size());
    for (auto& x : v) x = rng.normal();
    double lam = 0.0;
    for (int k = 0; k < iters; ++k) {
        Vec hv = hvp(model, theta, data, v);
        lam = norm2(hv);
        if (lam == 0.0) return 0.0;
        scale(1.0 / lam, hv);
        v = std::move(hv);
    }
    return lam;
}

// lambda_min via power iteration on (shift*I - H).
double min_eigenvalue(const LossModel& model, const Vec& theta, const ClientDataset& data,
                      double shift, int iters, Rng& rng) {
    Vec v(theta.size());
    for (auto& x : v) x = rng.normal();
    double nv = norm2(v);
    scale(1.0 / nv, v);
    double lam_b = 0.0;
    for (int k = 0; k < iters; ++k) {
        Vec hv = hvp(model, theta, data, v);
        Vec bv(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) bv[i] = shift * v[i] - hv[i];
        lam_b = norm2(bv);
        if (lam_b == 0.0) break;
        scale(1.0 / lam_b, bv);
        v = std::move(bv);
    }
    // Rayleigh quotient of H at the converged direction
    Vec hv = hvp(model, theta, data, v);
    return dot(v, hv) / dot(v, v);
}

}  // namespace

ConstantEstimates estimate_constants(const LossModel& model, const std::vector<Vec>& probes,
                                     const FederatedDataset& fed, const ClientDataset& oracle,
                                     const ConstantOptions& opts) {
    if (probes.empty()) throw std::invalid_argument("estimate_constants: need at least one probe point");
    ConstantEstimates est;
    Rng rng(opts.seed);

    ClientDataset pooled;
    for (const auto& c : fed.clients)
        pooled.samples.insert(pooled.samples.end(), c.samples.begin(), c.samples.end());

    double max_gn = 0.0;
    double max_rms = 0.0;
    Vec g;
    for (const auto& theta : probes) {
        for (const auto& z : pooled.samples) {
            model.grad(theta, z, g);
            max_gn = std::max(max_gn, norm2(g));
        }
        for (const auto& z : oracle.samples) {
            model.grad(theta, z, g);
            max_gn = std::max(max_gn, norm2(g));
        }
        for (const auto& client : fed.clients) {
            Vec mean = batch_grad(model, theta, client);
            double s = 0.0;
            for (const auto& z : client.samples) {
                model.grad(theta, z, g);
                s += dist(g, mean) * dist(g, mean);
            }
            max_rms = std::max(max_rms, std::sqrt(s / static_cast<double>(client.size())));
        }
    }
    est.lipschitz_raw = max_gn;
    est.lipschitz = std::min(max_gn * opts.lipschitz_safety, model.grad_norm_cap());
    est.sigma = max_rms;

    if (model.convex()) {
        est.beta = smoothness_constant(model, &pooled);
        est.mu = 0.0;
        est.mu_raw = 0.0;
    } else {
        double beta_raw = 0.0;
        double lam_min = 0.0;
        for (const auto& theta : probes) {
            Rng pr = rng.child(static_cast<std::uint64_t>(&theta - probes.data()));
            beta_raw = std::max(beta_raw, power_iteration_norm(model, theta, pooled, opts.power_iters, pr));
        }
        for (const auto& theta : probes) {
            Rng pr = rng.child(1000 + static_cast<std::uint64_t>(&theta - probes.data()));
            lam_min = std::min(lam_min, min_eigenvalue(model, theta, pooled, beta_raw, opts.power_iters, pr));
        }
        est.beta = beta_raw * opts.beta_safety;
        est.mu_raw = std::max(0.0, -lam_min);
        est.mu = est.mu_raw * opts.mu_safety;
    }
    return est;
}

}  // namespace fedstab
