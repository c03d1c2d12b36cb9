#include "fedstab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fedstab/data.hpp"
#include "fedstab/fedalgo.hpp"
#include "fedstab/model.hpp"
#include "fedstab/stability.hpp"
#include "fedstab/vec.hpp"

namespace fedstab {

namespace {

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), f, a, b);
    return buf;
}

Sample rand_sample(Rng& r, int d, int classes) {
    Sample z;
    z.x.resize(static_cast<std::size_t>(d));
    for (auto& v : z.x) v = 0.6 * r.normal();
    double nm = norm2(z.x);
    if (nm > 1.0) scale(1.0 / nm, z.x);
    z.label = static_cast<int>(r.below(static_cast<std::uint64_t>(classes)));
    return z;
}

ClientDataset rand_data(Rng& r, int d, int classes, int n) {
    ClientDataset cd;
    for (int i = 0; i < n; ++i) cd.samples.push_back(rand_sample(r, d, classes));
    return cd;
}

Vec rand_theta(Rng& r, int dim, double s) {
    Vec th(static_cast<std::size_t>(dim));
    for (auto& v : th) v = s * r.normal();
    return th;
}

bool same_vec(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

CheckResult check_grad_step_nonexpansive(const VerifyOptions& opts) {
    Rng root = Rng(opts.seed).child("nonexp");
    double worst = -1e300;
    for (int inst = 0; inst < opts.nonexpansive_instances; ++inst) {
        Rng r = root.child(static_cast<std::uint64_t>(inst));
        bool ls = inst % 2 == 0;
        int d = 4 + static_cast<int>(r.below(4));
        int classes = 3;
        std::unique_ptr<LossModel> model;
        if (ls)
            model = std::make_unique<LeastSquaresModel>(d);
        else
            model = std::make_unique<LogisticModel>(classes, d);
        ClientDataset data = rand_data(r, d, classes, 4 + static_cast<int>(r.below(5)));
        double beta = smoothness_constant(*model, &data);
        double alpha = 1.0 / beta;
        Vec x = rand_theta(r, model->dim(), 2.0);
        Vec y = rand_theta(r, model->dim(), 2.0);
        Vec tx = x, ty = y;
        axpy(-alpha, batch_grad(*model, x, data), tx);
        axpy(-alpha, batch_grad(*model, y, data), ty);
        worst = std::max(worst, dist(tx, ty) - dist(x, y));
    }
    bool pass = worst <= 1e-12;
    return {"grad-step-nonexpansive", pass,
            fmt("max expansion excess %.3e over instances (tol 1e-12)", worst)};
}

CheckResult check_prox_nonexpansive(const VerifyOptions& opts) {
    Rng root = Rng(opts.seed).child("proxne");
    double worst = -1e300;
    for (int inst = 0; inst < opts.prox_instances; ++inst) {
        Rng r = root.child(static_cast<std::uint64_t>(inst));
        bool ls = inst % 2 == 0;
        int d = 3 + static_cast<int>(r.below(3));
        std::unique_ptr<LossModel> model;
        if (ls)
            model = std::make_unique<LeastSquaresModel>(d);
        else
            model = std::make_unique<LogisticModel>(3, d);
        ClientDataset data = rand_data(r, d, 3, 5);
        double eta = 0.05 + 1.5 * r.uniform();
        ProxOptions po;
        po.tol = ls ? 1e-10 : 1e-8;
        Vec x1 = rand_theta(r, model->dim(), 1.5);
        Vec x2 = rand_theta(r, model->dim(), 1.5);
        Vec p1 = prox_solve(*model, data, x1, eta, po);
        Vec p2 = prox_solve(*model, data, x2, eta, po);
        worst = std::max(worst, dist(p1, p2) - dist(x1, x2) - 2.0 * po.tol);
    }
    bool pass = worst <= 0.0;
    return {"prox-nonexpansive", pass,
            fmt("max contraction excess %.3e over instances (tol 2*prox_tol)", worst)};
}

CheckResult check_prox_expansion_nonconvex(const VerifyOptions& opts) {
    Rng root = Rng(opts.seed).child("proxex");
    double worst = -1e300;
    for (int inst = 0; inst < opts.mlp_prox_instances; ++inst) {
        Rng r = root.child(static_cast<std::uint64_t>(inst));
        MlpModel model(4, 3, 3);
        ClientDataset data = rand_data(r, 4, 3, 6);
        Vec x1 = rand_theta(r, model.dim(), 0.8);
        Vec x2 = x1;
        axpy(0.5 + r.uniform(), rand_theta(r, model.dim(), 0.3), x2);

        // curvature floor probed along the segment between the two anchors
        std::vector<Vec> probes;
        for (int q = 0; q <= 4; ++q) {
            Vec p = x1;
            double w = static_cast<double>(q) / 4.0;
            for (std::size_t i = 0; i < p.size(); ++i) p[i] += w * (x2[i] - x1[i]);
            probes.push_back(std::move(p));
        }
        FederatedDataset fed;
        fed.clients.push_back(data);
        ConstantOptions copts;
        copts.seed = r.child("consts").seed();
        ConstantEstimates consts = estimate_constants(model, probes, fed, data, copts);

        double mu = consts.mu;
        double eta = mu > 0.0 ? std::min(0.2, 0.5 / mu) : 0.2;
        ProxOptions po;
        po.tol = 1e-9;
        po.mu_hat = mu;
        Vec p1 = prox_solve(model, data, x1, eta, po);
        Vec p2 = prox_solve(model, data, x2, eta, po);
        double allowed = dist(x1, x2) / (1.0 - eta * mu) + 2.0 * po.tol;
        worst = std::max(worst, dist(p1, p2) - allowed);
    }
    bool pass = worst <= 1e-9;
    return {"prox-expansion-nonconvex", pass,
            fmt("max excess over 1/(1 - eta*mu) envelope %.3e (tol 1e-9)", worst)};
}

CheckResult check_tv_gradient_gap(const VerifyOptions& opts) {
    Rng root = Rng(opts.seed).child("tvgap");
    DataGenSpec spec = DataGenSpec::make_default(5, 5, 10, 0.7, 50);
    HeterogeneityProfile profile = total_variation_labels(spec);
    LogisticModel model(spec.num_classes, spec.feature_dim);

    // one large draw per law, reused across all probe points
    Rng go = root.child("global");
    ClientDataset global_set = draw_global(spec, opts.tv_oracle, go);
    std::vector<ClientDataset> client_sets(static_cast<std::size_t>(spec.clients()));
    for (int i = 0; i < spec.clients(); ++i) {
        Rng co = root.child("client").child(static_cast<std::uint64_t>(i));
        auto& cs = client_sets[static_cast<std::size_t>(i)];
        cs.samples.reserve(opts.tv_oracle);
        for (std::size_t k = 0; k < opts.tv_oracle; ++k)
            cs.samples.push_back(draw_sample(spec, i, co));
    }

    // mean gradient, trace-covariance SE of the mean, and max sample norm
    auto stats = [&](const Vec& th, const ClientDataset& set, Vec& mean, double& se,
                     double& max_norm) {
        Vec g(static_cast<std::size_t>(model.dim()));
        mean.assign(static_cast<std::size_t>(model.dim()), 0.0);
        double sq = 0.0;
        max_norm = 0.0;
        for (const auto& z : set.samples) {
            model.grad(th, z, g);
            axpy(1.0, g, mean);
            double n2 = dot(g, g);
            sq += n2;
            max_norm = std::max(max_norm, std::sqrt(n2));
        }
        double n = static_cast<double>(set.samples.size());
        scale(1.0 / n, mean);
        double tr_cov = std::max(0.0, sq / n - dot(mean, mean));
        se = std::sqrt(tr_cov / n);
    };

    Rng tr = root.child("theta");
    double worst = -1e300;
    for (int k = 0; k < opts.tv_thetas; ++k) {
        Vec th = rand_theta(tr, model.dim(), 0.6);
        int i = k % spec.clients();
        Vec gi, gg;
        double se_i, se_g, mx_i, mx_g;
        stats(th, client_sets[static_cast<std::size_t>(i)], gi, se_i, mx_i);
        stats(th, global_set, gg, se_g, mx_g);
        double l_hat = std::min(model.grad_norm_cap(), 1.05 * std::max(mx_i, mx_g));
        double lhs = dist(gi, gg);
        double rhs = 2.0 * l_hat * profile.d[static_cast<std::size_t>(i)] + 3.0 * (se_i + se_g);
        worst = std::max(worst, lhs - rhs);
    }
    bool pass = worst <= 0.0;
    return {"tv-gradient-gap", pass,
            fmt("max excess of ||grad R_i - grad R|| over 2*L*D_i + 3*SE: %.3e", worst)};
}

CheckResult check_fd_agreement(const VerifyOptions& opts) {
    Rng root = Rng(opts.seed).child("fd");
    double worst = 0.0;
    const char* kinds[] = {"least_squares", "logistic", "mlp"};
    for (const char* kind : kinds) {
        ModelSpec ms;
        ms.kind = kind;
        ms.feature_dim = 5;
        ms.num_classes = 3;
        ms.hidden = 4;
        auto model = make_model(ms);
        Rng r = root.child(kind);
        for (int k = 0; k < opts.fd_probes; ++k) {
            Vec th = rand_theta(r, model->dim(), 1.0);
            Sample z = rand_sample(r, ms.feature_dim, ms.num_classes);
            Vec g(static_cast<std::size_t>(model->dim()));
            model->grad(th, z, g);
            Vec fd = fd_grad(*model, th, z);
            Vec diff = g;
            axpy(-1.0, fd, diff);
            worst = std::max(worst, norm2(diff) / std::max(1.0, norm2(g)));
        }
    }
    bool pass = worst < 1e-6;
    return {"fd-gradient-agreement", pass,
            fmt("max relative error %.3e across all variants (tol 1e-6)", worst)};
}

CheckResult check_sgd_collapse(const VerifyOptions& opts) {
    Rng root = Rng(opts.seed).child("sgd");
    DataGenSpec spec = DataGenSpec::make_default(1, 3, 5, 0.5, 20);
    LogisticModel model(3, 5);
    Rng dr = root.child("data");
    FederatedDataset fed = generate_federation(spec, dr);
    AlgoConfig cfg;
    cfg.algo = Algo::FedAvg;
    cfg.rounds = 40;
    cfg.local_steps = 1;
    cfg.batch = 1;
    cfg.steps.kind = StepSchedule::Kind::TheoryDiminishing;
    cfg.steps.beta = 0.5;
    cfg.steps.k = 1;
    RandomTape tape = RandomTape::generate(cfg.rounds, 1, 1, 1, {fed.clients[0].size()},
                                           root.child("tape").seed());
    Rng ir = root.child("init");
    Vec theta0 = rand_theta(ir, model.dim(), 0.5);
    TrajectoryRecord rec = run_training(model, fed, cfg, tape, theta0);

    Vec th = theta0;
    bool ok = same_vec(rec.theta[0], th);
    Vec g(static_cast<std::size_t>(model.dim()));
    for (int t = 0; t < cfg.rounds && ok; ++t) {
        double a = cfg.steps.value(t);
        const Sample& z = fed.clients[0].samples[tape.step_batch(t, 0, 0)[0]];
        model.grad(th, z, g);
        scale(1.0, g);  // batch of one still divides by the count
        for (std::size_t i = 0; i < th.size(); ++i) th[i] += -a * g[i];
        ok = same_vec(rec.theta[static_cast<std::size_t>(t) + 1], th);
    }
    return {"sgd-collapse-identity", ok,
            ok ? "single-client K=1 B=1 run equals the plain SGD loop bit for bit"
               : "trajectory deviates from the reference SGD loop"};
}

CheckResult check_scaffold_fedavg_identity(const VerifyOptions& opts) {
    Rng root = Rng(opts.seed).child("scfid");
    Rng dr = root.child("data");
    LogisticModel model(3, 4);
    ClientDataset shared = rand_data(dr, 4, 3, 8);
    FederatedDataset fed;
    for (int i = 0; i < 3; ++i) fed.clients.push_back(shared);

    AlgoConfig cfg;
    cfg.rounds = 15;
    cfg.local_steps = 3;
    cfg.batch = 0;  // full batch: control variates cancel exactly
    cfg.steps.alpha0 = 0.3;
    Rng ir = root.child("init");
    Vec theta0 = rand_theta(ir, model.dim(), 0.5);

    cfg.algo = Algo::FedAvg;
    TrajectoryRecord avg = run_training(model, fed, cfg, RandomTape{}, theta0);
    cfg.algo = Algo::Scaffold;
    TrajectoryRecord scf = run_training(model, fed, cfg, RandomTape{}, theta0);

    bool ok = avg.theta.size() == scf.theta.size();
    for (std::size_t t = 0; ok && t < avg.theta.size(); ++t) ok = same_vec(avg.theta[t], scf.theta[t]);
    return {"scaffold-fedavg-identity", ok,
            ok ? "identical datasets + full batch: corrections cancel, trajectories bit-identical"
               : "scaffold trajectory deviates from fedavg on identical clients"};
}

CheckResult check_identity_replacement(const VerifyOptions& opts) {
    TwinSetup setup;
    setup.data = DataGenSpec::make_default(3, 3, 5, 0.6, 12);
    setup.algo.algo = Algo::FedAvg;
    setup.algo.rounds = 20;
    setup.algo.local_steps = 2;
    setup.algo.batch = 1;
    setup.algo.steps.alpha0 = 0.2;
    setup.probe_client = 1;
    setup.probe_position = 3;
    setup.seed = Rng(opts.seed).child("identrepl").seed();
    setup.identity_replacement = true;
    LogisticModel model(3, 5);
    TwinResult res = run_twin(model, setup);
    double mx = 0.0;
    for (double dv : res.divergence) mx = std::max(mx, dv);
    bool ok = mx == 0.0 && res.loss_gap == 0.0;
    return {"identity-replacement-zero", ok,
            fmt("max round divergence %.3e (must be exactly 0)", mx)};
}

// posthoc drift audit against the recorded per-round stats
CheckResult drift_check(const VerifyOptions& opts, Algo algo, const char* name) {
    Rng root = Rng(opts.seed).child(name);
    DataGenSpec spec = DataGenSpec::make_default(4, 4, 6, 0.8, 15);
    LogisticModel model(4, 6);
    Rng dr = root.child("data");
    FederatedDataset fed = generate_federation(spec, dr);
    ClientDataset pooled;
    for (const auto& c : fed.clients)
        pooled.samples.insert(pooled.samples.end(), c.samples.begin(), c.samples.end());
    double beta = smoothness_constant(model, &pooled);

    AlgoConfig cfg;
    cfg.algo = algo;
    cfg.rounds = 12;
    cfg.local_steps = 4;
    cfg.batch = 0;  // the drift lemmas are deterministic, full-batch statements
    cfg.steps.alpha0 = 1.0 / beta;
    Rng ir = root.child("init");
    Vec theta0 = rand_theta(ir, model.dim(), 0.8);
    TrainOptions topts;
    topts.drift_stats = true;
    TrajectoryRecord rec = run_training(model, fed, cfg, RandomTape{}, theta0, topts);

    auto p = fed.weights();
    double worst = -1e300;
    for (int t = 0; t < cfg.rounds; ++t) {
        const Vec& th = rec.theta[static_cast<std::size_t>(t)];
        Vec global(static_cast<std::size_t>(model.dim()), 0.0);
        std::vector<double> client_norm;
        for (std::size_t i = 0; i < fed.clients.size(); ++i) {
            Vec gi = batch_grad(model, th, fed.clients[i]);
            client_norm.push_back(norm2(gi));
            axpy(p[i], gi, global);
        }
        double gn = norm2(global);
        const auto& rs = rec.rounds[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < fed.clients.size(); ++i) {
            double cap = rs.client[i].alpha_tilde * (algo == Algo::Scaffold ? gn : client_norm[i]);
            worst = std::max(worst, rs.client[i].drift_max - cap);
        }
    }
    bool pass = worst <= 1e-10;
    return {name, pass, fmt("max drift excess over stepsize-sum cap %.3e (tol 1e-10)", worst)};
}

CheckResult check_schedule_conformance(const VerifyOptions&) {
    StepSchedule dim;
    dim.kind = StepSchedule::Kind::TheoryDiminishing;
    dim.beta = 0.5;
    dim.k = 5;
    dim.cap = 0.01;
    StepSchedule cst;
    cst.alpha0 = 0.05;
    cst.cap = 0.03;
    double worst = 0.0;
    bool ok = true;
    for (int t = 0; t < 200; ++t) {
        double want = std::min(dim.cap, 1.0 / (24.0 * dim.beta * 5.0 * (t + 1.0)));
        worst = std::max(worst, std::abs(dim.value(t) - want));
        ok = ok && dim.value(t) == want && dim.value(t) > 0.0;
        ok = ok && cst.value(t) == std::min(cst.alpha0, cst.cap) && cst.value(t) > 0.0;
    }
    return {"schedule-conformance", ok,
            fmt("max deviation from 1/(24*beta*K*(t+1)) formula %.3e (exact match required)", worst)};
}

CheckResult check_convergence_trend(const VerifyOptions& opts) {
    Rng root = Rng(opts.seed).child("trend");
    DataGenSpec spec = DataGenSpec::make_default(3, 3, 6, 0.5, 40);
    LogisticModel model(3, 6);
    Rng og = root.child("oracle");
    ClientDataset oracle = draw_global(spec, 4000, og);

    const int T = 32;
    double s_q1 = 0.0, s_q2 = 0.0, s_q3 = 0.0;
    for (int sd = 0; sd < opts.trend_seeds; ++sd) {
        Rng r = root.child(static_cast<std::uint64_t>(sd));
        Rng dr = r.child("data");
        FederatedDataset fed = generate_federation(spec, dr);
        AlgoConfig cfg;
        cfg.algo = Algo::FedAvg;
        cfg.rounds = T;
        cfg.local_steps = 3;
        cfg.batch = 1;
        cfg.steps.alpha0 = 0.2;
        std::vector<std::size_t> sizes;
        for (const auto& c : fed.clients) sizes.push_back(c.size());
        RandomTape tape = RandomTape::generate(T, spec.clients(), cfg.local_steps, cfg.batch, sizes,
                                               r.child("tape").seed());
        Rng ir = r.child("init");
        Vec theta0 = rand_theta(ir, model.dim(), 0.8);
        TrainOptions topts;
        topts.oracle = &oracle;
        TrajectoryRecord rec = run_training(model, fed, cfg, tape, theta0, topts);

        auto running = [&](int upto) {
            double s = 0.0;
            for (int t = 0; t < upto; ++t) {
                double g = rec.rounds[static_cast<std::size_t>(t)].oracle_grad_norm;
                s += g * g;
            }
            return s / upto;
        };
        s_q1 += running(T / 4);
        s_q2 += running(T / 2);
        s_q3 += running(T);
    }
    double n = static_cast<double>(opts.trend_seeds);
    double q1 = s_q1 / n, q2 = s_q2 / n, q3 = s_q3 / n;
    bool ok = q1 >= q2 - 1e-12 && q2 >= q3 - 1e-12;
    return {"convergence-trend", ok,
            fmt("running mean of squared grad norms at T/4, T/2, T: %.4g -> %.4g", q1, q3)};
}

CheckResult check_prox_drift(const VerifyOptions& opts) {
    Rng root = Rng(opts.seed).child("proxdrift");
    double worst = -1e300;
    for (int inst = 0; inst < opts.prox_drift_instances; ++inst) {
        Rng r = root.child(static_cast<std::uint64_t>(inst));
        LogisticModel model(3, 5);
        ClientDataset data = rand_data(r, 5, 3, 6);
        Vec anchor = rand_theta(r, model.dim(), 1.0);
        double eta = 0.001 + 0.5 * r.uniform();
        ProxOptions po;
        po.tol = 1e-9;
        Vec sol = prox_solve(model, data, anchor, eta, po);
        double cap = eta * norm2(batch_grad(model, anchor, data)) + 2.0 * po.tol;
        worst = std::max(worst, dist(sol, anchor) - cap);
    }
    bool pass = worst <= 0.0;
    return {"prox-drift", pass,
            fmt("max excess of ||prox(x) - x|| over eta*||grad|| %.3e", worst)};
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& opts) {
    std::vector<CheckResult> out;
    out.push_back(check_grad_step_nonexpansive(opts));
    out.push_back(check_prox_nonexpansive(opts));
    out.push_back(check_prox_expansion_nonconvex(opts));
    out.push_back(check_tv_gradient_gap(opts));
    out.push_back(check_fd_agreement(opts));
    out.push_back(check_sgd_collapse(opts));
    out.push_back(check_scaffold_fedavg_identity(opts));
    out.push_back(check_identity_replacement(opts));
    out.push_back(drift_check(opts, Algo::FedAvg, "drift-bound-fedavg"));
    out.push_back(drift_check(opts, Algo::Scaffold, "drift-bound-scaffold"));
    out.push_back(check_schedule_conformance(opts));
    out.push_back(check_convergence_trend(opts));
    out.push_back(check_prox_drift(opts));
    return out;
}

}  // namespace fedstab
