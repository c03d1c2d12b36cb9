#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedstab/error.hpp"
#include "fedstab/fedalgo.hpp"

using namespace fedstab;

namespace {

Sample mk(std::initializer_list<double> xs, int label) {
    Sample z;
    z.x.assign(xs);
    z.label = label;
    return z;
}

FederatedDataset single_client(std::initializer_list<Sample> zs) {
    FederatedDataset fed;
    fed.clients.emplace_back();
    for (const auto& z : zs) fed.clients[0].samples.push_back(z);
    return fed;
}

bool same_vec(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

Vec rand_vec(Rng& r, std::size_t n, double s) {
    Vec v(n);
    for (auto& x : v) x = s * r.normal();
    return v;
}

}  // namespace

TEST_CASE("algo names round trip") {
    for (Algo a : {Algo::FedAvg, Algo::Scaffold, Algo::FedProx})
        CHECK(algo_from_name(algo_name(a)) == a);
    CHECK_THROWS(algo_from_name("sgd"));
}

TEST_CASE("step schedules follow their formulas") {
    StepSchedule c;
    c.alpha0 = 0.07;
    for (int t = 0; t < 20; ++t) CHECK(c.value(t) == 0.07);
    c.cap = 0.05;
    CHECK(c.value(3) == 0.05);

    StepSchedule d;
    d.kind = StepSchedule::Kind::TheoryDiminishing;
    d.beta = 2.0;
    d.k = 3;
    for (int t = 0; t < 50; ++t) {
        CHECK(d.value(t) == 1.0 / (24.0 * 2.0 * 3.0 * (t + 1.0)));
        CHECK(d.value(t) > 0.0);
    }
    d.cap = 1e-4;
    CHECK(d.value(0) == 1e-4);

    StepSchedule bad;
    bad.alpha0 = 0.0;
    CHECK_THROWS(bad.validate());
    bad = StepSchedule{};
    bad.kind = StepSchedule::Kind::TheoryDiminishing;
    bad.beta = 0.0;
    CHECK_THROWS(bad.validate());
    bad.beta = 1.0;
    bad.k = 0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("algo config validation") {
    AlgoConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.rounds = 0;  // an empty run is legal and records just the start point
    CHECK_NOTHROW(cfg.validate());
    cfg.rounds = -1;
    CHECK_THROWS(cfg.validate());
    cfg = AlgoConfig{};
    cfg.local_steps = 0;
    CHECK_THROWS(cfg.validate());
    cfg = AlgoConfig{};
    cfg.batch = -1;
    CHECK_THROWS(cfg.validate());
    cfg = AlgoConfig{};
    cfg.prox_tol = 0.0;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("tape draws are deterministic and in range") {
    std::vector<std::size_t> sizes = {7, 13, 5};
    auto t1 = RandomTape::generate(4, 3, 2, 3, sizes, 99);
    auto t2 = RandomTape::generate(4, 3, 2, 3, sizes, 99);
    for (int t = 0; t < 4; ++t)
        for (int i = 0; i < 3; ++i) {
            for (int k = 0; k < 2; ++k)
                for (int b = 0; b < 3; ++b) {
                    CHECK(t1.step_batch(t, i, k)[b] == t2.step_batch(t, i, k)[b]);
                    CHECK(t1.step_batch(t, i, k)[b] < sizes[static_cast<std::size_t>(i)]);
                }
            for (int b = 0; b < 3; ++b) {
                CHECK(t1.control_batch(t, i)[b] == t2.control_batch(t, i)[b]);
                CHECK(t1.control_batch(t, i)[b] < sizes[static_cast<std::size_t>(i)]);
            }
        }
    auto t3 = RandomTape::generate(4, 3, 2, 3, sizes, 100);
    bool differs = false;
    for (int t = 0; t < 4 && !differs; ++t)
        for (int b = 0; b < 3 && !differs; ++b)
            differs = t1.step_batch(t, 0, 0)[b] != t3.step_batch(t, 0, 0)[b];
    CHECK(differs);

    CHECK_NOTHROW(RandomTape::generate(0, 3, 2, 3, sizes, 1));
    CHECK_THROWS(RandomTape::generate(-1, 3, 2, 3, sizes, 1));
    CHECK_THROWS(RandomTape::generate(2, 0, 2, 3, sizes, 1));
}

TEST_CASE("aggregation identities") {
    Rng r(61);
    Vec v = rand_vec(r, 6, 1.0);
    std::vector<Vec> all_same = {v, v, v};
    std::vector<double> w = {0.2, 0.5, 0.3};
    CHECK(same_vec(aggregate(all_same, w), v));  // bit-exact, not just close

    std::vector<Vec> pair = {Vec{0.0}, Vec{2.0}};
    Vec mid = aggregate(pair, {0.5, 0.5});
    CHECK(mid[0] == doctest::Approx(1.0).epsilon(1e-15));

    // permuting clients with their weights moves the result by reassociation only
    std::vector<Vec> locals;
    std::vector<double> weights = {0.1, 0.4, 0.25, 0.25};
    for (int i = 0; i < 4; ++i) locals.push_back(rand_vec(r, 8, 2.0));
    Vec base = aggregate(locals, weights);
    std::vector<std::size_t> perm = {2, 0, 3, 1};
    std::vector<Vec> pl;
    std::vector<double> pw;
    for (auto i : perm) {
        pl.push_back(locals[i]);
        pw.push_back(weights[i]);
    }
    Vec permuted = aggregate(pl, pw);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(std::abs(base[i] - permuted[i]) <= 1e-15);

    CHECK_THROWS(aggregate(locals, {0.5, 0.5}));            // weight count mismatch
    CHECK_THROWS(aggregate(locals, {0.5, 0.5, 0.5, 0.5}));  // weights must sum to 1
}

TEST_CASE("scalar least-squares round takes two geometric steps") {
    LeastSquaresModel m(1);
    auto fed = single_client({mk({1.0}, 0)});
    AlgoConfig cfg;
    cfg.algo = Algo::FedAvg;
    cfg.rounds = 1;
    cfg.local_steps = 2;
    cfg.batch = 0;
    cfg.steps.alpha0 = 0.1;
    auto rec = run_training(m, fed, cfg, RandomTape{}, {1.0});
    CHECK(rec.theta.back()[0] == doctest::Approx(0.81).epsilon(1e-15));
    CHECK(rec.alpha_tilde[0] == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("zero gradient everywhere keeps the model fixed") {
    LeastSquaresModel m(1);
    auto fed = single_client({mk({1.0}, 0)});  // theta = 0 already interpolates
    AlgoConfig cfg;
    cfg.rounds = 5;
    cfg.local_steps = 4;
    cfg.batch = 0;
    cfg.steps.alpha0 = 0.3;
    for (Algo a : {Algo::FedAvg, Algo::Scaffold, Algo::FedProx}) {
        cfg.algo = a;
        auto rec = run_training(m, fed, cfg, RandomTape{}, {0.0});
        for (const auto& th : rec.theta) CHECK(th[0] == 0.0);
    }
}

TEST_CASE("single client one-step unit batch collapses to plain sgd") {
    LogisticModel m(3, 4);
    auto spec = DataGenSpec::make_default(1, 3, 4, 0.4, 30);
    Rng root(2100);
    Rng dr = root.child("data");
    auto fed = generate_federation(spec, dr);
    AlgoConfig cfg;
    cfg.algo = Algo::FedAvg;
    cfg.rounds = 25;
    cfg.local_steps = 1;
    cfg.batch = 1;
    cfg.steps.alpha0 = 0.15;
    auto tape = RandomTape::generate(25, 1, 1, 1, {fed.clients[0].size()}, root.child("tape").seed());
    Rng ir = root.child("init");
    Vec theta0 = rand_vec(ir, static_cast<std::size_t>(m.dim()), 0.4);
    auto rec = run_training(m, fed, cfg, tape, theta0);

    Vec th = theta0;
    Vec g(static_cast<std::size_t>(m.dim()));
    CHECK(same_vec(rec.theta[0], th));
    for (int t = 0; t < 25; ++t) {
        const Sample& z = fed.clients[0].samples[tape.step_batch(t, 0, 0)[0]];
        m.grad(th, z, g);
        for (std::size_t i = 0; i < th.size(); ++i) th[i] += -0.15 * g[i];
        CHECK(same_vec(rec.theta[static_cast<std::size_t>(t) + 1], th));
    }
}

TEST_CASE("control variates cancel on identical clients") {
    LogisticModel m(3, 4);
    Rng r(71);
    ClientDataset shared;
    for (int i = 0; i < 9; ++i) {
        Sample z;
        z.x = rand_vec(r, 4, 0.4);
        double nm = norm2(z.x);
        if (nm > 1.0) scale(1.0 / nm, z.x);
        z.label = static_cast<int>(r.below(3));
        shared.samples.push_back(z);
    }
    FederatedDataset fed;
    for (int i = 0; i < 4; ++i) fed.clients.push_back(shared);
    AlgoConfig cfg;
    cfg.rounds = 12;
    cfg.local_steps = 3;
    cfg.batch = 0;
    cfg.steps.alpha0 = 0.25;
    Vec theta0 = rand_vec(r, static_cast<std::size_t>(m.dim()), 0.5);
    cfg.algo = Algo::FedAvg;
    auto avg = run_training(m, fed, cfg, RandomTape{}, theta0);
    cfg.algo = Algo::Scaffold;
    auto scf = run_training(m, fed, cfg, RandomTape{}, theta0);
    REQUIRE(avg.theta.size() == scf.theta.size());
    for (std::size_t t = 0; t < avg.theta.size(); ++t) CHECK(same_vec(avg.theta[t], scf.theta[t]));
}

TEST_CASE("one corrected full-batch step sends every client to the same point") {
    LogisticModel m(2, 3);
    auto spec = DataGenSpec::make_default(3, 2, 3, 0.8, 12);
    Rng root(88);
    Rng dr = root.child("data");
    auto fed = generate_federation(spec, dr);
    AlgoConfig cfg;
    cfg.algo = Algo::Scaffold;
    cfg.rounds = 1;
    cfg.local_steps = 1;
    cfg.batch = 0;
    cfg.steps.alpha0 = 0.2;
    Vec theta0 = rand_vec(dr, static_cast<std::size_t>(m.dim()), 0.3);
    auto rec = run_training(m, fed, cfg, RandomTape{}, theta0);

    // K=1 makes the corrected local step theta_t - alpha * g(theta_t) for all
    // clients, so the aggregate equals that common point exactly
    auto p = fed.weights();
    Vec g(static_cast<std::size_t>(m.dim()), 0.0);
    for (std::size_t i = 0; i < fed.clients.size(); ++i)
        axpy(p[i], batch_grad(m, theta0, fed.clients[i]), g);
    Vec expect = theta0;
    axpy(-0.2, g, expect);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(rec.theta[1][i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("corrected stochastic steps match a straight-line reimplementation") {
    LogisticModel m(2, 2);
    Rng r(123);
    FederatedDataset fed;
    fed.clients.resize(2);
    for (auto& c : fed.clients)
        for (int i = 0; i < 3; ++i) {
            Sample z;
            z.x = rand_vec(r, 2, 0.5);
            double nm = norm2(z.x);
            if (nm > 1.0) scale(1.0 / nm, z.x);
            z.label = static_cast<int>(r.below(2));
            c.samples.push_back(z);
        }
    AlgoConfig cfg;
    cfg.algo = Algo::Scaffold;
    cfg.rounds = 3;
    cfg.local_steps = 2;
    cfg.batch = 1;
    cfg.steps.alpha0 = 0.3;
    auto tape = RandomTape::generate(3, 2, 2, 1, {3, 3}, 456);
    Vec theta0 = rand_vec(r, static_cast<std::size_t>(m.dim()), 0.4);
    auto rec = run_training(m, fed, cfg, tape, theta0);

    // straight-line replay of the corrected update rule
    auto grad_at = [&](const Vec& th, int client, const std::uint32_t* pos) {
        Vec g(static_cast<std::size_t>(m.dim()));
        m.grad(th, fed.clients[static_cast<std::size_t>(client)].samples[pos[0]], g);
        return g;
    };
    Vec th = theta0;
    auto p = fed.weights();
    for (int t = 0; t < 3; ++t) {
        std::vector<Vec> cv;
        for (int i = 0; i < 2; ++i) cv.push_back(grad_at(th, i, tape.control_batch(t, i)));
        Vec gbar = aggregate(cv, p);
        std::vector<Vec> locals;
        for (int i = 0; i < 2; ++i) {
            Vec corr = gbar;
            axpy(-1.0, cv[static_cast<std::size_t>(i)], corr);
            Vec cur = th;
            for (int k = 0; k < 2; ++k) {
                Vec g = grad_at(cur, i, tape.step_batch(t, i, k));
                axpy(1.0, corr, g);
                axpy(-0.3, g, cur);
            }
            locals.push_back(std::move(cur));
        }
        th = aggregate(locals, p);
        CHECK(same_vec(rec.theta[static_cast<std::size_t>(t) + 1], th));
    }
}

TEST_CASE("proximal rounds match the closed-form scalar example") {
    LeastSquaresModel m(1);
    auto fed = single_client({mk({1.0}, 0)});
    AlgoConfig cfg;
    cfg.algo = Algo::FedProx;
    cfg.rounds = 1;
    cfg.steps.alpha0 = 1.0;
    auto rec = run_training(m, fed, cfg, RandomTape{}, {1.0});
    CHECK(rec.theta.back()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rec.alpha_tilde[0] == doctest::Approx(1.0).epsilon(1e-15));

    // enormous eta turns the prox round into an unconstrained solve
    cfg.steps.alpha0 = 1e6;
    auto rec2 = run_training(m, fed, cfg, RandomTape{}, {1.0});
    CHECK(std::abs(rec2.theta.back()[0]) < 1e-3);
}

TEST_CASE("empty training run records only the start point") {
    LogisticModel m(2, 3);
    auto spec = DataGenSpec::make_default(2, 2, 3, 0.0, 5);
    Rng r(7);
    auto fed = generate_federation(spec, r);
    AlgoConfig cfg;
    cfg.rounds = 0;
    auto tape = RandomTape::generate(0, 2, cfg.local_steps, cfg.batch, {5, 5}, 3);
    Vec theta0 = rand_vec(r, static_cast<std::size_t>(m.dim()), 0.2);
    auto rec = run_training(m, fed, cfg, tape, theta0);
    CHECK(rec.theta.size() == 1);
    CHECK(same_vec(rec.theta[0], theta0));
    CHECK(rec.train_loss.size() == 1);
    CHECK(rec.rounds_run == 0);
    CHECK(rec.complete);
}

TEST_CASE("worker count never changes the trajectory") {
    LogisticModel m(3, 5);
    auto spec = DataGenSpec::make_default(5, 3, 5, 0.6, 12);
    Rng root(909);
    Rng dr = root.child("data");
    auto fed = generate_federation(spec, dr);
    AlgoConfig cfg;
    cfg.rounds = 8;
    cfg.local_steps = 2;
    cfg.batch = 2;
    cfg.steps.alpha0 = 0.2;
    std::vector<std::size_t> sizes(5, 12);
    auto tape = RandomTape::generate(8, 5, 2, 2, sizes, root.child("tape").seed());
    Rng ir = root.child("init");
    Vec theta0 = rand_vec(ir, static_cast<std::size_t>(m.dim()), 0.4);

    for (Algo a : {Algo::FedAvg, Algo::Scaffold}) {
        cfg.algo = a;
        TrainOptions o1, o4;
        o1.jobs = 1;
        o4.jobs = 4;
        auto r1 = run_training(m, fed, cfg, tape, theta0, o1);
        auto r4 = run_training(m, fed, cfg, tape, theta0, o4);
        REQUIRE(r1.theta.size() == r4.theta.size());
        for (std::size_t t = 0; t < r1.theta.size(); ++t) CHECK(same_vec(r1.theta[t], r4.theta[t]));
    }
}

TEST_CASE("tape replay reproduces the trajectory bit for bit") {
    LogisticModel m(2, 4);
    auto spec = DataGenSpec::make_default(3, 2, 4, 0.5, 10);
    Rng root(31337);
    Rng dr = root.child("data");
    auto fed = generate_federation(spec, dr);
    AlgoConfig cfg;
    cfg.rounds = 10;
    cfg.local_steps = 3;
    cfg.batch = 1;
    cfg.steps.alpha0 = 0.1;
    auto tape = RandomTape::generate(10, 3, 3, 1, {10, 10, 10}, root.child("tape").seed());
    Vec theta0 = rand_vec(dr, static_cast<std::size_t>(m.dim()), 0.3);
    auto r1 = run_training(m, fed, cfg, tape, theta0);
    auto r2 = run_training(m, fed, cfg, tape, theta0);
    for (std::size_t t = 0; t < r1.theta.size(); ++t) CHECK(same_vec(r1.theta[t], r2.theta[t]));
    for (std::size_t t = 0; t < r1.train_loss.size(); ++t)
        CHECK(r1.train_loss[t] == r2.train_loss[t]);
}

TEST_CASE("insufficient tape is rejected up front") {
    LogisticModel m(2, 3);
    auto spec = DataGenSpec::make_default(2, 2, 3, 0.0, 6);
    Rng r(4);
    auto fed = generate_federation(spec, r);
    AlgoConfig cfg;
    cfg.rounds = 5;
    cfg.batch = 1;
    auto short_tape = RandomTape::generate(3, 2, cfg.local_steps, 1, {6, 6}, 1);
    Vec theta0(static_cast<std::size_t>(m.dim()), 0.0);
    CHECK_THROWS(run_training(m, fed, cfg, short_tape, theta0));
}

TEST_CASE("divergence is reported with round and client context") {
    LeastSquaresModel m(1);
    auto fed = single_client({mk({1.0}, 3)});
    AlgoConfig cfg;
    cfg.algo = Algo::FedAvg;
    cfg.rounds = 200;
    cfg.local_steps = 5;
    cfg.batch = 0;
    cfg.steps.alpha0 = 3.0;  // far beyond 2/beta: geometric blowup
    bool caught = false;
    try {
        run_training(m, fed, cfg, RandomTape{}, {1.0});
    } catch (const DivergedError& e) {
        caught = true;
        CHECK(e.round >= 0);
        CHECK(e.client >= 0);
    }
    CHECK(caught);
}

TEST_CASE("training can stop at a target loss level") {
    LogisticModel m(3, 6);
    auto spec = DataGenSpec::make_default(3, 3, 6, 0.3, 20);
    Rng root(555);
    Rng dr = root.child("data");
    auto fed = generate_federation(spec, dr);
    AlgoConfig cfg;
    cfg.rounds = 400;
    cfg.local_steps = 2;
    cfg.batch = 0;
    cfg.steps.alpha0 = 0.5;
    Vec theta0(static_cast<std::size_t>(m.dim()), 0.0);
    TrainOptions topts;
    topts.stop_train_loss = 1.0;  // log(3) ~ 1.0986 at the start
    auto rec = run_training(m, fed, cfg, RandomTape{}, theta0, topts);
    CHECK(rec.rounds_run < 400);
    CHECK(rec.train_loss.back() <= 1.0);
    // every earlier recorded loss sits above the stop level
    for (std::size_t t = 0; t + 1 < rec.train_loss.size(); ++t) CHECK(rec.train_loss[t] > 1.0);
}

TEST_CASE("recorded train loss matches the pooled empirical risk") {
    LogisticModel m(2, 4);
    auto spec = DataGenSpec::make_default(3, 2, 4, 0.5, 7);
    Rng root(808);
    Rng dr = root.child("data");
    auto fed = generate_federation(spec, dr);
    AlgoConfig cfg;
    cfg.rounds = 6;
    cfg.batch = 0;
    cfg.steps.alpha0 = 0.2;
    Vec theta0 = rand_vec(dr, static_cast<std::size_t>(m.dim()), 0.3);
    auto rec = run_training(m, fed, cfg, RandomTape{}, theta0);
    for (std::size_t t = 0; t < rec.theta.size(); ++t)
        CHECK(rec.train_loss[t] ==
              doctest::Approx(pooled_empirical_loss(m, rec.theta[t], fed)).epsilon(1e-15));
}
