#include "fedstab/stability.hpp"

#include <cmath>

#include "fedstab/error.hpp"
#include "fedstab/parallel.hpp"

namespace fedstab {

std::pair<double, double> mean_se(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_se: empty sample");
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    if (xs.size() == 1) return {m, 0.0};
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    v /= static_cast<double>(xs.size() - 1);
    return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

static Vec draw_init(int dim, double scale, Rng rng) {
    Vec th(static_cast<std::size_t>(dim));
    for (auto& v : th) v = scale * rng.normal();
    return th;
}

TwinResult run_twin(const LossModel& model, const TwinSetup& setup, const TrainOptions& topts,
                    bool keep_records) {
    setup.data.validate();
    setup.algo.validate();
    if (setup.probe_client < 0 || setup.probe_client >= setup.data.clients())
        throw std::invalid_argument("run_twin: probe client out of range");
    if (setup.probe_position >= setup.data.samples_per_client[static_cast<std::size_t>(setup.probe_client)])
        throw std::invalid_argument("run_twin: probe position out of range");

    Rng root(setup.seed);
    Rng data_rng = root.child("data");
    Rng init_rng = root.child("init");
    Rng repl_rng = root.child("replacement");
    std::uint64_t tape_seed = root.child("tape").seed();

    FederatedDataset fed = generate_federation(setup.data, data_rng);
    NeighborSpec nspec;
    nspec.client = setup.probe_client;
    nspec.position = setup.probe_position;
    nspec.replacement =
        setup.identity_replacement
            ? fed.clients[static_cast<std::size_t>(setup.probe_client)].samples[setup.probe_position]
            : draw_replacement(setup.data, setup.probe_client, repl_rng);
    FederatedDataset twin_fed = make_neighbor(fed, nspec);

    Vec theta0 = draw_init(model.dim(), setup.init_scale, init_rng);
    std::vector<std::size_t> sizes;
    for (const auto& c : fed.clients) sizes.push_back(c.size());
    RandomTape tape = RandomTape::generate(setup.algo.rounds, setup.data.clients(),
                                           std::max(1, setup.algo.local_steps),
                                           std::max(1, setup.algo.batch), sizes, tape_seed);

    // Oracle gradient-norm series is an observation, not part of the dynamics;
    // recording it on the primary run alone halves the cost.
    TrainOptions nopts = topts;
    nopts.oracle = nullptr;
    TrajectoryRecord run_s = run_training(model, fed, setup.algo, tape, theta0, topts);
    TrajectoryRecord run_n = run_training(model, twin_fed, setup.algo, tape, theta0, nopts);
    if (run_s.theta.size() != run_n.theta.size())
        throw Error("run_twin: twins stopped at different rounds; disable loss-based stopping for twins");

    TwinResult res;
    res.replacement = nspec.replacement;
    res.divergence.reserve(run_s.theta.size());
    for (std::size_t t = 0; t < run_s.theta.size(); ++t)
        res.divergence.push_back(dist(run_s.theta[t], run_n.theta[t]));
    res.final_divergence = res.divergence.back();
    res.loss_gap = std::abs(model.loss(run_s.theta.back(), nspec.replacement) -
                            model.loss(run_n.theta.back(), nspec.replacement));
    if (keep_records) {
        res.run_s = std::move(run_s);
        res.run_neighbor = std::move(run_n);
    }
    return res;
}

void StabilityProtocol::validate(const DataGenSpec& spec) const {
    if (repeats < 2) throw std::invalid_argument("stability protocol: repeats must be >= 2");
    if (positions_per_client < 1)
        throw std::invalid_argument("stability protocol: positions_per_client must be >= 1");
    if (probe_clients.empty()) throw std::invalid_argument("stability protocol: no probe clients");
    for (int c : probe_clients) {
        if (c < 0 || c >= spec.clients())
            throw std::invalid_argument("stability protocol: probe client out of range");
        if (static_cast<std::size_t>(positions_per_client) >
            spec.samples_per_client[static_cast<std::size_t>(c)])
            throw std::invalid_argument("stability protocol: more probe positions than samples");
    }
}

StabilityEstimate estimate_stability(const LossModel& model, const DataGenSpec& spec,
                                     const AlgoConfig& cfg, const StabilityProtocol& protocol,
                                     std::uint64_t seed) {
    spec.validate();
    protocol.validate(spec);
    Rng root = Rng(seed).child("stability");

    struct Probe {
        int client;
        std::size_t position;
    };
    std::vector<Probe> probes;
    for (int c : protocol.probe_clients)
        for (int j = 0; j < protocol.positions_per_client; ++j)
            probes.push_back({c, static_cast<std::size_t>(j)});

    std::size_t total = probes.size() * static_cast<std::size_t>(protocol.repeats);
    std::vector<double> gaps(total), divs(total);
    parallel_for(total, protocol.jobs, [&](std::size_t task) {
        std::size_t q = task / static_cast<std::size_t>(protocol.repeats);
        std::size_t r = task % static_cast<std::size_t>(protocol.repeats);
        TwinSetup setup;
        setup.data = spec;
        setup.algo = cfg;
        setup.probe_client = probes[q].client;
        setup.probe_position = probes[q].position;
        setup.init_scale = protocol.init_scale;
        setup.seed = root.child(q).child(r).seed();
        TwinResult res = run_twin(model, setup);
        gaps[task] = res.loss_gap;
        divs[task] = res.final_divergence;
    });

    StabilityEstimate est;
    est.repeats = protocol.repeats;
    for (std::size_t q = 0; q < probes.size(); ++q) {
        ProbeStat ps;
        ps.client = probes[q].client;
        ps.position = probes[q].position;
        std::vector<double> g(gaps.begin() + static_cast<std::ptrdiff_t>(q * protocol.repeats),
                              gaps.begin() + static_cast<std::ptrdiff_t>((q + 1) * protocol.repeats));
        std::vector<double> d(divs.begin() + static_cast<std::ptrdiff_t>(q * protocol.repeats),
                              divs.begin() + static_cast<std::ptrdiff_t>((q + 1) * protocol.repeats));
        auto [mg, sg] = mean_se(g);
        auto [md, sd] = mean_se(d);
        ps.mean_gap = mg;
        ps.se_gap = sg;
        ps.mean_divergence = md;
        ps.se_divergence = sd;
        ps.gap_samples = std::move(g);
        if (ps.mean_gap >= est.eps_hat) {
            est.eps_hat = ps.mean_gap;
            est.eps_se = ps.se_gap;
        }
        est.probes.push_back(std::move(ps));
    }
    return est;
}

LossGapCheck loss_gap_vs_divergence(const std::vector<std::pair<double, double>>& pairs,
                                    double l_hat, double slack) {
    if (!(l_hat > 0.0)) throw std::invalid_argument("loss_gap_vs_divergence: L must be positive");
    LossGapCheck chk;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        auto [gap, div] = pairs[k];
        if (gap > l_hat * div + slack) {
            chk.pass = false;
            ++chk.violations;
            if (chk.first_violation < 0) chk.first_violation = static_cast<int>(k);
        }
        if (div > 0.0) chk.max_ratio = std::max(chk.max_ratio, gap / (l_hat * div));
    }
    return chk;
}

CoverageCheck check_stability_coverage(double gen_gap, double gen_gap_se, const StabilityEstimate& est) {
    CoverageCheck chk;
    chk.gen_gap = gen_gap;
    chk.gen_gap_se = gen_gap_se;
    chk.eps_hat = est.eps_hat;
    chk.eps_se = est.eps_se;
    double combined = std::sqrt(gen_gap_se * gen_gap_se + est.eps_se * est.eps_se);
    chk.margin = est.eps_hat + 3.0 * combined - gen_gap;
    chk.pass = chk.margin >= 0.0;
    return chk;
}

}  // namespace fedstab
