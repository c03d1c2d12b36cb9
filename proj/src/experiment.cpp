#include "fedstab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "fedstab/error.hpp"
#include "fedstab/parallel.hpp"

namespace fedstab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<double> rank_avg(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average of ranks i+1 .. j+1
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
    if (x.size() < 2) return kNaN;
    std::vector<double> rx = rank_avg(x), ry = rank_avg(y);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(rx.size());
    my /= static_cast<double>(ry.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return kNaN;
    return sxy / std::sqrt(sxx * syy);
}

std::vector<RunGap> measure_gen_gap(const LossModel& model, const TrajectoryRecord& rec,
                                    const FederatedDataset& fed, const ClientDataset& oracle,
                                    const std::vector<double>& levels,
                                    const std::vector<int>& at_rounds, bool at_final) {
    if (oracle.samples.empty()) throw std::invalid_argument("measure_gen_gap: empty oracle set");
    if (rec.theta.empty() || rec.train_loss.size() != rec.theta.size())
        throw std::invalid_argument("measure_gen_gap: malformed trajectory record");

    auto slice = [&](int t, double level, bool reached) {
        RunGap rg;
        rg.level = level;
        rg.t = t;
        rg.reached = reached;
        if (reached) {
            const Vec& th = rec.theta[static_cast<std::size_t>(t)];
            rg.train_loss = pooled_empirical_loss(model, th, fed);
            rg.test_loss = batch_loss(model, th, oracle);
            rg.signed_gap = rg.test_loss - rg.train_loss;
            rg.gap = std::abs(rg.signed_gap);
        }
        return rg;
    };

    std::vector<RunGap> out;
    for (double level : levels) {
        int hit = -1;
        for (std::size_t t = 0; t < rec.train_loss.size(); ++t)
            if (rec.train_loss[t] <= level) {
                hit = static_cast<int>(t);
                break;
            }
        out.push_back(slice(hit, level, hit >= 0));
    }
    for (int r : at_rounds)
        out.push_back(slice(r, kNaN, r >= 0 && r < static_cast<int>(rec.theta.size())));
    if (at_final) out.push_back(slice(static_cast<int>(rec.theta.size()) - 1, kNaN, true));
    return out;
}

void SweepPlan::validate() const {
    if (rho_grid.empty()) throw std::invalid_argument("sweep: empty rho grid");
    for (double r : rho_grid)
        if (r < 0.0 || r > 1.0) throw std::invalid_argument("sweep: rho outside [0, 1]");
    if (algos.empty()) throw std::invalid_argument("sweep: no algorithms");
    for (std::size_t i = 1; i < levels.size(); ++i)
        if (!(levels[i] < levels[i - 1]))
            throw std::invalid_argument("sweep: loss levels must be strictly decreasing");
    if (t_cap < 1) throw std::invalid_argument("sweep: t_cap must be >= 1");
    if (repeats < 2) throw std::invalid_argument("sweep: repeats must be >= 2");
    if (oracle_size == 0) throw std::invalid_argument("sweep: oracle_size must be positive");
    if (model.feature_dim != data.feature_dim)
        throw std::invalid_argument("sweep: model feature_dim disagrees with data spec");
    if (model.kind != "least_squares" && model.num_classes != data.num_classes)
        throw std::invalid_argument("sweep: model num_classes disagrees with data spec");
    data.validate();
}

GenGapReport sweep_rho(const SweepPlan& plan, std::uint64_t seed) {
    plan.validate();
    auto model = make_model(plan.model);
    const std::size_t n_slices = plan.levels.size() + 1;  // levels then final
    Rng root = Rng(seed).child("sweep");

    GenGapReport rep;
    rep.seed = seed;

    for (std::size_t r = 0; r < plan.rho_grid.size(); ++r) {
        DataGenSpec spec = plan.data;
        spec.rho = plan.rho_grid[r];
        Rng oracle_rng = root.child("oracle").child(r);
        ClientDataset oracle = draw_global(spec, plan.oracle_size, oracle_rng);

        for (std::size_t a = 0; a < plan.algos.size(); ++a) {
            AlgoConfig cfg = plan.algo_base;
            cfg.algo = plan.algos[a];
            cfg.rounds = plan.t_cap;
            cfg.validate();
            std::uint64_t cell_seed = root.child("cell").child(r).child(a).seed();

            std::vector<std::vector<RunGap>> slots(static_cast<std::size_t>(plan.repeats));
            parallel_for(static_cast<std::size_t>(plan.repeats), plan.jobs, [&](std::size_t k) {
                Rng rep_rng = Rng(cell_seed).child(k);
                Rng data_rng = rep_rng.child("data");
                FederatedDataset fed = generate_federation(spec, data_rng);
                Rng init_rng = rep_rng.child("init");
                Vec theta0(static_cast<std::size_t>(model->dim()));
                for (auto& v : theta0) v = plan.init_scale * init_rng.normal();
                RandomTape tape;
                if (cfg.algo != Algo::FedProx && cfg.batch > 0) {
                    std::vector<std::size_t> sizes;
                    for (const auto& c : fed.clients) sizes.push_back(c.size());
                    tape = RandomTape::generate(cfg.rounds, spec.clients(), cfg.local_steps,
                                                cfg.batch, sizes, rep_rng.child("tape").seed());
                }
                TrainOptions topts;
                topts.stop_train_loss =
                    plan.stop_at_min_level && !plan.levels.empty() ? plan.levels.back() : -1.0;
                TrajectoryRecord run = run_training(*model, fed, cfg, tape, theta0, topts);
                slots[k] = measure_gen_gap(*model, run, fed, oracle, plan.levels, {}, true);
            });

            for (std::size_t s = 0; s < n_slices; ++s) {
                GapRow row;
                row.rho = spec.rho;
                row.algo = plan.algos[a];
                row.level = s < plan.levels.size() ? plan.levels[s] : kNaN;
                row.repeats = plan.repeats;
                row.cell_seed = cell_seed;
                std::vector<double> gaps, sgaps, rounds;
                for (const auto& slot : slots) {
                    const RunGap& rg = slot[s];
                    if (!rg.reached) continue;
                    gaps.push_back(rg.gap);
                    sgaps.push_back(rg.signed_gap);
                    rounds.push_back(static_cast<double>(rg.t));
                }
                row.reached = static_cast<int>(gaps.size());
                if (row.reached > 0) {
                    auto [mg, sg] = mean_se(gaps);
                    auto [ms, ss] = mean_se(sgaps);
                    auto [mr, sr] = mean_se(rounds);
                    (void)sr;
                    row.gap = mg;
                    row.gap_se = sg;
                    row.signed_gap = ms;
                    row.signed_gap_se = ss;
                    row.mean_round = mr;
                } else {
                    row.gap = row.gap_se = row.signed_gap = row.signed_gap_se = kNaN;
                    row.mean_round = kNaN;
                }
                rep.rows.push_back(std::move(row));
            }
        }
    }

    for (Algo algo : plan.algos) {
        for (std::size_t s = 0; s < n_slices; ++s) {
            TrendStat ts;
            ts.algo = algo;
            ts.level = s < plan.levels.size() ? plan.levels[s] : kNaN;
            std::vector<double> xs, ys;
            for (const auto& row : rep.rows) {
                bool same_slice = s < plan.levels.size() ? row.level == plan.levels[s]
                                                         : std::isnan(row.level);
                if (row.algo != algo || !same_slice || row.reached == 0) continue;
                xs.push_back(row.rho);
                ys.push_back(row.gap);
            }
            ts.cells = static_cast<int>(xs.size());
            ts.spearman_gap_vs_rho = spearman(xs, ys);
            rep.trends.push_back(ts);
        }
    }
    return rep;
}

void BoundCampaign::validate() const {
    if (rho_grid.empty()) throw std::invalid_argument("bounds campaign: empty rho grid");
    for (double r : rho_grid)
        if (r < 0.0 || r > 1.0) throw std::invalid_argument("bounds campaign: rho outside [0, 1]");
    if (algos.empty()) throw std::invalid_argument("bounds campaign: no algorithms");
    if (repeats < 2) throw std::invalid_argument("bounds campaign: repeats must be >= 2");
    if (oracle_size == 0) throw std::invalid_argument("bounds campaign: oracle_size must be positive");
    if (probe_client < 0 || probe_client >= data.clients())
        throw std::invalid_argument("bounds campaign: probe client out of range");
    if (probe_position >= data.samples_per_client[static_cast<std::size_t>(probe_client)])
        throw std::invalid_argument("bounds campaign: probe position out of range");
    if (model.feature_dim != data.feature_dim)
        throw std::invalid_argument("bounds campaign: model feature_dim disagrees with data spec");
    if (model.kind != "least_squares" && model.num_classes != data.num_classes)
        throw std::invalid_argument("bounds campaign: model num_classes disagrees with data spec");
    data.validate();
}

namespace {

BoundReport eval_bound(const BoundInputs& in, Algo algo, bool convex) {
    if (!convex) return nonconvex_divergence_bound(in, algo);
    switch (algo) {
        case Algo::FedAvg: return fedavg_divergence_bound(in);
        case Algo::Scaffold: return scaffold_divergence_bound(in);
        case Algo::FedProx: return fedprox_divergence_bound(in);
    }
    throw std::logic_error("eval_bound: unknown algorithm");
}

}  // namespace

BoundCampaignReport bound_vs_measured(const BoundCampaign& campaign, std::uint64_t seed) {
    campaign.validate();
    auto model = make_model(campaign.model);
    Rng root = Rng(seed).child("bounds");
    const int T = campaign.algo_base.rounds;
    const std::size_t reps = static_cast<std::size_t>(campaign.repeats);

    BoundCampaignReport out;
    out.seed = seed;

    for (std::size_t r = 0; r < campaign.rho_grid.size(); ++r) {
        DataGenSpec spec = campaign.data;
        spec.rho = campaign.rho_grid[r];
        HeterogeneityProfile profile = total_variation_labels(spec);
        Rng oracle_rng = root.child("oracle").child(r);
        ClientDataset oracle = draw_global(spec, campaign.oracle_size, oracle_rng);

        for (std::size_t a = 0; a < campaign.algos.size(); ++a) {
            AlgoConfig cfg = campaign.algo_base;
            cfg.algo = campaign.algos[a];
            cfg.validate();
            std::uint64_t cell_seed = root.child("cell").child(r).child(a).seed();

            std::vector<double> divs(reps), gaps(reps);
            std::vector<std::vector<double>> grad_series(reps);
            std::vector<double> alpha_tilde, alpha_hat;
            std::vector<std::vector<Vec>> probe_sets(std::min<std::size_t>(2, reps));
            for (std::size_t k = 0; k < reps; ++k) {
                TwinSetup setup;
                setup.data = spec;
                setup.algo = cfg;
                setup.probe_client = campaign.probe_client;
                setup.probe_position = campaign.probe_position;
                setup.init_scale = campaign.init_scale;
                setup.seed = Rng(cell_seed).child(k).seed();
                TrainOptions topts;
                topts.oracle = &oracle;
                topts.jobs = campaign.jobs;
                TwinResult res = run_twin(*model, setup, topts, true);
                divs[k] = res.final_divergence;
                gaps[k] = res.loss_gap;
                std::vector<double> series;
                for (const auto& rs : res.run_s.rounds) series.push_back(rs.oracle_grad_norm);
                grad_series[k] = std::move(series);
                if (k == 0) {
                    alpha_tilde = res.run_s.alpha_tilde;
                    for (const auto& rs : res.run_s.rounds) alpha_hat.push_back(rs.alpha_hat);
                }
                if (k < probe_sets.size()) {
                    const auto& thetas = res.run_s.theta;
                    std::vector<Vec> probes;
                    int last = static_cast<int>(thetas.size()) - 1;
                    int prev = -1;
                    for (int q = 0; q <= 4; ++q) {
                        int idx = last * q / 4;
                        if (idx == prev) continue;
                        probes.push_back(thetas[static_cast<std::size_t>(idx)]);
                        prev = idx;
                    }
                    probe_sets[k] = std::move(probes);
                }
            }

            Rng fed0_rng = Rng(Rng(cell_seed).child(std::size_t{0}).seed()).child("data");
            FederatedDataset fed0 = generate_federation(spec, fed0_rng);
            std::vector<Vec> probes;
            for (auto& ps : probe_sets)
                for (auto& th : ps) probes.push_back(std::move(th));
            ConstantEstimates consts =
                estimate_constants(*model, probes, fed0, oracle, campaign.constants);

            std::vector<double> gmean(static_cast<std::size_t>(T)), gse(static_cast<std::size_t>(T));
            for (int t = 0; t < T; ++t) {
                std::vector<double> col;
                col.reserve(reps);
                for (const auto& s : grad_series) col.push_back(s[static_cast<std::size_t>(t)]);
                auto [m, se] = mean_se(col);
                gmean[static_cast<std::size_t>(t)] = m;
                gse[static_cast<std::size_t>(t)] = se;
            }

            BoundInputs in;
            in.n = static_cast<int>(fed0.total_size());
            in.lipschitz = consts.lipschitz;
            in.beta = consts.beta;
            in.sigma = consts.sigma;
            in.mu = consts.mu;
            in.d_i = profile.d[static_cast<std::size_t>(campaign.probe_client)];
            in.grad_norm = gmean;
            in.alpha_tilde = alpha_tilde;
            in.alpha_hat = alpha_hat;
            in.local_steps = cfg.local_steps;

            BoundMeasuredCell cell;
            cell.rho = spec.rho;
            cell.algo = cfg.algo;
            cell.probe_client = campaign.probe_client;
            cell.repeats = campaign.repeats;
            cell.cell_seed = cell_seed;
            cell.constants = consts;
            cell.d_i = in.d_i;
            auto [md, sd] = mean_se(divs);
            auto [mg, sg] = mean_se(gaps);
            cell.mean_divergence = md;
            cell.se_divergence = sd;
            cell.mean_loss_gap = mg;
            cell.se_loss_gap = sg;
            cell.rhs = eval_bound(in, cfg.algo, model->convex());

            BoundInputs lo = in, hi = in;
            for (int t = 0; t < T; ++t) {
                std::size_t u = static_cast<std::size_t>(t);
                lo.grad_norm[u] = std::max(0.0, gmean[u] - 2.0 * gse[u]);
                hi.grad_norm[u] = gmean[u] + 2.0 * gse[u];
            }
            cell.rhs_band_lo = eval_bound(lo, cfg.algo, model->convex()).total;
            cell.rhs_band_hi = eval_bound(hi, cfg.algo, model->convex()).total;

            double plug_sum = 0.0, min_ratio = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < reps; ++k) {
                BoundInputs pin = in;
                pin.grad_norm = grad_series[k];
                double rhs_k = eval_bound(pin, cfg.algo, model->convex()).total;
                plug_sum += rhs_k;
                if (divs[k] > 0.0) min_ratio = std::min(min_ratio, rhs_k / divs[k]);
            }
            cell.plugin_mean_rhs = plug_sum / static_cast<double>(reps);
            cell.plugin_min_ratio = std::isfinite(min_ratio) ? min_ratio : kNaN;

            double lhs = cell.mean_divergence + 2.0 * cell.se_divergence;
            cell.ratio = lhs > 0.0 ? cell.rhs.total / lhs
                                   : std::numeric_limits<double>::infinity();
            cell.eps_from_bound = generalization_bound({cell.rhs}, consts.lipschitz);
            cell.asserted = model->convex();
            cell.pass = !cell.asserted || lhs <= cell.rhs.total;
            if (cell.asserted && !cell.pass) out.all_pass = false;
            out.cells.push_back(std::move(cell));
        }
    }
    return out;
}

std::string csv_header() {
    return "campaign_id,rho,algo,t,level,gap,gap_se,eps_hat,bound_rhs,seeds\n";
}

std::string format_cell(double v) {
    if (std::isnan(v)) return "";
    return fmt17(v);
}

namespace {

std::string seeds_field(std::uint64_t master, std::uint64_t cell) {
    return "master=" + fmt_hex(master) + ";cell=" + fmt_hex(cell);
}

void append_row(std::string& out, const std::string& campaign_id, double rho, Algo algo, double t,
                double level, double gap, double gap_se, double eps_hat, double bound_rhs,
                const std::string& seeds) {
    out += campaign_id;
    out += ',';
    out += format_cell(rho);
    out += ',';
    out += algo_name(algo);
    out += ',';
    out += format_cell(t);
    out += ',';
    out += format_cell(level);
    out += ',';
    out += format_cell(gap);
    out += ',';
    out += format_cell(gap_se);
    out += ',';
    out += format_cell(eps_hat);
    out += ',';
    out += format_cell(bound_rhs);
    out += ',';
    out += seeds;
    out += '\n';
}

}  // namespace

void append_sweep_csv(std::string& out, const std::string& campaign_id, std::uint64_t master_seed,
                      const GenGapReport& rep) {
    for (const auto& row : rep.rows)
        append_row(out, campaign_id, row.rho, row.algo, row.mean_round, row.level, row.gap,
                   row.gap_se, kNaN, kNaN, seeds_field(master_seed, row.cell_seed));
}

void append_bounds_csv(std::string& out, const std::string& campaign_id, std::uint64_t master_seed,
                       const BoundCampaignReport& rep) {
    for (const auto& cell : rep.cells)
        append_row(out, campaign_id, cell.rho, cell.algo,
                   static_cast<double>(cell.rhs.cumulative.size()), kNaN, cell.mean_divergence,
                   cell.se_divergence, kNaN, cell.rhs.total,
                   seeds_field(master_seed, cell.cell_seed));
}

void append_stability_csv(std::string& out, const std::string& campaign_id,
                          std::uint64_t master_seed, std::uint64_t cell_seed, double rho, Algo algo,
                          int t, const StabilityEstimate& est) {
    for (const auto& ps : est.probes)
        append_row(out, campaign_id, rho, algo, static_cast<double>(t), kNaN, ps.mean_gap,
                   ps.se_gap, est.eps_hat, kNaN, seeds_field(master_seed, cell_seed));
}

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
                          "#17becf", "#7f7f7f"};

}  // namespace

std::string gap_svg(const GenGapReport& rep, Algo algo) {
    // slices in order of appearance: loss levels, then the final-model slice
    std::vector<double> slices;
    for (const auto& row : rep.rows) {
        if (row.algo != algo) continue;
        bool seen = false;
        for (double s : slices)
            if ((std::isnan(s) && std::isnan(row.level)) || s == row.level) seen = true;
        if (!seen) slices.push_back(row.level);
    }

    struct Pt {
        double x, y;
    };
    std::vector<std::vector<Pt>> series(slices.size());
    double xmin = 1e300, xmax = -1e300, ymax = 0.0;
    for (const auto& row : rep.rows) {
        if (row.algo != algo || row.reached == 0) continue;
        std::size_t s = 0;
        while (s < slices.size() &&
               !((std::isnan(slices[s]) && std::isnan(row.level)) || slices[s] == row.level))
            ++s;
        series[s].push_back({row.rho, row.gap});
        xmin = std::min(xmin, row.rho);
        xmax = std::max(xmax, row.rho);
        ymax = std::max(ymax, row.gap);
    }
    for (auto& sv : series)
        std::sort(sv.begin(), sv.end(), [](const Pt& a, const Pt& b) { return a.x < b.x; });

    const double W = 640, H = 420, ml = 62, mr = 20, mt = 34, mb = 46;
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
           "viewBox=\"0 0 640 420\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">generalization gap vs "
           "heterogeneity (" + std::string(algo_name(algo)) + ")</text>\n";

    if (xmin > xmax) {
        svg += "<text x=\"320\" y=\"210\" text-anchor=\"middle\">no data</text>\n</svg>\n";
        return svg;
    }
    if (xmax - xmin < 1e-12) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax <= 0.0) ymax = 1.0;
    ymax *= 1.05;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - y / ymax * (H - mt - mb); };

    svg += "<line x1=\"" + fmt2(ml) + "\" y1=\"" + fmt2(H - mb) + "\" x2=\"" + fmt2(W - mr) +
           "\" y2=\"" + fmt2(H - mb) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt2(ml) + "\" y1=\"" + fmt2(mt) + "\" x2=\"" + fmt2(ml) + "\" y2=\"" +
           fmt2(H - mb) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double xv = xmin + (xmax - xmin) * i / 4.0;
        double yv = ymax * i / 4.0;
        svg += "<line x1=\"" + fmt2(px(xv)) + "\" y1=\"" + fmt2(H - mb) + "\" x2=\"" +
               fmt2(px(xv)) + "\" y2=\"" + fmt2(H - mb + 4) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + fmt2(px(xv)) + "\" y=\"" + fmt2(H - mb + 17) +
               "\" text-anchor=\"middle\">" + fmt_tick(xv) + "</text>\n";
        svg += "<line x1=\"" + fmt2(ml - 4) + "\" y1=\"" + fmt2(py(yv)) + "\" x2=\"" + fmt2(ml) +
               "\" y2=\"" + fmt2(py(yv)) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + fmt2(ml - 7) + "\" y=\"" + fmt2(py(yv) + 4) +
               "\" text-anchor=\"end\">" + fmt_tick(yv) + "</text>\n";
    }
    svg += "<text x=\"" + fmt2((ml + W - mr) / 2) + "\" y=\"" + fmt2(H - 8) +
           "\" text-anchor=\"middle\">rho</text>\n";
    svg += "<text x=\"16\" y=\"" + fmt2((mt + H - mb) / 2) + "\" text-anchor=\"middle\" "
           "transform=\"rotate(-90 16 " + fmt2((mt + H - mb) / 2) + ")\">mean |gap|</text>\n";

    for (std::size_t s = 0; s < slices.size(); ++s) {
        if (series[s].empty()) continue;
        const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
        std::string pts;
        for (const auto& p : series[s]) pts += fmt2(px(p.x)) + "," + fmt2(py(p.y)) + " ";
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        for (const auto& p : series[s])
            svg += "<circle cx=\"" + fmt2(px(p.x)) + "\" cy=\"" + fmt2(py(p.y)) +
                   "\" r=\"2.5\" fill=\"" + std::string(color) + "\"/>\n";
        std::string label = std::isnan(slices[s]) ? "final model" : "level " + fmt_tick(slices[s]);
        double ly = mt + 16.0 * static_cast<double>(s) + 8.0;
        svg += "<rect x=\"" + fmt2(ml + 8) + "\" y=\"" + fmt2(ly - 8) +
               "\" width=\"10\" height=\"10\" fill=\"" + std::string(color) + "\"/>\n";
        svg += "<text x=\"" + fmt2(ml + 23) + "\" y=\"" + fmt2(ly + 1) + "\">" + label +
               "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace fedstab
