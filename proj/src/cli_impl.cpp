#include "fedstab/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "fedstab/config.hpp"
#include "fedstab/error.hpp"
#include "fedstab/verify.hpp"

namespace fedstab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string hex16(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json vec_to_json(const Vec& v) {
    json a = json::array();
    for (double x : v) a.push_back(x);
    return a;
}

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write " + p.string());
    f << text;
}

// The documented seed derivation: every run expands one master seed into
// fixed named streams, logged in the manifest for auditability.
json seed_streams(std::uint64_t master) {
    Rng root(master);
    json s;
    for (const char* name : {"data", "init", "tape", "oracle", "replacement", "stability",
                             "sweep", "bounds"})
        s[name] = hex16(root.child(name).seed());
    return s;
}

struct Campaign {
    ExperimentConfig cfg;
    std::string sub;
    std::string id;   // <subcommand>-<16 hex of config hash>
    fs::path dir;     // <out_dir>/<id>
    std::vector<std::string> outputs;

    Campaign(ExperimentConfig c, const std::string& subcommand, const std::string& out_dir)
        : cfg(std::move(c)), sub(subcommand) {
        id = sub + "-" + hex16(config_hash(cfg));
        dir = fs::path(out_dir) / id;
    }

    void emit(const std::string& rel, const std::string& text) {
        write_file(dir / rel, text);
        outputs.push_back(rel);
    }

    void finish() {
        json m;
        m["campaign_id"] = id;
        m["subcommand"] = sub;
        m["config_hash"] = hex16(config_hash(cfg));
        m["master_seed"] = cfg.master_seed;
        m["seed_streams"] = seed_streams(cfg.master_seed);
        m["config"] = json::parse(dump_config(cfg));
        std::sort(outputs.begin(), outputs.end());
        m["outputs"] = outputs;
        write_file(dir / "manifest.json", m.dump(2) + "\n");
    }
};

int cmd_generate(Campaign& c, std::ostream& out) {
    const DataGenSpec& spec = c.cfg.data;
    Rng dr = Rng(c.cfg.master_seed).child("data");
    FederatedDataset fed = generate_federation(spec, dr);
    HeterogeneityProfile prof = total_variation_labels(spec);

    json ds;
    ds["rho"] = spec.rho;
    ds["num_classes"] = spec.num_classes;
    ds["feature_dim"] = spec.feature_dim;
    ds["total_samples"] = fed.total_size();
    ds["d_max"] = prof.d_max;
    ds["d_tilde"] = prof.d_tilde;
    ds["global_marginal"] = prof.pbar;
    json clients = json::array();
    for (int i = 0; i < spec.clients(); ++i) {
        json ci;
        ci["client"] = i;
        ci["size"] = fed.clients[static_cast<std::size_t>(i)].size();
        ci["classes"] = spec.client_classes[static_cast<std::size_t>(i)];
        ci["d_i"] = prof.d[static_cast<std::size_t>(i)];
        ci["label_marginal"] = label_marginal(spec, i);
        clients.push_back(std::move(ci));
    }
    ds["clients"] = std::move(clients);
    c.emit("dataset.json", ds.dump(2) + "\n");

    out << "campaign " << c.id << "\n";
    out << "client  size    pair      D_i\n";
    for (int i = 0; i < spec.clients(); ++i) {
        char line[128];
        std::snprintf(line, sizeof(line), "%6d  %6zu  (%d,%d)  %.6g\n", i,
                      fed.clients[static_cast<std::size_t>(i)].size(),
                      spec.client_classes[static_cast<std::size_t>(i)][0],
                      spec.client_classes[static_cast<std::size_t>(i)][1],
                      prof.d[static_cast<std::size_t>(i)]);
        out << line;
    }
    char tail[96];
    std::snprintf(tail, sizeof(tail), "d_max %.6g  d_tilde %.6g\n", prof.d_max, prof.d_tilde);
    out << tail;
    return 0;
}

int cmd_train(Campaign& c, std::ostream& out) {
    const ExperimentConfig& cfg = c.cfg;
    auto model = make_model(cfg.model);
    Rng root(cfg.master_seed);
    Rng dr = root.child("data");
    FederatedDataset fed = generate_federation(cfg.data, dr);

    Rng ir = root.child("init");
    Vec theta0(static_cast<std::size_t>(model->dim()));
    for (auto& v : theta0) v = cfg.init_scale * ir.normal();

    RandomTape tape;
    if (cfg.algo.batch > 0 && cfg.algo.algo != Algo::FedProx) {
        std::vector<std::size_t> sizes;
        for (const auto& cl : fed.clients) sizes.push_back(cl.size());
        tape = RandomTape::generate(cfg.algo.rounds, cfg.data.clients(), cfg.algo.local_steps,
                                    cfg.algo.batch, sizes, root.child("tape").seed());
    }
    TrainOptions topts;
    topts.jobs = cfg.jobs;
    TrajectoryRecord rec = run_training(*model, fed, cfg.algo, tape, theta0, topts);

    json tr;
    tr["algo"] = algo_name(cfg.algo.algo);
    tr["rounds_requested"] = cfg.algo.rounds;
    tr["rounds_run"] = rec.rounds_run;
    tr["complete"] = rec.complete;
    tr["train_loss"] = rec.train_loss;
    tr["alpha_tilde"] = rec.alpha_tilde;
    tr["theta_initial"] = vec_to_json(rec.theta.front());
    tr["theta_final"] = vec_to_json(rec.theta.back());
    c.emit("training.json", tr.dump(2) + "\n");

    char line[160];
    std::snprintf(line, sizeof(line), "%s: %d rounds, train loss %.17g -> %.17g\n",
                  algo_name(cfg.algo.algo).c_str(), rec.rounds_run, rec.train_loss.front(),
                  rec.train_loss.back());
    out << "campaign " << c.id << "\n" << line;
    return 0;
}

int cmd_stability(Campaign& c, std::ostream& out) {
    const ExperimentConfig& cfg = c.cfg;
    auto model = make_model(cfg.model);
    StabilityEstimate est =
        estimate_stability(*model, cfg.data, cfg.algo, cfg.stability, cfg.master_seed);

    json st;
    st["eps_hat"] = est.eps_hat;
    st["eps_se"] = est.eps_se;
    st["repeats"] = est.repeats;
    json probes = json::array();
    for (const auto& p : est.probes) {
        json pj;
        pj["client"] = p.client;
        pj["position"] = p.position;
        pj["mean_gap"] = p.mean_gap;
        pj["se_gap"] = p.se_gap;
        pj["mean_divergence"] = p.mean_divergence;
        pj["se_divergence"] = p.se_divergence;
        probes.push_back(std::move(pj));
    }
    st["probes"] = std::move(probes);
    c.emit("stability.json", st.dump(2) + "\n");

    std::string csv = csv_header();
    append_stability_csv(csv, c.id, cfg.master_seed, Rng(cfg.master_seed).child("stability").seed(),
                         cfg.data.rho, cfg.algo.algo, cfg.algo.rounds, est);
    c.emit("results.csv", csv);

    char line[128];
    std::snprintf(line, sizeof(line), "eps_hat %.6g (se %.2g) over %d repeats, %zu probes\n",
                  est.eps_hat, est.eps_se, est.repeats, est.probes.size());
    out << "campaign " << c.id << "\n" << line;
    return 0;
}

json trend_json(const TrendStat& t) {
    json tj;
    tj["algo"] = algo_name(t.algo);
    if (std::isnan(t.level))
        tj["level"] = nullptr;
    else
        tj["level"] = t.level;
    if (std::isnan(t.spearman_gap_vs_rho))
        tj["spearman_gap_vs_rho"] = nullptr;
    else
        tj["spearman_gap_vs_rho"] = t.spearman_gap_vs_rho;
    tj["cells"] = t.cells;
    return tj;
}

int cmd_sweep(Campaign& c, std::ostream& out) {
    GenGapReport rep = sweep_rho(c.cfg.sweep, c.cfg.master_seed);

    std::string csv = csv_header();
    append_sweep_csv(csv, c.id, c.cfg.master_seed, rep);
    c.emit("results.csv", csv);

    json sw;
    json rows = json::array();
    for (const auto& r : rep.rows) {
        json rj;
        rj["rho"] = r.rho;
        rj["algo"] = algo_name(r.algo);
        if (std::isnan(r.level))
            rj["level"] = nullptr;
        else
            rj["level"] = r.level;
        rj["mean_round"] = r.mean_round;
        rj["repeats"] = r.repeats;
        rj["reached"] = r.reached;
        rj["gap"] = r.gap;
        rj["gap_se"] = r.gap_se;
        rj["signed_gap"] = r.signed_gap;
        rj["signed_gap_se"] = r.signed_gap_se;
        rj["cell_seed"] = hex16(r.cell_seed);
        rows.push_back(std::move(rj));
    }
    sw["rows"] = std::move(rows);
    json trends = json::array();
    for (const auto& t : rep.trends) trends.push_back(trend_json(t));
    sw["trends"] = std::move(trends);
    c.emit("sweep.json", sw.dump(2) + "\n");

    for (Algo a : c.cfg.sweep.algos)
        c.emit("plots/gap_" + algo_name(a) + ".svg", gap_svg(rep, a));

    out << "campaign " << c.id << "\n";
    for (const auto& t : rep.trends) {
        char lv[32];
        if (std::isnan(t.level))
            std::snprintf(lv, sizeof(lv), "final");
        else
            std::snprintf(lv, sizeof(lv), "%g", t.level);
        char line[128];
        std::snprintf(line, sizeof(line), "%-8s level %-8s spearman(gap, rho) %.4g  (%d cells)\n",
                      algo_name(t.algo).c_str(), lv, t.spearman_gap_vs_rho, t.cells);
        out << line;
    }
    return 0;
}

int cmd_bounds(Campaign& c, std::ostream& out, std::ostream& err) {
    BoundCampaignReport rep = bound_vs_measured(c.cfg.bounds, c.cfg.master_seed);

    std::string csv = csv_header();
    append_bounds_csv(csv, c.id, c.cfg.master_seed, rep);
    c.emit("results.csv", csv);

    json bj;
    bj["all_pass"] = rep.all_pass;
    json cells = json::array();
    for (const auto& cell : rep.cells) {
        json cj;
        cj["rho"] = cell.rho;
        cj["algo"] = algo_name(cell.algo);
        cj["repeats"] = cell.repeats;
        cj["mean_divergence"] = cell.mean_divergence;
        cj["se_divergence"] = cell.se_divergence;
        cj["mean_loss_gap"] = cell.mean_loss_gap;
        cj["rhs_total"] = cell.rhs.total;
        cj["rhs_heterogeneity"] = cell.rhs.heterogeneity;
        cj["rhs_convergence"] = cell.rhs.convergence;
        cj["rhs_variance"] = cell.rhs.variance;
        cj["rhs_band"] = json::array({cell.rhs_band_lo, cell.rhs_band_hi});
        cj["plugin_mean_rhs"] = cell.plugin_mean_rhs;
        cj["plugin_min_ratio"] = cell.plugin_min_ratio;
        cj["ratio"] = cell.ratio;
        cj["eps_from_bound"] = cell.eps_from_bound;
        cj["asserted"] = cell.asserted;
        cj["pass"] = cell.pass;
        cj["d_i"] = cell.d_i;
        cj["lipschitz"] = cell.constants.lipschitz;
        cj["beta"] = cell.constants.beta;
        cj["sigma"] = cell.constants.sigma;
        cj["cell_seed"] = hex16(cell.cell_seed);
        cells.push_back(std::move(cj));
    }
    bj["cells"] = std::move(cells);
    c.emit("bounds.json", bj.dump(2) + "\n");

    out << "campaign " << c.id << "\n";
    for (const auto& cell : rep.cells) {
        char line[192];
        std::snprintf(line, sizeof(line),
                      "rho %-4g %-8s measured+2se %.4e  rhs %.4e  ratio %6.2f  %s\n", cell.rho,
                      algo_name(cell.algo).c_str(),
                      cell.mean_divergence + 2.0 * cell.se_divergence, cell.rhs.total, cell.ratio,
                      cell.asserted ? (cell.pass ? "pass" : "FAIL") : "reported");
        out << line;
    }
    if (!rep.all_pass) {
        err << json{{"error", "bound violated on a certified convex cell"}}.dump() << "\n";
        return 2;
    }
    return 0;
}

int cmd_verify(std::uint64_t seed, int jobs, std::ostream& out, std::ostream& err) {
    VerifyOptions vopts;
    vopts.seed = seed;
    vopts.jobs = jobs;
    std::vector<CheckResult> results = run_verification(vopts);
    json failures = json::array();
    for (const auto& r : results) {
        out << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  " << r.detail << "\n";
        if (!r.pass) failures.push_back(r.name);
    }
    if (!failures.empty()) {
        err << json{{"error", "property checks failed"}, {"failed", failures}}.dump() << "\n";
        return 2;
    }
    out << results.size() << " properties verified\n";
    return 0;
}

// Rebuild summary and plots from a campaign's persisted CSV alone.
int cmd_report(const std::string& dir_arg, std::ostream& out) {
    fs::path dir(dir_arg);
    fs::path csv_path = dir / "results.csv";
    std::ifstream f(csv_path, std::ios::binary);
    if (!f) throw Error("report: no results.csv under " + dir.string());
    std::stringstream buf;
    buf << f.rdbuf();
    std::string text = buf.str();

    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        cells.push_back(cur);
        return cells;
    };
    auto num = [](const std::string& s) {
        return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };

    std::istringstream lines(text);
    std::string line;
    if (!std::getline(lines, line) || line != csv_header().substr(0, csv_header().size() - 1))
        throw Error("report: unrecognized CSV header in " + csv_path.string());

    GenGapReport rep;
    std::string campaign_id;
    int n_rows = 0, sweep_rows = 0, bound_rows = 0, stability_rows = 0;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != 10) throw Error("report: malformed CSV row in " + csv_path.string());
        ++n_rows;
        campaign_id = cells[0];
        bool has_bound = !cells[8].empty();
        bool has_eps = !cells[7].empty();
        if (has_bound) {
            ++bound_rows;
        } else if (has_eps) {
            ++stability_rows;
        } else {
            ++sweep_rows;
            GapRow r;
            r.rho = num(cells[1]);
            r.algo = algo_from_name(cells[2]);
            r.mean_round = num(cells[3]);
            r.level = num(cells[4]);
            r.gap = num(cells[5]);
            r.gap_se = num(cells[6]);
            r.reached = 1;
            rep.rows.push_back(r);
        }
    }

    json sm;
    sm["campaign_id"] = campaign_id;
    sm["rows"] = n_rows;
    sm["sweep_rows"] = sweep_rows;
    sm["bound_rows"] = bound_rows;
    sm["stability_rows"] = stability_rows;

    std::vector<std::string> outputs;
    if (sweep_rows > 0) {
        std::vector<Algo> algos;
        for (const auto& r : rep.rows)
            if (std::find(algos.begin(), algos.end(), r.algo) == algos.end())
                algos.push_back(r.algo);
        json trends = json::array();
        for (Algo a : algos) {
            std::string rel = "plots/gap_" + algo_name(a) + ".svg";
            write_file(dir / rel, gap_svg(rep, a));
            outputs.push_back(rel);
            // final-slice trend straight from the CSV rows
            std::vector<double> xs, ys;
            for (const auto& r : rep.rows)
                if (r.algo == a && std::isnan(r.level)) {
                    xs.push_back(r.rho);
                    ys.push_back(r.gap);
                }
            TrendStat t;
            t.algo = a;
            t.spearman_gap_vs_rho = spearman(xs, ys);
            t.cells = static_cast<int>(xs.size());
            trends.push_back(trend_json(t));
        }
        sm["trends"] = std::move(trends);
    }
    write_file(dir / "summary.json", sm.dump(2) + "\n");
    outputs.push_back("summary.json");

    out << "report: " << n_rows << " rows from " << csv_path.string() << "\n";
    for (const auto& o : outputs) out << "wrote " << (dir / o).string() << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"federated stability laboratory"};
    app.name("fedstab");

    std::string config_path, out_flag;
    std::uint64_t seed_flag = 0;
    int jobs_flag = 0;
    auto* opt_config = app.add_option("--config", config_path, "experiment config (JSON)");
    auto* opt_out = app.add_option("--out", out_flag, "output directory (FEDSTAB_OUT overrides)");
    auto* opt_seed = app.add_option("--seed", seed_flag, "override the master seed");
    auto* opt_jobs =
        app.add_option("--jobs", jobs_flag, "worker threads; results independent of the value")
            ->check(CLI::PositiveNumber);

    app.add_subcommand("generate", "materialize the federated dataset and its divergence profile");
    app.add_subcommand("train", "run one federated training and persist the trajectory");
    app.add_subcommand("stability", "estimate on-average stability via coupled twin runs");
    app.add_subcommand("sweep", "generalization-gap sweep over the heterogeneity grid");
    app.add_subcommand("bounds", "measured twin divergence against the divergence bounds");
    app.add_subcommand("verify", "run the property suites and print pass/fail per property");
    app.add_subcommand("report", "rebuild summary and plots from a campaign's results.csv");
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();
    app.require_subcommand(1);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << json{{"error", std::string("usage: ") + e.what()}}.dump() << "\n";
        return 1;
    }

    try {
        const std::string sub = app.get_subcommands().front()->get_name();

        ExperimentConfig cfg;
        bool have_config = opt_config->count() > 0;
        if (have_config) cfg = load_config(config_path);
        if (opt_seed->count() > 0) cfg.master_seed = seed_flag;
        if (opt_jobs->count() > 0) {
            cfg.jobs = jobs_flag;
            cfg.stability.jobs = jobs_flag;
            cfg.sweep.jobs = jobs_flag;
            cfg.bounds.jobs = jobs_flag;
        }
        std::string out_dir = cfg.out_dir;
        if (opt_out->count() > 0) out_dir = out_flag;
        if (const char* env = std::getenv("FEDSTAB_OUT"); env && *env) out_dir = env;

        if (sub == "verify") return cmd_verify(have_config ? cfg.master_seed : 2026,
                                               opt_jobs->count() > 0 ? jobs_flag : 1, out, err);
        if (sub == "report") {
            if (opt_out->count() == 0 && std::getenv("FEDSTAB_OUT") == nullptr && !have_config)
                throw Error("report: pass --out pointing at a campaign directory");
            return cmd_report(out_dir, out);
        }
        if (!have_config) throw Error(sub + ": --config is required");

        Campaign c(cfg, sub, out_dir);
        int rc = 0;
        if (sub == "generate")
            rc = cmd_generate(c, out);
        else if (sub == "train")
            rc = cmd_train(c, out);
        else if (sub == "stability")
            rc = cmd_stability(c, out);
        else if (sub == "sweep")
            rc = cmd_sweep(c, out);
        else if (sub == "bounds")
            rc = cmd_bounds(c, out, err);
        c.finish();
        out << "manifest " << (c.dir / "manifest.json").string() << "\n";
        return rc;
    } catch (const std::exception& e) {
        err << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
}

}  // namespace fedstab
