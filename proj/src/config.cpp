#include "fedstab/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>

#include "fedstab/error.hpp"
#include "json.hpp"

namespace fedstab {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw Error("config: " + path + ": " + what);
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                ok = true;
                break;
            }
        if (!ok) fail(path + "." + item.key(), "unknown field");
    }
}

const json* find(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

const json& require(const json& obj, const std::string& path, const char* key) {
    const json* v = find(obj, key);
    if (!v) fail(path + "." + key, "missing required field");
    return *v;
}

const json& as_obj(const json& v, const std::string& path) {
    if (!v.is_object()) fail(path, "expected an object");
    return v;
}

const json& as_arr(const json& v, const std::string& path) {
    if (!v.is_array()) fail(path, "expected an array");
    return v;
}

double as_num(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
}

int as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
        fail(path, "integer out of range");
    return static_cast<int>(x);
}

std::uint64_t as_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    fail(path, "expected a nonnegative integer");
}

bool as_bool(const json& v, const std::string& path) {
    if (!v.is_boolean()) fail(path, "expected a boolean");
    return v.get<bool>();
}

std::string as_str(const json& v, const std::string& path) {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
}

double get_num(const json& obj, const std::string& path, const char* key, double dflt) {
    const json* v = find(obj, key);
    return v ? as_num(*v, path + "." + key) : dflt;
}

int get_int(const json& obj, const std::string& path, const char* key, int dflt) {
    const json* v = find(obj, key);
    return v ? as_int(*v, path + "." + key) : dflt;
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool dflt) {
    const json* v = find(obj, key);
    return v ? as_bool(*v, path + "." + key) : dflt;
}

std::string get_str(const json& obj, const std::string& path, const char* key,
                    const std::string& dflt) {
    const json* v = find(obj, key);
    return v ? as_str(*v, path + "." + key) : dflt;
}

std::vector<double> num_array(const json& v, const std::string& path) {
    const json& a = as_arr(v, path);
    std::vector<double> out;
    for (std::size_t i = 0; i < a.size(); ++i)
        out.push_back(as_num(a[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

Algo algo_by_name(const std::string& s, const std::string& path) {
    try {
        return algo_from_name(s);
    } catch (const std::exception&) {
        fail(path, "unknown algorithm '" + s + "' (fedavg | scaffold | fedprox)");
    }
}

std::vector<Algo> algo_array(const json& v, const std::string& path) {
    const json& a = as_arr(v, path);
    std::vector<Algo> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        std::string p = path + "[" + std::to_string(i) + "]";
        out.push_back(algo_by_name(as_str(a[i], p), p));
    }
    return out;
}

DataGenSpec parse_data(const json& j, const std::string& path) {
    check_keys(j, path,
               {"clients", "num_classes", "feature_dim", "rho", "samples_per_client",
                "noise_scale", "client_classes", "class_means"});
    int num_classes = as_int(require(j, path, "num_classes"), path + ".num_classes");
    int feature_dim = as_int(require(j, path, "feature_dim"), path + ".feature_dim");
    double rho = get_num(j, path, "rho", 0.0);
    double noise = get_num(j, path, "noise_scale", 0.3);

    const json& spc = require(j, path, "samples_per_client");
    std::vector<std::size_t> sizes;
    int clients = 0;
    if (spc.is_array()) {
        for (std::size_t i = 0; i < spc.size(); ++i) {
            int n = as_int(spc[i], path + ".samples_per_client[" + std::to_string(i) + "]");
            if (n < 1) fail(path + ".samples_per_client[" + std::to_string(i) + "]", "must be >= 1");
            sizes.push_back(static_cast<std::size_t>(n));
        }
        clients = static_cast<int>(sizes.size());
        if (const json* c = find(j, "clients"); c && as_int(*c, path + ".clients") != clients)
            fail(path + ".clients", "disagrees with samples_per_client array length");
    } else {
        int n = as_int(spc, path + ".samples_per_client");
        if (n < 1) fail(path + ".samples_per_client", "must be >= 1");
        clients = as_int(require(j, path, "clients"), path + ".clients");
        if (clients < 1) fail(path + ".clients", "must be >= 1");
        sizes.assign(static_cast<std::size_t>(clients), static_cast<std::size_t>(n));
    }

    DataGenSpec spec;
    try {
        spec = DataGenSpec::make_default(clients, num_classes, feature_dim, rho, 1, noise);
    } catch (const std::exception& e) {
        fail(path, e.what());
    }
    spec.samples_per_client = std::move(sizes);

    if (const json* cc = find(j, "client_classes")) {
        const json& a = as_arr(*cc, path + ".client_classes");
        if (a.size() != static_cast<std::size_t>(clients))
            fail(path + ".client_classes", "need one [a, b] pair per client");
        spec.client_classes.clear();
        for (std::size_t i = 0; i < a.size(); ++i) {
            std::string p = path + ".client_classes[" + std::to_string(i) + "]";
            const json& pr = as_arr(a[i], p);
            if (pr.size() != 2) fail(p, "expected a pair of class indices");
            spec.client_classes.push_back({as_int(pr[0], p + "[0]"), as_int(pr[1], p + "[1]")});
        }
    }
    if (const json* cm = find(j, "class_means")) {
        const json& a = as_arr(*cm, path + ".class_means");
        if (a.size() != static_cast<std::size_t>(num_classes))
            fail(path + ".class_means", "need one mean per class");
        spec.class_means.clear();
        for (std::size_t i = 0; i < a.size(); ++i)
            spec.class_means.push_back(num_array(a[i], path + ".class_means[" + std::to_string(i) + "]"));
    }
    try {
        spec.validate();
    } catch (const std::exception& e) {
        fail(path, e.what());
    }
    return spec;
}

ModelSpec parse_model(const json& j, const std::string& path, const DataGenSpec& data) {
    check_keys(j, path, {"kind", "hidden"});
    ModelSpec ms;
    ms.kind = as_str(require(j, path, "kind"), path + ".kind");
    if (ms.kind != "least_squares" && ms.kind != "logistic" && ms.kind != "mlp")
        fail(path + ".kind", "unknown model '" + ms.kind + "' (least_squares | logistic | mlp)");
    ms.hidden = get_int(j, path, "hidden", 8);
    if (ms.hidden < 1) fail(path + ".hidden", "must be >= 1");
    ms.feature_dim = data.feature_dim;
    ms.num_classes = data.num_classes;
    return ms;
}

StepSchedule parse_steps(const json& j, const std::string& path, const AlgoConfig& cfg) {
    check_keys(j, path, {"kind", "alpha0", "beta", "k", "cap"});
    StepSchedule st;
    std::string kind = get_str(j, path, "kind", "constant");
    if (kind == "constant") {
        st.kind = StepSchedule::Kind::Constant;
        st.alpha0 = get_num(j, path, "alpha0", 0.05);
    } else if (kind == "diminishing") {
        st.kind = StepSchedule::Kind::TheoryDiminishing;
        st.beta = get_num(j, path, "beta", 1.0);
        st.k = get_int(j, path, "k", cfg.algo == Algo::FedProx ? 1 : cfg.local_steps);
    } else {
        fail(path + ".kind", "unknown schedule '" + kind + "' (constant | diminishing)");
    }
    st.cap = get_num(j, path, "cap", std::numeric_limits<double>::infinity());
    try {
        st.validate();
    } catch (const std::exception& e) {
        fail(path, e.what());
    }
    return st;
}

AlgoConfig parse_algo(const json& j, const std::string& path) {
    check_keys(j, path, {"name", "rounds", "local_steps", "batch", "steps", "prox_tol", "mu_hat"});
    AlgoConfig cfg;
    cfg.algo = algo_by_name(get_str(j, path, "name", "fedavg"), path + ".name");
    cfg.rounds = get_int(j, path, "rounds", 50);
    cfg.local_steps = get_int(j, path, "local_steps", 5);
    cfg.batch = get_int(j, path, "batch", 1);
    cfg.prox_tol = get_num(j, path, "prox_tol", 1e-8);
    cfg.mu_hat = get_num(j, path, "mu_hat", 0.0);
    if (const json* st = find(j, "steps"))
        cfg.steps = parse_steps(as_obj(*st, path + ".steps"), path + ".steps", cfg);
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        fail(path, e.what());
    }
    return cfg;
}

ConstantOptions parse_constants(const json& j, const std::string& path) {
    check_keys(j, path, {"lipschitz_safety", "mu_safety", "beta_safety", "power_iters", "seed"});
    ConstantOptions co;
    co.lipschitz_safety = get_num(j, path, "lipschitz_safety", co.lipschitz_safety);
    co.mu_safety = get_num(j, path, "mu_safety", co.mu_safety);
    co.beta_safety = get_num(j, path, "beta_safety", co.beta_safety);
    co.power_iters = get_int(j, path, "power_iters", co.power_iters);
    if (const json* s = find(j, "seed")) co.seed = as_u64(*s, path + ".seed");
    return co;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const std::exception& e) {
        throw Error(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error("config: top level must be an object");
    const std::string P = "$";
    check_keys(j, P,
               {"data", "model", "algo", "stability", "sweep", "bounds", "out_dir", "master_seed",
                "jobs", "oracle_size", "init_scale"});

    ExperimentConfig cfg;
    cfg.data = parse_data(as_obj(require(j, P, "data"), P + ".data"), P + ".data");
    cfg.model = parse_model(as_obj(require(j, P, "model"), P + ".model"), P + ".model", cfg.data);
    cfg.out_dir = get_str(j, P, "out_dir", "out");
    if (const json* s = find(j, "master_seed")) cfg.master_seed = as_u64(*s, P + ".master_seed");
    cfg.jobs = get_int(j, P, "jobs", 1);
    if (cfg.jobs < 1) fail(P + ".jobs", "must be >= 1");
    int osize = get_int(j, P, "oracle_size", 50000);
    if (osize < 1) fail(P + ".oracle_size", "must be >= 1");
    cfg.oracle_size = static_cast<std::size_t>(osize);
    cfg.init_scale = get_num(j, P, "init_scale", 0.5);
    if (!(cfg.init_scale >= 0.0)) fail(P + ".init_scale", "must be >= 0");

    if (const json* a = find(j, "algo"))
        cfg.algo = parse_algo(as_obj(*a, P + ".algo"), P + ".algo");

    cfg.stability.init_scale = cfg.init_scale;
    if (const json* st = find(j, "stability")) {
        const std::string sp = P + ".stability";
        const json& s = as_obj(*st, sp);
        check_keys(s, sp, {"probe_clients", "positions_per_client", "repeats", "init_scale"});
        if (const json* pc = find(s, "probe_clients")) {
            const json& a = as_arr(*pc, sp + ".probe_clients");
            cfg.stability.probe_clients.clear();
            for (std::size_t i = 0; i < a.size(); ++i)
                cfg.stability.probe_clients.push_back(
                    as_int(a[i], sp + ".probe_clients[" + std::to_string(i) + "]"));
        }
        cfg.stability.positions_per_client = get_int(s, sp, "positions_per_client", 5);
        cfg.stability.repeats = get_int(s, sp, "repeats", 50);
        cfg.stability.init_scale = get_num(s, sp, "init_scale", cfg.init_scale);
    }
    try {
        cfg.stability.validate(cfg.data);
    } catch (const std::exception& e) {
        fail(P + ".stability", e.what());
    }

    cfg.sweep.data = cfg.data;
    cfg.sweep.model = cfg.model;
    cfg.sweep.algo_base = cfg.algo;
    cfg.sweep.oracle_size = cfg.oracle_size;
    cfg.sweep.init_scale = cfg.init_scale;
    if (const json* sw = find(j, "sweep")) {
        const std::string sp = P + ".sweep";
        const json& s = as_obj(*sw, sp);
        check_keys(s, sp,
                   {"rho_grid", "algos", "levels", "t_cap", "repeats", "oracle_size", "init_scale",
                    "stop_at_min_level"});
        if (const json* g = find(s, "rho_grid")) cfg.sweep.rho_grid = num_array(*g, sp + ".rho_grid");
        if (const json* a = find(s, "algos")) cfg.sweep.algos = algo_array(*a, sp + ".algos");
        if (const json* l = find(s, "levels")) cfg.sweep.levels = num_array(*l, sp + ".levels");
        cfg.sweep.t_cap = get_int(s, sp, "t_cap", 1000);
        cfg.sweep.repeats = get_int(s, sp, "repeats", 20);
        int os = get_int(s, sp, "oracle_size", static_cast<int>(cfg.oracle_size));
        if (os < 1) fail(sp + ".oracle_size", "must be >= 1");
        cfg.sweep.oracle_size = static_cast<std::size_t>(os);
        cfg.sweep.init_scale = get_num(s, sp, "init_scale", cfg.init_scale);
        cfg.sweep.stop_at_min_level = get_bool(s, sp, "stop_at_min_level", true);
    }
    try {
        cfg.sweep.validate();
    } catch (const std::exception& e) {
        fail(P + ".sweep", e.what());
    }

    cfg.bounds.data = cfg.data;
    cfg.bounds.model = cfg.model;
    cfg.bounds.algo_base = cfg.algo;
    cfg.bounds.oracle_size = cfg.oracle_size;
    cfg.bounds.init_scale = cfg.init_scale;
    if (const json* b = find(j, "bounds")) {
        const std::string bp = P + ".bounds";
        const json& s = as_obj(*b, bp);
        check_keys(s, bp,
                   {"rho_grid", "algos", "repeats", "probe_client", "probe_position", "oracle_size",
                    "init_scale", "constants"});
        if (const json* g = find(s, "rho_grid")) cfg.bounds.rho_grid = num_array(*g, bp + ".rho_grid");
        if (const json* a = find(s, "algos")) cfg.bounds.algos = algo_array(*a, bp + ".algos");
        cfg.bounds.repeats = get_int(s, bp, "repeats", 50);
        cfg.bounds.probe_client = get_int(s, bp, "probe_client", 0);
        int pp = get_int(s, bp, "probe_position", 0);
        if (pp < 0) fail(bp + ".probe_position", "must be >= 0");
        cfg.bounds.probe_position = static_cast<std::size_t>(pp);
        int os = get_int(s, bp, "oracle_size", static_cast<int>(cfg.oracle_size));
        if (os < 1) fail(bp + ".oracle_size", "must be >= 1");
        cfg.bounds.oracle_size = static_cast<std::size_t>(os);
        cfg.bounds.init_scale = get_num(s, bp, "init_scale", cfg.init_scale);
        if (const json* co = find(s, "constants"))
            cfg.bounds.constants = parse_constants(as_obj(*co, bp + ".constants"), bp + ".constants");
    }
    try {
        cfg.bounds.validate();
    } catch (const std::exception& e) {
        fail(P + ".bounds", e.what());
    }

    cfg.stability.jobs = cfg.jobs;
    cfg.sweep.jobs = cfg.jobs;
    cfg.bounds.jobs = cfg.jobs;
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

namespace {

json steps_json(const StepSchedule& st) {
    json j;
    if (st.kind == StepSchedule::Kind::Constant) {
        j["kind"] = "constant";
        j["alpha0"] = st.alpha0;
    } else {
        j["kind"] = "diminishing";
        j["beta"] = st.beta;
        j["k"] = st.k;
    }
    if (std::isfinite(st.cap)) j["cap"] = st.cap;
    return j;
}

json algo_json(const AlgoConfig& cfg) {
    json j;
    j["name"] = algo_name(cfg.algo);
    j["rounds"] = cfg.rounds;
    j["local_steps"] = cfg.local_steps;
    j["batch"] = cfg.batch;
    j["prox_tol"] = cfg.prox_tol;
    j["mu_hat"] = cfg.mu_hat;
    j["steps"] = steps_json(cfg.steps);
    return j;
}

json algo_names_json(const std::vector<Algo>& algos) {
    json a = json::array();
    for (Algo x : algos) a.push_back(algo_name(x));
    return a;
}

}  // namespace

std::string dump_config(const ExperimentConfig& cfg) {
    json j;
    json d;
    d["num_classes"] = cfg.data.num_classes;
    d["feature_dim"] = cfg.data.feature_dim;
    d["rho"] = cfg.data.rho;
    d["noise_scale"] = cfg.data.noise_scale;
    d["samples_per_client"] = cfg.data.samples_per_client;
    json cc = json::array();
    for (const auto& pr : cfg.data.client_classes) cc.push_back({pr[0], pr[1]});
    d["client_classes"] = cc;
    d["class_means"] = cfg.data.class_means;
    j["data"] = d;

    json m;
    m["kind"] = cfg.model.kind;
    m["hidden"] = cfg.model.hidden;
    j["model"] = m;

    j["algo"] = algo_json(cfg.algo);

    json st;
    st["probe_clients"] = cfg.stability.probe_clients;
    st["positions_per_client"] = cfg.stability.positions_per_client;
    st["repeats"] = cfg.stability.repeats;
    st["init_scale"] = cfg.stability.init_scale;
    j["stability"] = st;

    json sw;
    sw["rho_grid"] = cfg.sweep.rho_grid;
    sw["algos"] = algo_names_json(cfg.sweep.algos);
    sw["levels"] = cfg.sweep.levels;
    sw["t_cap"] = cfg.sweep.t_cap;
    sw["repeats"] = cfg.sweep.repeats;
    sw["oracle_size"] = cfg.sweep.oracle_size;
    sw["init_scale"] = cfg.sweep.init_scale;
    sw["stop_at_min_level"] = cfg.sweep.stop_at_min_level;
    j["sweep"] = sw;

    json b;
    b["rho_grid"] = cfg.bounds.rho_grid;
    b["algos"] = algo_names_json(cfg.bounds.algos);
    b["repeats"] = cfg.bounds.repeats;
    b["probe_client"] = cfg.bounds.probe_client;
    b["probe_position"] = cfg.bounds.probe_position;
    b["oracle_size"] = cfg.bounds.oracle_size;
    b["init_scale"] = cfg.bounds.init_scale;
    json co;
    co["lipschitz_safety"] = cfg.bounds.constants.lipschitz_safety;
    co["mu_safety"] = cfg.bounds.constants.mu_safety;
    co["beta_safety"] = cfg.bounds.constants.beta_safety;
    co["power_iters"] = cfg.bounds.constants.power_iters;
    co["seed"] = cfg.bounds.constants.seed;
    b["constants"] = co;
    j["bounds"] = b;

    j["out_dir"] = cfg.out_dir;
    j["master_seed"] = cfg.master_seed;
    j["jobs"] = cfg.jobs;
    j["oracle_size"] = cfg.oracle_size;
    j["init_scale"] = cfg.init_scale;
    return j.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.out_dir = "";
    c.jobs = 1;
    c.stability.jobs = 1;
    c.sweep.jobs = 1;
    c.bounds.jobs = 1;
    return Rng::fnv1a(dump_config(c));
}

}  // namespace fedstab
