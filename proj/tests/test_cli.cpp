#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fedstab/cli.hpp"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int rc;
    std::string out;
    std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int rc = fedstab::run_cli(args, out, err);
    return {rc, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::path("cli_test") / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string write_config(const TempDir& dir, const json& doc) {
    fs::path p = dir.path / "config.json";
    std::ofstream f(p);
    f << doc.dump(2);
    return p.string();
}

json ring_config() {
    return json{
        {"data", {{"num_classes", 10}, {"feature_dim", 10}, {"clients", 10},
                  {"samples_per_client", 5}, {"rho", 1.0}}},
        {"model", {{"kind", "logistic"}}},
        {"master_seed", 7},
    };
}

json small_config() {
    return json{
        {"data",
         {{"num_classes", 3}, {"feature_dim", 3}, {"clients", 3}, {"samples_per_client", 6},
          {"rho", 0.3}}},
        {"model", {{"kind", "logistic"}}},
        {"algo",
         {{"name", "fedavg"}, {"rounds", 5}, {"local_steps", 2}, {"batch", 1},
          {"steps", {{"kind", "constant"}, {"alpha0", 0.2}}}}},
        {"sweep",
         {{"rho_grid", {0.0, 1.0}}, {"algos", {"fedavg"}}, {"levels", {1.2}}, {"t_cap", 6},
          {"repeats", 2}, {"oracle_size", 30}}},
        {"master_seed", 7},
    };
}

std::string find_campaign(const fs::path& root, const std::string& prefix) {
    if (!fs::exists(root)) return "";
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && e.path().filename().string().rfind(prefix, 0) == 0)
            return e.path().string();
    return "";
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("cli: help and usage errors") {
    CliResult help = cli({"--help"});
    CHECK(help.rc == 0);
    CHECK(help.out.find("generate") != std::string::npos);
    CHECK(help.out.find("sweep") != std::string::npos);

    CliResult none = cli({});
    CHECK(none.rc == 1);
    CHECK(none.err.find("error") != std::string::npos);

    CliResult bogus = cli({"frobnicate"});
    CHECK(bogus.rc == 1);
    CHECK(bogus.err.find("error") != std::string::npos);
}

TEST_CASE("cli: generate reports the ring heterogeneity profile") {
    TempDir dir("generate");
    std::string cfg = write_config(dir, ring_config());
    CliResult res = cli({"--config", cfg, "--out", dir.str(), "generate"});
    CHECK(res.rc == 0);
    // ten clients tiling ten classes in disjoint-pair rings: every D_i is 0.8
    CHECK(res.out.find("d_max 0.8") != std::string::npos);
    CHECK(res.out.find("manifest") != std::string::npos);

    std::string campaign = find_campaign(dir.path, "generate-");
    REQUIRE(!campaign.empty());
    CHECK(fs::exists(fs::path(campaign) / "dataset.json"));
    CHECK(fs::exists(fs::path(campaign) / "manifest.json"));

    json manifest = json::parse(slurp(fs::path(campaign) / "manifest.json"));
    CHECK(manifest["campaign_id"].get<std::string>().rfind("generate-", 0) == 0);
    CHECK(manifest["seed_streams"].size() == 8);
    bool has_dataset = false;
    for (const auto& o : manifest["outputs"])
        if (o.get<std::string>() == "dataset.json") has_dataset = true;
    CHECK(has_dataset);

    // a second identical invocation reproduces the manifest byte for byte
    std::string before = slurp(fs::path(campaign) / "manifest.json");
    CliResult again = cli({"--config", cfg, "--out", dir.str(), "generate"});
    CHECK(again.rc == 0);
    CHECK(slurp(fs::path(campaign) / "manifest.json") == before);
    CHECK(again.out == res.out);
}

TEST_CASE("cli: config errors surface as json on stderr") {
    TempDir dir("badconfig");
    json doc = small_config();
    doc["data"].erase("samples_per_client");
    std::string cfg = write_config(dir, doc);

    CliResult res = cli({"--config", cfg, "--out", dir.str(), "generate"});
    CHECK(res.rc == 1);
    CHECK(res.err.find("$.data.samples_per_client") != std::string::npos);

    CliResult noconf = cli({"train"});
    CHECK(noconf.rc == 1);
    CHECK(noconf.err.find("--config") != std::string::npos);
}

TEST_CASE("cli: zero-round training keeps the initial model") {
    TempDir dir("train0");
    json doc = small_config();
    doc["algo"]["rounds"] = 0;
    std::string cfg = write_config(dir, doc);

    CliResult res = cli({"--config", cfg, "--out", dir.str(), "train"});
    CHECK(res.rc == 0);
    std::string campaign = find_campaign(dir.path, "train-");
    REQUIRE(!campaign.empty());
    json training = json::parse(slurp(fs::path(campaign) / "training.json"));
    CHECK(training["rounds_run"] == 0);
    CHECK(training["complete"] == true);
    CHECK(training["theta_final"] == training["theta_initial"]);
    CHECK(training["train_loss"].size() == 1);
}

TEST_CASE("cli: the seed flag changes the campaign identity") {
    TempDir dir("seeds");
    std::string cfg = write_config(dir, small_config());

    CHECK(cli({"--config", cfg, "--out", dir.str(), "generate"}).rc == 0);
    std::string base = find_campaign(dir.path, "generate-");
    REQUIRE(!base.empty());

    CHECK(cli({"--config", cfg, "--out", dir.str(), "--seed", "5", "generate"}).rc == 0);
    int campaigns = 0;
    for (const auto& e : fs::directory_iterator(dir.path))
        if (e.is_directory() && e.path().filename().string().rfind("generate-", 0) == 0)
            ++campaigns;
    CHECK(campaigns == 2);
}

TEST_CASE("cli: environment variable overrides the output directory") {
    TempDir flag_dir("envflag");
    TempDir env_dir("envvar");
    std::string cfg = write_config(flag_dir, small_config());

    setenv("FEDSTAB_OUT", env_dir.str().c_str(), 1);
    CliResult res = cli({"--config", cfg, "--out", flag_dir.str(), "generate"});
    unsetenv("FEDSTAB_OUT");
    CHECK(res.rc == 0);
    CHECK(!find_campaign(env_dir.path, "generate-").empty());
    CHECK(find_campaign(flag_dir.path, "generate-").empty());
}

TEST_CASE("cli: stability writes probe rows with the shared csv schema") {
    TempDir dir("stab");
    json doc = small_config();
    doc["algo"]["rounds"] = 3;
    doc["stability"] = {{"probe_clients", {0}}, {"positions_per_client", 1}, {"repeats", 2}};
    std::string cfg = write_config(dir, doc);

    CliResult res = cli({"--config", cfg, "--out", dir.str(), "stability"});
    CHECK(res.rc == 0);
    std::string campaign = find_campaign(dir.path, "stability-");
    REQUIRE(!campaign.empty());
    CHECK(fs::exists(fs::path(campaign) / "stability.json"));
    std::string csv = slurp(fs::path(campaign) / "results.csv");
    CHECK(csv.rfind("campaign_id,rho,algo,t,level,gap,gap_se,eps_hat,bound_rhs,seeds\n", 0) == 0);
    json stab = json::parse(slurp(fs::path(campaign) / "stability.json"));
    CHECK(stab["repeats"] == 2);
    CHECK(stab.contains("eps_hat"));
}

TEST_CASE("cli: sweep then report round-trip") {
    TempDir dir("sweep");
    std::string cfg = write_config(dir, small_config());

    CliResult swept = cli({"--config", cfg, "--out", dir.str(), "sweep"});
    CHECK(swept.rc == 0);
    std::string campaign = find_campaign(dir.path, "sweep-");
    REQUIRE(!campaign.empty());
    CHECK(fs::exists(fs::path(campaign) / "results.csv"));
    CHECK(fs::exists(fs::path(campaign) / "sweep.json"));
    CHECK(fs::exists(fs::path(campaign) / "plots" / "gap_fedavg.svg"));

    CliResult reported = cli({"--out", campaign, "report"});
    CHECK(reported.rc == 0);
    json summary = json::parse(slurp(fs::path(campaign) / "summary.json"));
    CHECK(summary["campaign_id"].get<std::string>().rfind("sweep-", 0) == 0);
    CHECK(summary["bound_rows"] == 0);
    CHECK(summary["stability_rows"] == 0);
    CHECK(summary["sweep_rows"].get<int>() > 0);
    CHECK(summary["rows"] == summary["sweep_rows"]);

    CliResult missing = cli({"--out", dir.str(), "report"});
    CHECK(missing.rc == 1);
    CHECK(missing.err.find("results.csv") != std::string::npos);
}
