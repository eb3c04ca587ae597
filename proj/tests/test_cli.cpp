#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tsc/sim.hpp"
#include "tsc/tscnet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Sandbox {
public:
    Sandbox() {
        static int counter = 0;
        dir_ = fs::temp_directory_path() / ("tsc_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    ~Sandbox() { fs::remove_all(dir_); }
    fs::path operator/(const std::string& name) const { return dir_ / name; }

    Result run(const std::string& args) const {
        const fs::path out = dir_ / ".stdout", err = dir_ / ".stderr";
        const std::string cmd = std::string("\"") + TSC_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                                err.string() + "\"";
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }
    void write(const std::string& name, const std::string& text) const {
        std::ofstream(dir_ / name, std::ios::binary) << text;
    }

private:
    fs::path dir_;
};

const char* kTinyConfig = R"(schema_version = 1
seed = 5
[scenario]
name = "merge"
n_vehicles = 3
episode_len = 20
[train]
iterations = 2
steps_per_iter = 12
batch_steps = 3
updates_per_iter = 2
checkpoint_every = 0
[net]
d_e = 6
d_n = 6
d_t = 4
d_c = 6
d_u = 6
M = 3
K = 2
[net.hidden]
ego_enc = 6
nbr_enc = 6
topo_dec = 6
node_head = 6
ego_dec = 6
policy = 6
predict = 6
value = 6
)";

std::string with_iterations(int n) {
    std::string s = kTinyConfig;
    const auto at = s.find("iterations = 2");
    return s.replace(at, 14, "iterations = " + std::to_string(n));
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    double num(std::size_t r, const std::string& col) const {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == col) return std::stod(rows[r][c]);
        throw std::runtime_error("no column " + col);
    }
};

CsvTable read_csv(const fs::path& p) {
    std::ifstream in(p);
    CsvTable t;
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> f;
        std::stringstream ss(l);
        std::string x;
        while (std::getline(ss, x, ',')) f.push_back(x);
        return f;
    };
    if (std::getline(in, line)) t.header = split(line);
    while (std::getline(in, line))
        if (!line.empty()) t.rows.push_back(split(line));
    return t;
}

void check_manifest(const fs::path& dir, const std::string& command) {
    REQUIRE(fs::exists(dir / "manifest.json"));
    const json m = json::parse(slurp(dir / "manifest.json"));
    CHECK(m["command"] == command);
    CHECK(m.contains("code_version"));
    CHECK(m.contains("started_at"));
    CHECK(m.contains("finished_at"));
    for (const auto& p : m["artifacts"]) CHECK(fs::exists(p.get<std::string>()));
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
    Sandbox sb;
    CHECK(sb.run("").code == 2);
    CHECK(sb.run("frobnicate").code == 2);
    CHECK(sb.run("train").code == 2);
    CHECK(sb.run("train --config x.toml --ablation sideways").code == 2);
    CHECK(sb.run("--help").code == 0);
}

TEST_CASE("label") {
    Sandbox sb;
    SUBCASE("empty file writes nothing") {
        sb.write("empty.csv", "");
        const auto r = sb.run("--out-dir \"" + (sb / "out").string() + "\" label --input \"" + (sb / "empty.csv").string() + "\"");
        CHECK(r.code == 1);
        CHECK_FALSE(fs::exists(sb / "out"));
    }
    SUBCASE("malformed CSV names the line") {
        sb.write("bad.csv", "agent_id,t,x,y,heading\n1,0,0,0,0\n1,1,zero,0,0\n");
        const auto r = sb.run("--out-dir \"" + (sb / "out").string() + "\" label --input \"" + (sb / "bad.csv").string() + "\"");
        CHECK(r.code == 1);
        CHECK(r.err.find("line 3") != std::string::npos);
        CHECK_FALSE(fs::exists(sb / "out"));
    }
    SUBCASE("parallel agents are neutral") {
        std::ostringstream csv;
        csv << "agent_id,t,x,y,heading\n";
        for (int t = 0; t <= 30; ++t) csv << "1," << t << "," << t << ",0,0\n2," << t << "," << t << ",3,0\n";
        sb.write("par.csv", csv.str());
        const auto out = sb / "out";
        const auto r = sb.run("--out-dir \"" + out.string() + "\" label \"" + (sb / "par.csv").string() + "\"");
        REQUIRE(r.code == 0);
        check_manifest(out, "label");
        const auto edges = read_csv(out / "edges.csv");
        const auto nodes = read_csv(out / "nodes.csv");
        CHECK(edges.rows.size() >= 31);
        for (std::size_t k = 0; k < edges.rows.size(); ++k) CHECK(edges.num(k, "p") == 0.5);
        REQUIRE(nodes.rows.size() == 62);
        for (std::size_t k = 0; k < nodes.rows.size(); ++k) CHECK(nodes.num(k, "s") == 0.0);
    }
    SUBCASE("crossing agents get the hand-derived orientation") {
        std::ostringstream csv;
        csv << "agent_id,t,x,y,heading\n";
        csv.precision(17);
        const double th = std::atan2(0.4, 1.0);
        for (int t = 0; t <= 25; ++t)
            csv << "1," << t << "," << -10.0 + t << ",0,0\n2," << t << "," << -10.0 + t << "," << -5.0 + 0.4 * t << "," << th << "\n";
        sb.write("cross.csv", csv.str());
        const auto out = sb / "out";
        REQUIRE(sb.run("--out-dir \"" + out.string() + "\" label \"" + (sb / "cross.csv").string() + "\"").code == 0);
        // directed weaving distances at t = 0 from the lateral gap profiles
        auto directed = [&](double ex, double ey, double eh, auto self, auto other) {
            auto lat = [&](double x, double y) { return -std::sin(eh) * (x - ex) + std::cos(eh) * (y - ey); };
            double best = 1e300;
            for (int h = 0; h < 25; ++h) {
                const auto [sx0, sy0] = self(h);
                const auto [ox0, oy0] = other(h);
                const auto [sx1, sy1] = self(h + 1);
                const auto [ox1, oy1] = other(h + 1);
                const double g0 = lat(sx0, sy0) - lat(ox0, oy0), g1 = lat(sx1, sy1) - lat(ox1, oy1);
                best = std::min(best, std::min(std::fabs(g0), std::fabs(g1)) / (0.1 + std::max(0.0, -g0 * g1)));
            }
            return best;
        };
        auto p1 = [](int h) { return std::pair<double, double>{-10.0 + h, 0.0}; };
        auto p2 = [](int h) { return std::pair<double, double>{-10.0 + h, -5.0 + 0.4 * h}; };
        const double d12 = directed(-10, 0, 0, p1, p2);
        const double d21 = directed(-10, -5, th, p2, p1);
        const double A12 = 1.0 - 2.0 / (1.0 + std::exp(d12 - d21));
        REQUIRE(std::fabs(A12) > 1e-3);
        const auto edges = read_csv(out / "edges.csv");
        const auto nodes = read_csv(out / "nodes.csv");
        bool seen = false;
        for (std::size_t k = 0; k < edges.rows.size(); ++k)
            if (edges.num(k, "t") == 0 && edges.num(k, "i") == 1 && edges.num(k, "j") == 2) {
                CHECK(edges.num(k, "A") == doctest::Approx(A12).epsilon(1e-9));
                seen = true;
            }
        CHECK(seen);
        for (std::size_t k = 0; k < nodes.rows.size(); ++k)
            if (nodes.num(k, "t") == 0 && nodes.num(k, "i") == 1) CHECK(nodes.num(k, "s") == doctest::Approx(A12 / 2).epsilon(1e-9));
    }
}

TEST_CASE("train") {
    Sandbox sb;
    SUBCASE("unknown config key is named") {
        sb.write("bad.toml", "schema_version = 1\n[train]\nlearning_rat = 0.1\n");
        const auto r = sb.run("--out-dir \"" + (sb / "o").string() + "\" train --config \"" + (sb / "bad.toml").string() + "\"");
        CHECK(r.code == 1);
        CHECK(r.err.find("learning_rat") != std::string::npos);
    }
    SUBCASE("zero iterations writes the initial checkpoint only") {
        sb.write("c.toml", with_iterations(0));
        const auto out = sb / "o";
        REQUIRE(sb.run("--out-dir \"" + out.string() + "\" train --config \"" + (sb / "c.toml").string() + "\"").code == 0);
        check_manifest(out, "train");
        int checkpoints = 0;
        for (const auto& e : fs::directory_iterator(out))
            if (e.path().filename().string().rfind("checkpoint_", 0) == 0) ++checkpoints;
        CHECK(checkpoints == 1);
        CHECK(fs::exists(out / "checkpoint_000000.bin"));
        CHECK_FALSE(fs::exists(out / "trainer.state"));
    }
    SUBCASE("determinism and resume") {
        sb.write("c2.toml", with_iterations(2));
        sb.write("c1.toml", with_iterations(1));
        auto train = [&](const std::string& cfg, const std::string& dir, const std::string& extra = "") {
            return sb.run("--single-thread --out-dir \"" + (sb / dir).string() + "\" train --config \"" + (sb / cfg).string() + "\" " + extra).code;
        };
        REQUIRE(train("c2.toml", "a") == 0);
        REQUIRE(train("c2.toml", "b") == 0);
        CHECK(slurp(sb / "a" / "train_log.csv") == slurp(sb / "b" / "train_log.csv"));
        REQUIRE(train("c1.toml", "half") == 0);
        REQUIRE(train("c2.toml", "resumed", "--resume \"" + (sb / "half" / "trainer.state").string() + "\"") == 0);
        const auto full = tsc::net::load_checkpoint_file((sb / "a" / "checkpoint_000002.bin").string());
        const auto res = tsc::net::load_checkpoint_file((sb / "resumed" / "checkpoint_000002.bin").string());
        REQUIRE(full.size() == res.size());
        double worst = 0;
        for (std::size_t k = 0; k < full.size(); ++k) worst = std::max(worst, std::fabs(full.values()[k] - res.values()[k]));
        CHECK(worst <= 1e-10);
        const auto la = read_csv(sb / "a" / "train_log.csv");
        const auto lr = read_csv(sb / "resumed" / "train_log.csv");
        REQUIRE(lr.rows.size() == 1);
        for (const char* col : {"loss_total", "loss_policy", "loss_value", "loss_topo", "loss_lead"})
            CHECK(std::fabs(la.num(1, col) - lr.num(0, col)) <= 1e-10);
        CHECK(train("c2.toml", "x", "--resume \"" + (sb / "nowhere.state").string() + "\"") == 1);
    }
}

TEST_CASE("eval") {
    Sandbox sb;
    sb.write("c.toml", with_iterations(0));
    REQUIRE(sb.run("--out-dir \"" + (sb / "t").string() + "\" train --config \"" + (sb / "c.toml").string() + "\"").code == 0);
    const std::string ckpt = (sb / "t" / "checkpoint_000000.bin").string();

    CHECK(sb.run("--out-dir \"" + (sb / "e0").string() + "\" eval --checkpoint \"" + (sb / "missing.bin").string() + "\"").code == 1);

    const auto out = sb / "e";
    REQUIRE(sb.run("--out-dir \"" + out.string() + "\" eval --checkpoint \"" + ckpt + "\" --episodes 1 --seed 3").code == 0);
    check_manifest(out, "eval");
    int csvs = 0;
    for (const auto& e : fs::directory_iterator(out)) csvs += e.path().extension() == ".csv";
    CHECK(csvs == 1);
    std::ifstream in(out / "episode_000.csv");
    const auto log = tsc::sim::read_episode_csv(in);
    CHECK(log.steps() == 20);
    const auto m = tsc::sim::compute_metrics(log, tsc::sim::builtin_scenario("merge").v_max);
    const json j = json::parse(slurp(out / "metrics.json"));
    CHECK(j["CR"].get<double>() == doctest::Approx(m.cr).epsilon(1e-12));
    CHECK(j["CR_AA"].get<double>() == doctest::Approx(m.cr_aa).epsilon(1e-12));
    CHECK(j["AS"].get<double>() == doctest::Approx(m.as).epsilon(1e-12));
    CHECK(j["SM"].get<double>() == doctest::Approx(m.sm).epsilon(1e-12));

    const auto again = sb / "e2";
    REQUIRE(sb.run("--out-dir \"" + again.string() + "\" eval --checkpoint \"" + ckpt + "\" --episodes 1 --seed 3").code == 0);
    CHECK(slurp(again / "metrics.json") == slurp(out / "metrics.json"));
    CHECK(slurp(again / "episode_000.csv") == slurp(out / "episode_000.csv"));

    // a network built for a different observation layout
    tsc::net::NetConfig odd;
    odd.ego_features = 3;
    odd.d_e = odd.d_n = odd.d_c = odd.d_u = 4;
    odd.d_t = 2;
    odd.hidden = {4, 4, 4, 4, 4, 4, 4, 4};
    tsc::net::ParamStore p(odd);
    tsc::net::save_checkpoint_file((sb / "odd.bin").string(), p);
    const auto r = sb.run("--out-dir \"" + (sb / "e3").string() + "\" eval --checkpoint \"" + (sb / "odd.bin").string() + "\" --scenario merge");
    CHECK(r.code == 1);
    CHECK(r.err.find("dimensions") != std::string::npos);
}

TEST_CASE("verify-lemmas") {
    Sandbox sb;
    const auto out = sb / "v";
    const auto r = sb.run("--out-dir \"" + out.string() + "\" verify-lemmas");
    CHECK(r.code == 0);
    check_manifest(out, "verify-lemmas");
    const json rep = json::parse(slurp(out / "report.json"));
    CHECK(rep["bellman"]["records"] == 300);
    CHECK(rep["holds"] == true);

    auto single = [&](const std::string& dir) {
        return sb.run("--out-dir \"" + (sb / dir).string() + "\" verify-lemmas --instances 1 --gammas 0.9 --seed 42");
    };
    REQUIRE(single("s1").code == 0);
    REQUIRE(single("s2").code == 0);
    const std::string b1 = slurp(sb / "s1" / "bellman.jsonl");
    CHECK(b1 == slurp(sb / "s2" / "bellman.jsonl"));
    CHECK(std::count(b1.begin(), b1.end(), '\n') == 1);

    const auto bad = sb.run("--out-dir \"" + (sb / "f").string() + "\" verify-lemmas --instances 5 --rhs-scale 0");
    CHECK(bad.code == 1);
    CHECK(bad.err.find("bellman") != std::string::npos);
    CHECK(sb.run("verify-lemmas --instances 0").code == 1);
}

TEST_CASE("output root comes from the environment") {
    Sandbox sb;
    const std::string cmd = "TSC_OUT_ROOT=\"" + (sb / "root").string() + "\" \"" + TSC_CLI_PATH +
                            "\" verify-lemmas --instances 1 --gammas 0.5 >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(fs::exists(sb / "root" / "verify-lemmas" / "manifest.json"));
}
