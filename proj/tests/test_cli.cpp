#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "snmix/cli.hpp"

using namespace snmix;
namespace fs = std::filesystem;

namespace {

struct Run {
    int rc;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int rc = run_cli(args, out, err);
    return {rc, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "snmix_cli_tests";
    fs::create_directories(dir);
    return dir / name;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

std::string read(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("model document round trip is bit exact") {
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        ModelDocument d;
        const std::size_t p = 1 + rep % 4;
        double total = 0.0;
        for (std::size_t k = 0; k < p; ++k) {
            d.psi.weights.push_back(std::exp(u(g)));
            total += d.psi.weights.back();
            d.psi.components.push_back({u(g) * 1e3, std::exp(20.0 * u(g)), u(g) * 1e-7});
        }
        for (double& w : d.psi.weights) w /= total;
        d.objective = u(g) * 1e5;
        d.loglik = std::nextafter(d.objective, 0.0);
        d.seed = g();
        d.c_b = 0.1 + u(g);
        if (rep % 3 == 0) d.me = MeInfo{1, 0.25, 3.5, 3.84, 0.05, {40.0}};
        const auto text = model_to_json(d);
        const auto back = model_from_json(text);
        REQUIRE(back.psi.order() == p);
        for (std::size_t k = 0; k < p; ++k) {
            CHECK(same_bits(back.psi.weights[k], d.psi.weights[k]));
            CHECK(same_bits(back.psi.components[k].mu, d.psi.components[k].mu));
            CHECK(same_bits(back.psi.components[k].sigma2, d.psi.components[k].sigma2));
            CHECK(same_bits(back.psi.components[k].lambda, d.psi.components[k].lambda));
        }
        CHECK(same_bits(back.objective, d.objective));
        CHECK(same_bits(back.loglik, d.loglik));
        CHECK(back.seed == d.seed);
        CHECK(back.me.has_value() == d.me.has_value());
        CHECK(model_to_json(back) == text);
    }
    CHECK_THROWS_AS(model_from_json("{\"weights\": [1], \"mu\": [0, 1], \"sigma2\": [1], \"lambda\": [0]}"), InputError);
    CHECK_THROWS_AS(model_from_json("not json"), InputError);
    CHECK_THROWS_AS(model_from_json(R"({"schema_version": 9, "weights": [1], "mu": [0], "sigma2": [1], "lambda": [0]})"),
                    InputError);
}

TEST_CASE("CSV column reading") {
    {
        std::istringstream in("1.5\n-2\n\n3e-1\r\n");
        CHECK(read_csv_column(in) == std::vector<double>{1.5, -2.0, 0.3});
    }
    {
        std::istringstream in("id,\"value\",note\n1,2.5,a\n2,+3,b\n");
        CHECK(read_csv_column(in) == std::vector<double>{1.0, 2.0});
    }
    {
        std::istringstream in("id,value,note\n1,2.5,a\n2,3,b\n");
        CHECK(read_csv_column(in, "value") == std::vector<double>{2.5, 3.0});
    }
    {
        std::istringstream in("note,value\nx,2.5\ny,3\n");
        CHECK(read_csv_column(in) == std::vector<double>{2.5, 3.0});
    }
    {
        std::istringstream in("a,b\n1,2\n3,4\n");
        CHECK(read_csv_column(in, "2") == std::vector<double>{2.0, 4.0});
    }
    auto message = [](const std::string& text, const std::string& col = "") {
        std::istringstream in(text);
        try {
            read_csv_column(in, col);
        } catch (const InputError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(message("x\n1\n2\nfoo\n4\n").find("line 4") != std::string::npos);
    CHECK(message("1\n\n2\nnan\n").find("line 4") != std::string::npos);
    CHECK(message("").find("empty") != std::string::npos);
    CHECK(message("header\n").find("no data") != std::string::npos);
    CHECK(message("a,b\n1,2\n", "c").find("no column") != std::string::npos);
    CHECK(message("a,b\n1,2\n3\n", "2").find("line 3") != std::string::npos);
}

TEST_CASE("fit command") {
    const auto path = fixtures::data_path("faithful_eruptions.csv");
    const auto r = cli({"fit", "--input", path, "--components", "2", "--estimator", "pmle", "--starts", "20", "--seed",
                        "7"});
    REQUIRE(r.rc == 0);
    const auto doc = model_from_json(r.out);
    CHECK(doc.psi.order() == 2);
    CHECK(doc.objective == doctest::Approx(-257.9).epsilon(0.5 / 257.9));
    CHECK(doc.estimator == "pmle");
    CHECK(doc.starts == 20);
    CHECK(doc.seed == 7);

    const auto again = cli({"fit", "--input", path, "-p", "2", "--seed", "7"});
    CHECK(again.out == r.out);

    const auto empty = scratch("empty.csv");
    write(empty, "");
    CHECK(cli({"fit", "--input", empty.string(), "-p", "2"}).rc == kExitIo);
    CHECK(cli({"fit", "--input", (scratch("absent") / "x.csv").string(), "-p", "2"}).rc == kExitIo);
    const auto bad = scratch("bad.csv");
    write(bad, "x\n1\n2\nthree\n");
    const auto b = cli({"fit", "--input", bad.string(), "-p", "1"});
    CHECK(b.rc == kExitIo);
    CHECK(b.err.find("line 4") != std::string::npos);

    CHECK(cli({"fit", "--input", path}).rc == kExitUsage);
    CHECK(cli({"fit", "--input", path, "-p", "2", "--estimator", "em"}).rc == kExitUsage);
    CHECK(cli({"fit", "--input", path, "-p", "2", "--starts", "0"}).rc == kExitUsage);
    CHECK(cli({"fit", "--input", path, "-p", "2", "--tol", "abc"}).rc == kExitUsage);
    CHECK(cli({}).rc == kExitUsage);
    CHECK(cli({"bogus"}).rc == kExitUsage);
    CHECK(cli({"--help"}).rc == kExitOk);

    const auto out = scratch("faithful.json");
    CHECK(cli({"fit", "--input", path, "-p", "2", "--starts", "2", "--output", out.string()}).rc == 0);
    CHECK(model_from_json(read(out)).psi.order() == 2);
}

TEST_CASE("fit reports degenerate MLE with exit 3") {
    const auto r = cli({"fit", "--input", fixtures::data_path("spike.csv"), "-p", "2", "--estimator", "mle", "--starts",
                        "3"});
    CHECK(r.rc == kExitDegenerate);
    const auto doc = model_from_json(r.out);
    CHECK((doc.sigma_degenerate || doc.lambda_divergent));
    const auto pen = cli({"fit", "--input", fixtures::data_path("spike.csv"), "-p", "2", "--starts", "3"});
    CHECK(pen.rc == kExitOk);
}

TEST_CASE("sample command") {
    const auto a = cli({"sample", "--preset", "model1", "--n", "1000", "--seed", "5"});
    const auto b = cli({"sample", "--preset", "model1", "--n", "1000", "--seed", "5"});
    REQUIRE(a.rc == 0);
    CHECK(a.out == b.out);
    CHECK(a.out != cli({"sample", "--preset", "model1", "--n", "1000", "--seed", "6"}).out);
    std::istringstream in(a.out);
    CHECK(read_csv_column(in).size() == 1000);

    CHECK(cli({"sample", "--preset", "model1", "--n", "0"}).rc == kExitUsage);
    CHECK(cli({"sample", "--n", "10"}).rc == kExitUsage);
    CHECK(cli({"sample", "--preset", "model9", "--n", "10"}).rc == kExitUsage);
    const auto junk = scratch("junk.json");
    write(junk, "{\"weights\": [1]}");
    CHECK(cli({"sample", "--model", junk.string(), "--n", "10"}).rc == kExitIo);

    const auto model = scratch("model.json");
    write(model, R"({"weights": [1], "mu": [3], "sigma2": [4], "lambda": [0]})");
    const auto m = cli({"sample", "--model", model.string(), "--n", "20000", "--seed", "2"});
    REQUIRE(m.rc == 0);
    std::istringstream min(m.out);
    const auto x = read_csv_column(min);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= x.size();
    CHECK(std::abs(mean - 3.0) < 3.0 * 2.0 / std::sqrt(20000.0) * 1.5);
}

TEST_CASE("sample mean at one million draws") {
    const auto r = cli({"sample", "--preset", "model1", "--n", "1000000", "--seed", "11"});
    REQUIRE(r.rc == 0);
    std::istringstream in(r.out);
    const auto x = read_csv_column(in);
    REQUIRE(x.size() == 1000000);
    // SN moments: E = mu + sigma d sqrt(2/pi), Var = sigma2 (1 - 2 d^2 / pi)
    const double c = std::sqrt(2.0 / std::numbers::pi);
    auto d = [](double l) { return l / std::sqrt(1.0 + l * l); };
    const double m1 = -2.0 + 1.0 * d(2.0) * c, m2 = 2.0 + std::sqrt(2.0) * d(1.0) * c;
    const double v1 = 1.0 * (1.0 - c * c * d(2.0) * d(2.0)), v2 = 2.0 * (1.0 - c * c * d(1.0) * d(1.0));
    const double mean = 0.5 * (m1 + m2);
    const double var = 0.5 * (v1 + m1 * m1) + 0.5 * (v2 + m2 * m2) - mean * mean;
    double s = 0.0;
    for (double v : x) s += v;
    CHECK(std::abs(s / x.size() - mean) < 3.0 * std::sqrt(var / x.size()));
}

TEST_CASE("study command") {
    const auto spec = scratch("spec.json");
    write(spec, R"({"name": "tiny", "truth": {"weights": [0.5, 0.5], "mu": [-2, 2], "sigma2": [1, 2], "lambda": [2, 1]},
        "sample_sizes": [50], "replications": 3, "master_seed": 8, "estimators": ["MLE", "PMLE"]})");
    const auto d1 = scratch("study1"), d2 = scratch("study2");
    fs::remove_all(d1);
    fs::remove_all(d2);
    const auto a = cli({"study", "--spec", spec.string(), "--out", d1.string(), "--threads", "1"});
    const auto b = cli({"study", "--spec", spec.string(), "--out", d2.string(), "--threads", "3"});
    REQUIRE(a.rc == 0);
    REQUIRE(b.rc == 0);
    CHECK(read(d1 / "tiny.csv") == read(d2 / "tiny.csv"));
    CHECK(!read(d1 / "tiny.json").empty());
    const auto csv = read(d1 / "tiny.csv");
    CHECK(csv.find("\nMLE,50,2,true-value,mu_1,") != std::string::npos);
    CHECK(csv.find("\nPMLE,50,2,true-value,mu_1,") != std::string::npos);

    const auto blocker = scratch("plain_file");
    write(blocker, "x");
    CHECK(cli({"study", "--preset", "model1", "--out", (blocker / "sub").string(), "--reps", "1"}).rc == kExitIo);
    CHECK(cli({"study", "--out", d1.string()}).rc == kExitUsage);
    CHECK(cli({"study", "--preset", "model1", "--spec", spec.string(), "--out", d1.string()}).rc == kExitUsage);
    CHECK(cli({"study", "--spec", (scratch("absent") / "s.json").string(), "--out", d1.string()}).rc == kExitIo);
    write(scratch("badspec.json"), R"({"truth": {"weights": [1], "mu": [0], "sigma2": [1], "lambda": [0]}})");
    CHECK(cli({"study", "--spec", scratch("badspec.json").string(), "--out", d1.string()}).rc == kExitUsage);
}

TEST_CASE("study presets through the command line") {
    const auto dir = scratch("presets");
    fs::remove_all(dir);
    REQUIRE(cli({"study", "--preset", "model1", "--reps", "2", "--out", dir.string()}).rc == 0);
    const auto m1 = read(dir / "model1.csv");
    for (const char* key : {"\nMLE,100,", "\nPMLE,100,", "\nMLE,200,", "\nPMLE,200,"})
        CHECK(m1.find(key) != std::string::npos);

    REQUIRE(cli({"study", "--preset", "order-study", "--reps", "1", "--out", dir.string()}).rc == 0);
    std::istringstream in(read(dir / "order-study.csv"));
    std::string line;
    std::getline(in, line);
    std::set<std::string> orders;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        REQUIRE(f.size() >= 15);
        CHECK(!f[14].empty());
        orders.insert(f[2]);
    }
    CHECK(orders == std::set<std::string>{"2", "3", "4", "5"});
}

TEST_CASE("me command") {
    const auto path = fixtures::data_path("faithful_eruptions.csv");
    const auto me = cli({"me", "--input", path, "-p", "2", "--starts", "5", "--seed", "3"});
    const auto mle = cli({"fit", "--input", path, "-p", "2", "--starts", "5", "--seed", "3", "--estimator", "mle"});
    REQUIRE(me.rc == 0);
    REQUIRE(mle.rc == 0);
    const auto a = model_from_json(me.out), b = model_from_json(mle.out);
    REQUIRE(a.me.has_value());
    CHECK(a.me->nu == 0);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(a.psi.components[k].lambda == b.psi.components[k].lambda);
        CHECK(a.psi.components[k].mu == b.psi.components[k].mu);
        CHECK(a.psi.weights[k] == b.psi.weights[k]);
    }

    const auto spike = cli({"me", "--input", fixtures::data_path("spike.csv"), "-p", "2", "--starts", "3"});
    CHECK(spike.rc == kExitMeValidity);
    CHECK(spike.err.find("variance") != std::string::npos);
    CHECK(cli({"me", "--input", path, "-p", "2", "--level", "1.5"}).rc == kExitUsage);
}
