#include "snmix/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "snmix/bench.hpp"
#include "snmix/estimator.hpp"
#include "snmix/metrics.hpp"
#include "snmix/sampler.hpp"

namespace snmix {

using json = nlohmann::json;

namespace {

json doubles(const std::vector<double>& v) { return json(v); }

std::vector<double> get_doubles(const json& j, const char* key) { return j.at(key).get<std::vector<double>>(); }

std::string trim(std::string s) {
    auto sp = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), sp));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), sp).base(), s.end());
    return s;
}

// RFC-4180 fields on one physical line; embedded newlines are not supported.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* first = s.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool write_file(const std::filesystem::path& path, const std::string& text, std::ostream& err) {
    std::ofstream f(path, std::ios::binary);
    if (f) f << text;
    if (!f) {
        err << "error: cannot write " << path.string() << "\n";
        return false;
    }
    return true;
}

// Writes to `path`, or to `out` when path is empty or "-".
int emit(const std::string& path, const std::string& text, std::ostream& out, std::ostream& err) {
    if (path.empty() || path == "-") {
        out << text;
        return kExitOk;
    }
    return write_file(path, text, err) ? kExitOk : kExitIo;
}

struct FitFlags {
    std::string input;
    std::string column;
    std::size_t components = 2;
    std::string estimator = "pmle";
    std::string algorithm = "ecm";
    int starts = 20;
    std::uint64_t seed = 1;
    double tol = 1e-6;
    double c_a = kDefaultCa;
    double c_b = kDefaultCb;
    int max_iter = 2000;
    std::string output;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f, bool with_estimator) {
    cmd->add_option("--input", f.input, "CSV file with one numeric column")->required();
    cmd->add_option("--column", f.column, "column name or 1-based index (default: first numeric)");
    cmd->add_option("--components,-p", f.components, "number of mixture components")->required()->check(
        CLI::PositiveNumber);
    if (with_estimator)
        cmd->add_option("--estimator", f.estimator, "mle, pmle or mple")
            ->check(CLI::IsMember({"mle", "pmle", "mple"}))
            ->capture_default_str();
    cmd->add_option("--algorithm", f.algorithm, "ecm or ecme")->check(CLI::IsMember({"ecm", "ecme"}))->capture_default_str();
    cmd->add_option("--starts", f.starts, "K-means seeded starts")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--seed", f.seed, "master seed")->capture_default_str();
    cmd->add_option("--tol", f.tol, "relative objective tolerance")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--c-a", f.c_a, "scale penalty constant")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--c-b", f.c_b, "shape penalty constant")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--max-iter", f.max_iter, "iteration cap")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--output,-o", f.output, "output file (default: standard output)");
}

PenaltySpec penalty_for(const std::string& estimator, std::span<const double> x, const FitFlags& f) {
    if (estimator == "pmle") return PenaltySpec::proposed(x, f.c_a, f.c_b);
    if (estimator == "mple") return PenaltySpec::mple(x, f.c_a);
    return PenaltySpec::none();
}

FitResult run_fit(std::span<const double> x, const FitFlags& f, const std::string& estimator) {
    FitConfig cfg;
    cfg.algorithm = f.algorithm == "ecme" ? Algorithm::ECME : Algorithm::ECM;
    cfg.penalty = penalty_for(estimator, x, f);
    cfg.rel_tol = f.tol;
    cfg.max_iter = f.max_iter;
    cfg.init = KMeansMomentsInit{};
    return fit_best_of(x, f.components, cfg, f.starts, f.seed);
}

ModelDocument document(const FitResult& r, std::span<const double> x, const FitFlags& f, const std::string& estimator) {
    ModelDocument d;
    d.psi = r.psi;
    d.estimator = estimator;
    d.algorithm = f.algorithm;
    d.objective = r.objective();
    d.loglik = loglik(x, r.psi);
    d.iterations = r.iterations;
    d.converged = r.converged;
    const auto flags = degeneracy_flags(r.psi);
    d.sigma_degenerate = flags.sigma_degenerate;
    d.lambda_divergent = flags.lambda_divergent;
    d.c_a = f.c_a;
    d.c_b = f.c_b;
    d.starts = f.starts;
    d.seed = f.seed;
    return d;
}

std::vector<double> load_input(const FitFlags& f) {
    auto x = read_csv_file(f.input, f.column);
    if (x.size() < f.components * 2) throw InputError("too few observations for " + std::to_string(f.components) +
                                                       " components");
    return x;
}

int cmd_fit(const FitFlags& f, std::ostream& out, std::ostream& err) {
    std::vector<double> x;
    try {
        x = load_input(f);
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    }
    const auto r = run_fit(x, f, f.estimator);
    const auto doc = document(r, x, f, f.estimator);
    const int rc = emit(f.output, model_to_json(doc), out, err);
    if (rc != kExitOk) return rc;
    if (doc.sigma_degenerate || doc.lambda_divergent) {
        err << "warning: fitted model is degenerate (sigma2 < 1e-10 or |lambda| > 100)\n";
        return kExitDegenerate;
    }
    return kExitOk;
}

int cmd_me(const FitFlags& f, double level, std::ostream& out, std::ostream& err) {
    std::vector<double> x;
    try {
        x = load_input(f);
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    }
    const auto mle = run_fit(x, f, "mle");
    if (degeneracy_flags(mle.psi).sigma_degenerate) {
        err << "error: the MLE has a degenerate scale (sigma2 < 1e-10); the modified estimator is only valid "
               "for fits with non-degenerate scales\n";
        return kExitMeValidity;
    }
    MeResult me;
    try {
        me = profile_lrt_me(x, mle, level);
    } catch (const ValidityError& e) {
        err << "error: " << e.what() << "\n";
        return kExitMeValidity;
    }
    FitResult shown = mle;
    shown.psi = me.psi;
    auto doc = document(shown, x, f, "me");
    doc.objective = loglik(x, me.psi);
    MeInfo info;
    info.nu = me.nu;
    info.shrink = me.shrink;
    info.statistic = me.statistic;
    info.critical = me.critical;
    info.level = level;
    for (const auto& c : mle.psi.components) info.mle_lambda.push_back(c.lambda);
    doc.me = info;
    return emit(f.output, model_to_json(doc), out, err);
}

int cmd_sample(const std::string& model_path, const std::string& preset, long long n, std::uint64_t seed,
               const std::string& output, std::ostream& out, std::ostream& err) {
    if (n <= 0) {
        err << "error: --n must be positive\n";
        return kExitUsage;
    }
    SnMixture psi;
    if (!preset.empty()) {
        psi = preset == "model1" ? model_one() : model_two();
    } else {
        try {
            psi = model_from_json(slurp(model_path)).psi;
        } catch (const std::exception& e) {
            err << "error: bad model file: " << e.what() << "\n";
            return kExitIo;
        }
    }
    RngHandle rng(seed);
    const auto x = sample_mixture(psi, static_cast<std::size_t>(n), rng);
    std::string text;
    text.reserve(x.size() * 24);
    for (double v : x) {
        text += fmt17(v);
        text += '\n';
    }
    return emit(output, text, out, err);
}

int cmd_study(const std::string& preset, const std::string& spec_path, int reps, std::uint64_t seed,
              const std::string& out_dir, int threads, std::ostream& out, std::ostream& err) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) {
        err << "error: cannot create output directory " << out_dir << "\n";
        return kExitIo;
    }
    std::string csv, js, name;
    if (preset == "penalty-comparison") {
        name = preset;
        const auto cmp = run_penalty_comparison({50, 100, 250, 350, 500, 1000}, {5.0}, reps, seed, threads);
        csv = penalty_csv(cmp);
        js = penalty_json(cmp);
    } else {
        StudySpec spec;
        if (!preset.empty()) {
            spec = study_preset(preset, reps, seed);
        } else {
            try {
                spec = parse_study_spec(slurp(spec_path));
            } catch (const InputError& e) {
                err << "error: " << e.what() << "\n";
                return kExitIo;
            } catch (const DomainError& e) {
                err << "error: " << e.what() << "\n";
                return kExitUsage;
            }
        }
        spec.threads = threads;
        name = spec.name;
        const auto report = run_study(spec);
        csv = report_csv(report);
        js = report_json(report);
    }
    const fs::path base = fs::path(out_dir) / name;
    if (!write_file(base.string() + ".csv", csv, err) || !write_file(base.string() + ".json", js, err)) return kExitIo;
    out << base.string() << ".csv\n" << base.string() << ".json\n";
    return kExitOk;
}

}  // namespace

std::string model_to_json(const ModelDocument& d) {
    std::vector<double> w = d.psi.weights, mu, s2, lam;
    for (const auto& c : d.psi.components) {
        mu.push_back(c.mu);
        s2.push_back(c.sigma2);
        lam.push_back(c.lambda);
    }
    json j;
    j["schema_version"] = d.schema_version;
    j["p"] = d.psi.order();
    j["weights"] = doubles(w);
    j["mu"] = doubles(mu);
    j["sigma2"] = doubles(s2);
    j["lambda"] = doubles(lam);
    json meta;
    meta["estimator"] = d.estimator;
    meta["algorithm"] = d.algorithm;
    meta["objective"] = d.objective;
    meta["loglik"] = d.loglik;
    meta["iterations"] = d.iterations;
    meta["converged"] = d.converged;
    meta["flags"] = {{"sigma_degenerate", d.sigma_degenerate}, {"lambda_divergent", d.lambda_divergent}};
    meta["penalty"] = {{"c_a", d.c_a}, {"c_b", d.c_b}};
    meta["starts"] = d.starts;
    meta["seed"] = d.seed;
    if (d.me) {
        meta["me"] = {{"nu", d.me->nu},
                      {"shrink", d.me->shrink},
                      {"statistic", d.me->statistic},
                      {"critical", d.me->critical},
                      {"level", d.me->level},
                      {"mle_lambda", d.me->mle_lambda}};
    }
    j["metadata"] = meta;
    return j.dump(2) + "\n";
}

ModelDocument model_from_json(const std::string& text) {
    ModelDocument d;
    try {
        const json j = json::parse(text);
        d.schema_version = j.value("schema_version", ModelDocument::kSchemaVersion);
        if (d.schema_version != ModelDocument::kSchemaVersion)
            throw InputError("unsupported schema_version " + std::to_string(d.schema_version));
        const auto w = get_doubles(j, "weights"), mu = get_doubles(j, "mu"), s2 = get_doubles(j, "sigma2"),
                   lam = get_doubles(j, "lambda");
        if (mu.size() != w.size() || s2.size() != w.size() || lam.size() != w.size())
            throw InputError("parameter arrays differ in length");
        if (j.contains("p") && j["p"].get<std::size_t>() != w.size()) throw InputError("p disagrees with arrays");
        d.psi.weights = w;
        for (std::size_t k = 0; k < w.size(); ++k) d.psi.components.push_back({mu[k], s2[k], lam[k]});
        d.psi.validate();
        if (j.contains("metadata")) {
            const auto& m = j["metadata"];
            d.estimator = m.value("estimator", d.estimator);
            d.algorithm = m.value("algorithm", d.algorithm);
            d.objective = m.value("objective", d.objective);
            d.loglik = m.value("loglik", d.loglik);
            d.iterations = m.value("iterations", d.iterations);
            d.converged = m.value("converged", d.converged);
            if (m.contains("flags")) {
                d.sigma_degenerate = m["flags"].value("sigma_degenerate", false);
                d.lambda_divergent = m["flags"].value("lambda_divergent", false);
            }
            if (m.contains("penalty")) {
                d.c_a = m["penalty"].value("c_a", d.c_a);
                d.c_b = m["penalty"].value("c_b", d.c_b);
            }
            d.starts = m.value("starts", d.starts);
            d.seed = m.value("seed", d.seed);
            if (m.contains("me")) {
                const auto& e = m["me"];
                MeInfo info;
                info.nu = e.value("nu", 0);
                info.shrink = e.value("shrink", 1.0);
                info.statistic = e.value("statistic", 0.0);
                info.critical = e.value("critical", 0.0);
                info.level = e.value("level", 0.05);
                info.mle_lambda = e.value("mle_lambda", std::vector<double>{});
                d.me = info;
            }
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("bad model document: ") + e.what());
    } catch (const DomainError& e) {
        throw InputError(std::string("bad model document: ") + e.what());
    }
    return d;
}

std::vector<double> read_csv_column(std::istream& in, const std::string& column) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        rows.emplace_back(no, split_csv(line));
    }
    if (rows.empty()) throw InputError("input is empty");

    // A header is a first row with some non-numeric field.
    const auto& first = rows.front().second;
    const bool header = std::any_of(first.begin(), first.end(), [](const std::string& s) { return !parse_number(s); });
    const std::size_t start = header ? 1 : 0;
    if (start >= rows.size()) throw InputError("input has a header but no data");

    std::size_t col = 0;
    if (column.empty()) {
        const auto& probe = rows[start].second;
        auto it = std::find_if(probe.begin(), probe.end(), [](const std::string& s) { return parse_number(s).has_value(); });
        if (it == probe.end())
            throw InputError("line " + std::to_string(rows[start].first) + ": no numeric column");
        col = static_cast<std::size_t>(it - probe.begin());
    } else if (std::all_of(column.begin(), column.end(), [](unsigned char c) { return std::isdigit(c); })) {
        col = std::stoul(column);
        if (col == 0) throw InputError("column indices start at 1");
        --col;
    } else {
        if (!header) throw InputError("column '" + column + "' requested but the input has no header");
        auto it = std::find(first.begin(), first.end(), column);
        if (it == first.end()) throw InputError("no column named '" + column + "'");
        col = static_cast<std::size_t>(it - first.begin());
    }

    std::vector<double> x;
    x.reserve(rows.size());
    for (std::size_t r = start; r < rows.size(); ++r) {
        const auto& [no, f] = rows[r];
        if (col >= f.size()) throw InputError("line " + std::to_string(no) + ": missing column " + std::to_string(col + 1));
        const auto v = parse_number(f[col]);
        if (!v) throw InputError("line " + std::to_string(no) + ": not a number: '" + f[col] + "'");
        x.push_back(*v);
    }
    return x;
}

std::vector<double> read_csv_file(const std::string& path, const std::string& column) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    return read_csv_column(in, column);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Skew-normal mixture fitting by penalized maximum likelihood"};
    app.name("snmix");
    app.require_subcommand(1);

    FitFlags fit_flags;
    auto* fit_cmd = app.add_subcommand("fit", "fit a mixture to a CSV column");
    add_fit_flags(fit_cmd, fit_flags, true);

    FitFlags me_flags;
    double level = 0.05;
    auto* me_cmd = app.add_subcommand("me", "MLE followed by the modified shape estimator");
    add_fit_flags(me_cmd, me_flags, false);
    me_cmd->add_option("--level", level, "test level")->check(CLI::Range(1e-12, 1.0 - 1e-12))->capture_default_str();

    std::string model_path, preset, sample_out;
    long long n = 0;
    std::uint64_t sample_seed = 1;
    auto* sample_cmd = app.add_subcommand("sample", "draw from a mixture");
    auto* model_opt = sample_cmd->add_option("--model", model_path, "ModelDocument JSON");
    auto* preset_opt =
        sample_cmd->add_option("--preset", preset, "model1 or model2")->check(CLI::IsMember({"model1", "model2"}));
    model_opt->excludes(preset_opt);
    sample_cmd->add_option("--n", n, "number of draws")->required();
    sample_cmd->add_option("--seed", sample_seed, "seed")->capture_default_str();
    sample_cmd->add_option("--output,-o", sample_out, "output file (default: standard output)");

    std::string study_preset_name, spec_path, out_dir;
    int reps = 200, threads = 1;
    std::uint64_t study_seed = 1;
    auto* study_cmd = app.add_subcommand("study", "run a simulation study");
    auto* sp = study_cmd->add_option("--preset", study_preset_name, "named study")
                   ->check(CLI::IsMember({"model1", "model2", "order-study", "penalty-comparison"}));
    auto* sf = study_cmd->add_option("--spec", spec_path, "StudySpec JSON");
    sp->excludes(sf);
    study_cmd->add_option("--reps", reps, "replications")->check(CLI::PositiveNumber)->capture_default_str();
    study_cmd->add_option("--seed", study_seed, "master seed")->capture_default_str();
    study_cmd->add_option("--out", out_dir, "output directory")->required();
    study_cmd->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();

    std::vector<std::string> argv_store{"snmix"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*fit_cmd) return cmd_fit(fit_flags, out, err);
        if (*me_cmd) return cmd_me(me_flags, level, out, err);
        if (*sample_cmd) {
            if (model_path.empty() && preset.empty()) {
                err << "error: sample needs --model or --preset\n";
                return kExitUsage;
            }
            return cmd_sample(model_path, preset, n, sample_seed, sample_out, out, err);
        }
        if (*study_cmd) {
            if (study_preset_name.empty() && spec_path.empty()) {
                err << "error: study needs --preset or --spec\n";
                return kExitUsage;
            }
            return cmd_study(study_preset_name, spec_path, reps, study_seed, out_dir, threads, out, err);
        }
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace snmix
