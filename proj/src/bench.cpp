#include "snmix/bench.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "snmix/sampler.hpp"

namespace snmix {

namespace {

using json = nlohmann::json;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Child seed streams: one per sample size, one per replication under it.
std::uint64_t data_seed(std::uint64_t master, std::size_t n, int rep) {
    return derive_seed(derive_seed(master, n), static_cast<std::uint64_t>(rep));
}

struct Estimate {
    bool ok = false;
    bool converged = false;
    SnMixture psi;
};

struct CellKey {
    EstimatorKind est;
    std::size_t n, p;
    StudyInit init;
};

json mixture_json(const SnMixture& psi) {
    json j;
    j["weights"] = psi.weights;
    std::vector<double> mu, s2, lam;
    for (const auto& c : psi.components) {
        mu.push_back(c.mu);
        s2.push_back(c.sigma2);
        lam.push_back(c.lambda);
    }
    j["mu"] = mu;
    j["sigma2"] = s2;
    j["lambda"] = lam;
    return j;
}

SnMixture mixture_from_json(const json& j) {
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto mu = j.at("mu").get<std::vector<double>>();
    const auto s2 = j.at("sigma2").get<std::vector<double>>();
    const auto lam = j.at("lambda").get<std::vector<double>>();
    if (mu.size() != w.size() || s2.size() != w.size() || lam.size() != w.size())
        throw DomainError("mixture arrays differ in length");
    SnMixture psi;
    psi.weights = w;
    for (std::size_t k = 0; k < w.size(); ++k) psi.components.push_back({mu[k], s2[k], lam[k]});
    psi.validate();
    return psi;
}

}  // namespace

std::string to_string(EstimatorKind e) {
    switch (e) {
        case EstimatorKind::MLE: return "MLE";
        case EstimatorKind::PMLE: return "PMLE";
        case EstimatorKind::ME: return "ME";
        case EstimatorKind::MPLE: return "MPLE";
    }
    return "?";
}

std::string to_string(StudyInit i) {
    switch (i) {
        case StudyInit::TrueValue: return "true-value";
        case StudyInit::KMeans: return "kmeans";
        case StudyInit::Perturbed: return "perturbed";
    }
    return "?";
}

EstimatorKind parse_estimator(const std::string& s) {
    std::string u = s;
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
    if (u == "MLE") return EstimatorKind::MLE;
    if (u == "PMLE") return EstimatorKind::PMLE;
    if (u == "ME") return EstimatorKind::ME;
    if (u == "MPLE") return EstimatorKind::MPLE;
    throw DomainError("unknown estimator: " + s);
}

StudyInit parse_study_init(const std::string& s) {
    if (s == "true-value") return StudyInit::TrueValue;
    if (s == "kmeans") return StudyInit::KMeans;
    if (s == "perturbed") return StudyInit::Perturbed;
    throw DomainError("unknown init scheme: " + s);
}

void StudySpec::validate() const {
    truth.validate();
    if (replications < 1) throw DomainError("replications must be at least 1");
    if (sample_sizes.empty()) throw DomainError("no sample sizes");
    for (auto n : sample_sizes)
        if (n < 10) throw DomainError("sample sizes must be at least 10");
    for (auto p : fit_orders)
        if (p < truth.order()) throw DomainError("fitted order below the true order");
    if (estimators.empty()) throw DomainError("no estimators");
    if (init_schemes.empty()) throw DomainError("no init schemes");
    if (kmeans_starts < 1 || perturbed_starts < 1) throw DomainError("starts must be at least 1");
    if (max_iter < 1 || !(rel_tol > 0.0)) throw DomainError("bad stopping rule");
    if (!(me_level > 0.0 && me_level < 1.0)) throw DomainError("ME level must lie in (0, 1)");
    if (threads < 1) throw DomainError("threads must be at least 1");
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    const int workers = std::max(1, std::min(threads, count));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

StudyReport run_study(const StudySpec& spec) {
    spec.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const SnMixture truth = label_sort(spec.truth);
    const std::size_t p0 = truth.order();
    const std::vector<std::size_t> orders = spec.fit_orders.empty() ? std::vector<std::size_t>{p0} : spec.fit_orders;

    std::vector<CellKey> keys;
    for (auto est : spec.estimators)
        for (auto n : spec.sample_sizes)
            for (auto p : orders)
                for (auto init : spec.init_schemes) keys.push_back({est, n, p, init});

    const auto needs = [&](EstimatorKind e) {
        return std::find(spec.estimators.begin(), spec.estimators.end(), e) != spec.estimators.end();
    };
    const bool need_mle = needs(EstimatorKind::MLE) || needs(EstimatorKind::ME);

    // results[rep][cell]
    const int reps = spec.replications;
    std::vector<std::vector<Estimate>> results(reps, std::vector<Estimate>(keys.size()));

    parallel_for(reps, spec.threads, [&](int r) {
        auto& row = results[r];
        for (auto n : spec.sample_sizes) {
            const std::uint64_t seed = data_seed(spec.master_seed, n, r);
            RngHandle rng(seed);
            const auto x = sample_mixture(truth, n, rng);
            for (auto p : orders)
                for (auto init : spec.init_schemes) {
                    FitConfig cfg;
                    cfg.algorithm = spec.algorithm;
                    cfg.max_iter = spec.max_iter;
                    cfg.rel_tol = spec.rel_tol;
                    int starts = 1;
                    // True-value starts only make sense at the true order.
                    const StudyInit eff = (init == StudyInit::TrueValue && p != p0) ? StudyInit::Perturbed : init;
                    if (eff == StudyInit::TrueValue) {
                        cfg.init = TrueValueInit{truth};
                    } else if (eff == StudyInit::KMeans) {
                        cfg.init = KMeansMomentsInit{};
                        starts = spec.kmeans_starts;
                    } else {
                        cfg.init = PerturbedInit{truth, 0};
                        starts = spec.perturbed_starts;
                    }
                    const std::uint64_t start_seed = derive_seed(seed, 1000 * p + static_cast<std::size_t>(eff));

                    auto run = [&](const PenaltySpec& pen) {
                        FitConfig c = cfg;
                        c.penalty = pen;
                        return fit_best_of(x, p, c, starts, start_seed);
                    };
                    auto store = [&](EstimatorKind e, const Estimate& v) {
                        for (std::size_t k = 0; k < keys.size(); ++k)
                            if (keys[k].est == e && keys[k].n == n && keys[k].p == p && keys[k].init == init)
                                row[k] = v;
                    };
                    auto attempt = [&](auto&& body) {
                        Estimate e;
                        try {
                            body(e);
                        } catch (const std::exception&) {
                            e = Estimate{};
                        }
                        return e;
                    };

                    std::optional<FitResult> mle;
                    if (need_mle) {
                        const auto e = attempt([&](Estimate& out) {
                            mle = run(PenaltySpec::none());
                            out = {true, mle->converged, mle->psi};
                        });
                        if (needs(EstimatorKind::MLE)) store(EstimatorKind::MLE, e);
                    }
                    if (needs(EstimatorKind::ME))
                        store(EstimatorKind::ME, attempt([&](Estimate& out) {
                                  if (!mle) throw DomainError("no MLE");
                                  const auto me = profile_lrt_me(x, *mle, spec.me_level);
                                  out = {true, mle->converged, label_sort(me.psi)};
                              }));
                    if (needs(EstimatorKind::PMLE))
                        store(EstimatorKind::PMLE, attempt([&](Estimate& out) {
                                  const auto f = run(PenaltySpec::proposed(x));
                                  out = {true, f.converged, f.psi};
                              }));
                    if (needs(EstimatorKind::MPLE))
                        store(EstimatorKind::MPLE, attempt([&](Estimate& out) {
                                  const auto f = run(PenaltySpec::mple(x));
                                  out = {true, f.converged, f.psi};
                              }));
                }
        }
    });

    StudyReport report;
    report.name = spec.name;
    report.master_seed = spec.master_seed;
    report.replications = reps;
    for (std::size_t k = 0; k < keys.size(); ++k) {
        CellReport cell;
        cell.estimator = keys[k].est;
        cell.n = keys[k].n;
        cell.p = keys[k].p;
        cell.init = keys[k].init;
        cell.replications = reps;
        cell.min_sigma2 = std::numeric_limits<double>::infinity();
        std::vector<SnMixture> good;
        double dsum = 0.0;
        for (int r = 0; r < reps; ++r) {
            const Estimate& e = results[r][k];
            if (!e.ok) {
                ++cell.failures;
                continue;
            }
            cell.nonconverged += e.converged ? 0 : 1;
            const auto flags = degeneracy_flags(e.psi);
            cell.sigma_degenerate += flags.sigma_degenerate;
            cell.lambda_divergent += flags.lambda_divergent;
            cell.min_sigma2 = std::min(cell.min_sigma2, flags.min_sigma2);
            cell.max_abs_lambda = std::max(cell.max_abs_lambda, flags.max_abs_lambda);
            const auto d = distance_Dstar(e.psi, truth);
            dsum += d.value;
            cell.dstar_clamped += d.clamped;
            good.push_back(e.psi);
        }
        if (good.empty()) {
            cell.min_sigma2 = kNan;
            cell.max_abs_lambda = kNan;
            cell.mean_dstar = kNan;
        } else {
            cell.mean_dstar = dsum / static_cast<double>(good.size());
            if (cell.p == p0) cell.errors = bias_rmse(good, truth, spec.log_sigma);
        }
        report.cells.push_back(std::move(cell));
    }
    report.elapsed_seconds = seconds_since(t0);
    return report;
}

std::string report_csv(const StudyReport& report) {
    std::ostringstream out;
    out << "estimator,n,p,init,param,bias,rmse,replications,failures,nonconverged,sigma_degenerate,"
           "lambda_divergent,min_sigma2,max_abs_lambda,mean_dstar,dstar_clamped\n";
    for (const auto& c : report.cells) {
        const std::string tail = "," + std::to_string(c.replications) + "," + std::to_string(c.failures) + "," +
                                 std::to_string(c.nonconverged) + "," + std::to_string(c.sigma_degenerate) + "," +
                                 std::to_string(c.lambda_divergent) + "," + num(c.min_sigma2) + "," +
                                 num(c.max_abs_lambda) + "," + num(c.mean_dstar) + "," +
                                 std::to_string(c.dstar_clamped) + "\n";
        const std::string head =
            to_string(c.estimator) + "," + std::to_string(c.n) + "," + std::to_string(c.p) + "," + to_string(c.init) + ",";
        if (c.errors.empty()) {
            out << head << ",," << tail;
        } else {
            for (const auto& e : c.errors) out << head << e.name << "," << num(e.bias) << "," << num(e.rmse) << tail;
        }
    }
    return out.str();
}

std::string report_json(const StudyReport& report) {
    auto nullable = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json j;
    j["name"] = report.name;
    j["master_seed"] = report.master_seed;
    j["replications"] = report.replications;
    j["elapsed_seconds"] = report.elapsed_seconds;
    j["cells"] = json::array();
    for (const auto& c : report.cells) {
        json cj{{"estimator", to_string(c.estimator)},
                {"n", c.n},
                {"p", c.p},
                {"init", to_string(c.init)},
                {"replications", c.replications},
                {"failures", c.failures},
                {"nonconverged", c.nonconverged},
                {"sigma_degenerate", c.sigma_degenerate},
                {"lambda_divergent", c.lambda_divergent},
                {"min_sigma2", nullable(c.min_sigma2)},
                {"max_abs_lambda", nullable(c.max_abs_lambda)},
                {"mean_dstar", nullable(c.mean_dstar)},
                {"dstar_clamped", c.dstar_clamped}};
        cj["errors"] = json::array();
        for (const auto& e : c.errors) cj["errors"].push_back({{"param", e.name}, {"bias", e.bias}, {"rmse", e.rmse}});
        j["cells"].push_back(std::move(cj));
    }
    return j.dump(2) + "\n";
}

StudySpec parse_study_spec(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw DomainError(std::string("study spec is not valid JSON: ") + e.what());
    }
    StudySpec s;
    try {
        s.name = j.value("name", s.name);
        s.truth = mixture_from_json(j.at("truth"));
        s.sample_sizes = j.at("sample_sizes").get<std::vector<std::size_t>>();
        s.fit_orders = j.value("fit_orders", s.fit_orders);
        s.replications = j.value("replications", s.replications);
        if (j.contains("estimators")) {
            s.estimators.clear();
            for (const auto& e : j["estimators"]) s.estimators.push_back(parse_estimator(e.get<std::string>()));
        }
        if (j.contains("init_schemes")) {
            s.init_schemes.clear();
            for (const auto& e : j["init_schemes"]) s.init_schemes.push_back(parse_study_init(e.get<std::string>()));
        }
        s.master_seed = j.value("master_seed", s.master_seed);
        s.log_sigma = j.value("log_sigma", s.log_sigma);
        const std::string alg = j.value("algorithm", std::string("ecm"));
        if (alg != "ecm" && alg != "ecme") throw DomainError("unknown algorithm: " + alg);
        s.algorithm = alg == "ecme" ? Algorithm::ECME : Algorithm::ECM;
        s.kmeans_starts = j.value("kmeans_starts", s.kmeans_starts);
        s.perturbed_starts = j.value("perturbed_starts", s.perturbed_starts);
        s.max_iter = j.value("max_iter", s.max_iter);
        s.rel_tol = j.value("rel_tol", s.rel_tol);
        s.me_level = j.value("me_level", s.me_level);
    } catch (const json::exception& e) {
        throw DomainError(std::string("bad study spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::string study_spec_json(const StudySpec& s) {
    json j;
    j["name"] = s.name;
    j["truth"] = mixture_json(s.truth);
    j["sample_sizes"] = s.sample_sizes;
    j["fit_orders"] = s.fit_orders;
    j["replications"] = s.replications;
    j["estimators"] = json::array();
    for (auto e : s.estimators) j["estimators"].push_back(to_string(e));
    j["init_schemes"] = json::array();
    for (auto i : s.init_schemes) j["init_schemes"].push_back(to_string(i));
    j["master_seed"] = s.master_seed;
    j["log_sigma"] = s.log_sigma;
    j["algorithm"] = s.algorithm == Algorithm::ECME ? "ecme" : "ecm";
    j["kmeans_starts"] = s.kmeans_starts;
    j["perturbed_starts"] = s.perturbed_starts;
    j["max_iter"] = s.max_iter;
    j["rel_tol"] = s.rel_tol;
    j["me_level"] = s.me_level;
    return j.dump(2) + "\n";
}

PenaltyComparison run_penalty_comparison(const std::vector<std::size_t>& n_list,
                                         const std::vector<double>& lambda_list, int replications,
                                         std::uint64_t master_seed, int threads) {
    if (n_list.empty() || lambda_list.empty()) throw DomainError("empty n or lambda list");
    if (replications < 1) throw DomainError("replications must be at least 1");
    for (auto n : n_list)
        if (n < 10) throw DomainError("sample sizes must be at least 10");
    const auto t0 = std::chrono::steady_clock::now();

    struct Cell {
        std::size_t n;
        double lambda;
    };
    std::vector<Cell> cells;
    for (auto n : n_list)
        for (double l : lambda_list) cells.push_back({n, l});

    // est[rep][cell][0 = PMLE, 1 = MPLE], NaN on failure
    std::vector<std::vector<std::array<double, 2>>> est(replications, std::vector<std::array<double, 2>>(cells.size()));
    parallel_for(replications, threads, [&](int r) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const SnMixture truth{{1.0}, {{0.0, 1.0, cells[c].lambda}}};
            const std::uint64_t seed =
                derive_seed(data_seed(master_seed, cells[c].n, r), static_cast<std::uint64_t>(c));
            RngHandle rng(seed);
            const auto x = sample_mixture(truth, cells[c].n, rng);
            const double b_n = tuning(static_cast<long long>(x.size())).b_n;
            const PenaltySpec pens[2] = {{NoSigmaPenalty{}, ProposedLambdaPenalty{b_n}}, PenaltySpec::azzalini()};
            for (int k = 0; k < 2; ++k) {
                FitConfig cfg;
                cfg.algorithm = Algorithm::ECME;
                cfg.penalty = pens[k];
                cfg.init = TrueValueInit{truth};
                try {
                    est[r][c][k] = fit(x, 1, cfg).psi.components[0].lambda;
                } catch (const std::exception&) {
                    est[r][c][k] = kNan;
                }
            }
        }
    });

    PenaltyComparison out;
    out.master_seed = master_seed;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        PenaltyRow row;
        row.n = cells[c].n;
        row.lambda = cells[c].lambda;
        row.replications = replications;
        double sum[2] = {0.0, 0.0}, sq[2] = {0.0, 0.0};
        int ok[2] = {0, 0};
        for (int r = 0; r < replications; ++r)
            for (int k = 0; k < 2; ++k) {
                const double v = est[r][c][k];
                if (!std::isfinite(v)) continue;
                sum[k] += v - row.lambda;
                sq[k] += (v - row.lambda) * (v - row.lambda);
                ++ok[k];
            }
        row.pmle_failures = replications - ok[0];
        row.mple_failures = replications - ok[1];
        row.pmle_bias = ok[0] ? sum[0] / ok[0] : kNan;
        row.pmle_rmse = ok[0] ? std::sqrt(sq[0] / ok[0]) : kNan;
        row.mple_bias = ok[1] ? sum[1] / ok[1] : kNan;
        row.mple_rmse = ok[1] ? std::sqrt(sq[1] / ok[1]) : kNan;
        out.rows.push_back(row);
    }
    out.elapsed_seconds = seconds_since(t0);
    return out;
}

std::string penalty_csv(const PenaltyComparison& cmp) {
    std::ostringstream out;
    out << "n,lambda,replications,pmle_bias,pmle_rmse,pmle_log_abs_bias,pmle_log_rmse,mple_bias,mple_rmse,"
           "mple_log_abs_bias,mple_log_rmse,pmle_failures,mple_failures\n";
    for (const auto& r : cmp.rows)
        out << r.n << "," << num(r.lambda) << "," << r.replications << "," << num(r.pmle_bias) << ","
            << num(r.pmle_rmse) << "," << num(std::log(std::abs(r.pmle_bias))) << "," << num(std::log(r.pmle_rmse))
            << "," << num(r.mple_bias) << "," << num(r.mple_rmse) << "," << num(std::log(std::abs(r.mple_bias)))
            << "," << num(std::log(r.mple_rmse)) << "," << r.pmle_failures << "," << r.mple_failures << "\n";
    return out.str();
}

std::string penalty_json(const PenaltyComparison& cmp) {
    auto nullable = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json j;
    j["name"] = "penalty-comparison";
    j["master_seed"] = cmp.master_seed;
    j["elapsed_seconds"] = cmp.elapsed_seconds;
    j["rows"] = json::array();
    for (const auto& r : cmp.rows)
        j["rows"].push_back({{"n", r.n},
                             {"lambda", r.lambda},
                             {"replications", r.replications},
                             {"pmle_bias", nullable(r.pmle_bias)},
                             {"pmle_rmse", nullable(r.pmle_rmse)},
                             {"mple_bias", nullable(r.mple_bias)},
                             {"mple_rmse", nullable(r.mple_rmse)},
                             {"pmle_failures", r.pmle_failures},
                             {"mple_failures", r.mple_failures}});
    return j.dump(2) + "\n";
}

SnMixture model_one() { return {{0.5, 0.5}, {{-2.0, 1.0, 2.0}, {2.0, 2.0, 1.0}}}; }

SnMixture model_two() { return {{0.5, 0.5}, {{-1.0, 2.0, 1.0}, {1.5, 2.0, -1.0}}}; }

StudySpec study_preset(const std::string& name, int replications, std::uint64_t seed) {
    StudySpec s;
    s.name = name;
    s.replications = replications;
    s.master_seed = seed;
    if (name == "model1") {
        s.truth = model_one();
        s.sample_sizes = {100, 200};
        s.estimators = {EstimatorKind::MLE, EstimatorKind::PMLE};
        s.init_schemes = {StudyInit::TrueValue, StudyInit::KMeans};
    } else if (name == "model2") {
        s.truth = model_two();
        s.sample_sizes = {100, 200};
        s.estimators = {EstimatorKind::MLE, EstimatorKind::PMLE};
        s.init_schemes = {StudyInit::TrueValue, StudyInit::KMeans};
        s.log_sigma = true;
    } else if (name == "order-study") {
        s.truth = model_one();
        s.sample_sizes = {100, 200};
        s.fit_orders = {2, 3, 4, 5};
        s.estimators = {EstimatorKind::MLE, EstimatorKind::PMLE};
        s.init_schemes = {StudyInit::Perturbed};
    } else {
        throw DomainError("unknown study preset: " + name);
    }
    return s;
}

}  // namespace snmix
