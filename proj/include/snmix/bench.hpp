#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "snmix/estimator.hpp"
#include "snmix/metrics.hpp"
#include "snmix/sn_core.hpp"

namespace snmix {

enum class EstimatorKind { MLE, PMLE, ME, MPLE };
enum class StudyInit { TrueValue, KMeans, Perturbed };

std::string to_string(EstimatorKind e);
std::string to_string(StudyInit i);
EstimatorKind parse_estimator(const std::string& s);
StudyInit parse_study_init(const std::string& s);

struct StudySpec {
    std::string name = "study";
    SnMixture truth;
    std::vector<std::size_t> sample_sizes;
    /// Fitted orders; empty means the true order only.
    std::vector<std::size_t> fit_orders;
    int replications = 200;
    std::vector<EstimatorKind> estimators{EstimatorKind::MLE, EstimatorKind::PMLE};
    std::vector<StudyInit> init_schemes{StudyInit::TrueValue};
    std::uint64_t master_seed = 1;
    /// Compare scales as log(sigma2) in the bias/RMSE table.
    bool log_sigma = false;
    Algorithm algorithm = Algorithm::ECM;
    int kmeans_starts = 1;
    int perturbed_starts = 10;
    int max_iter = 2000;
    double rel_tol = 1e-6;
    double me_level = 0.05;
    /// Worker threads; never changes results.
    int threads = 1;

    void validate() const;
};

/// Aggregate over the replications of one (estimator, n, p, init) cell.
struct CellReport {
    EstimatorKind estimator = EstimatorKind::MLE;
    std::size_t n = 0;
    std::size_t p = 0;
    StudyInit init = StudyInit::TrueValue;
    int replications = 0;
    int failures = 0;        // fits that threw or an ME the validity gate refused
    int nonconverged = 0;
    int sigma_degenerate = 0;  // replications with some sigma2 < 1e-10
    int lambda_divergent = 0;  // replications with some |lambda| > 100
    double min_sigma2 = 0.0;
    double max_abs_lambda = 0.0;
    double mean_dstar = 0.0;
    int dstar_clamped = 0;
    /// Per-parameter bias/RMSE; only when p equals the true order.
    std::vector<ParamError> errors;
};

struct StudyReport {
    std::string name;
    std::uint64_t master_seed = 0;
    int replications = 0;
    std::vector<CellReport> cells;
    double elapsed_seconds = 0.0;
};

StudyReport run_study(const StudySpec& spec);

/// Report table, one row per (cell, parameter); cells without a parameter
/// table get a single row with an empty parameter. Never contains timings.
std::string report_csv(const StudyReport& report);
std::string report_json(const StudyReport& report);

StudySpec parse_study_spec(const std::string& json_text);
std::string study_spec_json(const StudySpec& spec);

/// Single-component comparison of the proposed shape penalty against the
/// Azzalini penalty, both without a scale penalty.
struct PenaltyRow {
    std::size_t n = 0;
    double lambda = 0.0;
    int replications = 0;
    double pmle_bias = 0.0;
    double pmle_rmse = 0.0;
    double mple_bias = 0.0;
    double mple_rmse = 0.0;
    int pmle_failures = 0;
    int mple_failures = 0;
};

struct PenaltyComparison {
    std::uint64_t master_seed = 0;
    std::vector<PenaltyRow> rows;  // one per (n, lambda), n major
    double elapsed_seconds = 0.0;
};

PenaltyComparison run_penalty_comparison(const std::vector<std::size_t>& n_list,
                                         const std::vector<double>& lambda_list, int replications,
                                         std::uint64_t master_seed, int threads = 1);

/// Wide table with bias, RMSE and their logs for both estimators.
std::string penalty_csv(const PenaltyComparison& cmp);
std::string penalty_json(const PenaltyComparison& cmp);

/// Two-component settings used by the studies.
SnMixture model_one();
SnMixture model_two();

/// Named presets: "model1", "model2", "order-study".
StudySpec study_preset(const std::string& name, int replications, std::uint64_t seed);

/// Runs fn(0..count-1) on `threads` workers.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

}  // namespace snmix
