#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "snmix/sn_core.hpp"

namespace snmix {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitDegenerate = 3;
inline constexpr int kExitMeValidity = 4;

/// Unreadable or malformed input.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MeInfo {
    int nu = 0;
    double shrink = 1.0;
    double statistic = 0.0;
    double critical = 0.0;
    double level = 0.05;
    std::vector<double> mle_lambda;
};

struct ModelDocument {
    static constexpr int kSchemaVersion = 1;

    int schema_version = kSchemaVersion;
    SnMixture psi;
    std::string estimator = "pmle";  // mle, pmle, mple, me
    std::string algorithm = "ecm";
    double objective = 0.0;  // penalized log-likelihood
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
    bool sigma_degenerate = false;
    bool lambda_divergent = false;
    double c_a = kDefaultCa;
    double c_b = kDefaultCb;
    int starts = 1;
    std::uint64_t seed = 0;
    std::optional<MeInfo> me;
};

std::string model_to_json(const ModelDocument& doc);
/// Accepts a full document or a bare {weights, mu, sigma2, lambda} object.
ModelDocument model_from_json(const std::string& text);

/// Reads one numeric column. `column` is a header name, a 1-based index, or
/// empty for the first numeric column. Throws InputError with line numbers.
std::vector<double> read_csv_column(std::istream& in, const std::string& column = "");
std::vector<double> read_csv_file(const std::string& path, const std::string& column = "");

/// Entry point; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace snmix
