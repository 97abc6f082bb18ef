#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "snmix/sn_core.hpp"

namespace fixtures {

inline std::string data_path(const std::string& name) { return std::string(SNMIX_TEST_DATA_DIR) + "/" + name; }

/// Old Faithful eruption lengths (minutes), 272 values.
inline std::vector<double> faithful() {
    std::ifstream in(data_path("faithful_eruptions.csv"));
    if (!in) throw std::runtime_error("missing Faithful fixture");
    std::string line;
    std::getline(in, line);
    std::vector<double> v;
    while (std::getline(in, line))
        if (!line.empty()) v.push_back(std::stod(line));
    return v;
}

inline snmix::SnMixture model_one() {
    return {{0.5, 0.5}, {{-2.0, 1.0, 2.0}, {2.0, 2.0, 1.0}}};
}

inline snmix::SnMixture model_two() {
    return {{0.5, 0.5}, {{-1.0, 2.0, 1.0}, {1.5, 2.0, -1.0}}};
}

/// PMLE row of the Faithful application table.
inline snmix::SnMixture faithful_pmle() {
    return {{0.349, 0.651}, {{1.728, 0.143, 5.559}, {4.794, 0.462, -3.357}}};
}

}  // namespace fixtures
