#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace medcoder {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntMatrix = Eigen::MatrixXi;
using IntVector = Eigen::VectorXi;

// Single RNG type everywhere so fixed seeds reproduce bit-for-bit on a machine.
using Rng = std::mt19937_64;

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingDependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace medcoder
