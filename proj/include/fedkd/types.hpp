#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace fedkd {

// All internal arithmetic is double precision; only the logit wire format
// narrows to float32.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using MatrixRef = Eigen::Ref<const Matrix>;
using VectorRef = Eigen::Ref<const Vector>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParamError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PartitionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AggregationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SerializationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RoundError : std::runtime_error {
    RoundError(int round, int client, const std::string& what)
        : std::runtime_error("round " + std::to_string(round) + ", client " +
                             std::to_string(client) + ": " + what),
          round(round),
          client(client) {}

    int round;
    int client;
};

}  // namespace fedkd
