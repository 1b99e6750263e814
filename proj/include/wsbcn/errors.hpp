#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wsbcn {

/// Dimension or layout mismatch between operands.
struct ShapeError : std::invalid_argument {
	using std::invalid_argument::invalid_argument;
};

/// A precondition on values (not shapes) was violated, e.g. a degenerate row.
struct DomainError : std::invalid_argument {
	using std::invalid_argument::invalid_argument;
};

/// Misuse of stateful objects: double backward, missing gradients, ...
struct StateError : std::logic_error {
	using std::logic_error::logic_error;
};

/// NaN/Inf produced on finite inputs, or a diverging training run.
struct NumericalError : std::runtime_error {
	NumericalError(const std::string& what, std::int64_t step = -1) : std::runtime_error(what), step(step) {}
	std::int64_t step;
};

/// Documented unsupported configuration (e.g. BN with one value per channel).
struct ContractError : std::invalid_argument {
	using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
	using std::runtime_error::runtime_error;
};

/// Malformed file content: bad magic, version, checksum, record length.
struct FormatError : std::runtime_error {
	using std::runtime_error::runtime_error;
};

} // namespace wsbcn
