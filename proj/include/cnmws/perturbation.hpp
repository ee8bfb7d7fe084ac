#pragma once

#include <functional>
#include <span>
#include <variant>
#include <vector>

namespace cnmws {

// F-hat(x) = e_component.
struct ConstantForce {
    int component = 0;
};

// F-hat(x) = x.
struct LinearForce {};

// One independent constant-force perturbation per component; used to average
// the response of indistinguishable particles over all coordinates. Weights
// are kept per component, so there is no single F-hat to apply.
struct PerCoordinate {};

struct CustomForce {
    std::function<void(std::span<const double> x, std::span<double> out)> value;
    // Directional derivative (grad F-hat)(x) v. May be empty for constant F-hat.
    std::function<void(std::span<const double> x, std::span<const double> v, std::span<double> out)> jvp;
};

using PerturbationDescriptor = std::variant<ConstantForce, LinearForce, PerCoordinate, CustomForce>;

// Writes F-hat(x) into out; throws ConfigError for PerCoordinate.
void perturbation_value(const PerturbationDescriptor& d, std::span<const double> x, std::span<double> out);

// Writes (grad F-hat)(x) v into out.
void perturbation_jvp(const PerturbationDescriptor& d, std::span<const double> x, std::span<const double> v,
                      std::span<double> out);

// True when grad F-hat vanishes identically.
[[nodiscard]] bool is_constant(const PerturbationDescriptor& d);

} // namespace cnmws
