#include "cnmws/perturbation.hpp"

#include <algorithm>
#include <string>

#include "cnmws/errors.hpp"

namespace cnmws {

void perturbation_value(const PerturbationDescriptor& d, std::span<const double> x, std::span<double> out) {
    if (const auto* c = std::get_if<ConstantForce>(&d)) {
        if (c->component < 0 || static_cast<std::size_t>(c->component) >= out.size()) {
            throw ConfigError("perturbed component " + std::to_string(c->component) + " out of range");
        }
        std::fill(out.begin(), out.end(), 0.0);
        out[static_cast<std::size_t>(c->component)] = 1.0;
    } else if (std::holds_alternative<LinearForce>(d)) {
        std::copy(x.begin(), x.end(), out.begin());
    } else if (const auto* f = std::get_if<CustomForce>(&d)) {
        f->value(x, out);
    } else {
        throw ConfigError("per-coordinate perturbation has no single force field");
    }
}

void perturbation_jvp(const PerturbationDescriptor& d, std::span<const double> x, std::span<const double> v,
                      std::span<double> out) {
    if (std::holds_alternative<LinearForce>(d)) {
        std::copy(v.begin(), v.end(), out.begin());
    } else if (const auto* f = std::get_if<CustomForce>(&d); f != nullptr && f->jvp) {
        f->jvp(x, v, out);
    } else {
        std::fill(out.begin(), out.end(), 0.0);
    }
}

bool is_constant(const PerturbationDescriptor& d) {
    if (std::holds_alternative<LinearForce>(d)) {
        return false;
    }
    if (const auto* f = std::get_if<CustomForce>(&d)) {
        return !f->jvp;
    }
    return true;
}

} // namespace cnmws
