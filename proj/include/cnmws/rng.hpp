#pragma once

#include <cstdint>
#include <random>
#include <span>

#include <boost/random/normal_distribution.hpp>

namespace cnmws {

using Engine = std::mt19937_64;

// Independent random stream for (seed, index). The pair goes through a
// seed_seq so that consecutive indices do not produce correlated states.
[[nodiscard]] Engine make_stream(std::uint64_t seed, std::uint64_t index);

// Standard normal draws from a ziggurat sampler.
class NormalSource {
public:
    explicit NormalSource(Engine engine) : engine_(std::move(engine)) {}

    double operator()() { return dist_(engine_); }

    // out[i] = scale * N(0,1)
    void fill(std::span<double> out, double scale) {
        for (double& v : out) {
            v = scale * dist_(engine_);
        }
    }

    Engine& engine() { return engine_; }

private:
    Engine engine_;
    boost::random::normal_distribution<double> dist_{0.0, 1.0};
};

} // namespace cnmws
