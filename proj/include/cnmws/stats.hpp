#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cnmws {

// Streaming mean/variance (Welford). merge() is the parallel combination of
// Chan et al., so chunked reductions give the same result for any thread
// count as long as chunks are merged in a fixed order.
struct Welford {
    std::int64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double v) {
        ++count;
        const double delta = v - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (v - mean);
    }

    void merge(const Welford& other);

    [[nodiscard]] double variance() const {
        return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0;
    }
    [[nodiscard]] double std_error() const {
        return count > 1 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
    }
};

// Per-time-point estimate of a function of time.
struct EstimateSeries {
    std::vector<double> t;
    std::vector<double> estimate;
    std::vector<double> std_error;
    std::vector<std::int64_t> n_samples;

    [[nodiscard]] std::size_t size() const { return t.size(); }
    void push(double time, double value, double se, std::int64_t n) {
        t.push_back(time);
        estimate.push_back(value);
        std_error.push_back(se);
        n_samples.push_back(n);
    }
    // Index of the grid point closest to time.
    [[nodiscard]] std::size_t index_near(double time) const;
};

// One Welford accumulator per grid point.
class SeriesAccumulator {
public:
    SeriesAccumulator() = default;
    explicit SeriesAccumulator(std::size_t points) : cells_(points) {}

    void add(std::size_t idx, double v) { cells_[idx].add(v); }
    void merge(const SeriesAccumulator& other);
    [[nodiscard]] std::size_t size() const { return cells_.size(); }
    [[nodiscard]] const Welford& at(std::size_t idx) const { return cells_[idx]; }

    [[nodiscard]] EstimateSeries finish(const std::vector<double>& times) const;

private:
    std::vector<Welford> cells_;
};

// Shortest decimal representation that round-trips to the same binary64.
[[nodiscard]] std::string format_double(double v);

// CSV with columns t,estimate,stderr,n_samples.
void write_series_csv(const std::filesystem::path& path, const EstimateSeries& series);
[[nodiscard]] EstimateSeries read_series_csv(const std::filesystem::path& path);

} // namespace cnmws
