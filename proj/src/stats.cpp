#include "cnmws/stats.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cnmws/errors.hpp"

namespace cnmws {

void Welford::merge(const Welford& other) {
    if (other.count == 0) {
        return;
    }
    if (count == 0) {
        *this = other;
        return;
    }
    const auto na = static_cast<double>(count);
    const auto nb = static_cast<double>(other.count);
    const double n = na + nb;
    const double delta = other.mean - mean;
    mean += delta * nb / n;
    m2 += other.m2 + delta * delta * na * nb / n;
    count += other.count;
}

std::size_t EstimateSeries::index_near(double time) const {
    std::size_t best = 0;
    double best_gap = std::abs(t.empty() ? time : t[0] - time);
    for (std::size_t i = 1; i < t.size(); ++i) {
        const double gap = std::abs(t[i] - time);
        if (gap < best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    return best;
}

void SeriesAccumulator::merge(const SeriesAccumulator& other) {
    if (cells_.empty()) {
        cells_.resize(other.cells_.size());
    }
    for (std::size_t i = 0; i < cells_.size(); ++i) {
        cells_[i].merge(other.cells_[i]);
    }
}

EstimateSeries SeriesAccumulator::finish(const std::vector<double>& times) const {
    EstimateSeries out;
    for (std::size_t i = 0; i < cells_.size(); ++i) {
        out.push(times[i], cells_[i].mean, cells_[i].std_error(), cells_[i].count);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) {
        return "nan";
    }
    return std::string(buf, ptr);
}

void write_series_csv(const std::filesystem::path& path, const EstimateSeries& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << "t,estimate,stderr,n_samples\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        out << format_double(series.t[i]) << ',' << format_double(series.estimate[i]) << ','
            << format_double(series.std_error[i]) << ',' << series.n_samples[i] << '\n';
    }
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

EstimateSeries read_series_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    EstimateSeries out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string cell;
        double vals[3];
        for (double& v : vals) {
            std::getline(row, cell, ',');
            v = std::stod(cell);
        }
        std::getline(row, cell, ',');
        out.push(vals[0], vals[1], vals[2], std::stoll(cell));
    }
    return out;
}

} // namespace cnmws
