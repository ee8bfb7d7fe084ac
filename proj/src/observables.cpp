#include "cnmws/observables.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cnmws/errors.hpp"
#include "cnmws/parallel.hpp"

namespace cnmws {

namespace {

double binomial(int n, int k) {
    double out = 1.0;
    for (int i = 1; i <= k; ++i) {
        out = out * static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return out;
}

} // namespace

OriginEstimator::OriginEstimator(int n, int dim, int n_prime, double dt, OriginPlan plan, double box)
    : n_(n), dim_(dim), n_prime_(n_prime), dt_(dt), plan_(std::move(plan)), box_(box) {
    if (n < 1 || dim < 1 || n % dim != 0) {
        throw ConfigError("origin estimator needs n to be a multiple of the dimension");
    }
    if (plan_.spacing < 1 || plan_.first < 0 || plan_.lags.empty()) {
        throw ConfigError("origin plan needs spacing >= 1, first >= 0 and at least one lag");
    }
    for (std::size_t i = 0; i < plan_.lags.size(); ++i) {
        if (plan_.lags[i] < 0 || (i > 0 && plan_.lags[i] <= plan_.lags[i - 1])) {
            throw ConfigError("lags must be non-negative and strictly increasing");
        }
    }
    max_lag_ = plan_.lags.back();
    lag_slot_.assign(static_cast<std::size_t>(max_lag_) + 1, -1);
    for (std::size_t i = 0; i < plan_.lags.size(); ++i) {
        lag_slot_[static_cast<std::size_t>(plan_.lags[i])] = static_cast<int>(i);
    }
    if (plan_.batch_size < 0) {
        throw ConfigError("batch size must be non-negative");
    }
    hist_.assign(static_cast<std::size_t>(n_prime_) + 1, std::vector<double>(static_cast<std::size_t>(n_), 0.0));
    dphi_.resize(static_cast<std::size_t>(n_prime_) + 1);
    hbuf_.resize(static_cast<std::size_t>(n_prime_) + 1);
}

std::vector<double> OriginEstimator::lag_times() const {
    std::vector<double> t;
    t.reserve(plan_.lags.size());
    for (const auto l : plan_.lags) {
        t.push_back(static_cast<double>(l) * dt_);
    }
    return t;
}

void OriginEstimator::begin_trajectory() {
    end_trajectory();
    last_step_ = -1;
    origins_in_traj_ = 0;
}

void OriginEstimator::end_trajectory() {
    active_.clear();
    flush(true);
}

OriginEstimator::OpenBatch& OriginEstimator::open_batch(std::int64_t id) {
    if (open_.empty() || open_.back().id != id) {
        const std::size_t lags = plan_.lags.size();
        open_.push_back({id, std::vector<double>(lags, 0.0), std::vector<double>(lags, 0.0),
                         std::vector<std::int64_t>(lags, 0), 0});
    }
    return open_.back();
}

OriginEstimator::OpenBatch& OriginEstimator::open_batch_for(std::int64_t id) {
    for (auto& b : open_) {
        if (b.id == id) {
            return b;
        }
    }
    throw NumericError("origin estimator lost track of a batch");
}

// Batches complete in creation order because every origin spans the same
// number of steps.
void OriginEstimator::flush(bool all) {
    while (!open_.empty()) {
        OpenBatch& b = open_.front();
        const bool sealed = all || open_.size() > 1;
        if (!sealed || (!all && b.pending > 0)) {
            break;
        }
        BatchSample s;
        const std::size_t lags = plan_.lags.size();
        s.chi.assign(lags, std::numeric_limits<double>::quiet_NaN());
        s.msd.assign(lags, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i = 0; i < lags; ++i) {
            if (b.count[i] > 0) {
                s.chi[i] = b.chi[i] / static_cast<double>(b.count[i]);
                s.msd[i] = b.msd[i] / static_cast<double>(b.count[i]);
            }
        }
        batches_.push_back(std::move(s));
        open_.pop_front();
    }
}

EstimateSeries OriginEstimator::chi() const {
    SeriesAccumulator acc(plan_.lags.size());
    for (const auto& b : batches_) {
        for (std::size_t i = 0; i < b.chi.size(); ++i) {
            if (!std::isnan(b.chi[i])) {
                acc.add(i, b.chi[i]);
            }
        }
    }
    return acc.finish(lag_times());
}

EstimateSeries OriginEstimator::msd() const {
    SeriesAccumulator acc(plan_.lags.size());
    for (const auto& b : batches_) {
        for (std::size_t i = 0; i < b.msd.size(); ++i) {
            if (!std::isnan(b.msd[i])) {
                acc.add(i, b.msd[i]);
            }
        }
    }
    return acc.finish(lag_times());
}

void OriginEstimator::observe(std::int64_t step, std::span<const double> x, const WeightSet& w) {
    if (static_cast<int>(x.size()) != n_ || w.width != n_ || w.n_prime != n_prime_) {
        throw ConfigError("origin estimator input has the wrong shape");
    }
    if (step != last_step_ + 1) {
        throw ConfigError("origin estimator must see every step in order");
    }
    const std::size_t slots = hist_.size();
    const auto nn = static_cast<std::size_t>(n_);
    if (box_ > 0.0 && last_step_ >= 0) {
        const auto& prev = hist_[static_cast<std::size_t>(last_step_) % slots];
        for (std::size_t c = 0; c < nn; ++c) {
            if (std::abs(x[c] - prev[c]) > 0.5 * box_) {
                throw NumericError("position jump larger than half the box: coordinates look wrapped");
            }
        }
    }
    std::copy(x.begin(), x.end(), hist_[static_cast<std::size_t>(step) % slots].begin());
    last_step_ = step;

    if (step >= plan_.first && (step - plan_.first) % plan_.spacing == 0) {
        const std::int64_t batch = plan_.batch_size > 0 ? origins_in_traj_ / plan_.batch_size : 0;
        active_.push_back({step, batch, std::vector<double>(x.begin(), x.end()), w.values});
        ++open_batch(batch).pending;
        ++origins_used_;
        ++origins_in_traj_;
    }

    const int np = n_prime_;
    const std::int64_t have = std::min<std::int64_t>(step, np);
    const int particles = n_ / dim_;
    for (const Origin& o : active_) {
        const std::int64_t off = step - o.step;
        const int slot = lag_slot_[static_cast<std::size_t>(off)];
        if (slot < 0) {
            continue;
        }
        double chi_sum = 0.0;
        for (std::size_t c = 0; c < nn; ++c) {
            // Backward differences of the position; missing history before
            // step 0 is treated as zero velocity.
            for (int l = 0; l <= np; ++l) {
                const std::int64_t s = step - std::min<std::int64_t>(l, have);
                hbuf_[static_cast<std::size_t>(np - l)] = hist_[static_cast<std::size_t>(s) % slots][c];
            }
            backward_derivatives(hbuf_, dt_, dphi_);
            dphi_[0] -= o.x[c];
            for (int j = 0; j <= np; ++j) {
                for (int k = 0; k <= j; ++k) {
                    const std::size_t idx = static_cast<std::size_t>(WeightSet::index(j, k) * n_) + c;
                    chi_sum += binomial(j, k) * dphi_[static_cast<std::size_t>(k)] * (w.values[idx] - o.w[idx]);
                }
            }
        }
        double msd_sum = 0.0;
        for (int i = 0; i < particles; ++i) {
            for (int a = 0; a < dim_; ++a) {
                const auto c = static_cast<std::size_t>(i * dim_ + a);
                const double d = x[c] - o.x[c];
                msd_sum += d * d;
            }
        }
        OpenBatch& b = open_batch_for(o.batch);
        b.chi[static_cast<std::size_t>(slot)] += chi_sum / static_cast<double>(n_);
        b.msd[static_cast<std::size_t>(slot)] += msd_sum / static_cast<double>(particles);
        ++b.count[static_cast<std::size_t>(slot)];
    }
    while (!active_.empty() && step - active_.front().step >= max_lag_) {
        open_batch_for(active_.front().batch).pending -= 1;
        active_.pop_front();
    }
    flush(false);
}

void OriginEstimator::merge(const OriginEstimator& other) {
    batches_.insert(batches_.end(), other.batches_.begin(), other.batches_.end());
    origins_used_ += other.origins_used_;
}

EstimateSeries mobility_function(const std::vector<Trajectory>& ensemble, const std::vector<WeightSeries>& weights,
                                 const OriginPlan& origins, int dim) {
    if (ensemble.empty() || ensemble.size() != weights.size()) {
        throw ConfigError("ensemble and weights must be non-empty and of equal size");
    }
    const auto& w0 = weights.front().front();
    OriginEstimator est(ensemble.front().n, dim, w0.n_prime, ensemble.front().dt, origins);
    for (std::size_t e = 0; e < ensemble.size(); ++e) {
        est.begin_trajectory();
        for (std::size_t i = 0; i <= ensemble[e].steps(); ++i) {
            est.observe(static_cast<std::int64_t>(i), ensemble[e].x_at(i), weights[e][i]);
        }
        est.end_trajectory();
    }
    return est.chi();
}

EstimateSeries msd(const std::vector<Trajectory>& ensemble, const OriginPlan& origins, int dim, double box) {
    if (ensemble.empty()) {
        throw ConfigError("empty ensemble");
    }
    const int n = ensemble.front().n;
    OriginEstimator est(n, dim, 0, ensemble.front().dt, origins, box);
    WeightSet none(0, n);
    for (const auto& tr : ensemble) {
        est.begin_trajectory();
        for (std::size_t i = 0; i <= tr.steps(); ++i) {
            est.observe(static_cast<std::int64_t>(i), tr.x_at(i), none);
        }
        est.end_trajectory();
    }
    return est.msd();
}

EinsteinResult einstein_temperature(const EstimateSeries& chi, const EstimateSeries& msd, double t_lo, double t_hi,
                                    int dim) {
    if (chi.size() != msd.size()) {
        throw ConfigError("mobility and MSD series must share the time grid");
    }
    if (!(t_hi > t_lo)) {
        throw ConfigError("empty fit window");
    }
    EinsteinResult out;
    double sum = 0.0;
    double se_sum = 0.0;
    std::vector<double> ts;
    std::vector<double> ms;
    for (std::size_t i = 0; i < chi.size(); ++i) {
        const double t = chi.t[i];
        if (t < t_lo || t > t_hi) {
            continue;
        }
        if (std::abs(msd.t[i] - t) > 1e-9 * std::max(1.0, t)) {
            throw ConfigError("mobility and MSD series must share the time grid");
        }
        const double c = chi.estimate[i];
        if (!(c > 0.0)) {
            throw NumericError("mobility function is not positive inside the fit window");
        }
        const double m = msd.estimate[i] / (2.0 * dim);
        const double r = m / c;
        const double rel_m = msd.std_error[i] / msd.estimate[i];
        const double rel_c = chi.std_error[i] / c;
        sum += r;
        se_sum += std::abs(r) * std::sqrt(rel_m * rel_m + rel_c * rel_c);
        ts.push_back(t);
        ms.push_back(msd.estimate[i]);
        ++out.points;
    }
    if (out.points == 0) {
        throw ConfigError("fit window contains no recorded time");
    }
    out.value = sum / static_cast<double>(out.points);
    out.std_error = se_sum / static_cast<double>(out.points);

    // Local MSD slope in the two halves of the window.
    if (ts.size() >= 4) {
        const std::size_t h = ts.size() / 2;
        const double s1 = (ms[h - 1] - ms[0]) / (ts[h - 1] - ts[0]);
        const double s2 = (ms.back() - ms[h]) / (ts.back() - ts[h]);
        if (std::abs(s2 - s1) > 0.1 * std::max(std::abs(s1), std::abs(s2))) {
            std::ostringstream os;
            os << "MSD slope drifts by more than 10% inside the fit window (" << s1 << " vs " << s2 << ")";
            out.warnings.push_back(os.str());
        }
    }
    return out;
}

EinsteinResult einstein_temperature(const std::vector<BatchSample>& batches, const std::vector<double>& lag_times,
                                    double t_lo, double t_hi, int dim) {
    if (!(t_hi > t_lo)) {
        throw ConfigError("empty fit window");
    }
    std::vector<std::size_t> window;
    for (std::size_t i = 0; i < lag_times.size(); ++i) {
        if (lag_times[i] >= t_lo && lag_times[i] <= t_hi) {
            window.push_back(i);
        }
    }
    if (window.empty()) {
        throw ConfigError("fit window contains no recorded time");
    }
    std::vector<double> num;
    std::vector<double> den;
    for (const auto& b : batches) {
        double a = 0.0;
        double c = 0.0;
        bool complete = true;
        for (const auto i : window) {
            if (std::isnan(b.chi[i]) || std::isnan(b.msd[i])) {
                complete = false;
                break;
            }
            a += b.msd[i] / (2.0 * dim);
            c += b.chi[i];
        }
        if (complete) {
            num.push_back(a);
            den.push_back(c);
        }
    }
    const std::size_t m = num.size();
    if (m < 2) {
        throw NumericError("fewer than two complete batches inside the fit window");
    }
    double ma = 0.0;
    double mc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        ma += num[i];
        mc += den[i];
    }
    ma /= static_cast<double>(m);
    mc /= static_cast<double>(m);
    if (!(mc > 0.0)) {
        throw NumericError("mobility function is not positive inside the fit window");
    }
    double vaa = 0.0;
    double vcc = 0.0;
    double vac = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        vaa += (num[i] - ma) * (num[i] - ma);
        vcc += (den[i] - mc) * (den[i] - mc);
        vac += (num[i] - ma) * (den[i] - mc);
    }
    const double norm = static_cast<double>(m) * static_cast<double>(m - 1);
    vaa /= norm;
    vcc /= norm;
    vac /= norm;
    EinsteinResult out;
    out.value = ma / mc;
    out.std_error = std::sqrt(std::max(0.0, vaa - 2.0 * out.value * vac + out.value * out.value * vcc)) / mc;
    out.points = window.size();

    if (window.size() >= 4) {
        // MSD slope drift between the two halves of the window.
        std::vector<double> mean(window.size(), 0.0);
        std::size_t used = 0;
        for (const auto& b : batches) {
            bool complete = true;
            for (const auto i : window) {
                complete = complete && !std::isnan(b.msd[i]);
            }
            if (!complete) {
                continue;
            }
            for (std::size_t w = 0; w < window.size(); ++w) {
                mean[w] += b.msd[window[w]];
            }
            ++used;
        }
        const std::size_t h = window.size() / 2;
        const auto t = [&](std::size_t w) { return lag_times[window[w]]; };
        const double s1 = (mean[h - 1] - mean[0]) / (t(h - 1) - t(0)) / static_cast<double>(used);
        const double s2 = (mean.back() - mean[h]) / (t(window.size() - 1) - t(h)) / static_cast<double>(used);
        if (std::abs(s2 - s1) > 0.1 * std::max(std::abs(s1), std::abs(s2))) {
            std::ostringstream os;
            os << "MSD slope drifts by more than 10% inside the fit window (" << s1 << " vs " << s2 << ")";
            out.warnings.push_back(os.str());
        }
    }
    return out;
}

bool fd_nonlinear(const Welford& gap, const Welford& full) {
    // With slope(l) = s + c l^2, the gap is 3/4 c l^2 and the bias of the
    // full-step slope 4/3 of it.
    const double bias = 4.0 / 3.0 * std::abs(gap.mean);
    const bool significant = std::abs(gap.mean) > 5.0 * gap.std_error() + 1e-9 * std::abs(full.mean);
    return significant && bias > 0.5 * full.std_error();
}

double default_fd_lambda(const SimConfig& config) {
    const bool linear = config.perturbation && std::holds_alternative<LinearForce>(*config.perturbation);
    const double t = config.spectrum.t_eff;
    if (const auto* h = std::get_if<HarmonicForce>(&config.force)) {
        return linear ? 0.01 * h->k : 0.01 * h->k * std::sqrt(t / h->k);
    }
    if (const auto* c = std::get_if<ScreenedCoulomb>(&config.force)) {
        return 0.01 * t / c->sigma_v;
    }
    return 0.01 * t;
}

namespace {

struct FdChunk {
    SeriesAccumulator full;
    SeriesAccumulator half;
    SeriesAccumulator gap;
};

FdChunk run_fd_chunk(const SimConfig& config, const StateSpaceRealization& realization, double lambda,
                     const Observable& phi, const FdOptions& options, std::size_t begin, std::size_t end,
                     std::uint64_t stream_offset) {
    const std::size_t points = options.record_steps.size();
    FdChunk out{SeriesAccumulator(points), SeriesAccumulator(points), SeriesAccumulator(points)};
    const std::int64_t last = options.record_steps.empty() ? 0 : options.record_steps.back();
    std::vector<double> dw(static_cast<std::size_t>(realization.p()));
    std::vector<double> vals(4);
    for (std::size_t traj = begin; traj < end; ++traj) {
        NormalSource rng(make_stream(config.seed, stream_offset + traj));
        Integrator base(realization, config.force, config.xi0, config.dt);
        prepare_steady_state(config, base, rng);
        const double lambdas[4] = {lambda, -lambda, 0.5 * lambda, -0.5 * lambda};
        std::vector<Integrator> copies(4, base);
        for (int i = 0; i < 4; ++i) {
            copies[static_cast<std::size_t>(i)].set_perturbation(config.perturbation, lambdas[i]);
        }
        std::size_t next = 0;
        for (std::int64_t s = 0; s <= last; ++s) {
            if (s > 0) {
                base.draw(rng, dw);
                for (auto& c : copies) {
                    c.step(dw);
                }
            }
            while (next < points && options.record_steps[next] == s) {
                for (int i = 0; i < 4; ++i) {
                    vals[static_cast<std::size_t>(i)] = phi(copies[static_cast<std::size_t>(i)].x());
                }
                const double full = (vals[0] - vals[1]) / (2.0 * lambda);
                const double half = (vals[2] - vals[3]) / lambda;
                out.full.add(next, full);
                out.half.add(next, half);
                out.gap.add(next, full - half);
                ++next;
            }
        }
    }
    return out;
}

} // namespace

FdResult finite_difference_sensitivity(const SimConfig& config, double lambda, const Observable& phi,
                                       const FdOptions& options) {
    if (!config.perturbation) {
        throw ConfigError("finite differences need a perturbation");
    }
    if (!(lambda > 0.0)) {
        throw ConfigError("finite-difference step must be positive");
    }
    for (std::size_t i = 0; i < options.record_steps.size(); ++i) {
        if (options.record_steps[i] < 0 || (i > 0 && options.record_steps[i] <= options.record_steps[i - 1])) {
            throw ConfigError("record steps must be non-negative and increasing");
        }
    }
    const StateSpaceRealization realization = realize(config.spectrum, config.components());
    std::vector<double> times;
    for (const auto s : options.record_steps) {
        times.push_back(static_cast<double>(s) * config.dt);
    }

    for (int attempt = 0; attempt <= options.max_halvings; ++attempt) {
        const auto n = static_cast<std::size_t>(options.n_trajectories);
        FdChunk acc = parallel_chunks<FdChunk>(
            n, options.chunk, options.threads,
            [&](std::size_t, std::size_t b, std::size_t e) {
                return run_fd_chunk(config, realization, lambda, phi, options, b, e, std::uint64_t{1} << 40);
            },
            [](FdChunk& into, const FdChunk& from) {
                into.full.merge(from.full);
                into.half.merge(from.half);
                into.gap.merge(from.gap);
            });
        bool linear = true;
        for (std::size_t i = 0; i < acc.gap.size(); ++i) {
            if (fd_nonlinear(acc.gap.at(i), acc.full.at(i))) {
                linear = false;
                break;
            }
        }
        if (linear) {
            return {acc.full.finish(times), acc.half.finish(times), lambda, attempt};
        }
        lambda *= 0.5;
    }
    throw NumericError("finite-difference response stays nonlinear after " + std::to_string(options.max_halvings) +
                       " halvings of lambda");
}

} // namespace cnmws
