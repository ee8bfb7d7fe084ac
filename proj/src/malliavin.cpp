#include "cnmws/malliavin.hpp"

#include <cmath>

#include "cnmws/errors.hpp"

namespace cnmws {

namespace {

double binomial(int n, int k) {
    double out = 1.0;
    for (int i = 1; i <= k; ++i) {
        out = out * static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return out;
}

void accumulate(double* row, int width, const std::vector<double>& a, const double* b, int n) {
    if (width == 1) {
        double s = 0.0;
        for (int c = 0; c < n; ++c) {
            s += a[static_cast<std::size_t>(c)] * b[c];
        }
        row[0] += s;
    } else {
        for (int c = 0; c < n; ++c) {
            row[c] += a[static_cast<std::size_t>(c)] * b[c];
        }
    }
}

std::vector<double> row_of(const Matrix& m) {
    std::vector<double> out(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.cols(); ++i) {
        out[static_cast<std::size_t>(i)] = m(0, i);
    }
    return out;
}

Matrix right_gain(const Matrix& b) {
    const Matrix bbt = b * b.transpose();
    Eigen::FullPivLU<Matrix> lu(bbt);
    if (!lu.isInvertible()) {
        throw ConfigError("B B^T is singular; weights need the Brunowski form");
    }
    return lu.solve(b);
}

} // namespace

PerturbationLift::PerturbationLift(PerturbationDescriptor descriptor, const StateSpaceRealization& realization)
    : descriptor_(std::move(descriptor)), n_(realization.n()) {
    double c1 = realization.leading_gain();
    if (realization.form() == RealizationForm::Brunowski) {
        c1 = realization.c_bar()(0, 0);
        full_ = n_ * static_cast<int>(realization.c_bar().cols());
    } else {
        full_ = realization.q();
    }
    if (c1 == 0.0) {
        throw ConfigError("perturbation is not in the range of C");
    }
    inv_gain_ = 1.0 / c1;
    constant_ = is_constant(descriptor_);
    per_coordinate_ = std::holds_alternative<PerCoordinate>(descriptor_);
    if (const auto* c = std::get_if<ConstantForce>(&descriptor_)) {
        if (c->component < 0 || c->component >= n_) {
            throw ConfigError("perturbed component " + std::to_string(c->component) + " outside the " +
                              std::to_string(n_) + "-dimensional state");
        }
    }
}

void PerturbationLift::eps(std::span<const double> x, std::span<double> out) const {
    if (per_coordinate_) {
        std::fill(out.begin(), out.end(), inv_gain_);
        return;
    }
    perturbation_value(descriptor_, x, out);
    for (double& v : out) {
        v *= inv_gain_;
    }
}

void PerturbationLift::eps_jvp(std::span<const double> x, std::span<const double> v, std::span<double> out) const {
    perturbation_jvp(descriptor_, x, v, out);
    for (double& e : out) {
        e *= inv_gain_;
    }
}

Vector PerturbationLift::lift(std::span<const double> x) const {
    Vector out = Vector::Zero(full_);
    std::vector<double> e(static_cast<std::size_t>(n_));
    eps(x, e);
    for (int c = 0; c < n_; ++c) {
        out(c) = e[static_cast<std::size_t>(c)];
    }
    return out;
}

PerturbationLift lift_perturbation(const PerturbationDescriptor& descriptor, const StateSpaceRealization& realization) {
    return {descriptor, realization};
}

WeightSet::WeightSet(int n_prime_, int width_) : n_prime(n_prime_), width(width_) {
    values.assign(static_cast<std::size_t>(pairs() * width), 0.0);
}

WeightGains weight_gains(const StateSpaceRealization& realization) {
    WeightGains out;
    if (realization.form() == RealizationForm::NonsingularBBt) {
        const NoiseBlock& blk = realization.block();
        const Matrix rg = right_gain(blk.b);
        out.n_prime = 1;
        out.g.push_back(row_of(blk.a.transpose() * rg));
        out.g.push_back(row_of(rg));
        return out;
    }
    out.brunowski = true;
    out.n_prime = realization.n_prime();
    const Matrix rg = right_gain(realization.b_bar());
    const double ell = realization.scale();
    const auto& comp = realization.companion();
    for (int j = 0; j <= out.n_prime; ++j) {
        const Matrix a_next = j < out.n_prime ? comp[static_cast<std::size_t>(j)]
                                              : Matrix::Identity(rg.rows(), rg.rows());
        out.g.push_back(row_of(std::pow(ell, -j) * (a_next.transpose() * rg)));
    }
    return out;
}

WeightPropagator::WeightPropagator(const PerturbationLift& lift, const StateSpaceRealization& realization, double dt)
    : lift_(&lift),
      gains_(weight_gains(realization)),
      n_(realization.n()),
      p0_(realization.block_p()),
      dt_(dt),
      width_(lift.per_coordinate() ? realization.n() : 1),
      weights_(gains_.n_prime, width_) {
    const auto n = static_cast<std::size_t>(n_);
    const auto slots = static_cast<std::size_t>(gains_.n_prime + 1);
    eps_.resize(n);
    jvp_.resize(n);
    vel_.resize(n);
    diff_.resize(n);
    eps_hist_.assign(slots, std::vector<double>(n, 0.0));
    proj_hist_.assign(slots, std::vector<double>(slots * n, 0.0));
}

void WeightPropagator::reset(std::span<const double> x0) {
    weights_.clear();
    steps_ = 0;
    lift_->eps(x0, eps_hist_[0]);
}

void WeightPropagator::project(std::span<const double> dw, std::vector<double>& out) const {
    const auto n = static_cast<std::size_t>(n_);
    for (std::size_t j = 0; j < gains_.g.size(); ++j) {
        double* dst = out.data() + j * n;
        std::fill(dst, dst + n, 0.0);
        for (int m = 0; m < p0_; ++m) {
            const double g = gains_.g[j][static_cast<std::size_t>(m)];
            if (g == 0.0) {
                continue;
            }
            const double* src = dw.data() + static_cast<std::size_t>(m) * n;
            for (std::size_t c = 0; c < n; ++c) {
                dst[c] += g * src[c];
            }
        }
    }
}

void WeightPropagator::advance(std::span<const double> x_prev, std::span<const double> x_new,
                               std::span<const double> dw, std::span<const double> velocity) {
    const auto n = static_cast<std::size_t>(n_);
    const auto slots = static_cast<std::int64_t>(gains_.n_prime + 1);
    ++steps_;
    const std::int64_t big_n = steps_;
    auto& proj = proj_hist_[static_cast<std::size_t>(big_n % slots)];
    project(dw, proj);

    if (!gains_.brunowski) {
        lift_->eps(x_prev, eps_);
        accumulate(&weights_.at(0, 0), width_, eps_, proj.data(), n_);
        accumulate(&weights_.at(1, 1), width_, eps_, proj.data() + n, n_);
        if (!lift_->constant()) {
            if (velocity.empty()) {
                for (std::size_t c = 0; c < n; ++c) {
                    vel_[c] = (x_new[c] - x_prev[c]) / dt_;
                }
                lift_->eps_jvp(x_prev, vel_, jvp_);
            } else {
                lift_->eps_jvp(x_prev, velocity, jvp_);
            }
            accumulate(&weights_.at(1, 0), width_, jvp_, proj.data() + n, n_);
        }
        return;
    }

    const int np = gains_.n_prime;
    auto& eps_now = eps_hist_[static_cast<std::size_t>(big_n % slots)];
    const auto& eps_prev = eps_hist_[static_cast<std::size_t>((big_n - 1) % slots)];
    for (int j = 0; j <= np; ++j) {
        accumulate(&weights_.at(j, j), width_, eps_prev, proj.data() + static_cast<std::size_t>(j) * n, n_);
    }
    lift_->eps(x_new, eps_now);
    if (lift_->constant()) {
        return;
    }
    for (int d = 1; d <= np && d <= big_n; ++d) {
        std::fill(diff_.begin(), diff_.end(), 0.0);
        for (int l = 0; l <= d; ++l) {
            const double coef = ((l % 2 == 0) ? 1.0 : -1.0) * binomial(d, l) / std::pow(dt_, d);
            const auto& e = eps_hist_[static_cast<std::size_t>((big_n - l) % slots)];
            for (std::size_t c = 0; c < n; ++c) {
                diff_[c] += coef * e[c];
            }
        }
        const auto& proj_d = proj_hist_[static_cast<std::size_t>((big_n + 1 - d) % slots)];
        for (int j = d; j <= np; ++j) {
            accumulate(&weights_.at(j, j - d), width_, diff_, proj_d.data() + static_cast<std::size_t>(j) * n, n_);
        }
    }
}

namespace {

WeightSeries propagate(const Trajectory& tr, const PerturbationLift& lift, const StateSpaceRealization& realization) {
    if (tr.n != realization.n() || tr.p != realization.p()) {
        throw ConfigError("trajectory dimensions do not match the realization");
    }
    WeightPropagator prop(lift, realization, tr.dt);
    if (tr.steps() < static_cast<std::size_t>(prop.n_prime())) {
        throw ConfigError("trajectory shorter than the weight order");
    }
    WeightSeries out;
    out.reserve(tr.steps() + 1);
    prop.reset(tr.x_at(0));
    out.push_back(prop.weights());
    for (std::size_t i = 1; i <= tr.steps(); ++i) {
        prop.advance(tr.x_at(i - 1), tr.x_at(i), tr.dw_at(i - 1));
        out.push_back(prop.weights());
    }
    return out;
}

SensitivityResult sensitivity(const std::vector<Trajectory>& ensemble, const Observable& phi,
                              const std::vector<WeightSeries>& weights, int n_prime) {
    if (ensemble.size() != weights.size() || ensemble.empty()) {
        throw ConfigError("ensemble and weight series must be non-empty and of equal size");
    }
    const std::size_t steps = ensemble.front().steps();
    if (steps < 2 || steps < static_cast<std::size_t>(n_prime)) {
        throw NumericError("too few recorded steps for the sensitivity estimator");
    }
    const int pairs = (n_prime + 1) * (n_prime + 2) / 2;
    SeriesAccumulator total(steps + 1);
    std::vector<SeriesAccumulator> terms(static_cast<std::size_t>(pairs), SeriesAccumulator(steps + 1));
    std::vector<double> hist(static_cast<std::size_t>(n_prime) + 1);
    std::vector<double> dphi(hist.size());
    std::vector<double> tv(static_cast<std::size_t>(pairs));

    for (std::size_t e = 0; e < ensemble.size(); ++e) {
        const Trajectory& tr = ensemble[e];
        const WeightSeries& ws = weights[e];
        if (tr.steps() != steps || ws.size() != steps + 1 || ws.front().n_prime != n_prime ||
            ws.front().width != 1) {
            throw ConfigError("inconsistent trajectory or weight series");
        }
        std::vector<double> phis(steps + 1);
        for (std::size_t i = 0; i <= steps; ++i) {
            phis[i] = phi(tr.x_at(i));
        }
        for (std::size_t i = static_cast<std::size_t>(n_prime); i <= steps; ++i) {
            std::copy(phis.begin() + static_cast<std::ptrdiff_t>(i) - n_prime,
                      phis.begin() + static_cast<std::ptrdiff_t>(i) + 1, hist.begin());
            backward_derivatives(hist, tr.dt, dphi);
            total.add(i, combine_terms(ws[i], dphi, tv));
            for (int t = 0; t < pairs; ++t) {
                terms[static_cast<std::size_t>(t)].add(i, tv[static_cast<std::size_t>(t)]);
            }
        }
    }
    const std::vector<double>& times = ensemble.front().times;
    SensitivityResult out;
    out.total = total.finish(times);
    for (const auto& t : terms) {
        out.terms.push_back(t.finish(times));
    }
    return out;
}

} // namespace

WeightSeries propagate_weights_case1(const Trajectory& trajectory, const PerturbationLift& lift,
                                     const StateSpaceRealization& realization) {
    if (realization.form() != RealizationForm::NonsingularBBt) {
        throw ConfigError("case-1 weights need an invertible B B^T");
    }
    return propagate(trajectory, lift, realization);
}

WeightSeries propagate_weights_case2(const Trajectory& trajectory, const PerturbationLift& lift,
                                     const StateSpaceRealization& realization) {
    if (realization.form() != RealizationForm::Brunowski) {
        throw ConfigError("case-2 weights need a Brunowski realization");
    }
    return propagate(trajectory, lift, realization);
}

Observable moment_observable(int component, int power) {
    return [component, power](std::span<const double> x) {
        return std::pow(x[static_cast<std::size_t>(component)], power);
    };
}

void backward_derivatives(std::span<const double> hist, double dt, std::span<double> out) {
    const int order = static_cast<int>(hist.size()) - 1;
    for (int k = 0; k <= order; ++k) {
        double s = 0.0;
        for (int l = 0; l <= k; ++l) {
            const double coef = ((l % 2 == 0) ? 1.0 : -1.0) * binomial(k, l);
            s += coef * hist[static_cast<std::size_t>(order - l)];
        }
        out[static_cast<std::size_t>(k)] = s / std::pow(dt, k);
    }
}

double combine_terms(const WeightSet& w, std::span<const double> dphi, std::span<double> terms, int column) {
    double total = 0.0;
    for (int j = 0; j <= w.n_prime; ++j) {
        for (int k = 0; k <= j; ++k) {
            const double v = binomial(j, k) * dphi[static_cast<std::size_t>(k)] * w.at(j, k, column);
            terms[static_cast<std::size_t>(WeightSet::index(j, k))] = v;
            total += v;
        }
    }
    return total;
}

SensitivityResult sensitivity_case1(const std::vector<Trajectory>& ensemble, const Observable& phi,
                                    const std::vector<WeightSeries>& weights) {
    return sensitivity(ensemble, phi, weights, 1);
}

SensitivityResult sensitivity_case2(const std::vector<Trajectory>& ensemble, const Observable& phi,
                                    const std::vector<WeightSeries>& weights, int n_prime) {
    if (!weights.empty() && !weights.front().empty() && weights.front().front().n_prime != n_prime) {
        throw ConfigError("n' does not match the weight series");
    }
    return sensitivity(ensemble, phi, weights, n_prime);
}

} // namespace cnmws
