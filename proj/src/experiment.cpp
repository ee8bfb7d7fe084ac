#include "cnmws/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include "cnmws/errors.hpp"
#include "cnmws/harmonic_oracle.hpp"
#include "cnmws/malliavin.hpp"
#include "cnmws/observables.hpp"
#include "cnmws/parallel.hpp"

namespace cnmws {

namespace {

constexpr const char* kVersion = "0.1.0";

int resolve_threads(int threads) { return threads > 0 ? threads : default_threads(); }

std::vector<std::int64_t> record_grid(const Config& config, double dt, std::int64_t n_steps) {
    std::vector<std::int64_t> steps{0};
    const double rdt = config.real("estimator.record_dt");
    const auto stride = std::max<std::int64_t>(1, std::llround(rdt / dt));
    for (std::int64_t s = stride; s <= n_steps; s += stride) {
        steps.push_back(s);
    }
    for (const double t : config.reals("estimator.record_times")) {
        const auto s = std::llround(t / dt);
        if (s < 0 || s > n_steps) {
            throw ConfigError("estimator.record_times entry " + format_double(t) + " lies outside [0, t_max]");
        }
        steps.push_back(s);
    }
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    return steps;
}

std::vector<double> step_times(const std::vector<std::int64_t>& steps, double dt) {
    std::vector<double> t;
    t.reserve(steps.size());
    for (const auto s : steps) {
        t.push_back(static_cast<double>(s) * dt);
    }
    return t;
}

std::string term_suffix(int j, int k) { return "_p" + std::to_string(j) + std::to_string(k); }

void summarise_series(ExperimentOutput& out, const std::string& name, const EstimateSeries& s) {
    if (s.size() == 0) {
        return;
    }
    out.summary[name + ".final"] = s.estimate.back();
    out.summary[name + ".final_se"] = s.std_error.back();
}

// Largest |a - b| / sqrt(se_a^2 + se_b^2) over points with a positive
// combined error.
double max_abs_z(const EstimateSeries& a, const EstimateSeries& b) {
    double z = 0.0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        const double se = std::hypot(a.std_error[i], b.std_error[i]);
        if (se > 0.0) {
            z = std::max(z, std::abs(a.estimate[i] - b.estimate[i]) / se);
        }
    }
    return z;
}

// ---------------------------------------------------------------- harmonic

struct HarmonicPlan {
    std::vector<std::pair<std::string, PerturbationDescriptor>> perturbations;
    std::vector<std::string> observables;
    int pairs = 0;
    int n_prime = 1;
};

HarmonicPlan harmonic_plan(const Config& config, const StateSpaceRealization& r) {
    HarmonicPlan p;
    const std::string& pert = config.text("malliavin.perturbation");
    if (pert == "constant" || pert == "both") {
        p.perturbations.emplace_back("constant", ConstantForce{0});
    }
    if (pert == "linear" || pert == "both") {
        p.perturbations.emplace_back("linear", LinearForce{});
    }
    const std::string& obs = config.text("malliavin.observable");
    if (obs == "x" || obs == "both") {
        p.observables.emplace_back("x");
    }
    if (obs == "x2" || obs == "both") {
        p.observables.emplace_back("x2");
    }
    p.n_prime = weight_gains(r).n_prime;
    p.pairs = (p.n_prime + 1) * (p.n_prime + 2) / 2;
    return p;
}

struct HarmonicChunk {
    std::vector<SeriesAccumulator> series;
    SeriesAccumulator variance;
    Welford variance_mean;

    void merge(const HarmonicChunk& o) {
        for (std::size_t i = 0; i < series.size(); ++i) {
            series[i].merge(o.series[i]);
        }
        variance.merge(o.variance);
        variance_mean.merge(o.variance_mean);
    }
};

HarmonicChunk harmonic_chunk(const SimConfig& sim, const StateSpaceRealization& r, const HarmonicPlan& plan,
                             const std::vector<std::int64_t>& steps, std::size_t begin, std::size_t end) {
    const std::size_t points = steps.size();
    const std::size_t per = static_cast<std::size_t>(plan.pairs) + 1;
    const std::size_t n_series = plan.perturbations.size() * plan.observables.size() * per;
    HarmonicChunk out{std::vector<SeriesAccumulator>(n_series, SeriesAccumulator(points)), SeriesAccumulator(points),
                      {}};
    std::vector<PerturbationLift> lifts;
    for (const auto& [name, desc] : plan.perturbations) {
        lifts.emplace_back(desc, r);
    }
    const int np = plan.n_prime;
    std::vector<double> ring(static_cast<std::size_t>(np) + 1);
    std::vector<double> hist(static_cast<std::size_t>(np) + 1);
    std::vector<double> dphi(static_cast<std::size_t>(np) + 1);
    std::vector<double> terms(static_cast<std::size_t>(plan.pairs));
    std::vector<double> dw(static_cast<std::size_t>(r.p()));
    std::vector<double> xprev(1);

    for (std::size_t traj = begin; traj < end; ++traj) {
        NormalSource rng(make_stream(sim.seed, traj));
        Integrator integ(r, sim.force, sim.xi0, sim.dt);
        prepare_steady_state(sim, integ, rng);
        std::vector<WeightPropagator> props;
        props.reserve(lifts.size());
        for (const auto& lift : lifts) {
            props.emplace_back(lift, r, sim.dt);
            props.back().reset(integ.x());
        }
        double var_sum = 0.0;
        std::int64_t var_count = 0;
        std::size_t next = 0;
        const std::int64_t last = steps.back();
        for (std::int64_t s = 0; s <= last; ++s) {
            if (s > 0) {
                integ.draw(rng, dw);
                xprev[0] = integ.x()[0];
                integ.step(dw);
                for (auto& p : props) {
                    p.advance(xprev, integ.x(), dw, integ.velocity());
                }
            }
            ring[static_cast<std::size_t>(s % (np + 1))] = integ.x()[0];
            if (next >= points || steps[next] != s) {
                continue;
            }
            const double x = integ.x()[0];
            out.variance.add(next, x * x);
            if (s > 0) {
                var_sum += x * x;
                ++var_count;
            }
            std::size_t idx = 0;
            for (std::size_t pi = 0; pi < props.size(); ++pi) {
                for (const auto& obs : plan.observables) {
                    // History of Phi, oldest first; missing history repeats
                    // the earliest available value.
                    for (int l = 0; l <= np; ++l) {
                        const std::int64_t at = s - std::min<std::int64_t>(np - l, s);
                        const double v = ring[static_cast<std::size_t>(at % (np + 1))];
                        hist[static_cast<std::size_t>(l)] = obs == "x" ? v : v * v;
                    }
                    backward_derivatives(hist, sim.dt, dphi);
                    const double total = combine_terms(props[pi].weights(), dphi, terms);
                    out.series[idx++].add(next, total);
                    for (int t = 0; t < plan.pairs; ++t) {
                        out.series[idx++].add(next, terms[static_cast<std::size_t>(t)]);
                    }
                }
            }
            ++next;
        }
        if (var_count > 0) {
            out.variance_mean.add(var_sum / static_cast<double>(var_count));
        }
    }
    return out;
}

void add_oracle(ExperimentOutput& out, const Config& config, const SimConfig& sim, const HarmonicPlan& plan,
                const std::vector<double>& times) {
    for (const auto& [pname, desc] : plan.perturbations) {
        const PerturbationKind kind =
            std::holds_alternative<LinearForce>(desc) ? PerturbationKind::Linear : PerturbationKind::Constant;
        const HarmonicCase hc{config.real("dynamics.k"), sim.xi0, sim.spectrum, kind};
        for (const auto& obs : plan.observables) {
            const auto target = obs == "x" ? OracleObservable::X : OracleObservable::X2;
            const auto terms = moment_oracle_terms(hc, target, times);
            EstimateSeries total = terms.front();
            for (std::size_t t = 1; t < terms.size(); ++t) {
                for (std::size_t i = 0; i < total.size(); ++i) {
                    total.estimate[i] += terms[t].estimate[i];
                }
            }
            const std::string base = "oracle_" + pname + "_" + obs;
            out.add(base, total);
            for (int j = 0; j <= plan.n_prime; ++j) {
                for (int k = 0; k <= j; ++k) {
                    out.add(base + term_suffix(j, k), terms[static_cast<std::size_t>(WeightSet::index(j, k))]);
                }
            }
        }
    }
}

void add_harmonic_longtime(ExperimentOutput& out, const Config& config, const SimConfig& sim) {
    const double k = config.real("dynamics.k");
    const HarmonicCase hc{k, sim.xi0, sim.spectrum, PerturbationKind::Linear};
    out.summary["longtime.first_sensitivity"] = 1.0 / k;
    out.summary["longtime.second_sensitivity"] = second_sensitivity_longtime(hc);
    out.summary["longtime.variance"] = variance_longtime(hc);
}

ExperimentOutput run_harmonic(const Config& config, int threads) {
    ExperimentOutput out;
    SimConfig sim = sim_config_from(config);
    const StateSpaceRealization r = realize(sim.spectrum, 1);
    const HarmonicPlan plan = harmonic_plan(config, r);
    const auto steps = record_grid(config, sim.dt, sim.n_steps);
    const auto times = step_times(steps, sim.dt);
    const auto n_traj = static_cast<std::size_t>(config.integer("estimator.trajectories"));
    const auto chunk = static_cast<std::size_t>(config.integer("estimator.chunk"));

    HarmonicChunk acc = parallel_chunks<HarmonicChunk>(
        n_traj, chunk, threads,
        [&](std::size_t, std::size_t b, std::size_t e) { return harmonic_chunk(sim, r, plan, steps, b, e); },
        [](HarmonicChunk& into, const HarmonicChunk& from) { into.merge(from); });

    std::size_t idx = 0;
    for (const auto& [pname, desc] : plan.perturbations) {
        for (const auto& obs : plan.observables) {
            const std::string base = "sens_" + pname + "_" + obs;
            const EstimateSeries total = acc.series[idx++].finish(times);
            out.add(base, total);
            summarise_series(out, base, total);
            if (pname == "constant" && obs == "x") {
                out.add("chi", total);
            }
            for (int j = 0; j <= plan.n_prime; ++j) {
                for (int k = 0; k <= j; ++k) {
                    // Terms are stored in WeightSet::index order, which is
                    // this loop order.
                    const EstimateSeries term = acc.series[idx++].finish(times);
                    out.add(base + term_suffix(j, k), term);
                    summarise_series(out, base + term_suffix(j, k), term);
                }
            }
        }
    }
    const EstimateSeries var = acc.variance.finish(times);
    out.add("variance", var);
    out.summary["variance.time_average"] = acc.variance_mean.mean;
    out.summary["variance.time_average_se"] = acc.variance_mean.std_error();
    out.summary["n_prime"] = plan.n_prime;
    out.summary["trajectories"] = static_cast<double>(n_traj);
    add_harmonic_longtime(out, config, sim);

    const bool oracle = config.kind() == ExperimentKind::OracleCompare || config.flag("estimator.oracle");
    if (oracle) {
        add_oracle(out, config, sim, plan, times);
        for (const auto& [pname, desc] : plan.perturbations) {
            for (const auto& obs : plan.observables) {
                const std::string tail = pname + "_" + obs;
                out.summary["max_abs_z.oracle." + tail] = max_abs_z(out.get("sens_" + tail), out.get("oracle_" + tail));
                for (int j = 0; j <= plan.n_prime; ++j) {
                    for (int k = 0; k <= j; ++k) {
                        const std::string t = tail + term_suffix(j, k);
                        out.summary["max_abs_z.oracle." + t] = max_abs_z(out.get("sens_" + t), out.get("oracle_" + t));
                    }
                }
            }
        }
    }

    if (config.kind() == ExperimentKind::HarmonicSensitivity && config.flag("estimator.fd")) {
        FdOptions fo;
        fo.n_trajectories = config.integer("estimator.fd_trajectories");
        fo.record_steps = steps;
        fo.threads = threads;
        fo.chunk = chunk;
        for (const auto& [pname, desc] : plan.perturbations) {
            const bool linear = std::holds_alternative<LinearForce>(desc);
            sim.perturbation = desc;
            const double requested = config.real("estimator.fd_lambda");
            const double lambda = requested > 0.0 ? requested : default_fd_lambda(sim);
            const std::string obs = linear ? "x2" : "x";
            const Observable phi = linear ? Observable([](std::span<const double> x) { return x[0] * x[0]; })
                                          : Observable([](std::span<const double> x) { return x[0]; });
            const FdResult fd = finite_difference_sensitivity(sim, lambda, phi, fo);
            const std::string name = "fd_" + pname + "_" + obs;
            out.add(name, fd.slope);
            summarise_series(out, name, fd.slope);
            out.summary[name + ".lambda"] = fd.lambda;
            out.summary[name + ".halvings"] = fd.halvings;
            if (out.has("sens_" + pname + "_" + obs)) {
                out.summary["max_abs_z.fd." + pname + "_" + obs] = max_abs_z(out.get("sens_" + pname + "_" + obs), fd.slope);
            }
        }
    }
    return out;
}

// --------------------------------------------------------------------- IPS

struct IpsPlan {
    OriginPlan origins;
    std::vector<std::int64_t> fd_lags;
    std::int64_t fd_spacing = 0;
    std::int64_t fd_samples = 0;
    double lambda = 0.0;
    double fit_lo = 0.0;
    double fit_hi = 0.0;
};

struct IpsChunk {
    OriginEstimator est;
    SeriesAccumulator fd_full;
    SeriesAccumulator fd_half;
    SeriesAccumulator fd_gap;

    void merge(const IpsChunk& o) {
        est.merge(o.est);
        fd_full.merge(o.fd_full);
        fd_half.merge(o.fd_half);
        fd_gap.merge(o.fd_gap);
    }
};

struct FdSpawn {
    std::int64_t start;
    int component;
    double x0;
    std::vector<Integrator> copies;
    std::size_t next = 0;
};

IpsChunk ips_run(const SimConfig& sim, const StateSpaceRealization& r, const IpsPlan& plan, std::size_t run) {
    const int n = sim.components();
    const double box = std::get<ScreenedCoulomb>(sim.force).box;
    const PerturbationLift lift(PerCoordinate{}, r);
    WeightPropagator wp(lift, r, sim.dt);
    const std::size_t fd_points = plan.fd_lags.size();
    IpsChunk out{OriginEstimator(n, sim.dim, wp.n_prime(), sim.dt, plan.origins, box), SeriesAccumulator(fd_points),
                 SeriesAccumulator(fd_points), SeriesAccumulator(fd_points)};

    NormalSource rng(make_stream(sim.seed, run));
    Integrator integ(r, sim.force, sim.xi0, sim.dt);
    prepare_steady_state(sim, integ, rng);
    wp.reset(integ.x());
    out.est.begin_trajectory();
    out.est.observe(0, integ.x(), wp.weights());

    std::vector<double> dw(static_cast<std::size_t>(r.p()));
    std::vector<double> xprev(static_cast<std::size_t>(n));
    std::vector<FdSpawn> spawns;
    std::int64_t spawned = 0;
    const double lambdas[4] = {plan.lambda, -plan.lambda, 0.5 * plan.lambda, -0.5 * plan.lambda};

    for (std::int64_t s = 0; s <= sim.n_steps; ++s) {
        if (s > 0) {
            integ.draw(rng, dw);
            std::copy(integ.x().begin(), integ.x().end(), xprev.begin());
            integ.step(dw);
            wp.advance(xprev, integ.x(), dw, integ.velocity());
            out.est.observe(s, integ.x(), wp.weights());
            for (auto& sp : spawns) {
                for (auto& c : sp.copies) {
                    c.step(dw);
                }
            }
        }
        // Finite-difference samples started at this step run on the same
        // increments as the unperturbed path from here on.
        if (plan.fd_samples > 0 && spawned < plan.fd_samples && s % plan.fd_spacing == 0 &&
            s + plan.fd_lags.back() <= sim.n_steps) {
            FdSpawn sp{s, static_cast<int>((static_cast<std::int64_t>(run) * plan.fd_samples + spawned) % n),
                       integ.x()[static_cast<std::size_t>((static_cast<std::int64_t>(run) * plan.fd_samples + spawned) % n)],
                       {}, 0};
            for (const double l : lambdas) {
                sp.copies.push_back(integ);
                sp.copies.back().set_perturbation(ConstantForce{sp.component}, l);
            }
            spawns.push_back(std::move(sp));
            ++spawned;
        }
        for (auto& sp : spawns) {
            while (sp.next < fd_points && sp.start + plan.fd_lags[sp.next] == s) {
                const auto c = static_cast<std::size_t>(sp.component);
                const double full = (sp.copies[0].x()[c] - sp.copies[1].x()[c]) / (2.0 * plan.lambda);
                const double half = (sp.copies[2].x()[c] - sp.copies[3].x()[c]) / plan.lambda;
                out.fd_full.add(sp.next, full);
                out.fd_half.add(sp.next, half);
                out.fd_gap.add(sp.next, full - half);
                ++sp.next;
            }
        }
        spawns.erase(std::remove_if(spawns.begin(), spawns.end(), [&](const FdSpawn& sp) { return sp.next >= fd_points; }),
                     spawns.end());
    }
    out.est.end_trajectory();
    return out;
}

// Batch estimate of sum_window v / sum_window t and its error.
std::pair<double, double> window_slope(const std::vector<BatchSample>& batches, const std::vector<double>& lags,
                                       double lo, double hi, bool use_msd, double scale) {
    Welford w;
    double tsum = 0.0;
    for (const double t : lags) {
        if (t >= lo && t <= hi) {
            tsum += t;
        }
    }
    for (const auto& b : batches) {
        double s = 0.0;
        bool complete = true;
        for (std::size_t i = 0; i < lags.size(); ++i) {
            if (lags[i] < lo || lags[i] > hi) {
                continue;
            }
            const double v = use_msd ? b.msd[i] : b.chi[i];
            if (std::isnan(v)) {
                complete = false;
                break;
            }
            s += v;
        }
        if (complete) {
            w.add(s / (tsum * scale));
        }
    }
    return {w.mean, w.std_error()};
}

ExperimentOutput run_ips(const Config& config, int threads) {
    ExperimentOutput out;
    const SimConfig sim = sim_config_from(config);
    const StateSpaceRealization r = realize(sim.spectrum, sim.components());
    const double dt = sim.dt;
    const auto& coulomb = std::get<ScreenedCoulomb>(sim.force);

    IpsPlan plan;
    plan.fit_lo = config.real("estimator.fit_lo");
    plan.fit_hi = config.real("estimator.fit_hi");
    if (plan.fit_lo == 0.0 && plan.fit_hi == 0.0) {
        const double scale =
            std::max(sim.spectrum.tau_c, sim.xi0 * coulomb.sigma_v * coulomb.sigma_v / sim.spectrum.t_eff);
        plan.fit_lo = 5.0 * scale;
        plan.fit_hi = 10.0 * scale;
    }
    double max_lag = config.real("estimator.max_lag");
    if (max_lag <= 0.0) {
        max_lag = plan.fit_hi;
    }
    const double lag_dt = config.real("estimator.lag_dt");
    std::vector<std::int64_t> lags;
    for (std::int64_t i = 1; static_cast<double>(i) * lag_dt <= max_lag * (1.0 + 1e-12); ++i) {
        lags.push_back(std::llround(static_cast<double>(i) * lag_dt / dt));
    }
    const bool fd = config.flag("estimator.fd") && config.integer("estimator.fd_samples") > 0;
    if (fd) {
        for (const double t : config.reals("estimator.fd_lags")) {
            if (!(t > 0.0) || t > config.real("estimator.fd_window") * (1.0 + 1e-12)) {
                throw ConfigError("estimator.fd_lags must lie in (0, fd_window]");
            }
            plan.fd_lags.push_back(std::llround(t / dt));
        }
        std::sort(plan.fd_lags.begin(), plan.fd_lags.end());
        plan.fd_lags.erase(std::unique(plan.fd_lags.begin(), plan.fd_lags.end()), plan.fd_lags.end());
        if (plan.fd_lags.empty()) {
            throw ConfigError("estimator.fd_lags is empty");
        }
        lags.insert(lags.end(), plan.fd_lags.begin(), plan.fd_lags.end());
        plan.fd_samples = config.integer("estimator.fd_samples");
        plan.fd_spacing = std::llround(std::max(config.real("estimator.fd_window"),
                                                config.real("estimator.origin_spacing")) / dt);
        SimConfig with = sim;
        with.perturbation = ConstantForce{0};
        const double requested = config.real("estimator.fd_lambda");
        plan.lambda = requested > 0.0 ? requested : default_fd_lambda(with);
    }
    std::sort(lags.begin(), lags.end());
    lags.erase(std::unique(lags.begin(), lags.end()), lags.end());
    plan.origins.first = 0;
    plan.origins.spacing = std::max<std::int64_t>(1, std::llround(config.real("estimator.origin_spacing") / dt));
    plan.origins.lags = lags;
    plan.origins.batch_size = config.integer("estimator.batch_origins");
    if (lags.back() > sim.n_steps) {
        throw ConfigError("largest lag exceeds dynamics.t_max");
    }
    if (config.real("estimator.origin_spacing") < relaxation_time(sim)) {
        out.warnings.push_back("origins are closer than the relaxation time; errors rest on the batch means");
    }

    const auto runs = static_cast<std::size_t>(config.integer("estimator.runs"));
    IpsChunk acc = parallel_chunks<IpsChunk>(
        runs, 1, threads, [&](std::size_t, std::size_t b, std::size_t) { return ips_run(sim, r, plan, b); },
        [](IpsChunk& into, const IpsChunk& from) { into.merge(from); });

    const EstimateSeries chi = acc.est.chi();
    const EstimateSeries msd_series = acc.est.msd();
    out.add("chi", chi);
    out.add("msd", msd_series);
    const auto lag_times = acc.est.lag_times();
    const auto& batches = acc.est.batches();
    out.summary["origins"] = static_cast<double>(acc.est.origins_used());
    out.summary["batches"] = static_cast<double>(batches.size());
    out.summary["fit_lo"] = plan.fit_lo;
    out.summary["fit_hi"] = plan.fit_hi;

    const EinsteinResult te = einstein_temperature(batches, lag_times, plan.fit_lo, plan.fit_hi, sim.dim);
    out.summary["t_eff_e"] = te.value;
    out.summary["t_eff_e_se"] = te.std_error;
    out.summary["t_eff_e_ratio"] = te.value / sim.spectrum.t_eff;
    out.summary["t_eff_e_ratio_se"] = te.std_error / sim.spectrum.t_eff;
    out.warnings.insert(out.warnings.end(), te.warnings.begin(), te.warnings.end());
    const auto [mu, mu_se] = window_slope(batches, lag_times, plan.fit_lo, plan.fit_hi, false, 1.0);
    const auto [dsd, dsd_se] = window_slope(batches, lag_times, plan.fit_lo, plan.fit_hi, true, 2.0 * sim.dim);
    out.summary["mu"] = mu;
    out.summary["mu_se"] = mu_se;
    out.summary["d_sd"] = dsd;
    out.summary["d_sd_se"] = dsd_se;

    if (fd) {
        std::vector<double> fd_times = step_times(plan.fd_lags, dt);
        const EstimateSeries fd_chi = acc.fd_full.finish(fd_times);
        out.add("fd_chi", fd_chi);
        out.summary["fd_lambda"] = plan.lambda;
        out.summary["fd_samples"] = fd_chi.size() ? static_cast<double>(fd_chi.n_samples.front()) : 0.0;
        bool nonlinear = false;
        double z = 0.0;
        for (std::size_t i = 0; i < fd_chi.size(); ++i) {
            if (fd_nonlinear(acc.fd_gap.at(i), acc.fd_full.at(i))) {
                nonlinear = true;
            }
            const std::size_t j = chi.index_near(fd_chi.t[i]);
            const double se = std::hypot(chi.std_error[j], fd_chi.std_error[i]);
            if (se > 0.0) {
                z = std::max(z, std::abs(chi.estimate[j] - fd_chi.estimate[i]) / se);
            }
        }
        out.summary["max_abs_z.fd.chi"] = z;
        if (nonlinear) {
            out.warnings.push_back("finite-difference slope is biased by the nonlinear response; "
                                   "lower estimator.fd_lambda");
        }
    }
    return out;
}

// ------------------------------------------------------- noise validation

struct NoiseChunk {
    SeriesAccumulator acc;
    void merge(const NoiseChunk& o) { acc.merge(o.acc); }
};

NoiseChunk noise_chunk(const SimConfig& sim, const StateSpaceRealization& r, const std::vector<std::int64_t>& lags,
                       std::int64_t steps, std::int64_t burn, std::size_t begin, std::size_t end) {
    NoiseChunk out{SeriesAccumulator(lags.size())};
    const NoiseBlock& blk = r.block();
    const std::int64_t span = lags.back() + 1;
    std::vector<double> ring(static_cast<std::size_t>(span));
    std::vector<double> sums(lags.size());
    std::vector<double> dw(static_cast<std::size_t>(r.p()));
    for (std::size_t comp = begin; comp < end; ++comp) {
        NormalSource rng(make_stream(sim.seed, comp));
        Integrator integ(r, FreeForce{}, sim.xi0, sim.dt);
        integ.init_noise_stationary(rng);
        for (std::int64_t s = 0; s < burn; ++s) {
            integ.draw(rng, dw);
            integ.step(dw);
        }
        std::fill(sums.begin(), sums.end(), 0.0);
        std::int64_t count = 0;
        for (std::int64_t s = 0; s < steps; ++s) {
            if (s > 0) {
                integ.draw(rng, dw);
                integ.step(dw);
            }
            double f = 0.0;
            for (Eigen::Index q = 0; q < blk.c.cols(); ++q) {
                f += blk.c(0, q) * integ.y()[static_cast<std::size_t>(q)];
            }
            ring[static_cast<std::size_t>(s % span)] = f;
            if (s + 1 < span) {
                continue;
            }
            for (std::size_t i = 0; i < lags.size(); ++i) {
                sums[i] += f * ring[static_cast<std::size_t>((s - lags[i]) % span)];
            }
            ++count;
        }
        for (std::size_t i = 0; i < lags.size(); ++i) {
            out.acc.add(i, sums[i] / static_cast<double>(count));
        }
    }
    return out;
}

// Correlation model of the configured family with free effective temperature
// and correlation time; the spectral shape (nu, or the rational ratios) is
// held at its configured value. Parameters are log t_eff and log tau_c.
struct FitModel {
    SpectrumModel base;

    [[nodiscard]] static int size() { return 2; }

    [[nodiscard]] Eigen::VectorXd start(double bias) const {
        Eigen::VectorXd p(2);
        p << std::log(base.t_eff * bias), std::log(base.tau_c * bias);
        return p;
    }

    [[nodiscard]] SpectrumModel model(const Eigen::VectorXd& p) const {
        FamilyOptions opt;
        opt.nu = base.nu > 0.0 ? base.nu : 1.5;
        opt.terms = base.terms;
        opt.rational_terms = std::max<int>(1, static_cast<int>(base.terms.size()));
        return calibrate(base.family, base.xi0, std::exp(p(0)), std::exp(p(1)), opt);
    }
};

struct FitFunctor {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    const FitModel* fit;
    const EstimateSeries* data;

    [[nodiscard]] int inputs() const { return fit->size(); }
    [[nodiscard]] int values() const { return static_cast<int>(data->size()); }

    int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
        const SpectrumModel m = fit->model(p);
        for (std::size_t i = 0; i < data->size(); ++i) {
            const double se = data->std_error[i] > 0.0 ? data->std_error[i] : 1.0;
            r(static_cast<Eigen::Index>(i)) = (correlation(m, data->t[i]) - data->estimate[i]) / se;
        }
        return 0;
    }
};

ExperimentOutput run_noise(const Config& config, int threads) {
    ExperimentOutput out;
    SimConfig sim = sim_config_from(config);
    const SpectrumModel& model = sim.spectrum;
    const StateSpaceRealization r = realize(model, 1);
    const double dt = sim.dt;
    double max_lag = config.real("estimator.max_lag");
    if (max_lag <= 0.0) {
        max_lag = 5.0 * model.tau_c;
    }
    double sim_time = config.real("estimator.sim_time");
    if (sim_time <= 0.0) {
        sim_time = 100.0 * model.tau_c;
    }
    const auto points = config.integer("estimator.lag_points");
    std::vector<std::int64_t> lags;
    for (std::int64_t i = 0; i < points; ++i) {
        lags.push_back(std::llround(static_cast<double>(i) * max_lag / static_cast<double>(points - 1) / dt));
    }
    lags.erase(std::unique(lags.begin(), lags.end()), lags.end());
    const std::int64_t steps = std::llround(sim_time / dt) + 1;
    if (steps <= lags.back()) {
        throw ConfigError("estimator.sim_time must exceed the largest lag");
    }
    const std::int64_t burn = std::llround(10.0 * model.tau_c / dt);
    const auto comps = static_cast<std::size_t>(config.integer("estimator.components"));
    const auto chunk = static_cast<std::size_t>(config.integer("estimator.chunk"));
    NoiseChunk acc = parallel_chunks<NoiseChunk>(
        comps, std::max<std::size_t>(1, chunk / 16), threads,
        [&](std::size_t, std::size_t b, std::size_t e) { return noise_chunk(sim, r, lags, steps, burn, b, e); },
        [](NoiseChunk& into, const NoiseChunk& from) { into.merge(from); });

    const auto times = step_times(lags, dt);
    const EstimateSeries emp = acc.acc.finish(times);
    EstimateSeries analytic;
    for (const double t : times) {
        analytic.push(t, correlation(model, t), 0.0, 0);
    }
    out.add("autocov", emp);
    out.add("correlation_model", analytic);

    FitModel fm{model};
    FitFunctor fun{&fm, &emp};
    Eigen::NumericalDiff<FitFunctor> nd(fun);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<FitFunctor>> lm(nd);
    Eigen::VectorXd p = fm.start(1.2);
    const auto status = lm.minimize(p);
    const SpectrumModel fitted = fm.model(p);
    EstimateSeries fit_curve;
    for (const double t : times) {
        fit_curve.push(t, correlation(fitted, t), 0.0, 0);
    }
    out.add("autocov_fit", fit_curve);

    const double c0_target = 2.0 * model.xi0 * model.t_eff;
    const double c0_fit = psd_value(fitted, 0.0);
    out.summary["psd0.target"] = c0_target;
    out.summary["psd0.fit"] = c0_fit;
    out.summary["psd0.rel_error"] = std::abs(c0_fit / c0_target - 1.0);
    out.summary["tau_c.target"] = model.tau_c;
    out.summary["tau_c.fit"] = rms_correlation_time(fitted);
    out.summary["tau_c.rel_error"] = std::abs(rms_correlation_time(fitted) / model.tau_c - 1.0);
    out.summary["max_abs_z.autocov"] = max_abs_z(emp, analytic);
    out.summary["fit.status"] = static_cast<double>(status);
    out.summary["components"] = static_cast<double>(comps);
    out.notes["fitted_spectrum"] = describe(fitted);
    if (status != Eigen::LevenbergMarquardtSpace::RelativeReductionTooSmall &&
        status != Eigen::LevenbergMarquardtSpace::RelativeErrorTooSmall &&
        status != Eigen::LevenbergMarquardtSpace::RelativeErrorAndReductionTooSmall &&
        status != Eigen::LevenbergMarquardtSpace::CosinusTooSmall) {
        out.warnings.push_back("correlation fit did not report convergence (status " +
                               std::to_string(static_cast<int>(status)) + ")");
    }
    return out;
}

std::string utc_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

} // namespace

const EstimateSeries& ExperimentOutput::get(const std::string& name) const {
    for (const auto& [n, s] : series) {
        if (n == name) {
            return s;
        }
    }
    throw ConfigError("experiment produced no series named " + name);
}

bool ExperimentOutput::has(const std::string& name) const {
    return std::any_of(series.begin(), series.end(), [&](const auto& p) { return p.first == name; });
}

ExperimentOutput compute_experiment(const Config& config, int threads) {
    threads = resolve_threads(threads);
    ExperimentOutput out;
    switch (config.kind()) {
    case ExperimentKind::HarmonicSensitivity:
    case ExperimentKind::OracleCompare:
        out = run_harmonic(config, threads);
        break;
    case ExperimentKind::IpsMobility:
        out = run_ips(config, threads);
        break;
    case ExperimentKind::NoiseValidation:
        out = run_noise(config, threads);
        break;
    }
    out.warnings.insert(out.warnings.begin(), config.warnings().begin(), config.warnings().end());
    return out;
}

ExperimentOutput compute_oracle_curves(const Config& config) {
    if (config.kind() != ExperimentKind::HarmonicSensitivity && config.kind() != ExperimentKind::OracleCompare) {
        throw ConfigError("analytic curves exist only for the harmonic experiments");
    }
    ExperimentOutput out;
    const SimConfig sim = sim_config_from(config);
    const StateSpaceRealization r = realize(sim.spectrum, 1);
    const HarmonicPlan plan = harmonic_plan(config, r);
    const auto times = step_times(record_grid(config, sim.dt, sim.n_steps), sim.dt);
    add_oracle(out, config, sim, plan, times);
    EstimateSeries chi;
    for (const double t : times) {
        chi.push(t, chi_analytic(config.real("dynamics.k"), sim.xi0, t), 0.0, 0);
    }
    out.add("chi_analytic", chi);
    add_harmonic_longtime(out, config, sim);
    return out;
}

void write_experiment(const Config& config, const ExperimentOutput& output, const std::filesystem::path& dir,
                      double wall_seconds, int threads) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    }
    for (const auto& [name, s] : output.series) {
        write_series_csv(dir / (name + ".csv"), s);
    }
    nlohmann::ordered_json summary;
    summary["experiment"] = std::string(to_string(config.kind()));
    for (const auto& [k, v] : output.summary) {
        summary["values"][k] = std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
    }
    for (const auto& [k, v] : output.notes) {
        summary["notes"][k] = v;
    }
    summary["warnings"] = output.warnings;
    write_text(dir / "summary.json", summary.dump(2) + "\n");

    nlohmann::ordered_json manifest;
    manifest["config_hash"] = config.hash();
    manifest["seed"] = config.seed();
    manifest["version"] = kVersion;
    manifest["experiment"] = std::string(to_string(config.kind()));
    manifest["threads"] = resolve_threads(threads);
    manifest["wall_clock_seconds"] = wall_seconds;
    manifest["finished_utc"] = utc_now();
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const auto& [name, s] : output.series) {
        files.push_back(name + ".csv");
    }
    manifest["files"] = files;
    manifest["config"] = config.values();
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<std::string> calibration_report(const Config& config) {
    const SpectrumModel model = spectrum_from(config);
    std::vector<std::string> lines;
    std::istringstream is(describe(model));
    std::string line;
    while (std::getline(is, line)) {
        lines.push_back(line);
    }
    const StateSpaceRealization r = realize(model, 1);
    std::ostringstream os;
    os.precision(17);
    os << "realization = " << (r.form() == RealizationForm::Brunowski ? "brunowski" : "nonsingular")
       << " (q = " << r.block_q() << ", p = " << r.block_p() << " per component)";
    lines.push_back(os.str());
    os.str("");
    os << "rms_correlation_time = " << rms_correlation_time(model);
    lines.push_back(os.str());
    return lines;
}

const char* library_version() { return kVersion; }

} // namespace cnmws
