#include "cnmws/forces.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cnmws/errors.hpp"

namespace cnmws {

namespace {

double minimum_image(double d, double box) { return d - box * std::nearbyint(d / box); }

int wrap_cell(double x, double box, int cells) {
    double u = x / box;
    u -= std::floor(u);
    int c = static_cast<int>(u * cells);
    return std::clamp(c, 0, cells - 1);
}

} // namespace

double box_from_density(int n_particles, double sigma_v, double density) {
    if (n_particles < 1 || !(density > 0.0) || !(sigma_v > 0.0)) {
        throw ConfigError("box_from_density needs positive particle count, sigma and density");
    }
    return sigma_v * std::cbrt(static_cast<double>(n_particles) / density);
}

double coulomb_potential(const ScreenedCoulomb& p, double r) {
    return p.a_v * std::exp(-p.kappa * (r - p.sigma_v)) / r;
}

double coulomb_pair_force(const ScreenedCoulomb& p, double r) {
    return p.a_v * std::exp(-p.kappa * (r - p.sigma_v)) * (p.kappa * r + 1.0) / (r * r);
}

CoulombEvaluator::CoulombEvaluator(ScreenedCoulomb params) : p_(params) {
    const double rc = p_.effective_cutoff();
    if (!(p_.box > 0.0)) {
        throw ConfigError("screened Coulomb force needs a positive box edge");
    }
    if (rc > 0.5 * p_.box) {
        throw ConfigError("cutoff " + std::to_string(rc) + " exceeds half the box edge " +
                          std::to_string(0.5 * p_.box));
    }
    rc2_ = rc * rc;
    const int cells = static_cast<int>(std::floor(p_.box / rc));
    cells_ = (p_.use_cell_list && cells >= 3) ? cells : 0;
}

void CoulombEvaluator::add_pair(std::span<const double> x, std::span<double> f, std::size_t i, std::size_t j) const {
    const double dx = minimum_image(x[3 * i] - x[3 * j], p_.box);
    const double dy = minimum_image(x[3 * i + 1] - x[3 * j + 1], p_.box);
    const double dz = minimum_image(x[3 * i + 2] - x[3 * j + 2], p_.box);
    const double r2 = dx * dx + dy * dy + dz * dz;
    if (r2 >= rc2_) {
        return;
    }
    const double r = std::sqrt(r2);
    if (r < 1e-9 * p_.sigma_v) {
        throw NumericError("particles " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
    }
    const double s = coulomb_pair_force(p_, r) / r;
    f[3 * i] += s * dx;
    f[3 * i + 1] += s * dy;
    f[3 * i + 2] += s * dz;
    f[3 * j] -= s * dx;
    f[3 * j + 1] -= s * dy;
    f[3 * j + 2] -= s * dz;
}

void CoulombEvaluator::compute_all_pairs(std::span<const double> x, std::span<double> f) {
    std::fill(f.begin(), f.end(), 0.0);
    const std::size_t n = x.size() / 3;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            add_pair(x, f, i, j);
        }
    }
}

// Same pair order as compute_all_pairs: for each i the partners j > i are
// visited in ascending order, so every particle sees its contributions in
// ascending partner index.
void CoulombEvaluator::compute_cells(std::span<const double> x, std::span<double> f) {
    std::fill(f.begin(), f.end(), 0.0);
    const int n = static_cast<int>(x.size() / 3);
    const int m = cells_;
    const int total = m * m * m;

    cell_of_.resize(static_cast<std::size_t>(n));
    cell_start_.assign(static_cast<std::size_t>(total) + 1, 0);
    cell_items_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cx = wrap_cell(x[3 * i], p_.box, m);
        const int cy = wrap_cell(x[3 * i + 1], p_.box, m);
        const int cz = wrap_cell(x[3 * i + 2], p_.box, m);
        const int c = (cx * m + cy) * m + cz;
        cell_of_[static_cast<std::size_t>(i)] = c;
        ++cell_start_[static_cast<std::size_t>(c) + 1];
    }
    for (int c = 0; c < total; ++c) {
        cell_start_[static_cast<std::size_t>(c) + 1] += cell_start_[static_cast<std::size_t>(c)];
    }
    {
        std::vector<int> fill(cell_start_.begin(), cell_start_.end() - 1);
        for (int i = 0; i < n; ++i) {
            cell_items_[static_cast<std::size_t>(fill[static_cast<std::size_t>(cell_of_[static_cast<std::size_t>(i)])]++)] = i;
        }
    }

    for (int i = 0; i < n; ++i) {
        const int c = cell_of_[static_cast<std::size_t>(i)];
        const int cx = c / (m * m);
        const int cy = (c / m) % m;
        const int cz = c % m;
        candidates_.clear();
        for (int ox = -1; ox <= 1; ++ox) {
            for (int oy = -1; oy <= 1; ++oy) {
                for (int oz = -1; oz <= 1; ++oz) {
                    const int nc = (((cx + ox + m) % m) * m + (cy + oy + m) % m) * m + (cz + oz + m) % m;
                    for (int s = cell_start_[static_cast<std::size_t>(nc)]; s < cell_start_[static_cast<std::size_t>(nc) + 1]; ++s) {
                        const int j = cell_items_[static_cast<std::size_t>(s)];
                        if (j > i) {
                            candidates_.push_back(j);
                        }
                    }
                }
            }
        }
        std::sort(candidates_.begin(), candidates_.end());
        for (const int j : candidates_) {
            add_pair(x, f, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
    }
}

void CoulombEvaluator::compute(std::span<const double> x, std::span<double> f) {
    if (x.size() % 3 != 0 || f.size() != x.size()) {
        throw ConfigError("screened Coulomb force needs 3D particle-major positions");
    }
    if (cells_ > 0) {
        compute_cells(x, f);
    } else {
        compute_all_pairs(x, f);
    }
}

std::vector<double> coulomb_forces(std::span<const double> positions, const ScreenedCoulomb& params) {
    CoulombEvaluator eval(params);
    std::vector<double> f(positions.size());
    eval.compute(positions, f);
    return f;
}

void evaluate_force(const ForceField& field, std::span<const double> x, std::span<double> f,
                    CoulombEvaluator* coulomb) {
    if (std::holds_alternative<FreeForce>(field)) {
        std::fill(f.begin(), f.end(), 0.0);
    } else if (const auto* h = std::get_if<HarmonicForce>(&field)) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            f[i] = -h->k * x[i];
        }
    } else {
        coulomb->compute(x, f);
    }
}

double stiffness_scale(const ForceField& field) {
    if (const auto* h = std::get_if<HarmonicForce>(&field)) {
        return h->k;
    }
    if (const auto* c = std::get_if<ScreenedCoulomb>(&field)) {
        // V'' at a typical contact distance where V has decayed by e^-6.
        const double r = c->sigma_v + 6.0 / c->kappa;
        const double kr = c->kappa * r;
        return c->a_v * std::exp(-c->kappa * (r - c->sigma_v)) * (kr * kr + 2.0 * kr + 2.0) / (r * r * r);
    }
    return 0.0;
}

} // namespace cnmws
