#pragma once

#include <array>
#include <span>
#include <variant>
#include <vector>

namespace cnmws {

struct FreeForce {};

// F(x) = -k x componentwise.
struct HarmonicForce {
    double k = 1.0;
};

// Pair potential V(r) = a_v exp(-kappa (r - sigma_v)) / r in a periodic cubic
// box. Positions are particle-major, x[3 i + alpha], and may be unwrapped.
struct ScreenedCoulomb {
    double a_v = 475.0;
    double kappa = 24.0;
    double sigma_v = 1.0;
    double cutoff = 0.0;  // <= 0 selects sigma_v + 10 / kappa
    double box = 0.0;     // edge length
    bool use_cell_list = true;

    [[nodiscard]] double effective_cutoff() const { return cutoff > 0.0 ? cutoff : sigma_v + 10.0 / kappa; }
};

using ForceField = std::variant<FreeForce, HarmonicForce, ScreenedCoulomb>;

// Box edge giving number density N sigma^3 / V = density.
[[nodiscard]] double box_from_density(int n_particles, double sigma_v, double density);

// Magnitude of the pair force -V'(r).
[[nodiscard]] double coulomb_pair_force(const ScreenedCoulomb& p, double r);
[[nodiscard]] double coulomb_potential(const ScreenedCoulomb& p, double r);

// Reusable evaluator holding cell-list buffers. Each particle accumulates its
// pair contributions in ascending partner index whichever search is used, so
// the cell list and the all-pairs loop give bitwise identical forces.
class CoulombEvaluator {
public:
    explicit CoulombEvaluator(ScreenedCoulomb params);

    void compute(std::span<const double> x, std::span<double> f);
    // Forces from the O(N^2) loop regardless of the cell-list setting.
    void compute_all_pairs(std::span<const double> x, std::span<double> f);

    [[nodiscard]] const ScreenedCoulomb& params() const { return p_; }
    [[nodiscard]] int cells_per_side() const { return cells_; }

private:
    void add_pair(std::span<const double> x, std::span<double> f, std::size_t i, std::size_t j) const;
    void compute_cells(std::span<const double> x, std::span<double> f);

    ScreenedCoulomb p_;
    double rc2_;
    int cells_ = 0;
    std::vector<int> cell_of_;
    std::vector<int> cell_start_;
    std::vector<int> cell_items_;
    std::vector<int> candidates_;
};

// All-in-one evaluation; allocates an evaluator per call.
[[nodiscard]] std::vector<double> coulomb_forces(std::span<const double> positions, const ScreenedCoulomb& params);

// Force evaluation for any field. CoulombEvaluator is only used (and must be
// non-null) for ScreenedCoulomb.
void evaluate_force(const ForceField& field, std::span<const double> x, std::span<double> f,
                    CoulombEvaluator* coulomb);

// Largest curvature scale k_max used by the dt warning; 0 when unknown.
[[nodiscard]] double stiffness_scale(const ForceField& field);

} // namespace cnmws
