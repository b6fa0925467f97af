#pragma once

#include "dtb/common.hpp"
#include "dtb/field.hpp"
#include "dtb/linalg.hpp"
#include "dtb/netfam.hpp"

#include <memory>
#include <vector>

namespace dtb {

/// Strictly increasing parameter indices drawn without replacement.
struct IndexSet {
    std::vector<int> indices;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(indices.size()); }
    std::uint64_t digest() const {
        return fnv1a(indices.data(), indices.size() * sizeof(int));
    }
};

IndexSet select_subspace(int m, int l, std::uint64_t seed);

/// Scatters subspace coefficients into a full-length parameter direction.
Vector embed_direction(const IndexSet& sub, const Vector& alpha, int m);

struct DtbApprox {
    netfam::ParamsPtr theta;
    IndexSet subspace;
    Vector alpha;
    double residual_rel = 0.0;
};

/// Fit by normal equations: alpha = G^+ p with G = J^T J / n, p = J^T g / n.
DtbApprox approx_gform(const netfam::NetworkSpec& spec, netfam::ParamsPtr theta,
                       const IndexSet& subspace, const Vector& target_values, const Matrix& samples,
                       const linalg::LstsqOptions& opts);

/// Fit by truncated SVD on the sample Jacobian: alpha = Jac^+ g.
DtbApprox approx_jform(const netfam::NetworkSpec& spec, netfam::ParamsPtr theta,
                       const IndexSet& subspace, const Vector& target_values, const Matrix& samples,
                       const linalg::LstsqOptions& opts);

/// Tangent-feature expansion of a fit evaluated at new points.
Vector project(const DtbApprox& approx, const netfam::NetworkSpec& spec, const Matrix& points);

/// One accumulated time step: u gains h * sum_c features(theta, sub_c) . alpha_c.
struct DtbStep {
    netfam::ParamsPtr theta;
    struct Component {
        IndexSet subspace;
        Vector alpha;
    };
    std::vector<Component> comps;
    double residual_rel = 0.0;
};

enum class EvalWhat { value, grad, laplacian };

/// The accumulated solution u^k(z) = phi(z) + h * sum over steps of tangent
/// contributions. Evaluation contracts each step with its coefficients
/// (a parameter-directional pass), grouping consecutive steps that share the
/// same parameter vector so fixed-basis runs cost one pass regardless of k.
class DtbSet {
public:
    DtbSet(double h, FieldPtr initial, netfam::NetworkSpec spec);

    void push(DtbStep step) { steps_.push_back(std::move(step)); }
    const std::vector<DtbStep>& steps() const { return steps_; }
    double h() const { return h_; }
    const netfam::NetworkSpec& spec() const { return spec_; }
    const FieldPtr& initial() const { return initial_; }

    struct Batch {
        Vector value;
        Matrix grad;
        Vector lap;
    };
    /// Value (+ optional gradient/Laplacian) at points; exact linearity over steps.
    Batch eval(const Matrix& points, bool with_derivs) const;
    Vector eval_what(const Matrix& points, EvalWhat what, int grad_axis = 0) const;

    /// JSON-lines export: one record per step; parameter checkpoints are
    /// written beside it whenever theta changes.
    void save(const std::string& directory) const;
    static DtbSet load(const std::string& directory, FieldPtr initial);

private:
    double h_;
    FieldPtr initial_;
    netfam::NetworkSpec spec_;
    std::vector<DtbStep> steps_;
};

}  // namespace dtb
