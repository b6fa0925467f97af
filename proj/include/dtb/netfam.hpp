#pragma once

#include "dtb/common.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dtb::netfam {

enum class Family { mlp, periodic_mlp, residual, mmnn_lite };
enum class Activation { tanh_fn, sin_fn, relu_smooth };
enum class InitScheme { he_normal, small_uniform };

/// Per-coordinate cosine features cos(k_j*pi*z_i + psi_ij), j = 0..F-1.
/// Output dimension d*F; feature (i, j) lives at row i*F + j. Integer
/// frequency multipliers keep the embedding exactly 2-periodic; max_frequency
/// = 1 recovers the plain phase bank. The phases are part of the network
/// specification, not of the parameter vector. Empty phases means the
/// default psi_ij = 2*pi*j/F.
struct PeriodicEmbeddingSpec {
    int per_dim_features = 40;
    std::vector<double> phases;
    int max_frequency = 1;  // feature j uses frequency 1 + (j mod max_frequency)

    double phase(int coord, int j) const {
        if (phases.empty()) return 2.0 * M_PI * j / per_dim_features;
        return phases[static_cast<std::size_t>(coord) * per_dim_features + j];
    }
    double frequency(int j) const { return 1 + (j % std::max(1, max_frequency)); }
};

struct NetworkSpec {
    Family family = Family::mlp;
    int input_dim = 1;
    int output_dim = 1;
    std::vector<int> widths;
    Activation activation = Activation::tanh_fn;
    std::optional<PeriodicEmbeddingSpec> embedding;
    bool last_layer_bias = false;
    int mmnn_rank = 16;  // bottleneck rank of mmnn_lite hidden layers
};

struct ParamVec {
    Vector v;
};
using ParamsPtr = std::shared_ptr<const ParamVec>;

/// Restricted tangent features evaluated over a sample batch.
/// Rows are sample-major: row j*q + c is sample j, output component c.
struct TangentBlock {
    Matrix features;                    // (n*q) x l
    std::vector<Matrix> spatial_grads;  // d entries of (n*q) x l when requested
    Matrix spatial_laplacians;          // (n*q) x l when requested, else 0 x 0
    double eval_ms = 0.0;
    std::uint64_t backward_passes = 0;
};

struct SpaceDerivs {
    Matrix values;  // n x q
    Matrix grads;   // n x d (q = 1 only)
    Vector laps;    // n     (q = 1 only)
};

struct RefitOptions {
    int iters = 1000;
    double step = 1e-3;
    int batch = 256;
    double momentum = 0.0;     // heavy-ball coefficient; 0 recovers plain SGD
    int sample_count = 2048;   // validation set size for monotone acceptance
    double box_half_width = 1.0;
};

struct RefitResult {
    ParamVec theta;
    bool improved = true;     // false => theta0 returned, warning flag set
    double loss_before = 0.0;
    double loss_after = 0.0;
};

using SampledFunction = std::function<Vector(const Matrix&)>;

// Flattening order: ops in network order; for each affine layer the weight
// matrix row-major (out x in), then its bias when present.
int param_count(const NetworkSpec& spec);
void validate(const NetworkSpec& spec);

ParamVec init_params(const NetworkSpec& spec, std::uint64_t seed,
                     InitScheme scheme = InitScheme::he_normal, double scale = 0.1);

/// Network value at a single point.
Vector forward(const NetworkSpec& spec, const ParamVec& theta,
               const Eigen::Ref<const Eigen::RowVectorXd>& z);

/// Batched network values; rows of pts are samples. Returns n x q.
Matrix forward_batch(const NetworkSpec& spec, const ParamVec& theta, const Matrix& pts);

/// Network value, spatial gradient and Laplacian per sample (scalar output).
SpaceDerivs forward_with_space_derivs(const NetworkSpec& spec, const ParamVec& theta,
                                      const Matrix& pts);

/// Tangent features d f/d theta_i restricted to `subspace`, with optional
/// spatial gradients and Laplacians of each feature.
TangentBlock tangent_features(const NetworkSpec& spec, const ParamVec& theta, const Matrix& pts,
                              const std::vector<int>& subspace, bool with_space_derivs);

/// Value (and optionally spatial gradient/Laplacian) of the directional
/// derivative d f/d theta . dir, with dir a full-length parameter direction.
/// Space derivatives require scalar output.
struct DirectionalEval {
    Matrix values;  // n x q
    Matrix grads;   // n x d
    Vector laps;    // n
};
DirectionalEval tb_directional(const NetworkSpec& spec, const ParamVec& theta, const Vector& dir,
                               const Matrix& pts, bool with_space_derivs);

/// First-order refit of theta toward a target on fresh minibatches.
/// Monotone acceptance on a fixed validation sample.
RefitResult refit(const NetworkSpec& spec, const ParamVec& theta0, const SampledFunction& target,
                  int iters, double step, std::uint64_t seed, const RefitOptions& opts = {});

// JSON checkpointing; parameters encoded as base64 of little-endian doubles
// so round trips are bit-exact.
std::string checkpoint_to_json(const NetworkSpec& spec, const ParamVec& theta);
std::pair<NetworkSpec, ParamVec> checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::string& path, const NetworkSpec& spec, const ParamVec& theta);
std::pair<NetworkSpec, ParamVec> load_checkpoint(const std::string& path);

}  // namespace dtb::netfam
