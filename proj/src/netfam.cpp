#include "dtb/netfam.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace dtb::netfam {

namespace {

using CMat = Eigen::MatrixXd;  // engine-internal stacks, column per sample
using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct Op {
    enum class Kind { affine, act, res_add };
    Kind kind;
    int in_slot = -1, out_slot = -1, skip_slot = -1;
    int in_w = 0, out_w = 0;
    bool bias = false;
    std::int64_t w_off = -1, b_off = -1;
};

struct Plan {
    int x0_dim = 0;
    int params = 0;
    bool embedded = false;
    std::vector<Op> ops;
    std::vector<int> slot_width;

    explicit Plan(const NetworkSpec& spec) {
        validate(spec);
        embedded = spec.embedding.has_value() || spec.family == Family::periodic_mlp;
        const int F = embedded ? spec.embedding.value_or(PeriodicEmbeddingSpec{}).per_dim_features : 0;
        x0_dim = embedded ? spec.input_dim * F : spec.input_dim;
        slot_width.push_back(x0_dim);

        auto affine = [&](int in_slot, int out, bool bias) {
            Op op;
            op.kind = Op::Kind::affine;
            op.in_slot = in_slot;
            op.in_w = slot_width[in_slot];
            op.out_w = out;
            op.bias = bias;
            op.w_off = params;
            params += op.in_w * out;
            if (bias) {
                op.b_off = params;
                params += out;
            }
            slot_width.push_back(out);
            op.out_slot = static_cast<int>(slot_width.size()) - 1;
            ops.push_back(op);
            return op.out_slot;
        };
        auto act = [&](int in_slot) {
            Op op;
            op.kind = Op::Kind::act;
            op.in_slot = in_slot;
            op.in_w = op.out_w = slot_width[in_slot];
            slot_width.push_back(op.out_w);
            op.out_slot = static_cast<int>(slot_width.size()) - 1;
            ops.push_back(op);
            return op.out_slot;
        };
        auto res_add = [&](int in_slot, int skip_slot) {
            Op op;
            op.kind = Op::Kind::res_add;
            op.in_slot = in_slot;
            op.skip_slot = skip_slot;
            op.in_w = op.out_w = slot_width[in_slot];
            slot_width.push_back(op.out_w);
            op.out_slot = static_cast<int>(slot_width.size()) - 1;
            ops.push_back(op);
            return op.out_slot;
        };

        int cur = 0;
        switch (spec.family) {
            case Family::mlp:
            case Family::periodic_mlp:
                for (int w : spec.widths) cur = act(affine(cur, w, true));
                break;
            case Family::residual:
                cur = affine(cur, spec.widths[0], true);
                for (std::size_t i = 0; i < spec.widths.size(); ++i) {
                    int skip = cur;
                    cur = res_add(act(affine(cur, spec.widths[0], true)), skip);
                }
                break;
            case Family::mmnn_lite:
                for (int w : spec.widths) {
                    cur = affine(cur, spec.mmnn_rank, false);
                    cur = act(affine(cur, w, true));
                }
                break;
        }
        affine(cur, spec.output_dim, spec.last_layer_bias);
    }

    // Maps a flat parameter index to (op index, row, col-or-bias).
    struct Loc {
        int op;
        int p;
        int q;  // -1 for bias entries
    };
    Loc locate(int idx) const {
        for (std::size_t a = 0; a < ops.size(); ++a) {
            const Op& op = ops[a];
            if (op.kind != Op::Kind::affine) continue;
            if (idx >= op.w_off && idx < op.w_off + static_cast<std::int64_t>(op.out_w) * op.in_w) {
                const int rel = static_cast<int>(idx - op.w_off);
                return {static_cast<int>(a), rel / op.in_w, rel % op.in_w};
            }
            if (op.bias && idx >= op.b_off && idx < op.b_off + op.out_w)
                return {static_cast<int>(a), static_cast<int>(idx - op.b_off), -1};
        }
        fail(Errc::index_out_of_range, "parameter index out of range");
    }
};

void act_values(Activation act, const CMat& a, CMat& out) {
    switch (act) {
        case Activation::tanh_fn: out = a.array().tanh().matrix(); break;
        case Activation::sin_fn: out = a.array().sin().matrix(); break;
        case Activation::relu_smooth:
            out = (a.array() > 0.0).select(a.array().square(), 0.0).matrix();
            break;
    }
}

// Derivatives sigma', sigma'', sigma''' as needed (order <= 3).
void act_derivs(Activation act, const CMat& a, int order, CMat& s1, CMat& s2, CMat& s3) {
    switch (act) {
        case Activation::tanh_fn: {
            CMat t = a.array().tanh().matrix();
            s1 = (1.0 - t.array().square()).matrix();
            if (order >= 2) s2 = (-2.0 * t.array() * s1.array()).matrix();
            if (order >= 3) s3 = (s1.array() * (4.0 * t.array().square() - 2.0 * s1.array())).matrix();
            break;
        }
        case Activation::sin_fn:
            s1 = a.array().cos().matrix();
            if (order >= 2) s2 = (-a.array().sin()).matrix();
            if (order >= 3) s3 = -s1;
            break;
        case Activation::relu_smooth:
            s1 = (a.array() > 0.0).select(2.0 * a.array(), 0.0).matrix();
            if (order >= 2)
                s2 = (a.array() > 0.0).select(Eigen::ArrayXXd::Constant(a.rows(), a.cols(), 2.0), 0.0).matrix();
            if (order >= 3) s3 = CMat::Zero(a.rows(), a.cols());
            break;
    }
}

bool c2_smooth(Activation act) { return act != Activation::relu_smooth; }

/// Batched evaluation engine. Columns are samples throughout.
class BatchEval {
public:
    BatchEval(const NetworkSpec& spec, const Plan& plan, const Vector& theta, const Matrix& pts)
        : spec_(spec), plan_(plan), theta_(theta), pts_(pts), n_(static_cast<int>(pts.rows())) {
        if (pts.cols() != spec.input_dim) fail(Errc::dimension_mismatch, "points dim mismatch");
        if (theta.size() != plan.params) fail(Errc::dimension_mismatch, "parameter count mismatch");
        if (!all_finite(pts) || !theta.allFinite()) fail(Errc::non_finite, "non-finite inputs");
    }

    RowMajorMap weight(const Op& op) const {
        return RowMajorMap(theta_.data() + op.w_off, op.out_w, op.in_w);
    }
    Eigen::Map<const Vector> bias(const Op& op) const {
        return Eigen::Map<const Vector>(theta_.data() + op.b_off, op.out_w);
    }

    void forward() {
        xs_.assign(plan_.slot_width.size(), CMat());
        xs_[0] = embed_values();
        for (const Op& op : plan_.ops) apply_forward(op, xs_);
        // activation derivative caches are invalidated with the forward state
        sd_order_ = 0;
    }

    // Spatial 2-jet along coordinate k, for every sample at once.
    void jet(int k) {
        jet_k_ = k;
        us_.assign(plan_.slot_width.size(), CMat());
        ws_.assign(plan_.slot_width.size(), CMat());
        embed_jets(k, us_[0], ws_[0]);
        ensure_act_derivs(2);
        for (const Op& op : plan_.ops) {
            switch (op.kind) {
                case Op::Kind::affine:
                    us_[op.out_slot].noalias() = weight(op) * us_[op.in_slot];
                    ws_[op.out_slot].noalias() = weight(op) * ws_[op.in_slot];
                    break;
                case Op::Kind::act: {
                    const CMat& s1 = s1_[op.in_slot];
                    const CMat& s2 = s2_[op.in_slot];
                    const CMat& u = us_[op.in_slot];
                    const CMat& w = ws_[op.in_slot];
                    us_[op.out_slot] = s1.cwiseProduct(u);
                    ws_[op.out_slot] = s2.cwiseProduct(u.cwiseProduct(u)) + s1.cwiseProduct(w);
                    break;
                }
                case Op::Kind::res_add:
                    us_[op.out_slot] = us_[op.in_slot] + us_[op.skip_slot];
                    ws_[op.out_slot] = ws_[op.in_slot] + ws_[op.skip_slot];
                    break;
            }
        }
    }

    // Reverse pass seeded on output row `comp` of the value (seed=0), the
    // first spatial jet (seed=1) or the second spatial jet (seed=2).
    void backward(int seed, int comp) {
        const std::size_t S = plan_.slot_width.size();
        auto zero_stack = [&](std::vector<CMat>& st) {
            st.assign(S, CMat());
            for (std::size_t s = 0; s < S; ++s) st[s] = CMat::Zero(plan_.slot_width[s], n_);
        };
        zero_stack(xb_);
        use_u_ = seed >= 1;
        use_w_ = seed >= 2;
        if (use_u_) zero_stack(ub_);
        if (use_w_) zero_stack(wb_);
        ensure_act_derivs(use_w_ ? 3 : (use_u_ ? 2 : 1));

        const int last = static_cast<int>(S) - 1;
        if (seed == 0) xb_[last].row(comp).setOnes();
        else if (seed == 1) ub_[last].row(comp).setOnes();
        else wb_[last].row(comp).setOnes();

        for (auto it = plan_.ops.rbegin(); it != plan_.ops.rend(); ++it) {
            const Op& op = *it;
            switch (op.kind) {
                case Op::Kind::affine: {
                    auto W = weight(op);
                    xb_[op.in_slot].noalias() += W.transpose() * xb_[op.out_slot];
                    if (use_u_) ub_[op.in_slot].noalias() += W.transpose() * ub_[op.out_slot];
                    if (use_w_) wb_[op.in_slot].noalias() += W.transpose() * wb_[op.out_slot];
                    break;
                }
                case Op::Kind::act: {
                    const CMat& s1 = s1_[op.in_slot];
                    xb_[op.in_slot].array() += xb_[op.out_slot].array() * s1.array();
                    if (use_u_) {
                        const CMat& s2 = s2_[op.in_slot];
                        const CMat& u = us_[op.in_slot];
                        xb_[op.in_slot].array() += ub_[op.out_slot].array() * s2.array() * u.array();
                        ub_[op.in_slot].array() += ub_[op.out_slot].array() * s1.array();
                        if (use_w_) {
                            const CMat& s3 = s3_[op.in_slot];
                            const CMat& w = ws_[op.in_slot];
                            xb_[op.in_slot].array() +=
                                wb_[op.out_slot].array() * (s3.array() * u.array().square() + s2.array() * w.array());
                            ub_[op.in_slot].array() += wb_[op.out_slot].array() * 2.0 * s2.array() * u.array();
                            wb_[op.in_slot].array() += wb_[op.out_slot].array() * s1.array();
                        }
                    }
                    break;
                }
                case Op::Kind::res_add:
                    xb_[op.in_slot] += xb_[op.out_slot];
                    xb_[op.skip_slot] += xb_[op.out_slot];
                    if (use_u_) {
                        ub_[op.in_slot] += ub_[op.out_slot];
                        ub_[op.skip_slot] += ub_[op.out_slot];
                    }
                    if (use_w_) {
                        wb_[op.in_slot] += wb_[op.out_slot];
                        wb_[op.skip_slot] += wb_[op.out_slot];
                    }
                    break;
            }
        }
    }

    // Feature column for one parameter under the current backward state.
    // dst(j*row_stride + row_offset, col) over samples j.
    void gather(const std::vector<int>& subspace, Matrix& dst, int col_begin_row, int row_stride) {
        Eigen::RowVectorXd tmp(n_);
        for (std::size_t c = 0; c < subspace.size(); ++c) {
            const Plan::Loc loc = plan_.locate(subspace[c]);
            const Op& op = plan_.ops[loc.op];
            if (loc.q < 0) {
                tmp = xb_[op.out_slot].row(loc.p);
                // bias enters only the value path; jets of b are zero
            } else {
                tmp = xb_[op.out_slot].row(loc.p).cwiseProduct(xs_[op.in_slot].row(loc.q));
                if (use_u_)
                    tmp += ub_[op.out_slot].row(loc.p).cwiseProduct(us_[op.in_slot].row(loc.q));
                if (use_w_)
                    tmp += wb_[op.out_slot].row(loc.p).cwiseProduct(ws_[op.in_slot].row(loc.q));
            }
            for (int j = 0; j < n_; ++j) dst(j * row_stride + col_begin_row, static_cast<Eigen::Index>(c)) = tmp(j);
        }
    }

    // Batch-summed parameter gradient for seeds xb_last (q x n); used by refit.
    Vector reduced_param_grad(const CMat& seed) {
        const std::size_t S = plan_.slot_width.size();
        xb_.assign(S, CMat());
        for (std::size_t s = 0; s < S; ++s) xb_[s] = CMat::Zero(plan_.slot_width[s], n_);
        use_u_ = use_w_ = false;
        ensure_act_derivs(1);
        xb_[S - 1] = seed;
        for (auto it = plan_.ops.rbegin(); it != plan_.ops.rend(); ++it) {
            const Op& op = *it;
            switch (op.kind) {
                case Op::Kind::affine:
                    xb_[op.in_slot].noalias() += weight(op).transpose() * xb_[op.out_slot];
                    break;
                case Op::Kind::act:
                    xb_[op.in_slot].array() += xb_[op.out_slot].array() * s1_[op.in_slot].array();
                    break;
                case Op::Kind::res_add:
                    xb_[op.in_slot] += xb_[op.out_slot];
                    xb_[op.skip_slot] += xb_[op.out_slot];
                    break;
            }
        }
        Vector grad = Vector::Zero(plan_.params);
        for (const Op& op : plan_.ops) {
            if (op.kind != Op::Kind::affine) continue;
            Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
                grad.data() + op.w_off, op.out_w, op.in_w);
            gw.noalias() = xb_[op.out_slot] * xs_[op.in_slot].transpose();
            if (op.bias)
                Eigen::Map<Vector>(grad.data() + op.b_off, op.out_w) = xb_[op.out_slot].rowwise().sum();
        }
        return grad;
    }

    // Directional (forward-mode) pass in parameter direction `dir`, with
    // optional spatial jets of the directional derivative.
    void directional(const Vector& dir, bool with_jets, Matrix& val, Matrix& grads, Vector& laps) {
        forward();
        const std::size_t S = plan_.slot_width.size();
        const int q = spec_.output_dim;
        auto dweight = [&](const Op& op) { return RowMajorMap(dir.data() + op.w_off, op.out_w, op.in_w); };
        auto dbias = [&](const Op& op) { return Eigen::Map<const Vector>(dir.data() + op.b_off, op.out_w); };

        std::vector<CMat> xd(S);
        xd[0] = CMat::Zero(plan_.slot_width[0], n_);
        for (const Op& op : plan_.ops) {
            switch (op.kind) {
                case Op::Kind::affine:
                    xd[op.out_slot].noalias() = weight(op) * xd[op.in_slot];
                    xd[op.out_slot].noalias() += dweight(op) * xs_[op.in_slot];
                    if (op.bias) xd[op.out_slot].colwise() += dbias(op);
                    break;
                case Op::Kind::act: {
                    ensure_act_derivs(1);
                    xd[op.out_slot] = s1_[op.in_slot].cwiseProduct(xd[op.in_slot]);
                    break;
                }
                case Op::Kind::res_add:
                    xd[op.out_slot] = xd[op.in_slot] + xd[op.skip_slot];
                    break;
            }
        }
        val = xd[S - 1].transpose();

        if (!with_jets) return;
        if (q != 1) fail(Errc::dimension_mismatch, "directional space derivatives need scalar output");
        const int d = spec_.input_dim;
        grads.resize(n_, d);
        laps = Vector::Zero(n_);
        ensure_act_derivs(3);
        std::vector<CMat> ud(S), wd(S);
        for (int k = 0; k < d; ++k) {
            jet(k);
            ud[0] = CMat::Zero(plan_.slot_width[0], n_);
            wd[0] = CMat::Zero(plan_.slot_width[0], n_);
            for (const Op& op : plan_.ops) {
                switch (op.kind) {
                    case Op::Kind::affine:
                        ud[op.out_slot].noalias() = weight(op) * ud[op.in_slot];
                        ud[op.out_slot].noalias() += dweight(op) * us_[op.in_slot];
                        wd[op.out_slot].noalias() = weight(op) * wd[op.in_slot];
                        wd[op.out_slot].noalias() += dweight(op) * ws_[op.in_slot];
                        break;
                    case Op::Kind::act: {
                        const CMat& s1 = s1_[op.in_slot];
                        const CMat& s2 = s2_[op.in_slot];
                        const CMat& s3 = s3_[op.in_slot];
                        const CMat& u = us_[op.in_slot];
                        const CMat& w = ws_[op.in_slot];
                        const CMat& xdot = xd[op.in_slot];
                        ud[op.out_slot] = (s2.array() * xdot.array() * u.array() +
                                           s1.array() * ud[op.in_slot].array())
                                              .matrix();
                        wd[op.out_slot] = (s3.array() * xdot.array() * u.array().square() +
                                           2.0 * s2.array() * u.array() * ud[op.in_slot].array() +
                                           s2.array() * xdot.array() * w.array() +
                                           s1.array() * wd[op.in_slot].array())
                                              .matrix();
                        break;
                    }
                    case Op::Kind::res_add:
                        ud[op.out_slot] = ud[op.in_slot] + ud[op.skip_slot];
                        wd[op.out_slot] = wd[op.in_slot] + wd[op.skip_slot];
                        break;
                }
            }
            grads.col(k) = ud[S - 1].row(0).transpose();
            laps += wd[S - 1].row(0).transpose();
        }
    }

    const CMat& final_slot() const { return xs_.back(); }
    const CMat& final_u() const { return us_.back(); }
    const CMat& final_w() const { return ws_.back(); }
    int n() const { return n_; }

private:
    CMat embed_values() const {
        if (!plan_.embedded) return pts_.transpose();
        const auto emb = spec_.embedding.value_or(PeriodicEmbeddingSpec{});
        const int F = emb.per_dim_features;
        CMat x0(plan_.x0_dim, n_);
        for (int i = 0; i < spec_.input_dim; ++i)
            for (int j = 0; j < F; ++j) {
                const double psi = emb.phase(i, j);
                const double k = emb.frequency(j);
                for (int s = 0; s < n_; ++s)
                    x0(i * F + j, s) = std::cos(k * M_PI * pts_(s, i) + psi);
            }
        return x0;
    }

    void embed_jets(int k, CMat& u0, CMat& w0) const {
        u0 = CMat::Zero(plan_.x0_dim, n_);
        w0 = CMat::Zero(plan_.x0_dim, n_);
        if (!plan_.embedded) {
            u0.row(k).setOnes();
            return;
        }
        const auto emb = spec_.embedding.value_or(PeriodicEmbeddingSpec{});
        const int F = emb.per_dim_features;
        for (int j = 0; j < F; ++j) {
            const double psi = emb.phase(k, j);
            const double kap = emb.frequency(j) * M_PI;
            for (int s = 0; s < n_; ++s) {
                const double arg = emb.frequency(j) * M_PI * pts_(s, k) + psi;
                u0(k * F + j, s) = -kap * std::sin(arg);
                w0(k * F + j, s) = -kap * kap * std::cos(arg);
            }
        }
    }

    void apply_forward(const Op& op, std::vector<CMat>& xs) {
        switch (op.kind) {
            case Op::Kind::affine:
                xs[op.out_slot].noalias() = weight(op) * xs[op.in_slot];
                if (op.bias) xs[op.out_slot].colwise() += bias(op);
                break;
            case Op::Kind::act:
                act_values(spec_.activation, xs[op.in_slot], xs[op.out_slot]);
                break;
            case Op::Kind::res_add:
                xs[op.out_slot] = xs[op.in_slot] + xs[op.skip_slot];
                break;
        }
    }

    void ensure_act_derivs(int order) {
        if (sd_order_ >= order) return;
        const std::size_t S = plan_.slot_width.size();
        s1_.resize(S);
        s2_.resize(S);
        s3_.resize(S);
        for (const Op& op : plan_.ops)
            if (op.kind == Op::Kind::act)
                act_derivs(spec_.activation, xs_[op.in_slot], order, s1_[op.in_slot], s2_[op.in_slot],
                           s3_[op.in_slot]);
        sd_order_ = order;
    }

    const NetworkSpec& spec_;
    const Plan& plan_;
    const Vector& theta_;
    const Matrix& pts_;
    int n_;
    int jet_k_ = -1;
    int sd_order_ = 0;
    bool use_u_ = false, use_w_ = false;
    std::vector<CMat> xs_, us_, ws_;
    std::vector<CMat> xb_, ub_, wb_;
    std::vector<CMat> s1_, s2_, s3_;
};

}  // namespace

void validate(const NetworkSpec& spec) {
    if (spec.input_dim < 1 || spec.output_dim < 1)
        fail(Errc::bad_size, "network dims must be positive");
    for (int w : spec.widths)
        if (w < 1) fail(Errc::bad_size, "widths must be positive");
    if (spec.family == Family::residual) {
        if (spec.widths.empty()) fail(Errc::bad_size, "residual family needs at least one width");
        for (int w : spec.widths)
            if (w != spec.widths[0]) fail(Errc::bad_size, "residual family needs equal widths");
    }
    if (spec.family == Family::mmnn_lite && spec.mmnn_rank < 1)
        fail(Errc::bad_size, "mmnn_rank must be positive");
    if (spec.embedding) {
        const auto& e = *spec.embedding;
        if (e.per_dim_features < 1) fail(Errc::bad_size, "per_dim_features must be positive");
        if (!e.phases.empty() &&
            e.phases.size() != static_cast<std::size_t>(spec.input_dim) * e.per_dim_features)
            fail(Errc::bad_size, "phases size must be d * per_dim_features");
    }
}

int param_count(const NetworkSpec& spec) { return Plan(spec).params; }

ParamVec init_params(const NetworkSpec& spec, std::uint64_t seed, InitScheme scheme, double scale) {
    Plan plan(spec);
    Rng rng(seed);
    ParamVec theta;
    theta.v = Vector::Zero(plan.params);
    for (const Op& op : plan.ops) {
        if (op.kind != Op::Kind::affine) continue;
        if (scheme == InitScheme::he_normal) {
            const double sd = std::sqrt(2.0 / op.in_w);
            for (int i = 0; i < op.out_w * op.in_w; ++i) theta.v(op.w_off + i) = rng.normal(0.0, sd);
            // biases stay zero
        } else {
            for (int i = 0; i < op.out_w * op.in_w; ++i) theta.v(op.w_off + i) = rng.uniform(-scale, scale);
            if (op.bias)
                for (int i = 0; i < op.out_w; ++i) theta.v(op.b_off + i) = rng.uniform(-scale, scale);
        }
    }
    return theta;
}

Matrix forward_batch(const NetworkSpec& spec, const ParamVec& theta, const Matrix& pts) {
    Plan plan(spec);
    BatchEval be(spec, plan, theta.v, pts);
    be.forward();
    return be.final_slot().transpose();
}

Vector forward(const NetworkSpec& spec, const ParamVec& theta,
               const Eigen::Ref<const Eigen::RowVectorXd>& z) {
    Matrix pts(1, z.size());
    pts.row(0) = z;
    return forward_batch(spec, theta, pts).row(0).transpose();
}

SpaceDerivs forward_with_space_derivs(const NetworkSpec& spec, const ParamVec& theta,
                                      const Matrix& pts) {
    if (spec.output_dim != 1) fail(Errc::dimension_mismatch, "space derivatives need scalar output");
    Plan plan(spec);
    BatchEval be(spec, plan, theta.v, pts);
    be.forward();
    SpaceDerivs out;
    out.values = be.final_slot().transpose();
    out.grads.resize(pts.rows(), spec.input_dim);
    out.laps = Vector::Zero(pts.rows());
    for (int k = 0; k < spec.input_dim; ++k) {
        be.jet(k);
        out.grads.col(k) = be.final_u().row(0).transpose();
        out.laps += be.final_w().row(0).transpose();
    }
    return out;
}

TangentBlock tangent_features(const NetworkSpec& spec, const ParamVec& theta, const Matrix& pts,
                              const std::vector<int>& subspace, bool with_space_derivs) {
    const auto t0 = std::chrono::steady_clock::now();
    Plan plan(spec);
    for (std::size_t i = 0; i < subspace.size(); ++i) {
        if (subspace[i] < 0 || subspace[i] >= plan.params)
            fail(Errc::index_out_of_range, "subspace index out of range");
        if (i > 0 && subspace[i] <= subspace[i - 1])
            fail(Errc::index_out_of_range, "subspace indices must be strictly increasing");
    }
    if (with_space_derivs && !c2_smooth(spec.activation))
        fail(Errc::non_smooth_activation, "activation is not C^2; Laplacian features unavailable");

    const int n = static_cast<int>(pts.rows());
    const int q = spec.output_dim;
    const int l = static_cast<int>(subspace.size());
    const int d = spec.input_dim;

    BatchEval be(spec, plan, theta.v, pts);
    be.forward();

    TangentBlock tb;
    tb.features.setZero(static_cast<Eigen::Index>(n) * q, l);
    if (with_space_derivs) {
        tb.spatial_grads.assign(d, Matrix::Zero(static_cast<Eigen::Index>(n) * q, l));
        tb.spatial_laplacians.setZero(static_cast<Eigen::Index>(n) * q, l);
    }

    Matrix lap_part;
    if (with_space_derivs) lap_part.setZero(static_cast<Eigen::Index>(n) * q, l);

    if (!with_space_derivs) {
        for (int c = 0; c < q; ++c) {
            be.backward(0, c);
            tb.backward_passes++;
            be.gather(subspace, tb.features, c, q);
        }
    } else {
        for (int k = 0; k < d; ++k) {
            be.jet(k);
            for (int c = 0; c < q; ++c) {
                if (k == 0) {
                    be.backward(0, c);
                    tb.backward_passes++;
                    be.gather(subspace, tb.features, c, q);
                }
                be.backward(1, c);
                tb.backward_passes++;
                be.gather(subspace, tb.spatial_grads[k], c, q);
                be.backward(2, c);
                tb.backward_passes++;
                lap_part.setZero();
                be.gather(subspace, lap_part, c, q);
                tb.spatial_laplacians += lap_part;
            }
        }
    }
    tb.eval_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return tb;
}

DirectionalEval tb_directional(const NetworkSpec& spec, const ParamVec& theta, const Vector& dir,
                               const Matrix& pts, bool with_space_derivs) {
    Plan plan(spec);
    if (dir.size() != plan.params) fail(Errc::dimension_mismatch, "direction length mismatch");
    if (with_space_derivs && !c2_smooth(spec.activation))
        fail(Errc::non_smooth_activation, "activation is not C^2");
    BatchEval be(spec, plan, theta.v, pts);
    DirectionalEval out;
    be.directional(dir, with_space_derivs, out.values, out.grads, out.laps);
    return out;
}

RefitResult refit(const NetworkSpec& spec, const ParamVec& theta0, const SampledFunction& target,
                  int iters, double step, std::uint64_t seed, const RefitOptions& opts) {
    if (spec.output_dim != 1) fail(Errc::dimension_mismatch, "refit expects scalar output");
    Plan plan(spec);
    const int d = spec.input_dim;

    Rng val_rng(derive_seed(seed, "refit-validation"));
    Matrix val_pts = val_rng.uniform_box(opts.sample_count, d, opts.box_half_width);
    Vector val_target = target(val_pts);

    auto loss_on = [&](const ParamVec& th) {
        Matrix v = forward_batch(spec, th, val_pts);
        return 0.5 * (v.col(0) - val_target).squaredNorm() / static_cast<double>(val_pts.rows());
    };

    RefitResult res;
    res.loss_before = loss_on(theta0);

    ParamVec theta = theta0;
    Vector velocity = Vector::Zero(theta.v.size());
    for (int it = 0; it < iters; ++it) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(it) + 1));
        Matrix pts = rng.uniform_box(opts.batch, d, opts.box_half_width);
        Vector g = target(pts);
        BatchEval be(spec, plan, theta.v, pts);
        be.forward();
        Eigen::MatrixXd seed_mat =
            (be.final_slot().row(0).transpose() - g).transpose() / static_cast<double>(opts.batch);
        Vector grad = be.reduced_param_grad(seed_mat);
        if (opts.momentum > 0.0) {
            velocity = opts.momentum * velocity + grad;
            theta.v -= step * velocity;
        } else {
            theta.v -= step * grad;
        }
        if (!theta.v.allFinite()) break;
    }

    bool accept = theta.v.allFinite();
    if (accept) {
        res.loss_after = loss_on(theta);
        accept = std::isfinite(res.loss_after) && res.loss_after <= res.loss_before;
    }
    if (accept) {
        res.theta = std::move(theta);
        res.improved = true;
    } else {
        res.theta = theta0;
        res.improved = false;
        res.loss_after = res.loss_before;
    }
    return res;
}

namespace {

const char* family_name(Family f) {
    switch (f) {
        case Family::mlp: return "mlp";
        case Family::periodic_mlp: return "periodic_mlp";
        case Family::residual: return "residual";
        case Family::mmnn_lite: return "mmnn_lite";
    }
    return "mlp";
}
Family family_from(const std::string& s) {
    if (s == "mlp") return Family::mlp;
    if (s == "periodic_mlp") return Family::periodic_mlp;
    if (s == "residual") return Family::residual;
    if (s == "mmnn_lite") return Family::mmnn_lite;
    fail(Errc::config_error, "unknown network family: " + s);
}
const char* act_name(Activation a) {
    switch (a) {
        case Activation::tanh_fn: return "tanh";
        case Activation::sin_fn: return "sin";
        case Activation::relu_smooth: return "relu_smooth";
    }
    return "tanh";
}
Activation act_from(const std::string& s) {
    if (s == "tanh") return Activation::tanh_fn;
    if (s == "sin") return Activation::sin_fn;
    if (s == "relu_smooth") return Activation::relu_smooth;
    fail(Errc::config_error, "unknown activation: " + s);
}

std::string b64_encode(const unsigned char* data, std::size_t n) {
    static const char* tab = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (std::size_t i = 0; i < n; i += 3) {
        unsigned v = data[i] << 16;
        if (i + 1 < n) v |= data[i + 1] << 8;
        if (i + 2 < n) v |= data[i + 2];
        out.push_back(tab[(v >> 18) & 63]);
        out.push_back(tab[(v >> 12) & 63]);
        out.push_back(i + 1 < n ? tab[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < n ? tab[v & 63] : '=');
    }
    return out;
}

std::vector<unsigned char> b64_decode(const std::string& s) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<unsigned char> out;
    int acc = 0, bits = 0;
    for (char c : s) {
        if (c == '=') break;
        const int v = val(c);
        if (v < 0) fail(Errc::config_error, "invalid base64 payload");
        acc = (acc << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((acc >> bits) & 0xff));
        }
    }
    return out;
}

}  // namespace

std::string checkpoint_to_json(const NetworkSpec& spec, const ParamVec& theta) {
    nlohmann::json j;
    j["family"] = family_name(spec.family);
    j["input_dim"] = spec.input_dim;
    j["output_dim"] = spec.output_dim;
    j["widths"] = spec.widths;
    j["activation"] = act_name(spec.activation);
    j["last_layer_bias"] = spec.last_layer_bias;
    j["mmnn_rank"] = spec.mmnn_rank;
    if (spec.embedding) {
        j["embedding"] = {{"per_dim_features", spec.embedding->per_dim_features},
                          {"phases", spec.embedding->phases},
                          {"max_frequency", spec.embedding->max_frequency}};
    }
    j["params"] = {{"encoding", "base64/f64-le"},
                   {"count", theta.v.size()},
                   {"data", b64_encode(reinterpret_cast<const unsigned char*>(theta.v.data()),
                                       static_cast<std::size_t>(theta.v.size()) * sizeof(double))}};
    return j.dump(2);
}

std::pair<NetworkSpec, ParamVec> checkpoint_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    NetworkSpec spec;
    spec.family = family_from(j.at("family").get<std::string>());
    spec.input_dim = j.at("input_dim").get<int>();
    spec.output_dim = j.at("output_dim").get<int>();
    spec.widths = j.at("widths").get<std::vector<int>>();
    spec.activation = act_from(j.at("activation").get<std::string>());
    spec.last_layer_bias = j.at("last_layer_bias").get<bool>();
    spec.mmnn_rank = j.value("mmnn_rank", 16);
    if (j.contains("embedding")) {
        PeriodicEmbeddingSpec emb;
        emb.per_dim_features = j["embedding"].at("per_dim_features").get<int>();
        emb.phases = j["embedding"].value("phases", std::vector<double>{});
        emb.max_frequency = j["embedding"].value("max_frequency", 1);
        spec.embedding = emb;
    }
    validate(spec);
    const auto& p = j.at("params");
    ParamVec theta;
    const auto count = p.at("count").get<Eigen::Index>();
    auto bytes = b64_decode(p.at("data").get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(count) * sizeof(double))
        fail(Errc::config_error, "parameter payload size mismatch");
    theta.v.resize(count);
    std::memcpy(theta.v.data(), bytes.data(), bytes.size());
    if (theta.v.size() != param_count(spec)) fail(Errc::config_error, "parameter count mismatch");
    return {spec, theta};
}

void save_checkpoint(const std::string& path, const NetworkSpec& spec, const ParamVec& theta) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail(Errc::config_error, "cannot open " + path);
    const std::string text = checkpoint_to_json(spec, theta);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
}

std::pair<NetworkSpec, ParamVec> load_checkpoint(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) fail(Errc::config_error, "cannot open " + path);
    std::string text;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) text.append(buf, n);
    std::fclose(f);
    return checkpoint_from_json(text);
}

}  // namespace dtb::netfam
