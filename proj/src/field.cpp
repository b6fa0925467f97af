#include "dtb/field.hpp"

namespace dtb {

Vector ScalarField::values(const Matrix& pts) const {
    Vector out(pts.rows());
    for (Eigen::Index i = 0; i < pts.rows(); ++i) out(i) = value(pts.row(i));
    return out;
}

void ScalarField::derivs_batch(const Matrix& pts, Vector& val, Matrix& grad, Vector& lap) const {
    const Eigen::Index n = pts.rows();
    val.resize(n);
    grad.resize(n, dim());
    lap.resize(n);
    Eigen::RowVectorXd g(dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        double v, l;
        derivs(pts.row(i), v, g, l);
        val(i) = v;
        grad.row(i) = g;
        lap(i) = l;
    }
}

double ClosedFormField::value(const Eigen::Ref<const Eigen::RowVectorXd>& z) const {
    std::vector<Jet2> in(dim_);
    for (int j = 0; j < dim_; ++j) in[j] = Jet2(z(j));
    return fn_(in).v;
}

void ClosedFormField::derivs(const Eigen::Ref<const Eigen::RowVectorXd>& z, double& val,
                             Eigen::Ref<Eigen::RowVectorXd> grad, double& lap) const {
    std::vector<Jet2> in(dim_);
    for (int j = 0; j < dim_; ++j) in[j] = Jet2(z(j));
    lap = 0.0;
    for (int k = 0; k < dim_; ++k) {
        in[k].d1 = 1.0;
        Jet2 out = fn_(in);
        in[k].d1 = 0.0;
        val = out.v;
        grad(k) = out.d1;
        lap += out.d2;
    }
}

FieldPtr constant_field(int dim, double c) {
    return std::make_shared<ClosedFormField>(dim, [c](const std::vector<Jet2>&) { return Jet2(c); });
}

namespace {

class ComboField final : public ScalarField {
public:
    ComboField(double a, FieldPtr f, double b, FieldPtr g)
        : a_(a), b_(b), f_(std::move(f)), g_(std::move(g)) {
        if (f_->dim() != g_->dim()) fail(Errc::dimension_mismatch, "field dims differ");
    }
    int dim() const override { return f_->dim(); }
    double value(const Eigen::Ref<const Eigen::RowVectorXd>& z) const override {
        return a_ * f_->value(z) + b_ * g_->value(z);
    }
    void derivs(const Eigen::Ref<const Eigen::RowVectorXd>& z, double& val,
                Eigen::Ref<Eigen::RowVectorXd> grad, double& lap) const override {
        double v1, l1, v2, l2;
        Eigen::RowVectorXd g1(dim()), g2(dim());
        f_->derivs(z, v1, g1, l1);
        g_->derivs(z, v2, g2, l2);
        val = a_ * v1 + b_ * v2;
        grad = a_ * g1 + b_ * g2;
        lap = a_ * l1 + b_ * l2;
    }

private:
    double a_, b_;
    FieldPtr f_, g_;
};

}  // namespace

FieldPtr linear_combination(double a, FieldPtr f, double b, FieldPtr g) {
    return std::make_shared<ComboField>(a, std::move(f), b, std::move(g));
}

}  // namespace dtb
