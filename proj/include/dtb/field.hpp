#pragma once

#include "dtb/common.hpp"
#include "dtb/jet.hpp"

#include <functional>
#include <memory>

namespace dtb {

/// A scalar function of z with exact gradient and Laplacian.
/// Serves as the initial-condition handle of evolution runs and as the
/// target vocabulary of the experiment harness.
class ScalarField {
public:
    virtual ~ScalarField() = default;
    virtual int dim() const = 0;
    virtual double value(const Eigen::Ref<const Eigen::RowVectorXd>& z) const = 0;
    virtual void derivs(const Eigen::Ref<const Eigen::RowVectorXd>& z, double& val,
                        Eigen::Ref<Eigen::RowVectorXd> grad, double& lap) const = 0;

    Vector values(const Matrix& pts) const;
    // Fills val (n), grad (n x d), lap (n).
    void derivs_batch(const Matrix& pts, Vector& val, Matrix& grad, Vector& lap) const;
};

using FieldPtr = std::shared_ptr<const ScalarField>;

/// Closed-form field defined by a jet-evaluable expression. The functor is
/// called once per coordinate with that coordinate seeded (d1 = 1).
class ClosedFormField final : public ScalarField {
public:
    using JetFn = std::function<Jet2(const std::vector<Jet2>&)>;

    ClosedFormField(int dim, JetFn fn) : dim_(dim), fn_(std::move(fn)) {}

    int dim() const override { return dim_; }
    double value(const Eigen::Ref<const Eigen::RowVectorXd>& z) const override;
    void derivs(const Eigen::Ref<const Eigen::RowVectorXd>& z, double& val,
                Eigen::Ref<Eigen::RowVectorXd> grad, double& lap) const override;

private:
    int dim_;
    JetFn fn_;
};

FieldPtr constant_field(int dim, double c);
/// a*f + b*g; fields must share dimensions.
FieldPtr linear_combination(double a, FieldPtr f, double b, FieldPtr g);

}  // namespace dtb
