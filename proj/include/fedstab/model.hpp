#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "fedstab/data.hpp"
#include "fedstab/rng.hpp"
#include "fedstab/vec.hpp"

namespace fedstab {

// Per-sample loss with analytic gradient. Losses are nonnegative by
// construction for every variant.
class LossModel {
  public:
    virtual ~LossModel() = default;
    virtual std::string name() const = 0;
    virtual int dim() const = 0;
    virtual bool convex() const = 0;
    virtual double loss(const Vec& theta, const Sample& z) const = 0;
    virtual void grad(const Vec& theta, const Sample& z, Vec& out) const = 0;
    // Uniform bound on the per-sample gradient norm where one is certified
    // (features live in the unit ball); +inf when iterate-dependent.
    virtual double grad_norm_cap() const { return std::numeric_limits<double>::infinity(); }
};

// 0.5 * (theta . x - y)^2 with the class index as a real-valued target.
class LeastSquaresModel final : public LossModel {
  public:
    explicit LeastSquaresModel(int feature_dim);
    std::string name() const override { return "least_squares"; }
    int dim() const override { return feature_dim_; }
    bool convex() const override { return true; }
    double loss(const Vec& theta, const Sample& z) const override;
    void grad(const Vec& theta, const Sample& z, Vec& out) const override;

  private:
    int feature_dim_;
};

// Multiclass softmax cross-entropy, parameters are the C x d weight matrix.
class LogisticModel final : public LossModel {
  public:
    LogisticModel(int num_classes, int feature_dim);
    std::string name() const override { return "logistic"; }
    int dim() const override { return num_classes_ * feature_dim_; }
    bool convex() const override { return true; }
    double loss(const Vec& theta, const Sample& z) const override;
    void grad(const Vec& theta, const Sample& z, Vec& out) const override;
    double grad_norm_cap() const override;
    int num_classes() const { return num_classes_; }

  private:
    void logits(const Vec& theta, const Vec& x, Vec& out) const;
    int num_classes_;
    int feature_dim_;
};

// One softplus hidden layer into softmax cross-entropy; the smooth nonconvex
// test bed. Layout: [W1 (H x d), b1, W2 (C x H), b2].
class MlpModel final : public LossModel {
  public:
    MlpModel(int feature_dim, int hidden, int num_classes);
    std::string name() const override { return "mlp"; }
    int dim() const override;
    bool convex() const override { return false; }
    double loss(const Vec& theta, const Sample& z) const override;
    void grad(const Vec& theta, const Sample& z, Vec& out) const override;
    int hidden() const { return hidden_; }
    int num_classes() const { return num_classes_; }

  private:
    int feature_dim_;
    int hidden_;
    int num_classes_;
};

struct ModelSpec {
    std::string kind = "logistic";  // least_squares | logistic | mlp
    int feature_dim = 10;
    int num_classes = 10;
    int hidden = 8;  // mlp only
};

std::unique_ptr<LossModel> make_model(const ModelSpec& spec);

double batch_loss(const LossModel& model, const Vec& theta, const ClientDataset& data);
// Mean gradient over the whole client dataset.
Vec batch_grad(const LossModel& model, const Vec& theta, const ClientDataset& data);
// Mean gradient over tape-chosen positions.
Vec batch_grad_at(const LossModel& model, const Vec& theta, const ClientDataset& data,
                  const std::uint32_t* positions, std::size_t count);
Vec batch_grad_at(const LossModel& model, const Vec& theta, const ClientDataset& data,
                  const std::vector<std::uint32_t>& positions);

// Central finite differences, the independent oracle the analytic gradients
// are tested against.
Vec fd_grad(const LossModel& model, const Vec& theta, const Sample& z, double h = 1e-5);

// Hessian-vector product on the mean loss via central differences of the
// analytic gradient.
Vec hvp(const LossModel& model, const Vec& theta, const ClientDataset& data, const Vec& v,
        double h = 1e-5);

// Certified smoothness bound for the convex variants under unit-ball
// features; throws for the MLP, whose curvature is estimated instead.
double smoothness_constant(const LossModel& model, const ClientDataset* data = nullptr);

// argmin over theta of mean_loss(theta) + ||theta - anchor||^2 / (2 eta).
// Closed form (Cholesky on the ridge normal equations) for least squares,
// fixed-step gradient descent to ||grad|| <= tol otherwise. For a nonconvex
// model with a known curvature floor mu_hat, eta * mu_hat must stay below 1.
struct ProxOptions {
    double tol = 1e-8;
    int max_iter = 10000;
    double mu_hat = 0.0;          // 0 = no certified floor supplied
    const Vec* warm_start = nullptr;
};
Vec prox_solve(const LossModel& model, const ClientDataset& data, const Vec& anchor, double eta,
               const ProxOptions& opts = {});

// Empirical problem constants feeding the divergence bounds. Probes are
// parameter points visited during training; estimates are maxima over them.
struct ConstantEstimates {
    double lipschitz = 0.0;   // max per-sample gradient norm seen, inflated, capped
    double beta = 0.0;        // smoothness: certified for convex, power iteration for mlp
    double sigma = 0.0;       // max per-client RMS deviation of sampled gradients
    double mu = 0.0;          // curvature floor magnitude (mlp), inflated; 0 for convex
    double lipschitz_raw = 0.0;
    double mu_raw = 0.0;
};

struct ConstantOptions {
    double lipschitz_safety = 1.05;
    double mu_safety = 1.5;
    double beta_safety = 1.05;
    int power_iters = 30;
    std::uint64_t seed = 17;
};

ConstantEstimates estimate_constants(const LossModel& model, const std::vector<Vec>& probes,
                                     const FederatedDataset& fed, const ClientDataset& oracle,
                                     const ConstantOptions& opts = {});

}  // namespace fedstab
