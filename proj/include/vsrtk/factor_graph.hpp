#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <memory>
#include <vector>

#include "vsrtk/so3.hpp"

namespace vsrtk {

/// Variable blocks are either a pose (7 params [p, q], 6 tangent dof) or a
/// plain Euclidean vector. Poses retract with a right-multiplicative
/// quaternion perturbation.
struct VariableBlock {
    enum class Kind { Pose, Euclidean };

    Kind kind = Kind::Euclidean;
    Eigen::VectorXd value;

    static VariableBlock pose(const Eigen::Vector3d& p, const Eigen::Quaterniond& q);
    static VariableBlock euclidean(const Eigen::VectorXd& v);

    int tangent_dim() const {
        return kind == Kind::Pose ? 6 : (int)value.size();
    }
    Eigen::Vector3d position() const { return value.head<3>(); }
    Eigen::Quaterniond quaternion() const {
        return Eigen::Quaterniond(value(6), value(3), value(4), value(5));
    }
    void retract(const Eigen::VectorXd& delta);
    /// Tangent difference of this block against a reference parameter vector.
    Eigen::VectorXd boxminus(const Eigen::VectorXd& reference) const;
    /// Jacobian of boxminus(reference) w.r.t. this block's tangent.
    Eigen::MatrixXd boxminus_jacobian(const Eigen::VectorXd& reference) const;
};

/// Factors produce whitened residuals and tangent-space Jacobians.
struct Factor {
    std::vector<int> var_ids;

    virtual ~Factor() = default;
    virtual int dim() const = 0;
    virtual Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                                     std::vector<Eigen::MatrixXd>* jacobians) const = 0;
};

/// Prior produced by Schur-complement marginalization, keyed by caller-stable
/// identifiers so it can be re-attached to a rebuilt graph.
struct MarginalPrior {
    struct Entry {
        int64_t key = 0;
        VariableBlock::Kind kind = VariableBlock::Kind::Euclidean;
        Eigen::VectorXd linearization;
        int offset = 0;
        int dim = 0;
    };
    std::vector<Entry> entries;
    Eigen::MatrixXd sqrt_info;   // rows x total tangent dim
    Eigen::VectorXd residual0;

    bool empty() const { return entries.empty() || sqrt_info.rows() == 0; }
};

struct SolveOptions {
    int max_iterations = 50;
    double relative_cost_tolerance = 1e-6;
    double initial_lambda = 1e-8;
    double max_lambda = 1e12;
};

struct SolveReport {
    int iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    bool converged = false;
};

/// Dense damped Gauss-Newton over heterogeneous variable blocks.
class FactorGraph {
public:
    int add_variable(VariableBlock block);
    void add_factor(std::unique_ptr<Factor> factor);

    int num_variables() const { return (int)variables_.size(); }
    std::size_t num_factors() const { return factors_.size(); }
    const VariableBlock& variable(int id) const { return variables_[id]; }
    VariableBlock& mutable_variable(int id) { return variables_[id]; }

    double total_cost() const;

    /// Damped Gauss-Newton; throws SingularSystem when a variable has no
    /// constraint acting on any of its tangent directions.
    SolveReport optimize(const SolveOptions& options = {});

    /// Information matrix J^T J (whitened) over all tangent dims at the
    /// current values.
    Eigen::MatrixXd information_matrix() const;

    /// Joint covariance of the selected variables' tangent blocks, in the
    /// requested order. Throws SingularInformation when the full information
    /// matrix is not invertible.
    Eigen::MatrixXd covariance(const std::vector<int>& var_ids) const;

    /// Schur-complement marginalization of the given variables. Keys map the
    /// retained blanket variables to caller-stable identifiers. Linearizes at
    /// the current values; only factors touching a dropped variable are
    /// consumed. Returns an empty prior when nothing constrains the dropped
    /// set.
    MarginalPrior marginalize(const std::vector<int>& drop_ids,
                              const std::vector<int64_t>& keys_by_var) const;

    int tangent_offset(int var_id) const { return offsets_[var_id]; }
    int total_tangent_dim() const { return total_dim_; }

private:
    void assemble(Eigen::MatrixXd& h, Eigen::VectorXd& g, double& cost) const;

    std::vector<VariableBlock> variables_;
    std::vector<std::unique_ptr<Factor>> factors_;
    std::vector<int> offsets_;
    int total_dim_ = 0;
};

/// Factor re-attaching a MarginalPrior to a live graph. var_ids must follow
/// the prior's entry order.
struct MarginalPriorFactor : Factor {
    MarginalPrior prior;

    explicit MarginalPriorFactor(MarginalPrior p, const std::vector<int>& ids);
    int dim() const override { return (int)prior.residual0.size(); }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// Gaussian prior pinning a single block at a target value.
struct BlockPriorFactor : Factor {
    Eigen::VectorXd target;          // parameter-space target
    VariableBlock::Kind kind;
    Eigen::MatrixXd sqrt_info;       // tangent-dim square

    BlockPriorFactor(int var_id, const VariableBlock& target_block,
                     const Eigen::MatrixXd& sqrt_information);
    int dim() const override { return (int)sqrt_info.rows(); }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// r = sqrt_info * (sum_i A_i x_i - b) over Euclidean blocks; test and
/// pose-graph plumbing for linear-Gaussian problems.
struct DenseLinearFactor : Factor {
    std::vector<Eigen::MatrixXd> coefficients;
    Eigen::VectorXd offset;
    Eigen::MatrixXd sqrt_info;

    DenseLinearFactor(const std::vector<int>& ids, std::vector<Eigen::MatrixXd> a,
                      const Eigen::VectorXd& b, const Eigen::MatrixXd& sqrt_information);
    int dim() const override { return (int)offset.size(); }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

}  // namespace vsrtk
