#include "vsrtk/factor_graph.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>

#include "vsrtk/errors.hpp"

namespace vsrtk {

VariableBlock VariableBlock::pose(const Eigen::Vector3d& p, const Eigen::Quaterniond& q) {
    VariableBlock b;
    b.kind = Kind::Pose;
    b.value.resize(7);
    b.value.head<3>() = p;
    const Eigen::Quaterniond qn = q.normalized();
    b.value(3) = qn.x();
    b.value(4) = qn.y();
    b.value(5) = qn.z();
    b.value(6) = qn.w();
    return b;
}

VariableBlock VariableBlock::euclidean(const Eigen::VectorXd& v) {
    VariableBlock b;
    b.kind = Kind::Euclidean;
    b.value = v;
    return b;
}

void VariableBlock::retract(const Eigen::VectorXd& delta) {
    if (kind == Kind::Euclidean) {
        value += delta;
        return;
    }
    value.head<3>() += delta.head<3>();
    const Eigen::Quaterniond q = (quaternion() * so3::exp(delta.tail<3>())).normalized();
    value(3) = q.x();
    value(4) = q.y();
    value(5) = q.z();
    value(6) = q.w();
}

Eigen::VectorXd VariableBlock::boxminus(const Eigen::VectorXd& reference) const {
    if (kind == Kind::Euclidean) return value - reference;
    Eigen::VectorXd d(6);
    d.head<3>() = value.head<3>() - reference.head<3>();
    const Eigen::Quaterniond q_ref(reference(6), reference(3), reference(4), reference(5));
    d.tail<3>() = so3::log(q_ref.conjugate() * quaternion());
    return d;
}

Eigen::MatrixXd VariableBlock::boxminus_jacobian(const Eigen::VectorXd& reference) const {
    const int n = tangent_dim();
    Eigen::MatrixXd j = Eigen::MatrixXd::Identity(n, n);
    if (kind == Kind::Pose) {
        const Eigen::Quaterniond q_ref(reference(6), reference(3), reference(4), reference(5));
        const Eigen::Vector3d dtheta = so3::log(q_ref.conjugate() * quaternion());
        j.block<3, 3>(3, 3) = so3::right_jacobian_inv(dtheta);
    }
    return j;
}

int FactorGraph::add_variable(VariableBlock block) {
    offsets_.push_back(total_dim_);
    total_dim_ += block.tangent_dim();
    variables_.push_back(std::move(block));
    return (int)variables_.size() - 1;
}

void FactorGraph::add_factor(std::unique_ptr<Factor> factor) {
    factors_.push_back(std::move(factor));
}

double FactorGraph::total_cost() const {
    double cost = 0.0;
    std::vector<const VariableBlock*> vars;
    for (const auto& f : factors_) {
        vars.clear();
        for (int id : f->var_ids) vars.push_back(&variables_[id]);
        const Eigen::VectorXd r = f->evaluate(vars, nullptr);
        cost += 0.5 * r.squaredNorm();
    }
    return cost;
}

void FactorGraph::assemble(Eigen::MatrixXd& h, Eigen::VectorXd& g, double& cost) const {
    h.setZero(total_dim_, total_dim_);
    g.setZero(total_dim_);
    cost = 0.0;
    std::vector<const VariableBlock*> vars;
    std::vector<Eigen::MatrixXd> jacobians;
    for (const auto& f : factors_) {
        vars.clear();
        for (int id : f->var_ids) vars.push_back(&variables_[id]);
        jacobians.clear();
        const Eigen::VectorXd r = f->evaluate(vars, &jacobians);
        cost += 0.5 * r.squaredNorm();
        for (std::size_t a = 0; a < f->var_ids.size(); ++a) {
            const int oa = offsets_[f->var_ids[a]];
            const int da = variables_[f->var_ids[a]].tangent_dim();
            g.segment(oa, da) += jacobians[a].transpose() * r;
            for (std::size_t b = 0; b < f->var_ids.size(); ++b) {
                const int ob = offsets_[f->var_ids[b]];
                const int db = variables_[f->var_ids[b]].tangent_dim();
                h.block(oa, ob, da, db) += jacobians[a].transpose() * jacobians[b];
            }
        }
    }
}

SolveReport FactorGraph::optimize(const SolveOptions& options) {
    SolveReport report;
    Eigen::MatrixXd h;
    Eigen::VectorXd g;
    double cost;
    assemble(h, g, cost);
    report.initial_cost = cost;
    report.final_cost = cost;

    // A tangent direction with zero information cannot be solved for.
    for (int v = 0; v < (int)variables_.size(); ++v) {
        const int o = offsets_[v];
        const int d = variables_[v].tangent_dim();
        for (int i = 0; i < d; ++i) {
            if (h(o + i, o + i) == 0.0) {
                throw SingularSystem("optimize: variable " + std::to_string(v) +
                                     " tangent dim " + std::to_string(i) +
                                     " has no constraint");
            }
        }
    }

    double lambda = options.initial_lambda;
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        report.iterations = iter + 1;

        bool accepted = false;
        std::vector<Eigen::VectorXd> backup;
        while (lambda <= options.max_lambda) {
            Eigen::MatrixXd damped = h;
            for (int i = 0; i < total_dim_; ++i) {
                damped(i, i) += lambda * (h(i, i) > 0.0 ? h(i, i) : 1.0);
            }
            const Eigen::VectorXd step = Eigen::LDLT<Eigen::MatrixXd>(damped).solve(-g);
            if (!step.allFinite()) {
                lambda = std::max(lambda, 1e-9) * 10.0;
                continue;
            }
            backup.clear();
            for (const auto& v : variables_) backup.push_back(v.value);
            for (int v = 0; v < (int)variables_.size(); ++v) {
                variables_[v].retract(step.segment(offsets_[v], variables_[v].tangent_dim()));
            }
            const double new_cost = total_cost();
            if (std::isfinite(new_cost) && new_cost <= cost) {
                const double decrease = cost - new_cost;
                cost = new_cost;
                report.final_cost = cost;
                lambda = std::max(lambda * 0.25, 1e-12);
                accepted = true;
                if (decrease < options.relative_cost_tolerance * std::max(cost, 1e-30)) {
                    report.converged = true;
                }
                break;
            }
            for (int v = 0; v < (int)variables_.size(); ++v) variables_[v].value = backup[v];
            lambda = std::max(lambda, 1e-9) * 10.0;
        }
        if (!accepted) {
            report.converged = true;  // no descent direction left
            break;
        }
        if (report.converged) break;
        assemble(h, g, cost);
    }
    return report;
}

Eigen::MatrixXd FactorGraph::information_matrix() const {
    Eigen::MatrixXd h;
    Eigen::VectorXd g;
    double cost;
    assemble(h, g, cost);
    return h;
}

Eigen::MatrixXd FactorGraph::covariance(const std::vector<int>& var_ids) const {
    const Eigen::MatrixXd h = information_matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw SingularInformation("covariance: information matrix not positive definite");
    }
    const Eigen::MatrixXd cov_full =
        ldlt.solve(Eigen::MatrixXd::Identity(total_dim_, total_dim_));
    if (!cov_full.allFinite()) {
        throw SingularInformation("covariance: information matrix numerically singular");
    }

    int dim = 0;
    for (int id : var_ids) dim += variables_[id].tangent_dim();
    Eigen::MatrixXd out(dim, dim);
    int row = 0;
    for (int a : var_ids) {
        int col = 0;
        const int da = variables_[a].tangent_dim();
        for (int b : var_ids) {
            const int db = variables_[b].tangent_dim();
            out.block(row, col, da, db) = cov_full.block(offsets_[a], offsets_[b], da, db);
            col += db;
        }
        row += da;
    }
    return out;
}

MarginalPrior FactorGraph::marginalize(const std::vector<int>& drop_ids,
                                       const std::vector<int64_t>& keys_by_var) const {
    std::vector<bool> dropped(variables_.size(), false);
    for (int id : drop_ids) dropped[id] = true;

    // Factors touching a dropped variable, and the variables they involve.
    std::vector<const Factor*> involved_factors;
    std::vector<bool> involved(variables_.size(), false);
    for (const auto& f : factors_) {
        bool touches = false;
        for (int id : f->var_ids) touches = touches || dropped[id];
        if (!touches) continue;
        involved_factors.push_back(f.get());
        for (int id : f->var_ids) involved[id] = true;
    }

    MarginalPrior prior;
    if (involved_factors.empty()) return prior;

    // Local ordering: dropped variables first, then retained blanket.
    std::vector<int> local_vars;
    for (int v = 0; v < (int)variables_.size(); ++v) {
        if (involved[v] && dropped[v]) local_vars.push_back(v);
    }
    const int num_dropped = (int)local_vars.size();
    for (int v = 0; v < (int)variables_.size(); ++v) {
        if (involved[v] && !dropped[v]) local_vars.push_back(v);
    }

    std::vector<int> local_offset(variables_.size(), -1);
    int local_dim = 0;
    int drop_dim = 0;
    for (std::size_t i = 0; i < local_vars.size(); ++i) {
        local_offset[local_vars[i]] = local_dim;
        local_dim += variables_[local_vars[i]].tangent_dim();
        if ((int)i < num_dropped) drop_dim = local_dim;
    }
    const int keep_dim = local_dim - drop_dim;
    if (keep_dim == 0) return prior;

    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(local_dim, local_dim);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(local_dim);
    std::vector<const VariableBlock*> vars;
    std::vector<Eigen::MatrixXd> jacobians;
    for (const Factor* f : involved_factors) {
        vars.clear();
        for (int id : f->var_ids) vars.push_back(&variables_[id]);
        jacobians.clear();
        const Eigen::VectorXd r = f->evaluate(vars, &jacobians);
        for (std::size_t a = 0; a < f->var_ids.size(); ++a) {
            const int oa = local_offset[f->var_ids[a]];
            const int da = variables_[f->var_ids[a]].tangent_dim();
            g.segment(oa, da) += jacobians[a].transpose() * r;
            for (std::size_t b = 0; b < f->var_ids.size(); ++b) {
                const int ob = local_offset[f->var_ids[b]];
                const int db = variables_[f->var_ids[b]].tangent_dim();
                h.block(oa, ob, da, db) += jacobians[a].transpose() * jacobians[b];
            }
        }
    }

    const Eigen::MatrixXd h_mm = h.topLeftCorner(drop_dim, drop_dim);
    const Eigen::MatrixXd h_rm = h.bottomLeftCorner(keep_dim, drop_dim);
    const Eigen::MatrixXd h_rr = h.bottomRightCorner(keep_dim, keep_dim);
    const Eigen::VectorXd g_m = g.head(drop_dim);
    const Eigen::VectorXd g_r = g.tail(keep_dim);

    // Pseudo-inverse of the dropped block guards unconstrained directions.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m(0.5 * (h_mm + h_mm.transpose()));
    const double thresh_m = 1e-12 * std::max(1.0, es_m.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::VectorXd inv_ev = es_m.eigenvalues();
    for (int i = 0; i < inv_ev.size(); ++i) {
        inv_ev(i) = inv_ev(i) > thresh_m ? 1.0 / inv_ev(i) : 0.0;
    }
    const Eigen::MatrixXd h_mm_inv =
        es_m.eigenvectors() * inv_ev.asDiagonal() * es_m.eigenvectors().transpose();

    const Eigen::MatrixXd h_schur = h_rr - h_rm * h_mm_inv * h_rm.transpose();
    const Eigen::VectorXd g_schur = g_r - h_rm * h_mm_inv * g_m;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h_schur + h_schur.transpose()));
    const double thresh = 1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    std::vector<int> kept_modes;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        if (es.eigenvalues()(i) > thresh) kept_modes.push_back(i);
    }
    if (kept_modes.empty()) return prior;

    Eigen::MatrixXd sqrt_info((int)kept_modes.size(), keep_dim);
    Eigen::VectorXd residual0((int)kept_modes.size());
    for (std::size_t i = 0; i < kept_modes.size(); ++i) {
        const double ev = es.eigenvalues()(kept_modes[i]);
        const Eigen::VectorXd u = es.eigenvectors().col(kept_modes[i]);
        sqrt_info.row((int)i) = std::sqrt(ev) * u.transpose();
        residual0((int)i) = u.dot(g_schur) / std::sqrt(ev);
    }

    int offset = 0;
    for (std::size_t i = num_dropped; i < local_vars.size(); ++i) {
        const int v = local_vars[i];
        MarginalPrior::Entry e;
        e.key = keys_by_var[v];
        e.kind = variables_[v].kind;
        e.linearization = variables_[v].value;
        e.offset = offset;
        e.dim = variables_[v].tangent_dim();
        offset += e.dim;
        prior.entries.push_back(std::move(e));
    }
    prior.sqrt_info = std::move(sqrt_info);
    prior.residual0 = std::move(residual0);
    return prior;
}

MarginalPriorFactor::MarginalPriorFactor(MarginalPrior p, const std::vector<int>& ids)
    : prior(std::move(p)) {
    var_ids = ids;
}

Eigen::VectorXd MarginalPriorFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                              std::vector<Eigen::MatrixXd>* jacobians) const {
    Eigen::VectorXd delta(prior.sqrt_info.cols());
    for (std::size_t i = 0; i < prior.entries.size(); ++i) {
        const auto& e = prior.entries[i];
        delta.segment(e.offset, e.dim) = vars[i]->boxminus(e.linearization);
    }
    if (jacobians) {
        jacobians->resize(vars.size());
        for (std::size_t i = 0; i < prior.entries.size(); ++i) {
            const auto& e = prior.entries[i];
            (*jacobians)[i] = prior.sqrt_info.middleCols(e.offset, e.dim) *
                              vars[i]->boxminus_jacobian(e.linearization);
        }
    }
    return prior.residual0 + prior.sqrt_info * delta;
}

BlockPriorFactor::BlockPriorFactor(int var_id, const VariableBlock& target_block,
                                   const Eigen::MatrixXd& sqrt_information)
    : target(target_block.value), kind(target_block.kind), sqrt_info(sqrt_information) {
    var_ids = {var_id};
}

Eigen::VectorXd BlockPriorFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                           std::vector<Eigen::MatrixXd>* jacobians) const {
    const Eigen::VectorXd delta = vars[0]->boxminus(target);
    if (jacobians) {
        jacobians->resize(1);
        (*jacobians)[0] = sqrt_info * vars[0]->boxminus_jacobian(target);
    }
    return sqrt_info * delta;
}

DenseLinearFactor::DenseLinearFactor(const std::vector<int>& ids,
                                     std::vector<Eigen::MatrixXd> a, const Eigen::VectorXd& b,
                                     const Eigen::MatrixXd& sqrt_information)
    : coefficients(std::move(a)), offset(b), sqrt_info(sqrt_information) {
    var_ids = ids;
}

Eigen::VectorXd DenseLinearFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                            std::vector<Eigen::MatrixXd>* jacobians) const {
    Eigen::VectorXd r = -offset;
    for (std::size_t i = 0; i < vars.size(); ++i) r += coefficients[i] * vars[i]->value;
    if (jacobians) {
        jacobians->resize(vars.size());
        for (std::size_t i = 0; i < vars.size(); ++i) {
            (*jacobians)[i] = sqrt_info * coefficients[i];
        }
    }
    return sqrt_info * r;
}

}  // namespace vsrtk
