#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace vsrtk {

/// Integer least squares on float DD ambiguities: decorrelation, exact
/// search, ratio validation, conditional position fix, and ADOP.

struct DecorrelationResult {
    Eigen::MatrixXd z;             // integer unimodular, |det| = 1
    Eigen::MatrixXd q_decorrelated;  // Z^T Q Z
};

/// LAMBDA-style reduction. Throws NotPositiveDefinite.
DecorrelationResult decorrelate(const Eigen::MatrixXd& q_nn);

struct IntegerCandidate {
    Eigen::VectorXd values;   // integral entries
    double quadratic = 0.0;   // (a_hat - a)^T Q^{-1} (a_hat - a)
};

/// Best n_candidates integer vectors by the Q-weighted quadratic form,
/// ascending. Exact (search over the decorrelated problem with shrinking
/// bounds).
std::vector<IntegerCandidate> integer_search(const Eigen::VectorXd& a_float,
                                             const Eigen::MatrixXd& q_nn,
                                             int n_candidates = 2);

struct FixedSolution {
    Eigen::VectorXd integer_ambiguities;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    double ratio = 0.0;
    bool accepted = false;
};

/// Ratio test on the two best candidates; on acceptance the position is
/// conditionally adjusted with the covariance blocks of the float solution.
FixedSolution validate_and_fix(const Eigen::Vector3d& p_float,
                               const Eigen::VectorXd& a_float, const Eigen::MatrixXd& q_nn,
                               const Eigen::MatrixXd& q_pn,
                               const std::vector<IntegerCandidate>& candidates,
                               double ratio_threshold);

/// ADOP = det(Q_nn)^(1/(2m)), cycles.
double adop(const Eigen::MatrixXd& q_nn);

/// Plain-text square matrix / vector files for standalone use: first token is
/// the dimension, then row-major entries.
void write_matrix_file(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_file(const std::string& path);
void write_vector_file(const std::string& path, const Eigen::VectorXd& v);
Eigen::VectorXd read_vector_file(const std::string& path);

}  // namespace vsrtk
