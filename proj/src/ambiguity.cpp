#include "vsrtk/ambiguity.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "vsrtk/errors.hpp"

namespace vsrtk {

namespace {

// Q = L^T diag(D) L with L unit lower triangular.
void ltdl_factorize(const Eigen::MatrixXd& q, Eigen::MatrixXd& l, Eigen::VectorXd& d) {
    const int n = (int)q.rows();
    Eigen::MatrixXd a = q;
    l = Eigen::MatrixXd::Zero(n, n);
    d = Eigen::VectorXd::Zero(n);
    for (int i = n - 1; i >= 0; --i) {
        d(i) = a(i, i);
        if (d(i) <= 0.0) throw NotPositiveDefinite("ltdl_factorize: non-PD matrix");
        const double s = std::sqrt(d(i));
        for (int j = 0; j <= i; ++j) l(i, j) = a(i, j) / s;
        for (int j = 0; j < i; ++j) {
            for (int k = 0; k <= j; ++k) a(j, k) -= l(i, k) * l(i, j);
        }
        for (int j = 0; j <= i; ++j) l(i, j) /= l(i, i);
    }
}

void gauss_transform(Eigen::MatrixXd& l, Eigen::MatrixXd& z, int i, int j) {
    const int n = (int)l.rows();
    const long mu = std::lround(l(i, j));
    if (mu == 0) return;
    for (int k = i; k < n; ++k) l(k, j) -= (double)mu * l(k, i);
    for (int k = 0; k < n; ++k) z(k, j) -= (double)mu * z(k, i);
}

void permute(Eigen::MatrixXd& l, Eigen::VectorXd& d, int j, double del, Eigen::MatrixXd& z) {
    const int n = (int)l.rows();
    const double eta = d(j) / del;
    const double lam = d(j + 1) * l(j + 1, j) / del;
    d(j) = eta * d(j + 1);
    d(j + 1) = del;
    for (int k = 0; k < j; ++k) {
        const double a0 = l(j, k);
        const double a1 = l(j + 1, k);
        l(j, k) = -l(j + 1, j) * a0 + a1;
        l(j + 1, k) = eta * a0 + lam * a1;
    }
    l(j + 1, j) = lam;
    for (int k = j + 2; k < n; ++k) std::swap(l(k, j), l(k, j + 1));
    for (int k = 0; k < n; ++k) std::swap(z(k, j), z(k, j + 1));
}

// Reduction: z holds the transform with z_new = Z^T a convention.
void reduce(Eigen::MatrixXd& l, Eigen::VectorXd& d, Eigen::MatrixXd& z) {
    const int n = (int)l.rows();
    int j = n - 2;
    int k = n - 2;
    while (j >= 0) {
        if (j <= k) {
            for (int i = j + 1; i < n; ++i) gauss_transform(l, z, i, j);
        }
        const double del = d(j) + l(j + 1, j) * l(j + 1, j) * d(j + 1);
        if (del + 1e-6 < d(j + 1)) {
            permute(l, d, j, del, z);
            k = j;
            j = n - 2;
        } else {
            --j;
        }
    }
}

inline double sgn(double x) { return x <= 0.0 ? -1.0 : 1.0; }

// Shrinking-ellipsoid search on the reduced problem; returns the n_max best
// integer vectors ascending by quadratic form. Exact.
std::vector<IntegerCandidate> mlambda_search(const Eigen::MatrixXd& l,
                                             const Eigen::VectorXd& d,
                                             const Eigen::VectorXd& zs, int n_max) {
    const int n = (int)zs.size();
    std::vector<IntegerCandidate> cands;

    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd dist = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd zb = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd step = Eigen::VectorXd::Zero(n);

    double maxdist = std::numeric_limits<double>::max();
    int k = n - 1;
    dist(k) = 0.0;
    zb(k) = zs(k);
    z(k) = std::round(zb(k));
    double y = zb(k) - z(k);
    step(k) = sgn(y);

    for (int iter = 0; iter < 1000000; ++iter) {
        const double newdist = dist(k) + y * y / d(k);
        if (newdist < maxdist) {
            if (k != 0) {
                --k;
                dist(k) = newdist;
                for (int i = 0; i <= k; ++i) {
                    s(k, i) = s(k + 1, i) + (z(k + 1) - zb(k + 1)) * l(k + 1, i);
                }
                zb(k) = zs(k) + s(k, k);
                z(k) = std::round(zb(k));
                y = zb(k) - z(k);
                step(k) = sgn(y);
            } else {
                if ((int)cands.size() < n_max) {
                    cands.push_back({z, newdist});
                } else {
                    auto worst = std::max_element(
                        cands.begin(), cands.end(),
                        [](const auto& a, const auto& b) { return a.quadratic < b.quadratic; });
                    if (newdist < worst->quadratic) *worst = {z, newdist};
                }
                if ((int)cands.size() == n_max) {
                    maxdist = std::max_element(cands.begin(), cands.end(),
                                               [](const auto& a, const auto& b) {
                                                   return a.quadratic < b.quadratic;
                                               })
                                  ->quadratic;
                }
                z(0) += step(0);
                y = zb(0) - z(0);
                step(0) = -step(0) - sgn(step(0));
            }
        } else {
            if (k == n - 1) break;
            ++k;
            z(k) += step(k);
            y = zb(k) - z(k);
            step(k) = -step(k) - sgn(step(k));
        }
    }
    std::sort(cands.begin(), cands.end(),
              [](const auto& a, const auto& b) { return a.quadratic < b.quadratic; });
    return cands;
}

}  // namespace

DecorrelationResult decorrelate(const Eigen::MatrixXd& q_nn) {
    const int n = (int)q_nn.rows();
    Eigen::MatrixXd l;
    Eigen::VectorXd d;
    ltdl_factorize(q_nn, l, d);
    Eigen::MatrixXd z = Eigen::MatrixXd::Identity(n, n);
    const bool diagonal = (q_nn - q_nn.diagonal().asDiagonal().toDenseMatrix()).isZero(0.0);
    if (diagonal) {
        // Already decorrelated; reduction would only permute.
        return {z, q_nn};
    }
    reduce(l, d, z);
    // Snap to exact integers accumulated through the transforms.
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) z(i, j) = std::round(z(i, j));
    }
    DecorrelationResult out;
    out.q_decorrelated = z.transpose() * q_nn * z;
    out.z = std::move(z);
    return out;
}

std::vector<IntegerCandidate> integer_search(const Eigen::VectorXd& a_float,
                                             const Eigen::MatrixXd& q_nn, int n_candidates) {
    const int n = (int)a_float.size();
    Eigen::MatrixXd l;
    Eigen::VectorXd d;
    ltdl_factorize(q_nn, l, d);
    Eigen::MatrixXd z = Eigen::MatrixXd::Identity(n, n);
    reduce(l, d, z);

    const Eigen::VectorXd zs = z.transpose() * a_float;
    std::vector<IntegerCandidate> reduced = mlambda_search(l, d, zs, n_candidates);

    // Back-transform: z = Z^T a  =>  a = Z^{-T} z, integer because Z is unimodular.
    const Eigen::MatrixXd z_inv_t = z.inverse().transpose();
    for (auto& c : reduced) {
        Eigen::VectorXd a = z_inv_t * c.values;
        for (int i = 0; i < n; ++i) a(i) = std::round(a(i));
        c.values = a;
    }
    return reduced;
}

FixedSolution validate_and_fix(const Eigen::Vector3d& p_float, const Eigen::VectorXd& a_float,
                               const Eigen::MatrixXd& q_nn, const Eigen::MatrixXd& q_pn,
                               const std::vector<IntegerCandidate>& candidates,
                               double ratio_threshold) {
    FixedSolution out;
    out.position = p_float;
    if (candidates.empty()) return out;
    out.integer_ambiguities = candidates[0].values;
    if (candidates.size() < 2) return out;

    const double q1 = candidates[0].quadratic;
    const double q2 = candidates[1].quadratic;
    out.ratio = q1 > 1e-12 ? q2 / q1 : std::numeric_limits<double>::infinity();
    if (out.ratio >= ratio_threshold) {
        out.accepted = true;
        const Eigen::VectorXd da = a_float - candidates[0].values;
        out.position = p_float - q_pn * q_nn.ldlt().solve(da);
    }
    return out;
}

double adop(const Eigen::MatrixXd& q_nn) {
    const int m = (int)q_nn.rows();
    if (m < 1) throw NotPositiveDefinite("adop: empty matrix");
    Eigen::LLT<Eigen::MatrixXd> llt(q_nn);
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("adop: non-PD matrix");
    double log_sum = 0.0;
    for (int i = 0; i < m; ++i) log_sum += std::log(llt.matrixL()(i, i));
    return std::exp(log_sum / m);
}

void write_matrix_file(const std::string& path, const Eigen::MatrixXd& m) {
    std::ofstream out(path);
    if (!out) throw IoError("write_matrix_file: cannot open " + path);
    out << m.rows() << "\n";
    out.precision(17);
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) out << m(i, j) << (j + 1 == m.cols() ? "\n" : " ");
    }
}

Eigen::MatrixXd read_matrix_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_matrix_file: cannot open " + path);
    int n = 0;
    in >> n;
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (!(in >> m(i, j))) throw IoError("read_matrix_file: truncated " + path);
        }
    }
    return m;
}

void write_vector_file(const std::string& path, const Eigen::VectorXd& v) {
    std::ofstream out(path);
    if (!out) throw IoError("write_vector_file: cannot open " + path);
    out << v.size() << "\n";
    out.precision(17);
    for (int i = 0; i < v.size(); ++i) out << v(i) << "\n";
}

Eigen::VectorXd read_vector_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_vector_file: cannot open " + path);
    int n = 0;
    in >> n;
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
        if (!(in >> v(i))) throw IoError("read_vector_file: truncated " + path);
    }
    return v;
}

}  // namespace vsrtk
