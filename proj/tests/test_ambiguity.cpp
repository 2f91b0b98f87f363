#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <algorithm>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>

#include "vsrtk/ambiguity.hpp"
#include "vsrtk/errors.hpp"

using namespace vsrtk;

namespace {

Eigen::MatrixXd random_pd(int n, std::mt19937_64& rng, double ev_min = 0.05,
                          double ev_max = 2.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) a(i, j) = g(rng);
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ();
    std::uniform_real_distribution<double> ev(ev_min, ev_max);
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i) d(i) = ev(rng);
    return q * d.asDiagonal() * q.transpose();
}

/// Exhaustive enumeration of the two best integer vectors. The box radius per
/// dimension comes from the bound (a_i - x_i)^2 <= q_bound * Q_ii, with
/// q_bound the second-smallest quadratic over a seed candidate set; partial
/// sums prune exactly against the running second-best.
std::vector<IntegerCandidate> brute_force_two(const Eigen::VectorXd& a,
                                              const Eigen::MatrixXd& q) {
    const int n = (int)a.size();
    const Eigen::MatrixXd q_inv = q.inverse();
    auto quad = [&](const Eigen::VectorXd& x) {
        const Eigen::VectorXd d = a - x;
        return d.dot(q_inv * d);
    };

    Eigen::VectorXd center(n);
    for (int i = 0; i < n; ++i) center(i) = std::round(a(i));
    std::vector<double> seed_vals = {quad(center)};
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd p = center, m = center;
        p(i) += 1;
        m(i) -= 1;
        seed_vals.push_back(quad(p));
        seed_vals.push_back(quad(m));
    }
    std::sort(seed_vals.begin(), seed_vals.end());
    const double q_bound = seed_vals[1] + 1e-9;

    std::vector<int> radius(n);
    for (int i = 0; i < n; ++i) radius[i] = (int)std::floor(std::sqrt(q_bound * q(i, i))) + 1;

    // Cholesky of Q^{-1}: F(x) = ||U (x - a)||^2 with U upper triangular, so
    // enumerate from the last coordinate down with exact partial costs.
    const Eigen::MatrixXd u = Eigen::LLT<Eigen::MatrixXd>(q_inv).matrixU();

    std::vector<IntegerCandidate> best;
    double bound = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x = center;

    std::function<void(int, double)> recurse = [&](int k, double partial) {
        if (partial >= bound) return;
        if (k < 0) {
            IntegerCandidate c{x, partial};
            best.push_back(c);
            std::sort(best.begin(), best.end(),
                      [](const auto& l, const auto& r) { return l.quadratic < r.quadratic; });
            if (best.size() > 2) best.resize(2);
            if (best.size() == 2) bound = best[1].quadratic;
            return;
        }
        for (int v = (int)center(k) - radius[k]; v <= (int)center(k) + radius[k]; ++v) {
            x(k) = v;
            double row = 0.0;
            for (int j = k; j < n; ++j) row += u(k, j) * (x(j) - a(j));
            recurse(k - 1, partial + row * row);
        }
        x(k) = center(k);
    };
    recurse(n - 1, 0.0);
    return best;
}

}  // namespace

TEST_CASE("adop unit cases") {
    CHECK(adop(Eigen::MatrixXd::Identity(3, 3)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(adop(4.0 * Eigen::MatrixXd::Identity(3, 3)) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(adop(0.01 * Eigen::MatrixXd::Identity(2, 2)) == doctest::Approx(0.1).epsilon(1e-12));
    Eigen::MatrixXd bad = -Eigen::MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS(adop(bad), NotPositiveDefinite);
}

TEST_CASE("decorrelation basics") {
    // Diagonal covariance needs no transformation.
    Eigen::MatrixXd d = Eigen::Vector3d(0.3, 1.0, 2.5).asDiagonal();
    auto r = decorrelate(d);
    CHECK((r.z - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);

    Eigen::MatrixXd q(2, 2);
    q << 0.5, 0.45, 0.45, 0.5;
    auto rd = decorrelate(q);
    CHECK(std::abs(std::abs(rd.z.determinant()) - 1.0) < 1e-9);
    const auto cond = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        return es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
    };
    CHECK(cond(rd.q_decorrelated) <= cond(q) + 1e-9);

    // Determinant (hence ADOP) is invariant under the unimodular congruence.
    std::mt19937_64 rng(41);
    for (int i = 0; i < 50; ++i) {
        const Eigen::MatrixXd qq = random_pd(2 + (int)(i % 5), rng);
        auto dr = decorrelate(qq);
        CHECK(dr.q_decorrelated.determinant() ==
              doctest::Approx(qq.determinant()).epsilon(1e-9));
        CHECK(adop(dr.q_decorrelated) == doctest::Approx(adop(qq)).epsilon(1e-10));
        for (int a = 0; a < dr.z.rows(); ++a) {
            for (int b = 0; b < dr.z.cols(); ++b) {
                CHECK(dr.z(a, b) == std::round(dr.z(a, b)));
            }
        }
    }

    Eigen::MatrixXd npd(2, 2);
    npd << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(decorrelate(npd), NotPositiveDefinite);
}

TEST_CASE("integer search trivial cases") {
    Eigen::VectorXd a(2);
    a << 0.1, -0.3;
    const Eigen::MatrixXd q = 0.01 * Eigen::MatrixXd::Identity(2, 2);
    auto c = integer_search(a, q);
    REQUIRE(c.size() == 2);
    CHECK(c[0].values(0) == 0.0);
    CHECK(c[0].values(1) == 0.0);
    CHECK(c[0].quadratic <= c[1].quadratic);

    Eigen::VectorXd ai(3);
    ai << 2.0, -5.0, 1.0;
    auto ci = integer_search(ai, Eigen::MatrixXd::Identity(3, 3));
    CHECK((ci[0].values - ai).norm() == 0.0);
    CHECK(ci[0].quadratic == doctest::Approx(0.0));
}

TEST_CASE("integer search matches brute force on the spec example") {
    Eigen::VectorXd a(2);
    a << 1.2, 2.8;
    Eigen::MatrixXd q(2, 2);
    q << 0.5, 0.45, 0.45, 0.5;
    auto fast = integer_search(a, q);
    auto slow = brute_force_two(a, q);
    REQUIRE(fast.size() == 2);
    CHECK((fast[0].values - slow[0].values).norm() == 0.0);
    CHECK(fast[0].quadratic == doctest::Approx(slow[0].quadratic).epsilon(1e-9));
    CHECK(fast[1].quadratic == doctest::Approx(slow[1].quadratic).epsilon(1e-9));
}

TEST_CASE("integer search equals exhaustive enumeration on random problems") {
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> u(-8.0, 8.0);
    std::uniform_int_distribution<int> dim(1, 6);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = dim(rng);
        const Eigen::MatrixXd q = random_pd(n, rng);
        Eigen::VectorXd a(n);
        for (int i = 0; i < n; ++i) a(i) = u(rng);
        auto fast = integer_search(a, q);
        auto slow = brute_force_two(a, q);
        REQUIRE(fast.size() >= 1);
        REQUIRE(slow.size() >= 1);
        CHECK((fast[0].values - slow[0].values).norm() == 0.0);
        CHECK(fast[0].quadratic == doctest::Approx(slow[0].quadratic).epsilon(1e-8));
        if (fast.size() > 1 && slow.size() > 1) {
            CHECK(fast[1].quadratic == doctest::Approx(slow[1].quadratic).epsilon(1e-8));
        }
    }
}

TEST_CASE("ratio validation and conditional fix") {
    Eigen::VectorXd a(2);
    a << 5.2, -3.1;
    const Eigen::MatrixXd q_nn = 0.04 * Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd q_pn = Eigen::MatrixXd::Zero(3, 2);
    q_pn(0, 0) = 0.01;
    q_pn(1, 1) = -0.02;

    std::vector<IntegerCandidate> cands = {{(Eigen::VectorXd(2) << 5, -3).finished(), 1.0},
                                           {(Eigen::VectorXd(2) << 6, -3).finished(), 5.0}};
    auto fixed = validate_and_fix(Eigen::Vector3d(1, 2, 3), a, q_nn, q_pn, cands, 3.0);
    CHECK(fixed.accepted);
    CHECK(fixed.ratio == doctest::Approx(5.0));
    // p_check = p_hat - Q_pn Q_nn^{-1} (a_float - a_int)
    const Eigen::VectorXd da = a - cands[0].values;
    const Eigen::Vector3d expect =
        Eigen::Vector3d(1, 2, 3) - q_pn * (q_nn.inverse() * da);
    CHECK((fixed.position - expect).norm() < 1e-12);

    auto rejected = validate_and_fix(Eigen::Vector3d(1, 2, 3), a, q_nn, q_pn,
                                     {{cands[0].values, 1.0}, {cands[1].values, 1.1}}, 3.0);
    CHECK(!rejected.accepted);
    CHECK((rejected.position - Eigen::Vector3d(1, 2, 3)).norm() == 0.0);

    // Zero correction when the float is already integral.
    Eigen::VectorXd ai(2);
    ai << 5.0, -3.0;
    auto zero = validate_and_fix(Eigen::Vector3d(1, 2, 3), ai, q_nn, q_pn,
                                 {{ai, 0.0}, {cands[1].values, 4.0}}, 3.0);
    CHECK(zero.accepted);
    CHECK((zero.position - Eigen::Vector3d(1, 2, 3)).norm() < 1e-12);
}

TEST_CASE("matrix and vector file round trip") {
    std::mt19937_64 rng(47);
    const Eigen::MatrixXd m = random_pd(4, rng);
    write_matrix_file("test_matrix_io.txt", m);
    const Eigen::MatrixXd m2 = read_matrix_file("test_matrix_io.txt");
    CHECK((m - m2).norm() < 1e-12);
    Eigen::VectorXd v(4);
    v << 1.5, -2.25, 0.125, 9.0;
    write_vector_file("test_vector_io.txt", v);
    CHECK((read_vector_file("test_vector_io.txt") - v).norm() == 0.0);
    std::remove("test_matrix_io.txt");
    std::remove("test_vector_io.txt");
}
