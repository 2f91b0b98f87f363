#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <memory>
#include <random>

#include "vsrtk/errors.hpp"
#include "vsrtk/factor_graph.hpp"
#include "vsrtk/factors.hpp"
#include "vsrtk/imu.hpp"

using namespace vsrtk;

namespace {

std::mt19937_64 g_rng(101);

double urand(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(g_rng);
}

Eigen::Vector3d vrand(double scale) {
    return {urand(-scale, scale), urand(-scale, scale), urand(-scale, scale)};
}

VariableBlock random_pose(double pos_scale = 10.0, double rot_scale = 0.8) {
    return VariableBlock::pose(vrand(pos_scale), so3::exp(vrand(rot_scale)));
}

VariableBlock random_velbias() {
    Eigen::VectorXd v(9);
    v.segment<3>(0) = vrand(5.0);
    v.segment<3>(3) = vrand(0.1);
    v.segment<3>(6) = vrand(0.02);
    return VariableBlock::euclidean(v);
}

/// Central finite-difference check of a factor's Jacobians at the given
/// variable values. Returns the max relative error against the analytic
/// Jacobian (relative to the max |J| entry, floored at 1).
double max_jacobian_error(const Factor& factor, std::vector<VariableBlock> vars,
                          double h = 1e-6) {
    std::vector<const VariableBlock*> ptrs;
    for (auto& v : vars) ptrs.push_back(&v);
    std::vector<Eigen::MatrixXd> analytic;
    factor.evaluate(ptrs, &analytic);

    double scale = 1.0;
    for (const auto& j : analytic) scale = std::max(scale, j.cwiseAbs().maxCoeff());

    double max_err = 0.0;
    for (std::size_t vi = 0; vi < vars.size(); ++vi) {
        const int td = vars[vi].tangent_dim();
        for (int d = 0; d < td; ++d) {
            Eigen::VectorXd delta = Eigen::VectorXd::Zero(td);
            std::vector<VariableBlock> plus = vars, minus = vars;
            delta(d) = h;
            plus[vi].retract(delta);
            delta(d) = -h;
            minus[vi].retract(delta);
            std::vector<const VariableBlock*> pp, pm;
            for (auto& v : plus) pp.push_back(&v);
            for (auto& v : minus) pm.push_back(&v);
            const Eigen::VectorXd fd =
                (factor.evaluate(pp, nullptr) - factor.evaluate(pm, nullptr)) / (2.0 * h);
            max_err = std::max(max_err,
                               (fd - analytic[vi].col(d)).cwiseAbs().maxCoeff() / scale);
        }
    }
    return max_err;
}

GnssGeometry random_geometry(bool with_lever = true) {
    GnssGeometry g;
    const GeodeticOrigin o = GeodeticOrigin::from_geodetic(urand(-1.2, 1.2), urand(-3.1, 3.1));
    g.r_enu_to_ecef = o.rotation_enu_to_ecef();
    g.origin_ecef = o.origin_ecef;
    g.lever_arm = with_lever ? vrand(0.5) : Eigen::Vector3d::Zero();
    return g;
}

DdObservation random_dd(const GnssGeometry& g) {
    DdObservation dd;
    dd.wavelength = 0.19029;
    dd.sigma_rho = urand(0.3, 2.0);
    dd.sigma_psi = dd.sigma_rho / 100.0;
    dd.dd_pseudorange = urand(-20.0, 20.0);
    dd.dd_carrier = urand(-100.0, 100.0);
    dd.slave_pos = g.origin_ecef + g.r_enu_to_ecef * (2.02e7 * vrand(1.0).normalized());
    dd.master_pos = g.origin_ecef + g.r_enu_to_ecef * (2.02e7 * vrand(1.0).normalized());
    return dd;
}

}  // namespace

TEST_CASE("jacobians: dd pseudorange factor") {
    for (int i = 0; i < 100; ++i) {
        const GnssGeometry g = random_geometry();
        DdPseudorangeFactor f(0, 1, random_dd(g), g.origin_ecef + vrand(5000.0), g,
                              urand(0.0, 1.0));
        // Residual subtracts ~2e7 m ranges; FD step sized for roundoff.
        CHECK(max_jacobian_error(f, {random_pose(), random_pose()}, 3e-3) < 1e-5);
    }
}

TEST_CASE("jacobians: dd carrier factor") {
    for (int i = 0; i < 100; ++i) {
        const GnssGeometry g = random_geometry();
        DdCarrierFactor f(0, 1, 2, random_dd(g), g.origin_ecef + vrand(5000.0), g,
                          urand(0.0, 1.0));
        CHECK(max_jacobian_error(
                  f, {random_pose(), random_pose(),
                      VariableBlock::euclidean(Eigen::VectorXd::Constant(1, urand(-30, 30)))},
                  3e-3) < 1e-5);
    }
}

TEST_CASE("jacobians: doppler factor") {
    for (int i = 0; i < 100; ++i) {
        const GnssGeometry g = random_geometry();
        SatObs obs;
        obs.wavelength = 0.19029;
        obs.doppler = urand(-1000.0, 1000.0);
        obs.sat_pos = g.origin_ecef + g.r_enu_to_ecef * (2.02e7 * vrand(1.0).normalized());
        obs.sat_vel = vrand(2000.0);
        obs.sat_clock_drift = urand(-1e-8, 1e-8);
        DopplerFactor f(0, 1, 2, 3, 4, obs, g, urand(0.0, 1.0), urand(0.5, 2.0));
        CHECK(max_jacobian_error(
                  f, {random_pose(), random_pose(), random_velbias(), random_velbias(),
                      VariableBlock::euclidean(Eigen::VectorXd::Constant(1, urand(-1e-8, 1e-8)))},
                  1e-3) < 1e-5);
    }
}

TEST_CASE("jacobians: constant ambiguity factor") {
    for (int i = 0; i < 20; ++i) {
        ConstantAmbiguityFactor f(0, 1, 0.19029, urand(0.001, 0.01));
        CHECK(max_jacobian_error(
                  f, {VariableBlock::euclidean(Eigen::VectorXd::Constant(1, urand(-9, 9))),
                      VariableBlock::euclidean(Eigen::VectorXd::Constant(1, urand(-9, 9)))}) <
              1e-6);
    }
}

TEST_CASE("jacobians: point-to-plane factor") {
    for (int i = 0; i < 100; ++i) {
        const Eigen::Vector3d a = vrand(20.0);
        Eigen::Vector3d b = a + vrand(1.0);
        Eigen::Vector3d c = a + vrand(1.0);
        if ((a - b).cross(a - c).norm() < 1e-3) continue;
        RigidTransform ext;
        ext.rotation = so3::exp(vrand(0.3));
        ext.translation = vrand(0.3);
        VsPointPlaneFactor f(0, vrand(30.0), a, b, c, ext, urand(0.05, 0.5));
        CHECK(max_jacobian_error(f, {random_pose()}) < 1e-5);
    }
}

TEST_CASE("jacobians: imu preintegration factor") {
    ImuNoiseParams noise;
    for (int i = 0; i < 30; ++i) {
        std::vector<ImuSample> samples;
        const double dt = 0.01;
        const Eigen::Vector3d w = vrand(0.5);
        const Eigen::Vector3d a = vrand(2.0) + Eigen::Vector3d(0, 0, 9.81);
        for (int k = 0; k <= 50; ++k) {
            samples.push_back({k * dt, w + 0.1 * vrand(1.0), a + 0.1 * vrand(1.0)});
        }
        auto delta = preintegrate(samples, vrand(0.05), vrand(0.01), noise);
        ImuPreintFactor f(0, 1, 2, 3, delta, Eigen::Vector3d(0, 0, -9.81));
        CHECK(max_jacobian_error(
                  f, {random_pose(5.0, 0.5), random_velbias(), random_pose(5.0, 0.5),
                      random_velbias()},
                  1e-6) < 1e-5);
    }
}

TEST_CASE("jacobians: relative pose, position prior, block prior, marginal prior") {
    for (int i = 0; i < 50; ++i) {
        Eigen::Matrix<double, 6, 6> si = Eigen::Matrix<double, 6, 6>::Identity();
        si.diagonal().setConstant(urand(0.5, 20.0));
        RelativePoseFactor rel(0, 1, vrand(3.0), so3::exp(vrand(0.6)), si);
        CHECK(max_jacobian_error(rel, {random_pose(), random_pose()}) < 1e-5);

        PositionPriorFactor pp(0, vrand(10.0), urand(0.05, 1.0));
        CHECK(max_jacobian_error(pp, {random_pose()}) < 1e-6);

        BlockPriorFactor bp(0, random_pose(), Eigen::MatrixXd::Identity(6, 6) * urand(0.5, 5));
        CHECK(max_jacobian_error(bp, {random_pose()}) < 1e-5);
    }

    // Marginal prior over one pose and one scalar.
    for (int i = 0; i < 20; ++i) {
        MarginalPrior prior;
        MarginalPrior::Entry e0;
        e0.key = 1;
        e0.kind = VariableBlock::Kind::Pose;
        e0.linearization = random_pose().value;
        e0.offset = 0;
        e0.dim = 6;
        MarginalPrior::Entry e1;
        e1.key = 2;
        e1.kind = VariableBlock::Kind::Euclidean;
        e1.linearization = Eigen::VectorXd::Constant(1, urand(-5, 5));
        e1.offset = 6;
        e1.dim = 1;
        prior.entries = {e0, e1};
        Eigen::MatrixXd m = Eigen::MatrixXd::Random(7, 7);
        prior.sqrt_info = m;
        prior.residual0 = Eigen::VectorXd::Random(7);
        MarginalPriorFactor f(prior, {0, 1});
        CHECK(max_jacobian_error(
                  f, {random_pose(),
                      VariableBlock::euclidean(Eigen::VectorXd::Constant(1, urand(-5, 5)))}) <
              1e-5);
    }
}

TEST_CASE("linear-gaussian graph matches dense least squares") {
    // Three 2-vector states, random linear factors; GN must land on the
    // closed-form normal-equations solution in one step.
    FactorGraph graph;
    std::vector<int> ids;
    for (int i = 0; i < 3; ++i) {
        ids.push_back(graph.add_variable(VariableBlock::euclidean(Eigen::Vector2d(0, 0))));
    }

    std::vector<Eigen::MatrixXd> a_rows;
    std::vector<Eigen::VectorXd> b_rows;
    auto add_linear = [&](const std::vector<int>& vars, int rows) {
        std::vector<Eigen::MatrixXd> coeffs;
        Eigen::MatrixXd a_full = Eigen::MatrixXd::Zero(rows, 6);
        for (int v : vars) {
            Eigen::MatrixXd c = Eigen::MatrixXd::Random(rows, 2);
            coeffs.push_back(c);
            a_full.middleCols(2 * v, 2) = c;
        }
        const Eigen::VectorXd b = Eigen::VectorXd::Random(rows);
        graph.add_factor(std::make_unique<DenseLinearFactor>(
            vars, coeffs, b, Eigen::MatrixXd::Identity(rows, rows)));
        a_rows.push_back(a_full);
        b_rows.push_back(b);
    };
    add_linear({0}, 2);
    add_linear({0, 1}, 3);
    add_linear({1, 2}, 3);
    add_linear({2}, 2);

    graph.optimize();

    // Dense oracle: stack rows, solve normal equations.
    int total_rows = 0;
    for (const auto& a : a_rows) total_rows += (int)a.rows();
    Eigen::MatrixXd a_all(total_rows, 6);
    Eigen::VectorXd b_all(total_rows);
    int r = 0;
    for (std::size_t i = 0; i < a_rows.size(); ++i) {
        a_all.middleRows(r, a_rows[i].rows()) = a_rows[i];
        b_all.segment(r, b_rows[i].size()) = b_rows[i];
        r += (int)a_rows[i].rows();
    }
    const Eigen::VectorXd x_star =
        (a_all.transpose() * a_all).ldlt().solve(a_all.transpose() * b_all);

    for (int i = 0; i < 3; ++i) {
        CHECK((graph.variable(ids[i]).value - x_star.segment(2 * i, 2)).norm() < 1e-10);
    }

    // Covariance equals the direct inverse of the information matrix.
    const Eigen::MatrixXd cov = graph.covariance({0, 1, 2});
    const Eigen::MatrixXd direct = (a_all.transpose() * a_all).inverse();
    CHECK((cov - direct).norm() < 1e-9 * direct.norm());
}

TEST_CASE("prior-only graph returns the prior mean") {
    FactorGraph graph;
    const VariableBlock target = random_pose();
    const int id = graph.add_variable(random_pose());
    graph.add_factor(
        std::make_unique<BlockPriorFactor>(id, target, Eigen::MatrixXd::Identity(6, 6)));
    const auto report = graph.optimize();
    CHECK(report.converged);
    CHECK(graph.variable(id).boxminus(target.value).norm() < 1e-9);
}

TEST_CASE("optimize throws on unconstrained variables") {
    FactorGraph graph;
    graph.add_variable(VariableBlock::euclidean(Eigen::Vector2d(0, 0)));
    const int id1 = graph.add_variable(VariableBlock::euclidean(Eigen::Vector2d(0, 0)));
    graph.add_factor(std::make_unique<DenseLinearFactor>(
        std::vector<int>{id1}, std::vector<Eigen::MatrixXd>{Eigen::Matrix2d::Identity()},
        Eigen::Vector2d(1, 1), Eigen::Matrix2d::Identity()));
    CHECK_THROWS_AS(graph.optimize(), SingularSystem);
}

TEST_CASE("objective never increases across accepted iterations") {
    // Nonlinear graph: a few poses chained by relative factors plus a prior.
    FactorGraph graph;
    std::vector<int> poses;
    for (int i = 0; i < 4; ++i) poses.push_back(graph.add_variable(random_pose(2.0, 0.5)));
    graph.add_factor(std::make_unique<BlockPriorFactor>(
        poses[0], random_pose(2.0, 0.5), Eigen::MatrixXd::Identity(6, 6) * 10.0));
    Eigen::Matrix<double, 6, 6> si = Eigen::Matrix<double, 6, 6>::Identity() * 5.0;
    for (int i = 0; i + 1 < 4; ++i) {
        graph.add_factor(std::make_unique<RelativePoseFactor>(
            poses[i], poses[i + 1], vrand(1.0), so3::exp(vrand(0.4)), si));
    }
    const double before = graph.total_cost();
    const auto report = graph.optimize();
    CHECK(report.final_cost <= before + 1e-12);
    CHECK(report.final_cost <= report.initial_cost);
}

TEST_CASE("marginalization: 3-state linear chain equals full batch") {
    // x0 --(x1-x0=1)-- x1 --(x2-x1=2)-- x2, prior x0=0.5, direct meas x2=3.2.
    auto build = [&](FactorGraph& g) {
        std::vector<int> ids;
        for (int i = 0; i < 3; ++i) {
            ids.push_back(g.add_variable(VariableBlock::euclidean(
                Eigen::VectorXd::Constant(1, 0.0))));
        }
        auto I1 = Eigen::MatrixXd::Identity(1, 1);
        g.add_factor(std::make_unique<DenseLinearFactor>(
            std::vector<int>{ids[0]}, std::vector<Eigen::MatrixXd>{I1},
            Eigen::VectorXd::Constant(1, 0.5), I1 * 2.0));
        g.add_factor(std::make_unique<DenseLinearFactor>(
            std::vector<int>{ids[0], ids[1]}, std::vector<Eigen::MatrixXd>{-I1, I1},
            Eigen::VectorXd::Constant(1, 1.0), I1 * 1.5));
        g.add_factor(std::make_unique<DenseLinearFactor>(
            std::vector<int>{ids[1], ids[2]}, std::vector<Eigen::MatrixXd>{-I1, I1},
            Eigen::VectorXd::Constant(1, 2.0), I1 * 1.0));
        g.add_factor(std::make_unique<DenseLinearFactor>(
            std::vector<int>{ids[2]}, std::vector<Eigen::MatrixXd>{I1},
            Eigen::VectorXd::Constant(1, 3.2), I1 * 3.0));
        return ids;
    };

    FactorGraph full;
    auto ids_full = build(full);
    full.optimize();

    FactorGraph to_marg;
    auto ids_m = build(to_marg);
    const MarginalPrior prior = to_marg.marginalize({ids_m[0]}, {10, 11, 12});
    REQUIRE(!prior.empty());
    CHECK(prior.entries.size() == 1);  // only x1 is in x0's blanket
    CHECK(prior.entries[0].key == 11);

    // Rebuild a graph holding x1, x2 with the prior replacing x0's factors.
    FactorGraph reduced;
    const int x1 = reduced.add_variable(VariableBlock::euclidean(
        Eigen::VectorXd::Constant(1, 0.0)));
    const int x2 = reduced.add_variable(VariableBlock::euclidean(
        Eigen::VectorXd::Constant(1, 0.0)));
    reduced.add_factor(std::make_unique<MarginalPriorFactor>(prior, std::vector<int>{x1}));
    auto I1 = Eigen::MatrixXd::Identity(1, 1);
    reduced.add_factor(std::make_unique<DenseLinearFactor>(
        std::vector<int>{x1, x2}, std::vector<Eigen::MatrixXd>{-I1, I1},
        Eigen::VectorXd::Constant(1, 2.0), I1 * 1.0));
    reduced.add_factor(std::make_unique<DenseLinearFactor>(
        std::vector<int>{x2}, std::vector<Eigen::MatrixXd>{I1},
        Eigen::VectorXd::Constant(1, 3.2), I1 * 3.0));
    reduced.optimize();

    CHECK(std::abs(reduced.variable(x1).value(0) - full.variable(ids_full[1]).value(0)) < 1e-9);
    CHECK(std::abs(reduced.variable(x2).value(0) - full.variable(ids_full[2]).value(0)) < 1e-9);
}

TEST_CASE("repeated marginalization over a 10-step chain tracks the batch solution") {
    // Random-walk chain with per-state measurements; marginalize states one by
    // one and compare the final state against the full batch (the recursive
    // filtering equivalence).
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int n = 10;
    std::vector<double> steps, meas;
    for (int i = 0; i < n; ++i) {
        steps.push_back(u(rng));
        meas.push_back(2.0 * i + u(rng));
    }

    auto I1 = Eigen::MatrixXd::Identity(1, 1);

    // Full batch.
    FactorGraph full;
    std::vector<int> ids;
    for (int i = 0; i < n; ++i) {
        ids.push_back(
            full.add_variable(VariableBlock::euclidean(Eigen::VectorXd::Constant(1, 0.0))));
    }
    full.add_factor(std::make_unique<DenseLinearFactor>(
        std::vector<int>{ids[0]}, std::vector<Eigen::MatrixXd>{I1},
        Eigen::VectorXd::Constant(1, meas[0]), I1 * 1.0));
    for (int i = 1; i < n; ++i) {
        full.add_factor(std::make_unique<DenseLinearFactor>(
            std::vector<int>{ids[i - 1], ids[i]}, std::vector<Eigen::MatrixXd>{-I1, I1},
            Eigen::VectorXd::Constant(1, steps[i]), I1 * 2.0));
        full.add_factor(std::make_unique<DenseLinearFactor>(
            std::vector<int>{ids[i]}, std::vector<Eigen::MatrixXd>{I1},
            Eigen::VectorXd::Constant(1, meas[i]), I1 * 1.0));
    }
    full.optimize();

    // Sliding 2-state window: the measurement on the older state stays in the
    // window (it was not consumed by the previous marginalization) and is
    // absorbed into the prior when that state drops out.
    MarginalPrior carry;
    double current = 0.0;
    for (int i = 1; i < n; ++i) {
        FactorGraph g;
        const int prev = g.add_variable(VariableBlock::euclidean(
            Eigen::VectorXd::Constant(1, current)));
        const int next = g.add_variable(VariableBlock::euclidean(
            Eigen::VectorXd::Constant(1, current + steps[i])));
        if (!carry.empty()) {
            g.add_factor(std::make_unique<MarginalPriorFactor>(carry, std::vector<int>{prev}));
        }
        g.add_factor(std::make_unique<DenseLinearFactor>(
            std::vector<int>{prev}, std::vector<Eigen::MatrixXd>{I1},
            Eigen::VectorXd::Constant(1, meas[i - 1]), I1 * 1.0));
        g.add_factor(std::make_unique<DenseLinearFactor>(
            std::vector<int>{prev, next}, std::vector<Eigen::MatrixXd>{-I1, I1},
            Eigen::VectorXd::Constant(1, steps[i]), I1 * 2.0));
        g.add_factor(std::make_unique<DenseLinearFactor>(
            std::vector<int>{next}, std::vector<Eigen::MatrixXd>{I1},
            Eigen::VectorXd::Constant(1, meas[i]), I1 * 1.0));
        g.optimize();
        current = g.variable(next).value(0);
        carry = g.marginalize({prev}, {0, 1});
    }

    CHECK(std::abs(current - full.variable(ids[n - 1]).value(0)) < 1e-9);
}

TEST_CASE("marginalizing a state with no factors yields an empty prior") {
    FactorGraph g;
    const int lonely = g.add_variable(VariableBlock::euclidean(Eigen::Vector2d(1, 2)));
    const MarginalPrior prior = g.marginalize({lonely}, {7});
    CHECK(prior.empty());
}

TEST_CASE("covariance blocks: symmetry and information monotonicity") {
    FactorGraph g;
    const int a = g.add_variable(VariableBlock::euclidean(Eigen::Vector3d(0, 0, 0)));
    const int b = g.add_variable(VariableBlock::euclidean(Eigen::Vector2d(0, 0)));
    Eigen::MatrixXd ca = Eigen::MatrixXd::Random(4, 3);
    Eigen::MatrixXd cb = Eigen::MatrixXd::Random(4, 2);
    g.add_factor(std::make_unique<DenseLinearFactor>(
        std::vector<int>{a, b}, std::vector<Eigen::MatrixXd>{ca, cb},
        Eigen::VectorXd::Random(4), Eigen::MatrixXd::Identity(4, 4)));
    g.add_factor(std::make_unique<DenseLinearFactor>(
        std::vector<int>{a}, std::vector<Eigen::MatrixXd>{Eigen::Matrix3d::Identity()},
        Eigen::Vector3d::Random(), Eigen::Matrix3d::Identity()));
    g.add_factor(std::make_unique<DenseLinearFactor>(
        std::vector<int>{b}, std::vector<Eigen::MatrixXd>{Eigen::Matrix2d::Identity()},
        Eigen::Vector2d::Random(), Eigen::Matrix2d::Identity()));

    const Eigen::MatrixXd cov = g.covariance({a, b});
    CHECK((cov - cov.transpose()).norm() < 1e-12);
    const Eigen::MatrixXd q_bb = cov.block(3, 3, 2, 2);
    CHECK(Eigen::LLT<Eigen::MatrixXd>(q_bb).info() == Eigen::Success);

    // Adding a factor never increases det of any marginal block.
    const double det_before = q_bb.determinant();
    g.add_factor(std::make_unique<DenseLinearFactor>(
        std::vector<int>{b}, std::vector<Eigen::MatrixXd>{Eigen::Matrix2d::Identity() * 0.7},
        Eigen::Vector2d::Random(), Eigen::Matrix2d::Identity()));
    const double det_after = g.covariance({a, b}).block(3, 3, 2, 2).determinant();
    CHECK(det_after <= det_before + 1e-15);
}
