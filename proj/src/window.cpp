#include "vsrtk/window.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

#include "vsrtk/errors.hpp"
#include "vsrtk/so3.hpp"

namespace vsrtk {

InterpolatedPv interpolate_state(const NavState& state_k, const NavState& state_k1, double t) {
    const double t0 = state_k.timestamp;
    const double t1 = state_k1.timestamp;
    if (t1 <= t0) throw OutOfInterval("interpolate_state: non-increasing keyframe times");
    if (t < t0 - 1e-9 || t > t1 + 1e-9) {
        throw OutOfInterval("interpolate_state: t outside keyframe interval");
    }
    const double alpha = (t1 - t) / (t1 - t0);
    const double beta = 1.0 - alpha;
    return {alpha * state_k.position + beta * state_k1.position,
            alpha * state_k.velocity + beta * state_k1.velocity};
}

namespace {

Eigen::Quaterniond interpolate_orientation(const Eigen::Quaterniond& qa,
                                           const Eigen::Quaterniond& qb, double beta) {
    return (qa * so3::exp(beta * so3::log(qa.conjugate() * qb))).normalized();
}

/// Keeps only constellations with at least two satellites observed by both
/// receivers, the precondition for master selection.
EpochObs keep_usable_constellations(const EpochObs& epoch) {
    std::map<Constellation, int> matched;
    for (const auto& o : epoch.rover_obs) {
        for (const auto& b : epoch.base_obs) {
            if (b.prn == o.prn && b.constellation == o.constellation) {
                ++matched[o.constellation];
                break;
            }
        }
    }
    EpochObs out = epoch;
    out.rover_obs.clear();
    for (const auto& o : epoch.rover_obs) {
        const auto it = matched.find(o.constellation);
        if (it != matched.end() && it->second >= 2) out.rover_obs.push_back(o);
    }
    return out;
}

Eigen::Matrix<double, 6, 6> pose_sqrt_info(double sigma_p, double sigma_rot) {
    Eigen::Matrix<double, 6, 6> si = Eigen::Matrix<double, 6, 6>::Zero();
    si.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity() / sigma_p;
    si.block<3, 3>(3, 3) = Eigen::Matrix3d::Identity() / sigma_rot;
    return si;
}

}  // namespace

// ---------------------------------------------------------------------------
// GlobalPoseGraph

void GlobalPoseGraph::add_keyframe(int id, const RigidTransform& initial_pose) {
    index_[id] = (int)nodes_.size();
    nodes_.push_back({id, initial_pose});
}

void GlobalPoseGraph::add_relative(int id_from, int id_to, const RigidTransform& rel,
                                   double sigma_p, double sigma_rot) {
    rel_edges_.push_back({id_from, id_to, rel, sigma_p, sigma_rot});
}

void GlobalPoseGraph::add_absolute(int id, const Eigen::Vector3d& position, double sigma) {
    abs_edges_.push_back({id, position, sigma});
    has_absolute_ = true;
}

const RigidTransform& GlobalPoseGraph::pose(int id) const {
    return nodes_[index_.at(id)].pose;
}

std::map<int, RigidTransform> GlobalPoseGraph::poses() const {
    std::map<int, RigidTransform> out;
    for (const auto& n : nodes_) out[n.id] = n.pose;
    return out;
}

void GlobalPoseGraph::optimize(int max_nodes) {
    if (nodes_.size() < 2) return;
    const int start = max_nodes > 0 ? std::max(0, (int)nodes_.size() - max_nodes) : 0;

    FactorGraph graph;
    std::map<int, int> var_of_node;
    for (int i = start; i < (int)nodes_.size(); ++i) {
        var_of_node[i] = graph.add_variable(
            VariableBlock::pose(nodes_[i].pose.translation, nodes_[i].pose.rotation));
    }

    // Gauge handling: a hard anchor when no absolute information exists,
    // otherwise a weak regularization that leaves the solution to the data.
    {
        const auto& n = nodes_[start];
        graph.add_factor(std::make_unique<BlockPriorFactor>(
            var_of_node[start], VariableBlock::pose(n.pose.translation, n.pose.rotation),
            has_absolute_ ? pose_sqrt_info(1e4, 1e2) : pose_sqrt_info(1e-4, 1e-6)));
    }

    for (const auto& e : rel_edges_) {
        const int ia = index_.at(e.from);
        const int ib = index_.at(e.to);
        if (ib < start) continue;
        if (ia >= start) {
            graph.add_factor(std::make_unique<RelativePoseFactor>(
                var_of_node[ia], var_of_node[ib], e.rel.translation, e.rel.rotation,
                pose_sqrt_info(e.sigma_p, e.sigma_rot)));
        } else {
            // The fixed older endpoint turns the edge into a unary prior.
            const RigidTransform target = nodes_[ia].pose.compose(e.rel);
            graph.add_factor(std::make_unique<BlockPriorFactor>(
                var_of_node[ib], VariableBlock::pose(target.translation, target.rotation),
                pose_sqrt_info(e.sigma_p, e.sigma_rot)));
        }
    }
    for (const auto& e : abs_edges_) {
        const int i = index_.at(e.id);
        if (i < start) continue;
        graph.add_factor(
            std::make_unique<PositionPriorFactor>(var_of_node[i], e.position, e.sigma));
    }

    SolveOptions options;
    options.max_iterations = 15;
    graph.optimize(options);

    for (const auto& [i, var] : var_of_node) {
        nodes_[i].pose.translation = graph.variable(var).position();
        nodes_[i].pose.rotation = graph.variable(var).quaternion();
    }
}

// ---------------------------------------------------------------------------
// SlidingWindowEstimator

SlidingWindowEstimator::SlidingWindowEstimator(const EstimatorConfig& config,
                                               const GnssGeometry& geometry,
                                               const GeodeticOrigin& origin,
                                               const RigidTransform& lidar_to_body)
    : config_(config),
      geom_(geometry),
      origin_(origin),
      lidar_to_body_(lidar_to_body),
      tracker_(config.slip_threshold),
      feature_map_(20, config.vs.gate_radius),
      pcm_(config.pcm_max_keyframes, config.nlos.radius) {}

void SlidingWindowEstimator::initialize(const KeyframeInfo& kf, const NavState& initial_state,
                                        const std::vector<Eigen::Vector3d>& cloud) {
    KfNode node;
    node.info = kf;
    node.state = initial_state;
    node.state.keyframe_id = kf.id;
    node.state.timestamp = kf.t;
    node.anchor_state = node.state;
    node.pose_key = next_key_++;
    node.velbias_key = next_key_++;
    node.anchored = true;

    RigidTransform pose;
    pose.rotation = initial_state.orientation;
    pose.translation = initial_state.position;
    global_.add_keyframe(kf.id, pose);
    pcm_.accumulate(kf.id, cloud, pose, lidar_to_body_);
    if (config_.enable_vs && !cloud.empty()) {
        const auto feature_idx = extract_planar_features(cloud, config_.vs);
        const RigidTransform sensor_to_enu = pose.compose(lidar_to_body_);
        std::vector<Eigen::Vector3d> feats;
        for (int idx : feature_idx) feats.push_back(sensor_to_enu.apply(cloud[idx]));
        feature_map_.add_keyframe(kf.id, feats);
    }
    window_.push_back(std::move(node));
    initialized_ = true;
}

NavState SlidingWindowEstimator::latest_state() const { return window_.back().state; }

std::vector<NavState> SlidingWindowEstimator::window_states() const {
    std::vector<NavState> out;
    for (const auto& n : window_) out.push_back(n.state);
    return out;
}

SlidingWindowEstimator::StepResult SlidingWindowEstimator::process_keyframe(
    const KeyframeInfo& kf, const std::vector<Eigen::Vector3d>& cloud,
    const std::vector<ImuSample>& imu_batch, const std::vector<EpochObs>& epochs) {
    StepResult result;
    KfNode& prev = window_.back();
    const Eigen::Vector3d gravity(0, 0, -config_.gravity);

    KfNode node;
    node.info = kf;
    node.pose_key = next_key_++;
    node.velbias_key = next_key_++;
    node.delta =
        preintegrate(imu_batch, prev.state.accel_bias, prev.state.gyro_bias, config_.imu_noise);
    if (node.delta.duration <= 0.0) {
        throw InconsistentTimestamps("process_keyframe: empty IMU interval");
    }
    node.has_delta = true;
    node.state = propagate_state(prev.state, imu_batch, gravity);
    node.state.keyframe_id = kf.id;
    node.state.timestamp = kf.t;

    // ---- GNSS epochs in (t_prev, t_k] ----
    for (const EpochObs& raw_epoch : epochs) {
        const double t = raw_epoch.epoch_time;
        if (t <= prev.info.t + 1e-9 || t > kf.t + 1e-9) continue;

        EpochNode enode;
        enode.t = t;
        enode.alpha = (kf.t - t) / (kf.t - prev.info.t);
        enode.clock_key = next_key_++;
        enode.base_pos = raw_epoch.base_pos;

        const InterpolatedPv pv = interpolate_state(prev.state, node.state, t);
        const Eigen::Quaterniond q_t = interpolate_orientation(
            prev.state.orientation, node.state.orientation, 1.0 - enode.alpha);
        const Eigen::Vector3d recv_enu = pv.position + q_t * geom_.lever_arm;
        const EcefPoint recv_ecef = enu_to_ecef(recv_enu, origin_);

        // Elevation mask.
        EpochObs masked = raw_epoch;
        masked.rover_obs.clear();
        for (const auto& o : raw_epoch.rover_obs) {
            const auto el_az = elevation_azimuth(recv_enu, ecef_to_enu(o.sat_pos, origin_));
            if (el_az.first >= config_.nlos.elevation_mask) masked.rover_obs.push_back(o);
        }

        // NLOS classification and exclusion on the PCM snapshot.
        EpochObs usable = masked;
        std::vector<SkyplotRow> sky_rows;
        if (config_.enable_nlos && pcm_.size_points() > 0) {
            std::vector<VisibilityLabel> labels;
            for (const auto& o : masked.rover_obs) {
                const EnuPoint sat_enu = ecef_to_enu(o.sat_pos, origin_);
                const auto el_az = elevation_azimuth(recv_enu, sat_enu);
                VisibilityLabel label = pcm_.classify_visibility(
                    recv_enu, (sat_enu - recv_enu).normalized(), config_.nlos, o.prn);
                label.constellation = o.constellation;
                labels.push_back(label);
                sky_rows.push_back({o.prn, el_az.second * 180.0 / M_PI,
                                    el_az.first * 180.0 / M_PI, label.nlos});
            }
            try {
                ExclusionResult ex = exclude_nlos(masked, labels);
                usable = std::move(ex.filtered);
                if (!ex.excluded.empty()) result.exclusions.push_back({t, ex.excluded});
            } catch (const AllExcluded&) {
                usable.rover_obs.clear();
            }
        } else {
            for (const auto& o : masked.rover_obs) {
                const auto el_az = elevation_azimuth(recv_enu, ecef_to_enu(o.sat_pos, origin_));
                sky_rows.push_back({o.prn, el_az.second * 180.0 / M_PI,
                                    el_az.first * 180.0 / M_PI, false});
            }
        }
        if (!sky_rows.empty()) result.skyplots.push_back({t, sky_rows});

        usable = keep_usable_constellations(usable);
        if (!usable.rover_obs.empty()) {
            const auto masters = select_master_satellites(usable, recv_enu, origin_);
            auto formed = form_double_differences(usable, masters, config_.noise_model, origin_);

            std::vector<std::pair<AmbiguityTracker::Key, double>> floats;
            for (const auto& dd : formed.observations) {
                floats.push_back({{dd.slave_prn, dd.master_prn, dd.constellation},
                                  estimate_dd_ambiguity_float(dd, recv_ecef, raw_epoch.base_pos)});
            }
            std::map<AmbiguityTracker::Key, AmbiguityTracker::Decision> decisions;
            auto reports = tracker_.update(t, last_epoch_time_, floats, &decisions);
            for (auto& r : reports) result.slips.push_back(r);

            // Previous epoch in window (for ambiguity continuity).
            const EpochNode* prev_epoch = nullptr;
            if (!node.epochs.empty()) {
                prev_epoch = &node.epochs.back();
            } else {
                for (auto it = window_.rbegin(); it != window_.rend() && !prev_epoch; ++it) {
                    if (!it->epochs.empty()) prev_epoch = &it->epochs.back();
                }
            }

            for (std::size_t i = 0; i < formed.observations.size(); ++i) {
                const auto& dd = formed.observations[i];
                AmbState amb;
                amb.key = {dd.slave_prn, dd.master_prn, dd.constellation};
                amb.dd = dd;
                amb.var_key = next_key_++;
                amb.link_prev = decisions[amb.key].continuous;
                amb.value = floats[i].second;
                if (amb.link_prev && prev_epoch) {
                    for (const auto& pa : prev_epoch->ambs) {
                        if (pa.key == amb.key) {
                            amb.value = pa.value;
                            break;
                        }
                    }
                }
                enode.ambs.push_back(std::move(amb));
            }

            for (const auto& o : usable.rover_obs) {
                const auto el_az = elevation_azimuth(recv_enu, ecef_to_enu(o.sat_pos, origin_));
                const double sigma_d = measurement_sigma(el_az.first, o.snr, config_.noise_model);
                enode.doppler.push_back({o, sigma_d});
            }
        }
        last_epoch_time_ = t;

        EpochSolution sol;
        sol.t = t;
        sol.num_dd = (int)enode.ambs.size();
        if (!result.exclusions.empty() && result.exclusions.back().first == t) {
            sol.num_excluded = (int)result.exclusions.back().second.size();
        }
        sol.status = enode.ambs.empty() ? SolutionStatus::None : SolutionStatus::Float;
        result.epoch_solutions.push_back(sol);
        // Epochs with no usable observations contribute no states or factors.
        if (!enode.ambs.empty()) node.epochs.push_back(std::move(enode));
    }

    // ---- Virtual satellites from the keyframe scan ----
    if (config_.enable_vs && config_.vs_weight_scale > 0.0 && !cloud.empty() &&
        !feature_map_.empty()) {
        const auto feature_idx = extract_planar_features(cloud, config_.vs);
        RigidTransform predicted_pose;
        predicted_pose.rotation = node.state.orientation;
        predicted_pose.translation = node.state.position;
        const RigidTransform sensor_to_enu = predicted_pose.compose(lidar_to_body_);

        std::vector<VsData> candidates;
        for (int idx : feature_idx) {
            const Eigen::Vector3d p_enu = sensor_to_enu.apply(cloud[idx]);
            if (auto lm = feature_map_.associate(p_enu, config_.vs)) {
                candidates.push_back({cloud[idx], *lm});
            }
        }
        const auto selected = select_vs(candidates.size(), (std::size_t)config_.vs.max_count,
                                        config_.seed ^ (0x51ed2700ULL + (uint64_t)kf.id));
        int n_real = 0;
        for (const auto& e : node.epochs) n_real += (int)e.ambs.size();
        double weight = 1.0;
        try {
            weight = vs_weight((int)selected.size(), n_real);
        } catch (const NoRealSatellites&) {
            weight = 1.0;
        }
        node.vs_sigma_eff =
            config_.vs.sigma * std::sqrt(weight / std::max(config_.vs_weight_scale, 1e-12));
        for (int idx : selected) node.vs.push_back(candidates[idx]);
        result.vs_factor_count = (int)node.vs.size();
    }

    last_cloud_ = cloud;
    window_.push_back(std::move(node));

    // ---- Optimize ----
    BuiltGraph bg = build_graph();
    SolveOptions options;
    options.max_iterations = 30;
    bg.graph->optimize(options);
    write_back(bg);

    // ---- Ambiguity resolution on the newest epoch ----
    KfNode& nk = window_.back();
    const bool newest_has_ambs = !nk.epochs.empty() && !nk.epochs.back().ambs.empty();
    if (newest_has_ambs) {
        if (auto fs = extract_float_solution(bg)) {
            auto cands = integer_search(fs->ambiguities, fs->q_nn, 2);
            const auto fixed =
                validate_and_fix(fs->epoch_position, fs->ambiguities, fs->q_nn,
                                 fs->q_np.transpose(), cands, config_.ratio_threshold);
            for (auto& sol : result.epoch_solutions) {
                if (std::abs(sol.t - fs->epoch_time) < 1e-9) {
                    sol.float_position = fs->epoch_position;
                    sol.adop = adop(fs->q_nn);
                    sol.ratio = fixed.ratio;
                    sol.position = fixed.accepted ? fixed.position : fs->epoch_position;
                    sol.status =
                        fixed.accepted ? SolutionStatus::Fixed : SolutionStatus::Float;
                }
            }
            result.float_solution = std::move(fs);
        }
    }
    // Epochs not covered by AR report the optimized interpolated position.
    for (auto& sol : result.epoch_solutions) {
        if (sol.status != SolutionStatus::None && sol.position.isZero(0.0)) {
            const KfNode& a = window_[window_.size() - 2];
            const KfNode& b = window_.back();
            const InterpolatedPv pv = interpolate_state(a.state, b.state, sol.t);
            sol.position = pv.position;
            sol.float_position = pv.position;
        }
    }

    update_global_and_map(result);

    if ((int)window_.size() > config_.window_size) marginalize_oldest(bg);
    return result;
}

SlidingWindowEstimator::BuiltGraph SlidingWindowEstimator::build_graph() {
    BuiltGraph bg;
    bg.graph = std::make_unique<FactorGraph>();
    auto add_var = [&](int64_t key, VariableBlock block) {
        const int id = bg.graph->add_variable(std::move(block));
        bg.var_of_key[key] = id;
        bg.key_of_var.push_back(key);
        return id;
    };

    for (auto& node : window_) {
        add_var(node.pose_key, pose_block(node.state));
        add_var(node.velbias_key, velbias_block(node.state));
        for (auto& e : node.epochs) {
            for (auto& a : e.ambs) {
                add_var(a.var_key,
                        VariableBlock::euclidean(Eigen::VectorXd::Constant(1, a.value)));
            }
            add_var(e.clock_key,
                    VariableBlock::euclidean(Eigen::VectorXd::Constant(1, e.clock_drift)));
        }
    }

    if (!prior_.empty()) {
        std::vector<int> ids;
        for (const auto& entry : prior_.entries) ids.push_back(bg.var_of_key.at(entry.key));
        bg.graph->add_factor(std::make_unique<MarginalPriorFactor>(prior_, ids));
    }

    const Eigen::Vector3d gravity(0, 0, -config_.gravity);
    const EpochNode* prev_epoch = nullptr;

    for (std::size_t i = 0; i < window_.size(); ++i) {
        KfNode& node = window_[i];
        const int pose_id = bg.var_of_key.at(node.pose_key);
        const int velbias_id = bg.var_of_key.at(node.velbias_key);

        if (node.anchored) {
            bg.graph->add_factor(std::make_unique<BlockPriorFactor>(
                pose_id, pose_block(node.anchor_state), pose_sqrt_info(0.05, 0.01)));
            Eigen::MatrixXd sv = Eigen::MatrixXd::Zero(9, 9);
            sv.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity() / 0.05;
            sv.block<3, 3>(3, 3) = Eigen::Matrix3d::Identity() / 0.1;
            sv.block<3, 3>(6, 6) = Eigen::Matrix3d::Identity() / 0.01;
            bg.graph->add_factor(std::make_unique<BlockPriorFactor>(
                velbias_id, velbias_block(node.anchor_state), sv));
        }

        if (i > 0 && node.has_delta) {
            const KfNode& pn = window_[i - 1];
            bg.graph->add_factor(std::make_unique<ImuPreintFactor>(
                bg.var_of_key.at(pn.pose_key), bg.var_of_key.at(pn.velbias_key), pose_id,
                velbias_id, node.delta, gravity));
        }

        for (const auto& vs : node.vs) {
            bg.graph->add_factor(std::make_unique<VsPointPlaneFactor>(
                pose_id, vs.point_sensor, vs.landmark.a, vs.landmark.b, vs.landmark.c,
                lidar_to_body_, node.vs_sigma_eff));
        }

        if (i == 0) continue;  // the oldest node's bridging epochs are already marginalized
        const KfNode& pn = window_[i - 1];
        const int pose_prev = bg.var_of_key.at(pn.pose_key);
        const int velbias_prev = bg.var_of_key.at(pn.velbias_key);

        for (auto& e : node.epochs) {
            const int clock_id = bg.var_of_key.at(e.clock_key);
            for (auto& a : e.ambs) {
                const int amb_id = bg.var_of_key.at(a.var_key);
                bg.graph->add_factor(std::make_unique<DdPseudorangeFactor>(
                    pose_prev, pose_id, a.dd, e.base_pos, geom_, e.alpha));
                bg.graph->add_factor(std::make_unique<DdCarrierFactor>(
                    pose_prev, pose_id, amb_id, a.dd, e.base_pos, geom_, e.alpha));
                if (a.link_prev && prev_epoch) {
                    for (const auto& pa : prev_epoch->ambs) {
                        if (pa.key == a.key) {
                            bg.graph->add_factor(std::make_unique<ConstantAmbiguityFactor>(
                                amb_id, bg.var_of_key.at(pa.var_key), a.dd.wavelength,
                                a.dd.sigma_psi));
                            break;
                        }
                    }
                }
            }
            for (const auto& [obs, sigma_d] : e.doppler) {
                bg.graph->add_factor(std::make_unique<DopplerFactor>(
                    pose_prev, pose_id, velbias_prev, velbias_id, clock_id, obs, geom_,
                    e.alpha, sigma_d));
            }
            prev_epoch = &e;
        }
    }
    return bg;
}

void SlidingWindowEstimator::write_back(const BuiltGraph& bg) {
    for (auto& node : window_) {
        const auto& pose = bg.graph->variable(bg.var_of_key.at(node.pose_key));
        const auto& velbias = bg.graph->variable(bg.var_of_key.at(node.velbias_key));
        node.state = nav_state_from_blocks(pose, velbias, node.info.id, node.info.t);
        for (auto& e : node.epochs) {
            for (auto& a : e.ambs) {
                a.value = bg.graph->variable(bg.var_of_key.at(a.var_key)).value(0);
            }
            e.clock_drift = bg.graph->variable(bg.var_of_key.at(e.clock_key)).value(0);
        }
    }
}

std::optional<FloatSolution> SlidingWindowEstimator::extract_float_solution(BuiltGraph& bg) {
    int node_idx = -1;
    for (int i = (int)window_.size() - 1; i >= 1 && node_idx < 0; --i) {
        if (!window_[i].epochs.empty() && !window_[i].epochs.back().ambs.empty()) node_idx = i;
    }
    if (node_idx < 1) return std::nullopt;
    const KfNode& node = window_[node_idx];
    const KfNode& pn = window_[node_idx - 1];
    const EpochNode& e = node.epochs.back();
    const int m = (int)e.ambs.size();

    std::vector<int> ids = {bg.var_of_key.at(pn.pose_key), bg.var_of_key.at(node.pose_key)};
    for (const auto& a : e.ambs) ids.push_back(bg.var_of_key.at(a.var_key));

    Eigen::MatrixXd cov;
    try {
        cov = bg.graph->covariance(ids);
    } catch (const SingularInformation&) {
        return std::nullopt;
    }

    // Interpolated epoch position is a linear map of the two pose tangents.
    const double alpha = e.alpha;
    Eigen::MatrixXd a_pos = Eigen::MatrixXd::Zero(3, 12);
    a_pos.block<3, 3>(0, 0) = alpha * Eigen::Matrix3d::Identity();
    a_pos.block<3, 3>(0, 6) = (1.0 - alpha) * Eigen::Matrix3d::Identity();

    FloatSolution fs;
    fs.epoch_time = e.t;
    fs.q_pp = a_pos * cov.topLeftCorner(12, 12) * a_pos.transpose();
    fs.q_nn = cov.bottomRightCorner(m, m);
    fs.q_np = cov.bottomLeftCorner(m, 12) * a_pos.transpose();
    fs.ambiguities.resize(m);
    for (int i = 0; i < m; ++i) fs.ambiguities(i) = e.ambs[i].value;
    fs.epoch_position = interpolate_state(pn.state, node.state, e.t).position;
    fs.states = window_states();
    return fs;
}

void SlidingWindowEstimator::update_global_and_map(const StepResult& result) {
    KfNode& node = window_.back();
    const KfNode& pn = window_[window_.size() - 2];

    RigidTransform pose_prev, pose_now;
    pose_prev.rotation = pn.state.orientation;
    pose_prev.translation = pn.state.position;
    pose_now.rotation = node.state.orientation;
    pose_now.translation = node.state.position;

    global_.add_keyframe(node.info.id, pose_now);
    global_.add_relative(pn.info.id, node.info.id, pose_prev.inverse().compose(pose_now), 0.05,
                         0.005);

    const EpochSolution* best = nullptr;
    for (const auto& s : result.epoch_solutions) {
        if (s.status == SolutionStatus::None) continue;
        if (!best ||
            (s.status == SolutionStatus::Fixed && best->status != SolutionStatus::Fixed)) {
            best = &s;
        }
    }
    if (best && result.float_solution) {
        // Transfer the epoch solution to the keyframe through the window
        // estimate.
        const Eigen::Vector3d offset = node.state.position - best->float_position;
        const Eigen::Vector3d target = best->position + offset;
        double sigma = config_.fixed_prior_sigma;
        if (best->status != SolutionStatus::Fixed) {
            sigma = std::max(std::sqrt(result.float_solution->q_pp.trace() / 3.0),
                             config_.fixed_prior_sigma);
        }
        global_.add_absolute(node.info.id, target, sigma);
    }

    ++steps_since_global_;
    const bool run_global = steps_since_global_ >= config_.global_every;
    if (run_global) {
        steps_since_global_ = 0;
        global_.optimize(config_.global_window);
    }

    pcm_.accumulate(node.info.id, last_cloud_, global_.pose(node.info.id), lidar_to_body_);

    std::vector<Eigen::Vector3d> kf_positions;
    for (const auto& [id, pose] : global_.poses()) kf_positions.push_back(pose.translation);
    pcm_.set_window_length(
        derive_pcm_window(kf_positions, config_.pcm_span, config_.pcm_max_keyframes));

    if (run_global) {
        std::map<int, RigidTransform> corrected;
        for (int id : pcm_.keyframe_ids()) corrected[id] = global_.pose(id);
        pcm_.repose(corrected);
    }

    if (config_.enable_vs && !last_cloud_.empty()) {
        const auto feature_idx = extract_planar_features(last_cloud_, config_.vs);
        const RigidTransform sensor_to_enu = global_.pose(node.info.id).compose(lidar_to_body_);
        std::vector<Eigen::Vector3d> feats;
        feats.reserve(feature_idx.size());
        for (int idx : feature_idx) feats.push_back(sensor_to_enu.apply(last_cloud_[idx]));
        feature_map_.add_keyframe(node.info.id, feats);
    }
}

void SlidingWindowEstimator::marginalize_oldest(BuiltGraph& bg) {
    KfNode& oldest = window_.front();
    KfNode& second = window_[1];

    std::vector<int> drop_ids = {bg.var_of_key.at(oldest.pose_key),
                                 bg.var_of_key.at(oldest.velbias_key)};
    for (const auto& e : second.epochs) {
        for (const auto& a : e.ambs) drop_ids.push_back(bg.var_of_key.at(a.var_key));
        drop_ids.push_back(bg.var_of_key.at(e.clock_key));
    }

    prior_ = bg.graph->marginalize(drop_ids, bg.key_of_var);
    window_.pop_front();
    window_.front().epochs.clear();
    window_.front().has_delta = false;
    window_.front().anchored = false;
}

// ---------------------------------------------------------------------------
// RtkEpochSolver

EpochSolution RtkEpochSolver::solve(const EpochObs& epoch,
                                    const Eigen::Vector3d& initial_enu) const {
    EpochSolution sol;
    sol.t = epoch.epoch_time;

    Eigen::Vector3d p_enu = initial_enu;
    const Eigen::Matrix3d r_e2c = origin.rotation_enu_to_ecef();

    EpochObs masked = epoch;
    masked.rover_obs.clear();
    for (const auto& o : epoch.rover_obs) {
        const auto el_az = elevation_azimuth(initial_enu, ecef_to_enu(o.sat_pos, origin));
        if (el_az.first >= elevation_mask) masked.rover_obs.push_back(o);
    }
    masked = keep_usable_constellations(masked);
    if (masked.rover_obs.empty()) return sol;

    std::vector<DdObservation> dds;
    try {
        const auto masters = select_master_satellites(masked, p_enu, origin);
        dds = form_double_differences(masked, masters, noise_model, origin).observations;
    } catch (const InsufficientSatellites&) {
        return sol;
    }
    const int m = (int)dds.size();
    if (m < 3) return sol;
    sol.num_dd = m;

    Eigen::VectorXd ambiguities(m);
    for (int i = 0; i < m; ++i) {
        ambiguities(i) =
            estimate_dd_ambiguity_float(dds[i], enu_to_ecef(p_enu, origin), epoch.base_pos);
    }

    Eigen::MatrixXd jtj;
    for (int iter = 0; iter < 20; ++iter) {
        const EcefPoint p_ecef = enu_to_ecef(p_enu, origin);
        Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * m, 3 + m);
        Eigen::VectorXd r(2 * m);
        for (int i = 0; i < m; ++i) {
            const auto& dd = dds[i];
            const Eigen::Vector3d e_s = (dd.slave_pos - p_ecef).normalized();
            const Eigen::Vector3d e_w = (dd.master_pos - p_ecef).normalized();
            const Eigen::RowVector3d dr_dp = (e_s - e_w).transpose() * r_e2c;
            r(i) = dd_pseudorange_residual(dd, p_ecef, epoch.base_pos) / dd.sigma_rho;
            j.block<1, 3>(i, 0) = dr_dp / dd.sigma_rho;
            r(m + i) =
                dd_carrierphase_residual(dd, p_ecef, epoch.base_pos, ambiguities(i)) /
                dd.sigma_psi;
            j.block<1, 3>(m + i, 0) = dr_dp / dd.sigma_psi;
            j(m + i, 3 + i) = -dd.wavelength / dd.sigma_psi;
        }
        jtj = j.transpose() * j;
        const Eigen::VectorXd delta = jtj.ldlt().solve(j.transpose() * r);
        if (!delta.allFinite()) return sol;
        p_enu += delta.head<3>();
        ambiguities += delta.tail(m);
        if (delta.head<3>().norm() < 1e-5) break;
    }
    if (!p_enu.allFinite() || p_enu.norm() > 1e7) return sol;

    const Eigen::MatrixXd cov = jtj.inverse();
    if (!cov.allFinite()) return sol;
    const Eigen::MatrixXd q_nn = cov.bottomRightCorner(m, m);
    const Eigen::MatrixXd q_pn = cov.topRightCorner(3, m);

    sol.status = SolutionStatus::Float;
    sol.float_position = p_enu;
    sol.position = p_enu;
    try {
        sol.adop = adop(q_nn);
        auto cands = integer_search(ambiguities, q_nn, 2);
        const auto fixed =
            validate_and_fix(p_enu, ambiguities, q_nn, q_pn, cands, ratio_threshold);
        sol.ratio = fixed.ratio;
        if (fixed.accepted) {
            sol.status = SolutionStatus::Fixed;
            sol.position = fixed.position;
        }
    } catch (const NotPositiveDefinite&) {
        // keep the float solution
    }
    return sol;
}

}  // namespace vsrtk
