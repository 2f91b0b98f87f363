#include "vsrtk/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "vsrtk/errors.hpp"
#include "vsrtk/pcm.hpp"
#include "vsrtk/so3.hpp"

namespace vsrtk {

CubicSpline::CubicSpline(std::vector<double> ts, std::vector<double> values)
    : ts_(std::move(ts)), ys_(std::move(values)) {
    const int n = (int)ts_.size();
    m_.assign(n, 0.0);
    if (n < 3) return;

    // Natural spline: tridiagonal solve for knot second derivatives.
    std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
    for (int i = 1; i + 1 < n; ++i) {
        const double h0 = ts_[i] - ts_[i - 1];
        const double h1 = ts_[i + 1] - ts_[i];
        a[i] = h0 / 6.0;
        b[i] = (h0 + h1) / 3.0;
        c[i] = h1 / 6.0;
        d[i] = (ys_[i + 1] - ys_[i]) / h1 - (ys_[i] - ys_[i - 1]) / h0;
    }
    for (int i = 2; i + 1 < n; ++i) {
        const double w = a[i] / b[i - 1];
        b[i] -= w * c[i - 1];
        d[i] -= w * d[i - 1];
    }
    for (int i = n - 2; i >= 1; --i) {
        m_[i] = (d[i] - c[i] * (i + 1 < n - 1 ? m_[i + 1] : 0.0)) / b[i];
    }
}

int CubicSpline::segment(double t) const {
    int lo = 0, hi = (int)ts_.size() - 2;
    while (lo < hi) {
        const int mid = (lo + hi + 1) / 2;
        if (ts_[mid] <= t) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    return lo;
}

double CubicSpline::value(double t) const {
    if (ts_.size() == 1) return ys_[0];
    t = std::clamp(t, ts_.front(), ts_.back());
    const int i = segment(t);
    const double h = ts_[i + 1] - ts_[i];
    const double x0 = ts_[i + 1] - t;
    const double x1 = t - ts_[i];
    return m_[i] * x0 * x0 * x0 / (6.0 * h) + m_[i + 1] * x1 * x1 * x1 / (6.0 * h) +
           (ys_[i] / h - m_[i] * h / 6.0) * x0 + (ys_[i + 1] / h - m_[i + 1] * h / 6.0) * x1;
}

double CubicSpline::derivative(double t) const {
    if (ts_.size() == 1) return 0.0;
    t = std::clamp(t, ts_.front(), ts_.back());
    const int i = segment(t);
    const double h = ts_[i + 1] - ts_[i];
    const double x0 = ts_[i + 1] - t;
    const double x1 = t - ts_[i];
    return -m_[i] * x0 * x0 / (2.0 * h) + m_[i + 1] * x1 * x1 / (2.0 * h) -
           (ys_[i] / h - m_[i] * h / 6.0) + (ys_[i + 1] / h - m_[i + 1] * h / 6.0);
}

double CubicSpline::second_derivative(double t) const {
    if (ts_.size() == 1) return 0.0;
    t = std::clamp(t, ts_.front(), ts_.back());
    const int i = segment(t);
    const double h = ts_[i + 1] - ts_[i];
    return m_[i] * (ts_[i + 1] - t) / h + m_[i + 1] * (t - ts_[i]) / h;
}

TruthTrajectory::TruthTrajectory(const std::vector<TrajectoryWaypoint>& waypoints) {
    std::vector<double> t, x, y, z, yaw;
    for (const auto& w : waypoints) {
        t.push_back(w.t);
        x.push_back(w.position.x());
        y.push_back(w.position.y());
        z.push_back(w.position.z());
        yaw.push_back(w.yaw_rad);
    }
    x_ = CubicSpline(t, x);
    y_ = CubicSpline(t, y);
    z_ = CubicSpline(t, z);
    yaw_ = CubicSpline(t, yaw);
}

Eigen::Vector3d TruthTrajectory::position(double t) const {
    return {x_.value(t), y_.value(t), z_.value(t)};
}
Eigen::Vector3d TruthTrajectory::velocity(double t) const {
    return {x_.derivative(t), y_.derivative(t), z_.derivative(t)};
}
Eigen::Vector3d TruthTrajectory::acceleration(double t) const {
    return {x_.second_derivative(t), y_.second_derivative(t), z_.second_derivative(t)};
}
double TruthTrajectory::yaw(double t) const { return yaw_.value(t); }
double TruthTrajectory::yaw_rate(double t) const { return yaw_.derivative(t); }

Eigen::Quaterniond TruthTrajectory::orientation(double t) const {
    // Yaw measured clockwise from north (heading); body x forward.
    return so3::exp(Eigen::Vector3d(0, 0, M_PI / 2 - yaw(t)));
}

double TruthTrajectory::t_end() const { return x_.t_max(); }

GeodeticOrigin Scenario::origin() const {
    return GeodeticOrigin::from_geodetic(origin_lat_deg * M_PI / 180.0,
                                         origin_lon_deg * M_PI / 180.0, origin_height);
}

namespace {

double deg2rad(double d) { return d * M_PI / 180.0; }

}  // namespace

Scenario Scenario::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("scenario: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
}

Scenario Scenario::parse_text(const std::string& text, const std::string& origin_name) {
    Scenario s;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;

        auto fail = [&](const std::string& what) {
            throw DatasetError("scenario: bad " + what + " at " + origin_name + ":" +
                               std::to_string(line_no));
        };

        if (key == "name") { ls >> s.name; }
        else if (key == "seed") { if (!(ls >> s.seed)) fail(key); }
        else if (key == "duration") { if (!(ls >> s.duration)) fail(key); }
        else if (key == "imu_rate") { if (!(ls >> s.imu_rate)) fail(key); }
        else if (key == "gnss_rate") { if (!(ls >> s.gnss_rate)) fail(key); }
        else if (key == "lidar_rate") { if (!(ls >> s.lidar_rate)) fail(key); }
        else if (key == "keyframe_distance") { if (!(ls >> s.keyframe_distance)) fail(key); }
        else if (key == "keyframe_interval") { if (!(ls >> s.keyframe_interval)) fail(key); }
        else if (key == "origin_lat_deg") { if (!(ls >> s.origin_lat_deg)) fail(key); }
        else if (key == "origin_lon_deg") { if (!(ls >> s.origin_lon_deg)) fail(key); }
        else if (key == "origin_height") { if (!(ls >> s.origin_height)) fail(key); }
        else if (key == "base_enu") {
            if (!(ls >> s.base_enu.x() >> s.base_enu.y() >> s.base_enu.z())) fail(key);
        } else if (key == "lever_arm") {
            if (!(ls >> s.lever_arm.x() >> s.lever_arm.y() >> s.lever_arm.z())) fail(key);
        } else if (key == "gravity") { if (!(ls >> s.gravity)) fail(key); }
        else if (key == "waypoint") {
            TrajectoryWaypoint w;
            double yaw_deg;
            if (!(ls >> w.t >> w.position.x() >> w.position.y() >> w.position.z() >> yaw_deg)) {
                fail(key);
            }
            w.yaw_rad = deg2rad(yaw_deg);
            s.waypoints.push_back(w);
        } else if (key == "building") {
            Box b;
            if (!(ls >> b.min.x() >> b.max.x() >> b.min.y() >> b.max.y() >> b.min.z() >>
                  b.max.z())) {
                fail(key);
            }
            s.buildings.push_back(b);
        } else if (key == "satellite") {
            SatelliteSpec sat;
            std::string constellation;
            double az_deg, el_deg;
            if (!(ls >> sat.prn >> constellation >> az_deg >> el_deg >> sat.range_m)) fail(key);
            const auto c = constellation_from_string(constellation);
            if (!c) fail("constellation");
            sat.constellation = *c;
            sat.azimuth_rad = deg2rad(az_deg);
            sat.elevation_rad = deg2rad(el_deg);
            double az_drift, el_drift;
            if (ls >> az_drift >> el_drift) {
                sat.azimuth_drift = deg2rad(az_drift);
                sat.elevation_drift = deg2rad(el_drift);
            }
            s.satellites.push_back(sat);
        } else if (key == "slip") {
            SlipEvent ev;
            std::string constellation;
            if (!(ls >> ev.epoch_time >> ev.prn >> constellation >> ev.jump_cycles)) fail(key);
            const auto c = constellation_from_string(constellation);
            if (!c) fail("constellation");
            ev.constellation = *c;
            s.slips.push_back(ev);
        }
        else if (key == "noise_pseudorange") { if (!(ls >> s.noise_pseudorange)) fail(key); }
        else if (key == "noise_carrier_cycles") { if (!(ls >> s.noise_carrier_cycles)) fail(key); }
        else if (key == "noise_doppler") { if (!(ls >> s.noise_doppler)) fail(key); }
        else if (key == "imu_accel_noise") { if (!(ls >> s.imu_accel_noise)) fail(key); }
        else if (key == "imu_gyro_noise") { if (!(ls >> s.imu_gyro_noise)) fail(key); }
        else if (key == "imu_accel_bias") {
            if (!(ls >> s.imu_accel_bias.x() >> s.imu_accel_bias.y() >> s.imu_accel_bias.z()))
                fail(key);
        } else if (key == "imu_gyro_bias") {
            if (!(ls >> s.imu_gyro_bias.x() >> s.imu_gyro_bias.y() >> s.imu_gyro_bias.z()))
                fail(key);
        }
        else if (key == "imu_accel_bias_walk") { if (!(ls >> s.imu_accel_bias_walk)) fail(key); }
        else if (key == "imu_gyro_bias_walk") { if (!(ls >> s.imu_gyro_bias_walk)) fail(key); }
        else if (key == "lidar_range_noise") { if (!(ls >> s.lidar_range_noise)) fail(key); }
        else if (key == "lidar_max_range") { if (!(ls >> s.lidar_max_range)) fail(key); }
        else if (key == "lidar_points_per_frame") { if (!(ls >> s.lidar_points_per_frame)) fail(key); }
        else if (key == "world_point_spacing") { if (!(ls >> s.world_point_spacing)) fail(key); }
        else if (key == "snr_zenith") { if (!(ls >> s.snr_zenith)) fail(key); }
        else if (key == "snr_floor") { if (!(ls >> s.snr_floor)) fail(key); }
        else if (key == "nlos_bias_min") { if (!(ls >> s.nlos_bias_min)) fail(key); }
        else if (key == "nlos_bias_max") { if (!(ls >> s.nlos_bias_max)) fail(key); }
        else if (key == "nlos_carrier_bias_cycles") { if (!(ls >> s.nlos_carrier_bias_cycles)) fail(key); }
        else if (key == "nlos_snr_drop") { if (!(ls >> s.nlos_snr_drop)) fail(key); }
        else if (key == "rover_clock_bias") { if (!(ls >> s.rover_clock_bias)) fail(key); }
        else if (key == "rover_clock_drift") { if (!(ls >> s.rover_clock_drift)) fail(key); }
        else if (key == "base_clock_bias") { if (!(ls >> s.base_clock_bias)) fail(key); }
        else if (key == "base_clock_drift") { if (!(ls >> s.base_clock_drift)) fail(key); }
        else if (key == "atmosphere_iono") { if (!(ls >> s.atmosphere_iono)) fail(key); }
        else if (key == "atmosphere_tropo") { if (!(ls >> s.atmosphere_tropo)) fail(key); }
        else {
            throw DatasetError("scenario: unknown key '" + key + "' at " + origin_name + ":" +
                               std::to_string(line_no));
        }
    }
    if (s.waypoints.empty()) {
        throw DatasetError("scenario: no waypoints in " + origin_name);
    }
    return s;
}

World::World(const std::vector<Box>& boxes, double spacing) : boxes_(boxes) {
    for (const auto& b : boxes_) {
        const Eigen::Vector3d size = b.max - b.min;
        if (size.minCoeff() <= 0.0) throw DegenerateBox("world: box with non-positive extent");
        const int nx = (int)std::floor(size.x() / spacing) + 1;
        const int ny = (int)std::floor(size.y() / spacing) + 1;
        const int nz = (int)std::floor(size.z() / spacing) + 1;
        auto lin = [&](double lo, int n, int i) { return lo + i * spacing; };
        for (int iy = 0; iy < ny; ++iy) {
            for (int iz = 0; iz < nz; ++iz) {
                face_points_.emplace_back(b.min.x(), lin(b.min.y(), ny, iy),
                                          lin(b.min.z(), nz, iz));
                face_points_.emplace_back(b.max.x(), lin(b.min.y(), ny, iy),
                                          lin(b.min.z(), nz, iz));
            }
        }
        for (int ix = 0; ix < nx; ++ix) {
            for (int iz = 0; iz < nz; ++iz) {
                face_points_.emplace_back(lin(b.min.x(), nx, ix), b.min.y(),
                                          lin(b.min.z(), nz, iz));
                face_points_.emplace_back(lin(b.min.x(), nx, ix), b.max.y(),
                                          lin(b.min.z(), nz, iz));
            }
        }
        for (int ix = 0; ix < nx; ++ix) {
            for (int iy = 0; iy < ny; ++iy) {
                face_points_.emplace_back(lin(b.min.x(), nx, ix), lin(b.min.y(), ny, iy),
                                          b.min.z());
                face_points_.emplace_back(lin(b.min.x(), nx, ix), lin(b.min.y(), ny, iy),
                                          b.max.z());
            }
        }
    }
}

std::optional<double> World::blocking_distance(const Eigen::Vector3d& origin,
                                               const Eigen::Vector3d& dir,
                                               double max_range) const {
    const Eigen::Vector3d d = dir.normalized();
    std::optional<double> best;
    for (const auto& b : boxes_) {
        double tmin = 0.0, tmax = max_range;
        bool miss = false;
        for (int axis = 0; axis < 3 && !miss; ++axis) {
            if (std::abs(d(axis)) < 1e-12) {
                if (origin(axis) < b.min(axis) || origin(axis) > b.max(axis)) miss = true;
                continue;
            }
            double t0 = (b.min(axis) - origin(axis)) / d(axis);
            double t1 = (b.max(axis) - origin(axis)) / d(axis);
            if (t0 > t1) std::swap(t0, t1);
            tmin = std::max(tmin, t0);
            tmax = std::min(tmax, t1);
            if (tmin > tmax) miss = true;
        }
        if (miss || tmin <= 1e-9) continue;
        if (!best || tmin < *best) best = tmin;
    }
    return best;
}

World generate_world(const Scenario& scenario) {
    return World(scenario.buildings, scenario.world_point_spacing);
}

namespace {

Eigen::Vector3d az_el_dir(double az, double el) {
    return {std::cos(el) * std::sin(az), std::cos(el) * std::cos(az), std::sin(el)};
}

struct SatState {
    Eigen::Vector3d enu_pos;
    Eigen::Vector3d enu_vel;
};

SatState satellite_state(const SatelliteSpec& s, double t) {
    const double az = s.azimuth_rad + s.azimuth_drift * t;
    const double el = s.elevation_rad + s.elevation_drift * t;
    SatState out;
    out.enu_pos = s.range_m * az_el_dir(az, el);
    // Finite drift rates give an analytic ENU velocity.
    const Eigen::Vector3d d_az = s.range_m * Eigen::Vector3d(std::cos(el) * std::cos(az),
                                                             -std::cos(el) * std::sin(az), 0.0);
    const Eigen::Vector3d d_el = s.range_m * Eigen::Vector3d(-std::sin(el) * std::sin(az),
                                                             -std::sin(el) * std::cos(az),
                                                             std::cos(el));
    out.enu_vel = d_az * s.azimuth_drift + d_el * s.elevation_drift;
    return out;
}

}  // namespace

std::vector<KeyframeInfo> plan_keyframes(const Scenario& scenario,
                                         const TruthTrajectory& traj) {
    std::vector<KeyframeInfo> keyframes;
    const double dt = 1.0 / scenario.lidar_rate;
    int id = 0;
    double last_t = 0.0;
    Eigen::Vector3d last_p = traj.position(0.0);
    keyframes.push_back({id++, 0.0});
    for (double t = dt; t <= scenario.duration + 1e-9; t += dt) {
        const Eigen::Vector3d p = traj.position(t);
        if ((p - last_p).norm() >= scenario.keyframe_distance ||
            t - last_t >= scenario.keyframe_interval - 1e-9) {
            keyframes.push_back({id++, t});
            last_t = t;
            last_p = p;
        }
    }
    return keyframes;
}

std::vector<EpochObs> synthesize_gnss(const Scenario& scenario, const World& world,
                                      const TruthTrajectory& traj, TruthEvents* events) {
    std::mt19937_64 rng(scenario.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<long> amb_draw(-100, 100);

    const GeodeticOrigin origin = scenario.origin();
    const Eigen::Matrix3d r_e2c = origin.rotation_enu_to_ecef();
    const EcefPoint base_ecef = enu_to_ecef(scenario.base_enu, origin);

    struct SatRuntime {
        long n_rover, n_base;
        double phi0_sat;
        bool blocked = false;
        double nlos_bias = 0.0;
        double nlos_carrier = 0.0;
        long slip_applied = 0;
    };
    std::map<std::pair<int, Constellation>, SatRuntime> runtime;
    const double phi_rover = uni(rng);
    const double phi_base = uni(rng);
    for (const auto& sat : scenario.satellites) {
        SatRuntime rt;
        rt.n_rover = amb_draw(rng);
        rt.n_base = amb_draw(rng);
        rt.phi0_sat = uni(rng);
        runtime[{sat.prn, sat.constellation}] = rt;
        if (events) {
            events->ambiguities.push_back(
                {sat.prn, sat.constellation, rt.n_rover, rt.n_base});
        }
    }
    if (events) events->slips = scenario.slips;

    NoiseModel truth_noise;
    truth_noise.sigma_base = scenario.noise_pseudorange > 0 ? scenario.noise_pseudorange : 1.0;
    truth_noise.snr_reference = scenario.snr_zenith;

    std::vector<EpochObs> epochs;
    const double dt = 1.0 / scenario.gnss_rate;
    for (double t = 0.0; t <= scenario.duration + 1e-9; t += dt) {
        EpochObs epoch;
        epoch.epoch_time = t;
        epoch.base_pos = base_ecef;

        const Eigen::Vector3d p_body = traj.position(t);
        const Eigen::Quaterniond q_body = traj.orientation(t);
        const Eigen::Vector3d omega_body(0, 0, traj.yaw_rate(t));
        const Eigen::Vector3d rover_enu = p_body + q_body * scenario.lever_arm;
        const Eigen::Vector3d rover_vel_enu =
            traj.velocity(t) + q_body * (omega_body.cross(scenario.lever_arm));
        const EcefPoint rover_ecef = enu_to_ecef(rover_enu, origin);
        const Eigen::Vector3d rover_vel_ecef = r_e2c * rover_vel_enu;

        const double rover_clk = scenario.rover_clock_bias + scenario.rover_clock_drift * t;
        const double base_clk = scenario.base_clock_bias + scenario.base_clock_drift * t;

        for (const auto& sat : scenario.satellites) {
            auto& rt = runtime.at({sat.prn, sat.constellation});
            const SatState ss = satellite_state(sat, t);
            const EcefPoint sat_ecef = enu_to_ecef(ss.enu_pos, origin);
            const Eigen::Vector3d sat_vel_ecef = r_e2c * ss.enu_vel;
            const double lambda = sat.constellation == Constellation::GPS
                                      ? scenario.wavelength_gps
                                      : scenario.wavelength_bds;

            // Cycle slips accumulate on the rover ambiguity.
            long slip_total = 0;
            for (const auto& ev : scenario.slips) {
                if (ev.prn == sat.prn && ev.constellation == sat.constellation &&
                    t >= ev.epoch_time - 1e-9) {
                    slip_total += ev.jump_cycles;
                }
            }
            rt.slip_applied = slip_total;

            // Visibility from the rover antenna; base is open sky.
            const auto [el_r, az_r] = elevation_azimuth(rover_enu, ss.enu_pos);
            const auto block = world.blocking_distance(
                rover_enu, (ss.enu_pos - rover_enu).normalized(),
                std::min(500.0, (ss.enu_pos - rover_enu).norm()));
            const bool blocked = block.has_value();
            if (blocked && !rt.blocked) {
                rt.nlos_bias = scenario.nlos_bias_min +
                               uni(rng) * (scenario.nlos_bias_max - scenario.nlos_bias_min);
                rt.nlos_carrier = scenario.nlos_carrier_bias_cycles * (0.5 + uni(rng));
            }
            rt.blocked = blocked;
            if (events) {
                events->visibility.push_back({t, sat.prn, sat.constellation, blocked,
                                              blocked ? *block : 0.0});
            }

            const double iono = scenario.atmosphere_iono / std::max(std::sin(el_r), 0.1);
            const double tropo = scenario.atmosphere_tropo / std::max(std::sin(el_r), 0.1);

            auto make_obs = [&](bool is_rover) {
                const EcefPoint recv = is_rover ? rover_ecef : base_ecef;
                const Eigen::Vector3d recv_vel =
                    is_rover ? rover_vel_ecef : Eigen::Vector3d::Zero();
                const Eigen::Vector3d recv_enu = is_rover ? rover_enu : scenario.base_enu;
                const double clk = is_rover ? rover_clk : base_clk;
                const double clk_drift =
                    is_rover ? scenario.rover_clock_drift : scenario.base_clock_drift;
                const double phi0 = is_rover ? phi_rover : phi_base;
                const long n_int = is_rover ? rt.n_rover + rt.slip_applied : rt.n_base;

                const auto [el, az] = elevation_azimuth(recv_enu, ss.enu_pos);
                double snr = scenario.snr_floor +
                             (scenario.snr_zenith - scenario.snr_floor) * std::sin(el);
                if (is_rover && blocked) snr -= scenario.nlos_snr_drop;

                const double range = (recv - sat_ecef).norm();
                double sigma_rho = 0.0;
                if (scenario.noise_pseudorange > 0.0) {
                    sigma_rho = measurement_sigma(std::max(el, 0.01), snr, truth_noise);
                }

                SatObs o;
                o.prn = sat.prn;
                o.constellation = sat.constellation;
                o.epoch_time = t;
                o.wavelength = lambda;
                o.snr = snr;
                o.sat_pos = sat_ecef;
                o.sat_vel = sat_vel_ecef;
                o.sat_clock_bias = sat.clock_bias + sat.clock_drift * t;
                o.sat_clock_drift = sat.clock_drift;

                o.pseudorange = range + kSpeedOfLight * (clk - o.sat_clock_bias) + iono +
                                tropo + sigma_rho * gauss(rng);
                if (is_rover && blocked) o.pseudorange += rt.nlos_bias;

                const double carrier_range =
                    range + kSpeedOfLight * (clk - o.sat_clock_bias) - iono + tropo;
                o.carrier_phase = carrier_range / lambda + phi0 - rt.phi0_sat + (double)n_int +
                                  scenario.noise_carrier_cycles * gauss(rng);
                if (is_rover && blocked) o.carrier_phase += rt.nlos_carrier;

                const Eigen::Vector3d e = (sat_ecef - recv) / range;
                o.doppler = (e.dot(sat_vel_ecef - recv_vel) +
                             kSpeedOfLight * (clk_drift - o.sat_clock_drift)) /
                                lambda +
                            scenario.noise_doppler * gauss(rng);
                return o;
            };

            epoch.rover_obs.push_back(make_obs(true));
            epoch.base_obs.push_back(make_obs(false));
        }
        epochs.push_back(std::move(epoch));
    }
    return epochs;
}

std::vector<ImuSample> synthesize_imu(const Scenario& scenario, const TruthTrajectory& traj) {
    std::mt19937_64 rng(scenario.seed ^ 0x2545f4914f6cdd1dULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Eigen::Vector3d g_vec(0, 0, -scenario.gravity);
    const double dt = 1.0 / scenario.imu_rate;

    Eigen::Vector3d ba = scenario.imu_accel_bias;
    Eigen::Vector3d bw = scenario.imu_gyro_bias;

    std::vector<ImuSample> samples;
    for (double t = 0.0; t <= scenario.duration + 1e-9; t += dt) {
        const Eigen::Matrix3d r_t = traj.orientation(t).toRotationMatrix().transpose();
        ImuSample s;
        s.timestamp = t;
        s.angular_velocity = Eigen::Vector3d(0, 0, -traj.yaw_rate(t)) + bw;
        s.linear_acceleration = r_t * (traj.acceleration(t) - g_vec) + ba;
        for (int i = 0; i < 3; ++i) {
            s.angular_velocity(i) += scenario.imu_gyro_noise * gauss(rng);
            s.linear_acceleration(i) += scenario.imu_accel_noise * gauss(rng);
        }
        samples.push_back(s);
        ba += scenario.imu_accel_bias_walk * std::sqrt(dt) *
              Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
        bw += scenario.imu_gyro_bias_walk * std::sqrt(dt) *
              Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
    }
    return samples;
}

std::vector<std::vector<Eigen::Vector3d>> synthesize_lidar(
    const Scenario& scenario, const World& world, const TruthTrajectory& traj,
    const std::vector<KeyframeInfo>& keyframes) {
    std::mt19937_64 rng(scenario.seed ^ 0xda942042e4dd58b5ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<Eigen::Vector3d>> frames;
    frames.reserve(keyframes.size());
    for (const auto& kf : keyframes) {
        RigidTransform sensor_pose;
        sensor_pose.rotation = traj.orientation(kf.t);
        sensor_pose.translation = traj.position(kf.t);
        const RigidTransform inv = sensor_pose.inverse();

        std::vector<int> in_range;
        for (int i = 0; i < (int)world.face_points().size(); ++i) {
            if ((world.face_points()[i] - sensor_pose.translation).norm() <=
                scenario.lidar_max_range) {
                in_range.push_back(i);
            }
        }
        // Deterministic uniform subsample caps the frame size.
        if (in_range.size() > scenario.lidar_points_per_frame) {
            for (std::size_t i = 0; i < scenario.lidar_points_per_frame; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, in_range.size() - 1);
                std::swap(in_range[i], in_range[pick(rng)]);
            }
            in_range.resize(scenario.lidar_points_per_frame);
        }

        std::vector<Eigen::Vector3d> frame;
        frame.reserve(in_range.size());
        for (int idx : in_range) {
            const Eigen::Vector3d& p = world.face_points()[idx];
            const Eigen::Vector3d to_p = p - sensor_pose.translation;
            const double range = to_p.norm();
            if (range < 1e-6) continue;
            const Eigen::Vector3d noisy =
                p + scenario.lidar_range_noise * gauss(rng) * (to_p / range);
            frame.push_back(inv.apply(noisy));
        }
        frames.push_back(std::move(frame));
    }
    return frames;
}

SyntheticDataset synthesize_dataset(const Scenario& scenario, const World& world) {
    const TruthTrajectory traj(scenario.waypoints);
    SyntheticDataset ds;
    ds.base_pos_ecef = enu_to_ecef(scenario.base_enu, scenario.origin());
    ds.keyframes = plan_keyframes(scenario, traj);
    ds.gnss_epochs = synthesize_gnss(scenario, world, traj, &ds.events);
    ds.imu_samples = synthesize_imu(scenario, traj);
    ds.lidar_frames = synthesize_lidar(scenario, world, traj, ds.keyframes);

    const double dt = 1.0 / scenario.imu_rate;
    for (double t = 0.0; t <= scenario.duration + 1e-9; t += dt) {
        NavState s;
        s.timestamp = t;
        s.position = traj.position(t);
        s.velocity = traj.velocity(t);
        s.orientation = traj.orientation(t);
        s.accel_bias = scenario.imu_accel_bias;
        s.gyro_bias = scenario.imu_gyro_bias;
        ds.truth_states.push_back(s);
    }
    return ds;
}

void write_dataset(const Scenario& scenario, const SyntheticDataset& dataset,
                   const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/lidar");

    const GeodeticOrigin origin = scenario.origin();
    {
        std::FILE* f = std::fopen((out_dir + "/meta.txt").c_str(), "w");
        if (!f) throw IoError("write_dataset: cannot open meta.txt");
        std::fprintf(f, "origin_lat_rad %.15f\n", origin.latitude_rad);
        std::fprintf(f, "origin_lon_rad %.15f\n", origin.longitude_rad);
        std::fprintf(f, "origin_height %.6f\n", scenario.origin_height);
        std::fprintf(f, "base_ecef %.6f %.6f %.6f\n", dataset.base_pos_ecef.x(),
                     dataset.base_pos_ecef.y(), dataset.base_pos_ecef.z());
        std::fprintf(f, "lever_arm %.6f %.6f %.6f\n", scenario.lever_arm.x(),
                     scenario.lever_arm.y(), scenario.lever_arm.z());
        std::fprintf(f, "gravity %.6f\n", scenario.gravity);
        std::fprintf(f, "imu_rate %d\n", scenario.imu_rate);
        std::fprintf(f, "gnss_rate %d\n", scenario.gnss_rate);
        std::fprintf(f, "lidar_rate %d\n", scenario.lidar_rate);
        std::fclose(f);
    }

    write_obs_file(out_dir + "/gnss_obs.txt", dataset.gnss_epochs);
    write_imu_file(out_dir + "/imu.txt", dataset.imu_samples);

    {
        std::FILE* f = std::fopen((out_dir + "/keyframes.txt").c_str(), "w");
        if (!f) throw IoError("write_dataset: cannot open keyframes.txt");
        for (const auto& kf : dataset.keyframes) std::fprintf(f, "%d %.6f\n", kf.id, kf.t);
        std::fclose(f);
    }

    for (std::size_t i = 0; i < dataset.lidar_frames.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "/lidar/kf_%06d.txt", dataset.keyframes[i].id);
        write_point_file(out_dir + name, dataset.lidar_frames[i]);
    }

    {
        std::FILE* f = std::fopen((out_dir + "/truth_trajectory.txt").c_str(), "w");
        if (!f) throw IoError("write_dataset: cannot open truth_trajectory.txt");
        for (const auto& s : dataset.truth_states) {
            std::fprintf(f, "%.6f %.6f %.6f %.6f %.9f %.9f %.9f %.9f\n", s.timestamp,
                         s.position.x(), s.position.y(), s.position.z(), s.orientation.x(),
                         s.orientation.y(), s.orientation.z(), s.orientation.w());
        }
        std::fclose(f);
    }

    {
        std::FILE* f = std::fopen((out_dir + "/truth_events.txt").c_str(), "w");
        if (!f) throw IoError("write_dataset: cannot open truth_events.txt");
        for (const auto& a : dataset.events.ambiguities) {
            std::fprintf(f, "amb %d %s %ld %ld\n", a.prn, to_string(a.constellation).c_str(),
                         a.n_rover, a.n_base);
        }
        for (const auto& s : dataset.events.slips) {
            std::fprintf(f, "slip %.6f %d %s %d\n", s.epoch_time, s.prn,
                         to_string(s.constellation).c_str(), s.jump_cycles);
        }
        for (const auto& v : dataset.events.visibility) {
            std::fprintf(f, "vis %.6f %d %s %s %.3f\n", v.epoch_time, v.prn,
                         to_string(v.constellation).c_str(), v.nlos ? "NLOS" : "LOS",
                         v.blocking_distance);
        }
        std::fclose(f);
    }
}

}  // namespace vsrtk
