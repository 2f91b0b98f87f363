#include "vsrtk/gnss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vsrtk/errors.hpp"

namespace vsrtk {

std::string to_string(Constellation c) {
    return c == Constellation::GPS ? "GPS" : "BeiDou";
}

std::optional<Constellation> constellation_from_string(const std::string& s) {
    if (s == "GPS") return Constellation::GPS;
    if (s == "BeiDou" || s == "BDS") return Constellation::BeiDou;
    return std::nullopt;
}

double measurement_sigma(double elevation_rad, double snr_dbhz, const NoiseModel& model) {
    if (elevation_rad <= 0.0) {
        throw InvalidElevation("measurement_sigma: elevation must be positive");
    }
    const double el_factor = std::pow(1.0 / std::sin(elevation_rad), model.elevation_exponent);
    const double snr_factor = std::pow(10.0, (model.snr_reference - snr_dbhz) / 20.0);
    const double sigma = model.sigma_base * el_factor * snr_factor;
    return std::clamp(sigma, model.sigma_base, model.clip_max_factor * model.sigma_base);
}

namespace {

const SatObs* find_obs(const std::vector<SatObs>& obs, int prn, Constellation c) {
    for (const auto& o : obs) {
        if (o.prn == prn && o.constellation == c) return &o;
    }
    return nullptr;
}

double elevation_from(const EnuPoint& receiver_enu, const EcefPoint& sat_ecef,
                      const GeodeticOrigin& origin) {
    return elevation_azimuth(receiver_enu, ecef_to_enu(sat_ecef, origin)).first;
}

}  // namespace

std::map<Constellation, int> select_master_satellites(const EpochObs& epoch,
                                                      const EnuPoint& receiver_enu,
                                                      const GeodeticOrigin& origin) {
    std::map<Constellation, std::vector<const SatObs*>> matched;
    for (const auto& o : epoch.rover_obs) {
        if (find_obs(epoch.base_obs, o.prn, o.constellation)) {
            matched[o.constellation].push_back(&o);
        }
    }
    std::map<Constellation, int> masters;
    for (const auto& [c, sats] : matched) {
        if (sats.size() < 2) {
            throw InsufficientSatellites("select_master_satellites: fewer than 2 matched in " +
                                         to_string(c));
        }
        int best_prn = 0;
        double best_el = -1.0;
        for (const auto* o : sats) {
            const double el = elevation_from(receiver_enu, o->sat_pos, origin);
            if (el > best_el + 1e-12 || (std::abs(el - best_el) <= 1e-12 && o->prn < best_prn)) {
                best_el = el;
                best_prn = o->prn;
            }
        }
        masters[c] = best_prn;
    }
    return masters;
}

DdFormationResult form_double_differences(const EpochObs& epoch,
                                          const std::map<Constellation, int>& masters,
                                          const NoiseModel& model,
                                          const GeodeticOrigin& origin) {
    DdFormationResult result;
    const EnuPoint base_enu = ecef_to_enu(epoch.base_pos, origin);

    auto obs_sigma = [&](const SatObs& o) {
        const double el = elevation_from(base_enu, o.sat_pos, origin);
        return measurement_sigma(el, o.snr, model);
    };

    for (const auto& rover_s : epoch.rover_obs) {
        const auto it = masters.find(rover_s.constellation);
        if (it == masters.end()) continue;
        const int master_prn = it->second;
        if (rover_s.prn == master_prn) continue;

        const SatObs* base_s = find_obs(epoch.base_obs, rover_s.prn, rover_s.constellation);
        const SatObs* rover_w = find_obs(epoch.rover_obs, master_prn, rover_s.constellation);
        const SatObs* base_w = find_obs(epoch.base_obs, master_prn, rover_s.constellation);
        if (!base_s || !rover_w || !base_w) {
            ++result.dropped_unmatched;
            continue;
        }

        DdObservation dd;
        dd.slave_prn = rover_s.prn;
        dd.master_prn = master_prn;
        dd.constellation = rover_s.constellation;
        dd.epoch_time = epoch.epoch_time;
        dd.dd_pseudorange = (rover_s.pseudorange - base_s->pseudorange) -
                            (rover_w->pseudorange - base_w->pseudorange);
        dd.dd_carrier = (rover_s.carrier_phase - base_s->carrier_phase) -
                        (rover_w->carrier_phase - base_w->carrier_phase);
        dd.wavelength = rover_s.wavelength;
        dd.slave_snr = rover_s.snr;
        dd.slave_pos = rover_s.sat_pos;
        dd.master_pos = rover_w->sat_pos;

        const double s1 = obs_sigma(rover_s);
        const double s2 = obs_sigma(*base_s);
        const double s3 = obs_sigma(*rover_w);
        const double s4 = obs_sigma(*base_w);
        dd.sigma_rho = std::sqrt(s1 * s1 + s2 * s2 + s3 * s3 + s4 * s4);
        dd.sigma_psi = dd.sigma_rho / 100.0;
        result.observations.push_back(dd);
    }
    return result;
}

namespace {

double dd_geometric_range(const DdObservation& dd, const EcefPoint& receiver_pos,
                          const EcefPoint& base_pos) {
    const double r_rs = (receiver_pos - dd.slave_pos).norm();
    const double r_es = (base_pos - dd.slave_pos).norm();
    const double r_rw = (receiver_pos - dd.master_pos).norm();
    const double r_ew = (base_pos - dd.master_pos).norm();
    return (r_rs - r_es) - (r_rw - r_ew);
}

}  // namespace

double dd_pseudorange_residual(const DdObservation& dd, const EcefPoint& receiver_pos,
                               const EcefPoint& base_pos) {
    return dd.dd_pseudorange - dd_geometric_range(dd, receiver_pos, base_pos);
}

double dd_carrierphase_residual(const DdObservation& dd, const EcefPoint& receiver_pos,
                                const EcefPoint& base_pos, double ambiguity_cycles) {
    return dd.wavelength * dd.dd_carrier - dd_geometric_range(dd, receiver_pos, base_pos) -
           dd.wavelength * ambiguity_cycles;
}

double doppler_residual(const SatObs& obs, const EcefPoint& receiver_pos,
                        const Eigen::Vector3d& receiver_vel_ecef,
                        double receiver_clock_drift) {
    const Eigen::Vector3d e = los_unit_vector(receiver_pos, obs.sat_pos);
    const double predicted =
        (e.dot(obs.sat_vel - receiver_vel_ecef) +
         kSpeedOfLight * (receiver_clock_drift - obs.sat_clock_drift)) /
        obs.wavelength;
    return obs.doppler - predicted;
}

namespace {

void write_obs_line(std::FILE* f, double epoch_time, const char* receiver_id,
                    const SatObs& o) {
    std::fprintf(f,
                 "%.6f %s %s %d %.6f %.6f %.6f %.3f %.9f "
                 "%.6f %.6f %.6f %.9f %.9f %.9f %.12e %.12e\n",
                 epoch_time, receiver_id, to_string(o.constellation).c_str(), o.prn,
                 o.pseudorange, o.carrier_phase, o.doppler, o.snr, o.wavelength,
                 o.sat_pos.x(), o.sat_pos.y(), o.sat_pos.z(), o.sat_vel.x(), o.sat_vel.y(),
                 o.sat_vel.z(), o.sat_clock_bias, o.sat_clock_drift);
}

}  // namespace

void write_obs_file(const std::string& path, const std::vector<EpochObs>& epochs) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("write_obs_file: cannot open " + path);
    for (const auto& e : epochs) {
        for (const auto& o : e.rover_obs) write_obs_line(f, e.epoch_time, "rover", o);
        for (const auto& o : e.base_obs) write_obs_line(f, e.epoch_time, "base", o);
    }
    std::fclose(f);
}

std::vector<EpochObs> read_obs_file(const std::string& path, const EcefPoint& base_pos) {
    std::ifstream in(path);
    if (!in) throw DatasetError("read_obs_file: cannot open " + path);

    std::vector<EpochObs> epochs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double epoch_time;
        std::string receiver_id, constellation_str;
        SatObs o;
        if (!(ss >> epoch_time >> receiver_id >> constellation_str >> o.prn >> o.pseudorange >>
              o.carrier_phase >> o.doppler >> o.snr >> o.wavelength >> o.sat_pos.x() >>
              o.sat_pos.y() >> o.sat_pos.z() >> o.sat_vel.x() >> o.sat_vel.y() >>
              o.sat_vel.z() >> o.sat_clock_bias >> o.sat_clock_drift)) {
            throw DatasetError("read_obs_file: malformed record at " + path + ":" +
                               std::to_string(line_no));
        }
        const auto c = constellation_from_string(constellation_str);
        if (!c) {
            throw DatasetError("read_obs_file: unknown constellation at " + path + ":" +
                               std::to_string(line_no));
        }
        o.constellation = *c;
        o.epoch_time = epoch_time;

        if (epochs.empty() || std::abs(epochs.back().epoch_time - epoch_time) > 1e-9) {
            EpochObs e;
            e.epoch_time = epoch_time;
            e.base_pos = base_pos;
            epochs.push_back(e);
        }
        if (receiver_id == "rover") {
            epochs.back().rover_obs.push_back(o);
        } else if (receiver_id == "base") {
            epochs.back().base_obs.push_back(o);
        } else {
            throw DatasetError("read_obs_file: unknown receiver id at " + path + ":" +
                               std::to_string(line_no));
        }
    }
    return epochs;
}

}  // namespace vsrtk
