#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vsrtk/frames.hpp"

namespace vsrtk {

enum class Constellation { GPS, BeiDou };

std::string to_string(Constellation c);
std::optional<Constellation> constellation_from_string(const std::string& s);

/// One satellite's raw measurements at one epoch as seen by one receiver.
struct SatObs {
    int prn = 0;
    Constellation constellation = Constellation::GPS;
    double epoch_time = 0.0;       // s
    double pseudorange = 0.0;      // m
    double carrier_phase = 0.0;    // cycles
    double doppler = 0.0;          // Hz
    double snr = 0.0;              // dB-Hz
    double wavelength = 0.0;       // m
    EcefPoint sat_pos = EcefPoint::Zero();
    Eigen::Vector3d sat_vel = Eigen::Vector3d::Zero();
    double sat_clock_bias = 0.0;   // s
    double sat_clock_drift = 0.0;  // s/s

    std::pair<int, Constellation> key() const { return {prn, constellation}; }
};

/// Matched rover/base observations of one GNSS epoch.
struct EpochObs {
    double epoch_time = 0.0;
    std::vector<SatObs> rover_obs;
    std::vector<SatObs> base_obs;
    EcefPoint base_pos = EcefPoint::Zero();
};

/// Elevation/SNR stochastic model for the raw pseudorange sigma.
struct NoiseModel {
    double sigma_base = 0.5;       // m
    double snr_reference = 50.0;   // S1, dB-Hz
    double elevation_exponent = 1.0;
    double clip_max_factor = 100.0;
};

/// One double-differenced observation (slave s against master w).
struct DdObservation {
    int slave_prn = 0;
    int master_prn = 0;
    Constellation constellation = Constellation::GPS;
    double epoch_time = 0.0;
    double dd_pseudorange = 0.0;  // m
    double dd_carrier = 0.0;      // cycles
    double wavelength = 0.0;      // m
    double sigma_rho = 0.0;       // m, combined DD sigma
    double sigma_psi = 0.0;       // m
    double slave_snr = 0.0;       // dB-Hz, rover side
    EcefPoint slave_pos = EcefPoint::Zero();
    EcefPoint master_pos = EcefPoint::Zero();
};

/// sigma_rho from elevation and SNR; sigma_psi = sigma_rho/100, sigma_d = sigma_rho.
/// Throws InvalidElevation for elevation <= 0.
double measurement_sigma(double elevation_rad, double snr_dbhz, const NoiseModel& model);

/// Highest-elevation satellite per constellation among satellites observed by
/// both receivers; ties broken by lower prn.
/// Throws InsufficientSatellites when a constellation has fewer than 2 matches.
std::map<Constellation, int> select_master_satellites(const EpochObs& epoch,
                                                      const EnuPoint& receiver_enu,
                                                      const GeodeticOrigin& origin);

struct DdFormationResult {
    std::vector<DdObservation> observations;
    int dropped_unmatched = 0;
};

/// Forms intra-constellation double differences against the selected masters.
/// Unmatched satellites are dropped and counted. Sigmas come from the noise
/// model evaluated at each satellite's elevation seen from the base station.
DdFormationResult form_double_differences(const EpochObs& epoch,
                                          const std::map<Constellation, int>& masters,
                                          const NoiseModel& model,
                                          const GeodeticOrigin& origin);

/// DD pseudorange residual in meters at receiver position p_r (ECEF).
double dd_pseudorange_residual(const DdObservation& dd, const EcefPoint& receiver_pos,
                               const EcefPoint& base_pos);

/// DD carrier residual in meters; the float ambiguity enters scaled by the
/// wavelength so all carrier terms are range-domain.
double dd_carrierphase_residual(const DdObservation& dd, const EcefPoint& receiver_pos,
                                const EcefPoint& base_pos, double ambiguity_cycles);

/// Undifferenced Doppler residual in Hz.
double doppler_residual(const SatObs& obs, const EcefPoint& receiver_pos,
                        const Eigen::Vector3d& receiver_vel_ecef,
                        double receiver_clock_drift);

/// Line-delimited observation file, field order:
/// epoch_time receiver_id constellation prn pseudorange_m carrier_cycles
/// doppler_hz snr_dbhz wavelength_m sat_x sat_y sat_z sat_vx sat_vy sat_vz
/// sat_clk_s sat_clkdrift
void write_obs_file(const std::string& path, const std::vector<EpochObs>& epochs);
std::vector<EpochObs> read_obs_file(const std::string& path, const EcefPoint& base_pos);

}  // namespace vsrtk
