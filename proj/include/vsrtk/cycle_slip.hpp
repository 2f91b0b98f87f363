#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "vsrtk/gnss.hpp"

namespace vsrtk {

/// Float DD ambiguity from the carrier measurement and a predicted receiver
/// position (Eq.-16-style estimate), in cycles.
double estimate_dd_ambiguity_float(const DdObservation& dd, const EcefPoint& predicted_receiver,
                                   const EcefPoint& base_pos);

struct SlipReport {
    double epoch_time = 0.0;
    int prn = 0;
    Constellation constellation = Constellation::GPS;
    double n_td = 0.0;       // cycles
    double threshold = 0.0;
};

/// r = N_t - N_{t-1}, cycles. The corresponding graph factor is omitted when a
/// slip was flagged between the epochs.
inline double constant_ambiguity_residual(double n_t, double n_prev) { return n_t - n_prev; }

/// Triple-difference cycle-slip detector over per-satellite ambiguity tracks.
/// A track resets on a flagged slip, a master change, or a gap in epochs;
/// reset tracks produce no constant-ambiguity link for that epoch pair.
class AmbiguityTracker {
public:
    explicit AmbiguityTracker(double threshold_cycles = 0.5) : threshold_(threshold_cycles) {}

    struct Decision {
        bool continuous = false;  // eligible for a constant-ambiguity factor
        double n_td = 0.0;
    };

    // key: (slave prn, master prn, constellation)
    using Key = std::tuple<int, int, Constellation>;

    /// Processes one epoch of float estimates. prev_epoch_time identifies the
    /// immediately preceding processed epoch; tracks last seen at a different
    /// epoch are treated as re-acquired.
    std::vector<SlipReport> update(double epoch_time, double prev_epoch_time,
                                   const std::vector<std::pair<Key, double>>& floats,
                                   std::map<Key, Decision>* decisions = nullptr);

    double threshold() const { return threshold_; }
    std::size_t active_tracks() const { return tracks_.size(); }
    void reset() { tracks_.clear(); }

private:
    struct Track {
        double n_dd = 0.0;
        double epoch = 0.0;
    };
    double threshold_;
    std::map<Key, Track> tracks_;
};

/// Slip report rows: epoch prn constellation n_td method
void write_slip_report_file(const std::string& path, const std::vector<SlipReport>& reports,
                            const std::string& method = "lidar_aided");

}  // namespace vsrtk
