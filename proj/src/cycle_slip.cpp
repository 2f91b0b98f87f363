#include "vsrtk/cycle_slip.hpp"

#include <cmath>
#include <cstdio>

#include "vsrtk/errors.hpp"

namespace vsrtk {

double estimate_dd_ambiguity_float(const DdObservation& dd, const EcefPoint& predicted_receiver,
                                   const EcefPoint& base_pos) {
    const double r_rs = (predicted_receiver - dd.slave_pos).norm();
    const double r_es = (base_pos - dd.slave_pos).norm();
    const double r_rw = (predicted_receiver - dd.master_pos).norm();
    const double r_ew = (base_pos - dd.master_pos).norm();
    const double dd_range = (r_rs - r_es) - (r_rw - r_ew);
    return dd.dd_carrier - dd_range / dd.wavelength;
}

std::vector<SlipReport> AmbiguityTracker::update(
    double epoch_time, double prev_epoch_time,
    const std::vector<std::pair<Key, double>>& floats, std::map<Key, Decision>* decisions) {
    std::vector<SlipReport> reports;
    std::map<Key, Track> next;
    for (const auto& [key, n_dd] : floats) {
        Decision d;
        const auto it = tracks_.find(key);
        const bool consecutive =
            it != tracks_.end() && std::abs(it->second.epoch - prev_epoch_time) < 1e-9;
        if (consecutive) {
            d.n_td = n_dd - it->second.n_dd;
            if (std::abs(d.n_td) > threshold_) {
                SlipReport r;
                r.epoch_time = epoch_time;
                r.prn = std::get<0>(key);
                r.constellation = std::get<2>(key);
                r.n_td = d.n_td;
                r.threshold = threshold_;
                reports.push_back(r);
                d.continuous = false;  // track reset
            } else {
                d.continuous = true;
            }
        }
        next[key] = {n_dd, epoch_time};
        if (decisions) (*decisions)[key] = d;
    }
    tracks_ = std::move(next);
    return reports;
}

void write_slip_report_file(const std::string& path, const std::vector<SlipReport>& reports,
                            const std::string& method) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("write_slip_report_file: cannot open " + path);
    std::fprintf(f, "# epoch prn constellation n_td method\n");
    for (const auto& r : reports) {
        std::fprintf(f, "%.6f %d %s %.4f %s\n", r.epoch_time, r.prn,
                     to_string(r.constellation).c_str(), r.n_td, method.c_str());
    }
    std::fclose(f);
}

}  // namespace vsrtk
