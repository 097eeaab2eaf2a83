#include "poq/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "poq/metrics.hpp"

namespace poq {

namespace {

struct ArmKey {
    std::string name;
    std::uint64_t seed;
    bool operator<(const ArmKey& o) const {
        return name != o.name ? name < o.name : seed < o.seed;
    }
};

ArmSpec parse_arm_name(const std::string& name, std::uint64_t seed) {
    ArmSpec spec;
    spec.seed = seed;
    std::string rest = name;
    if (rest.size() > 6 && rest.substr(rest.size() - 6) == "-nores") {
        spec.residual_cross = false;
        rest = rest.substr(0, rest.size() - 6);
    }
    auto dpos = rest.rfind("-d");
    if (dpos == std::string::npos)
        throw DataError("malformed arm name '" + name + "' in curves file");
    spec.depth = std::stoi(rest.substr(dpos + 2));
    spec.mode = parse_query_mode(rest.substr(0, dpos));
    return spec;
}

// color per (mode, residual); seeds share it
const char* arm_color(const ArmSpec& arm) {
    if (!arm.residual_cross) return "#888888";
    switch (arm.mode) {
        case QueryMode::Primal: return "#d62728";
        case QueryMode::AdditiveShared: return "#1f77b4";
        case QueryMode::AdditivePerLayer: return "#2ca02c";
    }
    return "#000000";
}

const char* depth_dash(int depth) {
    switch (depth) {
        case 1: return "";
        case 2: return "6,3";
        default: return "2,2";
    }
}

} // namespace

ConvergenceReport read_curves_csv(const std::string& path, int convergence_window,
                                  double convergence_delta) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open curves file '" + path + "'");
    std::string line;
    if (!std::getline(f, line) || line != "arm,seed,epoch,cf1")
        throw DataError("'" + path + "' does not look like a curves file");

    std::map<ArmKey, std::vector<std::pair<int, double>>> series;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string arm, seed_s, epoch_s, cf1_s;
        if (!std::getline(ss, arm, ',') || !std::getline(ss, seed_s, ',') ||
            !std::getline(ss, epoch_s, ',') || !std::getline(ss, cf1_s, ','))
            throw DataError("malformed row in '" + path + "': " + line);
        ArmKey key{arm, std::stoull(seed_s)};
        series[key].emplace_back(std::stoi(epoch_s), std::stod(cf1_s));
    }

    ConvergenceReport report;
    for (auto& [key, points] : series) {
        std::sort(points.begin(), points.end());
        ArmResult r;
        r.arm = parse_arm_name(key.name, key.seed);
        for (auto& [epoch, cf1] : points) r.val_cf1.push_back(cf1);
        if (static_cast<int>(r.val_cf1.size()) >= convergence_window)
            r.conv_epoch = convergence_epoch(r.val_cf1, convergence_window, convergence_delta);
        r.best_val_cf1 = r.val_cf1.empty()
                             ? 0.0
                             : *std::max_element(r.val_cf1.begin(), r.val_cf1.end());
        report.arms.push_back(std::move(r));
        report.epoch_budget = std::max(report.epoch_budget,
                                       static_cast<int>(report.arms.back().val_cf1.size()));
    }

    // recompute the primal vs additive-shared speedup over depths <= 3
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_depth;
    for (const auto& r : report.arms) {
        if (!r.arm.residual_cross || r.arm.depth > 3) continue;
        double eff = r.conv_epoch ? double(*r.conv_epoch) : double(report.epoch_budget);
        if (r.arm.mode == QueryMode::AdditiveShared) by_depth[r.arm.depth].first.push_back(eff);
        if (r.arm.mode == QueryMode::Primal) by_depth[r.arm.depth].second.push_back(eff);
    }
    std::vector<double> baseline, ours;
    for (auto& [depth, pair] : by_depth) {
        auto& [base_v, ours_v] = pair;
        if (base_v.empty() || ours_v.empty()) continue;
        DepthSpeedup ds;
        ds.depth = depth;
        for (double v : base_v) ds.baseline_mean_epoch += v / base_v.size();
        for (double v : ours_v) ds.ours_mean_epoch += v / ours_v.size();
        if (ds.baseline_mean_epoch > 0.0) {
            ds.percentage =
                100.0 * (ds.baseline_mean_epoch - ds.ours_mean_epoch) / ds.baseline_mean_epoch;
            baseline.push_back(ds.baseline_mean_epoch);
            ours.push_back(ds.ours_mean_epoch);
        }
        report.per_depth.push_back(ds);
    }
    if (!baseline.empty()) {
        report.average_speedup = speedup_percentage(baseline, ours);
        report.speedup_defined = true;
    }
    return report;
}

std::string convergence_summary_text(const ConvergenceReport& report) {
    std::ostringstream os;
    char buf[160];
    for (const auto& r : report.arms) {
        std::snprintf(buf, sizeof(buf), "%-28s seed %-3llu  best val C-F1 %.4f  plateau %s\n",
                      r.arm.name().c_str(), static_cast<unsigned long long>(r.arm.seed),
                      r.best_val_cf1,
                      r.conv_epoch ? ("epoch " + std::to_string(*r.conv_epoch)).c_str()
                                   : "not reached");
        os << buf;
    }
    for (const auto& ds : report.per_depth) {
        std::snprintf(buf, sizeof(buf),
                      "depth %d: additive-shared plateau %.2f vs primal %.2f -> %+.1f%%\n",
                      ds.depth, ds.baseline_mean_epoch, ds.ours_mean_epoch, ds.percentage);
        os << buf;
    }
    if (report.speedup_defined) {
        std::snprintf(buf, sizeof(buf), "average convergence speedup (depths <= 3): %+.1f%%\n",
                      report.average_speedup);
        os << buf;
    }
    return os.str();
}

void write_curves_svg(const std::string& path, const ConvergenceReport& report) {
    const int width = 720, height = 440;
    const int ml = 60, mr = 200, mt = 30, mb = 50;
    const double px = ml, py = mt;
    const double pw = width - ml - mr, ph = height - mt - mb;

    std::size_t max_epochs = 1;
    for (const auto& r : report.arms) max_epochs = std::max(max_epochs, r.val_cf1.size());
    double xmax = double(std::max<std::size_t>(max_epochs, 2) - 1);

    auto xpos = [&](double e) { return px + pw * (e / xmax); };
    auto ypos = [&](double v) { return py + ph * (1.0 - v); };

    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' viewBox='0 0 " << width << " " << height << "'>\n";
    svg << "<rect width='" << width << "' height='" << height << "' fill='white'/>\n";

    char buf[256];
    // grid and axis labels
    for (int i = 0; i <= 5; ++i) {
        double v = i / 5.0;
        std::snprintf(buf, sizeof(buf),
                      "<line x1='%.1f' y1='%.1f' x2='%.1f' y2='%.1f' stroke='#dddddd'/>\n", px,
                      ypos(v), px + pw, ypos(v));
        svg << buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x='%.1f' y='%.1f' font-size='11' text-anchor='end' "
                      "font-family='sans-serif'>%.1f</text>\n",
                      px - 6, ypos(v) + 4, v);
        svg << buf;
    }
    int xstep = std::max(1, static_cast<int>(xmax) / 8);
    for (int e = 0; e <= static_cast<int>(xmax); e += xstep) {
        std::snprintf(buf, sizeof(buf),
                      "<text x='%.1f' y='%.1f' font-size='11' text-anchor='middle' "
                      "font-family='sans-serif'>%d</text>\n",
                      xpos(e), py + ph + 16, e);
        svg << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<rect x='%.1f' y='%.1f' width='%.1f' height='%.1f' fill='none' "
                  "stroke='#333333'/>\n",
                  px, py, pw, ph);
    svg << buf;
    svg << "<text x='" << (px + pw / 2) << "' y='" << (height - 12)
        << "' font-size='12' text-anchor='middle' font-family='sans-serif'>epoch</text>\n";
    svg << "<text x='16' y='" << (py + ph / 2)
        << "' font-size='12' text-anchor='middle' font-family='sans-serif' transform='rotate(-90 "
           "16 "
        << (py + ph / 2) << ")'>validation C-F1</text>\n";

    for (const auto& r : report.arms) {
        if (r.val_cf1.empty()) continue;
        std::ostringstream pts;
        for (std::size_t e = 0; e < r.val_cf1.size(); ++e) {
            std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", xpos(double(e)),
                          ypos(std::clamp(r.val_cf1[e], 0.0, 1.0)));
            pts << buf;
        }
        std::snprintf(buf, sizeof(buf),
                      "<polyline fill='none' stroke='%s' stroke-width='1.6' stroke-dasharray='%s' "
                      "opacity='0.85' points='%s'/>\n",
                      arm_color(r.arm), depth_dash(r.arm.depth), pts.str().c_str());
        svg << buf;
    }

    // legend: one entry per distinct (mode, depth, residual)
    std::vector<std::string> seen;
    double ly = py + 8;
    for (const auto& r : report.arms) {
        std::string label = r.arm.name();
        if (std::find(seen.begin(), seen.end(), label) != seen.end()) continue;
        seen.push_back(label);
        std::snprintf(buf, sizeof(buf),
                      "<line x1='%.1f' y1='%.1f' x2='%.1f' y2='%.1f' stroke='%s' "
                      "stroke-width='2' stroke-dasharray='%s'/>\n",
                      px + pw + 12, ly, px + pw + 40, ly, arm_color(r.arm),
                      depth_dash(r.arm.depth));
        svg << buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x='%.1f' y='%.1f' font-size='11' "
                      "font-family='sans-serif'>%s</text>\n",
                      px + pw + 46, ly + 4, label.c_str());
        svg << buf;
        ly += 18;
    }
    svg << "</svg>\n";

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f << svg.str();
    if (!f) throw DataError("short write to '" + path + "'");
}

} // namespace poq
