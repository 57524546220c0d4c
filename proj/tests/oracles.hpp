#pragma once

// Independent reference computations used by the unit tests and the
// acceptance runner. Nothing here calls the routine it is checking.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "fphtc/analysis.hpp"
#include "fphtc/policy.hpp"
#include "fphtc/teacher.hpp"

namespace oracle {

using namespace fphtc;

/// Newton gain of sending x[f] <= t left, summed directly.
inline double newton_gain(std::span<const std::size_t> idx, const FeatureMatrix& x, std::span<const double> g,
                          std::span<const double> h, double l2, std::size_t f, double t, double* hl_out = nullptr,
                          double* hr_out = nullptr) {
    double G = 0, H = 0, gl = 0, hl = 0;
    for (auto i : idx) {
        G += g[i], H += h[i];
        if (x.at(i, f) <= t) gl += g[i], hl += h[i];
    }
    const double gr = G - gl, hr = H - hl;
    if (hl_out) *hl_out = hl;
    if (hr_out) *hr_out = hr;
    return 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2) - G * G / (H + l2));
}

/// Every (feature, midpoint) candidate; best admissible positive gain or none.
inline std::optional<SplitResult> gbdt_best_split(std::span<const std::size_t> idx, const FeatureMatrix& x,
                                                  std::span<const double> g, std::span<const double> h,
                                                  const GbdtConfig& cfg) {
    std::optional<SplitResult> best;
    for (std::size_t f = 0; f < x.cols; ++f) {
        std::set<double> vals;
        for (auto i : idx) vals.insert(x.at(i, f));
        for (auto it = vals.begin(); it != vals.end() && std::next(it) != vals.end(); ++it) {
            const double t = 0.5 * (*it + *std::next(it));
            double hl = 0, hr = 0;
            const double gain = newton_gain(idx, x, g, h, cfg.l2_reg, f, t, &hl, &hr);
            if (hl < cfg.min_child_weight || hr < cfg.min_child_weight) continue;
            if (gain > 0 && (!best || gain > best->gain)) best = SplitResult{static_cast<int>(f), t, gain};
        }
    }
    return best;
}

inline double entropy_bits(const std::array<double, 3>& c) {
    const double tot = c[0] + c[1] + c[2];
    double e = 0;
    for (double v : c)
        if (v > 0) e -= v / tot * std::log2(v / tot);
    return e;
}

/// Weighted information gain of sending feature f <= t left.
inline double info_gain(std::span<const PacketRecord> rs, std::span<const std::size_t> idx,
                        const std::array<double, 3>& w, std::size_t f, double t) {
    std::array<double, 3> all{}, left{};
    for (auto i : idx) {
        const auto c = static_cast<std::size_t>(encode(rs[i].label));
        all[c] += w[c];
        if (static_cast<double>(rs[i].features.value(f)) <= t) left[c] += w[c];
    }
    const std::array<double, 3> right{all[0] - left[0], all[1] - left[1], all[2] - left[2]};
    const double W = all[0] + all[1] + all[2], WL = left[0] + left[1] + left[2];
    if (W <= 0) return 0;
    return entropy_bits(all) - WL / W * entropy_bits(left) - (W - WL) / W * entropy_bits(right);
}

struct CartCandidate {
    std::size_t feature;
    double threshold;
    double gain;
};

inline std::vector<CartCandidate> cart_candidates(std::span<const PacketRecord> rs, std::span<const std::size_t> idx,
                                                  const std::array<double, 3>& w) {
    std::vector<CartCandidate> out;
    for (std::size_t f = 0; f < kPacketFeatureCount; ++f) {
        std::set<std::uint64_t> vals;
        for (auto i : idx) vals.insert(rs[i].features.value(f));
        for (auto it = vals.begin(); it != vals.end() && std::next(it) != vals.end(); ++it) {
            const double t = 0.5 * (static_cast<double>(*it) + static_cast<double>(*std::next(it)));
            out.push_back({f, t, info_gain(rs, idx, w, f, t)});
        }
    }
    return out;
}

/// Balanced class weights N / (3 N_k).
inline std::array<double, 3> class_weights(std::span<const PacketRecord> rs) {
    std::array<double, 3> n{};
    for (const auto& r : rs) n[static_cast<std::size_t>(encode(r.label))] += 1;
    std::array<double, 3> w{};
    for (std::size_t k = 0; k < 3; ++k) w[k] = n[k] > 0 ? static_cast<double>(rs.size()) / (3 * n[k]) : 0.0;
    return w;
}

inline double total_cost(const BoundParams& p, double l) {
    const double n = static_cast<double>(p.n);
    const double est = (std::pow(l, p.alpha) * p.cap_rp + p.cap_fl) / (std::pow(n, p.alpha) * std::pow(l, p.alpha));
    return p.K * est + p.eps_rp + p.eps_fl + n * l * p.c_dpi;
}

inline double fphtc_bound(const BoundParams& p) {
    const double n = static_cast<double>(p.n);
    return p.cap_rp / std::pow(n, p.alpha) + p.eps_rp + p.cap_fl / std::pow(n * p.lambda, p.alpha) + p.eps_fl;
}

/// argmin of total_cost over lambda = k / points, first minimum wins.
inline double grid_argmin(const BoundParams& p, int points) {
    double best_l = 1.0 / points, best_c = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= points; ++k) {
        const double l = static_cast<double>(k) / points;
        const double c = oracle::total_cost(p, l);
        if (c < best_c) best_c = c, best_l = l;
    }
    return best_l;
}

} // namespace oracle
