#include "fphtc/analysis.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "fphtc/error.hpp"
#include "fphtc/numfmt.hpp"

namespace fphtc {

namespace {

void require(bool ok, const char* field, const char* rule) {
    if (!ok) throw ConfigError(std::string("bound parameter ") + field + " " + rule);
}

double estimation_term(const BoundParams& p, double lambda) {
    const double la = std::pow(lambda, p.alpha);
    return (la * p.cap_rp + p.cap_fl) / (std::pow(static_cast<double>(p.n), p.alpha) * la);
}

} // namespace

void BoundParams::validate() const {
    require(n >= 1, "n", "must be >= 1");
    require(lambda > 0 && lambda <= 1, "lambda", "must lie in (0,1]");
    require(alpha >= 0.5 && alpha <= 1, "alpha", "must lie in [0.5,1]");
    require(cap_fl > 0 && std::isfinite(cap_fl), "cap_fl", "must be > 0");
    require(cap_rp > 0 && std::isfinite(cap_rp), "cap_rp", "must be > 0");
    require(eps_fl >= 0 && std::isfinite(eps_fl), "eps_fl", "must be >= 0");
    require(eps_rp >= 0 && std::isfinite(eps_rp), "eps_rp", "must be >= 0");
    require(eps_pk >= 0 && std::isfinite(eps_pk), "eps_pk", "must be >= 0");
    require(K > 0 && std::isfinite(K), "K", "must be > 0");
    require(c_dpi > 0 && std::isfinite(c_dpi), "c_dpi", "must be > 0");
}

double teacher_bound(const BoundParams& p) {
    return p.cap_fl / (static_cast<double>(p.n) * p.lambda) + p.eps_fl;
}

double fphtc_bound(const BoundParams& p) { return estimation_term(p, p.lambda) + p.eps_rp + p.eps_fl; }

double packet_bound(const BoundParams& p) {
    return p.cap_rp / std::sqrt(static_cast<double>(p.n) * p.lambda) + p.eps_pk;
}

double total_cost(const BoundParams& p, double lambda) {
    if (!(lambda > 0 && lambda <= 1)) throw ConfigError("total_cost: lambda must lie in (0,1]");
    return p.K * estimation_term(p, lambda) + p.eps_rp + p.eps_fl + static_cast<double>(p.n) * lambda * p.c_dpi;
}

OptimalLambda optimal_lambda(const BoundParams& p) {
    const double n = static_cast<double>(p.n);
    const double radicand = p.alpha * p.K * p.cap_fl / (std::pow(n, 1.0 + p.alpha) * p.c_dpi);
    OptimalLambda r;
    r.unclamped = std::pow(radicand, 1.0 / (1.0 + p.alpha));
    r.clamped = r.unclamped > 1.0;
    r.lambda = r.clamped ? 1.0 : r.unclamped;
    return r;
}

double grid_argmin_lambda(const BoundParams& p, int points) {
    if (points < 1) throw ConfigError("grid_argmin_lambda: points must be >= 1");
    double best_l = 1.0, best_c = INFINITY;
    for (int k = 1; k <= points; ++k) {
        const double l = static_cast<double>(k) / points;
        const double c = total_cost(p, l);
        if (c < best_c) best_c = c, best_l = l;
    }
    return best_l;
}

Outperformance outperformance_check(const BoundParams& p) {
    Outperformance o;
    o.lhs = fphtc_bound(p);
    o.rhs = packet_bound(p);
    o.fphtc_better = o.lhs <= o.rhs;
    return o;
}

std::vector<BoundRow> bound_grid(const BoundParams& p, int points) {
    if (points < 1) throw ConfigError("bound_grid: points must be >= 1");
    std::vector<BoundRow> rows;
    rows.reserve(static_cast<std::size_t>(points));
    BoundParams q = p;
    for (int k = 1; k <= points; ++k) {
        q.lambda = static_cast<double>(k) / points;
        rows.push_back({q.lambda, teacher_bound(q), fphtc_bound(q), packet_bound(q), total_cost(q, q.lambda)});
    }
    return rows;
}

void write_bound_csv(std::ostream& os, std::span<const BoundRow> rows) {
    os << "lambda,teacher_bound,fphtc_bound,packet_bound,total_cost\n";
    for (const auto& r : rows)
        os << format_double(r.lambda) << ',' << format_double(r.teacher_bound) << ',' << format_double(r.fphtc_bound)
           << ',' << format_double(r.packet_bound) << ',' << format_double(r.total_cost) << '\n';
}

} // namespace fphtc
