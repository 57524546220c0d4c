#pragma once

#include <iosfwd>
#include <span>
#include <vector>

namespace fphtc {

struct BoundParams {
    long long n = 1000;
    double lambda = 0.1;
    double alpha = 0.5;
    double cap_fl = 10.0; // capacity of the flow-based hypothesis class
    double cap_rp = 1.0;  // capacity of the routing-policy hypothesis class
    double eps_fl = 0.0;
    double eps_rp = 0.0;
    double eps_pk = 0.0;
    double K = 1.0;
    double c_dpi = 0.001;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

/// cap_fl / (n lambda) + eps_fl
double teacher_bound(const BoundParams& p);
/// (lambda^a cap_rp + cap_fl) / (n^a lambda^a) + eps_rp + eps_fl
double fphtc_bound(const BoundParams& p);
/// cap_rp / sqrt(n lambda) + eps_pk
double packet_bound(const BoundParams& p);
/// K * estimation term + eps_rp + eps_fl + n lambda c_dpi, at `lambda`.
double total_cost(const BoundParams& p, double lambda);

struct OptimalLambda {
    double lambda = 1.0;
    double unclamped = 1.0;
    bool clamped = false;
};

/// Closed-form minimizer of total_cost, clamped to (0, 1].
OptimalLambda optimal_lambda(const BoundParams& p);

/// argmin of total_cost over lambda = k / points, k = 1..points; ties keep the smaller lambda.
double grid_argmin_lambda(const BoundParams& p, int points = 10000);

struct Outperformance {
    bool fphtc_better = false;
    double lhs = 0.0; // fphtc_bound
    double rhs = 0.0; // packet_bound
};

Outperformance outperformance_check(const BoundParams& p);

struct BoundRow {
    double lambda = 0.0;
    double teacher_bound = 0.0;
    double fphtc_bound = 0.0;
    double packet_bound = 0.0;
    double total_cost = 0.0;
};

/// lambda = k / points, k = 1..points.
std::vector<BoundRow> bound_grid(const BoundParams& p, int points);

/// Header: lambda,teacher_bound,fphtc_bound,packet_bound,total_cost
void write_bound_csv(std::ostream& os, std::span<const BoundRow> rows);

} // namespace fphtc
