#pragma once

// Point-matching centerline metrics and direction agreement.

#include "sire/centerline.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sire {

struct Classification {
    std::vector<bool> tracked_tp;          ///< TP_T when true, FP otherwise
    std::vector<double> tracked_distance;  ///< to the nearest reference point
    std::vector<bool> reference_tp;        ///< TP_R when true, FN otherwise
};

/// Exact brute-force matching. A tracked point is TP_T when its nearest
/// reference point is within that point's radius; a reference point is TP_R
/// when some tracked point lies within its radius.
Classification classify_points(std::span<const Vec3> tracked, std::span<const Vec3> reference,
                               std::span<const double> reference_radii);
Classification classify_points(std::span<const Vec3> tracked, const Centerline& reference);

struct MetricsReport {
    double precision = 0.0;
    double recall = 0.0;
    double overlap = 0.0;
    std::optional<double> ai;  ///< absent without TP_T points
    int tp_t = 0;
    int tp_r = 0;
    int fp = 0;
    int fn = 0;
};

MetricsReport report(const Classification& labels);

/// Resamples every reference branch at <= max_step, merges all tracked
/// points and all reference points, then classifies.
MetricsReport evaluate(const std::vector<Centerline>& tracked, const std::vector<Centerline>& reference,
                       double max_step = 0.25);

/// Larger of the two pairings of predicted and ground-truth directions.
double cosine_eval(const Vec3& d1, const Vec3& d2, const Vec3& g1, const Vec3& g2);

nlohmann::json to_json(const MetricsReport& r);

struct BranchMetrics {
    std::string branch;
    MetricsReport report;
};

/// branch,precision,recall,overlap,ai
void write_metrics_csv(const std::filesystem::path& path, const std::vector<BranchMetrics>& rows);

/// One row per reference branch, scored against the tracked points whose
/// nearest reference point lies on that branch.
std::vector<BranchMetrics> evaluate_per_branch(const std::vector<Centerline>& tracked,
                                               const std::vector<Centerline>& reference, double max_step = 0.25);

}  // namespace sire
