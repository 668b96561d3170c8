#include "sire/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace sire {

Classification classify_points(std::span<const Vec3> tracked, std::span<const Vec3> reference,
                               std::span<const double> reference_radii)
{
    require(!tracked.empty() && !reference.empty(), "tracked and reference lines must be non-empty");
    require(reference.size() == reference_radii.size(), "one radius per reference point is required");
    Classification c;
    c.tracked_tp.resize(tracked.size());
    c.tracked_distance.resize(tracked.size());
    c.reference_tp.assign(reference.size(), false);

    const auto nt = static_cast<long>(tracked.size());
#pragma omp parallel for schedule(static)
    for (long t = 0; t < nt; ++t) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t r = 0; r < reference.size(); ++r) {
            const double d = (tracked[t] - reference[r]).norm();
            if (d < best) {
                best = d;
                arg = r;
            }
        }
        c.tracked_distance[t] = best;
        c.tracked_tp[t] = best <= reference_radii[arg];
    }
    std::vector<char> hit(reference.size(), 0);
    const auto nr = static_cast<long>(reference.size());
#pragma omp parallel for schedule(static)
    for (long r = 0; r < nr; ++r) {
        for (const auto& p : tracked) {
            if ((p - reference[r]).norm() <= reference_radii[r]) {
                hit[r] = 1;
                break;
            }
        }
    }
    for (std::size_t r = 0; r < reference.size(); ++r) c.reference_tp[r] = hit[r] != 0;
    return c;
}

Classification classify_points(std::span<const Vec3> tracked, const Centerline& reference)
{
    return classify_points(tracked, reference.points(), reference.radii());
}

MetricsReport report(const Classification& labels)
{
    MetricsReport r;
    double dist = 0.0;
    for (std::size_t k = 0; k < labels.tracked_tp.size(); ++k) {
        if (labels.tracked_tp[k]) {
            ++r.tp_t;
            dist += labels.tracked_distance[k];
        } else {
            ++r.fp;
        }
    }
    for (bool tp : labels.reference_tp) tp ? ++r.tp_r : ++r.fn;
    const auto ratio = [](int num, int den) { return den > 0 ? static_cast<double>(num) / den : 0.0; };
    r.precision = ratio(r.tp_t, r.tp_t + r.fp);
    r.recall = ratio(r.tp_r, r.tp_r + r.fn);
    r.overlap = ratio(r.tp_t + r.tp_r, r.tp_t + r.tp_r + r.fp + r.fn);
    if (r.tp_t > 0) r.ai = dist / r.tp_t;
    return r;
}

namespace {

struct PointSet {
    std::vector<Vec3> points;
    std::vector<double> radii;
    std::vector<int> branch;
};

PointSet merge_reference(const std::vector<Centerline>& reference, double max_step)
{
    PointSet s;
    for (std::size_t b = 0; b < reference.size(); ++b) {
        const Centerline line = reference[b].size() >= 2 ? reference[b].resampled(max_step) : reference[b];
        s.points.insert(s.points.end(), line.points().begin(), line.points().end());
        s.radii.insert(s.radii.end(), line.radii().begin(), line.radii().end());
        s.branch.insert(s.branch.end(), line.size(), static_cast<int>(b));
    }
    return s;
}

std::vector<Vec3> merge_tracked(const std::vector<Centerline>& tracked)
{
    std::vector<Vec3> out;
    for (const auto& t : tracked) out.insert(out.end(), t.points().begin(), t.points().end());
    return out;
}

}  // namespace

MetricsReport evaluate(const std::vector<Centerline>& tracked, const std::vector<Centerline>& reference,
                       double max_step)
{
    require(max_step > 0.0, "resampling step must be positive");
    const auto ref = merge_reference(reference, max_step);
    const auto pts = merge_tracked(tracked);
    return report(classify_points(pts, ref.points, ref.radii));
}

std::vector<BranchMetrics> evaluate_per_branch(const std::vector<Centerline>& tracked,
                                               const std::vector<Centerline>& reference, double max_step)
{
    require(max_step > 0.0, "resampling step must be positive");
    const auto ref = merge_reference(reference, max_step);
    const auto pts = merge_tracked(tracked);
    require(!pts.empty() && !ref.points.empty(), "tracked and reference lines must be non-empty");

    std::vector<std::vector<Vec3>> assigned(reference.size());
    for (const auto& p : pts) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t r = 0; r < ref.points.size(); ++r) {
            const double d = (p - ref.points[r]).norm();
            if (d < best) {
                best = d;
                arg = ref.branch[r];
            }
        }
        assigned[arg].push_back(p);
    }

    std::vector<BranchMetrics> rows;
    for (std::size_t b = 0; b < reference.size(); ++b) {
        const Centerline line = reference[b].size() >= 2 ? reference[b].resampled(max_step) : reference[b];
        BranchMetrics row;
        row.branch = std::to_string(b);
        if (assigned[b].empty()) {
            row.report.fn = static_cast<int>(line.size());
        } else {
            row.report = report(classify_points(assigned[b], line));
        }
        rows.push_back(row);
    }
    return rows;
}

double cosine_eval(const Vec3& d1, const Vec3& d2, const Vec3& g1, const Vec3& g2)
{
    require(is_unit(d1) && is_unit(d2) && is_unit(g1) && is_unit(g2), "cosine evaluation needs unit vectors");
    const double straight = 0.5 * (d1.dot(g1) + d2.dot(g2));
    const double swapped = 0.5 * (d1.dot(g2) + d2.dot(g1));
    return std::clamp(std::max(straight, swapped), -1.0, 1.0);
}

nlohmann::json to_json(const MetricsReport& r)
{
    nlohmann::json j = {{"precision", r.precision}, {"recall", r.recall}, {"overlap", r.overlap},
                        {"tp_t", r.tp_t},           {"tp_r", r.tp_r},     {"fp", r.fp},
                        {"fn", r.fn}};
    j["ai_mm"] = r.ai ? nlohmann::json(*r.ai) : nlohmann::json(nullptr);
    return j;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<BranchMetrics>& rows)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out.precision(10);
    out << "branch,precision,recall,overlap,ai\n";
    for (const auto& row : rows) {
        out << row.branch << ',' << row.report.precision << ',' << row.report.recall << ',' << row.report.overlap
            << ',';
        if (row.report.ai) out << *row.report.ai;
        out << '\n';
    }
    if (!out) throw RuntimeFailure("failed writing " + path.string());
}

}  // namespace sire
