#pragma once

#include "sire/common.hpp"

#include <filesystem>
#include <vector>

namespace sire {

/// Ordered polyline with a radius per point, parameterised by arc length.
class Centerline {
public:
    Centerline() = default;
    Centerline(std::vector<Vec3> points, std::vector<double> radii);

    const std::vector<Vec3>& points() const { return points_; }
    const std::vector<double>& radii() const { return radii_; }
    /// Cumulative arc length at each point; front() == 0.
    const std::vector<double>& arc() const { return arc_; }

    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    double length() const { return arc_.empty() ? 0.0 : arc_.back(); }

    /// Linear interpolation along the polyline; s is clamped to [0, length].
    Vec3 point_at(double s) const;
    double radius_at(double s) const;

    /// Uniform arc-length resampling with step <= max_step; endpoints kept.
    Centerline resampled(double max_step) const;

    /// Distance from p to the polyline (segments, not only vertices), and
    /// the arc position of the closest point.
    double distance_to(const Vec3& p, double* arc_position = nullptr) const;

private:
    std::size_t segment_for(double s) const;

    std::vector<Vec3> points_;
    std::vector<double> radii_;
    std::vector<double> arc_;
};

/// JSON: [[{"x_mm":..,"y_mm":..,"z_mm":..,"radius_mm":..}, ...], ...]
std::vector<Centerline> load_centerlines(const std::filesystem::path& path);
void save_centerlines(const std::vector<Centerline>& branches, const std::filesystem::path& path);

}  // namespace sire
