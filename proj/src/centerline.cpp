#include "sire/centerline.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>

namespace sire {

Centerline::Centerline(std::vector<Vec3> points, std::vector<double> radii)
    : points_(std::move(points)), radii_(std::move(radii))
{
    require(points_.size() == radii_.size(), "centerline needs one radius per point");
    arc_.resize(points_.size());
    double s = 0.0;
    for (std::size_t k = 0; k < points_.size(); ++k) {
        if (k > 0) s += (points_[k] - points_[k - 1]).norm();
        arc_[k] = s;
    }
}

std::size_t Centerline::segment_for(double s) const
{
    // Index k such that arc_[k] <= s <= arc_[k+1].
    const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    std::size_t k = it == arc_.begin() ? 0 : static_cast<std::size_t>(it - arc_.begin()) - 1;
    return std::min(k, points_.size() - 2);
}

Vec3 Centerline::point_at(double s) const
{
    require(!points_.empty(), "empty centerline");
    if (points_.size() == 1) return points_.front();
    s = std::clamp(s, 0.0, length());
    const std::size_t k = segment_for(s);
    const double len = arc_[k + 1] - arc_[k];
    const double t = len > 0.0 ? (s - arc_[k]) / len : 0.0;
    return points_[k] + t * (points_[k + 1] - points_[k]);
}

double Centerline::radius_at(double s) const
{
    require(!points_.empty(), "empty centerline");
    if (points_.size() == 1) return radii_.front();
    s = std::clamp(s, 0.0, length());
    const std::size_t k = segment_for(s);
    const double len = arc_[k + 1] - arc_[k];
    const double t = len > 0.0 ? (s - arc_[k]) / len : 0.0;
    return radii_[k] + t * (radii_[k + 1] - radii_[k]);
}

Centerline Centerline::resampled(double max_step) const
{
    require(max_step > 0.0, "resampling step must be positive");
    if (points_.size() < 2) return *this;
    const int steps = std::max(1, static_cast<int>(std::ceil(length() / max_step - 1e-12)));
    std::vector<Vec3> pts;
    std::vector<double> rad;
    pts.reserve(steps + 1);
    rad.reserve(steps + 1);
    for (int k = 0; k <= steps; ++k) {
        const double s = length() * k / steps;
        pts.push_back(point_at(s));
        rad.push_back(radius_at(s));
    }
    return Centerline(std::move(pts), std::move(rad));
}

double Centerline::distance_to(const Vec3& p, double* arc_position) const
{
    require(!points_.empty(), "empty centerline");
    double best = (p - points_.front()).norm();
    double best_s = 0.0;
    for (std::size_t k = 0; k + 1 < points_.size(); ++k) {
        const Vec3 ab = points_[k + 1] - points_[k];
        const double len2 = ab.squaredNorm();
        const double t = len2 > 0.0 ? std::clamp((p - points_[k]).dot(ab) / len2, 0.0, 1.0) : 0.0;
        const double d = (points_[k] + t * ab - p).norm();
        if (d < best) {
            best = d;
            best_s = arc_[k] + t * (arc_[k + 1] - arc_[k]);
        }
    }
    if (arc_position) *arc_position = best_s;
    return best;
}

std::vector<Centerline> load_centerlines(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open centerline file " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed centerline JSON in " + path.string() + ": " + e.what());
    }
    require(doc.is_array(), "centerline file must hold a list of branches");
    std::vector<Centerline> branches;
    try {
        for (const auto& branch : doc) {
            std::vector<Vec3> pts;
            std::vector<double> rad;
            for (const auto& rec : branch) {
                pts.emplace_back(rec.at("x_mm").get<double>(), rec.at("y_mm").get<double>(),
                                 rec.at("z_mm").get<double>());
                rad.push_back(rec.value("radius_mm", 0.0));
            }
            branches.emplace_back(std::move(pts), std::move(rad));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed centerline record in " + path.string() + ": " + e.what());
    }
    return branches;
}

void save_centerlines(const std::vector<Centerline>& branches, const std::filesystem::path& path)
{
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& b : branches) {
        nlohmann::json branch = nlohmann::json::array();
        for (std::size_t k = 0; k < b.size(); ++k) {
            const Vec3& p = b.points()[k];
            branch.push_back({{"x_mm", p.x()}, {"y_mm", p.y()}, {"z_mm", p.z()}, {"radius_mm", b.radii()[k]}});
        }
        doc.push_back(std::move(branch));
    }
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write centerline file " + path.string());
    out << doc.dump(1) << "\n";
}

}  // namespace sire
