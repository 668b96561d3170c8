#include "sire/sampler.hpp"

#include "sire/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace sire {

ScaleSet ScaleSet::fixed_set(std::vector<double> radii)
{
    ScaleSet s;
    s.fixed = std::move(radii);
    s.validate();
    return s;
}

ScaleSet ScaleSet::uniform(double low, double high, int count)
{
    ScaleSet s;
    s.low = low;
    s.high = high;
    s.count = count;
    s.validate();
    return s;
}

void ScaleSet::validate() const
{
    if (!fixed.empty()) {
        for (double r : fixed) require(r > 0.0 && std::isfinite(r), "scales must be positive");
        return;
    }
    require(count >= 1, "scale set needs at least one scale");
    require(low >= 0.0 && high > low, "uniform scale range must satisfy 0 <= low < high");
}

std::vector<double> ScaleSet::draw(std::mt19937_64& rng) const
{
    if (!randomized()) return fixed;
    std::uniform_real_distribution<double> dist(low, high);
    std::vector<double> out(count);
    for (auto& r : out) {
        do {
            r = dist(rng);
        } while (r <= 0.0);
    }
    return out;
}

SphericalSignal sample_spherical(const ImageVolume& volume, const Vec3& centre, double radius,
                                 const IcosphereMesh& mesh, int channels)
{
    require(radius > 0.0, "probe radius must be positive");
    require(channels >= 2, "at least two samples per ray are required");
    SphericalSignal sig;
    sample_rays(volume, centre, radius, mesh.vertices, channels, sig.values);
    return sig;
}

std::vector<SphericalSignal> sample_multiscale(const ImageVolume& volume, const Vec3& centre,
                                               std::span<const double> radii, const IcosphereMesh& mesh,
                                               int channels)
{
    std::vector<SphericalSignal> out;
    out.reserve(radii.size());
    for (double r : radii) out.push_back(sample_spherical(volume, centre, r, mesh, channels));
    return out;
}

Vector<double> target_heatmap(const IcosphereMesh& mesh, const Vec3& d1, const Vec3& d2, double alpha, double beta)
{
    require(is_unit(d1) && is_unit(d2), "heatmap directions must be unit vectors");
    require(beta > 0.0, "heatmap radius must be positive");
    const Vec3& v1 = mesh.vertices[nearest_vertex(mesh, d1)];
    const Vec3& v2 = mesh.vertices[nearest_vertex(mesh, d2)];
    Vector<double> out(mesh.num_vertices());
    for (int k = 0; k < mesh.num_vertices(); ++k) {
        const Vec3& v = mesh.vertices[k];
        const double dist = std::min(haversine(v, v1), haversine(v, v2));
        out[k] = dist < beta ? std::exp(alpha * (1.0 - dist / beta)) : 0.0;
    }
    return out;
}

std::pair<Vec3, Vec3> gt_directions(const Centerline& centerline, double s, double eta)
{
    require(centerline.size() >= 2, "centerline needs at least two points");
    require(s >= -1e-9 && s <= centerline.length() + 1e-9, "arc position outside the branch");
    s = std::clamp(s, 0.0, centerline.length());
    const double offset = eta * centerline.radius_at(s);
    const Vec3 here = centerline.point_at(s);
    Vec3 fwd = centerline.point_at(std::min(s + offset, centerline.length())) - here;
    Vec3 bwd = centerline.point_at(std::max(s - offset, 0.0)) - here;
    const double eps = 1e-12;
    if (fwd.norm() < eps && bwd.norm() < eps) throw ValidationError("zero-length direction offset");
    if (fwd.norm() < eps) fwd = -bwd;
    if (bwd.norm() < eps) bwd = -fwd;
    return {fwd.normalized(), bwd.normalized()};
}

std::size_t Dataset::num_branches() const
{
    std::size_t n = 0;
    for (const auto& c : cases) n += c.centerlines.size();
    return n;
}

Dataset load_dataset(const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ValidationError("dataset directory not found: " + dir.string());
    std::vector<fs::path> volumes;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".sirevol") volumes.push_back(entry.path());
    std::sort(volumes.begin(), volumes.end());
    Dataset ds;
    for (const auto& vp : volumes) {
        fs::path cp = vp;
        cp.replace_extension(".centerlines.json");
        if (!fs::exists(cp)) continue;
        ds.cases.push_back({rescale_window(load_volume(vp)), load_centerlines(cp)});
    }
    if (ds.cases.empty()) throw ValidationError("no volume/centerline pairs in " + dir.string());
    return ds;
}

namespace {

struct BranchRef {
    int case_index;
    int branch_index;
};

std::vector<BranchRef> all_branches(const Dataset& ds)
{
    std::vector<BranchRef> refs;
    for (int c = 0; c < static_cast<int>(ds.cases.size()); ++c)
        for (int b = 0; b < static_cast<int>(ds.cases[c].centerlines.size()); ++b)
            if (ds.cases[c].centerlines[b].size() >= 2) refs.push_back({c, b});
    return refs;
}

bool outside_all_lumens(const TrainingCase& tc, const Vec3& p)
{
    for (const auto& cl : tc.centerlines) {
        double s = 0.0;
        const double d = cl.distance_to(p, &s);
        if (d <= cl.radius_at(s)) return false;
    }
    return true;
}

}  // namespace

TrainingSample make_positive_sample(const Dataset& dataset, int case_index, int branch_index, double s,
                                    const IcosphereMesh& mesh, std::span<const double> scales,
                                    const SampleOptions& options)
{
    const auto& tc = dataset.cases.at(case_index);
    const auto& cl = tc.centerlines.at(branch_index);
    TrainingSample sample;
    sample.case_index = case_index;
    sample.branch_index = branch_index;
    sample.arc_position = s;
    sample.scales.assign(scales.begin(), scales.end());
    sample.centre = cl.point_at(s);
    std::tie(sample.d1, sample.d2) = gt_directions(cl, s, options.eta);
    sample.target = target_heatmap(mesh, sample.d1, sample.d2, options.alpha, options.beta);
    sample.inputs = sample_multiscale(tc.volume, sample.centre, sample.scales, mesh, options.channels);
    return sample;
}

TrainingSample draw_sample(const Dataset& dataset, const IcosphereMesh& mesh, const ScaleSet& scales,
                           std::mt19937_64& rng, const SampleOptions& options)
{
    const auto refs = all_branches(dataset);
    require(!refs.empty(), "dataset has no usable branches");
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const bool negative = unit(rng) < options.negative_probability;
    const auto scale_list = scales.draw(rng);

    for (int attempt = 0;; ++attempt) {
        const BranchRef ref = refs[std::uniform_int_distribution<std::size_t>(0, refs.size() - 1)(rng)];
        const auto& tc = dataset.cases[ref.case_index];
        const auto& cl = tc.centerlines[ref.branch_index];
        const double s = unit(rng) * cl.length();
        if (!negative) return make_positive_sample(dataset, ref.case_index, ref.branch_index, s, mesh, scale_list, options);

        // Perpendicular offset outside the lumen.
        const auto [d1, d2] = gt_directions(cl, s, options.eta);
        Vec3 tangent = d1 - d2;
        if (tangent.norm() < 1e-9) tangent = d1;
        tangent.normalize();
        std::normal_distribution<double> gauss(0.0, 1.0);
        Vec3 perp;
        do {
            perp = Vec3(gauss(rng), gauss(rng), gauss(rng));
            perp -= perp.dot(tangent) * tangent;
        } while (perp.norm() < 1e-9);
        perp.normalize();
        const double dist =
            (options.negative_low + (options.negative_high - options.negative_low) * unit(rng)) * cl.radius_at(s);
        const Vec3 centre = cl.point_at(s) + dist * perp;
        if (!outside_all_lumens(tc, centre)) {
            if (attempt < 50) continue;
            throw RuntimeFailure("could not place a negative sample outside the lumen");
        }

        TrainingSample sample;
        sample.negative = true;
        sample.case_index = ref.case_index;
        sample.branch_index = ref.branch_index;
        sample.arc_position = s;
        sample.scales = scale_list;
        sample.centre = centre;
        sample.inputs = sample_multiscale(tc.volume, centre, scale_list, mesh, options.channels);
        return sample;
    }
}

}  // namespace sire
