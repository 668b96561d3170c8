#include "sire/experiments.hpp"

#include "sire/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sire {

Mat3 random_rotation(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q;
    do {
        q = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng));
    } while (q.norm() < 1e-9);
    return q.normalized().toRotationMatrix();
}

PhantomSpec rotation_ready(PhantomSpec spec)
{
    const Mat3 rotation = spec.rotation;
    spec.rotation = Mat3::Identity();
    spec.pivot.reset();
    const auto lines = branch_centerlines(spec);
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
    Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
    for (const auto& l : lines)
        for (const auto& p : l.points()) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
    const Vec3 centre = 0.5 * (lo + hi);
    double reach = 0.0;
    for (const auto& l : lines)
        for (const auto& p : l.points()) reach = std::max(reach, (p - centre).norm());
    const double h = spec.spacing.maxCoeff();
    const double half = reach + spec.margin_mm + h;
    for (int k = 0; k < 3; ++k) spec.dims[k] = static_cast<int>(std::ceil(2.0 * half / spec.spacing[k])) + 1;
    spec.origin = centre - 0.5 * Vec3(spec.dims[0] - 1, spec.dims[1] - 1, spec.dims[2] - 1).cwiseProduct(spec.spacing);
    spec.rotation = rotation;
    return spec;
}

Phantom windowed_phantom(const PhantomSpec& spec)
{
    Phantom p = generate(spec);
    p.volume = rescale_window(p.volume);
    return p;
}

double median(std::vector<double> values)
{
    require(!values.empty(), "median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

RotationExperimentResult rotation_experiment(const Estimator& estimator, const RotationExperimentConfig& config)
{
    require(config.volumes >= 1 && config.points_per_volume >= 1, "rotation experiment needs points");
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    RotationExperimentResult out;
    for (int v = 0; v < config.volumes; ++v) {
        const double r = config.radius_min * std::pow(config.radius_max / config.radius_min, unit(rng));
        auto spec = make_tube(static_cast<TubeShape>(v % 4), r, config.max_scale_mm + 2.0 * r, rng);
        spec.noise_sigma = config.noise_sigma;
        spec = rotation_ready(spec);
        const Phantom plain = windowed_phantom(spec);

        PhantomSpec turned = spec;
        turned.rotation = random_rotation(rng);
        const Vec3 pivot = spec.volume_centre();
        const Phantom rotated = windowed_phantom(turned);

        const Centerline& cl = plain.centerlines.front();
        for (int k = 0; k < config.points_per_volume; ++k) {
            const double s = (0.1 + 0.8 * unit(rng)) * cl.length();
            const auto [g1, g2] = gt_directions(cl, s);
            const Vec3 p = cl.point_at(s);

            const auto a = extract_directions(estimator.predict(plain.volume, p, config.scales).max,
                                              estimator.mesh(), 60.0);
            out.unrotated.push_back(cosine_eval(a.d1, a.d2, g1, g2));

            const Vec3 q = turned.rotation * (p - pivot) + pivot;
            const auto b = extract_directions(estimator.predict(rotated.volume, q, config.scales).max,
                                              estimator.mesh(), 60.0);
            out.rotated.push_back(
                cosine_eval(b.d1, b.d2, (turned.rotation * g1).normalized(), (turned.rotation * g2).normalized()));
        }
    }
    out.median_unrotated = median(out.unrotated);
    out.median_rotated = median(out.rotated);
    return out;
}

TubeTracking track_tube(const Estimator& estimator, const Phantom& phantom, const TrackerConfig& config)
{
    require(!phantom.centerlines.empty(), "phantom has no branches");
    const Centerline& cl = phantom.centerlines.front();
    TubeTracking out;
    out.track = track(phantom.volume, estimator, cl.point_at(0.5 * cl.length()), config);
    out.metrics = evaluate({out.track.centerline()}, phantom.centerlines);
    out.max_spacing = phantom.volume.max_spacing();
    return out;
}

}  // namespace sire
