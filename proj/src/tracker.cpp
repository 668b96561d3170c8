#include "sire/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

namespace sire {

void TrackerConfig::validate() const
{
    require(!scales.empty(), "at least one tracking scale is required");
    for (double r : scales) require(r > 0.0 && std::isfinite(r), "tracking scales must be positive");
    require(step > 0.0 && std::isfinite(step), "step size must be positive");
    require(tau > 0.0 && tau <= 1.0, "entropy threshold must lie in (0, 1]");
    require(window >= 1, "entropy window must be at least 1");
    require(cone_deg > 0.0 && cone_deg < 180.0, "cone angle must lie in (0, 180) degrees");
    require(init_separation_deg > 0.0 && init_separation_deg < 180.0, "separation must lie in (0, 180) degrees");
    require(max_steps >= 1, "max steps must be at least 1");
}

std::string to_string(Termination t)
{
    switch (t) {
    case Termination::Entropy: return "entropy";
    case Termination::MaxSteps: return "max-steps";
    case Termination::VolumeExit: return "volume-exit";
    }
    return "unknown";
}

std::vector<Vec3> TrackResult::points() const
{
    std::vector<Vec3> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.point);
    return out;
}

Centerline TrackResult::centerline() const
{
    std::vector<double> radii;
    for (const auto& s : steps) radii.push_back(0.5 * s.active_scale);
    return Centerline(points(), std::move(radii));
}

double normalized_entropy(const Vector<double>& activation)
{
    const auto n = activation.size();
    require(n >= 2, "entropy needs at least two vertices");
    const double mx = activation.maxCoeff();
    double z = 0.0, weighted = 0.0;
    for (Eigen::Index v = 0; v < n; ++v) {
        const double shifted = activation[v] - mx;
        const double w = std::exp(shifted);
        z += w;
        weighted += w * shifted;
    }
    // H = ln Z - E[f - max]
    const double h = std::log(z) - weighted / z;
    return std::clamp(h / std::log(static_cast<double>(n)), 0.0, 1.0);
}

int step_direction(const Vector<double>& activation, const IcosphereMesh& mesh, const Vec3& previous,
                   double cone_deg)
{
    require(is_unit(previous), "previous direction must be a unit vector");
    require(activation.size() == mesh.num_vertices(), "activation size does not match the mesh");
    const double cone = deg_to_rad(cone_deg);
    int best = -1;
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        if (!(haversine(mesh.vertices[v], previous) < cone)) continue;
        if (best < 0 || activation[v] > activation[best]) best = v;
    }
    if (best < 0) throw RuntimeFailure("no mesh vertex inside the forward cone");
    return best;
}

namespace {

struct Leg {
    std::vector<TrackStep> steps;
    Termination reason = Termination::MaxSteps;
};

void check_finite(const Prediction& p, int step)
{
    for (Eigen::Index v = 0; v < p.max.size(); ++v)
        if (!std::isfinite(p.max[v])) throw RuntimeFailure("non-finite activation at step " + std::to_string(step));
}

Leg walk(const ImageVolume& volume, const Estimator& est, const Vec3& seed, const Vec3& initial,
         const TrackerConfig& config)
{
    Leg leg;
    std::deque<double> recent;
    Vec3 x = seed;
    Vec3 d = initial;
    for (int k = 0; k < config.max_steps; ++k) {
        const Vec3 next = x + config.step * d;
        if (!volume.contains(next)) {
            leg.reason = Termination::VolumeExit;
            return leg;
        }
        Prediction p;
        try {
            p = est.predict(volume, next, config.scales);
        } catch (const RuntimeFailure&) {
            throw RuntimeFailure("non-finite activation at step " + std::to_string(k + 1));
        }
        check_finite(p, k + 1);
        TrackStep s;
        s.point = next;
        s.entropy = normalized_entropy(p.max);
        recent.push_back(s.entropy);
        if (static_cast<int>(recent.size()) > config.window) recent.pop_front();
        double ma = 0.0;
        for (double e : recent) ma += e;
        s.entropy_ma = ma / static_cast<double>(recent.size());
        const int v = step_direction(p.max, est.mesh(), d, config.cone_deg);
        s.direction = est.mesh().vertices[v];
        s.active_scale = p.active_scale(v);
        s.peak = p.max[v];
        leg.steps.push_back(s);
        x = next;
        d = s.direction;
        if (s.entropy_ma > config.tau) {
            leg.reason = Termination::Entropy;
            return leg;
        }
    }
    leg.reason = Termination::MaxSteps;
    return leg;
}

std::string format_point(const Vec3& p)
{
    std::ostringstream os;
    os << "(" << p.x() << ", " << p.y() << ", " << p.z() << ")";
    return os.str();
}

}  // namespace

TrackResult track(const ImageVolume& volume, const Estimator& estimator, const Vec3& seed,
                  const TrackerConfig& config)
{
    config.validate();
    if (!volume.contains(seed)) throw ValidationError("seed " + format_point(seed) + " lies outside the volume");

    const Prediction p = estimator.predict(volume, seed, config.scales);
    check_finite(p, 0);
    const auto dirs = extract_directions(p.max, estimator.mesh(), config.init_separation_deg);

    TrackResult r;
    r.seed = seed;
    r.d1 = dirs.d1;
    r.d2 = dirs.d2;

    const Leg first = walk(volume, estimator, seed, dirs.d1, config);
    const Leg second = walk(volume, estimator, seed, dirs.d2, config);
    r.leg1 = first.reason;
    r.leg2 = second.reason;

    TrackStep s0;
    s0.point = seed;
    s0.direction = dirs.d1;
    s0.entropy = normalized_entropy(p.max);
    s0.entropy_ma = s0.entropy;
    s0.active_scale = p.active_scale(dirs.v1);
    s0.peak = dirs.peak1;

    r.steps.assign(second.steps.rbegin(), second.steps.rend());
    r.seed_index = r.steps.size();
    r.steps.push_back(s0);
    r.steps.insert(r.steps.end(), first.steps.begin(), first.steps.end());
    return r;
}

std::vector<TrackResult> extract_tree(const ImageVolume& volume, const Estimator& estimator,
                                      std::vector<Vec3> seeds, const TrackerConfig& config)
{
    config.validate();
    std::deque<Vec3> queue(seeds.begin(), seeds.end());
    std::vector<TrackResult> results;
    while (!queue.empty()) {
        const Vec3 seed = queue.front();
        queue.pop_front();
        if (!volume.contains(seed)) continue;
        results.push_back(track(volume, estimator, seed, config));
        const auto& steps = results.back().steps;
        std::deque<Vec3> kept;
        for (const auto& q : queue) {
            bool consumed = false;
            for (const auto& s : steps) {
                if ((q - s.point).norm() <= std::max(config.step, 0.5 * s.active_scale)) {
                    consumed = true;
                    break;
                }
            }
            if (!consumed) kept.push_back(q);
        }
        queue.swap(kept);
    }
    return results;
}

void write_track_csv(const std::filesystem::path& path, const TrackResult& result)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out.precision(10);
    out << "k,x,y,z,entropy,entropy_ma,active_scale_mm,peak\n";
    for (std::size_t k = 0; k < result.steps.size(); ++k) {
        const auto& s = result.steps[k];
        out << k << ',' << s.point.x() << ',' << s.point.y() << ',' << s.point.z() << ',' << s.entropy << ','
            << s.entropy_ma << ',' << s.active_scale << ',' << s.peak << '\n';
    }
    if (!out) throw RuntimeFailure("failed writing " + path.string());
}

}  // namespace sire
