#include "sire/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sire {

namespace {

/// Natural cubic spline through `pts` with chord-length knots, sampled at
/// `per_span` points per span.
std::vector<Vec3> sample_spline(const std::vector<Vec3>& pts, int per_span)
{
    const std::size_t n = pts.size();
    if (n == 2) {
        std::vector<Vec3> out;
        for (int k = 0; k <= per_span; ++k) out.push_back(pts[0] + (pts[1] - pts[0]) * (double(k) / per_span));
        return out;
    }
    std::vector<double> t(n, 0.0);
    for (std::size_t k = 1; k < n; ++k) {
        const double chord = (pts[k] - pts[k - 1]).norm();
        require(chord > 0.0, "spline control points must be distinct");
        t[k] = t[k - 1] + chord;
    }
    // Second derivatives per coordinate via the Thomas algorithm; M[0] = M[n-1] = 0.
    std::vector<Vec3> second(n, Vec3::Zero());
    {
        const std::size_t m = n - 2;
        std::vector<double> diag(m), upper(m), lower(m);
        std::vector<Vec3> rhs(m);
        for (std::size_t k = 1; k + 1 < n; ++k) {
            const double h0 = t[k] - t[k - 1];
            const double h1 = t[k + 1] - t[k];
            lower[k - 1] = h0;
            diag[k - 1] = 2.0 * (h0 + h1);
            upper[k - 1] = h1;
            rhs[k - 1] = 6.0 * ((pts[k + 1] - pts[k]) / h1 - (pts[k] - pts[k - 1]) / h0);
        }
        for (std::size_t k = 1; k < m; ++k) {
            const double w = lower[k] / diag[k - 1];
            diag[k] -= w * upper[k - 1];
            rhs[k] -= w * rhs[k - 1];
        }
        std::vector<Vec3> sol(m);
        sol[m - 1] = rhs[m - 1] / diag[m - 1];
        for (std::size_t k = m - 1; k-- > 0;) sol[k] = (rhs[k] - upper[k] * sol[k + 1]) / diag[k];
        for (std::size_t k = 0; k < m; ++k) second[k + 1] = sol[k];
    }
    std::vector<Vec3> out;
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double h = t[k + 1] - t[k];
        for (int s = (k == 0 ? 0 : 1); s <= per_span; ++s) {
            const double b = double(s) / per_span;
            const double a = 1.0 - b;
            out.push_back(a * pts[k] + b * pts[k + 1] +
                          ((a * a * a - a) * second[k] + (b * b * b - b) * second[k + 1]) * (h * h / 6.0));
        }
    }
    return out;
}

std::vector<Vec3> sample_helix(const BranchSpec& b, int samples)
{
    const Vec3 axis = b.axis.normalized();
    Vec3 u = axis.unitOrthogonal();
    Vec3 w = axis.cross(u);
    std::vector<Vec3> out;
    out.reserve(samples + 1);
    // Shift so the curve starts exactly at `start`.
    const Vec3 offset = b.start - b.helix_radius * u;
    for (int k = 0; k <= samples; ++k) {
        const double phi = kTwoPi * b.turns * k / samples;
        out.push_back(offset + b.helix_radius * (std::cos(phi) * u + std::sin(phi) * w) +
                      (b.pitch * phi / kTwoPi) * axis);
    }
    return out;
}

/// Arc-length resampling of a dense curve at step <= max_step.
std::vector<Vec3> resample_curve(const std::vector<Vec3>& dense, double max_step)
{
    std::vector<double> arc(dense.size(), 0.0);
    for (std::size_t k = 1; k < dense.size(); ++k) arc[k] = arc[k - 1] + (dense[k] - dense[k - 1]).norm();
    const double length = arc.back();
    const int steps = std::max(1, static_cast<int>(std::ceil(length / max_step)));
    std::vector<Vec3> out;
    out.reserve(steps + 1);
    std::size_t seg = 0;
    for (int k = 0; k <= steps; ++k) {
        const double s = length * k / steps;
        while (seg + 2 < dense.size() && arc[seg + 1] < s) ++seg;
        const double len = arc[seg + 1] - arc[seg];
        const double t = len > 0.0 ? std::clamp((s - arc[seg]) / len, 0.0, 1.0) : 0.0;
        out.push_back(dense[seg] + t * (dense[seg + 1] - dense[seg]));
    }
    return out;
}

double smoothstep(double e0, double e1, double x)
{
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(n(rng), n(rng), n(rng));
    } while (v.norm() < 1e-9);
    return v.normalized();
}

}  // namespace

double RadiusProfile::at(double s, double length) const
{
    switch (kind) {
    case Kind::Constant: return r0;
    case Kind::Linear: return length > 0.0 ? r0 + (r1 - r0) * std::clamp(s / length, 0.0, 1.0) : r0;
    case Kind::Sinusoidal: return r0 + amplitude * std::sin(omega * s);
    }
    return r0;
}

double RadiusProfile::min_radius() const
{
    switch (kind) {
    case Kind::Constant: return r0;
    case Kind::Linear: return std::min(r0, r1);
    case Kind::Sinusoidal: return r0 - std::abs(amplitude);
    }
    return r0;
}

Vec3 PhantomSpec::volume_centre() const
{
    return origin + 0.5 * Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1).cwiseProduct(spacing);
}

namespace {

std::vector<Centerline> unchecked_centerlines(const PhantomSpec& spec)
{
    for (int k = 0; k < 3; ++k) {
        require(spec.dims[k] > 0, "phantom dims must be positive");
        require(spec.spacing[k] > 0.0, "phantom spacing must be positive");
    }
    require(!spec.branches.empty(), "phantom needs at least one branch");
    require(spec.softness_voxels >= 0.0 && spec.noise_sigma >= 0.0, "softness and noise must be non-negative");
    require(std::abs(spec.rotation.determinant() - 1.0) < 1e-9 &&
                (spec.rotation * spec.rotation.transpose() - Mat3::Identity()).norm() < 1e-9,
            "phantom rotation must be a proper rotation");

    const double max_spacing = spec.spacing.maxCoeff();
    const Vec3 pivot = spec.pivot.value_or(spec.volume_centre());

    // Unrotated branches first, so children can attach to parent end points.
    std::vector<std::vector<Vec3>> raw(spec.branches.size());
    std::vector<Centerline> out;
    for (std::size_t b = 0; b < spec.branches.size(); ++b) {
        const BranchSpec& br = spec.branches[b];
        const double rmin = br.radius.min_radius();
        require(rmin >= 1.5 * max_spacing,
                "branch " + std::to_string(b) + ": minimum radius " + std::to_string(rmin) +
                    " mm is below 1.5x the voxel spacing");
        require(br.attach_to < static_cast<int>(b), "branches may only attach to earlier branches");

        std::vector<Vec3> dense;
        if (br.curve == BranchSpec::Curve::Spline) {
            auto ctrl = br.control_points;
            if (br.attach_to >= 0) {
                require(!ctrl.empty(), "attached spline branch needs control points");
                ctrl.front() = raw[br.attach_to].back();
            }
            require(ctrl.size() >= 2, "spline branch needs at least two control points");
            dense = sample_spline(ctrl, 200);
        } else {
            require(br.helix_radius > 0.0 && br.turns > 0.0 && br.axis.norm() > 0.0, "invalid helix parameters");
            BranchSpec h = br;
            if (br.attach_to >= 0) h.start = raw[br.attach_to].back();
            dense = sample_helix(h, std::max(400, static_cast<int>(400 * br.turns)));
        }
        const double step = std::min(0.25 * rmin, 0.25);
        raw[b] = resample_curve(dense, step);

        std::vector<Vec3> pts;
        pts.reserve(raw[b].size());
        for (const auto& p : raw[b]) pts.push_back(spec.rotation * (p - pivot) + pivot);
        // Radii follow the arc length of the emitted polyline.
        std::vector<double> rad(pts.size());
        Centerline tmp(pts, std::vector<double>(pts.size(), 0.0));
        for (std::size_t k = 0; k < pts.size(); ++k) rad[k] = br.radius.at(tmp.arc()[k], tmp.length());
        out.emplace_back(std::move(pts), std::move(rad));
    }
    return out;
}

}  // namespace

std::vector<Centerline> branch_centerlines(const PhantomSpec& spec)
{
    auto out = unchecked_centerlines(spec);
    const Vec3 lo = spec.origin;
    const Vec3 hi = spec.origin + Vec3(spec.dims[0] - 1, spec.dims[1] - 1, spec.dims[2] - 1).cwiseProduct(spec.spacing);
    for (std::size_t b = 0; b < out.size(); ++b) {
        for (const auto& p : out[b].points()) {
            const double clearance = std::min((p - lo).minCoeff(), (hi - p).minCoeff());
            if (clearance < spec.margin_mm)
                throw ValidationError("branch " + std::to_string(b) + " comes within " + std::to_string(clearance) +
                                      " mm of the volume border (margin " + std::to_string(spec.margin_mm) + " mm)");
        }
    }
    return out;
}

Phantom generate(const PhantomSpec& spec)
{
    Phantom ph;
    ph.centerlines = branch_centerlines(spec);
    for (std::size_t b = 0; b < spec.branches.size(); ++b) {
        const int parent = spec.branches[b].attach_to;
        if (parent >= 0)
            ph.junctions.push_back({ph.centerlines[parent].points().back(), ph.centerlines[parent].radii().back()});
    }

    ImageVolume vol(spec.dims, spec.spacing, spec.origin, 0.0f);
    const double band = spec.softness_voxels * spec.spacing.maxCoeff();
    const double half = 0.5 * band;

    // Signed distance to the union of tapered capsules, rasterised per segment.
    std::vector<float> sdist(vol.num_voxels(), std::numeric_limits<float>::max());
    for (const auto& cl : ph.centerlines) {
        const auto& pts = cl.points();
        const auto& rad = cl.radii();
        for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
            const Vec3 a = pts[k];
            const Vec3 ab = pts[k + 1] - a;
            const double len2 = ab.squaredNorm();
            const double reach = std::max(rad[k], rad[k + 1]) + half + spec.spacing.maxCoeff();
            const Vec3 lo = vol.world_to_voxel(a.cwiseMin(pts[k + 1]) - Vec3::Constant(reach));
            const Vec3 hi = vol.world_to_voxel(a.cwiseMax(pts[k + 1]) + Vec3::Constant(reach));
            const int x0 = std::max(0, static_cast<int>(std::floor(lo.x())));
            const int y0 = std::max(0, static_cast<int>(std::floor(lo.y())));
            const int z0 = std::max(0, static_cast<int>(std::floor(lo.z())));
            const int x1 = std::min(vol.dims[0] - 1, static_cast<int>(std::ceil(hi.x())));
            const int y1 = std::min(vol.dims[1] - 1, static_cast<int>(std::ceil(hi.y())));
            const int z1 = std::min(vol.dims[2] - 1, static_cast<int>(std::ceil(hi.z())));
            for (int z = z0; z <= z1; ++z)
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) {
                        const Vec3 q = vol.voxel_to_world(Vec3(x, y, z));
                        const double t = len2 > 0.0 ? std::clamp((q - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
                        const double r = rad[k] + t * (rad[k + 1] - rad[k]);
                        const double d = (a + t * ab - q).norm() - r;
                        float& cell = sdist[vol.index(x, y, z)];
                        if (d < cell) cell = static_cast<float>(d);
                    }
        }
    }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        const double d = sdist[i];
        const double inside = band > 0.0 ? 1.0 - smoothstep(-half, half, d) : (d <= 0.0 ? 1.0 : 0.0);
        double v = spec.background + (spec.foreground - spec.background) * inside;
        if (spec.noise_sigma > 0.0) v += noise(rng);
        vol.data[i] = static_cast<float>(v);
    }
    ph.volume = std::move(vol);
    return ph;
}

std::vector<Vec3> skeleton_seeds(const std::vector<Centerline>& centerlines, double stride_mm, bool jitter,
                                 std::mt19937_64& rng)
{
    require(stride_mm > 0.0, "seed stride must be positive");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Vec3> seeds;
    for (const auto& cl : centerlines) {
        if (cl.empty()) continue;
        for (double s = 0.0; s <= cl.length() + 1e-9; s += stride_mm) {
            Vec3 p = cl.point_at(s);
            if (jitter) {
                const double reach = 0.25 * cl.radius_at(s) * std::cbrt(unit(rng));
                p += reach * random_unit(rng);
            }
            seeds.push_back(p);
        }
    }
    return seeds;
}

PhantomSpec make_tube(TubeShape shape, double radius, double margin_mm, std::mt19937_64& rng)
{
    require(radius > 0.0, "tube radius must be positive");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Vec3 dir = random_unit(rng);
    const double length = std::clamp(8.0 * radius, 40.0, 160.0);

    BranchSpec br;
    br.radius.kind = RadiusProfile::Kind::Constant;
    br.radius.r0 = br.radius.r1 = radius;

    auto lateral = [&](double scale) {
        Vec3 v = random_unit(rng);
        v -= v.dot(dir) * dir;
        if (v.norm() < 1e-6) v = dir.unitOrthogonal();
        return v.normalized() * scale;
    };

    switch (shape) {
    case TubeShape::Straight:
        br.control_points = {-0.5 * length * dir, 0.5 * length * dir};
        break;
    case TubeShape::Curved:
        br.control_points = {-0.5 * length * dir, -length / 6.0 * dir + lateral(0.15 * length * unit(rng)),
                             length / 6.0 * dir + lateral(0.15 * length * unit(rng)), 0.5 * length * dir};
        break;
    case TubeShape::Helical: {
        br.curve = BranchSpec::Curve::Helix;
        br.axis = dir;
        br.helix_radius = 2.0 * radius;
        br.pitch = 8.0 * radius;
        const double c = br.pitch / kTwoPi;
        const double turn_length = kTwoPi * std::sqrt(br.helix_radius * br.helix_radius + c * c);
        br.turns = length / turn_length;
        br.start = -0.5 * br.pitch * br.turns * dir;
        break;
    }
    case TubeShape::Tapering:
        br.control_points = {-0.5 * length * dir, lateral(0.05 * length * unit(rng)), 0.5 * length * dir};
        br.radius.kind = RadiusProfile::Kind::Linear;
        br.radius.r1 = radius * (0.45 + 0.25 * unit(rng));
        break;
    }

    PhantomSpec spec;
    spec.branches = {br};
    spec.margin_mm = margin_mm;
    const double spacing = std::clamp(br.radius.min_radius() / 2.5, 0.5, 2.0);
    spec.spacing = Vec3::Constant(spacing);
    spec.seed = rng();

    // Fit the grid around the geometry.
    spec.dims = {2, 2, 2};
    spec.origin = Vec3::Zero();
    PhantomSpec probe = spec;
    probe.pivot = Vec3::Zero();
    const auto lines = unchecked_centerlines(probe);
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
    Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
    for (const auto& p : lines.front().points()) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    lo -= Vec3::Constant(margin_mm + spacing);
    hi += Vec3::Constant(margin_mm + spacing);
    for (int k = 0; k < 3; ++k) spec.dims[k] = static_cast<int>(std::ceil((hi[k] - lo[k]) / spacing)) + 1;
    spec.origin = lo;
    return spec;
}

std::vector<PhantomSpec> make_corpus(const CorpusSpec& corpus)
{
    require(corpus.count >= 1, "corpus needs at least one volume");
    require(corpus.radius_min > 0.0 && corpus.radius_max >= corpus.radius_min, "invalid corpus radius range");
    std::mt19937_64 rng(corpus.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<PhantomSpec> specs;
    for (int i = 0; i < corpus.count; ++i) {
        const double r = corpus.radius_min * std::pow(corpus.radius_max / corpus.radius_min, unit(rng));
        const auto shape = static_cast<TubeShape>(i % 4);
        auto spec = make_tube(shape, r, corpus.max_scale_mm + 2.0 * r, rng);
        spec.background = corpus.background;
        spec.foreground = corpus.background + (corpus.foreground - corpus.background) * (0.8 + 0.4 * unit(rng));
        spec.noise_sigma = corpus.noise_sigma;
        specs.push_back(std::move(spec));
    }
    return specs;
}

namespace {

Vec3 vec3_from(const nlohmann::json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }
nlohmann::json to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

RadiusProfile radius_from_json(const nlohmann::json& j)
{
    RadiusProfile r;
    const auto kind = j.value("kind", std::string("constant"));
    if (kind == "constant") {
        r.kind = RadiusProfile::Kind::Constant;
        r.r0 = r.r1 = j.at("r").get<double>();
    } else if (kind == "linear") {
        r.kind = RadiusProfile::Kind::Linear;
        r.r0 = j.at("r0").get<double>();
        r.r1 = j.at("r1").get<double>();
    } else if (kind == "sinusoidal") {
        r.kind = RadiusProfile::Kind::Sinusoidal;
        r.r0 = j.at("mean").get<double>();
        r.amplitude = j.at("amplitude").get<double>();
        r.omega = j.at("omega").get<double>();
    } else {
        throw ValidationError("unknown radius profile kind '" + kind + "'");
    }
    return r;
}

nlohmann::json radius_to_json(const RadiusProfile& r)
{
    switch (r.kind) {
    case RadiusProfile::Kind::Constant: return {{"kind", "constant"}, {"r", r.r0}};
    case RadiusProfile::Kind::Linear: return {{"kind", "linear"}, {"r0", r.r0}, {"r1", r.r1}};
    case RadiusProfile::Kind::Sinusoidal:
        return {{"kind", "sinusoidal"}, {"mean", r.r0}, {"amplitude", r.amplitude}, {"omega", r.omega}};
    }
    return {};
}

}  // namespace

PhantomSpec phantom_spec_from_json(const nlohmann::json& j)
{
    try {
        PhantomSpec s;
        s.dims = j.at("dims").get<std::array<int, 3>>();
        s.spacing = vec3_from(j.at("spacing_mm"));
        if (j.contains("origin_mm")) s.origin = vec3_from(j.at("origin_mm"));
        s.foreground = j.value("foreground", s.foreground);
        s.background = j.value("background", s.background);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.softness_voxels = j.value("softness_voxels", s.softness_voxels);
        s.seed = j.value("seed", s.seed);
        s.margin_mm = j.value("margin_mm", s.margin_mm);
        if (j.contains("rotation")) {
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) s.rotation(r, c) = j.at("rotation").at(r).at(c).get<double>();
        }
        if (j.contains("pivot_mm")) s.pivot = vec3_from(j.at("pivot_mm"));
        for (const auto& jb : j.at("branches")) {
            BranchSpec b;
            const auto curve = jb.value("curve", std::string("spline"));
            if (curve == "spline") {
                b.curve = BranchSpec::Curve::Spline;
                for (const auto& p : jb.at("control_points")) b.control_points.push_back(vec3_from(p));
            } else if (curve == "helix") {
                b.curve = BranchSpec::Curve::Helix;
                b.start = vec3_from(jb.at("start"));
                b.axis = vec3_from(jb.at("axis"));
                b.helix_radius = jb.at("helix_radius").get<double>();
                b.pitch = jb.at("pitch").get<double>();
                b.turns = jb.at("turns").get<double>();
            } else {
                throw ValidationError("unknown branch curve '" + curve + "'");
            }
            b.radius = radius_from_json(jb.at("radius"));
            b.attach_to = jb.value("attach_to", -1);
            s.branches.push_back(std::move(b));
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed phantom spec: ") + e.what());
    }
}

nlohmann::json to_json(const PhantomSpec& s)
{
    nlohmann::json j = {
        {"dims", s.dims},
        {"spacing_mm", to_json(s.spacing)},
        {"origin_mm", to_json(s.origin)},
        {"foreground", s.foreground},
        {"background", s.background},
        {"noise_sigma", s.noise_sigma},
        {"softness_voxels", s.softness_voxels},
        {"seed", s.seed},
        {"margin_mm", s.margin_mm},
    };
    nlohmann::json rot = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) rot.push_back({s.rotation(r, 0), s.rotation(r, 1), s.rotation(r, 2)});
    j["rotation"] = rot;
    if (s.pivot) j["pivot_mm"] = to_json(*s.pivot);
    nlohmann::json branches = nlohmann::json::array();
    for (const auto& b : s.branches) {
        nlohmann::json jb;
        if (b.curve == BranchSpec::Curve::Spline) {
            jb["curve"] = "spline";
            jb["control_points"] = nlohmann::json::array();
            for (const auto& p : b.control_points) jb["control_points"].push_back(to_json(p));
        } else {
            jb["curve"] = "helix";
            jb["start"] = to_json(b.start);
            jb["axis"] = to_json(b.axis);
            jb["helix_radius"] = b.helix_radius;
            jb["pitch"] = b.pitch;
            jb["turns"] = b.turns;
        }
        jb["radius"] = radius_to_json(b.radius);
        if (b.attach_to >= 0) jb["attach_to"] = b.attach_to;
        branches.push_back(std::move(jb));
    }
    j["branches"] = branches;
    return j;
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j)
{
    try {
        CorpusSpec c;
        c.count = j.value("count", c.count);
        c.radius_min = j.value("radius_min", c.radius_min);
        c.radius_max = j.value("radius_max", c.radius_max);
        c.max_scale_mm = j.value("max_scale_mm", c.max_scale_mm);
        c.foreground = j.value("foreground", c.foreground);
        c.background = j.value("background", c.background);
        c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
        c.seed = j.value("seed", c.seed);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed corpus spec: ") + e.what());
    }
}

}  // namespace sire
