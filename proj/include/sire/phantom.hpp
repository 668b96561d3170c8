#pragma once

// Synthetic CT-like volumes with tubular structures of known geometry.

#include "sire/centerline.hpp"
#include "sire/volume.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace sire {

struct RadiusProfile {
    enum class Kind { Constant, Linear, Sinusoidal };
    Kind kind = Kind::Constant;
    double r0 = 2.0;         ///< constant radius, taper start, or sinusoid mean
    double r1 = 2.0;         ///< taper end
    double amplitude = 0.0;  ///< sinusoid amplitude (mm)
    double omega = 0.0;      ///< sinusoid angular frequency (rad per mm of arc)

    /// Radius at arc position s of a branch of total arc length `length`.
    double at(double s, double length) const;
    double min_radius() const;
};

struct BranchSpec {
    enum class Curve { Spline, Helix };
    Curve curve = Curve::Spline;
    /// Spline: natural cubic spline through these points (chord-length knots).
    std::vector<Vec3> control_points;
    /// Helix: start point, axis, helix radius, rise per turn, number of turns.
    Vec3 start = Vec3::Zero();
    Vec3 axis = Vec3::UnitZ();
    double helix_radius = 10.0;
    double pitch = 10.0;
    double turns = 1.0;

    RadiusProfile radius;
    /// Parent branch index; the branch then starts at the parent's end point.
    int attach_to = -1;
};

struct PhantomSpec {
    std::array<int, 3> dims{64, 64, 64};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    std::vector<BranchSpec> branches;
    double foreground = 400.0;
    double background = 0.0;
    double noise_sigma = 0.0;
    double softness_voxels = 1.0;
    std::uint64_t seed = 0;
    /// Required clearance between every centerline point and the volume border.
    double margin_mm = 0.0;
    /// Rigid rotation of all branch geometry about `pivot` (default: volume centre).
    Mat3 rotation = Mat3::Identity();
    std::optional<Vec3> pivot;

    Vec3 volume_centre() const;
};

struct Junction {
    Vec3 position;
    double radius = 0.0;
};

struct Phantom {
    ImageVolume volume;
    std::vector<Centerline> centerlines;
    std::vector<Junction> junctions;
};

/// Dense branch polylines (arc step <= min(0.25 * min radius, 0.25 mm)),
/// after rotation; validates the PhantomSpec.
std::vector<Centerline> branch_centerlines(const PhantomSpec& spec);

Phantom generate(const PhantomSpec& spec);

/// Seeds every `stride_mm` of arc on each branch, optionally jittered
/// uniformly inside a ball of 0.25 * local radius.
std::vector<Vec3> skeleton_seeds(const std::vector<Centerline>& centerlines, double stride_mm, bool jitter,
                                 std::mt19937_64& rng);

struct CorpusSpec {
    int count = 30;
    double radius_min = 1.5;
    double radius_max = 25.0;
    /// Largest probe scale that will be used around these tubes.
    double max_scale_mm = 30.0;
    double foreground = 400.0;
    double background = 0.0;
    double noise_sigma = 20.0;
    std::uint64_t seed = 1;
};

/// Mixed straight / curved / helical / tapering tubes with log-uniform radii.
std::vector<PhantomSpec> make_corpus(const CorpusSpec& corpus);

enum class TubeShape { Straight, Curved, Helical, Tapering };

/// A single tube of the given shape and radius along a random direction,
/// with a volume sized to hold it with `margin_mm` clearance.
PhantomSpec make_tube(TubeShape shape, double radius, double margin_mm, std::mt19937_64& rng);

PhantomSpec phantom_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PhantomSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);

}  // namespace sire
