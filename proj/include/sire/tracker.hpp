#pragma once

// Bidirectional fixed-step centerline tracking with entropy stopping, and
// queue-driven extraction of a vessel tree from many seeds.

#include "sire/centerline.hpp"
#include "sire/network.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sire {

struct TrackerConfig {
    std::vector<double> scales{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    double step = 0.25;  ///< mm
    double tau = 0.9;    ///< normalised entropy threshold
    int window = 5;
    double cone_deg = 60.0;
    double init_separation_deg = 90.0;
    int max_steps = 4000;  ///< per leg

    void validate() const;
};

enum class Termination { Entropy, MaxSteps, VolumeExit };

std::string to_string(Termination t);

struct TrackStep {
    Vec3 point = Vec3::Zero();
    /// Direction chosen at this point (unit).
    Vec3 direction = Vec3::Zero();
    double entropy = 0.0;
    double entropy_ma = 0.0;
    double active_scale = 0.0;
    double peak = 0.0;
};

struct TrackResult {
    /// Leg 2 reversed, the seed, then leg 1; spacing `step` between neighbours.
    std::vector<TrackStep> steps;
    std::size_t seed_index = 0;
    Vec3 seed = Vec3::Zero();
    Vec3 d1 = Vec3::Zero();
    Vec3 d2 = Vec3::Zero();
    Termination leg1 = Termination::MaxSteps;
    Termination leg2 = Termination::MaxSteps;

    std::vector<Vec3> points() const;
    /// Polyline with radius = active scale / 2 at each point.
    Centerline centerline() const;
};

/// Softmax entropy divided by ln N, in [0, 1].
double normalized_entropy(const Vector<double>& activation);

/// Highest-activation vertex strictly within `cone_deg` of `previous`;
/// ties go to the lowest index.
int step_direction(const Vector<double>& activation, const IcosphereMesh& mesh, const Vec3& previous,
                   double cone_deg = 60.0);

TrackResult track(const ImageVolume& volume, const Estimator& estimator, const Vec3& seed,
                  const TrackerConfig& config);

/// Pops seeds front to back; after each run, drops every queued seed within
/// max(step, active_scale / 2) of a tracked point.
std::vector<TrackResult> extract_tree(const ImageVolume& volume, const Estimator& estimator,
                                      std::vector<Vec3> seeds, const TrackerConfig& config);

/// k,x,y,z,entropy,entropy_ma,active_scale_mm,peak
void write_track_csv(const std::filesystem::path& path, const TrackResult& result);

}  // namespace sire
