#pragma once

// Held-out phantom experiments shared by the command line tool and the
// acceptance suite.

#include "sire/metrics.hpp"
#include "sire/phantom.hpp"
#include "sire/tracker.hpp"

#include <random>
#include <vector>

namespace sire {

/// Uniformly distributed rotation.
Mat3 random_rotation(std::mt19937_64& rng);

/// Re-grids a spec to a cube around the bounding sphere of its geometry, so
/// any rotation about the volume centre keeps the margin.
PhantomSpec rotation_ready(PhantomSpec spec);

/// Phantom with the window already applied to its volume.
Phantom windowed_phantom(const PhantomSpec& spec);

struct RotationExperimentConfig {
    int volumes = 10;
    int points_per_volume = 20;
    double radius_min = 1.5;
    double radius_max = 25.0;
    double max_scale_mm = 30.0;
    double noise_sigma = 20.0;
    std::vector<double> scales{2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26, 28, 30};
    std::uint64_t seed = 7;
};

struct RotationExperimentResult {
    std::vector<double> unrotated;
    std::vector<double> rotated;
    double median_unrotated = 0.0;
    double median_rotated = 0.0;
};

/// Cosine similarity of predicted (60 degree separation) and ground-truth
/// directions at centerline points of held-out tubes, before and after a
/// random rotation of geometry and query.
RotationExperimentResult rotation_experiment(const Estimator& estimator, const RotationExperimentConfig& config);

double median(std::vector<double> values);

struct TubeTracking {
    TrackResult track;
    MetricsReport metrics;
    double max_spacing = 0.0;
};

/// Tracks from the middle of the first branch and scores the result
/// against every branch of the phantom.
TubeTracking track_tube(const Estimator& estimator, const Phantom& phantom, const TrackerConfig& config);

}  // namespace sire
