#pragma once

// Multi-scale spherical inputs, heatmap targets and training samples.

#include "sire/centerline.hpp"
#include "sire/geometry.hpp"
#include "sire/volume.hpp"

#include <filesystem>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace sire {

/// Per-vertex feature array: N x channels.
struct SphericalSignal {
    Matrix<double> values;

    int num_vertices() const { return static_cast<int>(values.rows()); }
    int channels() const { return static_cast<int>(values.cols()); }
};

inline constexpr int kDefaultRayChannels = 32;
inline constexpr double kHeatmapAlpha = 3.0;
inline constexpr double kHeatmapBeta = 0.3;
inline constexpr double kDirectionOffset = 0.25;  ///< eta, as a fraction of the radius
inline constexpr double kNegativeProbability = 0.1;

/// Probe radii: a fixed list, or `count` fresh draws from U[low, high].
struct ScaleSet {
    std::vector<double> fixed;
    double low = 1.0;
    double high = 30.0;
    int count = 0;

    static ScaleSet fixed_set(std::vector<double> radii);
    static ScaleSet uniform(double low, double high, int count);

    bool randomized() const { return fixed.empty(); }
    std::vector<double> draw(std::mt19937_64& rng) const;
    void validate() const;
};

/// channel k of vertex v = interpolate(volume, centre + (k+1) r / c * v).
SphericalSignal sample_spherical(const ImageVolume& volume, const Vec3& centre, double radius,
                                 const IcosphereMesh& mesh, int channels = kDefaultRayChannels);

std::vector<SphericalSignal> sample_multiscale(const ImageVolume& volume, const Vec3& centre,
                                               std::span<const double> radii, const IcosphereMesh& mesh,
                                               int channels = kDefaultRayChannels);

/// Heatmap exp(alpha (1 - D / beta)) for D < beta, else 0, where D is the
/// great-circle distance to the nearer of the vertex-snapped directions.
Vector<double> target_heatmap(const IcosphereMesh& mesh, const Vec3& d1, const Vec3& d2,
                              double alpha = kHeatmapAlpha, double beta = kHeatmapBeta);

/// Up- and downstream unit directions at arc position s by finite
/// differences at s +/- eta * radius(s), clamped to the branch.
std::pair<Vec3, Vec3> gt_directions(const Centerline& centerline, double s, double eta = kDirectionOffset);

struct TrainingSample {
    std::vector<double> scales;
    std::vector<SphericalSignal> inputs;
    std::optional<Vector<double>> target;  ///< absent for negative samples
    bool negative = false;
    Vec3 centre = Vec3::Zero();
    Vec3 d1 = Vec3::Zero();
    Vec3 d2 = Vec3::Zero();
    int case_index = -1;
    int branch_index = -1;
    double arc_position = 0.0;
};

/// One windowed volume with its ground-truth branches.
struct TrainingCase {
    ImageVolume volume;
    std::vector<Centerline> centerlines;
};

struct Dataset {
    std::vector<TrainingCase> cases;

    std::size_t num_branches() const;
};

/// Loads every `<name>.sirevol` with a matching `<name>.centerlines.json`
/// (sorted by name) and applies the [1200, 200] window.
Dataset load_dataset(const std::filesystem::path& dir);

struct SampleOptions {
    double negative_probability = kNegativeProbability;
    double eta = kDirectionOffset;
    double alpha = kHeatmapAlpha;
    double beta = kHeatmapBeta;
    int channels = kDefaultRayChannels;
    /// Negative centres lie at U(low, high) * radius from the centerline.
    double negative_low = 1.0;
    double negative_high = 3.0;
};

TrainingSample draw_sample(const Dataset& dataset, const IcosphereMesh& mesh, const ScaleSet& scales,
                           std::mt19937_64& rng, const SampleOptions& options = {});

/// Positive sample at an explicit location (used by evaluation code).
TrainingSample make_positive_sample(const Dataset& dataset, int case_index, int branch_index, double s,
                                    const IcosphereMesh& mesh, std::span<const double> scales,
                                    const SampleOptions& options = {});

}  // namespace sire
