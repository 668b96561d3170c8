#pragma once

#include "sire/common.hpp"

#include <array>
#include <filesystem>
#include <vector>

namespace sire {

/// Axis-aligned scalar grid. Voxel (0,0,0) is centred at `origin` (mm);
/// data is x-fastest.
struct ImageVolume {
    std::array<int, 3> dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    std::vector<float> data;

    ImageVolume() = default;
    ImageVolume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, float fill = 0.0f);

    std::size_t num_voxels() const
    {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(int x, int y, int z) const
    {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(dims[0]) * (y + static_cast<std::size_t>(dims[1]) * z);
    }
    float at(int x, int y, int z) const { return data[index(x, y, z)]; }
    float& at(int x, int y, int z) { return data[index(x, y, z)]; }

    Vec3 voxel_to_world(const Vec3& ijk) const { return origin + ijk.cwiseProduct(spacing); }
    Vec3 world_to_voxel(const Vec3& p) const { return (p - origin).cwiseQuotient(spacing); }

    /// True when p lies inside the hull of voxel centres.
    bool contains(const Vec3& p) const;
    double max_spacing() const { return spacing.maxCoeff(); }

    /// Checks the type invariants; throws ValidationError.
    void validate() const;
};

/// Trilinear interpolation at world point p. Neighbours outside the grid read
/// 0.0, so points more than one voxel outside return exactly 0.0.
double interpolate(const ImageVolume& volume, const Vec3& p);

/// I' = (I - (level - window / 2)) / window, without clipping.
ImageVolume rescale_window(const ImageVolume& volume, double window = 1200.0, double level = 200.0);

enum class VolumeIoErrorKind { Io, BadMagic, UnsupportedVersion, MalformedHeader, SizeMismatch };

class VolumeIoError : public RuntimeFailure {
public:
    VolumeIoError(VolumeIoErrorKind kind, const std::string& msg) : RuntimeFailure(msg), kind_(kind) {}
    VolumeIoErrorKind kind() const { return kind_; }

private:
    VolumeIoErrorKind kind_;
};

/// "SIREVOL1" + JSON header line + little-endian float32 payload.
ImageVolume load_volume(const std::filesystem::path& path);
void save_volume(const ImageVolume& volume, const std::filesystem::path& path);

}  // namespace sire
