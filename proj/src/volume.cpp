#include "sire/volume.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sire {

namespace {

constexpr char kMagic[] = "SIREVOL1";
constexpr std::size_t kMagicLen = 8;

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

}  // namespace

ImageVolume::ImageVolume(std::array<int, 3> d, Vec3 s, Vec3 o, float fill)
    : dims(d), spacing(std::move(s)), origin(std::move(o))
{
    for (int k = 0; k < 3; ++k) require(dims[k] > 0, "volume dims must be positive");
    data.assign(num_voxels(), fill);
}

bool ImageVolume::contains(const Vec3& p) const
{
    const Vec3 u = world_to_voxel(p);
    for (int k = 0; k < 3; ++k)
        if (!(u[k] >= 0.0 && u[k] <= dims[k] - 1)) return false;
    return true;
}

void ImageVolume::validate() const
{
    for (int k = 0; k < 3; ++k) {
        require(dims[k] > 0, "volume dims must be positive");
        require(spacing[k] > 0.0 && std::isfinite(spacing[k]), "volume spacing must be positive");
        require(std::isfinite(origin[k]), "volume origin must be finite");
    }
    require(data.size() == num_voxels(), "volume data length does not match dims");
}

double interpolate(const ImageVolume& volume, const Vec3& p)
{
    const Vec3 u = volume.world_to_voxel(p);
    const double fx = std::floor(u.x());
    const double fy = std::floor(u.y());
    const double fz = std::floor(u.z());
    // Far outside: skip the corner loop (and any int overflow).
    if (fx < -1.0 || fy < -1.0 || fz < -1.0 || fx > volume.dims[0] - 1 || fy > volume.dims[1] - 1 ||
        fz > volume.dims[2] - 1 || !std::isfinite(fx + fy + fz))
        return 0.0;
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const int z0 = static_cast<int>(fz);
    const double tx = u.x() - fx;
    const double ty = u.y() - fy;
    const double tz = u.z() - fz;

    auto sample = [&](int x, int y, int z) -> double {
        if (x < 0 || y < 0 || z < 0 || x >= volume.dims[0] || y >= volume.dims[1] || z >= volume.dims[2])
            return 0.0;
        return volume.at(x, y, z);
    };

    const double c00 = sample(x0, y0, z0) * (1 - tx) + sample(x0 + 1, y0, z0) * tx;
    const double c10 = sample(x0, y0 + 1, z0) * (1 - tx) + sample(x0 + 1, y0 + 1, z0) * tx;
    const double c01 = sample(x0, y0, z0 + 1) * (1 - tx) + sample(x0 + 1, y0, z0 + 1) * tx;
    const double c11 = sample(x0, y0 + 1, z0 + 1) * (1 - tx) + sample(x0 + 1, y0 + 1, z0 + 1) * tx;
    const double c0 = c00 * (1 - ty) + c10 * ty;
    const double c1 = c01 * (1 - ty) + c11 * ty;
    return c0 * (1 - tz) + c1 * tz;
}

ImageVolume rescale_window(const ImageVolume& volume, double window, double level)
{
    require(window > 0.0, "window must be positive");
    ImageVolume out = volume;
    const double low = level - window / 2.0;
    for (auto& v : out.data) v = static_cast<float>((v - low) / window);
    return out;
}

ImageVolume load_volume(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VolumeIoError(VolumeIoErrorKind::Io, "cannot open volume file " + path.string());

    char magic[kMagicLen];
    if (!in.read(magic, kMagicLen))
        throw VolumeIoError(VolumeIoErrorKind::BadMagic, "truncated volume file " + path.string());
    if (std::memcmp(magic, kMagic, kMagicLen - 1) != 0)
        throw VolumeIoError(VolumeIoErrorKind::BadMagic, "not a SIREVOL file: " + path.string());
    if (magic[kMagicLen - 1] != kMagic[kMagicLen - 1])
        throw VolumeIoError(VolumeIoErrorKind::UnsupportedVersion,
                            std::string("unsupported volume format version '") + magic[kMagicLen - 1] + "'");

    std::string header_line;
    if (!std::getline(in, header_line))
        throw VolumeIoError(VolumeIoErrorKind::MalformedHeader, "missing volume header");

    ImageVolume vol;
    try {
        const auto header = nlohmann::json::parse(header_line);
        if (header.at("dtype").get<std::string>() != "f32")
            throw VolumeIoError(VolumeIoErrorKind::UnsupportedVersion, "unsupported dtype");
        if (header.at("byte_order").get<std::string>() != "little")
            throw VolumeIoError(VolumeIoErrorKind::UnsupportedVersion, "unsupported byte order");
        const auto dims = header.at("dims").get<std::array<int, 3>>();
        const auto spacing = header.at("spacing_mm").get<std::array<double, 3>>();
        const auto origin = header.at("origin_mm").get<std::array<double, 3>>();
        vol.dims = dims;
        vol.spacing = Vec3(spacing[0], spacing[1], spacing[2]);
        vol.origin = Vec3(origin[0], origin[1], origin[2]);
        for (int k = 0; k < 3; ++k)
            if (dims[k] <= 0 || !(spacing[k] > 0.0))
                throw VolumeIoError(VolumeIoErrorKind::MalformedHeader, "non-positive dims or spacing");
    } catch (const nlohmann::json::exception& e) {
        throw VolumeIoError(VolumeIoErrorKind::MalformedHeader, std::string("malformed volume header: ") + e.what());
    }

    const std::size_t expected = vol.num_voxels() * sizeof(float);
    const auto payload_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto payload_size = static_cast<std::size_t>(in.tellg() - payload_start);
    if (payload_size != expected)
        throw VolumeIoError(VolumeIoErrorKind::SizeMismatch,
                            "volume payload has " + std::to_string(payload_size) + " bytes, header declares " +
                                std::to_string(expected));
    in.seekg(payload_start);
    vol.data.resize(vol.num_voxels());
    in.read(reinterpret_cast<char*>(vol.data.data()), static_cast<std::streamsize>(expected));
    if (!in) throw VolumeIoError(VolumeIoErrorKind::Io, "failed reading volume payload");
    return vol;
}

void save_volume(const ImageVolume& volume, const std::filesystem::path& path)
{
    volume.validate();
    nlohmann::json header = {
        {"dims", volume.dims},
        {"spacing_mm", {volume.spacing.x(), volume.spacing.y(), volume.spacing.z()}},
        {"origin_mm", {volume.origin.x(), volume.origin.y(), volume.origin.z()}},
        {"dtype", "f32"},
        {"byte_order", "little"},
    };
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw VolumeIoError(VolumeIoErrorKind::Io, "cannot write volume file " + path.string());
    out.write(kMagic, kMagicLen);
    const std::string line = header.dump() + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.write(reinterpret_cast<const char*>(volume.data.data()),
              static_cast<std::streamsize>(volume.data.size() * sizeof(float)));
    if (!out) throw VolumeIoError(VolumeIoErrorKind::Io, "failed writing volume file " + path.string());
}

}  // namespace sire
