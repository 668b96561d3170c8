#include "sire/network.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sire {

static_assert(std::endian::native == std::endian::little, "weights files are little-endian");

namespace {

constexpr char kMagic[] = "SIREWTS1";
constexpr std::size_t kMagicLen = 8;

}  // namespace

nlohmann::json to_json(const Architecture& arch)
{
    nlohmann::json hidden = nlohmann::json::array();
    for (const auto& h : arch.hidden) hidden.push_back(h.multiplicity);
    return {{"variant", to_string(arch.variant)}, {"input_channels", arch.input_channels}, {"hidden", hidden}};
}

Architecture architecture_from_json(const nlohmann::json& j)
{
    try {
        Architecture a;
        a.variant = variant_from_string(j.at("variant").get<std::string>());
        a.input_channels = j.value("input_channels", kDefaultRayChannels);
        for (const auto& h : j.at("hidden")) a.hidden.emplace_back(h.get<std::vector<int>>());
        a.validate();
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed architecture: ") + e.what());
    }
}

void save_weights(const std::filesystem::path& path, const ModelParams& model)
{
    const Network<float> net(model.architecture);
    if (net.num_params() != model.values.size()) throw ValidationError("parameter count does not match architecture");
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& p : net.manifest()) manifest.push_back({{"name", p.name}, {"shape", p.shape}});
    const nlohmann::json header = {{"variant", to_string(model.architecture.variant)},
                                   {"architecture", to_json(model.architecture)},
                                   {"parameters", manifest},
                                   {"dtype", "f32"},
                                   {"byte_order", "little"}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write weights file " + path.string());
    out.write(kMagic, kMagicLen);
    const std::string line = header.dump() + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.write(reinterpret_cast<const char*>(model.values.data()),
              static_cast<std::streamsize>(model.values.size() * sizeof(float)));
    if (!out) throw RuntimeFailure("failed writing weights file " + path.string());
}

ModelParams load_weights(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open weights file " + path.string());
    char magic[kMagicLen];
    if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw ValidationError("not a SIREWTS1 weights file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("missing weights header");

    ModelParams model;
    try {
        const auto header = nlohmann::json::parse(line);
        model.architecture = architecture_from_json(header.at("architecture"));
        if (variant_from_string(header.at("variant").get<std::string>()) != model.architecture.variant)
            throw ValidationError("weights header variant disagrees with its architecture");
        const Network<float> net(model.architecture);
        const auto expected = net.manifest();
        const auto& listed = header.at("parameters");
        if (listed.size() != expected.size()) throw ValidationError("weights manifest does not match architecture");
        for (std::size_t k = 0; k < expected.size(); ++k) {
            if (listed[k].at("name").get<std::string>() != expected[k].name ||
                listed[k].at("shape").get<std::vector<int>>() != expected[k].shape)
                throw ValidationError("weights manifest entry " + std::to_string(k) + " does not match architecture");
        }
        model.values.resize(net.num_params());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed weights header: ") + e.what());
    }

    const auto start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg() - start);
    if (bytes != model.values.size() * sizeof(float))
        throw ValidationError("weights payload has " + std::to_string(bytes) + " bytes, expected " +
                              std::to_string(model.values.size() * sizeof(float)));
    in.seekg(start);
    in.read(reinterpret_cast<char*>(model.values.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw RuntimeFailure("failed reading weights payload");
    return model;
}

}  // namespace sire
