#pragma once

// Spherical orientation estimator: gauge-equivariant mesh convolutions (GEM)
// or scalar graph attention (GAT) on an icosphere, applied with shared
// weights to every probe scale and max-aggregated per vertex.
//
// Feature rows are laid out field by field; a type-0 field takes one column,
// a type-n field (n >= 1) two columns holding (x, y) in the vertex gauge.

#include "sire/geometry.hpp"
#include "sire/kernels.hpp"
#include "sire/sampler.hpp"

#include "json.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sire {

/// Field multiplicities indexed by irrep order: {16, 8} = 16 type-0 + 8 type-1.
struct FieldSignature {
    std::vector<int> multiplicity;

    FieldSignature() = default;
    FieldSignature(std::initializer_list<int> m) : multiplicity(m) {}
    explicit FieldSignature(std::vector<int> m) : multiplicity(std::move(m)) {}

    int dim() const;
    int num_fields() const;
    int max_order() const;
    bool scalar_only() const;
    /// Fields in storage order: all type-0, then all type-1, and so on.
    std::vector<FieldSlot> slots() const;
    /// Orders with non-zero multiplicity, ascending.
    std::vector<int> orders() const;

    bool operator==(const FieldSignature&) const = default;
};

/// 2x2 rotation by n * angle (the identity block for n = 0 is 1x1).
Eigen::Matrix2d irrep(int order, double angle);

enum class Variant { Gem, Gat };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Layer list: input scalars -> hidden signatures -> one type-0 field.
/// GEM layers are separated by norm nonlinearities, GAT layers by ReLU.
struct Architecture {
    Variant variant = Variant::Gem;
    int input_channels = kDefaultRayChannels;
    std::vector<FieldSignature> hidden;

    static Architecture default_gem();
    static Architecture default_gat();

    int max_order() const;
    void validate() const;
    bool operator==(const Architecture&) const = default;
};

/// {"variant": "GEM", "input_channels": 32, "hidden": [[16, 8], [16, 8]]}
nlohmann::json to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

/// Mesh, frames and edge tables shared by every layer.
template <typename T>
struct SphereDomain {
    IcosphereMesh mesh;
    TangentFrameAtlas atlas;
    EdgeTable<T> edges;

    static SphereDomain make(int subdivisions, int max_order);
    static SphereDomain make(IcosphereMesh mesh, TangentFrameAtlas atlas, int max_order);
    int num_vertices() const { return mesh.num_vertices(); }
};

struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size() const;
};

template <typename T>
struct LayerCache {
    Matrix<T> m0;
    Matrix<T> m1;
    std::vector<T> v;
};

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string kind() const = 0;
    virtual const FieldSignature& in_signature() const = 0;
    virtual const FieldSignature& out_signature() const = 0;
    /// Parameter tensors with offsets relative to the layer's block.
    virtual std::vector<ParamInfo> parameters() const = 0;
    std::size_t num_params() const;
    virtual void init(std::span<T> params, std::mt19937_64& rng) const = 0;
    virtual void forward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in,
                         Matrix<T>& out, LayerCache<T>& cache) const = 0;
    /// Accumulates into d_params and overwrites d_in.
    virtual void backward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in,
                          const Matrix<T>& out, const Matrix<T>& d_out, const LayerCache<T>& cache,
                          std::span<T> d_params, Matrix<T>& d_in) const = 0;
};

/// Gauge-equivariant convolution. Parameters: neighbour matrices C for every
/// (output field, input field) pair, dim(n) x dim(m) row-major; self
/// coefficients (a for n = m = 0, (a, b) for n = m >= 1 meaning aI + bJ);
/// one bias per type-0 output field.
template <typename T>
class GemConv final : public Layer<T> {
public:
    GemConv(FieldSignature in, FieldSignature out);

    std::string kind() const override { return "gem"; }
    const FieldSignature& in_signature() const override { return in_; }
    const FieldSignature& out_signature() const override { return out_; }
    std::vector<ParamInfo> parameters() const override;
    void init(std::span<T> params, std::mt19937_64& rng) const override;
    void forward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in, Matrix<T>& out,
                 LayerCache<T>& cache) const override;
    void backward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in,
                  const Matrix<T>& out, const Matrix<T>& d_out, const LayerCache<T>& cache, std::span<T> d_params,
                  Matrix<T>& d_in) const override;

    /// First parameter index of C for the pair.
    int neighbor_index(int out_field, int in_field) const;
    /// First self coefficient for the pair, -1 when the orders differ.
    int self_index(int out_field, int in_field) const;
    /// Bias index for a type-0 output field, -1 otherwise.
    int bias_index(int out_field) const;

    const std::vector<FieldSlot>& in_slots() const { return in_slots_; }
    const std::vector<FieldSlot>& out_slots() const { return out_slots_; }

private:
    struct Entry {
        int row, col, param;
        T coef;
    };

    void dense_weights(std::span<const T> params, Matrix<T>& wa, Matrix<T>& ws) const;

    FieldSignature in_, out_;
    std::vector<FieldSlot> in_slots_, out_slots_;
    AggregationPlan plan_;
    std::vector<int> neighbor_base_, self_base_, bias_base_;
    int num_neighbor_ = 0, num_self_ = 0, num_bias_ = 0;
    std::vector<Entry> entries_;
};

/// Type-0: ReLU. Type-n: v * relu(|v| + b) / (|v| + 1e-8), one b per field.
template <typename T>
class NormNonlinearity final : public Layer<T> {
public:
    explicit NormNonlinearity(FieldSignature sig);

    std::string kind() const override { return "norm"; }
    const FieldSignature& in_signature() const override { return sig_; }
    const FieldSignature& out_signature() const override { return sig_; }
    std::vector<ParamInfo> parameters() const override;
    void init(std::span<T> params, std::mt19937_64& rng) const override;
    void forward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in, Matrix<T>& out,
                 LayerCache<T>& cache) const override;
    void backward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in,
                  const Matrix<T>& out, const Matrix<T>& d_out, const LayerCache<T>& cache, std::span<T> d_params,
                  Matrix<T>& d_in) const override;

    static constexpr double kEpsilon = 1e-8;

private:
    FieldSignature sig_;
    std::vector<FieldSlot> slots_;
};

/// Scalar graph attention over N(i) and i itself:
///   e_ij = a . LeakyReLU_0.2(W_dst h_i + W_src h_j),  alpha = softmax_j(e_ij),
///   out_i = sum_j alpha_ij W_src h_j + bias.
template <typename T>
class GatConv final : public Layer<T> {
public:
    GatConv(int in_channels, int out_channels);

    std::string kind() const override { return "gat"; }
    const FieldSignature& in_signature() const override { return in_; }
    const FieldSignature& out_signature() const override { return out_; }
    std::vector<ParamInfo> parameters() const override;
    void init(std::span<T> params, std::mt19937_64& rng) const override;
    void forward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in, Matrix<T>& out,
                 LayerCache<T>& cache) const override;
    void backward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in,
                  const Matrix<T>& out, const Matrix<T>& d_out, const LayerCache<T>& cache, std::span<T> d_params,
                  Matrix<T>& d_in) const override;

    /// Attention weights: entries [0, N) are self weights, entry N + e the
    /// weight of directed edge e.
    std::vector<T> attention(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in) const;

    static constexpr double kNegativeSlope = 0.2;

private:
    int cin_, cout_;
    FieldSignature in_, out_;
};

template <typename T>
struct Tape {
    std::vector<Matrix<T>> activations;  ///< input, then each layer's output
    std::vector<LayerCache<T>> caches;
};

template <typename T>
class Network {
public:
    Network() = default;
    explicit Network(Architecture arch);

    const Architecture& architecture() const { return arch_; }
    const std::vector<std::shared_ptr<const Layer<T>>>& layers() const { return layers_; }
    std::span<const T> layer_params(std::size_t layer) const;
    std::size_t layer_offset(std::size_t layer) const { return offsets_.at(layer); }

    std::size_t num_params() const { return params_.size(); }
    std::vector<T>& params() { return params_; }
    const std::vector<T>& params() const { return params_; }
    std::vector<ParamInfo> manifest() const;

    void init(std::uint64_t seed);

    /// N x input_channels -> N activations.
    Vector<T> forward(const SphereDomain<T>& domain, const Matrix<T>& input, Tape<T>* tape = nullptr) const;
    /// Accumulates d loss / d params into d_params (size num_params()).
    void backward(const SphereDomain<T>& domain, const Tape<T>& tape, const Vector<T>& d_output,
                  std::span<T> d_params) const;

private:
    Architecture arch_;
    std::vector<std::shared_ptr<const Layer<T>>> layers_;
    std::vector<std::size_t> offsets_;
    std::vector<T> params_;
};

template <typename T>
struct MultiScaleOutput {
    std::vector<Vector<T>> per_scale;
    Vector<T> max;
    /// Per vertex: position in the input list of the scale attaining the
    /// maximum, lowest position on ties.
    std::vector<int> argmax;
};

template <typename T>
MultiScaleOutput<T> forward_multiscale(const Network<T>& net, const SphereDomain<T>& domain,
                                       std::span<const Matrix<T>> inputs, std::vector<Tape<T>>* tapes = nullptr);

/// Routes d_max to the argmax scale of every vertex; scales that win no
/// vertex are skipped.
template <typename T>
void backward_multiscale(const Network<T>& net, const SphereDomain<T>& domain, const MultiScaleOutput<T>& out,
                         const std::vector<Tape<T>>& tapes, const Vector<T>& d_max, std::span<T> d_params);

template <typename T>
std::vector<Matrix<T>> to_inputs(const std::vector<SphericalSignal>& signals);

struct DirectionPair {
    int v1 = -1;
    int v2 = -1;
    Vec3 d1 = Vec3::Zero();
    Vec3 d2 = Vec3::Zero();
    double peak1 = 0.0;
    double peak2 = 0.0;
};

/// d1 at the global argmax; d2 at the argmax over vertices at least
/// min_separation_deg away from d1. Ties go to the lowest vertex index.
DirectionPair extract_directions(const Vector<double>& activation, const IcosphereMesh& mesh,
                                 double min_separation_deg);

/// Architecture plus float parameter values, as stored in weights files.
struct ModelParams {
    Architecture architecture;
    std::vector<float> values;
};

template <typename T>
Network<T> make_network(const ModelParams& model);

template <typename T>
ModelParams to_model_params(const Network<T>& net);

/// Weights file: "SIREWTS1", a JSON header line, then little-endian float32
/// values in manifest order.
void save_weights(const std::filesystem::path& path, const ModelParams& model);
ModelParams load_weights(const std::filesystem::path& path);

/// Multi-scale activations of a trained model at one location.
struct Prediction {
    std::vector<double> scales;
    std::vector<Vector<double>> per_scale;
    Vector<double> max;
    std::vector<int> argmax;

    double active_scale(int vertex) const { return scales[argmax[vertex]]; }
};

/// Single-precision inference wrapper: one mesh, one network.
class Estimator {
public:
    explicit Estimator(const ModelParams& model, int subdivisions = 3);

    Prediction predict(const ImageVolume& volume, const Vec3& centre, std::span<const double> scales) const;
    const IcosphereMesh& mesh() const { return domain_.mesh; }
    const Network<float>& network() const { return net_; }
    const SphereDomain<float>& domain() const { return domain_; }

private:
    Network<float> net_;
    SphereDomain<float> domain_;
};

}  // namespace sire
