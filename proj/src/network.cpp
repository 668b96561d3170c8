#include "sire/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sire {

// ---------------------------------------------------------------- signatures

int FieldSignature::dim() const
{
    int d = 0;
    for (std::size_t n = 0; n < multiplicity.size(); ++n) d += multiplicity[n] * (n == 0 ? 1 : 2);
    return d;
}

int FieldSignature::num_fields() const { return std::accumulate(multiplicity.begin(), multiplicity.end(), 0); }

int FieldSignature::max_order() const
{
    for (int n = static_cast<int>(multiplicity.size()) - 1; n >= 0; --n)
        if (multiplicity[n] > 0) return n;
    return 0;
}

bool FieldSignature::scalar_only() const { return max_order() == 0; }

std::vector<FieldSlot> FieldSignature::slots() const
{
    std::vector<FieldSlot> out;
    int offset = 0;
    for (std::size_t n = 0; n < multiplicity.size(); ++n) {
        for (int k = 0; k < multiplicity[n]; ++k) {
            out.push_back({static_cast<int>(n), offset});
            offset += out.back().dim();
        }
    }
    return out;
}

std::vector<int> FieldSignature::orders() const
{
    std::vector<int> out;
    for (std::size_t n = 0; n < multiplicity.size(); ++n)
        if (multiplicity[n] > 0) out.push_back(static_cast<int>(n));
    return out;
}

Eigen::Matrix2d irrep(int order, double angle)
{
    const double c = std::cos(order * angle), s = std::sin(order * angle);
    Eigen::Matrix2d m;
    m << c, -s, s, c;
    return m;
}

std::string to_string(Variant v) { return v == Variant::Gem ? "GEM" : "GAT"; }

Variant variant_from_string(const std::string& s)
{
    if (s == "GEM") return Variant::Gem;
    if (s == "GAT") return Variant::Gat;
    throw ValidationError("unsupported model variant: " + s);
}

Architecture Architecture::default_gem()
{
    Architecture a;
    a.variant = Variant::Gem;
    a.hidden = {FieldSignature{16, 8}, FieldSignature{16, 8}};
    return a;
}

Architecture Architecture::default_gat()
{
    Architecture a;
    a.variant = Variant::Gat;
    a.hidden = {FieldSignature{32}, FieldSignature{32}};
    return a;
}

int Architecture::max_order() const
{
    int m = 0;
    for (const auto& h : hidden) m = std::max(m, h.max_order());
    return m;
}

void Architecture::validate() const
{
    require(input_channels >= 1, "input channel count must be positive");
    for (const auto& h : hidden) {
        require(h.num_fields() >= 1, "hidden layers need at least one field");
        for (int m : h.multiplicity) require(m >= 0, "field multiplicities must be non-negative");
        if (variant == Variant::Gat) require(h.scalar_only(), "GAT layers accept scalar fields only");
    }
}

template <typename T>
SphereDomain<T> SphereDomain<T>::make(int subdivisions, int max_order)
{
    auto mesh = build_icosphere(subdivisions);
    auto atlas = compute_frames(mesh);
    return make(std::move(mesh), std::move(atlas), max_order);
}

template <typename T>
SphereDomain<T> SphereDomain<T>::make(IcosphereMesh mesh, TangentFrameAtlas atlas, int max_order)
{
    SphereDomain d;
    d.edges = EdgeTable<T>::build(atlas, max_order);
    d.mesh = std::move(mesh);
    d.atlas = std::move(atlas);
    return d;
}

std::size_t ParamInfo::size() const
{
    std::size_t s = 1;
    for (int d : shape) s *= static_cast<std::size_t>(d);
    return s;
}

template <typename T>
std::size_t Layer<T>::num_params() const
{
    std::size_t n = 0;
    for (const auto& p : parameters()) n = std::max(n, p.offset + p.size());
    return n;
}

namespace {

template <typename T>
void fill_normal(std::span<T> out, double sigma, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& v : out) v = static_cast<T>(dist(rng));
}

void check_input(const char* what, Eigen::Index rows, Eigen::Index cols, int n, int dim)
{
    if (rows != n || cols != dim)
        throw ValidationError(std::string(what) + ": expected " + std::to_string(n) + " x " + std::to_string(dim) +
                              " features, got " + std::to_string(rows) + " x " + std::to_string(cols));
}

}  // namespace

// ---------------------------------------------------------------- GEM

template <typename T>
GemConv<T>::GemConv(FieldSignature in, FieldSignature out)
    : in_(std::move(in)), out_(std::move(out)), in_slots_(in_.slots()), out_slots_(out_.slots())
{
    require(in_.num_fields() >= 1 && out_.num_fields() >= 1, "GEM layers need input and output fields");
    const auto orders = out_.orders();
    plan_ = AggregationPlan::make(in_slots_, orders, in_.dim());
    const int nout = static_cast<int>(out_slots_.size());
    const int nin = static_cast<int>(in_slots_.size());

    neighbor_base_.assign(static_cast<std::size_t>(nout) * nin, -1);
    self_base_.assign(static_cast<std::size_t>(nout) * nin, -1);
    bias_base_.assign(nout, -1);
    for (int o = 0; o < nout; ++o) {
        for (int f = 0; f < nin; ++f) {
            neighbor_base_[o * nin + f] = num_neighbor_;
            num_neighbor_ += out_slots_[o].dim() * in_slots_[f].dim();
        }
    }
    for (int o = 0; o < nout; ++o) {
        for (int f = 0; f < nin; ++f) {
            if (out_slots_[o].order != in_slots_[f].order) continue;
            self_base_[o * nin + f] = num_neighbor_ + num_self_;
            num_self_ += out_slots_[o].order == 0 ? 1 : 2;
        }
    }
    for (int o = 0; o < nout; ++o) {
        if (out_slots_[o].order != 0) continue;
        bias_base_[o] = num_neighbor_ + num_self_ + num_bias_;
        ++num_bias_;
    }

    const int agg = plan_.agg_dim;
    for (int o = 0; o < nout; ++o) {
        const int n = out_slots_[o].order;
        const int ro = out_slots_[o].offset;
        const int oi = static_cast<int>(std::find(orders.begin(), orders.end(), n) - orders.begin());
        for (int f = 0; f < nin; ++f) {
            const int dm = in_slots_[f].dim();
            const int col = plan_.block[f][oi];
            const int nb = neighbor_base_[o * nin + f];
            if (n == 0) {
                for (int c = 0; c < dm; ++c) entries_.push_back({ro, col + c, nb + c, T(1)});
            } else {
                // cos block takes C, sin block takes J C.
                for (int c = 0; c < dm; ++c) {
                    entries_.push_back({ro, col + c, nb + c, T(1)});
                    entries_.push_back({ro + 1, col + c, nb + dm + c, T(1)});
                    entries_.push_back({ro, col + dm + c, nb + dm + c, T(-1)});
                    entries_.push_back({ro + 1, col + dm + c, nb + c, T(1)});
                }
            }
            const int sb = self_base_[o * nin + f];
            if (sb < 0) continue;
            const int co = agg + in_slots_[f].offset;
            if (n == 0) {
                entries_.push_back({ro, co, sb, T(1)});
            } else {
                entries_.push_back({ro, co, sb, T(1)});
                entries_.push_back({ro + 1, co + 1, sb, T(1)});
                entries_.push_back({ro, co + 1, sb + 1, T(-1)});
                entries_.push_back({ro + 1, co, sb + 1, T(1)});
            }
        }
    }
}

template <typename T>
int GemConv<T>::neighbor_index(int out_field, int in_field) const
{
    return neighbor_base_.at(static_cast<std::size_t>(out_field) * in_slots_.size() + in_field);
}

template <typename T>
int GemConv<T>::self_index(int out_field, int in_field) const
{
    return self_base_.at(static_cast<std::size_t>(out_field) * in_slots_.size() + in_field);
}

template <typename T>
int GemConv<T>::bias_index(int out_field) const
{
    return bias_base_.at(out_field);
}

template <typename T>
std::vector<ParamInfo> GemConv<T>::parameters() const
{
    std::vector<ParamInfo> p;
    p.push_back({"neighbor", {num_neighbor_}, 0});
    if (num_self_ > 0) p.push_back({"self", {num_self_}, static_cast<std::size_t>(num_neighbor_)});
    if (num_bias_ > 0) p.push_back({"bias", {num_bias_}, static_cast<std::size_t>(num_neighbor_ + num_self_)});
    return p;
}

template <typename T>
void GemConv<T>::init(std::span<T> params, std::mt19937_64& rng) const
{
    // He-style scale over the self term plus roughly six neighbours.
    const double sigma = std::sqrt(2.0 / (7.0 * in_.dim()));
    fill_normal(params.subspan(0, num_neighbor_ + num_self_), sigma, rng);
    std::fill(params.begin() + num_neighbor_ + num_self_, params.end(), T(0));
}

template <typename T>
void GemConv<T>::dense_weights(std::span<const T> params, Matrix<T>& wa, Matrix<T>& ws) const
{
    const int agg = plan_.agg_dim;
    wa.setZero(out_.dim(), agg);
    ws.setZero(out_.dim(), in_.dim());
    for (const auto& e : entries_) {
        if (e.col < agg)
            wa(e.row, e.col) += e.coef * params[e.param];
        else
            ws(e.row, e.col - agg) += e.coef * params[e.param];
    }
}

template <typename T>
void GemConv<T>::forward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in,
                         Matrix<T>& out, LayerCache<T>& cache) const
{
    check_input("gem layer", in.rows(), in.cols(), domain.num_vertices(), in_.dim());
    require(domain.edges.max_order >= std::max(in_.max_order(), out_.max_order()),
            "edge tables do not cover the layer's irrep orders");
    Matrix<T> wa, ws;
    dense_weights(params, wa, ws);
    gem_aggregate(domain.edges, plan_, in, cache.m0);
    out.noalias() = cache.m0 * wa.transpose();
    out.noalias() += in * ws.transpose();
    for (std::size_t o = 0; o < out_slots_.size(); ++o)
        if (bias_base_[o] >= 0) out.col(out_slots_[o].offset).array() += params[bias_base_[o]];
}

template <typename T>
void GemConv<T>::backward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in,
                          const Matrix<T>&, const Matrix<T>& d_out, const LayerCache<T>& cache,
                          std::span<T> d_params, Matrix<T>& d_in) const
{
    Matrix<T> wa, ws;
    dense_weights(params, wa, ws);
    const Matrix<T> dwa = d_out.transpose() * cache.m0;
    const Matrix<T> dws = d_out.transpose() * in;
    const int agg = plan_.agg_dim;
    for (const auto& e : entries_)
        d_params[e.param] += e.coef * (e.col < agg ? dwa(e.row, e.col) : dws(e.row, e.col - agg));
    for (std::size_t o = 0; o < out_slots_.size(); ++o)
        if (bias_base_[o] >= 0) d_params[bias_base_[o]] += d_out.col(out_slots_[o].offset).sum();

    const Matrix<T> d_agg = d_out * wa;
    gem_aggregate_backward(domain.edges, plan_, d_agg, d_in);
    d_in.noalias() += d_out * ws;
}

// ---------------------------------------------------------------- norm

template <typename T>
NormNonlinearity<T>::NormNonlinearity(FieldSignature sig) : sig_(std::move(sig)), slots_(sig_.slots())
{
}

template <typename T>
std::vector<ParamInfo> NormNonlinearity<T>::parameters() const
{
    const int count = sig_.num_fields() - (sig_.multiplicity.empty() ? 0 : sig_.multiplicity[0]);
    if (count == 0) return {};
    return {{"bias", {count}, 0}};
}

template <typename T>
void NormNonlinearity<T>::init(std::span<T> params, std::mt19937_64&) const
{
    std::fill(params.begin(), params.end(), T(0));
}

template <typename T>
void NormNonlinearity<T>::forward(const SphereDomain<T>&, std::span<const T> params, const Matrix<T>& in,
                                  Matrix<T>& out, LayerCache<T>&) const
{
    require(in.cols() == sig_.dim(), "norm nonlinearity: feature width mismatch");
    out.resize(in.rows(), in.cols());
    const T eps = static_cast<T>(kEpsilon);
    const int rows = static_cast<int>(in.rows());
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        int b = 0;
        for (const auto& s : slots_) {
            if (s.order == 0) {
                out(r, s.offset) = std::max(in(r, s.offset), T(0));
                continue;
            }
            const T x = in(r, s.offset), y = in(r, s.offset + 1);
            const T norm = std::sqrt(x * x + y * y);
            const T k = std::max(norm + params[b++], T(0)) / (norm + eps);
            out(r, s.offset) = k * x;
            out(r, s.offset + 1) = k * y;
        }
    }
}

template <typename T>
void NormNonlinearity<T>::backward(const SphereDomain<T>&, std::span<const T> params, const Matrix<T>& in,
                                   const Matrix<T>&, const Matrix<T>& d_out, const LayerCache<T>&,
                                   std::span<T> d_params, Matrix<T>& d_in) const
{
    d_in.resize(in.rows(), in.cols());
    const T eps = static_cast<T>(kEpsilon);
    const int rows = static_cast<int>(in.rows());
    const int nb = static_cast<int>(params.size());
    Matrix<T> db = Matrix<T>::Zero(rows, std::max(nb, 1));
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        int b = 0;
        for (const auto& s : slots_) {
            if (s.order == 0) {
                d_in(r, s.offset) = in(r, s.offset) > T(0) ? d_out(r, s.offset) : T(0);
                continue;
            }
            const T x = in(r, s.offset), y = in(r, s.offset + 1);
            const T gx = d_out(r, s.offset), gy = d_out(r, s.offset + 1);
            const T norm = std::sqrt(x * x + y * y);
            const T act = norm + params[b];
            const T u = std::max(act, T(0));
            const T du = act > T(0) ? T(1) : T(0);
            const T denom = norm + eps;
            const T k = u / denom;
            const T vg = x * gx + y * gy;
            T dx = k * gx, dy = k * gy;
            if (norm > T(0)) {
                const T dk = (du * denom - u) / (denom * denom);
                dx += vg * dk * x / norm;
                dy += vg * dk * y / norm;
            }
            d_in(r, s.offset) = dx;
            d_in(r, s.offset + 1) = dy;
            db(r, b) = du / denom * vg;
            ++b;
        }
    }
    for (int r = 0; r < rows; ++r)
        for (int b = 0; b < nb; ++b) d_params[b] += db(r, b);
}

// ---------------------------------------------------------------- GAT

template <typename T>
GatConv<T>::GatConv(int in_channels, int out_channels)
    : cin_(in_channels), cout_(out_channels), in_{in_channels}, out_{out_channels}
{
    require(in_channels >= 1 && out_channels >= 1, "GAT layer widths must be positive");
}

template <typename T>
std::vector<ParamInfo> GatConv<T>::parameters() const
{
    const std::size_t w = static_cast<std::size_t>(cin_) * cout_;
    return {{"w_dst", {cout_, cin_}, 0},
            {"w_src", {cout_, cin_}, w},
            {"attn", {cout_}, 2 * w},
            {"bias", {cout_}, 2 * w + cout_}};
}

template <typename T>
void GatConv<T>::init(std::span<T> params, std::mt19937_64& rng) const
{
    const std::size_t w = static_cast<std::size_t>(cin_) * cout_;
    fill_normal(params.subspan(0, 2 * w), std::sqrt(2.0 / cin_), rng);
    fill_normal(params.subspan(2 * w, cout_), std::sqrt(1.0 / cout_), rng);
    std::fill(params.begin() + 2 * w + cout_, params.end(), T(0));
}

namespace {

template <typename T>
T leaky(T z)
{
    return z > T(0) ? z : static_cast<T>(GatConv<T>::kNegativeSlope) * z;
}

// Softmax weights for vertex i: self first, then its CSR edges.
template <typename T>
void attention_row(const EdgeTable<T>& ed, const Matrix<T>& l, const Matrix<T>& r, const T* a, int i,
                   std::vector<T>& alpha)
{
    const int n = ed.num_vertices;
    const int cout = static_cast<int>(l.cols());
    auto logit = [&](int j) {
        T s = 0;
        for (int d = 0; d < cout; ++d) s += a[d] * leaky(l(i, d) + r(j, d));
        return s;
    };
    const T self = logit(i);
    T mx = self;
    for (int e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e) {
        alpha[n + e] = logit(ed.target[e]);
        mx = std::max(mx, alpha[n + e]);
    }
    alpha[i] = std::exp(self - mx);
    T total = alpha[i];
    for (int e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e) {
        alpha[n + e] = std::exp(alpha[n + e] - mx);
        total += alpha[n + e];
    }
    alpha[i] /= total;
    for (int e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e) alpha[n + e] /= total;
}

}  // namespace

template <typename T>
std::vector<T> GatConv<T>::attention(const SphereDomain<T>& domain, std::span<const T> params,
                                     const Matrix<T>& in) const
{
    LayerCache<T> cache;
    Matrix<T> out;
    forward(domain, params, in, out, cache);
    return cache.v;
}

template <typename T>
void GatConv<T>::forward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in,
                         Matrix<T>& out, LayerCache<T>& cache) const
{
    check_input("gat layer", in.rows(), in.cols(), domain.num_vertices(), cin_);
    const auto& ed = domain.edges;
    const int n = ed.num_vertices;
    Eigen::Map<const Matrix<T>> wd(params.data(), cout_, cin_);
    Eigen::Map<const Matrix<T>> ws(params.data() + cout_ * cin_, cout_, cin_);
    const T* a = params.data() + 2 * cout_ * cin_;
    const T* bias = a + cout_;

    cache.m0.noalias() = in * wd.transpose();
    cache.m1.noalias() = in * ws.transpose();
    cache.v.assign(n + ed.target.size(), T(0));
    out.resize(n, cout_);
    const Matrix<T>& l = cache.m0;
    const Matrix<T>& r = cache.m1;
    auto& alpha = cache.v;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        attention_row(ed, l, r, a, i, alpha);
        for (int d = 0; d < cout_; ++d) out(i, d) = bias[d] + alpha[i] * r(i, d);
        for (int e = ed.offsets[i]; e < ed.offsets[i + 1]; ++e) {
            const T w = alpha[n + e];
            const int j = ed.target[e];
            for (int d = 0; d < cout_; ++d) out(i, d) += w * r(j, d);
        }
    }
}

template <typename T>
void GatConv<T>::backward(const SphereDomain<T>& domain, std::span<const T> params, const Matrix<T>& in,
                          const Matrix<T>&, const Matrix<T>& d_out, const LayerCache<T>& cache,
                          std::span<T> d_params, Matrix<T>& d_in) const
{
    const auto& ed = domain.edges;
    const int n = ed.num_vertices;
    const int edges = static_cast<int>(ed.target.size());
    const std::size_t w = static_cast<std::size_t>(cin_) * cout_;
    Eigen::Map<const Matrix<T>> wd(params.data(), cout_, cin_);
    Eigen::Map<const Matrix<T>> ws(params.data() + w, cout_, cin_);
    const T* a = params.data() + 2 * w;
    const Matrix<T>& l = cache.m0;
    const Matrix<T>& r = cache.m1;
    const auto& alpha = cache.v;
    const T slope = static_cast<T>(kNegativeSlope);

    Matrix<T> dl = Matrix<T>::Zero(n, cout_);
    Matrix<T> dr_slot(n + edges, cout_);
    Matrix<T> da_part = Matrix<T>::Zero(n, cout_);

#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const int deg = ed.offsets[i + 1] - ed.offsets[i];
        std::vector<T> dalpha(deg + 1);
        auto slot_of = [&](int s) { return s == 0 ? i : n + ed.offsets[i] + s - 1; };
        auto source = [&](int s) { return s == 0 ? i : ed.target[ed.offsets[i] + s - 1]; };
        T dot = 0;
        for (int s = 0; s <= deg; ++s) {
            dalpha[s] = d_out.row(i).dot(r.row(source(s)));
            dot += alpha[slot_of(s)] * dalpha[s];
        }
        for (int s = 0; s <= deg; ++s) {
            const int j = source(s);
            const int slot = slot_of(s);
            const T al = alpha[slot];
            const T de = al * (dalpha[s] - dot);
            for (int d = 0; d < cout_; ++d) {
                const T z = l(i, d) + r(j, d);
                const T u = z > T(0) ? z : slope * z;
                da_part(i, d) += de * u;
                const T dz = de * a[d] * (z > T(0) ? T(1) : slope);
                dl(i, d) += dz;
                dr_slot(slot, d) = dz + al * d_out(i, d);
            }
        }
    }

    Matrix<T> dr(n, cout_);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
        dr.row(j) = dr_slot.row(j);
        for (int e = ed.offsets[j]; e < ed.offsets[j + 1]; ++e) dr.row(j) += dr_slot.row(n + ed.reverse[e]);
    }

    Eigen::Map<Matrix<T>> dwd(d_params.data(), cout_, cin_);
    Eigen::Map<Matrix<T>> dws(d_params.data() + w, cout_, cin_);
    dwd.noalias() += dl.transpose() * in;
    dws.noalias() += dr.transpose() * in;
    T* da = d_params.data() + 2 * w;
    T* dbias = da + cout_;
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < cout_; ++d) da[d] += da_part(i, d);
    for (int d = 0; d < cout_; ++d) dbias[d] += d_out.col(d).sum();

    d_in.noalias() = dl * wd;
    d_in.noalias() += dr * ws;
}

// ---------------------------------------------------------------- network

template <typename T>
Network<T>::Network(Architecture arch) : arch_(std::move(arch))
{
    arch_.validate();
    FieldSignature prev{arch_.input_channels};
    auto add = [&](std::shared_ptr<const Layer<T>> layer) {
        offsets_.push_back(offsets_.empty() ? 0 : offsets_.back() + layers_.back()->num_params());
        layers_.push_back(std::move(layer));
    };
    for (const auto& h : arch_.hidden) {
        if (arch_.variant == Variant::Gem)
            add(std::make_shared<GemConv<T>>(prev, h));
        else
            add(std::make_shared<GatConv<T>>(prev.dim(), h.dim()));
        add(std::make_shared<NormNonlinearity<T>>(h));
        prev = h;
    }
    if (arch_.variant == Variant::Gem)
        add(std::make_shared<GemConv<T>>(prev, FieldSignature{1}));
    else
        add(std::make_shared<GatConv<T>>(prev.dim(), 1));
    params_.assign(offsets_.back() + layers_.back()->num_params(), T(0));
}

template <typename T>
std::span<const T> Network<T>::layer_params(std::size_t layer) const
{
    return std::span<const T>(params_).subspan(offsets_.at(layer), layers_.at(layer)->num_params());
}

template <typename T>
std::vector<ParamInfo> Network<T>::manifest() const
{
    std::vector<ParamInfo> out;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        for (auto p : layers_[k]->parameters()) {
            p.name = "layer" + std::to_string(k) + "." + p.name;
            p.offset += offsets_[k];
            out.push_back(std::move(p));
        }
    }
    return out;
}

template <typename T>
void Network<T>::init(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < layers_.size(); ++k)
        layers_[k]->init(std::span<T>(params_).subspan(offsets_[k], layers_[k]->num_params()), rng);
}

template <typename T>
Vector<T> Network<T>::forward(const SphereDomain<T>& domain, const Matrix<T>& input, Tape<T>* tape) const
{
    require(!layers_.empty(), "network has no layers");
    if (input.cols() != arch_.input_channels)
        throw ValidationError("input has " + std::to_string(input.cols()) + " channels, model expects " +
                              std::to_string(arch_.input_channels));
    check_input("network", input.rows(), input.cols(), domain.num_vertices(), arch_.input_channels);

    Tape<T> local;
    Tape<T>& t = tape ? *tape : local;
    t.activations.resize(layers_.size() + 1);
    t.caches.resize(layers_.size());
    t.activations[0] = input;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        layers_[k]->forward(domain, layer_params(k), t.activations[k], t.activations[k + 1], t.caches[k]);
        if (!tape && k > 0) {
            t.activations[k].resize(0, 0);
            t.caches[k] = {};
        }
    }
    return t.activations.back().col(0);
}

template <typename T>
void Network<T>::backward(const SphereDomain<T>& domain, const Tape<T>& tape, const Vector<T>& d_output,
                          std::span<T> d_params) const
{
    require(d_params.size() == params_.size(), "gradient buffer size mismatch");
    require(tape.activations.size() == layers_.size() + 1, "tape does not match the network");
    Matrix<T> grad = d_output;
    Matrix<T> d_in;
    for (std::size_t k = layers_.size(); k-- > 0;) {
        layers_[k]->backward(domain, layer_params(k), tape.activations[k], tape.activations[k + 1], grad,
                             tape.caches[k], d_params.subspan(offsets_[k], layers_[k]->num_params()), d_in);
        std::swap(grad, d_in);
    }
}

// ---------------------------------------------------------------- multi-scale

template <typename T>
MultiScaleOutput<T> forward_multiscale(const Network<T>& net, const SphereDomain<T>& domain,
                                       std::span<const Matrix<T>> inputs, std::vector<Tape<T>>* tapes)
{
    require(!inputs.empty(), "at least one scale is required");
    MultiScaleOutput<T> out;
    if (tapes) tapes->assign(inputs.size(), {});
    for (std::size_t s = 0; s < inputs.size(); ++s)
        out.per_scale.push_back(net.forward(domain, inputs[s], tapes ? &(*tapes)[s] : nullptr));
    const int n = static_cast<int>(out.per_scale[0].size());
    out.max = out.per_scale[0];
    out.argmax.assign(n, 0);
    for (std::size_t s = 1; s < inputs.size(); ++s) {
        for (int v = 0; v < n; ++v) {
            if (out.per_scale[s][v] > out.max[v]) {
                out.max[v] = out.per_scale[s][v];
                out.argmax[v] = static_cast<int>(s);
            }
        }
    }
    return out;
}

template <typename T>
void backward_multiscale(const Network<T>& net, const SphereDomain<T>& domain, const MultiScaleOutput<T>& out,
                         const std::vector<Tape<T>>& tapes, const Vector<T>& d_max, std::span<T> d_params)
{
    require(tapes.size() == out.per_scale.size(), "one tape per scale is required");
    const int n = static_cast<int>(out.max.size());
    for (std::size_t s = 0; s < tapes.size(); ++s) {
        Vector<T> d = Vector<T>::Zero(n);
        bool any = false;
        for (int v = 0; v < n; ++v) {
            if (out.argmax[v] == static_cast<int>(s)) {
                d[v] = d_max[v];
                any = true;
            }
        }
        if (any) net.backward(domain, tapes[s], d, d_params);
    }
}

template <typename T>
std::vector<Matrix<T>> to_inputs(const std::vector<SphericalSignal>& signals)
{
    std::vector<Matrix<T>> out;
    out.reserve(signals.size());
    for (const auto& s : signals) out.push_back(s.values.cast<T>());
    return out;
}

DirectionPair extract_directions(const Vector<double>& activation, const IcosphereMesh& mesh,
                                 double min_separation_deg)
{
    require(activation.size() == mesh.num_vertices(), "activation size does not match the mesh");
    require(min_separation_deg > 0.0 && min_separation_deg < 180.0, "separation must lie in (0, 180) degrees");
    DirectionPair out;
    out.v1 = 0;
    for (int v = 1; v < mesh.num_vertices(); ++v)
        if (activation[v] > activation[out.v1]) out.v1 = v;
    out.d1 = mesh.vertices[out.v1];
    const double sep = deg_to_rad(min_separation_deg);
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        if (haversine(mesh.vertices[v], out.d1) < sep) continue;
        if (out.v2 < 0 || activation[v] > activation[out.v2]) out.v2 = v;
    }
    if (out.v2 < 0) throw RuntimeFailure("direction mask left no vertices");
    out.d2 = mesh.vertices[out.v2];
    out.peak1 = activation[out.v1];
    out.peak2 = activation[out.v2];
    return out;
}

template <typename T>
Network<T> make_network(const ModelParams& model)
{
    Network<T> net(model.architecture);
    if (model.values.size() != net.num_params())
        throw ValidationError("model has " + std::to_string(model.values.size()) + " values, architecture needs " +
                              std::to_string(net.num_params()));
    std::transform(model.values.begin(), model.values.end(), net.params().begin(),
                   [](float v) { return static_cast<T>(v); });
    return net;
}

template <typename T>
ModelParams to_model_params(const Network<T>& net)
{
    ModelParams m;
    m.architecture = net.architecture();
    m.values.resize(net.num_params());
    std::transform(net.params().begin(), net.params().end(), m.values.begin(),
                   [](T v) { return static_cast<float>(v); });
    return m;
}

Estimator::Estimator(const ModelParams& model, int subdivisions)
    : net_(make_network<float>(model)),
      domain_(SphereDomain<float>::make(subdivisions, model.architecture.max_order()))
{
}

Prediction Estimator::predict(const ImageVolume& volume, const Vec3& centre, std::span<const double> scales) const
{
    require(!scales.empty(), "at least one scale is required");
    const auto signals = sample_multiscale(volume, centre, scales, domain_.mesh, net_.architecture().input_channels);
    const auto inputs = to_inputs<float>(signals);
    const auto out = forward_multiscale(net_, domain_, std::span<const Matrix<float>>(inputs));
    Prediction p;
    p.scales.assign(scales.begin(), scales.end());
    for (const auto& s : out.per_scale) p.per_scale.push_back(s.cast<double>());
    p.max = out.max.cast<double>();
    p.argmax = out.argmax;
    for (int v = 0; v < p.max.size(); ++v)
        if (!std::isfinite(p.max[v])) throw RuntimeFailure("non-finite activation at vertex " + std::to_string(v));
    return p;
}

#define SIRE_INSTANTIATE(T)                                                                                       \
    template struct SphereDomain<T>;                                                                              \
    template class Layer<T>;                                                                                      \
    template class GemConv<T>;                                                                                    \
    template class NormNonlinearity<T>;                                                                           \
    template class GatConv<T>;                                                                                    \
    template class Network<T>;                                                                                    \
    template MultiScaleOutput<T> forward_multiscale(const Network<T>&, const SphereDomain<T>&,                   \
                                                    std::span<const Matrix<T>>, std::vector<Tape<T>>*);           \
    template void backward_multiscale(const Network<T>&, const SphereDomain<T>&, const MultiScaleOutput<T>&,     \
                                      const std::vector<Tape<T>>&, const Vector<T>&, std::span<T>);               \
    template std::vector<Matrix<T>> to_inputs<T>(const std::vector<SphericalSignal>&);                            \
    template Network<T> make_network<T>(const ModelParams&);                                                      \
    template ModelParams to_model_params(const Network<T>&);

SIRE_INSTANTIATE(float)
SIRE_INSTANTIATE(double)

#undef SIRE_INSTANTIATE

}  // namespace sire
