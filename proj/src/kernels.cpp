#include "sire/kernels.hpp"

#include <cmath>

namespace sire {

template <typename T>
EdgeTable<T> EdgeTable<T>::build(const TangentFrameAtlas& atlas, int max_order)
{
    require(max_order >= 0, "max order must be non-negative");
    EdgeTable t;
    t.num_vertices = static_cast<int>(atlas.e1.size());
    t.max_order = max_order;
    t.offsets = atlas.offsets;
    t.target = atlas.target;
    t.reverse = atlas.reverse;
    const int edges = atlas.num_directed_edges();
    t.cos_phi.assign(max_order, std::vector<T>(edges));
    t.sin_phi.assign(max_order, std::vector<T>(edges));
    t.cos_theta.assign(max_order, std::vector<T>(edges));
    t.sin_theta.assign(max_order, std::vector<T>(edges));
    for (int k = 1; k <= max_order; ++k) {
        for (int e = 0; e < edges; ++e) {
            const double phi = atlas.transport[e] - atlas.theta[e];
            t.cos_phi[k - 1][e] = static_cast<T>(std::cos(k * phi));
            t.sin_phi[k - 1][e] = static_cast<T>(std::sin(k * phi));
            t.cos_theta[k - 1][e] = static_cast<T>(std::cos(k * atlas.theta[e]));
            t.sin_theta[k - 1][e] = static_cast<T>(std::sin(k * atlas.theta[e]));
        }
    }
    return t;
}

AggregationPlan AggregationPlan::make(std::vector<FieldSlot> in_fields, std::vector<int> out_orders, int in_dim)
{
    AggregationPlan p;
    p.in_fields = std::move(in_fields);
    p.out_orders = std::move(out_orders);
    p.in_dim = in_dim;
    int col = 0;
    p.block.resize(p.in_fields.size());
    for (std::size_t f = 0; f < p.in_fields.size(); ++f) {
        const int d = p.in_fields[f].dim();
        for (int n : p.out_orders) {
            p.block[f].push_back(col);
            col += n == 0 ? d : 2 * d;
        }
    }
    p.agg_dim = col;
    return p;
}

namespace {

template <typename T>
void aggregate_vertex(const EdgeTable<T>& edges, const AggregationPlan& plan, const Matrix<T>& in, T* out, int i)
{
    const int nf = static_cast<int>(plan.in_fields.size());
    const int no = static_cast<int>(plan.out_orders.size());
    for (int e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e) {
        const T* src = in.row(edges.target[e]).data();
        for (int f = 0; f < nf; ++f) {
            const FieldSlot& slot = plan.in_fields[f];
            T y0 = src[slot.offset];
            T y1 = 0;
            if (slot.order > 0) {
                const T c = edges.cos_phi[slot.order - 1][e];
                const T s = edges.sin_phi[slot.order - 1][e];
                const T x0 = y0, x1 = src[slot.offset + 1];
                y0 = c * x0 - s * x1;
                y1 = s * x0 + c * x1;
            }
            for (int o = 0; o < no; ++o) {
                const int order = plan.out_orders[o];
                T* b = out + plan.block[f][o];
                if (order == 0) {
                    b[0] += y0;
                    if (slot.order > 0) b[1] += y1;
                    continue;
                }
                const T cn = edges.cos_theta[order - 1][e];
                const T sn = edges.sin_theta[order - 1][e];
                if (slot.order == 0) {
                    b[0] += cn * y0;
                    b[1] += sn * y0;
                } else {
                    b[0] += cn * y0;
                    b[1] += cn * y1;
                    b[2] += sn * y0;
                    b[3] += sn * y1;
                }
            }
        }
    }
}

// Same sums as aggregate_vertex, accumulated per output order over the whole
// transported row so the inner loops vectorise. acc holds one row for order
// 0, then a cos and a sin row per nonzero order, each in_dim wide.
template <typename T>
void aggregate_vertex_rows(const EdgeTable<T>& edges, const AggregationPlan& plan, const Matrix<T>& in, T* out,
                           int i, std::vector<T>& y, std::vector<T>& acc)
{
    const int nf = static_cast<int>(plan.in_fields.size());
    const int no = static_cast<int>(plan.out_orders.size());
    const int d = plan.in_dim;
    y.resize(d);
    acc.assign(static_cast<std::size_t>(d) * (2 * no), T(0));
    for (int e = edges.offsets[i]; e < edges.offsets[i + 1]; ++e) {
        const T* src = in.row(edges.target[e]).data();
        for (int f = 0; f < nf; ++f) {
            const FieldSlot& slot = plan.in_fields[f];
            if (slot.order == 0) {
                y[slot.offset] = src[slot.offset];
                continue;
            }
            const T c = edges.cos_phi[slot.order - 1][e];
            const T s = edges.sin_phi[slot.order - 1][e];
            const T x0 = src[slot.offset], x1 = src[slot.offset + 1];
            y[slot.offset] = c * x0 - s * x1;
            y[slot.offset + 1] = s * x0 + c * x1;
        }
        for (int o = 0; o < no; ++o) {
            const int order = plan.out_orders[o];
            T* a = acc.data() + static_cast<std::size_t>(2 * o) * d;
            if (order == 0) {
                for (int k = 0; k < d; ++k) a[k] += y[k];
                continue;
            }
            const T cn = edges.cos_theta[order - 1][e];
            const T sn = edges.sin_theta[order - 1][e];
            T* b = a + d;
            for (int k = 0; k < d; ++k) {
                a[k] += cn * y[k];
                b[k] += sn * y[k];
            }
        }
    }
    for (int f = 0; f < nf; ++f) {
        const FieldSlot& slot = plan.in_fields[f];
        for (int o = 0; o < no; ++o) {
            const T* a = acc.data() + static_cast<std::size_t>(2 * o) * d + slot.offset;
            const T* b = a + d;
            T* dst = out + plan.block[f][o];
            if (plan.out_orders[o] == 0) {
                dst[0] = a[0];
                if (slot.order > 0) dst[1] = a[1];
            } else if (slot.order == 0) {
                dst[0] = a[0];
                dst[1] = b[0];
            } else {
                dst[0] = a[0];
                dst[1] = a[1];
                dst[2] = b[0];
                dst[3] = b[1];
            }
        }
    }
}

// Vertex j collects from every i with an edge i -> j.
template <typename T>
void scatter_back_vertex(const EdgeTable<T>& edges, const AggregationPlan& plan, const Matrix<T>& d_agg, T* dst,
                         int j)
{
    const int nf = static_cast<int>(plan.in_fields.size());
    const int no = static_cast<int>(plan.out_orders.size());
    for (int ej = edges.offsets[j]; ej < edges.offsets[j + 1]; ++ej) {
        const int i = edges.target[ej];
        const int e = edges.reverse[ej];
        const T* g = d_agg.row(i).data();
        for (int f = 0; f < nf; ++f) {
            const FieldSlot& slot = plan.in_fields[f];
            T g0 = 0, g1 = 0;
            for (int o = 0; o < no; ++o) {
                const int order = plan.out_orders[o];
                const T* b = g + plan.block[f][o];
                if (order == 0) {
                    g0 += b[0];
                    if (slot.order > 0) g1 += b[1];
                    continue;
                }
                const T cn = edges.cos_theta[order - 1][e];
                const T sn = edges.sin_theta[order - 1][e];
                if (slot.order == 0) {
                    g0 += cn * b[0] + sn * b[1];
                } else {
                    g0 += cn * b[0] + sn * b[2];
                    g1 += cn * b[1] + sn * b[3];
                }
            }
            if (slot.order == 0) {
                dst[slot.offset] += g0;
            } else {
                const T c = edges.cos_phi[slot.order - 1][e];
                const T s = edges.sin_phi[slot.order - 1][e];
                dst[slot.offset] += c * g0 + s * g1;
                dst[slot.offset + 1] += -s * g0 + c * g1;
            }
        }
    }
}

}  // namespace

template <typename T>
void gem_aggregate(const EdgeTable<T>& edges, const AggregationPlan& plan, const Matrix<T>& in, Matrix<T>& agg)
{
    const int n = edges.num_vertices;
    agg.setZero(n, plan.agg_dim);
#pragma omp parallel
    {
        std::vector<T> y, acc;
#pragma omp for schedule(static)
        for (int i = 0; i < n; ++i) aggregate_vertex_rows(edges, plan, in, agg.row(i).data(), i, y, acc);
    }
}

template <typename T>
void gem_aggregate_reference(const EdgeTable<T>& edges, const AggregationPlan& plan, const Matrix<T>& in,
                             Matrix<T>& agg)
{
    agg.setZero(edges.num_vertices, plan.agg_dim);
    for (int i = 0; i < edges.num_vertices; ++i) aggregate_vertex(edges, plan, in, agg.row(i).data(), i);
}

template <typename T>
void gem_aggregate_backward(const EdgeTable<T>& edges, const AggregationPlan& plan, const Matrix<T>& d_agg,
                            Matrix<T>& d_in)
{
    const int n = edges.num_vertices;
    d_in.setZero(n, plan.in_dim);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) scatter_back_vertex(edges, plan, d_agg, d_in.row(j).data(), j);
}

template <typename T>
void gem_aggregate_backward_reference(const EdgeTable<T>& edges, const AggregationPlan& plan,
                                      const Matrix<T>& d_agg, Matrix<T>& d_in)
{
    d_in.setZero(edges.num_vertices, plan.in_dim);
    for (int j = 0; j < edges.num_vertices; ++j) scatter_back_vertex(edges, plan, d_agg, d_in.row(j).data(), j);
}

void sample_rays(const ImageVolume& volume, const Vec3& centre, double radius, std::span<const Vec3> dirs,
                 int channels, Matrix<double>& out)
{
    const int n = static_cast<int>(dirs.size());
    out.resize(n, channels);
#pragma omp parallel for schedule(static)
    for (int v = 0; v < n; ++v) {
        for (int k = 0; k < channels; ++k) {
            const double t = (k + 1) * radius / channels;
            out(v, k) = interpolate(volume, centre + t * dirs[v]);
        }
    }
}

void sample_rays_reference(const ImageVolume& volume, const Vec3& centre, double radius,
                           std::span<const Vec3> dirs, int channels, Matrix<double>& out)
{
    out.resize(static_cast<Eigen::Index>(dirs.size()), channels);
    for (std::size_t v = 0; v < dirs.size(); ++v)
        for (int k = 0; k < channels; ++k)
            out(static_cast<Eigen::Index>(v), k) = interpolate(volume, centre + ((k + 1) * radius / channels) * dirs[v]);
}

template struct EdgeTable<float>;
template struct EdgeTable<double>;
template void gem_aggregate(const EdgeTable<float>&, const AggregationPlan&, const Matrix<float>&, Matrix<float>&);
template void gem_aggregate_reference(const EdgeTable<float>&, const AggregationPlan&, const Matrix<float>&, Matrix<float>&);
template void gem_aggregate_backward(const EdgeTable<float>&, const AggregationPlan&, const Matrix<float>&, Matrix<float>&);
template void gem_aggregate_backward_reference(const EdgeTable<float>&, const AggregationPlan&, const Matrix<float>&, Matrix<float>&);
template void gem_aggregate(const EdgeTable<double>&, const AggregationPlan&, const Matrix<double>&, Matrix<double>&);
template void gem_aggregate_reference(const EdgeTable<double>&, const AggregationPlan&, const Matrix<double>&, Matrix<double>&);
template void gem_aggregate_backward(const EdgeTable<double>&, const AggregationPlan&, const Matrix<double>&, Matrix<double>&);
template void gem_aggregate_backward_reference(const EdgeTable<double>&, const AggregationPlan&, const Matrix<double>&, Matrix<double>&);

}  // namespace sire
