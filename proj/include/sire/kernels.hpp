#pragma once

// Data-parallel inner loops. Every kernel here has an OpenMP version used in
// production and a plain serial reference used by the tests and the
// benchmark; both write disjoint outputs per vertex, so results do not
// depend on the thread count.

#include "sire/common.hpp"
#include "sire/geometry.hpp"
#include "sire/volume.hpp"

#include <span>
#include <vector>

namespace sire {

/// Per-directed-edge trigonometric tables for GEM convolution, in the CSR
/// order of a TangentFrameAtlas.
template <typename T>
struct EdgeTable {
    int num_vertices = 0;
    int max_order = 0;
    std::vector<int> offsets;
    std::vector<int> target;
    std::vector<int> reverse;
    /// cos/sin of k * (g_{j->i} - theta_ij), k = 1..max_order, stored [k-1][edge].
    std::vector<std::vector<T>> cos_phi, sin_phi;
    /// cos/sin of k * theta_ij, k = 1..max_order.
    std::vector<std::vector<T>> cos_theta, sin_theta;

    static EdgeTable build(const TangentFrameAtlas& atlas, int max_order);
};

/// Field layout of a feature matrix row: type-0 fields occupy one column,
/// type-n (n >= 1) fields two.
struct FieldSlot {
    int order = 0;
    int offset = 0;
    int dim() const { return order == 0 ? 1 : 2; }
};

/// Column layout of the aggregated neighbourhood features feeding the dense
/// part of a GEM layer. For input field f and output order n the block holds
/// sum_j cos(n theta) y_j (and sum_j sin(n theta) y_j when n >= 1), where
/// y_j = rho_m(g_{j->i} - theta_ij) f(j).
struct AggregationPlan {
    std::vector<FieldSlot> in_fields;
    std::vector<int> out_orders;
    /// [field][out order index] -> column of the cos block; sin block follows it.
    std::vector<std::vector<int>> block;
    int in_dim = 0;
    int agg_dim = 0;

    static AggregationPlan make(std::vector<FieldSlot> in_fields, std::vector<int> out_orders, int in_dim);
};

template <typename T>
void gem_aggregate(const EdgeTable<T>& edges, const AggregationPlan& plan, const Matrix<T>& in, Matrix<T>& agg);

template <typename T>
void gem_aggregate_reference(const EdgeTable<T>& edges, const AggregationPlan& plan, const Matrix<T>& in,
                             Matrix<T>& agg);

/// Adjoint of gem_aggregate: d_in = A^T d_agg (overwrites d_in).
template <typename T>
void gem_aggregate_backward(const EdgeTable<T>& edges, const AggregationPlan& plan, const Matrix<T>& d_agg,
                            Matrix<T>& d_in);

template <typename T>
void gem_aggregate_backward_reference(const EdgeTable<T>& edges, const AggregationPlan& plan,
                                      const Matrix<T>& d_agg, Matrix<T>& d_in);

/// Ray casting: out(v, k) = interpolate(volume, centre + (k+1) r / c * dirs[v]).
void sample_rays(const ImageVolume& volume, const Vec3& centre, double radius, std::span<const Vec3> dirs,
                 int channels, Matrix<double>& out);

void sample_rays_reference(const ImageVolume& volume, const Vec3& centre, double radius,
                           std::span<const Vec3> dirs, int channels, Matrix<double>& out);

}  // namespace sire
