#pragma once

// Discrete spherical domain: icosphere meshes, per-vertex tangent frames,
// neighbour log-map angles and parallel-transport angles.
//
// Seed icosahedron (before normalisation), phi = (1 + sqrt 5) / 2:
//    0:(-1, phi, 0)   1:( 1, phi, 0)   2:(-1,-phi, 0)   3:( 1,-phi, 0)
//    4:( 0,-1, phi)   5:( 0, 1, phi)   6:( 0,-1,-phi)   7:( 0, 1,-phi)
//    8:( phi, 0,-1)   9:( phi, 0, 1)  10:(-phi, 0,-1)  11:(-phi, 0, 1)
// Subdivision splits every triangle into four at the edge midpoints, which are
// reprojected onto the unit sphere. New vertices are appended in face order.
//
// Angle convention: all angles act counter-clockwise in the (e1, e2) basis of
// a tangent frame, e1 x e2 = outward normal.

#include "sire/common.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace sire {

inline constexpr int kMaxSubdivisions = 7;

struct IcosphereMesh {
    int subdivisions = 0;
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    /// Neighbour lists, each sorted ascending by vertex index.
    std::vector<std::vector<int>> neighbors;

    int num_vertices() const { return static_cast<int>(vertices.size()); }
    int num_faces() const { return static_cast<int>(faces.size()); }
    /// Number of undirected edges.
    int num_edges() const;
};

/// Per-vertex gauges plus per-directed-edge angles, stored in CSR order:
/// edges of vertex i occupy [offsets[i], offsets[i+1]) and follow
/// mesh.neighbors[i].
struct TangentFrameAtlas {
    std::vector<Vec3> e1;
    std::vector<Vec3> e2;
    /// Index of the neighbour that fixes e1 at each vertex (the gauge).
    std::vector<int> reference;

    std::vector<int> offsets;
    std::vector<int> target;     ///< j for edge (i -> j)
    std::vector<int> reverse;    ///< index of edge (j -> i)
    std::vector<double> theta;   ///< angle of j in the tangent plane of i, [0, 2pi)
    std::vector<double> transport;  ///< g_{j->i}: frame-j coordinates rotate by this angle when moved to i

    int num_directed_edges() const { return static_cast<int>(target.size()); }
};

IcosphereMesh build_icosphere(int subdivisions);

/// Frames with the lowest-index neighbour as gauge.
TangentFrameAtlas compute_frames(const IcosphereMesh& mesh);

/// Frames whose e1 is additionally rotated by `gauge_angles[i]` at every
/// vertex. All edge angles are recomputed from geometry.
TangentFrameAtlas compute_frames(const IcosphereMesh& mesh, std::span<const double> gauge_angles);

/// Great-circle distance between unit vectors, in [0, pi].
double haversine(const Vec3& u, const Vec3& v);

/// Vertex minimising the great-circle distance to `direction`; ties go to
/// the lowest index.
int nearest_vertex(const IcosphereMesh& mesh, const Vec3& direction);

/// Rotates a tangent vector at `from` onto the tangent plane at `to` along
/// the connecting great circle.
Vec3 transport_vector(const Vec3& from, const Vec3& to, const Vec3& tangent);

/// The 60 proper rotations mapping the seed icosahedron onto itself.
std::vector<Mat3> icosahedral_rotations();

/// perm[k] = index of the vertex at rotation * vertices[k]. Throws if the
/// rotation is not a symmetry of the mesh.
std::vector<int> vertex_permutation(const IcosphereMesh& mesh, const Mat3& rotation);

/// Largest great-circle distance from a face's circumcentre to its corners.
double max_face_circumradius(const IcosphereMesh& mesh);

void write_obj(const IcosphereMesh& mesh, std::ostream& out);

}  // namespace sire
