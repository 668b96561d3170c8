#include "sire/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <utility>

namespace sire {

namespace {

std::vector<Vec3> seed_vertices()
{
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1},
    };
    for (auto& p : v) p.normalize();
    return v;
}

const std::vector<std::array<int, 3>> kSeedFaces = {
    {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
    {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
    {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
    {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1},
};

Vec3 tangent_projection(const Vec3& normal, const Vec3& d) { return d - d.dot(normal) * normal; }

}  // namespace

int IcosphereMesh::num_edges() const
{
    std::size_t degree_sum = 0;
    for (const auto& n : neighbors) degree_sum += n.size();
    return static_cast<int>(degree_sum / 2);
}

IcosphereMesh build_icosphere(int subdivisions)
{
    if (subdivisions < 0 || subdivisions > kMaxSubdivisions)
        throw ValidationError("icosphere subdivision level must be in [0, " +
                              std::to_string(kMaxSubdivisions) + "], got " +
                              std::to_string(subdivisions));

    IcosphereMesh mesh;
    mesh.subdivisions = subdivisions;
    mesh.vertices = seed_vertices();
    mesh.faces = kSeedFaces;

    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto split = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const int idx = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(mesh.faces.size() * 4);
        for (const auto& f : mesh.faces) {
            const int ab = split(f[0], f[1]);
            const int bc = split(f[1], f[2]);
            const int ca = split(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        mesh.faces = std::move(next);
    }

    mesh.neighbors.assign(mesh.vertices.size(), {});
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            const int a = f[k];
            const int b = f[(k + 1) % 3];
            mesh.neighbors[a].push_back(b);
            mesh.neighbors[b].push_back(a);
        }
    }
    for (auto& n : mesh.neighbors) {
        std::sort(n.begin(), n.end());
        n.erase(std::unique(n.begin(), n.end()), n.end());
    }
    return mesh;
}

TangentFrameAtlas compute_frames(const IcosphereMesh& mesh)
{
    const std::vector<double> zero(mesh.vertices.size(), 0.0);
    return compute_frames(mesh, zero);
}

TangentFrameAtlas compute_frames(const IcosphereMesh& mesh, std::span<const double> gauge_angles)
{
    const int n = mesh.num_vertices();
    require(static_cast<int>(gauge_angles.size()) == n, "one gauge angle per vertex required");

    TangentFrameAtlas atlas;
    atlas.e1.resize(n);
    atlas.e2.resize(n);
    atlas.reference.resize(n);
    atlas.offsets.assign(n + 1, 0);

    for (int i = 0; i < n; ++i) {
        const Vec3& v = mesh.vertices[i];
        const int ref = mesh.neighbors[i].front();
        const Vec3 p = tangent_projection(v, mesh.vertices[ref] - v);
        if (p.norm() < 1e-12) throw RuntimeFailure("degenerate tangent projection at vertex " + std::to_string(i));
        const Vec3 base1 = p.normalized();
        const Vec3 base2 = v.cross(base1);
        const double c = std::cos(gauge_angles[i]);
        const double s = std::sin(gauge_angles[i]);
        atlas.e1[i] = c * base1 + s * base2;
        atlas.e2[i] = v.cross(atlas.e1[i]);
        atlas.reference[i] = ref;
        atlas.offsets[i + 1] = atlas.offsets[i] + static_cast<int>(mesh.neighbors[i].size());
    }

    const int edges = atlas.offsets[n];
    atlas.target.resize(edges);
    atlas.reverse.resize(edges);
    atlas.theta.resize(edges);
    atlas.transport.resize(edges);

    for (int i = 0; i < n; ++i) {
        const Vec3& vi = mesh.vertices[i];
        for (int k = 0; k < static_cast<int>(mesh.neighbors[i].size()); ++k) {
            const int e = atlas.offsets[i] + k;
            const int j = mesh.neighbors[i][k];
            const Vec3& vj = mesh.vertices[j];
            atlas.target[e] = j;

            const auto& nj = mesh.neighbors[j];
            const auto pos = std::lower_bound(nj.begin(), nj.end(), i);
            atlas.reverse[e] = atlas.offsets[j] + static_cast<int>(pos - nj.begin());

            const Vec3 p = tangent_projection(vi, vj - vi);
            if (p.norm() < 1e-12) throw RuntimeFailure("degenerate log map on edge " + std::to_string(e));
            atlas.theta[e] = wrap_angle(std::atan2(p.dot(atlas.e2[i]), p.dot(atlas.e1[i])));
        }
    }
    // Frames for j must be complete before the transport angles are read.
    for (int i = 0; i < n; ++i) {
        for (int e = atlas.offsets[i]; e < atlas.offsets[i + 1]; ++e) {
            const int j = atlas.target[e];
            const Vec3 t = transport_vector(mesh.vertices[j], mesh.vertices[i], atlas.e1[j]);
            atlas.transport[e] = wrap_angle(std::atan2(t.dot(atlas.e2[i]), t.dot(atlas.e1[i])));
        }
    }
    return atlas;
}

double haversine(const Vec3& u, const Vec3& v)
{
    if (!is_unit(u) || !is_unit(v)) throw ValidationError("haversine expects unit vectors");
    // FMA contraction can leave u x u slightly non-zero.
    if (u == v) return 0.0;
    return std::atan2(u.cross(v).norm(), u.dot(v));
}

int nearest_vertex(const IcosphereMesh& mesh, const Vec3& direction)
{
    if (!is_unit(direction)) throw ValidationError("nearest_vertex expects a unit direction");
    // Great-circle distance is monotone in the dot product.
    int best = 0;
    double best_dot = -2.0;
    for (int k = 0; k < mesh.num_vertices(); ++k) {
        const double d = mesh.vertices[k].dot(direction);
        if (d > best_dot) {
            best_dot = d;
            best = k;
        }
    }
    return best;
}

Vec3 transport_vector(const Vec3& from, const Vec3& to, const Vec3& tangent)
{
    const Vec3 axis = from.cross(to);
    const double s = axis.norm();
    if (s < 1e-15) return tangent;
    const double angle = std::atan2(s, from.dot(to));
    return Eigen::AngleAxisd(angle, axis / s) * tangent;
}

std::vector<Mat3> icosahedral_rotations()
{
    const auto verts = seed_vertices();
    const auto mesh = build_icosphere(0);
    auto frame = [&](int a, int b) {
        Mat3 f;
        const Vec3 u1 = verts[a];
        const Vec3 u2 = tangent_projection(u1, verts[b]).normalized();
        f.col(0) = u1;
        f.col(1) = u2;
        f.col(2) = u1.cross(u2);
        return f;
    };
    const Mat3 source = frame(0, mesh.neighbors[0].front());
    std::vector<Mat3> rotations;
    rotations.reserve(60);
    for (int a = 0; a < 12; ++a)
        for (int b : mesh.neighbors[a]) rotations.push_back(frame(a, b) * source.transpose());
    return rotations;
}

std::vector<int> vertex_permutation(const IcosphereMesh& mesh, const Mat3& rotation)
{
    std::vector<int> perm(mesh.vertices.size());
    for (int k = 0; k < mesh.num_vertices(); ++k) {
        const Vec3 r = (rotation * mesh.vertices[k]).normalized();
        const int j = nearest_vertex(mesh, r);
        if ((mesh.vertices[j] - r).norm() > 1e-9)
            throw ValidationError("rotation is not a symmetry of the icosphere");
        perm[k] = j;
    }
    return perm;
}

double max_face_circumradius(const IcosphereMesh& mesh)
{
    double worst = 0.0;
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        // On the sphere the circumcentre is the normal of the plane through the corners.
        Vec3 centre = (b - a).cross(c - a).normalized();
        if (centre.dot(a) < 0) centre = -centre;
        worst = std::max(worst, haversine(centre, a));
    }
    return worst;
}

void write_obj(const IcosphereMesh& mesh, std::ostream& out)
{
    out << "# icosphere, subdivisions " << mesh.subdivisions << "\n";
    out.precision(17);
    for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << "\n";
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << "\n";
}

}  // namespace sire
