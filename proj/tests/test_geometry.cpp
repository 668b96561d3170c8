#include "doctest.h"

#include "sire/geometry.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace sire;

namespace {

Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(g(rng), g(rng), g(rng));
    } while (v.norm() < 1e-6);
    return v.normalized();
}

double angle_diff(double a, double b)
{
    double d = std::fmod(a - b, kTwoPi);
    if (d > kPi) d -= kTwoPi;
    if (d < -kPi) d += kTwoPi;
    return d;
}

}  // namespace

TEST_CASE("icosphere vertex and face counts")
{
    const auto m0 = build_icosphere(0);
    CHECK(m0.num_vertices() == 12);
    CHECK(m0.num_faces() == 20);

    const auto m1 = build_icosphere(1);
    CHECK(m1.num_vertices() == 42);
    CHECK(m1.num_faces() == 80);
    // 30 * 4 undirected edges, each stored once per direction in the atlas.
    CHECK(m1.num_edges() == 120);
    CHECK(compute_frames(m1).num_directed_edges() == 240);

    CHECK(build_icosphere(3).num_vertices() == 642);
}

TEST_CASE("icosphere rejects out-of-range levels")
{
    CHECK_THROWS_AS(build_icosphere(-1), ValidationError);
    CHECK_THROWS_AS(build_icosphere(kMaxSubdivisions + 1), ValidationError);
}

TEST_CASE("icosphere invariants hold for every level up to 4")
{
    for (int s = 0; s <= 4; ++s) {
        CAPTURE(s);
        const auto mesh = build_icosphere(s);
        const int pow4 = 1 << (2 * s);
        CHECK(mesh.num_vertices() == 10 * pow4 + 2);
        CHECK(mesh.num_faces() == 20 * pow4);
        CHECK(mesh.num_edges() == 30 * pow4);
        CHECK(mesh.num_vertices() - mesh.num_edges() + mesh.num_faces() == 2);

        int degree5 = 0;
        for (int i = 0; i < mesh.num_vertices(); ++i) {
            CHECK(std::abs(mesh.vertices[i].norm() - 1.0) < 1e-12);
            const auto& nb = mesh.neighbors[i];
            CHECK(std::is_sorted(nb.begin(), nb.end()));
            CHECK((nb.size() == 5 || nb.size() == 6));
            if (nb.size() == 5) ++degree5;
            for (int j : nb) {
                const auto& back = mesh.neighbors[j];
                CHECK(std::binary_search(back.begin(), back.end(), i));
            }
        }
        CHECK(degree5 == 12);

        // Closed 2-manifold: every undirected edge borders exactly two faces.
        std::map<std::pair<int, int>, int> edge_faces;
        for (const auto& f : mesh.faces)
            for (int k = 0; k < 3; ++k) {
                const int a = f[k], b = f[(k + 1) % 3];
                ++edge_faces[{std::min(a, b), std::max(a, b)}];
            }
        CHECK(static_cast<int>(edge_faces.size()) == mesh.num_edges());
        for (const auto& [e, count] : edge_faces) CHECK(count == 2);
    }
}

TEST_CASE("icosphere faces are outward oriented")
{
    const auto mesh = build_icosphere(2);
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        CHECK((b - a).cross(c - a).dot(a + b + c) > 0.0);
    }
}

TEST_CASE("tangent frames are orthonormal and right-handed")
{
    for (int s : {0, 1, 3}) {
        const auto mesh = build_icosphere(s);
        const auto atlas = compute_frames(mesh);
        for (int i = 0; i < mesh.num_vertices(); ++i) {
            const Vec3& v = mesh.vertices[i];
            const Vec3& e1 = atlas.e1[i];
            const Vec3& e2 = atlas.e2[i];
            CHECK(std::abs(e1.dot(v)) < 1e-12);
            CHECK(std::abs(e2.dot(v)) < 1e-12);
            CHECK(std::abs(e1.dot(e2)) < 1e-12);
            CHECK(std::abs(e1.norm() - 1.0) < 1e-12);
            CHECK(std::abs(e2.norm() - 1.0) < 1e-12);
            CHECK((e1.cross(e2) - v).norm() < 1e-12);
            CHECK(atlas.reference[i] == mesh.neighbors[i].front());
        }
    }
}

TEST_CASE("neighbour angles follow the log map with zero at the gauge neighbour")
{
    const auto mesh = build_icosphere(2);
    const auto atlas = compute_frames(mesh);
    for (int i = 0; i < mesh.num_vertices(); ++i) {
        const Vec3& v = mesh.vertices[i];
        for (int e = atlas.offsets[i]; e < atlas.offsets[i + 1]; ++e) {
            const int j = atlas.target[e];
            CHECK(j == mesh.neighbors[i][e - atlas.offsets[i]]);
            CHECK(atlas.theta[e] >= 0.0);
            CHECK(atlas.theta[e] < kTwoPi);
            const Vec3 p = (mesh.vertices[j] - v) - (mesh.vertices[j] - v).dot(v) * v;
            const double expected = std::atan2(p.dot(atlas.e2[i]), p.dot(atlas.e1[i]));
            CHECK(std::abs(angle_diff(atlas.theta[e], expected)) < 1e-12);
            if (j == atlas.reference[i]) CHECK(std::abs(angle_diff(atlas.theta[e], 0.0)) < 1e-12);
            CHECK(atlas.target[atlas.reverse[e]] == i);
        }
    }
}

TEST_CASE("icosahedron neighbour angles are equispaced")
{
    const auto mesh = build_icosphere(0);
    const auto atlas = compute_frames(mesh);
    for (int i = 0; i < 12; ++i) {
        std::vector<double> angles(atlas.theta.begin() + atlas.offsets[i], atlas.theta.begin() + atlas.offsets[i + 1]);
        REQUIRE(angles.size() == 5);
        std::sort(angles.begin(), angles.end());
        for (std::size_t k = 0; k < 5; ++k) {
            const double next = k + 1 < 5 ? angles[k + 1] : angles[0] + kTwoPi;
            CHECK(std::abs(next - angles[k] - kTwoPi / 5.0) < 1e-9);
        }
    }
}

TEST_CASE("transport angles match explicit great-circle transport")
{
    const auto mesh = build_icosphere(2);
    const auto atlas = compute_frames(mesh);
    for (int i = 0; i < mesh.num_vertices(); ++i) {
        for (int e = atlas.offsets[i]; e < atlas.offsets[i + 1]; ++e) {
            const int j = atlas.target[e];
            // Rodrigues rotation about v_j x v_i, written out independently.
            const Vec3& a = mesh.vertices[j];
            const Vec3& b = mesh.vertices[i];
            const Vec3 axis = a.cross(b).normalized();
            const double ang = std::atan2(a.cross(b).norm(), a.dot(b));
            const Vec3 t = atlas.e1[j];
            const Vec3 moved = t * std::cos(ang) + axis.cross(t) * std::sin(ang) + axis * axis.dot(t) * (1 - std::cos(ang));
            CHECK(std::abs(moved.dot(b)) < 1e-12);
            const double read = std::atan2(moved.dot(atlas.e2[i]), moved.dot(atlas.e1[i]));
            CHECK(std::abs(angle_diff(atlas.transport[e], read)) < 1e-10);
            CHECK((transport_vector(a, b, t) - moved).norm() < 1e-12);
        }
    }
}

TEST_CASE("transport round trip is the identity")
{
    for (int s : {0, 1, 3}) {
        const auto mesh = build_icosphere(s);
        const auto atlas = compute_frames(mesh);
        for (int e = 0; e < atlas.num_directed_edges(); ++e) {
            const double total = atlas.transport[e] + atlas.transport[atlas.reverse[e]];
            CHECK(std::abs(angle_diff(total, 0.0)) < 1e-10);
        }
        // Vector form: e1(j) to i and back.
        for (int i = 0; i < mesh.num_vertices(); ++i) {
            for (int j : mesh.neighbors[i]) {
                const Vec3 there = transport_vector(mesh.vertices[j], mesh.vertices[i], atlas.e1[j]);
                const Vec3 back = transport_vector(mesh.vertices[i], mesh.vertices[j], there);
                CHECK((back - atlas.e1[j]).norm() < 1e-10);
            }
        }
    }
}

TEST_CASE("gauge rotation shifts angles by the gauge difference")
{
    const auto mesh = build_icosphere(1);
    const auto base = compute_frames(mesh);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, kTwoPi);
    std::vector<double> gauge(mesh.num_vertices());
    for (auto& g : gauge) g = u(rng);
    const auto rotated = compute_frames(mesh, gauge);
    for (int i = 0; i < mesh.num_vertices(); ++i) {
        for (int e = base.offsets[i]; e < base.offsets[i + 1]; ++e) {
            const int j = base.target[e];
            CHECK(std::abs(angle_diff(rotated.theta[e], base.theta[e] - gauge[i])) < 1e-10);
            CHECK(std::abs(angle_diff(rotated.transport[e], base.transport[e] + gauge[j] - gauge[i])) < 1e-10);
        }
    }
}

TEST_CASE("frames are deterministic")
{
    const auto mesh = build_icosphere(3);
    const auto a = compute_frames(mesh);
    const auto b = compute_frames(build_icosphere(3));
    CHECK(a.theta == b.theta);
    CHECK(a.transport == b.transport);
    CHECK(a.reference == b.reference);
}

TEST_CASE("haversine examples")
{
    const Vec3 x = Vec3::UnitX();
    CHECK(haversine(x, x) == 0.0);
    CHECK(haversine(x, -x) == doctest::Approx(kPi).epsilon(1e-15));
    CHECK(haversine(x, Vec3::UnitY()) == doctest::Approx(kPi / 2).epsilon(1e-15));
    CHECK_THROWS_AS(haversine(Vec3(2, 0, 0), x), ValidationError);

    // Stable for tiny separations where acos would lose all digits.
    const Vec3 near = Vec3(1.0, 1e-9, 0.0).normalized();
    CHECK(haversine(x, near) == doctest::Approx(1e-9).epsilon(1e-6));
}

TEST_CASE("haversine is a metric on random triples")
{
    std::mt19937_64 rng(11);
    for (int k = 0; k < 2000; ++k) {
        const Vec3 a = random_unit(rng), b = random_unit(rng), c = random_unit(rng);
        const double ab = haversine(a, b), ba = haversine(b, a);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
        CHECK(ab >= 0.0);
        CHECK(ab <= kPi);
        CHECK(haversine(a, a) < 1e-9);
        CHECK(haversine(a, c) <= ab + haversine(b, c) + 1e-9);
    }
}

TEST_CASE("nearest vertex examples")
{
    const auto mesh = build_icosphere(3);
    for (int k = 0; k < mesh.num_vertices(); k += 37) CHECK(nearest_vertex(mesh, mesh.vertices[k]) == k);

    for (const auto& f : mesh.faces) {
        const Vec3 centroid = (mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]).normalized();
        const int v = nearest_vertex(mesh, centroid);
        CHECK((v == f[0] || v == f[1] || v == f[2]));
    }
    CHECK_THROWS_AS(nearest_vertex(mesh, Vec3(0.5, 0, 0)), ValidationError);
}

TEST_CASE("nearest vertex distance is bounded by the face circumradius")
{
    const auto mesh = build_icosphere(3);
    double bound = 0.0;
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        Vec3 centre = (b - a).cross(c - a).normalized();
        if (centre.dot(a) < 0) centre = -centre;
        bound = std::max({bound, std::acos(std::clamp(centre.dot(a), -1.0, 1.0)),
                          std::acos(std::clamp(centre.dot(b), -1.0, 1.0)),
                          std::acos(std::clamp(centre.dot(c), -1.0, 1.0))});
    }
    CHECK(max_face_circumradius(mesh) == doctest::Approx(bound).epsilon(1e-9));

    std::mt19937_64 rng(5);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const Vec3 d = random_unit(rng);
        const int v = nearest_vertex(mesh, d);
        const double dist = haversine(d, mesh.vertices[v]);
        worst = std::max(worst, dist);
        // Brute-force argmin with lowest-index ties.
        int best = 0;
        for (int i = 1; i < mesh.num_vertices(); ++i)
            if (haversine(d, mesh.vertices[i]) < haversine(d, mesh.vertices[best])) best = i;
        CHECK(v == best);
    }
    CHECK(worst <= bound + 1e-12);
}

TEST_CASE("icosahedral symmetries permute the vertex set and commute with nearest_vertex")
{
    const auto rotations = icosahedral_rotations();
    REQUIRE(rotations.size() == 60);
    for (std::size_t a = 0; a < rotations.size(); ++a) {
        const Mat3& r = rotations[a];
        CHECK((r * r.transpose() - Mat3::Identity()).norm() < 1e-12);
        CHECK(r.determinant() == doctest::Approx(1.0));
        for (std::size_t b = a + 1; b < rotations.size(); ++b) CHECK((r - rotations[b]).norm() > 1e-6);
    }

    const auto mesh = build_icosphere(3);
    std::mt19937_64 rng(9);
    for (std::size_t a = 0; a < rotations.size(); a += 7) {
        const auto perm = vertex_permutation(mesh, rotations[a]);
        CHECK(std::set<int>(perm.begin(), perm.end()).size() == perm.size());
        for (int k = 0; k < 100; ++k) {
            const Vec3 d = random_unit(rng);
            CHECK(nearest_vertex(mesh, rotations[a] * d) == perm[nearest_vertex(mesh, d)]);
        }
    }
    const Mat3 generic = Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()).toRotationMatrix();
    CHECK_THROWS_AS(vertex_permutation(mesh, generic), ValidationError);
}

TEST_CASE("obj export lists every vertex and face")
{
    const auto mesh = build_icosphere(1);
    std::ostringstream out;
    write_obj(mesh, out);
    const std::string text = out.str();
    CHECK(std::count(text.begin(), text.end(), 'v') >= mesh.num_vertices());
    int v_lines = 0, f_lines = 0;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("v ", 0) == 0) ++v_lines;
        if (line.rfind("f ", 0) == 0) ++f_lines;
    }
    CHECK(v_lines == 42);
    CHECK(f_lines == 80);
}
