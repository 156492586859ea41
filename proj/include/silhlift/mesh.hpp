#pragma once

#include "silhlift/common.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace silhlift {

/// Triangle soup with shared vertices. Triangles are counter-clockwise when
/// seen from outside.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;

    bool empty() const { return triangles.empty(); }
    double triangle_area(std::size_t t) const;
    double surface_area() const;
    double signed_volume() const;
    Vec3 bbox_min() const;
    Vec3 bbox_max() const;
    double bbox_diagonal() const;

    // Throws InputError on out-of-range indices or non-finite vertices.
    void check() const;

    void transform(const Mat3& A, const Vec3& t); // v <- A v + t
    void append(const TriangleMesh& other);
};

// Counts of undirected edges by the number of incident triangles; a closed
// 2-manifold surface has every edge used exactly twice and every directed
// edge exactly once.
struct EdgeAudit {
    std::size_t edges = 0;
    std::size_t non_manifold = 0;   // undirected edges not used exactly twice
    std::size_t bad_orientation = 0; // directed edges used more than once
    bool closed() const { return non_manifold == 0 && bad_orientation == 0; }
};
EdgeAudit audit_edges(const TriangleMesh& m);

TriangleMesh read_obj(const std::filesystem::path& path);
void write_obj(const TriangleMesh& m, const std::filesystem::path& path);
void write_ply(const TriangleMesh& m, const std::filesystem::path& path);
TriangleMesh read_ply(const std::filesystem::path& path);

} // namespace silhlift
