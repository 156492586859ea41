#include "silhlift/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace silhlift {

double TriangleMesh::triangle_area(std::size_t t) const
{
    const auto& tri = triangles[t];
    const Vec3& a = vertices[tri[0]];
    return 0.5 * (vertices[tri[1]] - a).cross(vertices[tri[2]] - a).norm();
}

double TriangleMesh::surface_area() const
{
    double s = 0;
    for (std::size_t t = 0; t < triangles.size(); ++t)
        s += triangle_area(t);
    return s;
}

double TriangleMesh::signed_volume() const
{
    double v = 0;
    for (const auto& t : triangles)
        v += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]]));
    return v / 6.0;
}

Vec3 TriangleMesh::bbox_min() const
{
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    for (const auto& v : vertices)
        lo = lo.cwiseMin(v);
    return lo;
}

Vec3 TriangleMesh::bbox_max() const
{
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
    for (const auto& v : vertices)
        hi = hi.cwiseMax(v);
    return hi;
}

double TriangleMesh::bbox_diagonal() const
{
    if (vertices.empty())
        return 0.0;
    return (bbox_max() - bbox_min()).norm();
}

void TriangleMesh::check() const
{
    const int n = static_cast<int>(vertices.size());
    for (const auto& v : vertices)
        if (!v.allFinite())
            throw InputError("mesh has non-finite vertex");
    for (const auto& t : triangles)
        for (int i : t)
            if (i < 0 || i >= n)
                throw InputError("mesh triangle index out of range: " + std::to_string(i));
}

void TriangleMesh::transform(const Mat3& A, const Vec3& t)
{
    for (auto& v : vertices)
        v = A * v + t;
    if (A.determinant() < 0)
        for (auto& tri : triangles)
            std::swap(tri[1], tri[2]);
}

void TriangleMesh::append(const TriangleMesh& other)
{
    const int base = static_cast<int>(vertices.size());
    vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
    for (auto t : other.triangles)
        triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
}

EdgeAudit audit_edges(const TriangleMesh& m)
{
    std::map<std::pair<int, int>, int> undirected;
    std::map<std::pair<int, int>, int> directed;
    for (const auto& t : m.triangles)
        for (int e = 0; e < 3; ++e) {
            const int a = t[e], b = t[(e + 1) % 3];
            ++undirected[{std::min(a, b), std::max(a, b)}];
            ++directed[{a, b}];
        }
    EdgeAudit audit;
    audit.edges = undirected.size();
    for (const auto& [e, c] : undirected)
        if (c != 2)
            ++audit.non_manifold;
    for (const auto& [e, c] : directed)
        if (c != 1)
            ++audit.bad_orientation;
    return audit;
}

TriangleMesh read_obj(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open mesh file: " + path.string());
    TriangleMesh m;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#')
            continue;
        if (tag == "v") {
            Vec3 v;
            if (!(ls >> v.x() >> v.y() >> v.z()))
                throw InputError(path.string() + ":" + std::to_string(line_no) + ": malformed vertex");
            m.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                // "i", "i/t", "i/t/n", "i//n"
                const int i = std::stoi(tok.substr(0, tok.find('/')));
                idx.push_back(i < 0 ? static_cast<int>(m.vertices.size()) + i : i - 1);
            }
            if (idx.size() < 3)
                throw InputError(path.string() + ":" + std::to_string(line_no) + ": face with fewer than 3 vertices");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k)
                m.triangles.push_back({idx[0], idx[k], idx[k + 1]});
        }
    }
    m.check();
    return m;
}

void write_obj(const TriangleMesh& m, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw InputError("cannot write mesh file: " + path.string());
    out << std::setprecision(17);
    for (const auto& v : m.vertices)
        out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& t : m.triangles)
        out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

namespace {
template <typename T>
void put_le(std::ostream& out, T value)
{
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}
template <typename T>
T get_le(std::istream& in)
{
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}
} // namespace

void write_ply(const TriangleMesh& m, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw InputError("cannot write mesh file: " + path.string());
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << m.vertices.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\n"
        << "element face " << m.triangles.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    for (const auto& v : m.vertices) {
        put_le(out, v.x());
        put_le(out, v.y());
        put_le(out, v.z());
    }
    for (const auto& t : m.triangles) {
        put_le<std::uint8_t>(out, 3);
        for (int i : t)
            put_le<std::int32_t>(out, i);
    }
}

TriangleMesh read_ply(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("cannot open mesh file: " + path.string());
    std::string line;
    std::size_t nv = 0, nf = 0;
    while (std::getline(in, line)) {
        if (line.rfind("element vertex", 0) == 0)
            nv = std::stoul(line.substr(15));
        else if (line.rfind("element face", 0) == 0)
            nf = std::stoul(line.substr(13));
        else if (line == "end_header")
            break;
    }
    TriangleMesh m;
    m.vertices.resize(nv);
    for (auto& v : m.vertices) {
        v.x() = get_le<double>(in);
        v.y() = get_le<double>(in);
        v.z() = get_le<double>(in);
    }
    for (std::size_t f = 0; f < nf; ++f) {
        if (get_le<std::uint8_t>(in) != 3)
            throw InputError("only triangle faces are supported in PLY: " + path.string());
        std::array<int, 3> t{};
        for (int& i : t)
            i = get_le<std::int32_t>(in);
        m.triangles.push_back(t);
    }
    if (!in)
        throw InputError("truncated PLY file: " + path.string());
    m.check();
    return m;
}

} // namespace silhlift
