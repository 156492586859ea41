#include "silhlift/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace silhlift {

using nlohmann::json;

const KeypointObservation* Instance::find_keypoint(int index) const
{
    for (const auto& k : keypoints)
        if (k.index == index)
            return &k;
    return nullptr;
}

const Instance& AnnotatedCollection::by_id(const std::string& id) const
{
    if (auto i = find(id))
        return instances[*i];
    throw InputError("unknown instance id: " + id);
}

std::optional<std::size_t> AnnotatedCollection::find(const std::string& id) const
{
    for (std::size_t i = 0; i < instances.size(); ++i)
        if (instances[i].id == id)
            return i;
    return std::nullopt;
}

std::string mirror_id(const std::string& id)
{
    const std::string suffix = kMirrorSuffix;
    if (id.size() > suffix.size() && id.compare(id.size() - suffix.size(), suffix.size(), suffix) == 0)
        return id.substr(0, id.size() - suffix.size());
    return id + suffix;
}

std::vector<Violation> validate_collection(const AnnotatedCollection& c)
{
    std::vector<Violation> out;
    const auto& s = c.schema;
    const int K = s.keypoint_count();
    if (static_cast<int>(s.mirror_map.size()) != K) {
        out.push_back({"", "mirror_map", "length " + std::to_string(s.mirror_map.size()) + " != keypoint count " +
                                             std::to_string(K)});
    } else {
        for (int k = 0; k < K; ++k) {
            const int m = s.mirror_map[k];
            if (m < 0 || m >= K || s.mirror_map[m] != k) {
                out.push_back({"", "mirror_map", "not an involution at keypoint " + std::to_string(k)});
                break;
            }
        }
    }
    if (s.sfm_subset.empty())
        out.push_back({"", "sfm_subset", "empty"});
    for (int k : s.sfm_subset)
        if (k < 0 || k >= K)
            out.push_back({"", "sfm_subset", "index " + std::to_string(k) + " out of range"});

    std::set<std::string> ids;
    for (const auto& inst : c.instances) {
        if (!ids.insert(inst.id).second)
            out.push_back({inst.id, "id", "duplicate instance id"});
        if (inst.class_name != s.class_name)
            out.push_back({inst.id, "class", "class '" + inst.class_name + "' differs from '" + s.class_name + "'"});
        if (inst.mask.width <= 0 || inst.mask.height <= 0 ||
            inst.mask.pixels.size() != static_cast<std::size_t>(inst.mask.width) * inst.mask.height)
            out.push_back({inst.id, "mask", "invalid raster dimensions"});
        else if (inst.mask.empty())
            out.push_back({inst.id, "mask", "no foreground pixel"});
        std::set<int> seen;
        for (const auto& kp : inst.keypoints) {
            if (kp.index < 0 || kp.index >= K)
                out.push_back({inst.id, "keypoints", "keypoint index " + std::to_string(kp.index) + " out of range [0," +
                                                         std::to_string(K) + ")"});
            if (!seen.insert(kp.index).second)
                out.push_back({inst.id, "keypoints", "duplicate keypoint index " + std::to_string(kp.index)});
            if (kp.visible && !(kp.x >= 0 && kp.x < inst.mask.width && kp.y >= 0 && kp.y < inst.mask.height))
                out.push_back({inst.id, "keypoints", "visible keypoint " + std::to_string(kp.index) + " outside the raster"});
        }
    }
    return out;
}

std::vector<std::int64_t> encode_rle(const Mask& m)
{
    std::vector<std::int64_t> runs;
    std::uint8_t current = 0;
    std::int64_t len = 0;
    for (auto p : m.pixels) {
        const std::uint8_t v = p ? 1 : 0;
        if (v != current) {
            runs.push_back(len);
            len = 0;
            current = v;
        }
        ++len;
    }
    runs.push_back(len);
    return runs;
}

Mask decode_rle(const std::vector<std::int64_t>& runs, int width, int height)
{
    if (width <= 0 || height <= 0)
        throw InputError("RLE mask with non-positive dimensions");
    Mask m(width, height);
    std::size_t pos = 0;
    std::uint8_t v = 0;
    for (auto r : runs) {
        if (r < 0 || pos + static_cast<std::size_t>(r) > m.pixels.size())
            throw InputError("RLE runs exceed the raster size");
        std::fill_n(m.pixels.begin() + static_cast<std::ptrdiff_t>(pos), r, v);
        pos += static_cast<std::size_t>(r);
        v ^= 1;
    }
    if (pos != m.pixels.size())
        throw InputError("RLE runs cover " + std::to_string(pos) + " of " + std::to_string(m.pixels.size()) + " pixels");
    return m;
}

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string pnm_token(std::istream& in)
{
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string rest;
            std::getline(in, rest);
            if (!tok.empty())
                return tok;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty())
                return tok;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

} // namespace

Mask read_mask_image(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("mask file unreadable: " + path.string());
    const std::string magic = pnm_token(in);
    if (magic != "P1" && magic != "P2" && magic != "P4" && magic != "P5")
        throw InputError("mask file is not a PBM/PGM image: " + path.string());
    int w = 0, h = 0, maxval = 1;
    try {
        w = std::stoi(pnm_token(in));
        h = std::stoi(pnm_token(in));
        if (magic == "P2" || magic == "P5")
            maxval = std::stoi(pnm_token(in));
    } catch (const std::exception&) {
        throw InputError("malformed image header: " + path.string());
    }
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
        throw InputError("malformed image header: " + path.string());
    Mask m(w, h);
    if (magic == "P1" || magic == "P2") {
        for (auto& p : m.pixels) {
            int v;
            if (magic == "P1") {
                char c;
                do {
                    if (!in.get(c))
                        throw InputError("truncated mask image: " + path.string());
                } while (c != '0' && c != '1');
                v = c - '0';
            } else if (!(in >> v)) {
                throw InputError("truncated mask image: " + path.string());
            }
            p = v != 0;
        }
    } else if (magic == "P4") {
        const int row_bytes = (w + 7) / 8;
        std::vector<unsigned char> row(row_bytes);
        for (int y = 0; y < h; ++y) {
            if (!in.read(reinterpret_cast<char*>(row.data()), row_bytes))
                throw InputError("truncated mask image: " + path.string());
            for (int x = 0; x < w; ++x)
                m.set(x, y, (row[x / 8] >> (7 - x % 8)) & 1);
        }
    } else {
        const int bpp = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * bpp);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw InputError("truncated mask image: " + path.string());
        for (std::size_t i = 0; i < m.pixels.size(); ++i)
            m.pixels[i] = bpp == 1 ? buf[i] != 0 : (buf[2 * i] | buf[2 * i + 1]) != 0;
    }
    return m;
}

void write_mask_pgm(const Mask& m, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw InputError("cannot write mask: " + path.string());
    out << "P5\n" << m.width << ' ' << m.height << "\n255\n";
    for (auto p : m.pixels)
        out.put(static_cast<char>(p ? 255 : 0));
}

namespace {

[[noreturn]] void schema_error(const std::string& where, const std::string& what)
{
    throw InputError("schema violation: " + where + ": " + what);
}

template <typename T>
T field(const json& j, const char* key, const std::string& where)
{
    if (!j.contains(key))
        schema_error(where, std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        schema_error(where, std::string("field '") + key + "' has the wrong type");
    }
}

} // namespace

AnnotatedCollection load_collection(const std::filesystem::path& manifest_path)
{
    std::ifstream in(manifest_path);
    if (!in)
        throw InputError("manifest not found: " + manifest_path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw InputError("manifest is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_object())
        schema_error("manifest", "top level must be an object");

    AnnotatedCollection c;
    auto& s = c.schema;
    s.class_name = field<std::string>(doc, "class", "manifest");
    s.keypoint_names = field<std::vector<std::string>>(doc, "keypoints", "manifest");
    s.mirror_map = field<std::vector<int>>(doc, "mirror_map", "manifest");
    s.sfm_subset = field<std::vector<int>>(doc, "sfm_subset", "manifest");
    s.rotational_symmetric = doc.value("rotational_symmetric", false);

    const auto base = manifest_path.parent_path();
    const auto& insts = doc.contains("instances") ? doc.at("instances") : json::array();
    if (!insts.is_array())
        schema_error("manifest", "'instances' must be an array");
    for (std::size_t n = 0; n < insts.size(); ++n) {
        const json& ji = insts[n];
        std::string where = "instance #" + std::to_string(n);
        if (!ji.is_object())
            schema_error(where, "must be an object");
        Instance inst;
        inst.id = field<std::string>(ji, "id", where);
        where = "instance '" + inst.id + "'";
        inst.class_name = s.class_name;
        inst.mirrored = ji.value("mirrored", false);
        if (ji.value("occluded", false))
            continue;
        if (!ji.contains("mask"))
            schema_error(where, "missing field 'mask'");
        const json& jm = ji.at("mask");
        if (jm.is_string()) {
            std::filesystem::path p = jm.get<std::string>();
            if (p.is_relative())
                p = base / p;
            try {
                inst.mask = read_mask_image(p);
            } catch (const InputError& e) {
                throw InputError(where + ": field 'mask': " + e.what());
            }
        } else if (jm.is_object()) {
            try {
                inst.mask = decode_rle(field<std::vector<std::int64_t>>(jm, "rle", where + ".mask"),
                                       field<int>(jm, "width", where + ".mask"), field<int>(jm, "height", where + ".mask"));
            } catch (const InputError& e) {
                throw InputError(where + ": field 'mask': " + e.what());
            }
        } else {
            schema_error(where, "field 'mask' must be a path or an RLE object");
        }
        const auto& jk = ji.contains("keypoints") ? ji.at("keypoints") : json::array();
        if (!jk.is_array())
            schema_error(where, "field 'keypoints' must be an array");
        for (const auto& k : jk) {
            KeypointObservation kp;
            kp.index = field<int>(k, "i", where + ".keypoints");
            kp.visible = k.value("visible", true);
            if (kp.visible) {
                kp.x = field<double>(k, "x", where + ".keypoints");
                kp.y = field<double>(k, "y", where + ".keypoints");
            }
            inst.keypoints.push_back(kp);
        }
        c.instances.push_back(std::move(inst));
    }

    const auto violations = validate_collection(c);
    if (!violations.empty()) {
        const auto& v = violations.front();
        schema_error(v.instance_id.empty() ? "schema" : "instance '" + v.instance_id + "'",
                     "field '" + v.field + "': " + v.message);
    }
    return c;
}

void save_collection(const AnnotatedCollection& c, const std::filesystem::path& manifest_path,
                     const SaveOptions& opts)
{
    json doc;
    doc["class"] = c.schema.class_name;
    doc["keypoints"] = c.schema.keypoint_names;
    doc["mirror_map"] = c.schema.mirror_map;
    doc["sfm_subset"] = c.schema.sfm_subset;
    doc["rotational_symmetric"] = c.schema.rotational_symmetric;
    json insts = json::array();
    const auto base = manifest_path.parent_path();
    for (const auto& inst : c.instances) {
        json ji;
        ji["id"] = inst.id;
        if (opts.mask_files) {
            std::filesystem::create_directories(base / "masks");
            const std::string rel = "masks/" + inst.id + ".pgm";
            write_mask_pgm(inst.mask, base / rel);
            ji["mask"] = rel;
        } else {
            ji["mask"] = {{"rle", encode_rle(inst.mask)}, {"width", inst.mask.width}, {"height", inst.mask.height}};
        }
        ji["occluded"] = false;
        if (inst.mirrored)
            ji["mirrored"] = true;
        json kps = json::array();
        for (const auto& kp : inst.keypoints) {
            json jk = {{"i", kp.index}, {"visible", kp.visible}};
            if (kp.visible) {
                jk["x"] = kp.x;
                jk["y"] = kp.y;
            }
            kps.push_back(jk);
        }
        ji["keypoints"] = kps;
        insts.push_back(ji);
    }
    doc["instances"] = insts;
    std::ofstream out(manifest_path);
    if (!out)
        throw InputError("cannot write manifest: " + manifest_path.string());
    out << doc.dump(1) << '\n';
}

Mask mirror_mask(const Mask& m)
{
    Mask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            out.pixels[out.index(m.width - 1 - x, y)] = m.pixels[m.index(x, y)];
    return out;
}

Instance mirror_instance(const Instance& inst, const ClassSchema& schema)
{
    Instance out = inst;
    out.id = mirror_id(inst.id);
    out.mask = mirror_mask(inst.mask);
    out.mirrored = !inst.mirrored;
    for (auto& kp : out.keypoints) {
        kp.index = schema.mirror_map.at(kp.index);
        if (kp.visible) {
            kp.x = (inst.mask.width - 1) - kp.x;
        } else {
            kp.x = 0;
            kp.y = 0;
        }
    }
    return out;
}

AnnotatedCollection with_mirrors(const AnnotatedCollection& c)
{
    AnnotatedCollection out;
    out.schema = c.schema;
    out.instances.reserve(2 * c.instances.size());
    for (const auto& inst : c.instances) {
        out.instances.push_back(inst);
        out.instances.push_back(mirror_instance(inst, c.schema));
    }
    return out;
}

namespace {

struct ProjectedTriangle {
    Vec2 a, b, c;
    double area2; // twice the signed area
};

// Inclusive point-in-triangle test in either winding.
bool inside(const ProjectedTriangle& t, const Vec2& p, Vec3* bary = nullptr)
{
    auto edge = [](const Vec2& u, const Vec2& v, const Vec2& q) {
        return (v.x() - u.x()) * (q.y() - u.y()) - (v.y() - u.y()) * (q.x() - u.x());
    };
    double w0 = edge(t.b, t.c, p), w1 = edge(t.c, t.a, p), w2 = edge(t.a, t.b, p);
    if (t.area2 < 0) {
        w0 = -w0;
        w1 = -w1;
        w2 = -w2;
    }
    const double tol = -1e-12 * std::abs(t.area2);
    if (w0 < tol || w1 < tol || w2 < tol)
        return false;
    if (bary) {
        const double s = std::abs(t.area2);
        *bary = Vec3(w0 / s, w1 / s, w2 / s);
    }
    return true;
}

} // namespace

Mask rasterize_mesh(const TriangleMesh& mesh, const ScaledOrthoCamera& camera, int width, int height)
{
    Mask m(width, height);
    for (const auto& tri : mesh.triangles) {
        ProjectedTriangle t{camera.project(mesh.vertices[tri[0]]), camera.project(mesh.vertices[tri[1]]),
                            camera.project(mesh.vertices[tri[2]]), 0};
        t.area2 = (t.b - t.a).x() * (t.c - t.a).y() - (t.b - t.a).y() * (t.c - t.a).x();
        if (std::abs(t.area2) < 1e-12)
            continue;
        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({t.a.x(), t.b.x(), t.c.x()}))));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(std::max({t.a.x(), t.b.x(), t.c.x()}))));
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({t.a.y(), t.b.y(), t.c.y()}))));
        const int y1 = std::min(height - 1, static_cast<int>(std::floor(std::max({t.a.y(), t.b.y(), t.c.y()}))));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (!m.pixels[m.index(x, y)] && inside(t, Vec2(x, y)))
                    m.pixels[m.index(x, y)] = 1;
    }
    return m;
}

bool occluded_by_mesh(const TriangleMesh& mesh, const ScaledOrthoCamera& camera, const Vec3& point, double eps)
{
    // Work in the rotated world frame so the test does not depend on alpha.
    const Vec2 p(camera.R.row(0).dot(point), camera.R.row(1).dot(point));
    const double d = camera.depth(point);
    for (const auto& tri : mesh.triangles) {
        const Vec3& A = mesh.vertices[tri[0]];
        const Vec3& B = mesh.vertices[tri[1]];
        const Vec3& C = mesh.vertices[tri[2]];
        ProjectedTriangle t{Vec2(camera.R.row(0).dot(A), camera.R.row(1).dot(A)),
                            Vec2(camera.R.row(0).dot(B), camera.R.row(1).dot(B)),
                            Vec2(camera.R.row(0).dot(C), camera.R.row(1).dot(C)), 0};
        t.area2 = (t.b - t.a).x() * (t.c - t.a).y() - (t.b - t.a).y() * (t.c - t.a).x();
        if (std::abs(t.area2) < 1e-15)
            continue;
        Vec3 bary;
        if (!inside(t, p, &bary))
            continue;
        const double hit = bary[0] * camera.depth(A) + bary[1] * camera.depth(B) + bary[2] * camera.depth(C);
        if (hit < d - eps)
            return true;
    }
    return false;
}

Instance render_synthetic_instance(const TriangleMesh& mesh, const std::vector<Vec3>& keypoints3d,
                                   const ScaledOrthoCamera& camera, int width, int height, const std::string& id,
                                   const std::string& class_name)
{
    mesh.check();
    if (!(camera.alpha > 0))
        throw InputError("camera scale must be positive");
    Instance inst;
    inst.id = id;
    inst.class_name = class_name;
    inst.mask = rasterize_mesh(mesh, camera, width, height);
    if (inst.mask.empty())
        throw InputError("object out of frame");
    const double eps = 1e-4 * mesh.bbox_diagonal();
    for (std::size_t k = 0; k < keypoints3d.size(); ++k) {
        KeypointObservation kp;
        kp.index = static_cast<int>(k);
        const Vec2 u = camera.project(keypoints3d[k]);
        const bool in_frame = u.x() >= 0 && u.x() < width && u.y() >= 0 && u.y() < height;
        kp.visible = in_frame && !occluded_by_mesh(mesh, camera, keypoints3d[k], eps);
        if (kp.visible) {
            kp.x = u.x();
            kp.y = u.y();
        }
        inst.keypoints.push_back(kp);
    }
    return inst;
}

} // namespace silhlift
