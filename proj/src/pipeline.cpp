#include "silhlift/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

namespace silhlift {

using nlohmann::json;
namespace fs = std::filesystem;

SelectionMode parse_selection(const std::string& s)
{
    if (s == "ranked")
        return SelectionMode::ranked;
    if (s == "random")
        return SelectionMode::random;
    if (s == "oracle")
        return SelectionMode::oracle;
    throw InputError("unknown selection mode '" + s + "' (expected ranked, random or oracle)");
}

std::string to_string(SelectionMode m)
{
    switch (m) {
    case SelectionMode::ranked: return "ranked";
    case SelectionMode::random: return "random";
    case SelectionMode::oracle: return "oracle";
    }
    return "ranked";
}

void RunConfig::validate() const
{
    if (grid_res < 8)
        throw InputError("grid_res must be at least 8");
    if (n_samples < 1)
        throw InputError("samples must be at least 1");
    if (threshold_deg.empty())
        throw InputError("threshold_deg needs at least one value");
    for (double t : threshold_deg)
        if (!(t > 0 && t < 90))
            throw InputError("threshold_deg must lie in (0, 90)");
    if (!(lambda >= 0))
        throw InputError("lambda must be non-negative");
    if (rms_samples < 1)
        throw InputError("rms_samples must be at least 1");
    if (canonical_res < 8)
        throw InputError("canonical_res must be at least 8");
    if (n_views < 1 || image_size < 16)
        throw InputError("n_views must be positive and image_size at least 16");
    if (!(drop_keypoints >= 0 && drop_keypoints < 1))
        throw InputError("drop_keypoints must lie in [0, 1)");
    if (!(elevation_min <= elevation_max) || !(elevation_std >= 0))
        throw InputError("invalid elevation distribution");
    if (k < 1 || shape_count < 1)
        throw InputError("k and shape_count must be positive");
}

namespace {

bool parse_bool(const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    throw InputError("expected a boolean, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& v)
{
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double x = 0;
        try {
            x = std::stod(item, &used);
        } catch (const std::exception&) {
            throw InputError("expected a number, got '" + item + "'");
        }
        if (used != item.size())
            throw InputError("expected a number, got '" + item + "'");
        out.push_back(x);
    }
    return out;
}

double parse_number(const std::string& v)
{
    const auto l = parse_list(v);
    if (l.size() != 1)
        throw InputError("expected a single number, got '" + v + "'");
    return l.front();
}

int parse_int(const std::string& v)
{
    const double d = parse_number(v);
    if (d != std::floor(d) || std::abs(d) > 1e9)
        throw InputError("expected an integer, got '" + v + "'");
    return static_cast<int>(d);
}

std::uint64_t parse_u64(const std::string& v)
{
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw InputError("expected an unsigned integer, got '" + v + "'");
    }
    if (used != v.size() || v.front() == '-')
        throw InputError("expected an unsigned integer, got '" + v + "'");
    return x;
}

std::string json_scalar_text(const json& v)
{
    if (v.is_string())
        return v.get<std::string>();
    if (v.is_array()) {
        std::string s;
        for (const auto& e : v) {
            if (!s.empty())
                s += v.front().is_array() ? ";" : ",";
            s += e.is_array() ? json_scalar_text(e) : e.dump();
        }
        return s;
    }
    return v.dump();
}

} // namespace

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value)
{
    if (key == "seed")
        cfg.seed = parse_u64(value);
    else if (key == "grid_res")
        cfg.grid_res = parse_int(value);
    else if (key == "threshold_deg")
        cfg.threshold_deg = parse_list(value);
    else if (key == "samples")
        cfg.n_samples = parse_int(value);
    else if (key == "lambda")
        cfg.lambda = parse_number(value);
    else if (key == "selection")
        cfg.selection = parse_selection(value);
    else if (key == "refine")
        cfg.refine = parse_bool(value);
    else if (key == "imprint")
        cfg.imprint = parse_bool(value);
    else if (key == "rms_samples")
        cfg.rms_samples = parse_int(value);
    else if (key == "canonical_res")
        cfg.canonical_res = parse_int(value);
    else if (key == "export_proposals")
        cfg.export_proposals = parse_bool(value);
    else if (key == "gt")
        cfg.gt = value;
    else if (key == "n_views")
        cfg.n_views = parse_int(value);
    else if (key == "image_size")
        cfg.image_size = parse_int(value);
    else if (key == "elevation_mean")
        cfg.elevation_mean = parse_number(value);
    else if (key == "elevation_std")
        cfg.elevation_std = parse_number(value);
    else if (key == "elevation_min")
        cfg.elevation_min = parse_number(value);
    else if (key == "elevation_max")
        cfg.elevation_max = parse_number(value);
    else if (key == "views") {
        cfg.views.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ';')) {
            const auto v = parse_list(item);
            if (v.size() != 3)
                throw InputError("each view needs azimuth,elevation,roll");
            cfg.views.push_back({v[0], v[1], v[2]});
        }
    } else if (key == "drop_keypoints")
        cfg.drop_keypoints = parse_number(value);
    else if (key == "k")
        cfg.k = parse_int(value);
    else if (key == "shape_count")
        cfg.shape_count = parse_int(value);
    else
        throw InputError("unknown configuration key '" + key + "'");
}

void apply_config_json(RunConfig& cfg, const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed configuration: ") + e.what());
    }
    if (!j.is_object())
        throw InputError("configuration must be a JSON object");
    for (const auto& [key, value] : j.items())
        apply_config_value(cfg, key, json_scalar_text(value));
}

void apply_config_file(RunConfig& cfg, const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open configuration file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_json(cfg, ss.str());
}

std::string config_to_json(const RunConfig& cfg)
{
    json j;
    j["seed"] = cfg.seed;
    j["grid_res"] = cfg.grid_res;
    j["threshold_deg"] = cfg.threshold_deg;
    j["samples"] = cfg.n_samples;
    j["lambda"] = cfg.lambda;
    j["selection"] = to_string(cfg.selection);
    j["refine"] = cfg.refine;
    j["imprint"] = cfg.imprint;
    j["rms_samples"] = cfg.rms_samples;
    j["canonical_res"] = cfg.canonical_res;
    j["export_proposals"] = cfg.export_proposals;
    j["gt"] = cfg.gt;
    j["n_views"] = cfg.n_views;
    j["image_size"] = cfg.image_size;
    j["elevation_mean"] = cfg.elevation_mean;
    j["elevation_std"] = cfg.elevation_std;
    j["elevation_min"] = cfg.elevation_min;
    j["elevation_max"] = cfg.elevation_max;
    j["views"] = json::array();
    for (const auto& v : cfg.views)
        j["views"].push_back({v[0], v[1], v[2]});
    j["drop_keypoints"] = cfg.drop_keypoints;
    j["k"] = cfg.k;
    j["shape_count"] = cfg.shape_count;
    return j.dump(2) + "\n";
}

namespace {

json matrix_json(const Eigen::MatrixXd& m)
{
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd json_matrix(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what)
{
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
        throw InputError(what + ": expected " + std::to_string(rows) + " rows");
    Eigen::MatrixXd m(rows, cols == 0 && rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (!j[r].is_array() || static_cast<Eigen::Index>(j[r].size()) != m.cols())
            throw InputError(what + ": ragged matrix");
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = j[r][c].get<double>();
    }
    return m;
}

json camera_json(const ScaledOrthoCamera& c)
{
    return {{"M", matrix_json(c.M)}, {"T", {c.T.x(), c.T.y()}}, {"R", matrix_json(c.R)}, {"alpha", c.alpha}};
}

ScaledOrthoCamera json_camera(const json& j, const std::string& what)
{
    ScaledOrthoCamera c;
    c.M = json_matrix(j.at("M"), 2, 3, what + ".M");
    const auto T = j.at("T").get<std::vector<double>>();
    if (T.size() != 2)
        throw InputError(what + ".T: expected 2 values");
    c.T = Vec2(T[0], T[1]);
    c.R = json_matrix(j.at("R"), 3, 3, what + ".R");
    c.alpha = j.at("alpha").get<double>();
    if (!c.M.allFinite() || !c.R.allFinite() || !(c.alpha > 0))
        throw InputError(what + ": invalid camera");
    return c;
}

json read_json_file(const fs::path& path, const std::string& what)
{
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open " + what + ": " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("malformed " + what + " " + path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw InputError("cannot write " + path.string());
    out << text;
}

std::string safe_name(const std::string& id)
{
    std::string s = id;
    for (char& c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-' || c == '~'))
            c = '_';
    return s;
}

std::string format_number(double v, const char* fmt = "%.6f")
{
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

} // namespace

std::optional<std::size_t> CameraSet::find(const std::string& id) const
{
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id)
            return i;
    return std::nullopt;
}

CameraSet estimate_cameras(const AnnotatedCollection& c, const RunConfig& cfg)
{
    const auto W = build_observation_matrix(c, c.schema.sfm_subset);
    FactorizationOptions fo;
    fo.seed = derive_seed(cfg.seed, "sfm");
    const auto fact = rigid_factorization(W, fo);

    CameraSet out;
    out.class_name = c.schema.class_name;
    out.shape = fact.shape;
    out.shape.keypoint_names.clear();
    for (int idx : out.shape.keypoint_indices)
        out.shape.keypoint_names.push_back(c.schema.keypoint_names.at(idx));

    std::map<std::string, int> row_of;
    for (int n = 0; n < W.instances(); ++n)
        row_of[W.instance_ids[n]] = n;

    const std::size_t N = c.instances.size();
    std::vector<std::optional<ScaledOrthoCamera>> cams(N);
    std::vector<double> energy(N, 0);
    std::vector<bool> refined(N, false);
    std::vector<std::string> source(N), warning(N);
    RefineOptions ro;
    ro.lambda = cfg.lambda;
    parallel_for(N, [&](std::size_t i) {
        const Instance& inst = c.instances[i];
        const auto obs = observation_for(inst, out.shape);
        auto it = row_of.find(inst.id);
        if (it != row_of.end()) {
            const auto& cam = fact.cameras[it->second];
            source[i] = "factorization";
            if (cfg.refine) {
                const auto r = refine_camera(cam, out.shape, obs, inst.mask, ro);
                cams[i] = r.camera;
                energy[i] = r.energy;
                refined[i] = true;
            } else {
                cams[i] = cam;
                double e = 0;
                for (int k = 0; k < out.shape.size(); ++k)
                    if (obs.visible[k])
                        e += (obs.points.col(k) - cam.project(out.shape.S.col(k))).squaredNorm();
                energy[i] = e;
            }
            return;
        }
        try {
            const auto r = estimate_camera_for_new_image(out.shape, obs, inst.mask, ro);
            cams[i] = r.camera;
            energy[i] = r.energy;
            refined[i] = true;
            source[i] = "estimated";
        } catch (const InputError& e) {
            warning[i] = "instance '" + inst.id + "' has no camera: " + e.what();
        }
    });
    for (std::size_t i = 0; i < N; ++i) {
        if (!cams[i]) {
            out.warnings.push_back(warning[i]);
            continue;
        }
        out.ids.push_back(c.instances[i].id);
        out.cameras.push_back(*cams[i]);
        out.refined.push_back(refined[i]);
        out.energy.push_back(energy[i]);
        out.source.push_back(source[i]);
    }
    return out;
}

void write_camera_file(const CameraSet& cams, const fs::path& path)
{
    json j;
    j["class"] = cams.class_name;
    j["keypoints"] = cams.shape.keypoint_names;
    j["keypoint_indices"] = cams.shape.keypoint_indices;
    j["S"] = matrix_json(cams.shape.S);
    json list = json::array();
    for (std::size_t i = 0; i < cams.ids.size(); ++i) {
        json cj = camera_json(cams.cameras[i]);
        cj["id"] = cams.ids[i];
        cj["refined"] = static_cast<bool>(cams.refined[i]);
        cj["energy"] = cams.energy[i];
        cj["source"] = cams.source[i];
        list.push_back(cj);
    }
    j["cameras"] = list;
    j["warnings"] = cams.warnings;
    write_text(path, j.dump(2) + "\n");
}

CameraSet read_camera_file(const fs::path& path)
{
    const json j = read_json_file(path, "camera file");
    CameraSet out;
    try {
        out.class_name = j.value("class", std::string());
        const json& S = j.at("S");
        if (!S.is_array() || S.size() != 3 || !S[0].is_array())
            throw InputError("camera file: S must have 3 rows");
        out.shape.S = json_matrix(S, 3, static_cast<Eigen::Index>(S[0].size()), "camera file S");
        if (j.contains("keypoint_indices"))
            out.shape.keypoint_indices = j.at("keypoint_indices").get<std::vector<int>>();
        else
            for (int k = 0; k < out.shape.size(); ++k)
                out.shape.keypoint_indices.push_back(k);
        if (j.contains("keypoints"))
            out.shape.keypoint_names = j.at("keypoints").get<std::vector<std::string>>();
        if (static_cast<int>(out.shape.keypoint_indices.size()) != out.shape.size())
            throw InputError("camera file: keypoint_indices does not match S");
        for (const auto& cj : j.at("cameras")) {
            const std::string id = cj.at("id").get<std::string>();
            out.ids.push_back(id);
            out.cameras.push_back(json_camera(cj, "camera '" + id + "'"));
            out.refined.push_back(cj.value("refined", false));
            out.energy.push_back(cj.value("energy", 0.0));
            out.source.push_back(cj.value("source", std::string("factorization")));
        }
        if (j.contains("warnings"))
            out.warnings = j.at("warnings").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw InputError("malformed camera file " + path.string() + ": " + e.what());
    }
    return out;
}

Mat3X GroundTruth::mean_keypoints(const std::vector<int>& indices) const
{
    if (keypoints.empty())
        throw InputError("ground truth has no labeled keypoints");
    Mat3X m = Mat3X::Zero(3, static_cast<Eigen::Index>(indices.size()));
    for (const auto& [name, pts] : keypoints)
        for (std::size_t c = 0; c < indices.size(); ++c)
            m.col(static_cast<Eigen::Index>(c)) += pts.at(indices[c]);
    return m / static_cast<double>(keypoints.size());
}

void write_ground_truth(const GroundTruth& gt, const fs::path& dir)
{
    fs::create_directories(dir / "meshes");
    json j;
    j["class"] = gt.class_name;
    j["keypoints"] = gt.keypoint_names;
    json meshes = json::object();
    for (const auto& [name, mesh] : gt.meshes) {
        const std::string rel = "meshes/" + safe_name(name) + ".obj";
        write_obj(mesh, dir / rel);
        json pts = json::array();
        if (auto it = gt.keypoints.find(name); it != gt.keypoints.end())
            for (const auto& p : it->second)
                pts.push_back({p.x(), p.y(), p.z()});
        meshes[name] = {{"file", rel}, {"keypoints", pts}};
    }
    j["meshes"] = meshes;
    json inst = json::array();
    for (const auto& [id, cam] : gt.cameras) {
        json cj = camera_json(cam);
        cj["id"] = id;
        cj["mesh"] = gt.mesh_of.at(id);
        inst.push_back(cj);
    }
    j["instances"] = inst;
    write_text(dir / "ground_truth.json", j.dump(2) + "\n");
}

GroundTruth read_ground_truth(const fs::path& dir)
{
    const json j = read_json_file(dir / "ground_truth.json", "ground-truth bundle");
    GroundTruth gt;
    try {
        gt.class_name = j.value("class", std::string());
        if (j.contains("keypoints"))
            gt.keypoint_names = j.at("keypoints").get<std::vector<std::string>>();
        for (const auto& [name, m] : j.at("meshes").items()) {
            gt.meshes[name] = read_obj(dir / m.at("file").get<std::string>());
            std::vector<Vec3> pts;
            for (const auto& p : m.value("keypoints", json::array())) {
                const auto v = p.get<std::vector<double>>();
                if (v.size() != 3)
                    throw InputError("ground truth: keypoint needs 3 coordinates");
                pts.emplace_back(v[0], v[1], v[2]);
            }
            if (!pts.empty())
                gt.keypoints[name] = pts;
        }
        for (const auto& cj : j.at("instances")) {
            const std::string id = cj.at("id").get<std::string>();
            const std::string mesh = cj.at("mesh").get<std::string>();
            if (!gt.meshes.count(mesh))
                throw InputError("ground truth: instance '" + id + "' references unknown mesh '" + mesh + "'");
            gt.mesh_of[id] = mesh;
            gt.cameras[id] = json_camera(cj, "ground-truth camera '" + id + "'");
        }
    } catch (const json::exception& e) {
        throw InputError("malformed ground-truth bundle " + dir.string() + ": " + e.what());
    }
    return gt;
}

double gauge_depth_sign(const MeanShape& shape, const GroundTruth& gt)
{
    const Mat3X ref = gt.mean_keypoints(shape.keypoint_indices);
    return align_gauge(shape.S, {}, ref).reflection ? -1.0 : 1.0;
}

TriangleMesh map_to_ground_truth(const TriangleMesh& est, const ScaledOrthoCamera& est_cam,
                                 const ScaledOrthoCamera& gt_cam, const TriangleMesh& gt_mesh, double depth_sign)
{
    if (est.vertices.empty() || gt_mesh.vertices.empty())
        throw InputError("map_to_ground_truth: empty mesh");
    auto mid = [](const std::vector<double>& d) {
        const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
        return 0.5 * (*lo + *hi);
    };
    std::vector<double> gt_depth, est_depth;
    for (const auto& v : gt_mesh.vertices)
        gt_depth.push_back(gt_cam.alpha * gt_cam.depth(v));
    for (const auto& v : est.vertices)
        est_depth.push_back(depth_sign * est_cam.alpha * est_cam.depth(v));
    const double offset = mid(gt_depth) - mid(est_depth);

    TriangleMesh out = est;
    const Mat3 Rt = gt_cam.R.transpose();
    for (std::size_t i = 0; i < est.vertices.size(); ++i) {
        const Vec2 u = est_cam.project(est.vertices[i]) - gt_cam.T;
        const Vec3 local(u.x() / gt_cam.alpha, u.y() / gt_cam.alpha, (est_depth[i] + offset) / gt_cam.alpha);
        out.vertices[i] = Rt * local;
    }
    if (depth_sign < 0)
        for (auto& t : out.triangles)
            std::swap(t[1], t[2]);
    return out;
}

SynthOutput synthesize(const ShapeDirectory& shapes, const RunConfig& cfg)
{
    cfg.validate();
    SynthOutput out;
    out.collection.schema = shapes.schema;
    out.gt.class_name = shapes.schema.class_name;
    out.gt.keypoint_names = shapes.schema.keypoint_names;
    const int W = cfg.image_size;
    const int views = cfg.views.empty() ? cfg.n_views : static_cast<int>(cfg.views.size());
    for (const auto& shape : shapes.shapes) {
        if (shape.keypoints.size() != shapes.schema.keypoint_names.size())
            throw InputError("mesh '" + shape.name + "': wrong number of keypoints");
        out.gt.meshes[shape.name] = shape.mesh;
        out.gt.keypoints[shape.name] = shape.keypoints;
        double radius = 0;
        for (const auto& v : shape.mesh.vertices)
            radius = std::max(radius, v.norm());
        if (!(radius > 0))
            throw InputError("mesh '" + shape.name + "' is degenerate");
        Rng rng(derive_seed(cfg.seed, "synth/" + shape.name));
        for (int v = 0; v < views; ++v) {
            double az, el, roll;
            if (!cfg.views.empty()) {
                az = cfg.views[v][0];
                el = cfg.views[v][1];
                roll = cfg.views[v][2];
            } else {
                az = rng.uniform(-180.0, 180.0);
                el = std::clamp(cfg.elevation_mean + cfg.elevation_std * rng.normal(), cfg.elevation_min,
                                cfg.elevation_max);
                roll = 0;
            }
            const double alpha = 0.4 * W / radius;
            const auto cam = ScaledOrthoCamera::from_rotation(viewpoint_to_rotation(az, el, roll), alpha,
                                                              Vec2(0.5 * (W - 1), 0.5 * (W - 1)));
            const std::string id = shape.name + "_v" + std::to_string(v);
            Instance inst = render_synthetic_instance(shape.mesh, shape.keypoints, cam, W, W, id,
                                                      shapes.schema.class_name);
            if (cfg.drop_keypoints > 0) {
                Rng drop(derive_seed(cfg.seed, "drop/" + id));
                for (auto& kp : inst.keypoints)
                    if (kp.visible && drop.uniform() < cfg.drop_keypoints) {
                        kp.visible = false;
                        kp.x = kp.y = 0;
                    }
            }
            out.collection.instances.push_back(std::move(inst));
            out.gt.cameras[id] = cam;
            out.gt.mesh_of[id] = shape.name;
        }
    }
    return out;
}

SymmetricDistance evaluate_mesh(const TriangleMesh& recon, const std::string& id, const CameraSet& cams,
                                const GroundTruth& gt, double depth_sign, const RunConfig& cfg)
{
    const auto ci = cams.find(id);
    if (!ci)
        throw InputError("no estimated camera for '" + id + "'");
    const auto gc = gt.cameras.find(id);
    if (gc == gt.cameras.end())
        throw InputError("no ground truth for '" + id + "'");
    const TriangleMesh& gt_mesh = gt.meshes.at(gt.mesh_of.at(id));
    const TriangleMesh mapped = map_to_ground_truth(recon, cams.cameras[*ci], gc->second, gt_mesh, depth_sign);
    return symmetric_distance_report(mapped, gt_mesh, gt_mesh.bbox_diagonal(), static_cast<std::size_t>(cfg.rms_samples),
                                     derive_seed(derive_seed(cfg.seed, "rms-sampling"), id));
}

double median(std::vector<double> v)
{
    if (v.empty())
        return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

double wrap_deg(double d)
{
    d = std::fmod(std::abs(d), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

} // namespace

CameraErrors camera_errors(const CameraSet& cams, const GroundTruth& gt)
{
    std::vector<ScaledOrthoCamera> est, ref;
    for (std::size_t i = 0; i < cams.ids.size(); ++i)
        if (auto it = gt.cameras.find(cams.ids[i]); it != gt.cameras.end()) {
            est.push_back(cams.cameras[i]);
            ref.push_back(it->second);
        }
    if (est.empty())
        throw InputError("no estimated camera has a ground-truth counterpart");
    const Mat3X ref_shape = gt.mean_keypoints(cams.shape.keypoint_indices);
    const auto g = align_gauge(cams.shape.S, est, ref_shape, ref);
    CameraErrors e;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const auto a = camera_to_viewpoint_angles(g.aligned_cameras[i].R);
        const auto b = camera_to_viewpoint_angles(ref[i].R);
        e.azimuth.push_back(wrap_deg(a.azimuth - b.azimuth));
        e.elevation.push_back(std::abs(a.elevation - b.elevation));
        e.roll.push_back(wrap_deg(a.roll - b.roll));
        e.geodesic.push_back(g.angle_errors_deg[i]);
    }
    e.median_azimuth = median(e.azimuth);
    e.median_elevation = median(e.elevation);
    e.median_roll = median(e.roll);
    e.median_geodesic = median(e.geodesic);
    return e;
}

ReconstructionRun reconstruct_collection(const AnnotatedCollection& collection, const CameraSet& cams,
                                         const RunConfig& cfg, double threshold_deg, const GroundTruth* gt,
                                         bool keep_all)
{
    cfg.validate();
    AnnotatedCollection usable;
    usable.schema = collection.schema;
    std::vector<ScaledOrthoCamera> cameras;
    for (const auto& inst : collection.instances)
        if (auto i = cams.find(inst.id)) {
            usable.instances.push_back(inst);
            cameras.push_back(cams.cameras[*i]);
        }
    if (usable.instances.empty())
        throw InputError("no instance of the manifest has a camera");

    const VoxelGrid grid = default_grid(cams.shape, cfg.grid_res);
    ReconstructionContext ctx(usable, cameras, cams.shape, grid, threshold_deg);
    const double cache_bytes = 8.0 * static_cast<double>(grid.size()) * static_cast<double>(cameras.size());
    ctx.set_field_cache(cache_bytes < 2.0e9);
    const auto avg = class_average_masks(ctx.clusters(), usable, cameras, ctx.directions(), cfg.canonical_res);
    const double depth_sign = gt ? gauge_depth_sign(cams.shape, *gt) : 1.0;

    ReconstructionRun run;
    run.threshold_deg = threshold_deg;
    for (const auto& inst : usable.instances) {
        if (inst.mirrored)
            continue;
        ReconstructOptions ro;
        ro.n_samples = cfg.n_samples;
        ro.seed = cfg.seed;
        ro.imprint = cfg.imprint;
        auto proposals = reconstruct_instance(inst.id, ctx, ro);

        std::vector<double> scores(proposals.size(), 0.0);
        if (!avg.empty())
            parallel_for(proposals.size(), [&](std::size_t p) { scores[p] = score_proposal(proposals[p].labeling, avg); });
        const Ranking ranking = rank_scores(scores);

        std::vector<std::optional<double>> oracle(proposals.size());
        if (cfg.selection == SelectionMode::oracle) {
            if (!gt || !gt->cameras.count(inst.id))
                throw InputError("oracle selection needs ground truth for '" + inst.id + "'");
            for (std::size_t p = 0; p < proposals.size(); ++p)
                oracle[p] = proposals[p].labeling.count() == 0
                                ? std::numeric_limits<double>::infinity()
                                : evaluate_mesh(extract_surface(proposals[p].labeling), inst.id, cams, *gt,
                                                depth_sign, cfg)
                                      .percent;
        }

        InstanceReconstruction rec;
        rec.id = inst.id;
        switch (cfg.selection) {
        case SelectionMode::ranked: rec.selected = ranking.best(); break;
        case SelectionMode::random: {
            Rng rng(derive_seed(cfg.seed, "selection/" + inst.id));
            rec.selected = rng.uniform_index(proposals.size());
            break;
        }
        case SelectionMode::oracle: {
            rec.selected = 0;
            for (std::size_t p = 1; p < proposals.size(); ++p)
                if (*oracle[p] < *oracle[rec.selected])
                    rec.selected = p;
            break;
        }
        }
        for (auto p : ranking.order) {
            ProposalRecord r;
            r.index = p;
            r.score = scores[p];
            r.oracle_error = oracle[p];
            r.triplet = proposals[p].triplet;
            r.occupied = proposals[p].labeling.count();
            r.uncovered_rays = proposals[p].stats.uncovered_rays;
            rec.proposals.push_back(r);
        }
        for (const auto& a : avg)
            rec.average_directions.push_back(std::to_string(a.axis) + (a.sign > 0 ? "+" : "-"));
        rec.labeling = proposals[rec.selected].labeling;
        if (keep_all)
            for (auto& p : proposals)
                rec.all.push_back(std::move(p.labeling));
        run.instances.push_back(std::move(rec));
    }
    return run;
}

void cmd_cameras(const fs::path& manifest, const fs::path& out, const RunConfig& cfg)
{
    cfg.validate();
    const auto collection = with_mirrors(load_collection(manifest));
    const CameraSet cams = estimate_cameras(collection, cfg);
    for (const auto& w : cams.warnings)
        std::cerr << "warning: " << w << '\n';
    write_camera_file(cams, out);

    double refined = 0, plain = 0;
    int n_ref = 0, n_plain = 0;
    for (std::size_t i = 0; i < cams.ids.size(); ++i) {
        if (cams.refined[i]) {
            refined += cams.energy[i];
            ++n_ref;
        } else {
            plain += cams.energy[i];
            ++n_plain;
        }
    }
    std::cout << "class " << cams.class_name << ": " << cams.ids.size() << " cameras ("
              << collection.instances.size() - cams.ids.size() << " without)";
    if (n_ref)
        std::cout << ", mean refined energy " << format_number(refined / n_ref, "%.4f");
    if (n_plain)
        std::cout << ", mean reprojection residual " << format_number(plain / n_plain, "%.4f");
    std::cout << '\n';
}

namespace {

json triplet_json(const Triplet& t)
{
    json j;
    j["surrogates"] = t.surrogates;
    j["axes"] = {t.axes[0], t.axes[1]};
    j["seed"] = t.seed;
    j["mode"] = t.rotational ? "rotational" : t.unconstrained ? "unconstrained" : t.single_axis ? "single_axis" : "two_axes";
    return j;
}

std::string threshold_label(double t)
{
    std::string s = format_number(t, "%g");
    for (char& c : s)
        if (c == '.')
            c = 'p';
    return s;
}

} // namespace

void cmd_reconstruct(const fs::path& manifest, const fs::path& cameras_path, const fs::path& out_dir,
                     const RunConfig& cfg)
{
    cfg.validate();
    const auto collection = with_mirrors(load_collection(manifest));
    const CameraSet cams = read_camera_file(cameras_path);
    for (const auto& id : cams.ids)
        if (!collection.find(id))
            throw InputError("camera file does not match the manifest: unknown id '" + id + "'");
    for (const auto& inst : collection.instances)
        if (!inst.mirrored && !cams.find(inst.id))
            std::cerr << "warning: instance '" << inst.id << "' has no camera and is skipped\n";
    std::optional<GroundTruth> gt;
    if (!cfg.gt.empty())
        gt = read_ground_truth(cfg.gt);
    if (cfg.selection == SelectionMode::oracle && !gt)
        throw InputError("oracle selection requires a ground-truth bundle (gt)");

    fs::create_directories(out_dir);
    const bool sweep = cfg.threshold_deg.size() > 1;
    std::string sweep_csv = "threshold_deg,instances,mean_score,mean_symmetric_pct\n";
    for (double t : cfg.threshold_deg) {
        const auto run = reconstruct_collection(collection, cams, cfg, t, gt ? &*gt : nullptr, cfg.export_proposals);
        const fs::path dir = sweep ? out_dir / ("threshold_" + threshold_label(t)) : out_dir;
        fs::create_directories(dir / "meshes");
        fs::create_directories(dir / "labelings");
        write_camera_file(cams, dir / "cameras.json");
        RunConfig echoed = cfg;
        echoed.threshold_deg = {t};
        write_text(dir / "config.json", config_to_json(echoed));

        json report;
        report["threshold_deg"] = t;
        report["selection"] = to_string(cfg.selection);
        report["imprint"] = cfg.imprint;
        json instances = json::array();
        double score_sum = 0, err_sum = 0;
        bool have_err = gt.has_value();
        const double depth_sign = gt ? gauge_depth_sign(cams.shape, *gt) : 1.0;
        for (const auto& rec : run.instances) {
            const std::string base = safe_name(rec.id);
            const std::string mesh_rel = "meshes/" + base + ".obj";
            const std::string lab_rel = "labelings/" + base + ".cvxl";
            write_cvxl(rec.labeling, dir / lab_rel);
            TriangleMesh mesh;
            if (rec.labeling.count() > 0) {
                mesh = extract_surface(rec.labeling);
                write_obj(mesh, dir / mesh_rel);
            } else {
                std::cerr << "warning: empty reconstruction for '" << rec.id << "'\n";
            }
            if (cfg.export_proposals) {
                fs::create_directories(dir / "proposals");
                for (std::size_t p = 0; p < rec.all.size(); ++p)
                    write_cvxl(rec.all[p], dir / "proposals" / (base + "_" + std::to_string(p) + ".cvxl"));
            }
            json ij;
            ij["id"] = rec.id;
            ij["selected"] = rec.selected;
            ij["mesh"] = rec.labeling.count() > 0 ? json(mesh_rel) : json(nullptr);
            ij["labeling"] = lab_rel;
            ij["average_directions"] = rec.average_directions;
            json plist = json::array();
            for (const auto& p : rec.proposals) {
                json pj;
                pj["index"] = p.index;
                pj["score"] = std::isfinite(p.score) ? json(p.score) : json(nullptr);
                if (p.oracle_error)
                    pj["oracle_error_pct"] = *p.oracle_error;
                pj["triplet"] = triplet_json(p.triplet);
                pj["occupied_voxels"] = p.occupied;
                pj["uncovered_rays"] = p.uncovered_rays;
                plist.push_back(pj);
                if (p.index == rec.selected)
                    score_sum += std::isfinite(p.score) ? p.score : 0.0;
            }
            ij["proposals"] = plist;
            if (gt && gt->cameras.count(rec.id) && rec.labeling.count() > 0) {
                const auto d = evaluate_mesh(mesh, rec.id, cams, *gt, depth_sign, cfg);
                ij["symmetric_pct"] = d.percent;
                err_sum += d.percent;
            } else {
                have_err = false;
            }
            instances.push_back(ij);
        }
        report["instances"] = instances;
        write_text(dir / "rank_report.json", report.dump(2) + "\n");

        const double n = std::max<std::size_t>(1, run.instances.size());
        std::string row = format_number(t, "%g") + "," + std::to_string(run.instances.size()) + "," +
                          format_number(score_sum / n) + "," + (have_err ? format_number(err_sum / n) : "");
        sweep_csv += row + "\n";
        std::cout << "threshold " << format_number(t, "%g") << ": " << run.instances.size()
                  << " instances reconstructed, mean score " << format_number(score_sum / n);
        if (have_err)
            std::cout << ", mean error " << format_number(err_sum / n, "%.2f") << "%";
        std::cout << '\n';
    }
    if (sweep)
        write_text(out_dir / "sweep.csv", sweep_csv);
}

void cmd_evaluate(const fs::path& recon_dir, const fs::path& gt_dir, const fs::path& out_dir, const RunConfig& cfg)
{
    cfg.validate();
    const CameraSet cams = read_camera_file(recon_dir / "cameras.json");
    const GroundTruth gt = read_ground_truth(gt_dir);
    const json report = read_json_file(recon_dir / "rank_report.json", "rank report");
    const double depth_sign = gauge_depth_sign(cams.shape, gt);

    Evaluation ev;
    std::set<std::string> seen;
    std::vector<std::pair<std::string, std::string>> todo; // id, mesh path
    try {
        for (const auto& ij : report.at("instances")) {
            const std::string id = ij.at("id").get<std::string>();
            seen.insert(id);
            if (ij.at("mesh").is_null() || !gt.cameras.count(id)) {
                ev.missing.push_back(id);
                continue;
            }
            todo.emplace_back(id, ij.at("mesh").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed rank report: ") + e.what());
    }
    for (const auto& [id, cam] : gt.cameras)
        if (!seen.count(id))
            ev.missing.push_back(id);
    for (const auto& id : ev.missing)
        std::cerr << "warning: '" << id << "' lacks a reconstruction or ground truth and is excluded\n";

    for (const auto& [id, mesh_rel] : todo) {
        const TriangleMesh recon = read_obj(recon_dir / mesh_rel);
        ev.rows.push_back({id, evaluate_mesh(recon, id, cams, gt, depth_sign, cfg)});
    }
    std::string csv = "id,e_rms_ab,e_rms_ba,symmetric_pct\n";
    double sum = 0;
    for (const auto& r : ev.rows) {
        csv += r.id + "," + format_number(r.distance.rms_ab, "%.8f") + "," + format_number(r.distance.rms_ba, "%.8f") +
               "," + format_number(r.distance.percent, "%.6f") + "\n";
        sum += r.distance.percent;
    }
    ev.mean_percent = ev.rows.empty() ? 0.0 : sum / ev.rows.size();
    fs::create_directories(out_dir);
    write_text(out_dir / "evaluation.csv", csv);

    json summary;
    summary["class"] = gt.class_name;
    summary["instances"] = ev.rows.size();
    summary["mean_symmetric_pct"] = ev.mean_percent;
    summary["missing"] = ev.missing;
    try {
        const auto ce = camera_errors(cams, gt);
        summary["median_azimuth_error_deg"] = ce.median_azimuth;
        summary["median_elevation_error_deg"] = ce.median_elevation;
        summary["median_roll_error_deg"] = ce.median_roll;
        summary["median_rotation_error_deg"] = ce.median_geodesic;
        ev.cameras = ce;
    } catch (const InputError& e) {
        std::cerr << "warning: camera errors unavailable: " << e.what() << '\n';
    }
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
    write_text(out_dir / "config.json", config_to_json(cfg));

    std::cout << "class " << gt.class_name << ": mean symmetric distance " << format_number(ev.mean_percent, "%.2f")
              << "% over " << ev.rows.size() << " instances";
    if (ev.cameras)
        std::cout << "; median errors azimuth " << format_number(ev.cameras->median_azimuth, "%.2f")
                  << ", elevation " << format_number(ev.cameras->median_elevation, "%.2f") << ", roll "
                  << format_number(ev.cameras->median_roll, "%.2f") << " deg";
    std::cout << '\n';
}

void cmd_synth(const fs::path& mesh_dir, const fs::path& out_dir, const RunConfig& cfg)
{
    const ShapeDirectory shapes = read_shape_directory(mesh_dir);
    const SynthOutput s = synthesize(shapes, cfg);
    fs::create_directories(out_dir);
    save_collection(s.collection, out_dir / "manifest.json");
    write_ground_truth(s.gt, out_dir / "gt");
    write_text(out_dir / "config.json", config_to_json(cfg));
    std::cout << "rendered " << s.collection.instances.size() << " instances of " << shapes.shapes.size()
              << " meshes\n";
}

void cmd_cluster(const fs::path& mesh_dir, const fs::path& out_dir, const RunConfig& cfg)
{
    cfg.validate();
    std::vector<fs::path> files;
    if (!fs::is_directory(mesh_dir))
        throw InputError("not a directory: " + mesh_dir.string());
    for (const auto& e : fs::directory_iterator(mesh_dir))
        if (e.is_regular_file() && e.path().extension() == ".obj")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    const int n = static_cast<int>(files.size());
    if (cfg.k > n)
        throw InputError("k = " + std::to_string(cfg.k) + " exceeds the number of meshes (" + std::to_string(n) + ")");
    std::vector<TriangleMesh> meshes;
    std::vector<std::string> names;
    for (const auto& f : files) {
        meshes.push_back(read_obj(f));
        names.push_back(f.stem().string());
    }
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            pairs.emplace_back(i, j);
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    const std::uint64_t rms_root = derive_seed(cfg.seed, "rms-sampling");
    std::vector<double> values(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t p) {
        const auto [i, j] = pairs[p];
        const double diag = std::max(meshes[i].bbox_diagonal(), meshes[j].bbox_diagonal());
        values[p] = symmetric_distance(meshes[i], meshes[j], diag, static_cast<std::size_t>(cfg.rms_samples),
                                       derive_seed(rms_root, names[i] + "|" + names[j]));
    });
    for (std::size_t p = 0; p < pairs.size(); ++p)
        dist[pairs[p].first][pairs[p].second] = dist[pairs[p].second][pairs[p].first] = values[p];

    KMedoidsOptions ko;
    ko.seed = derive_seed(cfg.seed, "kmedoids");
    const auto km = kmedoids(dist, cfg.k, ko);

    fs::create_directories(out_dir);
    std::string csv = "mesh";
    for (const auto& nm : names)
        csv += "," + nm;
    csv += "\n";
    for (int i = 0; i < n; ++i) {
        csv += names[i];
        for (int j = 0; j < n; ++j)
            csv += "," + format_number(dist[i][j], "%.8f");
        csv += "\n";
    }
    write_text(out_dir / "distances.csv", csv);
    json clusters = json::array();
    for (std::size_t c = 0; c < km.medoids.size(); ++c) {
        json members = json::array();
        for (int i = 0; i < n; ++i)
            if (km.assignment[i] == static_cast<int>(c))
                members.push_back(names[i]);
        clusters.push_back({{"medoid", names[km.medoids[c]]}, {"size", km.sizes[c]}, {"members", members}});
    }
    json j;
    j["k"] = cfg.k;
    j["cost"] = km.cost;
    j["clusters"] = clusters;
    write_text(out_dir / "clusters.json", j.dump(2) + "\n");
    write_text(out_dir / "config.json", config_to_json(cfg));
    for (std::size_t c = 0; c < km.medoids.size(); ++c)
        std::cout << "cluster " << c << ": medoid " << names[km.medoids[c]] << " (" << km.sizes[c] << " members)\n";
}

void cmd_demo_shapes(const fs::path& out_dir, const RunConfig& cfg)
{
    cfg.validate();
    write_shape_directory(demo_shape_family(cfg.shape_count, cfg.seed), demo_schema(), out_dir);
    std::cout << "wrote " << cfg.shape_count << " shapes to " << out_dir.string() << '\n';
}

} // namespace silhlift
