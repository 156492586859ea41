// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any failure.
#include "silhlift/pipeline.hpp"
#include "synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <string>

#include <sys/wait.h>

using namespace silhlift;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---- 1: closed-form imprint vs exhaustive search on 2x2x2 grids

Outcome imprint_optimality()
{
    Rng rng(101);
    VoxelGrid g;
    g.resolution = 2;
    int exact = 0;
    const int cases = 1000;
    for (int t = 0; t < cases; ++t) {
        std::vector<double> C(8);
        for (auto& c : C)
            c = rng.uniform(-1, 1);
        std::vector<std::uint32_t> perm(8);
        std::iota(perm.begin(), perm.end(), 0u);
        for (std::size_t i = 7; i > 0; --i)
            std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
        const int nrays = 1 + static_cast<int>(rng.uniform_index(4));
        std::vector<std::vector<std::uint32_t>> rays(nrays);
        std::size_t used = 0;
        for (int r = 0; r < nrays; ++r) {
            const std::size_t left = 8 - used - (nrays - 1 - r);
            const std::size_t len = 1 + rng.uniform_index(std::min<std::size_t>(left, 3));
            rays[r].assign(perm.begin() + used, perm.begin() + used + len);
            used += len;
        }
        double best = 1e300;
        for (int mask = 0; mask < 256; ++mask) {
            bool ok = true;
            for (const auto& ray : rays)
                ok &= std::any_of(ray.begin(), ray.end(), [&](auto v) { return (mask >> v) & 1; });
            if (!ok)
                continue;
            double e = 0;
            for (int v = 0; v < 8; ++v)
                if ((mask >> v) & 1)
                    e += C[v];
            best = std::min(best, e);
        }
        exact += labeling_energy(imprint_labeling(g, C, rays).occupancy, C) == best;
    }
    return {exact == cases, std::to_string(exact) + "/" + std::to_string(cases) + " exact"};
}

// ---- 2: every reference ray covered, plain hull contained in the imprinted one

Outcome imprint_guarantee()
{
    Rng rng(202);
    auto sc = testutil::class_scene(demo_shape_family(8, 21), rng, 3, 8.0);
    const auto grid = VoxelGrid::centered(64, 1.3);
    ReconstructionContext ctx(sc.collection, sc.cameras, sc.shape, grid, 15.0);
    ctx.set_field_cache(true);
    std::size_t triplets = 0, rays_total = 0, uncovered = 0, subset_fail = 0;
    for (std::size_t i = 0; i < sc.collection.instances.size() && triplets < 60; i += 2) {
        const auto& ref = sc.collection.instances[i];
        ReconstructOptions o;
        o.n_samples = 6;
        o.seed = 17 + i;
        const auto imp = reconstruct_instance(ref.id, ctx, o);
        o.imprint = false;
        const auto plain = reconstruct_instance(ref.id, ctx, o);
        const auto rays = build_imprint_rays(ref.mask, sc.cameras[i], grid);
        for (std::size_t p = 0; p < imp.size(); ++p) {
            ++triplets;
            rays_total += rays.rays.size();
            uncovered += count_uncovered_rays(imp[p].labeling, rays);
            subset_fail += !is_subset(plain[p].labeling, imp[p].labeling);
        }
    }
    const double coverage = rays_total ? 100.0 * (rays_total - uncovered) / rays_total : 0.0;
    return {triplets >= 50 && uncovered == 0 && subset_fail == 0,
            std::to_string(triplets) + " triplets, coverage " + fmt("%.2f", coverage) + "% of " +
                std::to_string(rays_total) + " rays, subset violations " + std::to_string(subset_fail)};
}

// ---- 3: camera recovery on the default synthetic suite

ShapeDirectory demo_directory(int count, std::uint64_t seed)
{
    ShapeDirectory d;
    d.schema = demo_schema();
    d.shapes = demo_shape_family(count, seed);
    std::sort(d.shapes.begin(), d.shapes.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return d;
}

Outcome camera_recovery()
{
    const auto dir = demo_directory(10, 0);
    RunConfig cfg;
    const auto s = synthesize(dir, cfg);
    const auto cams = estimate_cameras(with_mirrors(s.collection), cfg);
    const auto e = camera_errors(cams, s.gt);

    RunConfig occ = cfg;
    occ.drop_keypoints = 0.4;
    const auto so = synthesize(dir, occ);
    const auto coll = with_mirrors(so.collection);
    const auto refined = camera_errors(estimate_cameras(coll, occ), so.gt);
    occ.refine = false;
    const auto unrefined = camera_errors(estimate_cameras(coll, occ), so.gt);

    const bool pass = e.median_azimuth <= 10 && e.median_elevation <= 10 &&
                      refined.median_geodesic <= unrefined.median_geodesic;
    return {pass, "median azimuth " + fmt("%.2f", e.median_azimuth) + " deg, elevation " +
                      fmt("%.2f", e.median_elevation) + " deg; 40% hidden: refined " +
                      fmt("%.2f", refined.median_geodesic) + " vs unrefined " +
                      fmt("%.2f", unrefined.median_geodesic) + " deg"};
}

// ---- 4: refinement monotonicity and gradient check

Outcome refinement_checks()
{
    Rng rng(404);
    int increases = 0;
    for (int t = 0; t < 1000; ++t) {
        auto s = testutil::refine_scene(rng, rng.uniform(0, 0.6));
        const auto cam0 = testutil::perturbed(s.truth, rng, rng.uniform(0, 30), rng.uniform(0, 15), 0.2);
        RefineOptions o;
        o.lambda = rng.uniform(0, 5);
        o.max_iters = 100;
        const DistanceField f(s.inst.mask);
        const auto r = refine_camera(cam0, s.shape, s.obs, s.inst.mask, f, o);
        const double before = refinement_energy(cam0, s.shape, s.obs, f, o.lambda);
        const double after = refinement_energy(r.camera, s.shape, s.obs, f, o.lambda);
        increases += !(r.energy <= r.initial_energy) || after > before * (1 + 1e-12);
    }
    int checked = 0, bad = 0;
    double worst = 0;
    while (checked < 100) {
        auto s = testutil::refine_scene(rng, 0.4);
        const DistanceField f(s.inst.mask);
        const auto cam = testutil::perturbed(s.truth, rng, 20, 10, 0.2);
        Mat2x3 M = cam.M;
        for (int i = 0; i < 6; ++i)
            M(i / 3, i % 3) += 0.5 * rng.normal();
        if (!testutil::away_from_kinks(M, cam.T, s.shape, 1e-3))
            continue;
        const double err = testutil::gradient_check(M, cam.T, s.shape, s.obs, f, rng.uniform(0.1, 5));
        worst = std::max(worst, err);
        bad += err > 1e-3;
        ++checked;
    }
    return {increases == 0 && bad == 0, "1000 calls, " + std::to_string(increases) +
                                            " increases; 100 gradient checks, worst rel. error " + fmt("%.2e", worst)};
}

// ---- 5: end-to-end reconstruction of convex shapes from three views

Outcome end_to_end()
{
    const auto dir = demo_directory(5, 5);
    RunConfig cfg;
    cfg.grid_res = 96;
    apply_config_value(cfg, "views", "4,3,0;93,-4,0;-6,82,0");
    const auto s = synthesize(dir, cfg);
    const auto coll = with_mirrors(s.collection);
    const auto cams = estimate_cameras(coll, cfg);
    const auto run = reconstruct_collection(coll, cams, cfg, 15.0, &s.gt);
    const double sign = gauge_depth_sign(cams.shape, s.gt);
    std::vector<double> err;
    for (const auto& rec : run.instances)
        err.push_back(evaluate_mesh(extract_surface(rec.labeling), rec.id, cams, s.gt, sign, cfg).percent);
    const double mean = std::accumulate(err.begin(), err.end(), 0.0) / err.size();
    const double worst = *std::max_element(err.begin(), err.end());
    return {err.size() == 15 && worst <= 8.0, std::to_string(err.size()) + " instances, mean " + fmt("%.2f", mean) +
                                                  "%, worst " + fmt("%.2f", worst) + "% of the bbox diagonal"};
}

// ---- 6: imprinting fills in the wings

Outcome imprint_ablation()
{
    const Vec3 body(0.3, 0.25, 0.6);
    const double span = 0.55;
    const auto winged = make_winged_box("winged", body, span, 0.06, 0.3);
    AnnotatedCollection coll;
    coll.schema = demo_schema();
    std::vector<ScaledOrthoCamera> cams;
    const int W = 160;
    const double alpha = 45;
    auto add = [&](const LabeledShape& shape, double az, double el, const std::string& id) {
        const auto cam = ScaledOrthoCamera::from_rotation(viewpoint_to_rotation(az, el, 0), alpha, Vec2(W / 2.0, W / 2.0));
        const Instance inst = render_synthetic_instance(shape.mesh, shape.keypoints, cam, W, W, id, "demo");
        coll.instances.push_back(inst);
        cams.push_back(cam);
        coll.instances.push_back(mirror_instance(inst, coll.schema));
        cams.push_back(cam.mirrored(W));
    };
    // reference: wings across the image; surrogates: plain boxes from the side and from above
    add(winged, 0, 0, "winged_front");
    for (int b = 0; b < 3; ++b) {
        const auto box = make_box("box" + std::to_string(b), body);
        add(box, 90 + 4 * b, 2 * b, box.name + "_side");
        add(box, 3 * b, 85 - 2 * b, box.name + "_top");
    }
    MeanShape mean;
    const auto ref_box = make_box("m", body);
    mean.S.resize(3, static_cast<Eigen::Index>(ref_box.keypoints.size()));
    for (std::size_t k = 0; k < ref_box.keypoints.size(); ++k) {
        mean.S.col(static_cast<Eigen::Index>(k)) = ref_box.keypoints[k];
        mean.keypoint_indices.push_back(static_cast<int>(k));
    }
    const auto grid = VoxelGrid::centered(64, 1.0);
    ReconstructionContext ctx(coll, cams, mean, grid, 15.0);
    ctx.set_field_cache(true);

    const auto rays = build_imprint_rays(coll.instances[0].mask, cams[0], grid);
    std::vector<std::size_t> wing_rays;
    for (std::size_t r = 0; r < rays.rays.size(); ++r) {
        bool outside = true;
        for (auto v : rays.rays[r])
            outside &= std::abs(grid.center(v).x()) > body.x() + grid.spacing;
        if (outside)
            wing_rays.push_back(r);
    }
    auto wing_coverage = [&](const VoxelLabeling& L) {
        std::size_t hit = 0;
        for (auto r : wing_rays)
            hit += std::any_of(rays.rays[r].begin(), rays.rays[r].end(), [&](auto v) { return L.occupancy[v] != 0; });
        return wing_rays.empty() ? 0.0 : 100.0 * hit / wing_rays.size();
    };

    ReconstructOptions o;
    o.n_samples = 5;
    o.seed = 6;
    const auto imp = reconstruct_instance("winged_front", ctx, o);
    o.imprint = false;
    const auto plain = reconstruct_instance("winged_front", ctx, o);
    const double diag = winged.mesh.bbox_diagonal();
    bool pass = !wing_rays.empty();
    double e_imp = 0, e_plain = 0, cov_imp = 100, cov_plain = 0;
    for (std::size_t p = 0; p < imp.size(); ++p) {
        const double a = symmetric_distance(extract_surface(imp[p].labeling), winged.mesh, diag, 20000, 60 + p);
        const double b = symmetric_distance(extract_surface(plain[p].labeling), winged.mesh, diag, 20000, 60 + p);
        const double ci = wing_coverage(imp[p].labeling), cp = wing_coverage(plain[p].labeling);
        pass &= a < b && ci == 100.0 && cp == 0.0;
        e_imp += a / imp.size();
        e_plain += b / imp.size();
        cov_imp = std::min(cov_imp, ci);
        cov_plain = std::max(cov_plain, cp);
    }
    return {pass, "mean error imprinted " + fmt("%.2f", e_imp) + "% vs plain " + fmt("%.2f", e_plain) +
                      "%; wing coverage (" + std::to_string(wing_rays.size()) + " rays) plain " + fmt("%.0f", cov_plain) +
                      "% -> imprinted " + fmt("%.0f", cov_imp) + "%"};
}

// ---- 7: ranking against random and oracle selection

Outcome ranking_vs_random()
{
    double ranked_sum = 0, random_sum = 0, oracle_sum = 0;
    std::size_t n = 0;
    for (int seed = 0; seed < 20; ++seed) {
        const auto dir = demo_directory(6, 700 + seed);
        RunConfig cfg;
        cfg.seed = seed;
        cfg.grid_res = 32;
        cfg.n_samples = 20;
        cfg.n_views = 4;
        cfg.image_size = 128;
        cfg.rms_samples = 2000;
        cfg.selection = SelectionMode::oracle;
        const auto s = synthesize(dir, cfg);
        const auto coll = with_mirrors(s.collection);
        const auto cams = estimate_cameras(coll, cfg);
        const auto run = reconstruct_collection(coll, cams, cfg, 15.0, &s.gt);
        for (const auto& rec : run.instances) {
            // proposals are in ranked order; random selection is uniform over them
            double mean = 0, best = 1e300;
            for (const auto& p : rec.proposals) {
                mean += *p.oracle_error / rec.proposals.size();
                best = std::min(best, *p.oracle_error);
            }
            ranked_sum += *rec.proposals.front().oracle_error;
            random_sum += mean;
            oracle_sum += best;
            ++n;
        }
    }
    const double ranked = ranked_sum / n, random = random_sum / n, oracle = oracle_sum / n;
    return {ranked <= random && oracle <= ranked, std::to_string(n) + " instances over 20 seeds: oracle " +
                                                      fmt("%.2f", oracle) + "% <= ranked " + fmt("%.2f", ranked) +
                                                      "% <= random " + fmt("%.2f", random) + "%"};
}

// ---- 8: metric correctness

Outcome metric_checks()
{
    const auto a = make_ellipsoid_mesh(Vec3(0.5, 0.4, 0.9));
    const double self = symmetric_distance(a, a, 1.0);
    const double t = 1e-6;
    const auto s0 = make_box_mesh(Vec3(0.5, 0.5, t / 2), Vec3(0, 0, 0));
    const auto s1 = make_box_mesh(Vec3(0.5, 0.5, t / 2), Vec3(0, 0, 1));
    const double slab = rms_distance(s0, s1, 20000, 3);

    Rng rng(808);
    auto random_shape = [&] {
        const Vec3 h(rng.uniform(0.3, 1), rng.uniform(0.3, 1), rng.uniform(0.3, 1));
        TriangleMesh m = rng.uniform() < 0.5 ? make_box_mesh(h) : make_ellipsoid_mesh(h, 12, 24);
        m.transform(testutil::random_rotation(rng), 0.2 * Vec3(rng.normal(), rng.normal(), rng.normal()));
        return m;
    };
    double worst = 0;
    for (int p = 0; p < 10; ++p) {
        const auto x = random_shape(), y = random_shape();
        const double d = std::max(x.bbox_diagonal(), y.bbox_diagonal());
        const double sampled = symmetric_distance(x, y, d, 20000, 1000 + p);
        const double dense = symmetric_distance(x, y, d, 200000, 2000 + p);
        worst = std::max(worst, std::abs(sampled - dense) / dense);
    }
    // closest points are recomputed in floating point, so "zero" means roundoff
    return {self <= 1e-9 && std::abs(slab - 1.0) <= 2e-3 && worst <= 0.01,
            "self " + fmt("%.1e", self) + ", slabs " + fmt("%.5f", slab) + ", worst deviation from dense " +
                fmt("%.3f", 100 * worst) + "%"};
}

// ---- 9: CLI determinism

int sh(const std::string& cmd)
{
    const int st = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            out[fs::relative(e.path(), dir).string()] = testutil::slurp(e.path());
    return out;
}

Outcome cli_determinism()
{
    testutil::TempDir tmp("acceptance_cli");
    const std::string bin = SILHLIFT_BIN;
    auto pass_with = [&](const std::string& threads, const fs::path& root) {
        const std::string env = "SILHLIFT_THREADS=" + threads + " ";
        const std::string r = "'" + root.string() + "'";
        const std::string fast = " --grid-res 32 --samples 5 --rms-samples 1000 --seed 3";
        int bad = 0;
        bad += sh(env + bin + " demo-shapes --count 5 --seed 3 --out " + r + "/shapes") != 0;
        bad += sh(env + bin + " synth " + r + "/shapes --views 4 --image-size 96 --seed 3 --out " + r + "/synth") != 0;
        bad += sh(env + bin + " cameras " + r + "/synth/manifest.json --seed 3 --out " + r + "/cams.json") != 0;
        bad += sh(env + bin + " reconstruct " + r + "/synth/manifest.json " + r + "/cams.json" + fast +
                  " --threshold-deg 10,20 --out " + r + "/recon") != 0;
        bad += sh(env + bin + " reconstruct " + r + "/synth/manifest.json " + r + "/cams.json" + fast +
                  " --selection random --out " + r + "/random") != 0;
        bad += sh(env + bin + " evaluate " + r + "/random " + r + "/synth/gt --rms-samples 1000 --out " + r + "/eval") != 0;
        bad += sh(env + bin + " cluster " + r + "/shapes --k 2 --rms-samples 1000 --out " + r + "/cluster") != 0;
        return bad;
    };
    const int fails = pass_with("1", tmp / "a") + pass_with("4", tmp / "b") + pass_with("0", tmp / "c");
    const auto a = snapshot(tmp / "a");
    const bool same = a == snapshot(tmp / "b") && a == snapshot(tmp / "c");
    return {fails == 0 && same && a.size() > 20,
            std::to_string(a.size()) + " output files compared across 1, 4 and default workers; " +
                (same ? "byte identical" : "differences found") +
                (fails ? ", " + std::to_string(fails) + " commands failed" : "")};
}

} // namespace

int main()
{
    struct Criterion {
        int id;
        const char* name;
        double limit_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "closed-form imprint optimality", 5, imprint_optimality},
        {2, "imprint coverage guarantee", 120, imprint_guarantee},
        {3, "camera recovery", 60, camera_recovery},
        {4, "refinement monotonicity and gradient", 30, refinement_checks},
        {5, "end-to-end synthetic reconstruction", 600, end_to_end},
        {6, "imprinting ablation", 60, imprint_ablation},
        {7, "ranking beats random", 900, ranking_vs_random},
        {8, "metric correctness", 60, metric_checks},
        {9, "CLI determinism", 600, cli_determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.limit_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::printf("criterion %d %-40s %s  %s [%.1f s, limit %.0f s%s]\n", c.id, c.name, pass ? "PASS" : "FAIL",
                    o.detail.c_str(), secs, c.limit_s, in_time ? "" : ", too slow");
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
