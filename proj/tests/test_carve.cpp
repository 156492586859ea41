#include "silhlift/carve.hpp"
#include "synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

using namespace silhlift;

namespace {

// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix; columns of V
// are eigenvectors of the returned eigenvalues.
void jacobi_eigen(Mat3 A, Vec3& evals, Mat3& V)
{
    V.setIdentity();
    for (int sweep = 0; sweep < 100; ++sweep) {
        const double off = A(0, 1) * A(0, 1) + A(0, 2) * A(0, 2) + A(1, 2) * A(1, 2);
        if (off < 1e-30)
            break;
        for (int p = 0; p < 2; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (A(p, q) == 0)
                    continue;
                const double theta = (A(q, q) - A(p, p)) / (2 * A(p, q));
                const double t = (theta >= 0 ? 1 : -1) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                Mat3 J = Mat3::Identity();
                J(p, p) = c;
                J(q, q) = c;
                J(p, q) = s;
                J(q, p) = -s;
                A = J.transpose() * A * J;
                V = V * J;
            }
    }
    evals = A.diagonal();
}

Mat3X box_corners(const Vec3& half)
{
    Mat3X S(3, 8);
    for (int i = 0; i < 8; ++i)
        S.col(i) = Vec3((i & 1 ? 1 : -1) * half.x(), (i & 2 ? 1 : -1) * half.y(), (i & 4 ? 1 : -1) * half.z());
    return S;
}

std::array<DirectionCluster, 6> clusters_with_counts(std::array<int, 3> counts)
{
    std::array<DirectionCluster, 6> c;
    int id = 0;
    for (int j = 0; j < 3; ++j) {
        c[cluster_slot(j, 1)].axis = c[cluster_slot(j, -1)].axis = j;
        c[cluster_slot(j, -1)].sign = -1;
        for (int m = 0; m < counts[j]; ++m, ++id)
            c[cluster_slot(j, m % 2 ? -1 : 1)].members.push_back({0, "m" + std::to_string(id), 0});
    }
    return c;
}

int axis_of_member(const std::array<DirectionCluster, 6>& c, const std::string& id)
{
    for (const auto& cl : c)
        for (const auto& m : cl.members)
            if (m.id == id)
                return cl.axis;
    return -1;
}

Mask square(int w, int h, int x0, int y0, int x1, int y1)
{
    Mask m(w, h);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            m.set(x, y, true);
    return m;
}

} // namespace

TEST_CASE("principal directions of a stretched box")
{
    const Mat3X S = box_corners(Vec3(4, 2, 1));
    const auto d = principal_directions(S);
    CHECK(d.axes[0].isApprox(Vec3::UnitX()));
    CHECK(d.axes[1].isApprox(Vec3::UnitY()));
    CHECK(d.axes[2].isApprox(Vec3::UnitZ()));
    CHECK_FALSE(d.degenerate_variance);

    const Mat3 R = rotation_about(Vec3(1, 2, 3), 0.7);
    const auto r = principal_directions(R * S);
    for (int j = 0; j < 3; ++j)
        CHECK(std::abs(r.axes[j].dot(R * d.axes[j])) == doctest::Approx(1.0));
}

TEST_CASE("principal directions match Jacobi sweeps")
{
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        Mat3X S(3, 12);
        for (int k = 0; k < 12; ++k)
            S.col(k) = Vec3(3 * rng.normal(), 2 * rng.normal(), rng.normal());
        const Mat3X C = S.colwise() - S.rowwise().mean();
        Vec3 ev;
        Mat3 V;
        jacobi_eigen(C * C.transpose() / 12.0, ev, V);
        std::array<int, 3> order{0, 1, 2};
        std::sort(order.begin(), order.end(), [&](int a, int b) { return ev(a) > ev(b); });
        const auto d = principal_directions(S);
        for (int j = 0; j < 3; ++j) {
            CHECK(std::abs(d.axes[j].dot(V.col(order[j]))) == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(d.variances(j) == doctest::Approx(ev(order[j])).epsilon(1e-9));
            // Largest-magnitude component is positive.
            Eigen::Index i;
            d.axes[j].cwiseAbs().maxCoeff(&i);
            CHECK(d.axes[j](i) > 0);
        }
    }
}

TEST_CASE("planar and collinear shapes")
{
    Mat3X flat = box_corners(Vec3(2, 1, 0));
    const auto d = principal_directions(flat);
    CHECK(d.degenerate_variance);
    CHECK(std::abs(d.axes[2].dot(Vec3::UnitZ())) == doctest::Approx(1.0));
    Mat3X line = Mat3X::Zero(3, 4);
    line.row(0) << 0, 1, 2, 3;
    CHECK_THROWS_AS(principal_directions(line), InputError);
}

TEST_CASE("direction clustering")
{
    PrincipalDirections d;
    d.axes = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
    // A camera whose view axis is world +x.
    const Mat3 R = rotation_about(Vec3::UnitY(), -kPi / 2);
    auto c = cluster_by_direction({ScaledOrthoCamera::from_rotation(R, 1, Vec2::Zero())}, {"a"}, d);
    REQUIRE(c[cluster_slot(0, 1)].members.size() == 1);
    CHECK(c[cluster_slot(0, 1)].members[0].residual_deg == doctest::Approx(0.0).epsilon(1e-6));

    // One view axis on the body diagonal, one tilted 20 degrees from +z.
    const Vec3 far = Vec3(1, 1, 1).normalized();
    const Mat3 Rf = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), far).toRotationMatrix().transpose();
    const Mat3 Rt = rotation_about(Vec3::UnitX(), deg2rad(20));
    c = cluster_by_direction({ScaledOrthoCamera::from_rotation(Rf, 1, Vec2::Zero()),
                              ScaledOrthoCamera::from_rotation(Rt, 1, Vec2::Zero())},
                             {"far", "tilt"}, d, 15.0);
    for (const auto& cl : c)
        CHECK(cl.members.empty());

    Rng rng(2);
    std::vector<ScaledOrthoCamera> cams;
    std::vector<std::string> ids;
    for (int i = 0; i < 300; ++i) {
        cams.push_back(ScaledOrthoCamera::from_rotation(testutil::random_rotation(rng), 1, Vec2::Zero()));
        ids.push_back(std::to_string(i));
    }
    const Mat3 Q = rotation_about(Vec3(0.2, 0.5, 1), 0.3);
    d.axes = {Q.col(0), Q.col(1), Q.col(2)};
    c = cluster_by_direction(cams, ids, d, 25.0);
    std::map<std::string, int> slot;
    for (int s = 0; s < 6; ++s)
        for (const auto& m : c[s].members)
            slot[m.id] = s;
    for (int i = 0; i < 300; ++i) {
        const Vec3 v = cams[i].view_axis();
        int best = -1;
        double best_ang = 1e9;
        for (int j = 0; j < 3; ++j)
            for (int sg : {1, -1}) {
                const double ang = rad2deg(std::acos(std::clamp(sg * v.dot(d.axes[j]), -1.0, 1.0)));
                if (ang < best_ang) {
                    best_ang = ang;
                    best = cluster_slot(j, sg);
                }
            }
        const auto it = slot.find(ids[i]);
        if (best_ang <= 25.0) {
            REQUIRE(it != slot.end());
            CHECK(it->second == best);
        } else {
            CHECK(it == slot.end());
        }
    }
}

TEST_CASE("triplet sampling")
{
    Rng rng(3);
    auto c = clusters_with_counts({10, 10, 0});
    for (int t = 0; t < 200; ++t) {
        const auto tr = sample_triplet("ref", c, rng);
        std::array<int, 2> ax = tr.axes;
        std::sort(ax.begin(), ax.end());
        CHECK(ax == std::array<int, 2>{0, 1});
        CHECK(axis_of_member(c, tr.surrogates[0]) == tr.axes[0]);
        CHECK(axis_of_member(c, tr.surrogates[1]) == tr.axes[1]);
    }

    c = clusters_with_counts({1, 3, 0});
    for (int t = 0; t < 20; ++t) {
        const auto tr = sample_triplet("ref", c, rng);
        CHECK(std::find(tr.surrogates.begin(), tr.surrogates.end(), "m0") != tr.surrogates.end());
    }

    // Reference and its flipped copy are never surrogates.
    c = clusters_with_counts({0, 0, 0});
    c[cluster_slot(0, 1)].members = {{0, "ref", 0}, {1, mirror_id("ref"), 0}, {2, "x", 0}};
    c[cluster_slot(1, 1)].members = {{3, "y", 0}};
    for (int t = 0; t < 50; ++t) {
        const auto tr = sample_triplet("ref", c, rng);
        CHECK(tr.surrogates[0] != "ref");
        CHECK(tr.surrogates[1] != mirror_id("ref"));
    }

    c = clusters_with_counts({5, 0, 0});
    CHECK_THROWS_AS(sample_triplet("ref", c, rng), CoverageError);
    auto f = sample_triplet_or_fallback("ref", c, rng);
    CHECK(f.single_axis);
    CHECK(f.surrogates.size() == 2);
    CHECK(f.surrogates[0] != f.surrogates[1]);
    f = sample_triplet_or_fallback("ref", clusters_with_counts({0, 0, 0}), rng);
    CHECK(f.unconstrained);
    CHECK(f.surrogates.empty());
}

TEST_CASE("axis pair frequencies follow sampling without replacement")
{
    // counts (30, 10, 10): P({0,1}) = .6*.5 + .2*.75 = .45, P({0,2}) = .45, P({1,2}) = .1
    auto c = clusters_with_counts({30, 10, 10});
    Rng rng(4);
    const int n = 50000;
    std::array<int, 3> hits{0, 0, 0};
    int axis0 = 0;
    for (int t = 0; t < n; ++t) {
        const auto tr = sample_triplet("ref", c, rng);
        const int lo = std::min(tr.axes[0], tr.axes[1]), hi = std::max(tr.axes[0], tr.axes[1]);
        hits[lo == 0 ? (hi == 1 ? 0 : 1) : 2]++;
        axis0 += lo == 0;
    }
    const std::array<double, 3> p{0.45, 0.45, 0.10};
    double chi2 = 0;
    for (int i = 0; i < 3; ++i)
        chi2 += (hits[i] - n * p[i]) * (hits[i] - n * p[i]) / (n * p[i]);
    CHECK(chi2 < 9.21); // 2 dof, p = 0.01
    const double e0 = 0.9 * n, e1 = 0.1 * n;
    const double chi_axis = (axis0 - e0) * (axis0 - e0) / e0 + ((n - axis0) - e1) * ((n - axis0) - e1) / e1;
    CHECK(chi_axis < 6.63); // 1 dof, p = 0.01
}

TEST_CASE("rotational surrogates")
{
    ClassSchema s = demo_schema();
    s.rotational_symmetric = true;
    Instance ref;
    ref.id = "r";
    ref.mask = square(10, 10, 2, 2, 5, 5);
    Rng rng(5);
    const auto cam = ScaledOrthoCamera::from_rotation(testutil::random_rotation(rng), 3, Vec2(4, 4));
    const Vec3 axis = Vec3(0.1, 1, 0.2).normalized();
    const auto v = synthesize_rotational_surrogates(ref, cam, s, axis);
    REQUIRE(v.size() == 8);
    CHECK(v[0].camera.R == cam.R);
    CHECK(v[0].camera.M == cam.M);
    const Mat3 r4 = cam.R.transpose() * v[4].camera.R;
    CHECK((cam.R * r4 * r4 - cam.R).cwiseAbs().maxCoeff() < 1e-12);
    for (int a = 0; a < 8; ++a) {
        CHECK(v[a].mask == ref.mask);
        for (int b = a + 1; b < 8; ++b) {
            const double ang = geodesic_angle_deg(v[a].camera.R, v[b].camera.R);
            const double k = ang / 45.0;
            CHECK(std::abs(k - std::round(k)) < 1e-9);
            const int steps = std::min(b - a, 8 - (b - a));
            CHECK(ang == doctest::Approx(45.0 * steps).epsilon(1e-9));
        }
    }
    CHECK_THROWS_AS(synthesize_rotational_surrogates(ref, cam, demo_schema(), axis), InputError);
}

TEST_CASE("signed cone fields")
{
    const Mask m = square(101, 101, 20, 20, 80, 80);
    Instance inst;
    inst.id = "sq";
    inst.mask = m;
    VoxelGrid g;
    g.resolution = 1;
    g.spacing = 0.1;
    g.origin = Vec3::Constant(-0.05); // one voxel centered at the origin
    auto cam = ScaledOrthoCamera::from_rotation(Mat3::Identity(), 2.0, Vec2(50, 50));
    auto f = cone_signed_field(inst, cam, g);
    // 30 pixels to the nearest background pixel center at x = 19 is 31; the
    // boundary lies half a pixel earlier.
    CHECK(f.values[0] == doctest::Approx(-31.0 / 2.0));
    cam.T = Vec2(85, 50);
    f = cone_signed_field(inst, cam, g);
    CHECK(f.values[0] == doctest::Approx(2.5));

    Rng rng(6);
    for (int t = 0; t < 10; ++t) {
        Mask r(40, 30);
        for (auto& p : r.pixels)
            p = rng.uniform() < 0.5;
        inst.mask = r;
        const auto grid = VoxelGrid::centered(12, 1.0);
        const auto c = ScaledOrthoCamera::from_rotation(testutil::random_rotation(rng), rng.uniform(5, 15),
                                                        Vec2(rng.uniform(10, 30), rng.uniform(10, 20)));
        const auto sf = cone_signed_field(inst, c, grid);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const Vec2 u = c.project(grid.center(i));
            CHECK((sf.values[i] < 0) == r.contains_point(u.x(), u.y()));
        }
    }
}

TEST_CASE("plain visual hull")
{
    Rng rng(7);
    const auto grid = VoxelGrid::centered(6, 1.0);
    std::vector<SignedConeField> fields(3);
    for (auto& f : fields) {
        f.grid = grid;
        for (std::size_t i = 0; i < grid.size(); ++i)
            f.values.push_back(rng.uniform(-1, 0.3));
    }
    const auto L = plain_visual_hull(fields);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const bool any_pos = std::any_of(fields.begin(), fields.end(), [&](const auto& f) { return f.values[i] >= 0; });
        CHECK(L.occupancy[i] == !any_pos);
    }
}

TEST_CASE("three orthogonal views carve a cube")
{
    const auto cube = make_box_mesh(Vec3::Constant(0.5));
    const auto grid = VoxelGrid::centered(32, 1.0);
    std::vector<SignedConeField> fields;
    const Mat3 views[3] = {Mat3::Identity(), rotation_about(Vec3::UnitY(), kPi / 2), rotation_about(Vec3::UnitX(), kPi / 2)};
    for (int i = 0; i < 3; ++i) {
        const auto cam = ScaledOrthoCamera::from_rotation(views[i], 40, Vec2(63.5, 63.5));
        Instance inst;
        inst.id = std::to_string(i);
        inst.mask = rasterize_mesh(cube, cam, 128, 128);
        fields.push_back(cone_signed_field(inst, cam, grid));
    }
    const auto L = plain_visual_hull(fields);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec3 c = grid.center(i);
        const double d = c.cwiseAbs().maxCoeff();
        if (d < 0.5 - grid.spacing)
            CHECK(L.occupancy[i] == 1);
        else if (d > 0.5 + grid.spacing)
            CHECK(L.occupancy[i] == 0);
    }
}

TEST_CASE("imprint closed form equals the exhaustive constrained minimum")
{
    Rng rng(8);
    VoxelGrid g;
    g.resolution = 2;
    for (int t = 0; t < 1000; ++t) {
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
        const auto L = imprint_labeling(g, C, rays);
        CHECK(labeling_energy(L.occupancy, C) == best);
    }
}

TEST_CASE("imprinting with the reference alone reproduces its cone")
{
    Rng rng(9);
    const auto shape = make_ellipsoid("e", Vec3(0.4, 0.3, 0.9));
    const auto cam = ScaledOrthoCamera::from_rotation(testutil::random_rotation(rng), 40, Vec2(64, 64));
    Instance ref = render_synthetic_instance(shape.mesh, shape.keypoints, cam, 128, 128, "ref");
    const auto grid = VoxelGrid::centered(48, 1.2);
    ImprintStats st;
    const auto L = imprinted_visual_hull({cone_signed_field(ref, cam, grid)}, ref, cam, &st);
    CHECK(st.uncovered_rays == 0);
    CHECK(st.missed_cells == 0);
    const SilhouetteField sil(ref.mask);
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (L.occupancy[i]) {
            const Vec2 u = cam.project(grid.center(i));
            CHECK(ref.mask.contains_point(u.x(), u.y()));
        }
    CHECK(L == plain_visual_hull({cone_signed_field(ref, cam, grid)}));

    Instance other = ref;
    other.id = "other";
    CHECK_THROWS_AS(imprinted_visual_hull({cone_signed_field(other, cam, grid)}, ref, cam), InputError);

    const auto tiny = VoxelGrid::centered(16, 0.3);
    CHECK_THROWS_WITH_AS(imprinted_visual_hull({cone_signed_field(ref, cam, tiny)}, ref, cam),
                         doctest::Contains("grid too small"), InputError);
}

TEST_CASE("imprint rays partition the voxels")
{
    Rng rng(10);
    const auto shape = make_box("b", Vec3(0.5, 0.3, 0.8));
    for (int t = 0; t < 5; ++t) {
        const auto cam = ScaledOrthoCamera::from_rotation(testutil::random_rotation(rng), rng.uniform(20, 60),
                                                          Vec2(64, 64));
        const Instance ref = render_synthetic_instance(shape.mesh, shape.keypoints, cam, 128, 128);
        const auto grid = VoxelGrid::centered(24, 1.2);
        const auto rays = build_imprint_rays(ref.mask, cam, grid);
        std::vector<int> seen(grid.size(), 0);
        for (const auto& ray : rays.rays) {
            CHECK_FALSE(ray.empty());
            for (std::size_t k = 0; k < ray.size(); ++k) {
                seen[ray[k]]++;
                if (k > 0)
                    CHECK(cam.depth(grid.center(ray[k - 1])) <= cam.depth(grid.center(ray[k])));
            }
        }
        for (int s : seen)
            CHECK(s <= 1);
        CHECK(rays.rays.size() + rays.missed_cells == rays.foreground_cells);
    }
}

TEST_CASE("proposals for a synthetic class")
{
    Rng rng(11);
    auto sc = testutil::class_scene(demo_shape_family(6, 3), rng, 4);
    const auto grid = VoxelGrid::centered(32, 1.3);
    ReconstructionContext ctx(sc.collection, sc.cameras, sc.shape, grid, 15.0);
    ReconstructOptions o;
    o.n_samples = 20;
    o.seed = 5;
    const std::string ref = sc.collection.instances[0].id;
    const auto a = reconstruct_instance(ref, ctx, o);
    REQUIRE(a.size() == 20);
    const auto rays = build_imprint_rays(sc.collection.instances[0].mask, sc.cameras[0], grid);
    for (const auto& p : a) {
        CHECK(p.stats.uncovered_rays == 0);
        CHECK(count_uncovered_rays(p.labeling, rays) == 0);
        CHECK(p.triplet.reference == ref);
        for (const auto& s : p.triplet.surrogates) {
            CHECK(s != ref);
            CHECK(s != mirror_id(ref));
        }
    }
    const auto b = reconstruct_instance(ref, ctx, o);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].labeling == b[i].labeling);
        CHECK(a[i].triplet.surrogates == b[i].triplet.surrogates);
    }
    o.imprint = false;
    const auto c = reconstruct_instance(ref, ctx, o);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].triplet.surrogates == c[i].triplet.surrogates);
        CHECK(is_subset(c[i].labeling, a[i].labeling));
    }

    auto rot = sc.collection;
    rot.schema.rotational_symmetric = true;
    ReconstructionContext rctx(rot, sc.cameras, sc.shape, grid, 15.0);
    o.imprint = true;
    const auto r = reconstruct_instance(ref, rctx, o);
    REQUIRE(r.size() == 1);
    CHECK(r[0].triplet.rotational);
}

TEST_CASE("occupancy files round trip")
{
    testutil::TempDir dir("cvxl");
    Rng rng(12);
    for (int G : {1, 3, 7, 16}) {
        VoxelLabeling L;
        L.grid = VoxelGrid::centered(G, 0.7);
        L.grid.origin = Vec3(rng.normal(), rng.normal(), rng.normal());
        for (std::size_t i = 0; i < L.grid.size(); ++i)
            L.occupancy.push_back(rng.uniform() < 0.3);
        write_cvxl(L, dir / "l.cvxl");
        CHECK(std::filesystem::file_size(dir / "l.cvxl") == 40 + (L.grid.size() + 7) / 8);
        CHECK(read_cvxl(dir / "l.cvxl") == L);
    }
    const std::string bytes = testutil::slurp(dir / "l.cvxl");
    CHECK(bytes.substr(0, 4) == "CVXL");
    testutil::spit(dir / "bad.cvxl", bytes.substr(0, 30));
    CHECK_THROWS_AS(read_cvxl(dir / "bad.cvxl"), InputError);
}
