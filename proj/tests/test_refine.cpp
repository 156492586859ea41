#include "silhlift/refine.hpp"
#include "synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace silhlift;

namespace {

double brute_distance(const Mask& m, int x, int y)
{
    double best = std::numeric_limits<double>::infinity();
    for (int yy = 0; yy < m.height; ++yy)
        for (int xx = 0; xx < m.width; ++xx)
            if (m.at(xx, yy))
                best = std::min(best, std::hypot(double(xx - x), double(yy - y)));
    return best;
}

MeanShape single_point(const Vec3& p)
{
    MeanShape s;
    s.S = p;
    s.keypoint_indices = {0};
    return s;
}

} // namespace

TEST_CASE("distance transform small cases")
{
    Mask full(6, 4);
    for (auto& p : full.pixels)
        p = 1;
    const DistanceField zero(full);
    for (double v : zero.values())
        CHECK(v == 0.0);

    Mask one(16, 16);
    one.set(5, 5, true);
    const DistanceField f(one);
    CHECK(f.at(8, 9) == 5.0);
    CHECK(f.sample(8.0, 9.0) == doctest::Approx(5.0));

    CHECK_THROWS_AS(DistanceField(Mask(4, 4)), InputError);
}

TEST_CASE("distance transform equals brute force")
{
    Rng rng(1);
    for (int t = 0; t < 30; ++t) {
        Mask m(16, 16);
        const double density = rng.uniform(0.01, 0.3);
        for (auto& p : m.pixels)
            p = rng.uniform() < density;
        m.set(static_cast<int>(rng.uniform_index(16)), static_cast<int>(rng.uniform_index(16)), true);
        const DistanceField f(m);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                CHECK(f.at(x, y) == brute_distance(m, x, y));
    }
}

TEST_CASE("field queries outside the raster add the excess distance")
{
    Mask m(10, 10);
    m.set(9, 4, true);
    const DistanceField f(m);
    CHECK(f.sample(12.0, 4.0) == doctest::Approx(3.0));
    Vec2 g;
    f.sample(12.0, 4.0, g);
    CHECK(g.x() == doctest::Approx(1.0));
}

TEST_CASE("energy terms")
{
    Mask half(20, 10);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x <= 9; ++x)
            half.set(x, y, true);
    const DistanceField f(half);
    const auto S = single_point(Vec3(0, 0, 0));
    InstanceObservation obs;
    obs.points = Mat2X::Zero(2, 1);
    obs.visible = {true};

    auto cam = ScaledOrthoCamera::from_rotation(Mat3::Identity(), 10, Vec2(5, 5));
    obs.points.col(0) = cam.T;
    CHECK(refinement_energy(cam, S, obs, f, 1.0) == 0.0);

    cam.T = Vec2(12, 5);
    obs.points.col(0) = cam.T;
    CHECK(refinement_energy(cam, S, obs, f, 1.0) == doctest::Approx(3.0));
}

TEST_CASE("energy equals direct summation")
{
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
        auto s = testutil::refine_scene(rng, 0.3);
        const DistanceField f(s.inst.mask);
        const auto cam = testutil::perturbed(s.truth, rng, 10, 5, 0.1);
        const double lambda = rng.uniform(0, 3);
        double direct = 0;
        for (int k = 0; k < s.shape.size(); ++k) {
            const Vec2 u = cam.M * s.shape.S.col(k) + cam.T;
            if (s.obs.visible[k])
                direct += (u - s.obs.points.col(k)).squaredNorm();
            // bilinear field value inside the raster
            const int x0 = static_cast<int>(std::floor(u.x())), y0 = static_cast<int>(std::floor(u.y()));
            const double fx = u.x() - x0, fy = u.y() - y0;
            direct += lambda * ((1 - fx) * (1 - fy) * f.at(x0, y0) + fx * (1 - fy) * f.at(x0 + 1, y0) +
                                (1 - fx) * fy * f.at(x0, y0 + 1) + fx * fy * f.at(x0 + 1, y0 + 1));
        }
        CHECK(refinement_energy(cam, s.shape, s.obs, f, lambda) == doctest::Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("analytic gradient matches finite differences")
{
    Rng rng(3);
    int checked = 0;
    while (checked < 30) {
        auto s = testutil::refine_scene(rng, 0.4);
        const DistanceField f(s.inst.mask);
        const auto cam = testutil::perturbed(s.truth, rng, 20, 10, 0.2);
        Mat2x3 M = cam.M;
        for (int i = 0; i < 6; ++i)
            M(i / 3, i % 3) += 0.5 * rng.normal();
        if (!testutil::away_from_kinks(M, cam.T, s.shape, 1e-3))
            continue;
        CHECK(testutil::gradient_check(M, cam.T, s.shape, s.obs, f, rng.uniform(0.1, 5)) <= 1e-3);
        ++checked;
    }
}

TEST_CASE("refinement never increases the energy")
{
    Rng rng(4);
    for (int t = 0; t < 100; ++t) {
        auto s = testutil::refine_scene(rng, rng.uniform(0, 0.6));
        const auto cam0 = testutil::perturbed(s.truth, rng, rng.uniform(0, 30), rng.uniform(0, 15), 0.2);
        RefineOptions o;
        o.lambda = rng.uniform(0, 5);
        const auto r = refine_camera(cam0, s.shape, s.obs, s.inst.mask, o);
        const DistanceField f(s.inst.mask);
        CHECK(r.energy <= r.initial_energy);
        CHECK(refinement_energy(r.camera, s.shape, s.obs, f, o.lambda) <=
              refinement_energy(cam0, s.shape, s.obs, f, o.lambda) * (1 + 1e-12));
        CHECK(scaled_rotation_violation(r.camera.M) < 1e-9);
    }
}

TEST_CASE("stationary camera is returned unchanged")
{
    Mask m(40, 40);
    for (int y = 5; y < 35; ++y)
        for (int x = 5; x < 35; ++x)
            m.set(x, y, true);
    MeanShape S;
    S.S.resize(3, 4);
    S.S << 0, 1, 0, 1, 0, 0, 1, 1, 0, 0, 0, 1;
    S.keypoint_indices = {0, 1, 2, 3};
    const auto cam = ScaledOrthoCamera::from_rotation(Mat3::Identity(), 10, Vec2(15, 15));
    InstanceObservation obs;
    obs.points = (cam.M * S.S).colwise() + cam.T;
    obs.visible.assign(4, true);
    const auto r = refine_camera(cam, S, obs, m);
    CHECK(r.accepted_steps == 0);
    CHECK(r.camera.M == cam.M);
    CHECK(r.camera.T == cam.T);
}

TEST_CASE("silhouette term repairs a camera with hidden keypoints")
{
    // 40% of the keypoints hidden, start 15 degrees off.
    Rng rng(5);
    int improved = 0, trials = 0;
    for (int t = 0; t < 20; ++t) {
        auto s = testutil::refine_scene(rng, 0.4);
        if (s.obs.visible_count() < 3)
            continue;
        const auto cam0 = testutil::perturbed(s.truth, rng, 15, 0, 0);
        const auto r = refine_camera(cam0, s.shape, s.obs, s.inst.mask);
        ++trials;
        CHECK(r.energy < r.initial_energy);
        improved += geodesic_angle_deg(r.camera.R, s.truth.R) < geodesic_angle_deg(cam0.R, s.truth.R);
    }
    CHECK(improved == trials);
}

TEST_CASE("reprojection-only refinement does not exceed the starting residual")
{
    Rng rng(6);
    for (int t = 0; t < 20; ++t) {
        auto s = testutil::refine_scene(rng, 0.0);
        const auto cam0 = testutil::perturbed(s.truth, rng, 5, 3, 0.05);
        RefineOptions o;
        o.lambda = 0;
        const auto r = refine_camera(cam0, s.shape, s.obs, s.inst.mask, o);
        CHECK(r.energy <= r.initial_energy);
    }
}

TEST_CASE("cameras for new images")
{
    Rng rng(7);
    auto s = testutil::refine_scene(rng);
    // Frontal view of the mean shape.
    const auto cam = ScaledOrthoCamera::from_rotation(viewpoint_to_rotation(0, 0, 0), 45, Vec2(64, 64));
    const auto box = make_box("b", Vec3(s.shape.S.row(0).maxCoeff(), s.shape.S.row(1).maxCoeff(),
                                        s.shape.S.row(2).maxCoeff()));
    const Instance inst = render_synthetic_instance(box.mesh, box.keypoints, cam, 128, 128);
    auto obs = observation_for(inst, s.shape);
    const auto r = estimate_camera_for_new_image(s.shape, obs, inst.mask);
    const auto a = camera_to_viewpoint_angles(r.camera.R);
    CHECK(std::abs(a.azimuth) <= 5.0);
    CHECK(std::abs(a.elevation) <= 5.0);

    // Initialization sits on the mask centroid.
    Mask shifted(128, 128);
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x + 7 < 128; ++x)
            shifted.set(x + 7, y, inst.mask.at(x, y));
    RefineOptions o;
    o.max_iters = 0;
    const auto r0 = estimate_camera_for_new_image(s.shape, obs, shifted, o);
    CHECK(r0.camera.T.isApprox(shifted.centroid()));

    obs.visible.assign(obs.visible.size(), false);
    CHECK_THROWS_WITH_AS(estimate_camera_for_new_image(s.shape, obs, inst.mask), doctest::Contains("underdetermined"),
                         InputError);
}
