#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace silhlift {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2x3 = Eigen::Matrix<double, 2, 3>;
using Mat3 = Eigen::Matrix3d;
using Mat3X = Eigen::Matrix<double, 3, Eigen::Dynamic>;
using Mat2X = Eigen::Matrix<double, 2, Eigen::Dynamic>;

// Bad user input: malformed files, violated preconditions. Maps to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure inside an algorithm (NaN iterate, degenerate geometry).
// Maps to exit code 1.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Binary raster, row-major, foreground = 1. Pixel (x, y) has its center at
/// continuous coordinate (x, y).
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0) {}

    bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
    bool at(int x, int y) const { return in_bounds(x, y) && pixels[index(x, y)] != 0; }
    void set(int x, int y, bool v) { pixels[index(x, y)] = v ? 1 : 0; }
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }

    // Nearest pixel containing the continuous point (u, v).
    bool contains_point(double u, double v) const;

    std::size_t count() const;
    bool empty() const { return count() == 0; }
    Vec2 centroid() const;

    struct Box {
        int x0, y0, x1, y1; // inclusive
        double diagonal() const;
    };
    Box bounding_box() const;

    bool operator==(const Mask&) const = default;
};

/// Deterministic RNG with platform-independent sampling helpers.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform();                        // [0, 1)
    double uniform(double lo, double hi);
    std::size_t uniform_index(std::size_t n); // [0, n)
    double normal();

private:
    std::uint64_t state_[4];
};

std::uint64_t splitmix64(std::uint64_t& x);

// Named sub-stream of a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

/// Worker count: SILHLIFT_THREADS caps the hardware concurrency unless an
/// explicit override is set.
int worker_count();
void set_worker_count(int n); // 0 restores the environment/hardware default

/// Runs fn(i) for i in [0, n). Each index is processed exactly once; callers
/// write results into per-index slots so the output never depends on the
/// number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

Mat3 rotation_about(const Vec3& axis, double angle_rad);
double geodesic_angle_deg(const Mat3& a, const Mat3& b);

constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

} // namespace silhlift
