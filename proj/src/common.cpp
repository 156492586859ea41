#include "silhlift/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace silhlift {

bool Mask::contains_point(double u, double v) const
{
    return at(static_cast<int>(std::floor(u + 0.5)), static_cast<int>(std::floor(v + 0.5)));
}

std::size_t Mask::count() const
{
    return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](auto p) { return p != 0; }));
}

Vec2 Mask::centroid() const
{
    double sx = 0, sy = 0;
    std::size_t n = 0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (pixels[index(x, y)]) {
                sx += x;
                sy += y;
                ++n;
            }
    if (n == 0)
        throw InputError("centroid of empty mask");
    return {sx / n, sy / n};
}

Mask::Box Mask::bounding_box() const
{
    Box b{width, height, -1, -1};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (pixels[index(x, y)]) {
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x);
                b.y1 = std::max(b.y1, y);
            }
    if (b.x1 < 0)
        throw InputError("bounding box of empty mask");
    return b;
}

double Mask::Box::diagonal() const
{
    return std::hypot(x1 - x0 + 1.0, y1 - y0 + 1.0);
}

std::uint64_t splitmix64(std::uint64_t& x)
{
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t x = root ^ h;
    return splitmix64(x);
}

// xoshiro256**
Rng::Rng(std::uint64_t seed)
{
    for (auto& s : state_)
        s = splitmix64(seed);
}

static inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

std::uint64_t Rng::next_u64()
{
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::uniform_index(std::size_t n)
{
    if (n == 0)
        throw std::invalid_argument("uniform_index(0)");
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
        r = next_u64();
    } while (r >= limit);
    return static_cast<std::size_t>(r % n);
}

double Rng::normal()
{
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

namespace {
std::atomic<int> g_worker_override{0};
}

int worker_count()
{
    if (int o = g_worker_override.load(); o > 0)
        return o;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0)
        hw = 1;
    if (const char* env = std::getenv("SILHLIFT_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0)
            hw = std::min(hw, cap);
    }
    return hw;
}

void set_worker_count(int n) { g_worker_override.store(std::max(0, n)); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn)
{
    const int workers = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(worker_count())));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n)
                    return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error)
                        first_error = std::current_exception();
                }
            }
        });
    for (auto& t : pool)
        t.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

Mat3 rotation_about(const Vec3& axis, double angle_rad)
{
    return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

double geodesic_angle_deg(const Mat3& a, const Mat3& b)
{
    const Mat3 d = a * b.transpose();
    const double c = (d.trace() - 1.0) / 2.0;
    const Vec3 w(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
    return rad2deg(std::atan2(0.5 * w.norm(), c));
}

} // namespace silhlift
