#include "meshgs/camera.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

namespace meshgs {

namespace {
int g_thread_count = 0;
} // namespace

int thread_count() {
    if (g_thread_count <= 0) {
        g_thread_count = std::max(1u, std::thread::hardware_concurrency());
    }
    return g_thread_count;
}

void set_thread_count(int n) { g_thread_count = std::max(1, n); }

void parallel_for(Index n, const std::function<void(Index)>& fn) {
    const int workers = static_cast<int>(std::min<Index>(thread_count(), n));
    if (workers <= 1) {
        for (Index i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (Index i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

void CameraModel::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("camera image size must be positive");
    if (!(near > 0.0)) throw ConfigError("camera near plane must be positive");
    if (!(far > near)) throw ConfigError("camera far plane must exceed near plane");
    if (!rotation.allFinite() || !translation.allFinite()) throw ConfigError("camera pose is not finite");
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (ortho >= 1e-6) throw ConfigError("camera rotation is not orthonormal");
}

Vec3 CameraModel::ndc(const Vec3& world) const {
    const Vec3 p = to_camera(world);
    if (!(p.z() > 0.0)) {
        const double inf = std::numeric_limits<double>::infinity();
        return {inf, inf, inf};
    }
    const double u = fx * p.x() / p.z() + cx;
    const double v = fy * p.y() / p.z() + cy;
    const double z = (far + near) / (far - near) - 2.0 * far * near / ((far - near) * p.z());
    return {2.0 * u / width - 1.0, 2.0 * v / height - 1.0, z};
}

CameraModel CameraModel::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_x,
                                 int width, int height, double near, double far) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-12) {
        // Looking along the up vector: pick any perpendicular.
        right = forward.cross(std::abs(forward.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY());
    }
    right.normalize();
    const Vec3 down = forward.cross(right);

    CameraModel cam;
    cam.rotation.row(0) = right;
    cam.rotation.row(1) = down;
    cam.rotation.row(2) = forward;
    cam.translation = -cam.rotation * eye;
    cam.width = width;
    cam.height = height;
    cam.fx = 0.5 * width / std::tan(0.5 * fov_x);
    cam.fy = cam.fx;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.near = near;
    cam.far = far;
    return cam;
}

} // namespace meshgs
