#pragma once

// Scalar-generic face construction shared by the double path and the
// forward-mode AutoDiff path that produces the binding Jacobians.

#include <Eigen/Core>

#include <cmath>

namespace meshgs::detail {

template <typename T>
using V3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using M3 = Eigen::Matrix<T, 3, 3>;

template <typename T>
M3<T> local_frame(const V3<T>& v1, const V3<T>& v2, const V3<T>& v3) {
    using std::sqrt;
    const V3<T> a = v2 - v1;
    const V3<T> b = v3 - v1;
    const V3<T> n = a.cross(b);
    const V3<T> t3 = n.cross(a);
    M3<T> r;
    r.col(0) = n / sqrt(n.squaredNorm());
    r.col(1) = a / sqrt(a.squaredNorm());
    r.col(2) = t3 / sqrt(t3.squaredNorm());
    return r;
}

/// M with M E = T where E is the equilateral triangle on edge v1 v2, both in
/// local-frame coordinates.
template <typename T>
M3<T> adaptive_transform_local(const V3<T>& v3_local, const T& edge_length) {
    using std::sqrt;
    const double s3 = std::sqrt(3.0);
    M3<T> m = M3<T>::Identity();
    m(1, 2) = (T(2.0) * v3_local[1] - edge_length) / (T(s3) * edge_length);
    m(2, 2) = T(2.0) * v3_local[2] / (T(s3) * edge_length);
    return m;
}

template <typename T>
M3<T> adaptive_transform_with_frame(const V3<T>& v1, const V3<T>& v2, const V3<T>& v3, const M3<T>& frame) {
    using std::sqrt;
    const V3<T> local = frame.transpose() * (v3 - v1);
    const T l = sqrt((v2 - v1).squaredNorm());
    return adaptive_transform_local<T>(local, l);
}

template <typename T>
M3<T> adaptive_transform(const V3<T>& v1, const V3<T>& v2, const V3<T>& v3) {
    return adaptive_transform_with_frame<T>(v1, v2, v3, local_frame<T>(v1, v2, v3));
}

template <typename T>
M3<T> world_covariance(const M3<T>& frame, const M3<T>& m, const T& r, const T& eps) {
    V3<T> d;
    d << eps, r * r, r * r;
    const M3<T> rm = frame * m;
    return rm * d.asDiagonal() * rm.transpose();
}

template <typename T>
M3<T> face_covariance(const V3<T>& v1, const V3<T>& v2, const V3<T>& v3, double radius_divisor) {
    using std::sqrt;
    const M3<T> frame = local_frame<T>(v1, v2, v3);
    const M3<T> m = adaptive_transform_with_frame<T>(v1, v2, v3, frame);
    const T r = sqrt((v1 - v2).squaredNorm()) / T(radius_divisor);
    const T eps = T(1e-6) * r * r;
    return world_covariance<T>(frame, m, r, eps);
}

} // namespace meshgs::detail
