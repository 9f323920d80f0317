#include "gsrig/types.hpp"

#include <cmath>

namespace gsrig {

Mat3 quat_to_matrix(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Vec4 matrix_to_quat(const Mat3& m) {
    // Shepperd's method: pick the largest diagonal combination for stability.
    Vec4 q;
    const double tr = m.trace();
    if (tr > 0) {
        double s = std::sqrt(tr + 1.0) * 2;
        q << 0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
            (m(1, 0) - m(0, 1)) / s;
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2;
        q << (m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
            (m(0, 2) + m(2, 0)) / s;
    } else if (m(1, 1) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2;
        q << (m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
            (m(1, 2) + m(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2;
        q << (m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s,
            (m(1, 2) + m(2, 1)) / s, 0.25 * s;
    }
    if (q[0] < 0) q = -q;
    return q.normalized();
}

Vec4 quat_multiply(const Vec4& a, const Vec4& b) {
    return Vec4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

Vec4 quat_normalized(const Vec4& q) { return q / q.norm(); }

void GaussianCloud::check_consistent() const {
    const size_t n = positions.size();
    if (n < 1) throw ArgumentError("GaussianCloud: N must be >= 1");
    if (rotations.size() != n || log_scales.size() != n ||
        opacity_logits.size() != n || colors.size() != n ||
        source_tags.size() != n)
        throw ShapeError("GaussianCloud: field lengths disagree");
}

Mat3 covariance_from_params(const Vec4& rotation, const Vec3& log_scale) {
    const Mat3 r = quat_to_matrix(rotation);
    const Vec3 s2 = (2.0 * log_scale).array().exp();
    return r * s2.asDiagonal() * r.transpose();
}

}  // namespace gsrig
