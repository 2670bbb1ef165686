//! SO(3) / SE(3) helpers: exponential and logarithm maps, Jacobians, and the
//! quaternion-to-matrix map used for Gaussian covariances.

use nalgebra::{Matrix3, Vector3, Vector4};

const SERIES_THRESHOLD: f64 = 0.05;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`, scaled so that
/// `vee_antisym(skew(u)) == 2u`. Equivalently `vee_antisym(a) . u == tr(a * skew(u))`.
pub fn vee_antisym(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        m[(1, 2)] - m[(2, 1)],
        m[(2, 0)] - m[(0, 2)],
        m[(0, 1)] - m[(1, 0)],
    )
}

/// (1 - cos θ) / θ²
fn coef_a(theta: f64) -> f64 {
    if theta < SERIES_THRESHOLD {
        let t2 = theta * theta;
        0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 * t2 * t2 / 40320.0
    } else {
        (1.0 - theta.cos()) / (theta * theta)
    }
}

/// (θ - sin θ) / θ³
fn coef_b(theta: f64) -> f64 {
    if theta < SERIES_THRESHOLD {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362880.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// a'(θ) / θ
fn coef_da(theta: f64) -> f64 {
    if theta < SERIES_THRESHOLD {
        let t2 = theta * theta;
        -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0
    } else {
        let t4 = theta.powi(4);
        theta.sin() / (theta * theta * theta) - 2.0 * (1.0 - theta.cos()) / t4
    }
}

/// b'(θ) / θ
fn coef_db(theta: f64) -> f64 {
    if theta < SERIES_THRESHOLD {
        let t2 = theta * theta;
        -1.0 / 60.0 + t2 / 1260.0 - t2 * t2 / 60480.0
    } else {
        let t4 = theta.powi(4);
        (1.0 - theta.cos()) / t4 - 3.0 * (theta - theta.sin()) / (t4 * theta)
    }
}

/// Rodrigues' formula.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let s = if theta < SERIES_THRESHOLD {
        let t2 = theta * theta;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 * t2 * t2 / 5040.0
    } else {
        theta.sin() / theta
    };
    Matrix3::identity() + k * s + k * k * coef_a(theta)
}

/// Logarithm of a rotation matrix, valid for rotation angles below π.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-7 {
        return w * 0.5;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near π: recover the axis from the symmetric part.
        let b = (r + Matrix3::identity()) * 0.5;
        let mut axis = Vector3::new(
            b[(0, 0)].max(0.0).sqrt(),
            b[(1, 1)].max(0.0).sqrt(),
            b[(2, 2)].max(0.0).sqrt(),
        );
        if b[(0, 1)] < 0.0 {
            axis.y = -axis.y;
        }
        if b[(0, 2)] < 0.0 {
            axis.z = -axis.z;
        }
        return axis.normalize() * theta;
    }
    w * (theta / (2.0 * theta.sin()))
}

/// Left Jacobian of SO(3); also the `V` matrix of the SE(3) exponential.
pub fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    Matrix3::identity() + k * coef_a(theta) + k * k * coef_b(theta)
}

/// Right Jacobian of SO(3): `exp(ω + δ) ≈ exp(ω) · exp(J_r(ω) δ)`.
pub fn right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian(&-omega)
}

pub fn left_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let c = if theta < SERIES_THRESHOLD {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

/// `∂(J_l(ω) u) / ∂ω`, a 3×3 matrix.
pub fn left_jacobian_times_derivative(omega: &Vector3<f64>, u: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let wxu = omega.cross(u);
    let wwu = omega.cross(&wxu);
    let a = coef_a(theta);
    let b = coef_b(theta);
    let term_a = wxu * omega.transpose() * coef_da(theta) - skew(u) * a;
    let term_b = wwu * omega.transpose() * coef_db(theta)
        + (Matrix3::identity() * omega.dot(u) + omega * u.transpose()
            - u * omega.transpose() * 2.0)
            * b;
    term_a + term_b
}

/// SE(3) exponential of the twist `(omega, upsilon)`: returns `(R, t)`.
pub fn se3_exp(omega: &Vector3<f64>, upsilon: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    (so3_exp(omega), left_jacobian(omega) * upsilon)
}

pub fn se3_log(r: &Matrix3<f64>, t: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let omega = so3_log(r);
    (omega, left_jacobian_inverse(&omega) * t)
}

/// Rotation matrix of the (not necessarily unit) quaternion `q = (w, x, y, z)`
/// after normalization.
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient w.r.t. the rotation matrix back to the raw quaternion,
/// including the normalization step of [`quat_to_matrix`].
pub fn quat_to_matrix_backward(q: &Vector4<f64>, grad_r: &Matrix3<f64>) -> Vector4<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = grad_r;
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gu = Vector4::new(gw, gx, gy, gz);
    let u = Vector4::new(w, x, y, z);
    (gu - u * u.dot(&gu)) / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_matrix<F: Fn(&Vector3<f64>) -> Vector3<f64>>(f: F, at: &Vector3<f64>) -> Matrix3<f64> {
        let h = 1e-6;
        let mut m = Matrix3::zeros();
        for k in 0..3 {
            let mut p = *at;
            let mut n = *at;
            p[k] += h;
            n[k] -= h;
            m.set_column(k, &((f(&p) - f(&n)) / (2.0 * h)));
        }
        m
    }

    #[test]
    fn exp_of_quarter_turn_about_z() {
        let r = so3_exp(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn log_inverts_exp() {
        for w in [
            Vector3::new(0.3, -0.2, 0.1),
            Vector3::new(1e-9, 0.0, 2e-9),
            Vector3::new(0.0, 3.0, 0.1),
            Vector3::new(0.01, 0.02, -0.03),
        ] {
            let back = so3_log(&so3_exp(&w));
            assert!((back - w).norm() <= 1e-9 * w.norm().max(1e-12), "{w} -> {back}");
        }
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        for w in [Vector3::new(0.4, -0.7, 0.2), Vector3::new(0.01, 0.02, 0.0)] {
            let base = so3_exp(&w);
            // exp(w + d) = exp(w) exp(J_r d) => log(exp(w)^T exp(w + d)) ≈ J_r d
            let numeric = fd_matrix(|p| so3_log(&(base.transpose() * so3_exp(p))), &w);
            assert_relative_eq!(numeric, right_jacobian(&w), epsilon = 1e-8);
        }
    }

    #[test]
    fn left_jacobian_derivative_matches_finite_differences() {
        let u = Vector3::new(0.3, 1.2, -0.5);
        for w in [
            Vector3::new(0.4, -0.7, 0.2),
            Vector3::new(0.01, 0.02, -0.01),
            Vector3::new(0.0, 0.0, 0.0),
        ] {
            let numeric = fd_matrix(|p| left_jacobian(p) * u, &w);
            assert_relative_eq!(
                numeric,
                left_jacobian_times_derivative(&w, &u),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn se3_log_inverts_exp() {
        let w = Vector3::new(0.5, -0.1, 0.9);
        let v = Vector3::new(1.0, 2.0, -3.0);
        let (r, t) = se3_exp(&w, &v);
        let (w2, v2) = se3_log(&r, &t);
        assert_relative_eq!(w, w2, epsilon = 1e-12);
        assert_relative_eq!(v, v2, epsilon = 1e-12);
    }

    #[test]
    fn quaternion_backward_matches_finite_differences() {
        let q = Vector4::new(0.8, 0.3, -0.4, 0.2);
        let g = Matrix3::new(0.1, -0.5, 0.3, 0.7, 0.2, -0.1, 0.4, 0.9, -0.6);
        let analytic = quat_to_matrix_backward(&q, &g);
        let h = 1e-6;
        for k in 0..4 {
            let mut p = q;
            let mut n = q;
            p[k] += h;
            n[k] -= h;
            let fp = quat_to_matrix(&p).component_mul(&g).sum();
            let fnn = quat_to_matrix(&n).component_mul(&g).sum();
            assert_relative_eq!((fp - fnn) / (2.0 * h), analytic[k], epsilon = 1e-8);
        }
    }
}
