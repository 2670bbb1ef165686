//! Real spherical harmonics up to degree 3, in the ordering and sign
//! convention used by Gaussian splatting renderers.

use nalgebra::Vector3;

pub const MAX_SH_DEGREE: usize = 3;
pub const MAX_SH_COEFFS: usize = 16;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values at unit direction `d` and their partials w.r.t. `d`.
pub fn basis_with_grad(
    degree: usize,
    d: &Vector3<f64>,
) -> ([f64; MAX_SH_COEFFS], [Vector3<f64>; MAX_SH_COEFFS]) {
    let mut b = [0.0; MAX_SH_COEFFS];
    let mut g = [Vector3::zeros(); MAX_SH_COEFFS];
    let (x, y, z) = (d.x, d.y, d.z);
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        g[1] = Vector3::new(0.0, -SH_C1, 0.0);
        b[2] = SH_C1 * z;
        g[2] = Vector3::new(0.0, 0.0, SH_C1);
        b[3] = -SH_C1 * x;
        g[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        g[4] = Vector3::new(y, x, 0.0) * SH_C2[0];
        b[5] = SH_C2[1] * y * z;
        g[5] = Vector3::new(0.0, z, y) * SH_C2[1];
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        g[6] = Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z) * SH_C2[2];
        b[7] = SH_C2[3] * x * z;
        g[7] = Vector3::new(z, 0.0, x) * SH_C2[3];
        b[8] = SH_C2[4] * (xx - yy);
        g[8] = Vector3::new(2.0 * x, -2.0 * y, 0.0) * SH_C2[4];
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            g[9] = Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0) * SH_C3[0];
            b[10] = SH_C3[1] * x * y * z;
            g[10] = Vector3::new(y * z, x * z, x * y) * SH_C3[1];
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            g[11] = Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z) * SH_C3[2];
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            g[12] = Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy)
                * SH_C3[3];
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            g[13] = Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z) * SH_C3[4];
            b[14] = SH_C3[5] * z * (xx - yy);
            g[14] = Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy) * SH_C3[5];
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
            g[15] = Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0) * SH_C3[6];
        }
    }
    (b, g)
}

/// Converts an RGB value to the DC coefficient that reproduces it.
pub fn rgb_to_dc(rgb: &Vector3<f64>) -> Vector3<f64> {
    rgb.map(|c| (c - 0.5) / SH_C0)
}
