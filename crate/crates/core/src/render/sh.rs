//! Real spherical-harmonics basis up to degree 3, plus its direction
//! gradient for the backward pass. Constants and band ordering follow the
//! convention used by 3DGS-style checkpoints.

/// DC basis constant, `1/(2·√π)`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const SH_C1: f64 = 0.488_602_511_902_919_87;
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

/// Basis size for an SH degree.
pub fn basis_size(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Converts an RGB channel in `[0,1]` to the DC coefficient that reproduces
/// it under `color = 0.5 + SH_C0 · dc`.
pub fn channel_to_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}

/// Evaluates the real SH basis at a unit direction. Writes `basis_size(degree)`
/// values into `out`.
pub fn eval_basis(degree: usize, dir: &[f64; 3], out: &mut [f64]) {
    debug_assert!(degree <= 3);
    debug_assert!(out.len() >= basis_size(degree));
    let (x, y, z) = (dir[0], dir[1], dir[2]);
    out[0] = SH_C0;
    if degree >= 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[9] = SH_C3[0] * y * (3.0 * xx - yy);
        out[10] = SH_C3[1] * x * y * z;
        out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        out[14] = SH_C3[5] * z * (xx - yy);
        out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
}

/// Per-component derivatives of [`eval_basis`] with respect to the (raw,
/// un-normalized) direction components. `out[k]` is `∂Y_k/∂(x,y,z)`.
pub fn eval_basis_grad(degree: usize, dir: &[f64; 3], out: &mut [[f64; 3]]) {
    debug_assert!(out.len() >= basis_size(degree));
    let (x, y, z) = (dir[0], dir[1], dir[2]);
    out[0] = [0.0, 0.0, 0.0];
    if degree >= 1 {
        out[1] = [0.0, -SH_C1, 0.0];
        out[2] = [0.0, 0.0, SH_C1];
        out[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        out[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        out[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        out[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        out[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        out[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[9] = [
            SH_C3[0] * 6.0 * x * y,
            SH_C3[0] * (3.0 * xx - 3.0 * yy),
            0.0,
        ];
        out[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
        out[11] = [
            SH_C3[2] * -2.0 * x * y,
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            SH_C3[2] * 8.0 * y * z,
        ];
        out[12] = [
            SH_C3[3] * -6.0 * x * z,
            SH_C3[3] * -6.0 * y * z,
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        out[13] = [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            SH_C3[4] * -2.0 * x * y,
            SH_C3[4] * 8.0 * x * z,
        ];
        out[14] = [
            SH_C3[5] * 2.0 * x * z,
            SH_C3[5] * -2.0 * y * z,
            SH_C3[5] * (xx - yy),
        ];
        out[15] = [
            SH_C3[6] * (3.0 * xx - 3.0 * yy),
            SH_C3[6] * -6.0 * x * y,
            0.0,
        ];
    }
}

/// Resolves view-dependent color: `c_ch = max(0, 0.5 + Σ_k f[ch][k]·Y_k(dir))`
/// for a channel-major coefficient block. The caller clamps to `[0,1]` at
/// compositing time.
pub fn resolve_color(degree: usize, sh_block: &[f64], dir: &[f64; 3]) -> [f64; 3] {
    let n = basis_size(degree);
    debug_assert_eq!(sh_block.len(), 3 * n);
    let mut basis = [0.0f64; 16];
    eval_basis(degree, dir, &mut basis);
    let mut rgb = [0.0f64; 3];
    for ch in 0..3 {
        let mut acc = 0.5;
        for k in 0..n {
            acc += sh_block[ch * n + k] * basis[k];
        }
        rgb[ch] = acc.max(0.0);
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let v: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 0.3 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }

    #[test]
    fn dc_coefficients_reproduce_gray() {
        let sh = [channel_to_dc(0.5); 3];
        let rgb = resolve_color(0, &sh, &[0.0, 0.0, 1.0]);
        assert_eq!(rgb, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn degree_zero_is_direction_independent() {
        let sh = [0.3, -0.2, 0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reference = resolve_color(0, &sh, &[0.0, 0.0, 1.0]);
        for _ in 0..20 {
            let dir = random_dir(&mut rng);
            assert_eq!(resolve_color(0, &sh, &dir), reference);
        }
    }

    /// Independent degree-3 oracle: the 16 textbook polynomials written out
    /// term by term, with no shared constants.
    fn reference_basis(dir: &[f64; 3]) -> [f64; 16] {
        let (x, y, z) = (dir[0], dir[1], dir[2]);
        [
            0.28209479177387814,
            -0.4886025119029199 * y,
            0.4886025119029199 * z,
            -0.4886025119029199 * x,
            1.0925484305920792 * x * y,
            -1.0925484305920792 * y * z,
            0.31539156525252005 * (2.0 * z * z - x * x - y * y),
            -1.0925484305920792 * x * z,
            0.5462742152960396 * (x * x - y * y),
            -0.5900435899266435 * y * (3.0 * x * x - y * y),
            2.890611442640554 * x * y * z,
            -0.4570457994644658 * y * (4.0 * z * z - x * x - y * y),
            0.3731763325901154 * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y),
            -0.4570457994644658 * x * (4.0 * z * z - x * x - y * y),
            1.445305721320277 * z * (x * x - y * y),
            -0.5900435899266435 * x * (x * x - 3.0 * y * y),
        ]
    }

    #[test]
    fn degree_three_matches_reference_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let dir = random_dir(&mut rng);
            let mut sh = vec![0.0; 48];
            for v in sh.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
            let rgb = resolve_color(3, &sh, &dir);
            let basis = reference_basis(&dir);
            for ch in 0..3 {
                let mut expected = 0.5;
                for k in 0..16 {
                    expected += sh[ch * 16 + k] * basis[k];
                }
                expected = expected.max(0.0);
                assert_relative_eq!(rgb[ch], expected, max_relative = 1e-12, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..20 {
            // Gradients are of the raw polynomials, so probe at non-unit
            // points too.
            let p = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let mut grad = [[0.0; 3]; 16];
            eval_basis_grad(3, &p, &mut grad);
            for axis in 0..3 {
                let mut plus = p;
                let mut minus = p;
                plus[axis] += h;
                minus[axis] -= h;
                let mut bp = [0.0; 16];
                let mut bm = [0.0; 16];
                eval_basis(3, &plus, &mut bp);
                eval_basis(3, &minus, &mut bm);
                for k in 0..16 {
                    let fd = (bp[k] - bm[k]) / (2.0 * h);
                    assert_relative_eq!(grad[k][axis], fd, epsilon = 1e-5, max_relative = 1e-5);
                }
            }
        }
    }
}
