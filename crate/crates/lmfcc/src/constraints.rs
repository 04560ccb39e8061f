//! Loss regularizers and direct kernel updates for the four components.
//!
//! Two families of constraints keep a learnt kernel close to the numerical
//! character of its static counterpart:
//!
//! * `reg_*` — scalar penalties added to the training loss as
//!   `L + lambda * g(K)`. Each is zero exactly on its constraint set
//!   (offset cosines, symmetric orthogonal matrices, the zero filterbank,
//!   orthonormal matrices).
//! * `proj_*` — projections applied to the kernel right after a gradient
//!   step: mirrored absolute window, `F F^T` symmetrization, positivity
//!   clamping, and the Q factor of a QR decomposition.
//!
//! `reg_*_grad` variants return the penalty together with its gradient so
//! the trainer can fold it into backpropagation.

use crate::error::{Error, Result};
use crate::kernels::Component;
use crate::linalg::{qr_positive, Mat};
use std::f64::consts::PI;

/// How a kernel is constrained during adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintMode {
    /// Plain data-driven adaptation, no constraint.
    #[default]
    None,
    /// Add `lambda * g_loss(K)` to the training objective.
    LossReg,
    /// Apply `g_kernel` to the kernel after every optimizer step.
    KernelUpdate,
}

impl std::str::FromStr for ConstraintMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(ConstraintMode::None),
            "loss" => Ok(ConstraintMode::LossReg),
            "kernel" => Ok(ConstraintMode::KernelUpdate),
            other => Err(format!("unknown constraint mode '{other}'")),
        }
    }
}

/// Replacement value for non-positive melbank entries in the kernel update.
pub const MELBANK_EPSILON: f64 = 1e-4;

/// Threshold below which a diagonal of R counts as rank deficiency.
pub const QR_RANK_TOL: f64 = 1e-12;

fn reference_cosine(len: usize) -> Vec<f64> {
    (0..len).map(|n| -(2.0 * PI * n as f64 / len as f64).cos()).collect()
}

/// Distance from the mean-normalized window to a cosine:
/// `||(W - mean(W)) - C||` with `C(n) = -cos(2 pi n / M)`.
pub fn reg_window(window: &[f64]) -> Result<f64> {
    Ok(reg_window_grad(window)?.0)
}

/// [`reg_window`] plus its gradient with respect to the window.
pub fn reg_window_grad(window: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = window.len();
    if m == 0 {
        return Err(Error::InvalidArg { op: "reg_window", reason: "empty window".into() });
    }
    let mean = window.iter().sum::<f64>() / m as f64;
    let cosine = reference_cosine(m);
    let resid: Vec<f64> = window.iter().zip(&cosine).map(|(w, c)| (w - mean) - c).collect();
    let value = crate::linalg::norm2(&resid);
    if value == 0.0 {
        return Ok((0.0, vec![0.0; m]));
    }
    // d||r||/dW = (r - mean(r)) / ||r||; the centering projection is self-adjoint.
    let resid_mean = resid.iter().sum::<f64>() / m as f64;
    let grad = resid.iter().map(|r| (r - resid_mean) / value).collect();
    Ok((value, grad))
}

/// Asymmetry of the Frobenius-normalized kernel:
/// `||F_norm - F_norm F_norm^T||` with `F_norm = sqrt(N) F / ||F||_F`.
pub fn reg_dft(f: &Mat) -> Result<f64> {
    Ok(reg_dft_grad(f)?.0)
}

/// [`reg_dft`] plus its gradient with respect to the kernel.
pub fn reg_dft_grad(f: &Mat) -> Result<(f64, Mat)> {
    if f.rows() != f.cols() {
        return Err(Error::ShapeMismatch {
            op: "reg_dft",
            detail: format!("{}x{} kernel is not square", f.rows(), f.cols()),
        });
    }
    let norm = f.frob_norm();
    if norm == 0.0 {
        return Err(Error::ZeroMatrix { op: "reg_dft" });
    }
    let n = f.rows();
    let scale = (n as f64).sqrt() / norm;
    let mut a = f.clone();
    a.scale(scale);

    let mut dist = a.matmul_nt(&a); // A A^T
    dist.scale(-1.0);
    dist.add_scaled(&a, 1.0); // A - A A^T
    let value = dist.frob_norm();
    if value == 0.0 {
        return Ok((0.0, Mat::zeros(n, n)));
    }

    // d||R||/dA with R = A - A A^T is Rh - Rh A - Rh^T A, Rh = R / ||R||.
    let mut rh = dist;
    rh.scale(1.0 / value);
    let mut grad_a = rh.clone();
    grad_a.add_scaled(&rh.matmul(&a), -1.0);
    grad_a.add_scaled(&rh.matmul_tn(&a), -1.0);

    // Chain through A = scale(F) * F where scale depends on ||F||_F.
    let inner = grad_a
        .data()
        .iter()
        .zip(f.data())
        .map(|(g, x)| g * x)
        .sum::<f64>();
    let mut grad = grad_a;
    grad.scale(scale);
    grad.add_scaled(f, -scale * inner / (norm * norm));
    Ok((value, grad))
}

/// Squared Frobenius norm of the filterbank (the L2 sparsity penalty).
pub fn reg_melbank(melbank: &Mat) -> f64 {
    melbank.data().iter().map(|v| v * v).sum()
}

/// [`reg_melbank`] plus its gradient `2 M`.
pub fn reg_melbank_grad(melbank: &Mat) -> (f64, Mat) {
    let mut grad = melbank.clone();
    grad.scale(2.0);
    (reg_melbank(melbank), grad)
}

/// Soft orthonormality penalty `||D^T D - I||^2`.
pub fn reg_dct(d: &Mat) -> Result<f64> {
    Ok(reg_dct_grad(d)?.0)
}

/// [`reg_dct`] plus its gradient `4 D (D^T D - I)`.
pub fn reg_dct_grad(d: &Mat) -> Result<(f64, Mat)> {
    if d.rows() != d.cols() {
        return Err(Error::ShapeMismatch {
            op: "reg_dct",
            detail: format!("{}x{} matrix is not square", d.rows(), d.cols()),
        });
    }
    let n = d.rows();
    let mut gram = d.matmul_tn(d); // D^T D
    for i in 0..n {
        gram.set(i, i, gram.get(i, i) - 1.0);
    }
    let value = gram.data().iter().map(|v| v * v).sum();
    let mut grad = d.matmul(&gram);
    grad.scale(4.0);
    Ok((value, grad))
}

/// Mirror the first half of the window and take absolute values:
/// `|cat(W[0..M/2], flip(W[0..M/2]))|`. Output is symmetric, non-negative.
pub fn proj_window(window: &[f64]) -> Result<Vec<f64>> {
    let m = window.len();
    if m == 0 || m % 2 != 0 {
        return Err(Error::InvalidArg {
            op: "proj_window",
            reason: format!("length {m} must be even and positive"),
        });
    }
    let half = m / 2;
    let mut out = Vec::with_capacity(m);
    out.extend(window[..half].iter().map(|v| v.abs()));
    out.extend(window[..half].iter().rev().map(|v| v.abs()));
    Ok(out)
}

/// Symmetrizing update `F F^T`.
pub fn proj_dft(f: &Mat) -> Result<Mat> {
    if f.rows() != f.cols() {
        return Err(Error::ShapeMismatch {
            op: "proj_dft",
            detail: format!("{}x{} kernel is not square", f.rows(), f.cols()),
        });
    }
    Ok(f.matmul_nt(f))
}

/// `F F^T` rescaled back to the input's Frobenius norm.
///
/// The raw update squares the kernel's singular values, so iterating it on
/// anything with spectral radius above one (the static DFT kernel has
/// sqrt(N/2)) leaves f64 range within ten steps. The trainer therefore
/// iterates this bounded variant: same direction, same symmetry, constant
/// scale. [`proj_dft`] remains the one-shot update as defined.
pub fn proj_dft_stabilized(f: &Mat) -> Result<Mat> {
    let norm_in = f.frob_norm();
    let mut out = proj_dft(f)?;
    let norm_out = out.frob_norm();
    if norm_out > 0.0 {
        out.scale(norm_in / norm_out);
    }
    Ok(out)
}

/// Replace strictly negative entries with [`MELBANK_EPSILON`].
///
/// Exact zeros are left in place: the static filterbank is zero outside each
/// filter's support and must be a fixed point of this update.
pub fn proj_melbank(melbank: &Mat) -> Mat {
    let mut out = melbank.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = MELBANK_EPSILON;
        }
    }
    out
}

/// Q factor of the QR decomposition with `diag(R) > 0`.
pub fn proj_dct(d: &Mat) -> Result<Mat> {
    if d.rows() != d.cols() {
        return Err(Error::ShapeMismatch {
            op: "proj_dct",
            detail: format!("{}x{} matrix is not square", d.rows(), d.cols()),
        });
    }
    let (q, _r) = qr_positive(d)?;
    Ok(q)
}

/// Sum of the loss regularizers over the tensors of one component.
///
/// The DFT component carries two kernels; both are penalized.
pub fn component_reg(ks: &crate::kernels::KernelSet, component: Component) -> Result<f64> {
    match component {
        Component::Window => reg_window(&ks.window),
        Component::Dft => Ok(reg_dft(&ks.dft_real)? + reg_dft(&ks.dft_imag)?),
        Component::Melbank => Ok(reg_melbank(&ks.melbank)),
        Component::Dct => reg_dct(&ks.dct),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{init_dct, init_melbank, init_window, MfccConfig};

    fn fd_grad(f: impl Fn(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
        let mut grads = Vec::with_capacity(theta.len());
        let mut point = theta.to_vec();
        for i in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta[i].abs());
            point[i] = theta[i] + h;
            let plus = f(&point);
            point[i] = theta[i] - h;
            let minus = f(&point);
            point[i] = theta[i];
            grads.push((plus - minus) / (2.0 * h));
        }
        grads
    }

    #[test]
    fn window_reg_zero_on_offset_cosine() {
        let m = 64;
        let w: Vec<f64> =
            (0..m).map(|n| -(2.0 * PI * n as f64 / m as f64).cos() + 7.3).collect();
        let v = reg_window(&w).unwrap();
        // Exact zero in real arithmetic; float mean-removal leaves rounding dust.
        assert!(v < 1e-12, "reg = {v:e}");
    }

    #[test]
    fn window_reg_on_hamming_matches_frozen_value() {
        let w = init_window(400).unwrap();
        let v = reg_window(&w).unwrap();
        assert!((v - 7.62906017890737).abs() < 1e-9, "reg = {v}");
    }

    #[test]
    fn window_reg_scaling_breaks_the_match() {
        let m = 32;
        let doubled: Vec<f64> =
            (0..m).map(|n| 2.0 * (-(2.0 * PI * n as f64 / m as f64).cos()) + 1.0).collect();
        assert!(reg_window(&doubled).unwrap() > 0.1);
        assert!(reg_window(&[]).is_err());
    }

    #[test]
    fn window_reg_gradient_matches_finite_differences() {
        let w: Vec<f64> = (0..12).map(|n| 0.6 + 0.3 * (n as f64 * 0.9).sin()).collect();
        let (_, grad) = reg_window_grad(&w).unwrap();
        let fd = fd_grad(|t| reg_window(t).unwrap(), &w);
        for (a, f) in grad.iter().zip(&fd) {
            assert!((a - f).abs() < 1e-7, "analytic {a} vs fd {f}");
        }
    }

    #[test]
    fn dft_reg_zero_for_scaled_identity_and_scale_invariant() {
        // Positive scaling only: normalization preserves sign, and -I is not
        // a zero of the penalty.
        for c in [1.0, 2.5, 0.3] {
            let mut f = Mat::identity(5);
            f.scale(c);
            assert!(reg_dft(&f).unwrap() < 1e-12);
        }
        let f = Mat::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let v1 = reg_dft(&f).unwrap();
        let mut scaled = f.clone();
        scaled.scale(13.7);
        let v2 = reg_dft(&scaled).unwrap();
        assert!((v1 - v2).abs() < 1e-10);
        assert!(reg_dft(&Mat::zeros(3, 3)).is_err());
    }

    #[test]
    fn dft_reg_of_three_cycle_permutation() {
        // P has unit rows, so ||P||_F = sqrt(3) and F_norm = P; P P^T = I,
        // and ||P - I|| counts six unit entries.
        let p = Mat::from_vec(3, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let v = reg_dft(&p).unwrap();
        assert!((v - 6.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dft_reg_gradient_matches_finite_differences() {
        let f = Mat::from_fn(4, 4, |i, j| 0.4 * ((i * 5 + j * 11) % 7) as f64 - 1.0);
        let (_, grad) = reg_dft_grad(&f).unwrap();
        let fd = fd_grad(
            |t| reg_dft(&Mat::from_vec(4, 4, t.to_vec())).unwrap(),
            f.data(),
        );
        for (a, fdv) in grad.data().iter().zip(&fd) {
            assert!((a - fdv).abs() < 1e-6, "analytic {a} vs fd {fdv}");
        }
    }

    #[test]
    fn melbank_reg_values_and_homogeneity() {
        assert_eq!(reg_melbank(&Mat::zeros(3, 4)), 0.0);
        let mut m = Mat::zeros(2, 2);
        m.set(0, 1, 2.0);
        assert_eq!(reg_melbank(&m), 4.0);
        let mut scaled = m.clone();
        scaled.scale(3.0);
        assert!((reg_melbank(&scaled) - 9.0 * reg_melbank(&m)).abs() < 1e-12);
        let (v, g) = reg_melbank_grad(&m);
        assert_eq!(v, 4.0);
        assert_eq!(g.get(0, 1), 4.0);
    }

    #[test]
    fn dct_reg_zero_on_orthonormal_matrices() {
        let d = init_dct(30).unwrap();
        assert!(reg_dct(&d).unwrap() < 1e-20);

        let mut two_i = Mat::identity(2);
        two_i.scale(2.0);
        assert!((reg_dct(&two_i).unwrap() - 18.0).abs() < 1e-12);

        // Random rotation built by QR is orthonormal, so the penalty vanishes.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let a = Mat::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let (q, _) = qr_positive(&a).unwrap();
        assert!(reg_dct(&q).unwrap() < 1e-20);
    }

    #[test]
    fn dct_reg_gradient_matches_finite_differences() {
        let d = Mat::from_fn(3, 3, |i, j| 0.7 * ((i * 3 + j) as f64 * 0.61).cos());
        let (_, grad) = reg_dct_grad(&d).unwrap();
        let fd = fd_grad(
            |t| reg_dct(&Mat::from_vec(3, 3, t.to_vec())).unwrap(),
            d.data(),
        );
        for (a, f) in grad.data().iter().zip(&fd) {
            assert!((a - f).abs() < 1e-6);
        }
    }

    #[test]
    fn window_projection_hand_cases() {
        assert_eq!(proj_window(&[1.0, 2.0, 2.0, 1.0]).unwrap(), vec![1.0, 2.0, 2.0, 1.0]);
        assert_eq!(proj_window(&[-1.0, 2.0, 0.0, 5.0]).unwrap(), vec![1.0, 2.0, 2.0, 1.0]);
        assert!(proj_window(&[1.0, 2.0, 3.0]).is_err());

        let hamming = init_window(400).unwrap();
        let projected = proj_window(&hamming).unwrap();
        for (a, b) in projected.iter().zip(&hamming) {
            assert!((a - b).abs() < 1e-15);
        }

        // Idempotence is exact: the output is symmetric and non-negative.
        let once = proj_window(&[-3.0, 0.5, 1.0, -2.0, 9.0, 4.0]).unwrap();
        let twice = proj_window(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn dft_projection_hand_cases_and_symmetry() {
        let eye = Mat::identity(3);
        assert!(proj_dft(&eye).unwrap().max_abs_diff(&eye) == 0.0);

        let perm = Mat::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        assert!(proj_dft(&perm).unwrap().max_abs_diff(&Mat::identity(2)) == 0.0);

        let f = Mat::from_vec(2, 2, vec![1.0, 1.0, 0.0, 1.0]);
        let expect = Mat::from_vec(2, 2, vec![2.0, 1.0, 1.0, 1.0]);
        assert!(proj_dft(&f).unwrap().max_abs_diff(&expect) == 0.0);

        let random = Mat::from_fn(9, 9, |i, j| ((i * 17 + j * 5) % 23) as f64 * 0.13 - 1.2);
        let sym = proj_dft(&random).unwrap();
        assert!(sym.max_abs_diff(&sym.transpose()) < 1e-12);
    }

    #[test]
    fn stabilized_dft_projection_is_symmetric_and_bounded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut f = Mat::from_fn(16, 16, |_, _| rng.gen_range(-3.0..3.0));
        let norm0 = f.frob_norm();
        for _ in 0..50 {
            f = proj_dft_stabilized(&f).unwrap();
            assert!(f.is_finite());
            assert!((f.frob_norm() - norm0).abs() < 1e-9 * norm0);
            assert!(f.max_abs_diff(&f.transpose()) < 1e-12);
        }
        // Raw and stabilized updates agree up to the scale factor.
        let g = Mat::from_fn(4, 4, |i, j| (i * 4 + j) as f64 * 0.3 - 1.0);
        let raw = proj_dft(&g).unwrap();
        let stab = proj_dft_stabilized(&g).unwrap();
        let ratio = g.frob_norm() / raw.frob_norm();
        let mut scaled = raw.clone();
        scaled.scale(ratio);
        assert!(scaled.max_abs_diff(&stab) < 1e-12);

        let zero = Mat::zeros(3, 3);
        assert_eq!(proj_dft_stabilized(&zero).unwrap(), zero);
    }

    #[test]
    fn melbank_projection_semantics() {
        let m = Mat::from_vec(2, 2, vec![0.5, -0.2, 0.0, 0.3]);
        let p = proj_melbank(&m);
        assert_eq!(p.get(0, 0), 0.5);
        assert_eq!(p.get(0, 1), MELBANK_EPSILON);
        assert_eq!(p.get(1, 0), 0.0); // exact zeros stay put
        assert_eq!(p.get(1, 1), 0.3);
        assert!(p.data().iter().all(|&v| v >= 0.0));

        let strictly_positive = Mat::from_fn(3, 3, |i, j| 0.1 + (i + j) as f64);
        assert_eq!(proj_melbank(&strictly_positive), strictly_positive);

        // Idempotent, and the static filterbank is a fixed point.
        assert_eq!(proj_melbank(&p), p);
        let bank = init_melbank(&MfccConfig::default()).unwrap();
        assert_eq!(proj_melbank(&bank), bank);
    }

    #[test]
    fn dct_projection_hand_cases() {
        let d = Mat::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]);
        assert!(proj_dct(&d).unwrap().max_abs_diff(&Mat::identity(2)) < 1e-15);

        let swap = Mat::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        assert!(proj_dct(&swap).unwrap().max_abs_diff(&swap) < 1e-15);

        let singular = Mat::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(proj_dct(&singular), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn dct_projection_of_orthonormal_matrix_is_sign_stable() {
        let d = init_dct(12).unwrap();
        let q = proj_dct(&d).unwrap();
        for (a, b) in q.data().iter().zip(d.data()) {
            assert!((a.abs() - b.abs()).abs() < 1e-12);
        }
        // Idempotent up to rounding under the positive-diagonal convention.
        let q2 = proj_dct(&q).unwrap();
        assert!(q2.max_abs_diff(&q) < 1e-10);
    }

    #[test]
    fn reg_of_projected_dct_vanishes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let a = Mat::from_fn(7, 7, |_, _| rng.gen_range(-2.0..2.0));
        let q = proj_dct(&a).unwrap();
        assert!(reg_dct(&q).unwrap() < 1e-18);
    }
}
