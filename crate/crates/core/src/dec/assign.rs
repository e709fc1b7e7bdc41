//! Student's-t soft assignment, the sharpened target distribution, and the
//! KL clustering loss with its gradients.

use ndarray::{Array2, ArrayView2, Axis};

use super::{DecError, Result};
use crate::net::Scalar;

/// Floor applied to `q` inside the KL logarithm.
pub const ASSIGNMENT_FLOOR: f64 = 1e-12;

fn check_widths(z: usize, c: usize) -> Result<()> {
    if z != c {
        return Err(DecError::Shape(format!("points have {z} dims, centers {c}")));
    }
    Ok(())
}

/// `q_ij ∝ (1 + ‖z_i − μ_j‖²/ν)^(−(ν+1)/2)`, rows normalised.
pub fn soft_assign<T: Scalar>(z: ArrayView2<'_, T>, centers: ArrayView2<'_, T>, nu: T) -> Result<Array2<T>> {
    check_widths(z.ncols(), centers.ncols())?;
    if !(nu > T::zero()) {
        return Err(DecError::Argument("nu must be positive".into()));
    }
    let m = centers.nrows();
    let power = -(nu + T::one()) / (T::one() + T::one());
    let mut q = Array2::<T>::zeros((z.nrows(), m));
    crate::parallel::for_each_row_mut(&mut q, |i, mut row| {
        let zi = z.row(i);
        for (j, c) in centers.rows().into_iter().enumerate() {
            let d2 = zi.iter().zip(c).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
            row[j] = (T::one() + d2 / nu).powf(power);
        }
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    });
    Ok(q)
}

/// `p_ij = (q_ij²/f_j) / Σ_j' (q_ij'²/f_j')` with soft frequencies `f_j = Σ_i q_ij`.
pub fn target_distribution<T: Scalar>(q: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let f = q.sum_axis(Axis(0));
    if let Some(j) = f.iter().position(|&v| !(v > T::zero())) {
        return Err(DecError::DegenerateCluster { cluster: j });
    }
    let mut p = q.to_owned();
    crate::parallel::for_each_row_mut(&mut p, |_, mut row| {
        for (v, &fj) in row.iter_mut().zip(f.iter()) {
            *v = *v * *v / fj;
        }
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    });
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecLosses<T = f32> {
    pub kl: T,
    pub recon: T,
    pub total: T,
}

/// Per-item KL divergence `(1/N) Σ p log(p/q)`, with `0·log 0 = 0` and
/// `q` floored at [`ASSIGNMENT_FLOOR`]. Also returns how many entries hit the floor.
pub fn kl_divergence<T: Scalar>(p: ArrayView2<'_, T>, q: ArrayView2<'_, T>) -> Result<(T, usize)> {
    if p.dim() != q.dim() {
        return Err(DecError::Shape(format!("p is {:?}, q is {:?}", p.dim(), q.dim())));
    }
    let n = p.nrows();
    if n == 0 {
        return Ok((T::zero(), 0));
    }
    let floor = T::from_f64(ASSIGNMENT_FLOOR).unwrap();
    let mut clamped = 0;
    let mut sum = T::zero();
    for (&pv, &qv) in p.iter().zip(q.iter()) {
        if pv > T::zero() {
            let qv = if qv < floor {
                clamped += 1;
                floor
            } else {
                qv
            };
            sum = sum + pv * (pv / qv).ln();
        }
    }
    Ok((sum / T::from_usize(n).unwrap(), clamped))
}

/// `kl` and `total = kl + λ·recon_mse`.
pub fn dec_losses<T: Scalar>(p: ArrayView2<'_, T>, q: ArrayView2<'_, T>, recon_mse: T, lambda: T) -> Result<DecLosses<T>> {
    let (kl, clamped) = kl_divergence(p, q)?;
    if clamped > 0 {
        log::warn!("{clamped} soft assignments below {ASSIGNMENT_FLOOR:e} were clamped in the KL term");
    }
    Ok(DecLosses {
        kl,
        recon: recon_mse,
        total: kl + lambda * recon_mse,
    })
}

/// Gradients of the per-item KL loss with `p` held fixed:
///
/// `∂L/∂z_i = (ν+1)/(νB) Σ_j (p_ij − q_ij)(z_i − μ_j) / (1 + ‖z_i − μ_j‖²/ν)`
/// and `∂L/∂μ_j = −(ν+1)/(νB) Σ_i (same term)`.
pub fn kl_gradients<T: Scalar>(
    z: ArrayView2<'_, T>,
    centers: ArrayView2<'_, T>,
    q: ArrayView2<'_, T>,
    p: ArrayView2<'_, T>,
    nu: T,
) -> Result<(Array2<T>, Array2<T>)> {
    check_widths(z.ncols(), centers.ncols())?;
    let (b, m) = q.dim();
    if p.dim() != (b, m) || z.nrows() != b || centers.nrows() != m {
        return Err(DecError::Shape("inconsistent shapes for KL gradient".into()));
    }
    let mut dz = Array2::<T>::zeros(z.raw_dim());
    let mut dmu = Array2::<T>::zeros(centers.raw_dim());
    if b == 0 {
        return Ok((dz, dmu));
    }
    let scale = (nu + T::one()) / (nu * T::from_usize(b).unwrap());
    for i in 0..b {
        let zi = z.row(i);
        for j in 0..m {
            let c = centers.row(j);
            let d2 = zi.iter().zip(c).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
            let w = scale * (p[[i, j]] - q[[i, j]]) / (T::one() + d2 / nu);
            for k in 0..zi.len() {
                let g = w * (zi[k] - c[k]);
                dz[[i, k]] = dz[[i, k]] + g;
                dmu[[j, k]] = dmu[[j, k]] - g;
            }
        }
    }
    Ok((dz, dmu))
}

/// Row-wise argmax, ties to the lowest column.
pub fn hard_labels<T: Scalar>(q: ArrayView2<'_, T>) -> Vec<usize> {
    q.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn single_center_is_certain() {
        let z = array![[0.3f32, -1.0], [4.0, 2.0]];
        let c = array![[1.0f32, 1.0]];
        let q = soft_assign(z.view(), c.view(), 1.0).unwrap();
        assert!(q.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn hand_evaluated_one_dimensional_case() {
        let q = soft_assign(array![[0.0f64]].view(), array![[0.0], [1.0]].view(), 1.0).unwrap();
        assert!((q[[0, 0]] - 2.0 / 3.0).abs() < 1e-12);
        assert!((q[[0, 1]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let q = soft_assign(array![[0.0f32, 0.0]].view(), array![[1.0, 0.0], [-1.0, 0.0]].view(), 1.0).unwrap();
        assert_eq!(q.row(0).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn non_unit_nu_uses_general_exponent() {
        // ν = 3: kernel (1 + d²/3)^(-2).
        let q = soft_assign(array![[0.0f64]].view(), array![[0.0], [3.0]].view(), 3.0).unwrap();
        let k1 = 1.0;
        let k2 = (1.0f64 + 9.0 / 3.0).powf(-2.0);
        assert!((q[[0, 0]] - k1 / (k1 + k2)).abs() < 1e-12);
    }

    #[test]
    fn one_hot_rows_are_fixed_points() {
        let q = array![[1.0f64, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert_eq!(target_distribution(q.view()).unwrap(), q);
    }

    #[test]
    fn single_row_is_unchanged() {
        let p = target_distribution(array![[0.6f64, 0.4]].view()).unwrap();
        assert!((p[[0, 0]] - 0.6).abs() < 1e-12 && (p[[0, 1]] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_target() {
        let p = target_distribution(array![[0.9f32, 0.1], [0.5, 0.5]].view()).unwrap();
        let expect = [[0.9720f32, 0.0280], [0.3, 0.7]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p[[i, j]] - expect[i][j]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn empty_column_is_degenerate() {
        let r = target_distribution(array![[1.0f32, 0.0], [1.0, 0.0]].view());
        assert!(matches!(r, Err(DecError::DegenerateCluster { cluster: 1 })));
    }

    #[test]
    fn kl_examples() {
        let q = array![[0.3f64, 0.7]];
        let l = dec_losses(q.view(), q.view(), 0.25, 5.0).unwrap();
        assert_eq!(l.kl, 0.0);
        assert_eq!(l.total, 1.25);
        let l = dec_losses(array![[1.0f64, 0.0]].view(), array![[0.5, 0.5]].view(), 0.7, 0.0).unwrap();
        assert!((l.kl - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(l.total, l.kl);
    }

    #[test]
    fn zero_q_under_positive_p_is_clamped() {
        let (kl, clamped) = kl_divergence(array![[1.0f64, 0.0]].view(), array![[0.0, 1.0]].view()).unwrap();
        assert_eq!(clamped, 1);
        assert!((kl - (1.0 / ASSIGNMENT_FLOOR).ln()).abs() < 1e-9);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let z = array![[0.2f64, -0.4], [1.1, 0.3], [-0.5, 0.9]];
        let c = array![[0.0f64, 0.0], [1.0, 1.0], [-1.0, 0.5]];
        let nu = 1.7;
        let q0 = soft_assign(z.view(), c.view(), nu).unwrap();
        let p = target_distribution(q0.view()).unwrap();
        let (dz, dmu) = kl_gradients(z.view(), c.view(), q0.view(), p.view(), nu).unwrap();
        let loss = |z: &Array2<f64>, c: &Array2<f64>| {
            let q = soft_assign(z.view(), c.view(), nu).unwrap();
            kl_divergence(p.view(), q.view()).unwrap().0
        };
        let eps = 1e-6;
        for idx in [(0, 0), (1, 1), (2, 0)] {
            let (mut up, mut down) = (z.clone(), z.clone());
            up[idx] += eps;
            down[idx] -= eps;
            let fd = (loss(&up, &c) - loss(&down, &c)) / (2.0 * eps);
            assert!((fd - dz[idx]).abs() < 1e-7, "{fd} vs {}", dz[idx]);
            let (mut up, mut down) = (c.clone(), c.clone());
            up[idx] += eps;
            down[idx] -= eps;
            let fd = (loss(&z, &up) - loss(&z, &down)) / (2.0 * eps);
            assert!((fd - dmu[idx]).abs() < 1e-7, "{fd} vs {}", dmu[idx]);
        }
    }

    fn row_sums_ok(a: &Array2<f32>) -> bool {
        a.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-6)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn soft_assign_rows_are_distributions(
            n in 1usize..12, m in 2usize..6, d in 1usize..5,
            seed in any::<u64>(), nu in 0.2f32..4.0,
        ) {
            let mut rng = crate::net::RngState::new(seed);
            let z = Array2::from_shape_fn((n, d), |_| rng.uniform_in(-3.0, 3.0));
            let c = Array2::from_shape_fn((m, d), |_| rng.uniform_in(-3.0, 3.0));
            let q = soft_assign(z.view(), c.view(), nu).unwrap();
            prop_assert!(row_sums_ok(&q));
            prop_assert!(q.iter().all(|&v| v > 0.0 && v <= 1.0));
            let p = target_distribution(q.view()).unwrap();
            prop_assert!(row_sums_ok(&p));
        }

        #[test]
        fn equal_masses_sharpen_and_keep_argmax(m in 2usize..6, seed in any::<u64>()) {
            // Circulant q: every column has the same mass.
            let mut rng = crate::net::RngState::new(seed);
            let mut base: Vec<f64> = (0..m).map(|_| 0.05 + rng.uniform() as f64).collect();
            let s: f64 = base.iter().sum();
            base.iter_mut().for_each(|v| *v /= s);
            let q = Array2::from_shape_fn((m, m), |(i, j)| base[(j + m - i) % m]);
            let p = target_distribution(q.view()).unwrap();
            let uniform = base.iter().all(|&v| (v - base[0]).abs() < 1e-12);
            for i in 0..m {
                let qmax = q.row(i).iter().cloned().fold(0.0, f64::max);
                let pmax = p.row(i).iter().cloned().fold(0.0, f64::max);
                prop_assert!(pmax >= qmax - 1e-9);
                if !uniform {
                    prop_assert!(pmax > qmax);
                }
            }
            prop_assert_eq!(hard_labels(p.view()), hard_labels(q.view()));
        }
    }
}
