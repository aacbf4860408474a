//! Building blocks shared by both augmented-Lagrangian solvers: objective
//! evaluation, gradients of the smooth part, and the closed-form E, Z and μ
//! updates.

use nalgebra::DMatrix;

use super::Loss;
use crate::error::{Error, Result};
use crate::linalg::{self, shrink};
use crate::temporal::TemporalOperator;
use crate::tensor::EntryMask;

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Data-fidelity term on Ω: `‖P_Ω(r)‖₁` or `½‖P_Ω(r)‖_F²`.
pub fn data_loss(residual: &DMatrix<f64>, mask: &EntryMask, loss: Loss) -> f64 {
    let pairs = residual.iter().zip(mask.as_slice());
    match loss {
        Loss::Absolute => pairs.filter(|(_, &o)| o).map(|(r, _)| r.abs()).sum(),
        Loss::Squared => 0.5 * pairs.filter(|(_, &o)| o).map(|(r, _)| r * r).sum::<f64>(),
    }
}

/// `loss(P_Ω(Y − X)) + λ1‖X‖_* + (λ2/2)‖diff(X)‖²`.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mask: &EntryMask,
    op: TemporalOperator,
    lambda1: f64,
    lambda2: f64,
    loss: Loss,
) -> Result<f64> {
    same_shape(x, y, "objective")?;
    mask.check_shape(y)?;
    let nuclear = if lambda1 == 0.0 {
        0.0
    } else {
        linalg::nuclear_norm(x)
    };
    Ok(data_loss(&(y - x), mask, loss) + lambda1 * nuclear + 0.5 * lambda2 * op.diff_norm_sq(x))
}

/// The robust objective `‖P_Ω(Y − X)‖₁ + λ1‖X‖_* + (λ2/2)‖diff(X)‖²`.
pub fn tecromac_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mask: &EntryMask,
    op: TemporalOperator,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    objective(x, y, mask, op, lambda1, lambda2, Loss::Absolute)
}

/// Augmented Lagrangian
/// `‖P_Ω(E)‖₁ + λ1‖X‖_* + (λ2/2)‖diff(X)‖² + ⟨Z, Y−X−E⟩ + (μ/2)‖Y−X−E‖²`.
#[allow(clippy::too_many_arguments)]
pub fn augmented_lagrangian(
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
    y: &DMatrix<f64>,
    mask: &EntryMask,
    op: TemporalOperator,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    same_shape(x, y, "augmented Lagrangian (X)")?;
    same_shape(e, y, "augmented Lagrangian (E)")?;
    same_shape(z, y, "augmented Lagrangian (Z)")?;
    mask.check_shape(y)?;
    let nuclear = if lambda1 == 0.0 {
        0.0
    } else {
        linalg::nuclear_norm(x)
    };
    let r = y - x - e;
    Ok(data_loss(e, mask, Loss::Absolute)
        + lambda1 * nuclear
        + 0.5 * lambda2 * op.diff_norm_sq(x)
        + z.dot(&r)
        + 0.5 * mu * r.norm_squared())
}

/// Smooth part of the X-subproblem:
/// `f(X) = (λ2/2)‖diff(X)‖² + ⟨Z, Y−X−E⟩ + (μ/2)‖Y−X−E‖²`.
pub fn smooth_part(
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
    y: &DMatrix<f64>,
    op: TemporalOperator,
    lambda2: f64,
) -> f64 {
    let r = y - x - e;
    0.5 * lambda2 * op.diff_norm_sq(x) + z.dot(&r) + 0.5 * mu * r.norm_squared()
}

/// `∇f(X) = λ2·X·L − Z − μ(Y − X − E)`, with `L` the temporal Laplacian.
pub fn grad_f(
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
    y: &DMatrix<f64>,
    op: TemporalOperator,
    lambda2: f64,
) -> DMatrix<f64> {
    let mut g = if lambda2 == 0.0 {
        DMatrix::zeros(x.nrows(), x.ncols())
    } else {
        op.laplacian(x) * lambda2
    };
    let gs = g.as_mut_slice();
    for ((((g, &x), &e), &z), &y) in gs
        .iter_mut()
        .zip(x.as_slice())
        .zip(e.as_slice())
        .zip(z.as_slice())
        .zip(y.as_slice())
    {
        *g -= z + mu * (y - x - e);
    }
    g
}

/// Smallest admissible majorization constant: `‖λ2·L + μI‖₂ ≤ 4λ2 + μ`.
pub fn hessian_bound(lambda2: f64, mu: f64) -> f64 {
    4.0 * lambda2 + mu
}

/// One majorize-minimize step on `λ1‖X‖_* + f(X)`:
/// `SVT_{λ1/c}(X − ∇f(X)/c)`. Requires `c > 4λ2 + μ`.
#[allow(clippy::too_many_arguments)]
pub fn ipg_update_x(
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
    y: &DMatrix<f64>,
    op: TemporalOperator,
    c_step: f64,
    lambda1: f64,
    lambda2: f64,
) -> Result<linalg::Thresholded> {
    let bound = hessian_bound(lambda2, mu);
    if !(c_step > bound) {
        return Err(Error::InvalidParameter(format!(
            "step constant {c_step} does not majorize the Hessian bound {bound}"
        )));
    }
    let mut point = grad_f(x, e, z, mu, y, op, lambda2);
    point *= -1.0 / c_step;
    point += x;
    linalg::svt_with_rank(&point, lambda1 / c_step)
}

/// Closed-form minimizer over E of `loss(P_Ω(E)) + ⟨Z, Y−X−E⟩ + (μ/2)‖Y−X−E‖²`.
///
/// With `s = Y − X + Z/μ`: on Ω the absolute loss gives `S_{1/μ}(s)` and the
/// squared loss gives `μ·s/(1 + μ)`; off Ω, `E = s`.
pub fn update_e(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
    mask: &EntryMask,
    loss: Loss,
) -> Result<DMatrix<f64>> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu must be positive, got {mu}"
        )));
    }
    same_shape(x, y, "E update")?;
    same_shape(z, y, "E update")?;
    mask.check_shape(y)?;
    let inv = 1.0 / mu;
    let mut e = y - x;
    for ((e, &z), &obs) in e
        .as_mut_slice()
        .iter_mut()
        .zip(z.as_slice())
        .zip(mask.as_slice())
    {
        let s = *e + z * inv;
        *e = match (obs, loss) {
            (false, _) => s,
            (true, Loss::Absolute) => shrink(s, inv),
            (true, Loss::Squared) => mu * s / (1.0 + mu),
        };
    }
    Ok(e)
}

/// `Z + μ(Y − X − E)`.
pub fn update_dual(
    z: &DMatrix<f64>,
    mu: f64,
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = z.clone();
    for (((o, &y), &x), &e) in out
        .as_mut_slice()
        .iter_mut()
        .zip(y.as_slice())
        .zip(x.as_slice())
        .zip(e.as_slice())
    {
        *o += mu * (y - x - e);
    }
    out
}

/// `min(ρμ, μ_max)`.
pub fn update_mu(mu: f64, rho: f64, mu_max: f64) -> Result<f64> {
    if !(mu > 0.0) || !(rho > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "penalty update needs mu > 0 and rho > 1, got mu={mu}, rho={rho}"
        )));
    }
    Ok((rho * mu).min(mu_max))
}

/// `‖Y − X − E‖_F / ‖Y‖_F` (0 when both numerator and `Y` vanish).
pub fn primal_residual(y: &DMatrix<f64>, x: &DMatrix<f64>, e: &DMatrix<f64>) -> f64 {
    let num: f64 = y
        .iter()
        .zip(x.iter())
        .zip(e.iter())
        .map(|((y, x), e)| (y - x - e).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = y.norm();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

pub fn check_convergence(y: &DMatrix<f64>, x: &DMatrix<f64>, e: &DMatrix<f64>, tol: f64) -> bool {
    primal_residual(y, x, e) <= tol
}

/// Factored augmented Lagrangian with `X = UVᵀ`:
/// `‖P_Ω(E)‖₁ + (λ1/2)(‖U‖² + ‖V‖²) + (λ2/2)‖diff(UVᵀ)‖² + ⟨Z, Y−UVᵀ−E⟩ + (μ/2)‖Y−UVᵀ−E‖²`.
#[allow(clippy::too_many_arguments)]
pub fn factored_lagrangian(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    e: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
    y: &DMatrix<f64>,
    mask: &EntryMask,
    op: TemporalOperator,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let x = u * v.transpose();
    let r = y - &x - e;
    data_loss(e, mask, Loss::Absolute)
        + 0.5 * lambda1 * (u.norm_squared() + v.norm_squared())
        + 0.5 * lambda2 * op.diff_norm_sq(&x)
        + z.dot(&r)
        + 0.5 * mu * r.norm_squared()
}

/// `∇_U = λ1U + λ2·UVᵀLV − ZV − μ(Y − UVᵀ − E)V`.
#[allow(clippy::too_many_arguments)]
pub fn grad_u(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    e: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
    y: &DMatrix<f64>,
    op: TemporalOperator,
    lambda1: f64,
    lambda2: f64,
) -> DMatrix<f64> {
    let x = u * v.transpose();
    grad_f(&x, e, z, mu, y, op, lambda2) * v + u * lambda1
}

/// `∇_V = λ1V + λ2·LVUᵀU − ZᵀU − μ(Y − UVᵀ − E)ᵀU`.
#[allow(clippy::too_many_arguments)]
pub fn grad_v(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    e: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
    y: &DMatrix<f64>,
    op: TemporalOperator,
    lambda1: f64,
    lambda2: f64,
) -> DMatrix<f64> {
    let x = u * v.transpose();
    linalg::tr_mul(&grad_f(&x, e, z, mu, y, op, lambda2), u) + v * lambda1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random_mask(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> EntryMask {
        EntryMask::from_fn(rows, cols, |_, _| rng.random::<f64>() < 0.7)
    }

    #[test]
    fn objective_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = TemporalOperator::new(1, 5);
        let mask = random_mask(4, 5, &mut rng);
        // time-constant Y
        let y = DMatrix::from_fn(4, 5, |r, _| r as f64 * 0.2 + 0.1);
        let got = tecromac_objective(&y, &y, &mask, op, 0.7, 3.0).unwrap();
        assert!((got - 0.7 * linalg::nuclear_norm(&y)).abs() < 1e-12);

        let y = random(4, 5, &mut rng);
        let got = tecromac_objective(&DMatrix::zeros(4, 5), &y, &mask, op, 0.7, 3.0).unwrap();
        assert!((got - mask.project(&y).abs().sum()).abs() < 1e-12);

        assert!(tecromac_objective(&DMatrix::zeros(3, 5), &y, &mask, op, 1.0, 1.0).is_err());
    }

    #[test]
    fn objective_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, t) = (2, 4);
        let op = TemporalOperator::new(c, t);
        let x = random(5, c * t, &mut rng);
        let y = random(5, c * t, &mut rng);
        let mask = random_mask(5, c * t, &mut rng);
        let (l1, l2) = (0.4, 1.3);

        let mut data = 0.0;
        let mut smooth = 0.0;
        for r in 0..5 {
            for k in 0..c {
                for l in 0..t {
                    let v = l + k * t;
                    if mask.get(r, v) {
                        data += (y[(r, v)] - x[(r, v)]).abs();
                    }
                    if l > 0 {
                        smooth += (x[(r, v)] - x[(r, v - 1)]).powi(2);
                    }
                }
            }
        }
        let eig = (&x * x.transpose()).symmetric_eigen();
        let nuc: f64 = eig.eigenvalues.iter().map(|e| e.max(0.0).sqrt()).sum();
        let oracle = data + l1 * nuc + 0.5 * l2 * smooth;
        let got = tecromac_objective(&x, &y, &mask, op, l1, l2).unwrap();
        assert!((got - oracle).abs() < 1e-10 * oracle.abs());
    }

    #[test]
    fn lagrangian_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = TemporalOperator::new(1, 6);
        let y = random(4, 6, &mut rng);
        let x = random(4, 6, &mut rng);
        let mask = random_mask(4, 6, &mut rng);
        let zero = DMatrix::zeros(4, 6);
        let e = &y - &x;
        let al = augmented_lagrangian(&x, &e, &zero, 2.5, &y, &mask, op, 0.3, 0.8).unwrap();
        let obj = tecromac_objective(&x, &y, &mask, op, 0.3, 0.8).unwrap();
        assert!((al - obj).abs() < 1e-12);

        let al =
            augmented_lagrangian(&zero, &zero, &zero, 1.0, &zero, &mask, op, 1.0, 1.0).unwrap();
        assert_eq!(al, 0.0);
    }

    #[test]
    fn lagrangian_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let op = TemporalOperator::new(1, 4);
        let (x, e, z, y) = (
            random(3, 4, &mut rng),
            random(3, 4, &mut rng),
            random(3, 4, &mut rng),
            random(3, 4, &mut rng),
        );
        let mask = random_mask(3, 4, &mut rng);
        let (mu, l1, l2) = (1.7, 0.2, 0.9);
        let mut oracle = l1 * linalg::nuclear_norm(&x);
        for r in 0..3 {
            for v in 0..4 {
                if mask.get(r, v) {
                    oracle += e[(r, v)].abs();
                }
                let res = y[(r, v)] - x[(r, v)] - e[(r, v)];
                oracle += z[(r, v)] * res + 0.5 * mu * res * res;
                if v > 0 {
                    oracle += 0.5 * l2 * (x[(r, v)] - x[(r, v - 1)]).powi(2);
                }
            }
        }
        let got = augmented_lagrangian(&x, &e, &z, mu, &y, &mask, op, l1, l2).unwrap();
        assert!((got - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn gradient_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = TemporalOperator::new(1, 5);
        let y = random(4, 5, &mut rng);
        let zero = DMatrix::zeros(4, 5);
        assert_eq!(grad_f(&y, &zero, &zero, 3.0, &y, op, 0.0), zero);

        let x = DMatrix::from_fn(4, 5, |r, _| r as f64);
        let e = &y - &x;
        assert!(grad_f(&x, &e, &zero, 3.0, &y, op, 2.0).norm() < 1e-13);
    }

    #[test]
    fn ipg_step_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let op = TemporalOperator::new(1, 5);
        let (x, e, z, y) = (
            random(6, 5, &mut rng),
            random(6, 5, &mut rng),
            random(6, 5, &mut rng),
            random(6, 5, &mut rng),
        );
        let (mu, l2) = (1.5, 0.5);
        let c = 1.01 * hessian_bound(l2, mu);
        let plain = &x - grad_f(&x, &e, &z, mu, &y, op, l2) / c;
        let got = ipg_update_x(&x, &e, &z, mu, &y, op, c, 0.0, l2).unwrap();
        assert!((got.matrix - plain).norm() < 1e-12);

        // zero gradient, heavy shrinkage
        let zero = DMatrix::zeros(6, 5);
        let e0 = &y - &x;
        let sigma = linalg::spectral_norm(&x, 200);
        let got = ipg_update_x(
            &x,
            &e0,
            &zero,
            mu,
            &y,
            op,
            mu * 1.01,
            sigma * mu * 1.02,
            0.0,
        )
        .unwrap();
        assert_eq!(got.matrix, zero);
        assert_eq!(got.rank, 0);

        assert!(ipg_update_x(&x, &e, &z, mu, &y, op, hessian_bound(l2, mu), 0.1, l2).is_err());
    }

    #[test]
    fn e_update_cases() {
        let mask = EntryMask::from_fn(1, 2, |_, c| c == 0);
        let y = DMatrix::from_row_slice(1, 2, &[0.3, 0.8]);
        let zero = DMatrix::zeros(1, 2);
        let z = DMatrix::from_row_slice(1, 2, &[0.0, 0.4]);
        let e = update_e(&zero, &y, &z, 2.0, &mask, Loss::Absolute).unwrap();
        assert_eq!(e[0], 0.0);
        assert_eq!(e[1], 0.8 + 0.4 / 2.0);
        // off Ω the completed-square penalty (μ/2)‖Y − X − E + Z/μ‖² vanishes
        assert!((y[1] - e[1] + z[1] / 2.0).abs() < 1e-15);
        assert!(update_e(&zero, &y, &z, 0.0, &mask, Loss::Absolute).is_err());

        let e = update_e(&zero, &y, &zero, 3.0, &mask, Loss::Squared).unwrap();
        assert!((e[0] - 3.0 * 0.3 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn e_update_minimizes_entrywise_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for loss in [Loss::Absolute, Loss::Squared] {
            for _ in 0..50 {
                let y: f64 = rng.random_range(-1.0..1.0);
                let x: f64 = rng.random_range(-1.0..1.0);
                let z: f64 = rng.random_range(-1.0..1.0);
                let mu: f64 = rng.random_range(0.5..4.0);
                let f = |e: f64| {
                    let l = match loss {
                        Loss::Absolute => e.abs(),
                        Loss::Squared => 0.5 * e * e,
                    };
                    l + z * (y - x - e) + 0.5 * mu * (y - x - e).powi(2)
                };
                let mask = EntryMask::full(1, 1);
                let got = update_e(
                    &DMatrix::from_element(1, 1, x),
                    &DMatrix::from_element(1, 1, y),
                    &DMatrix::from_element(1, 1, z),
                    mu,
                    &mask,
                    loss,
                )
                .unwrap()[0];
                let best = (0..=40_000)
                    .map(|i| -2.0 + 4.0 * i as f64 / 40_000.0)
                    .map(f)
                    .fold(f64::INFINITY, f64::min);
                assert!(f(got) <= best + 1e-9, "{loss:?}: {} > {}", f(got), best);
            }
        }
    }

    #[test]
    fn dual_and_penalty_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(3, 3, &mut rng);
        let e = random(3, 3, &mut rng);
        let z = random(3, 3, &mut rng);
        let y = &x + &e;
        assert_eq!(update_dual(&z, 5.0, &y, &x, &e), z);

        let m = random(3, 3, &mut rng);
        let zero = DMatrix::zeros(3, 3);
        assert!((update_dual(&zero, 1.0, &m, &zero, &zero) - &m).norm() == 0.0);

        let y = random(3, 3, &mut rng);
        let got = update_dual(&z, 0.7, &y, &x, &e);
        for i in 0..9 {
            assert_eq!(got[i], z[i] + 0.7 * (y[i] - x[i] - e[i]));
        }

        assert!((update_mu(1.0, 1.1, 1e9).unwrap() - 1.1).abs() < 1e-15);
        let mut mu = 2.0;
        for _ in 0..5 {
            mu = update_mu(mu, 1.1, 1e9).unwrap();
        }
        assert!((mu - 2.0 * 1.1f64.powi(5)).abs() < 1e-12);
        assert_eq!(update_mu(9.5, 1.1, 10.0).unwrap(), 10.0);
        assert!(update_mu(1.0, 1.0, 10.0).is_err());
        assert!(update_mu(0.0, 1.5, 10.0).is_err());
    }

    #[test]
    fn convergence_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(4, 3, &mut rng);
        let e = random(4, 3, &mut rng);
        let y = &x + &e;
        assert!(check_convergence(&y, &x, &e, 1e-14));
        let zero = DMatrix::zeros(4, 3);
        assert!((primal_residual(&y, &zero, &zero) - 1.0).abs() < 1e-15);
        let y = random(4, 3, &mut rng);
        let direct = (&y - &x - &e).norm() / y.norm();
        assert!((primal_residual(&y, &x, &e) - direct).abs() < 1e-14);
    }

    #[test]
    fn factored_gradient_substitutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let op = TemporalOperator::new(1, 6);
        let (y, e, z) = (
            random(5, 6, &mut rng),
            random(5, 6, &mut rng),
            random(5, 6, &mut rng),
        );
        let v = random(6, 2, &mut rng);
        let u0 = DMatrix::zeros(5, 2);
        let mu = 1.3;
        let got = grad_u(&u0, &v, &e, &z, mu, &y, op, 0.4, 0.6);
        let want = -(&z * &v) - (&y - &e) * &v * mu;
        assert!((got - want).norm() < 1e-12);

        let u = random(5, 2, &mut rng);
        let e = &y - &u * v.transpose();
        let zero = DMatrix::zeros(5, 6);
        assert!(grad_u(&u, &v, &e, &zero, mu, &y, op, 0.0, 0.0).norm() < 1e-13);
        assert!(grad_v(&u, &v, &e, &zero, mu, &y, op, 0.0, 0.0).norm() < 1e-13);
    }
}
