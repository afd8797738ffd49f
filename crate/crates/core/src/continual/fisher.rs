use crate::error::{contract, Result};
use crate::scalar::{norm2, Scalar};

/// Added to every preconditioner entry so the diagonal solve never divides by zero.
pub const FISHER_EPSILON: f64 = 1e-12;

/// Rolling diagonal Fisher plus the damping used to invert it.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherState<T> {
    pub diag: Vec<T>,
    pub gamma: T,
    /// Damping; `+inf` turns the preconditioner into the identity.
    pub alpha: T,
    pub epsilon: T,
}

impl<T: Scalar> FisherState<T> {
    /// `F̃₀ = (α/γ)·I`, or zero when `α` is infinite.
    pub fn new(dim: usize, gamma: T, alpha: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma <= T::one()) {
            return Err(contract("gamma must lie in (0, 1]"));
        }
        if alpha < T::zero() || alpha.is_nan() {
            return Err(contract("alpha must be >= 0"));
        }
        let init = if alpha.is_finite() { alpha / gamma } else { T::zero() };
        Ok(Self { diag: vec![init; dim], gamma, alpha, epsilon: T::lit(FISHER_EPSILON) })
    }
}

/// `gᵢ / (Fᵢ + α + ε)` before renormalization.
pub fn conatural_raw<T: Scalar>(grad: &[T], fisher: &FisherState<T>) -> Result<Vec<T>> {
    if grad.len() != fisher.diag.len() {
        return Err(contract("gradient and Fisher lengths differ"));
    }
    if !fisher.alpha.is_finite() {
        return Ok(grad.to_vec());
    }
    Ok(grad.iter().zip(&fisher.diag).map(|(&g, &f)| g / (f + fisher.alpha + fisher.epsilon)).collect())
}

/// Fisher-preconditioned step rescaled to the gradient's norm: returns `−lr·δ`.
pub fn conatural_delta<T: Scalar>(grad: &[T], fisher: &FisherState<T>, lr: T) -> Result<Vec<T>> {
    if !(lr > T::zero()) {
        return Err(contract("lr must be > 0"));
    }
    let raw = conatural_raw(grad, fisher)?;
    let gn = norm2(grad);
    let rn = norm2(&raw);
    if gn == T::zero() || rn == T::zero() {
        return Ok(vec![T::zero(); grad.len()]);
    }
    let scale = if rn.is_finite() { gn / rn } else { T::zero() };
    if scale == T::zero() {
        // Overflowed raw norm: rescale through the largest entry first.
        let top = raw.iter().fold(T::zero(), |m, r| m.max(r.abs()));
        let unit: Vec<T> = raw.iter().map(|&r| r / top).collect();
        let un = norm2(&unit);
        return Ok(unit.into_iter().map(|u| -lr * u * gn / un).collect());
    }
    Ok(raw.into_iter().map(|r| -lr * r * scale).collect())
}

/// Relative residual `‖g − (F + α + ε)·δ‖ / ‖g‖` of the diagonal solve.
pub fn residual_check<T: Scalar>(grad: &[T], fisher: &FisherState<T>, delta_raw: &[T]) -> T {
    let r: Vec<T> = grad
        .iter()
        .zip(&fisher.diag)
        .zip(delta_raw)
        .map(|((&g, &f), &d)| if fisher.alpha.is_finite() { g - (f + fisher.alpha + fisher.epsilon) * d } else { g - d })
        .collect();
    let gn = norm2(grad);
    let rn = norm2(&r);
    if gn > T::zero() {
        rn / gn
    } else {
        rn
    }
}

/// `F̃ ← γ·F_new + (1−γ)·F̃`.
pub fn rolling_fisher_update<T: Scalar>(mut fisher: FisherState<T>, new_task_fisher: &[T]) -> Result<FisherState<T>> {
    if new_task_fisher.len() != fisher.diag.len() {
        return Err(contract("Fisher lengths differ"));
    }
    let g = fisher.gamma;
    for (f, &n) in fisher.diag.iter_mut().zip(new_task_fisher) {
        *f = (g * n + (T::one() - g) * *f).max(T::zero());
    }
    Ok(fisher)
}

/// Scales `diag` so its entries sum to its length. The flag is set (and the
/// input returned unchanged) when the diagonal is all zero.
pub fn fisher_renormalize<T: Scalar>(diag: &[T]) -> (Vec<T>, bool) {
    let total: T = diag.iter().copied().sum();
    if !(total > T::zero()) {
        return (diag.to_vec(), true);
    }
    let s = T::from_usize_lossy(diag.len()) / total;
    (diag.iter().map(|&d| d * s).collect(), false)
}

/// `λ·Σ ωᵢ(θᵢ − θrefᵢ)²` and its gradient.
pub fn ewc_loss<T: Scalar>(theta: &[T], theta_ref: &[T], omega: &[T], lambda_reg: T) -> Result<(T, Vec<T>)> {
    if theta.len() != theta_ref.len() || theta.len() != omega.len() {
        return Err(contract("ewc vectors must have equal length"));
    }
    if lambda_reg < T::zero() {
        return Err(contract("lambda_reg must be >= 0"));
    }
    let two = T::lit(2.0);
    let mut penalty = T::zero();
    let grad = theta
        .iter()
        .zip(theta_ref)
        .zip(omega)
        .map(|((&t, &r), &w)| {
            let d = t - r;
            penalty = penalty + w * d * d;
            two * lambda_reg * w * d
        })
        .collect();
    Ok((lambda_reg * penalty, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(diag: Vec<f64>, alpha: f64) -> FisherState<f64> {
        FisherState { diag, gamma: 0.9, alpha, epsilon: FISHER_EPSILON }
    }

    #[test]
    fn zero_fisher_keeps_gradient_direction() {
        let d = conatural_delta(&[3.0, -4.0], &state(vec![0.0, 0.0], 0.5), 1.0).unwrap();
        assert!((d[0] + 3.0).abs() < 1e-12 && (d[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn worked_diagonal_example() {
        let d = conatural_delta(&[3.0, 3.0], &state(vec![2.0, 0.0], 1.0), 1.0).unwrap();
        let s = (18.0f64).sqrt() / (10.0f64).sqrt();
        assert!((d[0] + s).abs() < 1e-9 && (d[1] + 3.0 * s).abs() < 1e-9);
        assert!((d[0] + 1.3416).abs() < 1e-4 && (d[1] + 4.0249).abs() < 1e-4);
    }

    #[test]
    fn infinite_damping_is_plain_gradient() {
        let f = FisherState::new(2, 0.9, f64::INFINITY).unwrap();
        let d = conatural_delta(&[1.0, 2.0], &f, 0.5).unwrap();
        assert_eq!(d, vec![-0.5, -1.0]);
    }

    #[test]
    fn zero_gradient_gives_zero_update() {
        let d = conatural_delta(&[0.0, 0.0], &state(vec![1.0, 1.0], 0.0), 1.0).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn rolling_update_cases() {
        let f = rolling_fisher_update(FisherState::new(2, 1.0, 0.3).unwrap(), &[5.0, 6.0]).unwrap();
        assert_eq!(f.diag, vec![5.0, 6.0]);
        let g = rolling_fisher_update(state(vec![1.5, 2.5], 0.0), &[1.5, 2.5]).unwrap();
        assert!((g.diag[0] - 1.5).abs() < 1e-15 && (g.diag[1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn renormalize_cases() {
        assert_eq!(fisher_renormalize(&[1.0, 1.0]), (vec![1.0, 1.0], false));
        assert_eq!(fisher_renormalize(&[2.0, 0.0]), (vec![2.0, 0.0], false));
        assert_eq!(fisher_renormalize(&[4.0, 0.0]), (vec![2.0, 0.0], false));
        assert_eq!(fisher_renormalize(&[0.0, 0.0]), (vec![0.0, 0.0], true));
    }

    #[test]
    fn ewc_cases() {
        let (p, g) = ewc_loss(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 4.0], 2.0).unwrap();
        assert_eq!((p, g), (0.0, vec![0.0, 0.0]));
        let (p, _) = ewc_loss(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(p, 2.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn grad_and_diag() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (1_usize..32).prop_flat_map(|n| (prop::collection::vec(-10.0_f64..10.0, n), prop::collection::vec(0.0_f64..100.0, n)))
        }

        proptest! {
            #[test]
            fn delta_keeps_gradient_norm_and_descends((g, diag) in grad_and_diag(), alpha in 0.0_f64..10.0, lr in 0.01_f64..2.0) {
                let f = state(diag, alpha);
                let d = conatural_delta(&g, &f, lr).unwrap();
                let gn = norm2(&g);
                prop_assert!((norm2(&d) - lr * gn).abs() <= 1e-9 * (1.0 + lr * gn));
                prop_assert!(crate::scalar::dot(&d, &g) <= 1e-12);
            }

            #[test]
            fn raw_solve_is_stationary((g, diag) in grad_and_diag(), alpha in 0.0_f64..10.0) {
                let f = state(diag, alpha);
                let raw = conatural_raw(&g, &f).unwrap();
                prop_assert!(residual_check(&g, &f, &raw) < 1e-10);
            }

            #[test]
            fn rolling_average_stays_between_inputs((old, new) in grad_and_diag(), gamma in 0.01_f64..=1.0) {
                let old: Vec<f64> = old.iter().map(|x| x.abs()).collect();
                let f = FisherState { diag: old.clone(), gamma, alpha: 0.0, epsilon: FISHER_EPSILON };
                let r = rolling_fisher_update(f, &new).unwrap();
                for ((o, n), v) in old.iter().zip(&new).zip(&r.diag) {
                    prop_assert!(*v >= o.min(*n) - 1e-9 && *v <= o.max(*n) + 1e-9);
                }
            }
        }
    }
}
