//! Closed-form and online reweighting rules.

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, softmax, Scalar};

/// Search interval for the NonParam temperature, in `log10` space.
pub const LOG10_TAU_BOUNDS: (f64, f64) = (-10.0, 10.0);

/// `KL(w ‖ uniform) = Σ wᵢ log(n·wᵢ)` with `0·log 0 = 0`.
pub fn kl_to_uniform<T: Scalar>(weights: &[T]) -> T {
    let n = T::from_usize_lossy(weights.len());
    weights.iter().filter(|&&w| w > T::zero()).map(|&w| w * (n * w).ln()).sum()
}

/// Tilted weights `softmax(ℓ/τ)` and their KL to uniform, for `τ = 10^log10_tau`.
fn tilt<T: Scalar>(losses: &[T], log10_tau: f64) -> (Vec<T>, T) {
    let tau = T::lit(10f64.powf(log10_tau));
    let top = losses.iter().copied().fold(T::neg_infinity(), T::max);
    let z: Vec<T> = losses.iter().map(|&l| (l - top) / tau).collect();
    let lse = log_sum_exp(&z);
    let n = T::from_usize_lossy(losses.len());
    let mut kl = T::zero();
    let w: Vec<T> = z
        .iter()
        .map(|&zi| {
            let logw = zi - lse;
            let wi = logw.exp();
            if wi > T::zero() {
                kl = kl + wi * (logw + n.ln());
            }
            wi
        })
        .collect();
    (w, kl.max(T::zero()))
}

/// Worst-case weights over a KL ball of radius `kappa` around the uniform
/// distribution on the batch: `wᵢ ∝ exp(ℓᵢ/τ*)` with `τ*` found by bisection
/// in `log10` space over `[1e-10, 1e10]` so that `KL(w ‖ uniform) = kappa`.
/// `τ*` is clipped to the interval ends when the target is unreachable.
pub fn nonparam_weights<T: Scalar>(losses: &[T], kappa: T) -> Result<(Vec<T>, T)> {
    if kappa < T::zero() {
        return Err(Error::Contract(format!("kappa must be >= 0, got {kappa}")));
    }
    if losses.is_empty() {
        return Ok((Vec::new(), T::lit(10f64.powf(LOG10_TAU_BOUNDS.1))));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("nonparam losses".into()));
    }
    let (lo, hi) = LOG10_TAU_BOUNDS;
    let (w_hi, kl_hi) = tilt(losses, hi);
    if kl_hi >= kappa {
        return Ok((w_hi, T::lit(10f64.powf(hi))));
    }
    let (w_lo, kl_lo) = tilt(losses, lo);
    if kl_lo <= kappa {
        return Ok((w_lo, T::lit(10f64.powf(lo))));
    }
    // KL is decreasing in τ: `a` always has KL above kappa, `b` below.
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let (_, kl) = tilt(losses, mid);
        if kl > kappa {
            a = mid;
        } else {
            b = mid;
        }
    }
    let (wa, kla) = tilt(losses, a);
    let (wb, klb) = tilt(losses, b);
    let best = if (kla - kappa).abs() <= (klb - kappa).abs() { (wa, a) } else { (wb, b) };
    Ok((best.0, T::lit(10f64.powf(best.1))))
}

/// Exponentiated-gradient update of group weights: `w_g ∝ prev_g·exp(η·loss_g)`.
pub fn group_dro_weights<T: Scalar>(group_losses: &[T], prev_weights: &[T], eta: T) -> Result<Vec<T>> {
    if group_losses.len() != prev_weights.len() {
        return Err(Error::Contract("one loss per group required".into()));
    }
    if eta < T::zero() || prev_weights.iter().any(|&w| w < T::zero()) {
        return Err(Error::Contract("eta and previous weights must be nonnegative".into()));
    }
    let logits: Vec<T> = prev_weights
        .iter()
        .zip(group_losses)
        .map(|(&w, &l)| if w > T::zero() { w.ln() + eta * l } else { T::neg_infinity() })
        .collect();
    Ok(softmax(&logits))
}

/// Minibatch-normalized likelihood ratios `exp(fᵢ)/Σⱼ exp(fⱼ)`.
pub fn rpdro_batch_weights<T: Scalar>(f_values: &[T]) -> Vec<T> {
    softmax(f_values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpdroObjective<T> {
    /// `Σ r̃ᵢ ℓᵢ − τ·KLterm`.
    pub value: T,
    /// `Σ r̃ᵢ log(n·r̃ᵢ)`, zero at uniform weights.
    pub kl_term: T,
    /// `r̃`, held constant for the model update.
    pub model_weights: Vec<T>,
    /// `∂ value / ∂ fᵢ` through the normalization, for the adversary's ascent.
    pub adv_grad: Vec<T>,
}

pub fn rpdro_objective<T: Scalar>(losses: &[T], f_values: &[T], tau: T) -> Result<RpdroObjective<T>> {
    if losses.len() != f_values.len() {
        return Err(Error::Contract("losses and scores must have equal length".into()));
    }
    let n = T::from_usize_lossy(losses.len());
    let lse = log_sum_exp(f_values);
    let log_nr: Vec<T> = f_values.iter().map(|&f| f - lse + n.ln()).collect();
    let r: Vec<T> = f_values.iter().map(|&f| (f - lse).exp()).collect();
    let kl_term: T = r.iter().zip(&log_nr).map(|(&ri, &l)| ri * l).sum::<T>().max(T::zero());
    let expected: T = r.iter().zip(losses).map(|(&ri, &li)| ri * li).sum();
    // gᵢ = ℓᵢ − τ·log(n r̃ᵢ); the "+1" of d(r log r) cancels under the softmax Jacobian.
    let g: Vec<T> = losses.iter().zip(&log_nr).map(|(&l, &lnr)| l - tau * lnr).collect();
    let g_bar: T = r.iter().zip(&g).map(|(&ri, &gi)| ri * gi).sum();
    let adv_grad = r.iter().zip(&g).map(|(&ri, &gi)| ri * (gi - g_bar)).collect();
    Ok(RpdroObjective { value: expected - tau * kl_term, kl_term, model_weights: r, adv_grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfNormObjective<T> {
    /// `mean(rᵢℓᵢ) − τ·mean(rᵢ log rᵢ) − β·(log mean rᵢ)²`.
    pub value: T,
    /// `β·(log mean rᵢ)²`.
    pub penalty: T,
    /// `rᵢ/n`, held constant for the model update.
    pub model_weights: Vec<T>,
    pub adv_grad: Vec<T>,
}

/// Self-normalized objective with raw ratios `rᵢ = exp(fᵢ)`.
pub fn rpdro_selfnorm_objective<T: Scalar>(losses: &[T], f_values: &[T], tau: T, beta: T) -> Result<SelfNormObjective<T>> {
    if losses.len() != f_values.len() {
        return Err(Error::Contract("losses and scores must have equal length".into()));
    }
    if beta < T::zero() {
        return Err(Error::Contract("beta must be >= 0".into()));
    }
    let n = T::from_usize_lossy(losses.len());
    let log_mean = log_sum_exp(f_values) - n.ln();
    let r: Vec<T> = f_values.iter().map(|&f| f.exp()).collect();
    let mean_m: T = log_mean.exp();
    let expected: T = r.iter().zip(losses).map(|(&ri, &li)| ri * li).sum::<T>() / n;
    let kl: T = r.iter().zip(f_values).map(|(&ri, &fi)| ri * fi).sum::<T>() / n;
    let penalty = beta * log_mean * log_mean;
    let two = T::lit(2.0);
    let adv_grad = r
        .iter()
        .zip(losses.iter().zip(f_values))
        .map(|(&ri, (&li, &fi))| ri / n * (li - tau * (fi + T::one())) - two * beta * log_mean * ri / (n * mean_m))
        .collect();
    Ok(SelfNormObjective {
        value: expected - tau * kl - penalty,
        penalty,
        model_weights: r.iter().map(|&ri| ri / n).collect(),
        adv_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonparam_equal_losses_are_uniform() {
        for kappa in [0.0, 0.3, 5.0] {
            let (w, tau) = nonparam_weights(&[0.7_f64; 5], kappa).unwrap();
            assert!(w.iter().all(|&x| (x - 0.2).abs() < 1e-12));
            assert!(tau == 1e10 || tau == 1e-10);
        }
    }

    #[test]
    fn nonparam_zero_radius_clips_high() {
        let (w, tau) = nonparam_weights(&[0.0_f64, 1.0, 2.0], 0.0).unwrap();
        assert_eq!(tau, 1e10);
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-6));
        assert!(nonparam_weights(&[1.0_f64], -0.1).is_err());
    }

    #[test]
    fn nonparam_unreachable_radius_clips_low() {
        // KL to uniform can never exceed log n.
        let (w, tau) = nonparam_weights(&[0.0_f64, 1.0, 2.0], 5.0).unwrap();
        assert_eq!(tau, 1e-10);
        assert!((w[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn group_dro_closed_form() {
        let w = group_dro_weights(&[1.0_f64, 0.0], &[0.5, 0.5], 2f64.ln()).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 1.0 / 3.0).abs() < 1e-12);
        let same = group_dro_weights(&[0.3_f64, 0.3, 0.3], &[0.2, 0.5, 0.3], 1.0).unwrap();
        for (a, b) in same.iter().zip([0.2, 0.5, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
        let frozen = group_dro_weights(&[4.0_f64, 0.0], &[0.1, 0.9], 0.0).unwrap();
        assert!((frozen[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn batch_weights_examples() {
        let w = rpdro_batch_weights(&[2f64.ln(), 0.0, 0.0]);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        let u = rpdro_batch_weights(&[1.3_f64; 4]);
        assert!(u.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn kl_term_zero_at_uniform_and_log_n_at_vertex() {
        let o = rpdro_objective(&[1.0_f64, 2.0, 3.0], &[0.5; 3], 0.1).unwrap();
        assert_eq!(o.kl_term, 0.0);
        assert!((o.value - 2.0).abs() < 1e-12);
        let v = rpdro_objective(&[1.0_f64, 2.0, 3.0, 4.0], &[200.0, 0.0, 0.0, 0.0], 0.1).unwrap();
        assert!((v.kl_term - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn selfnorm_penalty_values() {
        let z = rpdro_selfnorm_objective(&[1.0_f64, 2.0], &[0.0, 0.0], 0.0, 3.0).unwrap();
        assert_eq!(z.penalty, 0.0);
        let l2 = 2f64.ln();
        let t = rpdro_selfnorm_objective(&[1.0_f64, 2.0], &[l2, l2], 0.0, 3.0).unwrap();
        assert!((t.penalty - 3.0 * l2 * l2).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nonparam_weights_are_a_distribution(losses in prop::collection::vec(0.0_f64..10.0, 1..64), kappa in 0.0_f64..3.0) {
                let (w, tau) = nonparam_weights(&losses, kappa).unwrap();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                prop_assert!((1e-10..=1e10).contains(&tau));
                prop_assert!(kl_to_uniform(&w) <= kappa + 1e-6);
            }

            #[test]
            fn nonparam_weights_follow_loss_order(losses in prop::collection::vec(0.0_f64..10.0, 2..32), kappa in 0.01_f64..1.0) {
                let (w, _) = nonparam_weights(&losses, kappa).unwrap();
                for i in 0..losses.len() {
                    for j in 0..losses.len() {
                        if losses[i] > losses[j] {
                            prop_assert!(w[i] >= w[j]);
                        }
                    }
                }
            }

            #[test]
            fn batch_weights_sum_to_one_and_ignore_shifts(f in prop::collection::vec(-50.0_f64..50.0, 1..64), c in -30.0_f64..30.0) {
                let w = rpdro_batch_weights(&f);
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let shifted: Vec<f64> = f.iter().map(|x| x + c).collect();
                for (a, b) in w.iter().zip(rpdro_batch_weights(&shifted)) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn group_weights_stay_on_simplex(losses in prop::collection::vec(0.0_f64..5.0, 1..8), eta in 0.0_f64..2.0) {
                let prev = vec![1.0 / losses.len() as f64; losses.len()];
                let w = group_dro_weights(&losses, &prev, eta).unwrap();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
