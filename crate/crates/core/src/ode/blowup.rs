//! Blow-up time extrapolation from the last samples of an escaping component.
//!
//! Near a quadratic-growth singularity `x' ~ g x^2` the reciprocal `1/x` is affine in `t`,
//! so the root of a least-squares line through `(t, 1/x)` estimates the blow-up time.

use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EstimateError {
    #[error("no blow-up evidence: need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("no blow-up evidence: samples are not strictly increasing and positive")]
    NonMonotone,
    #[error("no blow-up evidence: extrapolated root does not lie beyond the data window")]
    RootBeforeData,
}

/// Extrapolated time at which the sampled values diverge.
///
/// `tail` holds `(t, value)` pairs with strictly increasing `t` and strictly increasing,
/// positive values.
pub fn estimate_blowup_time<T: Real>(tail: &[(T, T)]) -> Result<T, EstimateError> {
    if tail.len() < 3 {
        return Err(EstimateError::TooFewSamples(tail.len()));
    }
    let monotone = tail[0].1 > T::zero()
        && tail.iter().all(|(t, x)| t.is_finite() && x.is_finite())
        && tail.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
    if !monotone {
        return Err(EstimateError::NonMonotone);
    }

    let n = T::from_count(tail.len());
    let t_mean = tail.iter().fold(T::zero(), |acc, (t, _)| acc + *t) / n;
    let y_mean = tail.iter().fold(T::zero(), |acc, (_, x)| acc + x.recip()) / n;
    let (mut sty, mut stt) = (T::zero(), T::zero());
    for (t, x) in tail {
        let dt = *t - t_mean;
        sty = sty + dt * (x.recip() - y_mean);
        stt = stt + dt * dt;
    }
    let slope = sty / stt;
    if !(slope < T::zero()) {
        return Err(EstimateError::RootBeforeData);
    }
    // centred form avoids cancellation in the intercept
    let root = t_mean - y_mean / slope;
    let t_last = tail[tail.len() - 1].0;
    if root.is_finite() && root > t_last {
        Ok(root)
    } else {
        Err(EstimateError::RootBeforeData)
    }
}

/// Longest strictly increasing, positive suffix of `(t, value)` pairs, capped at `max_len`.
pub(crate) fn increasing_suffix<T: Real>(samples: &[(T, T)], max_len: usize) -> &[(T, T)] {
    let mut start = samples.len();
    while start > 0 && samples.len() - start < max_len {
        let cand = start - 1;
        let (tc, xc) = samples[cand];
        if !(xc > T::zero()) {
            break;
        }
        if start < samples.len() {
            let (tn, xn) = samples[start];
            if !(tn > tc && xn > xc) {
                break;
            }
        }
        start = cand;
    }
    &samples[start..]
}
