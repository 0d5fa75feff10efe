//! Dormand-Prince 5(4) tableau with first-same-as-last stage reuse.

use crate::real::Real;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Fifth-order weights minus fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub(crate) struct Tableau<T> {
    c: [T; 7],
    a: [[T; 6]; 7],
    e: [T; 7],
}

impl<T: Real> Tableau<T> {
    pub(crate) fn new() -> Self {
        Self {
            c: C.map(T::lit),
            a: A.map(|row| row.map(T::lit)),
            e: E.map(T::lit),
        }
    }
}

pub(crate) struct StepResult<T, const N: usize> {
    pub y_new: [T; N],
    /// Derivative at the new point; becomes the first stage of the next step.
    pub k_last: [T; N],
    pub err: [T; N],
}

/// One trial step of size `h` from `(t, y)` with `k1 = f(t, y)` already known.
pub(crate) fn trial_step<T, const N: usize, F>(
    tab: &Tableau<T>,
    rhs: &mut F,
    t: T,
    y: &[T; N],
    k1: &[T; N],
    h: T,
) -> StepResult<T, N>
where
    T: Real,
    F: FnMut(T, &[T; N]) -> [T; N],
{
    let mut k = [[T::zero(); N]; 7];
    k[0] = *k1;
    for s in 1..7 {
        let mut ys = *y;
        for (i, yi) in ys.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, kj) in k.iter().enumerate().take(s) {
                acc = acc + tab.a[s][j] * kj[i];
            }
            *yi = *yi + h * acc;
        }
        k[s] = rhs(t + tab.c[s] * h, &ys);
        if s == 6 {
            // Row 7 of A holds the fifth-order weights, so `ys` is the new solution.
            let mut err = [T::zero(); N];
            for (i, ei) in err.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (j, kj) in k.iter().enumerate() {
                    acc = acc + tab.e[j] * kj[i];
                }
                *ei = h * acc;
            }
            return StepResult {
                y_new: ys,
                k_last: k[6],
                err,
            };
        }
    }
    unreachable!("seven stages always reach the final row")
}

/// Root-mean-square of `err_i / (abs_tol + rel_tol * max(|y_i|, |y_new_i|))`.
pub(crate) fn error_norm<T: Real, const N: usize>(
    err: &[T; N],
    y: &[T; N],
    y_new: &[T; N],
    rel_tol: T,
    abs_tol: T,
) -> T {
    let mut sum = T::zero();
    for i in 0..N {
        let scale = abs_tol + rel_tol * y[i].abs().max(y_new[i].abs());
        let q = err[i] / scale;
        sum = sum + q * q;
    }
    (sum / T::from_count(N.max(1))).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tableau_rows_consistent() {
        for (s, row) in A.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!((sum - C[s]).abs() < 1e-14, "row {s}");
        }
        // fifth-order weights sum to one; embedded weights as well, so E sums to zero
        let b: f64 = A[6].iter().sum();
        assert!((b - 1.0).abs() < 1e-14);
        assert!(E.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn exact_on_quartic_polynomial_in_time() {
        // y' = t^4 is integrated exactly by a fifth-order method.
        let tab = Tableau::<f64>::new();
        let mut f = |t: f64, _y: &[f64; 1]| [t.powi(4)];
        let k1 = f(0.5, &[0.0]);
        let res = trial_step(&tab, &mut f, 0.5, &[0.0], &k1, 0.25);
        let exact = (0.75f64.powi(5) - 0.5f64.powi(5)) / 5.0;
        assert!((res.y_new[0] - exact).abs() < 1e-15);
    }
}
