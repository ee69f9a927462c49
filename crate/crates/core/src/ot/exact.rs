use super::Histogram;
use crate::error::{Error, Result};

/// Exact transport cost between two histograms on the same 1-D bin grid with
/// cost `(i - j)^2`.
///
/// The cost is a convex function of `i - j`, so the monotone coupling that
/// matches the two cumulative distributions is optimal. Used as a test oracle
/// for the Sinkhorn solvers.
pub fn exact_ot_1d(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("histograms of length {} and {}", a.len(), b.len())));
    }
    let (a, b) = (a.as_slice(), b.as_slice());
    let n = a.len();
    let (mut i, mut j) = (0, 0);
    let (mut left_a, mut left_b) = (a[0], b[0]);
    let mut total = 0.0;
    loop {
        let moved = left_a.min(left_b);
        let d = i as f64 - j as f64;
        total += moved * d * d;
        left_a -= moved;
        left_b -= moved;
        if left_a <= left_b {
            i += 1;
            if i == n {
                break;
            }
            left_a = a[i];
        } else {
            j += 1;
            if j == n {
                break;
            }
            left_b = b[j];
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: &[f64]) -> Histogram {
        Histogram::new(v.to_vec()).unwrap()
    }

    /// 2x2 plans have one free parameter `t = P[0][0]`; scan it.
    fn brute_force_2x2(a: &[f64], b: &[f64]) -> f64 {
        let lo = (a[0] - b[1]).max(0.0);
        let hi = a[0].min(b[0]);
        let steps = 100_000;
        (0..=steps)
            .map(|k| {
                let t = lo + (hi - lo) * k as f64 / steps as f64;
                // P = [[t, a0 - t], [b0 - t, a1 - b0 + t]]
                (a[0] - t) + (b[0] - t)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn identical_histograms_cost_zero() {
        let a = h(&[0.1, 0.2, 0.3, 0.4]);
        assert!(exact_ot_1d(&a, &a).unwrap().abs() < 1e-15);
    }

    #[test]
    fn forced_plan() {
        assert!((exact_ot_1d(&h(&[1.0, 0.0]), &h(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_bin_instance_matches_brute_force() {
        let oracle = brute_force_2x2(&[0.3, 0.7], &[0.6, 0.4]);
        assert!((oracle - 0.3).abs() < 1e-9);
        let exact = exact_ot_1d(&h(&[0.3, 0.7]), &h(&[0.6, 0.4])).unwrap();
        assert!((exact - oracle).abs() < 1e-12);
    }

    #[test]
    fn diracs_cost_squared_distance() {
        let a = Histogram::dirac(5, 0).unwrap();
        let b = Histogram::dirac(5, 3).unwrap();
        assert!((exact_ot_1d(&a, &b).unwrap() - 9.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(exact_ot_1d(&h(&[1.0]), &h(&[0.5, 0.5])).is_err());
    }
}
