//! Entropic optimal transport on histograms.
//!
//! Histograms live on the probability simplex over `n` bins. Transport plans
//! are computed with Sinkhorn scaling, switching to a log-domain iteration
//! whenever the scaling vectors leave the representable range (which is the
//! normal situation for the small regularization strengths used when
//! selecting representatives).

mod barycenter;
mod exact;
mod sinkhorn;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use barycenter::{wasserstein_barycenter, Barycenter, BarycenterWeights};
pub use exact::exact_ot_1d;
pub use sinkhorn::{sinkhorn_distance, SinkhornConfig, SinkhornMode, TransportPlan};

/// Tolerance on the total mass of a histogram.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram(Vec<f64>);

impl Histogram {
    /// Wraps `mass` after checking non-negativity and unit total mass.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::dim("histogram must have at least one bin"));
        }
        if let Some(bad) = mass.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::Config(format!("histogram entry {bad} is not a non-negative real")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Config(format!("histogram mass sums to {total}, expected 1")));
        }
        Ok(Histogram(mass))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::dim("histogram must have at least one bin"));
        }
        Ok(Histogram(vec![1.0 / n as f64; n]))
    }

    /// All mass on bin `at`.
    pub fn dirac(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(Error::dim(format!("dirac bin {at} outside {n} bins")));
        }
        let mut mass = vec![0.0; n];
        mass[at] = 1.0;
        Ok(Histogram(mass))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l1_distance(&self, other: &Histogram) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Renormalizes a strictly positive-mass vector without re-validating
    /// the sum; used for solver outputs whose mass drifts by rounding.
    pub(crate) fn from_positive_mass(mut mass: Vec<f64>) -> Self {
        for m in mass.iter_mut() {
            if !m.is_finite() || *m < 0.0 {
                *m = 0.0;
            }
        }
        let total: f64 = mass.iter().sum();
        if total > 0.0 {
            mass.iter_mut().for_each(|m| *m /= total);
            Histogram(mass)
        } else {
            let n = mass.len();
            Histogram(vec![1.0 / n as f64; n])
        }
    }
}

/// Projects an arbitrary real vector onto the simplex: negatives are clamped
/// to zero and the rest divided by the L1 norm. A vector with no positive
/// entry maps to the uniform histogram.
pub fn normalize_to_simplex(x: &[f64]) -> Result<Histogram> {
    if x.is_empty() {
        return Err(Error::dim("cannot normalize an empty vector"));
    }
    let clamped: Vec<f64> = x
        .iter()
        .map(|v| if v.is_finite() && *v > 0.0 { *v } else { 0.0 })
        .collect();
    Ok(Histogram::from_positive_mass(clamped))
}

/// Non-negative transport cost between bins.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(cost: Array2<f64>) -> Result<Self> {
        if cost.nrows() == 0 || cost.ncols() == 0 {
            return Err(Error::dim("cost matrix must be non-empty"));
        }
        if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config("cost matrix entries must be finite and non-negative".into()));
        }
        Ok(CostMatrix(cost))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        self.nrows() == self.ncols() && self.0.indexed_iter().all(|((i, j), c)| *c == self.0[[j, i]])
    }
}

/// Squared bin-index distance, `C[i][j] = (i - j)^2`.
pub fn default_cost_matrix(n: usize) -> Result<CostMatrix> {
    if n == 0 {
        return Err(Error::dim("cost matrix needs at least one bin"));
    }
    let cost = Array2::from_shape_fn((n, n), |(i, j)| {
        let d = i as f64 - j as f64;
        d * d
    });
    Ok(CostMatrix(cost))
}

/// One histogram per line, comma-separated, full precision.
pub fn histograms_to_csv(hs: &[Histogram]) -> String {
    let mut out = String::new();
    for h in hs {
        let line: Vec<String> = h.as_slice().iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// `log(sum(exp(x)))` over an iterator, returning `-inf` when every term is
/// `-inf`.
pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_to_simplex(&[2.0, 2.0]).unwrap().as_slice(), &[0.5, 0.5]);
        assert_eq!(normalize_to_simplex(&[-1.0, 1.0]).unwrap().as_slice(), &[0.0, 1.0]);
        let u = normalize_to_simplex(&[0.0, 0.0, 0.0]).unwrap();
        assert!(u.as_slice().iter().all(|v| (*v - 1.0 / 3.0).abs() < 1e-15));
        assert!(matches!(normalize_to_simplex(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn all_negative_falls_back_to_uniform() {
        let h = normalize_to_simplex(&[-3.0, -0.5]).unwrap();
        assert_eq!(h.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn default_cost_examples() {
        let c2 = default_cost_matrix(2).unwrap();
        assert_eq!(c2.as_array(), &ndarray::array![[0.0, 1.0], [1.0, 0.0]]);
        let c3 = default_cost_matrix(3).unwrap();
        assert_eq!(
            c3.as_array(),
            &ndarray::array![[0.0, 1.0, 4.0], [1.0, 0.0, 1.0], [4.0, 1.0, 0.0]]
        );
        assert_eq!(default_cost_matrix(1).unwrap().as_array(), &ndarray::array![[0.0]]);
        assert!(matches!(default_cost_matrix(0), Err(Error::Dimension(_))));
        assert!(c3.is_symmetric());
    }

    #[test]
    fn histogram_validation() {
        assert!(Histogram::new(vec![0.5, 0.6]).is_err());
        assert!(Histogram::new(vec![-0.1, 1.1]).is_err());
        assert!(Histogram::new(vec![]).is_err());
        assert!(Histogram::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn csv_dump_is_lossless() {
        let h = normalize_to_simplex(&[1.0, 2.0, 7.0]).unwrap();
        let csv = histograms_to_csv(std::slice::from_ref(&h));
        let parsed: Vec<f64> = csv.trim().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(parsed, h.as_slice());
    }

    #[test]
    fn lse_handles_all_negative_infinity() {
        let v = [f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert_eq!(log_sum_exp(v.iter().copied()), f64::NEG_INFINITY);
        let w = [0.0f64, 0.0];
        assert!((log_sum_exp(w.iter().copied()) - 2f64.ln()).abs() < 1e-15);
    }
}
