//! Residual models seen by the controller.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Residual prediction for one horizon stage, already mapped to `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEval {
    /// `n_g` posterior mean.
    pub mean: DVector<f64>,
    /// `n_g x n_g` posterior covariance.
    pub variance: DMatrix<f64>,
    /// `n_g x n_x` and `n_g x n_u` Jacobians of the mean.
    pub jac_x: DMatrix<f64>,
    pub jac_u: DMatrix<f64>,
}

impl StageEval {
    pub fn zero(n_g: usize, n_x: usize, n_u: usize) -> Self {
        Self {
            mean: DVector::zeros(n_g),
            variance: DMatrix::zeros(n_g, n_g),
            jac_x: DMatrix::zeros(n_g, n_x),
            jac_u: DMatrix::zeros(n_g, n_u),
        }
    }
}

/// Evaluate-with-Jacobian access to a learned residual `g(x, u)`.
///
/// Stage `i` (0-based) of the horizon describes the transition out of
/// `xs[i]` and is predicted `i + 1` steps after the model's current time.
pub trait ResidualModel {
    fn n_outputs(&self) -> usize;
    fn evaluate_stages(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<Vec<StageEval>>;
}

/// A residual model that also learns online, one control step at a time.
pub trait OnlineModel: ResidualModel {
    /// Advance one step, absorbing `(x, u, y)` when learning is active.
    fn advance(&mut self, observation: Option<(&DVector<f64>, &DVector<f64>, &DVector<f64>)>) -> Result<()>;
    /// Observations absorbed so far.
    fn count(&self) -> u64;
}

/// The nominal controller: no residual, no uncertainty.
#[derive(Debug, Clone, Copy)]
pub struct ZeroModel {
    pub n_g: usize,
    pub n_x: usize,
    pub n_u: usize,
}

impl ResidualModel for ZeroModel {
    fn n_outputs(&self) -> usize {
        self.n_g
    }

    fn evaluate_stages(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<Vec<StageEval>> {
        if xs.len() != us.len() {
            return Err(Error::contract("one input per stage is required"));
        }
        Ok(vec![StageEval::zero(self.n_g, self.n_x, self.n_u); xs.len()])
    }
}

impl OnlineModel for ZeroModel {
    fn advance(&mut self, _: Option<(&DVector<f64>, &DVector<f64>, &DVector<f64>)>) -> Result<()> {
        Ok(())
    }

    fn count(&self) -> u64 {
        0
    }
}

/// Selects GP features from the stacked `[x; u]` vector and rescales the
/// learned outputs: the GP sees `y_g / scale_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub n_x: usize,
    pub n_u: usize,
    /// Indices into `[x; u]`.
    pub indices: Vec<usize>,
    pub output_scales: Vec<f64>,
}

impl FeatureMap {
    pub fn new(n_x: usize, n_u: usize, indices: Vec<usize>, output_scales: Vec<f64>) -> Result<Self> {
        if indices.is_empty() || indices.iter().any(|i| *i >= n_x + n_u) {
            return Err(Error::config("feature indices must address [x; u]"));
        }
        if output_scales.is_empty() || output_scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::config("output scales must be positive"));
        }
        Ok(Self { n_x, n_u, indices, output_scales })
    }

    pub fn n_features(&self) -> usize {
        self.indices.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_scales.len()
    }

    pub fn features(&self, x: &DVector<f64>, u: &DVector<f64>) -> Vec<f64> {
        self.indices.iter().map(|&i| if i < self.n_x { x[i] } else { u[i - self.n_x] }).collect()
    }

    /// Feature rows for a horizon, `N x n_z`.
    pub fn feature_rows(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        if xs.len() != us.len() || xs.is_empty() {
            return Err(Error::contract("one input per stage is required"));
        }
        let mut z = DMatrix::zeros(xs.len(), self.n_features());
        for (k, (x, u)) in xs.iter().zip(us).enumerate() {
            if x.len() != self.n_x || u.len() != self.n_u {
                return Err(Error::contract("stage dimensions do not match the feature map"));
            }
            for (c, v) in self.features(x, u).into_iter().enumerate() {
                z[(k, c)] = v;
            }
        }
        Ok(z)
    }

    pub fn scale_targets(&self, y: &DVector<f64>) -> Vec<f64> {
        y.iter().zip(&self.output_scales).map(|(v, s)| v / s).collect()
    }

    /// Map a normalized GP posterior for one stage back to `(x, u)` units.
    pub fn stage_eval(&self, mean: &[f64], variance: &[f64], jac_z: Option<&DMatrix<f64>>) -> StageEval {
        let n_g = self.n_outputs();
        let mut out = StageEval::zero(n_g, self.n_x, self.n_u);
        for g in 0..n_g {
            let s = self.output_scales[g];
            out.mean[g] = s * mean[g];
            out.variance[(g, g)] = s * s * variance[g];
            if let Some(j) = jac_z {
                for (c, &idx) in self.indices.iter().enumerate() {
                    if idx < self.n_x {
                        out.jac_x[(g, idx)] += s * j[(g, c)];
                    } else {
                        out.jac_u[(g, idx - self.n_x)] += s * j[(g, c)];
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_map_routes_indices() {
        let fm = FeatureMap::new(3, 2, vec![1, 4], vec![2.0]).unwrap();
        let x = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let u = DVector::from_row_slice(&[4.0, 5.0]);
        assert_eq!(fm.features(&x, &u), vec![2.0, 5.0]);
        let jac = DMatrix::from_row_slice(1, 2, &[0.5, -1.0]);
        let e = fm.stage_eval(&[0.25], &[0.1], Some(&jac));
        assert_eq!(e.mean[0], 0.5);
        assert!((e.variance[(0, 0)] - 0.4).abs() < 1e-15);
        assert_eq!(e.jac_x[(0, 1)], 1.0);
        assert_eq!(e.jac_u[(0, 1)], -2.0);
        assert!(FeatureMap::new(3, 2, vec![5], vec![1.0]).is_err());
    }

    #[test]
    fn zero_model_is_exactly_zero() {
        let m = ZeroModel { n_g: 3, n_x: 9, n_u: 3 };
        let xs = vec![DVector::from_element(9, 1.0); 4];
        let us = vec![DVector::from_element(3, 1.0); 4];
        let e = m.evaluate_stages(&xs, &us).unwrap();
        assert_eq!(e.len(), 4);
        assert!(e.iter().all(|s| s.mean.iter().chain(s.variance.iter()).all(|v| *v == 0.0)));
    }
}
