//! [`OnlineModel`] implementations backed by the GP models.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use stgp_core::gp_models::ExactGp;
use stgp_core::{Dataset, InducingConfig, SpatialKernelSpec, StgpModel, TemporalKernelSpec, TrainingBatch};

use crate::error::{Error, Result};
use crate::model::{FeatureMap, OnlineModel, ResidualModel, StageEval};

type Obs<'a> = Option<(&'a DVector<f64>, &'a DVector<f64>, &'a DVector<f64>)>;

fn check_outputs(features: &FeatureMap, n: usize) -> Result<()> {
    if features.n_outputs() != n {
        return Err(Error::config(format!(
            "feature map has {} output scales, model has {n} outputs",
            features.n_outputs()
        )));
    }
    Ok(())
}

/// The recursive spatio-temporal GP.
#[derive(Debug, Clone)]
pub struct StgpResidual {
    pub model: StgpModel,
    pub features: FeatureMap,
}

impl StgpResidual {
    pub fn new(config: InducingConfig, features: FeatureMap) -> Result<Self> {
        check_outputs(&features, config.n_outputs)?;
        if config.inducing.ncols() != features.n_features() {
            return Err(Error::config("inducing points and feature map disagree on dimension"));
        }
        Ok(Self { model: StgpModel::new(config)?, features })
    }
}

impl ResidualModel for StgpResidual {
    fn n_outputs(&self) -> usize {
        self.features.n_outputs()
    }

    fn evaluate_stages(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<Vec<StageEval>> {
        let z = self.features.feature_rows(xs, us)?;
        let (post, jac) = self.model.evaluate_with_mean_jacobian(&z)?;
        let n_g = self.n_outputs();
        Ok((0..z.nrows())
            .map(|k| {
                let mean: Vec<f64> = post.mean.row(k).iter().cloned().collect();
                let var: Vec<f64> = (0..n_g).map(|g| post.variance(k, g)).collect();
                self.features.stage_eval(&mean, &var, Some(&jac[k]))
            })
            .collect())
    }
}

impl OnlineModel for StgpResidual {
    fn advance(&mut self, observation: Obs<'_>) -> Result<()> {
        match observation {
            None => self.model.update(None)?,
            Some((x, u, y)) => {
                let z = self.features.features(x, u);
                let batch = TrainingBatch::single(&z, &self.features.scale_targets(y))?;
                self.model.update(Some(&batch))?;
            }
        }
        Ok(())
    }

    fn count(&self) -> u64 {
        self.model.count()
    }
}

/// Exact GP over a sliding window of the most recent observations, refit
/// every step. Time stamps follow the same convention as the recursive
/// model: the observation absorbed at step `k` carries time `k dt`.
#[derive(Debug, Clone)]
pub struct ExactSodResidual {
    pub features: FeatureMap,
    k_s: SpatialKernelSpec,
    k_t: TemporalKernelSpec,
    noise_variance: Vec<f64>,
    budget: usize,
    dt: f64,
    step: u64,
    count: u64,
    window: VecDeque<(Vec<f64>, f64, Vec<f64>)>,
    gp: Option<ExactGp>,
}

impl ExactSodResidual {
    pub fn new(
        k_s: SpatialKernelSpec,
        k_t: TemporalKernelSpec,
        noise_variance: Vec<f64>,
        budget: usize,
        dt: f64,
        features: FeatureMap,
    ) -> Result<Self> {
        check_outputs(&features, noise_variance.len())?;
        k_s.validate()?;
        k_t.validate()?;
        if budget == 0 {
            return Err(Error::config("subset-of-data budget must be positive"));
        }
        Ok(Self {
            features,
            k_s,
            k_t,
            noise_variance,
            budget,
            dt,
            step: 0,
            count: 0,
            window: VecDeque::new(),
            gp: None,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    fn refit(&mut self) -> Result<()> {
        let mut data = Dataset::empty(self.features.n_features(), self.noise_variance.clone());
        for (z, t, y) in &self.window {
            data.push(z, *t, y)?;
        }
        self.gp = Some(ExactGp::fit(data, self.k_s.clone(), self.k_t)?);
        Ok(())
    }
}

impl ResidualModel for ExactSodResidual {
    fn n_outputs(&self) -> usize {
        self.features.n_outputs()
    }

    fn evaluate_stages(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<Vec<StageEval>> {
        let z = self.features.feature_rows(xs, us)?;
        let n_g = self.n_outputs();
        let Some(gp) = &self.gp else {
            let prior = vec![self.k_s.signal_variance; n_g];
            let zeros = vec![0.0; n_g];
            return Ok((0..z.nrows()).map(|_| self.features.stage_eval(&zeros, &prior, None)).collect());
        };
        let times: Vec<f64> = (0..z.nrows()).map(|i| (self.step + 1 + i as u64) as f64 * self.dt).collect();
        let post = gp.predict(&z, &times)?;
        let jac = gp.mean_jacobians(&z, &times)?;
        Ok((0..z.nrows())
            .map(|k| {
                let mean: Vec<f64> = post.mean.row(k).iter().cloned().collect();
                let var: Vec<f64> = (0..n_g).map(|g| post.variance(k, g)).collect();
                self.features.stage_eval(&mean, &var, Some(&jac[k]))
            })
            .collect())
    }
}

impl OnlineModel for ExactSodResidual {
    fn advance(&mut self, observation: Obs<'_>) -> Result<()> {
        self.step += 1;
        if let Some((x, u, y)) = observation {
            let t = self.step as f64 * self.dt;
            let (z, y) = (self.features.features(x, u), self.features.scale_targets(y));
            self.window.push_back((z.clone(), t, y.clone()));
            let evicted = self.window.len() > self.budget;
            while self.window.len() > self.budget {
                self.window.pop_front();
            }
            self.count += 1;
            // growing windows extend the factorization; sliding ones refit
            let appended = match (&mut self.gp, evicted) {
                (Some(gp), false) => gp.push(&z, t, &y).is_ok(),
                _ => false,
            };
            if !appended {
                self.refit()?;
            }
        }
        Ok(())
    }

    fn count(&self) -> u64 {
        self.count
    }
}

/// Purely spatial inducing-point GP: the recursive model with `dt = 0`
/// absorbs each observation, and every `refit_every` steps it is rebuilt
/// from the most recent `budget` observations so old data is forgotten.
#[derive(Debug, Clone)]
pub struct SpatialIpResidual {
    pub features: FeatureMap,
    config: InducingConfig,
    model: StgpModel,
    budget: usize,
    refit_every: u64,
    step: u64,
    count: u64,
    window: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl SpatialIpResidual {
    /// `config.temporal` and `config.dt` are replaced: a static model has no
    /// temporal dynamics.
    pub fn new(mut config: InducingConfig, budget: usize, refit_every: u64, features: FeatureMap) -> Result<Self> {
        check_outputs(&features, config.n_outputs)?;
        if budget == 0 || refit_every == 0 {
            return Err(Error::config("budget and refit cadence must be positive"));
        }
        config.dt = 0.0;
        config.temporal = TemporalKernelSpec::new(0.5, 1.0)?;
        let model = StgpModel::new(config.clone())?;
        Ok(Self { features, config, model, budget, refit_every, step: 0, count: 0, window: VecDeque::new() })
    }

    fn refit(&mut self) -> Result<()> {
        let mut model = StgpModel::new(self.config.clone())?;
        if !self.window.is_empty() {
            let n_z = self.features.n_features();
            let n_g = self.features.n_outputs();
            let z = DMatrix::from_fn(self.window.len(), n_z, |i, j| self.window[i].0[j]);
            let y = DMatrix::from_fn(self.window.len(), n_g, |i, j| self.window[i].1[j]);
            model.update(Some(&TrainingBatch::new(z, y)?))?;
        }
        self.model = model;
        Ok(())
    }
}

impl ResidualModel for SpatialIpResidual {
    fn n_outputs(&self) -> usize {
        self.features.n_outputs()
    }

    fn evaluate_stages(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<Vec<StageEval>> {
        let z = self.features.feature_rows(xs, us)?;
        let (post, jac) = self.model.evaluate_with_mean_jacobian(&z)?;
        let n_g = self.n_outputs();
        Ok((0..z.nrows())
            .map(|k| {
                let mean: Vec<f64> = post.mean.row(k).iter().cloned().collect();
                let var: Vec<f64> = (0..n_g).map(|g| post.variance(k, g)).collect();
                self.features.stage_eval(&mean, &var, Some(&jac[k]))
            })
            .collect())
    }
}

impl OnlineModel for SpatialIpResidual {
    fn advance(&mut self, observation: Obs<'_>) -> Result<()> {
        self.step += 1;
        if let Some((x, u, y)) = observation {
            let z = self.features.features(x, u);
            let y = self.features.scale_targets(y);
            self.model.update(Some(&TrainingBatch::single(&z, &y)?))?;
            self.window.push_back((z, y));
            while self.window.len() > self.budget {
                self.window.pop_front();
            }
            self.count += 1;
        }
        if self.step % self.refit_every == 0 && self.count > 0 {
            self.refit()?;
        }
        Ok(())
    }

    fn count(&self) -> u64 {
        self.count
    }
}
