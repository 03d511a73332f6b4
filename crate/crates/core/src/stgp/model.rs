use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{evaluate_impl, update, InducingConfig, StgpCache, StgpState, TrainingBatch};
use crate::error::{Error, Result};
use crate::gp_models::{group_by_noise, GpPosterior};

/// Outputs that share a noise level and therefore one covariance recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterGroup {
    pub outputs: Vec<usize>,
    pub noise_variance: f64,
    pub state: StgpState,
}

/// Multi-output model: one filter per distinct noise level, sharing the cache.
#[derive(Debug, Clone)]
pub struct StgpModel {
    config: InducingConfig,
    cache: StgpCache,
    groups: Vec<FilterGroup>,
}

/// Serializable snapshot of a model (configuration plus filter states).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: InducingConfig,
    pub groups: Vec<FilterGroup>,
}

impl StgpModel {
    pub fn new(config: InducingConfig) -> Result<Self> {
        let cache = StgpCache::new(&config)?;
        let groups = group_by_noise(&config.noise_variance)
            .into_iter()
            .map(|(noise_variance, outputs)| FilterGroup {
                state: StgpState::prior(&cache, outputs.len()),
                outputs,
                noise_variance,
            })
            .collect();
        Ok(Self { config, cache, groups })
    }

    pub fn config(&self) -> &InducingConfig {
        &self.config
    }

    pub fn cache(&self) -> &StgpCache {
        &self.cache
    }

    pub fn groups(&self) -> &[FilterGroup] {
        &self.groups
    }

    pub fn n_outputs(&self) -> usize {
        self.config.n_outputs
    }

    pub fn now(&self) -> f64 {
        self.groups[0].state.now
    }

    pub fn count(&self) -> u64 {
        self.groups[0].state.count
    }

    /// Advance one step; absorb `batch` if given. On error the model is unchanged.
    pub fn update(&mut self, batch: Option<&TrainingBatch>) -> Result<()> {
        if let Some(b) = batch {
            if b.y.ncols() != self.n_outputs() {
                return Err(Error::contract(format!(
                    "batch has {} outputs, model has {}",
                    b.y.ncols(),
                    self.n_outputs()
                )));
            }
        }
        let mut next = Vec::with_capacity(self.groups.len());
        for group in &self.groups {
            let mut state = group.state.clone();
            let sub = match batch {
                Some(b) if group.outputs.len() == self.n_outputs() => Some(b.clone()),
                Some(b) => {
                    let mut y = DMatrix::<f64>::zeros(b.len(), group.outputs.len());
                    for (c, &g) in group.outputs.iter().enumerate() {
                        y.set_column(c, &b.y.column(g));
                    }
                    Some(TrainingBatch { z: b.z.clone(), y })
                }
                None => None,
            };
            update(&mut state, &self.cache, sub.as_ref(), group.noise_variance)?;
            next.push(state);
        }
        for (group, state) in self.groups.iter_mut().zip(next) {
            group.state = state;
        }
        Ok(())
    }

    pub fn evaluate(&self, stages: &DMatrix<f64>) -> Result<GpPosterior> {
        self.evaluate_inner(stages, false).map(|(p, _)| p)
    }

    pub fn evaluate_with_mean_jacobian(
        &self,
        stages: &DMatrix<f64>,
    ) -> Result<(GpPosterior, Vec<DMatrix<f64>>)> {
        self.evaluate_inner(stages, true)
    }

    fn evaluate_inner(&self, stages: &DMatrix<f64>, jac: bool) -> Result<(GpPosterior, Vec<DMatrix<f64>>)> {
        if self.groups.len() == 1 {
            return evaluate_impl(&self.groups[0].state, &self.cache, stages, jac);
        }
        let n = stages.nrows();
        let n_g = self.n_outputs();
        let mut mean = DMatrix::<f64>::zeros(n, n_g);
        let mut cov = vec![DMatrix::<f64>::zeros(0, 0); n_g];
        let mut jacobians = if jac {
            vec![DMatrix::<f64>::zeros(n_g, stages.ncols()); n]
        } else {
            Vec::new()
        };
        for group in &self.groups {
            let (post, jg) = evaluate_impl(&group.state, &self.cache, stages, jac)?;
            for (c, &g) in group.outputs.iter().enumerate() {
                mean.set_column(g, &post.mean.column(c));
                cov[g] = post.cov[c].clone();
                for (k, j) in jg.iter().enumerate() {
                    jacobians[k].set_row(g, &j.row(c));
                }
            }
        }
        Ok((GpPosterior { mean, cov }, jacobians))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { config: self.config.clone(), groups: self.groups.clone() }
    }

    pub fn restore(cp: Checkpoint) -> Result<Self> {
        let mut model = Self::new(cp.config)?;
        if cp.groups.len() != model.groups.len() {
            return Err(Error::config("checkpoint filter groups do not match the configuration"));
        }
        let md = model.cache.state_dim();
        for (dst, src) in model.groups.iter_mut().zip(cp.groups) {
            if dst.outputs != src.outputs
                || src.state.sigma_root.shape() != (md, md)
                || src.state.mu.shape() != (md, dst.outputs.len())
            {
                return Err(Error::config("checkpoint state does not match the configuration"));
            }
            dst.state = src.state;
        }
        Ok(model)
    }
}
