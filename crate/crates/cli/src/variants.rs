//! Controller variants and construction of their residual models.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use stgp_core::stgp::placement;
use stgp_core::{InducingConfig, SpatialKernelSpec, TemporalKernelSpec};
use stgp_mpc::{ExactSodResidual, FeatureMap, OnlineModel, SpatialIpResidual, StgpResidual, ZeroModel};

use race_sim::sim::{FEATURE_INDICES, RESIDUAL_ROWS};
use race_sim::vehicle::{N_U, N_X};
use race_sim::LoopMode;

use crate::config::{GpConfig, InducingPlacement};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No residual model.
    #[value(name = "nominal")]
    Nominal,
    /// Exact spatio-temporal GP on a window of the latest points.
    #[value(name = "exact_sod")]
    ExactSod,
    /// Static inducing-point GP rebuilt from a window of the latest points.
    #[value(name = "spatial_ip")]
    SpatialIp,
    /// Recursive spatio-temporal GP over inducing points.
    #[value(name = "stgp")]
    Stgp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Nominal, Variant::ExactSod, Variant::SpatialIp, Variant::Stgp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nominal => "nominal",
            Variant::ExactSod => "exact_sod",
            Variant::SpatialIp => "spatial_ip",
            Variant::Stgp => "stgp",
        }
    }

    pub fn loop_mode(self) -> LoopMode {
        match self {
            Variant::Nominal => LoopMode::NOMINAL,
            _ => LoopMode::LEARNING,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn feature_map(gp: &GpConfig) -> Result<FeatureMap> {
    Ok(FeatureMap::new(N_X, N_U, FEATURE_INDICES.to_vec(), gp.output_scales.clone())?)
}

pub fn inducing_points(placement: &InducingPlacement) -> Result<DMatrix<f64>> {
    Ok(match placement {
        InducingPlacement::LatinHypercube { count, lower, upper, seed } => {
            placement::latin_hypercube(lower, upper, *count, *seed)?
        }
        InducingPlacement::Grid { counts, lower, upper } => placement::uniform_grid(lower, upper, counts)?,
        InducingPlacement::Points { points } => {
            let dim = points.first().map_or(0, Vec::len);
            DMatrix::from_fn(points.len(), dim, |i, j| points[i][j])
        }
    })
}

pub fn kernels(gp: &GpConfig) -> Result<(SpatialKernelSpec, TemporalKernelSpec)> {
    Ok((
        SpatialKernelSpec::new(gp.signal_variance, gp.lengthscales.clone())?,
        TemporalKernelSpec::new(gp.temporal_nu, gp.temporal_lengthscale)?,
    ))
}

pub fn inducing_config(gp: &GpConfig, dt: f64) -> Result<InducingConfig> {
    let (spatial, temporal) = kernels(gp)?;
    let config = InducingConfig {
        inducing: inducing_points(&gp.inducing)?,
        spatial,
        temporal,
        noise_variance: gp.noise_variance.clone(),
        dt,
        n_outputs: RESIDUAL_ROWS.len(),
    };
    config.validate()?;
    Ok(config)
}

/// Fresh residual model for `variant`, stepping every `dt` seconds.
/// `sod_budget` overrides the configured window (the uncapped benchmark).
pub fn build_model(
    variant: Variant,
    gp: &GpConfig,
    dt: f64,
    sod_budget: Option<usize>,
) -> Result<Box<dyn OnlineModel>> {
    let budget = sod_budget.unwrap_or(gp.sod_budget);
    Ok(match variant {
        Variant::Nominal => Box::new(ZeroModel { n_g: RESIDUAL_ROWS.len(), n_x: N_X, n_u: N_U }),
        Variant::Stgp => Box::new(StgpResidual::new(inducing_config(gp, dt)?, feature_map(gp)?)?),
        Variant::SpatialIp => {
            Box::new(SpatialIpResidual::new(inducing_config(gp, dt)?, budget, gp.refit_every, feature_map(gp)?)?)
        }
        Variant::ExactSod => {
            let (k_s, k_t) = kernels(gp)?;
            Box::new(ExactSodResidual::new(k_s, k_t, gp.noise_variance.clone(), budget, dt, feature_map(gp)?)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_builds_from_defaults() {
        for v in Variant::ALL {
            let m = build_model(v, &GpConfig::default(), 1.0 / 30.0, None).unwrap();
            assert_eq!(m.n_outputs(), 3, "{v}");
        }
    }

    #[test]
    fn names_round_trip_through_serde() {
        for v in Variant::ALL {
            let s = serde_json::to_string(&v).unwrap();
            assert_eq!(s, format!("\"{}\"", v.name()));
            assert_eq!(serde_json::from_str::<Variant>(&s).unwrap(), v);
        }
    }

    #[test]
    fn duplicate_inducing_points_are_rejected() {
        let gp = GpConfig {
            inducing: InducingPlacement::Points { points: vec![vec![1.0, 0.0, 0.0, 0.0, 0.0]; 2] },
            ..GpConfig::default()
        };
        assert!(build_model(Variant::Stgp, &gp, 1.0 / 30.0, None).is_err());
    }

    #[test]
    fn unsupported_smoothness_is_rejected() {
        let gp = GpConfig { temporal_nu: 2.0, ..GpConfig::default() };
        let err = build_model(Variant::Stgp, &gp, 1.0 / 30.0, None).err().unwrap();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("unsupported smoothness"), "{err}");
    }
}
