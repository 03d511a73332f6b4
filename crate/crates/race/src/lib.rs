//! Miniature race car simulation for residual-learning MPC.
//!
//! A dynamic bicycle plant with Pacejka tires drives a closed track under a
//! contouring controller. An optional steering perturbation makes the plant
//! drift away from the controller's model, and a residual model learns the
//! gap online on `(v_x, v_y, ω)`.

pub mod error;
pub mod mpcc;
pub mod perturbation;
pub mod records;
pub mod sim;
pub mod track;
pub mod vehicle;

pub use error::{Error, Result};
pub use mpcc::{ControllerConfig, InputLimits, MpccWeights, RaceOcp};
pub use perturbation::{apply_perturbation, PerturbationSchedule, Waveform};
pub use records::{read_csv, write_csv, LapEvent, RaceSummary, SimLog, StepRecord};
pub use sim::{run_closed_loop, LoopMode, RaceConfig};
pub use track::{Track, TrackFile};
pub use vehicle::{Bicycle, VehicleParams};
