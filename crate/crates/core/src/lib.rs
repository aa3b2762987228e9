pub mod cli;
pub mod counters;
pub mod dae;
pub mod error;
pub mod hybrid;
pub mod models;
pub mod numeric;
pub mod ptc;
pub mod trapezoidal;

pub use error::{Error, Result};

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod guide_introduction {}
#[doc = include_str!("../../../book/src/formulation.md")]
pub mod guide_formulation {}
#[doc = include_str!("../../../book/src/ptc.md")]
pub mod guide_ptc {}
#[doc = include_str!("../../../book/src/trapezoidal.md")]
pub mod guide_trapezoidal {}
#[doc = include_str!("../../../book/src/events.md")]
pub mod guide_events {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod guide_models {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod guide_cli {}
