//! Small-space per-site summaries: Space-Saving for item frequencies and
//! Greenwald-Khanna for ranks.

mod gk;
mod space_saving;

pub use gk::GkSketch;
pub use space_saving::SpaceSaving;
