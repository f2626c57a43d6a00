use serde::{Deserialize, Serialize};

use crate::objectives::AnnealingWeights;

/// Per-epoch `(gamma, delta)` weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AnnealingSchedule {
    #[default]
    None,
    /// `gamma = max(1, 2 (5 - epoch))`, `delta = 1`.
    Prior,
    /// `gamma = 1`, `delta = min(1, 1 / (7 - epoch))`, and 1 from epoch 7 on.
    Beta,
    /// Constant `(c, c)`.
    Tempering { c: f64 },
}

impl AnnealingSchedule {
    pub fn name(&self) -> &'static str {
        match self {
            AnnealingSchedule::None => "none",
            AnnealingSchedule::Prior => "prior",
            AnnealingSchedule::Beta => "beta",
            AnnealingSchedule::Tempering { .. } => "tempering",
        }
    }
}

/// Weights for a 1-based epoch. Epoch 0 is treated as epoch 1.
pub fn schedule_weights(schedule: AnnealingSchedule, epoch: usize) -> AnnealingWeights {
    let e = epoch.max(1) as f64;
    match schedule {
        AnnealingSchedule::None => AnnealingWeights::UNANNEALED,
        AnnealingSchedule::Prior => AnnealingWeights { gamma: (2.0 * (5.0 - e)).max(1.0), delta: 1.0 },
        AnnealingSchedule::Beta => {
            let delta = if e >= 7.0 { 1.0 } else { (1.0 / (7.0 - e)).min(1.0) };
            AnnealingWeights { gamma: 1.0, delta }
        }
        AnnealingSchedule::Tempering { c } => AnnealingWeights { gamma: c, delta: c },
    }
}
