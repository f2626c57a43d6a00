//! JSON checkpoints: configuration, dictionary, optimal scales and variance, and either the
//! per-datapoint posteriors or the encoder. Matrices are stored as nested rows.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::amortized::EncoderParams;
use crate::data::formats::{matrix_to_rows, rows_to_matrix};
use crate::error::{Error, Result};
use crate::model::{DictionaryPreimage, PosteriorKind, PosteriorSet};
use crate::optim::{TrainConfig, TrainOutcome};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub config: TrainConfig,
    pub amortized: bool,
    /// Unit-norm dictionary columns, `D` rows of `H` values.
    pub preimage: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub sigma2: f64,
    pub final_elbo: f64,
    pub posterior_kind: PosteriorKind,
    /// Flat posterior blocks, one row per datapoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posteriors: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_v1: Option<EncoderParams>,
}

impl Checkpoint {
    pub fn from_outcome(config: &TrainConfig, amortized: bool, outcome: &TrainOutcome) -> Result<Self> {
        let bd = outcome
            .final_breakdown
            .as_ref()
            .ok_or_else(|| Error::Domain("training outcome has no evaluation".into()))?;
        let posteriors = outcome
            .posteriors
            .as_ref()
            .map(|p| (0..p.n()).map(|i| p.block(i).to_vec()).collect());
        Ok(Self {
            format: CHECKPOINT_FORMAT,
            config: config.clone(),
            amortized,
            preimage: matrix_to_rows(&outcome.preimage.v),
            lambdas: bd.lambda_opt.clone(),
            sigma2: bd.sigma2_opt,
            final_elbo: bd.total,
            posterior_kind: config.posterior,
            posteriors,
            encoder_v1: outcome.encoder.clone(),
        })
    }

    pub fn preimage(&self) -> Result<DictionaryPreimage> {
        DictionaryPreimage::new(rows_to_matrix(&self.preimage)?)
    }

    pub fn w_tilde(&self) -> Result<DMatrix<f64>> {
        self.preimage()?.w_tilde()
    }

    pub fn posterior_set(&self) -> Result<Option<PosteriorSet>> {
        let Some(rows) = &self.posteriors else { return Ok(None) };
        let h = self.lambdas.len();
        let block = self.posterior_kind.block_len(h);
        if rows.iter().any(|r| r.len() != block) {
            return Err(Error::Shape(format!("posterior rows must have {block} entries")));
        }
        PosteriorSet::from_flat(self.posterior_kind, h, rows.concat()).map(Some)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::format(path, format!("unsupported checkpoint format {}", ck.format)));
        }
        Ok(ck)
    }
}
