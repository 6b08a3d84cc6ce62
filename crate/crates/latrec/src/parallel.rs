//! Restarts run on the rayon pool. Each restart is sequential and seeded
//! from its index, and results are collected in index order, so the outcome
//! does not depend on the thread count.

use latrec_core::geen::{select_restart, train_restart, GeenConfig, RestartOutcome, TrainedGeen};
use latrec_core::rae::{select_rae_restart, train_rae_restart, RaeConfig, RaeRestartOutcome, TrainedRae};
use latrec_core::Matrix;
use rayon::prelude::*;

use crate::error::Result;

pub fn geen_restarts(train: &Matrix, valid: &Matrix, config: &GeenConfig) -> Result<Vec<RestartOutcome>> {
    (0..config.restarts)
        .into_par_iter()
        .map(|r| Ok(train_restart(train, valid, config, r)?))
        .collect()
}

/// Parallel counterpart of `train_geen`; also returns every restart.
pub fn train_geen(train: &Matrix, valid: &Matrix, config: &GeenConfig) -> Result<(TrainedGeen, Vec<RestartOutcome>)> {
    let outcomes = geen_restarts(train, valid, config)?;
    let model = select_restart(train, valid, config, outcomes.clone())?;
    Ok((model, outcomes))
}

/// The model a single restart produced, as if it had been the only one.
pub fn geen_restart_model(
    train: &Matrix,
    valid: &Matrix,
    config: &GeenConfig,
    outcome: &RestartOutcome,
) -> Result<Option<TrainedGeen>> {
    if outcome.params.is_none() {
        return Ok(None);
    }
    Ok(Some(select_restart(train, valid, config, vec![outcome.clone()])?))
}

pub fn rae_restarts(train: &Matrix, valid: &Matrix, config: &RaeConfig) -> Result<Vec<RaeRestartOutcome>> {
    (0..config.restarts)
        .into_par_iter()
        .map(|r| Ok(train_rae_restart(train, valid, config, r)?))
        .collect()
}

pub fn train_rae(train: &Matrix, valid: &Matrix, config: &RaeConfig) -> Result<TrainedRae> {
    let outcomes = rae_restarts(train, valid, config)?;
    Ok(select_rae_restart(train, valid, config, outcomes)?)
}
