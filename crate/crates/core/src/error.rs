use thiserror::Error;

use crate::config::ConfigError;
use crate::detector::DetectorError;
use crate::experiments::ExperimentError;
use crate::fitting::FitError;
use crate::kinetics::KineticsError;
use crate::model::ModelError;
use crate::pulseseq::SeqError;

/// Crate-wide error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Sequence(#[from] SeqError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
