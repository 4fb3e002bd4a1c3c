//! Experiment pipeline around the localization library: dataset
//! simulation, map building, localization runs and report generation.

pub mod dataset;
pub mod experiment;
pub mod localize;
pub mod mapping;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Sim(#[from] semloc_core::sim::SimError),
    #[error(transparent)]
    Geometry(#[from] semloc_core::geometry::GeometryError),
    #[error(transparent)]
    Map(#[from] semloc_core::map::MapError),
    #[error(transparent)]
    Motion(#[from] semloc_core::motion::MotionError),
    #[error(transparent)]
    Filter(#[from] semloc_core::semantic::FilterError),
    #[error(transparent)]
    Sift(#[from] semloc_core::sift::SiftError),
    #[error(transparent)]
    DataIo(#[from] semloc_core::io::IoError),
}
