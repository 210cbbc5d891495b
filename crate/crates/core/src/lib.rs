//! Simulation, factorization, clustering and agreement analysis for
//! crowdsourced binary annotations.
//!
//! The pipeline runs from simulated (or ingested) annotation records through
//! a weighted ALS factorization, optional projection, density clustering and
//! proxy-label evaluation. The agreement module covers Krippendorff's alpha,
//! Cohen's kappa, cross-replication reliability and ΔIRR.

pub mod agreement;
pub mod cluster;
pub mod config;
pub mod error;
pub mod evalsweep;
pub mod ingest;
pub mod io;
pub mod projection;
pub mod rng;
pub mod simgen;
pub mod svg;
pub mod wals;

pub use agreement::{AgreementScore, PredictionPairs, RatingTable};
pub use cluster::{ClusterParams, ClusterResult, ClusterSpace, ProxyLabel};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use evalsweep::{CurveData, PipelineParams, ProxyKind, SweepConfig, SweepReport};
pub use ingest::{DatasetSchema, DatasetTag, Scale, UnifiedAnnotation};
pub use projection::{EmbeddingSet, PointKind, PreprocessMode, ProjectionMethod, ProjectionParams};
pub use simgen::{AnnotationRecord, AnnotatorProfile, Difficulty, ItemProfile, SimConfig, SkillClass};
pub use wals::{Entry, FactorModel, FitReport, SparseRatingMatrix, WalsParams};
