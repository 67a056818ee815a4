//! Classifiers seen as probability oracles.
//!
//! An [`OracleHandle`] accepts an image and answers with a
//! [`ProbabilityVector`]; nothing else about the model is observable. Every
//! vector is validated at this boundary, and the handle counts queries
//! atomically so it can be shared by concurrent workers.

mod fixture;
mod remote;

pub use fixture::{read_fixture_weights, write_fixture_weights, LinearSoftmax};
pub use remote::RemoteModel;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image_io::ImageTensor;

/// Allowed deviation of a probability vector's sum from 1.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("image shape {found:?} does not match oracle input {expected}")]
    ShapeMismatch {
        expected: ExpectedShape,
        found: (usize, usize, usize),
    },
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("invalid fixture weights: {0}")]
    BadFixture(String),
    #[error("oracle request timed out: {0}")]
    Timeout(String),
    #[error("oracle transport failure: {0}")]
    Transport(String),
    #[error("oracle returned HTTP {status}")]
    HttpStatus { status: u16 },
    #[error("malformed oracle response: {0}")]
    MalformedResponse(String),
}

impl OracleError {
    /// Failures of the connection itself rather than of the data exchanged.
    pub fn is_transport(&self) -> bool {
        matches!(self, OracleError::Timeout(_) | OracleError::Transport(_))
    }
}

/// A validated class-probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, OracleError> {
        if probs.is_empty() {
            return Err(OracleError::InvalidProbabilities("empty vector".into()));
        }
        if let Some((k, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(OracleError::InvalidProbabilities(format!(
                "entry {k} = {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(OracleError::InvalidProbabilities(format!(
                "entries sum to {sum}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Most probable class; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = OracleError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

/// The input an oracle accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectedShape {
    /// Exactly `height × width × channels`.
    Exact {
        height: usize,
        width: usize,
        channels: usize,
    },
    /// Any image with this many values once flattened.
    Flattened(usize),
}

impl ExpectedShape {
    pub fn accepts(&self, img: &ImageTensor) -> bool {
        match *self {
            ExpectedShape::Exact {
                height,
                width,
                channels,
            } => img.shape() == (height, width, channels),
            ExpectedShape::Flattened(len) => img.data().len() == len,
        }
    }
}

impl fmt::Display for ExpectedShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpectedShape::Exact {
                height,
                width,
                channels,
            } => write!(f, "{height}x{width}x{channels}"),
            ExpectedShape::Flattened(len) => write!(f, "{len} flattened values"),
        }
    }
}

/// A deterministic image classifier that reports class probabilities.
///
/// Implementations return raw vectors; [`OracleHandle`] validates them.
pub trait ProbabilityModel: Send + Sync {
    fn classes(&self) -> usize;

    fn expected_shape(&self) -> ExpectedShape;

    fn probabilities(&self, img: &ImageTensor) -> Result<Vec<f64>, OracleError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleKind {
    Fixture,
    Remote,
    Custom,
}

pub struct OracleHandle {
    kind: OracleKind,
    model: Box<dyn ProbabilityModel>,
    queries: AtomicU64,
}

impl fmt::Debug for OracleHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleHandle")
            .field("kind", &self.kind)
            .field("classes", &self.classes())
            .field("expected_shape", &self.expected_shape())
            .field("queries", &self.query_count())
            .finish()
    }
}

impl OracleHandle {
    pub fn new(kind: OracleKind, model: Box<dyn ProbabilityModel>) -> Self {
        Self {
            kind,
            model,
            queries: AtomicU64::new(0),
        }
    }

    pub fn fixture(model: LinearSoftmax) -> Self {
        Self::new(OracleKind::Fixture, Box::new(model))
    }

    /// Wraps any in-process model, e.g. a test double.
    pub fn custom(model: impl ProbabilityModel + 'static) -> Self {
        Self::new(OracleKind::Custom, Box::new(model))
    }

    /// Builds a fixture oracle from an `LSMW` weight file.
    pub fn load_fixture(weights: &[u8]) -> Result<Self, OracleError> {
        Ok(Self::fixture(read_fixture_weights(weights)?))
    }

    /// Connects to a classification service and reads its `/meta`.
    pub fn connect_remote(endpoint: &str, timeout: Duration) -> Result<Self, OracleError> {
        Ok(Self::new(
            OracleKind::Remote,
            Box::new(RemoteModel::connect(endpoint, timeout)?),
        ))
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    pub fn classes(&self) -> usize {
        self.model.classes()
    }

    pub fn expected_shape(&self) -> ExpectedShape {
        self.model.expected_shape()
    }

    /// Queries issued to the underlying model so far, failed ones included.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn classify(&self, img: &ImageTensor) -> Result<ProbabilityVector, OracleError> {
        let expected = self.model.expected_shape();
        if !expected.accepts(img) {
            return Err(OracleError::ShapeMismatch {
                expected,
                found: img.shape(),
            });
        }
        self.queries.fetch_add(1, Ordering::Relaxed);
        let probs = ProbabilityVector::new(self.model.probabilities(img)?)?;
        if probs.classes() != self.classes() {
            return Err(OracleError::InvalidProbabilities(format!(
                "expected {} classes, got {}",
                self.classes(),
                probs.classes()
            )));
        }
        Ok(probs)
    }
}
