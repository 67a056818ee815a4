//! HTTP client for a remote classification service.
//!
//! `GET /meta` answers `{"classes": K, "height": H, "width": W, "channels": C}`.
//! `POST /classify` takes canonical PGM/PPM bytes
//! (`application/octet-stream`) and answers `{"probs": [f64; K]}`.
//! Any non-200 status is a protocol error.

use std::io;
use std::time::Duration;

use serde::Deserialize;

use super::{ExpectedShape, OracleError, ProbabilityModel};
use crate::image_io::{save_image, ImageTensor};

#[derive(Debug, Deserialize)]
struct Meta {
    classes: usize,
    height: usize,
    width: usize,
    channels: usize,
}

#[derive(Debug, Deserialize)]
struct ClassifyResponse {
    probs: Vec<f64>,
}

pub struct RemoteModel {
    agent: ureq::Agent,
    base: String,
    classes: usize,
    shape: ExpectedShape,
}

fn map_transport(err: ureq::Error) -> OracleError {
    match err {
        ureq::Error::Timeout(t) => OracleError::Timeout(t.to_string()),
        ureq::Error::Io(e) if matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) => {
            OracleError::Timeout(e.to_string())
        }
        ureq::Error::StatusCode(status) => OracleError::HttpStatus { status },
        other => OracleError::Transport(other.to_string()),
    }
}

impl RemoteModel {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, OracleError> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        let agent: ureq::Agent = config.into();
        let base = endpoint.trim_end_matches('/').to_string();
        let mut resp = agent
            .get(format!("{base}/meta"))
            .call()
            .map_err(map_transport)?;
        if resp.status() != 200 {
            return Err(OracleError::HttpStatus {
                status: resp.status().as_u16(),
            });
        }
        let body = resp.body_mut().read_to_string().map_err(map_transport)?;
        let meta: Meta = serde_json::from_str(&body)
            .map_err(|e| OracleError::MalformedResponse(format!("/meta: {e}")))?;
        if meta.classes == 0 || meta.height == 0 || meta.width == 0 || !matches!(meta.channels, 1 | 3) {
            return Err(OracleError::MalformedResponse(format!(
                "/meta describes an unusable model: {meta:?}"
            )));
        }
        Ok(Self {
            agent,
            base,
            classes: meta.classes,
            shape: ExpectedShape::Exact {
                height: meta.height,
                width: meta.width,
                channels: meta.channels,
            },
        })
    }
}

impl ProbabilityModel for RemoteModel {
    fn classes(&self) -> usize {
        self.classes
    }

    fn expected_shape(&self) -> ExpectedShape {
        self.shape
    }

    fn probabilities(&self, img: &ImageTensor) -> Result<Vec<f64>, OracleError> {
        let payload = save_image(img);
        let mut resp = self
            .agent
            .post(format!("{}/classify", self.base))
            .header("Content-Type", "application/octet-stream")
            .send(&payload[..])
            .map_err(map_transport)?;
        if resp.status() != 200 {
            return Err(OracleError::HttpStatus {
                status: resp.status().as_u16(),
            });
        }
        let body = resp.body_mut().read_to_string().map_err(map_transport)?;
        let parsed: ClassifyResponse = serde_json::from_str(&body)
            .map_err(|e| OracleError::MalformedResponse(format!("/classify: {e}")))?;
        Ok(parsed.probs)
    }
}
