//! Linear-softmax fixture: `probs = softmax(W · flatten(img)/255 + b)`.
//!
//! Weight file (`LSMW`): magic, `u8` version 1, `u32` K, `u32` D, then
//! `K×D` weights and `K` biases as little-endian `f32`.

use super::{ExpectedShape, OracleError, ProbabilityModel};
use crate::image_io::ImageTensor;

const MAGIC: &[u8; 4] = b"LSMW";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    classes: usize,
    input_len: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl LinearSoftmax {
    pub fn new(
        classes: usize,
        input_len: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self, OracleError> {
        if classes == 0 || input_len == 0 {
            return Err(OracleError::BadFixture(format!(
                "degenerate dimensions K={classes} D={input_len}"
            )));
        }
        if weights.len() != classes * input_len || bias.len() != classes {
            return Err(OracleError::BadFixture(format!(
                "expected {} weights and {classes} biases, got {} and {}",
                classes * input_len,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(OracleError::BadFixture("non-finite parameter".into()));
        }
        Ok(Self {
            classes,
            input_len,
            weights,
            bias,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn logits(&self, img: &ImageTensor) -> Vec<f64> {
        let x = img.data();
        self.weights
            .chunks_exact(self.input_len)
            .zip(&self.bias)
            .map(|(row, &b)| {
                let dot: f64 = row
                    .iter()
                    .zip(x)
                    .map(|(&w, &v)| w as f64 * v as f64)
                    .sum();
                dot / 255.0 + b as f64
            })
            .collect()
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl ProbabilityModel for LinearSoftmax {
    fn classes(&self) -> usize {
        self.classes
    }

    fn expected_shape(&self) -> ExpectedShape {
        ExpectedShape::Flattened(self.input_len)
    }

    fn probabilities(&self, img: &ImageTensor) -> Result<Vec<f64>, OracleError> {
        Ok(softmax(&self.logits(img)))
    }
}

pub fn write_fixture_weights(model: &LinearSoftmax) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 4 * (model.weights.len() + model.bias.len()));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(model.classes as u32).to_le_bytes());
    out.extend_from_slice(&(model.input_len as u32).to_le_bytes());
    for v in model.weights.iter().chain(&model.bias) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_fixture_weights(bytes: &[u8]) -> Result<LinearSoftmax, OracleError> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(OracleError::BadFixture("bad magic (expected LSMW)".into()));
    }
    let header = bytes
        .get(..13)
        .ok_or_else(|| OracleError::BadFixture("truncated header".into()))?;
    if header[4] != VERSION {
        return Err(OracleError::BadFixture(format!(
            "unsupported version {}",
            header[4]
        )));
    }
    let classes = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
    let input_len = u32::from_le_bytes(header[9..13].try_into().unwrap()) as usize;
    let count = classes
        .checked_mul(input_len)
        .and_then(|n| n.checked_add(classes))
        .ok_or_else(|| OracleError::BadFixture("dimensions overflow".into()))?;
    let body = &bytes[13..];
    if body.len() != count * 4 {
        return Err(OracleError::BadFixture(format!(
            "expected {} parameter bytes, found {}",
            count * 4,
            body.len()
        )));
    }
    let mut values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let bias = values.split_off(classes * input_len);
    LinearSoftmax::new(classes, input_len, values, bias)
}
