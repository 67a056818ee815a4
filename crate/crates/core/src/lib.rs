//! One-index adversarial attacks on vector-quantized image streams.
//!
//! An image is compressed into a grid of codeword indices; the attack
//! rewrites the indices of a single grid cell so that the decoded image is
//! misclassified by a classifier that exposes only probability vectors.
//! Differential evolution searches over (cell, replacement indices), and a
//! codebook sorted by first principal component makes nearby index values
//! decode to similar blocks.

pub mod attack;
pub mod codebook_sort;
pub mod experiment;
pub mod image_io;
pub mod oracle;
pub mod synthetic;
pub mod vq_codec;
