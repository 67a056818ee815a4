//! Codeword sorting by first principal component.
//!
//! An LBG codebook has no relation between index distance and codeword
//! distance, which makes index-space search blind. Sorting codewords by their
//! projection onto the first principal axis makes neighbouring indices decode
//! to similar blocks.
//!
//! Two centering modes are available. [`Centering::PerComponent`] is ordinary
//! sample PCA over the codewords and is the default. [`Centering::PerCodeword`]
//! first removes each codeword's own mean (its DC level), so the ordering only
//! reflects block texture.

mod jacobi;

pub use jacobi::{symmetric_eigen, SymmetricEigen, MAX_SWEEPS, OFF_DIAGONAL_TOLERANCE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vq_codec::{Codebook, CodecError, IndexTensor, Permutation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SortError {
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_diagonal:e})")]
    EigenNoConvergence { sweeps: usize, off_diagonal: f64 },
    #[error("reference index {reference} out of range for codebook of length {len}")]
    ReferenceOutOfRange { reference: usize, len: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("need at least two codewords, got {0}")]
    TooFewCodewords(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Centering {
    /// Subtract each codeword's own component mean.
    PerCodeword,
    /// Subtract the mean codeword (sample PCA).
    #[default]
    PerComponent,
}

/// `p_i = Y_i − a_i`, where `a_i` is the mean of `Y_i`'s own components.
pub fn center_codewords(cb: &Codebook) -> Vec<Vec<f64>> {
    cb.codewords()
        .map(|cw| {
            let mean = cw.iter().map(|&v| v as f64).sum::<f64>() / cw.len() as f64;
            cw.iter().map(|&v| v as f64 - mean).collect()
        })
        .collect()
}

/// `p_i = Y_i − Ȳ`, where `Ȳ` is the mean codeword.
pub fn center_components(cb: &Codebook) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = cb
        .codewords()
        .map(|cw| cw.iter().map(|&v| v as f64).collect())
        .collect();
    let mean = column_mean(&rows);
    rows.into_iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect()
}

pub fn center(cb: &Codebook, centering: Centering) -> Vec<Vec<f64>> {
    match centering {
        Centering::PerCodeword => center_codewords(cb),
        Centering::PerComponent => center_components(cb),
    }
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
    mean
}

/// Sample covariance (divisor `n − 1`) of the rows of `p`, one variable per column.
pub fn covariance(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = p[0].len();
    let mean = column_mean(p);
    let mut cov = vec![vec![0.0; dim]; dim];
    for row in p {
        for a in 0..dim {
            let da = row[a] - mean[a];
            for b in a..dim {
                cov[a][b] += da * (row[b] - mean[b]);
            }
        }
    }
    let denom = (p.len() - 1) as f64;
    for a in 0..dim {
        for b in a..dim {
            cov[a][b] /= denom;
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

fn dominant_index(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// Unit eigenvector of the largest covariance eigenvalue of `p`'s rows.
///
/// Ties among the largest eigenvalues go to the eigenvector whose
/// largest-magnitude component has the smallest index. The sign is fixed so
/// that component is positive.
pub fn first_principal_axis(p: &[Vec<f64>]) -> Result<Vec<f64>, SortError> {
    if p.len() < 2 {
        return Err(SortError::TooFewCodewords(p.len()));
    }
    let eig = symmetric_eigen(&covariance(p))?;
    let top = eig.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-10 * top.abs();
    let pick = (0..eig.values.len())
        .filter(|&k| top - eig.values[k] <= tie)
        .min_by_key(|&k| (dominant_index(&eig.vectors[k]), k))
        .expect("at least one eigenvalue");
    let mut axis = eig.vectors[pick].clone();
    if axis[dominant_index(&axis)] < 0.0 {
        axis.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(axis)
}

/// Projection of every centered codeword onto the first principal axis.
pub fn first_pc_scores(p: &[Vec<f64>]) -> Result<Vec<f64>, SortError> {
    let axis = first_principal_axis(p)?;
    Ok(p.iter()
        .map(|row| row.iter().zip(&axis).map(|(x, a)| x * a).sum())
        .collect())
}

/// Sorts codewords by ascending first-PC score using the default centering.
///
/// Returns the sorted codebook and the permutation from the input's indices
/// to the sorted indices. The permutation stored in the sorted codebook maps
/// the original (pre-sorting) order, so re-sorting an already sorted codebook
/// composes the two.
pub fn sort_codebook(cb: &Codebook) -> Result<(Codebook, Permutation), SortError> {
    sort_codebook_with(cb, Centering::default())
}

pub fn sort_codebook_with(
    cb: &Codebook,
    centering: Centering,
) -> Result<(Codebook, Permutation), SortError> {
    let scores = first_pc_scores(&center(cb, centering))?;
    let mut order: Vec<usize> = (0..cb.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let mut step = vec![0u32; cb.len()];
    let mut flat = Vec::with_capacity(cb.as_flat().len());
    for (new, &old) in order.iter().enumerate() {
        step[old] = new as u32;
        flat.extend_from_slice(cb.codeword(old));
    }
    let step = Permutation::new(step)?;
    let stored = match cb.permutation() {
        Some(earlier) => earlier.then(&step),
        None => step.clone(),
    };
    let sorted = Codebook::new(cb.block_w(), cb.block_h(), flat)?.with_permutation(stored)?;
    Ok((sorted, step))
}

/// Replaces every index `i` with `permutation[i]` and binds the result to `target`.
pub fn remap_indices(
    idx: &IndexTensor,
    permutation: &Permutation,
    target: &Codebook,
) -> Result<IndexTensor, SortError> {
    if permutation.len() != idx.codebook_len() || target.len() != permutation.len() {
        return Err(SortError::LengthMismatch(format!(
            "indices over {} codewords, permutation of {}, target codebook of {}",
            idx.codebook_len(),
            permutation.len(),
            target.len()
        )));
    }
    Ok(idx.remapped(permutation, target))
}

/// Returns indices decodable with `cb`.
///
/// Indices already bound to `cb` are returned as-is; indices bound to the
/// pre-sorting order of a sorted `cb` are remapped.
pub fn align_indices(idx: &IndexTensor, cb: &Codebook) -> Result<IndexTensor, SortError> {
    if idx.codebook_id() == cb.id() {
        return Ok(idx.clone());
    }
    if let Some(perm) = cb.permutation() {
        if cb.unsorted().id() == idx.codebook_id() {
            return remap_indices(idx, perm, cb);
        }
    }
    Err(CodecError::CodebookMismatch {
        expected: idx.codebook_id(),
        found: cb.id(),
    }
    .into())
}

/// Euclidean distances from one reference codeword to every codeword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub reference: usize,
    pub distances: Vec<f64>,
}

pub fn distance_profile(cb: &Codebook, reference: usize) -> Result<DistanceProfile, SortError> {
    if reference >= cb.len() {
        return Err(SortError::ReferenceOutOfRange {
            reference,
            len: cb.len(),
        });
    }
    let origin = cb.codeword(reference);
    let distances = cb
        .codewords()
        .map(|cw| {
            cw.iter()
                .zip(origin)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(DistanceProfile {
        reference,
        distances,
    })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
///
/// `NaN` when either sample has no rank variance.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

/// Spearman correlation between `|j − reference|` and the distance from
/// codeword `reference` to codeword `j`.
pub fn index_distance_correlation(cb: &Codebook, reference: usize) -> Result<f64, SortError> {
    let profile = distance_profile(cb, reference)?;
    let gaps: Vec<f64> = (0..cb.len())
        .map(|j| (j as f64 - reference as f64).abs())
        .collect();
    Ok(spearman(&gaps, &profile.distances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::ImageTensor;
    use crate::vq_codec::{decode, encode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_codebook(seed: u64, len: usize, bw: usize, bh: usize) -> Codebook {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = (0..len * bw * bh)
            .map(|_| rng.random_range(0.0f32..=255.0))
            .collect();
        Codebook::new(bw, bh, flat).unwrap()
    }

    /// Dominant eigenvector by plain power iteration on the covariance.
    fn power_method(cov: &[Vec<f64>], iterations: usize) -> Vec<f64> {
        let n = cov.len();
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        for _ in 0..iterations {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[i] += cov[i][j] * v[j];
                }
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = next.into_iter().map(|x| x / norm).collect();
        }
        v
    }

    #[test]
    fn row_centering_examples() {
        let cb = Codebook::from_rows(2, 2, &[vec![5.0; 4], vec![0.0, 10.0, 0.0, 10.0]]).unwrap();
        let p = center_codewords(&cb);
        assert_eq!(p[0], vec![0.0; 4]);
        assert_eq!(p[1], vec![-5.0, 5.0, -5.0, 5.0]);
        let cb = Codebook::from_rows(2, 1, &[vec![0.0, 10.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(center_codewords(&cb)[0], vec![-5.0, 5.0]);
    }

    #[test]
    fn column_centering_zeroes_the_mean_codeword() {
        let cb = random_codebook(2, 12, 2, 2);
        let p = center_components(&cb);
        for col in 0..4 {
            let s: f64 = p.iter().map(|r| r[col]).sum();
            assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn axis_matches_power_iteration() {
        for seed in 0..5 {
            let cb = random_codebook(seed, 32, 2, 2);
            for centering in [Centering::PerCodeword, Centering::PerComponent] {
                let p = center(&cb, centering);
                let axis = first_principal_axis(&p).unwrap();
                let oracle = power_method(&covariance(&p), 10_000);
                let dot: f64 = axis.iter().zip(&oracle).map(|(a, b)| a * b).sum();
                let sign = dot.signum();
                for (a, b) in axis.iter().zip(&oracle) {
                    assert!((a - sign * b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn collinear_codewords_sort_by_coordinate() {
        // Y_i = base + t_i * dir, with t_i scrambled.
        let base = [40.0f32, 60.0, 80.0, 50.0];
        let dir = [1.0f32, -0.5, 2.0, 0.25];
        let ts = [7.0f32, 1.0, 30.0, 12.0, 0.0, 22.0, 5.0, 16.0];
        let rows: Vec<Vec<f32>> = ts
            .iter()
            .map(|t| base.iter().zip(&dir).map(|(b, d)| b + t * d).collect())
            .collect();
        let cb = Codebook::from_rows(2, 2, &rows).unwrap();
        for centering in [Centering::PerCodeword, Centering::PerComponent] {
            let (sorted, perm) = sort_codebook_with(&cb, centering).unwrap();
            let mut new_ts = vec![0.0; ts.len()];
            for (old, t) in ts.iter().enumerate() {
                new_ts[perm.apply(old)] = *t;
            }
            let ascending = new_ts.windows(2).all(|w| w[0] < w[1]);
            let descending = new_ts.windows(2).all(|w| w[0] > w[1]);
            assert!(ascending || descending, "{centering:?}: {new_ts:?}");
            assert!(sorted.is_sorted());
        }
    }

    #[test]
    fn duplicate_codewords_score_equally() {
        let cb = Codebook::from_rows(
            2,
            1,
            &[vec![10.0, 20.0], vec![200.0, 90.0], vec![10.0, 20.0], vec![50.0, 50.0]],
        )
        .unwrap();
        for centering in [Centering::PerCodeword, Centering::PerComponent] {
            let scores = first_pc_scores(&center(&cb, centering)).unwrap();
            assert_eq!(scores[0], scores[2]);
        }
    }

    #[test]
    fn identical_codewords_give_identity_permutation() {
        let cb = Codebook::new(2, 2, vec![9.0; 16]).unwrap();
        let (_, perm) = sort_codebook(&cb).unwrap();
        assert!(perm.is_identity());
    }

    #[test]
    fn sorted_input_yields_identity_and_reversal_is_undone() {
        let cb = random_codebook(8, 16, 2, 2);
        let (sorted, _) = sort_codebook(&cb).unwrap();
        let (again, step) = sort_codebook(&sorted).unwrap();
        assert!(step.is_identity());
        assert_eq!(again.as_flat(), sorted.as_flat());

        let mut rows: Vec<Vec<f32>> = sorted.codewords().map(<[f32]>::to_vec).collect();
        rows.reverse();
        let reversed = Codebook::from_rows(2, 2, &rows).unwrap();
        let (restored, _) = sort_codebook(&reversed).unwrap();
        assert_eq!(restored.as_flat(), sorted.as_flat());
    }

    #[test]
    fn resorting_composes_permutations() {
        let cb = random_codebook(10, 8, 2, 1);
        let (sorted, step) = sort_codebook(&cb).unwrap();
        assert_eq!(sorted.permutation(), Some(&step));
        assert_eq!(sorted.unsorted(), cb);
        let (twice, _) = sort_codebook(&sorted).unwrap();
        assert_eq!(twice.unsorted(), cb);
    }

    #[test]
    fn remap_identity_and_inverse() {
        let cb = random_codebook(4, 8, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let indices = (0..3 * 3 * 3).map(|_| rng.random_range(0..8u16)).collect();
        let idx = IndexTensor::new(3, 3, 3, 8, cb.id(), indices).unwrap();
        let same = remap_indices(&idx, &Permutation::identity(8), &cb).unwrap();
        assert_eq!(same, idx);

        let (sorted, perm) = sort_codebook(&cb).unwrap();
        let forward = remap_indices(&idx, &perm, &sorted).unwrap();
        let back = remap_indices(&forward, &perm.inverse(), &cb).unwrap();
        assert_eq!(back, idx);
        assert!(remap_indices(&idx, &Permutation::identity(7), &cb).is_err());
    }

    #[test]
    fn align_remaps_streams_bound_to_the_unsorted_codebook() {
        let cb = random_codebook(6, 16, 2, 2);
        let img = ImageTensor::new(4, 4, 3, (0..48).map(|i| (i * 5) as u8).collect()).unwrap();
        let idx = encode(&img, &cb).unwrap();
        let (sorted, _) = sort_codebook(&cb).unwrap();
        let aligned = align_indices(&idx, &sorted).unwrap();
        assert_eq!(
            decode(&aligned, &sorted).unwrap(),
            decode(&idx, &cb).unwrap()
        );
        assert_eq!(align_indices(&aligned, &sorted).unwrap(), aligned);
        let other = random_codebook(7, 16, 2, 2);
        assert!(align_indices(&idx, &other).is_err());
    }

    #[test]
    fn distance_profile_properties() {
        let flat = Codebook::new(2, 2, vec![3.0; 12]).unwrap();
        assert!(distance_profile(&flat, 1)
            .unwrap()
            .distances
            .iter()
            .all(|&d| d == 0.0));
        assert_eq!(
            distance_profile(&flat, 3),
            Err(SortError::ReferenceOutOfRange {
                reference: 3,
                len: 3
            })
        );

        let cb = random_codebook(12, 10, 2, 2);
        for i in 0..10 {
            let pi = distance_profile(&cb, i).unwrap();
            assert_eq!(pi.distances[i], 0.0);
            for j in 0..10 {
                let pj = distance_profile(&cb, j).unwrap();
                assert_eq!(pi.distances[j], pj.distances[i]);
                // Second route: expand ||a-b||^2 = Σ a² − 2ab + b².
                let (a, b) = (cb.codeword(i), cb.codeword(j));
                let expanded: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| (x as f64).powi(2) - 2.0 * x as f64 * y as f64 + (y as f64).powi(2))
                    .sum();
                assert!((pi.distances[j] - expanded.max(0.0).sqrt()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn spearman_reference_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // With ties: ranks (0.5, 0.5, 2) vs (0, 1, 2) → r = 0.866…
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
    }

    proptest! {
        #[test]
        fn row_centered_vectors_sum_to_zero(seed in any::<u64>()) {
            let cb = random_codebook(seed, 8, 2, 2);
            for p in center_codewords(&cb) {
                prop_assert!(p.iter().sum::<f64>().abs() < 1e-9);
            }
        }

        #[test]
        fn sorting_preserves_multiset_and_decoding(seed in any::<u64>()) {
            let cb = random_codebook(seed, 16, 2, 2);
            let (sorted, perm) = sort_codebook(&cb).unwrap();
            for old in 0..cb.len() {
                prop_assert_eq!(cb.codeword(old), sorted.codeword(perm.apply(old)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let indices = (0..4 * 4 * 3).map(|_| rng.random_range(0..16u16)).collect();
            let idx = IndexTensor::new(4, 4, 3, 16, cb.id(), indices).unwrap();
            let remapped = remap_indices(&idx, &perm, &sorted).unwrap();
            prop_assert_eq!(decode(&remapped, &sorted).unwrap(), decode(&idx, &cb).unwrap());
        }

        #[test]
        fn sort_order_ignores_input_order(seed in any::<u64>(), rot in 1usize..15) {
            let cb = random_codebook(seed, 16, 2, 2);
            let mut rows: Vec<Vec<f32>> = cb.codewords().map(<[f32]>::to_vec).collect();
            rows.rotate_left(rot);
            let shuffled = Codebook::from_rows(2, 2, &rows).unwrap();
            let (a, _) = sort_codebook(&cb).unwrap();
            let (b, _) = sort_codebook(&shuffled).unwrap();
            prop_assert_eq!(a.as_flat(), b.as_flat());

            let sa = first_pc_scores(&center_components(&cb)).unwrap();
            let sb = first_pc_scores(&center_components(&shuffled)).unwrap();
            for (i, s) in sa.iter().enumerate() {
                let j = (i + 16 - rot) % 16;
                prop_assert!((s - sb[j]).abs() < 1e-9);
            }
        }
    }
}
