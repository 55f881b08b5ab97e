#![allow(dead_code)]

use crg_distill::crg::build_adjacency;
use crg_distill::spectral::spectral_embedding;
use crg_distill::{EigenSelection, FeatureMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_map(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> FeatureMap<f64> {
    let n = shape.0 * shape.1 * shape.2;
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    FeatureMap::from_vec(shape, v).unwrap()
}

/// Smallest eigen-gap around the selected block and smallest distance
/// between the two largest magnitudes of any selected eigenvector.
pub fn spectral_margins(map: &FeatureMap<f64>, n: usize) -> (f64, f64) {
    let a = build_adjacency(map).into_adjacency();
    let Ok((pair, emb)) = spectral_embedding(a.view(), n, EigenSelection::Largest) else {
        return (0.0, 0.0);
    };
    if pair.degree.iter().any(|d| *d < 1e-3) {
        return (0.0, 0.0);
    }
    let mut tie = f64::INFINITY;
    for col in emb.embedding.columns() {
        let mut mags: Vec<f64> = col.iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if mags.len() > 1 {
            tie = tie.min(mags[0] - mags[1]);
        }
    }
    (emb.min_gap, tie)
}

/// Random instance with `C <= 8`, `H, W <= 4`, resampled until the student's
/// spectrum is well separated and sign pivots are unambiguous.
pub fn well_conditioned_pair(rng: &mut ChaCha8Rng, max_c: usize, max_hw: usize) -> (FeatureMap<f64>, FeatureMap<f64>) {
    loop {
        let c = rng.random_range(2..=max_c);
        let h = rng.random_range(1..=max_hw);
        let w = rng.random_range(1..=max_hw);
        let teacher = normal_map(rng, (c, h, w));
        let student = normal_map(rng, (c, h, w));
        let n = (c / 2).max(1);
        let (sg, st) = spectral_margins(&student, n);
        let (tg, tt) = spectral_margins(&teacher, n);
        if sg > 1e-3 && st > 1e-3 && tg > 1e-3 && tt > 1e-3 {
            return (teacher, student);
        }
    }
}

/// Like [`well_conditioned_pair`] with a fixed shape.
pub fn well_conditioned_pair_of(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize, usize),
) -> (FeatureMap<f64>, FeatureMap<f64>) {
    let n = (shape.0 / 2).max(1);
    loop {
        let teacher = normal_map(rng, shape);
        let student = normal_map(rng, shape);
        let (sg, st) = spectral_margins(&student, n);
        let (tg, tt) = spectral_margins(&teacher, n);
        if sg > 1e-3 && st > 1e-3 && tg > 1e-3 && tt > 1e-3 {
            return (teacher, student);
        }
    }
}

/// Output channel `i` is input channel `perm[i]`.
pub fn permute_channels(map: &FeatureMap<f64>, perm: &[usize]) -> FeatureMap<f64> {
    let (c, h, w) = map.shape();
    let src = map.as_slice();
    let mut out = Vec::with_capacity(c * h * w);
    for &p in perm {
        out.extend_from_slice(&src[p * h * w..(p + 1) * h * w]);
    }
    FeatureMap::from_vec((c, h, w), out).unwrap()
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
