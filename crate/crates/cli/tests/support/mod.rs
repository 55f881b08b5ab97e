#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crg_distill::crg::build_adjacency;
use crg_distill::spectral::spectral_embedding;
use crg_distill::tensor_io::{save_feature_maps, save_matrix};
use crg_distill::{EigenSelection, FeatureMap, FeatureMapBatch, Precision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crg-distill"))
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("bad json ({e}): {}", self.stdout))
    }
}

pub fn run<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let Output { status, stdout, stderr } = bin().args(args).output().expect("spawn crg-distill");
    Run {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_map(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> FeatureMap<f64> {
    let n = shape.0 * shape.1 * shape.2;
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    FeatureMap::from_vec(shape, v).unwrap()
}

pub fn map(shape: (usize, usize, usize), values: &[f64]) -> FeatureMap<f64> {
    FeatureMap::from_f64_slice(shape, values).unwrap()
}

pub fn write_map(dir: &Path, name: &str, map: &FeatureMap<f64>) -> PathBuf {
    write_batch(dir, name, vec![map.clone()])
}

pub fn write_batch(dir: &Path, name: &str, maps: Vec<FeatureMap<f64>>) -> PathBuf {
    let path = dir.join(name);
    save_feature_maps(&FeatureMapBatch::new(maps).unwrap(), &path).unwrap();
    path
}

pub fn write_matrix(dir: &Path, name: &str, m: &ndarray::Array2<f64>) -> PathBuf {
    let path = dir.join(name);
    save_matrix(m, &path, Precision::F64).unwrap();
    path
}

fn margins(map: &FeatureMap<f64>, n: usize) -> (f64, f64) {
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

pub fn well_conditioned(map: &FeatureMap<f64>) -> bool {
    let (gap, tie) = margins(map, (map.channels() / 2).max(1));
    gap > 1e-3 && tie > 1e-3
}

/// Random pair with separated spectra and unambiguous sign pivots.
pub fn well_conditioned_pair(rng: &mut ChaCha8Rng, max_c: usize, max_hw: usize) -> (FeatureMap<f64>, FeatureMap<f64>) {
    loop {
        let c = rng.random_range(2..=max_c);
        let h = rng.random_range(1..=max_hw);
        let w = rng.random_range(1..=max_hw);
        let t = normal_map(rng, (c, h, w));
        let s = normal_map(rng, (c, h, w));
        if well_conditioned(&t) && well_conditioned(&s) {
            return (t, s);
        }
    }
}

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

pub fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

pub fn well_conditioned_map(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> FeatureMap<f64> {
    loop {
        let m = normal_map(rng, shape);
        if well_conditioned(&m) {
            return m;
        }
    }
}
