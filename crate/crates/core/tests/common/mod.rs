#![allow(dead_code)]

use dds::evalrank::{GroundTruth, GroundTruthKind, ModelSet};
use dds::{FeatureMap, FeatureMatrix, Features};
use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

pub fn gaussian4(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_fn(dims, |_| StandardNormal.sample(rng))
}

pub fn matrix(data: Array2<f64>) -> Features {
    FeatureMatrix::with_default_ids(data).unwrap().into()
}

pub fn map(data: Array4<f64>) -> Features {
    FeatureMap::with_default_ids(data).unwrap().into()
}

pub fn random_matrix(seed: u64, n: usize, d: usize) -> Features {
    matrix(gaussian(&mut rng(seed), n, d))
}

/// Noise angles (degrees) of the planted zoo; uneven so no two pairs tie.
pub const PLANTED_ANGLES: [f64; 6] = [8.0, 21.0, 33.0, 48.0, 63.0, 79.0];

pub fn planted_eps() -> Vec<f64> {
    PLANTED_ANGLES.iter().map(|a: &f64| a.to_radians().tan()).collect()
}

/// Base features `x` and models `y_k = x + ε_k · noise` with one shared
/// noise direction.
pub fn planted_zoo(seed: u64, n: usize, d: usize) -> (Features, ModelSet) {
    let mut r = rng(seed);
    let x = gaussian(&mut r, n, d);
    let noise = gaussian(&mut r, n, d);
    let entries = planted_eps()
        .iter()
        .enumerate()
        .map(|(k, eps)| (format!("m{k}"), matrix(&x + &(&noise * *eps))))
        .collect();
    (matrix(x), ModelSet::new(entries).unwrap())
}

/// Same construction with `n × c × h × w` maps.
pub fn planted_map_zoo(seed: u64, dims: (usize, usize, usize, usize)) -> (Features, ModelSet) {
    let mut r = rng(seed);
    let x = gaussian4(&mut r, dims);
    let noise = gaussian4(&mut r, dims);
    let entries = planted_eps()
        .iter()
        .enumerate()
        .map(|(k, eps)| (format!("m{k}"), map(&x + &(&noise * *eps))))
        .collect();
    (map(x), ModelSet::new(entries).unwrap())
}

/// Groundtruth where transfer between two planted models is better the
/// closer their noise angles are.
pub fn planted_groundtruth() -> GroundTruth {
    let ids: Vec<String> = (0..6).map(|k| format!("m{k}")).collect();
    let data = Array2::from_shape_fn((6, 6), |(i, j)| -(PLANTED_ANGLES[i] - PLANTED_ANGLES[j]).abs());
    GroundTruth::new(GroundTruthKind::Winrate, data, ids.clone(), ids).unwrap()
}

/// Spearman via explicit rank counting: rank = #smaller + (#equal + 1) / 2.
pub fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Textbook RSA: center columns, build 1 − r RDMs with the one-pass
/// correlation formula, Spearman over the upper triangles.
pub fn rsa_oracle(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let rdm_upper = |m: &Array2<f64>| -> Vec<f64> {
        let n = m.nrows();
        let mut c = m.clone();
        for mut col in c.columns_mut() {
            let mean = col.sum() / n as f64;
            col.mapv_inplace(|v| v - mean);
        }
        let d = c.ncols() as f64;
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (c.row(i), c.row(j));
                let (sa, sb) = (a.sum(), b.sum());
                let sab = a.dot(&b);
                let saa = a.dot(&a);
                let sbb = b.dot(&b);
                let r = (d * sab - sa * sb) / ((d * saa - sa * sa).sqrt() * (d * sbb - sb * sb).sqrt());
                out.push(1.0 - r);
            }
        }
        out
    };
    spearman_oracle(&rdm_upper(x), &rdm_upper(y))
}

/// Orthogonal `d × d` matrix from Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(seed: u64, d: usize) -> Array2<f64> {
    let a = gaussian(&mut rng(seed), d, d);
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v = a.column(j).to_owned();
        for k in 0..j {
            let qk = q.column(k).to_owned();
            let proj = qk.dot(&v);
            v = &v - &(&qk * proj);
        }
        let norm = v.dot(&v).sqrt();
        q.column_mut(j).assign(&(&v / norm));
    }
    q
}

/// Planted zoo where every model also gets its own per-dimension scale and
/// offset: high-magnitude, low-information dimensions that z-scoring removes.
pub fn scaled_planted_zoo(seed: u64, n: usize, d: usize) -> ModelSet {
    use rand::Rng;
    let mut r = rng(seed);
    let x = gaussian(&mut r, n, d);
    let noise = gaussian(&mut r, n, d);
    let entries = planted_eps()
        .iter()
        .enumerate()
        .map(|(k, eps)| {
            let scale = ndarray::Array1::from_shape_fn(d, |_| 10f64.powf(r.gen_range(-1.5..1.5)));
            let offset = ndarray::Array1::from_shape_fn(d, |_| r.gen_range(-20.0..20.0));
            let y = (&x + &(&noise * *eps)) * &scale + &offset;
            (format!("m{k}"), matrix(y))
        })
        .collect();
    ModelSet::new(entries).unwrap()
}
