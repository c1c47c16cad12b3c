use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};
use crate::rng::substream;

/// Points used for the median heuristic; larger samples are strided down.
const MEDIAN_SAMPLE_CAP: usize = 1000;

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance of the pooled rows.
pub fn median_bandwidth(pooled: ArrayView2<f64>) -> f64 {
    let n = pooled.nrows();
    let stride = n.div_ceil(MEDIAN_SAMPLE_CAP).max(1);
    let rows: Vec<usize> = (0..n).step_by(stride).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for (i, &a) in rows.iter().enumerate() {
        for &b in &rows[i + 1..] {
            d.push(sq_dist(pooled.row(a), pooled.row(b)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn kernel_sum(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64, skip_diagonal: bool) -> f64 {
    let mut s = 0.0;
    for (i, x) in a.rows().into_iter().enumerate() {
        for (j, y) in b.rows().into_iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            s += (-gamma * sq_dist(x, y)).exp();
        }
    }
    s
}

/// `true` when `x` should be treated as the first argument. Makes the
/// statistic exactly symmetric.
fn canonical_first(x: ArrayView2<f64>, y: ArrayView2<f64>) -> bool {
    if x.nrows() != y.nrows() {
        return x.nrows() < y.nrows();
    }
    for (a, b) in x.iter().zip(y.iter()) {
        match a.total_cmp(b) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    true
}

/// Unbiased MMD² with Gaussian kernel `exp(-‖x-y‖² / 2σ²)`; `bandwidth =
/// None` uses the median heuristic on the pooled sample.
pub fn mmd_unbiased(x: ArrayView2<f64>, y: ArrayView2<f64>, bandwidth: Option<f64>) -> Result<f64> {
    let (m, n) = (x.nrows(), y.nrows());
    if m < 2 || n < 2 {
        return Err(SpireError::Argument(format!("MMD needs at least 2 samples per set, got {m} and {n}")));
    }
    if x.ncols() != y.ncols() {
        return Err(SpireError::shape("MMD inputs differ in dimension"));
    }
    let (x, y) = if canonical_first(x, y) { (x, y) } else { (y, x) };
    let (m, n) = (x.nrows(), y.nrows());
    let sigma = match bandwidth {
        Some(s) if s > 0.0 => s,
        Some(_) => return Err(SpireError::Argument("bandwidth must be positive".into())),
        None => median_bandwidth(concatenate(Axis(0), &[x, y]).expect("same width").view()),
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let kxx = kernel_sum(x, x, gamma, true) / (m * (m - 1)) as f64;
    let kyy = kernel_sum(y, y, gamma, true) / (n * (n - 1)) as f64;
    let kxy = kernel_sum(x, y, gamma, false) / (m * n) as f64;
    Ok(kxx + kyy - 2.0 * kxy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdTest {
    pub statistic: f64,
    pub bandwidth: f64,
    pub null: Vec<f64>,
    pub p_value: f64,
}

impl MmdTest {
    pub fn null_mean(&self) -> f64 {
        self.null.iter().sum::<f64>() / self.null.len() as f64
    }

    pub fn null_sd(&self) -> f64 {
        let m = self.null_mean();
        (self.null.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (self.null.len() - 1).max(1) as f64).sqrt()
    }

    pub fn null_quantile(&self, q: f64) -> f64 {
        let mut s = self.null.clone();
        s.sort_by(f64::total_cmp);
        let idx = ((s.len() - 1) as f64 * q).round() as usize;
        s[idx]
    }
}

/// MMD with a permutation null: pooled rows are shuffled and re-split
/// `n_perm` times, the bandwidth held at the value for the observed split.
pub fn mmd_permutation_test(x: ArrayView2<f64>, y: ArrayView2<f64>, n_perm: usize, seed: u64) -> Result<MmdTest> {
    let pooled = concatenate(Axis(0), &[x, y]).map_err(|e| SpireError::shape(e.to_string()))?;
    let sigma = median_bandwidth(pooled.view());
    let statistic = mmd_unbiased(x, y, Some(sigma))?;
    let m = x.nrows();
    let mut rng = substream(seed, "mmd-perm", 0);
    let mut idx: Vec<usize> = (0..pooled.nrows()).collect();
    let mut null = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        idx.shuffle(&mut rng);
        let a: Array2<f64> = pooled.select(Axis(0), &idx[..m]);
        let b: Array2<f64> = pooled.select(Axis(0), &idx[m..]);
        null.push(mmd_unbiased(a.view(), b.view(), Some(sigma))?);
    }
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    Ok(MmdTest {
        statistic,
        bandwidth: sigma,
        p_value: (exceed + 1) as f64 / (n_perm + 1) as f64,
        null,
    })
}
