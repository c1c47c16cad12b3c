use nalgebra::DMatrix;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::cca::{to_array, to_dmatrix};
use crate::error::{Result, SpireError};

pub const DEFAULT_FOLDS: usize = 5;
/// Ridge strength as a fraction of `trace(ZᵀZ) / d`.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FveResult {
    pub value: f64,
    /// Targets have (numerically) zero variance; `value` is NaN.
    pub undefined: bool,
}

/// Ridge fit with intercept; `lambda = None` picks the default relative
/// strength. Returns `(coef (d, C), intercept (C))`.
fn ridge_fit(z: ArrayView2<f64>, y: ArrayView2<f64>, lambda: Option<f64>) -> (Array2<f64>, ndarray::Array1<f64>) {
    let zm = z.mean_axis(Axis(0)).expect("non-empty");
    let ym = y.mean_axis(Axis(0)).expect("non-empty");
    let zc = to_dmatrix((&z - &zm).view());
    let yc = to_dmatrix((&y - &ym).view());
    let d = z.ncols();
    let gram = zc.transpose() * &zc;
    let lam = lambda.unwrap_or(DEFAULT_RIDGE_SCALE * gram.trace() / d as f64).max(1e-12);
    let a = gram + DMatrix::identity(d, d) * lam;
    let rhs = zc.transpose() * yc;
    let coef = a
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| a.pseudo_inverse(1e-12).expect("pseudo-inverse") * rhs);
    let coef = to_array(&coef);
    let intercept = &ym - &zm.dot(&coef);
    (coef, intercept)
}

/// Cross-validated fraction of variance explained by ridge regression from
/// `z` `(N, d)` to `y` `(N, C)`: contiguous folds, held-out residuals pooled,
/// total sum of squares about the global mean.
pub fn fve(z: ArrayView2<f64>, y: ArrayView2<f64>, lambda: Option<f64>, n_folds: usize) -> Result<FveResult> {
    let n = z.nrows();
    if y.nrows() != n {
        return Err(SpireError::shape(format!("FVE inputs have {n} and {} rows", y.nrows())));
    }
    if n_folds < 2 {
        return Err(SpireError::Argument("need at least 2 folds".into()));
    }
    if n < 2 * n_folds {
        return Err(SpireError::Argument(format!("need at least {} samples for {n_folds} folds", 2 * n_folds)));
    }
    let ym = y.mean_axis(Axis(0)).expect("non-empty");
    let sst: f64 = (&y - &ym).iter().map(|v| v * v).sum();
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if sst <= 1e-12 * scale || sst == 0.0 {
        return Ok(FveResult {
            value: f64::NAN,
            undefined: true,
        });
    }
    let mut sse = 0.0;
    for f in 0..n_folds {
        let lo = f * n / n_folds;
        let hi = (f + 1) * n / n_folds;
        let z_tr = concatenate(Axis(0), &[z.slice(s![..lo, ..]), z.slice(s![hi.., ..])]).expect("same width");
        let y_tr = concatenate(Axis(0), &[y.slice(s![..lo, ..]), y.slice(s![hi.., ..])]).expect("same width");
        let (coef, b) = ridge_fit(z_tr.view(), y_tr.view(), lambda);
        let pred = z.slice(s![lo..hi, ..]).dot(&coef) + &b;
        sse += (&pred - &y.slice(s![lo..hi, ..])).iter().map(|v| v * v).sum::<f64>();
    }
    Ok(FveResult {
        value: 1.0 - sse / sst,
        undefined: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePartition {
    pub fve_s: f64,
    pub fve_p: f64,
    pub fve_sp: f64,
    pub unique_shared: f64,
    pub unique_private: f64,
    pub redundant: f64,
}

impl VariancePartition {
    /// Applies the clipped partition formulas to an FVE triple.
    pub fn from_fves(fve_s: f64, fve_p: f64, fve_sp: f64) -> Self {
        VariancePartition {
            fve_s,
            fve_p,
            fve_sp,
            unique_shared: (fve_sp - fve_p).max(0.0),
            unique_private: (fve_sp - fve_s).max(0.0),
            redundant: (fve_s + fve_p - fve_sp).max(0.0),
        }
    }
}

pub fn variance_partition(
    z_sh: ArrayView2<f64>,
    z_pr: ArrayView2<f64>,
    y: ArrayView2<f64>,
    lambda: Option<f64>,
    n_folds: usize,
) -> Result<VariancePartition> {
    let both = concatenate(Axis(1), &[z_sh, z_pr]).map_err(|e| SpireError::shape(e.to_string()))?;
    let get = |z: ArrayView2<f64>| -> Result<f64> {
        let r = fve(z, y, lambda, n_folds)?;
        if r.undefined {
            Err(SpireError::Argument("targets have zero variance; FVE undefined".into()))
        } else {
            Ok(r.value)
        }
    };
    Ok(VariancePartition::from_fves(get(z_sh)?, get(z_pr)?, get(both.view())?))
}

pub const TAU_REDUNDANT: f64 = 0.20;
pub const TAU_UNIQUE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub d_shared: usize,
    pub d_private: usize,
    pub partitions: Vec<VariancePartition>,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    /// No candidate passed both filters; the least redundant one was taken.
    pub relaxed: bool,
}

fn max_redundant(c: &ModelCandidate) -> f64 {
    c.partitions.iter().map(|p| p.redundant).fold(f64::NEG_INFINITY, f64::max)
}

/// Keeps candidates with `max_r Redundant ≤ 0.20` and both unique parts
/// above 0.01 in every region, then takes the lowest validation loss, ties
/// to the lexicographically smaller `(d_s, d_p)`.
pub fn select_model(candidates: &[ModelCandidate]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(SpireError::Argument("no candidates to select from".into()));
    }
    let passes = |c: &ModelCandidate| {
        max_redundant(c) <= TAU_REDUNDANT
            && c.partitions
                .iter()
                .all(|p| p.unique_shared >= TAU_UNIQUE && p.unique_private >= TAU_UNIQUE)
    };
    let key = |i: &usize| {
        let c = &candidates[*i];
        (c.d_shared, c.d_private, *i)
    };
    let survivors: Vec<usize> = (0..candidates.len()).filter(|&i| passes(&candidates[i])).collect();
    if !survivors.is_empty() {
        let best = survivors
            .into_iter()
            .min_by(|a, b| {
                candidates[*a]
                    .val_loss
                    .total_cmp(&candidates[*b].val_loss)
                    .then_with(|| key(a).cmp(&key(b)))
            })
            .expect("non-empty");
        return Ok(Selection {
            index: best,
            relaxed: false,
        });
    }
    let best = (0..candidates.len())
        .min_by(|a, b| {
            max_redundant(&candidates[*a])
                .total_cmp(&max_redundant(&candidates[*b]))
                .then_with(|| key(a).cmp(&key(b)))
        })
        .expect("non-empty");
    Ok(Selection {
        index: best,
        relaxed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = substream(seed, "fve", 0);
        Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
    }

    #[test]
    fn perfect_linear_map() {
        let z = gaussian(400, 3, 0);
        let y = z.dot(&gaussian(3, 5, 1));
        let r = fve(z.view(), y.view(), Some(1e-9), 5).unwrap();
        assert!((r.value - 1.0).abs() < 1e-3);
    }

    #[test]
    fn independent_predictor_explains_nothing() {
        let z = gaussian(5000, 3, 2);
        let y = gaussian(5000, 4, 3);
        let r = fve(z.view(), y.view(), None, 5).unwrap();
        assert!(r.value.abs() < 0.02, "{}", r.value);
    }

    #[test]
    fn constant_target_is_undefined() {
        let z = gaussian(100, 2, 4);
        let y = Array2::from_elem((100, 2), 3.0);
        let r = fve(z.view(), y.view(), None, 5).unwrap();
        assert!(r.undefined && r.value.is_nan());
        assert!(variance_partition(z.view(), z.view(), y.view(), None, 5).is_err());
    }

    #[test]
    fn partition_identities_on_adversarial_triples() {
        for &(s, p, sp) in &[(0.2, 0.1, 0.9), (0.5, 0.5, 0.3), (0.6, 0.1, 0.1), (-0.2, 0.4, 0.3), (0.0, 0.0, 0.0)] {
            let v = VariancePartition::from_fves(s, p, sp);
            assert_eq!(v.unique_shared, (sp - p).max(0.0));
            assert_eq!(v.unique_private, (sp - s).max(0.0));
            assert_eq!(v.redundant, (s + p - sp).max(0.0));
        }
        assert_eq!(VariancePartition::from_fves(0.3, 0.7, 0.7).unique_shared, 0.0);
    }

    fn candidate(ds: usize, dp: usize, red: f64, uni: f64, loss: f64) -> ModelCandidate {
        let p = VariancePartition {
            fve_s: 0.5,
            fve_p: 0.5,
            fve_sp: 0.8,
            unique_shared: uni,
            unique_private: uni,
            redundant: red,
        };
        ModelCandidate {
            d_shared: ds,
            d_private: dp,
            partitions: vec![p, p],
            val_loss: loss,
        }
    }

    #[test]
    fn selection_rules() {
        let one = [candidate(3, 3, 0.1, 0.2, 1.0)];
        assert_eq!(select_model(&one).unwrap(), Selection { index: 0, relaxed: false });
        let tie = [candidate(4, 2, 0.1, 0.2, 0.5), candidate(3, 2, 0.1, 0.2, 0.5)];
        assert_eq!(select_model(&tie).unwrap().index, 1);
        let mut bad = candidate(2, 2, 0.1, 0.2, 0.1);
        bad.partitions[1].redundant = 0.25;
        let set = [bad, candidate(3, 3, 0.1, 0.2, 0.9)];
        assert_eq!(select_model(&set).unwrap().index, 1);
        let none = [candidate(2, 2, 0.5, 0.2, 0.1), candidate(3, 3, 0.3, 0.0, 0.9)];
        assert_eq!(select_model(&none).unwrap(), Selection { index: 1, relaxed: true });
        assert!(select_model(&[]).is_err());
    }
}
