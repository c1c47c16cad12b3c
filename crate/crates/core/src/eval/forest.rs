//! Random-forest classifier (bootstrap + √d feature subsampling, Gini
//! splits, fully grown trees) and the timepoint decoding protocol.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};
use crate::rng::{substream, SpireRng};

pub const MAX_PER_CLASS: usize = 50_000;

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_classes: usize,
    max_features: usize,
}

impl Builder<'_> {
    /// Best (impurity decrease, threshold) for one feature.
    fn best_split(&self, idx: &[usize], feature: usize, parent: &[usize]) -> Option<(f64, f64)> {
        let mut vals: Vec<(f64, usize)> = idx.iter().map(|&i| (self.x[[i, feature]], self.y[i])).collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = vals.len();
        let mut left = vec![0usize; self.n_classes];
        let mut right = parent.to_vec();
        let parent_imp = gini(parent, n);
        let mut best: Option<(f64, f64)> = None;
        for k in 0..n - 1 {
            left[vals[k].1] += 1;
            right[vals[k].1] -= 1;
            if vals[k].0 == vals[k + 1].0 {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            let imp = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            let gain = parent_imp - imp;
            if best.is_none_or(|(g, _)| gain > g) {
                let mut thr = 0.5 * (vals[k].0 + vals[k + 1].0);
                if thr == vals[k + 1].0 {
                    thr = vals[k].0;
                }
                best = Some((gain, thr));
            }
        }
        best
    }

    fn build(&self, sample_idx: Vec<usize>, rng: &mut SpireRng) -> Tree {
        let mut nodes = Vec::new();
        let mut stack = vec![(sample_idx, usize::MAX, false)];
        let d = self.x.ncols();
        while let Some((idx, parent, is_right)) = stack.pop() {
            let mut counts = vec![0usize; self.n_classes];
            for &i in &idx {
                counts[self.y[i]] += 1;
            }
            let me = nodes.len();
            if parent != usize::MAX {
                if let Node::Split { left, right, .. } = &mut nodes[parent] {
                    if is_right {
                        *right = me;
                    } else {
                        *left = me;
                    }
                }
            }
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let mut split = None;
            if !pure && idx.len() >= 2 {
                let mut features: Vec<usize> = (0..d).collect();
                features.shuffle(rng);
                let mut best: Option<(f64, usize, f64)> = None;
                for (tried, &f) in features.iter().enumerate() {
                    if tried >= self.max_features && best.is_some() {
                        break;
                    }
                    if let Some((gain, thr)) = self.best_split(&idx, f, &counts) {
                        if best.is_none_or(|(g, _, _)| gain > g) {
                            best = Some((gain, f, thr));
                        }
                    }
                }
                split = best;
            }
            match split {
                Some((_, feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[[i, feature]] <= threshold);
                    nodes.push(Node::Split {
                        feature,
                        threshold,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                    stack.push((r, me, true));
                    stack.push((l, me, false));
                }
                None => {
                    let total = idx.len().max(1) as f64;
                    nodes.push(Node::Leaf(counts.iter().map(|&c| c as f64 / total).collect()));
                }
            }
        }
        Tree { nodes }
    }
}

impl Tree {
    fn proba(&self, row: ndarray::ArrayView1<f64>) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(p) => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_classes: usize,
}

impl RandomForest {
    pub fn fit(x: ArrayView2<f64>, y: &[usize], n_classes: usize, n_trees: usize, seed: u64) -> Result<Self> {
        if x.nrows() != y.len() || y.is_empty() {
            return Err(SpireError::shape("forest inputs disagree in length or are empty"));
        }
        if y.iter().any(|&c| c >= n_classes) {
            return Err(SpireError::Argument("class index out of range".into()));
        }
        let max_features = ((x.ncols() as f64).sqrt().floor() as usize).max(1);
        let b = Builder {
            x,
            y,
            n_classes,
            max_features,
        };
        let n = y.len();
        let trees = (0..n_trees)
            .map(|t| {
                let mut rng = substream(seed, "forest-tree", t as u64);
                let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                b.build(boot, &mut rng)
            })
            .collect();
        Ok(RandomForest { trees, n_classes })
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        x.rows()
            .into_iter()
            .map(|row| {
                let mut acc = vec![0.0; self.n_classes];
                for t in &self.trees {
                    for (a, p) in acc.iter_mut().zip(t.proba(row)) {
                        *a += p;
                    }
                }
                acc.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub accuracy: f64,
    /// Fraction of the most frequent class in the test split.
    pub majority_baseline: f64,
    pub classes: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Timepoint-level decoding: per-class cap, shuffled `train_fraction`
/// split, standardisation fitted on the train split, random forest.
pub fn decode_labels(
    x: ArrayView2<f64>,
    labels: &[String],
    train_fraction: f64,
    n_trees: usize,
    seed: u64,
) -> Result<DecodeResult> {
    if x.nrows() != labels.len() {
        return Err(SpireError::shape("decoding inputs disagree in length"));
    }
    let mut class_rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        class_rows.entry(l.as_str()).or_default().push(i);
    }
    if class_rows.len() < 2 {
        return Err(SpireError::Argument("decoding needs at least two classes".into()));
    }
    let classes: Vec<String> = class_rows.keys().map(|s| s.to_string()).collect();
    let mut rng = substream(seed, "decode", 0);
    let mut rows = Vec::new();
    for r in class_rows.values() {
        if r.len() > MAX_PER_CLASS {
            let mut picked: Vec<usize> = sample(&mut rng, r.len(), MAX_PER_CLASS).into_iter().map(|k| r[k]).collect();
            picked.sort_unstable();
            rows.extend(picked);
        } else {
            rows.extend_from_slice(r);
        }
    }
    rows.shuffle(&mut rng);
    let n_train = ((rows.len() as f64) * train_fraction).round() as usize;
    if n_train == 0 || n_train >= rows.len() {
        return Err(SpireError::Argument("split leaves an empty partition".into()));
    }
    let class_of = |i: usize| classes.iter().position(|c| *c == labels[i]).expect("known class");
    let (tr, te) = rows.split_at(n_train);
    let x_tr: Array2<f64> = x.select(Axis(0), tr);
    let x_te: Array2<f64> = x.select(Axis(0), te);
    let mean = x_tr.mean_axis(Axis(0)).expect("non-empty");
    let sd = x_tr.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    let x_tr = (&x_tr - &mean) / &sd;
    let x_te = (&x_te - &mean) / &sd;
    let y_tr: Vec<usize> = tr.iter().map(|&i| class_of(i)).collect();
    let y_te: Vec<usize> = te.iter().map(|&i| class_of(i)).collect();
    let forest = RandomForest::fit(x_tr.view(), &y_tr, classes.len(), n_trees, seed)?;
    let pred = forest.predict(x_te.view());
    let correct = pred.iter().zip(&y_te).filter(|(a, b)| a == b).count();
    let mut counts = vec![0usize; classes.len()];
    for &c in &y_te {
        counts[c] += 1;
    }
    Ok(DecodeResult {
        accuracy: correct as f64 / y_te.len() as f64,
        majority_baseline: *counts.iter().max().expect("classes") as f64 / y_te.len() as f64,
        classes,
        n_train: tr.len(),
        n_test: te.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn data(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = substream(seed, "forest-data", 0);
        Array2::from_shape_simple_fn((n, 3), || rng.sample(StandardNormal))
    }

    #[test]
    fn threshold_labels_are_decoded() {
        let x = data(2000, 0);
        let labels: Vec<String> = x.column(1).iter().map(|&v| if v > 0.2 { "a" } else { "b" }.to_string()).collect();
        let r = decode_labels(x.view(), &labels, 0.8, 30, 1).unwrap();
        assert!(r.accuracy > 0.95, "{}", r.accuracy);
    }

    #[test]
    fn permuted_labels_sit_at_chance() {
        let x = data(3000, 2);
        let mut rng = substream(3, "perm", 0);
        let labels: Vec<String> = (0..3000).map(|_| if rng.random::<bool>() { "a" } else { "b" }.to_string()).collect();
        let r = decode_labels(x.view(), &labels, 0.8, 50, 4).unwrap();
        assert!((r.accuracy - 0.5).abs() < 0.05, "{}", r.accuracy);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = data(10, 5);
        let labels = vec!["a".to_string(); 10];
        assert!(decode_labels(x.view(), &labels, 0.8, 5, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let x = data(500, 6);
        let labels: Vec<String> = x.column(0).iter().map(|&v| if v > 0.0 { "a" } else { "b" }.to_string()).collect();
        let a = decode_labels(x.view(), &labels, 0.8, 10, 9).unwrap();
        let b = decode_labels(x.view(), &labels, 0.8, 10, 9).unwrap();
        assert_eq!(a, b);
    }
}
