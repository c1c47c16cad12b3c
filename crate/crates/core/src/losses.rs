//! Training objective: the nine loss terms, their gradients, and the
//! weighted total.
//!
//! Reconstruction-type terms are per-element means so that schedule
//! weights transfer across batch sizes and sequence lengths. Covariances
//! use the unbiased `AᵀB / (N - 1)` convention on mean-centred columns.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};
use crate::model::{backward, ForwardOutputs, OutputGrads, SpireParams};

const STD_FLOOR: f64 = 1e-8;
const VICREG_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Rec,
    Cross,
    #[serde(rename = "self")]
    SelfRecon,
    Align,
    Orth,
    #[serde(rename = "mapid")]
    MapId,
    AlignReg,
    #[serde(rename = "var_sh")]
    VarShared,
    #[serde(rename = "var_pr")]
    VarPrivate,
}

impl LossTerm {
    pub const ALL: [LossTerm; 9] = [
        LossTerm::Rec,
        LossTerm::Cross,
        LossTerm::SelfRecon,
        LossTerm::Align,
        LossTerm::Orth,
        LossTerm::MapId,
        LossTerm::AlignReg,
        LossTerm::VarShared,
        LossTerm::VarPrivate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Rec => "rec",
            LossTerm::Cross => "cross",
            LossTerm::SelfRecon => "self",
            LossTerm::Align => "align",
            LossTerm::Orth => "orth",
            LossTerm::MapId => "mapid",
            LossTerm::AlignReg => "align_reg",
            LossTerm::VarShared => "var_sh",
            LossTerm::VarPrivate => "var_pr",
        }
    }

    pub fn from_name(name: &str) -> Option<LossTerm> {
        LossTerm::ALL.into_iter().find(|t| t.name() == name)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coefficients inside the alignment term. The defaults `(25, 25, 1)` are
/// normalised by their sum so `lambda_align` sets the overall magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VicregCoefficients {
    pub invariance: f64,
    pub variance: f64,
    pub covariance: f64,
}

impl Default for VicregCoefficients {
    fn default() -> Self {
        VicregCoefficients {
            invariance: 25.0 / 51.0,
            variance: 25.0 / 51.0,
            covariance: 1.0 / 51.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub cross: f64,
    #[serde(rename = "self")]
    pub self_recon: f64,
    pub align: f64,
    pub orth: f64,
    pub mapid: f64,
    pub align_reg: f64,
    pub var_sh: f64,
    pub var_pr: f64,
    /// Floor target for private standard deviations.
    pub tau: f64,
    #[serde(default)]
    pub vicreg: VicregCoefficients,
}

impl LossWeights {
    /// Reconstruction only.
    pub fn reconstruction_only() -> Self {
        LossWeights {
            rec: 1.0,
            cross: 0.0,
            self_recon: 0.0,
            align: 0.0,
            orth: 0.0,
            mapid: 0.0,
            align_reg: 0.0,
            var_sh: 0.0,
            var_pr: 0.0,
            tau: 0.1,
            vicreg: VicregCoefficients::default(),
        }
    }

    pub fn lambda(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Rec => self.rec,
            LossTerm::Cross => self.cross,
            LossTerm::SelfRecon => self.self_recon,
            LossTerm::Align => self.align,
            LossTerm::Orth => self.orth,
            LossTerm::MapId => self.mapid,
            LossTerm::AlignReg => self.align_reg,
            LossTerm::VarShared => self.var_sh,
            LossTerm::VarPrivate => self.var_pr,
        }
    }

    pub fn set_lambda(&mut self, term: LossTerm, value: f64) {
        let slot = match term {
            LossTerm::Rec => &mut self.rec,
            LossTerm::Cross => &mut self.cross,
            LossTerm::SelfRecon => &mut self.self_recon,
            LossTerm::Align => &mut self.align,
            LossTerm::Orth => &mut self.orth,
            LossTerm::MapId => &mut self.mapid,
            LossTerm::AlignReg => &mut self.align_reg,
            LossTerm::VarShared => &mut self.var_sh,
            LossTerm::VarPrivate => &mut self.var_pr,
        };
        *slot = value;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut w = *self;
        for t in LossTerm::ALL {
            w.set_lambda(t, self.lambda(t) * factor);
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let v = self.lambda(t);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SpireError::config(
                    format!("lambda_{}", t.name()),
                    "weights must be finite and non-negative",
                ));
            }
        }
        if !(self.tau > 0.0) {
            return Err(SpireError::config("tau", "private variance floor must be positive"));
        }
        Ok(())
    }
}

/// One value per term plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    terms: [f64; 9],
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, term: LossTerm) -> f64 {
        self.terms[term.index()]
    }

    pub fn set(&mut self, term: LossTerm, value: f64) {
        self.terms[term.index()] = value;
    }

    /// Weighted sum of the stored terms.
    pub fn weighted_total(&self, weights: &LossWeights) -> f64 {
        LossTerm::ALL
            .iter()
            .map(|&t| {
                let l = weights.lambda(t);
                if l == 0.0 {
                    0.0
                } else {
                    l * self.get(t)
                }
            })
            .sum()
    }

    pub fn with_total(mut self, weights: &LossWeights) -> Self {
        self.total = self.weighted_total(weights);
        self
    }

    /// First term that is not finite, if any.
    pub fn non_finite_term(&self) -> Option<LossTerm> {
        LossTerm::ALL.into_iter().find(|&t| !self.get(t).is_finite())
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m: BTreeMap<String, f64> = LossTerm::ALL
            .iter()
            .map(|&t| (t.name().to_string(), self.get(t)))
            .collect();
        m.insert("total".into(), self.total);
        m
    }

    pub fn from_map(m: &BTreeMap<String, f64>) -> Self {
        let mut b = LossBreakdown::default();
        for t in LossTerm::ALL {
            b.set(t, m.get(t.name()).copied().unwrap_or(0.0));
        }
        b.total = m.get("total").copied().unwrap_or(0.0);
        b
    }

    /// Element-wise mean of several breakdowns (totals included).
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let mut acc = LossBreakdown::default();
        if items.is_empty() {
            return acc;
        }
        let n = items.len() as f64;
        for b in items {
            for i in 0..9 {
                acc.terms[i] += b.terms[i] / n;
            }
            acc.total += b.total / n;
        }
        acc
    }
}

fn flat(a: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (t, b, d) = a.dim();
    a.view().into_shape_with_order((t * b, d)).expect("standard layout")
}

fn unflat(a: Array2<f64>, shape: (usize, usize, usize)) -> Array3<f64> {
    a.into_shape_with_order(shape).expect("standard layout")
}

fn centered(z: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    (&z - &mean, mean)
}

/// Unbiased per-column variance of an already-centred matrix.
fn column_var(zc: &Array2<f64>) -> Array1<f64> {
    let n = zc.nrows() as f64;
    zc.map_axis(Axis(0), |c| c.dot(&c) / (n - 1.0))
}

fn require_rows(z: ArrayView2<f64>, what: &str) -> Result<()> {
    if z.nrows() < 2 {
        return Err(SpireError::Argument(format!(
            "{what} needs at least two rows, got {}",
            z.nrows()
        )));
    }
    Ok(())
}

// ----- reconstruction ------------------------------------------------------

/// Mean squared error over all elements.
pub fn recon_loss(x: ArrayView3<f64>, x_hat: ArrayView3<f64>) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(SpireError::shape(format!(
            "reconstruction {:?} does not match target {:?}",
            x_hat.dim(),
            x.dim()
        )));
    }
    let n = x.len() as f64;
    let mut s = 0.0;
    Zip::from(&x).and(&x_hat).for_each(|&a, &b| s += (a - b) * (a - b));
    Ok(s / n)
}

/// Gradient of `scale * recon_loss` with respect to `x_hat`.
pub fn recon_grad(x: ArrayView3<f64>, x_hat: ArrayView3<f64>, scale: f64) -> Array3<f64> {
    let c = 2.0 * scale / x.len() as f64;
    Zip::from(&x_hat).and(&x).map_collect(|&h, &t| c * (h - t))
}

/// Sum over regions of the full-reconstruction error.
pub fn total_recon_loss(inputs: &[Array3<f64>], out: &ForwardOutputs) -> Result<f64> {
    out.regions
        .iter()
        .zip(inputs)
        .map(|(rf, x)| recon_loss(x.view(), rf.full.x_hat.view()))
        .sum()
}

/// `(L_cross, L_self)`: cross sums one term per ordered pair, self one per
/// region. Both decode with private latents zeroed.
pub fn cross_self_recon_loss(inputs: &[Array3<f64>], out: &ForwardOutputs) -> Result<(f64, f64)> {
    if out.pairs.is_empty() {
        return Err(SpireError::Argument("forward outputs carry no cross reconstructions".into()));
    }
    let mut cross = 0.0;
    for pf in &out.pairs {
        cross += recon_loss(inputs[pf.target].view(), pf.cross.x_hat.view())?;
    }
    let mut own = 0.0;
    for (rf, x) in out.regions.iter().zip(inputs) {
        own += recon_loss(x.view(), rf.self_only.x_hat.view())?;
    }
    Ok((cross, own))
}

// ----- alignment -----------------------------------------------------------

fn vicreg_parts(z: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let (zc, _) = centered(z);
    let n = zc.nrows() as f64;
    let std = column_var(&zc).mapv(|v| (v + VICREG_EPS).sqrt());
    let cov = zc.t().dot(&zc) / (n - 1.0);
    (zc, std, cov)
}

fn variance_hinge(std: &Array1<f64>) -> f64 {
    std.iter().map(|s| (1.0 - s).max(0.0)).sum::<f64>() / std.len() as f64
}

fn off_diagonal_sq(cov: &Array2<f64>) -> f64 {
    let d = cov.nrows();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                s += cov[[i, j]] * cov[[i, j]];
            }
        }
    }
    s / d as f64
}

/// VICReg between two flattened `N × d` latent sets: invariance (mean
/// squared difference), variance hinge at 1 averaged over both inputs, and
/// off-diagonal covariance energy averaged over both inputs.
pub fn vicreg(za: ArrayView2<f64>, zb: ArrayView2<f64>, c: &VicregCoefficients) -> Result<f64> {
    if za.dim() != zb.dim() {
        return Err(SpireError::shape(format!(
            "alignment inputs {:?} and {:?} differ",
            za.dim(),
            zb.dim()
        )));
    }
    require_rows(za, "VICReg")?;
    let inv = (&za - &zb).mapv(|v| v * v).mean().unwrap();
    let (_, sa, ca) = vicreg_parts(za);
    let (_, sb, cb) = vicreg_parts(zb);
    let var = 0.5 * (variance_hinge(&sa) + variance_hinge(&sb));
    let cov = 0.5 * (off_diagonal_sq(&ca) + off_diagonal_sq(&cb));
    Ok(c.invariance * inv + c.variance * var + c.covariance * cov)
}

fn vicreg_single_grad(z: ArrayView2<f64>, c: &VicregCoefficients, scale: f64) -> Array2<f64> {
    let (zc, std, cov) = vicreg_parts(z);
    let (n, d) = zc.dim();
    let nm1 = (n - 1) as f64;
    let mut g = Array2::zeros((n, d));
    if c.variance != 0.0 {
        // d/dz of 0.5 * mean_j relu(1 - s_j)
        for j in 0..d {
            if std[j] < 1.0 {
                let k = -0.5 * c.variance * scale / d as f64 / (nm1 * std[j]);
                g.column_mut(j).scaled_add(k, &zc.column(j));
            }
        }
    }
    if c.covariance != 0.0 {
        let mut off = cov;
        off.diag_mut().fill(0.0);
        let k = 0.5 * c.covariance * scale * 4.0 / (d as f64 * nm1);
        g.scaled_add(k, &zc.dot(&off));
    }
    g
}

/// Gradients of `scale * vicreg(za, zb)`.
pub fn vicreg_grad(
    za: ArrayView2<f64>,
    zb: ArrayView2<f64>,
    c: &VicregCoefficients,
    scale: f64,
) -> (Array2<f64>, Array2<f64>) {
    let k = 2.0 * c.invariance * scale / za.len() as f64;
    let diff = (&za - &zb) * k;
    let mut ga = vicreg_single_grad(za, c, scale);
    let mut gb = vicreg_single_grad(zb, c, scale);
    ga += &diff;
    gb -= &diff;
    (ga, gb)
}

fn pair_index(out: &ForwardOutputs, source: usize, target: usize) -> Option<usize> {
    out.pairs
        .iter()
        .position(|p| p.source == source && p.target == target)
}

/// Symmetrised alignment term: half the sum, over ordered pairs `(r, s)`,
/// of `VICReg(z_r, z̃_{s→r}) + VICReg(z_s, z̃_{r→s})`.
pub fn vicreg_align_loss(out: &ForwardOutputs, c: &VicregCoefficients) -> Result<f64> {
    let mut total = 0.0;
    for (a, b, k) in align_terms(out)? {
        total += 0.5 * vicreg(flat(&out.regions[a].z_shared), flat(&out.pairs[k].z_tilde), c)?;
        let _ = b;
    }
    Ok(total)
}

/// Expands the double sum into `(region, other, pair index of other→region)`
/// triples, each carrying weight one half.
fn align_terms(out: &ForwardOutputs) -> Result<Vec<(usize, usize, usize)>> {
    let r = out.regions.len();
    let mut v = Vec::new();
    for a in 0..r {
        for b in 0..r {
            if a == b {
                continue;
            }
            let ba = pair_index(out, b, a)
                .ok_or_else(|| SpireError::Argument(format!("missing aligner {b}->{a}")))?;
            let ab = pair_index(out, a, b)
                .ok_or_else(|| SpireError::Argument(format!("missing aligner {a}->{b}")))?;
            v.push((a, b, ba));
            v.push((b, a, ab));
        }
    }
    Ok(v)
}

// ----- disentanglement ------------------------------------------------------

struct Standardized {
    values: Array2<f64>,
    std: Array1<f64>,
}

fn standardize(z: ArrayView2<f64>) -> Standardized {
    let (zc, _) = centered(z);
    let std = column_var(&zc).mapv(|v| v.sqrt().max(STD_FLOOR));
    Standardized {
        values: &zc / &std,
        std,
    }
}

/// Backprop through per-feature standardisation.
fn standardize_backward(st: &Standardized, g: &Array2<f64>) -> Array2<f64> {
    let (n, d) = g.dim();
    let nm1 = (n - 1) as f64;
    let mut out = Array2::zeros((n, d));
    for j in 0..d {
        let gj = g.column(j);
        let xb = st.values.column(j);
        let s = st.std[j];
        let gmean = gj.mean().unwrap();
        let mut col = out.column_mut(j);
        if s > STD_FLOOR {
            let proj = gj.dot(&xb) / nm1;
            Zip::from(&mut col)
                .and(&gj)
                .and(&xb)
                .for_each(|o, &gv, &xv| *o = (gv - gmean - xv * proj) / s);
        } else {
            Zip::from(&mut col).and(&gj).for_each(|o, &gv| *o = (gv - gmean) / s);
        }
    }
    out
}

/// Squared Frobenius norm of the cross-covariance between per-feature
/// standardised shared and private latents.
pub fn orthogonality_loss(z_sh: ArrayView2<f64>, z_pr: ArrayView2<f64>) -> Result<f64> {
    if z_sh.nrows() != z_pr.nrows() {
        return Err(SpireError::shape("shared and private latents differ in row count"));
    }
    require_rows(z_sh, "orthogonality loss")?;
    let a = standardize(z_sh);
    let b = standardize(z_pr);
    let c = a.values.t().dot(&b.values) / (z_sh.nrows() - 1) as f64;
    Ok(c.iter().map(|v| v * v).sum())
}

pub fn orthogonality_grad(
    z_sh: ArrayView2<f64>,
    z_pr: ArrayView2<f64>,
    scale: f64,
) -> (Array2<f64>, Array2<f64>) {
    let nm1 = (z_sh.nrows() - 1) as f64;
    let a = standardize(z_sh);
    let b = standardize(z_pr);
    let c = a.values.t().dot(&b.values) / nm1;
    let ga = b.values.dot(&c.t()) * (2.0 * scale / nm1);
    let gb = a.values.dot(&c) * (2.0 * scale / nm1);
    (standardize_backward(&a, &ga), standardize_backward(&b, &gb))
}

fn plain_std(z: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let (zc, _) = centered(z);
    let std = column_var(&zc).mapv(f64::sqrt);
    (zc, std)
}

/// `(Σ_j (std_j - 1)², Σ_j max(0, τ - std_j)²)` for one region.
pub fn variance_guard_losses(
    z_sh: ArrayView2<f64>,
    z_pr: ArrayView2<f64>,
    tau: f64,
) -> Result<(f64, f64)> {
    require_rows(z_sh, "variance guard")?;
    require_rows(z_pr, "variance guard")?;
    let (_, s_sh) = plain_std(z_sh);
    let (_, s_pr) = plain_std(z_pr);
    let sh = s_sh.iter().map(|s| (s - 1.0) * (s - 1.0)).sum();
    let pr = s_pr.iter().map(|s| (tau - s).max(0.0).powi(2)).sum();
    Ok((sh, pr))
}

fn std_chain(zc: &Array2<f64>, std: &Array1<f64>, outer: impl Fn(f64) -> f64) -> Array2<f64> {
    let (n, d) = zc.dim();
    let nm1 = (n - 1) as f64;
    let mut g = Array2::zeros((n, d));
    for j in 0..d {
        let s = std[j];
        if s > 1e-12 {
            let k = outer(s) / (nm1 * s);
            if k != 0.0 {
                g.column_mut(j).scaled_add(k, &zc.column(j));
            }
        }
    }
    g
}

pub fn variance_shared_grad(z_sh: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    let (zc, std) = plain_std(z_sh);
    std_chain(&zc, &std, |s| scale * 2.0 * (s - 1.0))
}

pub fn variance_private_grad(z_pr: ArrayView2<f64>, tau: f64, scale: f64) -> Array2<f64> {
    let (zc, std) = plain_std(z_pr);
    std_chain(&zc, &std, |s| -scale * 2.0 * (tau - s).max(0.0))
}

// ----- aligner regularisers --------------------------------------------------

/// `Σ ‖M - I‖²_F` over all mappers.
pub fn mapper_identity_loss(mappers: &[ArrayView2<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for m in mappers {
        if m.nrows() != m.ncols() {
            return Err(SpireError::shape(format!("mapper {:?} is not square", m.dim())));
        }
        for ((i, j), v) in m.indexed_iter() {
            let d = if i == j { v - 1.0 } else { *v };
            total += d * d;
        }
    }
    Ok(total)
}

/// `Σ_pairs Σ_j ‖k_j - δ‖² + (1ᵀk_j - 1)²`.
pub fn convalign_reg_loss(kernels: &[ArrayView2<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for k in kernels {
        if k.ncols() % 2 == 0 {
            return Err(SpireError::shape(format!(
                "kernel length {} must be odd",
                k.ncols()
            )));
        }
        let half = k.ncols() / 2;
        for row in k.rows() {
            let mut dev = 0.0;
            for (m, v) in row.iter().enumerate() {
                let d = if m == half { v - 1.0 } else { *v };
                dev += d * d;
            }
            let sum = row.sum() - 1.0;
            total += dev + sum * sum;
        }
    }
    Ok(total)
}

fn regularizer_grads(params: &SpireParams, w: &LossWeights, grads: &mut SpireParams) {
    for (a, g) in params.aligners.iter().zip(grads.aligners.iter_mut()) {
        if w.mapid != 0.0 {
            let d = a.mapper.nrows();
            for i in 0..d {
                for j in 0..d {
                    let target = if i == j { 1.0 } else { 0.0 };
                    g.mapper[[i, j]] += w.mapid * 2.0 * (a.mapper[[i, j]] - target);
                }
            }
        }
        if w.align_reg != 0.0 {
            let half = a.halfwidth();
            for (j, row) in a.kernels.rows().into_iter().enumerate() {
                let sum = row.sum() - 1.0;
                for (m, v) in row.iter().enumerate() {
                    let delta = if m == half { 1.0 } else { 0.0 };
                    g.kernels[[j, m]] += w.align_reg * 2.0 * ((v - delta) + sum);
                }
            }
        }
    }
}

// ----- combined objective ----------------------------------------------------

fn gated(z: &Array3<f64>, alpha: f64) -> Array3<f64> {
    z * alpha
}

/// Every term and the weighted total. Private latents enter the
/// disentanglement terms after the private gate.
pub fn total_loss(
    params: &SpireParams,
    inputs: &[Array3<f64>],
    out: &ForwardOutputs,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let mut b = LossBreakdown::default();
    b.set(LossTerm::Rec, total_recon_loss(inputs, out)?);
    let (cross, own) = cross_self_recon_loss(inputs, out)?;
    b.set(LossTerm::Cross, cross);
    b.set(LossTerm::SelfRecon, own);
    b.set(LossTerm::Align, vicreg_align_loss(out, &w.vicreg)?);
    let mut orth = 0.0;
    let mut var_sh = 0.0;
    let mut var_pr = 0.0;
    for rf in &out.regions {
        let zp = gated(&rf.z_private, out.alpha_p);
        orth += orthogonality_loss(flat(&rf.z_shared), flat(&zp))?;
        let (s, p) = variance_guard_losses(flat(&rf.z_shared), flat(&zp), w.tau)?;
        var_sh += s;
        var_pr += p;
    }
    b.set(LossTerm::Orth, orth);
    b.set(LossTerm::VarShared, var_sh);
    b.set(LossTerm::VarPrivate, var_pr);
    let mappers: Vec<_> = params.aligners.iter().map(|a| a.mapper.view()).collect();
    let kernels: Vec<_> = params.aligners.iter().map(|a| a.kernels.view()).collect();
    b.set(LossTerm::MapId, mapper_identity_loss(&mappers)?);
    b.set(LossTerm::AlignReg, convalign_reg_loss(&kernels)?);
    Ok(b.with_total(w))
}

/// Output-level gradients of the weighted objective. Terms with a zero
/// weight contribute nothing.
pub fn output_grads(inputs: &[Array3<f64>], out: &ForwardOutputs, w: &LossWeights) -> Result<OutputGrads> {
    use crate::model::forward_accumulate as acc;
    let mut g = OutputGrads::empty(out.regions.len(), out.pairs.len());
    for (r, (rf, x)) in out.regions.iter().zip(inputs).enumerate() {
        if w.rec != 0.0 {
            g.full[r] = Some(recon_grad(x.view(), rf.full.x_hat.view(), w.rec));
        }
        if w.self_recon != 0.0 {
            g.self_only[r] = Some(recon_grad(x.view(), rf.self_only.x_hat.view(), w.self_recon));
        }
    }
    if w.cross != 0.0 {
        for (k, pf) in out.pairs.iter().enumerate() {
            g.cross[k] = Some(recon_grad(inputs[pf.target].view(), pf.cross.x_hat.view(), w.cross));
        }
    }
    if w.align != 0.0 {
        for (a, _, k) in align_terms(out)? {
            let za = &out.regions[a].z_shared;
            let zt = &out.pairs[k].z_tilde;
            let (ga, gt) = vicreg_grad(flat(za), flat(zt), &w.vicreg, 0.5 * w.align);
            acc(&mut g.z_shared[a], unflat(ga, za.dim()).view(), 1.0);
            acc(&mut g.z_tilde[k], unflat(gt, zt.dim()).view(), 1.0);
        }
    }
    let alpha = out.alpha_p;
    for (r, rf) in out.regions.iter().enumerate() {
        let shape_sh = rf.z_shared.dim();
        let shape_pr = rf.z_private.dim();
        let zp = gated(&rf.z_private, alpha);
        if w.orth != 0.0 {
            let (gs, gp) = orthogonality_grad(flat(&rf.z_shared), flat(&zp), w.orth);
            acc(&mut g.z_shared[r], unflat(gs, shape_sh).view(), 1.0);
            if alpha != 0.0 {
                acc(&mut g.z_private[r], unflat(gp, shape_pr).view(), alpha);
            }
        }
        if w.var_sh != 0.0 {
            let gs = variance_shared_grad(flat(&rf.z_shared), w.var_sh);
            acc(&mut g.z_shared[r], unflat(gs, shape_sh).view(), 1.0);
        }
        if w.var_pr != 0.0 && alpha != 0.0 {
            let gp = variance_private_grad(flat(&zp), w.tau, w.var_pr);
            acc(&mut g.z_private[r], unflat(gp, shape_pr).view(), alpha);
        }
    }
    Ok(g)
}

/// Loss breakdown and the gradient of the weighted total with respect to
/// every parameter.
pub fn loss_and_grads(
    params: &SpireParams,
    inputs: &[Array3<f64>],
    out: &ForwardOutputs,
    w: &LossWeights,
) -> Result<(LossBreakdown, SpireParams)> {
    let breakdown = total_loss(params, inputs, out, w)?;
    let og = output_grads(inputs, out, w)?;
    let mut grads = backward(params, inputs, out, og);
    regularizer_grads(params, w, &mut grads);
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::{array, Array};
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = substream(seed, "loss-test", 0);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn recon_examples() {
        let x = Array3::<f64>::zeros((2, 4, 3));
        assert_eq!(recon_loss(x.view(), x.view()).unwrap(), 0.0);
        let ones = Array3::<f64>::ones((2, 4, 3));
        assert_eq!(recon_loss(x.view(), ones.view()).unwrap(), 1.0);
        let bad = Array3::<f64>::ones((2, 4, 2));
        assert!(recon_loss(x.view(), bad.view()).is_err());
    }

    #[test]
    fn vicreg_examples() {
        let c = VicregCoefficients::default();
        // two orthogonal ±2 patterns: std ≥ 1, zero off-diagonal covariance
        let z = array![[2.0, 2.0], [2.0, -2.0], [-2.0, 2.0], [-2.0, -2.0]];
        assert!(vicreg(z.view(), z.view(), &c).unwrap().abs() < 1e-15);

        let a = normal(50, 3, 1);
        let b = &a + 0.7;
        let only_inv = VicregCoefficients { invariance: 1.0, variance: 0.0, covariance: 0.0 };
        assert!((vicreg(a.view(), b.view(), &only_inv).unwrap() - 0.49).abs() < 1e-12);

        let one = Array2::<f64>::zeros((1, 3));
        assert!(vicreg(one.view(), one.view(), &c).is_err());
    }

    #[test]
    fn orthogonality_examples() {
        let sh = normal(10_000, 3, 2);
        let pr = normal(10_000, 3, 3);
        let l = orthogonality_loss(sh.view(), pr.view()).unwrap();
        assert!(l < 0.01, "{l}");

        let l_same = orthogonality_loss(sh.view(), sh.view()).unwrap();
        assert!((l_same - 3.0).abs() < 0.05, "{l_same}");

        let sh2 = array![[0.0, 1.0], [1.0, 5.0]];
        let pr2 = array![[3.0, -1.0], [5.0, -4.0]];
        assert!((orthogonality_loss(sh2.view(), pr2.view()).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonality_is_standardization_invariant() {
        let sh = normal(40, 2, 4);
        let pr = normal(40, 3, 5);
        let base = orthogonality_loss(sh.view(), pr.view()).unwrap();
        let scaled = &pr * &array![3.0, 0.2, 11.0] + &array![1.0, -4.0, 0.5];
        let l = orthogonality_loss(sh.view(), scaled.view()).unwrap();
        assert!((l - base).abs() < 1e-12 * base.max(1.0));
    }

    #[test]
    fn variance_guard_examples() {
        // std exactly 1 with the unbiased convention
        let unit = array![[1.0], [-1.0], [0.0]];
        let (sh, _) = variance_guard_losses(unit.view(), unit.view(), 0.1).unwrap();
        assert!(sh.abs() < 1e-15);
        let constant = array![[4.0], [4.0], [4.0]];
        let (_, pr) = variance_guard_losses(unit.view(), constant.view(), 0.1).unwrap();
        assert!((pr - 0.01).abs() < 1e-15);
        let wide = array![[1.1], [-1.1], [0.0]];
        let (_, pr) = variance_guard_losses(unit.view(), wide.view(), 1.0).unwrap();
        assert_eq!(pr, 0.0);
    }

    #[test]
    fn mapper_and_kernel_regularizers() {
        let eye = Array2::<f64>::eye(3);
        assert_eq!(mapper_identity_loss(&[eye.view()]).unwrap(), 0.0);
        let mut m = eye.clone();
        m[[0, 2]] = 0.1;
        assert!((mapper_identity_loss(&[m.view()]).unwrap() - 0.01).abs() < 1e-15);
        let mut m2 = eye.clone();
        m2[[1, 1]] = 0.8;
        let both = mapper_identity_loss(&[m.view(), m2.view()]).unwrap();
        assert!((both - 0.05).abs() < 1e-15);
        assert!(mapper_identity_loss(&[Array2::<f64>::zeros((2, 3)).view()]).is_err());

        let mut impulse = Array2::<f64>::zeros((3, 9));
        impulse.column_mut(4).fill(1.0);
        assert_eq!(convalign_reg_loss(&[impulse.view()]).unwrap(), 0.0);
        let uniform = Array2::<f64>::from_elem((1, 9), 1.0 / 9.0);
        let u = convalign_reg_loss(&[uniform.view()]).unwrap();
        assert!((u - 8.0 / 9.0).abs() < 1e-12);
        let doubled = &impulse.slice(ndarray::s![..1, ..]) * 2.0;
        assert!((convalign_reg_loss(&[doubled.view()]).unwrap() - 2.0).abs() < 1e-15);
        assert!(convalign_reg_loss(&[Array2::<f64>::zeros((1, 4)).view()]).is_err());
    }

    #[test]
    fn component_gradients_match_finite_differences() {
        let a = normal(7, 3, 8);
        let b = normal(7, 3, 9) * 0.4;
        let c = VicregCoefficients::default();
        let eps = 1e-6;
        let check = |f: &dyn Fn(&Array2<f64>) -> f64, g: &Array2<f64>, at: &Array2<f64>| {
            for idx in [(0, 0), (3, 1), (6, 2)] {
                let mut p = at.clone();
                p[idx] += eps;
                let mut m = at.clone();
                m[idx] -= eps;
                let fd = (f(&p) - f(&m)) / (2.0 * eps);
                assert!((fd - g[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[idx]);
            }
        };
        let (ga, gb) = vicreg_grad(a.view(), b.view(), &c, 1.0);
        check(&|x| vicreg(x.view(), b.view(), &c).unwrap(), &ga, &a);
        check(&|x| vicreg(a.view(), x.view(), &c).unwrap(), &gb, &b);
        let (ga, gb) = orthogonality_grad(a.view(), b.view(), 1.0);
        check(&|x| orthogonality_loss(x.view(), b.view()).unwrap(), &ga, &a);
        check(&|x| orthogonality_loss(a.view(), x.view()).unwrap(), &gb, &b);
        let g = variance_shared_grad(a.view(), 1.0);
        check(&|x| variance_guard_losses(x.view(), b.view(), 0.9).unwrap().0, &g, &a);
        let g = variance_private_grad(b.view(), 0.9, 1.0);
        check(&|x| variance_guard_losses(a.view(), x.view(), 0.9).unwrap().1, &g, &b);
    }

    #[test]
    fn breakdown_total_is_weighted_sum() {
        let mut b = LossBreakdown::default();
        for (i, t) in LossTerm::ALL.into_iter().enumerate() {
            b.set(t, 1.0 + i as f64);
        }
        let w = LossWeights::reconstruction_only();
        assert_eq!(b.with_total(&w).total, 1.0);
        let doubled = b.with_total(&w.scaled(2.0)).total;
        assert_eq!(doubled, 2.0);
        let m = b.with_total(&w).to_map();
        assert_eq!(LossBreakdown::from_map(&m), b.with_total(&w));
        let _ = Array::<f64, _>::zeros(3);
    }
}
