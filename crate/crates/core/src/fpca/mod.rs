//! Functional principal component models for one or two transformed series.
//!
//! * UFTS: one Karhunen-Loeve expansion per series.
//! * MFTS: both series are stacked coordinate-wise and share one expansion,
//!   so a single score series drives both.
//! * MLFTS: a common expansion of the averaged centred curves plus one
//!   expansion per series of what the common part leaves over.
//!
//! Curves live on a regular grid; inner products carry unit weights and the
//! covariance divisor is `n - 1`.

mod evr;

pub use evr::{evr_threshold, select_k, select_k_evr, EvrGate};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::UnconstrainedSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ufts,
    Mfts,
    Mlfts,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ufts => "UFTS",
            ModelKind::Mfts => "MFTS",
            ModelKind::Mlfts => "MLFTS",
        }
    }

    /// Whether the model needs two series fitted jointly.
    pub fn is_joint(self) -> bool {
        self != ModelKind::Ufts
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ufts" => Ok(ModelKind::Ufts),
            "mfts" => Ok(ModelKind::Mfts),
            "mlfts" => Ok(ModelKind::Mlfts),
            _ => Err(Error::Config(format!(
                "unknown model {s:?} (expected ufts|mfts|mlfts)"
            ))),
        }
    }
}

/// How many components a block keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KRule {
    Evr(EvrGate),
    Fixed(usize),
}

impl Default for KRule {
    fn default() -> Self {
        KRule::Evr(EvrGate::Leading)
    }
}

impl KRule {
    pub fn label(&self) -> String {
        match self {
            KRule::Evr(EvrGate::Leading) => "EVR".into(),
            KRule::Evr(EvrGate::Adjacent) => "EVR-adjacent".into(),
            KRule::Fixed(k) => format!("K={k}"),
        }
    }
}

impl std::str::FromStr for KRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "evr" => Ok(KRule::Evr(EvrGate::Leading)),
            "evr-adjacent" => Ok(KRule::Evr(EvrGate::Adjacent)),
            _ => {
                let digits = t.strip_prefix("k=").unwrap_or(&t);
                digits
                    .parse::<usize>()
                    .ok()
                    .filter(|&k| k >= 1)
                    .map(KRule::Fixed)
                    .ok_or_else(|| {
                        Error::Config(format!("bad k rule {s:?} (expected evr|evr-adjacent|<k>)"))
                    })
            }
        }
    }
}

/// One principal-component expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcBlock {
    /// All eigenvalues of the covariance, descending, negatives clamped to 0.
    pub eigenvalues: Vec<f64>,
    /// Retained eigenfunctions, one row per component.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Scores, one row per year and one column per retained component.
    pub scores: Vec<Vec<f64>>,
    pub k_selected: usize,
}

impl PcBlock {
    /// Score time series of component `k`.
    pub fn score_series(&self, k: usize) -> Vec<f64> {
        self.scores.iter().map(|row| row[k]).collect()
    }

    pub fn dim(&self) -> usize {
        self.eigenfunctions.first().map_or(0, Vec::len)
    }

    fn combine(&self, scores: &[f64], out: &mut [f64], offset: usize, scale: f64) {
        for (s, phi) in scores.iter().zip(&self.eigenfunctions) {
            for (o, p) in out.iter_mut().zip(&phi[offset..]) {
                *o += scale * s * p;
            }
        }
    }
}

/// Fitted model. `means`, `specific` and `residual_variance` are indexed by
/// series (female first for joint models).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaModel {
    pub kind: ModelKind,
    pub n_years: usize,
    /// Coordinates per series.
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    /// UFTS: the expansion; MFTS: the stacked joint expansion; MLFTS: the
    /// common expansion.
    pub common: PcBlock,
    /// MLFTS series-specific expansions; empty otherwise.
    pub specific: Vec<PcBlock>,
    /// MFTS per-series scaling applied before the joint decomposition.
    pub block_scales: Vec<f64>,
    pub residual_variance: Vec<Vec<f64>>,
}

/// Scores at which to evaluate a model, shaped like its blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockScores {
    pub common: Vec<f64>,
    pub specific: Vec<Vec<f64>>,
}

impl BlockScores {
    pub fn zeros(model: &FpcaModel) -> Self {
        Self {
            common: vec![0.0; model.common.k_selected],
            specific: model
                .specific
                .iter()
                .map(|b| vec![0.0; b.k_selected])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MftsOptions {
    /// Scale each series to unit total variance before stacking.
    pub standardize: bool,
}

fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols()).map(|j| x.column(j).sum() / n).collect()
}

fn centered(x: &DMatrix<f64>, mean: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j])
}

/// Principal components of rows that are already centred.
fn decompose(xc: &DMatrix<f64>, rule: KRule) -> Result<PcBlock> {
    let (n, p) = (xc.nrows(), xc.ncols());
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if let KRule::Fixed(k) = rule {
        if k == 0 || k >= n || k > p {
            return Err(Error::InvalidK(format!(
                "fixed k = {k} needs 1 <= k < n = {n} and k <= {p} coordinates"
            )));
        }
    }
    let cov = (xc.transpose() * xc) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let k = match rule {
        KRule::Fixed(k) => k,
        KRule::Evr(gate) => select_k(&eigenvalues, n, gate),
    };

    let mut eigenfunctions = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |acc, (j, x)| {
                if x.abs() > acc.1 {
                    (j, x.abs())
                } else {
                    acc
                }
            })
            .0;
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        eigenfunctions.push(v);
    }
    let scores = (0..n)
        .map(|t| {
            eigenfunctions
                .iter()
                .map(|phi| (0..p).map(|j| xc[(t, j)] * phi[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcBlock {
        eigenvalues,
        eigenfunctions,
        scores,
        k_selected: k,
    })
}

/// Sample variance (divisor `n - 1`) of each column of `resid`.
fn column_variance(resid: &DMatrix<f64>) -> Vec<f64> {
    let n = resid.nrows();
    (0..resid.ncols())
        .map(|j| {
            crate::stats::sample_variance(&resid.column(j).iter().copied().collect::<Vec<_>>())
        })
        .map(|v| if n < 2 { 0.0 } else { v })
        .collect()
}

fn check_pair(a: &UnconstrainedSeries, b: &UnconstrainedSeries) -> Result<()> {
    if a.years() != b.years() {
        return Err(Error::DimensionMismatch(
            "series cover different years".into(),
        ));
    }
    if a.grid_length() != b.grid_length() {
        return Err(Error::DimensionMismatch(format!(
            "grid lengths differ: {} vs {}",
            a.grid_length(),
            b.grid_length()
        )));
    }
    if a.transform() != b.transform() {
        return Err(Error::DimensionMismatch(
            "series use different transforms".into(),
        ));
    }
    Ok(())
}

fn check_len(x: &UnconstrainedSeries) -> Result<()> {
    if x.n_years() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: x.n_years(),
        });
    }
    Ok(())
}

pub fn fit_ufts(x: &UnconstrainedSeries, rule: KRule) -> Result<FpcaModel> {
    check_len(x)?;
    let mean = column_means(x.values());
    let xc = centered(x.values(), &mean);
    let block = decompose(&xc, rule)?;
    let mut model = FpcaModel {
        kind: ModelKind::Ufts,
        n_years: x.n_years(),
        dim: x.grid_length(),
        means: vec![mean],
        common: block,
        specific: Vec::new(),
        block_scales: vec![1.0],
        residual_variance: Vec::new(),
    };
    model.residual_variance = model.in_sample_residual_variance(&[x]);
    Ok(model)
}

pub fn fit_mfts(
    xf: &UnconstrainedSeries,
    xm: &UnconstrainedSeries,
    rule: KRule,
) -> Result<FpcaModel> {
    fit_mfts_with(xf, xm, rule, MftsOptions::default())
}

pub fn fit_mfts_with(
    xf: &UnconstrainedSeries,
    xm: &UnconstrainedSeries,
    rule: KRule,
    opts: MftsOptions,
) -> Result<FpcaModel> {
    check_pair(xf, xm)?;
    check_len(xf)?;
    let (n, p) = (xf.n_years(), xf.grid_length());
    let means = vec![column_means(xf.values()), column_means(xm.values())];
    let parts = [
        centered(xf.values(), &means[0]),
        centered(xm.values(), &means[1]),
    ];
    let scales: Vec<f64> = parts
        .iter()
        .map(|c| {
            if opts.standardize {
                let total = c.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
                if total > 0.0 {
                    total.sqrt()
                } else {
                    1.0
                }
            } else {
                1.0
            }
        })
        .collect();
    let stacked = DMatrix::from_fn(n, 2 * p, |t, j| {
        let s = j / p;
        parts[s][(t, j % p)] / scales[s]
    });
    let block = decompose(&stacked, rule)?;
    let mut model = FpcaModel {
        kind: ModelKind::Mfts,
        n_years: n,
        dim: p,
        means,
        common: block,
        specific: Vec::new(),
        block_scales: scales,
        residual_variance: Vec::new(),
    };
    model.residual_variance = model.in_sample_residual_variance(&[xf, xm]);
    Ok(model)
}

pub fn fit_mlfts(
    xf: &UnconstrainedSeries,
    xm: &UnconstrainedSeries,
    rule: KRule,
) -> Result<FpcaModel> {
    fit_mlfts_with(xf, xm, rule, rule)
}

/// MLFTS with separate rules for the common (`K`) and specific (`V`) blocks.
pub fn fit_mlfts_with(
    xf: &UnconstrainedSeries,
    xm: &UnconstrainedSeries,
    common_rule: KRule,
    specific_rule: KRule,
) -> Result<FpcaModel> {
    fit_mlfts_rules(xf, xm, common_rule, [specific_rule, specific_rule])
}

fn fit_mlfts_rules(
    xf: &UnconstrainedSeries,
    xm: &UnconstrainedSeries,
    common_rule: KRule,
    specific_rules: [KRule; 2],
) -> Result<FpcaModel> {
    check_pair(xf, xm)?;
    check_len(xf)?;
    let (n, p) = (xf.n_years(), xf.grid_length());
    let means = vec![column_means(xf.values()), column_means(xm.values())];
    let parts = [
        centered(xf.values(), &means[0]),
        centered(xm.values(), &means[1]),
    ];
    let aggregate = (&parts[0] + &parts[1]) * 0.5;
    let common = decompose(&aggregate, common_rule)?;
    let common_fit = DMatrix::from_fn(n, p, |t, j| {
        common
            .eigenfunctions
            .iter()
            .zip(&common.scores[t])
            .map(|(phi, s)| s * phi[j])
            .sum::<f64>()
    });
    let specific = parts
        .iter()
        .zip(specific_rules)
        .map(|(c, rule)| decompose(&(c - &common_fit), rule))
        .collect::<Result<Vec<_>>>()?;
    let mut model = FpcaModel {
        kind: ModelKind::Mlfts,
        n_years: n,
        dim: p,
        means,
        common,
        specific,
        block_scales: vec![1.0, 1.0],
        residual_variance: Vec::new(),
    };
    model.residual_variance = model.in_sample_residual_variance(&[xf, xm]);
    Ok(model)
}

impl FpcaModel {
    pub fn n_series(&self) -> usize {
        self.means.len()
    }

    /// `(common, specific...)` retained counts.
    pub fn k_selected(&self) -> Vec<usize> {
        std::iter::once(self.common.k_selected)
            .chain(self.specific.iter().map(|b| b.k_selected))
            .collect()
    }

    /// Loading of common component `k` on series `s` (eigenfunction slice
    /// times any standardization scale).
    pub fn common_loading(&self, s: usize, k: usize) -> Vec<f64> {
        let phi = &self.common.eigenfunctions[k];
        match self.kind {
            ModelKind::Mfts => phi[s * self.dim..(s + 1) * self.dim]
                .iter()
                .map(|v| v * self.block_scales[s])
                .collect(),
            _ => phi.clone(),
        }
    }

    /// Curves (one per series) at the given block scores.
    pub fn reconstruct(&self, scores: &BlockScores) -> Result<Vec<Vec<f64>>> {
        if scores.common.len() != self.common.k_selected {
            return Err(Error::DimensionMismatch(format!(
                "expected {} common scores, got {}",
                self.common.k_selected,
                scores.common.len()
            )));
        }
        if scores.specific.len() != self.specific.len()
            || scores
                .specific
                .iter()
                .zip(&self.specific)
                .any(|(s, b)| s.len() != b.k_selected)
        {
            return Err(Error::DimensionMismatch(
                "specific score shape mismatch".into(),
            ));
        }
        let mut out = Vec::with_capacity(self.n_series());
        for s in 0..self.n_series() {
            let mut curve = self.means[s].clone();
            match self.kind {
                ModelKind::Ufts => self.common.combine(&scores.common, &mut curve, 0, 1.0),
                ModelKind::Mfts => self.common.combine(
                    &scores.common,
                    &mut curve,
                    s * self.dim,
                    self.block_scales[s],
                ),
                ModelKind::Mlfts => {
                    self.common.combine(&scores.common, &mut curve, 0, 1.0);
                    self.specific[s].combine(&scores.specific[s], &mut curve, 0, 1.0);
                }
            }
            out.push(curve);
        }
        Ok(out)
    }

    /// In-sample scores of year `t`.
    pub fn scores_at(&self, t: usize) -> BlockScores {
        BlockScores {
            common: self.common.scores[t].clone(),
            specific: self.specific.iter().map(|b| b.scores[t].clone()).collect(),
        }
    }

    /// In-sample fitted curves, `[series][year][coordinate]`.
    pub fn fitted(&self) -> Vec<Vec<Vec<f64>>> {
        let mut out = vec![Vec::with_capacity(self.n_years); self.n_series()];
        for t in 0..self.n_years {
            let curves = self
                .reconstruct(&self.scores_at(t))
                .expect("own scores match");
            for (s, c) in curves.into_iter().enumerate() {
                out[s].push(c);
            }
        }
        out
    }

    fn in_sample_residual_variance(&self, data: &[&UnconstrainedSeries]) -> Vec<Vec<f64>> {
        let fitted = self.fitted();
        data.iter()
            .zip(&fitted)
            .map(|(x, fit)| {
                let resid = DMatrix::from_fn(self.n_years, self.dim, |t, j| {
                    x.values()[(t, j)] - fit[t][j]
                });
                column_variance(&resid)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Fits `kind` to one (UFTS) or two (joint models) series.
pub fn fit(kind: ModelKind, series: &[&UnconstrainedSeries], rule: KRule) -> Result<FpcaModel> {
    fit_with(kind, series, rule, rule, MftsOptions::default())
}

pub fn fit_with(
    kind: ModelKind,
    series: &[&UnconstrainedSeries],
    common_rule: KRule,
    specific_rule: KRule,
    mfts: MftsOptions,
) -> Result<FpcaModel> {
    match (kind, series) {
        (ModelKind::Ufts, [x]) => fit_ufts(x, common_rule),
        (ModelKind::Mfts, [f, m]) => fit_mfts_with(f, m, common_rule, mfts),
        (ModelKind::Mlfts, [f, m]) => fit_mlfts_with(f, m, common_rule, specific_rule),
        _ => Err(Error::DimensionMismatch(format!(
            "{} takes {} series, got {}",
            kind.name(),
            if kind.is_joint() { 2 } else { 1 },
            series.len()
        ))),
    }
}

/// Refits `kind` with every block's component count fixed to `ks`, as
/// returned by [`FpcaModel::k_selected`] of an earlier fit.
pub fn fit_frozen(
    kind: ModelKind,
    series: &[&UnconstrainedSeries],
    ks: &[usize],
    mfts: MftsOptions,
) -> Result<FpcaModel> {
    let fixed = |i: usize| {
        ks.get(i)
            .map(|&k| KRule::Fixed(k))
            .ok_or_else(|| Error::InvalidK(format!("no frozen count for block {i}")))
    };
    match (kind, series) {
        (ModelKind::Mlfts, [f, m]) => fit_mlfts_rules(f, m, fixed(0)?, [fixed(1)?, fixed(2)?]),
        _ => fit_with(kind, series, fixed(0)?, fixed(0)?, mfts),
    }
}

#[cfg(test)]
mod tests;
