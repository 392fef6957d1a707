//! Pointwise prediction intervals on the death-count scale.
//!
//! Three constructions are offered. The sd-based band scales the
//! coordinate-wise residual sd `gamma(u)` by one pooled multiplier `xi` per
//! horizon. The split-conformal band uses the finite-sample corrected order
//! statistic of absolute residuals at each age. The parametric band adds a
//! Gaussian total variance in transform space and maps it back.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_alpha, Error, Result};
use crate::exec::{self, Execution};
use crate::fpca::{FpcaModel, ModelKind};
use crate::score::ModelScoreForecast;
use crate::stats::{normal_quantile, robust_ceil};
use crate::transforms::{logistic, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sd,
    Conformal,
    Parametric,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sd => "sd",
            Method::Conformal => "conformal",
            Method::Parametric => "parametric",
        }
    }

    pub const ALL: [Method; 3] = [Method::Sd, Method::Conformal, Method::Parametric];
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sd" => Ok(Method::Sd),
            "conformal" | "cp" => Ok(Method::Conformal),
            "parametric" | "gaussian" => Ok(Method::Parametric),
            other => Err(Error::Config(format!(
                "unknown interval approach '{other}'"
            ))),
        }
    }
}

/// Count-scale forecast errors `actual - forecast` at one horizon, one row
/// per validation year.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    horizon: usize,
    residuals: DMatrix<f64>,
}

impl ResidualSet {
    pub fn new(horizon: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::ZeroHorizon);
        }
        let a = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || a == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if rows.iter().any(|r| r.len() != a) {
            return Err(Error::DimensionMismatch(
                "residual rows differ in length".into(),
            ));
        }
        Ok(Self {
            horizon,
            residuals: DMatrix::from_fn(rows.len(), a, |i, j| rows[i][j]),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn m(&self) -> usize {
        self.residuals.nrows()
    }

    pub fn n_ages(&self) -> usize {
        self.residuals.ncols()
    }

    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }

    fn abs_column(&self, j: usize) -> Vec<f64> {
        self.residuals.column(j).iter().map(|e| e.abs()).collect()
    }
}

/// Coordinate-wise sample sd with divisor `M - 1`.
pub fn functional_sd(res: &ResidualSet) -> Result<Vec<f64>> {
    let m = res.m();
    if m < 2 {
        return Err(Error::InsufficientData { needed: 2, got: m });
    }
    Ok((0..res.n_ages())
        .map(|j| {
            let col: Vec<f64> = res.residuals.column(j).iter().copied().collect();
            crate::stats::sample_variance(&col).sqrt()
        })
        .collect())
}

/// Pooled `|e| / gamma` over every cell, sorted ascending. Ages with zero
/// `gamma` and all-zero residuals carry no information and are skipped.
pub fn pooled_ratios(res: &ResidualSet, gamma: &[f64]) -> Result<Vec<f64>> {
    check_len(gamma.len(), res.n_ages())?;
    let mut out = Vec::with_capacity(res.m() * res.n_ages());
    for (j, &g) in gamma.iter().enumerate() {
        let col = res.residuals.column(j);
        if g > 0.0 {
            out.extend(col.iter().map(|e| e.abs() / g));
        } else if col.iter().any(|&e| e != 0.0) {
            return Err(Error::DegenerateGamma { age: j });
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Relative inflation applied to the selected ratio so that `|e| <= xi * gamma`
/// holds for the cell that defined it despite rounding in the product.
const XI_GUARD: f64 = 4.0 * f64::EPSILON;

/// Smallest pooled ratio whose empirical coverage reaches `1 - alpha`: the
/// `ceil((1 - alpha) N)`-th order statistic.
pub fn calibrate_xi(res: &ResidualSet, gamma: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let r = pooled_ratios(res, gamma)?;
    if r.is_empty() {
        return Ok(0.0);
    }
    let k = robust_ceil((1.0 - alpha) * r.len() as f64).clamp(1, r.len());
    Ok(r[k - 1] * (1.0 + XI_GUARD))
}

/// Largest pooled ratio strictly below `xi`, if any.
pub fn next_lower_ratio(res: &ResidualSet, gamma: &[f64], xi: f64) -> Result<Option<f64>> {
    let r = pooled_ratios(res, gamma)?;
    let floor = xi / (1.0 + XI_GUARD);
    Ok(r.into_iter().rev().find(|&v| v < floor))
}

/// Fraction of informative cells with `|e| <= xi * gamma(u)`.
pub fn sd_coverage(res: &ResidualSet, gamma: &[f64], xi: f64) -> Result<f64> {
    check_len(gamma.len(), res.n_ages())?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (j, &g) in gamma.iter().enumerate() {
        if g <= 0.0 && res.residuals.column(j).iter().all(|&e| e == 0.0) {
            continue;
        }
        for e in res.residuals.column(j).iter() {
            n += 1;
            if e.abs() <= xi * g {
                hit += 1;
            }
        }
    }
    if n == 0 {
        return Ok(1.0);
    }
    Ok(hit as f64 / n as f64)
}

/// A pointwise band at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBand {
    pub horizon: usize,
    pub alpha: f64,
    pub method: Method,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// The conformal order statistic was capped at the sample maximum.
    pub under_supported: bool,
}

impl IntervalBand {
    fn symmetric(
        horizon: usize,
        alpha: f64,
        method: Method,
        point: &[f64],
        half: impl Iterator<Item = f64>,
    ) -> Self {
        let (lower, upper) = point
            .iter()
            .zip(half)
            .map(|(p, w)| ((p - w).max(0.0), p + w))
            .unzip();
        Self {
            horizon,
            alpha,
            method,
            lower,
            upper,
            under_supported: false,
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, u: usize, value: f64) -> bool {
        self.lower[u] <= value && value <= self.upper[u]
    }

    pub fn width(&self) -> Vec<f64> {
        self.upper
            .iter()
            .zip(&self.lower)
            .map(|(u, l)| u - l)
            .collect()
    }
}

/// `[point - xi gamma, point + xi gamma]`, lower clamped at 0.
pub fn sd_band(
    horizon: usize,
    point: &[f64],
    gamma: &[f64],
    xi: f64,
    alpha: f64,
) -> Result<IntervalBand> {
    check_alpha(alpha)?;
    check_len(gamma.len(), point.len())?;
    if !(xi >= 0.0) {
        return Err(Error::InvalidSeries(format!("negative multiplier {xi}")));
    }
    Ok(IntervalBand::symmetric(
        horizon,
        alpha,
        Method::Sd,
        point,
        gamma.iter().map(|g| xi * g),
    ))
}

/// Order-statistic index `min(M, ceil((1 - alpha)(M + 1)))` and whether the
/// cap was needed.
pub fn conformal_rank(m: usize, alpha: f64) -> (usize, bool) {
    let k = robust_ceil((1.0 - alpha) * (m + 1) as f64).max(1);
    (k.min(m), k > m)
}

/// Per-age conformal quantiles `q(u)` and the under-support flag.
pub fn conformal_quantiles(res: &ResidualSet, alpha: f64) -> Result<(Vec<f64>, bool)> {
    check_alpha(alpha)?;
    let (k, capped) = conformal_rank(res.m(), alpha);
    let q = (0..res.n_ages())
        .map(|j| {
            let mut col = res.abs_column(j);
            col.sort_by(f64::total_cmp);
            col[k - 1]
        })
        .collect();
    Ok((q, capped))
}

pub fn conformal_band(
    horizon: usize,
    point: &[f64],
    q: &[f64],
    alpha: f64,
    under_supported: bool,
) -> Result<IntervalBand> {
    check_alpha(alpha)?;
    check_len(q.len(), point.len())?;
    let mut band =
        IntervalBand::symmetric(horizon, alpha, Method::Conformal, point, q.iter().copied());
    band.under_supported = under_supported;
    Ok(band)
}

/// How a transform-space Gaussian band is carried back to death counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandMapping {
    /// Inverse of the two curves `point +- z sqrt(v)`, then pointwise
    /// min/max together with the point forecast. Not guaranteed to be nested
    /// in alpha, since a count need not be monotone along the shift.
    #[default]
    Endpoints,
    /// Exact image of the coordinate box `point +- z sqrt(v)` under the
    /// inverse transform: every count is monotone in each coordinate, so its
    /// extremes sit at box corners. Nested in alpha, but treats coordinates
    /// as free to move independently and is therefore wide.
    Box,
}

impl std::str::FromStr for BandMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "box" => Ok(BandMapping::Box),
            "endpoints" => Ok(BandMapping::Endpoints),
            other => Err(Error::Config(format!("unknown band mapping '{other}'"))),
        }
    }
}

/// Transform-space forecast variance of series `s`:
/// `sum_k var_k psi_k(u)^2 + residual variance(u)`.
pub fn total_variance(model: &FpcaModel, s: usize, fc: &ModelScoreForecast) -> Result<Vec<f64>> {
    if fc.common.variance.len() != model.common.k_selected
        || fc.specific.len() != model.specific.len()
    {
        return Err(Error::DimensionMismatch(
            "score forecast does not match model".into(),
        ));
    }
    let mut v = model
        .residual_variance
        .get(s)
        .cloned()
        .ok_or_else(|| Error::DimensionMismatch(format!("no series {s} in model")))?;
    for (k, var) in fc.common.variance.iter().enumerate() {
        for (vi, p) in v.iter_mut().zip(model.common_loading(s, k)) {
            *vi += var * p * p;
        }
    }
    if model.kind == ModelKind::Mlfts {
        let block = &model.specific[s];
        let f = &fc.specific[s];
        if f.variance.len() != block.k_selected {
            return Err(Error::DimensionMismatch(
                "specific score variance missing".into(),
            ));
        }
        for (var, phi) in f.variance.iter().zip(&block.eigenfunctions) {
            for (vi, p) in v.iter_mut().zip(phi) {
                *vi += var * p * p;
            }
        }
    }
    Ok(v)
}

/// Gaussian band `point +- z_{1-alpha/2} sqrt(v)` in transform space, carried
/// to counts by `mapping`.
pub fn parametric_band(
    horizon: usize,
    point: &[f64],
    variance: &[f64],
    transform: Transform,
    radix: f64,
    alpha: f64,
    mapping: BandMapping,
) -> Result<IntervalBand> {
    check_alpha(alpha)?;
    check_len(variance.len(), point.len())?;
    if variance.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidSeries(
            "negative or missing variance component".into(),
        ));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let half: Vec<f64> = variance.iter().map(|v| z * v.sqrt()).collect();
    let centre = transform.inverse(point, radix);
    let (mut lower, mut upper) = match mapping {
        BandMapping::Box => match transform {
            Transform::Clr => clr_box(point, &half, radix),
            Transform::Cdf => cdf_box(point, &half, radix),
        },
        BandMapping::Endpoints => {
            let lo: Vec<f64> = point.iter().zip(&half).map(|(p, h)| p - h).collect();
            let hi: Vec<f64> = point.iter().zip(&half).map(|(p, h)| p + h).collect();
            let a = transform.inverse(&lo, radix);
            let b = transform.inverse(&hi, radix);
            a.iter()
                .zip(&b)
                .map(|(x, y)| (x.min(*y), x.max(*y)))
                .unzip()
        }
    };
    for ((l, u), c) in lower.iter_mut().zip(upper.iter_mut()).zip(&centre) {
        *l = l.min(*c).max(0.0);
        *u = u.max(*c);
    }
    Ok(IntervalBand {
        horizon,
        alpha,
        method: Method::Parametric,
        lower,
        upper,
        under_supported: false,
    })
}

/// Count `u` of the softmax is increasing in `g_u` and decreasing in every
/// other coordinate.
fn clr_box(g: &[f64], half: &[f64], radix: f64) -> (Vec<f64>, Vec<f64>) {
    let n = g.len();
    let bound = |u: usize, sign: f64| {
        let own = g[u] + sign * half[u];
        let rest: f64 = (0..n)
            .filter(|&j| j != u)
            .map(|j| (g[j] - sign * half[j] - own).exp())
            .sum();
        radix / (1.0 + rest)
    };
    (
        (0..n).map(|u| bound(u, -1.0)).collect(),
        (0..n).map(|u| bound(u, 1.0)).collect(),
    )
}

/// `d(u) = R (F(u) - F(u-1))` with `F = logistic(l)` padded by 0 and 1.
fn cdf_box(l: &[f64], half: &[f64], radix: f64) -> (Vec<f64>, Vec<f64>) {
    let m = l.len();
    // logit of F(y) at the low or high corner
    let f = |y: usize, sign: f64| l[y] + sign * half[y];
    let mut lower = Vec::with_capacity(m + 1);
    let mut upper = Vec::with_capacity(m + 1);
    for u in 0..=m {
        let (lo, hi) = match (u, u == m) {
            (0, _) => (logistic(f(0, -1.0)), logistic(f(0, 1.0))),
            (_, true) => (logistic(-f(m - 1, 1.0)), logistic(-f(m - 1, -1.0))),
            _ => (
                logistic_diff(f(u, -1.0), f(u - 1, 1.0)),
                logistic_diff(f(u, 1.0), f(u - 1, -1.0)),
            ),
        };
        lower.push(radix * lo.max(0.0));
        upper.push(radix * hi.max(0.0));
    }
    (lower, upper)
}

/// `logistic(x) - logistic(y)` without cancellation near 1.
fn logistic_diff(x: f64, y: f64) -> f64 {
    if x + y > 0.0 {
        logistic(-y) - logistic(-x)
    } else {
        logistic(x) - logistic(y)
    }
}

/// Calibration results at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCalibration {
    pub horizon: usize,
    /// Residual rows used.
    pub m: usize,
    pub xi: f64,
    pub gamma: Vec<f64>,
    pub conformal_q: Vec<f64>,
    pub under_supported: bool,
}

/// Per-horizon calibration at one significance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub alpha: f64,
    pub horizons: Vec<HorizonCalibration>,
}

impl CalibrationTable {
    pub fn get(&self, h: usize) -> Option<&HorizonCalibration> {
        self.horizons.iter().find(|c| c.horizon == h)
    }

    pub fn xi(&self) -> Vec<f64> {
        self.horizons.iter().map(|c| c.xi).collect()
    }
}

pub fn calibrate_horizon(res: &ResidualSet, alpha: f64) -> Result<HorizonCalibration> {
    let gamma = functional_sd(res)?;
    let xi = calibrate_xi(res, &gamma, alpha)?;
    let (conformal_q, under_supported) = conformal_quantiles(res, alpha)?;
    Ok(HorizonCalibration {
        horizon: res.horizon(),
        m: res.m(),
        xi,
        gamma,
        conformal_q,
        under_supported,
    })
}

/// Calibrates every horizon; horizons are independent and run through `exec`.
pub fn calibrate(sets: &[ResidualSet], alpha: f64, exec: Execution) -> Result<CalibrationTable> {
    check_alpha(alpha)?;
    let horizons = exec::map(exec, sets, |r| calibrate_horizon(r, alpha))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(CalibrationTable { alpha, horizons })
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "expected {want} ages, got {got}"
        )))
    }
}
