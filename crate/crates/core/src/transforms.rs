//! Constraint-removing transforms for death-count curves and their inverses.
//!
//! * CLR: `G(u) = ln d(u) - mean_u ln d(u)`, inverted by a softmax scaled to
//!   the radix. Requires strictly positive counts.
//! * CDF/logit: cumulative mass `D(y)` for all but the last age, then
//!   `L(y) = ln(D / (1 - D))`. Zero counts in the interior are fine.
//!
//! The CDF pair carries the upper tail `1 - D` as its own suffix sum, so that
//! neither direction loses precision where `D` is close to one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{AgeGrid, LifeTableSeries, Sex};
use crate::error::{Error, Result};

/// Lower/upper clamp used by [`CdfOptions::clamp`].
pub const CDF_CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[serde(alias = "cdf-logit", alias = "cdflogit")]
    Cdf,
    Clr,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Cdf => "CDF",
            Transform::Clr => "CLR",
        }
    }

    pub fn forward(self, d: &LifeTableSeries, opts: CdfOptions) -> Result<UnconstrainedSeries> {
        match self {
            Transform::Clr => clr_forward(d),
            Transform::Cdf => cdf_forward(d, opts),
        }
    }

    pub fn inverse(self, curve: &[f64], radix: f64) -> Vec<f64> {
        match self {
            Transform::Clr => clr_inverse(curve, radix),
            Transform::Cdf => cdf_inverse(curve, radix),
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clr" => Ok(Transform::Clr),
            "cdf" | "cdf-logit" | "logit" => Ok(Transform::Cdf),
            _ => Err(Error::Config(format!(
                "unknown transform {s:?} (expected clr|cdf)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdfOptions {
    /// Clamp `D` into `[eps, 1 - eps]` instead of failing on degenerate rows.
    pub clamp: bool,
}

/// Transformed curves, one row per year, with what is needed to invert them.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedSeries {
    years: Vec<i32>,
    values: DMatrix<f64>,
    transform: Transform,
    radix: f64,
    grid: AgeGrid,
    sex: Sex,
}

impl UnconstrainedSeries {
    pub fn new(
        years: Vec<i32>,
        values: DMatrix<f64>,
        transform: Transform,
        radix: f64,
        grid: AgeGrid,
        sex: Sex,
    ) -> Result<Self> {
        crate::data::check_years(&years)?;
        let expected = match transform {
            Transform::Clr => grid.len(),
            Transform::Cdf => grid.len() - 1,
        };
        if values.nrows() != years.len() || values.ncols() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} series is {}x{}, expected {}x{}",
                transform.name(),
                values.nrows(),
                values.ncols(),
                years.len(),
                expected
            )));
        }
        Ok(Self {
            years,
            values,
            transform,
            radix,
            grid,
            sex,
        })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn radix(&self) -> f64 {
        self.radix
    }

    /// Age grid of the underlying death counts.
    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn sex(&self) -> &Sex {
        &self.sex
    }

    /// Number of coordinates per curve (ages for CLR, ages - 1 for CDF).
    pub fn grid_length(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn curve(&self, t: usize) -> Vec<f64> {
        self.values.row(t).iter().copied().collect()
    }

    /// The first `n` years, used by expanding-window fits.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.n_years());
        Self {
            years: self.years[..n].to_vec(),
            values: self.values.rows(0, n).into_owned(),
            transform: self.transform,
            radix: self.radix,
            grid: self.grid.clone(),
            sex: self.sex.clone(),
        }
    }

    /// Maps a curve in this space back to death counts.
    pub fn invert(&self, curve: &[f64]) -> Vec<f64> {
        self.transform.inverse(curve, self.radix)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        crate::data::write_matrix_csv(w, &self.years, &self.grid.labels(), &self.values)
    }
}

pub fn clr_forward(d: &LifeTableSeries) -> Result<UnconstrainedSeries> {
    let (n, a) = (d.n_years(), d.n_ages());
    let v = d.values();
    let mut out = DMatrix::zeros(n, a);
    for t in 0..n {
        for u in 0..a {
            if v[(t, u)] <= 0.0 {
                return Err(Error::ZeroOrNegativeCount {
                    year: d.years()[t],
                    age: d.grid().label(u),
                });
            }
        }
        let logs: Vec<f64> = (0..a).map(|u| v[(t, u)].ln()).collect();
        let centre = logs.iter().sum::<f64>() / a as f64;
        for u in 0..a {
            out[(t, u)] = logs[u] - centre;
        }
    }
    UnconstrainedSeries::new(
        d.years().to_vec(),
        out,
        Transform::Clr,
        d.radix(),
        d.grid().clone(),
        d.sex().clone(),
    )
}

/// Softmax of `g` scaled to `radix`.
pub fn clr_inverse(g: &[f64], radix: f64) -> Vec<f64> {
    let shift = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = g.iter().map(|x| (x - shift).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total * radix).collect()
}

/// Logit of the CDF of one death-count curve (length `a - 1`).
pub(crate) fn cdf_forward_curve(d: &[f64], clamp: bool) -> std::result::Result<Vec<f64>, usize> {
    let a = d.len();
    let total: f64 = d.iter().sum();
    let mut head = vec![0.0; a];
    let mut acc = 0.0;
    for u in 0..a {
        acc += d[u] / total;
        head[u] = acc;
    }
    let mut tail = vec![0.0; a];
    let mut acc = 0.0;
    for u in (0..a).rev() {
        tail[u] = acc;
        acc += d[u] / total;
    }
    let mut out = Vec::with_capacity(a - 1);
    for y in 0..a - 1 {
        let (mut lo, mut hi) = (head[y], tail[y]);
        if lo <= 0.0 || hi <= 0.0 {
            if !clamp {
                return Err(y);
            }
            lo = lo.max(CDF_CLAMP_EPS);
            hi = hi.max(CDF_CLAMP_EPS);
        }
        out.push((lo / hi).ln());
    }
    Ok(out)
}

pub fn cdf_forward(d: &LifeTableSeries, opts: CdfOptions) -> Result<UnconstrainedSeries> {
    let (n, a) = (d.n_years(), d.n_ages());
    let mut out = DMatrix::zeros(n, a - 1);
    for t in 0..n {
        let row = cdf_forward_curve(&d.curve(t), opts.clamp).map_err(|y| Error::DegenerateCdf {
            year: d.years()[t],
            age: d.grid().label(y),
        })?;
        for (y, v) in row.into_iter().enumerate() {
            out[(t, y)] = v;
        }
    }
    UnconstrainedSeries::new(
        d.years().to_vec(),
        out,
        Transform::Cdf,
        d.radix(),
        d.grid().clone(),
        d.sex().clone(),
    )
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse logit, a closing `1`, a running-maximum repair of the CDF, then
/// first differences scaled to `radix`. Output has one more entry than `l`.
pub fn cdf_inverse(l: &[f64], radix: f64) -> Vec<f64> {
    let m = l.len();
    // lower[y] = D(y), upper[y] = 1 - D(y), both evaluated stably.
    let mut lower = Vec::with_capacity(m + 1);
    let mut upper = Vec::with_capacity(m + 1);
    let (mut run_lo, mut run_hi) = (0.0_f64, 1.0_f64);
    for &x in l {
        let (lo, hi) = (logistic(x), logistic(-x));
        // running max of D, equivalently running min of 1 - D
        if lo > run_lo {
            run_lo = lo;
            run_hi = hi;
        }
        lower.push(run_lo);
        upper.push(run_hi);
    }
    lower.push(1.0);
    upper.push(0.0);

    let mut d = Vec::with_capacity(m + 1);
    let (mut prev_lo, mut prev_hi) = (0.0, 1.0);
    for z in 0..=m {
        let v = if lower[z] <= 0.5 {
            lower[z] - prev_lo
        } else {
            prev_hi - upper[z]
        };
        d.push(v.max(0.0));
        prev_lo = lower[z];
        prev_hi = upper[z];
    }
    let total: f64 = d.iter().sum();
    d.into_iter().map(|x| x / total * radix).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rows: &[&[f64]]) -> LifeTableSeries {
        let a = rows[0].len();
        LifeTableSeries::new(
            AgeGrid::single_years(a).unwrap(),
            (1975..1975 + rows.len() as i32).collect(),
            Sex::Female,
            DMatrix::from_fn(rows.len(), a, |i, j| rows[i][j]),
            1e5,
        )
        .unwrap()
    }

    #[test]
    fn clr_of_constant_is_zero() {
        let g = clr_forward(&series(&[&[5.0; 6]])).unwrap();
        assert!(g.curve(0).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn clr_three_ages() {
        let g = clr_forward(&series(&[&[2e4, 3e4, 5e4]])).unwrap().curve(0);
        // ln(2, 3, 5) minus their mean, evaluated independently
        let want = [
            -0.440_585_279_994_106,
            -0.035_120_171_885_942,
            0.475_705_451_880_049,
        ];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(g.iter().sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn clr_rejects_zero() {
        let err = clr_forward(&series(&[&[1.0, 0.0, 2.0]])).unwrap_err();
        assert_eq!(
            err,
            Error::ZeroOrNegativeCount {
                year: 1975,
                age: "1".into()
            }
        );
    }

    #[test]
    fn clr_inverse_uniform_and_shift_invariant() {
        let d = clr_inverse(&[0.0; 111], 1e5);
        assert!(d.iter().all(|x| (x - 1e5 / 111.0).abs() < 1e-9));
        let g = [0.3, -1.0, 2.5, 0.1];
        let shifted: Vec<f64> = g.iter().map(|x| x + 123.0).collect();
        let (a, b) = (clr_inverse(&g, 1e5), clr_inverse(&shifted, 1e5));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        // large values do not overflow
        let big = clr_inverse(&[1000.0, 1000.0], 2.0);
        assert_eq!(big, vec![1.0, 1.0]);
    }

    #[test]
    fn cdf_three_ages() {
        let l = cdf_forward(&series(&[&[2e4, 3e4, 5e4]]), CdfOptions::default())
            .unwrap()
            .curve(0);
        assert_eq!(l.len(), 2);
        assert!((l[0] - (-1.38629)).abs() < 1e-5);
        assert!(l[1].abs() < 1e-5);
    }

    #[test]
    fn cdf_interior_zero_repeats_value() {
        let l = cdf_forward(&series(&[&[2e4, 0.0, 8e4]]), CdfOptions::default())
            .unwrap()
            .curve(0);
        assert_eq!(l[0], l[1]);
        let back = cdf_inverse(&l, 1e5);
        assert_eq!(back[1], 0.0);
        assert!((back[0] - 2e4).abs() < 1e-9);
    }

    #[test]
    fn cdf_degenerate_and_clamp() {
        let s = series(&[&[0.0, 0.0, 0.0, 1e5]]);
        assert_eq!(
            cdf_forward(&s, CdfOptions::default()).unwrap_err(),
            Error::DegenerateCdf {
                year: 1975,
                age: "0".into()
            }
        );
        let clamped = cdf_forward(&s, CdfOptions { clamp: true }).unwrap();
        assert!(clamped.values().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn cdf_inverse_two_ages() {
        assert_eq!(cdf_inverse(&[0.0], 1e5), vec![5e4, 5e4]);
    }

    #[test]
    fn cdf_inverse_repairs_non_monotone() {
        // logit(0.6), logit(0.4), ...
        let l = [(0.6f64 / 0.4).ln(), (0.4f64 / 0.6).ln(), 1.0];
        let d = cdf_inverse(&l, 1e5);
        assert!(d.iter().all(|&x| x >= 0.0));
        assert!((d.iter().sum::<f64>() - 1e5).abs() < 1e-9);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn head_slices_years() {
        let s = clr_forward(&series(&[
            &[1.0, 2.0, 3.0],
            &[2.0, 2.0, 2.0],
            &[3.0, 1.0, 1.0],
        ]))
        .unwrap();
        let h = s.head(2);
        assert_eq!(h.years(), &[1975, 1976]);
        assert_eq!(h.values().nrows(), 2);
    }
}
