//! Expanding-window backtest and interval scoring.
//!
//! The sample is cut into training, validation and test segments. Residuals
//! from forecasts into the validation segment calibrate the bands; forecasts
//! into the test segment are scored by empirical coverage (ECP), its gap to
//! the nominal level (CPD), and the interval score.

mod backtest;
mod report;

pub use backtest::{
    expanding_backtest, BacktestConfig, BacktestResult, CellCalibration, CellKey, CellSummary,
    MethodResult, OriginK, SampleBand, UnderSupported, ValidationResiduals,
};
pub use report::{
    best_columns, calibration_csv, columns, detail_json, report_csv, report_rows, ReportRow,
    METRICS,
};

use serde::{Deserialize, Serialize};

use crate::error::{check_alpha, Error, Result};
use crate::intervals::IntervalBand;
use crate::stats::{mean, median};

/// Calendar-year boundaries of the three segments (ends inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub start_year: i32,
    pub train_end_year: i32,
    pub validation_end_year: i32,
    pub test_end_year: i32,
}

impl SplitSpec {
    pub fn new(
        start_year: i32,
        train_end_year: i32,
        validation_end_year: i32,
        test_end_year: i32,
    ) -> Result<Self> {
        let s = Self {
            start_year,
            train_end_year,
            validation_end_year,
            test_end_year,
        };
        let (a, b, c) = s.sizes_signed();
        if a < 2 || b < 2 || c < 2 {
            return Err(Error::InvalidSplit(format!(
                "segments must be ordered and at least 2 years long, got {a}/{b}/{c}"
            )));
        }
        Ok(s)
    }

    /// Equal thirds of `years`; any remainder goes to the test segment.
    pub fn thirds(years: &[i32]) -> Result<Self> {
        let n = years.len() as i32;
        let (Some(&first), true) = (years.first(), n >= 6) else {
            return Err(Error::InvalidSplit(format!(
                "need at least 6 years, got {n}"
            )));
        };
        let third = n / 3;
        Self::new(
            first,
            first + third - 1,
            first + 2 * third - 1,
            first + n - 1,
        )
    }

    fn sizes_signed(&self) -> (i32, i32, i32) {
        (
            self.train_end_year - self.start_year + 1,
            self.validation_end_year - self.train_end_year,
            self.test_end_year - self.validation_end_year,
        )
    }

    /// `(n_train, n_val, n_test)`.
    pub fn sizes(&self) -> (usize, usize, usize) {
        let (a, b, c) = self.sizes_signed();
        (a as usize, b as usize, c as usize)
    }

    /// Largest validation horizon, `n_val - 1`, so every horizon has at
    /// least two residual years.
    pub fn calibration_horizons(&self) -> usize {
        self.sizes().1 - 1
    }

    /// Horizons present in both phases.
    pub fn report_horizons(&self) -> usize {
        let (_, v, t) = self.sizes();
        (v - 1).min(t)
    }

    /// Number of (origin, horizon) pairs in the test phase.
    pub fn test_pairs(&self) -> usize {
        let t = self.sizes().2;
        t * (t + 1) / 2
    }

    /// Checks that `years` covers the split contiguously.
    pub fn check_covers(&self, years: &[i32]) -> Result<()> {
        match (years.first(), years.last()) {
            (Some(&a), Some(&b)) if a <= self.start_year && b >= self.test_end_year => Ok(()),
            _ => Err(Error::InvalidSplit(format!(
                "data do not cover {}-{}",
                self.start_year, self.test_end_year
            ))),
        }
    }
}

/// Fraction of (year, age) pairs whose actual value lies in the closed band.
pub fn ecp(bands: &[IntervalBand], actual: &[Vec<f64>]) -> Result<f64> {
    let (hit, n) = coverage_counts(bands, actual)?;
    Ok(hit as f64 / n as f64)
}

pub(crate) fn coverage_counts(
    bands: &[IntervalBand],
    actual: &[Vec<f64>],
) -> Result<(usize, usize)> {
    if bands.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} bands for {} actual curves",
            bands.len(),
            actual.len()
        )));
    }
    let (mut hit, mut n) = (0, 0);
    for (b, y) in bands.iter().zip(actual) {
        if b.len() != y.len() {
            return Err(Error::DimensionMismatch(
                "band and actual curve lengths differ".into(),
            ));
        }
        for (u, v) in y.iter().enumerate() {
            n += 1;
            hit += usize::from(b.contains(u, *v));
        }
    }
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok((hit, n))
}

/// `|ECP - (1 - alpha)|`.
pub fn cpd(ecp: f64, alpha: f64) -> f64 {
    (ecp - (1.0 - alpha)).abs()
}

/// Interval score: width plus `2/alpha` times the distance by which the
/// actual value falls outside.
pub fn interval_score(lb: f64, ub: f64, actual: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if lb > ub {
        return Err(Error::InvertedInterval {
            lower: lb,
            upper: ub,
        });
    }
    let k = 2.0 / alpha;
    let below = if actual < lb { k * (lb - actual) } else { 0.0 };
    let above = if actual > ub { k * (actual - ub) } else { 0.0 };
    Ok(ub - lb + below + above)
}

/// Mean interval score over every (year, age) pair.
pub fn mean_interval_score(bands: &[IntervalBand], actual: &[Vec<f64>]) -> Result<f64> {
    let (sum, n) = score_sum(bands, actual)?;
    Ok(sum / n as f64)
}

pub(crate) fn score_sum(bands: &[IntervalBand], actual: &[Vec<f64>]) -> Result<(f64, usize)> {
    coverage_counts(bands, actual)?;
    let mut sum = 0.0;
    let mut n = 0;
    for (b, y) in bands.iter().zip(actual) {
        for (u, v) in y.iter().enumerate() {
            sum += interval_score(b.lower[u], b.upper[u], *v, b.alpha)?;
            n += 1;
        }
    }
    Ok((sum, n))
}

/// Test-phase metrics at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    /// Evaluated (year, age) pairs.
    pub n_pairs: usize,
    pub ecp: f64,
    pub cpd: f64,
    pub mean_score: f64,
}

/// Means and medians of the per-horizon metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ecp_mean: f64,
    pub ecp_median: f64,
    pub cpd_mean: f64,
    pub cpd_median: f64,
    pub score_mean: f64,
    pub score_median: f64,
}

impl Aggregate {
    /// Values in [`METRICS`] order.
    pub fn values(&self) -> [f64; 6] {
        [
            self.ecp_mean,
            self.ecp_median,
            self.cpd_mean,
            self.cpd_median,
            self.score_mean,
            self.score_median,
        ]
    }
}

pub fn aggregate(per_h: &[HorizonMetrics]) -> Result<Aggregate> {
    if per_h.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let pick = |f: fn(&HorizonMetrics) -> f64| per_h.iter().map(f).collect::<Vec<_>>();
    let (e, c, s) = (pick(|m| m.ecp), pick(|m| m.cpd), pick(|m| m.mean_score));
    Ok(Aggregate {
        ecp_mean: mean(&e),
        ecp_median: median(&e),
        cpd_mean: mean(&c),
        cpd_median: median(&c),
        score_mean: mean(&s),
        score_median: median(&s),
    })
}

#[cfg(test)]
mod tests;
