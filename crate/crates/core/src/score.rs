//! Extrapolation of principal-component score series.
//!
//! Each component is forecast on its own. Two models are provided: a random
//! walk with drift (the default) and an AR(p) with intercept whose order is
//! picked by AIC. Both return a point forecast and a forecast variance that
//! is nondecreasing in the horizon.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{BlockScores, FpcaModel, PcBlock};
use crate::stats::{mean, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ScoreModel {
    #[default]
    Rwd,
    Ar {
        max_order: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentForecast {
    pub point: f64,
    pub variance: f64,
}

/// Forecast of every retained component of one block at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreForecast {
    pub horizon: usize,
    pub point: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Random walk with drift: `last + h * drift`, variance
/// `s2 * h * (1 + 1 / (n - 1))` with `s2` the sample variance of differences.
pub fn forecast_rwd(series: &[f64], h: usize) -> Result<ComponentForecast> {
    if h == 0 {
        return Err(Error::ZeroHorizon);
    }
    let n = series.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let drift = mean(&diffs);
    let s2 = sample_variance(&diffs);
    let hf = h as f64;
    Ok(ComponentForecast {
        point: series[n - 1] + hf * drift,
        variance: s2 * hf * (1.0 + 1.0 / (n - 1) as f64),
    })
}

/// Least-squares AR fit with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub order: usize,
    pub intercept: f64,
    /// `phi_1 .. phi_p`
    pub coefs: Vec<f64>,
    /// Innovation variance.
    pub sigma2: f64,
    pub aic: f64,
}

/// Fits AR(`order`) on the observations from index `start` onward, so that
/// fits of different orders with the same `start` are comparable by AIC.
pub fn fit_ar(series: &[f64], order: usize, start: usize) -> Option<ArFit> {
    let n = series.len();
    if start < order || start >= n {
        return None;
    }
    let m = n - start;
    let x = DMatrix::from_fn(m, order + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            series[start + i - j]
        }
    });
    let y = DVector::from_iterator(m, series[start..].iter().copied());
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * m.max(order + 1) as f64 * f64::EPSILON * 16.0;
    if smax <= 0.0 || svd.rank(tol) < order + 1 {
        return None;
    }
    let beta = svd.solve(&y, tol).ok()?;
    if beta.iter().any(|b| !b.is_finite()) {
        return None;
    }
    let resid = &y - &x * &beta;
    let sse = resid.norm_squared();
    let params = order + 1;
    let dof = m.saturating_sub(params);
    let sigma2 = if dof > 0 {
        sse / dof as f64
    } else {
        sse / m as f64
    };
    Some(ArFit {
        order,
        intercept: beta[0],
        coefs: beta.iter().skip(1).copied().collect(),
        sigma2,
        aic: m as f64 * (sse / m as f64).ln() + 2.0 * params as f64,
    })
}

/// AR(p), p in `0..=max_order`, by minimum AIC; orders whose design is not
/// of full rank are skipped.
pub fn select_ar(series: &[f64], max_order: usize) -> Result<ArFit> {
    if series.len() < max_order + 3 {
        return Err(Error::InsufficientData {
            needed: max_order + 3,
            got: series.len(),
        });
    }
    let mut best = fit_ar(series, 0, max_order).expect("intercept-only design has full rank");
    for p in 1..=max_order {
        if let Some(f) = fit_ar(series, p, max_order) {
            if f.aic < best.aic {
                best = f;
            }
        }
    }
    Ok(best)
}

pub fn forecast_ar(series: &[f64], h: usize, max_order: usize) -> Result<ComponentForecast> {
    if h == 0 {
        return Err(Error::ZeroHorizon);
    }
    let fit = select_ar(series, max_order)?;
    let p = fit.order;
    let mut hist: Vec<f64> = series.to_vec();
    for _ in 0..h {
        let k = hist.len();
        let next = fit.intercept + (0..p).map(|i| fit.coefs[i] * hist[k - 1 - i]).sum::<f64>();
        hist.push(next);
    }
    // psi weights of the MA(infinity) form
    let mut psi = vec![1.0];
    for j in 1..h {
        let w = (1..=p.min(j))
            .map(|i| fit.coefs[i - 1] * psi[j - i])
            .sum::<f64>();
        psi.push(w);
    }
    Ok(ComponentForecast {
        point: *hist.last().unwrap(),
        variance: fit.sigma2 * psi.iter().map(|w| w * w).sum::<f64>(),
    })
}

pub fn forecast_component(
    series: &[f64],
    h: usize,
    model: ScoreModel,
) -> Result<ComponentForecast> {
    match model {
        ScoreModel::Rwd => forecast_rwd(series, h),
        ScoreModel::Ar { max_order } => forecast_ar(series, h, max_order),
    }
}

pub fn forecast_block(block: &PcBlock, h: usize, model: ScoreModel) -> Result<ScoreForecast> {
    let mut point = Vec::with_capacity(block.k_selected);
    let mut variance = Vec::with_capacity(block.k_selected);
    for k in 0..block.k_selected {
        let f = forecast_component(&block.score_series(k), h, model)?;
        point.push(f.point);
        variance.push(f.variance.max(0.0));
    }
    Ok(ScoreForecast {
        horizon: h,
        point,
        variance,
    })
}

/// Score forecasts for every block of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScoreForecast {
    pub common: ScoreForecast,
    pub specific: Vec<ScoreForecast>,
}

/// Point forecast curves (one per series, in transform space) plus the score
/// forecasts that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelForecast {
    pub curves: Vec<Vec<f64>>,
    pub scores: ModelScoreForecast,
}

pub fn forecast_model(
    model: &FpcaModel,
    h: usize,
    score_model: ScoreModel,
) -> Result<ModelForecast> {
    let scores = ModelScoreForecast {
        common: forecast_block(&model.common, h, score_model)?,
        specific: model
            .specific
            .iter()
            .map(|b| forecast_block(b, h, score_model))
            .collect::<Result<_>>()?,
    };
    let curves = model.reconstruct(&BlockScores {
        common: scores.common.point.clone(),
        specific: scores.specific.iter().map(|s| s.point.clone()).collect(),
    })?;
    Ok(ModelForecast { curves, scores })
}
