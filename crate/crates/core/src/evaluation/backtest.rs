//! The expanding-window engine.
//!
//! Every (transform, model, origin) fit is independent, so the engine
//! flattens them into one task list for [`exec::map`]. Results are assembled
//! per cell in a fixed key order, which keeps the output identical under any
//! schedule.

use serde::{Deserialize, Serialize};

use super::{aggregate, cpd, Aggregate, HorizonMetrics, SplitSpec};
use crate::data::LifeTableSeries;
use crate::error::{check_alpha, Error, Result};
use crate::exec::{self, Execution};
use crate::fpca::{fit_frozen, fit_with, KRule, MftsOptions, ModelKind};
use crate::intervals::{
    calibrate, conformal_band, parametric_band, sd_band, total_variance, BandMapping,
    CalibrationTable, IntervalBand, Method, ResidualSet,
};
use crate::score::{forecast_model, ScoreModel};
use crate::transforms::{CdfOptions, Transform, UnconstrainedSeries};

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub transforms: Vec<Transform>,
    pub models: Vec<ModelKind>,
    pub k_rule: KRule,
    pub score_model: ScoreModel,
    pub alphas: Vec<f64>,
    pub methods: Vec<Method>,
    pub mapping: BandMapping,
    pub cdf: CdfOptions,
    pub mfts: MftsOptions,
    /// Reuse the component counts chosen at the first origin of each phase.
    pub freeze_k: bool,
    pub exec: Execution,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            transforms: vec![Transform::Cdf, Transform::Clr],
            models: vec![ModelKind::Ufts, ModelKind::Mfts, ModelKind::Mlfts],
            k_rule: KRule::default(),
            score_model: ScoreModel::Rwd,
            alphas: vec![0.2, 0.05],
            methods: Method::ALL.to_vec(),
            mapping: BandMapping::Endpoints,
            cdf: CdfOptions::default(),
            mfts: MftsOptions::default(),
            freeze_k: false,
            exec: Execution::default(),
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty()
            || self.models.is_empty()
            || self.alphas.is_empty()
            || self.methods.is_empty()
        {
            return Err(Error::Config(
                "transforms, models, alphas and approaches must be nonempty".into(),
            ));
        }
        self.alphas.iter().try_for_each(|&a| check_alpha(a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub transform: Transform,
    pub model: ModelKind,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!("{}-{}", self.transform.name(), self.model.name())
    }
}

/// Test-phase metrics of one (cell, sex, method, alpha).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub cell: CellKey,
    pub sex: String,
    pub method: Method,
    pub alpha: f64,
    pub horizons: Vec<HorizonMetrics>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCalibration {
    pub cell: CellKey,
    pub sex: String,
    pub table: CalibrationTable,
}

/// Phase-1 residual sets of one (cell, sex), one per calibration horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationResiduals {
    pub cell: CellKey,
    pub sex: String,
    pub sets: Vec<ResidualSet>,
}

/// A conformal quantile that had to fall back to the largest residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderSupported {
    pub cell: CellKey,
    pub sex: String,
    pub alpha: f64,
    pub horizon: usize,
    pub m: usize,
}

/// Component counts chosen at one origin: one entry per fit (per sex for
/// UFTS), each `[common, specific...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginK {
    pub origin_year: i32,
    pub k_selected: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: CellKey,
    pub origins: Vec<OriginK>,
    /// (origin, horizon) forecasts made in the test phase.
    pub test_pairs: usize,
}

/// One-step band from the first test origin, kept for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBand {
    pub cell: CellKey,
    pub sex: String,
    pub year: i32,
    pub actual: Vec<f64>,
    pub point: Vec<f64>,
    pub band: IntervalBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub split: SplitSpec,
    pub k_rule: String,
    pub score_model: ScoreModel,
    pub sexes: Vec<String>,
    /// Horizons `1..=report_horizons` enter the metrics.
    pub report_horizons: usize,
    pub results: Vec<MethodResult>,
    pub calibrations: Vec<CellCalibration>,
    pub under_supported: Vec<UnderSupported>,
    pub cells: Vec<CellSummary>,
    pub samples: Vec<SampleBand>,
    /// Not serialized; kept for inspection of the calibration step.
    #[serde(skip)]
    pub residuals: Vec<ValidationResiduals>,
}

impl BacktestResult {
    pub fn find(
        &self,
        cell: CellKey,
        sex: &str,
        method: Method,
        alpha: f64,
    ) -> Option<&MethodResult> {
        self.results
            .iter()
            .find(|r| r.cell == cell && r.sex == sex && r.method == method && r.alpha == alpha)
    }

    pub fn calibration(&self, cell: CellKey, sex: &str, alpha: f64) -> Option<&CalibrationTable> {
        self.calibrations
            .iter()
            .find(|c| c.cell == cell && c.sex == sex && c.table.alpha == alpha)
            .map(|c| &c.table)
    }
}

/// Forecast of one series at one horizon.
#[derive(Debug, Clone)]
struct SeriesForecast {
    counts: Vec<f64>,
    transformed: Vec<f64>,
    variance: Vec<f64>,
}

#[derive(Debug, Clone)]
struct OriginForecast {
    k_selected: Vec<Vec<usize>>,
    /// `[h - 1][series]`
    by_h: Vec<Vec<SeriesForecast>>,
}

/// Fit and forecast one origin. `n_fit` years enter the fit.
fn forecast_origin(
    xs: &[UnconstrainedSeries],
    model: ModelKind,
    n_fit: usize,
    max_h: usize,
    frozen: Option<&[Vec<usize>]>,
    cfg: &BacktestConfig,
) -> Result<OriginForecast> {
    let heads: Vec<UnconstrainedSeries> = xs.iter().map(|x| x.head(n_fit)).collect();
    // groups of series fitted together, as indices into `heads`
    let groups: Vec<Vec<usize>> = if model.is_joint() {
        vec![(0..heads.len()).collect()]
    } else {
        (0..heads.len()).map(|s| vec![s]).collect()
    };
    let mut fits = Vec::with_capacity(groups.len());
    for (g, members) in groups.iter().enumerate() {
        let data: Vec<&UnconstrainedSeries> = members.iter().map(|&s| &heads[s]).collect();
        let fit = match frozen {
            Some(ks) => fit_frozen(model, &data, &ks[g], cfg.mfts)?,
            None => fit_with(model, &data, cfg.k_rule, cfg.k_rule, cfg.mfts)?,
        };
        fits.push(fit);
    }
    let mut by_h = Vec::with_capacity(max_h);
    for h in 1..=max_h {
        let mut row: Vec<Option<SeriesForecast>> = vec![None; heads.len()];
        for (fit, members) in fits.iter().zip(&groups) {
            let fc = forecast_model(fit, h, cfg.score_model)?;
            for (j, &s) in members.iter().enumerate() {
                let transformed = fc.curves[j].clone();
                row[s] = Some(SeriesForecast {
                    counts: heads[s].invert(&transformed),
                    variance: total_variance(fit, j, &fc.scores)?,
                    transformed,
                });
            }
        }
        by_h.push(
            row.into_iter()
                .map(|f| f.expect("every series forecast"))
                .collect(),
        );
    }
    Ok(OriginForecast {
        k_selected: fits.iter().map(|f| f.k_selected()).collect(),
        by_h,
    })
}

/// Positions (0-based, relative to the split start) of the last training,
/// validation and test years.
struct Layout {
    train_end: usize,
    val_end: usize,
    test_end: usize,
    h_cal: usize,
    h_report: usize,
}

impl Layout {
    fn new(split: &SplitSpec) -> Self {
        let (a, b, c) = split.sizes();
        Self {
            train_end: a - 1,
            val_end: a + b - 1,
            test_end: a + b + c - 1,
            h_cal: split.calibration_horizons(),
            h_report: split.report_horizons(),
        }
    }

    /// Forecast origins (last fitted position) with their largest horizon.
    fn origins(&self) -> Vec<(usize, usize)> {
        let phase1 = (self.train_end..self.val_end).map(|o| (o, self.h_cal.min(self.val_end - o)));
        let phase2 = (self.val_end..self.test_end).map(|o| (o, self.test_end - o));
        phase1.chain(phase2).collect()
    }
}

/// Runs the two-phase expanding-window backtest on one or two series
/// (female first for joint models).
pub fn expanding_backtest(
    data: &[LifeTableSeries],
    split: &SplitSpec,
    cfg: &BacktestConfig,
) -> Result<BacktestResult> {
    cfg.validate()?;
    let first = data.first().ok_or(Error::EmptyEvaluation)?;
    if data.len() > 2 {
        return Err(Error::DimensionMismatch(format!(
            "at most two series, got {}",
            data.len()
        )));
    }
    if data
        .iter()
        .any(|d| d.years() != first.years() || d.grid() != first.grid())
    {
        return Err(Error::DimensionMismatch(
            "series cover different years or ages".into(),
        ));
    }
    if data.len() < 2 && cfg.models.iter().any(|m| m.is_joint()) {
        return Err(Error::Config("joint models need two series".into()));
    }
    split.check_covers(first.years())?;
    let data: Vec<LifeTableSeries> = data
        .iter()
        .map(|d| d.between(split.start_year, split.test_end_year))
        .collect::<Result<_>>()?;
    let sexes: Vec<String> = data.iter().map(|d| d.sex().code().to_string()).collect();
    let layout = Layout::new(split);
    let year_of = |pos: usize| split.start_year + pos as i32;

    let transformed: Vec<Vec<UnconstrainedSeries>> = cfg
        .transforms
        .iter()
        .map(|t| {
            data.iter()
                .map(|d| {
                    t.forward(d, cfg.cdf).map_err(|e| {
                        e.context(format!("transform {} sex {}", t.name(), d.sex().code()))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, CellKey)> = cfg
        .transforms
        .iter()
        .enumerate()
        .flat_map(|(ti, &transform)| {
            cfg.models
                .iter()
                .map(move |&model| (ti, CellKey { transform, model }))
        })
        .collect();
    let origins = layout.origins();

    // frozen counts come from the first origin of each phase
    let frozen: Vec<Option<[Vec<Vec<usize>>; 2]>> = if cfg.freeze_k {
        exec::map(cfg.exec, &cells, |(ti, key)| {
            let at = |o: usize| {
                forecast_origin(&transformed[*ti], key.model, o + 1, 0, None, cfg)
                    .map(|f| f.k_selected)
                    .map_err(|e| {
                        e.context(format!(
                            "stage freeze-k cell {} origin {}",
                            key.label(),
                            year_of(o)
                        ))
                    })
            };
            Ok::<_, Error>(Some([at(layout.train_end)?, at(layout.val_end)?]))
        })
        .into_iter()
        .collect::<Result<_>>()?
    } else {
        vec![None; cells.len()]
    };

    let tasks: Vec<(usize, usize, usize)> = (0..cells.len())
        .flat_map(|c| origins.iter().map(move |&(o, h)| (c, o, h)))
        .collect();
    let forecasts: Vec<OriginForecast> = exec::map(cfg.exec, &tasks, |&(c, o, max_h)| {
        let (ti, key) = &cells[c];
        let phase = usize::from(o >= layout.val_end);
        let ks = frozen[c].as_ref().map(|f| f[phase].as_slice());
        forecast_origin(&transformed[*ti], key.model, o + 1, max_h, ks, cfg).map_err(|e| {
            e.context(format!(
                "stage forecast cell {} origin {} ({})",
                key.label(),
                year_of(o),
                if phase == 0 { "calibration" } else { "test" }
            ))
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let actual = |s: usize, pos: usize| data[s].curve(pos);
    let radices: Vec<f64> = data.iter().map(|d| d.radix()).collect();
    let per_cell: Vec<CellOutput> = exec::map_range(cfg.exec, cells.len(), |c| {
        let (_, key) = cells[c];
        let slice = &forecasts[c * origins.len()..(c + 1) * origins.len()];
        let fc = |o: usize| {
            &slice[origins
                .iter()
                .position(|&(p, _)| p == o)
                .expect("origin scheduled")]
        };
        assemble_cell(key, &sexes, &radices, &layout, cfg, fc, &actual, &year_of).map(|mut out| {
            out.summary.origins = origins
                .iter()
                .zip(slice)
                .map(|(&(o, _), f)| OriginK {
                    origin_year: year_of(o),
                    k_selected: f.k_selected.clone(),
                })
                .collect();
            out
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut result = BacktestResult {
        split: *split,
        k_rule: cfg.k_rule.label(),
        score_model: cfg.score_model,
        sexes,
        report_horizons: layout.h_report,
        results: Vec::new(),
        calibrations: Vec::new(),
        under_supported: Vec::new(),
        cells: Vec::new(),
        samples: Vec::new(),
        residuals: Vec::new(),
    };
    for out in per_cell {
        result.results.extend(out.results);
        result.calibrations.extend(out.calibrations);
        result.under_supported.extend(out.under_supported);
        result.cells.push(out.summary);
        result.samples.extend(out.samples);
        result.residuals.extend(out.residuals);
    }
    Ok(result)
}

struct CellOutput {
    results: Vec<MethodResult>,
    calibrations: Vec<CellCalibration>,
    under_supported: Vec<UnderSupported>,
    summary: CellSummary,
    samples: Vec<SampleBand>,
    residuals: Vec<ValidationResiduals>,
}

#[allow(clippy::too_many_arguments)]
fn assemble_cell<'a>(
    key: CellKey,
    sexes: &[String],
    radices: &[f64],
    layout: &Layout,
    cfg: &BacktestConfig,
    fc: impl Fn(usize) -> &'a OriginForecast,
    actual: &impl Fn(usize, usize) -> Vec<f64>,
    year_of: &impl Fn(usize) -> i32,
) -> Result<CellOutput> {
    let ctx = |stage: &str, sex: &str, extra: String| {
        format!("stage {stage} cell {} sex {sex}{extra}", key.label())
    };
    let mut out = CellOutput {
        results: Vec::new(),
        calibrations: Vec::new(),
        under_supported: Vec::new(),
        summary: CellSummary {
            cell: key,
            origins: Vec::new(),
            test_pairs: (layout.val_end..layout.test_end)
                .map(|o| fc(o).by_h.len())
                .sum(),
        },
        samples: Vec::new(),
        residuals: Vec::new(),
    };

    for (s, sex) in sexes.iter().enumerate() {
        // phase 1: residual sets per horizon
        let sets: Vec<ResidualSet> = (1..=layout.h_cal)
            .map(|h| {
                let rows: Vec<Vec<f64>> = (layout.train_end..=layout.val_end - h)
                    .map(|o| {
                        let point = &fc(o).by_h[h - 1][s].counts;
                        actual(s, o + h)
                            .iter()
                            .zip(point)
                            .map(|(a, p)| a - p)
                            .collect()
                    })
                    .collect();
                ResidualSet::new(h, &rows)
                    .map_err(|e| e.context(ctx("residuals", sex, format!(" horizon {h}"))))
            })
            .collect::<Result<_>>()?;
        let tables: Vec<CalibrationTable> = cfg
            .alphas
            .iter()
            .map(|&alpha| {
                calibrate(&sets, alpha, Execution::Sequential)
                    .map_err(|e| e.context(ctx("calibrate", sex, format!(" alpha {alpha}"))))
            })
            .collect::<Result<_>>()?;

        // phase 2: bands and metrics per method, alpha and horizon
        let radix = radices[s];
        for &method in &cfg.methods {
            for (&alpha, table) in cfg.alphas.iter().zip(&tables) {
                let mut horizons = Vec::with_capacity(layout.h_report);
                for h in 1..=layout.h_report {
                    let (mut hit, mut n, mut score) = (0usize, 0usize, 0.0);
                    for o in layout.val_end..=layout.test_end - h {
                        let f = &fc(o).by_h[h - 1][s];
                        let band = build_band(
                            method,
                            h,
                            f,
                            table,
                            key.transform,
                            radix,
                            alpha,
                            cfg.mapping,
                        )
                        .map_err(|e| e.context(ctx("band", sex, format!(" horizon {h}"))))?;
                        let y = actual(s, o + h);
                        let (c, m) = super::coverage_counts(
                            std::slice::from_ref(&band),
                            std::slice::from_ref(&y),
                        )?;
                        let (sc, _) = super::score_sum(
                            std::slice::from_ref(&band),
                            std::slice::from_ref(&y),
                        )?;
                        hit += c;
                        n += m;
                        score += sc;
                        if h == 1 && o == layout.val_end {
                            out.samples.push(SampleBand {
                                cell: key,
                                sex: sex.clone(),
                                year: year_of(o + 1),
                                actual: y,
                                point: f.counts.clone(),
                                band,
                            });
                        }
                    }
                    let ecp = hit as f64 / n as f64;
                    horizons.push(HorizonMetrics {
                        horizon: h,
                        n_pairs: n,
                        ecp,
                        cpd: cpd(ecp, alpha),
                        mean_score: score / n as f64,
                    });
                }
                out.results.push(MethodResult {
                    cell: key,
                    sex: sex.clone(),
                    method,
                    alpha,
                    aggregate: aggregate(&horizons)?,
                    horizons,
                });
            }
        }

        if cfg.methods.contains(&Method::Conformal) {
            for table in &tables {
                for c in table
                    .horizons
                    .iter()
                    .filter(|c| c.under_supported && c.horizon <= layout.h_report)
                {
                    out.under_supported.push(UnderSupported {
                        cell: key,
                        sex: sex.clone(),
                        alpha: table.alpha,
                        horizon: c.horizon,
                        m: c.m,
                    });
                }
            }
        }
        out.calibrations
            .extend(tables.into_iter().map(|table| CellCalibration {
                cell: key,
                sex: sex.clone(),
                table,
            }));
        out.residuals.push(ValidationResiduals {
            cell: key,
            sex: sex.clone(),
            sets,
        });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn build_band(
    method: Method,
    h: usize,
    f: &SeriesForecast,
    table: &CalibrationTable,
    transform: Transform,
    radix: f64,
    alpha: f64,
    mapping: BandMapping,
) -> Result<IntervalBand> {
    let cal = || {
        table.get(h).ok_or(Error::InsufficientData {
            needed: h,
            got: table.horizons.len(),
        })
    };
    match method {
        Method::Sd => {
            let c = cal()?;
            sd_band(h, &f.counts, &c.gamma, c.xi, alpha)
        }
        Method::Conformal => {
            let c = cal()?;
            conformal_band(h, &f.counts, &c.conformal_q, alpha, c.under_supported)
        }
        Method::Parametric => parametric_band(
            h,
            &f.transformed,
            &f.variance,
            transform,
            radix,
            alpha,
            mapping,
        ),
    }
}
