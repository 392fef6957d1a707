//! Seeded synthetic life tables built in logit-CDF space.
//!
//! Each year is `mean + sum_k score_k(t) basis_k + noise`, where the bases are
//! orthonormal discrete cosines and the scores follow random walks with drift.
//! Curves are mapped back to death counts through the CDF inverse.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AgeGrid, LifeTableSeries, Sex, DEFAULT_RADIX};
use crate::error::{Error, Result};
use crate::transforms::cdf_inverse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_years: usize,
    pub n_ages: usize,
    pub n_components: usize,
    /// Standard deviation of iid noise added in logit-CDF space.
    pub noise_sd: f64,
    pub seed: u64,
    pub start_year: i32,
    pub radix: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_years: 48,
            n_ages: 111,
            n_components: 2,
            noise_sd: 0.01,
            seed: 1,
            start_year: 1975,
            radix: DEFAULT_RADIX,
        }
    }
}

impl SynthSpec {
    pub fn new(
        n_years: usize,
        n_ages: usize,
        n_components: usize,
        noise_sd: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_years,
            n_ages,
            n_components,
            noise_sd,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_ages < 3 {
            return Err(Error::Config("n_ages must be at least 3".into()));
        }
        if self.n_components >= self.n_ages {
            return Err(Error::Config("n_components must be below n_ages".into()));
        }
        if self.n_years < 1 {
            return Err(Error::Config("n_years must be positive".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Orthonormal discrete cosine `k` (1-based) on `m` points.
pub fn cosine_basis(k: usize, m: usize) -> Vec<f64> {
    let scale = (2.0 / m as f64).sqrt();
    (0..m)
        .map(|j| scale * (k as f64 * std::f64::consts::PI * (j as f64 + 0.5) / m as f64).cos())
        .collect()
}

/// Logistic age-at-death profile in logit-CDF space.
fn mean_curve(m: usize, location: f64, spread: f64) -> Vec<f64> {
    (0..m)
        .map(|j| (j as f64 - location * m as f64) / (m as f64 / spread))
        .collect()
}

/// Random walk with drift starting at zero, one value per year.
fn random_walk(rng: &mut ChaCha8Rng, n: usize, drift: f64, sd: f64) -> Vec<f64> {
    let innov = Normal::new(0.0, sd).expect("sd is finite");
    let mut s = 0.0;
    (0..n)
        .map(|_| {
            s += drift + innov.sample(rng);
            s
        })
        .collect()
}

fn component_scale(k: usize) -> f64 {
    (k as f64).powf(-1.5)
}

fn assemble(
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    mean: &[f64],
    parts: &[(Vec<f64>, Vec<f64>)],
    sex: Sex,
) -> Result<LifeTableSeries> {
    let m = spec.n_ages - 1;
    let noise = Normal::new(0.0, spec.noise_sd.max(0.0)).expect("finite sd");
    let mut d = DMatrix::zeros(spec.n_years, spec.n_ages);
    let mut row = vec![0.0; m];
    for t in 0..spec.n_years {
        row.copy_from_slice(mean);
        for (scores, basis) in parts {
            for j in 0..m {
                row[j] += scores[t] * basis[j];
            }
        }
        if spec.noise_sd > 0.0 {
            for v in row.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        for (u, v) in cdf_inverse(&row, spec.radix).into_iter().enumerate() {
            d[(t, u)] = v;
        }
    }
    let years = (spec.start_year..spec.start_year + spec.n_years as i32).collect();
    LifeTableSeries::new(
        AgeGrid::single_years(spec.n_ages)?,
        years,
        sex,
        d,
        spec.radix,
    )
}

fn planted_scores(spec: &SynthSpec, rng: &mut ChaCha8Rng, amplitude: f64) -> Vec<Vec<f64>> {
    (1..=spec.n_components)
        .map(|k| {
            let c = component_scale(k) * amplitude;
            let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
            random_walk(rng, spec.n_years, sign * 0.15 * c, 0.35 * c)
        })
        .collect()
}

/// One synthetic female series.
pub fn synth_lifetable(spec: &SynthSpec) -> Result<LifeTableSeries> {
    spec.validate()?;
    let m = spec.n_ages - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scores = planted_scores(spec, &mut rng, 1.0);
    let parts: Vec<_> = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, cosine_basis(i + 1, m)))
        .collect();
    assemble(
        spec,
        &mut rng,
        &mean_curve(m, 0.70, 14.0),
        &parts,
        Sex::Female,
    )
}

/// Correlated female and male series: shared component scores plus one
/// smaller sex-specific component each.
pub fn synth_sex_pair(spec: &SynthSpec) -> Result<(LifeTableSeries, LifeTableSeries)> {
    spec.validate()?;
    if spec.n_components + 1 >= spec.n_ages {
        return Err(Error::Config(
            "n_components too large for a sex pair".into(),
        ));
    }
    let m = spec.n_ages - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let common = planted_scores(spec, &mut rng, 1.0);
    let own_basis = cosine_basis(spec.n_components + 1, m);
    let own_scale = 0.4 * component_scale(spec.n_components + 1);
    let female_own = random_walk(&mut rng, spec.n_years, 0.05 * own_scale, 0.35 * own_scale);
    let male_own = random_walk(&mut rng, spec.n_years, -0.05 * own_scale, 0.35 * own_scale);

    let build = |own: Vec<f64>| -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut parts: Vec<_> = common
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), cosine_basis(i + 1, m)))
            .collect();
        parts.push((own, own_basis.clone()));
        parts
    };
    let female = assemble(
        spec,
        &mut rng,
        &mean_curve(m, 0.72, 14.0),
        &build(female_own),
        Sex::Female,
    )?;
    let male = assemble(
        spec,
        &mut rng,
        &mean_curve(m, 0.66, 13.0),
        &build(male_own),
        Sex::Male,
    )?;
    Ok((female, male))
}
