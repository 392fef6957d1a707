//! Age grids and life-table death-count series.
//!
//! A [`LifeTableSeries`] holds one curve of death counts per calendar year on a
//! single-year age grid. Every year sums to the life-table radix. Series are
//! immutable after construction and can be shared freely across threads.

mod hmd;
mod synth;

pub use hmd::{read_hmd_lifetable, HmdLifeTable, HmdRow, HmdTable, HMD_COLUMNS};
pub use synth::{cosine_basis, synth_lifetable, synth_sex_pair, SynthSpec};

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default life-table radix (persons alive at age zero).
pub const DEFAULT_RADIX: f64 = 1e5;

/// Relative tolerance for per-year radix conservation.
pub const RADIX_TOL: f64 = 1e-9;

/// Ordered single-year ages; the last age may be open-ended ("110+").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeGrid {
    ages: Vec<u32>,
    open_last: bool,
}

impl AgeGrid {
    pub fn new(ages: Vec<u32>, open_last: bool) -> Result<Self> {
        if ages.len() < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 ages, got {}",
                ages.len()
            )));
        }
        if ages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(
                "ages must be strictly increasing".into(),
            ));
        }
        Ok(Self { ages, open_last })
    }

    /// Ages `0, 1, ..., n-2, (n-1)+`.
    pub fn single_years(n: usize) -> Result<Self> {
        Self::new((0..n as u32).collect(), true)
    }

    /// Builds a grid from labels such as `["0", "1", ..., "110+"]`.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut ages = Vec::with_capacity(labels.len());
        let mut open_last = false;
        for (i, label) in labels.iter().enumerate() {
            let label = label.as_ref().trim();
            let (digits, open) = match label.strip_suffix('+') {
                Some(d) => (d, true),
                None => (label, false),
            };
            if open && i + 1 != labels.len() {
                return Err(Error::InvalidGrid(format!(
                    "open-ended age {label} must be the last age"
                )));
            }
            let age: u32 = digits
                .parse()
                .map_err(|_| Error::InvalidGrid(format!("bad age label {label:?}")))?;
            ages.push(age);
            open_last = open;
        }
        Self::new(ages, open_last)
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn ages(&self) -> &[u32] {
        &self.ages
    }

    pub fn is_open_ended(&self) -> bool {
        self.open_last
    }

    pub fn label(&self, i: usize) -> String {
        if self.open_last && i + 1 == self.ages.len() {
            format!("{}+", self.ages[i])
        } else {
            self.ages[i].to_string()
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Other(String),
}

impl Sex {
    /// Short code used in report tables.
    pub fn code(&self) -> &str {
        match self {
            Sex::Female => "F",
            Sex::Male => "M",
            Sex::Other(s) => s,
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sex::Female => f.write_str("female"),
            Sex::Male => f.write_str("male"),
            Sex::Other(s) => f.write_str(s),
        }
    }
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f" | "female" | "females" => Ok(Sex::Female),
            "m" | "male" | "males" => Ok(Sex::Male),
            "" => Err(Error::Config("empty sex label".into())),
            _ => Ok(Sex::Other(s.to_string())),
        }
    }
}

pub(crate) fn check_years(years: &[i32]) -> Result<()> {
    if years.is_empty() {
        return Err(Error::InvalidSeries("no years".into()));
    }
    for w in years.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidSeries(format!(
                "years not strictly increasing at {}",
                w[1]
            )));
        }
        if w[1] != w[0] + 1 {
            return Err(Error::YearGap(w[0] + 1));
        }
    }
    Ok(())
}

/// Yearly life-table death counts `d_t(u)` (rows are years, columns ages).
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTableSeries {
    grid: AgeGrid,
    years: Vec<i32>,
    sex: Sex,
    values: DMatrix<f64>,
    radix: f64,
}

impl LifeTableSeries {
    /// Validates and renormalizes every year to sum to `radix`.
    pub fn new(
        grid: AgeGrid,
        years: Vec<i32>,
        sex: Sex,
        mut values: DMatrix<f64>,
        radix: f64,
    ) -> Result<Self> {
        if !(radix.is_finite() && radix > 0.0) {
            return Err(Error::InvalidSeries(format!(
                "radix must be positive, got {radix}"
            )));
        }
        check_years(&years)?;
        if values.nrows() != years.len() || values.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "values are {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                years.len(),
                grid.len()
            )));
        }
        for (t, &year) in years.iter().enumerate() {
            let mut sum = 0.0;
            for u in 0..grid.len() {
                let v = values[(t, u)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidSeries(format!(
                        "invalid count {v} at year {year}, age {}",
                        grid.label(u)
                    )));
                }
                sum += v;
            }
            if sum <= 0.0 {
                return Err(Error::InvalidSeries(format!("year {year} has no deaths")));
            }
            let scale = radix / sum;
            if scale != 1.0 {
                for u in 0..grid.len() {
                    values[(t, u)] *= scale;
                }
            }
        }
        Ok(Self {
            grid,
            years,
            sex,
            values,
            radix,
        })
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn sex(&self) -> &Sex {
        &self.sex
    }

    pub fn radix(&self) -> f64 {
        self.radix
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_ages(&self) -> usize {
        self.grid.len()
    }

    /// Death-count curve for the `t`-th year (by position).
    pub fn curve(&self, t: usize) -> Vec<f64> {
        self.values.row(t).iter().copied().collect()
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }

    /// Years `from..=to`, which must lie inside the series.
    pub fn between(&self, from: i32, to: i32) -> Result<Self> {
        match (self.year_index(from), self.year_index(to)) {
            (Some(a), Some(b)) if a <= b => Ok(Self {
                grid: self.grid.clone(),
                years: self.years[a..=b].to_vec(),
                sex: self.sex.clone(),
                values: self.values.rows(a, b - a + 1).into_owned(),
                radix: self.radix,
            }),
            _ => Err(Error::InvalidSeries(format!(
                "years {from}-{to} are not covered"
            ))),
        }
    }

    pub fn with_sex(mut self, sex: Sex) -> Self {
        self.sex = sex;
        self
    }

    /// `(year, age label)` of every zero count.
    pub fn zero_cells(&self) -> Vec<(i32, String)> {
        let mut out = Vec::new();
        for (t, &year) in self.years.iter().enumerate() {
            for u in 0..self.n_ages() {
                if self.values[(t, u)] == 0.0 {
                    out.push((year, self.grid.label(u)));
                }
            }
        }
        out
    }

    /// Largest relative deviation of a yearly total from the radix.
    pub fn max_radix_residual(&self) -> f64 {
        (0..self.n_years())
            .map(|t| (self.values.row(t).sum() - self.radix).abs() / self.radix)
            .fold(0.0, f64::max)
    }

    /// Writes `year,age,value` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, &self.years, &self.grid.labels(), &self.values)
    }
}

/// Death probabilities `q_x` per year, with `q = 1` at the last age.
#[derive(Debug, Clone, PartialEq)]
pub struct QxSeries {
    grid: AgeGrid,
    years: Vec<i32>,
    values: DMatrix<f64>,
}

impl QxSeries {
    pub fn new(grid: AgeGrid, years: Vec<i32>, values: DMatrix<f64>) -> Result<Self> {
        check_years(&years)?;
        if values.nrows() != years.len() || values.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "q values are {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                years.len(),
                grid.len()
            )));
        }
        let last = grid.len() - 1;
        for (t, &year) in years.iter().enumerate() {
            for u in 0..grid.len() {
                let q = values[(t, u)];
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::QxOutOfRange {
                        year,
                        age: grid.label(u),
                        value: q,
                    });
                }
            }
            if values[(t, last)] != 1.0 {
                return Err(Error::LastQxNotOne {
                    year,
                    value: values[(t, last)],
                });
            }
        }
        Ok(Self {
            grid,
            years,
            values,
        })
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Rebuilds death counts from death probabilities by the survivorship
/// recursion `d(x) = l(x) q(x)`, `l(x+1) = l(x) - d(x)`, `l(0) = radix`.
pub fn lifetable_from_qx(qx: &QxSeries, radix: f64, sex: Sex) -> Result<LifeTableSeries> {
    let (n, a) = (qx.values.nrows(), qx.values.ncols());
    let mut d = DMatrix::zeros(n, a);
    for t in 0..n {
        let mut alive = radix;
        for u in 0..a {
            let deaths = alive * qx.values[(t, u)];
            d[(t, u)] = deaths;
            alive -= deaths;
        }
    }
    LifeTableSeries::new(qx.grid.clone(), qx.years.clone(), sex, d, radix)
}

/// Writes a `year,age,value` CSV for any year-by-coordinate matrix.
pub fn write_matrix_csv<W: Write>(
    mut w: W,
    years: &[i32],
    labels: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    writeln!(w, "year,age,value")?;
    for (t, year) in years.iter().enumerate() {
        for (u, label) in labels.iter().enumerate().take(values.ncols()) {
            writeln!(w, "{year},{label},{}", values[(t, u)])?;
        }
    }
    Ok(())
}
