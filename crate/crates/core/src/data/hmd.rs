//! Reader and writer for HMD/JMD period life-table text files.
//!
//! The format is whitespace-delimited with the header
//! `Year Age mx qx ax lx dx Lx Tx ex`, optionally preceded by free-text
//! preamble lines. The oldest age is written `110+` and missing values `.`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::{check_years, AgeGrid, LifeTableSeries, QxSeries, Sex};
use crate::error::{Error, Result};

pub const HMD_COLUMNS: [&str; 10] = [
    "Year", "Age", "mx", "qx", "ax", "lx", "dx", "Lx", "Tx", "ex",
];

/// One parsed data row. Numeric columns are in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct HmdRow {
    pub year: i32,
    pub age: String,
    /// `mx qx ax lx dx Lx Tx ex`
    pub fields: [f64; 8],
}

impl HmdRow {
    pub fn qx(&self) -> f64 {
        self.fields[1]
    }

    pub fn lx(&self) -> f64 {
        self.fields[3]
    }

    pub fn dx(&self) -> f64 {
        self.fields[4]
    }
}

/// Decimal places used when writing each numeric column.
const PRECISION: [usize; 8] = [5, 5, 2, 0, 0, 0, 0, 2];

#[derive(Debug, Clone, PartialEq)]
pub struct HmdTable {
    pub preamble: Vec<String>,
    pub grid: AgeGrid,
    pub years: Vec<i32>,
    /// Year-major rows, `grid.len()` per year.
    pub rows: Vec<HmdRow>,
}

impl HmdTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut preamble = Vec::new();
        let mut header_seen = false;
        let mut rows: Vec<HmdRow> = Vec::new();
        let mut lines_seen = 0usize;

        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                if !header_seen {
                    preamble.push(line.to_string());
                }
                continue;
            }
            lines_seen += 1;
            let tokens: Vec<&str> = trimmed.split_whitespace().collect();
            if !header_seen {
                if tokens[0] == "Year" {
                    if tokens != HMD_COLUMNS {
                        return Err(Error::MalformedHeader(format!(
                            "line {lineno}: expected {:?}, got {:?}",
                            HMD_COLUMNS.join(" "),
                            trimmed
                        )));
                    }
                    header_seen = true;
                } else {
                    preamble.push(line.to_string());
                }
                continue;
            }
            if tokens.len() != HMD_COLUMNS.len() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 10 fields, found {}", tokens.len()),
                });
            }
            let year: i32 = tokens[0].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad year {:?}", tokens[0]),
            })?;
            let age = tokens[1].to_string();
            let mut fields = [0.0; 8];
            for (k, tok) in tokens[2..].iter().enumerate() {
                if *tok == "." {
                    return Err(Error::MissingValue { year, age });
                }
                fields[k] = tok.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad {} value {:?}", HMD_COLUMNS[k + 2], tok),
                })?;
            }
            rows.push(HmdRow { year, age, fields });
        }

        if lines_seen == 0 {
            return Err(Error::Parse {
                line: 0,
                message: "empty file".into(),
            });
        }
        if !header_seen {
            return Err(Error::MalformedHeader(
                "no `Year Age mx ...` header row".into(),
            ));
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "no data rows".into(),
            });
        }

        // Group consecutive rows by year.
        let mut years: Vec<i32> = Vec::new();
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if years.last() != Some(&r.year) {
                if years.contains(&r.year) {
                    return Err(Error::InvalidSeries(format!(
                        "rows for year {} are not contiguous",
                        r.year
                    )));
                }
                years.push(r.year);
                blocks.push(Vec::new());
            }
            blocks.last_mut().unwrap().push(i);
        }
        check_years(&years)?;

        let first_labels: Vec<&str> = blocks[0].iter().map(|&i| rows[i].age.as_str()).collect();
        let grid = AgeGrid::from_labels(&first_labels)?;
        let labels = grid.labels();
        for (b, &year) in blocks.iter().zip(&years) {
            let got: Vec<&str> = b.iter().map(|&i| rows[i].age.as_str()).collect();
            if got.len() != labels.len() || got.iter().zip(&labels).any(|(g, l)| g != l) {
                let missing: Vec<String> = labels
                    .iter()
                    .filter(|l| !got.contains(&l.as_str()))
                    .cloned()
                    .collect();
                if missing.is_empty() {
                    return Err(Error::InvalidSeries(format!(
                        "year {year}: ages differ from the first year's grid"
                    )));
                }
                return Err(Error::MissingAges { year, missing });
            }
        }

        Ok(Self {
            preamble,
            grid,
            years,
            rows,
        })
    }

    fn column(&self, k: usize) -> DMatrix<f64> {
        let a = self.grid.len();
        DMatrix::from_fn(self.years.len(), a, |t, u| self.rows[t * a + u].fields[k])
    }

    pub fn qx(&self) -> Result<QxSeries> {
        QxSeries::new(self.grid.clone(), self.years.clone(), self.column(1))
    }

    /// Death counts from the `dx` column; the radix is `lx` at the first age.
    pub fn dx(&self, sex: Sex) -> Result<LifeTableSeries> {
        let radix = self.rows[0].lx();
        LifeTableSeries::new(
            self.grid.clone(),
            self.years.clone(),
            sex,
            self.column(4),
            radix,
        )
    }

    /// `(year, age)` cells whose reported `dx` is zero.
    pub fn zero_dx_cells(&self) -> Vec<(i32, String)> {
        self.rows
            .iter()
            .filter(|r| r.dx() == 0.0)
            .map(|r| (r.year, r.age.clone()))
            .collect()
    }

    /// Writes the table back in HMD layout at the format's printed precision.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for line in &self.preamble {
            writeln!(w, "{line}")?;
        }
        writeln!(
            w,
            "{:>6}{:>8}{:>11}{:>9}{:>6}{:>8}{:>7}{:>8}{:>9}{:>7}",
            "Year", "Age", "mx", "qx", "ax", "lx", "dx", "Lx", "Tx", "ex"
        )?;
        const WIDTH: [usize; 8] = [11, 9, 6, 8, 7, 8, 9, 7];
        for r in &self.rows {
            write!(w, "{:>6}{:>8}", r.year, r.age)?;
            for k in 0..8 {
                write!(
                    w,
                    "{:>width$.prec$}",
                    r.fields[k],
                    width = WIDTH[k],
                    prec = PRECISION[k]
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Both views of an HMD file: raw probabilities and reported death counts.
#[derive(Debug, Clone)]
pub struct HmdLifeTable {
    pub table: HmdTable,
    pub qx: QxSeries,
    pub dx: LifeTableSeries,
}

impl HmdLifeTable {
    /// Death counts rebuilt from `qx` at the file's radix.
    pub fn rebuilt(&self) -> Result<LifeTableSeries> {
        super::lifetable_from_qx(&self.qx, self.dx.radix(), self.dx.sex().clone())
    }
}

pub fn read_hmd_lifetable(path: impl AsRef<Path>, sex: Sex) -> Result<HmdLifeTable> {
    let table = HmdTable::read(path)?;
    let qx = table.qx()?;
    let dx = table.dx(sex)?;
    Ok(HmdLifeTable { table, qx, dx })
}
