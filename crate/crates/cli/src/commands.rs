//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use dxband::data::{read_hmd_lifetable, synth_sex_pair, HmdTable};
use dxband::evaluation::{
    calibration_csv, columns, detail_json, expanding_backtest, report_csv, report_rows,
    BacktestConfig, BacktestResult, SplitSpec,
};
use dxband::fpca::fit_with;
use dxband::{CdfOptions, Execution, LifeTableSeries, Method, Sex, Transform};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, Overrides, Plan, RunConfig, Source};
use crate::plot;

/// How a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

/// Successful completion, possibly with under-supported horizons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    UnderSupported,
}

type CmdResult = Result<Outcome, Failure>;

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// Library errors whose root is a configuration problem keep exit code 2.
fn classify(e: dxband::Error) -> Failure {
    match e.root() {
        dxband::Error::Config(_)
        | dxband::Error::InvalidSplit(_)
        | dxband::Error::InvalidAlpha(_) => Failure::Config(e.into()),
        _ => Failure::Runtime(e.into()),
    }
}

pub fn load_plan(config: &Path, overrides: &Overrides) -> Result<Plan, Failure> {
    let mut cfg = RunConfig::load(config).map_err(Failure::Config)?;
    cfg.apply(overrides);
    let base = config.parent().unwrap_or(Path::new("."));
    cfg.resolve(base).map_err(Failure::Config)
}

pub fn load_data(plan: &Plan) -> Result<Vec<LifeTableSeries>, Failure> {
    match &plan.source {
        Source::Synth(spec) => {
            let (f, m) = synth_sex_pair(spec).map_err(classify)?;
            Ok([f, m]
                .into_iter()
                .filter(|s| plan.sexes.contains(s.sex()))
                .collect())
        }
        Source::Files(files) => files
            .iter()
            .map(|(sex, path)| {
                read_hmd_lifetable(path, sex.clone())
                    .map(|t| t.dx)
                    .with_context(|| format!("stage load sex {sex} file {}", path.display()))
                    .map_err(Failure::Runtime)
            })
            .collect(),
    }
}

pub fn resolve_split(plan: &Plan, data: &[LifeTableSeries]) -> Result<SplitSpec, Failure> {
    let years = data[0].years();
    let split = match plan.split {
        Some(s) => SplitSpec::new(
            years[0],
            s.train_end_year,
            s.validation_end_year,
            s.test_end_year,
        ),
        None => SplitSpec::thirds(years),
    }
    .map_err(classify)?;
    split.check_covers(years).map_err(classify)?;
    Ok(split)
}

fn run_backtests(
    plan: &Plan,
    data: &[LifeTableSeries],
    split: &SplitSpec,
    exec: Execution,
    methods: Option<&[Method]>,
) -> Result<Vec<BacktestResult>, Failure> {
    plan.backtests
        .iter()
        .map(|b| {
            let cfg = BacktestConfig {
                exec,
                methods: methods.map_or_else(|| b.methods.clone(), <[Method]>::to_vec),
                ..b.clone()
            };
            expanding_backtest(data, split, &cfg)
                .map_err(|e| e.context(format!("k rule {}", cfg.k_rule.label())))
                .map_err(classify)
        })
        .collect()
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    library_version: &'a str,
    seed: u64,
    config_sha256: &'a str,
    config: &'a str,
    split: SplitSpec,
    under_supported: usize,
    artifacts: Vec<Artifact>,
}

/// Collects files in memory so that nothing is written before every
/// computation has succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, data: impl Into<Vec<u8>>) {
        self.files.push((name.into(), data.into()));
    }

    fn commit(
        mut self,
        command: &str,
        plan: &Plan,
        split: SplitSpec,
        under_supported: usize,
    ) -> anyhow::Result<()> {
        let artifacts = self
            .files
            .iter()
            .map(|(name, data)| Artifact {
                path: name.clone(),
                bytes: data.len(),
                sha256: hex(&Sha256::digest(data)),
            })
            .collect();
        let config = toml::to_string(&plan.config)?;
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            library_version: dxband::VERSION,
            seed: plan.seed,
            config_sha256: &plan.config_hash,
            config: &config,
            split,
            under_supported,
            artifacts,
        };
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        self.add("manifest.json", json);
        for (name, data) in &self.files {
            let path = self.dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(&path, data).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn file_label(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

fn report_under_supported(results: &[BacktestResult]) -> usize {
    let all: Vec<_> = results.iter().flat_map(|r| &r.under_supported).collect();
    if all.is_empty() {
        return 0;
    }
    eprintln!(
        "warning: {} conformal quantile(s) fell back to the largest residual (listed in detail.json)",
        all.len()
    );
    let mut alphas: Vec<f64> = Vec::new();
    for u in &all {
        if !alphas.contains(&u.alpha) {
            alphas.push(u.alpha);
        }
    }
    for a in alphas {
        let mut hs: Vec<usize> = all
            .iter()
            .filter(|u| u.alpha == a)
            .map(|u| u.horizon)
            .collect();
        hs.sort_unstable();
        hs.dedup();
        let max_m = all
            .iter()
            .filter(|u| u.alpha == a)
            .map(|u| u.m)
            .max()
            .unwrap_or(0);
        let hs: Vec<String> = hs.iter().map(usize::to_string).collect();
        eprintln!("  alpha {a}: horizons {} (M <= {max_m})", hs.join(","));
    }
    all.len()
}

pub fn run(config: &Path, overrides: &Overrides, exec: Execution) -> CmdResult {
    let plan = load_plan(config, overrides)?;
    let data = load_data(&plan)?;
    let split = resolve_split(&plan, &data)?;
    let started = Instant::now();
    let results = run_backtests(&plan, &data, &split, exec, None)?;

    let mut out = Outputs::new(&plan.output_dir);
    out.add("report.csv", report_csv(&results));
    out.add("calibration.csv", calibration_csv(&results));
    out.add("detail.json", detail_json(&results) + "\n");
    out.add(
        "results.json",
        serde_json::to_string(&results).map_err(runtime)? + "\n",
    );
    if plan.plots {
        for d in &data {
            out.add(
                format!("plots/curves_{}.svg", d.sex().code()),
                plot::curve_fan(d),
            );
        }
        for r in &results {
            for s in &r.samples {
                let name = format!(
                    "plots/band_{}_{}_{}_{}_a{}.svg",
                    file_label(&r.k_rule),
                    s.cell.label(),
                    s.sex,
                    s.band.method.name(),
                    s.band.alpha
                );
                out.add(name, plot::band(s, data[0].grid()));
            }
        }
    }
    let n_under = report_under_supported(&results);
    out.commit("run", &plan, split, n_under).map_err(runtime)?;
    eprintln!(
        "backtest finished in {:.1} s; {} cell(s) x {} k rule(s); outputs in {}",
        started.elapsed().as_secs_f64(),
        columns(&results).len(),
        results.len(),
        plan.output_dir.display()
    );
    print!("{}", render_report(&results));
    Ok(if n_under > 0 {
        Outcome::UnderSupported
    } else {
        Outcome::Ok
    })
}

pub fn calibrate(config: &Path, overrides: &Overrides, exec: Execution) -> CmdResult {
    let plan = load_plan(config, overrides)?;
    let data = load_data(&plan)?;
    let split = resolve_split(&plan, &data)?;
    // The calibration step does not depend on the approach; the cheapest one
    // keeps the test phase short.
    let results = run_backtests(&plan, &data, &split, exec, Some(&[Method::Sd]))?;
    let csv = calibration_csv(&results);
    let tables: Vec<_> = results
        .iter()
        .map(|r| (&r.k_rule, &r.calibrations))
        .collect();
    let mut out = Outputs::new(&plan.output_dir);
    out.add("calibration.csv", csv.clone());
    out.add(
        "calibration.json",
        serde_json::to_string_pretty(&tables).map_err(runtime)? + "\n",
    );
    out.commit("calibrate", &plan, split, 0).map_err(runtime)?;
    print!("{csv}");
    Ok(Outcome::Ok)
}

pub fn fit(config: &Path, overrides: &Overrides) -> CmdResult {
    let plan = load_plan(config, overrides)?;
    let data = load_data(&plan)?;
    let split = resolve_split(&plan, &data)?;
    let train: Vec<LifeTableSeries> = data
        .iter()
        .map(|d| d.between(split.start_year, split.train_end_year))
        .collect::<Result<_, _>>()
        .map_err(classify)?;

    let mut out = Outputs::new(&plan.output_dir);
    let mut summary = format!(
        "fit on {}-{} ({} years)\n",
        split.start_year,
        split.train_end_year,
        train[0].n_years()
    );
    for b in &plan.backtests {
        for &t in &b.transforms {
            let x: Vec<_> = train
                .iter()
                .map(|d| t.forward(d, b.cdf))
                .collect::<Result<_, _>>()
                .map_err(classify)?;
            for &kind in &b.models {
                let groups: Vec<(String, Vec<&dxband::UnconstrainedSeries>)> = if kind.is_joint() {
                    vec![("joint".into(), x.iter().collect())]
                } else {
                    x.iter()
                        .map(|s| (s.sex().code().to_string(), vec![s]))
                        .collect()
                };
                for (who, series) in groups {
                    let label = format!("{}-{}", t.name(), kind.name());
                    let model = fit_with(kind, &series, b.k_rule, b.k_rule, b.mfts)
                        .map_err(|e| e.context(format!("stage fit cell {label} sex {who}")))
                        .map_err(classify)?;
                    let total: f64 = model.common.eigenvalues.iter().sum();
                    let kept: f64 = model.common.eigenvalues[..model.common.k_selected]
                        .iter()
                        .sum();
                    let share = if total > 0.0 { kept / total } else { 1.0 };
                    let _ = writeln!(
                        summary,
                        "{label:<10} {who:<6} {:<6} K = {:?}  leading share {:.4}",
                        b.k_rule.label(),
                        model.k_selected(),
                        share
                    );
                    out.add(
                        format!(
                            "models/{label}_{who}_{}.json",
                            file_label(&b.k_rule.label())
                        ),
                        model.to_json() + "\n",
                    );
                }
            }
        }
    }
    out.add("fit.txt", summary.clone());
    out.commit("fit", &plan, split, 0).map_err(runtime)?;
    print!("{summary}");
    Ok(Outcome::Ok)
}

pub fn report(input: &Path, csv: bool) -> CmdResult {
    let path = input.join("results.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(runtime)?;
    let results: Vec<BacktestResult> = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(runtime)?;
    if csv {
        print!("{}", report_csv(&results));
    } else {
        print!("{}", render_report(&results));
    }
    Ok(Outcome::Ok)
}

/// Fixed-width text version of the report grid, `*` marking the best cell.
pub fn render_report(results: &[BacktestResult]) -> String {
    let cols = columns(results);
    let labels: Vec<String> = cols.iter().map(|c| c.label()).collect();
    let width = labels.iter().map(String::len).max().unwrap_or(8).max(10) + 1;
    let mut out = String::new();
    let mut block = None;
    for row in report_rows(results) {
        let key = (row.alpha.to_bits(), row.k_rule.clone(), row.sex.clone());
        if block.as_ref() != Some(&key) {
            let _ = writeln!(
                out,
                "\nalpha = {}, k rule {}, sex {}\n{:<10}{:<12}{}",
                row.alpha,
                row.k_rule,
                row.sex,
                "metric",
                "approach",
                labels
                    .iter()
                    .map(|l| format!("{l:>width$}"))
                    .collect::<String>()
            );
            block = Some(key);
        }
        let _ = write!(out, "{:<10}{:<12}", row.metric, row.approach.name());
        for (i, v) in row.values.iter().enumerate() {
            let mark = if row.best.contains(&i) { "*" } else { " " };
            let cell = v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}{mark}"));
            let _ = write!(out, "{cell:>width$}");
        }
        out.push('\n');
    }
    out
}

pub fn validate_data(path: &Path, sex: Sex) -> CmdResult {
    let table = HmdTable::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(runtime)?;
    let lt = read_hmd_lifetable(path, sex)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(runtime)?;
    let years = &table.years;
    let zeros = table.zero_dx_cells();
    println!(
        "years {}\u{2013}{}, ages {}\u{2013}{}, zero counts: {} cells",
        years[0],
        years[years.len() - 1],
        table.grid.label(0),
        table.grid.label(table.grid.len() - 1),
        zeros.len()
    );
    if !zeros.is_empty() {
        let cells: Vec<String> = zeros.iter().map(|(y, a)| format!("{y}/{a}")).collect();
        println!("zero-count cells (year/age): {}", cells.join(", "));
        println!("CLR transform: not applicable (zero counts); CDF transform: applicable");
    } else {
        println!("CLR transform: applicable; CDF transform: applicable");
    }
    let a = table.grid.len();
    let radix = lt.dx.radix();
    println!("radix {radix}; yearly sum of dx minus radix:");
    for (t, y) in years.iter().enumerate() {
        let sum: f64 = table.rows[t * a..(t + 1) * a].iter().map(|r| r.dx()).sum();
        println!("  {y}: {:+}", sum - radix);
    }
    let rebuilt = lt.rebuilt().map_err(|e| runtime(anyhow!(e)))?;
    let worst = lt
        .dx
        .values()
        .iter()
        .zip(rebuilt.values().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    println!("max |dx - dx rebuilt from qx|: {worst:.3}");
    Ok(Outcome::Ok)
}

pub fn transform(
    path: &Path,
    sex: Sex,
    method: Transform,
    clamp: bool,
    output: Option<&Path>,
) -> CmdResult {
    let lt = read_hmd_lifetable(path, sex)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(runtime)?;
    let x = method
        .forward(&lt.dx, CdfOptions { clamp })
        .map_err(|e| e.context(format!("stage transform {}", method.name())))
        .map_err(classify)?;
    let mut buf = Vec::new();
    x.write_csv(&mut buf).map_err(|e| runtime(anyhow!(e)))?;
    match output {
        Some(p) => fs::write(p, &buf)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(runtime)?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(Outcome::Ok)
}
