//! The declarative run configuration and its validation.
//!
//! A config is read from TOML, overridden by command-line flags and then
//! resolved into a [`Plan`] before any file is touched. Every problem found
//! here is a configuration error (exit code 2).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dxband::evaluation::BacktestConfig;
use dxband::fpca::MftsOptions;
use dxband::intervals::BandMapping;
use dxband::{CdfOptions, Execution, KRule, Method, ModelKind, ScoreModel, Sex, Transform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const OUTPUT_ENV: &str = "DXBAND_OUTPUT_DIR";
const FALLBACK_OUTPUT: &str = "dxband-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default = "default_sexes")]
    pub sexes: Vec<String>,
    #[serde(default = "default_transforms")]
    pub transforms: Vec<String>,
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    #[serde(default = "default_k_rules")]
    pub k_rules: Vec<String>,
    #[serde(default)]
    pub score_model: ScoreModel,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_approaches")]
    pub approaches: Vec<String>,
    #[serde(default = "default_mapping")]
    pub mapping: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub freeze_k: bool,
    /// Scale each sex to unit total variance before the joint decomposition.
    #[serde(default)]
    pub standardize_mfts: bool,
    /// Clamp degenerate CDF values instead of failing.
    #[serde(default)]
    pub cdf_clamp: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub plots: bool,
}

/// Either a synthetic spec or one HMD-format file per sex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub female: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub male: Option<PathBuf>,
}

/// Synthetic dataset parameters. The seed is the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_years: usize,
    pub n_ages: usize,
    pub n_components: usize,
    pub noise_sd: f64,
    pub start_year: i32,
    pub radix: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let d = dxband::data::SynthSpec::default();
        Self {
            n_years: d.n_years,
            n_ages: d.n_ages,
            n_components: d.n_components,
            noise_sd: d.noise_sd,
            start_year: d.start_year,
            radix: d.radix,
        }
    }
}

impl SynthConfig {
    pub fn spec(&self, seed: u64) -> dxband::data::SynthSpec {
        dxband::data::SynthSpec {
            n_years: self.n_years,
            n_ages: self.n_ages,
            n_components: self.n_components,
            noise_sd: self.noise_sd,
            seed,
            start_year: self.start_year,
            radix: self.radix,
        }
    }
}

/// Segment end years. The start year is the first year of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_end_year: i32,
    pub validation_end_year: i32,
    pub test_end_year: i32,
}

fn default_sexes() -> Vec<String> {
    vec!["female".into(), "male".into()]
}

fn default_transforms() -> Vec<String> {
    vec!["cdf".into(), "clr".into()]
}

fn default_models() -> Vec<String> {
    vec!["ufts".into(), "mfts".into(), "mlfts".into()]
}

fn default_k_rules() -> Vec<String> {
    vec!["evr".into()]
}

fn default_alphas() -> Vec<f64> {
    vec![0.2, 0.05]
}

fn default_approaches() -> Vec<String> {
    Method::ALL
        .iter()
        .map(|m| m.name().to_ascii_lowercase())
        .collect()
}

fn default_mapping() -> String {
    "endpoints".into()
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub alphas: Option<Vec<f64>>,
    pub plots: bool,
}

/// Where the data comes from, with paths resolved against the config file.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synth(dxband::data::SynthSpec),
    Files(Vec<(Sex, PathBuf)>),
}

/// A validated, fully resolved run.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: RunConfig,
    pub source: Source,
    pub sexes: Vec<Sex>,
    pub split: Option<SplitConfig>,
    pub backtests: Vec<BacktestConfig>,
    pub output_dir: PathBuf,
    pub plots: bool,
    pub seed: u64,
    /// sha256 of the effective config serialized as TOML, without the
    /// output directory.
    pub config_hash: String,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.output {
            self.output_dir = Some(dir.clone());
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(alphas) = &o.alphas {
            self.alphas = alphas.clone();
        }
        self.plots |= o.plots;
    }

    /// Checks everything that can be checked without reading data.
    /// `base` resolves relative data paths.
    pub fn resolve(self, base: &Path) -> Result<Plan> {
        fn nonempty<T>(name: &str, v: &[T]) -> Result<()> {
            if v.is_empty() {
                bail!("`{name}` must not be empty");
            }
            Ok(())
        }
        fn parse_all<T: std::str::FromStr>(name: &str, v: &[String]) -> Result<Vec<T>>
        where
            T::Err: std::fmt::Display,
        {
            nonempty(name, v)?;
            let mut out = Vec::with_capacity(v.len());
            for s in v {
                out.push(
                    s.parse::<T>()
                        .map_err(|e| anyhow::anyhow!("`{name}`: {e}"))?,
                );
            }
            Ok(out)
        }
        fn unique<T: PartialEq + std::fmt::Debug>(name: &str, v: &[T]) -> Result<()> {
            for (i, a) in v.iter().enumerate() {
                if v[..i].contains(a) {
                    bail!("`{name}` lists {a:?} twice");
                }
            }
            Ok(())
        }

        let transforms: Vec<Transform> = parse_all("transforms", &self.transforms)?;
        let models: Vec<ModelKind> = parse_all("models", &self.models)?;
        let k_rules: Vec<KRule> = parse_all("k_rules", &self.k_rules)?;
        let methods: Vec<Method> = parse_all("approaches", &self.approaches)?;
        unique("transforms", &transforms)?;
        unique("models", &models)?;
        unique("k_rules", &k_rules)?;
        unique("approaches", &methods)?;
        let mapping: BandMapping = self
            .mapping
            .parse()
            .map_err(|e| anyhow::anyhow!("`mapping`: {e}"))?;

        nonempty("alphas", &self.alphas)?;
        for &a in &self.alphas {
            if !(a > 0.0 && a < 1.0) {
                bail!("alpha {a} must lie in (0, 1)");
            }
        }
        unique("alphas", &self.alphas)?;

        nonempty("sexes", &self.sexes)?;
        let mut sexes = Vec::new();
        for s in &self.sexes {
            sexes.push(match s.to_ascii_lowercase().as_str() {
                "female" | "f" => Sex::Female,
                "male" | "m" => Sex::Male,
                _ => bail!("unknown sex {s:?} (expected female or male)"),
            });
        }
        unique("sexes", &sexes)?;
        sexes.sort();
        if models.iter().any(|m| m.is_joint()) && sexes.len() != 2 {
            bail!("MFTS and MLFTS need both sexes");
        }
        if let ScoreModel::Ar { max_order } = self.score_model {
            if max_order == 0 {
                bail!("`score_model.max_order` must be at least 1");
            }
        }

        let source = match (&self.data.synth, &self.data.female, &self.data.male) {
            (Some(s), None, None) => {
                if s.n_years < 6 || s.n_ages < 3 || s.n_components + 1 >= s.n_ages {
                    bail!("synthetic data needs n_years >= 6, n_ages >= 3 and n_components + 1 < n_ages");
                }
                if !(s.noise_sd >= 0.0
                    && s.noise_sd.is_finite()
                    && s.radix > 0.0
                    && s.radix.is_finite())
                {
                    bail!("synthetic noise_sd must be nonnegative and radix positive");
                }
                Source::Synth(s.spec(self.seed))
            }
            (None, f, m) => {
                let mut files = Vec::new();
                for sex in &sexes {
                    let p = match sex {
                        Sex::Female => f,
                        _ => m,
                    };
                    let Some(p) = p else {
                        bail!("`data.{sex}` is required for the requested sexes");
                    };
                    files.push((sex.clone(), base.join(p)));
                }
                Source::Files(files)
            }
            _ => bail!("`data` takes either `synth` or per-sex file paths, not both"),
        };

        let mfts = MftsOptions {
            standardize: self.standardize_mfts,
        };
        let cdf = CdfOptions {
            clamp: self.cdf_clamp,
        };
        let backtests = k_rules
            .iter()
            .map(|&k_rule| BacktestConfig {
                transforms: transforms.clone(),
                models: models.clone(),
                k_rule,
                score_model: self.score_model,
                alphas: self.alphas.clone(),
                methods: methods.clone(),
                mapping,
                cdf,
                mfts,
                freeze_k: self.freeze_k,
                exec: Execution::default(),
            })
            .collect();

        let output_dir = match &self.output_dir {
            Some(d) => d.clone(),
            None => std::env::var_os(OUTPUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT)),
        };
        // Where the outputs go does not change them.
        let hashed = RunConfig {
            output_dir: None,
            ..self.clone()
        };
        let canonical = toml::to_string(&hashed).context("serializing config")?;
        let config_hash = hex(&Sha256::digest(canonical.as_bytes()));

        Ok(Plan {
            source,
            sexes,
            split: self.split,
            backtests,
            output_dir,
            plots: self.plots,
            seed: self.seed,
            config_hash,
            config: self,
        })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
