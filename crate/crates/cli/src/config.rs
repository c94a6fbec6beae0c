//! Run configuration: TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cse_core::dataset::{Protocol, WINDOW};
use cse_core::evaluation::TableFormat;
use cse_core::models::{parse_members, M1Config, M2Config, M3Config, ModelKind, Recipe};
use cse_core::pipeline::ExperimentConfig;
use cse_core::synth::SceneConfig;
use serde::{Deserialize, Serialize};

use crate::error::user;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CSE_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub stride: usize,
    pub format: TableFormat,
    pub members: Vec<ModelKind>,
    pub protocol: Protocol,
    pub folds: usize,
    pub fold_average: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            stride: WINDOW,
            format: TableFormat::Csv,
            members: ModelKind::MEMBERS.to_vec(),
            protocol: Protocol::Stratified,
            folds: 5,
            fold_average: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub run: RunSection,
    pub recipe: Recipe,
    pub head: Recipe,
    pub m1: M1Config,
    pub m2: M2Config,
    pub m3: M3Config,
    /// The generator seed always follows `run.seed`.
    pub synth: SceneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            paths: Paths::default(),
            run: RunSection::default(),
            recipe: e.recipe,
            head: e.head,
            m1: e.m1,
            m2: e.m2,
            m3: e.m3,
            synth: SceneConfig::default(),
        }
    }
}

/// Command-line values that replace file settings of the same name.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub members: Option<String>,
    pub folds: Option<usize>,
    pub stride: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub protocol: Option<String>,
    pub corpus: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub clips: Option<usize>,
    pub fold_average: Option<bool>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| user(format!("cannot read config {}: {e}", p.display())))?;
                let raw: toml::Table = toml::from_str(&text).map_err(|e| user(format!("{}: {e}", p.display())))?;
                if raw.get("synth").and_then(|s| s.get("seed")).is_some() {
                    return Err(user(format!(
                        "{}: `synth.seed` is not settable; the generator uses `run.seed` (or --seed)",
                        p.display()
                    )));
                }
                let cfg: RunConfig = toml::from_str(&text).map_err(|e| user(format!("{}: {e}", p.display())))?;
                cfg
            }
            None => RunConfig::default(),
        };
        cfg.apply(o)?;
        cfg.synth.seed = cfg.run.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = &o.members {
            self.run.members = parse_members(v).context("--members")?;
        }
        if let Some(v) = o.folds {
            self.run.folds = v;
        }
        if let Some(v) = o.stride {
            self.run.stride = v;
        }
        if let Some(v) = &o.format {
            self.run.format = v.parse().context("--format")?;
        }
        if let Some(v) = &o.protocol {
            self.run.protocol = v.parse().context("--protocol")?;
        }
        if let Some(v) = &o.out {
            self.paths.out = Some(v.clone());
        }
        if let Some(v) = &o.corpus {
            self.paths.corpus = Some(v.clone());
        }
        if let Some(v) = &o.split {
            self.paths.split = Some(v.clone());
        }
        if let Some(v) = o.epochs {
            self.recipe.epochs = v;
        }
        if let Some(v) = o.clips {
            self.synth.clips = v;
        }
        if let Some(v) = o.fold_average {
            self.run.fold_average = v;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.run.stride == 0 {
            return Err(user("stride must be >= 1"));
        }
        if self.recipe.epochs == 0 || self.recipe.batch == 0 {
            return Err(user("recipe epochs and batch must be >= 1"));
        }
        self.experiment().validate()?;
        self.synth.validate()?;
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let mut members = self.run.members.clone();
        members.sort();
        members.dedup();
        ExperimentConfig {
            members,
            protocol: self.run.protocol,
            folds: self.run.folds,
            fold_seed: self.run.seed,
            seed: self.run.seed,
            recipe: self.recipe,
            head: self.head,
            m1: self.m1,
            m2: self.m2,
            m3: self.m3,
            fold_average: self.run.fold_average,
        }
    }

    /// Output root: flag or file, then the environment, then `runs`.
    pub fn out_root(&self) -> PathBuf {
        self.paths
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }
}
