//! Experiment configuration and the commands behind the `fedmed` binary.
//!
//! A run is described by one TOML document ([`ExperimentConfig`]); command
//! line flags override individual fields ([`Overrides`]). The resolved
//! configuration is hashed into a digest that every checkpoint and manifest
//! carries.

mod commands;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{DEFAULT_SLICE_HI, DEFAULT_SLICE_LO};
use crate::atm::check_views;
use crate::error::{Error, Result};
use crate::federated::{DPConfig, TrainConfig};
use crate::losses::LossWeights;
use crate::mud::{check_proportions, paper_scenario, ClientSpec, NoiseKind, PhantomSpec};
use crate::networks::{DiscriminatorConfig, GeneratorConfig};

pub use commands::*;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FEDMED_OUT";
pub const DEFAULT_OUT: &str = "fedmed-out";

/// Which auxiliary heads are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain federated CycleGAN, no auxiliary heads.
    Baseline,
    /// All three heads.
    #[default]
    Atl,
    ArOnly,
    AtOnly,
    AsOnly,
    /// Registration-network comparison; accepted but not implemented.
    Reggan,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Baseline, Variant::Atl, Variant::ArOnly, Variant::AtOnly, Variant::AsOnly, Variant::Reggan];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Atl => "atl",
            Variant::ArOnly => "ar-only",
            Variant::AtOnly => "at-only",
            Variant::AsOnly => "as-only",
            Variant::Reggan => "reggan",
        }
    }

    /// Row label in the naming scheme of the result tables.
    pub fn label(self, views: usize) -> String {
        match self {
            Variant::Baseline => "FedMed-C".into(),
            Variant::Atl if views == 1 => "FedMed-C-ATL-1View".into(),
            Variant::Atl => format!("FedMed-C-ATL-{views}Views"),
            Variant::ArOnly => "FedMed-C-AR".into(),
            Variant::AtOnly => "FedMed-C-AT".into(),
            Variant::AsOnly => "FedMed-C-AS".into(),
            Variant::Reggan => "FedMed-C+RegGAN".into(),
        }
    }

    /// `w` with the heads this variant drops set to zero.
    pub fn weights(self, w: LossWeights) -> Result<LossWeights> {
        let (rot, trans, scale) = match self {
            Variant::Baseline => (0.0, 0.0, 0.0),
            Variant::Atl => (w.rot, w.trans, w.scale),
            Variant::ArOnly => (w.rot, 0.0, 0.0),
            Variant::AtOnly => (0.0, w.trans, 0.0),
            Variant::AsOnly => (0.0, 0.0, w.scale),
            Variant::Reggan => return Err(Error::NotImplemented("the reggan variant is not implemented".into())),
        };
        Ok(LossWeights { rot, trans, scale, ..w })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}; expected one of baseline, atl, ar-only, at-only, as-only, reggan")))
    }
}

/// Where slices come from and how they are cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus directory (`A/`, `B/`); defaults to the phantom under the output directory.
    pub corpus: Option<PathBuf>,
    /// Prepared scenario directory; defaults to `<out>/scenario`.
    pub scenario: Option<PathBuf>,
    pub slice_lo: usize,
    pub slice_hi: usize,
    pub image_size: usize,
    /// Volumes held out as the aligned test set.
    pub test_volumes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { corpus: None, scenario: None, slice_lo: DEFAULT_SLICE_LO, slice_hi: DEFAULT_SLICE_HI, image_size: 64, test_volumes: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Runs grid cells on separate threads.
    pub parallel: bool,
    pub noises: Vec<NoiseKind>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { parallel: false, noises: vec![NoiseKind::Slight, NoiseKind::Severe] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; falls back to `$FEDMED_OUT`, then `fedmed-out`.
    pub out: Option<PathBuf>,
    pub variant: Variant,
    pub noise: NoiseKind,
    pub paper_scale: bool,
    pub phantom: PhantomSpec,
    pub data: DataConfig,
    /// Empty means the four-hospital default scenario at `noise`.
    pub clients: Vec<ClientSpec>,
    pub train: TrainConfig,
    pub dp: DPConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            variant: Variant::Atl,
            noise: NoiseKind::Severe,
            paper_scale: false,
            phantom: PhantomSpec { n_volumes: 24, ..PhantomSpec::default() },
            data: DataConfig::default(),
            clients: Vec::new(),
            train: TrainConfig::default(),
            dp: DPConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

/// Command line values that replace configuration fields when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub views: Option<usize>,
    pub noise: Option<NoiseKind>,
    pub paper_scale: bool,
    pub dp: Option<bool>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `o`, fills defaults that depend on other fields and validates.
    /// Resolving twice gives the same result as resolving once.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(k) = o.views {
            self.train.views_k = k;
        }
        if let Some(n) = o.noise {
            self.noise = n;
            for c in &mut self.clients {
                c.noise = n;
            }
        }
        if let Some(d) = o.dp {
            self.dp.enabled = d;
        }
        self.paper_scale |= o.paper_scale;
        if self.paper_scale {
            self.phantom.image_size = 256;
            self.data.image_size = 256;
            self.train.generator = GeneratorConfig::new(4, 32);
            self.train.discriminator = DiscriminatorConfig { base_channels: 64, ..self.train.discriminator };
        }
        if self.clients.is_empty() {
            self.clients = paper_scenario(self.noise);
        }
        self.phantom.seed = self.seed;
        self.train.seed = self.seed;
        self.train.gen_weights = self.variant.weights(self.train.gen_weights)?;
        self.train.disc_weights = self.variant.weights(self.train.disc_weights)?;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_views(self.train.views_k)?;
        check_proportions(&self.clients.iter().map(|c| c.proportion).collect::<Vec<_>>())
            .map_err(|e| Error::Config(format!("client proportions: {e}")))?;
        if self.data.slice_lo > self.data.slice_hi {
            return Err(Error::Config(format!("slice range {}..={} is empty", self.data.slice_lo, self.data.slice_hi)));
        }
        if self.data.test_volumes == 0 {
            return Err(Error::Config("test_volumes must be at least 1".into()));
        }
        self.phantom.validate()?;
        self.train.validate()?;
        self.dp.validate()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.data.corpus.clone().unwrap_or_else(|| self.out_dir().join("corpus"))
    }

    pub fn scenario_dir(&self) -> PathBuf {
        self.data.scenario.clone().unwrap_or_else(|| self.out_dir().join("scenario"))
    }

    /// Short name of the data source for result tables.
    pub fn experiment_name(&self) -> String {
        match &self.data.corpus {
            None => "phantom".into(),
            Some(p) => p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into()),
        }
    }

    pub fn label(&self) -> String {
        self.variant.label(self.train.views_k)
    }

    /// SHA-256 of the canonical JSON form, ignoring output locations.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.data.scenario = None;
        let json = serde_json::to_vec(&c).expect("config is always serialisable");
        hex::encode(Sha256::digest(&json))
    }
}
