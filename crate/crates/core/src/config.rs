//! Flat `key = value` run configuration.
//!
//! Every key is typed and listed in [`KEYS`]; unknown or repeated keys are
//! errors. `#` starts a comment. The resolved configuration prints back in
//! the same format, so a manifest can be fed straight back in.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{SyntheticSpec, DEFAULT_SPLIT};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_KS;
use crate::fedsim::FedConfig;
use crate::fsutil::read_to_string;
use crate::modality::{EncoderChoice, EncoderKind, Guidance, Normalization};
use crate::privacy::PrivacyConfig;

/// `(key, type, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "u64", "root seed for every random stream (default 0)"),
    ("out", "path", "output directory (default `out`)"),
    ("dataset_dir", "path", "directory holding interactions.csv and optional id maps"),
    ("features", "path", "feature CSV for encoder=precomputed (default <dataset_dir>/features.csv)"),
    ("item_text", "path", "item_id<TAB>text file for encoder=hashed_tokens (default <dataset_dir>/items.txt)"),
    ("synthetic", "bool", "use the planted-cluster generator instead of dataset_dir"),
    ("synthetic_users", "usize", "generator users (200)"),
    ("synthetic_items", "usize", "generator items (130)"),
    ("synthetic_clusters", "usize", "generator clusters (4)"),
    ("synthetic_p_in", "f64", "in-cluster interaction probability (0.3)"),
    ("synthetic_p_out", "f64", "cross-cluster interaction probability (0.01)"),
    ("synthetic_feature_dim", "usize", "generated feature width (64)"),
    ("synthetic_feature_noise", "f64", "feature noise std-dev (0.1)"),
    ("split", "f64,f64,f64", "warm,val,cold item ratios (0.6,0.1,0.3)"),
    ("encoder", "precomputed|hashed_tokens", "featurizer for dataset_dir sources (hashed_tokens)"),
    ("encoder_dim", "usize", "hashed featurizer width (64)"),
    ("feature_normalization", "none|l2", "row normalization of loaded features (none)"),
    ("condition", "full|zero|random|none", "guidance ablation (full)"),
    ("rounds", "usize", "federated rounds R (100)"),
    ("dim", "usize", "embedding width d (64)"),
    ("local_lr", "f64", "client SGD step size (0.1)"),
    ("negatives", "usize", "negatives per positive (5)"),
    ("batch_size", "usize", "server denoiser batch (256)"),
    ("client_sample_ratio", "f64", "fraction of clients per round (1.0)"),
    ("server_epochs", "usize", "denoiser epochs per training event (1)"),
    ("ldp", "f64", "Laplace scale on uploads, 0 = off (0)"),
    ("light_mode", "bool", "train the denoiser every other round (false)"),
    ("diffusion_steps", "usize", "diffusion steps T (40)"),
    ("noise_scale", "f64", "noise scale s (0.1)"),
    ("noise_min", "f64", "alpha_min (0.001)"),
    ("noise_max", "f64", "alpha_max (0.01)"),
    ("heads", "usize", "attention heads (4)"),
    ("server_lr", "f64", "denoiser Adam step size (0.001)"),
    ("inference_mode", "deterministic|stochastic", "reverse-chain mode (deterministic)"),
    ("ks", "usize list", "cutoffs for eval (20,50,100)"),
    ("select_best", "bool", "keep the round with the best validation recall@20 (true)"),
    ("record_timing", "bool", "write wall-clock seconds to the round CSV; off keeps files reproducible (false)"),
    ("mapper_epochs", "usize", "baseline mapper epochs (300)"),
    ("mapper_lr", "f64", "baseline mapper step size (0.05)"),
    ("leak_fraction", "f64", "share of cold items the attacker knows, in (0,1) (0.2)"),
    ("attack_epochs", "usize", "attacker epochs (300)"),
    ("attack_lr", "f64", "attacker step size (0.05)"),
    ("ssd_items", "usize", "items in the structural-difference matrices (20)"),
    ("mi_components", "usize", "principal components per side for the MI estimate (4)"),
    ("sweep_parameter", "dim|ldp", "parameter varied by `sweep` (dim)"),
    ("sweep_values", "f64 list", "values for `sweep` (16,32,64,128)"),
];

/// Renders the key table for `--help`.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (`key = value`, one per line, `#` comments):\n");
    for (k, ty, doc) in KEYS {
        let _ = writeln!(s, "  {k:<24} {ty:<28} {doc}");
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Directory(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParameter {
    Dim,
    Ldp,
}

impl FromStr for SweepParameter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dim" => Ok(SweepParameter::Dim),
            "ldp" => Ok(SweepParameter::Ldp),
            _ => Err(Error::Config(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

impl std::fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParameter::Dim => "dim",
            SweepParameter::Ldp => "ldp",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub source: DataSource,
    pub features: Option<PathBuf>,
    pub item_text: Option<PathBuf>,
    pub split: (f64, f64, f64),
    pub encoder: EncoderChoice,
    pub guidance: Guidance,
    pub fed: FedConfig,
    pub diffusion: DiffusionConfig,
    pub ks: Vec<usize>,
    pub select_best: bool,
    pub record_timing: bool,
    pub mapper_epochs: usize,
    pub mapper_lr: f64,
    pub privacy: PrivacyConfig,
    pub sweep_parameter: SweepParameter,
    pub sweep_values: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            source: DataSource::Synthetic(SyntheticSpec::benchmark(0)),
            features: None,
            item_text: None,
            split: DEFAULT_SPLIT,
            encoder: EncoderChoice {
                normalization: Normalization::None,
                ..EncoderChoice::default()
            },
            guidance: Guidance::Full,
            fed: FedConfig::default(),
            diffusion: DiffusionConfig::default(),
            ks: DEFAULT_KS.to_vec(),
            select_best: true,
            record_timing: false,
            mapper_epochs: 300,
            mapper_lr: 0.05,
            privacy: PrivacyConfig::default(),
            sweep_parameter: SweepParameter::Dim,
            sweep_values: vec![16.0, 32.0, 64.0, 128.0],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Scratch state while reading lines: the source is decided at the end.
#[derive(Default)]
struct Pending {
    dataset_dir: Option<PathBuf>,
    synthetic: Option<bool>,
    spec: Option<SyntheticSpec>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_str(&read_to_string(path)?, &path.display().to_string())
    }

    /// Parses config text; `origin` labels error messages.
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut pending = Pending::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, idx + 1, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::parse(origin, idx + 1, format!("key `{key}` given twice")));
            }
            seen.push(key.to_string());
            cfg.set(&mut pending, key, value)
                .map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
        }
        cfg.resolve(pending)?;
        Ok(cfg)
    }

    fn spec_mut<'a>(&self, pending: &'a mut Pending) -> &'a mut SyntheticSpec {
        pending.spec.get_or_insert_with(|| SyntheticSpec::benchmark(0))
    }

    fn set(&mut self, p: &mut Pending, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "dataset_dir" => p.dataset_dir = Some(PathBuf::from(v)),
            "features" => self.features = Some(PathBuf::from(v)),
            "item_text" => self.item_text = Some(PathBuf::from(v)),
            "synthetic" => p.synthetic = Some(parse_bool(key, v)?),
            "synthetic_users" => self.spec_mut(p).n_users = parse(key, v)?,
            "synthetic_items" => self.spec_mut(p).n_items = parse(key, v)?,
            "synthetic_clusters" => self.spec_mut(p).n_clusters = parse(key, v)?,
            "synthetic_p_in" => self.spec_mut(p).p_in = parse(key, v)?,
            "synthetic_p_out" => self.spec_mut(p).p_out = parse(key, v)?,
            "synthetic_feature_dim" => self.spec_mut(p).feature_dim = parse(key, v)?,
            "synthetic_feature_noise" => self.spec_mut(p).feature_noise = parse(key, v)?,
            "split" => {
                let r: Vec<f64> = parse_list(key, v)?;
                if r.len() != 3 {
                    return Err(Error::Config("`split` needs three ratios".into()));
                }
                self.split = (r[0], r[1], r[2]);
            }
            "encoder" => self.encoder.kind = v.parse::<EncoderKind>()?,
            "encoder_dim" => self.encoder.dim = parse(key, v)?,
            "feature_normalization" => self.encoder.normalization = v.parse()?,
            "condition" => self.guidance = v.parse()?,
            "rounds" => self.fed.rounds = parse(key, v)?,
            "dim" => self.fed.dim = parse(key, v)?,
            "local_lr" => self.fed.local_lr = parse(key, v)?,
            "negatives" => self.fed.negatives = parse(key, v)?,
            "batch_size" => self.fed.batch_size = parse(key, v)?,
            "client_sample_ratio" => self.fed.client_sample_ratio = parse(key, v)?,
            "server_epochs" => self.fed.server_epochs = parse(key, v)?,
            "ldp" => self.fed.ldp_scale = parse(key, v)?,
            "light_mode" => self.fed.light_mode = parse_bool(key, v)?,
            "diffusion_steps" => self.diffusion.steps = parse(key, v)?,
            "noise_scale" => self.diffusion.noise_scale = parse(key, v)?,
            "noise_min" => self.diffusion.noise_min = parse(key, v)?,
            "noise_max" => self.diffusion.noise_max = parse(key, v)?,
            "heads" => self.diffusion.heads = parse(key, v)?,
            "server_lr" => self.diffusion.lr = parse(key, v)?,
            "inference_mode" => self.diffusion.inference_mode = v.parse()?,
            "ks" => self.ks = parse_list(key, v)?,
            "select_best" => self.select_best = parse_bool(key, v)?,
            "record_timing" => self.record_timing = parse_bool(key, v)?,
            "mapper_epochs" => self.mapper_epochs = parse(key, v)?,
            "mapper_lr" => self.mapper_lr = parse(key, v)?,
            "leak_fraction" => self.privacy.leak_fraction = parse(key, v)?,
            "attack_epochs" => self.privacy.attack_epochs = parse(key, v)?,
            "attack_lr" => self.privacy.attack_lr = parse(key, v)?,
            "ssd_items" => self.privacy.ssd_items = parse(key, v)?,
            "mi_components" => self.privacy.mi_components = parse(key, v)?,
            "sweep_parameter" => self.sweep_parameter = v.parse()?,
            "sweep_values" => self.sweep_values = parse_list(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn resolve(&mut self, p: Pending) -> Result<()> {
        let synthetic = p.synthetic.unwrap_or(false);
        self.source = match (p.dataset_dir, synthetic) {
            (Some(_), true) => {
                return Err(Error::Config("give either dataset_dir or synthetic = true, not both".into()))
            }
            (None, false) => {
                return Err(Error::Config("no data: set dataset_dir or synthetic = true".into()))
            }
            (Some(dir), false) => {
                if p.spec.is_some() {
                    return Err(Error::Config("synthetic_* keys need synthetic = true".into()));
                }
                DataSource::Directory(dir)
            }
            (None, true) => DataSource::Synthetic(p.spec.unwrap_or_else(|| SyntheticSpec::benchmark(0))),
        };
        self.sync_seed();
        self.validate()
    }

    /// Keeps the generator seed tied to the root seed.
    pub fn sync_seed(&mut self) {
        if let DataSource::Synthetic(spec) = &mut self.source {
            spec.seed = self.seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fed.validate()?;
        self.diffusion.validate()?;
        self.privacy.validate()?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be a non-empty list of positive cutoffs".into()));
        }
        if self.sweep_values.is_empty() {
            return Err(Error::Config("sweep_values must not be empty".into()));
        }
        if self.encoder.dim == 0 {
            return Err(Error::Config("encoder_dim must be positive".into()));
        }
        let (a, b, c) = self.split;
        if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
            return Err(Error::Config(format!("split ratios must be non-negative and sum to 1, got {a},{b},{c}")));
        }
        match &self.source {
            DataSource::Synthetic(spec) => spec.validate()?,
            DataSource::Directory(dir) => {
                if !dir.is_dir() {
                    return Err(Error::Config(format!("dataset_dir {} does not exist", dir.display())));
                }
                let needed = self.modality_path().expect("directory source");
                if !needed.is_file() {
                    return Err(Error::Config(format!("modality file {} does not exist", needed.display())));
                }
            }
        }
        Ok(())
    }

    /// The modality file a directory source reads, per the encoder choice.
    pub fn modality_path(&self) -> Option<PathBuf> {
        let DataSource::Directory(dir) = &self.source else {
            return None;
        };
        Some(match self.encoder.kind {
            EncoderKind::Precomputed => self.features.clone().unwrap_or_else(|| dir.join("features.csv")),
            EncoderKind::HashedTokens => self.item_text.clone().unwrap_or_else(|| dir.join("items.txt")),
        })
    }

    /// The resolved configuration as parseable `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        match &self.source {
            DataSource::Directory(dir) => kv("dataset_dir", dir.display().to_string()),
            DataSource::Synthetic(spec) => {
                kv("synthetic", "true".into());
                kv("synthetic_users", spec.n_users.to_string());
                kv("synthetic_items", spec.n_items.to_string());
                kv("synthetic_clusters", spec.n_clusters.to_string());
                kv("synthetic_p_in", spec.p_in.to_string());
                kv("synthetic_p_out", spec.p_out.to_string());
                kv("synthetic_feature_dim", spec.feature_dim.to_string());
                kv("synthetic_feature_noise", spec.feature_noise.to_string());
            }
        }
        if let Some(f) = &self.features {
            kv("features", f.display().to_string());
        }
        if let Some(f) = &self.item_text {
            kv("item_text", f.display().to_string());
        }
        let (a, b, c) = self.split;
        kv("split", format!("{a},{b},{c}"));
        kv("encoder", self.encoder.kind.to_string());
        kv("encoder_dim", self.encoder.dim.to_string());
        kv("feature_normalization", self.encoder.normalization.to_string());
        kv("condition", self.guidance.to_string());
        let f = &self.fed;
        kv("rounds", f.rounds.to_string());
        kv("dim", f.dim.to_string());
        kv("local_lr", f.local_lr.to_string());
        kv("negatives", f.negatives.to_string());
        kv("batch_size", f.batch_size.to_string());
        kv("client_sample_ratio", f.client_sample_ratio.to_string());
        kv("server_epochs", f.server_epochs.to_string());
        kv("ldp", f.ldp_scale.to_string());
        kv("light_mode", f.light_mode.to_string());
        let d = &self.diffusion;
        kv("diffusion_steps", d.steps.to_string());
        kv("noise_scale", d.noise_scale.to_string());
        kv("noise_min", d.noise_min.to_string());
        kv("noise_max", d.noise_max.to_string());
        kv("heads", d.heads.to_string());
        kv("server_lr", d.lr.to_string());
        kv("inference_mode", d.inference_mode.to_string());
        kv("ks", join(&self.ks));
        kv("select_best", self.select_best.to_string());
        kv("record_timing", self.record_timing.to_string());
        kv("mapper_epochs", self.mapper_epochs.to_string());
        kv("mapper_lr", self.mapper_lr.to_string());
        let p = &self.privacy;
        kv("leak_fraction", p.leak_fraction.to_string());
        kv("attack_epochs", p.attack_epochs.to_string());
        kv("attack_lr", p.attack_lr.to_string());
        kv("ssd_items", p.ssd_items.to_string());
        kv("mi_components", p.mi_components.to_string());
        kv("sweep_parameter", self.sweep_parameter.to_string());
        kv("sweep_values", join(&self.sweep_values));
        s
    }
}
