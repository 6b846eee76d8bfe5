//! Run configuration: a flat `key = value` file with dotted section
//! prefixes. Command-line flags are applied on top as the same keys.
//!
//! ```text
//! data_root = /data/retouch
//! output_dir = runs/unet-2d
//! grid.patch_size = 128
//! grid.overlap = 0.75
//! depth_mode = 2.5d:1
//! backend.kind = external
//! backend.predictions = preds/unet
//! backend.model = unet
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use octpipe::augment::AugmentConfig;
use octpipe::backends::{TrainingConfig, Variant, DEFAULT_BANDS};
use octpipe::eval::ExperimentConfig;
use octpipe::patch_engine::DepthMode;
use octpipe::preprocess::{Denoiser, SlicePolicy};
use octpipe::Dims3;

pub const DATA_ROOT_ENV: &str = "OCTPIPE_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Oracle,
    Threshold,
    External,
}

impl BackendKind {
    fn name(self) -> &'static str {
        match self {
            BackendKind::Oracle => "oracle",
            BackendKind::Threshold => "threshold",
            BackendKind::External => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub bands: [f64; 3],
    /// Directory of `<id>_prob.mhd` files for the external backend.
    pub predictions: Option<PathBuf>,
    /// Report tag for external predictions.
    pub model: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dims: Dims3,
    pub per_vendor: [usize; 3],
    pub blobs_per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub experiment: ExperimentConfig,
    pub augment: AugmentConfig,
    pub backend: BackendConfig,
    pub folds: usize,
    pub seed: u64,
    pub synth: SynthConfig,
    pub training: TrainingConfig,
    /// 0 uses every logical core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: None,
            output_dir: PathBuf::from("octpipe-out"),
            experiment: ExperimentConfig::default(),
            augment: AugmentConfig::default(),
            backend: BackendConfig {
                kind: BackendKind::Oracle,
                bands: DEFAULT_BANDS,
                predictions: None,
                model: "external".into(),
            },
            folds: 3,
            seed: 0,
            synth: SynthConfig {
                dims: Dims3::new(96, 96, 8),
                per_vendor: [6, 6, 5],
                blobs_per_class: 1,
            },
            training: TrainingConfig::default(),
            jobs: 0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn pair(key: &str, v: &str) -> Result<(usize, usize), String> {
    match v.split_once('x') {
        Some((a, b)) => Ok((num(key, a)?, num(key, b)?)),
        None => {
            let n = num(key, v)?;
            Ok((n, n))
        }
    }
}

fn list<const N: usize, T: std::str::FromStr + Copy + Default>(key: &str, v: &str) -> Result<[T; N], String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("{key}: expected {N} comma-separated values, got {v:?}"));
    }
    let mut out = [T::default(); N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = num(key, p)?;
    }
    Ok(out)
}

fn boolean(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

fn denoiser(v: &str) -> Result<Denoiser, String> {
    let (name, args) = v.split_once(':').unwrap_or((v, ""));
    match name {
        "none" => Ok(Denoiser::None),
        "gaussian" => Ok(Denoiser::Gaussian { sigma: num("preprocess.denoiser", args)? }),
        "nlm" => {
            let [s, p, h]: [f64; 3] = list("preprocess.denoiser", args)?;
            Ok(Denoiser::Nlm {
                search_radius: s as usize,
                patch_radius: p as usize,
                h,
            })
        }
        _ => Err(format!("preprocess.denoiser: expected none, gaussian:SIGMA or nlm:S,P,H, got {v:?}")),
    }
}

fn denoiser_str(d: &Denoiser) -> String {
    match *d {
        Denoiser::None => "none".into(),
        Denoiser::Gaussian { sigma } => format!("gaussian:{sigma}"),
        Denoiser::Nlm { search_radius, patch_radius, h } => format!("nlm:{search_radius},{patch_radius},{h}"),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let e = &mut self.experiment;
        match key {
            "data_root" => self.data_root = Some(PathBuf::from(v)),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "preprocess.target_2d" => e.preprocess.target_2d = pair(key, v)?,
            "preprocess.target_vol" => e.preprocess.target_vol = pair(key, v)?,
            "preprocess.denoiser" => e.preprocess.denoiser = denoiser(v)?,
            "preprocess.slice_policy" => {
                e.preprocess.slice_policy = match v {
                    "auto" => None,
                    "diseased" => Some(SlicePolicy::DiseasedOnly),
                    "all" => Some(SlicePolicy::All),
                    _ => return Err(format!("{key}: expected auto, diseased or all, got {v:?}")),
                }
            }
            "grid.patch_size" => e.patch = pair(key, v)?,
            "grid.overlap" => e.overlap = num(key, v)?,
            "depth_mode" => e.depth_mode = v.parse().map_err(|err| format!("{key}: {err}"))?,
            "variant" => e.variant = v.parse().map_err(|err| format!("{key}: {err}"))?,
            "closing.radius" => e.closing_radius = num(key, v)?,
            "eval.pooling" => e.pooling = v.parse().map_err(|err| format!("{key}: {err}"))?,
            "augment.rotation_deg" => self.augment.rotation_deg = num(key, v)?,
            "augment.translate_px" => self.augment.translate_px = num(key, v)?,
            "augment.copies" => self.augment.copies_per_sample = num(key, v)?,
            "backend.kind" => {
                self.backend.kind = match v {
                    "oracle" => BackendKind::Oracle,
                    "threshold" => BackendKind::Threshold,
                    "external" => BackendKind::External,
                    _ => return Err(format!("{key}: expected oracle, threshold or external, got {v:?}")),
                }
            }
            "backend.bands" => self.backend.bands = list(key, v)?,
            "backend.predictions" => self.backend.predictions = Some(PathBuf::from(v)),
            "backend.model" => {
                if v.is_empty() || v.contains(char::is_whitespace) || v.contains(',') {
                    return Err(format!("{key}: model tag must be a single word, got {v:?}"));
                }
                self.backend.model = v.to_string()
            }
            "folds.k" => self.folds = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "synth.dims" => self.synth.dims = v.parse().map_err(|err| format!("{key}: {err}"))?,
            "synth.per_vendor" => self.synth.per_vendor = list(key, v)?,
            "synth.blobs_per_class" => self.synth.blobs_per_class = num(key, v)?,
            "training.optimizer" => self.training.optimizer = v.to_string(),
            "training.decay" => self.training.decay = num(key, v)?,
            "training.lr_start" => self.training.lr_start = num(key, v)?,
            "training.lr_end" => self.training.lr_end = num(key, v)?,
            "training.epochs" => self.training.epochs = num(key, v)?,
            "training.shuffle_each_epoch" => self.training.shuffle_each_epoch = boolean(key, v)?,
            "training.loss" => self.training.loss = v.to_string(),
            "jobs" => self.jobs = num(key, v)?,
            _ => return Err(format!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    /// Parses a configuration file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value, got {raw:?}", n + 1))?;
            self.set(k.trim(), v).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    /// Checks every sub-configuration.
    pub fn validate(&self) -> Result<(), String> {
        self.experiment.validate().map_err(|e| e.to_string())?;
        self.augment.validate().map_err(|e| e.to_string())?;
        self.training.validate().map_err(|e| e.to_string())?;
        if self.folds < 2 {
            return Err(format!("folds.k must be >= 2, got {}", self.folds));
        }
        if self.backend.kind == BackendKind::External && self.backend.predictions.is_none() {
            return Err("backend.predictions is required for the external backend".into());
        }
        octpipe::backends::ThresholdBackend::<f64>::new(self.backend.bands).map_err(|e| e.to_string())?;
        Ok(())
    }

    /// `data_root`, falling back to the environment.
    pub fn data_root(&self) -> Result<PathBuf, String> {
        if let Some(p) = &self.data_root {
            return Ok(p.clone());
        }
        match std::env::var_os(DATA_ROOT_ENV) {
            Some(p) if !p.is_empty() => Ok(PathBuf::from(p)),
            _ => Err(format!("no data_root configured and {DATA_ROOT_ENV} is unset")),
        }
    }

    /// The resolved configuration in file syntax, one key per line.
    pub fn render(&self) -> String {
        let e = &self.experiment;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Ok(root) = self.data_root() {
            kv("data_root", root.display().to_string());
        }
        kv("output_dir", self.output_dir.display().to_string());
        kv("preprocess.target_2d", format!("{}x{}", e.preprocess.target_2d.0, e.preprocess.target_2d.1));
        kv("preprocess.target_vol", format!("{}x{}", e.preprocess.target_vol.0, e.preprocess.target_vol.1));
        kv("preprocess.denoiser", denoiser_str(&e.preprocess.denoiser));
        kv(
            "preprocess.slice_policy",
            match e.preprocess.slice_policy {
                None => "auto",
                Some(SlicePolicy::DiseasedOnly) => "diseased",
                Some(SlicePolicy::All) => "all",
            }
            .into(),
        );
        kv("grid.patch_size", format!("{}x{}", e.patch.0, e.patch.1));
        kv("grid.overlap", e.overlap.to_string());
        kv("depth_mode", depth_mode_str(e.depth_mode));
        kv("variant", e.variant.to_string());
        kv("closing.radius", e.closing_radius.to_string());
        kv("eval.pooling", e.pooling.to_string());
        kv("augment.rotation_deg", self.augment.rotation_deg.to_string());
        kv("augment.translate_px", self.augment.translate_px.to_string());
        kv("augment.copies", self.augment.copies_per_sample.to_string());
        kv("backend.kind", self.backend.kind.name().into());
        let b = self.backend.bands;
        kv("backend.bands", format!("{},{},{}", b[0], b[1], b[2]));
        if let Some(p) = &self.backend.predictions {
            kv("backend.predictions", p.display().to_string());
        }
        kv("backend.model", self.backend.model.clone());
        kv("folds.k", self.folds.to_string());
        kv("seed", self.seed.to_string());
        kv("synth.dims", self.synth.dims.to_string());
        let p = self.synth.per_vendor;
        kv("synth.per_vendor", format!("{},{},{}", p[0], p[1], p[2]));
        kv("synth.blobs_per_class", self.synth.blobs_per_class.to_string());
        let t = &self.training;
        kv("training.optimizer", t.optimizer.clone());
        kv("training.decay", t.decay.to_string());
        kv("training.lr_start", t.lr_start.to_string());
        kv("training.lr_end", t.lr_end.to_string());
        kv("training.epochs", t.epochs.to_string());
        kv("training.shuffle_each_epoch", t.shuffle_each_epoch.to_string());
        kv("training.loss", t.loss.clone());
        kv("jobs", self.jobs.to_string());
        s
    }

    pub fn model_tag(&self) -> String {
        match self.backend.kind {
            BackendKind::External => self.backend.model.clone(),
            k => k.name().to_string(),
        }
    }

    pub fn variant(&self) -> Variant {
        self.experiment.variant
    }
}

fn depth_mode_str(m: DepthMode) -> String {
    match m {
        DepthMode::D25 { radius } => format!("2.5d:{radius}"),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.data_root = Some("/d".into());
        cfg.apply_text(
            "grid.patch_size = 64x32\ndepth_mode = 2.5d:2\npreprocess.denoiser = nlm:5,1,0.08 # strong\nbackend.kind = threshold\n",
        )
        .unwrap();
        let back = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.experiment.depth_mode, DepthMode::D25 { radius: 2 });
    }

    #[test]
    fn bad_lines() {
        assert!(RunConfig::parse("grid.overlap 0.5").unwrap_err().contains("line 1"));
        assert!(RunConfig::parse("nope = 1").unwrap_err().contains("unknown"));
        assert!(RunConfig::parse("grid.overlap = lots").is_err());
        let cfg = RunConfig::parse("grid.overlap = 1.0").unwrap();
        assert!(cfg.validate().is_err());
    }
}
