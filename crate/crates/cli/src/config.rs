//! Flat `key = value` run configuration.
//!
//! | key                  | default              | meaning |
//! |----------------------|----------------------|---------|
//! | `dataset`            | `moons`              | `moons` or `shapes` |
//! | `n_labeled`          | `6`                  | labeled examples (class-balanced when `class_balanced`) |
//! | `n_unlabeled`        | `1000`               | unlabeled pool size |
//! | `n_val`              | `100`                | validation examples |
//! | `n_test`             | `500`                | test examples |
//! | `class_balanced`     | `true`               | balance labeled and validation splits |
//! | `data_seed`          | `0`                  | seed for generation and splitting |
//! | `resample_data`      | `false`              | draw a fresh dataset and split for every run seed |
//! | `moons_noise`        | `0.1`                | Gaussian noise of the two-moons generator |
//! | `image_side`         | `16`                 | side of shape images |
//! | `n_classes`          | `7`                  | shape classes (2..=7) |
//! | `arch`               | `auto`               | architecture string, or `auto` for the dataset default |
//! | `mix_layers`         | `0,1`                | eligible mixing boundaries |
//! | `alpha_input`        | `1`                  | Beta parameter when mixing inputs |
//! | `alpha_latent`       | `2`                  | Beta parameter when mixing hidden layers |
//! | `lambda_u`           | `75`                 | weight of the unlabeled loss |
//! | `m`                  | `2`                  | augmentations averaged per guess |
//! | `epochs`             | `256`                | training epochs |
//! | `lr`                 | `0.0001`             | initial learning rate |
//! | `lr_decay_epochs`    | `50,125`             | epochs at which the rate drops (`none` for constant) |
//! | `lr_decay_factor`    | `10`                 | divisor applied at each decay epoch |
//! | `batch_labeled`      | `32`                 | labeled rows per step (capped at the pool size) |
//! | `batch_unlabeled`    | `32`                 | unlabeled rows per step |
//! | `task`               | `multi-class`        | `multi-class` or `multi-label` |
//! | `augment`            | `auto`               | `none`, `rotate-translate`, `gaussian-noise:S`, `point-jitter:S`, `auto` |
//! | `augment_labeled`    | `true`               | augment labeled rows every step |
//! | `lambda_fixed`       | `none`               | pin the folded mixing weight to a value in [0.5, 1] |
//! | `lambda_mode`        | `per-batch`          | `per-batch` or `per-example` mixing weights |
//! | `optimizer`          | `adam`               | `adam` or `sgd` |
//! | `seed`               | `0`                  | run seed (initialization and training) |
//! | `n_seeds`            | `5`                  | runs per `train` invocation |
//! | `out_dir`            | `runs`               | output directory when `--out` is absent |
//! | `n_bins`             | `10`                 | reliability bins |
//! | `boundary_extent`    | `-1.5,2.5,-1,1.5`    | raster extent `xmin,xmax,ymin,ymax` |
//! | `boundary_resolution`| `64x64`              | raster `rows x cols` |
//!
//! `auto` resolves to a three-layer 128-unit MLP with `point-jitter:0.05`
//! for `moons`, and to a three-block convolutional net with
//! `rotate-translate` for `shapes`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use mixsemi_core::autodiff::OptimizerKind;
use mixsemi_core::metrics::Extent;
use mixsemi_core::mixing::{LambdaMode, LayerSet};
use mixsemi_core::rng::derive_seed;
use mixsemi_core::{Architecture, AugmentPolicy, Error, Result, SslConfig, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Moons,
    Shapes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub class_balanced: bool,
    pub data_seed: u64,
    pub resample_data: bool,
    pub moons_noise: f64,
    pub image_side: usize,
    pub n_classes: usize,
    pub arch: Option<Architecture>,
    pub mix_layers: LayerSet,
    pub alpha_input: f64,
    pub alpha_latent: f64,
    pub lambda_u: f64,
    pub m: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub task: Task,
    pub augment: Option<AugmentPolicy>,
    pub augment_labeled: bool,
    pub lambda_fixed: Option<f64>,
    pub lambda_mode: LambdaMode,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub n_seeds: usize,
    pub out_dir: String,
    pub n_bins: usize,
    pub boundary_extent: Extent,
    pub boundary_resolution: (usize, usize),
}

impl Default for RunConfig {
    fn default() -> Self {
        let ssl = SslConfig::default();
        RunConfig {
            dataset: DatasetKind::Moons,
            n_labeled: 6,
            n_unlabeled: 1000,
            n_val: 100,
            n_test: 500,
            class_balanced: true,
            data_seed: 0,
            resample_data: false,
            moons_noise: 0.1,
            image_side: 16,
            n_classes: 7,
            arch: None,
            mix_layers: ssl.mix_layers,
            alpha_input: ssl.alpha_input,
            alpha_latent: ssl.alpha_latent,
            lambda_u: ssl.lambda_u,
            m: ssl.m,
            epochs: ssl.epochs,
            lr: ssl.lr,
            lr_decay_epochs: ssl.lr_decay_epochs,
            lr_decay_factor: ssl.lr_decay_factor,
            batch_labeled: ssl.batch_labeled,
            batch_unlabeled: ssl.batch_unlabeled,
            task: ssl.task,
            augment: None,
            augment_labeled: ssl.augment_labeled,
            lambda_fixed: None,
            lambda_mode: LambdaMode::PerBatch,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            n_seeds: 5,
            out_dir: "runs".into(),
            n_bins: 10,
            boundary_extent: Extent {
                xmin: -1.5,
                xmax: 2.5,
                ymin: -1.0,
                ymax: 1.5,
            },
            boundary_resolution: (64, 64),
        }
    }
}

pub const KEYS: [&str; 35] = [
    "dataset",
    "n_labeled",
    "n_unlabeled",
    "n_val",
    "n_test",
    "class_balanced",
    "data_seed",
    "resample_data",
    "moons_noise",
    "image_side",
    "n_classes",
    "arch",
    "mix_layers",
    "alpha_input",
    "alpha_latent",
    "lambda_u",
    "m",
    "epochs",
    "lr",
    "lr_decay_epochs",
    "lr_decay_factor",
    "batch_labeled",
    "batch_unlabeled",
    "task",
    "augment",
    "augment_labeled",
    "lambda_fixed",
    "lambda_mode",
    "optimizer",
    "seed",
    "n_seeds",
    "out_dir",
    "n_bins",
    "boundary_extent",
    "boundary_resolution",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Validation(format!("malformed value {v:?} for {key}")))
}

fn parse_real(key: &str, v: &str) -> Result<f64> {
    let x: f64 = parse_num(key, v)?;
    if !x.is_finite() {
        return Err(Error::Validation(format!("{key} must be finite, got {v:?}")));
    }
    Ok(x)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Validation(format!("{key} must be true or false, got {v:?}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|p| parse_real(key, p.trim())).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Validation(format!("unknown config key {key:?} on line {}", n + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Validation(format!("duplicate config key {key:?} on line {}", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Validation(format!("line {}: {e}", n + 1)))?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => {
                self.dataset = match v {
                    "moons" => DatasetKind::Moons,
                    "shapes" => DatasetKind::Shapes,
                    _ => return Err(Error::Validation(format!("unknown dataset {v:?}"))),
                }
            }
            "n_labeled" => self.n_labeled = parse_num(key, v)?,
            "n_unlabeled" => self.n_unlabeled = parse_num(key, v)?,
            "n_val" => self.n_val = parse_num(key, v)?,
            "n_test" => self.n_test = parse_num(key, v)?,
            "class_balanced" => self.class_balanced = parse_bool(key, v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            "resample_data" => self.resample_data = parse_bool(key, v)?,
            "moons_noise" => self.moons_noise = parse_real(key, v)?,
            "image_side" => self.image_side = parse_num(key, v)?,
            "n_classes" => self.n_classes = parse_num(key, v)?,
            "arch" => self.arch = if v == "auto" { None } else { Some(Architecture::parse(v)?) },
            "mix_layers" => self.mix_layers = v.parse()?,
            "alpha_input" => self.alpha_input = parse_real(key, v)?,
            "alpha_latent" => self.alpha_latent = parse_real(key, v)?,
            "lambda_u" => self.lambda_u = parse_real(key, v)?,
            "m" => self.m = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "lr" => self.lr = parse_real(key, v)?,
            "lr_decay_epochs" => {
                self.lr_decay_epochs = if v == "none" {
                    Vec::new()
                } else {
                    v.split(',').map(|p| parse_num(key, p.trim())).collect::<Result<_>>()?
                }
            }
            "lr_decay_factor" => self.lr_decay_factor = parse_real(key, v)?,
            "batch_labeled" => self.batch_labeled = parse_num(key, v)?,
            "batch_unlabeled" => self.batch_unlabeled = parse_num(key, v)?,
            "task" => self.task = v.parse()?,
            "augment" => self.augment = if v == "auto" { None } else { Some(v.parse()?) },
            "augment_labeled" => self.augment_labeled = parse_bool(key, v)?,
            "lambda_fixed" => self.lambda_fixed = if v == "none" { None } else { Some(parse_real(key, v)?) },
            "lambda_mode" => {
                self.lambda_mode = match v {
                    "per-batch" => LambdaMode::PerBatch,
                    "per-example" => LambdaMode::PerExample,
                    _ => return Err(Error::Validation(format!("unknown lambda_mode {v:?}"))),
                }
            }
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::Validation(format!("unknown optimizer {v:?}"))),
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "n_seeds" => self.n_seeds = parse_num(key, v)?,
            "out_dir" => {
                if v.is_empty() {
                    return Err(Error::Validation("out_dir is empty".into()));
                }
                self.out_dir = v.to_string()
            }
            "n_bins" => self.n_bins = parse_num(key, v)?,
            "boundary_extent" => {
                let e = parse_list(key, v)?;
                if e.len() != 4 {
                    return Err(Error::Validation(format!("boundary_extent needs 4 values, got {v:?}")));
                }
                self.boundary_extent = Extent::new(e[0], e[1], e[2], e[3])?;
            }
            "boundary_resolution" => self.boundary_resolution = parse_resolution(v)?,
            _ => unreachable!("key checked against KEYS"),
        }
        Ok(())
    }

    /// Cross-field checks that do not need a built network.
    fn check(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::Validation("n_seeds must be at least 1".into()));
        }
        if self.n_bins == 0 {
            return Err(Error::Validation("n_bins must be at least 1".into()));
        }
        if self.n_unlabeled == 0 {
            return Err(Error::Validation("n_unlabeled must be at least 1".into()));
        }
        self.ssl(0).validate(None)
    }

    /// Seed of dataset generation and splitting for the run with `seed`.
    pub fn effective_data_seed(&self) -> u64 {
        if self.resample_data {
            derive_seed(self.data_seed, self.seed)
        } else {
            self.data_seed
        }
    }

    pub fn architecture(&self) -> Architecture {
        match (&self.arch, self.dataset) {
            (Some(a), _) => a.clone(),
            (None, DatasetKind::Moons) => Architecture::two_moons_default(),
            (None, DatasetKind::Shapes) => Architecture::image_default(self.image_side, self.n_classes),
        }
    }

    pub fn augment_policy(&self) -> AugmentPolicy {
        match (self.augment, self.dataset) {
            (Some(p), _) => p,
            (None, DatasetKind::Moons) => AugmentPolicy::PointJitter(0.05),
            (None, DatasetKind::Shapes) => AugmentPolicy::RotateTranslate,
        }
    }

    /// Training hyperparameters for one run with `seed`.
    pub fn ssl(&self, seed: u64) -> SslConfig {
        SslConfig {
            mix_layers: self.mix_layers.clone(),
            alpha_input: self.alpha_input,
            alpha_latent: self.alpha_latent,
            lambda_u: self.lambda_u,
            m: self.m,
            epochs: self.epochs,
            lr: self.lr,
            lr_decay_epochs: self.lr_decay_epochs.clone(),
            lr_decay_factor: self.lr_decay_factor,
            batch_labeled: self.batch_labeled,
            batch_unlabeled: self.batch_unlabeled,
            task: self.task,
            augment: self.augment_policy(),
            seed,
            lambda_fixed: self.lambda_fixed,
            lambda_mode: self.lambda_mode,
            augment_labeled: self.augment_labeled,
            optimizer: self.optimizer,
        }
    }
}

pub fn parse_resolution(v: &str) -> Result<(usize, usize)> {
    let bad = || Error::Validation(format!("resolution must look like 64x64, got {v:?}"));
    let (r, c) = v.split_once('x').ok_or_else(bad)?;
    let r: usize = r.trim().parse().map_err(|_| bad())?;
    let c: usize = c.trim().parse().map_err(|_| bad())?;
    if r < 2 || c < 2 {
        return Err(Error::Validation(format!("resolution {v} below 2x2")));
    }
    Ok((r, c))
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.boundary_extent;
        let opt = |o: Option<String>, none: &str| o.unwrap_or_else(|| none.to_string());
        let values: [String; 35] = [
            match self.dataset {
                DatasetKind::Moons => "moons".into(),
                DatasetKind::Shapes => "shapes".into(),
            },
            self.n_labeled.to_string(),
            self.n_unlabeled.to_string(),
            self.n_val.to_string(),
            self.n_test.to_string(),
            self.class_balanced.to_string(),
            self.data_seed.to_string(),
            self.resample_data.to_string(),
            self.moons_noise.to_string(),
            self.image_side.to_string(),
            self.n_classes.to_string(),
            opt(self.arch.as_ref().map(Architecture::to_string), "auto"),
            self.mix_layers.to_string(),
            self.alpha_input.to_string(),
            self.alpha_latent.to_string(),
            self.lambda_u.to_string(),
            self.m.to_string(),
            self.epochs.to_string(),
            self.lr.to_string(),
            if self.lr_decay_epochs.is_empty() {
                "none".into()
            } else {
                join(&self.lr_decay_epochs)
            },
            self.lr_decay_factor.to_string(),
            self.batch_labeled.to_string(),
            self.batch_unlabeled.to_string(),
            self.task.to_string(),
            opt(self.augment.map(|a| a.to_string()), "auto"),
            self.augment_labeled.to_string(),
            opt(self.lambda_fixed.map(|l| l.to_string()), "none"),
            match self.lambda_mode {
                LambdaMode::PerBatch => "per-batch".into(),
                LambdaMode::PerExample => "per-example".into(),
            },
            match self.optimizer {
                OptimizerKind::Adam => "adam".into(),
                OptimizerKind::Sgd => "sgd".into(),
            },
            self.seed.to_string(),
            self.n_seeds.to_string(),
            self.out_dir.clone(),
            self.n_bins.to_string(),
            join(&[e.xmin, e.xmax, e.ymin, e.ymax]),
            format!("{}x{}", self.boundary_resolution.0, self.boundary_resolution.1),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
