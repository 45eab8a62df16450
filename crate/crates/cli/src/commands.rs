//! The `train`, `eval`, `boundary`, `calibrate` and `export` commands.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use mixsemi_core::data::{split, synth_images, two_moons, Dataset, SplitSpec, Splits};
use mixsemi_core::metrics::{self, BoundaryRaster, Extent, ReliabilityBins};
use mixsemi_core::rng::derive_seed;
use mixsemi_core::ssl::{train, TrainHistory};
use mixsemi_core::{Error, LayeredNetwork, Result, Task};

use crate::config::{DatasetKind, RunConfig};
use crate::report::{self, MetricsTable};

/// Generate the configured dataset and partition it.
pub fn build_data(cfg: &RunConfig) -> Result<Splits> {
    let total = cfg.n_labeled + cfg.n_unlabeled + cfg.n_val + cfg.n_test;
    let data_seed = cfg.effective_data_seed();
    let mut data: Dataset = match cfg.dataset {
        DatasetKind::Moons => two_moons(total, cfg.moons_noise, data_seed)?,
        DatasetKind::Shapes => synth_images(total, cfg.n_classes, cfg.image_side, data_seed)?,
    };
    data.task = cfg.task;
    split(
        &data,
        &SplitSpec {
            n_labeled: cfg.n_labeled,
            n_val: cfg.n_val,
            n_test: cfg.n_test,
            class_balanced: cfg.class_balanced,
            seed: data_seed,
        },
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Files produced by one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub seed: u64,
    pub dir: PathBuf,
    pub history: TrainHistory,
}

/// Seeds and output directories of a `train` invocation: one run in `out`
/// when a seed is forced or `n_seeds == 1`, otherwise `out/run_<i>`.
pub fn plan_runs(cfg: &RunConfig, seed_override: Option<u64>, out: &Path) -> Vec<(u64, PathBuf)> {
    match seed_override {
        Some(s) => vec![(s, out.to_path_buf())],
        None if cfg.n_seeds == 1 => vec![(cfg.seed, out.to_path_buf())],
        None => (0..cfg.n_seeds)
            .map(|i| (derive_seed(cfg.seed, i as u64), out.join(format!("run_{i}"))))
            .collect(),
    }
}

/// The configuration of the single run with `seed`, as saved in `config.txt`.
pub fn run_config(cfg: &RunConfig, seed: u64) -> RunConfig {
    let mut resolved = cfg.clone();
    resolved.seed = seed;
    resolved.n_seeds = 1;
    resolved
}

/// The configuration a saved model was trained under, as far as the data is
/// concerned: with `resample_data` the run seed is read from the
/// `config.txt` next to the model.
pub fn config_for_model(cfg: &RunConfig, model: &Path) -> Result<RunConfig> {
    if !cfg.resample_data {
        return Ok(cfg.clone());
    }
    let saved = RunConfig::load(model.with_file_name("config.txt"))?;
    Ok(run_config(cfg, saved.seed))
}

fn train_one(cfg: &RunConfig, shared: Option<&Splits>, seed: u64, dir: &Path) -> Result<RunOutput> {
    create_dir(dir)?;
    let resolved = run_config(cfg, seed);
    let own;
    let data = match shared {
        Some(d) => d,
        None => {
            own = build_data(&resolved)?;
            &own
        }
    };
    let net = LayeredNetwork::build(&cfg.architecture(), derive_seed(seed, 0))?;
    let ssl = cfg.ssl(seed);
    ssl.validate(Some(&net))?;
    let (net, history) = train(&ssl, net, data)?;
    net.save(dir.join("model.bin"))?;
    report::write_file(&dir.join("history.csv"), &report::history_csv(&history))?;
    report::write_file(&dir.join("config.txt"), &resolved.to_string())?;
    info!("run seed {seed}: best epoch {:?}", history.best_epoch);
    Ok(RunOutput {
        seed,
        dir: dir.to_path_buf(),
        history,
    })
}

/// Train every planned run, spreading runs over the available cores.
pub fn cmd_train(cfg: &RunConfig, seed_override: Option<u64>, out: &Path) -> Result<Vec<RunOutput>> {
    let runs = plan_runs(cfg, seed_override, out);
    create_dir(out)?;
    let shared = if cfg.resample_data { None } else { Some(build_data(cfg)?) };
    let data = shared.as_ref();
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(runs.len());
    if workers <= 1 {
        return runs.iter().map(|(s, d)| train_one(cfg, data, *s, d)).collect();
    }
    let mut results: Vec<Option<Result<RunOutput>>> = (0..runs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let runs = &runs;
                scope.spawn(move || {
                    (w..runs.len())
                        .step_by(workers)
                        .map(|i| (i, train_one(cfg, data, runs[i].0, &runs[i].1)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("training worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    results.into_iter().map(|r| r.expect("every run assigned")).collect()
}

/// Expand directories into the model files they hold.
pub fn resolve_models(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            out.push(p.clone());
            continue;
        }
        let direct = p.join("model.bin");
        if direct.is_file() {
            out.push(direct);
            continue;
        }
        let mut runs: Vec<(usize, PathBuf)> = fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let i = name.strip_prefix("run_")?.parse().ok()?;
                let m = e.path().join("model.bin");
                m.is_file().then_some((i, m))
            })
            .collect();
        if runs.is_empty() {
            return Err(Error::Usage(format!("no model.bin under {}", p.display())));
        }
        runs.sort();
        out.extend(runs.into_iter().map(|(_, m)| m));
    }
    if out.is_empty() {
        return Err(Error::Usage("no model given".into()));
    }
    Ok(out)
}

fn check_compatible(net: &LayeredNetwork, data: &Dataset) -> Result<()> {
    let want: Vec<usize> = data.inputs.shape()[1..].to_vec();
    if net.input_shape() != want.as_slice() || net.num_outputs() != data.num_classes() {
        let mut have = net.input_shape().to_vec();
        have.push(net.num_outputs());
        let mut need = want;
        need.push(data.num_classes());
        return Err(Error::Dimension {
            op: "model vs dataset (input shape, classes)",
            lhs: have,
            rhs: need,
        });
    }
    Ok(())
}

/// Test-set probabilities of a saved model under the configured task.
pub fn test_probabilities(cfg: &RunConfig, net: &LayeredNetwork, test: &Dataset) -> Result<mixsemi_core::Tensor> {
    check_compatible(net, test)?;
    Ok(metrics::probabilities(&net.logits(&test.inputs)?, cfg.task))
}

/// Metrics of one model on the test split, in `MetricsTable` row order.
pub fn evaluate(cfg: &RunConfig, net: &LayeredNetwork, test: &Dataset) -> Result<Vec<(String, f64)>> {
    let probs = test_probabilities(cfg, net, test)?;
    let mut rows = Vec::new();
    for (j, a) in metrics::per_class_auroc(&probs, &test.labels)?.into_iter().enumerate() {
        rows.push((format!("class_{j}_auroc"), a.unwrap_or(f64::NAN)));
    }
    rows.push(("mean_auroc".into(), metrics::mean_auroc(&probs, &test.labels)?));
    let accuracy = match cfg.task {
        Task::MultiClass => metrics::accuracy(&probs, &test.labels)?,
        Task::MultiLabel => {
            let hits = probs
                .data()
                .iter()
                .zip(test.labels.data())
                .filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5))
                .count();
            hits as f64 / probs.len() as f64
        }
    };
    rows.push(("accuracy".into(), accuracy));
    let bins = metrics::reliability_from_probs(&probs, &test.labels, cfg.task, cfg.n_bins)?;
    rows.push(("ece".into(), bins.ece));
    Ok(rows)
}

pub fn cmd_eval(cfg: &RunConfig, models: &[PathBuf], out: &Path) -> Result<MetricsTable> {
    let models = resolve_models(models)?;
    let shared = if cfg.resample_data { None } else { Some(build_data(cfg)?) };
    let mut table = MetricsTable::default();
    for m in &models {
        let net = LayeredNetwork::load(m)?;
        let test = match &shared {
            Some(d) => d.test.clone(),
            None => build_data(&config_for_model(cfg, m)?)?.test,
        };
        table.push_run(evaluate(cfg, &net, &test)?)?;
    }
    create_dir(out)?;
    report::write_file(&out.join("metrics.csv"), &table.to_csv())?;
    Ok(table)
}

pub fn cmd_boundary(model: &Path, extent: Extent, resolution: (usize, usize), out: &Path) -> Result<(BoundaryRaster, f64)> {
    let net = LayeredNetwork::load(model)?;
    let raster = metrics::boundary_grid(&net, extent, resolution)?;
    let roughness = metrics::boundary_roughness(&raster);
    create_dir(out)?;
    raster.save_pgm(out.join("boundary.pgm"))?;
    Ok((raster, roughness))
}

pub fn cmd_calibrate(cfg: &RunConfig, model: &Path, n_bins: usize, out: &Path) -> Result<ReliabilityBins> {
    let data = build_data(&config_for_model(cfg, model)?)?;
    if data.test.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let net = LayeredNetwork::load(model)?;
    let probs = test_probabilities(cfg, &net, &data.test)?;
    let bins = metrics::reliability_from_probs(&probs, &data.test.labels, cfg.task, n_bins)?;
    create_dir(out)?;
    report::write_file(&out.join("reliability.csv"), &report::reliability_csv(&bins))?;
    Ok(bins)
}

/// Write each partition as CSV.
pub fn cmd_export(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = build_data(cfg)?;
    create_dir(out)?;
    for (name, d) in [
        ("labeled", &data.labeled),
        ("unlabeled", &data.unlabeled),
        ("validation", &data.validation),
        ("test", &data.test),
    ] {
        d.save_csv(out.join(format!("{name}.csv")))?;
    }
    Ok(())
}
