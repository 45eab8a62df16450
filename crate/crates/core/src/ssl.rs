//! Semi-supervised training: label guessing, loss routing and the epoch loop.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Optimizer, OptimizerKind, Tape, Var};
use crate::data::{AugmentPolicy, Splits, Task};
use crate::error::{Error, Result};
use crate::metrics;
use crate::mixing::{assemble_pairs, draw_lambdas, select_layer, LambdaMode, LayerSet, Origin, PairedBatch};
use crate::network::LayeredNetwork;
use crate::rng;
use crate::tensor::Tensor;

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct SslConfig {
    /// Eligible mixing boundaries.
    pub mix_layers: LayerSet,
    pub alpha_input: f64,
    pub alpha_latent: f64,
    pub lambda_u: f64,
    /// Augmented copies averaged per guess.
    pub m: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub task: Task,
    pub augment: AugmentPolicy,
    pub seed: u64,
    /// Pins λ′ instead of sampling it.
    pub lambda_fixed: Option<f64>,
    pub lambda_mode: LambdaMode,
    pub augment_labeled: bool,
    pub optimizer: OptimizerKind,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            mix_layers: LayerSet::new(vec![0, 1]).expect("nonempty"),
            alpha_input: 1.0,
            alpha_latent: 2.0,
            lambda_u: 75.0,
            m: 2,
            epochs: 256,
            lr: 1e-4,
            lr_decay_epochs: vec![50, 125],
            lr_decay_factor: 10.0,
            batch_labeled: 32,
            batch_unlabeled: 32,
            task: Task::MultiClass,
            augment: AugmentPolicy::RotateTranslate,
            seed: 0,
            lambda_fixed: None,
            lambda_mode: LambdaMode::PerBatch,
            augment_labeled: true,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl SslConfig {
    /// Check internal consistency and, when given, fit with `net`.
    pub fn validate(&self, net: Option<&LayeredNetwork>) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("alpha_input", self.alpha_input)?;
        positive("alpha_latent", self.alpha_latent)?;
        positive("lr", self.lr)?;
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return Err(Error::Parameter(format!("lambda_u must be nonnegative, got {}", self.lambda_u)));
        }
        if !(self.lr_decay_factor > 1.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::Parameter(format!(
                "lr_decay_factor must exceed 1, got {}",
                self.lr_decay_factor
            )));
        }
        if self.m == 0 {
            return Err(Error::Parameter("M must be at least 1".into()));
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return Err(Error::Parameter("batch sizes must be positive".into()));
        }
        if let Some(l) = self.lambda_fixed {
            if !(0.5..=1.0).contains(&l) {
                return Err(Error::Parameter(format!("lambda_fixed {l} outside [0.5, 1]")));
            }
        }
        if let Some(net) = net {
            self.mix_layers.validate(net.num_boundaries())?;
        }
        Ok(())
    }
}

/// `lr · factor^(−k)` with `k` the number of decay epochs `≤ epoch`.
pub fn lr_at(epoch: usize, config: &SslConfig) -> f64 {
    let k = config.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    config.lr * config.lr_decay_factor.powi(-(k as i32))
}

pub fn total_loss(l_x: f64, l_u: f64, lambda_u: f64) -> f64 {
    l_x + lambda_u * l_u
}

/// Averaged predictions on `M` augmentations, plus the augmented inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GuessedLabels {
    pub q: Tensor,
    pub copies: Vec<Tensor>,
}

/// Label guessing with caller-supplied augmentation and prediction.
pub fn guess_labels_with<A, P>(u: &Tensor, m: usize, task: Task, mut augment: A, mut predict: P) -> Result<GuessedLabels>
where
    A: FnMut(&Tensor) -> Result<Tensor>,
    P: FnMut(&Tensor) -> Result<Tensor>,
{
    if m == 0 {
        return Err(Error::Parameter("M must be at least 1".into()));
    }
    let mut copies = Vec::with_capacity(m);
    let mut sum: Option<Tensor> = None;
    for _ in 0..m {
        let a = augment(u)?;
        let p = predict(&a)?;
        match sum.as_mut() {
            None => sum = Some(p),
            Some(s) => {
                if s.shape() != p.shape() {
                    return Err(Error::Dimension {
                        op: "guess_labels",
                        lhs: s.shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    });
                }
                for (x, y) in s.data_mut().iter_mut().zip(p.data()) {
                    *x += y;
                }
            }
        }
        copies.push(a);
    }
    let q = sum.expect("m >= 1").map(|v| v / m as f64);
    check_guess(&q, task)?;
    Ok(GuessedLabels { q, copies })
}

fn check_guess(q: &Tensor, task: Task) -> Result<()> {
    let c = q.row_len();
    for row in q.data().chunks(c) {
        let in_unit = row.iter().all(|v| (0.0..=1.0).contains(v));
        let ok = match task {
            Task::MultiClass => in_unit && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-6,
            Task::MultiLabel => in_unit,
        };
        if !ok {
            return Err(Error::Validation(format!("guessed label row {row:?} invalid for {task}")));
        }
    }
    Ok(())
}

/// Eq. 1 with the network's own predictions; no gradient is recorded.
pub fn guess_labels<R: Rng + ?Sized>(
    net: &LayeredNetwork,
    u: &Tensor,
    m: usize,
    policy: &AugmentPolicy,
    task: Task,
    rng: &mut R,
) -> Result<GuessedLabels> {
    guess_labels_with(
        u,
        m,
        task,
        |x| policy.apply(x, rng),
        |x| Ok(metrics::probabilities(&net.logits(x)?, task)),
    )
}

fn rows_with(origin: &[Origin], want: Origin) -> Vec<usize> {
    (0..origin.len()).filter(|&i| origin[i] == want).collect()
}

fn zero_loss(tape: &mut Tape, what: &str) -> Var {
    warn!("{what}: no rows in this batch, contributing 0");
    tape.constant(Tensor::scalar(0.0))
}

/// Cross-entropy (softmax or sigmoid) over `rows` of `logits`, mean over rows.
pub fn supervised_loss(tape: &mut Tape, logits: Var, mixed_labels: &Tensor, rows: &[usize], task: Task) -> Result<Var> {
    if rows.is_empty() {
        return Ok(zero_loss(tape, "supervised loss"));
    }
    let all = rows.len() == tape.value(logits).rows();
    let (z, y) = if all {
        (logits, mixed_labels.clone())
    } else {
        (tape.gather_rows(logits, rows)?, mixed_labels.select_rows(rows)?)
    };
    match task {
        Task::MultiClass => tape.soft_cross_entropy(z, &y),
        Task::MultiLabel => tape.binary_cross_entropy(z, &y),
    }
}

/// Squared error between predicted probabilities and targets over `rows`,
/// averaged over rows and classes.
pub fn unsupervised_loss(tape: &mut Tape, logits: Var, mixed_labels: &Tensor, rows: &[usize], task: Task) -> Result<Var> {
    if rows.is_empty() {
        return Ok(zero_loss(tape, "unsupervised loss"));
    }
    let z = if rows.len() == tape.value(logits).rows() {
        logits
    } else {
        tape.gather_rows(logits, rows)?
    };
    let p = match task {
        Task::MultiClass => tape.softmax_rows(z)?,
        Task::MultiLabel => tape.sigmoid(z),
    };
    tape.l2_loss(p, &mixed_labels.select_rows(rows)?)
}

/// Per-row `λ_i·y1_i + (1−λ_i)·y2_i`.
fn mix_labels(pairs: &PairedBatch, lambdas: &[f64]) -> Result<Tensor> {
    let y2 = pairs.y2()?;
    let c = pairs.y1.row_len();
    let mut out = pairs.y1.clone();
    for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
        let lam = if lambdas.len() == 1 { lambdas[0] } else { lambdas[i] };
        for (v, w) in row.iter_mut().zip(y2.row(i)) {
            *v = lam * *v + (1.0 - lam) * w;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub loss_x: f64,
    pub loss_u: f64,
    pub loss_total: f64,
    pub layer: usize,
}

/// The random choices of one step: the paired pool, the boundary, the
/// mixing weights and the mixed targets. Guesses inside are constants.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub pairs: PairedBatch,
    pub layer: usize,
    pub lambdas: Vec<f64>,
    pub mixed_labels: Tensor,
}

/// Augment, guess, pair and draw the boundary and weights. Draws from `rng`
/// in a fixed order.
pub fn plan_step<R: Rng + ?Sized>(
    net: &LayeredNetwork,
    labeled_x: &Tensor,
    labeled_y: &Tensor,
    unlabeled_x: Option<&Tensor>,
    config: &SslConfig,
    rng: &mut R,
) -> Result<StepPlan> {
    if labeled_x.rows() == 0 {
        return Err(Error::Empty("labeled batch".into()));
    }
    let xl = if config.augment_labeled {
        config.augment.apply(labeled_x, rng)?
    } else {
        labeled_x.clone()
    };
    let guessed = match unlabeled_x {
        Some(u) if config.lambda_u > 0.0 => {
            if u.rows() == 0 {
                return Err(Error::Empty("unlabeled batch".into()));
            }
            let g = guess_labels(net, u, config.m, &config.augment, config.task, rng)?;
            let copies: Vec<&Tensor> = g.copies.iter().collect();
            let qs: Vec<&Tensor> = std::iter::repeat_n(&g.q, config.m).collect();
            Some((Tensor::concat_rows(&copies)?, Tensor::concat_rows(&qs)?))
        }
        _ => None,
    };
    let pairs = assemble_pairs(&xl, labeled_y, guessed.as_ref().map(|(x, q)| (x, q)), rng)?;
    let layer = select_layer(&config.mix_layers, rng);
    let lambdas = match config.lambda_fixed {
        Some(l) => vec![l],
        None => {
            let alpha = if layer == 0 { config.alpha_input } else { config.alpha_latent };
            draw_lambdas(alpha, pairs.len(), config.lambda_mode, rng)?
        }
    };
    let mixed_labels = mix_labels(&pairs, &lambdas)?;
    Ok(StepPlan {
        pairs,
        layer,
        lambdas,
        mixed_labels,
    })
}

/// Loss terms of a step recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub loss_x: Var,
    pub loss_u: Var,
    pub total: Var,
}

/// Forward the pool to the plan's boundary, mix with the partners, finish
/// the forward pass and route rows to the two losses.
pub fn step_loss(tape: &mut Tape, net: &LayeredNetwork, plan: &StepPlan, config: &SslConfig) -> Result<StepVars> {
    let pairs = &plan.pairs;
    let x = tape.constant(pairs.x1.clone());
    let h = net.forward_to(tape, plan.layer, x)?;
    let h2 = tape.gather_rows(h, &pairs.partner)?;
    let hm = tape.mix(h, h2, &plan.lambdas)?;
    let logits = net.forward_from(tape, plan.layer, hm)?;

    let near_l = rows_with(&pairs.origin, Origin::NearLabeled);
    let near_u = rows_with(&pairs.origin, Origin::NearUnlabeled);
    let loss_x = supervised_loss(tape, logits, &plan.mixed_labels, &near_l, config.task)?;
    let loss_u = if near_u.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        unsupervised_loss(tape, logits, &plan.mixed_labels, &near_u, config.task)?
    };
    let weighted = tape.scale(loss_u, config.lambda_u);
    let total = tape.add(loss_x, weighted)?;
    Ok(StepVars { loss_x, loss_u, total })
}

/// One optimization step on a labeled and an unlabeled batch.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    net: &mut LayeredNetwork,
    optimizer: &mut Optimizer,
    labeled_x: &Tensor,
    labeled_y: &Tensor,
    unlabeled_x: Option<&Tensor>,
    config: &SslConfig,
    lr: f64,
    rng: &mut R,
) -> Result<StepLosses> {
    let plan = plan_step(net, labeled_x, labeled_y, unlabeled_x, config, rng)?;
    let mut tape = Tape::new();
    let v = step_loss(&mut tape, net, &plan, config)?;
    let grads = tape.backward(v.total, net.params())?;
    optimizer.step(net.params_mut(), &grads, lr)?;
    let item = |var: Var| tape.value(var).data()[0];
    Ok(StepLosses {
        loss_x: item(v.loss_x),
        loss_u: item(v.loss_u),
        loss_total: item(v.total),
        layer: plan.layer,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_x: f64,
    pub loss_u: f64,
    pub loss_total: f64,
    pub lr: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the last epoch attaining the highest validation metric.
    pub best_epoch: Option<usize>,
}

/// Accuracy for multi-class tasks, mean AUROC for multi-label tasks.
pub fn validation_metric(net: &LayeredNetwork, data: &crate::data::Dataset, task: Task) -> Result<f64> {
    let probs = metrics::probabilities(&net.logits(&data.inputs)?, task);
    match task {
        Task::MultiClass => metrics::accuracy(&probs, &data.labels),
        Task::MultiLabel => metrics::mean_auroc(&probs, &data.labels),
    }
}

/// Endless reshuffled passes over `0..n`.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Cycler { order, pos: 0 }
    }

    fn take<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Train `net` and return the parameters of the best validation epoch.
///
/// An epoch is one pass over the unlabeled pool in batches of
/// `batch_unlabeled`; labeled batches (at most the pool size) are drawn
/// from a reshuffled cycle over the labeled pool.
pub fn train(config: &SslConfig, mut net: LayeredNetwork, data: &Splits) -> Result<(LayeredNetwork, TrainHistory)> {
    config.validate(Some(&net))?;
    for (name, d) in [
        ("labeled", &data.labeled),
        ("unlabeled", &data.unlabeled),
        ("validation", &data.validation),
    ] {
        if d.is_empty() {
            return Err(Error::Empty(format!("{name} partition")));
        }
    }
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((net, history));
    }
    let mut rng = rng::substream(config.seed, "train");
    let mut optimizer = Optimizer::new(config.optimizer, net.params());
    let n_l = data.labeled.len();
    let n_u = data.unlabeled.len();
    let batch_l = config.batch_labeled.min(n_l);
    let steps = n_u.div_ceil(config.batch_unlabeled);
    let mut labeled = Cycler::new(n_l, &mut rng);
    let mut unlabeled_order: Vec<usize> = (0..n_u).collect();
    let mut best: Option<(f64, crate::autodiff::ParamStore)> = None;

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        unlabeled_order.shuffle(&mut rng);
        let (mut sx, mut su, mut st) = (0.0, 0.0, 0.0);
        for s in 0..steps {
            let li = labeled.take(batch_l, &mut rng);
            let lx = data.labeled.inputs.select_rows(&li)?;
            let ly = data.labeled.labels.select_rows(&li)?;
            let ux = if config.lambda_u > 0.0 {
                let end = ((s + 1) * config.batch_unlabeled).min(n_u);
                Some(data.unlabeled.inputs.select_rows(&unlabeled_order[s * config.batch_unlabeled..end])?)
            } else {
                None
            };
            let l = train_step(&mut net, &mut optimizer, &lx, &ly, ux.as_ref(), config, lr, &mut rng)?;
            if !l.loss_total.is_finite() {
                return Err(Error::Validation(format!("non-finite loss at epoch {epoch}, step {s}")));
            }
            sx += l.loss_x;
            su += l.loss_u;
            st += l.loss_total;
        }
        let k = steps as f64;
        let val_metric = validation_metric(&net, &data.validation, config.task)?;
        debug!("epoch {epoch}: loss {:.6} val {val_metric:.4}", st / k);
        history.records.push(EpochRecord {
            epoch,
            loss_x: sx / k,
            loss_u: su / k,
            loss_total: st / k,
            lr,
            val_metric,
        });
        if best.as_ref().is_none_or(|(b, _)| val_metric >= *b) {
            best = Some((val_metric, net.params().clone()));
            history.best_epoch = Some(epoch);
        }
    }
    if let Some((_, params)) = best {
        *net.params_mut() = params;
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{one_hot, Dataset};
    use crate::network::Architecture;
    use crate::rng::seeded;

    #[test]
    fn schedule() {
        let c = SslConfig::default();
        assert_eq!(lr_at(0, &c), 1e-4);
        assert!((lr_at(49, &c) - 1e-4).abs() < 1e-20);
        assert!((lr_at(50, &c) - 1e-5).abs() < 1e-20);
        assert!((lr_at(125, &c) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn weighted_total() {
        assert_eq!(total_loss(0.5, 0.01, 75.0), 1.25);
        assert_eq!(total_loss(0.5, 0.3, 0.0), 0.5);
        assert_eq!(total_loss(0.5, 0.0, 75.0), 0.5);
    }

    #[test]
    fn config_validation() {
        let ok = SslConfig::default();
        ok.validate(None).unwrap();
        let bad = [
            SslConfig { m: 0, ..ok.clone() },
            SslConfig { lr_decay_factor: 1.0, ..ok.clone() },
            SslConfig { alpha_latent: 0.0, ..ok.clone() },
            SslConfig { lambda_fixed: Some(0.3), ..ok.clone() },
            SslConfig { lambda_u: -1.0, ..ok.clone() },
        ];
        for c in bad {
            assert!(c.validate(None).is_err(), "{c:?}");
        }
        let net = LayeredNetwork::build(&Architecture::mlp(2, &[4], 2), 0).unwrap();
        let far = SslConfig { mix_layers: "0,2".parse().unwrap(), ..ok };
        assert!(matches!(far.validate(Some(&net)), Err(Error::LayerIndex { index: 2, max: 1 })));
    }

    #[test]
    fn guess_examples() {
        let u = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut calls = 0;
        let g = guess_labels_with(
            &u,
            2,
            Task::MultiClass,
            |x| Ok(x.clone()),
            |_| {
                calls += 1;
                Tensor::from_rows(&[if calls == 1 { vec![0.2, 0.8] } else { vec![0.4, 0.6] }])
            },
        )
        .unwrap();
        assert!((g.q.data()[0] - 0.3).abs() < 1e-15 && (g.q.data()[1] - 0.7).abs() < 1e-15);
        assert!(guess_labels_with(&u, 0, Task::MultiClass, |x| Ok(x.clone()), |x| Ok(x.clone())).is_err());

        let net = LayeredNetwork::build(&Architecture::mlp(2, &[8], 3), 1).unwrap();
        let mut r = seeded(0);
        let x = Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap();
        let direct = metrics::probabilities(&net.logits(&x).unwrap(), Task::MultiClass);
        for m in [1, 3] {
            let g = guess_labels(&net, &x, m, &AugmentPolicy::Identity, Task::MultiClass, &mut r).unwrap();
            for (a, b) in g.q.data().iter().zip(direct.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn guesses_stay_on_simplex() {
        let mut r = seeded(4);
        for seed in 0..10 {
            let net = LayeredNetwork::build(&Architecture::mlp(2, &[16, 16], 4), seed).unwrap();
            let rows: Vec<Vec<f64>> = (0..20).map(|_| vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)]).collect();
            let x = Tensor::from_rows(&rows).unwrap();
            for m in [1, 2, 4] {
                let g = guess_labels(&net, &x, m, &AugmentPolicy::PointJitter(0.3), Task::MultiClass, &mut r).unwrap();
                for row in g.q.data().chunks(4) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
                assert_eq!(g.copies.len(), m);
            }
        }
    }

    fn loss_value(f: impl FnOnce(&mut Tape, Var) -> Result<Var>, logits: Vec<Vec<f64>>) -> f64 {
        let mut t = Tape::new();
        let z = t.constant(Tensor::from_rows(&logits).unwrap());
        let l = f(&mut t, z).unwrap();
        t.value(l).data()[0]
    }

    #[test]
    fn supervised_loss_examples() {
        let y = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.25, 0.75]]).unwrap();
        // row 0: -log σ(z0 - z1) with z = [1, 0]; row 1: soft target on z = [0, 0]
        let v = loss_value(|t, z| supervised_loss(t, z, &y, &[0, 1], Task::MultiClass), vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        let row0 = (1.0 + (-1.0f64).exp()).ln();
        let row1 = 2f64.ln();
        assert!((v - (row0 + row1) / 2.0).abs() < 1e-9);

        let onehot = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let v = loss_value(|t, z| supervised_loss(t, z, &onehot, &[0], Task::MultiClass), vec![vec![60.0, -60.0]]);
        assert!(v < 1e-9);
        let v = loss_value(|t, z| supervised_loss(t, z, &onehot, &[], Task::MultiClass), vec![vec![1.0, 0.0]]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn unsupervised_loss_examples() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let y = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        // softmax of [logit(0.6), 0] is [0.6, 0.4]
        let v = loss_value(|t, z| unsupervised_loss(t, z, &y, &[0], Task::MultiClass), vec![vec![logit(0.6), 0.0]]);
        assert!((v - 0.01).abs() < 1e-12);
        let y = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let v = loss_value(|t, z| unsupervised_loss(t, z, &y, &[0], Task::MultiClass), vec![vec![80.0, -80.0]]);
        assert!((v - 1.0).abs() < 1e-12);
        let y = Tensor::from_rows(&[vec![0.7, 0.2]]).unwrap();
        let v = loss_value(
            |t, z| unsupervised_loss(t, z, &y, &[0], Task::MultiLabel),
            vec![vec![logit(0.7), logit(0.2)]],
        );
        assert!(v.abs() < 1e-12);
    }

    fn toy_batch() -> (Tensor, Tensor) {
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -0.5], vec![-0.8, 0.9]]).unwrap();
        (x, one_hot(&[0, 1, 0, 1], 2).unwrap())
    }

    fn supervised_config() -> SslConfig {
        SslConfig {
            mix_layers: LayerSet::new(vec![0]).unwrap(),
            lambda_u: 0.0,
            lambda_fixed: Some(1.0),
            augment: AugmentPolicy::Identity,
            lr: 0.01,
            ..SslConfig::default()
        }
    }

    #[test]
    fn degenerate_step_equals_plain_supervised_step() {
        let arch = Architecture::mlp(2, &[8], 2);
        let (x, y) = toy_batch();
        let mut net = LayeredNetwork::build(&arch, 3).unwrap();
        let mut reference = net.clone();
        let cfg = supervised_config();
        let mut opt = Optimizer::new(cfg.optimizer, net.params());
        let mut ref_opt = Optimizer::new(cfg.optimizer, reference.params());
        let mut r = seeded(9);
        let u = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        for _ in 0..5 {
            let l = train_step(&mut net, &mut opt, &x, &y, Some(&u), &cfg, cfg.lr, &mut r).unwrap();
            assert_eq!(l.loss_u, 0.0);

            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let z = reference.forward(&mut t, xv).unwrap();
            let loss = t.soft_cross_entropy(z, &y).unwrap();
            assert_eq!(t.value(loss).data()[0], l.loss_x);
            let g = t.backward(loss, reference.params()).unwrap();
            ref_opt.step(reference.params_mut(), &g, cfg.lr).unwrap();
            assert_eq!(net.params().flatten(), reference.params().flatten());
        }
    }

    #[test]
    fn repeated_steps_fit_fixed_batch() {
        let arch = Architecture::mlp(2, &[16], 2);
        let (x, y) = toy_batch();
        let u = Tensor::from_rows(&[vec![0.5, 0.2], vec![-0.4, 0.1]]).unwrap();
        let mut net = LayeredNetwork::build(&arch, 1).unwrap();
        let cfg = SslConfig {
            augment: AugmentPolicy::Identity,
            lr: 0.01,
            lambda_fixed: Some(1.0),
            lambda_u: 1.0,
            ..SslConfig::default()
        };
        let mut opt = Optimizer::new(cfg.optimizer, net.params());
        let mut r = seeded(2);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..50 {
            let l = train_step(&mut net, &mut opt, &x, &y, Some(&u), &cfg, cfg.lr, &mut r).unwrap();
            first.get_or_insert(l.loss_x);
            last = l.loss_x;
        }
        assert!(last < 0.5 * first.unwrap(), "{first:?} -> {last}");
    }

    #[test]
    fn gradient_reaches_encoder_and_decoder() {
        let arch = Architecture::mlp(2, &[6, 6], 3);
        let net = LayeredNetwork::build(&arch, 5).unwrap();
        let mut r = seeded(1);
        let rows: Vec<Vec<f64>> = (0..6).map(|_| vec![r.random(), r.random()]).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let y = one_hot(&[0, 1, 2, 0, 1, 2], 3).unwrap();
        let cfg = SslConfig {
            mix_layers: LayerSet::new(vec![1]).unwrap(),
            augment: AugmentPolicy::Identity,
            ..SslConfig::default()
        };
        let plan = plan_step(&net, &x, &y, Some(&x), &cfg, &mut r).unwrap();
        assert_eq!(plan.layer, 1);
        let mut tape = Tape::new();
        let v = step_loss(&mut tape, &net, &plan, &cfg).unwrap();
        let grads = tape.backward(v.total, net.params()).unwrap();
        let nonzero = |block: usize| {
            net.block_params(block)
                .iter()
                .any(|&p| grads.get(p).data().iter().any(|v| *v != 0.0))
        };
        assert!(nonzero(0), "encoder");
        assert!(nonzero(1) && nonzero(2), "decoder");
    }

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut r = seeded(seed);
        let mut rows = Vec::new();
        let mut classes = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let sign = if c == 0 { 1.0 } else { -1.0 };
            rows.push(vec![sign * r.random_range(0.5..2.0), r.random_range(-2.0..2.0)]);
            classes.push(c);
        }
        Dataset::new(Tensor::from_rows(&rows).unwrap(), one_hot(&classes, 2).unwrap(), Task::MultiClass).unwrap()
    }

    fn separable_splits() -> Splits {
        let d = separable(240, 7);
        crate::data::split(
            &d,
            &crate::data::SplitSpec {
                n_labeled: 20,
                n_val: 40,
                n_test: 100,
                class_balanced: true,
                seed: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn supervised_training_separates_linear_data() {
        let splits = separable_splits();
        let cfg = SslConfig {
            epochs: 50,
            seed: 4,
            ..supervised_config()
        };
        let net = LayeredNetwork::build(&Architecture::mlp(2, &[16], 2), 0).unwrap();
        let (net, hist) = train(&cfg, net, &splits).unwrap();
        assert_eq!(hist.records.len(), 50);
        let acc = validation_metric(&net, &splits.test, Task::MultiClass).unwrap();
        assert_eq!(acc, 1.0);
        let best = hist.best_epoch.unwrap();
        let max = hist.records.iter().map(|r| r.val_metric).fold(f64::MIN, f64::max);
        assert_eq!(hist.records[best].val_metric, max);
        assert!(hist.records[best + 1..].iter().all(|r| r.val_metric < max));
    }

    #[test]
    fn training_is_deterministic_and_handles_zero_epochs() {
        let splits = separable_splits();
        let cfg = SslConfig {
            epochs: 2,
            lr: 0.01,
            augment: AugmentPolicy::PointJitter(0.05),
            ..SslConfig::default()
        };
        let net = LayeredNetwork::build(&Architecture::mlp(2, &[8], 2), 0).unwrap();
        let (a, ha) = train(&cfg, net.clone(), &splits).unwrap();
        let (b, hb) = train(&cfg, net.clone(), &splits).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.params().flatten(), b.params().flatten());
        assert!(ha.records.iter().all(|r| r.loss_u > 0.0));

        let (c, hc) = train(&SslConfig { epochs: 0, ..cfg }, net.clone(), &splits).unwrap();
        assert!(hc.records.is_empty() && hc.best_epoch.is_none());
        assert_eq!(c, net);
    }
}
