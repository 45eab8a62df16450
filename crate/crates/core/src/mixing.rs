//! Interpolation of example pairs and their labels.
//!
//! Mixing weights come from a symmetric Beta distribution and are folded
//! into `[0.5, 1]`, so a mixed point always sits nearer its first partner.
//! That is what lets the trainer route each mixed row to the supervised or
//! the unsupervised loss by looking only at where the first partner came
//! from.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gamma(shape, 1) draw by the Marsaglia–Tsang squeeze/rejection method.
/// Shapes below one are boosted: `G(a) = G(a + 1) · U^(1/a)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Draw from Beta(alpha, alpha).
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("Beta shape must be positive, got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(rng.random());
    }
    let g1 = sample_gamma(alpha, rng);
    let g2 = sample_gamma(alpha, rng);
    // both underflow only for tiny alpha; the limit law puts mass ½ on each end
    if g1 + g2 == 0.0 {
        return Ok(if rng.random::<bool>() { 1.0 } else { 0.0 });
    }
    Ok(g1 / (g1 + g2))
}

/// `max(λ, 1 − λ)`.
pub fn fold_lambda(lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!("mixing weight {lambda} outside [0, 1]")));
    }
    Ok(lambda.max(1.0 - lambda))
}

/// A raw Beta draw and its folded counterpart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixCoefficient {
    pub lambda_raw: f64,
    pub lambda_prime: f64,
}

impl MixCoefficient {
    pub fn from_raw(lambda_raw: f64) -> Result<Self> {
        Ok(MixCoefficient {
            lambda_raw,
            lambda_prime: fold_lambda(lambda_raw)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<Self> {
        MixCoefficient::from_raw(sample_beta(alpha, rng)?)
    }
}

/// `λ′·a + (1 − λ′)·b` for `λ′ ∈ [0.5, 1]`.
pub fn mix(lambda_prime: f64, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !(0.5..=1.0).contains(&lambda_prime) {
        return Err(Error::Parameter(format!(
            "folded mixing weight {lambda_prime} outside [0.5, 1]"
        )));
    }
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op: "mix",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| lambda_prime * x + (1.0 - lambda_prime) * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Eligible mixing boundaries, kept sorted and unique.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSet(Vec<usize>);

impl LayerSet {
    pub fn new(mut layers: Vec<usize>) -> Result<Self> {
        layers.sort_unstable();
        layers.dedup();
        if layers.is_empty() {
            return Err(Error::Validation("eligible layer set is empty".into()));
        }
        Ok(LayerSet(layers))
    }

    pub fn layers(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, l: usize) -> bool {
        self.0.binary_search(&l).is_ok()
    }

    /// Reject members beyond the last boundary of a network.
    pub fn validate(&self, max_boundary: usize) -> Result<()> {
        match self.0.last() {
            Some(&l) if l > max_boundary => Err(Error::LayerIndex {
                index: l,
                max: max_boundary,
            }),
            _ => Ok(()),
        }
    }
}

impl FromStr for LayerSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Validation(format!("bad layer index {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        LayerSet::new(layers)
    }
}

impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Uniform draw from the eligible set.
pub fn select_layer<R: Rng + ?Sized>(set: &LayerSet, rng: &mut R) -> usize {
    set.0[rng.random_range(0..set.0.len())]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    NearLabeled,
    NearUnlabeled,
}

/// The combined pool in fixed order (`x1`) and, for each row, the pool index
/// of its random partner (`x2 = x1[partner]`).
#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub x1: Tensor,
    pub y1: Tensor,
    pub partner: Vec<usize>,
    pub origin: Vec<Origin>,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }

    pub fn x2(&self) -> Result<Tensor> {
        self.x1.select_rows(&self.partner)
    }

    pub fn y2(&self) -> Result<Tensor> {
        self.y1.select_rows(&self.partner)
    }

    /// Number of leading rows whose first partner is labeled.
    pub fn n_labeled(&self) -> usize {
        self.origin.iter().filter(|&&o| o == Origin::NearLabeled).count()
    }
}

/// Concatenate `[labeled; unlabeled]` and pair every row with a uniformly
/// shuffled copy of the same pool.
pub fn assemble_pairs<R: Rng + ?Sized>(
    labeled_x: &Tensor,
    labeled_y: &Tensor,
    unlabeled_x: Option<(&Tensor, &Tensor)>,
    rng: &mut R,
) -> Result<PairedBatch> {
    if labeled_x.rows() != labeled_y.rows() {
        return Err(Error::Validation("labeled inputs and labels differ in length".into()));
    }
    let (x1, y1, n_u) = match unlabeled_x {
        Some((ux, uy)) => {
            if uy.row_len() != labeled_y.row_len() {
                return Err(Error::Dimension {
                    op: "assemble_pairs labels",
                    lhs: labeled_y.shape().to_vec(),
                    rhs: uy.shape().to_vec(),
                });
            }
            if ux.rows() != uy.rows() {
                return Err(Error::Validation("unlabeled inputs and guesses differ in length".into()));
            }
            (
                Tensor::concat_rows(&[labeled_x, ux])?,
                Tensor::concat_rows(&[labeled_y, uy])?,
                ux.rows(),
            )
        }
        None => (labeled_x.clone(), labeled_y.clone(), 0),
    };
    let n_l = labeled_x.rows();
    let mut partner: Vec<usize> = (0..n_l + n_u).collect();
    partner.shuffle(rng);
    let origin = (0..n_l + n_u)
        .map(|i| if i < n_l { Origin::NearLabeled } else { Origin::NearUnlabeled })
        .collect();
    Ok(PairedBatch {
        x1,
        y1,
        partner,
        origin,
    })
}

/// Mixed representations and labels at one boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct MixBatch {
    pub mixed_latents: Tensor,
    pub mixed_labels: Tensor,
    pub layer: usize,
    pub origin_flags: Vec<Origin>,
}

/// Mix per-row weights `lambdas` (one entry applies to all rows) into the
/// pool's representations `latents` (rows aligned with `pairs.x1`).
pub fn mix_batch(pairs: &PairedBatch, latents: &Tensor, lambdas: &[f64], layer: usize) -> Result<MixBatch> {
    if latents.rows() != pairs.len() {
        return Err(Error::Validation(format!(
            "{} latent rows for {} pairs",
            latents.rows(),
            pairs.len()
        )));
    }
    let partners = latents.select_rows(&pairs.partner)?;
    let labels2 = pairs.y2()?;
    let weight = |i: usize| if lambdas.len() == 1 { lambdas[0] } else { lambdas[i] };
    if lambdas.len() != 1 && lambdas.len() != pairs.len() {
        return Err(Error::Validation("mixing weights do not match batch".into()));
    }
    let mut rows_h = Vec::with_capacity(pairs.len());
    let mut rows_y = Vec::with_capacity(pairs.len());
    for i in 0..pairs.len() {
        let single = |t: &Tensor| t.select_rows(&[i]);
        rows_h.push(mix(weight(i), &single(latents)?, &single(&partners)?)?);
        rows_y.push(mix(weight(i), &single(&pairs.y1)?, &single(&labels2)?)?);
    }
    Ok(MixBatch {
        mixed_latents: Tensor::concat_rows(&rows_h.iter().collect::<Vec<_>>())?,
        mixed_labels: Tensor::concat_rows(&rows_y.iter().collect::<Vec<_>>())?,
        layer,
        origin_flags: pairs.origin.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaMode {
    PerBatch,
    PerExample,
}

/// Folded weights for a batch of `rows`: a single entry in per-batch mode.
pub fn draw_lambdas<R: Rng + ?Sized>(alpha: f64, rows: usize, mode: LambdaMode, rng: &mut R) -> Result<Vec<f64>> {
    let n = match mode {
        LambdaMode::PerBatch => 1,
        LambdaMode::PerExample => rows,
    };
    (0..n)
        .map(|_| MixCoefficient::sample(alpha, rng).map(|c| c.lambda_prime))
        .collect()
}
