//! Dataset generators, partitioning and augmentation.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// One class per example; predictions through softmax.
    MultiClass,
    /// Independent binary labels; predictions through per-class sigmoid.
    MultiLabel,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi-class" => Ok(Task::MultiClass),
            "multi-label" => Ok(Task::MultiLabel),
            _ => Err(Error::Validation(format!("unknown task {s:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::MultiClass => "multi-class",
            Task::MultiLabel => "multi-label",
        })
    }
}

/// Inputs with one label row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Tensor,
    pub task: Task,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Tensor, task: Task) -> Result<Self> {
        if inputs.rows() != labels.rows() || labels.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "dataset",
                lhs: inputs.shape().to_vec(),
                rhs: labels.shape().to_vec(),
            });
        }
        let c = labels.shape()[1];
        for row in labels.data().chunks(c) {
            let binary = row.iter().all(|&v| v == 0.0 || v == 1.0);
            let ok = match task {
                Task::MultiClass => binary && row.iter().sum::<f64>() == 1.0,
                Task::MultiLabel => binary,
            };
            if !ok {
                return Err(Error::Validation(format!("label row {row:?} invalid for {task}")));
            }
        }
        Ok(Dataset { inputs, labels, task })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.labels.shape()[1]
    }

    /// Class index per example (first positive for multi-hot rows).
    pub fn classes(&self) -> Vec<usize> {
        self.labels.argmax_rows()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Empty("empty subset".into()));
        }
        Ok(Dataset {
            inputs: self.inputs.select_rows(idx)?,
            labels: self.labels.select_rows(idx)?,
            task: self.task,
        })
    }

    /// CSV with columns `x,y,label` for 2-D points, otherwise
    /// `p0,…,pN,label`. Multi-label rows write one `l<k>` column per class.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let width = self.inputs.row_len();
        let mut header: Vec<String> = if width == 2 {
            vec!["x".into(), "y".into()]
        } else {
            (0..width).map(|i| format!("p{i}")).collect()
        };
        match self.task {
            Task::MultiClass => header.push("label".into()),
            Task::MultiLabel => header.extend((0..self.num_classes()).map(|k| format!("l{k}"))),
        }
        writeln!(w, "{}", header.join(","))?;
        let classes = self.classes();
        for (i, class) in classes.iter().enumerate() {
            let mut fields: Vec<String> = self.inputs.row(i).iter().map(|v| format!("{v:.12e}")).collect();
            match self.task {
                Task::MultiClass => fields.push(class.to_string()),
                Task::MultiLabel => fields.extend(self.labels.row(i).iter().map(|v| format!("{}", *v as u8))),
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }
}

pub fn one_hot(classes: &[usize], n_classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[classes.len().max(1), n_classes]);
    if classes.is_empty() {
        return Err(Error::Empty("no labels".into()));
    }
    for (i, &c) in classes.iter().enumerate() {
        if c >= n_classes {
            return Err(Error::Validation(format!("class {c} >= {n_classes}")));
        }
        t.data_mut()[i * n_classes + c] = 1.0;
    }
    Ok(t)
}

/// Point on the noiseless moon of `class` at parameter `t ∈ [0, π]`.
pub fn moon_point(class: usize, t: f64) -> [f64; 2] {
    if class == 0 {
        [t.cos(), t.sin()]
    } else {
        [1.0 - t.cos(), 0.5 - t.sin()]
    }
}

/// Two interleaved half circles, `n/2` points each (class 0 first).
pub fn two_moons(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Parameter(format!("two_moons needs a positive even n, got {n}")));
    }
    if noise_sigma.is_nan() || noise_sigma < 0.0 {
        return Err(Error::Parameter(format!("noise sigma {noise_sigma} must be nonnegative")));
    }
    let mut r = rng::seeded(seed);
    let mut xs = Vec::with_capacity(2 * n);
    let mut classes = Vec::with_capacity(n);
    for class in 0..2 {
        for _ in 0..n / 2 {
            let t = r.random_range(0.0..=std::f64::consts::PI);
            let [x, y] = moon_point(class, t);
            let nx: f64 = r.sample(StandardNormal);
            let ny: f64 = r.sample(StandardNormal);
            xs.push(x + noise_sigma * nx);
            xs.push(y + noise_sigma * ny);
            classes.push(class);
        }
    }
    Dataset::new(Tensor::new(vec![n, 2], xs)?, one_hot(&classes, 2)?, Task::MultiClass)
}

pub const SHAPE_NAMES: [&str; 7] = ["disk", "square", "cross", "ring", "triangle", "stripes", "checker"];

fn shape_mask(class: usize, dx: f64, dy: f64, r: f64, period: f64) -> bool {
    let inside_square = dx.abs() <= r && dy.abs() <= r;
    match class {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
        2 => {
            let w = r / 3.0;
            (dx.abs() <= w && dy.abs() <= r) || (dy.abs() <= w && dx.abs() <= r)
        }
        3 => {
            let d = (dx * dx + dy * dy).sqrt();
            d <= r && d >= 0.55 * r
        }
        4 => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
        5 => inside_square && (((dy + r) / period).floor() as i64) % 2 == 0,
        _ => inside_square && ((((dx + r) / period).floor() + ((dy + r) / period).floor()) as i64) % 2 == 0,
    }
}

/// Grayscale `side×side` images of class-specific shapes with random
/// position, size, contrast and pixel noise. Example `i` has class
/// `i mod n_classes`.
pub fn synth_images(n: usize, n_classes: usize, side: usize, seed: u64) -> Result<Dataset> {
    if !(2..=SHAPE_NAMES.len()).contains(&n_classes) {
        return Err(Error::Parameter(format!("supported class counts are 2..=7, got {n_classes}")));
    }
    if side < 16 {
        return Err(Error::Parameter(format!("image side must be at least 16, got {side}")));
    }
    if n == 0 {
        return Err(Error::Parameter("need at least one image".into()));
    }
    let mut r = rng::seeded(seed);
    let s = side as f64;
    let mut pixels = Vec::with_capacity(n * side * side);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % n_classes;
        let radius = r.random_range(0.2 * s..0.3 * s);
        let cx = s / 2.0 + r.random_range(-0.18 * s..0.18 * s);
        let cy = s / 2.0 + r.random_range(-0.18 * s..0.18 * s);
        let period = radius * r.random_range(0.35..0.55);
        let fg = r.random_range(0.45..0.95);
        let bg = r.random_range(0.0..0.35);
        for y in 0..side {
            for x in 0..side {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let base = if shape_mask(class, dx, dy, radius, period) { fg } else { bg };
                let noise: f64 = r.sample(StandardNormal);
                pixels.push((base + 0.2 * noise).clamp(0.0, 1.0));
            }
        }
        classes.push(class);
    }
    Dataset::new(
        Tensor::new(vec![n, 1, side, side], pixels)?,
        one_hot(&classes, n_classes)?,
        Task::MultiClass,
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_labeled: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub class_balanced: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SplitIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Disjoint partitions of one dataset. The unlabeled part keeps its labels
/// for diagnostics; the trainer only reads its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
}

fn take_balanced(per_class: &mut [Vec<usize>], n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(n);
    let k = per_class.len();
    let mut c = 0;
    while out.len() < n {
        if per_class[c].is_empty() {
            return Err(Error::Validation(format!(
                "class-balanced split infeasible: class {c} exhausted"
            )));
        }
        out.push(per_class[c].remove(0));
        c = (c + 1) % k;
    }
    Ok(out)
}

/// Partition into labeled, validation, test and unlabeled (the remainder).
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let n = data.len();
    let need = spec.n_labeled + spec.n_val + spec.n_test;
    if spec.n_labeled == 0 || spec.n_val == 0 || spec.n_test == 0 || need >= n {
        return Err(Error::Validation(format!(
            "split of {} labeled + {} val + {} test leaves no unlabeled data out of {n}",
            spec.n_labeled, spec.n_val, spec.n_test
        )));
    }
    let mut r = rng::seeded(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    let classes = data.classes();

    let (labeled, validation, rest) = if spec.class_balanced {
        let mut per_class = vec![Vec::new(); data.num_classes()];
        for &i in &order {
            per_class[classes[i]].push(i);
        }
        // rotate class order so small labeled sets do not always favour class 0
        let labeled = take_balanced(&mut per_class, spec.n_labeled)?;
        let validation = take_balanced(&mut per_class, spec.n_val)?;
        let used: std::collections::HashSet<usize> = labeled.iter().chain(&validation).copied().collect();
        let rest: Vec<usize> = order.iter().copied().filter(|i| !used.contains(i)).collect();
        (labeled, validation, rest)
    } else {
        let labeled = order[..spec.n_labeled].to_vec();
        let validation = order[spec.n_labeled..spec.n_labeled + spec.n_val].to_vec();
        (labeled, validation, order[spec.n_labeled + spec.n_val..].to_vec())
    };
    let test = rest[..spec.n_test].to_vec();
    let unlabeled = rest[spec.n_test..].to_vec();
    Ok(Splits {
        labeled: data.subset(&labeled)?,
        unlabeled: data.subset(&unlabeled)?,
        validation: data.subset(&validation)?,
        test: data.subset(&test)?,
        indices: SplitIndices {
            labeled,
            unlabeled,
            validation,
            test,
        },
    })
}

/// Rotation (degrees, about the image center) followed by a shift in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub angle_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        angle_deg: 0.0,
        shift_x: 0.0,
        shift_y: 0.0,
    };

    /// Angle uniform in ±10°, shifts of up to a tenth of the side in either
    /// direction.
    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        let angle_deg = rng.random_range(-10.0..=10.0);
        let shift_x = rng.random_range(-0.1..=0.1) * width as f64;
        let shift_y = rng.random_range(-0.1..=0.1) * height as f64;
        AffineParams {
            angle_deg,
            shift_x,
            shift_y,
        }
    }
}

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let wgt = wy * wx;
            if wgt != 0.0 {
                v += wgt * at(y0 + dy, x0 + dx);
            }
        }
    }
    v
}

/// Apply a fixed rotation and shift to a `c×h×w` image. Pixels sampled
/// from outside the source are 0; results are clamped to `[0, 1]`.
pub fn augment_image_with(img: &Tensor, p: &AffineParams) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::Dimension {
            op: "augment_image",
            lhs: s.to_vec(),
            rhs: vec![],
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (sin, cos) = p.angle_deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // undo the shift, then the rotation
                let (ry, rx) = (y as f64 - p.shift_y - cy, x as f64 - p.shift_x - cx);
                let sy = cos * ry - sin * rx + cy;
                let sx = sin * ry + cos * rx + cx;
                out[(ch * h + y) * w + x] = bilinear(plane, h, w, sy, sx).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

pub fn augment_image<R: Rng + ?Sized>(img: &Tensor, rng: &mut R) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 {
        return augment_image_with(img, &AffineParams::IDENTITY);
    }
    let p = AffineParams::sample(s[1], s[2], rng);
    augment_image_with(img, &p)
}

/// `x + N(0, σ²)` elementwise.
pub fn augment_noise<R: Rng + ?Sized>(x: &Tensor, sigma: f64, rng: &mut R) -> Result<Tensor> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::Parameter(format!("noise sigma {sigma} must be nonnegative")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    for v in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(out)
}

/// Label-preserving transform applied to every row of a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentPolicy {
    Identity,
    RotateTranslate,
    GaussianNoise(f64),
    PointJitter(f64),
}

impl AugmentPolicy {
    pub fn apply<R: Rng + ?Sized>(&self, batch: &Tensor, rng: &mut R) -> Result<Tensor> {
        match *self {
            AugmentPolicy::Identity => Ok(batch.clone()),
            AugmentPolicy::GaussianNoise(s) | AugmentPolicy::PointJitter(s) => augment_noise(batch, s, rng),
            AugmentPolicy::RotateTranslate => {
                if batch.shape().len() != 4 {
                    return Err(Error::Validation(format!(
                        "rotate-translate needs n×c×h×w images, got {:?}",
                        batch.shape()
                    )));
                }
                let item = &batch.shape()[1..];
                let mut out = Vec::with_capacity(batch.len());
                for i in 0..batch.rows() {
                    let img = Tensor::new(item.to_vec(), batch.row(i).to_vec())?;
                    out.extend(augment_image(&img, rng)?.into_data());
                }
                Tensor::new(batch.shape().to_vec(), out)
            }
        }
    }
}

impl FromStr for AugmentPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let sigma = |v: &str| -> Result<f64> {
            match v.parse::<f64>() {
                Ok(x) if x >= 0.0 && x.is_finite() => Ok(x),
                _ => Err(Error::Validation(format!("bad noise level {v:?}"))),
            }
        };
        match s {
            "none" => Ok(AugmentPolicy::Identity),
            "rotate-translate" => Ok(AugmentPolicy::RotateTranslate),
            _ => {
                if let Some(v) = s.strip_prefix("gaussian-noise:") {
                    Ok(AugmentPolicy::GaussianNoise(sigma(v)?))
                } else if let Some(v) = s.strip_prefix("point-jitter:") {
                    Ok(AugmentPolicy::PointJitter(sigma(v)?))
                } else {
                    Err(Error::Validation(format!("unknown augmentation policy {s:?}")))
                }
            }
        }
    }
}

impl fmt::Display for AugmentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentPolicy::Identity => f.write_str("none"),
            AugmentPolicy::RotateTranslate => f.write_str("rotate-translate"),
            AugmentPolicy::GaussianNoise(s) => write!(f, "gaussian-noise:{s}"),
            AugmentPolicy::PointJitter(s) => write!(f, "point-jitter:{s}"),
        }
    }
}
