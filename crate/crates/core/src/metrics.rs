//! Ranking, accuracy and calibration metrics plus decision-boundary rasters.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::data::Task;
use crate::error::{Error, Result};
use crate::network::LayeredNetwork;
use crate::tensor::Tensor;

/// Area under the ROC curve via the rank-sum statistic with midranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auroc needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block i..=j shares the average rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                pos_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn column(t: &Tensor, j: usize) -> Vec<f64> {
    (0..t.rows()).map(|i| t.row(i)[j]).collect()
}

/// AUROC of each class column; `None` for classes missing positives or negatives.
pub fn per_class_auroc(scores: &Tensor, labels: &Tensor) -> Result<Vec<Option<f64>>> {
    check_same_shape("per_class_auroc", scores, labels)?;
    (0..scores.row_len())
        .map(|j| {
            let l: Vec<u8> = column(labels, j).iter().map(|&v| u8::from(v >= 0.5)).collect();
            match auroc(&column(scores, j), &l) {
                Ok(v) => Ok(Some(v)),
                Err(Error::UndefinedMetric(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Unweighted mean of the scoreable per-class AUROCs.
pub fn mean_auroc(scores: &Tensor, labels: &Tensor) -> Result<f64> {
    let per_class = per_class_auroc(scores, labels)?;
    let skipped: Vec<usize> = (0..per_class.len()).filter(|&j| per_class[j].is_none()).collect();
    if !skipped.is_empty() {
        warn!("mean_auroc: skipping classes {skipped:?} lacking positives or negatives");
    }
    let vals: Vec<f64> = per_class.into_iter().flatten().collect();
    if vals.is_empty() {
        return Err(Error::UndefinedMetric("no class has both labels present".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Fraction of rows whose argmax prediction matches the argmax label.
pub fn accuracy(scores: &Tensor, labels: &Tensor) -> Result<f64> {
    check_same_shape("accuracy", scores, labels)?;
    let hits = scores
        .argmax_rows()
        .iter()
        .zip(labels.argmax_rows())
        .filter(|(a, b)| **a == *b)
        .count();
    Ok(hits as f64 / scores.rows() as f64)
}

/// Row softmax for multi-class, elementwise sigmoid for multi-label.
pub fn probabilities(logits: &Tensor, task: Task) -> Tensor {
    match task {
        Task::MultiLabel => logits.map(|z| 1.0 / (1.0 + (-z).exp())),
        Task::MultiClass => {
            let c = logits.row_len();
            let mut out = logits.clone();
            for row in out.data_mut().chunks_mut(c) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            out
        }
    }
}

/// Per-bin calibration statistics over uniform bins on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityBins {
    pub n_bins: usize,
    pub counts: Vec<usize>,
    /// Mean confidence per bin (0 for empty bins).
    pub mean_conf: Vec<f64>,
    /// Empirical accuracy per bin (0 for empty bins).
    pub accuracy: Vec<f64>,
    pub ece: f64,
}

impl ReliabilityBins {
    pub fn edges(&self, b: usize) -> (f64, f64) {
        let n = self.n_bins as f64;
        (b as f64 / n, (b + 1) as f64 / n)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub const DEFAULT_BINS: usize = 10;

pub fn reliability(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<ReliabilityBins> {
    if n_bins == 0 {
        return Err(Error::Parameter("need at least one bin".into()));
    }
    if confidences.is_empty() {
        return Err(Error::Empty("no predictions to bin".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::Validation(format!(
            "{} confidences for {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    let mut counts = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hit_sum = vec![0.0; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Validation(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * n_bins as f64) as usize).min(n_bins - 1);
        counts[b] += 1;
        conf_sum[b] += c;
        hit_sum[b] += f64::from(u8::from(ok));
    }
    let total = confidences.len() as f64;
    let mut mean_conf = vec![0.0; n_bins];
    let mut accuracy = vec![0.0; n_bins];
    let mut ece = 0.0;
    for b in 0..n_bins {
        if counts[b] > 0 {
            let n = counts[b] as f64;
            mean_conf[b] = conf_sum[b] / n;
            accuracy[b] = hit_sum[b] / n;
            ece += n / total * (accuracy[b] - mean_conf[b]).abs();
        }
    }
    Ok(ReliabilityBins {
        n_bins,
        counts,
        mean_conf,
        accuracy,
        ece,
    })
}

/// Confidence and correctness pairs: max probability vs argmax match for
/// multi-class, `max(p, 1-p)` vs thresholded match per class for multi-label.
pub fn confidence_pairs(probs: &Tensor, labels: &Tensor, task: Task) -> Result<(Vec<f64>, Vec<bool>)> {
    check_same_shape("reliability", probs, labels)?;
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    match task {
        Task::MultiClass => {
            let truth = labels.argmax_rows();
            for (i, pred) in probs.argmax_rows().into_iter().enumerate() {
                conf.push(probs.row(i)[pred]);
                correct.push(pred == truth[i]);
            }
        }
        Task::MultiLabel => {
            for (&p, &y) in probs.data().iter().zip(labels.data()) {
                conf.push(p.max(1.0 - p));
                correct.push((p >= 0.5) == (y >= 0.5));
            }
        }
    }
    Ok((conf, correct))
}

pub fn reliability_from_probs(probs: &Tensor, labels: &Tensor, task: Task, n_bins: usize) -> Result<ReliabilityBins> {
    let (conf, correct) = confidence_pairs(probs, labels, task)?;
    reliability(&conf, &correct, n_bins)
}

/// Axis-aligned region of the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Extent {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let finite = [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(Error::Validation(format!(
                "invalid extent x [{xmin}, {xmax}] y [{ymin}, {ymax}]"
            )));
        }
        Ok(Extent { xmin, xmax, ymin, ymax })
    }
}

/// Class-1 probability sampled at cell centers; row 0 is the top (`ymax`).
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryRaster {
    pub rows: usize,
    pub cols: usize,
    pub extent: Extent,
    pub values: Vec<f64>,
}

impl BoundaryRaster {
    pub fn new(rows: usize, cols: usize, extent: Extent, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::Shape {
                shape: vec![rows, cols],
                len: values.len(),
            });
        }
        Ok(BoundaryRaster {
            rows,
            cols,
            extent,
            values,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let e = &self.extent;
        let dx = (e.xmax - e.xmin) / self.cols as f64;
        let dy = (e.ymax - e.ymin) / self.rows as f64;
        (e.xmin + (j as f64 + 0.5) * dx, e.ymax - (i as f64 + 0.5) * dy)
    }

    /// ASCII PGM (P2, maxval 255) with an extent comment after the magic.
    pub fn to_pgm(&self) -> String {
        let e = &self.extent;
        let mut s = String::new();
        let _ = writeln!(s, "P2");
        let _ = writeln!(s, "# extent {} {} {} {}", e.xmin, e.xmax, e.ymin, e.ymax);
        let _ = writeln!(s, "{} {}", self.cols, self.rows);
        let _ = writeln!(s, "255");
        for i in 0..self.rows {
            let line: Vec<String> = (0..self.cols)
                .map(|j| ((255.0 * self.at(i, j).clamp(0.0, 1.0)).round() as u8).to_string())
                .collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Parsed P2 image: width, height, maxval, the extent comment if present,
/// and the pixel values row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub extent: Option<Extent>,
    pub pixels: Vec<u32>,
}

pub fn parse_pgm(text: &str) -> Result<Pgm> {
    let mut extent = None;
    let mut tokens = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let (body, comment) = match line.find('#') {
            Some(p) => (&line[..p], Some(&line[p + 1..])),
            None => (line, None),
        };
        if let Some(c) = comment {
            let parts: Vec<&str> = c.split_whitespace().collect();
            if n == 1 && parts.len() == 5 && parts[0] == "extent" {
                let v: std::result::Result<Vec<f64>, _> = parts[1..].iter().map(|p| p.parse()).collect();
                let v = v.map_err(|_| Error::Format(format!("bad extent comment {c:?}")))?;
                extent = Some(Extent::new(v[0], v[1], v[2], v[3])?);
            }
        }
        tokens.extend(body.split_whitespace());
    }
    if tokens.first() != Some(&"P2") {
        return Err(Error::BadMagic);
    }
    let num = |i: usize| -> Result<u32> {
        tokens
            .get(i)
            .ok_or(Error::Truncated { expected: i + 1, found: tokens.len() })?
            .parse()
            .map_err(|_| Error::Format(format!("bad number {:?}", tokens[i])))
    };
    let (width, height, maxval) = (num(1)? as usize, num(2)? as usize, num(3)?);
    let pixels: Vec<u32> = (4..tokens.len()).map(num).collect::<Result<_>>()?;
    if pixels.len() != width * height {
        return Err(Error::Truncated {
            expected: width * height,
            found: pixels.len(),
        });
    }
    if maxval == 0 || pixels.iter().any(|&p| p > maxval) {
        return Err(Error::Format("pixel exceeds maxval".into()));
    }
    Ok(Pgm {
        width,
        height,
        maxval,
        extent,
        pixels,
    })
}

/// Evaluate a 2-input network's class-1 probability over a grid. Networks
/// with a single output are read through a sigmoid.
pub fn boundary_grid(net: &LayeredNetwork, extent: Extent, resolution: (usize, usize)) -> Result<BoundaryRaster> {
    if net.input_shape() != [2] {
        return Err(Error::Validation(format!(
            "decision boundary needs a 2-input network, got input shape {:?}",
            net.input_shape()
        )));
    }
    let (rows, cols) = resolution;
    if rows < 2 || cols < 2 {
        return Err(Error::Validation(format!("resolution {rows}x{cols} below 2x2")));
    }
    let mut raster = BoundaryRaster::new(rows, cols, extent, vec![0.0; rows * cols])?;
    let mut pts = Vec::with_capacity(rows * cols * 2);
    for i in 0..rows {
        for j in 0..cols {
            let (x, y) = raster.cell_center(i, j);
            pts.push(x);
            pts.push(y);
        }
    }
    let logits = net.logits(&Tensor::new(vec![rows * cols, 2], pts)?)?;
    let probs = if net.num_outputs() == 1 {
        probabilities(&logits, Task::MultiLabel)
    } else {
        probabilities(&logits, Task::MultiClass)
    };
    let k = if net.num_outputs() == 1 { 0 } else { 1 };
    for (c, v) in raster.values.iter_mut().enumerate() {
        *v = probs.row(c)[k];
    }
    Ok(raster)
}

/// Mean gradient magnitude (per cell step) over the band around the 0.5
/// level. A cell belongs to the band when the value range spanned by it and
/// its four neighbours meets `[0.4, 0.6]`, so hard steps are included.
pub fn boundary_roughness(raster: &BoundaryRaster) -> f64 {
    let (r, c) = (raster.rows, raster.cols);
    let v = |i: usize, j: usize| raster.at(i, j);
    let diff = |lo: f64, hi: f64, span: usize| if span == 0 { 0.0 } else { (hi - lo) / span as f64 };
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..r {
        for j in 0..c {
            let (up, down) = (i.saturating_sub(1), (i + 1).min(r - 1));
            let (left, right) = (j.saturating_sub(1), (j + 1).min(c - 1));
            let neighbours = [v(i, j), v(up, j), v(down, j), v(i, left), v(i, right)];
            let lo = neighbours.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = neighbours.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi < 0.4 || lo > 0.6 {
                continue;
            }
            let gx = diff(v(i, left), v(i, right), right - left);
            let gy = diff(v(up, j), v(down, j), down - up);
            total += (gx * gx + gy * gy).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        warn!("boundary_roughness: no cells near the 0.5 level");
        return 0.0;
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use crate::oracle::pairwise_auroc;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auroc_matches_pairwise_count() {
        let mut r = seeded(11);
        for _ in 0..200 {
            let n = r.random_range(2..=100);
            let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..8u8)) / 8.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
            labels[0] = 0;
            labels[1] = 1;
            assert_eq!(auroc(&scores, &labels).unwrap(), pairwise_auroc(&scores, &labels));
        }
    }

    #[test]
    fn mean_auroc_examples() {
        let s = Tensor::from_rows(&[vec![0.1, 0.5], vec![0.9, 0.5], vec![0.2, 0.5], vec![0.7, 0.5]]).unwrap();
        let y = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(mean_auroc(&s, &y).unwrap(), 0.75);

        let col = [0.3, 0.1, 0.7, 0.4];
        let lab = [1u8, 0, 1, 0];
        let s = Tensor::from_rows(&col.iter().map(|&v| vec![v, v]).collect::<Vec<_>>()).unwrap();
        let y = Tensor::from_rows(&lab.iter().map(|&v| vec![f64::from(v); 2]).collect::<Vec<_>>()).unwrap();
        assert_eq!(mean_auroc(&s, &y).unwrap(), auroc(&col, &lab).unwrap());
    }

    #[test]
    fn mean_auroc_skips_unscoreable_classes() {
        let s = Tensor::from_rows(&[vec![0.1, 0.5], vec![0.9, 0.5]]).unwrap();
        let y = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(per_class_auroc(&s, &y).unwrap(), vec![Some(1.0), None]);
        assert_eq!(mean_auroc(&s, &y).unwrap(), 1.0);
        let y = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(mean_auroc(&s, &y).is_err());
    }

    #[test]
    fn mean_auroc_three_class_brute_force() {
        let mut r = seeded(5);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| r.random::<f64>()).collect()).collect();
        let classes: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let s = Tensor::from_rows(&rows).unwrap();
        let y = crate::data::one_hot(&classes, 3).unwrap();
        let brute: f64 = (0..3)
            .map(|j| {
                let sc: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                let lb: Vec<u8> = classes.iter().map(|&c| u8::from(c == j)).collect();
                pairwise_auroc(&sc, &lb)
            })
            .sum::<f64>()
            / 3.0;
        assert!((mean_auroc(&s, &y).unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn reliability_examples() {
        let b = reliability(&[1.0; 5], &[true; 5], 10).unwrap();
        assert_eq!(b.ece, 0.0);
        assert_eq!(b.counts[9], 5);

        let correct: Vec<bool> = (0..10).map(|i| i < 6).collect();
        let b = reliability(&[0.8; 10], &correct, 10).unwrap();
        assert!((b.ece - 0.2).abs() < 1e-12);
    }

    #[test]
    fn reliability_hand_fixture() {
        // bins of width 0.2:
        //   [0.0,0.2): 0.10 F               conf 0.1,   acc 0   gap 0.1
        //   [0.2,0.4): 0.30 T, 0.35 F       conf 0.325, acc 0.5 gap 0.175
        //   [0.4,0.6): 0.50 T               conf 0.5,   acc 1   gap 0.5
        //   [0.6,0.8): 0.65 T, 0.70 T, 0.75 F  conf 0.7, acc 2/3 gap 1/30
        //   [0.8,1.0]: 0.90 T, 0.95 T, 1.00 T  conf 0.95, acc 1 gap 0.05
        let conf = [0.10, 0.30, 0.35, 0.50, 0.65, 0.70, 0.75, 0.90, 0.95, 1.00];
        let ok = [false, true, false, true, true, true, false, true, true, true];
        let b = reliability(&conf, &ok, 5).unwrap();
        assert_eq!(b.counts, vec![1, 2, 1, 3, 3]);
        let expected = (0.1 + 2.0 * 0.175 + 0.5 + 3.0 / 30.0 + 3.0 * 0.05) / 10.0;
        assert!((b.ece - expected).abs() < 1e-12, "{} vs {expected}", b.ece);
        assert_eq!(b.edges(4), (0.8, 1.0));
        assert!(reliability(&[], &[], 5).is_err());
        assert!(reliability(&[0.5], &[true], 0).is_err());
    }

    #[test]
    fn multilabel_confidence_pairs() {
        let p = Tensor::from_rows(&[vec![0.9, 0.2]]).unwrap();
        let y = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let (conf, ok) = confidence_pairs(&p, &y, Task::MultiLabel).unwrap();
        assert_eq!(conf, vec![0.9, 0.8]);
        assert_eq!(ok, vec![true, false]);
    }

    fn linear_net(w: [f64; 4], b: [f64; 2]) -> LayeredNetwork {
        let arch = Architecture::mlp(2, &[], 2);
        let mut net = LayeredNetwork::build(&arch, 0).unwrap();
        net.params_mut().get_mut(0).data_mut().copy_from_slice(&w);
        net.params_mut().get_mut(1).data_mut().copy_from_slice(&b);
        net
    }

    #[test]
    fn constant_net_gives_uniform_grid() {
        let net = linear_net([0.0; 4], [0.3, -0.2]);
        let g = boundary_grid(&net, Extent::new(-1.0, 1.0, -1.0, 1.0).unwrap(), (5, 7)).unwrap();
        assert!(g.values.iter().all(|&v| v == g.values[0]));
        assert_eq!(boundary_roughness(&g), 0.0);
    }

    #[test]
    fn linear_net_boundary_follows_line() {
        // logit difference z1 - z0 = 2x - y - 0.5, so p1 = 0.5 on y = 2x - 0.5
        let net = linear_net([0.0, 2.0, 0.0, -1.0], [0.0, -0.5]);
        let extent = Extent::new(-2.0, 2.0, -2.0, 2.0).unwrap();
        let g = boundary_grid(&net, extent, (40, 40)).unwrap();
        let cell = 4.0 / 40.0;
        assert!(g.values.iter().all(|v| (0.0..=1.0).contains(v)));
        for i in 0..g.rows {
            for j in 0..g.cols - 1 {
                if (g.at(i, j) - 0.5) * (g.at(i, j + 1) - 0.5) <= 0.0 {
                    let (x, y) = g.cell_center(i, j);
                    let line_x = (y + 0.5) / 2.0;
                    assert!((x + cell / 2.0 - line_x).abs() <= cell);
                }
            }
        }
        assert!(boundary_grid(&LayeredNetwork::build(&Architecture::mlp(3, &[], 2), 0).unwrap(), extent, (4, 4)).is_err());
        assert!(boundary_grid(&net, extent, (1, 4)).is_err());
    }

    fn raster(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> BoundaryRaster {
        let values = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        BoundaryRaster::new(rows, cols, Extent::new(0.0, 1.0, 0.0, 1.0).unwrap(), values).unwrap()
    }

    #[test]
    fn roughness_examples() {
        assert_eq!(boundary_roughness(&raster(8, 8, |_, _| 0.5)), 0.0);
        let ramp = raster(6, 11, |_, j| j as f64 / 10.0);
        assert!((boundary_roughness(&ramp) - 0.1).abs() < 1e-12);
        let step = raster(8, 8, |_, j| if j < 4 { 0.0 } else { 1.0 });
        let hard = boundary_roughness(&step);
        assert!((hard - 0.5).abs() < 1e-12);
        for width in [0.5, 1.0, 2.0, 4.0] {
            let soft = raster(8, 8, |_, j| 1.0 / (1.0 + (-(j as f64 - 3.5) / width).exp()));
            assert!(boundary_roughness(&soft) < hard);
        }
    }

    #[test]
    fn pgm_round_trip() {
        let g = raster(2, 2, |i, j| (i * 2 + j) as f64 / 3.0);
        let text = g.to_pgm();
        assert!(text.starts_with("P2\n# extent 0 1 0 1\n2 2\n255\n"));
        let p = parse_pgm(&text).unwrap();
        assert_eq!((p.width, p.height, p.maxval), (2, 2, 255));
        assert_eq!(p.pixels, vec![0, 85, 170, 255]);
        assert_eq!(p.extent, Some(g.extent));
        assert!(matches!(parse_pgm("P5\n1 1\n255\n0\n"), Err(Error::BadMagic)));
        assert!(parse_pgm("P2\n2 2\n255\n0 0 0\n").is_err());
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_transform(
            scores in prop::collection::vec(-5.0f64..5.0, 2..60),
            bits in prop::collection::vec(0u8..2, 60),
        ) {
            let mut labels = bits[..scores.len()].to_vec();
            labels[0] = 0;
            labels[1] = 1;
            let a = auroc(&scores, &labels).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert!((a - auroc(&t, &labels).unwrap()).abs() < 1e-12);
            prop_assert_eq!(a, pairwise_auroc(&scores, &labels));
        }

        #[test]
        fn auroc_complement(
            n in 2usize..60,
            seed in any::<u64>(),
        ) {
            let mut r = seeded(seed);
            let scores: Vec<f64> = (0..n).map(|i| i as f64 + r.random::<f64>() * 0.5).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
            labels[0] = 0;
            labels[n - 1] = 1;
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            let sum = auroc(&scores, &labels).unwrap() + auroc(&scores, &flipped).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ece_bounds(
            conf in prop::collection::vec(0.0f64..=1.0, 1..200),
            bits in prop::collection::vec(any::<bool>(), 200),
            n_bins in 1usize..20,
        ) {
            let b = reliability(&conf, &bits[..conf.len()], n_bins).unwrap();
            prop_assert!((0.0..=1.0).contains(&b.ece));
            prop_assert_eq!(b.total(), conf.len());
        }

        #[test]
        fn ece_zero_when_bins_calibrated(k in 1usize..10, n_bins in 1usize..10) {
            // every bin holds one correct and one wrong prediction at 0.5
            let conf = vec![0.5; 2 * k];
            let ok: Vec<bool> = (0..2 * k).map(|i| i % 2 == 0).collect();
            prop_assert!(reliability(&conf, &ok, n_bins).unwrap().ece.abs() < 1e-15);
        }
    }
}
