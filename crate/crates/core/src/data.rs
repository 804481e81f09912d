//! Synthetic quadrant/circle dataset, seeded splits, input scaling and the
//! two mini-batch regimes (independent sampling and per-epoch random split).
//!
//! Labels: quadrant `q = 0` for `x ≥ 0, y ≥ 0`, `1` for `x < 0, y ≥ 0`,
//! `2` for `x < 0, y < 0`, `3` for `x ≥ 0, y < 0`. Circle `c = 1` iff
//! `‖x‖₂ < 1`; points on the unit circle are outside.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::loss::LabeledBatch;

pub const DOMAIN_LO: f64 = -2.0;
pub const DOMAIN_HI: f64 = 2.0;
pub const QUADRANT_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticPoint {
    pub x: [f64; 2],
    pub quadrant: u8,
    pub circle: u8,
}

impl SyntheticPoint {
    pub fn labeled(x: [f64; 2]) -> Self {
        Self {
            x,
            quadrant: quadrant_of(x),
            circle: circle_of(x),
        }
    }
}

pub fn quadrant_of([x, y]: [f64; 2]) -> u8 {
    match (x >= 0.0, y >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

pub fn circle_of([x, y]: [f64; 2]) -> u8 {
    u8::from(x * x + y * y < 1.0)
}

/// `n` points uniform on `[-2, 2)²` with their labels.
pub fn generate_synthetic(n: usize, rng: &mut Rng) -> Result<Vec<SyntheticPoint>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let coords = rng.uniform(DOMAIN_LO, DOMAIN_HI, 2 * n)?;
    Ok(coords
        .chunks_exact(2)
        .map(|c| SyntheticPoint::labeled([c[0], c[1]]))
        .collect())
}

/// Inputs `N×2`; labels: one-hot quadrant `N×4` and circle bit `N×1`.
pub fn to_batch(points: &[SyntheticPoint]) -> Result<LabeledBatch> {
    let n = points.len();
    let mut inputs = Vec::with_capacity(2 * n);
    let mut quad = vec![0.0; QUADRANT_CLASSES * n];
    let mut circ = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        inputs.extend_from_slice(&p.x);
        quad[i * QUADRANT_CLASSES + p.quadrant as usize] = 1.0;
        circ.push(f64::from(p.circle));
    }
    LabeledBatch::new(
        Matrix::new(n, 2, inputs)?,
        vec![Matrix::new(n, QUADRANT_CLASSES, quad)?, Matrix::new(n, 1, circ)?],
    )
}

pub fn write_csv(points: &[SyntheticPoint], path: &Path) -> Result<()> {
    let mut out = String::from("x1,x2,q,c\n");
    for p in points {
        let _ = writeln!(out, "{:.16e},{:.16e},{},{}", p.x[0], p.x[1], p.quadrant, p.circle);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<SyntheticPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x1,x2,q,c" => {}
        _ => return Err(perr(1, "expected header `x1,x2,q,c`".into())),
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(perr(i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|e| perr(i + 1, format!("`{s}`: {e}")));
        let u = |s: &str| s.parse::<u8>().map_err(|e| perr(i + 1, format!("`{s}`: {e}")));
        let (q, c) = (u(fields[2])?, u(fields[3])?);
        if usize::from(q) >= QUADRANT_CLASSES || c > 1 {
            return Err(perr(i + 1, format!("labels out of range: q={q}, c={c}")));
        }
        points.push(SyntheticPoint {
            x: [f(fields[0])?, f(fields[1])?],
            quadrant: q,
            circle: c,
        });
    }
    Ok(points)
}

/// Disjoint train / validation / test stores and the indices they came from.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: LabeledBatch,
    pub validation: LabeledBatch,
    pub test: LabeledBatch,
    pub indices: [Vec<usize>; 3],
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.56, 0.14, 0.30];

/// Sizes `round(r·N)` for train and validation, the remainder for test.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let train = (ratios[0] * n as f64).round() as usize;
    let val = (ratios[1] * n as f64).round() as usize;
    if train + val > n {
        return Err(Error::InvalidArgument(format!("split of {n} rows leaves no test rows")));
    }
    let sizes = [train, val, n - train - val];
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("split of {n} rows with {ratios:?} has an empty part: {sizes:?}")));
    }
    Ok(sizes)
}

pub fn split(data: &LabeledBatch, ratios: [f64; 3], rng: &mut Rng) -> Result<DatasetSplit> {
    let [train, val, _] = split_sizes(data.len(), ratios)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let test_idx = order.split_off(train + val);
    let val_idx = order.split_off(train);
    let train_idx = order;
    Ok(DatasetSplit {
        train: data.select(&train_idx),
        validation: data.select(&val_idx),
        test: data.select(&test_idx),
        indices: [train_idx, val_idx, test_idx],
    })
}

/// Per-feature standardization fitted on training inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation; a zero deviation is replaced by 1.
    pub fn fit(inputs: &Matrix) -> Result<Self> {
        let (n, d) = inputs.shape();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot fit a scaler on zero rows".into()));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(inputs.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(inputs.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.mean.len() {
            return Err(Error::dims("Scaler::transform", self.mean.len(), inputs.cols()));
        }
        let mut out = inputs.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    /// Fits on the training inputs and rescales all three stores.
    pub fn standardize(split: &DatasetSplit) -> Result<(Scaler, DatasetSplit)> {
        let scaler = Scaler::fit(split.train.inputs())?;
        let scaled = DatasetSplit {
            train: split.train.with_inputs(scaler.transform(split.train.inputs())?)?,
            validation: split.validation.with_inputs(scaler.transform(split.validation.inputs())?)?,
            test: split.test.with_inputs(scaler.transform(split.test.inputs())?)?,
            indices: split.indices.clone(),
        };
        Ok((scaler, scaled))
    }
}

/// `size` distinct rows drawn uniformly from `store`.
pub fn sample_batch(store: &LabeledBatch, size: usize, rng: &mut Rng) -> Result<LabeledBatch> {
    if size == 0 || size > store.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {size} must be in 1..={}",
            store.len()
        )));
    }
    Ok(store.select(&rng.sample_indices(store.len(), size)))
}

/// Shuffled permutation of `0..len` cut into consecutive chunks of `size`;
/// the last chunk may be shorter.
pub fn epoch_split_indices(len: usize, size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    Ok(order.chunks(size).map(<[usize]>::to_vec).collect())
}

pub fn epoch_split(store: &LabeledBatch, size: usize, rng: &mut Rng) -> Result<Vec<LabeledBatch>> {
    Ok(epoch_split_indices(store.len(), size, rng)?
        .iter()
        .map(|idx| store.select(idx))
        .collect())
}

/// Batches per epoch under independent sampling: `⌊T/B⌋`.
pub fn sampled_batches_per_epoch(train_len: usize, batch_size: usize) -> usize {
    train_len / batch_size
}

/// Batches per epoch under a random split: `⌈T/B⌉`.
pub fn split_batches_per_epoch(train_len: usize, batch_size: usize) -> usize {
    train_len.div_ceil(batch_size)
}
