//! Missing-pattern generators and recovery metrics.
//!
//! Masks use `true` for observed entries. Metrics assume data scaled to
//! `[0, 1]`, so the PSNR peak and the SSIM dynamic range are both 1.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{numel, strides, DenseTensor};

/// Boolean tensor marking observed entries, same linearization as
/// [`DenseTensor`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    observed: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, observed: Vec<bool>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape(format!("invalid mask shape {shape:?}")));
        }
        if numel(&shape) != observed.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask shape {shape:?} needs {} entries, got {}",
                numel(&shape),
                observed.len()
            )));
        }
        Ok(Mask { shape, observed })
    }

    pub fn full(shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), vec![true; numel(shape)])
    }

    /// Interprets a 0/1 tensor as a mask. Any other value is an error.
    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let observed = t
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 1.0 {
                    Ok(true)
                } else if v == 0.0 {
                    Ok(false)
                } else {
                    Err(Error::InvalidArgument(format!(
                        "mask entry {i} is {v}, expected 0 or 1"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(t.shape().to_vec(), observed)
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::new(
            self.shape.clone(),
            self.observed.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask shape is valid")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn is_observed(&self, offset: usize) -> bool {
        self.observed[offset]
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    pub fn missing_count(&self) -> usize {
        self.observed.len() - self.observed_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Individual entries removed uniformly at random.
    Random,
    /// Whole mode-`fiber_mode` fibers removed.
    Fiber,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Fraction of entries (or fibers) to remove, in `[0, 1)`.
    pub rate: f64,
    /// 0-based mode along which fibers run. Ignored for [`MaskKind::Random`].
    pub fiber_mode: usize,
    pub seed: u64,
}

/// `round(rate * count)` with halves rounded up.
pub fn missing_count(rate: f64, count: usize) -> usize {
    ((rate * count as f64) + 0.5).floor() as usize
}

pub fn gen_mask(shape: &[usize], spec: &MaskSpec) -> Result<Mask> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(format!("invalid shape {shape:?}")));
    }
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::InvalidArgument(format!(
            "missing rate must be in [0, 1), got {}",
            spec.rate
        )));
    }
    let total = numel(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut observed = vec![true; total];
    match spec.kind {
        MaskKind::Random => {
            let missing = missing_count(spec.rate, total);
            if missing >= total {
                return Err(Error::InvalidArgument(format!(
                    "rate {} removes all {total} entries",
                    spec.rate
                )));
            }
            for i in sample(&mut rng, total, missing) {
                observed[i] = false;
            }
        }
        MaskKind::Fiber => {
            let mode = spec.fiber_mode;
            if mode >= shape.len() {
                return Err(Error::ModeOutOfRange {
                    mode,
                    order: shape.len(),
                });
            }
            let len = shape[mode];
            let fibers = total / len;
            let missing = missing_count(spec.rate, fibers);
            if missing >= fibers {
                return Err(Error::InvalidArgument(format!(
                    "rate {} removes all {fibers} fibers",
                    spec.rate
                )));
            }
            let st = strides(shape);
            let rest: Vec<usize> = (0..shape.len()).filter(|&m| m != mode).collect();
            for f in sample(&mut rng, fibers, missing) {
                // decode the fiber number over the remaining modes, first fastest
                let mut rem = f;
                let mut base = 0;
                for &m in &rest {
                    base += (rem % shape[m]) * st[m];
                    rem /= shape[m];
                }
                for t in 0..len {
                    observed[base + t * st[mode]] = false;
                }
            }
        }
    }
    Mask::new(shape.to_vec(), observed)
}

fn same_shape(a: &DenseTensor, b: &DenseTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "truth {:?} vs recovered {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Relative error `||truth - recovered||_F / ||truth||_F`.
pub fn rse(truth: &DenseTensor, recovered: &DenseTensor) -> Result<f64> {
    same_shape(truth, recovered)?;
    let denom = truth.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("RSE undefined for an all-zero truth".into()));
    }
    Ok(truth.distance(recovered)? / denom)
}

/// Root-mean-square error over the missing entries of `mask`.
pub fn rmse(truth: &DenseTensor, recovered: &DenseTensor, mask: &Mask) -> Result<f64> {
    same_shape(truth, recovered)?;
    if mask.shape() != truth.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs data {:?}",
            mask.shape(),
            truth.shape()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&t, &r), &obs) in truth.values().iter().zip(recovered.values()).zip(mask.observed()) {
        if !obs {
            sum += (t - r) * (t - r);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("RMSE undefined: the mask has no missing entries".into()));
    }
    Ok((sum / count as f64).sqrt())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB with peak 1.
///
/// Order-3 data is treated as a stack of bands along the last mode and the
/// per-band PSNRs are averaged; any other order uses one global MSE. A zero
/// MSE yields `f64::INFINITY`.
pub fn psnr(truth: &DenseTensor, recovered: &DenseTensor) -> Result<f64> {
    same_shape(truth, recovered)?;
    let band = if truth.order() == 3 {
        truth.shape()[0] * truth.shape()[1]
    } else {
        truth.len()
    };
    let bands = truth.len() / band;
    let total: f64 = truth
        .values()
        .chunks(band)
        .zip(recovered.values().chunks(band))
        .map(|(t, r)| {
            let mse = t.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / band as f64;
            psnr_from_mse(mse)
        })
        .sum();
    Ok(total / bands as f64)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Separable "valid" correlation of a column-major `h x w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    // along rows (first index) first
    let mut tmp = vec![0.0; oh * w];
    for c in 0..w {
        let col = &img[c * h..(c + 1) * h];
        for r in 0..oh {
            tmp[r + oh * c] = taps.iter().zip(&col[r..r + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for c in 0..ow {
        for r in 0..oh {
            out[r + oh * c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[r + oh * (c + k)])
                .sum();
        }
    }
    out
}

fn ssim_band(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        // one uniform window over the whole band
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|v| v * v).sum::<f64>() / n - mx * mx;
        let vy = y.iter().map(|v| v * v).sum::<f64>() / n - my * my;
        let cxy = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n - mx * my;
        return ssim_formula(mx, my, vx, vy, cxy);
    }
    let taps = ssim_taps();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, h, w, &taps);
    let my = filter_valid(y, h, w, &taps);
    let sxx = filter_valid(&xx, h, w, &taps);
    let syy = filter_valid(&yy, h, w, &taps);
    let sxy = filter_valid(&xy, h, w, &taps);
    let total: f64 = (0..mx.len())
        .map(|i| {
            ssim_formula(
                mx[i],
                my[i],
                sxx[i] - mx[i] * mx[i],
                syy[i] - my[i] * my[i],
                sxy[i] - mx[i] * my[i],
            )
        })
        .sum();
    total / mx.len() as f64
}

/// Mean single-scale SSIM over bands.
///
/// Order-2 data is one band; order-3 data is split along the last mode. Each
/// band uses an 11x11 Gaussian window (sigma 1.5) over all valid positions,
/// or a single uniform window over the full band when either spatial side is
/// shorter than 11.
pub fn ssim(truth: &DenseTensor, recovered: &DenseTensor) -> Result<f64> {
    same_shape(truth, recovered)?;
    let (h, w) = match truth.shape() {
        [h, w] | [h, w, _] => (*h, *w),
        s => {
            return Err(Error::InvalidArgument(format!(
                "SSIM needs an order-2 or order-3 tensor, got shape {s:?}"
            )))
        }
    };
    let band = h * w;
    let bands = truth.len() / band;
    let total: f64 = truth
        .values()
        .chunks(band)
        .zip(recovered.values().chunks(band))
        .map(|(x, y)| ssim_band(x, y, h, w))
        .sum();
    Ok(total / bands as f64)
}

/// All four recovery metrics. `rmse` needs a mask; `ssim` needs order 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub rse: f64,
    pub rmse: Option<f64>,
}

impl MetricsReport {
    pub fn compute(truth: &DenseTensor, recovered: &DenseTensor, mask: Option<&Mask>) -> Result<Self> {
        let ssim = match truth.order() {
            2 | 3 => Some(ssim(truth, recovered)?),
            _ => None,
        };
        Ok(MetricsReport {
            psnr: psnr(truth, recovered)?,
            ssim,
            rse: rse(truth, recovered)?,
            rmse: mask.map(|m| rmse(truth, recovered, m)).transpose()?,
        })
    }
}
