//! Depth evaluation: median scaling and the seven standard error/accuracy
//! metrics (abs rel, sq rel, RMSE, RMSE log, and the three delta thresholds).

use thiserror::Error;

pub const DEPTH_CAP: f64 = 80.0;
pub const DEPTH_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty valid mask: no pixels to evaluate")]
    EmptyMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid_pixels: usize,
}

impl EvalReport {
    /// CSV row in table column order.
    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3
        )
    }

    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3";
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Scales `pred` by `median(gt[valid]) / median(pred[valid])`, resolving the
/// monocular scale ambiguity per image.
pub fn median_scale(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<Vec<f64>, MetricsError> {
    assert_eq!(pred.len(), gt.len());
    assert_eq!(pred.len(), valid.len());
    let mut p: Vec<f64> = pred
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&x, _)| x)
        .collect();
    let mut g: Vec<f64> = gt
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&x, _)| x)
        .collect();
    if p.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    let scale = median(&mut g) / median(&mut p);
    Ok(pred.iter().map(|&x| x * scale).collect())
}

/// Seven-metric report over valid pixels. Both maps are clamped to
/// `[DEPTH_FLOOR, depth_cap]` before comparison; median scaling, when
/// wanted, must already have been applied.
pub fn compute_metrics(
    pred: &[f64],
    gt: &[f64],
    valid: &[bool],
    depth_cap: f64,
) -> Result<EvalReport, MetricsError> {
    assert_eq!(pred.len(), gt.len());
    assert_eq!(pred.len(), valid.len());
    let mut n = 0usize;
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut sq = 0.0;
    let mut sq_log = 0.0;
    let (mut d1, mut d2, mut d3) = (0usize, 0usize, 0usize);
    for i in 0..pred.len() {
        if !valid[i] {
            continue;
        }
        let p = pred[i].clamp(DEPTH_FLOOR, depth_cap);
        let g = gt[i].clamp(DEPTH_FLOOR, depth_cap);
        n += 1;
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            d1 += 1;
        }
        if ratio < 1.25f64.powi(2) {
            d2 += 1;
        }
        if ratio < 1.25f64.powi(3) {
            d3 += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let nf = n as f64;
    Ok(EvalReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta1: d1 as f64 / nf,
        delta2: d2 as f64 / nf,
        delta3: d3 as f64 / nf,
        n_valid_pixels: n,
    })
}
