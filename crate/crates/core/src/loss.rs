//! Heatmap + position loss and Gaussian heatmap targets.

use conekp_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::Point;
use crate::model::KeypointPrediction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    L1,
    #[default]
    SmoothL1,
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l1" => Ok(LossMode::L1),
            "smooth_l1" | "smooth-l1" => Ok(LossMode::SmoothL1),
            _ => Err(format!("unknown loss mode `{s}` (expected l1 or smooth_l1)")),
        }
    }
}

/// Smooth-L1 transition point.
pub const SMOOTH_L1_BETA: f64 = 1.0;

impl LossMode {
    pub fn value(self, r: f64) -> f64 {
        match self {
            LossMode::L1 => r.abs(),
            LossMode::SmoothL1 => {
                let a = r.abs();
                if a < SMOOTH_L1_BETA {
                    0.5 * a * a / SMOOTH_L1_BETA
                } else {
                    a - 0.5 * SMOOTH_L1_BETA
                }
            }
        }
    }

    pub fn derivative(self, r: f64) -> f64 {
        match self {
            LossMode::L1 => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossMode::SmoothL1 => {
                if r.abs() < SMOOTH_L1_BETA {
                    r / SMOOTH_L1_BETA
                } else {
                    r.signum()
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Weight of the position term.
    pub lambda: f64,
    /// Heatmap target standard deviation, px.
    pub sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::SmoothL1,
            lambda: 1.0,
            sigma: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub heatmap: f64,
    pub position: f64,
}

/// Normalized isotropic Gaussian per keypoint, `[K, H, W]`.
pub fn heatmap_target(keypoints: &[Point], h: usize, w: usize, sigma: f64) -> Result<Tensor<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let plane = h * w;
    let mut values = Vec::with_capacity(keypoints.len() * plane);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (index, &[x, y]) in keypoints.iter().enumerate() {
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return Err(Error::KeypointOutsideImage {
                index,
                x,
                y,
                width: w,
                height: h,
            });
        }
        let gx: Vec<f64> = (0..w).map(|i| (-(i as f64 - x).powi(2) * inv).exp()).collect();
        let gy: Vec<f64> = (0..h).map(|j| (-(j as f64 - y).powi(2) * inv).exp()).collect();
        let total = gx.iter().sum::<f64>() * gy.iter().sum::<f64>();
        for &b in &gy {
            values.extend(gx.iter().map(|&a| (a * b / total) as f32));
        }
    }
    Ok(Tensor::new(&[keypoints.len(), h, w], values)?)
}

/// Batched loss with gradients.
///
/// `pred_heat` and `target_heat` are `[N, K, H, W]` probability maps (pass
/// `None` for models without heatmaps); `pred_xy` and `target_xy` are
/// `[N, K, 2]`. Returns the terms plus gradients with respect to the
/// predicted heatmaps and coordinates.
pub fn loss_and_grad(
    pred_heat: Option<(&[f32], &[f32])>,
    heat_dims: [usize; 4],
    pred_xy: &[f32],
    target_xy: &[f32],
    cfg: &LossConfig,
) -> Result<(LossTerms, Vec<f32>, Vec<f32>)> {
    if pred_xy.len() != target_xy.len() || pred_xy.is_empty() {
        return Err(Error::CountMismatch(format!(
            "{} predicted vs {} target coordinates",
            pred_xy.len(),
            target_xy.len()
        )));
    }
    let mode = cfg.mode;
    let m = pred_xy.len() as f64;
    let mut position = 0.0;
    let mut g_xy = Vec::with_capacity(pred_xy.len());
    for (&p, &t) in pred_xy.iter().zip(target_xy) {
        let r = p as f64 - t as f64;
        position += mode.value(r);
        g_xy.push((cfg.lambda * mode.derivative(r) / m) as f32);
    }
    position /= m;

    let mut heatmap = 0.0;
    let mut g_heat = Vec::new();
    if let Some((ph, th)) = pred_heat {
        let [n, k, h, w] = heat_dims;
        let hw = (h * w) as f64;
        if ph.len() != n * k * h * w || th.len() != ph.len() {
            return Err(Error::CountMismatch(format!(
                "heatmaps: {} predicted vs {} target values for {heat_dims:?}",
                ph.len(),
                th.len()
            )));
        }
        // Scaling by H*W puts residuals on a per-pixel unit scale where
        // the uniform map has value 1.
        let nk = (n * k) as f64;
        g_heat.reserve(ph.len());
        for (&p, &t) in ph.iter().zip(th) {
            let r = (p as f64 - t as f64) * hw;
            heatmap += mode.value(r);
            g_heat.push((mode.derivative(r) / nk) as f32);
        }
        heatmap /= nk * hw;
    }
    Ok((
        LossTerms {
            total: heatmap + cfg.lambda * position,
            heatmap,
            position,
        },
        g_heat,
        g_xy,
    ))
}

/// Loss for a single prediction.
pub fn custom_loss(
    pred: &KeypointPrediction,
    target_keypoints: &[Point],
    target_heatmaps: Option<&Tensor<f32>>,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    if pred.keypoints.len() != target_keypoints.len() {
        return Err(Error::CountMismatch(format!(
            "{} predicted vs {} target keypoints",
            pred.keypoints.len(),
            target_keypoints.len()
        )));
    }
    let pxy: Vec<f32> = pred.keypoints.iter().flat_map(|p| [p[0] as f32, p[1] as f32]).collect();
    let txy: Vec<f32> = target_keypoints
        .iter()
        .flat_map(|p| [p[0] as f32, p[1] as f32])
        .collect();
    let heat = match (&pred.heatmaps, target_heatmaps) {
        (Some(p), Some(t)) => {
            if p.shape() != t.shape() {
                return Err(Error::CountMismatch(format!(
                    "heatmap shapes {:?} vs {:?}",
                    p.shape(),
                    t.shape()
                )));
            }
            let s = p.shape();
            Some(((p.values(), t.values()), [1, s[0], s[1], s[2]]))
        }
        _ => None,
    };
    let dims = heat.map(|h| h.1).unwrap_or([0; 4]);
    Ok(loss_and_grad(heat.map(|h| h.0), dims, &pxy, &txy, cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_at_half_pixel() {
        assert_eq!(LossMode::SmoothL1.value(0.5), 0.125);
        assert_eq!(LossMode::L1.value(0.5), 0.5);
        assert_eq!(LossMode::SmoothL1.value(-3.0), 2.5);
    }

    #[test]
    fn target_channels_are_normalized_and_peak_at_keypoint() {
        let t = heatmap_target(&[[10.0, 20.0], [33.4, 5.6]], 40, 50, 2.0).unwrap();
        for (c, kp) in t.values().chunks(2000).zip([[10usize, 20usize], [33, 6]]) {
            let s: f64 = c.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
            let arg = c.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!([arg % 50, arg / 50], kp);
        }
    }

    #[test]
    fn target_rejects_outside_keypoint() {
        assert!(heatmap_target(&[[80.0, 3.0]], 80, 80, 2.0).is_err());
        assert!(heatmap_target(&[[3.0, 3.0]], 80, 80, 0.0).is_err());
    }

    #[test]
    fn position_only_half_pixel_residual() {
        let cfg = LossConfig::default();
        let (t, _, _) = loss_and_grad(None, [0; 4], &[10.5, 3.0], &[10.0, 3.0], &cfg).unwrap();
        // Mean over two coordinates.
        assert_eq!(t.position, 0.0625);
        let l1 = LossConfig {
            mode: LossMode::L1,
            ..cfg
        };
        let (t, _, _) = loss_and_grad(None, [0; 4], &[10.5, 3.0], &[10.0, 3.0], &l1).unwrap();
        assert_eq!(t.position, 0.25);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let cfg = LossConfig::default();
        assert!(loss_and_grad(None, [0; 4], &[1.0, 2.0], &[1.0], &cfg).is_err());
    }
}
