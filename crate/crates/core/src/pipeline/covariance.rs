//! Ground-plane error covariance per distance bin.

use serde::{Deserialize, Serialize};

/// Three 6 m bins starting at 2 m.
pub const DEFAULT_BIN_EDGES: [f64; 4] = [2.0, 8.0, 14.0, 20.0];

/// Bins with fewer samples are omitted.
pub const MIN_BIN_SAMPLES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinCovariance {
    pub range: [f64; 2],
    pub count: usize,
    /// Mean `(x', y')` error, meters.
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    /// Descending.
    pub eigenvalues: [f64; 2],
    /// Angle of the major axis from the x' axis, radians.
    pub orientation: f64,
    /// One-sigma ellipse semi-axes: square roots of the eigenvalues.
    pub axes: [f64; 2],
}

impl BinCovariance {
    pub fn trace(&self) -> f64 {
        self.cov[0][0] + self.cov[1][1]
    }

    /// Rebuilds the covariance from its eigen-decomposition.
    pub fn reconstruct(&self) -> [[f64; 2]; 2] {
        let (c, s) = (self.orientation.cos(), self.orientation.sin());
        let [l1, l2] = self.eigenvalues;
        [
            [l1 * c * c + l2 * s * s, (l1 - l2) * c * s],
            [(l1 - l2) * c * s, l1 * s * s + l2 * c * c],
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CovarianceOutcome {
    pub bins: Vec<BinCovariance>,
    pub warnings: Vec<String>,
}

/// Closed-form eigen-decomposition of a symmetric 2x2 matrix.
pub fn eigen_sym2(m: [[f64; 2]; 2]) -> ([f64; 2], f64) {
    let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
    let half_tr = 0.5 * (a + d);
    let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
    let theta = if b == 0.0 && a >= d {
        0.0
    } else {
        0.5 * (2.0 * b).atan2(a - d)
    };
    ([half_tr + r, (half_tr - r).max(0.0)], theta)
}

/// Groups `(true distance, [dx, dy] error)` samples into `[lo, hi)` bins and
/// computes the (n - 1)-normalized sample covariance of each.
pub fn covariance_by_distance(samples: &[(f64, [f64; 2])], edges: &[f64]) -> CovarianceOutcome {
    let mut out = CovarianceOutcome::default();
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let errs: Vec<[f64; 2]> = samples
            .iter()
            .filter(|(d, _)| *d >= lo && *d < hi)
            .map(|s| s.1)
            .collect();
        let n = errs.len();
        if n < MIN_BIN_SAMPLES {
            out.warnings.push(format!(
                "bin [{lo}, {hi}) m has {n} samples (< {MIN_BIN_SAMPLES}); omitted"
            ));
            continue;
        }
        let nf = n as f64;
        let mean = [
            errs.iter().map(|e| e[0]).sum::<f64>() / nf,
            errs.iter().map(|e| e[1]).sum::<f64>() / nf,
        ];
        let mut c = [[0.0; 2]; 2];
        for e in &errs {
            let d = [e[0] - mean[0], e[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += d[i] * d[j];
                }
            }
        }
        for row in &mut c {
            for v in row.iter_mut() {
                *v /= nf - 1.0;
            }
        }
        let (eigenvalues, orientation) = eigen_sym2(c);
        out.bins.push(BinCovariance {
            range: [lo, hi],
            count: n,
            mean,
            cov: c,
            eigenvalues,
            orientation,
            axes: eigenvalues.map(f64::sqrt),
        });
    }
    out
}

/// Delimited text: one row per bin.
pub fn covariance_csv(bins: &[BinCovariance]) -> String {
    let mut s =
        String::from("bin_lo,bin_hi,count,mean_x,mean_y,cov_xx,cov_xy,cov_yy,eig_major,eig_minor,orientation_rad\n");
    for b in bins {
        s.push_str(&format!(
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6}\n",
            b.range[0],
            b.range[1],
            b.count,
            b.mean[0],
            b.mean[1],
            b.cov[0][0],
            b.cov[0][1],
            b.cov[1][1],
            b.eigenvalues[0],
            b.eigenvalues[1],
            b.orientation
        ));
    }
    s
}
