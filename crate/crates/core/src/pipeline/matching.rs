//! Greedy nearest-neighbor association on the ground plane.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `(truth index, estimate index, distance)`, in match order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_truths: Vec<usize>,
    pub unmatched_estimates: Vec<usize>,
}

impl Matching {
    pub fn estimate_for(&self, truth: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == truth).map(|p| p.1)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Repeatedly takes the closest remaining `(truth, estimate)` pair within
/// `gate`. Ties break by truth index, then estimate index.
pub fn match_detections(truths: &[[f64; 2]], estimates: &[[f64; 2]], gate: f64) -> Matching {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (t, &tp) in truths.iter().enumerate() {
        for (e, &ep) in estimates.iter().enumerate() {
            let d = dist(tp, ep);
            if d <= gate {
                cand.push((d, t, e));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut t_used = vec![false; truths.len()];
    let mut e_used = vec![false; estimates.len()];
    let mut pairs = Vec::new();
    for (d, t, e) in cand {
        if !t_used[t] && !e_used[e] {
            t_used[t] = true;
            e_used[e] = true;
            pairs.push((t, e, d));
        }
    }
    Matching {
        pairs,
        unmatched_truths: (0..truths.len()).filter(|&i| !t_used[i]).collect(),
        unmatched_estimates: (0..estimates.len()).filter(|&i| !e_used[i]).collect(),
    }
}
