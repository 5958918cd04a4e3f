//! Rank statistics and histograms for the fitting pipeline.

use statrs::distribution::{ContinuousCDF, Normal};

use super::WindowError;

/// Exact enumeration is used up to this many nonzero differences; above it,
/// the normal approximation with continuity and tie correction.
pub const WILCOXON_EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// W+: sum of the ranks of positive differences (midranks under ties).
    pub statistic: f64,
    /// Two-sided p-value in `(0, 1]`.
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_used: usize,
    /// True when every difference was zero (p is 1 by convention).
    pub degenerate: bool,
}

/// Two-sided Wilcoxon signed-rank test on paired differences.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> WilcoxonResult {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n_used: 0,
            degenerate: true,
        };
    }
    let n = nonzero.len();
    let ranks = midranks(&nonzero);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    let p_value = if n <= WILCOXON_EXACT_LIMIT {
        exact_two_sided(&ranks, w_plus)
    } else {
        normal_two_sided(&nonzero, w_plus)
    };
    WilcoxonResult {
        statistic: w_plus,
        p_value: p_value.clamp(f64::MIN_POSITIVE, 1.0),
        n_used: n,
        degenerate: false,
    }
}

/// Midranks of |d|, 1-based; tied magnitudes share the average rank.
fn midranks(diffs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| {
        diffs[a]
            .abs()
            .partial_cmp(&diffs[b].abs())
            .expect("finite differences")
    });
    let mut ranks = vec![0.0; diffs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p over all 2^n sign assignments, computed by dynamic
/// programming over doubled ranks (so midranks stay integral).
fn exact_two_sided(ranks: &[f64], w_plus: f64) -> f64 {
    let scaled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = scaled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &scaled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let denom = 2f64.powi(ranks.len() as i32);
    let w2 = (2.0 * w_plus).round() as usize;
    let below: f64 = counts[..=w2].iter().sum();
    let above: f64 = counts[w2..].iter().sum();
    (2.0 * below.min(above) / denom).min(1.0)
}

fn normal_two_sided(diffs: &[f64], w_plus: f64) -> f64 {
    let n = diffs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // Tie correction: subtract sum(t^3 - t)/48 over tie groups.
    let mut tie_term = 0.0;
    let mut sorted: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let correction = if w_plus > mean {
        -0.5
    } else if w_plus < mean {
        0.5
    } else {
        0.0
    };
    let z = (w_plus - mean + correction) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * normal.cdf(-z.abs())).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Counts divided by the total number of input values (so the sum is 1
    /// exactly when every value fell in range).
    pub relative: Vec<f64>,
}

/// Histogram with right-open bins, except the last bin which includes its
/// upper edge.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Histogram, WindowError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(WindowError::BadEdges);
    }
    let n_bins = edges.len() - 1;
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        if v < edges[0] || v > edges[n_bins] {
            continue;
        }
        let mut bin = match edges.binary_search_by(|e| e.partial_cmp(&v).expect("finite")) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if bin >= n_bins {
            bin = n_bins - 1; // v == last edge
        }
        counts[bin] += 1;
    }
    let total = values.len();
    let relative = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
        relative,
    })
}

/// Type-7 (linear interpolation) quantile of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    quantile_sorted(&sorted, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_equal_negative_differences_give_exact_p() {
        let diffs = vec![-1.0; 6];
        let r = wilcoxon_signed_rank(&diffs);
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 2.0 / 64.0).abs() < 1e-15, "p {}", r.p_value);
        assert!(!r.degenerate);
    }

    #[test]
    fn all_zero_differences_degenerate() {
        let r = wilcoxon_signed_rank(&[0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn exact_matches_brute_force_enumeration() {
        // Oracle: enumerate all 2^n sign assignments directly.
        let diffs = [0.3, -1.2, 0.7, 2.0, -0.5, 0.9, -1.7, 0.2];
        let ranks = midranks(&diffs);
        let w_obs: f64 = diffs
            .iter()
            .zip(&ranks)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| *r)
            .sum();
        let n = diffs.len();
        let mut below = 0usize;
        let mut above = 0usize;
        for mask in 0..(1usize << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= w_obs + 1e-12 {
                below += 1;
            }
            if w >= w_obs - 1e-12 {
                above += 1;
            }
        }
        let oracle = (2.0 * below.min(above) as f64 / (1usize << n) as f64).min(1.0);
        let r = wilcoxon_signed_rank(&diffs);
        assert!(
            (r.p_value - oracle).abs() < 1e-12,
            "{} vs {oracle}",
            r.p_value
        );
    }

    #[test]
    fn histogram_boundary_rule() {
        let h = histogram(&[1.0, 2.0, 3.0], &[0.0, 2.0, 4.0]).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert!((h.relative.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_out_of_range() {
        let h = histogram(&[-5.0, 9.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(h.counts, vec![0, 0]);
    }

    #[test]
    fn histogram_rejects_bad_edges() {
        assert!(matches!(histogram(&[1.0], &[]), Err(WindowError::BadEdges)));
        assert!(matches!(
            histogram(&[1.0], &[0.0, 0.0]),
            Err(WindowError::BadEdges)
        ));
    }

    #[test]
    fn quantiles_interpolate() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&sorted, 0.5), 2.5);
        assert_eq!(quantile_sorted(&sorted, 0.0), 1.0);
        assert_eq!(quantile_sorted(&sorted, 1.0), 4.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
