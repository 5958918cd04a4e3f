//! Pearson correlation with an explicit degeneracy convention.

use super::ProbeError;

/// Variance threshold below which a sequence counts as constant.
pub const DEGENERACY_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    /// In `[-1, 1]`; 0 by convention when degenerate.
    pub r: f64,
    /// True when either input had (population) variance below
    /// [`DEGENERACY_VARIANCE`].
    pub degenerate: bool,
}

/// Pearson correlation coefficient of two equal-length sequences.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, ProbeError> {
    if x.len() != y.len() {
        return Err(ProbeError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(ProbeError::TooShort(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx / n < DEGENERACY_VARIANCE || syy / n < DEGENERACY_VARIANCE {
        return Ok(Correlation {
            r: 0.0,
            degenerate: true,
        });
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation {
        r,
        degenerate: false,
    })
}
