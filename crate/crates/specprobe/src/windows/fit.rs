//! Least-squares sinusoid and linear fits on standardized window series.
//!
//! The sinusoid model is `y = o + a*cos(omega*x + theta)` with `x` the sample
//! index. The frequency search is a discrete grid over the window's DFT bins
//! (1..=Nyquist): on that grid the cosine/sine regressors are orthogonal to
//! each other and to the constant, so each candidate solves in closed form
//! and the minimal-SSE bin is exact. Bin 0 is the flat (linear-offset)
//! degenerate case. An optional golden-section refinement searches the
//! continuous neighborhood of the best bin.

use super::WindowError;

#[derive(Debug, Clone, PartialEq)]
pub struct SineFit {
    pub offset: f64,
    /// Non-negative.
    pub amplitude: f64,
    /// Angular frequency in radians per sample, in `[0, pi]`.
    pub omega: f64,
    /// Grid bin the search selected (frequency `bin/len` cycles per sample).
    pub bin: usize,
    /// Phase in `(-pi, pi]`.
    pub phase: f64,
    /// SSE divided by the series length.
    pub mse: f64,
    /// Flat input: amplitude 0, offset = mean, mse 0.
    pub degenerate: bool,
}

impl SineFit {
    pub fn frequency_hz(&self, sample_rate: f64) -> f64 {
        self.omega * sample_rate / (2.0 * std::f64::consts::PI)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub mse: f64,
}

/// Grid least-squares sinusoid fit; `refine` turns on the local continuous
/// search around the best bin.
pub fn fit_sinusoid(series: &[f64], refine: bool) -> Result<SineFit, WindowError> {
    let n = series.len();
    if n < 4 {
        return Err(WindowError::TooShortForSineFit(n));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let ss_total: f64 = series.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_total / nf < 1e-18 {
        return Ok(SineFit {
            offset: mean,
            amplitude: 0.0,
            omega: 0.0,
            bin: 0,
            phase: 0.0,
            mse: 0.0,
            degenerate: true,
        });
    }

    let mut best = (0usize, 0.0f64, 0.0f64, ss_total); // (bin, c1, c2, sse)
    for k in 1..=n / 2 {
        let omega = 2.0 * std::f64::consts::PI * k as f64 / nf;
        let (mut sc, mut ss) = (0.0, 0.0);
        let (rot_s, rot_c) = omega.sin_cos();
        let (mut c, mut s) = (1.0f64, 0.0f64);
        for &y in series {
            sc += y * c;
            ss += y * s;
            let (nc, nsn) = (c * rot_c - s * rot_s, s * rot_c + c * rot_s);
            c = nc;
            s = nsn;
        }
        let nyquist = n % 2 == 0 && k == n / 2;
        let (c1, c2, explained) = if nyquist {
            let c1 = sc / nf;
            (c1, 0.0, nf * c1 * c1)
        } else {
            let c1 = 2.0 * sc / nf;
            let c2 = 2.0 * ss / nf;
            (c1, c2, nf / 2.0 * (c1 * c1 + c2 * c2))
        };
        let sse = (ss_total - explained).max(0.0);
        if sse < best.3 {
            best = (k, c1, c2, sse);
        }
    }

    let (bin, mut c1, mut c2, mut sse) = best;
    let mut omega = 2.0 * std::f64::consts::PI * bin as f64 / nf;
    let mut offset = mean;
    if refine && bin > 0 {
        let lo = 2.0 * std::f64::consts::PI * (bin as f64 - 1.0).max(0.25) / nf;
        let hi = (2.0 * std::f64::consts::PI * (bin as f64 + 1.0) / nf).min(std::f64::consts::PI);
        if let Some(r) = golden_section(series, lo, hi) {
            if r.sse < sse {
                omega = r.omega;
                offset = r.offset;
                c1 = r.c1;
                c2 = r.c2;
                sse = r.sse;
            }
        }
    }

    Ok(SineFit {
        offset,
        amplitude: (c1 * c1 + c2 * c2).sqrt(),
        omega,
        bin,
        phase: crate::spectral::wrap_phase((-c2).atan2(c1)),
        mse: sse / nf,
        degenerate: false,
    })
}

struct ContinuousFit {
    omega: f64,
    offset: f64,
    c1: f64,
    c2: f64,
    sse: f64,
}

/// Solve `y ~ o + c1*cos(omega x) + c2*sin(omega x)` by the 3x3 normal
/// equations at an arbitrary (off-grid) frequency.
fn continuous_sse(series: &[f64], omega: f64) -> Option<ContinuousFit> {
    let n = series.len() as f64;
    let (mut scc, mut sss, mut scs, mut sc, mut ss) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut syc, mut sys, mut sy) = (0.0, 0.0, 0.0);
    let (rot_s, rot_c) = omega.sin_cos();
    let (mut c, mut s) = (1.0f64, 0.0f64);
    for &y in series {
        scc += c * c;
        sss += s * s;
        scs += c * s;
        sc += c;
        ss += s;
        syc += y * c;
        sys += y * s;
        sy += y;
        let (nc, nsn) = (c * rot_c - s * rot_s, s * rot_c + c * rot_s);
        c = nc;
        s = nsn;
    }
    // Normal equations for (o, c1, c2).
    let a = [[n, sc, ss], [sc, scc, scs], [ss, scs, sss]];
    let b = [sy, syc, sys];
    let det = det3(&a);
    if det.abs() < 1e-9 * n * n * n {
        return None;
    }
    let o = det3(&replace_col(&a, 0, &b)) / det;
    let c1 = det3(&replace_col(&a, 1, &b)) / det;
    let c2 = det3(&replace_col(&a, 2, &b)) / det;

    let mut sse = 0.0;
    let (mut cc, mut ssn) = (1.0f64, 0.0f64);
    for &y in series {
        let r = y - (o + c1 * cc + c2 * ssn);
        sse += r * r;
        let (nc, ns) = (cc * rot_c - ssn * rot_s, ssn * rot_c + cc * rot_s);
        cc = nc;
        ssn = ns;
    }
    Some(ContinuousFit {
        omega,
        offset: o,
        c1,
        c2,
        sse,
    })
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn replace_col(m: &[[f64; 3]; 3], col: usize, b: &[f64; 3]) -> [[f64; 3]; 3] {
    let mut out = *m;
    for (row, out_row) in out.iter_mut().enumerate() {
        out_row[col] = b[row];
    }
    out
}

fn golden_section(series: &[f64], mut lo: f64, mut hi: f64) -> Option<ContinuousFit> {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let sse_at = |w: f64| continuous_sse(series, w).map(|f| f.sse);
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let mut fa = sse_at(a)?;
    let mut fb = sse_at(b)?;
    for _ in 0..80 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = sse_at(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = sse_at(b)?;
        }
    }
    continuous_sse(series, (lo + hi) / 2.0)
}

/// Ordinary least squares `y = m*x + b` over `x = 0..n`.
pub fn fit_linear(series: &[f64]) -> Result<LinearFit, WindowError> {
    let n = series.len();
    if n < 2 {
        return Err(WindowError::TooShortForLinearFit(n));
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = series.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, &y) in series.iter().enumerate() {
        let dx = x as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let sse: f64 = series
        .iter()
        .enumerate()
        .map(|(x, &y)| {
            let r = y - (slope * x as f64 + intercept);
            r * r
        })
        .sum();
    Ok(LinearFit {
        slope,
        intercept,
        mse: sse / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_tone(n: usize, k: usize, amp: f64, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|x| amp * (2.0 * std::f64::consts::PI * k as f64 * x as f64 / n as f64 + phase).cos())
            .collect()
    }

    #[test]
    fn on_grid_tone_recovered_exactly() {
        let y = grid_tone(36, 5, 1.0, 0.3);
        let fit = fit_sinusoid(&y, false).unwrap();
        assert_eq!(fit.bin, 5);
        assert!((fit.phase - 0.3).abs() < 1e-6, "phase {}", fit.phase);
        assert!((fit.amplitude - 1.0).abs() < 1e-6);
        assert!(fit.mse < 1e-10);
        assert!(fit.offset.abs() < 1e-9);
    }

    #[test]
    fn flat_input_degenerate() {
        let fit = fit_sinusoid(&[0.0; 16], false).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.amplitude, 0.0);
        assert_eq!(fit.mse, 0.0);
        let fit = fit_sinusoid(&[5.0; 16], false).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.offset, 5.0);
    }

    #[test]
    fn constant_shift_moves_only_offset() {
        let y = grid_tone(40, 3, 1.0, -0.7);
        let shifted: Vec<f64> = y.iter().map(|v| v + 2.5).collect();
        let a = fit_sinusoid(&y, false).unwrap();
        let b = fit_sinusoid(&shifted, false).unwrap();
        assert_eq!(a.bin, b.bin);
        assert!((a.amplitude - b.amplitude).abs() < 1e-9);
        assert!((a.phase - b.phase).abs() < 1e-9);
        assert!((b.offset - (a.offset + 2.5)).abs() < 1e-9);
    }

    #[test]
    fn sign_flip_shifts_phase_by_pi() {
        let y = grid_tone(40, 3, 1.0, 0.4);
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        let a = fit_sinusoid(&y, false).unwrap();
        let b = fit_sinusoid(&flipped, false).unwrap();
        let d = crate::spectral::wrap_phase(b.phase - a.phase);
        assert!((d.abs() - std::f64::consts::PI).abs() < 1e-9);
        assert!((a.amplitude - b.amplitude).abs() < 1e-9);
    }

    #[test]
    fn off_grid_tone_within_one_grid_step() {
        let n = 50;
        let true_cycles = 4.37; // between bins 4 and 5
        let y: Vec<f64> = (0..n)
            .map(|x| {
                (2.0 * std::f64::consts::PI * true_cycles * x as f64 / n as f64 + 0.9).cos()
            })
            .collect();
        let fit = fit_sinusoid(&y, false).unwrap();
        assert!(
            (fit.bin as f64 - true_cycles).abs() <= 1.0,
            "bin {}",
            fit.bin
        );
        let refined = fit_sinusoid(&y, true).unwrap();
        let cycles = refined.omega * n as f64 / (2.0 * std::f64::consts::PI);
        assert!((cycles - true_cycles).abs() < 0.02, "cycles {cycles}");
        assert!(refined.mse <= fit.mse + 1e-12);
    }

    #[test]
    fn linear_fit_exact_line() {
        let y: Vec<f64> = (0..10).map(|x| 2.0 * x as f64 + 1.0).collect();
        let fit = fit_linear(&y).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!(fit.mse < 1e-20);
    }

    #[test]
    fn linear_fit_on_standardized_ramp() {
        // standardize((1,2,3)) is collinear with x.
        let y = [-1.224744871, 0.0, 1.224744871];
        let fit = fit_linear(&y).unwrap();
        assert!(fit.slope > 0.0);
        assert!(fit.mse < 1e-12);
    }

    #[test]
    fn linear_fit_matches_normal_equation_oracle() {
        let y = [0.3, -0.2, 1.7, 0.9, -1.1, 0.4, 2.2];
        let n = y.len() as f64;
        let sx: f64 = (0..y.len()).map(|x| x as f64).sum();
        let sy: f64 = y.iter().sum();
        let sxx: f64 = (0..y.len()).map(|x| (x * x) as f64).sum();
        let sxy: f64 = y.iter().enumerate().map(|(x, &v)| x as f64 * v).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        let fit = fit_linear(&y).unwrap();
        assert!((fit.slope - slope).abs() < 1e-10);
        assert!((fit.intercept - intercept).abs() < 1e-10);
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(
            fit_sinusoid(&[1.0, 2.0, 3.0], false),
            Err(WindowError::TooShortForSineFit(3))
        ));
        assert!(matches!(
            fit_linear(&[1.0]),
            Err(WindowError::TooShortForLinearFit(1))
        ));
    }
}
