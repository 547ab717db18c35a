//! Fringe fitting: per-curve sinusoid fits with Poisson weights, pooled
//! visibility, confidence bands, and propagation of fit uncertainty into
//! Fisher-information bands.
//!
//! The per-curve model is `counts(phi) = A0 * (1 + s*V*cos(m*(phi - phi0)))`
//! with the sign `s` fixed by the label class. Independent fits are exact
//! weighted linear least squares in the basis `[1, cos(m*phi), sin(m*phi)]`;
//! shared-parameter modes refine a joint model by Gauss-Newton starting from
//! the independent solution.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::calibration::LossBudget;
use crate::error::{Error, Result};
use crate::fisher::{fisher_curve, max_fisher, FisherMax, Normalization, DEFAULT_MAX_TOL};
use crate::model::{coincidence_distribution, single_photon_distribution, Visibility};
use crate::simulator::FringeScan;
use crate::util::fmt_sig12;

/// Minimum points per curve for a three-parameter fit.
pub const MIN_POINTS: usize = 8;

// ── fit configuration ───────────────────────────────────────────────────────

/// How parameters are shared across the curves of one scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Each curve fitted alone; visibility pooled afterwards by inverse
    /// variance.
    Independent,
    /// One joint visibility, per-curve amplitude and phase.
    SharedVisibility,
    /// One joint visibility and phase, per-curve amplitude.
    SharedVisibilityAndPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mode: FitMode,
    pub max_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: FitMode::Independent,
            max_iterations: 50,
        }
    }
}

// ── results ─────────────────────────────────────────────────────────────────

/// One fitted curve. `covariance` is ordered `(a0, visibility, phi0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub label: String,
    pub a0: f64,
    pub visibility: f64,
    pub phi0: f64,
    pub covariance: [[f64; 3]; 3],
    pub chi2_red: f64,
    pub sign: f64,
}

impl CurveFit {
    /// Model counts at `phi` for harmonic `m`.
    pub fn eval(&self, m: u32, phi: f64) -> f64 {
        self.a0 * (1.0 + self.sign * self.visibility * (m as f64 * (phi - self.phi0)).cos())
    }

    pub fn sigma_visibility(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }
}

/// All curves of a scan plus the pooled visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub curves: Vec<CurveFit>,
    pub pooled_visibility: f64,
    pub pooled_sigma: f64,
    pub harmonic: u32,
    pub warnings: Vec<String>,
}

// ── small dense linear algebra ──────────────────────────────────────────────

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if !a[pivot][col].is_finite() || a[pivot][col].abs() < 1e-300 {
            return Err(Error::SingularCovariance);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (pivot_rows, rest) = a.split_at_mut(col + 1);
        let pivot_row = &pivot_rows[col];
        let (b_head, b_tail) = b.split_at_mut(col + 1);
        let b_col = b_head[col];
        for (row, b_row) in rest.iter_mut().zip(b_tail.iter_mut()) {
            let factor = row[col] / pivot_row[col];
            for (entry, &p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *entry -= factor * p;
            }
            *b_row -= factor * b_col;
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    Ok(x)
}

fn invert_small(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let column = solve_small(a.to_vec(), e)?;
        for row in 0..n {
            inv[row][col] = column[row];
        }
    }
    Ok(inv)
}

// ── per-curve weighted least squares ────────────────────────────────────────

fn fringe_sign(label: &str) -> Option<f64> {
    match label {
        "P12" | "P34" | "P10" => Some(1.0),
        "P23" | "P14" | "P01" => Some(-1.0),
        _ => None,
    }
}

struct CurveData {
    label: String,
    sign: f64,
    phi: Vec<f64>,
    counts: Vec<f64>,
    weights: Vec<f64>,
}

fn curve_data(scan: &FringeScan, warnings: &mut Vec<String>) -> Result<Vec<CurveData>> {
    let mut curves = Vec::with_capacity(scan.labels.len());
    for (idx, label) in scan.labels.iter().enumerate() {
        let sign = match fringe_sign(label) {
            Some(s) => s,
            None => {
                warnings.push(format!(
                    "unknown label class '{label}': assuming a positive fringe sign"
                ));
                1.0
            }
        };
        let phi: Vec<f64> = scan.points.iter().map(|p| p.phi).collect();
        let counts: Vec<f64> = scan.points.iter().map(|p| p.counts[idx] as f64).collect();
        // Poisson weights with a floor of one count so empty bins cannot
        // carry infinite weight.
        let weights: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1.0)).collect();
        curves.push(CurveData {
            label: label.clone(),
            sign,
            phi,
            counts,
            weights,
        });
    }
    Ok(curves)
}

fn check_span(scan: &FringeScan, m: u32) -> Result<()> {
    let n = scan.points.len();
    if n < MIN_POINTS {
        return Err(Error::InsufficientPoints {
            label: "scan".to_string(),
            got: n,
            need: MIN_POINTS,
        });
    }
    let period = TAU / m as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &scan.points {
        lo = lo.min(p.phi);
        hi = hi.max(p.phi);
    }
    let span = hi - lo;
    if span < period * (1.0 - 1e-9) {
        return Err(Error::InsufficientSpan {
            span,
            period,
            harmonic: m,
        });
    }
    Ok(())
}

/// Exact WLS solution in the linear basis, mapped back to `(a0, V, phi0)`
/// with a delta-method covariance.
fn wls_curve(data: &CurveData, m: u32) -> Result<CurveFit> {
    let mf = m as f64;
    let mut xtx = vec![vec![0.0; 3]; 3];
    let mut xty = vec![0.0; 3];
    for ((&phi, &y), &w) in data.phi.iter().zip(&data.counts).zip(&data.weights) {
        let row = [1.0, (mf * phi).cos(), (mf * phi).sin()];
        for i in 0..3 {
            for j in 0..3 {
                xtx[i][j] += w * row[i] * row[j];
            }
            xty[i] += w * row[i] * y;
        }
    }
    let beta = solve_small(xtx.clone(), xty)?;
    let cov_beta = invert_small(&xtx)?;
    let (c0, c1, c2) = (beta[0], beta[1], beta[2]);
    if c0.is_nan() || c0 <= 0.0 {
        return Err(Error::consistency(format!(
            "curve '{}': fitted baseline is not positive ({c0})",
            data.label
        )));
    }
    let r = (c1 * c1 + c2 * c2).sqrt();
    let s = data.sign;
    let (visibility, phi0, jac): (f64, f64, [[f64; 3]; 3]) = if r > 0.0 {
        let v = r / c0;
        let phi0 = (s * c2).atan2(s * c1) / mf;
        // Rows: d(a0)/d(beta), d(V)/d(beta), d(phi0)/d(beta).
        let jac = [
            [1.0, 0.0, 0.0],
            [-r / (c0 * c0), c1 / (r * c0), c2 / (r * c0)],
            [0.0, -c2 / (mf * r * r), c1 / (mf * r * r)],
        ];
        (v, phi0, jac)
    } else {
        // Dead-flat data: visibility zero, phase undefined. Spread the
        // harmonic variances into V and leave the phase pinned.
        (
            0.0,
            0.0,
            [[1.0, 0.0, 0.0], [0.0, 1.0 / c0, 1.0 / c0], [0.0; 3]],
        )
    };

    let mut covariance = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for p in 0..3 {
                for q in 0..3 {
                    acc += jac[i][p] * cov_beta[p][q] * jac[j][q];
                }
            }
            covariance[i][j] = acc;
        }
    }

    let mut chi2 = 0.0;
    for ((&phi, &y), &w) in data.phi.iter().zip(&data.counts).zip(&data.weights) {
        let fit = c0 + c1 * (mf * phi).cos() + c2 * (mf * phi).sin();
        chi2 += w * (y - fit) * (y - fit);
    }
    let chi2_red = chi2 / (data.phi.len() - 3) as f64;

    Ok(CurveFit {
        label: data.label.clone(),
        a0: c0,
        visibility,
        phi0,
        covariance,
        chi2_red,
        sign: s,
    })
}

// ── pooling ─────────────────────────────────────────────────────────────────

fn pool_visibility(curves: &[CurveFit], warnings: &mut Vec<String>) -> Result<(f64, f64)> {
    let mut num = 0.0;
    let mut den = 0.0;
    for curve in curves {
        let var = curve.covariance[1][1];
        if !var.is_finite() || var <= 0.0 {
            warnings.push(format!(
                "curve '{}' excluded from pooling (visibility variance {var})",
                curve.label
            ));
            continue;
        }
        num += curve.visibility / var;
        den += 1.0 / var;
    }
    if den == 0.0 {
        return Err(Error::SingularCovariance);
    }
    let mut pooled = num / den;
    let sigma = (1.0 / den).sqrt();
    if pooled > 1.0 {
        warnings.push(format!(
            "pooled visibility {pooled:.6} exceeds 1: clamped to the physical bound"
        ));
        pooled = 1.0;
    }
    if pooled < 0.0 {
        pooled = 0.0;
    }
    Ok((pooled, sigma))
}

// ── shared-parameter refinement ─────────────────────────────────────────────

/// Gauss-Newton for the joint models. Parameter layout:
/// `SharedVisibility`: `[V, a0_0, phi0_0, a0_1, phi0_1, ...]`;
/// `SharedVisibilityAndPhase`: `[V, phi0, a0_0, a0_1, ...]`.
fn shared_fit(
    curves: &[CurveData],
    seeds: &[CurveFit],
    m: u32,
    mode: FitMode,
    seed_pool: f64,
    max_iterations: usize,
) -> Result<(Vec<CurveFit>, f64, f64)> {
    let mf = m as f64;
    let k = curves.len();
    let shared_phase = mode == FitMode::SharedVisibilityAndPhase;
    let dim = if shared_phase { 2 + k } else { 1 + 2 * k };

    let mut theta = vec![0.0; dim];
    theta[0] = seed_pool;
    if shared_phase {
        // Circular mean of the per-curve phases, weighted by amplitude.
        let (mut sx, mut sy) = (0.0, 0.0);
        for seed in seeds {
            sx += seed.a0 * (mf * seed.phi0).cos();
            sy += seed.a0 * (mf * seed.phi0).sin();
        }
        theta[1] = sy.atan2(sx) / mf;
        for (i, seed) in seeds.iter().enumerate() {
            theta[2 + i] = seed.a0;
        }
    } else {
        for (i, seed) in seeds.iter().enumerate() {
            theta[1 + 2 * i] = seed.a0;
            theta[2 + 2 * i] = seed.phi0;
        }
    }

    let indices = |curve: usize| -> (usize, usize) {
        if shared_phase {
            (2 + curve, 1)
        } else {
            (1 + 2 * curve, 2 + 2 * curve)
        }
    };

    let mut jtj = vec![vec![0.0; dim]; dim];
    let mut converged = false;
    for _ in 0..max_iterations {
        for row in jtj.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut jtr = vec![0.0; dim];
        let v = theta[0];
        for (ci, data) in curves.iter().enumerate() {
            let (ai, pi) = indices(ci);
            let (a0, phi0, s) = (theta[ai], theta[pi], data.sign);
            for ((&phi, &y), &w) in data.phi.iter().zip(&data.counts).zip(&data.weights) {
                let arg = mf * (phi - phi0);
                let (sin, cos) = arg.sin_cos();
                let model = a0 * (1.0 + s * v * cos);
                let resid = y - model;
                let mut grad = vec![0.0; dim];
                grad[0] = a0 * s * cos;
                grad[ai] = 1.0 + s * v * cos;
                grad[pi] += a0 * s * v * mf * sin;
                for i in 0..dim {
                    if grad[i] == 0.0 {
                        continue;
                    }
                    jtr[i] += w * grad[i] * resid;
                    for j in 0..dim {
                        jtj[i][j] += w * grad[i] * grad[j];
                    }
                }
            }
        }
        let delta = solve_small(jtj.clone(), jtr)?;
        let mut worst: f64 = 0.0;
        for (t, d) in theta.iter_mut().zip(&delta) {
            *t += d;
            worst = worst.max(d.abs() / t.abs().max(1.0));
        }
        if worst < 1e-11 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: max_iterations,
            last_visibility: theta[0],
        });
    }

    let cov = invert_small(&jtj)?;
    let v = theta[0];
    let sigma_v = cov[0][0].max(0.0).sqrt();

    let mut fitted = Vec::with_capacity(k);
    for (ci, data) in curves.iter().enumerate() {
        let (ai, pi) = indices(ci);
        // Marginal covariance in (a0, V, phi0) order.
        let map = [ai, 0, pi];
        let mut covariance = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                covariance[i][j] = cov[map[i]][map[j]];
            }
        }
        let (a0, phi0, s) = (theta[ai], theta[pi], data.sign);
        let mut chi2 = 0.0;
        for ((&phi, &y), &w) in data.phi.iter().zip(&data.counts).zip(&data.weights) {
            let model = a0 * (1.0 + s * v * (mf * (phi - phi0)).cos());
            chi2 += w * (y - model) * (y - model);
        }
        fitted.push(CurveFit {
            label: data.label.clone(),
            a0,
            visibility: v,
            phi0,
            covariance,
            chi2_red: chi2 / (data.phi.len() - 3) as f64,
            sign: s,
        });
    }
    Ok((fitted, v, sigma_v))
}

// ── entry points ────────────────────────────────────────────────────────────

/// Fits every curve of `scan` at harmonic `m` with the default
/// (independent-curves) configuration.
pub fn fit_fringes(scan: &FringeScan, m: u32) -> Result<FitResult> {
    fit_fringes_with(scan, m, &FitConfig::default())
}

/// Fits every curve of `scan` at harmonic `m`.
///
/// # Errors
/// Fewer than [`MIN_POINTS`] points, a phase span short of one period, a
/// non-positive fitted baseline, or (shared modes) non-convergence within
/// the configured iteration budget.
pub fn fit_fringes_with(scan: &FringeScan, m: u32, config: &FitConfig) -> Result<FitResult> {
    if !(m == 1 || m == 2) {
        return Err(Error::domain(format!("harmonic must be 1 or 2, got {m}")));
    }
    if scan.labels.is_empty() {
        return Err(Error::domain("scan has no outcome labels"));
    }
    check_span(scan, m)?;
    let mut warnings = Vec::new();
    let data = curve_data(scan, &mut warnings)?;

    let seeds: Vec<CurveFit> = data
        .iter()
        .map(|d| wls_curve(d, m))
        .collect::<Result<_>>()?;
    let (seed_pool, seed_sigma) = pool_visibility(&seeds, &mut warnings)?;

    let (curves, pooled_visibility, pooled_sigma) = match config.mode {
        FitMode::Independent => (seeds, seed_pool, seed_sigma),
        FitMode::SharedVisibility | FitMode::SharedVisibilityAndPhase => {
            let (curves, mut v, sigma) = shared_fit(
                &data,
                &seeds,
                m,
                config.mode,
                seed_pool,
                config.max_iterations,
            )?;
            if v > 1.0 {
                warnings.push(format!(
                    "shared visibility {v:.6} exceeds 1: clamped to the physical bound"
                ));
                v = 1.0;
            }
            (curves, v.max(0.0), sigma)
        }
    };

    Ok(FitResult {
        curves,
        pooled_visibility,
        pooled_sigma,
        harmonic: m,
        warnings,
    })
}

// ── confidence bands ────────────────────────────────────────────────────────

/// Pointwise `k`-sigma band for one fitted curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub label: String,
    pub phi: Vec<f64>,
    pub central: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// First-order confidence bands, `model +- k * sigma_model(phi)`, for every
/// curve of a fit.
pub fn confidence_band(fit: &FitResult, k: f64, grid: &[f64]) -> Result<Vec<CurveBand>> {
    if !k.is_finite() || k < 0.0 {
        return Err(Error::domain(format!(
            "band width multiplier must be >= 0, got {k}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::domain("band grid must be nonempty"));
    }
    let mf = fit.harmonic as f64;
    let mut bands = Vec::with_capacity(fit.curves.len());
    for curve in &fit.curves {
        if curve.covariance.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        let mut central = Vec::with_capacity(grid.len());
        let mut lower = Vec::with_capacity(grid.len());
        let mut upper = Vec::with_capacity(grid.len());
        for &phi in grid {
            let arg = mf * (phi - curve.phi0);
            let (sin, cos) = arg.sin_cos();
            let value = curve.a0 * (1.0 + curve.sign * curve.visibility * cos);
            let grad = [
                1.0 + curve.sign * curve.visibility * cos,
                curve.a0 * curve.sign * cos,
                curve.a0 * curve.sign * curve.visibility * mf * sin,
            ];
            let mut var = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    var += grad[i] * curve.covariance[i][j] * grad[j];
                }
            }
            let half = k * var.max(0.0).sqrt();
            central.push(value);
            lower.push(value - half);
            upper.push(value + half);
        }
        bands.push(CurveBand {
            label: curve.label.clone(),
            phi: grid.to_vec(),
            central,
            lower,
            upper,
        });
    }
    Ok(bands)
}

// ── Fisher-information bands ────────────────────────────────────────────────

/// Fisher-information curve with envelopes from the fitted visibility's
/// `k`-sigma interval, plus refined maxima of all three curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiBand {
    pub phi: Vec<f64>,
    pub central: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub central_max: FisherMax,
    pub lower_max: FisherMax,
    pub upper_max: FisherMax,
    pub v_center: f64,
    pub v_lower: f64,
    pub v_upper: f64,
    pub n_photons: u32,
    pub warnings: Vec<String>,
}

/// Propagates the pooled visibility's uncertainty into a Fisher-information
/// band over `grid`: the envelope evaluates the information at
/// `V = pooled +- k*sigma` (the information is monotone in V away from the
/// fringe nulls, so endpoint evaluation bounds the band).
///
/// # Errors
/// A `V + k*sigma` beyond 1 is clamped to 1 with a warning rather than
/// rejected; non-finite pooled values error out.
pub fn fi_band_from_fit(
    fit: &FitResult,
    budget: &LossBudget,
    k: f64,
    grid: &[f64],
) -> Result<FiBand> {
    if !k.is_finite() || k < 0.0 {
        return Err(Error::domain(format!(
            "band width multiplier must be >= 0, got {k}"
        )));
    }
    if !fit.pooled_visibility.is_finite() || !fit.pooled_sigma.is_finite() {
        return Err(Error::SingularCovariance);
    }
    let mut warnings = Vec::new();
    let v_center = fit.pooled_visibility;
    let v_lower = (v_center - k * fit.pooled_sigma).max(0.0);
    let mut v_upper = v_center + k * fit.pooled_sigma;
    if v_upper > 1.0 {
        warnings.push(format!(
            "upper visibility {v_upper:.6} exceeds 1: clamped to the physical bound"
        ));
        v_upper = 1.0;
    }

    let dist_for = |v: f64| match fit.harmonic {
        2 => coincidence_distribution(budget, &Visibility::new(v, 2)?),
        1 => single_photon_distribution(budget, &Visibility::new(v, 1)?, false),
        m => Err(Error::domain(format!("unsupported harmonic {m}"))),
    };

    let center = dist_for(v_center)?;
    let low = dist_for(v_lower)?;
    let high = dist_for(v_upper)?;

    let central = fisher_curve(&center, grid, Normalization::Raw)?;
    let lower = fisher_curve(&low, grid, Normalization::Raw)?;
    let upper = fisher_curve(&high, grid, Normalization::Raw)?;

    let central_max = max_fisher(&center, DEFAULT_MAX_TOL)?;
    let lower_max = max_fisher(&low, DEFAULT_MAX_TOL)?;
    let upper_max = max_fisher(&high, DEFAULT_MAX_TOL)?;

    Ok(FiBand {
        phi: grid.to_vec(),
        central: central.values,
        lower: lower.values,
        upper: upper.values,
        central_max,
        lower_max,
        upper_max,
        v_center,
        v_lower,
        v_upper,
        n_photons: center.n_photons(),
        warnings,
    })
}

/// Writes a Fisher-information band as CSV with the header
/// `phi_rad,central,lower,upper`.
pub fn write_fi_band_csv<W: std::io::Write>(band: &FiBand, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["phi_rad", "central", "lower", "upper"])
        .map_err(|e| Error::consistency(format!("csv write: {e}")))?;
    for i in 0..band.phi.len() {
        wtr.write_record([
            fmt_sig12(band.phi[i]),
            fmt_sig12(band.central[i]),
            fmt_sig12(band.lower[i]),
            fmt_sig12(band.upper[i]),
        ])
        .map_err(|e| Error::consistency(format!("csv write: {e}")))?;
    }
    wtr.flush()?;
    Ok(())
}
