//! Fisher information, its maxima, and the quantum-advantage ratio.
//!
//! `F(phi) = sum (p'(phi))^2 / p(phi)` over the detection outcomes of an
//! [`OutcomeDistribution`]. Maxima are found numerically (dense coarse grid
//! plus golden-section refinement); the fixed-phase closed forms are kept as
//! labeled approximations because asymmetric losses shift the true arg-max
//! and raise the true maximum above them.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::calibration::{BudgetSource, LossBudget};
use crate::error::{Error, Result};
use crate::model::{
    coincidence_distribution, single_photon_distribution, OutcomeDistribution, Visibility,
};

/// Probabilities at or below this are treated as vanishing when summing
/// Fisher-information terms.
pub const PROB_EPSILON: f64 = 1e-12;

/// Centered step for the finite-difference derivative mode.
pub const FD_STEP: f64 = 1e-6;

/// Points per period in the coarse scan preceding refinement.
pub const COARSE_POINTS: usize = 2048;

/// Default refinement tolerance on the arg-max, radians.
pub const DEFAULT_MAX_TOL: f64 = 1e-10;

/// Separable bound on the two-photon Fisher information.
pub const SQL_BOUND: f64 = 2.0;

/// Strictly beyond the separable bound, with a 1e-12 relative guard so that
/// rounding at the exact boundary cannot masquerade as advantage.
fn beyond_sql(f2: f64) -> bool {
    f2 > SQL_BOUND * (1.0 + 1e-12)
}

// ── pointwise Fisher information ────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

/// Fisher information of the distribution at one phase.
///
/// Terms with `p <= PROB_EPSILON` contribute zero when the slope also
/// vanishes (`p'^2 <= PROB_EPSILON`); a vanishing probability with a live
/// slope makes the point singular and is reported as an error so maximization
/// can exclude it.
pub fn fisher_information(
    dist: &OutcomeDistribution,
    phi: f64,
    mode: DerivativeMode,
) -> Result<f64> {
    if !phi.is_finite() {
        return Err(Error::domain(format!("phase must be finite, got {phi}")));
    }
    let mut total = 0.0;
    let mut live = false;
    for outcome in dist.outcomes() {
        let law = &outcome.law;
        let p = law.prob(phi);
        let dp = match mode {
            DerivativeMode::Analytic => law.derivative(phi),
            DerivativeMode::FiniteDifference => {
                (law.eval(phi + FD_STEP) - law.eval(phi - FD_STEP)) / (2.0 * FD_STEP)
            }
        };
        if p > PROB_EPSILON {
            live = true;
            total += dp * dp / p;
        } else if dp * dp > PROB_EPSILON {
            return Err(Error::SingularPoint {
                phi,
                eps: PROB_EPSILON,
            });
        }
    }
    if !live {
        return Err(Error::AllOutcomesZero { phi });
    }
    Ok(total)
}

// ── curves ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    PerPhoton,
}

/// Fisher information evaluated over a phase grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherCurve {
    pub phi_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub n_photons: u32,
}

/// Evaluates the Fisher information pointwise over `grid`.
pub fn fisher_curve(
    dist: &OutcomeDistribution,
    grid: &[f64],
    normalization: Normalization,
) -> Result<FisherCurve> {
    if grid.is_empty() {
        return Err(Error::domain("phase grid must be nonempty"));
    }
    if grid.windows(2).any(|w| w[0].is_nan() || w[1].is_nan() || w[1] <= w[0]) {
        return Err(Error::domain("phase grid must be strictly increasing"));
    }
    let scale = match normalization {
        Normalization::Raw => 1.0,
        Normalization::PerPhoton => 1.0 / dist.n_photons() as f64,
    };
    let mut values = Vec::with_capacity(grid.len());
    for &phi in grid {
        values.push(fisher_information(dist, phi, DerivativeMode::Analytic)? * scale);
    }
    Ok(FisherCurve {
        phi_grid: grid.to_vec(),
        values,
        normalization,
        n_photons: dist.n_photons(),
    })
}

// ── global maximum ──────────────────────────────────────────────────────────

/// Result of [`max_fisher`]: the arg-max, the maximum, and any phases that
/// had to be excluded as singular along the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherMax {
    pub phi: f64,
    pub value: f64,
    pub warnings: Vec<String>,
}

/// Global maximum of the Fisher information over one period.
///
/// A coarse scan at [`COARSE_POINTS`] per period seeds golden-section
/// refinement of the top local maxima down to an arg-max interval below
/// `tol`. The returned value is never below any coarse-grid sample.
pub fn max_fisher(dist: &OutcomeDistribution, tol: f64) -> Result<FisherMax> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::domain(format!(
            "refinement tolerance must be positive, got {tol}"
        )));
    }
    let period = dist.domain_period();
    let n = COARSE_POINTS;
    let step = period / n as f64;
    let mut excluded = 0usize;
    let mut first_excluded = f64::NAN;
    let mut samples: Vec<Option<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let phi = i as f64 * step;
        match fisher_information(dist, phi, DerivativeMode::Analytic) {
            Ok(v) if v.is_finite() => samples.push(Some(v)),
            Ok(_) => return Err(Error::NonFinite { phi }),
            Err(Error::SingularPoint { .. }) | Err(Error::AllOutcomesZero { .. }) => {
                if excluded == 0 {
                    first_excluded = phi;
                }
                excluded += 1;
                samples.push(None);
            }
            Err(e) => return Err(e),
        }
    }

    let value_at = |i: usize| samples[i].unwrap_or(f64::NEG_INFINITY);
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for (i, sample) in samples.iter().enumerate() {
        if let Some(v) = sample {
            if *v > best.1 {
                best = (i as f64 * step, *v);
            }
        }
    }
    if !best.1.is_finite() {
        return Err(Error::consistency(
            "no usable phase points for maximization",
        ));
    }

    // Refine every coarse local maximum that comes close to the leader; the
    // curves here have at most a handful per period.
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = value_at(i);
            v.is_finite()
                && v >= value_at((i + n - 1) % n)
                && v >= value_at((i + 1) % n)
                && v >= best.1 - 0.5 * best.1.abs().max(1e-6)
        })
        .collect();
    candidates.sort_by(|a, b| value_at(*b).partial_cmp(&value_at(*a)).unwrap());
    candidates.truncate(8);

    let mut eval = |phi: f64| -> f64 {
        match fisher_information(dist, phi, DerivativeMode::Analytic) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };
    for &i in &candidates {
        let center = i as f64 * step;
        let (phi, value) = golden_max(&mut eval, center - step, center + step, tol);
        if value > best.1 {
            best = (phi.rem_euclid(period), value);
        }
    }

    let mut warnings = Vec::new();
    if excluded > 0 {
        warnings.push(format!(
            "{excluded} phase point(s) excluded as singular during maximization \
             (first at phi = {first_excluded:.6})"
        ));
    }
    Ok(FisherMax {
        phi: best.0,
        value: best.1,
        warnings,
    })
}

/// Golden-section maximization on [a, b], tracking the best point ever
/// evaluated so a non-unimodal bracket can only improve the answer.
fn golden_max(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut best = (a, f(a));
    let fb = f(b);
    if fb > best.1 {
        best = (b, fb);
    }
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    if f1 > best.1 {
        best = (x1, f1);
    }
    if f2 > best.1 {
        best = (x2, f2);
    }
    let mut iterations = 0;
    while b - a > tol && iterations < 200 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
            if f2 > best.1 {
                best = (x2, f2);
            }
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
            if f1 > best.1 {
                best = (x1, f1);
            }
        }
        iterations += 1;
    }
    best
}

// ── closed forms ────────────────────────────────────────────────────────────

/// Fixed-phase approximation to the two-photon maximum:
/// `V2^2 * (e1*e2 + e3*e4 + e2*e3 + e1*e4) = V2^2 * (e1+e3)(e2+e4)`,
/// the value of the Fisher information at `phi = pi/4`.
pub fn closed_form_f2_max(budget: &LossBudget, v2: &Visibility) -> Result<f64> {
    if v2.order() != 2 {
        return Err(Error::domain(format!(
            "two-photon closed form needs an order-2 visibility, got order {}",
            v2.order()
        )));
    }
    let [e1, e2, e3, e4] = budget.eta();
    Ok(v2.value().powi(2) * (e1 * e2 + e3 * e4 + e2 * e3 + e1 * e4))
}

/// Fixed-phase approximation to the single-photon maximum:
/// `V1^2 / 4 * (e1 + e2 + e3 + e4)`, the value at `phi = pi/2`.
pub fn closed_form_f1_max(budget: &LossBudget, v1: &Visibility) -> Result<f64> {
    if v1.order() != 1 {
        return Err(Error::domain(format!(
            "single-photon closed form needs an order-1 visibility, got order {}",
            v1.order()
        )));
    }
    Ok(v1.value().powi(2) / 4.0 * budget.sum_eta())
}

/// The advantage ratio `R = f2_max / (2 * f1_max)`.
pub fn advantage_ratio(f2_max: f64, f1_max: f64) -> Result<f64> {
    if f1_max.is_nan() || f1_max <= 0.0 {
        return Err(Error::domain(format!(
            "single-photon maximum must be positive, got {f1_max}"
        )));
    }
    Ok(0.5 * f2_max / f1_max)
}

// ── advantage reports ───────────────────────────────────────────────────────

/// The two published groupings of the per-line transmissions in the
/// closed-form ratio. They disagree in general, so reports always carry both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    Eq4MainText,
    AppendixB,
}

fn pairing_product(eta: [f64; 4], pairing: Pairing) -> f64 {
    let [e1, e2, e3, e4] = eta;
    match pairing {
        Pairing::Eq4MainText => (e1 + e4) * (e2 + e3),
        Pairing::AppendixB => (e1 + e3) * (e2 + e4),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Numeric,
    ClosedForm,
}

/// A maximum together with its arg-max phase and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub value: f64,
    pub phi: f64,
    pub method: Method,
}

/// Closed-form ratio under each pairing convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormRatios {
    pub eq4: f64,
    pub appendix_b: f64,
}

/// Final product of an advantage analysis.
///
/// `ratio_R` always equals `f2_max.value / (2 * f1_max.value)`; the closed
/// forms under both pairing conventions ride along for comparison. `sub_sql`
/// flags a two-photon maximum beyond the separable bound of 2; `advantage`
/// flags `R > 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub f1_max: Extremum,
    pub f2_max: Extremum,
    #[serde(rename = "ratio_R")]
    pub ratio_r: f64,
    #[serde(rename = "ratio_R_closed_form")]
    pub ratio_r_closed_form: ClosedFormRatios,
    pub pairing_convention: Pairing,
    pub sub_sql: bool,
    pub advantage: bool,
    pub warnings: Vec<String>,
}

impl AdvantageReport {
    fn assemble(
        f1_max: Extremum,
        f2_max: Extremum,
        closed: ClosedFormRatios,
        pairing: Pairing,
        warnings: Vec<String>,
    ) -> Result<Self> {
        let ratio_r = advantage_ratio(f2_max.value, f1_max.value)?;
        Ok(AdvantageReport {
            f1_max,
            f2_max,
            ratio_r,
            ratio_r_closed_form: closed,
            pairing_convention: pairing,
            sub_sql: beyond_sql(f2_max.value),
            advantage: ratio_r > 1.0,
            warnings,
        })
    }

    /// Checks the defining identity `ratio_R = f2_max / (2 * f1_max)`.
    pub fn ratio_is_consistent(&self) -> bool {
        let recomputed = 0.5 * self.f2_max.value / self.f1_max.value;
        (self.ratio_r - recomputed).abs() <= 1e-12 * self.ratio_r.abs().max(1.0)
    }
}

fn closed_ratios(budget: &LossBudget, v1: &Visibility, v2: &Visibility) -> Result<ClosedFormRatios> {
    let f1 = closed_form_f1_max(budget, v1)?;
    let ratio_for = |pairing| {
        let f2 = v2.value().powi(2) * pairing_product(budget.eta(), pairing);
        advantage_ratio(f2, f1)
    };
    Ok(ClosedFormRatios {
        eq4: ratio_for(Pairing::Eq4MainText)?,
        appendix_b: ratio_for(Pairing::AppendixB)?,
    })
}

fn pairing_warning(closed: &ClosedFormRatios) -> Option<String> {
    let diff = (closed.eq4 - closed.appendix_b).abs();
    (diff > 1e-6).then(|| {
        format!(
            "pairing conventions disagree: eq4 = {:.9}, appendix_b = {:.9} (difference {:.3e})",
            closed.eq4, closed.appendix_b, diff
        )
    })
}

/// Closed-form advantage report under the chosen pairing convention.
///
/// For a symmetric budget (all lines equal, unit visibilities) both pairings
/// coincide and the ratio reduces to `2 * eta`.
pub fn advantage_closed_form(
    budget: &LossBudget,
    v1: &Visibility,
    v2: &Visibility,
    pairing: Pairing,
) -> Result<AdvantageReport> {
    let f1 = closed_form_f1_max(budget, v1)?;
    if v2.order() != 2 {
        return Err(Error::domain(format!(
            "two-photon closed form needs an order-2 visibility, got order {}",
            v2.order()
        )));
    }
    let f2 = v2.value().powi(2) * pairing_product(budget.eta(), pairing);
    let closed = closed_ratios(budget, v1, v2)?;
    let warnings = pairing_warning(&closed).into_iter().collect();
    AdvantageReport::assemble(
        Extremum {
            value: f1,
            phi: PI / 2.0,
            method: Method::ClosedForm,
        },
        Extremum {
            value: f2,
            phi: PI / 4.0,
            method: Method::ClosedForm,
        },
        closed,
        pairing,
        warnings,
    )
}

/// Numeric advantage report: true maxima of both Fisher-information curves.
///
/// The closed-form ratios ride along; when the numeric ratio departs from the
/// chosen closed form by more than 0.5% a discrepancy warning is emitted,
/// because the fixed-phase approximations underestimate asymmetric-loss
/// maxima.
pub fn advantage_numeric(
    budget: &LossBudget,
    v1: &Visibility,
    v2: &Visibility,
    pairing: Pairing,
    tol: f64,
    include_no_click: bool,
) -> Result<AdvantageReport> {
    let two_photon = coincidence_distribution(budget, v2)?;
    let single = single_photon_distribution(budget, v1, include_no_click)?;
    let f2 = max_fisher(&two_photon, tol)?;
    let f1 = max_fisher(&single, tol)?;
    let closed = closed_ratios(budget, v1, v2)?;

    let mut warnings: Vec<String> = f2
        .warnings
        .iter()
        .chain(f1.warnings.iter())
        .cloned()
        .collect();
    if let Some(w) = pairing_warning(&closed) {
        warnings.push(w);
    }
    let ratio = advantage_ratio(f2.value, f1.value)?;
    let closed_primary = match pairing {
        Pairing::Eq4MainText => closed.eq4,
        Pairing::AppendixB => closed.appendix_b,
    };
    if (ratio - closed_primary).abs() > 0.005 * closed_primary.abs() {
        warnings.push(format!(
            "numeric maxima disagree with the closed-form approximation: numeric R = {:.6} \
             vs closed-form R = {:.6} (eq4 {:.6}, appendix_b {:.6}); the closed forms evaluate \
             the Fisher information at a fixed phase and underestimate asymmetric-loss maxima",
            ratio, closed_primary, closed.eq4, closed.appendix_b
        ));
    }

    AdvantageReport::assemble(
        Extremum {
            value: f1.value,
            phi: f1.phi,
            method: Method::Numeric,
        },
        Extremum {
            value: f2.value,
            phi: f2.phi,
            method: Method::Numeric,
        },
        closed,
        pairing,
        warnings,
    )
}

/// Separable-bound check: returns `(4 * eta^2 * V^2, beyond_bound)` where the
/// bound for a two-photon probe is 2.
pub fn sub_sql_check(eta: f64, v: f64) -> Result<(f64, bool)> {
    if !eta.is_finite() || eta <= 0.0 || eta > 1.0 {
        return Err(Error::domain(format!(
            "efficiency must lie in (0, 1], got {eta}"
        )));
    }
    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
        return Err(Error::domain(format!(
            "visibility must lie in [0, 1], got {v}"
        )));
    }
    let f2 = 4.0 * eta * eta * v * v;
    Ok((f2, beyond_sql(f2)))
}

// ── scenarios ───────────────────────────────────────────────────────────────

/// Loss-recovery upgrades to an existing budget. Both set the visibilities to
/// 1: removing relative arm loss restores perfect fringe contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Balance the arms; keep the per-line transmissions.
    NoRelativeLoss,
    /// Additionally recover the stated amount of per-line loss (dB, e.g. by
    /// replacing lossy routing with number-resolving detection).
    Pnrd { recovered_db: [f64; 4] },
}

/// Advantage report for an upgraded system. `ratio_R` is numeric; the closed
/// forms ride along as usual.
pub fn scenario_report(
    budget: &LossBudget,
    scenario: Scenario,
    pairing: Pairing,
    tol: f64,
) -> Result<AdvantageReport> {
    let upgraded = match scenario {
        Scenario::NoRelativeLoss => budget.scaled(1.0, BudgetSource::Scenario)?,
        Scenario::Pnrd { recovered_db } => {
            let mut factors = [0.0; 4];
            for (f, db) in factors.iter_mut().zip(recovered_db.iter()) {
                if !db.is_finite() || *db < 0.0 {
                    return Err(Error::domain(format!(
                        "recovered loss must be a finite dB value >= 0, got {db}"
                    )));
                }
                *f = 10f64.powf(db / 10.0);
            }
            budget.scaled_per_line(factors, BudgetSource::Scenario)?
        }
    };
    let v1 = Visibility::new(1.0, 1)?;
    let v2 = Visibility::new(1.0, 2)?;
    advantage_numeric(&upgraded, &v1, &v2, pairing, tol, false)
}
