//! Outcome-probability models for the fibered two-photon interferometer.
//!
//! Every configuration reduces to the same primitive: a labeled set of
//! sinusoid-affine probability laws `p(phi) = offset + amplitude*cos(m*phi)`
//! sharing one harmonic `m`, plus a complement law absorbing undetected
//! events. Keeping the laws in this closed form gives exact analytic
//! derivatives and exact range bounds, which the Fisher engine and the
//! simulator both rely on.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::calibration::LossBudget;
use crate::error::{Error, Result};

/// Slack allowed when clamping evaluated probabilities to [0, 1]. Anything
/// beyond this is an internal consistency failure, not rounding.
pub const PROB_TOL: f64 = 1e-12;

/// Degenerate wavelength of the photon-pair source, nm.
pub const DEFAULT_DEGENERATE_WAVELENGTH_NM: f64 = 1560.61;

// ── sinusoid-affine laws ────────────────────────────────────────────────────

/// `offset + amplitude * cos(harmonic * phi)` with its analytic derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidLaw {
    pub offset: f64,
    pub amplitude: f64,
    pub harmonic: u32,
}

impl SinusoidLaw {
    pub fn new(offset: f64, amplitude: f64, harmonic: u32) -> Self {
        SinusoidLaw {
            offset,
            amplitude,
            harmonic,
        }
    }

    /// Raw evaluation, no clamping.
    pub fn eval(&self, phi: f64) -> f64 {
        self.offset + self.amplitude * (self.harmonic as f64 * phi).cos()
    }

    /// Evaluation clamped to [0, 1]. Range validation at assembly time
    /// guarantees the clamp only ever absorbs [`PROB_TOL`]-scale rounding.
    pub fn prob(&self, phi: f64) -> f64 {
        self.eval(phi).clamp(0.0, 1.0)
    }

    /// Analytic d/dphi.
    pub fn derivative(&self, phi: f64) -> f64 {
        let m = self.harmonic as f64;
        -m * self.amplitude * (m * phi).sin()
    }

    pub fn min_value(&self) -> f64 {
        self.offset - self.amplitude.abs()
    }

    pub fn max_value(&self) -> f64 {
        self.offset + self.amplitude.abs()
    }
}

/// One labeled detection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub label: String,
    pub law: SinusoidLaw,
}

impl Outcome {
    fn new(label: &str, law: SinusoidLaw) -> Self {
        Outcome {
            label: label.to_string(),
            law,
        }
    }
}

// ── outcome distributions ───────────────────────────────────────────────────

/// A complete set of outcome laws plus the complement law for events that
/// produce no qualifying detection. The complement is built so that the sum
/// over all laws is identically 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    outcomes: Vec<Outcome>,
    loss_complement: SinusoidLaw,
    domain_period: f64,
    n_photons: u32,
}

impl OutcomeDistribution {
    /// Builds the distribution, derives the complement, and validates that
    /// every law stays inside [0, 1] (positivity and the normalization bound
    /// follow from the exact min/max of a sinusoid-affine law).
    fn assemble(outcomes: Vec<Outcome>, n_photons: u32) -> Result<Self> {
        let Some(first) = outcomes.first() else {
            return Err(Error::consistency("distribution with no outcomes"));
        };
        let harmonic = first.law.harmonic;
        if harmonic == 0 {
            return Err(Error::consistency("harmonic must be at least 1"));
        }
        if outcomes.iter().any(|o| o.law.harmonic != harmonic) {
            return Err(Error::consistency(
                "all outcome laws must share one harmonic",
            ));
        }
        let offset_sum: f64 = outcomes.iter().map(|o| o.law.offset).sum();
        let amplitude_sum: f64 = outcomes.iter().map(|o| o.law.amplitude).sum();
        let loss_complement = SinusoidLaw::new(1.0 - offset_sum, -amplitude_sum, harmonic);

        for outcome in &outcomes {
            check_law_range(&outcome.law, &outcome.label)?;
        }
        check_law_range(&loss_complement, "loss complement")?;

        Ok(OutcomeDistribution {
            outcomes,
            loss_complement,
            domain_period: TAU / harmonic as f64,
            n_photons,
        })
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn loss_complement(&self) -> &SinusoidLaw {
        &self.loss_complement
    }

    /// Period of every law in the distribution, `2*pi / harmonic`.
    pub fn domain_period(&self) -> f64 {
        self.domain_period
    }

    pub fn harmonic(&self) -> u32 {
        self.outcomes[0].law.harmonic
    }

    pub fn n_photons(&self) -> u32 {
        self.n_photons
    }

    /// Labeled probabilities at one phase.
    pub fn probabilities(&self, phi: f64) -> Vec<(&str, f64)> {
        self.outcomes
            .iter()
            .map(|o| (o.label.as_str(), o.law.prob(phi)))
            .collect()
    }

    pub fn probability_of(&self, label: &str, phi: f64) -> Result<f64> {
        self.outcomes
            .iter()
            .find(|o| o.label == label)
            .map(|o| o.law.prob(phi))
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

fn check_law_range(law: &SinusoidLaw, label: &str) -> Result<()> {
    if law.min_value() < -PROB_TOL || law.max_value() > 1.0 + PROB_TOL {
        return Err(Error::consistency(format!(
            "law '{label}' leaves [0, 1]: range [{:.3e}, {:.3e}]",
            law.min_value(),
            law.max_value()
        )));
    }
    Ok(())
}

// ── visibility ──────────────────────────────────────────────────────────────

/// Fringe contrast together with the photon number it applies to, so that
/// a single-photon visibility cannot silently feed a two-photon model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    value: f64,
    order: u32,
}

impl Visibility {
    pub fn new(value: f64, order: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) || !value.is_finite() {
            return Err(Error::domain(format!(
                "visibility must lie in [0, 1], got {value}"
            )));
        }
        if order == 0 {
            return Err(Error::domain("visibility order must be at least 1"));
        }
        Ok(Visibility { value, order })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn order(&self) -> u32 {
        self.order
    }
}

/// Visibility achievable with relative arm loss `eta_t` at photon number `n`:
/// `V = 2 * sqrt(eta_t)^n / (1 + eta_t^n)`, strictly decreasing in `n` for
/// `eta_t < 1` and identically 1 for a balanced interferometer.
pub fn visibility_from_relative_loss(eta_t: f64, n: u32) -> Result<Visibility> {
    if !eta_t.is_finite() || eta_t <= 0.0 || eta_t > 1.0 {
        return Err(Error::domain(format!(
            "relative transmission must lie in (0, 1], got {eta_t}"
        )));
    }
    if n == 0 {
        return Err(Error::domain("photon number must be at least 1"));
    }
    let root = eta_t.sqrt().powi(n as i32);
    let value = 2.0 * root / (1.0 + eta_t.powi(n as i32));
    Visibility::new(value.min(1.0), n)
}

// ── probes ──────────────────────────────────────────────────────────────────

/// Whether laws are parametrized by the per-photon phase `phi` or by the
/// accumulated pair phase `Phi = N * phi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseConvention {
    PerPhoton,
    TotalPhase,
}

/// An N-photon path-entangled probe inside the interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoonProbe {
    n_photons: u32,
    arm_balance: f64,
    phase_convention: PhaseConvention,
}

impl NoonProbe {
    pub fn new(n_photons: u32, arm_balance: f64) -> Result<Self> {
        if n_photons == 0 {
            return Err(Error::domain("photon number must be at least 1"));
        }
        if !arm_balance.is_finite() || arm_balance <= 0.0 || arm_balance > 1.0 {
            return Err(Error::domain(format!(
                "arm balance must lie in (0, 1], got {arm_balance}"
            )));
        }
        Ok(NoonProbe {
            n_photons,
            arm_balance,
            phase_convention: PhaseConvention::PerPhoton,
        })
    }

    pub fn with_convention(mut self, convention: PhaseConvention) -> Self {
        self.phase_convention = convention;
        self
    }

    pub fn n_photons(&self) -> u32 {
        self.n_photons
    }

    pub fn arm_balance(&self) -> f64 {
        self.arm_balance
    }

    pub fn phase_convention(&self) -> PhaseConvention {
        self.phase_convention
    }
}

/// Detection probabilities at the interferometer output for an N-photon
/// probe with relative arm loss:
/// `P± = (1 + eta_t^N ± 2*sqrt(eta_t)^N * cos(N*phi)) / 4`.
///
/// Under the per-photon convention the laws oscillate at harmonic N (period
/// `2*pi/N`); under the total-phase convention they oscillate at harmonic 1
/// in the accumulated phase. The complement `1 - (1 + eta_t^N)/2` is
/// phase-independent.
pub fn noon_output_distribution(probe: &NoonProbe) -> Result<OutcomeDistribution> {
    let n = probe.n_photons;
    let eta = probe.arm_balance;
    let offset = (1.0 + eta.powi(n as i32)) / 4.0;
    let amplitude = eta.sqrt().powi(n as i32) / 2.0;
    let harmonic = match probe.phase_convention {
        PhaseConvention::PerPhoton => n,
        PhaseConvention::TotalPhase => 1,
    };
    OutcomeDistribution::assemble(
        vec![
            Outcome::new("P+", SinusoidLaw::new(offset, amplitude, harmonic)),
            Outcome::new("P-", SinusoidLaw::new(offset, -amplitude, harmonic)),
        ],
        n,
    )
}

// ── coincidence and single-photon models ────────────────────────────────────

/// Four-fold coincidence model: same-port pairs (detectors 1&2 or 3&4) carry
/// `+cos(2*phi)`, cross-port pairs carry `-cos(2*phi)`, each weighted by its
/// product of line transmissions over 4. The complement absorbs pairs that
/// were not both detected and is phase-dependent whenever the same-port and
/// cross-port weights differ.
pub fn coincidence_distribution(
    budget: &LossBudget,
    v2: &Visibility,
) -> Result<OutcomeDistribution> {
    if v2.order() != 2 {
        return Err(Error::domain(format!(
            "two-photon model needs an order-2 visibility, got order {}",
            v2.order()
        )));
    }
    let [e1, e2, e3, e4] = budget.eta();
    let v = v2.value();
    let law = |weight: f64, sign: f64| SinusoidLaw::new(weight, sign * weight * v, 2);
    OutcomeDistribution::assemble(
        vec![
            Outcome::new("P12", law(e1 * e2 / 4.0, 1.0)),
            Outcome::new("P34", law(e3 * e4 / 4.0, 1.0)),
            Outcome::new("P23", law(e2 * e3 / 4.0, -1.0)),
            Outcome::new("P14", law(e1 * e4 / 4.0, -1.0)),
        ],
        2,
    )
}

/// Single-photon fringe model with port-lumped transmissions:
/// `P10 = (eta_1+eta_2)/4 * (1 + V*cos(phi))`,
/// `P01 = (eta_3+eta_4)/4 * (1 - V*cos(phi))`.
///
/// The no-click probability is phase-dependent whenever the two port sums
/// differ. By default it stays in the complement, which Fisher-information
/// sums ignore; `include_no_click` promotes it to a third outcome so its
/// information content can be audited.
pub fn single_photon_distribution(
    budget: &LossBudget,
    v1: &Visibility,
    include_no_click: bool,
) -> Result<OutcomeDistribution> {
    if v1.order() != 1 {
        return Err(Error::domain(format!(
            "single-photon model needs an order-1 visibility, got order {}",
            v1.order()
        )));
    }
    let [e1, e2, e3, e4] = budget.eta();
    let v = v1.value();
    let ta = (e1 + e2) / 4.0;
    let tb = (e3 + e4) / 4.0;
    let mut outcomes = vec![
        Outcome::new("P10", SinusoidLaw::new(ta, ta * v, 1)),
        Outcome::new("P01", SinusoidLaw::new(tb, -tb * v, 1)),
    ];
    if include_no_click {
        outcomes.push(Outcome::new(
            "no_click",
            SinusoidLaw::new(1.0 - ta - tb, -(ta * v - tb * v), 1),
        ));
    }
    OutcomeDistribution::assemble(outcomes, 1)
}

// ── distinguishable-pair (folded, unbalanced) model ─────────────────────────

/// How the non-interfering half of a distinguishable-pair measurement is
/// treated: discarded (`PostSelected`, halving effective efficiency) or kept
/// (`Full`, halving effective visibility).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FransonMode {
    PostSelected,
    Full,
}

/// Photon-number-resolving outcomes for a distinguishable pair in an
/// unbalanced interferometer:
/// `P(2,0) = P(0,2) = eta_eff^2/4 * (1 + V_eff*cos(2*phi))`,
/// `P(1,1) = eta_eff^2/2 * (1 - V_eff*cos(2*phi))`,
/// with `(eta_eff, V_eff) = (eta/2, V)` post-selected and `(eta, V/2)` full.
pub fn distinguishable_franson_distribution(
    eta: f64,
    v: f64,
    mode: FransonMode,
) -> Result<OutcomeDistribution> {
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
    let (eta_eff, v_eff) = match mode {
        FransonMode::PostSelected => (eta / 2.0, v),
        FransonMode::Full => (eta, v / 2.0),
    };
    let e2 = eta_eff * eta_eff;
    OutcomeDistribution::assemble(
        vec![
            Outcome::new("P20", SinusoidLaw::new(e2 / 4.0, e2 / 4.0 * v_eff, 2)),
            Outcome::new("P02", SinusoidLaw::new(e2 / 4.0, e2 / 4.0 * v_eff, 2)),
            Outcome::new("P11", SinusoidLaw::new(e2 / 2.0, -e2 / 2.0 * v_eff, 2)),
        ],
        2,
    )
}

// ── pair specification and transcription ────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Polarization,
    Path,
}

/// A maximally entangled photon pair before it enters the interferometer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntangledPairSpec {
    pub basis: Basis,
    pub pair_phase: f64,
    pub degenerate_wavelength_nm: f64,
}

impl EntangledPairSpec {
    pub fn polarization(pair_phase: f64) -> Self {
        EntangledPairSpec {
            basis: Basis::Polarization,
            pair_phase,
            degenerate_wavelength_nm: DEFAULT_DEGENERATE_WAVELENGTH_NM,
        }
    }

    pub fn path(pair_phase: f64) -> Self {
        EntangledPairSpec {
            basis: Basis::Path,
            pair_phase,
            degenerate_wavelength_nm: DEFAULT_DEGENERATE_WAVELENGTH_NM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.pair_phase.is_finite() {
            return Err(Error::domain("pair phase must be finite"));
        }
        if self.degenerate_wavelength_nm.is_nan() || self.degenerate_wavelength_nm <= 0.0 {
            return Err(Error::domain(format!(
                "wavelength must be positive, got {}",
                self.degenerate_wavelength_nm
            )));
        }
        Ok(())
    }
}

/// Result of mapping a polarization-entangled pair onto the path basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub probe: NoonProbe,
    /// The pair phase is the sum of the two photons' relative phases, so the
    /// per-photon phase is half of it.
    pub per_photon_phase: f64,
    pub warning: Option<String>,
}

/// Maps a polarization-entangled pair onto a two-photon path probe. The pair
/// phase accumulates over both photons, so the probe uses the total-phase
/// convention. Feeding an already path-basis spec is harmless and reported
/// via a warning.
pub fn transcribe_polarization_to_path(
    spec: &EntangledPairSpec,
    eta_t: f64,
) -> Result<Transcription> {
    spec.validate()?;
    let probe = NoonProbe::new(2, eta_t)?.with_convention(PhaseConvention::TotalPhase);
    let warning = match spec.basis {
        Basis::Polarization => None,
        Basis::Path => Some("spec is already in the path basis; transcription is a no-op".into()),
    };
    Ok(Transcription {
        probe,
        per_photon_phase: spec.pair_phase / 2.0,
        warning,
    })
}
