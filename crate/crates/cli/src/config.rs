//! TOML pipeline configuration shared by every subcommand.
//!
//! Every section has defaults, so a minimal config only names the pieces it
//! cares about. Unknown keys are rejected to catch typos before any
//! computation runs.

use noonfi::fisher::Normalization;
use noonfi::{FitMode, Pairing};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::PathBuf;

/// Full pipeline configuration. Missing sections fall back to their defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub calibration: CalibrationSection,
    pub probe: ProbeSection,
    pub scan: ScanSection,
    pub fit: FitSection,
    pub fisher: FisherSection,
    pub scenario: ScenarioSection,
    pub output: OutputSection,
}

// ── calibration ─────────────────────────────────────────────────────────────

/// Where the loss budget comes from. Inline transmissions win over the CSV;
/// with neither, commands fall back to a budget written by a previous
/// `calibrate` run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    /// Calibration CSV with the header
    /// `line_id,reference_power_w,measured_power_w,attenuator_db,counts_per_s,timestamp`.
    pub file: Option<PathBuf>,
    /// Inline per-line transmissions `eta_1..eta_4`.
    pub eta: Option<[f64; 4]>,
    /// Externally quoted per-line losses in dB, audited against the
    /// transmissions by `calibrate`.
    pub db: Option<[f64; 4]>,
}

// ── probe ───────────────────────────────────────────────────────────────────

/// Probe state description used to derive model visibilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    /// Photon number of the probe state.
    pub n: u32,
    /// Relative arm transmission feeding the visibility law.
    pub eta_t: f64,
    /// Explicit single-photon visibility; overrides `eta_t` and fit results.
    pub v1: Option<f64>,
    /// Explicit two-photon visibility; overrides `eta_t` and fit results.
    pub v2: Option<f64>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            n: 2,
            eta_t: 1.0,
            v1: None,
            v2: None,
        }
    }
}

// ── scan ────────────────────────────────────────────────────────────────────

/// Which fringe family a scan records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    TwoPhoton,
    SinglePhoton,
}

/// Linear voltage drive: `phi = rad_per_volt * u + offset_rad`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageSection {
    pub start: f64,
    pub stop: f64,
    pub rad_per_volt: f64,
    #[serde(default)]
    pub offset_rad: f64,
}

/// Synthetic fringe-scan parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub probe: ScanKind,
    /// Generated pair (or photon) rate in 1/s before losses.
    pub pair_rate: f64,
    /// Dwell time per scan point in seconds.
    pub dwell_s: f64,
    /// RNG seed; the `--seed` flag overrides this.
    pub seed: u64,
    /// Number of scan points, endpoints included.
    pub points: usize,
    pub phi_start: f64,
    pub phi_stop: f64,
    /// Uniform accidental rate in 1/s, spread over the outcome labels.
    pub accidental_rate: f64,
    /// Rate of uncorrelated multi-pair emissions in 1/s.
    pub multi_pair_rate: f64,
    /// When present the scan is driven in voltage instead of phase.
    pub voltage: Option<VoltageSection>,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            probe: ScanKind::TwoPhoton,
            pair_rate: 1e5,
            dwell_s: 1.0,
            seed: 42,
            points: 101,
            phi_start: 0.0,
            phi_stop: TAU,
            accidental_rate: 0.0,
            multi_pair_rate: 0.0,
            voltage: None,
        }
    }
}

// ── fit ─────────────────────────────────────────────────────────────────────

/// Fringe-fitting parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Fringe harmonic; inferred from the scan labels when omitted.
    pub m: Option<u32>,
    pub mode: FitMode,
    /// Iteration cap for the shared-parameter fit modes.
    pub max_iterations: usize,
    /// Half-width of the visibility interval in pooled standard deviations.
    pub k: f64,
    /// Scan CSV to fit; defaults to `scan.csv` in the output directory.
    pub scan_file: Option<PathBuf>,
    /// Grid size of the emitted information band.
    pub band_points: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            m: None,
            mode: FitMode::Independent,
            max_iterations: 50,
            k: 3.0,
            scan_file: None,
            band_points: 201,
        }
    }
}

// ── fisher ──────────────────────────────────────────────────────────────────

/// Fisher-information reporting parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FisherSection {
    /// Phase tolerance of the maximum search.
    pub tol: f64,
    /// Normalization of the emitted information band.
    pub normalization: Normalization,
    /// Closed-form pairing convention the numeric ratio is judged against.
    pub pairing: Pairing,
    /// Model the single-photon no-click outcome as a third channel.
    pub include_no_click: bool,
    /// Grid size of the emitted information curves.
    pub curve_points: usize,
}

impl Default for FisherSection {
    fn default() -> Self {
        FisherSection {
            tol: 1e-10,
            normalization: Normalization::PerPhoton,
            pairing: Pairing::AppendixB,
            include_no_click: false,
            curve_points: 201,
        }
    }
}

// ── scenario ────────────────────────────────────────────────────────────────

/// Recovered per-line loss in dB: one value for every line, or per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PnrdSpec {
    Uniform(f64),
    PerLine([f64; 4]),
}

impl PnrdSpec {
    pub fn per_line(&self) -> [f64; 4] {
        match *self {
            PnrdSpec::Uniform(db) => [db; 4],
            PnrdSpec::PerLine(db) => db,
        }
    }
}

/// Loss-recovery scenarios for the `scenario` subcommand. With neither flag
/// set the command reports the unmodified system.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Balance the arms (unit visibilities) while keeping per-line losses.
    pub no_relative_loss: bool,
    /// Additionally recover this much per-line loss.
    pub pnrd_recovered_db: Option<PnrdSpec>,
}

// ── output ──────────────────────────────────────────────────────────────────

/// Output location. `--out` wins over this; `$NOONFI_OUT` and `./out` are the
/// fallbacks.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_parses_with_defaults() {
        let config: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(config.scan.points, 101);
        assert_eq!(config.scan.seed, 42);
        assert_eq!(config.fit.band_points, 201);
        assert!(config.calibration.eta.is_none());
        assert_eq!(config.fisher.pairing, Pairing::AppendixB);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<PipelineConfig>("[scan]\npoints = 5\ntypo = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn pnrd_accepts_uniform_and_per_line() {
        let uniform: PipelineConfig =
            toml::from_str("[scenario]\npnrd_recovered_db = 0.4\n").unwrap();
        assert_eq!(
            uniform.scenario.pnrd_recovered_db.unwrap().per_line(),
            [0.4; 4]
        );
        let per_line: PipelineConfig =
            toml::from_str("[scenario]\npnrd_recovered_db = [0.1, 0.2, 0.3, 0.4]\n").unwrap();
        assert_eq!(
            per_line.scenario.pnrd_recovered_db.unwrap().per_line(),
            [0.1, 0.2, 0.3, 0.4]
        );
    }

    #[test]
    fn voltage_section_round_trips() {
        let text = "[scan]\npoints = 11\n[scan.voltage]\nstart = 0.0\nstop = 5.0\nrad_per_volt = 1.2\n";
        let config: PipelineConfig = toml::from_str(text).unwrap();
        let voltage = config.scan.voltage.unwrap();
        assert_eq!(voltage.rad_per_volt, 1.2);
        assert_eq!(voltage.offset_rad, 0.0);
    }
}
