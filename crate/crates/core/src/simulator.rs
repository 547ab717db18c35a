//! Synthetic fringe scans: WDM routing, Poisson counting, and multi-pair
//! diagnostics.
//!
//! A scan walks a control grid (phases directly, or voltages through a
//! linear map), evaluates the configured outcome distribution at each point,
//! and draws independent Poisson counts per outcome on top of a flat
//! accidental floor. Every point gets its own RNG substream derived from
//! `(seed, point index)`, so generation is reproducible and order-free.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::calibration::LossBudget;
use crate::error::{Error, Result};
use crate::model::{
    coincidence_distribution, single_photon_distribution, visibility_from_relative_loss,
    OutcomeDistribution, Visibility,
};
use crate::util::{fmt_sig12, sha256_hex};

/// Largest expected count the sampler will accept.
pub const COUNT_GUARD: f64 = (1u64 << 31) as f64;

/// RNG stream offset reserved for the multi-pair diagnostic, clear of any
/// realistic number of scan points.
const DIAGNOSTIC_STREAM: u64 = 1 << 32;

// ── WDM routing ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    A,
    B,
}

/// Wavelength-division demultiplexing plan: which ITU channel lands on which
/// detector behind each interferometer output port.
///
/// Detectors D1 and D3 share the signal channel, D2 and D4 the idler
/// channel, so cross-channel pairs always split deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WdmPlan {
    pub pump_channel: u16,
    pub signal_channel: u16,
    pub idler_channel: u16,
    pub channel_width_ghz: f64,
    pub degenerate_wavelength_nm: f64,
}

impl Default for WdmPlan {
    fn default() -> Self {
        WdmPlan {
            pump_channel: 21,
            signal_channel: 20,
            idler_channel: 22,
            channel_width_ghz: 100.0,
            degenerate_wavelength_nm: crate::model::DEFAULT_DEGENERATE_WAVELENGTH_NM,
        }
    }
}

impl WdmPlan {
    pub fn validate(&self) -> Result<()> {
        if self.signal_channel == self.idler_channel {
            return Err(Error::domain(
                "signal and idler must occupy disjoint ITU channels",
            ));
        }
        if self.pump_channel == self.signal_channel || self.pump_channel == self.idler_channel {
            return Err(Error::domain(
                "degenerate pump channel must differ from signal and idler channels",
            ));
        }
        if self.channel_width_ghz.is_nan() || self.channel_width_ghz <= 0.0 {
            return Err(Error::domain("channel width must be positive"));
        }
        Ok(())
    }

    /// Detector index (1..=4) for a photon in `channel` leaving `port`.
    pub fn detector(&self, channel: u16, port: Port) -> Result<u8> {
        match (channel, port) {
            (c, Port::A) if c == self.signal_channel => Ok(1),
            (c, Port::A) if c == self.idler_channel => Ok(2),
            (c, Port::B) if c == self.signal_channel => Ok(3),
            (c, Port::B) if c == self.idler_channel => Ok(4),
            (c, _) => Err(Error::domain(format!(
                "ITU channel {c} is not routed by this plan (signal {}, idler {})",
                self.signal_channel, self.idler_channel
            ))),
        }
    }
}

/// Routes a frequency-correlated pair to its coincidence label `P{i}{j}`
/// with `i < j`.
///
/// # Errors
/// Two photons in the same channel violate the energy-conservation model
/// behind the demultiplexer and cannot be routed.
pub fn route_by_wdm(
    plan: &WdmPlan,
    photon_channels: (u16, u16),
    exit_ports: (Port, Port),
) -> Result<String> {
    plan.validate()?;
    if photon_channels.0 == photon_channels.1 {
        return Err(Error::consistency(format!(
            "both photons in ITU channel {}: violates energy conservation model",
            photon_channels.0
        )));
    }
    let first = plan.detector(photon_channels.0, exit_ports.0)?;
    let second = plan.detector(photon_channels.1, exit_ports.1)?;
    let (lo, hi) = (first.min(second), first.max(second));
    Ok(format!("P{lo}{hi}"))
}

// ── scan configuration ──────────────────────────────────────────────────────

/// Which probe a scan drives through the interferometer.
///
/// `eta_t` is the relative long/short arm transmission; it sets the fringe
/// visibility unless an explicit override is given in the config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScanProbe {
    TwoPhoton { eta_t: f64 },
    SinglePhoton { eta_t: f64 },
}

/// The control axis of a scan: phases directly, or phase-shifter voltages
/// mapped linearly as `phi = rad_per_volt * u + offset_rad`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ControlGrid {
    Phase {
        values: Vec<f64>,
    },
    Voltage {
        values: Vec<f64>,
        rad_per_volt: f64,
        offset_rad: f64,
    },
}

impl ControlGrid {
    pub fn len(&self) -> usize {
        match self {
            ControlGrid::Phase { values } | ControlGrid::Voltage { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn control_at(&self, i: usize) -> f64 {
        match self {
            ControlGrid::Phase { values } | ControlGrid::Voltage { values, .. } => values[i],
        }
    }

    fn phase_at(&self, i: usize) -> f64 {
        match self {
            ControlGrid::Phase { values } => values[i],
            ControlGrid::Voltage {
                values,
                rad_per_volt,
                offset_rad,
            } => phase_from_voltage(*rad_per_volt, *offset_rad, values[i]),
        }
    }
}

/// Linear phase-shifter map `phi = a * u + b`.
pub fn phase_from_voltage(a: f64, b: f64, u: f64) -> f64 {
    a * u + b
}

/// Everything needed to generate one scan deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub probe: ScanProbe,
    pub budget: LossBudget,
    /// Replaces the visibility implied by the probe's `eta_t` when set.
    pub visibility_override: Option<f64>,
    /// Generated pairs (or single photons) per second before losses.
    pub pair_rate: f64,
    pub dwell_s: f64,
    pub control: ControlGrid,
    pub rng_seed: u64,
    /// Flat accidental-coincidence rate, split uniformly across labels.
    #[serde(default)]
    pub accidental_rate: f64,
    /// True multi-pair contamination rate feeding the same-channel
    /// diagnostic; zero under the single-pair model.
    #[serde(default)]
    pub multi_pair_rate: f64,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.pair_rate.is_finite() || self.pair_rate <= 0.0 {
            return Err(Error::domain(format!(
                "pair rate must be positive and finite, got {}",
                self.pair_rate
            )));
        }
        if !self.dwell_s.is_finite() || self.dwell_s <= 0.0 {
            return Err(Error::domain(format!(
                "dwell time must be positive and finite, got {}",
                self.dwell_s
            )));
        }
        if self.control.is_empty() {
            return Err(Error::domain("control grid must be nonempty"));
        }
        for i in 0..self.control.len() {
            if !self.control.control_at(i).is_finite() || !self.control.phase_at(i).is_finite() {
                return Err(Error::domain(format!(
                    "control grid entry {i} is not finite"
                )));
            }
        }
        if self.accidental_rate < 0.0 || !self.accidental_rate.is_finite() {
            return Err(Error::domain(format!(
                "accidental rate must be >= 0, got {}",
                self.accidental_rate
            )));
        }
        if self.multi_pair_rate < 0.0 || !self.multi_pair_rate.is_finite() {
            return Err(Error::domain(format!(
                "multi-pair rate must be >= 0, got {}",
                self.multi_pair_rate
            )));
        }
        self.distribution().map(|_| ())
    }

    /// The outcome distribution this scan samples from.
    pub fn distribution(&self) -> Result<OutcomeDistribution> {
        match self.probe {
            ScanProbe::TwoPhoton { eta_t } => {
                let v = match self.visibility_override {
                    Some(v) => Visibility::new(v, 2)?,
                    None => visibility_from_relative_loss(eta_t, 2)?,
                };
                coincidence_distribution(&self.budget, &v)
            }
            ScanProbe::SinglePhoton { eta_t } => {
                let v = match self.visibility_override {
                    Some(v) => Visibility::new(v, 1)?,
                    None => visibility_from_relative_loss(eta_t, 1)?,
                };
                single_photon_distribution(&self.budget, &v, false)
            }
        }
    }

    /// Stable fingerprint of the full configuration.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

// ── scan data ───────────────────────────────────────────────────────────────

/// One grid point: the control value, the phase it maps to, and one count
/// per outcome label (in scan label order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub control: f64,
    pub phi: f64,
    pub counts: Vec<u64>,
    pub dwell_s: f64,
}

/// Provenance carried alongside generated scans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanMeta {
    pub seed: u64,
    pub config_digest: String,
}

/// A full fringe scan: shared label order plus one [`ScanPoint`] per grid
/// entry. `meta` is present on generated scans and absent on scans read back
/// from bare CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeScan {
    pub labels: Vec<String>,
    pub points: Vec<ScanPoint>,
    pub meta: Option<ScanMeta>,
}

impl FringeScan {
    /// Counts for one label across the scan, with the matching phases.
    pub fn curve(&self, label: &str) -> Result<Vec<(f64, u64)>> {
        let idx = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        Ok(self
            .points
            .iter()
            .map(|p| (p.phi, p.counts[idx]))
            .collect())
    }
}

fn draw_poisson(rng: &mut ChaCha8Rng, lambda: f64) -> Result<u64> {
    if lambda > COUNT_GUARD {
        return Err(Error::CountOverflow { lambda });
    }
    if lambda <= 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda)
        .map_err(|e| Error::consistency(format!("poisson(lambda = {lambda}): {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Generates a scan: independent Poisson counts around
/// `pair_rate * dwell * p_outcome(phi) + accidental_rate * dwell / n_labels`
/// at every grid point.
///
/// # Errors
/// Invalid configs fail validation; an expected count beyond `2^31` trips
/// the overflow guard.
pub fn simulate_fringe_scan(config: &ScanConfig) -> Result<FringeScan> {
    config.validate()?;
    let dist = config.distribution()?;
    let labels: Vec<String> = dist.outcomes().iter().map(|o| o.label.clone()).collect();
    let n_labels = labels.len() as f64;
    let floor = config.accidental_rate * config.dwell_s / n_labels;
    let scale = config.pair_rate * config.dwell_s;

    let mut points = Vec::with_capacity(config.control.len());
    for i in 0..config.control.len() {
        let phi = config.control.phase_at(i);
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(i as u64);
        let mut counts = Vec::with_capacity(labels.len());
        for outcome in dist.outcomes() {
            let lambda = scale * outcome.law.prob(phi) + floor;
            counts.push(draw_poisson(&mut rng, lambda)?);
        }
        points.push(ScanPoint {
            control: config.control.control_at(i),
            phi,
            counts,
            dwell_s: config.dwell_s,
        });
    }

    Ok(FringeScan {
        labels,
        points,
        meta: Some(ScanMeta {
            seed: config.rng_seed,
            config_digest: config.digest()?,
        }),
    })
}

// ── multi-pair diagnostic ───────────────────────────────────────────────────

/// Expected same-channel coincidences. Under the single-pair model the true
/// expectations are exactly zero; only the accidental floor remains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub expected_true_p13: f64,
    pub expected_true_p24: f64,
    pub accidental_floor_per_pair: f64,
}

/// Expectations for the same-channel pairs D1–D3 and D2–D4.
pub fn multi_pair_diagnostic(config: &ScanConfig) -> Result<Diagnostic> {
    config.validate()?;
    let contamination = config.multi_pair_rate * config.dwell_s;
    Ok(Diagnostic {
        expected_true_p13: contamination,
        expected_true_p24: contamination,
        accidental_floor_per_pair: config.accidental_rate * config.dwell_s / 4.0,
    })
}

/// Sampled same-channel counts with their significance against the
/// accidental-only hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSample {
    pub p13_counts: u64,
    pub p24_counts: u64,
    pub floor: f64,
    pub z_p13: f64,
    pub z_p24: f64,
}

/// Significance of an observed same-channel count against the accidental
/// floor alone.
pub fn diagnostic_zscore(observed: u64, floor: f64) -> f64 {
    (observed as f64 - floor) / floor.max(1.0).sqrt()
}

/// Draws one diagnostic observation on a dedicated RNG stream and scores it
/// against the accidental-only floor. A clean system stays within a few
/// sigma; injected multi-pair contamination stands out.
pub fn sample_diagnostic(config: &ScanConfig) -> Result<DiagnosticSample> {
    let expected = multi_pair_diagnostic(config)?;
    let floor = expected.accidental_floor_per_pair;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(DIAGNOSTIC_STREAM);
    let p13 = draw_poisson(&mut rng, expected.expected_true_p13 + floor)?;
    let p24 = draw_poisson(&mut rng, expected.expected_true_p24 + floor)?;
    Ok(DiagnosticSample {
        p13_counts: p13,
        p24_counts: p24,
        floor,
        z_p13: diagnostic_zscore(p13, floor),
        z_p24: diagnostic_zscore(p24, floor),
    })
}

// ── scan files ──────────────────────────────────────────────────────────────

const SCAN_HEADER: [&str; 5] = ["control", "phi_rad", "label", "counts", "dwell_s"];

/// Writes a scan as CSV, one row per point and label, floats rounded to 12
/// significant digits.
pub fn write_scan_csv<W: std::io::Write>(scan: &FringeScan, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SCAN_HEADER)
        .map_err(|e| Error::consistency(format!("csv write: {e}")))?;
    for point in &scan.points {
        for (label, count) in scan.labels.iter().zip(&point.counts) {
            wtr.write_record([
                fmt_sig12(point.control),
                fmt_sig12(point.phi),
                label.clone(),
                count.to_string(),
                fmt_sig12(point.dwell_s),
            ])
            .map_err(|e| Error::consistency(format!("csv write: {e}")))?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn scan_row_error(row: usize, msg: impl Into<String>) -> Error {
    Error::CsvSchema {
        row,
        msg: msg.into(),
    }
}

/// Reads a scan written by [`write_scan_csv`].
///
/// Rows are grouped into points by consecutive `(control, phi_rad, dwell_s)`
/// values; every point must list the same labels in the same order.
///
/// # Errors
/// Malformed rows are reported with their 1-based data row number.
pub fn read_scan_csv<R: std::io::Read>(reader: R) -> Result<FringeScan> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| scan_row_error(0, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != SCAN_HEADER {
        return Err(scan_row_error(
            0,
            format!(
                "expected header {:?}, got {:?}",
                SCAN_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut labels: Vec<String> = Vec::new();
    let mut points: Vec<ScanPoint> = Vec::new();
    let mut first_point_done = false;
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| scan_row_error(row_no, e.to_string()))?;
        if row.len() != 5 {
            return Err(scan_row_error(
                row_no,
                format!("expected 5 fields, got {}", row.len()),
            ));
        }
        let parse_f64 = |field: usize, name: &str| -> Result<f64> {
            row[field].trim().parse::<f64>().map_err(|e| {
                scan_row_error(row_no, format!("bad {name} value '{}': {e}", &row[field]))
            })
        };
        let control = parse_f64(0, "control")?;
        let phi = parse_f64(1, "phi_rad")?;
        let label = row[2].trim().to_string();
        let counts: u64 = row[3].trim().parse().map_err(|e| {
            scan_row_error(row_no, format!("bad counts value '{}': {e}", &row[3]))
        })?;
        let dwell_s = parse_f64(4, "dwell_s")?;
        if label.is_empty() {
            return Err(scan_row_error(row_no, "empty label"));
        }

        let starts_new_point = match points.last() {
            None => true,
            Some(p) => {
                p.control != control || p.phi != phi || p.dwell_s != dwell_s || {
                    // A repeated label on identical coordinates also starts a
                    // new point (constant-control scans).
                    first_point_done && p.counts.len() == labels.len() && labels[0] == label
                }
            }
        };
        if starts_new_point {
            if let Some(p) = points.last() {
                if p.counts.len() != labels.len() {
                    return Err(scan_row_error(
                        row_no,
                        format!(
                            "point at control {} has {} labels, expected {}",
                            p.control,
                            p.counts.len(),
                            labels.len()
                        ),
                    ));
                }
                first_point_done = true;
            }
            points.push(ScanPoint {
                control,
                phi,
                counts: Vec::new(),
                dwell_s,
            });
        }
        let point = points.last_mut().unwrap();
        let slot = point.counts.len();
        if !first_point_done {
            labels.push(label.clone());
        } else if slot >= labels.len() || labels[slot] != label {
            return Err(scan_row_error(
                row_no,
                format!("unexpected label '{label}' at position {slot}"),
            ));
        }
        point.counts.push(counts);
    }

    match points.last() {
        None => return Err(scan_row_error(0, "scan file contains no data rows")),
        Some(p) if p.counts.len() != labels.len() => {
            return Err(scan_row_error(
                0,
                format!(
                    "final point has {} labels, expected {}",
                    p.counts.len(),
                    labels.len()
                ),
            ));
        }
        _ => {}
    }

    Ok(FringeScan {
        labels,
        points,
        meta: None,
    })
}
