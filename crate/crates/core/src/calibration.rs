//! Loss-budget construction and auditing.
//!
//! Per-line transmissions `eta_1..eta_4` (detector efficiency folded in) are
//! the fundamental quantities; decibel values are derived bookkeeping. The dB
//! convention is fixed to power ratios, `-10 * log10(eta)`, never amplitude.
//! Quoted dB values travel alongside the linear transmissions so that
//! [`consistency_audit`] can flag disagreements instead of silently trusting
//! either column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Findings are raised when quoted and implied dB differ by more than this.
/// Roughly 10x the rounding granularity of two-decimal dB tables.
pub const AUDIT_THRESHOLD_DB: f64 = 0.02;

/// Relative spread (max-min)/mean beyond which repeated calibration records
/// for one line are considered inconsistent.
pub const SPREAD_WARNING_FRACTION: f64 = 0.10;

// ── dB conversions ──────────────────────────────────────────────────────────

/// Converts a loss in dB (power convention) to a transmission in (0, 1].
///
/// # Errors
/// Negative dB would describe gain, which is not modeled.
pub fn db_to_transmission(loss_db: f64) -> Result<f64> {
    if !loss_db.is_finite() || loss_db < 0.0 {
        return Err(Error::domain(format!(
            "loss must be a finite dB value >= 0, got {loss_db}"
        )));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Converts a transmission in (0, 1] to a loss in dB (power convention).
pub fn transmission_to_db(eta: f64) -> Result<f64> {
    if !eta.is_finite() || eta <= 0.0 || eta > 1.0 {
        return Err(Error::domain(format!(
            "transmission must lie in (0, 1], got {eta}"
        )));
    }
    Ok(-10.0 * eta.log10())
}

// ── calibration records ─────────────────────────────────────────────────────

/// One power-meter measurement of a detection line.
///
/// The attenuator setting is deliberate, calibrated attenuation inserted
/// during the measurement; it is divided back out when inferring the line
/// transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub line_id: u8,
    pub reference_power_w: f64,
    pub measured_power_w: f64,
    pub attenuator_db: f64,
    pub counts_per_s: f64,
    pub timestamp: String,
}

impl CalibrationRecord {
    /// Validates the physicality constraints on a single record.
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.line_id) {
            return Err(Error::domain(format!(
                "line_id must be 1..=4, got {}",
                self.line_id
            )));
        }
        if self.reference_power_w.is_nan()
            || self.reference_power_w <= 0.0
            || self.measured_power_w.is_nan()
            || self.measured_power_w <= 0.0
        {
            return Err(Error::domain(format!(
                "powers must be positive (line {}: reference {}, measured {})",
                self.line_id, self.reference_power_w, self.measured_power_w
            )));
        }
        if !self.attenuator_db.is_finite() || self.attenuator_db < 0.0 {
            return Err(Error::domain(format!(
                "attenuator setting must be >= 0 dB, got {}",
                self.attenuator_db
            )));
        }
        // After undoing deliberate attenuation the line cannot beat unity.
        if self.transmission() > 1.0 + 1e-9 {
            return Err(Error::domain(format!(
                "line {}: measured power exceeds reference after attenuator correction \
                 (implied transmission {:.6})",
                self.line_id,
                self.transmission()
            )));
        }
        Ok(())
    }

    /// Line transmission implied by this record, attenuation divided out.
    pub fn transmission(&self) -> f64 {
        (self.measured_power_w / self.reference_power_w) * 10f64.powf(self.attenuator_db / 10.0)
    }
}

/// Reads calibration records from CSV with the header
/// `line_id,reference_power_w,measured_power_w,attenuator_db,counts_per_s,timestamp`.
///
/// # Errors
/// Malformed rows are reported with their 1-based data row number.
pub fn read_calibration_csv<R: std::io::Read>(reader: R) -> Result<Vec<CalibrationRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    for (i, row) in rdr.deserialize::<CalibrationRecord>().enumerate() {
        let record = row.map_err(|e| Error::CsvSchema {
            row: i + 1,
            msg: e.to_string(),
        })?;
        record.validate().map_err(|e| Error::CsvSchema {
            row: i + 1,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

// ── loss budget ─────────────────────────────────────────────────────────────

/// Provenance of a budget's numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetSource {
    Measured,
    Derived,
    Scenario,
}

/// Per-detection-line power transmissions, detector efficiency included.
///
/// `db` holds externally quoted dB values when they exist; it is `None` for
/// budgets built from linear transmissions alone, in which case
/// [`LossBudget::derived_db`] supplies the bookkeeping values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBudget {
    eta: [f64; 4],
    db: Option<[f64; 4]>,
    source: BudgetSource,
    #[serde(default)]
    line_std: Option<[f64; 4]>,
    #[serde(default)]
    warnings: Vec<String>,
}

impl LossBudget {
    /// Builds a budget from linear transmissions.
    pub fn from_eta(eta: [f64; 4], source: BudgetSource) -> Result<Self> {
        for (i, e) in eta.iter().enumerate() {
            if !e.is_finite() || *e <= 0.0 || *e > 1.0 {
                return Err(Error::domain(format!(
                    "line {} transmission must lie in (0, 1], got {e}",
                    i + 1
                )));
            }
        }
        Ok(LossBudget {
            eta,
            db: None,
            source,
            line_std: None,
            warnings: Vec::new(),
        })
    }

    /// Builds a budget carrying externally quoted dB values.
    ///
    /// The quoted values are *not* required to be consistent with `eta`;
    /// checking that is [`consistency_audit`]'s job.
    pub fn with_quoted_db(eta: [f64; 4], db: [f64; 4], source: BudgetSource) -> Result<Self> {
        let mut budget = Self::from_eta(eta, source)?;
        for (i, d) in db.iter().enumerate() {
            if !d.is_finite() || *d < 0.0 {
                return Err(Error::domain(format!(
                    "line {} quoted loss must be a finite dB value >= 0, got {d}",
                    i + 1
                )));
            }
        }
        budget.db = Some(db);
        Ok(budget)
    }

    /// Attaches quoted dB values to an existing budget, keeping line scatter
    /// and warnings intact. Consistency with `eta` is again the audit's job.
    pub fn with_db(mut self, db: [f64; 4]) -> Result<Self> {
        for (i, d) in db.iter().enumerate() {
            if !d.is_finite() || *d < 0.0 {
                return Err(Error::domain(format!(
                    "line {} quoted loss must be a finite dB value >= 0, got {d}",
                    i + 1
                )));
            }
        }
        self.db = Some(db);
        Ok(self)
    }

    pub fn eta(&self) -> [f64; 4] {
        self.eta
    }

    /// Quoted dB values, if any were supplied.
    pub fn quoted_db(&self) -> Option<[f64; 4]> {
        self.db
    }

    /// dB values implied by the linear transmissions.
    pub fn derived_db(&self) -> [f64; 4] {
        let mut db = [0.0; 4];
        for (d, e) in db.iter_mut().zip(self.eta.iter()) {
            *d = -10.0 * e.log10();
        }
        db
    }

    pub fn source(&self) -> BudgetSource {
        self.source
    }

    pub fn line_std(&self) -> Option<[f64; 4]> {
        self.line_std
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn sum_eta(&self) -> f64 {
        self.eta.iter().sum()
    }

    /// Returns a copy with every line multiplied by its factor.
    ///
    /// # Errors
    /// A factor driving any transmission above 1 is rejected; recovered loss
    /// cannot exceed the loss that was there.
    pub fn scaled_per_line(&self, factors: [f64; 4], source: BudgetSource) -> Result<Self> {
        let mut eta = self.eta;
        for (i, (e, f)) in eta.iter_mut().zip(factors.iter()).enumerate() {
            if !f.is_finite() || *f <= 0.0 {
                return Err(Error::domain(format!(
                    "scale factor for line {} must be positive, got {f}",
                    i + 1
                )));
            }
            *e *= f;
            if *e > 1.0 {
                return Err(Error::domain(format!(
                    "scaling drives line {} transmission to {:.6}, above unity",
                    i + 1,
                    e
                )));
            }
        }
        LossBudget::from_eta(eta, source)
    }

    /// Uniform version of [`LossBudget::scaled_per_line`].
    pub fn scaled(&self, factor: f64, source: BudgetSource) -> Result<Self> {
        self.scaled_per_line([factor; 4], source)
    }

    /// Serializes to the budget interchange JSON
    /// `{eta:[...], db:[...], source:"...", warnings:[...]}`.
    ///
    /// The `db` field falls back to the derived values when nothing was
    /// quoted, so the export always carries both representations.
    pub fn to_budget_json(&self) -> Result<String> {
        let shadow = BudgetJson {
            eta: self.eta,
            db: self.db.unwrap_or_else(|| self.derived_db()),
            source: self.source,
            warnings: self.warnings.clone(),
        };
        Ok(serde_json::to_string_pretty(&shadow)?)
    }

    /// Parses the budget interchange JSON written by [`LossBudget::to_budget_json`].
    pub fn from_budget_json(text: &str) -> Result<Self> {
        let shadow: BudgetJson = serde_json::from_str(text)?;
        let mut budget = Self::with_quoted_db(shadow.eta, shadow.db, shadow.source)?;
        budget.warnings = shadow.warnings;
        Ok(budget)
    }
}

#[derive(Serialize, Deserialize)]
struct BudgetJson {
    eta: [f64; 4],
    db: [f64; 4],
    source: BudgetSource,
    warnings: Vec<String>,
}

/// Averages calibration records into a [`LossBudget`].
///
/// Each line's transmission is the mean of its records' implied values; the
/// per-line sample standard deviation is attached. Lines whose record spread
/// exceeds [`SPREAD_WARNING_FRACTION`] produce a warning in the budget
/// metadata rather than an error.
///
/// # Errors
/// Every line 1..=4 needs at least one record; absent lines are listed.
pub fn build_loss_budget(records: &[CalibrationRecord]) -> Result<LossBudget> {
    for r in records {
        r.validate()?;
    }
    let mut per_line: [Vec<f64>; 4] = Default::default();
    for r in records {
        per_line[(r.line_id - 1) as usize].push(r.transmission());
    }
    let missing: Vec<u8> = (1..=4u8)
        .filter(|l| per_line[(l - 1) as usize].is_empty())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLines(missing));
    }

    let mut eta = [0.0; 4];
    let mut std = [0.0; 4];
    let mut warnings = Vec::new();
    for (i, values) in per_line.iter().enumerate() {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        // A mean epsilon above 1 can arise from per-record tolerance; snap it.
        eta[i] = mean.min(1.0);
        if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            std[i] = var.sqrt();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let spread = (hi - lo) / mean;
            if spread > SPREAD_WARNING_FRACTION {
                warnings.push(format!(
                    "line {}: record spread {:.1}% exceeds {:.0}%",
                    i + 1,
                    100.0 * spread,
                    100.0 * SPREAD_WARNING_FRACTION
                ));
            }
        }
    }

    let mut budget = LossBudget::from_eta(eta, BudgetSource::Measured)?;
    budget.line_std = Some(std);
    budget.warnings = warnings;
    Ok(budget)
}

// ── consistency audit ───────────────────────────────────────────────────────

/// One line whose quoted dB disagrees with its linear transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub line: u8,
    pub eta: f64,
    pub quoted_db: f64,
    /// dB implied by the linear transmission.
    pub db_implied_by_eta: f64,
    /// Transmission implied by the quoted dB.
    pub eta_implied_by_db: f64,
    /// |quoted - implied| in dB.
    pub delta_db: f64,
}

impl AuditFinding {
    pub fn describe(&self) -> String {
        format!(
            "line {}: eta {:.4} implies {:.3} dB but {:.3} dB is quoted \
             (which would mean eta {:.4}); difference {:.3} dB",
            self.line,
            self.eta,
            self.db_implied_by_eta,
            self.quoted_db,
            self.eta_implied_by_db,
            self.delta_db
        )
    }
}

/// Result of [`consistency_audit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub findings: Vec<AuditFinding>,
    /// Set when no quoted dB values were available to audit.
    pub note: Option<String>,
}

/// Compares quoted dB values against the transmissions, one finding per line
/// that disagrees by more than [`AUDIT_THRESHOLD_DB`].
pub fn consistency_audit(budget: &LossBudget) -> AuditReport {
    let Some(quoted) = budget.db else {
        return AuditReport {
            findings: Vec::new(),
            note: Some("dB not provided".to_string()),
        };
    };
    let mut findings = Vec::new();
    for (i, (&eta, &quoted_db)) in budget.eta.iter().zip(quoted.iter()).enumerate() {
        let implied_db = -10.0 * eta.log10();
        let delta = (implied_db - quoted_db).abs();
        if delta > AUDIT_THRESHOLD_DB {
            findings.push(AuditFinding {
                line: (i + 1) as u8,
                eta,
                quoted_db,
                db_implied_by_eta: implied_db,
                eta_implied_by_db: 10f64.powf(-quoted_db / 10.0),
                delta_db: delta,
            });
        }
    }
    AuditReport {
        findings,
        note: None,
    }
}

/// Effective transmissions of the two classical (single-photon) detection
/// arms: lines 1 and 2 feed one output port, lines 3 and 4 the other.
pub fn classical_arm_transmissions(budget: &LossBudget) -> (f64, f64) {
    let e = budget.eta;
    ((e[0] + e[1]) / 2.0, (e[2] + e[3]) / 2.0)
}

// ── arm balance ─────────────────────────────────────────────────────────────

/// Relative power transmission of the interferometer's long arm versus its
/// short arm. Kept independent of the per-line budget: the two are calibrated
/// by different procedures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmBalance {
    eta_t: f64,
}

impl ArmBalance {
    pub fn new(eta_t: f64) -> Result<Self> {
        if !eta_t.is_finite() || eta_t <= 0.0 || eta_t > 1.0 {
            return Err(Error::domain(format!(
                "arm balance must lie in (0, 1], got {eta_t}"
            )));
        }
        Ok(ArmBalance { eta_t })
    }

    pub fn value(&self) -> f64 {
        self.eta_t
    }
}
