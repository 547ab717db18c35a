//! Subcommand implementations and shared plumbing.
//!
//! Every artifact is written atomically (temp file + rename) so a crashed run
//! never leaves a half-written file behind, and every JSON document carries a
//! provenance stamp: the tool version and a digest of the resolved
//! configuration, seed override included.

use std::f64::consts::TAU;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Number, Value};

use noonfi::calibration::read_calibration_csv;
use noonfi::fisher::{fisher_curve, Normalization};
use noonfi::fitting::{fi_band_from_fit, write_fi_band_csv, FiBand};
use noonfi::simulator::{read_scan_csv, write_scan_csv, ControlGrid, ScanProbe};
use noonfi::util::{fmt_sig12, linspace, sha256_hex, sig12};
use noonfi::{
    advantage_numeric, build_loss_budget, coincidence_distribution, consistency_audit,
    fit_fringes_with, scenario_report, simulate_fringe_scan, single_photon_distribution,
    visibility_from_relative_loss, AdvantageReport, BudgetSource, FitConfig, FitResult,
    LossBudget, Scenario, ScanConfig, Visibility,
};

use crate::config::{PipelineConfig, ScanKind};

// ── context ─────────────────────────────────────────────────────────────────

/// Provenance stamp attached to every JSON artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_digest: String,
}

/// A resolved invocation: configuration with command-line overrides applied,
/// output directory, and the provenance stamp derived from both.
pub struct Context {
    config: PipelineConfig,
    out_dir: PathBuf,
    provenance: Provenance,
}

impl Context {
    pub fn new(config_path: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let text = fs::read_to_string(&config_path)
            .with_context(|| format!("reading config {}", config_path.display()))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", config_path.display()))?;
        if let Some(seed) = seed {
            config.scan.seed = seed;
        }
        if !(1..=2).contains(&config.probe.n) {
            bail!(
                "probe.n = {} is not supported; the pipeline models one- and two-photon probes",
                config.probe.n
            );
        }
        let out_dir = out
            .or_else(|| config.output.dir.clone())
            .or_else(|| std::env::var_os("NOONFI_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        // The digest covers the fully resolved config, so identical artifacts
        // always carry identical stamps regardless of how defaults were filled.
        let canonical = serde_json::to_string(&config)?;
        let provenance = Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: sha256_hex(canonical.as_bytes()),
        };
        Ok(Context {
            config,
            out_dir,
            provenance,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn provenance_value(&self) -> Value {
        json!({
            "tool_version": self.provenance.tool_version,
            "config_digest": self.provenance.config_digest,
        })
    }

    /// Writes bytes atomically into the output directory.
    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.out_dir)
            .with_context(|| format!("creating temp file in {}", self.out_dir.display()))?;
        tmp.write_all(bytes)?;
        tmp.persist(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Rounds every float to 12 significant digits, then writes pretty JSON.
    fn write_json(&self, name: &str, mut value: Value) -> Result<PathBuf> {
        round_floats(&mut value);
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        self.write_atomic(name, text.as_bytes())
    }

    /// Budget built from the config alone, never from previous outputs.
    fn fresh_budget(&self) -> Result<LossBudget> {
        let section = &self.config.calibration;
        if let Some(eta) = section.eta {
            return Ok(match section.db {
                Some(db) => LossBudget::with_quoted_db(eta, db, BudgetSource::Measured)?,
                None => LossBudget::from_eta(eta, BudgetSource::Measured)?,
            });
        }
        if let Some(file) = &section.file {
            return self.budget_from_csv(file);
        }
        bail!("no loss budget available: set calibration.eta or calibration.file in the config");
    }

    /// Budget for downstream commands: inline transmissions, then a budget
    /// written by a previous `calibrate`, then the calibration CSV.
    fn resolve_budget(&self) -> Result<LossBudget> {
        if self.config.calibration.eta.is_some() {
            return self.fresh_budget();
        }
        let budget_path = self.path("budget.json");
        if budget_path.exists() {
            let file = File::open(&budget_path)
                .with_context(|| format!("opening {}", budget_path.display()))?;
            let doc: BudgetFile = serde_json::from_reader(file)
                .with_context(|| format!("parsing {}", budget_path.display()))?;
            return Ok(doc.budget);
        }
        self.fresh_budget()
    }

    fn budget_from_csv(&self, file: &Path) -> Result<LossBudget> {
        let reader =
            File::open(file).with_context(|| format!("opening calibration {}", file.display()))?;
        let records = read_calibration_csv(reader)
            .with_context(|| format!("reading calibration {}", file.display()))?;
        let mut budget = build_loss_budget(&records)?;
        if let Some(db) = self.config.calibration.db {
            budget = budget.with_db(db)?;
        }
        Ok(budget)
    }

    /// Model visibilities, in order of preference: explicit config values,
    /// the pooled visibility of a matching previous fit, the visibility law
    /// at the configured arm balance.
    fn resolve_visibilities(&self) -> Result<ResolvedVisibilities> {
        let probe = &self.config.probe;
        let fitted = self.read_fit_pooled();
        let law = |order: u32| visibility_from_relative_loss(probe.eta_t, order);
        let law_source = format!("visibility law at eta_t = {}", probe.eta_t);

        let (v2, source_v2) = if let Some(v) = probe.v2 {
            (Visibility::new(v, 2)?, "config probe.v2".to_string())
        } else if let Some((2, v)) = fitted {
            (Visibility::new(v, 2)?, "pooled fit visibility".to_string())
        } else {
            (law(2)?, law_source.clone())
        };
        let (v1, source_v1) = if let Some(v) = probe.v1 {
            (Visibility::new(v, 1)?, "config probe.v1".to_string())
        } else if let Some((1, v)) = fitted {
            (Visibility::new(v, 1)?, "pooled fit visibility".to_string())
        } else {
            (law(1)?, law_source)
        };
        Ok(ResolvedVisibilities {
            v1,
            v2,
            source_v1,
            source_v2,
        })
    }

    /// Pooled visibility of a previous `fit` run, if one exists and parses.
    fn read_fit_pooled(&self) -> Option<(u32, f64)> {
        let file = File::open(self.path("fit.json")).ok()?;
        let doc: FitFile = serde_json::from_reader(file).ok()?;
        Some((doc.harmonic, doc.pooled.v))
    }

    /// Advantage and scenario reports pit the two-photon probe against the
    /// single-photon reference; a one-photon probe has no order-2 visibility.
    fn require_two_photon_probe(&self) -> Result<()> {
        if self.config.probe.n != 2 {
            bail!(
                "the advantage report needs the two-photon probe, but probe.n = {}",
                self.config.probe.n
            );
        }
        Ok(())
    }
}

struct ResolvedVisibilities {
    v1: Visibility,
    v2: Visibility,
    source_v1: String,
    source_v2: String,
}

#[derive(Deserialize)]
struct BudgetFile {
    budget: LossBudget,
}

#[derive(Deserialize)]
struct FitFile {
    harmonic: u32,
    pooled: PooledFile,
}

#[derive(Deserialize)]
struct PooledFile {
    #[serde(rename = "V")]
    v: f64,
}

// ── numeric output policy ───────────────────────────────────────────────────

/// Rounds every float in a JSON document to 12 significant digits. Integers
/// (counts, seeds, line numbers) pass through untouched, and so does
/// `ratio_R`: it is kept as the exact quotient of the emitted maxima so that
/// re-deriving it from the artifact reproduces it bit for bit, which 12-digit
/// rounding of the quotient itself would miss by a few parts in 1e12.
fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(rounded) = n.as_f64().map(sig12).and_then(Number::from_f64) {
                    *value = Value::Number(rounded);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => {
            for (key, item) in map.iter_mut() {
                if key == "ratio_R" && item.is_f64() {
                    continue;
                }
                round_floats(item);
            }
        }
        _ => {}
    }
}

/// Serializes an advantage report with the maxima rounded first and the
/// ratio rebuilt from the rounded values, so `0.5 * f2 / f1` recomputed from
/// the emitted maxima equals the emitted ratio exactly.
fn report_value(report: &AdvantageReport) -> Result<Value> {
    let mut report = report.clone();
    report.f1_max.value = sig12(report.f1_max.value);
    report.f2_max.value = sig12(report.f2_max.value);
    report.ratio_r = 0.5 * report.f2_max.value / report.f1_max.value;
    Ok(serde_json::to_value(&report)?)
}

// ── calibrate ───────────────────────────────────────────────────────────────

pub fn calibrate(ctx: &Context) -> Result<()> {
    let budget = ctx.fresh_budget()?;
    for warning in budget.warnings() {
        eprintln!("warning: {warning}");
    }
    let audit = consistency_audit(&budget);
    for finding in &audit.findings {
        println!("audit: {}", finding.describe());
    }
    if let Some(note) = &audit.note {
        println!("audit: {note}");
    }
    let doc = json!({
        "budget": budget,
        "audit": audit,
        "provenance": ctx.provenance_value(),
    });
    let path = ctx.write_json("budget.json", doc)?;
    let n = audit.findings.len();
    println!(
        "wrote {} ({n} audit finding{})",
        path.display(),
        if n == 1 { "" } else { "s" }
    );
    Ok(())
}

// ── simulate ────────────────────────────────────────────────────────────────

fn scan_config(ctx: &Context) -> Result<ScanConfig> {
    let scan = &ctx.config.scan;
    let probe = &ctx.config.probe;
    let (kind, visibility_override) = match scan.probe {
        ScanKind::TwoPhoton => {
            if probe.n != 2 {
                bail!("scan.probe = \"two_photon\" conflicts with probe.n = {}", probe.n);
            }
            (ScanProbe::TwoPhoton { eta_t: probe.eta_t }, probe.v2)
        }
        ScanKind::SinglePhoton => (ScanProbe::SinglePhoton { eta_t: probe.eta_t }, probe.v1),
    };
    let control = match &scan.voltage {
        Some(v) => ControlGrid::Voltage {
            values: linspace(v.start, v.stop, scan.points),
            rad_per_volt: v.rad_per_volt,
            offset_rad: v.offset_rad,
        },
        None => ControlGrid::Phase {
            values: linspace(scan.phi_start, scan.phi_stop, scan.points),
        },
    };
    let config = ScanConfig {
        probe: kind,
        budget: ctx.resolve_budget()?,
        visibility_override,
        pair_rate: scan.pair_rate,
        dwell_s: scan.dwell_s,
        control,
        rng_seed: scan.seed,
        accidental_rate: scan.accidental_rate,
        multi_pair_rate: scan.multi_pair_rate,
    };
    config.validate()?;
    Ok(config)
}

pub fn simulate(ctx: &Context) -> Result<()> {
    let config = scan_config(ctx)?;
    let scan = simulate_fringe_scan(&config)?;
    let mut csv = Vec::new();
    write_scan_csv(&scan, &mut csv)?;
    let csv_path = ctx.write_atomic("scan.csv", &csv)?;

    let meta = scan
        .meta
        .as_ref()
        .context("simulated scan carries no metadata")?;
    let doc = json!({
        "seed": meta.seed,
        "scan_digest": meta.config_digest,
        "provenance": ctx.provenance_value(),
    });
    let meta_path = ctx.write_json("scan_meta.json", doc)?;
    println!(
        "wrote {} ({} points x {} labels) and {}",
        csv_path.display(),
        scan.points.len(),
        scan.labels.len(),
        meta_path.display()
    );
    Ok(())
}

// ── fit ─────────────────────────────────────────────────────────────────────

/// Harmonic implied by the scan labels: coincidence fringes oscillate at
/// `2 phi`, the single-photon pair at `phi`.
fn infer_harmonic(labels: &[String]) -> Result<u32> {
    const TWO: [&str; 4] = ["P12", "P34", "P23", "P14"];
    const ONE: [&str; 2] = ["P10", "P01"];
    if labels.iter().any(|l| TWO.contains(&l.as_str())) {
        Ok(2)
    } else if labels.iter().any(|l| ONE.contains(&l.as_str())) {
        Ok(1)
    } else {
        bail!("cannot infer the fringe harmonic from labels {labels:?}; set fit.m");
    }
}

fn fi_band(ctx: &Context, fit: &FitResult) -> Result<FiBand> {
    let budget = ctx.resolve_budget()?;
    let period = TAU / f64::from(fit.harmonic);
    let grid = linspace(0.0, period, ctx.config.fit.band_points);
    let mut band = fi_band_from_fit(fit, &budget, ctx.config.fit.k, &grid)?;
    if ctx.config.fisher.normalization == Normalization::PerPhoton {
        let n = f64::from(band.n_photons);
        for values in [&mut band.central, &mut band.lower, &mut band.upper] {
            for v in values.iter_mut() {
                *v /= n;
            }
        }
        band.central_max.value /= n;
        band.lower_max.value /= n;
        band.upper_max.value /= n;
    }
    Ok(band)
}

fn fit_document(fit: &FitResult, band: &FiBand, normalization: Normalization) -> Value {
    let curves: Vec<Value> = fit
        .curves
        .iter()
        .map(|c| {
            json!({
                "label": c.label,
                "A0": c.a0,
                "V": c.visibility,
                "phi0": c.phi0,
                "cov": c.covariance,
                "chi2_red": c.chi2_red,
            })
        })
        .collect();
    json!({
        "curves": curves,
        "pooled": { "V": fit.pooled_visibility, "sigma_V": fit.pooled_sigma },
        "harmonic": fit.harmonic,
        "warnings": fit.warnings,
        "fi_band": {
            "normalization": normalization,
            "v_center": band.v_center,
            "v_lower": band.v_lower,
            "v_upper": band.v_upper,
            "central_max": { "value": band.central_max.value, "phi": band.central_max.phi },
            "lower_max": { "value": band.lower_max.value, "phi": band.lower_max.phi },
            "upper_max": { "value": band.upper_max.value, "phi": band.upper_max.phi },
            "warnings": band.warnings,
        },
    })
}

pub fn fit(ctx: &Context) -> Result<()> {
    let fit_cfg = &ctx.config.fit;
    let scan_path = fit_cfg
        .scan_file
        .clone()
        .unwrap_or_else(|| ctx.path("scan.csv"));
    let file =
        File::open(&scan_path).with_context(|| format!("opening scan {}", scan_path.display()))?;
    let scan =
        read_scan_csv(file).with_context(|| format!("reading scan {}", scan_path.display()))?;
    let m = match fit_cfg.m {
        Some(m) => m,
        None => infer_harmonic(&scan.labels)?,
    };
    let config = FitConfig {
        mode: fit_cfg.mode,
        max_iterations: fit_cfg.max_iterations,
    };
    let result = fit_fringes_with(&scan, m, &config)?;
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }

    let band = fi_band(ctx, &result)?;
    let mut doc = fit_document(&result, &band, ctx.config.fisher.normalization);
    if let Value::Object(map) = &mut doc {
        map.insert("provenance".into(), ctx.provenance_value());
    }
    let fit_path = ctx.write_json("fit.json", doc)?;

    let mut csv = Vec::new();
    write_fi_band_csv(&band, &mut csv)?;
    let band_path = ctx.write_atomic("band.csv", &csv)?;
    println!(
        "wrote {} (pooled V = {:.4} +- {:.4}) and {}",
        fit_path.display(),
        result.pooled_visibility,
        result.pooled_sigma,
        band_path.display()
    );
    Ok(())
}

// ── advantage ───────────────────────────────────────────────────────────────

/// Raw and per-photon information curves for both probes on a shared grid.
fn fi_curves_csv(ctx: &Context, budget: &LossBudget, vis: &ResolvedVisibilities) -> Result<Vec<u8>> {
    let grid = linspace(0.0, TAU, ctx.config.fisher.curve_points);
    let single = single_photon_distribution(budget, &vis.v1, ctx.config.fisher.include_no_click)?;
    let pairs = coincidence_distribution(budget, &vis.v2)?;
    let f1 = fisher_curve(&single, &grid, Normalization::Raw)?;
    let f2 = fisher_curve(&pairs, &grid, Normalization::Raw)?;
    let n1 = f64::from(single.n_photons());
    let n2 = f64::from(pairs.n_photons());

    let mut out = String::from("phi_rad,f1_raw,f1_per_photon,f2_raw,f2_per_photon\n");
    for ((phi, f1v), f2v) in grid.iter().zip(&f1.values).zip(&f2.values) {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_sig12(*phi),
            fmt_sig12(*f1v),
            fmt_sig12(f1v / n1),
            fmt_sig12(*f2v),
            fmt_sig12(f2v / n2),
        ));
    }
    Ok(out.into_bytes())
}

pub fn advantage(ctx: &Context) -> Result<()> {
    ctx.require_two_photon_probe()?;
    let budget = ctx.resolve_budget()?;
    let vis = ctx.resolve_visibilities()?;
    let fisher_cfg = &ctx.config.fisher;
    let report = advantage_numeric(
        &budget,
        &vis.v1,
        &vis.v2,
        fisher_cfg.pairing,
        fisher_cfg.tol,
        fisher_cfg.include_no_click,
    )?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }

    let mut doc = report_value(&report)?;
    if let Value::Object(map) = &mut doc {
        map.insert("v1".into(), json!(vis.v1.value()));
        map.insert("v2".into(), json!(vis.v2.value()));
        map.insert(
            "visibility_source".into(),
            json!({ "v1": vis.source_v1, "v2": vis.source_v2 }),
        );
        map.insert("provenance".into(), ctx.provenance_value());
    }
    let report_path = ctx.write_json("advantage.json", doc)?;

    let csv = fi_curves_csv(ctx, &budget, &vis)?;
    let curves_path = ctx.write_atomic("fi_curves.csv", &csv)?;
    println!(
        "wrote {} (R = {:.6}) and {}",
        report_path.display(),
        report.ratio_r,
        curves_path.display()
    );
    Ok(())
}

// ── scenario ────────────────────────────────────────────────────────────────

pub fn scenario(ctx: &Context) -> Result<()> {
    ctx.require_two_photon_probe()?;
    let budget = ctx.resolve_budget()?;
    let section = &ctx.config.scenario;
    let fisher_cfg = &ctx.config.fisher;
    let mut reports = Map::new();

    if section.no_relative_loss {
        let report = scenario_report(
            &budget,
            Scenario::NoRelativeLoss,
            fisher_cfg.pairing,
            fisher_cfg.tol,
        )?;
        println!("no_relative_loss: R = {:.6}", report.ratio_r);
        reports.insert("no_relative_loss".into(), report_value(&report)?);
    }
    if let Some(pnrd) = &section.pnrd_recovered_db {
        let report = scenario_report(
            &budget,
            Scenario::Pnrd {
                recovered_db: pnrd.per_line(),
            },
            fisher_cfg.pairing,
            fisher_cfg.tol,
        )?;
        println!("pnrd: R = {:.6}", report.ratio_r);
        reports.insert("pnrd".into(), report_value(&report)?);
    }
    if reports.is_empty() {
        // No upgrade requested: report the system as-is.
        let vis = ctx.resolve_visibilities()?;
        let report = advantage_numeric(
            &budget,
            &vis.v1,
            &vis.v2,
            fisher_cfg.pairing,
            fisher_cfg.tol,
            fisher_cfg.include_no_click,
        )?;
        println!("identity: R = {:.6}", report.ratio_r);
        reports.insert("identity".into(), report_value(&report)?);
    }

    let mut doc = Value::Object(reports);
    if let Value::Object(map) = &mut doc {
        map.insert("provenance".into(), ctx.provenance_value());
    }
    let path = ctx.write_json("scenario.json", doc)?;
    println!("wrote {}", path.display());
    Ok(())
}
