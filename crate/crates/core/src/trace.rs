//! Trace files and the replay audit.
//!
//! A run writes three files next to each other:
//!
//! * `<name>.csv`: one row per turn, header
//!   `turn,selected,loss_target,loss_aux,pm,pt,alpha,reward,estimate_after,plays_after,target_loss_after,ucb_0..ucb_{K-1}`
//! * `<name>.init.csv`: one row per arm, header `init_arm,loss,cosine,estimate0`
//! * `<name>.meta.json`: config digest, policy, the run configuration and
//!   SHA-256 digests of both CSV files.
//!
//! Floats carry 17 significant digits so they parse back to the same bits;
//! `+inf` is written as `inf`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{argmax_lowest_index, ArmId, PolicyState};
use crate::driver::{
    initial_estimate, run_policy, InitRecord, PmEval, Policy, RunConfig, Trace, TurnRecord,
};
use crate::error::{Error, Result};
use crate::reward::{combine, RewardComponents};

pub const MANIFEST_FORMAT: &str = "asap-trace";
pub const MANIFEST_VERSION: u32 = 1;

const FIXED_COLUMNS: [&str; 11] = [
    "turn",
    "selected",
    "loss_target",
    "loss_aux",
    "pm",
    "pt",
    "alpha",
    "reward",
    "estimate_after",
    "plays_after",
    "target_loss_after",
];
const INIT_HEADER: &str = "init_arm,loss,cosine,estimate0";

/// Sidecar metadata of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceManifest {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    pub policy: Policy,
    pub num_arms: usize,
    pub turns: usize,
    pub complete: bool,
    pub trace_sha256: String,
    pub init_sha256: String,
    pub config: RunConfig,
}

/// `<dir>/<stem>.init.csv` for a trace at `<dir>/<stem>.csv`.
pub fn init_path(trace_path: &Path) -> PathBuf {
    companion(trace_path, "init.csv")
}

/// `<dir>/<stem>.meta.json` for a trace at `<dir>/<stem>.csv`.
pub fn manifest_path(trace_path: &Path) -> PathBuf {
    companion(trace_path, "meta.json")
}

fn companion(trace_path: &Path, suffix: &str) -> PathBuf {
    let stem = trace_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    trace_path.with_file_name(format!("{stem}.{suffix}"))
}

/// Renders a float with 17 significant digits, `inf` for `+inf`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_float(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Trace CSV body.
pub fn render_records(trace: &Trace) -> String {
    let k = trace.num_arms();
    let mut out = String::with_capacity(64 * (trace.records.len() + 1) * (k + 11));
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..k).map(|a| format!("ucb_{a}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for r in &trace.records {
        let mut fields = vec![
            r.turn.to_string(),
            r.selected.0.to_string(),
            format_float(r.loss_target),
            format_float(r.loss_aux),
            format_float(r.reward.pm),
            format_float(r.reward.pt),
            format_float(r.reward.alpha),
            format_float(r.reward.combined),
            format_float(r.estimate_after),
            r.plays_after.to_string(),
            format_float(r.target_loss_after),
        ];
        fields.extend(r.ucb_scores.iter().map(|&s| format_float(s)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Initialization CSV body.
pub fn render_init(trace: &Trace) -> String {
    let mut out = String::from(INIT_HEADER);
    out.push('\n');
    for r in &trace.init_records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.arm.0,
            format_float(r.loss),
            format_float(r.cosine),
            format_float(r.estimate0)
        ));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the trace, its init companion and the manifest.
pub fn write_trace(path: &Path, trace: &Trace, config: &RunConfig) -> Result<TraceManifest> {
    let records = render_records(trace);
    let init = render_init(trace);
    let manifest = TraceManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config_digest: trace.config_digest.clone(),
        policy: trace.policy,
        num_arms: trace.num_arms(),
        turns: trace.records.len(),
        complete: trace.records.len() as u64 == config.horizon,
        trace_sha256: sha256_hex(records.as_bytes()),
        init_sha256: sha256_hex(init.as_bytes()),
        config: RunConfig {
            trace_path: None,
            ..config.clone()
        },
    };
    write_file(path, &records)?;
    write_file(&init_path(path), &init)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&manifest_path(path), &(json + "\n"))?;
    Ok(manifest)
}

/// A trace loaded back from disk.
#[derive(Debug, Clone)]
pub struct TraceFile {
    pub trace: Trace,
    pub manifest: Option<TraceManifest>,
    pub trace_sha256: String,
    pub init_sha256: Option<String>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn field<'a>(fields: &[&'a str], i: usize, line: usize) -> Result<&'a str> {
    fields
        .get(i)
        .copied()
        .ok_or_else(|| Error::TraceFormat(format!("line {line}: missing column {i}")))
}

fn float_at(fields: &[&str], i: usize, line: usize, name: &str) -> Result<f64> {
    let raw = field(fields, i, line)?;
    parse_float(raw).ok_or_else(|| Error::TraceFormat(format!("line {line}: bad {name} value {raw:?}")))
}

fn int_at<T: std::str::FromStr>(fields: &[&str], i: usize, line: usize, name: &str) -> Result<T> {
    let raw = field(fields, i, line)?;
    raw.trim()
        .parse()
        .map_err(|_| Error::TraceFormat(format!("line {line}: bad {name} value {raw:?}")))
}

fn parse_records(text: &str) -> Result<(usize, Vec<TurnRecord>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::TraceFormat("empty trace file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < FIXED_COLUMNS.len() || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(Error::TraceFormat("unexpected trace header".into()));
    }
    let k = cols.len() - FIXED_COLUMNS.len();
    for (a, c) in cols[FIXED_COLUMNS.len()..].iter().enumerate() {
        if *c != format!("ucb_{a}") {
            return Err(Error::TraceFormat(format!("unexpected column {c:?}")));
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::TraceFormat(format!(
                "line {n}: {} columns, header has {}",
                f.len(),
                cols.len()
            )));
        }
        records.push(TurnRecord {
            turn: int_at(&f, 0, n, "turn")?,
            selected: ArmId(int_at(&f, 1, n, "selected")?),
            loss_target: float_at(&f, 2, n, "loss_target")?,
            loss_aux: float_at(&f, 3, n, "loss_aux")?,
            reward: RewardComponents {
                pm: float_at(&f, 4, n, "pm")?,
                pt: float_at(&f, 5, n, "pt")?,
                alpha: float_at(&f, 6, n, "alpha")?,
                combined: float_at(&f, 7, n, "reward")?,
            },
            estimate_after: float_at(&f, 8, n, "estimate_after")?,
            plays_after: int_at(&f, 9, n, "plays_after")?,
            target_loss_after: float_at(&f, 10, n, "target_loss_after")?,
            ucb_scores: (0..k)
                .map(|a| float_at(&f, FIXED_COLUMNS.len() + a, n, "ucb"))
                .collect::<Result<_>>()?,
        });
    }
    Ok((k, records))
}

fn parse_init(text: &str) -> Result<Vec<InitRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(INIT_HEADER) {
        return Err(Error::TraceFormat("unexpected init header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::TraceFormat(format!("init line {n}: expected 4 columns")));
            }
            Ok(InitRecord {
                arm: ArmId(int_at(&f, 0, n, "init_arm")?),
                loss: float_at(&f, 1, n, "loss")?,
                cosine: float_at(&f, 2, n, "cosine")?,
                estimate0: float_at(&f, 3, n, "estimate0")?,
            })
        })
        .collect()
}

/// Loads a trace and whichever companions exist.
pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let text = read_to_string(path)?;
    let (k, records) = parse_records(&text)?;
    let init_file = init_path(path);
    let (init_records, init_sha256) = if init_file.exists() {
        let t = read_to_string(&init_file)?;
        (parse_init(&t)?, Some(sha256_hex(t.as_bytes())))
    } else {
        (Vec::new(), None)
    };
    if !init_records.is_empty() && init_records.len() != k {
        return Err(Error::TraceFormat(format!(
            "init file lists {} arms, trace has {k}",
            init_records.len()
        )));
    }
    let manifest_file = manifest_path(path);
    let manifest: Option<TraceManifest> = if manifest_file.exists() {
        let t = read_to_string(&manifest_file)?;
        Some(serde_json::from_str(&t).map_err(|e| Error::TraceFormat(format!("manifest: {e}")))?)
    } else {
        None
    };
    Ok(TraceFile {
        trace: Trace {
            config_digest: manifest.as_ref().map(|m| m.config_digest.clone()).unwrap_or_default(),
            policy: manifest.as_ref().map(|m| m.policy).unwrap_or_default(),
            init_records,
            records,
        },
        manifest,
        trace_sha256: sha256_hex(text.as_bytes()),
        init_sha256,
    })
}

/// A single inconsistency found by the audit.
#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    /// Turn of the offending record; `None` for file-level or init findings.
    pub turn: Option<u64>,
    pub field: String,
    pub detail: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.turn {
            Some(t) => write!(f, "turn {t}: {}: {}", self.field, self.detail),
            None => write!(f, "{}: {}", self.field, self.detail),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub turns: usize,
    /// Whether the run was re-executed from the manifest's configuration.
    pub resimulated: bool,
    pub findings: Vec<Finding>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

struct Auditor {
    findings: Vec<Finding>,
}

impl Auditor {
    fn flag(&mut self, turn: Option<u64>, field: &str, detail: String) {
        self.findings.push(Finding {
            turn,
            field: field.into(),
            detail,
        });
    }

    fn float(&mut self, turn: Option<u64>, field: &str, stored: f64, derived: f64) {
        if !same(stored, derived) {
            self.flag(turn, field, format!("stored {stored:e}, derived {derived:e}"));
        }
    }
}

/// Checks that need no manifest: turn numbering, reward recomputation and
/// (for the UCB policy) argmax re-derivation from the stored bounds.
fn check_self_consistency(a: &mut Auditor, trace: &Trace, policy: Policy) {
    for (i, r) in trace.records.iter().enumerate() {
        let t = Some(i as u64 + 1);
        if r.turn != i as u64 + 1 {
            a.flag(t, "turn", format!("record {} is labelled turn {}", i + 1, r.turn));
        }
        match combine(r.reward.pm, r.reward.pt, r.reward.alpha) {
            Ok(v) => a.float(t, "reward", r.reward.combined, v),
            Err(e) => a.flag(t, "alpha", e.to_string()),
        }
        if !(-1.0..=1.0).contains(&r.reward.pt) {
            a.flag(t, "pt", format!("{} outside [-1, 1]", r.reward.pt));
        }
        if policy == Policy::Ucb && argmax_lowest_index(&r.ucb_scores) != Some(r.selected) {
            a.flag(t, "selected", format!("arm {} is not the argmax of the stored bounds", r.selected));
        }
    }
}

/// Replays the policy state from the init probes through every record.
fn check_against_state(a: &mut Auditor, trace: &Trace, manifest: &TraceManifest) {
    let cfg = &manifest.config;
    let k = trace.records.first().map(|r| r.ucb_scores.len()).unwrap_or(manifest.num_arms);
    if trace.init_records.len() != k {
        a.flag(None, "init", format!("{} init rows for {k} arms", trace.init_records.len()));
        return;
    }
    let mut state = match PolicyState::new(k, cfg.horizon, cfg.beta) {
        Ok(s) => s.with_normalization(cfg.normalization),
        Err(e) => {
            a.flag(None, "config", e.to_string());
            return;
        }
    };
    for (i, init) in trace.init_records.iter().enumerate() {
        if init.arm != ArmId(i) {
            a.flag(None, "init_arm", format!("row {i} names arm {}", init.arm));
        }
        match initial_estimate(init.loss, init.cosine).and_then(|v| state.seed_arm(ArmId(i), v)) {
            Ok(v) => a.float(None, &format!("estimate0[{i}]"), init.estimate0, v),
            Err(e) => a.flag(None, &format!("estimate0[{i}]"), e.to_string()),
        }
    }
    let initial: Vec<f64> = trace.init_records.iter().map(|r| r.estimate0).collect();
    let fixed = argmax_lowest_index(&initial);

    for r in &trace.records {
        let t = Some(state.turn() + 1);
        if state.advance_turn().is_err() {
            a.flag(t, "turn", "beyond the configured horizon".into());
            return;
        }
        let derived = state.ucb_scores();
        if derived.len() != r.ucb_scores.len() {
            a.flag(t, "ucb", "wrong number of bounds".into());
            return;
        }
        for (arm, (&s, &d)) in r.ucb_scores.iter().zip(&derived).enumerate() {
            a.float(t, &format!("ucb_{arm}"), s, d);
        }
        match cfg.alpha_schedule.alpha_at(r.turn, cfg.horizon) {
            Ok(alpha) => a.float(t, "alpha", r.reward.alpha, alpha),
            Err(e) => a.flag(t, "alpha", e.to_string()),
        }
        if cfg.pm_eval == PmEval::PreUpdate {
            a.float(t, "pm", r.reward.pm, -r.loss_aux);
        }
        let k64 = k as u64;
        let expected = match manifest.policy {
            Policy::Ucb => argmax_lowest_index(&derived),
            Policy::RoundRobin | Policy::AllMixed => Some(ArmId(((r.turn - 1) % k64) as usize)),
            Policy::FixedBestInitial => fixed,
            Policy::UniformRandom => None,
        };
        if let Some(e) = expected {
            if e != r.selected {
                a.flag(t, "selected", format!("policy {} selects arm {e}, trace has {}", manifest.policy, r.selected));
            }
        }
        if r.selected.0 >= k {
            a.flag(t, "selected", format!("arm {} outside pool", r.selected));
            return;
        }
        match state.record_reward(r.selected, r.reward.combined) {
            Ok(v) => a.float(t, "estimate_after", r.estimate_after, v),
            Err(e) => a.flag(t, "reward", e.to_string()),
        }
        let plays = state.arms()[r.selected.0].plays;
        if plays != r.plays_after {
            a.flag(t, "plays_after", format!("stored {}, derived {plays}", r.plays_after));
        }
    }
    if manifest.turns != trace.records.len() {
        a.flag(None, "turns", format!("manifest lists {}, trace has {}", manifest.turns, trace.records.len()));
    }
}

/// Re-executes a synthetic run and compares every field bit-for-bit.
fn check_resimulation(a: &mut Auditor, trace: &Trace, manifest: &TraceManifest) -> Result<()> {
    let cfg = &manifest.config;
    if cfg.digest() != manifest.config_digest {
        a.flag(None, "config_digest", "manifest digest does not match its configuration".into());
    }
    let fresh = match run_policy(cfg, manifest.policy) {
        Ok(t) => t,
        Err(Error::Divergence { .. }) if !manifest.complete => {
            // the original run diverged too; compare the turns both produced
            let env = crate::driver::synthetic_environment(cfg)?;
            let mut d = crate::driver::Driver::initialize(cfg, manifest.policy, env)?;
            while d.run_turn().is_ok() {}
            d.into_trace()
        }
        Err(e) => return Err(e),
    };
    for (i, (s, d)) in trace.init_records.iter().zip(&fresh.init_records).enumerate() {
        for (name, x, y) in [("loss", s.loss, d.loss), ("cosine", s.cosine, d.cosine), ("estimate0", s.estimate0, d.estimate0)] {
            a.float(None, &format!("init[{i}].{name}"), x, y);
        }
    }
    if trace.records.len() != fresh.records.len() {
        a.flag(None, "turns", format!("trace has {} turns, re-run produced {}", trace.records.len(), fresh.records.len()));
    }
    for (s, d) in trace.records.iter().zip(&fresh.records) {
        let t = Some(s.turn);
        if s.selected != d.selected {
            a.flag(t, "selected", format!("stored {}, re-run {}", s.selected, d.selected));
        }
        if s.plays_after != d.plays_after {
            a.flag(t, "plays_after", format!("stored {}, re-run {}", s.plays_after, d.plays_after));
        }
        let pairs = [
            ("loss_target", s.loss_target, d.loss_target),
            ("loss_aux", s.loss_aux, d.loss_aux),
            ("pm", s.reward.pm, d.reward.pm),
            ("pt", s.reward.pt, d.reward.pt),
            ("alpha", s.reward.alpha, d.reward.alpha),
            ("reward", s.reward.combined, d.reward.combined),
            ("estimate_after", s.estimate_after, d.estimate_after),
            ("target_loss_after", s.target_loss_after, d.target_loss_after),
        ];
        for (name, x, y) in pairs {
            if !same(x, y) {
                a.flag(t, name, format!("stored {x:e}, re-run {y:e}"));
            }
        }
        for (arm, (&x, &y)) in s.ucb_scores.iter().zip(&d.ucb_scores).enumerate() {
            if !same(x, y) {
                a.flag(t, &format!("ucb_{arm}"), format!("stored {x:e}, re-run {y:e}"));
            }
        }
    }
    Ok(())
}

/// Audits the trace at `path`.
///
/// Without a manifest only self-consistency is checked and the UCB policy is
/// assumed. With a manifest the policy state is replayed from the init
/// probes, synthetic runs are re-executed, and the file digests are compared.
pub fn audit(path: &Path) -> Result<AuditReport> {
    let file = read_trace(path)?;
    let mut a = Auditor { findings: Vec::new() };
    let policy = file.manifest.as_ref().map(|m| m.policy).unwrap_or_default();
    check_self_consistency(&mut a, &file.trace, policy);
    let mut resimulated = false;
    if let Some(m) = &file.manifest {
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::TraceFormat(format!("unsupported manifest {:?} v{}", m.format, m.version)));
        }
        check_against_state(&mut a, &file.trace, m);
        if m.config.environment.is_some() {
            check_resimulation(&mut a, &file.trace, m)?;
            resimulated = true;
        }
        if file.trace_sha256 != m.trace_sha256 {
            a.flag(None, "trace_sha256", "trace bytes differ from the manifest digest".into());
        }
        if file.init_sha256.as_deref() != Some(m.init_sha256.as_str()) {
            a.flag(None, "init_sha256", "init file missing or differs from the manifest digest".into());
        }
    }
    Ok(AuditReport {
        turns: file.trace.records.len(),
        resimulated,
        findings: a.findings,
    })
}
