//! Sidecar protocol `asap/1`: newline-delimited JSON messages through which
//! an external training process drives the scheduler.
//!
//! The client supplies only losses and gradient summaries; the server never
//! sees model parameters or data. Every client message gets exactly one
//! response line:
//!
//! | client            | server                               |
//! |-------------------|--------------------------------------|
//! | `hello`           | `hello` (effective settings)         |
//! | `init_probe` × K  | `ack` with `turn = 0`                |
//! | `select_request`  | `selected`                           |
//! | `report`          | `ack`                                |
//! | `shutdown`        | `shutdown`                           |
//!
//! Any violation is answered with `error` and closes the session. Numbers
//! are JSON decimals; non-finite values may be sent as the strings `"inf"`,
//! `"-inf"`, `"nan"` (bare `NaN`/`Infinity` tokens are accepted too) and are
//! rejected as `reward_domain` errors wherever a finite value is required.
//! See `docs/protocol.md` for the grammar and a conformance transcript.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bandit::{ArmId, Normalization, PolicyState};
use crate::driver::{initial_estimate, InitRecord, PmEval, Policy, RunConfig, Trace, TurnRecord};
use crate::error::{Error, Result};
use crate::reward::{AlphaSchedule, GradientSummary, RewardComponents};

pub const PROTOCOL_VERSION: &str = "asap/1";

/// f64 that survives JSON even when non-finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireFloat(pub f64);

impl Serialize for WireFloat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let x = self.0;
        if x.is_finite() {
            s.serialize_f64(x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for WireFloat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(WireFloat(x)),
            Raw::Text(t) => match t.to_ascii_lowercase().as_str() {
                "nan" => Ok(WireFloat(f64::NAN)),
                "inf" | "+inf" | "infinity" | "+infinity" => Ok(WireFloat(f64::INFINITY)),
                "-inf" | "-infinity" => Ok(WireFloat(f64::NEG_INFINITY)),
                _ => Err(serde::de::Error::custom(format!("not a number: {t:?}"))),
            },
        }
    }
}

/// [`GradientSummary`] on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireSummary {
    pub dot: WireFloat,
    pub norm_aux: WireFloat,
    pub norm_target: WireFloat,
}

impl From<GradientSummary> for WireSummary {
    fn from(g: GradientSummary) -> Self {
        Self {
            dot: WireFloat(g.dot),
            norm_aux: WireFloat(g.norm_aux),
            norm_target: WireFloat(g.norm_target),
        }
    }
}

impl WireSummary {
    pub fn validate(&self) -> Result<GradientSummary> {
        GradientSummary::new(self.dot.0, self.norm_aux.0, self.norm_target.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireMessage {
    Hello {
        protocol_version: String,
        num_arms: usize,
        horizon: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha_schedule: Option<AlphaSchedule>,
    },
    InitProbe {
        arm: usize,
        loss_aux: WireFloat,
        grad_summary: WireSummary,
    },
    SelectRequest {
        turn: u64,
    },
    Selected {
        turn: u64,
        arm: usize,
        ucb_scores: Vec<WireFloat>,
    },
    Report {
        turn: u64,
        arm: usize,
        loss_aux: WireFloat,
        grad_summary: WireSummary,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        loss_aux_post: Option<WireFloat>,
    },
    Ack {
        turn: u64,
        estimate_after: WireFloat,
    },
    Shutdown {},
    Error {
        code: String,
        message: String,
    },
}

impl WireMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire message serializes")
    }

    /// Parses one line, accepting bare `NaN`/`Infinity` tokens.
    pub fn from_line(line: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(&quote_non_finite_tokens(line)).map_err(|e| e.to_string())
    }

    fn error(code: &str, message: impl Into<String>) -> Self {
        WireMessage::Error {
            code: code.into(),
            message: message.into(),
        }
    }
}

/// Wraps `NaN`, `Infinity` and `-Infinity` tokens outside strings in quotes.
fn quote_non_finite_tokens(line: &str) -> std::borrow::Cow<'_, str> {
    if !line.contains("NaN") && !line.contains("Infinity") {
        return line.into();
    }
    let mut out = String::with_capacity(line.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            rest = &rest[1..];
            continue;
        }
        let token = ["-Infinity", "Infinity", "NaN"].into_iter().find(|t| rest.starts_with(t));
        match token {
            Some(t) => {
                out.push('"');
                out.push_str(t);
                out.push('"');
                rest = &rest[t.len()..];
            }
            None => {
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out.into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitingHello,
    Probing,
    Serving,
    Closed,
}

/// Settings a client cannot override from its `hello`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionDefaults {
    pub beta: f64,
    pub alpha_schedule: AlphaSchedule,
    pub pm_eval: PmEval,
    pub normalization: Normalization,
}

impl Default for SessionDefaults {
    fn default() -> Self {
        Self::from(&RunConfig::external(1))
    }
}

impl From<&RunConfig> for SessionDefaults {
    fn from(c: &RunConfig) -> Self {
        Self {
            beta: c.beta,
            alpha_schedule: c.alpha_schedule,
            pm_eval: c.pm_eval,
            normalization: c.normalization,
        }
    }
}

struct Negotiated {
    horizon: u64,
    alpha_schedule: AlphaSchedule,
    beta: f64,
}

/// Server-side session state machine, independent of the transport.
pub struct Session {
    defaults: SessionDefaults,
    phase: Phase,
    negotiated: Option<Negotiated>,
    policy: Option<PolicyState>,
    probes: Vec<Option<InitRecord>>,
    pending: Option<(u64, ArmId, Vec<f64>)>,
    records: Vec<TurnRecord>,
}

impl Session {
    pub fn new(defaults: SessionDefaults) -> Self {
        Self {
            defaults,
            phase: Phase::AwaitingHello,
            negotiated: None,
            policy: None,
            probes: Vec::new(),
            pending: None,
            records: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn policy(&self) -> Option<&PolicyState> {
        self.policy.as_ref()
    }

    /// Arm returned by the outstanding `selected`, if any.
    pub fn last_selected(&self) -> Option<ArmId> {
        self.pending.as_ref().map(|p| p.1)
    }

    /// Completed turns, with target losses unknown (NaN).
    pub fn records(&self) -> &[TurnRecord] {
        &self.records
    }

    /// The session's turns in trace form.
    pub fn trace(&self) -> Trace {
        let config = self.run_config();
        Trace {
            config_digest: config.digest(),
            policy: Policy::Ucb,
            init_records: self.probes.iter().flatten().copied().collect(),
            records: self.records.clone(),
        }
    }

    /// Run configuration equivalent to the negotiated session.
    pub fn run_config(&self) -> RunConfig {
        let horizon = self.negotiated.as_ref().map(|n| n.horizon).unwrap_or(0);
        RunConfig {
            beta: self.negotiated.as_ref().map(|n| n.beta).unwrap_or(self.defaults.beta),
            alpha_schedule: self
                .negotiated
                .as_ref()
                .map(|n| n.alpha_schedule)
                .unwrap_or(self.defaults.alpha_schedule),
            pm_eval: self.defaults.pm_eval,
            normalization: self.defaults.normalization,
            ..RunConfig::external(horizon)
        }
    }

    /// Handles one raw line.
    pub fn handle_line(&mut self, line: &str) -> WireMessage {
        match WireMessage::from_line(line) {
            Ok(msg) => self.handle(msg),
            Err(e) => self.fail("protocol", format!("malformed message: {e}")),
        }
    }

    /// Handles one message and returns the response. After an `error` or
    /// `shutdown` response the session is closed.
    pub fn handle(&mut self, msg: WireMessage) -> WireMessage {
        if self.phase == Phase::Closed {
            return WireMessage::error("protocol", "session is closed");
        }
        if let WireMessage::Shutdown {} = msg {
            self.phase = Phase::Closed;
            return WireMessage::Shutdown {};
        }
        match (self.phase, msg) {
            (
                Phase::AwaitingHello,
                WireMessage::Hello {
                    protocol_version,
                    num_arms,
                    horizon,
                    beta,
                    alpha_schedule,
                },
            ) => self.hello(&protocol_version, num_arms, horizon, beta, alpha_schedule),
            (
                Phase::Probing,
                WireMessage::InitProbe {
                    arm,
                    loss_aux,
                    grad_summary,
                },
            ) => self.probe(arm, loss_aux.0, grad_summary),
            (Phase::Serving, WireMessage::SelectRequest { turn }) => self.select(turn),
            (
                Phase::Serving,
                WireMessage::Report {
                    turn,
                    arm,
                    loss_aux,
                    grad_summary,
                    loss_aux_post,
                },
            ) => self.report(turn, arm, loss_aux.0, grad_summary, loss_aux_post.map(|x| x.0)),
            (phase, other) => {
                let name = serde_json::to_value(&other)
                    .ok()
                    .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_string))
                    .unwrap_or_default();
                self.fail("protocol", format!("unexpected {name} message in phase {phase:?}"))
            }
        }
    }

    fn fail(&mut self, code: &str, message: impl Into<String>) -> WireMessage {
        self.phase = Phase::Closed;
        WireMessage::error(code, message)
    }

    fn fail_with(&mut self, err: Error) -> WireMessage {
        let code = match err {
            Error::RewardDomain(_) | Error::Divergence { .. } => "reward_domain",
            Error::Config(_) => "config",
            _ => "internal",
        };
        self.fail(code, err.to_string())
    }

    fn hello(
        &mut self,
        version: &str,
        num_arms: usize,
        horizon: u64,
        beta: Option<f64>,
        alpha_schedule: Option<AlphaSchedule>,
    ) -> WireMessage {
        if version != PROTOCOL_VERSION {
            return self.fail(
                "version",
                format!("client speaks {version}, server speaks {PROTOCOL_VERSION}"),
            );
        }
        if horizon == 0 {
            return self.fail("config", "horizon must be positive");
        }
        let beta = beta.unwrap_or(self.defaults.beta);
        let schedule = alpha_schedule.unwrap_or(self.defaults.alpha_schedule);
        if let Err(e) = schedule.validate() {
            return self.fail_with(e);
        }
        let policy = match PolicyState::new(num_arms, horizon, beta) {
            Ok(p) => p.with_normalization(self.defaults.normalization),
            Err(e) => return self.fail_with(e),
        };
        self.policy = Some(policy);
        self.probes = vec![None; num_arms];
        self.negotiated = Some(Negotiated {
            horizon,
            alpha_schedule: schedule,
            beta,
        });
        self.phase = Phase::Probing;
        WireMessage::Hello {
            protocol_version: PROTOCOL_VERSION.into(),
            num_arms,
            horizon,
            beta: Some(beta),
            alpha_schedule: Some(schedule),
        }
    }

    fn probe(&mut self, arm: usize, loss: f64, summary: WireSummary) -> WireMessage {
        match self.probes.get(arm) {
            None => return self.fail("protocol", format!("arm {arm} outside pool of {}", self.probes.len())),
            Some(Some(_)) => return self.fail("protocol", format!("arm {arm} probed twice")),
            Some(None) => {}
        }
        let summary = match summary.validate() {
            Ok(s) => s,
            Err(e) => return self.fail_with(e),
        };
        let computed = RewardComponents::compute(loss, &summary, 0.5)
            .and_then(|c| Ok((c.pt, initial_estimate(loss, c.pt)?)));
        let (cosine, raw) = match computed {
            Ok(v) => v,
            Err(e) => return self.fail_with(e),
        };
        let policy = self.policy.as_mut().expect("policy exists after hello");
        let estimate0 = match policy.seed_arm(ArmId(arm), raw) {
            Ok(v) => v,
            Err(e) => return self.fail_with(e),
        };
        self.probes[arm] = Some(InitRecord {
            arm: ArmId(arm),
            loss,
            cosine,
            estimate0,
        });
        if self.probes.iter().all(Option::is_some) {
            self.phase = Phase::Serving;
        }
        WireMessage::Ack {
            turn: 0,
            estimate_after: WireFloat(estimate0),
        }
    }

    fn select(&mut self, turn: u64) -> WireMessage {
        if let Some((t, arm, _)) = &self.pending {
            return self.fail("protocol", format!("turn {t} (arm {arm}) has not been reported"));
        }
        let policy = self.policy.as_mut().expect("policy exists after hello");
        let expected = policy.turn() + 1;
        if turn != expected {
            return self.fail("protocol", format!("expected select_request for turn {expected}, got {turn}"));
        }
        if turn > policy.horizon() {
            let msg = format!("turn {turn} beyond horizon {}", policy.horizon());
            return self.fail("config", msg);
        }
        let mut scores = Vec::with_capacity(policy.num_arms());
        let arm = policy.advance_turn().and_then(|_| policy.select_with_scores(&mut scores));
        match arm {
            Ok(arm) => {
                let ucb_scores = scores.iter().map(|&s| WireFloat(s)).collect();
                self.pending = Some((turn, arm, scores));
                WireMessage::Selected {
                    turn,
                    arm: arm.0,
                    ucb_scores,
                }
            }
            Err(e) => self.fail_with(e),
        }
    }

    fn report(
        &mut self,
        turn: u64,
        arm: usize,
        loss: f64,
        summary: WireSummary,
        loss_post: Option<f64>,
    ) -> WireMessage {
        let Some((pending_turn, pending_arm, _)) = &self.pending else {
            return self.fail("protocol", "report without a preceding selected");
        };
        if turn != *pending_turn || arm != pending_arm.0 {
            let msg = format!("report for turn {turn} arm {arm}, selected was turn {pending_turn} arm {pending_arm}");
            return self.fail("protocol", msg);
        }
        let pm_loss = match (self.defaults.pm_eval, loss_post) {
            (PmEval::PreUpdate, _) => loss,
            (PmEval::PostUpdate, Some(post)) => post,
            (PmEval::PostUpdate, None) => {
                return self.fail("protocol", "server evaluates post-update losses; loss_aux_post is required")
            }
        };
        if !loss.is_finite() {
            return self.fail("reward_domain", format!("loss_aux {loss} is not finite"));
        }
        let summary = match summary.validate() {
            Ok(s) => s,
            Err(e) => return self.fail_with(e),
        };
        let negotiated = self.negotiated.as_ref().expect("negotiated after hello");
        let reward = negotiated
            .alpha_schedule
            .alpha_at(turn, negotiated.horizon)
            .and_then(|alpha| RewardComponents::compute(pm_loss, &summary, alpha));
        let reward = match reward {
            Ok(r) => r,
            Err(e) => return self.fail_with(e),
        };
        let (_, arm_id, scores) = self.pending.take().expect("checked above");
        let policy = self.policy.as_mut().expect("policy exists after hello");
        let estimate_after = match policy.record_reward(arm_id, reward.combined) {
            Ok(v) => v,
            Err(e) => return self.fail_with(e),
        };
        self.records.push(TurnRecord {
            turn,
            ucb_scores: scores,
            selected: arm_id,
            loss_target: f64::NAN,
            loss_aux: loss,
            reward,
            estimate_after,
            plays_after: policy.arms()[arm].plays,
            target_loss_after: f64::NAN,
        });
        WireMessage::Ack {
            turn,
            estimate_after: WireFloat(estimate_after),
        }
    }
}

/// How a served session ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionOutcome {
    /// The client sent `shutdown`.
    Completed,
    /// The server answered with `error`.
    Rejected { code: String },
    /// The transport closed before `shutdown`.
    Disconnected,
}

/// Where a session persists its progress.
#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Overwritten with the policy checkpoint after every completed turn.
    pub checkpoint_path: Option<PathBuf>,
    /// Trace of the session, written when it ends.
    pub trace_path: Option<PathBuf>,
}

fn write_atomically(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs one session over a line transport.
pub fn serve<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    defaults: SessionDefaults,
    options: &ServeOptions,
) -> Result<(SessionOutcome, Session)> {
    let mut session = Session::new(defaults);
    let mut outcome = SessionOutcome::Disconnected;
    let io_err = |e| Error::io("<transport>", e);
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                log::warn!("transport read failed: {e}");
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        log::debug!("<- {line}");
        let completed_before = session.records.len();
        let response = session.handle_line(&line);
        let text = response.to_line();
        log::debug!("-> {text}");
        writeln!(writer, "{text}").map_err(io_err)?;
        writer.flush().map_err(io_err)?;
        if session.records.len() > completed_before {
            if let (Some(path), Some(policy)) = (&options.checkpoint_path, &session.policy) {
                write_atomically(path, &policy.checkpoint())?;
            }
        }
        match response {
            WireMessage::Shutdown {} => {
                outcome = SessionOutcome::Completed;
                break;
            }
            WireMessage::Error { code, message } => {
                log::warn!("session rejected ({code}): {message}");
                outcome = SessionOutcome::Rejected { code };
                break;
            }
            _ => {}
        }
    }
    if outcome == SessionOutcome::Disconnected {
        log::warn!("transport closed after {} completed turns", session.records.len());
    }
    if let Some(path) = &options.trace_path {
        crate::trace::write_trace(path, &session.trace(), &session.run_config())?;
    }
    Ok((outcome, session))
}

/// Minimal client over any line transport; mirrors the server's phases and
/// turns server `error` replies into [`ClientError::Server`].
pub struct Client<R, W> {
    reader: R,
    writer: W,
    num_arms: usize,
    turn: u64,
    last_selected: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server error {code}: {message}")]
    Server { code: String, message: String },
    #[error("unexpected reply: {0}")]
    Unexpected(String),
    #[error("transport: {0}")]
    Transport(#[from] std::io::Error),
}

impl<R: BufRead, W: Write> Client<R, W> {
    pub fn connect(
        reader: R,
        writer: W,
        num_arms: usize,
        horizon: u64,
        beta: Option<f64>,
        alpha_schedule: Option<AlphaSchedule>,
    ) -> std::result::Result<Self, ClientError> {
        let mut c = Self {
            reader,
            writer,
            num_arms,
            turn: 0,
            last_selected: None,
        };
        match c.call(&WireMessage::Hello {
            protocol_version: PROTOCOL_VERSION.into(),
            num_arms,
            horizon,
            beta,
            alpha_schedule,
        })? {
            WireMessage::Hello { .. } => Ok(c),
            other => Err(ClientError::Unexpected(other.to_line())),
        }
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn call(&mut self, msg: &WireMessage) -> std::result::Result<WireMessage, ClientError> {
        writeln!(self.writer, "{}", msg.to_line())?;
        self.writer.flush()?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ClientError::Unexpected("connection closed".into()));
        }
        match WireMessage::from_line(&line).map_err(ClientError::Unexpected)? {
            WireMessage::Error { code, message } => Err(ClientError::Server { code, message }),
            reply => Ok(reply),
        }
    }

    /// Sends one initialization probe and returns the arm's initial estimate.
    pub fn probe(&mut self, arm: usize, loss: f64, summary: GradientSummary) -> std::result::Result<f64, ClientError> {
        match self.call(&WireMessage::InitProbe {
            arm,
            loss_aux: WireFloat(loss),
            grad_summary: summary.into(),
        })? {
            WireMessage::Ack { estimate_after, .. } => Ok(estimate_after.0),
            other => Err(ClientError::Unexpected(other.to_line())),
        }
    }

    pub fn select(&mut self) -> std::result::Result<usize, ClientError> {
        let turn = self.turn + 1;
        match self.call(&WireMessage::SelectRequest { turn })? {
            WireMessage::Selected { arm, .. } => {
                self.turn = turn;
                self.last_selected = Some(arm);
                Ok(arm)
            }
            other => Err(ClientError::Unexpected(other.to_line())),
        }
    }

    /// Reports the selected arm's outcome; returns the updated estimate.
    pub fn report(
        &mut self,
        loss: f64,
        summary: GradientSummary,
        loss_post: Option<f64>,
    ) -> std::result::Result<f64, ClientError> {
        let arm = self
            .last_selected
            .take()
            .ok_or_else(|| ClientError::Unexpected("report before select".into()))?;
        match self.call(&WireMessage::Report {
            turn: self.turn,
            arm,
            loss_aux: WireFloat(loss),
            grad_summary: summary.into(),
            loss_aux_post: loss_post.map(WireFloat),
        })? {
            WireMessage::Ack { estimate_after, .. } => Ok(estimate_after.0),
            other => Err(ClientError::Unexpected(other.to_line())),
        }
    }

    pub fn shutdown(mut self) -> std::result::Result<(), ClientError> {
        match self.call(&WireMessage::Shutdown {})? {
            WireMessage::Shutdown {} => Ok(()),
            other => Err(ClientError::Unexpected(other.to_line())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hello(k: usize, horizon: u64) -> String {
        format!(r#"{{"type":"hello","protocol_version":"asap/1","num_arms":{k},"horizon":{horizon}}}"#)
    }

    fn probe(arm: usize, loss: f64, dot: f64) -> String {
        WireMessage::InitProbe {
            arm,
            loss_aux: WireFloat(loss),
            grad_summary: WireSummary::from(GradientSummary { dot, norm_aux: 1.0, norm_target: 1.0 }),
        }
        .to_line()
    }

    fn code(msg: &WireMessage) -> Option<&str> {
        match msg {
            WireMessage::Error { code, .. } => Some(code),
            _ => None,
        }
    }

    #[test]
    fn empty_pool_is_config_error() {
        let mut s = Session::new(SessionDefaults::default());
        assert_eq!(code(&s.handle_line(&hello(0, 5))), Some("config"));
        assert_eq!(s.phase(), Phase::Closed);
    }

    #[test]
    fn version_mismatch_names_both() {
        let mut s = Session::new(SessionDefaults::default());
        let r = s.handle_line(&hello(2, 5).replace("asap/1", "asap/9"));
        match r {
            WireMessage::Error { code, message } => {
                assert_eq!(code, "version");
                assert!(message.contains("asap/9") && message.contains("asap/1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn probes_then_selection() {
        let mut s = Session::new(SessionDefaults::default());
        assert!(matches!(s.handle_line(&hello(2, 5)), WireMessage::Hello { .. }));
        // R̂ = 0.5·(-loss) + 0.5·cos: loss 0, cos 1 → 0.5; loss 0, cos -1 → -0.5
        match s.handle_line(&probe(0, 0.0, 1.0)) {
            WireMessage::Ack { turn: 0, estimate_after } => assert_eq!(estimate_after.0, 0.5),
            other => panic!("{other:?}"),
        }
        s.handle_line(&probe(1, 0.0, -1.0));
        assert_eq!(s.phase(), Phase::Serving);
        match s.handle_line(r#"{"type":"select_request","turn":1}"#) {
            WireMessage::Selected { turn: 1, arm: 0, ucb_scores } => {
                assert_eq!(ucb_scores, vec![WireFloat(0.5), WireFloat(-0.5)]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn select_before_probes_is_protocol_error() {
        let mut s = Session::new(SessionDefaults::default());
        s.handle_line(&hello(2, 5));
        s.handle_line(&probe(0, 0.0, 1.0));
        assert_eq!(code(&s.handle_line(r#"{"type":"select_request","turn":1}"#)), Some("protocol"));
    }

    #[test]
    fn report_must_match_selection() {
        let mut s = Session::new(SessionDefaults::default());
        s.handle_line(&hello(2, 5));
        s.handle_line(&probe(0, 0.0, 1.0));
        s.handle_line(&probe(1, 0.0, -1.0));
        s.handle_line(r#"{"type":"select_request","turn":1}"#);
        let r = s.handle_line(
            r#"{"type":"report","turn":1,"arm":1,"loss_aux":0.5,"grad_summary":{"dot":0.0,"norm_aux":1.0,"norm_target":1.0}}"#,
        );
        assert_eq!(code(&r), Some("protocol"));
    }

    #[test]
    fn nan_loss_is_reward_domain() {
        let mut s = Session::new(SessionDefaults::default());
        s.handle_line(&hello(1, 5));
        s.handle_line(&probe(0, 0.0, 1.0));
        s.handle_line(r#"{"type":"select_request","turn":1}"#);
        let r = s.handle_line(
            r#"{"type":"report","turn":1,"arm":0,"loss_aux":NaN,"grad_summary":{"dot":0.0,"norm_aux":1.0,"norm_target":1.0}}"#,
        );
        assert_eq!(code(&r), Some("reward_domain"));
    }

    #[test]
    fn orthogonal_report_has_zero_alignment() {
        let mut s = Session::new(SessionDefaults::default());
        s.handle_line(&hello(1, 5));
        s.handle_line(&probe(0, 0.0, 1.0));
        s.handle_line(r#"{"type":"select_request","turn":1}"#);
        s.handle_line(
            r#"{"type":"report","turn":1,"arm":0,"loss_aux":0.5,"grad_summary":{"dot":0.0,"norm_aux":2.0,"norm_target":3.0}}"#,
        );
        assert_eq!(s.records()[0].reward.pt, 0.0);
    }

    #[test]
    fn malformed_and_unknown_messages() {
        let mut s = Session::new(SessionDefaults::default());
        assert_eq!(code(&s.handle_line("{not json")), Some("protocol"));
        let mut s = Session::new(SessionDefaults::default());
        assert_eq!(code(&s.handle_line(r#"{"type":"hello","protocol_version":"asap/1","num_arms":1,"horizon":1,"extra":1}"#)), Some("protocol"));
        let mut s = Session::new(SessionDefaults::default());
        assert_eq!(code(&s.handle_line(r#"{"type":"ack","turn":0,"estimate_after":1.0}"#)), Some("protocol"));
        assert_eq!(code(&s.handle_line(&hello(1, 1))), Some("protocol"), "closed session stays closed");
    }

    #[test]
    fn shutdown_closes_from_any_phase() {
        let mut s = Session::new(SessionDefaults::default());
        assert_eq!(s.handle_line(r#"{"type":"shutdown"}"#), WireMessage::Shutdown {});
        assert_eq!(s.phase(), Phase::Closed);
    }

    #[test]
    fn infinity_serializes_as_text() {
        let msg = WireMessage::Selected { turn: 1, arm: 0, ucb_scores: vec![WireFloat(f64::INFINITY), WireFloat(0.25)] };
        let line = msg.to_line();
        assert_eq!(line, r#"{"type":"selected","turn":1,"arm":0,"ucb_scores":["inf",0.25]}"#);
        assert_eq!(WireMessage::from_line(&line).unwrap(), msg);
    }

    #[test]
    fn bare_tokens_inside_strings_are_untouched() {
        assert_eq!(quote_non_finite_tokens(r#"{"a":"NaN","b":NaN}"#), r#"{"a":"NaN","b":"NaN"}"#);
        assert_eq!(quote_non_finite_tokens(r#"[-Infinity,Infinity]"#), r#"["-Infinity","Infinity"]"#);
    }
}
