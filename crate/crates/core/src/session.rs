//! Live design session: state machine, wire protocol, event log and replay.
//!
//! All inbound messages are applied by the pure transition [`handle_message`].
//! [`Session`] wraps it with an append-only [`EventLogEntry`] log whose
//! entries carry the resulting state hash, so [`replay`] can verify a log
//! against a fresh session bit for bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::{
    incorporate_choice, next_slider, slider_point, GpConfig, OptimizerError, OptimizerState,
    SliderSegment,
};
use crate::par::Execution;
use crate::param_space::{HapticParams, ParamDomain, ParamVector, DIM};
use crate::stm::{focus_at, FocusFrame, StmConfig};
use crate::viz::{scene_from_params, GrassSceneSpec};
use crate::waveform::{
    preview, render_block, spec_from_params, PhaseState, RenderConfig, RenderError, SampleBlock,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub gate_min_mm: f64,
    pub gate_max_mm: f64,
    pub seed: u64,
    pub domain: ParamDomain,
    pub stm: StmConfig,
    pub gp: GpConfig,
    pub render: RenderConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            gate_min_mm: 150.0,
            gate_max_mm: 250.0,
            seed: 0,
            domain: ParamDomain::default(),
            stm: StmConfig::default(),
            gp: GpConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn gp_for(&self, seed: u64) -> GpConfig {
        GpConfig {
            seed,
            ..self.gp.clone()
        }
    }

    /// Inclusive hand-distance window.
    pub fn gate(&self, distance_mm: Option<f64>) -> bool {
        distance_mm.is_some_and(|d| d >= self.gate_min_mm && d <= self.gate_max_mm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sls,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub seed: u64,
    pub mode: Mode,
    pub optimizer: OptimizerState,
    pub segment: Option<SliderSegment>,
    pub slider_t: f64,
    pub manual_vector: ParamVector,
    pub current_params: HapticParams,
    pub hand_distance_mm: Option<f64>,
    pub stimulus_active: bool,
}

impl SessionState {
    pub fn hash(&self) -> u64 {
        crate::digest64(self)
    }

    /// The normalized point behind `current_params` for the active mode.
    pub fn active_vector(&self) -> ParamVector {
        match (self.mode, &self.segment) {
            (Mode::Sls, Some(seg)) => seg.x0.lerp(&seg.x1, self.slider_t),
            _ => self.manual_vector,
        }
    }

    fn refresh_params(&mut self, domain: &ParamDomain) {
        self.current_params = domain.to_physical(&self.active_vector());
    }
}

pub fn format_hash(h: u64) -> String {
    format!("{h:016x}")
}

/// Inbound wire messages; every message is a JSON object with a `type` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    SetSlider {
        t: f64,
    },
    CommitChoice,
    SetParam {
        #[serde(alias = "i")]
        index: usize,
        /// Normalized value in [0, 1].
        #[serde(alias = "v")]
        value: f64,
    },
    SetMode {
        mode: Mode,
    },
    /// `distance_mm: null` (or omitted) means no hand is detected.
    Hand {
        #[serde(default)]
        distance_mm: Option<f64>,
    },
    Reset {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub seq: u64,
    pub state_hash: String,
    pub mode: Mode,
    pub params: HapticParams,
    pub normalized: ParamVector,
    pub scene: GrassSceneSpec,
    pub waveform_preview: Vec<f64>,
    pub segment: Option<SliderSegment>,
    pub slider_t: f64,
    pub manual_vector: ParamVector,
    pub iteration: u64,
    pub hand_distance_mm: Option<f64>,
    pub stimulus_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    Mode,
    InvalidValue,
    Optimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    State(Box<StateMessage>),
    Error { code: ErrorCode, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("{message} is not allowed in {mode:?} mode")]
    WrongMode { message: &'static str, mode: Mode },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SessionError::Malformed(_) => ErrorCode::Malformed,
            SessionError::WrongMode { .. } => ErrorCode::Mode,
            SessionError::InvalidValue(_) => ErrorCode::InvalidValue,
            SessionError::Optimizer(_) => ErrorCode::Optimizer,
        }
    }

    pub fn to_outbound(&self) -> Outbound {
        Outbound::Error {
            code: self.code(),
            message: self.to_string(),
        }
    }
}

/// Fresh SLS session: iteration 0, slider at 0.5, no hand.
pub fn create_session(
    config: &SessionConfig,
    seed: u64,
    exec: Execution,
) -> Result<SessionState, SessionError> {
    let optimizer = OptimizerState::new(seed);
    let segment = next_slider(&optimizer, &config.gp_for(seed), exec)?;
    let mut state = SessionState {
        seed,
        mode: Mode::Sls,
        optimizer,
        segment: Some(segment),
        slider_t: 0.5,
        manual_vector: ParamVector::center(),
        current_params: config.domain.to_physical(&ParamVector::center()),
        hand_distance_mm: None,
        stimulus_active: false,
    };
    state.refresh_params(&config.domain);
    Ok(state)
}

fn require_mode(state: &SessionState, mode: Mode, message: &'static str) -> Result<(), SessionError> {
    if state.mode == mode {
        Ok(())
    } else {
        Err(SessionError::WrongMode {
            message,
            mode: state.mode,
        })
    }
}

fn unit_value(name: &str, v: f64) -> Result<f64, SessionError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(SessionError::InvalidValue(format!("{name} = {v} is outside [0, 1]")))
    }
}

/// Pure state transition. On error the input state is untouched.
pub fn handle_message(
    config: &SessionConfig,
    state: &SessionState,
    msg: &Inbound,
    exec: Execution,
) -> Result<SessionState, SessionError> {
    let mut next = state.clone();
    match msg {
        Inbound::SetSlider { t } => {
            require_mode(state, Mode::Sls, "set_slider")?;
            next.slider_t = unit_value("t", *t)?;
        }
        Inbound::CommitChoice => {
            require_mode(state, Mode::Sls, "commit_choice")?;
            let seg = state
                .segment
                .ok_or_else(|| SessionError::InvalidValue("no active slider segment".into()))?;
            let gp = config.gp_for(state.seed);
            next.optimizer = incorporate_choice(&state.optimizer, &seg, state.slider_t, &gp)?;
            next.segment = Some(next_slider(&next.optimizer, &gp, exec)?);
            next.slider_t = 0.5;
        }
        Inbound::SetParam { index, value } => {
            require_mode(state, Mode::Manual, "set_param")?;
            if *index >= DIM {
                return Err(SessionError::InvalidValue(format!(
                    "parameter index {index} is outside 0..{DIM}"
                )));
            }
            next.manual_vector = state
                .manual_vector
                .with(*index, unit_value("value", *value)?)
                .map_err(|e| SessionError::InvalidValue(e.to_string()))?;
        }
        Inbound::SetMode { mode } => {
            if state.mode == Mode::Sls && *mode == Mode::Manual {
                if let Some(seg) = &state.segment {
                    next.manual_vector = slider_point(seg, state.slider_t)?;
                }
            }
            next.mode = *mode;
        }
        Inbound::Hand { distance_mm } => {
            if distance_mm.is_some_and(|d| !d.is_finite()) {
                return Err(SessionError::InvalidValue("hand distance must be finite".into()));
            }
            next.hand_distance_mm = *distance_mm;
        }
        Inbound::Reset { seed } => {
            next = create_session(config, *seed, exec)?;
        }
    }
    next.stimulus_active = config.gate(next.hand_distance_mm);
    next.refresh_params(&config.domain);
    Ok(next)
}

/// Full outbound state for the UI.
pub fn state_message(config: &SessionConfig, state: &SessionState, seq: u64) -> StateMessage {
    let params = state.current_params;
    StateMessage {
        seq,
        state_hash: format_hash(state.hash()),
        mode: state.mode,
        params,
        normalized: state.active_vector(),
        scene: scene_from_params(&config.domain, &params),
        waveform_preview: preview(&spec_from_params(&params)),
        segment: state.segment,
        slider_t: state.slider_t,
        manual_vector: state.manual_vector,
        iteration: state.optimizer.iteration,
        hand_distance_mm: state.hand_distance_mm,
        stimulus_active: state.stimulus_active,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub seq: u64,
    pub wall_time: String,
    pub event: Inbound,
    /// Hash of the state after applying `event`.
    pub state_hash: String,
}

/// Source of `wall_time` stamps for log entries.
pub trait Clock: Send {
    fn now(&mut self) -> String;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&mut self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }
}

/// Deterministic clock for headless runs: starts at the Unix epoch and
/// advances a fixed step per stamp.
#[derive(Debug, Clone, Copy)]
pub struct LogicalClock {
    ticks: i64,
    step_ms: i64,
}

impl LogicalClock {
    pub fn new(step_ms: i64) -> Self {
        Self { ticks: 0, step_ms }
    }
}

impl Clock for LogicalClock {
    fn now(&mut self) -> String {
        let t = chrono::DateTime::from_timestamp_millis(self.ticks * self.step_ms)
            .expect("in range");
        self.ticks += 1;
        t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }
}

/// A session with its event log. Single writer; callers serialize access.
pub struct Session {
    config: SessionConfig,
    state: SessionState,
    log: Vec<EventLogEntry>,
    clock: Box<dyn Clock>,
    exec: Execution,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        Self::with_clock(config, Box::new(SystemClock))
    }

    pub fn with_clock(config: SessionConfig, clock: Box<dyn Clock>) -> Result<Self, SessionError> {
        let exec = Execution::default();
        let state = create_session(&config, config.seed, exec)?;
        Ok(Self {
            config,
            state,
            log: Vec::new(),
            clock,
            exec,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn log(&self) -> &[EventLogEntry] {
        &self.log
    }

    pub fn last_seq(&self) -> u64 {
        self.log.last().map_or(0, |e| e.seq)
    }

    pub fn state_message(&self) -> StateMessage {
        state_message(&self.config, &self.state, self.last_seq())
    }

    /// Applies one message; logs it and returns the new state on success.
    pub fn apply(&mut self, msg: Inbound) -> Result<StateMessage, SessionError> {
        let next = handle_message(&self.config, &self.state, &msg, self.exec)?;
        self.state = next;
        self.log.push(EventLogEntry {
            seq: self.last_seq() + 1,
            wall_time: self.clock.now(),
            event: msg,
            state_hash: format_hash(self.state.hash()),
        });
        Ok(self.state_message())
    }

    pub fn handle(&mut self, msg: Inbound) -> Outbound {
        match self.apply(msg) {
            Ok(state) => Outbound::State(Box::new(state)),
            Err(e) => e.to_outbound(),
        }
    }

    /// Parses and handles one wire message; malformed input yields an error reply.
    pub fn handle_json(&mut self, text: &str) -> Outbound {
        match serde_json::from_str::<Inbound>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => SessionError::Malformed(e.to_string()).to_outbound(),
        }
    }

    pub fn snapshot(&self) -> StimulusSnapshot {
        StimulusSnapshot {
            params: self.state.current_params,
            stimulus_active: self.state.stimulus_active,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("log entry {index} has seq {got}, expected {expected}")]
    Sequence { index: usize, expected: u64, got: u64 },
    #[error("replay diverged at seq {seq}: logged {logged}, replayed {replayed}")]
    Divergence {
        seq: u64,
        logged: String,
        replayed: String,
    },
    #[error("event at seq {seq} was rejected on replay: {error}")]
    Rejected { seq: u64, error: SessionError },
    #[error("could not create the initial session: {0}")]
    Init(SessionError),
    #[error("bad log line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Re-applies a log (or any prefix of one) to a fresh session seeded from
/// `config.seed` and returns the final state hash.
pub fn replay(config: &SessionConfig, log: &[EventLogEntry]) -> Result<u64, ReplayError> {
    let exec = Execution::default();
    let mut state = create_session(config, config.seed, exec).map_err(ReplayError::Init)?;
    for (index, entry) in log.iter().enumerate() {
        let expected = index as u64 + 1;
        if entry.seq != expected {
            return Err(ReplayError::Sequence {
                index,
                expected,
                got: entry.seq,
            });
        }
        state = handle_message(config, &state, &entry.event, exec).map_err(|error| {
            ReplayError::Rejected {
                seq: entry.seq,
                error,
            }
        })?;
        let replayed = format_hash(state.hash());
        if replayed != entry.state_hash {
            return Err(ReplayError::Divergence {
                seq: entry.seq,
                logged: entry.state_hash.clone(),
                replayed,
            });
        }
    }
    Ok(state.hash())
}

pub fn write_log_jsonl<W: Write>(log: &[EventLogEntry], mut out: W) -> std::io::Result<()> {
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_log_jsonl<R: BufRead>(input: R) -> Result<Vec<EventLogEntry>, ReplayError> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| ReplayError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| ReplayError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(entries)
}

/// What the streaming loop needs from the session, captured at a block boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusSnapshot {
    pub params: HapticParams,
    pub stimulus_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    /// STM frames whose hop times fall inside this block.
    pub frames: Vec<FocusFrame>,
    pub block: SampleBlock,
}

/// Streaming state: waveform phase accumulators and the running sample clock.
#[derive(Debug, Clone)]
pub struct Streamer {
    stm: StmConfig,
    render: RenderConfig,
    phases: PhaseState,
}

impl Streamer {
    pub fn new(stm: StmConfig, render: RenderConfig) -> Result<Self, RenderError> {
        render.validate()?;
        Ok(Self {
            stm,
            render,
            phases: PhaseState::default(),
        })
    }

    /// Stream time of the next block start, seconds.
    pub fn time(&self) -> f64 {
        self.phases.next_index as f64 / self.render.sample_rate_hz
    }

    /// Renders the next block from one snapshot, so a parameter change never
    /// lands mid-block. Focus amplitude is zero while the hand is outside the
    /// gate, but the trajectory keeps advancing.
    pub fn tick(&mut self, snap: &StimulusSnapshot) -> Result<TickOutput, RenderError> {
        let spec = spec_from_params(&snap.params);
        let start = self.phases.next_index;
        let (block, phases) = render_block(&spec, &self.render, self.phases)?;
        self.phases = phases;

        let hop_rate = self.stm.hop_rate_hz();
        let sr = self.render.sample_rate_hz;
        let hop = |sample: u64| (sample as f64 * hop_rate / sr - 1e-9).ceil() as i64;
        let frames = (hop(start)..hop(phases.next_index))
            .map(|i| {
                let mut f = focus_at(&self.stm, &snap.params, &spec, i as f64 / hop_rate);
                if !snap.stimulus_active {
                    f.amplitude = 0.0;
                }
                f
            })
            .collect();
        Ok(TickOutput { frames, block })
    }
}
