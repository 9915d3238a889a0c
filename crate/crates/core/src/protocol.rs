//! Line-delimited JSON protocol for driving episodes from another process.
//!
//! Every line is an envelope `{session_id, sequence, kind, payload}`. Each
//! direction numbers its messages 0, 1, 2, ... and any gap or regression
//! aborts the session. A session is:
//!
//! ```text
//! client: hello                       server: hello (or error + close)
//! client: reset_request {seed}        server: observation
//! client: action                      server: step_result, then observation
//! ...                                 server: step_result (done), episode_end
//! client: reset_request ... | close
//! ```

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Event;
use crate::env::{EncodedAction, Observation, Transition};
use crate::metrics::{EpisodeAccumulator, EpisodeSummary, MetricsConfig, MetricsReport};
use crate::policies::{Aspect, DispatchPolicy, ManagementPolicy, PositioningPolicy};
use crate::runner::{run_episode, Agent, EpisodeOutput, RunError};
use crate::scenario::ScenarioConfig;

pub const PROTOCOL_VERSION: &str = "wfdes/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub version: String,
    #[serde(default)]
    pub controlled: Vec<Aspect>,
    /// Observation row counts; filled in by the server's reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_facilities: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_personnel: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetRequest {
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResultMsg {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub events: Vec<Event>,
    pub metrics: MetricsReport,
}

impl From<&Transition> for StepResultMsg {
    fn from(t: &Transition) -> Self {
        Self {
            observation: t.observation.clone(),
            reward: t.reward,
            done: t.done,
            events: t.events.clone(),
            metrics: t.metrics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEnd {
    pub seed: u64,
    pub valid: bool,
    pub summary: EpisodeSummary,
    /// Report of the final step.
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supported_version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    ResetRequest(ResetRequest),
    Observation(Observation),
    Action(EncodedAction),
    StepResult(StepResultMsg),
    EpisodeEnd(EpisodeEnd),
    Error(ErrorMsg),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello(_) => "hello",
            Message::ResetRequest(_) => "reset_request",
            Message::Observation(_) => "observation",
            Message::Action(_) => "action",
            Message::StepResult(_) => "step_result",
            Message::EpisodeEnd(_) => "episode_end",
            Message::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub session_id: String,
    pub sequence: u64,
    #[serde(flatten)]
    pub message: Message,
}

impl Envelope {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("envelopes serialize")
    }

    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("sequence error: expected {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },
    #[error("unsupported protocol version `{0}`; supported: {PROTOCOL_VERSION}")]
    Version(String),
    #[error("unexpected `{got}` message, expected {expected}")]
    Unexpected { expected: &'static str, got: String },
    #[error("session id mismatch: `{0}`")]
    Session(String),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("peer closed the connection")]
    Closed,
    #[error("peer error: {0}")]
    Remote(String),
    #[error("episode failed: {0}")]
    Episode(String),
    #[error("transport: {0}")]
    Io(String),
}

/// A bidirectional line channel.
pub trait Transport {
    fn send_line(&mut self, line: &str) -> Result<(), ProtocolError>;
    /// `Ok(None)` when the peer has closed.
    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>, ProtocolError>;
}

fn recv_from(rx: &Receiver<String>, timeout: Duration) -> Result<Option<String>, ProtocolError> {
    match rx.recv_timeout(timeout) {
        Ok(line) => Ok(Some(line)),
        Err(RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout("a message")),
        Err(RecvTimeoutError::Disconnected) => Ok(None),
    }
}

/// In-process transport; see [`channel_pair`].
pub struct ChannelTransport {
    tx: Sender<String>,
    rx: Receiver<String>,
}

pub fn channel_pair() -> (ChannelTransport, ChannelTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (ChannelTransport { tx: a_tx, rx: a_rx }, ChannelTransport { tx: b_tx, rx: b_rx })
}

impl Transport for ChannelTransport {
    fn send_line(&mut self, line: &str) -> Result<(), ProtocolError> {
        self.tx.send(line.to_string()).map_err(|_| ProtocolError::Closed)
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>, ProtocolError> {
        recv_from(&self.rx, timeout)
    }
}

/// Byte-stream transport (stdio, TCP). A reader thread feeds lines to a
/// channel so receives can time out.
pub struct StreamTransport<W: Write> {
    writer: W,
    rx: Receiver<String>,
}

impl<W: Write> StreamTransport<W> {
    pub fn new<R: BufRead + Send + 'static>(reader: R, writer: W) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Self { writer, rx }
    }
}

impl StreamTransport<TcpStream> {
    /// Lockstep traffic is many small lines, so Nagle is disabled.
    pub fn tcp(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self::new(reader, stream))
    }
}

impl<W: Write> Transport for StreamTransport<W> {
    fn send_line(&mut self, line: &str) -> Result<(), ProtocolError> {
        writeln!(self.writer, "{line}")
            .and_then(|_| self.writer.flush())
            .map_err(|e| ProtocolError::Io(e.to_string()))
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>, ProtocolError> {
        recv_from(&self.rx, timeout)
    }
}

/// One end of a session: numbers outgoing messages and checks incoming
/// sequence numbers and session id.
pub struct Peer<T: Transport> {
    transport: T,
    session_id: String,
    next_out: u64,
    next_in: u64,
    pub timeout: Duration,
}

impl<T: Transport> Peer<T> {
    /// An empty `session_id` adopts the id of the first message received.
    pub fn new(transport: T, session_id: impl Into<String>) -> Self {
        Self {
            transport,
            session_id: session_id.into(),
            next_out: 0,
            next_in: 0,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn send(&mut self, message: Message) -> Result<(), ProtocolError> {
        let env = Envelope {
            session_id: self.session_id.clone(),
            sequence: self.next_out,
            message,
        };
        self.next_out += 1;
        self.transport.send_line(&env.to_line())
    }

    /// Next message, or `Ok(None)` if the peer closed cleanly.
    pub fn recv(&mut self) -> Result<Option<Message>, ProtocolError> {
        let Some(line) = self.transport.recv_line(self.timeout)? else {
            return Ok(None);
        };
        let env = Envelope::parse(&line)?;
        if env.sequence != self.next_in {
            return Err(ProtocolError::Sequence {
                expected: self.next_in,
                got: env.sequence,
            });
        }
        self.next_in += 1;
        if self.session_id.is_empty() {
            self.session_id = env.session_id.clone();
        }
        if env.session_id != self.session_id {
            return Err(ProtocolError::Session(env.session_id));
        }
        Ok(Some(env.message))
    }

    fn expect(&mut self, expected: &'static str) -> Result<Message, ProtocolError> {
        match self.recv() {
            Ok(Some(Message::Error(e))) => Err(ProtocolError::Remote(e.message)),
            Ok(Some(m)) if m.kind() == expected => Ok(m),
            Ok(Some(m)) => Err(ProtocolError::Unexpected {
                expected,
                got: m.kind().to_string(),
            }),
            Ok(None) => Err(ProtocolError::Closed),
            Err(ProtocolError::Timeout(_)) => Err(ProtocolError::Timeout(expected)),
            Err(e) => Err(e),
        }
    }

    fn send_error(&mut self, error: &ProtocolError) {
        let supported_version = matches!(error, ProtocolError::Version(_)).then(|| PROTOCOL_VERSION.to_string());
        let _ = self.send(Message::Error(ErrorMsg {
            message: error.to_string(),
            supported_version,
        }));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub session_id: String,
    pub controlled: Vec<Aspect>,
    /// Completed episodes in order.
    pub episodes: Vec<EpisodeOutput>,
    /// Set when the session ended abnormally.
    pub aborted: Option<ProtocolError>,
    /// Seed of the episode cut short by the abort, if any.
    pub invalid_episode: Option<u64>,
}

struct RemoteAgent<'a, T: Transport> {
    peer: &'a mut Peer<T>,
    failure: Option<ProtocolError>,
    last: Option<MetricsReport>,
}

impl<T: Transport> Agent for RemoteAgent<'_, T> {
    fn act(&mut self, observation: &Observation) -> Result<EncodedAction, RunError> {
        let result = self
            .peer
            .send(Message::Observation(observation.clone()))
            .and_then(|_| self.peer.expect("action"));
        match result {
            Ok(Message::Action(a)) => Ok(a),
            Ok(_) => unreachable!("expect checks the kind"),
            Err(e) => {
                let msg = e.to_string();
                self.failure = Some(e);
                Err(RunError::Agent(msg))
            }
        }
    }

    fn after_step(&mut self, transition: &Transition) -> Result<(), RunError> {
        self.last = Some(transition.metrics.clone());
        self.peer
            .send(Message::StepResult(transition.into()))
            .map_err(|e| {
                let msg = e.to_string();
                self.failure = Some(e);
                RunError::Agent(msg)
            })
    }
}

fn mark_external(scenario: &mut ScenarioConfig, aspects: &[Aspect]) {
    for a in aspects {
        match a {
            Aspect::Dispatch => scenario.policy.dispatch = DispatchPolicy::External,
            Aspect::Management => scenario.policy.management = ManagementPolicy::External,
            Aspect::Positioning => scenario.policy.positioning = PositioningPolicy::External,
        }
    }
}

/// Serves one session. The session id is taken from the client's hello.
/// The aspects the hello announces are driven by the client's actions; the
/// rest come from `scenario.policy`.
pub fn serve<T: Transport>(transport: T, scenario: &ScenarioConfig) -> SessionOutcome {
    let mut peer = Peer::new(transport, "");
    serve_peer(&mut peer, scenario)
}

pub fn serve_peer<T: Transport>(peer: &mut Peer<T>, scenario: &ScenarioConfig) -> SessionOutcome {
    let mut outcome = SessionOutcome {
        session_id: peer.session_id().to_string(),
        controlled: Vec::new(),
        episodes: Vec::new(),
        aborted: None,
        invalid_episode: None,
    };
    let abort = |peer: &mut Peer<T>, mut outcome: SessionOutcome, e: ProtocolError| {
        peer.send_error(&e);
        outcome.aborted = Some(e);
        outcome
    };

    let hello = match peer.expect("hello") {
        Ok(Message::Hello(h)) => h,
        Ok(_) => unreachable!("expect checks the kind"),
        Err(e) => return abort(peer, outcome, e),
    };
    outcome.session_id = peer.session_id().to_string();
    if hello.version != PROTOCOL_VERSION {
        return abort(peer, outcome, ProtocolError::Version(hello.version));
    }
    let mut scenario = scenario.clone();
    mark_external(&mut scenario, &hello.controlled);
    outcome.controlled = scenario.policy.external_aspects();
    let reply = Hello {
        version: PROTOCOL_VERSION.to_string(),
        controlled: outcome.controlled.clone(),
        max_facilities: Some(scenario.engine.max_facilities),
        max_personnel: Some(scenario.engine.max_personnel),
    };
    if let Err(e) = peer.send(Message::Hello(reply)) {
        outcome.aborted = Some(e);
        return outcome;
    }

    loop {
        let seed = match peer.recv() {
            Ok(None) => return outcome,
            Ok(Some(Message::ResetRequest(r))) => r.seed,
            Ok(Some(Message::Error(e))) => return abort(peer, outcome, ProtocolError::Remote(e.message)),
            Ok(Some(m)) => {
                let e = ProtocolError::Unexpected {
                    expected: "reset_request",
                    got: m.kind().to_string(),
                };
                return abort(peer, outcome, e);
            }
            Err(e) => return abort(peer, outcome, e),
        };
        let mut agent = RemoteAgent {
            peer,
            failure: None,
            last: None,
        };
        let result = run_episode(&scenario, seed, Some(&mut agent), false);
        let failure = agent.failure.take();
        let last = agent.last.take();
        match result {
            Ok(out) => {
                let end = EpisodeEnd {
                    seed,
                    valid: true,
                    summary: out.summary,
                    metrics: last.expect("episodes have at least one step"),
                };
                if let Err(e) = peer.send(Message::EpisodeEnd(end)) {
                    outcome.aborted = Some(e);
                    return outcome;
                }
                outcome.episodes.push(out);
            }
            Err(e) => {
                outcome.invalid_episode = Some(seed);
                let e = failure.unwrap_or_else(|| ProtocolError::Episode(e.to_string()));
                return abort(peer, outcome, e);
            }
        }
    }
}

/// Client side of a session.
pub struct Client<T: Transport> {
    peer: Peer<T>,
    pub server_hello: Option<Hello>,
}

/// What a client observed over one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientEpisode {
    pub end: EpisodeEnd,
    pub rewards: Vec<f64>,
    pub steps: Vec<StepResultMsg>,
    /// Metrics CSV rebuilt from the streamed step results.
    pub metrics_csv: String,
}

impl<T: Transport> Client<T> {
    pub fn new(transport: T, session_id: &str) -> Self {
        Self {
            peer: Peer::new(transport, session_id),
            server_hello: None,
        }
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.peer.timeout = timeout;
    }

    pub fn hello(&mut self, version: &str, controlled: &[Aspect]) -> Result<Hello, ProtocolError> {
        self.peer.send(Message::Hello(Hello {
            version: version.to_string(),
            controlled: controlled.to_vec(),
            max_facilities: None,
            max_personnel: None,
        }))?;
        match self.peer.expect("hello")? {
            Message::Hello(h) => {
                self.server_hello = Some(h.clone());
                Ok(h)
            }
            _ => unreachable!("expect checks the kind"),
        }
    }

    /// Runs one episode, answering each observation with `policy`.
    pub fn run_episode(
        &mut self,
        seed: u64,
        metrics: &MetricsConfig,
        mut policy: impl FnMut(&Observation) -> EncodedAction,
    ) -> Result<ClientEpisode, ProtocolError> {
        self.peer.send(Message::ResetRequest(ResetRequest { seed }))?;
        let mut csv = String::from(MetricsReport::CSV_HEADER);
        csv.push('\n');
        let mut acc = EpisodeAccumulator::default();
        let mut rewards = Vec::new();
        let mut steps = Vec::new();
        loop {
            match self.peer.recv()? {
                Some(Message::Observation(obs)) => self.peer.send(Message::Action(policy(&obs)))?,
                Some(Message::StepResult(r)) => {
                    csv.push_str(&r.metrics.csv_row());
                    csv.push('\n');
                    acc.record(&r.metrics);
                    rewards.push(r.reward);
                    steps.push(r);
                }
                Some(Message::EpisodeEnd(end)) => {
                    for row in acc.csv_summary_rows() {
                        csv.push_str(&row);
                        csv.push('\n');
                    }
                    debug_assert_eq!(acc.summary(metrics), end.summary);
                    return Ok(ClientEpisode {
                        end,
                        rewards,
                        steps,
                        metrics_csv: csv,
                    });
                }
                Some(Message::Error(e)) => return Err(ProtocolError::Remote(e.message)),
                Some(m) => {
                    return Err(ProtocolError::Unexpected {
                        expected: "observation, step_result or episode_end",
                        got: m.kind().to_string(),
                    })
                }
                None => return Err(ProtocolError::Closed),
            }
        }
    }

    pub fn peer_mut(&mut self) -> &mut Peer<T> {
        &mut self.peer
    }
}
