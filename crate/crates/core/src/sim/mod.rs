//! Deterministic virtual-clock simulation of clients and a relay.
//!
//! Everything runs on one event queue ordered by `(time, insertion order)`:
//! session ticks, scripted user actions and frame deliveries in both
//! directions. No wall-clock time is involved, so a scenario is a pure
//! function of its configuration and seed.
//!
//! [`run_scenario`] builds the standard measurement: `users` clients, client 0
//! measuring, one second of warm-up, then one reading per virtual second.

pub mod report;

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use report::{
    average_per_second, emit_connection_report, emit_tables, extrapolate, fmt_num, percentage_decrease, ComparisonRow,
    ConnectionRow, Format, ReportError, ScenarioResult,
};

use crate::crdt::Op;
use crate::doclet::{DocletId, UserId};
use crate::relay::{ConnId, Relay, RelayConfig};
use crate::session::{Edit, Session, SessionConfig, SessionError, Strategy, Transport, TransportError};

/// Virtual time before the first reading window.
pub const WARMUP_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    Typing,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Typing => "typing",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "idle" => Ok(Phase::Idle),
            "typing" => Ok(Phase::Typing),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub strategy: Strategy,
    pub editors: usize,
    pub users: usize,
    pub phase: Phase,
    pub typing_chars_per_sec: f64,
    /// How many users type in the typing phase; the highest-numbered users
    /// type, so with the defaults the measuring client only watches.
    pub typists: usize,
    pub tick_ms: u64,
    pub keepalive_ms: u64,
    pub naive_resend_cap: u32,
    pub duration_s: u32,
    pub readings: u32,
    pub latency_ms: u64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let session = SessionConfig::default();
        Self {
            strategy: Strategy::Mux,
            editors: 1,
            users: 2,
            phase: Phase::Idle,
            typing_chars_per_sec: 6.0,
            typists: 1,
            tick_ms: session.tick_ms,
            keepalive_ms: session.keepalive_ms,
            naive_resend_cap: session.naive_resend_cap,
            duration_s: 5,
            readings: 5,
            latency_ms: 0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("typing rate must be positive, got {0}")]
    Rate(f64),
    #[error("{typists} typists but only {users} users")]
    Typists { typists: usize, users: usize },
    #[error("duration {duration_s}s cannot hold {readings} one-second readings")]
    Duration { duration_s: u32, readings: u32 },
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("editors", self.editors as u64),
            ("users", self.users as u64),
            ("tick_ms", self.tick_ms),
            ("keepalive_ms", self.keepalive_ms),
            ("readings", u64::from(self.readings)),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if !(self.typing_chars_per_sec > 0.0 && self.typing_chars_per_sec.is_finite()) {
            return Err(ConfigError::Rate(self.typing_chars_per_sec));
        }
        if self.typists > self.users {
            return Err(ConfigError::Typists {
                typists: self.typists,
                users: self.users,
            });
        }
        if self.duration_s < self.readings {
            return Err(ConfigError::Duration {
                duration_s: self.duration_s,
                readings: self.readings,
            });
        }
        Ok(())
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            tick_ms: self.tick_ms,
            keepalive_ms: self.keepalive_ms,
            naive_resend_cap: self.naive_resend_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("user {user}: {source}")]
    Session { user: usize, source: SessionError },
}

/// A scripted user action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Click into doclet `doclet` (by position) at `index`, clamped to its length.
    PlaceCursor { doclet: usize, index: usize },
    /// Insert at the caret of the active doclet.
    Type(char),
    /// Delete the character before the caret, if any.
    Backspace,
    /// Pick a doclet and position at random, click there, then insert or delete.
    RandomEdit,
}

/// Parameters of a [`Simulation`].
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub strategy: Strategy,
    pub users: usize,
    pub doclets: Vec<DocletId>,
    pub session: SessionConfig,
    pub relay: RelayConfig,
    pub latency_ms: u64,
    pub seed: u64,
}

#[derive(Debug)]
enum Event {
    Tick(usize),
    Act(usize, Action),
    ToServer(ConnId, Vec<u8>),
    ToClient {
        user: usize,
        transport: usize,
        bytes: Vec<u8>,
    },
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

type Outbox = Rc<RefCell<Vec<(ConnId, Vec<u8>)>>>;

struct SimTransport {
    conn: ConnId,
    outbox: Outbox,
}

impl Transport for SimTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.outbox.borrow_mut().push((self.conn, frame.to_vec()));
        Ok(())
    }
}

pub struct Simulation {
    now: u64,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    relay: Relay,
    sessions: Vec<Session>,
    routes: HashMap<ConnId, (usize, usize)>,
    outbox: Outbox,
    rng: ChaCha8Rng,
    doclets: Vec<DocletId>,
    slots: HashMap<DocletId, usize>,
    history: Vec<Vec<Op>>,
    latency_ms: u64,
    tick_ms: u64,
}

impl Simulation {
    /// Connects every user at time 0 and schedules their first tick.
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let mut relay = Relay::new(config.relay.clone());
        let outbox: Outbox = Rc::default();
        let mut routes = HashMap::new();
        let mut sessions = Vec::with_capacity(config.users);
        for user in 0..config.users {
            let mut transport = 0;
            let session = Session::open(
                config.strategy,
                user as UserId,
                config.doclets.clone(),
                config.session,
                0,
                |_| {
                    let conn = relay.handle_connect(Some(user as UserId));
                    routes.insert(conn, (user, transport));
                    transport += 1;
                    Ok(Box::new(SimTransport {
                        conn,
                        outbox: outbox.clone(),
                    }))
                },
            )
            .map_err(|source| SimError::Session { user, source })?;
            sessions.push(session);
        }
        let slots = config
            .doclets
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let mut sim = Self {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            relay,
            sessions,
            routes,
            outbox,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            history: vec![Vec::new(); config.doclets.len()],
            doclets: config.doclets,
            slots,
            latency_ms: config.latency_ms,
            tick_ms: config.session.tick_ms.max(1),
        };
        sim.flush();
        for user in 0..sim.sessions.len() {
            sim.push(sim.tick_ms, Event::Tick(user));
        }
        Ok(sim)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn schedule(&mut self, at_ms: u64, user: usize, action: Action) {
        self.push(at_ms.max(self.now), Event::Act(user, action));
    }

    /// Processes every event strictly before `end_ms`.
    pub fn run_until(&mut self, end_ms: u64) -> Result<(), SimError> {
        while self.queue.peek().is_some_and(|e| e.at < end_ms) {
            let Scheduled { at, event, .. } = self.queue.pop().expect("peeked");
            self.now = at;
            self.handle(event)?;
        }
        self.now = self.now.max(end_ms);
        Ok(())
    }

    pub fn session(&self, user: usize) -> &Session {
        &self.sessions[user]
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn relay(&self) -> &Relay {
        &self.relay
    }

    pub fn doclets(&self) -> &[DocletId] {
        &self.doclets
    }

    /// Ops generated for doclet `slot`, in generation order.
    pub fn history(&self, slot: usize) -> &[Op] {
        &self.history[slot]
    }

    fn push(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            event,
        });
    }

    fn flush(&mut self) {
        let sent: Vec<_> = self.outbox.borrow_mut().drain(..).collect();
        for (conn, bytes) in sent {
            self.push(self.now + self.latency_ms, Event::ToServer(conn, bytes));
        }
    }

    fn handle(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::Tick(user) => {
                self.sessions[user]
                    .tick(self.now)
                    .map_err(|source| SimError::Session { user, source })?;
                self.push(self.now + self.tick_ms, Event::Tick(user));
            }
            Event::Act(user, action) => {
                self.perform(user, action)
                    .map_err(|source| SimError::Session { user, source })?;
            }
            Event::ToServer(conn, bytes) => {
                for out in self.relay.handle_frame(conn, &bytes, self.now) {
                    if let Some(&(user, transport)) = self.routes.get(&out.to) {
                        self.push(
                            self.now + self.latency_ms,
                            Event::ToClient {
                                user,
                                transport,
                                bytes: out.bytes,
                            },
                        );
                    }
                }
            }
            Event::ToClient { user, transport, bytes } => {
                self.sessions[user].on_frame(transport, &bytes, self.now);
            }
        }
        self.flush();
        Ok(())
    }

    fn perform(&mut self, user: usize, action: Action) -> Result<(), SessionError> {
        let now = self.now;
        match action {
            Action::PlaceCursor { doclet, index } => {
                let id = self.doclets[doclet].clone();
                let len = self.sessions[user].doclet(&id).map_or(0, |d| d.doc.len());
                self.sessions[user].on_local_cursor(&id, index.min(len), now)?;
            }
            Action::Type(ch) => {
                let session = &self.sessions[user];
                let id = session.active_doclet().clone();
                let index = session.cursor_index();
                self.edit(user, &id, Edit::Insert { index, ch })?;
            }
            Action::Backspace => {
                let session = &self.sessions[user];
                let id = session.active_doclet().clone();
                let index = session.cursor_index();
                if index > 0 {
                    self.edit(user, &id, Edit::Delete { index: index - 1 })?;
                }
            }
            Action::RandomEdit => {
                let slot = self.rng.random_range(0..self.doclets.len());
                let id = self.doclets[slot].clone();
                let len = self.sessions[user].doclet(&id).map_or(0, |d| d.doc.len());
                let index = self.rng.random_range(0..=len);
                self.sessions[user].on_local_cursor(&id, index, now)?;
                if index == 0 || self.rng.random_bool(0.7) {
                    let ch = random_char(&mut self.rng);
                    self.edit(user, &id, Edit::Insert { index, ch })?;
                } else {
                    self.edit(user, &id, Edit::Delete { index: index - 1 })?;
                }
            }
        }
        Ok(())
    }

    fn edit(&mut self, user: usize, id: &DocletId, edit: Edit) -> Result<(), SessionError> {
        let op = self.sessions[user].on_local_edit(id, edit, self.now)?;
        if let Some(&slot) = self.slots.get(id) {
            self.history[slot].push(op);
        }
        Ok(())
    }
}

fn random_char(rng: &mut impl Rng) -> char {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz     ";
    ALPHABET[rng.random_range(0..ALPHABET.len())] as char
}

pub fn doclet_ids(editors: usize) -> Vec<DocletId> {
    (1..=editors)
        .map(|i| DocletId::new(format!("editor-{i}")).expect("short ascii id"))
        .collect()
}

/// Runs one measured scenario.
///
/// Every user clicks into its doclet (`user % editors`) at time 0. In the
/// typing phase each typist then types at a fixed rate for the whole run.
/// Client 0's sent+received frames are counted per virtual second after the
/// warm-up.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult, SimError> {
    config.validate()?;
    let mut sim = Simulation::new(SimConfig {
        strategy: config.strategy,
        users: config.users,
        doclets: doclet_ids(config.editors),
        session: config.session_config(),
        relay: RelayConfig::default(),
        latency_ms: config.latency_ms,
        seed: config.seed,
    })?;
    let end = WARMUP_MS + u64::from(config.duration_s) * 1000;
    for user in 0..config.users {
        sim.schedule(
            0,
            user,
            Action::PlaceCursor {
                doclet: user % config.editors,
                index: 0,
            },
        );
    }
    if config.phase == Phase::Typing {
        let mut text_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7479_7069_6e67);
        for user in config.users - config.typists..config.users {
            for k in 0u64.. {
                let at = (k as f64 * 1000.0 / config.typing_chars_per_sec).floor() as u64;
                if at >= end {
                    break;
                }
                sim.schedule(at, user, Action::Type(random_char(&mut text_rng)));
            }
        }
    }
    sim.run_until(end)?;

    let metrics = sim.session(0).snapshot_metrics();
    let first = WARMUP_MS / 1000;
    let readings = (first..first + u64::from(config.readings))
        .map(|sec| metrics.window(sec))
        .collect();
    let mut result = ScenarioResult::from_readings(readings).expect("at least one reading");
    result.frames_sent = metrics.frames_sent;
    result.frames_received = metrics.frames_received;
    result.connections = metrics.connections_opened;
    Ok(result)
}

pub fn scenario_label(phase: Phase, editors: usize) -> String {
    match editors {
        1 => format!("{phase}, 1 editor"),
        n => format!("{phase}, {n} editors"),
    }
}

/// Full comparison matrix: one naive-vs-mux row per `(phase, editors)`
/// pair plus a connection count per editor count.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub connections: Vec<ConnectionRow>,
}

pub fn compare(base: &ScenarioConfig, editors: &[usize], phases: &[Phase]) -> Result<Comparison, SimError> {
    let run = |strategy: Strategy, phase: Phase, editors: usize| {
        run_scenario(&ScenarioConfig {
            strategy,
            phase,
            editors,
            ..base.clone()
        })
    };
    let mut rows = Vec::new();
    for &phase in phases {
        for &e in editors {
            let naive = run(Strategy::Naive, phase, e)?;
            let mux = run(Strategy::Mux, phase, e)?;
            let row = ComparisonRow::new(scenario_label(phase, e), naive, mux).map_err(|_| {
                // a naive run that saw no traffic at all
                SimError::Config(ConfigError::Zero("naive frame count"))
            })?;
            rows.push(row);
        }
    }
    let mut connections = Vec::new();
    for &e in editors {
        let count = |strategy| -> Result<u64, SimError> {
            let cfg = ScenarioConfig {
                strategy,
                editors: e,
                duration_s: 1,
                readings: 1,
                ..base.clone()
            };
            Ok(run_scenario(&cfg)?.connections)
        };
        connections.push(ConnectionRow {
            editors: e,
            naive: count(Strategy::Naive)?,
            per_socket: count(Strategy::PerSocket)?,
            mux: count(Strategy::Mux)?,
        });
    }
    Ok(Comparison { rows, connections })
}
