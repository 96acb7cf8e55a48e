//! Live governed control loop driven by a remote pilot.
//!
//! Transport is newline-delimited JSON over TCP. The server greets each
//! client with a `hello` message, then streams one `frame` per control
//! period. Clients send [`TeleopMessage`]s at any rate; only the latest
//! reference seen at the start of a period is used.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender, TryRecvError, TrySendError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::governor::{GovernedLoop, GovernorError, InitSearch, RgConfig, StepRecord};
use crate::moas::Moas;
use crate::plant::{ClosedLoopModel, FlatState, Reference};
use crate::vis::{CameraModel, TightenedFov};

pub const PROTOCOL_VERSION: u32 = 1;

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TeleopMessage {
    /// Desired pose (inertial). Missing `z`/`yaw` keep their previous values.
    SetReference {
        x: f64,
        y: f64,
        #[serde(default)]
        z: Option<f64>,
        #[serde(default)]
        yaw: Option<f64>,
    },
    SetPoi { x: f64, y: f64, z: f64 },
    Pause {
        #[serde(default = "yes")]
        paused: bool,
    },
    /// Back to the initial state and reference.
    Reset,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovInfo {
    pub alpha_h_deg: f64,
    pub alpha_v_deg: f64,
    pub eps_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: u32,
    /// `(n, m, p)`: state and reference dimensions, lifting degree.
    pub dims: [usize; 3],
    pub control_period: f64,
    pub rg_on: bool,
    pub camera: FovInfo,
    pub reduced_fov: FovInfo,
    pub poi: [f64; 3],
    /// Half-width of the reference box around the PoI (m).
    pub reference_box: f64,
    pub yaw_limit: f64,
    pub k_star: usize,
    pub moas_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub seq: u64,
    pub t: f64,
    pub x: [f64; 8],
    /// Applied reference.
    pub v: [f64; 4],
    /// Desired reference after clamping.
    pub r: [f64; 4],
    pub lambda: f64,
    /// Set residual and true constraint values; absent while paused.
    pub margin: Option<f64>,
    pub g1: Option<f64>,
    pub g2: Option<f64>,
    pub z_c: Option<f64>,
    pub poi: [f64; 3],
    pub poi_id: usize,
    pub alpha_h_eff_deg: f64,
    pub alpha_v_eff_deg: f64,
    pub governed: bool,
    /// True-constraint violation at this state.
    pub violation: bool,
    pub paused: bool,
    pub deadline_misses: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub steps: u64,
    pub violation_frames: u64,
    pub governed_frames: u64,
    pub deadline_misses: u64,
    pub dropped_frames: u64,
    pub rejected_messages: u64,
    /// 99th percentile of the measured loop period (ms); zero when unpaced.
    pub p99_period_ms: f64,
    pub mean_step_ms: f64,
    pub max_step_ms: f64,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Handshake),
    Frame(TelemetryFrame),
    Error { message: String },
    Bye(SessionStats),
}

impl ServerMessage {
    fn line(&self) -> Arc<str> {
        let mut s = serde_json::to_string(self).expect("serializable");
        s.push('\n');
        s.into()
    }
}

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error(transparent)]
    Governor(#[from] GovernorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Control-side state of a session, independent of transport.
pub struct TeleopSession<'a> {
    lp: GovernedLoop<'a>,
    fov: TightenedFov,
    x0: FlatState,
    r0: Reference,
    poi0: Vector3<f64>,
    r: Reference,
    wanted: (usize, Vector3<f64>),
    paused: bool,
    seq: u64,
    t: f64,
    ts: f64,
    reference_box: f64,
    handshake: Handshake,
    stats: SessionStats,
    step_time_sum: f64,
}

impl<'a> TeleopSession<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        moas: &'a Moas,
        plant: &'a ClosedLoopModel,
        cam: CameraModel,
        fov: TightenedFov,
        cfg: RgConfig,
        init: InitSearch,
        rg_on: bool,
        x0: FlatState,
        r0: Reference,
        poi: Vector3<f64>,
        reference_box: f64,
    ) -> Result<Self, GovernorError> {
        let lp = GovernedLoop::new(moas, plant, cam, cfg, init, rg_on, x0, (0, poi))?;
        let handshake = Handshake {
            protocol: PROTOCOL_VERSION,
            dims: [moas.dims.0, moas.dims.1, moas.dims.2],
            control_period: plant.params.ts,
            rg_on,
            camera: FovInfo { alpha_h_deg: cam.alpha_h.to_degrees(), alpha_v_deg: cam.alpha_v.to_degrees(), eps_z: cam.eps_z },
            reduced_fov: FovInfo {
                alpha_h_deg: fov.alpha_h_eff.to_degrees(),
                alpha_v_deg: fov.alpha_v_eff.to_degrees(),
                eps_z: fov.eps_z_eff,
            },
            poi: poi.into(),
            reference_box,
            yaw_limit: cfg.yaw_limit,
            k_star: moas.k_star,
            moas_rows: moas.nrows(),
        };
        let mut s = TeleopSession {
            lp,
            fov,
            x0,
            r0,
            poi0: poi,
            r: r0,
            wanted: (0, poi),
            paused: false,
            seq: 0,
            t: 0.0,
            ts: plant.params.ts,
            reference_box,
            handshake,
            stats: SessionStats::default(),
            step_time_sum: 0.0,
        };
        s.r = s.clamp(&r0);
        s.r0 = s.r;
        Ok(s)
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn desired(&self) -> Reference {
        self.r
    }

    /// Clamp to the reference box around the requested PoI and the yaw domain.
    fn clamp(&self, r: &Reference) -> Reference {
        let b = self.reference_box;
        let p = self.wanted.1;
        let lim = self.lp.cfg.yaw_limit;
        Reference::new(
            r[0].clamp(p.x - b, p.x + b),
            r[1].clamp(p.y - b, p.y + b),
            r[2].clamp(p.z - b, p.z + b),
            r[3].clamp(-lim, lim),
        )
    }

    /// Apply one client message. Errors are reported to the client and leave
    /// the session unchanged.
    pub fn apply(&mut self, msg: &TeleopMessage) -> Result<(), String> {
        match *msg {
            TeleopMessage::SetReference { x, y, z, yaw } => {
                let cand = Reference::new(x, y, z.unwrap_or(self.r[2]), yaw.unwrap_or(self.r[3]));
                if cand.iter().any(|v| !v.is_finite()) {
                    return Err("reference must be finite".into());
                }
                self.r = self.clamp(&cand);
            }
            TeleopMessage::SetPoi { x, y, z } => {
                if ![x, y, z].iter().all(|v| v.is_finite()) {
                    return Err("PoI must be finite".into());
                }
                self.wanted = (self.wanted.0 + 1, Vector3::new(x, y, z));
                self.r = self.clamp(&self.r);
            }
            TeleopMessage::Pause { paused } => self.paused = paused,
            TeleopMessage::Reset => {
                let keep = (self.lp.clone(), self.wanted);
                self.wanted = (self.wanted.0 + 1, self.poi0);
                self.lp.force_poi(self.wanted);
                if let Err(e) = self.lp.reset(self.x0) {
                    (self.lp, self.wanted) = keep;
                    return Err(format!("reset refused: {e}"));
                }
                self.r = self.r0;
                self.t = 0.0;
            }
        }
        Ok(())
    }

    /// One control period. A PoI that cannot be handed over is dropped and
    /// reported; the previous PoI stays enforced.
    pub fn tick(&mut self) -> (TelemetryFrame, Option<String>) {
        let mut note = None;
        let rec = if self.paused {
            None
        } else {
            match self.lp.step(&self.r, self.wanted) {
                Ok(s) => Some(s),
                Err(e) => {
                    note = Some(format!("PoI change refused: {e}"));
                    self.wanted = self.lp.poi();
                    self.r = self.clamp(&self.r);
                    Some(self.lp.step(&self.r, self.wanted).expect("enforced PoI needs no hand-over"))
                }
            }
        };
        let frame = self.frame(rec.as_ref());
        if rec.is_some() {
            self.t += self.ts;
        }
        (frame, note)
    }

    fn frame(&mut self, rec: Option<&StepRecord>) -> TelemetryFrame {
        self.seq += 1;
        let (poi_id, poi) = self.lp.poi();
        let mut f = TelemetryFrame {
            seq: self.seq,
            t: self.t,
            x: (*self.lp.state()).into(),
            v: self.lp.applied().into(),
            r: self.r.into(),
            lambda: 1.0,
            margin: None,
            g1: None,
            g2: None,
            z_c: None,
            poi: poi.into(),
            poi_id,
            alpha_h_eff_deg: self.fov.alpha_h_eff.to_degrees(),
            alpha_v_eff_deg: self.fov.alpha_v_eff.to_degrees(),
            governed: false,
            violation: false,
            paused: self.paused,
            deadline_misses: self.stats.deadline_misses,
        };
        if let Some(s) = rec {
            f.x = s.x.into();
            f.v = s.v.into();
            f.r = s.r.into();
            f.lambda = s.lambda;
            f.margin = finite(s.margin);
            f.g1 = finite(s.g1);
            f.g2 = finite(s.g2);
            f.z_c = finite(s.z_c);
            f.poi = s.poi.into();
            f.poi_id = s.poi_id;
            f.governed = s.lambda < 1.0;
            // NaN (undefined attitude) counts as a violation.
            f.violation = !(s.g1 <= 0.0 && s.g2 <= 0.0 && s.z_c > 0.0);
            self.stats.steps += 1;
            self.stats.violation_frames += f.violation as u64;
            self.stats.governed_frames += f.governed as u64;
            self.step_time_sum += s.seconds;
            self.stats.max_step_ms = self.stats.max_step_ms.max(s.seconds * 1e3);
            self.stats.mean_step_ms = self.step_time_sum / self.stats.steps as f64 * 1e3;
        }
        f
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServeOptions {
    /// Run without wall-clock pacing; frames block on slow clients instead
    /// of being dropped.
    pub as_fast_as_possible: bool,
    pub max_steps: Option<u64>,
    /// Do not start the loop before the first client connects.
    pub wait_for_client: bool,
    /// End the session when the last client disconnects.
    pub stop_on_disconnect: bool,
    /// Frames buffered per client.
    pub frame_buffer: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { as_fast_as_possible: false, max_steps: None, wait_for_client: false, stop_on_disconnect: false, frame_buffer: 64 }
    }
}

enum Event {
    Joined(usize, SyncSender<Arc<str>>),
    Message(usize, Result<TeleopMessage, String>),
    Left(usize),
}

struct Client {
    id: usize,
    tx: SyncSender<Arc<str>>,
}

fn client_io(id: usize, stream: TcpStream, buffer: usize, events: Sender<Event>, stop: Arc<AtomicBool>) {
    let (tx, rx) = mpsc::sync_channel::<Arc<str>>(buffer);
    let Ok(write_half) = stream.try_clone() else { return };
    if events.send(Event::Joined(id, tx)).is_err() {
        return;
    }
    let writer = thread::spawn(move || {
        let mut w = std::io::BufWriter::new(write_half);
        'outer: while let Ok(line) = rx.recv() {
            let mut next = Some(line);
            while let Some(l) = next {
                if w.write_all(l.as_bytes()).is_err() {
                    break 'outer;
                }
                next = match rx.try_recv() {
                    Ok(l) => Some(l),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => break 'outer,
                };
            }
            if w.flush().is_err() {
                break;
            }
        }
        let _ = w.flush();
        if let Ok(stream) = w.into_inner() {
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
    });
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let msg = serde_json::from_str::<TeleopMessage>(&line).map_err(|e| format!("malformed message: {e}"));
        if events.send(Event::Message(id, msg)).is_err() {
            break;
        }
    }
    let _ = events.send(Event::Left(id));
    let _ = writer.join();
}

/// Serve `session` on `listener` until `max_steps`, the last client leaves
/// (when requested), or `stop` is set. Returns the session statistics.
pub fn serve(
    listener: TcpListener,
    session: &mut TeleopSession,
    opts: &ServeOptions,
    stop: Arc<AtomicBool>,
) -> Result<SessionStats, TeleopError> {
    listener.set_nonblocking(true)?;
    let (ev_tx, ev_rx) = mpsc::channel::<Event>();
    thread::scope(|scope| -> Result<SessionStats, TeleopError> {
        {
            let stop = stop.clone();
            let buffer = opts.frame_buffer.max(1);
            scope.spawn(move || {
                let mut next_id = 0;
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let _ = stream.set_nonblocking(false);
                            let _ = stream.set_nodelay(true);
                            let (events, stop) = (ev_tx.clone(), stop.clone());
                            let id = next_id;
                            next_id += 1;
                            thread::spawn(move || client_io(id, stream, buffer, events, stop));
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            thread::sleep(Duration::from_millis(20));
                        }
                    }
                }
            });
        }
        let result = control_loop(session, opts, &ev_rx, &stop);
        stop.store(true, Ordering::Relaxed);
        result
    })
}

fn control_loop(
    session: &mut TeleopSession,
    opts: &ServeOptions,
    events: &Receiver<Event>,
    stop: &AtomicBool,
) -> Result<SessionStats, TeleopError> {
    let mut clients: Vec<Client> = Vec::new();
    let hello = ServerMessage::Hello(session.handshake().clone()).line();
    let mut ever_connected = false;
    let mut periods: Vec<f64> = Vec::new();
    let period = Duration::from_secs_f64(session.ts);

    // Returns false when the session should end.
    let mut pump = |session: &mut TeleopSession, clients: &mut Vec<Client>, block: bool| -> bool {
        loop {
            let ev = if block && clients.is_empty() {
                match events.recv_timeout(Duration::from_millis(20)) {
                    Ok(e) => e,
                    Err(_) => return !stop.load(Ordering::Relaxed),
                }
            } else {
                match events.try_recv() {
                    Ok(e) => e,
                    Err(_) => return true,
                }
            };
            match ev {
                Event::Joined(id, tx) => {
                    if tx.send(hello.clone()).is_ok() {
                        clients.push(Client { id, tx });
                        ever_connected = true;
                    }
                }
                Event::Message(id, msg) => {
                    let err = match msg {
                        Ok(m) => session.apply(&m).err(),
                        Err(e) => Some(e),
                    };
                    if let Some(message) = err {
                        session.stats.rejected_messages += 1;
                        if let Some(c) = clients.iter().find(|c| c.id == id) {
                            let _ = c.tx.try_send(ServerMessage::Error { message }.line());
                        }
                    }
                }
                Event::Left(id) => {
                    clients.retain(|c| c.id != id);
                    if opts.stop_on_disconnect && clients.is_empty() && ever_connected {
                        return false;
                    }
                }
            }
        }
    };

    if opts.wait_for_client {
        while clients.is_empty() {
            if stop.load(Ordering::Relaxed) || !pump(session, &mut clients, true) {
                return Ok(finish(session, &clients, &periods));
            }
        }
    }
    let start = Instant::now();
    let mut last_tick = start;
    let mut k: u64 = 0;
    loop {
        if stop.load(Ordering::Relaxed) || opts.max_steps.is_some_and(|m| k >= m) {
            break;
        }
        if !pump(session, &mut clients, false) {
            break;
        }
        let now = Instant::now();
        if k > 0 && !opts.as_fast_as_possible {
            periods.push((now - last_tick).as_secs_f64());
        }
        last_tick = now;
        let (frame, note) = session.tick();
        let mut lines = vec![ServerMessage::Frame(frame).line()];
        if let Some(message) = note {
            lines.push(ServerMessage::Error { message }.line());
        }
        clients.retain(|c| {
            lines.iter().all(|l| {
                if opts.as_fast_as_possible {
                    c.tx.send(l.clone()).is_ok()
                } else {
                    match c.tx.try_send(l.clone()) {
                        Ok(()) => true,
                        Err(TrySendError::Full(_)) => {
                            session.stats.dropped_frames += 1;
                            true
                        }
                        Err(TrySendError::Disconnected(_)) => false,
                    }
                }
            })
        });
        k += 1;
        if !opts.as_fast_as_possible {
            let deadline = start + period * k as u32;
            let now = Instant::now();
            if now > deadline {
                session.stats.deadline_misses += 1;
            } else {
                thread::sleep(deadline - now);
            }
        }
    }
    Ok(finish(session, &clients, &periods))
}

fn finish(session: &mut TeleopSession, clients: &[Client], periods: &[f64]) -> SessionStats {
    if !periods.is_empty() {
        let mut p = periods.to_vec();
        p.sort_by(f64::total_cmp);
        let idx = ((p.len() as f64 * 0.99).ceil() as usize).clamp(1, p.len()) - 1;
        session.stats.p99_period_ms = p[idx] * 1e3;
    }
    let bye = ServerMessage::Bye(session.stats.clone()).line();
    for c in clients {
        let _ = c.tx.send(bye.clone());
    }
    session.stats.clone()
}

/// Minimal blocking client, used by tests and the example client.
pub struct TeleopClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    pub hello: Handshake,
}

impl TeleopClient {
    pub fn connect(addr: &str) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        match serde_json::from_str::<ServerMessage>(&line) {
            Ok(ServerMessage::Hello(hello)) if hello.protocol == PROTOCOL_VERSION => Ok(TeleopClient { reader, writer, hello }),
            Ok(ServerMessage::Hello(h)) => Err(std::io::Error::other(format!("protocol {} not supported", h.protocol))),
            _ => Err(std::io::Error::other(format!("expected hello, got {line:?}"))),
        }
    }

    pub fn send(&mut self, msg: &TeleopMessage) -> std::io::Result<()> {
        let mut s = serde_json::to_string(msg).map_err(std::io::Error::other)?;
        s.push('\n');
        self.writer.write_all(s.as_bytes())
    }

    pub fn send_raw(&mut self, line: &str) -> std::io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")
    }

    /// Next server message; `None` when the server closed the connection.
    pub fn recv(&mut self) -> std::io::Result<Option<ServerMessage>> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        serde_json::from_str(&line).map(Some).map_err(std::io::Error::other)
    }

    pub fn close(self) {
        let _ = self.writer.shutdown(std::net::Shutdown::Both);
    }
}

/// Session for a scenario configuration. The initial pose comes from a
/// `teleop` reference spec (or the reference at t = 0 otherwise), and the
/// first PoI of the schedule is enforced.
pub fn session_from_config<'a>(
    cfg: &crate::scenario::ScenarioConfig,
    pipe: &'a crate::scenario::Pipeline,
    moas: &'a Moas,
) -> Result<TeleopSession<'a>, crate::scenario::ScenarioError> {
    let gen = crate::scenario::ReferenceGen::new(cfg)?;
    let r0 = gen.sample(0.0)?;
    let x0 = crate::scenario::initial_state(cfg, &gen)?;
    let poi = gen.pois()[0].1;
    Ok(TeleopSession::new(
        moas,
        &pipe.plant,
        pipe.cam,
        pipe.fov,
        cfg.rg,
        cfg.init,
        cfg.rg_on,
        x0,
        r0,
        poi,
        cfg.limits.reference_box,
    )?)
}
