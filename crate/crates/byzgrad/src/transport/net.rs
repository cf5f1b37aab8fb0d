//! TCP runtime for the synchronous training protocol.
//!
//! The learner binds a listener, completes a HELLO/ASSIGN handshake with
//! exactly `m` workers (ids are handed out in connection order), and then
//! acts as a [`ReportSource`]: each round it broadcasts PARAMS, collects
//! GRAD frames until every worker answered or the deadline passes, and
//! zero-fills whatever is missing. A worker that sends garbage, a stale
//! round number, or nothing at all simply becomes a flagged zero column —
//! by design the server treats every failure mode as possibly-Byzantine
//! behavior rather than an abort.
//!
//! Workers regenerate the dataset locally, learn their id from ASSIGN, and
//! answer each PARAMS with their shard gradient — honestly, or corrupted by
//! the worker's own attack role when the fault schedule selects them. All
//! randomness is derived from the same streams the in-process simulator
//! uses, so a loopback run reproduces a simulated one bit for bit.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::byzantine::{
    corrupt_report, round_attack_stream, select_faulty, AttackSpec, ByzError, FaultSchedule,
};
use crate::learning::{
    local_gradient, make_shards, train, Dataset, GradientReport, LearnError, ReportSource,
    TrainConfig, TrainResult,
};
use crate::numerics::{DenseMatrix, RngStream};
use crate::transport::wire::{read_frame, write_frame, Tag, WireError, WireMessage};

/// Transport-layer failures. Per-worker trouble during training is *not*
/// an error (it degrades to a flagged zero report); these are the fatal
/// cases: socket setup, handshake, or a broken worker loop.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("malformed frame: {0}")]
    Wire(#[from] WireError),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("learner closed the connection")]
    ConnectionLost,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Byzantine(#[from] ByzError),
}

/// What a reader thread forwards to the round loop.
enum Event {
    Frame(u32, WireMessage),
    /// Framing broke or the connection died; the worker is gone for good.
    Dead(u32),
}

struct WorkerConn {
    writer: TcpStream,
    alive: bool,
}

/// Learner-side server: owns the accepted worker connections and implements
/// [`ReportSource`] so [`train`] can drive it exactly like the simulator.
pub struct LearnerServer {
    dim: usize,
    timeout: Duration,
    conns: Vec<WorkerConn>,
    events: Receiver<Event>,
    readers: Vec<JoinHandle<()>>,
}

/// Bind the learner's listening socket. Returned separately from
/// [`LearnerServer::accept`] so callers can publish the address (or spawn
/// local workers) before blocking on the handshake; connections made in
/// between wait in the OS backlog.
pub fn bind(addr: impl ToSocketAddrs) -> Result<(TcpListener, SocketAddr), TransportError> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

impl LearnerServer {
    /// Accept `m` workers off the listener and complete the handshake. The
    /// listener is dropped once everyone is in; stragglers cannot join
    /// mid-run.
    pub fn accept(
        listener: TcpListener,
        m: usize,
        dim: usize,
        timeout_ms: u64,
    ) -> Result<Self, TransportError> {
        assert!(timeout_ms > 0, "round deadline must be positive");
        let timeout = Duration::from_millis(timeout_ms);
        let (tx, events) = channel();
        let mut conns = Vec::with_capacity(m);
        let mut readers = Vec::with_capacity(m);
        for id in 0..m as u32 {
            let (stream, _) = listener.accept()?;
            stream.set_nodelay(true).ok();
            // The handshake is the one phase where a silent peer should
            // fail fast instead of becoming a zero column.
            stream.set_read_timeout(Some(timeout))?;
            let mut reader = stream.try_clone()?;
            match read_frame(&mut reader) {
                Ok(Some(Ok(msg))) if msg.tag == Tag::Hello => {}
                Ok(Some(Ok(msg))) => {
                    return Err(TransportError::Handshake(format!(
                        "expected HELLO, got {:?}",
                        msg.tag
                    )))
                }
                Ok(Some(Err(e))) => return Err(TransportError::Wire(e)),
                Ok(None) => {
                    return Err(TransportError::Handshake(
                        "connection closed before HELLO".into(),
                    ))
                }
                Err(e) => return Err(TransportError::Handshake(format!("no HELLO: {e}"))),
            }
            let mut writer = stream;
            write_frame(&mut writer, &WireMessage::assign(id))?;
            reader.set_read_timeout(None)?;
            let tx = tx.clone();
            readers.push(std::thread::spawn(move || reader_loop(id, reader, tx)));
            conns.push(WorkerConn {
                writer,
                alive: true,
            });
        }
        Ok(LearnerServer {
            dim,
            timeout,
            conns,
            events,
            readers,
        })
    }

    /// Broadcast DONE with the final parameters and shut the sockets down.
    pub fn finish(mut self, round: u32, theta: &[f64]) {
        let done = WireMessage::done(round, theta);
        for conn in &mut self.conns {
            if conn.alive {
                write_frame(&mut conn.writer, &done).ok();
            }
        }
        // Drop tears the connections down.
    }
}

impl Drop for LearnerServer {
    /// Shut every connection down so reader threads unblock and workers see
    /// EOF; reader clones of the sockets would otherwise keep them open.
    fn drop(&mut self) {
        for conn in &self.conns {
            conn.writer.shutdown(std::net::Shutdown::Both).ok();
        }
        for handle in self.readers.drain(..) {
            handle.join().ok();
        }
    }
}

fn reader_loop(id: u32, mut stream: TcpStream, tx: Sender<Event>) {
    loop {
        match read_frame(&mut stream) {
            Ok(Some(Ok(msg))) => {
                if tx.send(Event::Frame(id, msg)).is_err() {
                    return;
                }
            }
            // A framing error is unrecoverable on a byte stream: once the
            // length prefix lies, nothing downstream can be trusted.
            Ok(Some(Err(_))) | Ok(None) | Err(_) => {
                tx.send(Event::Dead(id)).ok();
                return;
            }
        }
    }
}

impl ReportSource for LearnerServer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn workers(&self) -> usize {
        self.conns.len()
    }

    fn collect(&mut self, round: u64, theta: &[f64]) -> Result<GradientReport, LearnError> {
        let m = self.conns.len();
        let params = WireMessage::params(round as u32, theta);
        for conn in self.conns.iter_mut() {
            if conn.alive && write_frame(&mut conn.writer, &params).is_err() {
                conn.alive = false;
            }
        }
        let mut columns: Vec<Option<Vec<f64>>> = vec![None; m];
        let mut pending = self
            .conns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.alive)
            .map(|(id, _)| id)
            .count();
        let deadline = Instant::now() + self.timeout;
        while pending > 0 {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            match self.events.recv_timeout(deadline - now) {
                Ok(Event::Frame(id, msg)) => {
                    let slot = id as usize;
                    if msg.tag != Tag::Grad || msg.round as u64 != round {
                        // Stale or off-script frames are ignored; the worker
                        // can still make this round's deadline.
                        continue;
                    }
                    if columns[slot].is_some() {
                        continue;
                    }
                    match msg.vector() {
                        Ok(v) if v.len() == self.dim => {
                            columns[slot] = Some(v);
                            pending -= 1;
                        }
                        // A bad payload burns the worker's slot for this
                        // round (it may be Byzantine); framing is intact,
                        // so later rounds may still succeed.
                        _ => {
                            if self.conns[slot].alive {
                                pending -= 1;
                            }
                        }
                    }
                }
                Ok(Event::Dead(id)) => {
                    let slot = id as usize;
                    if self.conns[slot].alive {
                        self.conns[slot].alive = false;
                        if columns[slot].is_none() {
                            pending -= 1;
                        }
                    }
                }
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        let mut flagged = Vec::new();
        let cols: Vec<Vec<f64>> = columns
            .into_iter()
            .enumerate()
            .map(|(id, c)| match c {
                Some(v) => v,
                None => {
                    flagged.push(id as u32);
                    vec![0.0; self.dim]
                }
            })
            .collect();
        Ok(GradientReport {
            gradients: DenseMatrix::from_columns(&cols),
            flagged,
            honest_mean: None,
        })
    }
}

/// Serve a full training run: bind, accept `m` workers, train, broadcast
/// DONE with the final parameters.
pub fn serve_learner(
    addr: impl ToSocketAddrs,
    m: usize,
    dim: usize,
    config: &TrainConfig,
    timeout_ms: u64,
) -> Result<TrainResult, TransportError> {
    let (listener, _) = bind(addr)?;
    let mut server = LearnerServer::accept(listener, m, dim, timeout_ms)?;
    let result = train(&mut server, config)?;
    server.finish(config.rounds as u32, &result.theta);
    Ok(result)
}

/// Everything a worker process needs besides the learner's address: its
/// copy of the dataset, the worker count (to cut shards), and its attack
/// role. `attack_stream` must equal the stream the learner's simulator
/// would use, so networked and simulated runs stay bit-identical.
pub struct WorkerSetup {
    pub data: Dataset,
    pub m: usize,
    pub attack: AttackSpec,
    pub schedule: FaultSchedule,
    pub attack_stream: RngStream,
}

/// What a finished worker saw, mostly for logging and tests.
#[derive(Debug, Clone)]
pub struct WorkerRun {
    pub worker: u32,
    pub rounds: u64,
    pub final_theta: Vec<f64>,
}

/// Run one worker to completion: handshake, then answer every PARAMS with
/// this worker's (possibly corrupted) shard gradient until DONE arrives.
/// Any broken connection or protocol violation is an error — the caller
/// turns that into a nonzero exit code.
pub fn run_worker(
    connect: impl ToSocketAddrs,
    setup: &WorkerSetup,
) -> Result<WorkerRun, TransportError> {
    if matches!(setup.attack, AttackSpec::StealthShift { .. }) {
        return Err(TransportError::Byzantine(ByzError::NeedsCollusion));
    }
    let stream = TcpStream::connect(connect)?;
    stream.set_nodelay(true).ok();
    let mut writer = stream.try_clone()?;
    let mut reader = stream;
    write_frame(&mut writer, &WireMessage::hello())?;
    let assign = match read_frame(&mut reader)? {
        Some(Ok(msg)) if msg.tag == Tag::Assign => msg,
        Some(Ok(msg)) => {
            return Err(TransportError::Protocol(format!(
                "expected ASSIGN, got {:?}",
                msg.tag
            )))
        }
        Some(Err(e)) => return Err(TransportError::Wire(e)),
        None => return Err(TransportError::ConnectionLost),
    };
    let id = assign.worker;
    let shards = make_shards(setup.data.len(), setup.m)?;
    let shard = shards
        .get(id as usize)
        .ok_or_else(|| TransportError::Protocol(format!("assigned id {id} out of range")))?
        .clone();
    let mut rounds = 0u64;
    loop {
        match read_frame(&mut reader)? {
            Some(Ok(msg)) => match msg.tag {
                Tag::Params => {
                    let theta = msg.vector().map_err(TransportError::Wire)?;
                    let round = msg.round as u64;
                    let mut g = local_gradient(&setup.data, &shard, &theta)?;
                    if select_faulty(&setup.schedule, setup.m, round).contains(&id) {
                        let stream = round_attack_stream(&setup.attack_stream, round);
                        g = corrupt_report(&setup.attack, &g, id, &stream)?;
                    }
                    write_frame(&mut writer, &WireMessage::grad(msg.round, id, &g))?;
                    rounds += 1;
                }
                Tag::Done => {
                    let final_theta = msg.vector().map_err(TransportError::Wire)?;
                    return Ok(WorkerRun {
                        worker: id,
                        rounds,
                        final_theta,
                    });
                }
                Tag::Error => {
                    return Err(TransportError::Protocol(format!(
                        "learner error: {}",
                        String::from_utf8_lossy(&msg.payload)
                    )));
                }
                other => {
                    return Err(TransportError::Protocol(format!(
                        "unexpected {other:?} mid-run"
                    )))
                }
            },
            Some(Err(e)) => return Err(TransportError::Wire(e)),
            None => return Err(TransportError::ConnectionLost),
        }
    }
}
