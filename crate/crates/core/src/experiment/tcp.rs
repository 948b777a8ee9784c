use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use log::{debug, info, warn};

use super::wire::{Message, PROTOCOL_VERSION};
use super::{Evaluation, Experiment, ExperimentError};
use crate::space::ParameterSpace;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Optimizer-side client of an experiment server.
#[derive(Debug)]
pub struct TcpExperiment {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    next_id: u64,
    /// Ids whose reply never arrived in time; a late reply is dropped.
    abandoned: Vec<u64>,
    closed: bool,
}

impl TcpExperiment {
    /// Connects and reads the experiment's `hello`.
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, ExperimentError> {
        let mut last_err = None;
        let mut stream = None;
        for sock in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&sock, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        let stream = match (stream, last_err) {
            (Some(s), _) => s,
            (None, Some(e)) => return Err(e.into()),
            (None, None) => {
                return Err(ExperimentError::Config("address resolved to nothing".into()))
            }
        };
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        let mut client = Self {
            reader: BufReader::new(stream),
            writer,
            dim: 0,
            lower: Vec::new(),
            upper: Vec::new(),
            next_id: 0,
            abandoned: Vec::new(),
            closed: false,
        };
        match client.read_message()? {
            Message::Hello {
                version,
                dim,
                lower,
                upper,
            } => {
                if version != PROTOCOL_VERSION {
                    return Err(ExperimentError::Protocol(format!(
                        "unsupported protocol version {version}"
                    )));
                }
                if lower.len() != dim || upper.len() != dim {
                    return Err(ExperimentError::Protocol(
                        "hello bounds do not match its dim".into(),
                    ));
                }
                client.dim = dim;
                client.lower = lower;
                client.upper = upper;
            }
            other => {
                return Err(ExperimentError::Protocol(format!(
                    "expected hello, got {other:?}"
                )))
            }
        }
        debug!("connected to experiment with dim {}", client.dim);
        Ok(client)
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Fails with a configuration error if the experiment's dimension differs
    /// from the session's.
    pub fn check_space(&self, space: &ParameterSpace) -> Result<(), ExperimentError> {
        if self.dim != space.dim() {
            return Err(ExperimentError::Config(format!(
                "experiment announced dim {}, session has dim {}",
                self.dim,
                space.dim()
            )));
        }
        Ok(())
    }

    fn send(&mut self, msg: &Message) -> Result<(), ExperimentError> {
        self.writer.write_all(msg.to_line().as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn read_message(&mut self) -> Result<Message, ExperimentError> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line)?;
        if n == 0 {
            self.closed = true;
            return Err(ExperimentError::Transport("connection closed by experiment".into()));
        }
        if !line.ends_with('\n') {
            self.closed = true;
            return Err(ExperimentError::Transport("connection closed mid-message".into()));
        }
        Message::from_line(&line)
            .map_err(|e| ExperimentError::Protocol(format!("unparsable line {line:?}: {e}")))
    }
}

impl Experiment for TcpExperiment {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation, ExperimentError> {
        if self.closed {
            return Err(ExperimentError::Transport("connection is closed".into()));
        }
        if x.len() != self.dim {
            return Err(ExperimentError::Config(format!(
                "expected {} parameters, got {}",
                self.dim,
                x.len()
            )));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.send(&Message::Eval {
            id,
            params: x.to_vec(),
        })?;
        loop {
            let reply = match self.read_message() {
                Ok(m) => m,
                Err(e) => {
                    self.abandoned.push(id);
                    return Err(e);
                }
            };
            match reply {
                Message::Result { id: got, cost, bad } if got == id => {
                    return Ok(Evaluation { raw_cost: cost, bad })
                }
                Message::Error { id: got, message } if got == id => {
                    return Err(ExperimentError::Transport(format!("experiment error: {message}")))
                }
                Message::Result { id: got, .. } | Message::Error { id: got, .. }
                    if self.abandoned.contains(&got) =>
                {
                    debug!("dropping late reply to abandoned request {got}");
                }
                Message::Shutdown => {
                    self.closed = true;
                    return Err(ExperimentError::Transport("experiment shut down".into()));
                }
                other => {
                    return Err(ExperimentError::Protocol(format!(
                        "expected reply to request {id}, got {other:?}"
                    )))
                }
            }
        }
    }

    fn shutdown(&mut self) -> Result<(), ExperimentError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        self.send(&Message::Shutdown)
    }
}

/// How a served connection ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEnd {
    /// The optimizer sent `shutdown`.
    Shutdown,
    /// The optimizer closed the connection.
    Disconnected,
}

fn request_id(line: &str) -> u64 {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64))
        .unwrap_or(0)
}

/// Serves one optimizer connection: sends `hello`, then answers each `eval`
/// in order. Malformed lines get an `error` reply and the connection stays up.
pub fn serve_connection<E: Experiment + ?Sized>(
    stream: TcpStream,
    experiment: &mut E,
    space: &ParameterSpace,
) -> io::Result<SessionEnd> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let hello = Message::Hello {
        version: PROTOCOL_VERSION,
        dim: space.dim(),
        lower: space.lower().to_vec(),
        upper: space.upper().to_vec(),
    };
    writer.write_all(hello.to_line().as_bytes())?;
    writer.flush()?;

    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(SessionEnd::Disconnected);
        }
        let line = String::from_utf8_lossy(&buf);
        let reply = match Message::from_line(&line) {
            Ok(Message::Shutdown) => return Ok(SessionEnd::Shutdown),
            Ok(Message::Eval { id, params }) => {
                if params.len() != space.dim() {
                    Message::Error {
                        id,
                        message: format!("expected {} parameters, got {}", space.dim(), params.len()),
                    }
                } else {
                    match experiment.evaluate(&params) {
                        Ok(ev) => Message::Result {
                            id,
                            cost: ev.raw_cost,
                            bad: ev.bad,
                        },
                        Err(e) => Message::Error {
                            id,
                            message: e.to_string(),
                        },
                    }
                }
            }
            Ok(other) => Message::Error {
                id: request_id(&line),
                message: format!("unexpected message from optimizer: {other:?}"),
            },
            Err(e) => {
                warn!("malformed line from optimizer: {e}");
                Message::Error {
                    id: request_id(&line),
                    message: format!("malformed message: {e}"),
                }
            }
        };
        writer.write_all(reply.to_line().as_bytes())?;
        writer.flush()?;
    }
}

/// A listening experiment that serves one optimizer at a time.
pub struct ExperimentServer<E> {
    listener: TcpListener,
    experiment: E,
    space: ParameterSpace,
}

impl<E: Experiment> ExperimentServer<E> {
    pub fn bind<A: ToSocketAddrs>(addr: A, experiment: E, space: ParameterSpace) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            experiment,
            space,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts and serves a single connection.
    pub fn serve_one(&mut self) -> io::Result<SessionEnd> {
        let (stream, peer) = self.listener.accept()?;
        info!("optimizer connected from {peer}");
        serve_connection(stream, &mut self.experiment, &self.space)
    }

    /// Serves connections until an optimizer sends `shutdown`.
    pub fn serve_until_shutdown(&mut self) -> io::Result<()> {
        loop {
            match self.serve_one() {
                Ok(SessionEnd::Shutdown) => return Ok(()),
                Ok(SessionEnd::Disconnected) => info!("optimizer disconnected"),
                Err(e) => warn!("connection failed: {e}"),
            }
        }
    }

    pub fn into_experiment(self) -> E {
        self.experiment
    }
}
