//! Line-delimited JSON protocol for driving an [`Environment`] from another process.
//!
//! Each request is one JSON object on one line with a `type` of `hello`,
//! `reset`, `step` or `close` and an optional `id` that is echoed back. Every
//! request gets exactly one response line carrying a per-session `seq`
//! counter. Numbers are written in shortest round-trip form, so a remote
//! trajectory is bit-identical to an in-process one.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::environment::{EnvConfig, Environment, EpisodeSource, ObservationLayout, StepInfo, StepResult};
use crate::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

/// Environment variable holding the default TCP port.
pub const PORT_ENV: &str = "STRUCTCTL_PORT";
pub const DEFAULT_PORT: u16 = 7450;

/// Longest accepted request line in bytes.
pub const MAX_LINE_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Hello,
    Reset {
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode_source: Option<EpisodeSource>,
    },
    Step {
        action: Vec<f64>,
    },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RequestEnvelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<Value>,
    #[serde(flatten)]
    request: Request,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseBody {
    Hello {
        protocol: u32,
        obs_dim: usize,
        act_dim: usize,
        layout: ObservationLayout,
        dt: f64,
        max_force: f64,
    },
    /// Reply to `reset` (no reward, `info` null) and `step`.
    State {
        obs: Vec<f64>,
        reward: f64,
        done: bool,
        info: Option<StepInfo>,
    },
    Closed,
    Error {
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    #[serde(flatten)]
    pub body: ResponseBody,
}

impl Response {
    /// One JSON line without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|e| {
            // Only reachable with non-finite numbers, which the environment rejects.
            format!(
                r#"{{"seq":{},"type":"error","code":"numerical","message":{}}}"#,
                self.seq,
                Value::String(e.to_string())
            )
        })
    }

    pub fn is_error(&self) -> bool {
        matches!(self.body, ResponseBody::Error { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SessionOptions {
    /// Accept `record` episode sources that read files on the server.
    pub allow_file_sources: bool,
}

/// One client's view of an environment.
#[derive(Debug)]
pub struct Session {
    env: Environment,
    options: SessionOptions,
    seq: u64,
    closed: bool,
}

impl Session {
    pub fn new(config: EnvConfig, options: SessionOptions) -> Result<Self> {
        Ok(Self {
            env: Environment::new(config)?,
            options,
            seq: 0,
            closed: false,
        })
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    /// Decode and answer one request line. Never panics on malformed input.
    pub fn handle_line(&mut self, line: &str) -> Response {
        let value: Value = match serde_json::from_str(line.trim()) {
            Ok(v) => v,
            Err(e) => return self.respond(None, parse_error(e.to_string())),
        };
        let id = value.get("id").cloned();
        match serde_json::from_value::<RequestEnvelope>(value) {
            Ok(envelope) => self.handle(envelope.id, envelope.request),
            Err(e) => self.respond(id, parse_error(e.to_string())),
        }
    }

    pub fn handle(&mut self, id: Option<Value>, request: Request) -> Response {
        let body = if self.closed {
            error_body(&Error::Lifecycle("session is closed".into()))
        } else {
            match self.dispatch(request) {
                Ok(body) => body,
                Err(e) => error_body(&e),
            }
        };
        self.respond(id, body)
    }

    fn dispatch(&mut self, request: Request) -> Result<ResponseBody> {
        match request {
            Request::Hello => {
                let cfg = self.env.config();
                Ok(ResponseBody::Hello {
                    protocol: PROTOCOL_VERSION,
                    obs_dim: self.env.obs_dim(),
                    act_dim: self.env.act_dim(),
                    layout: self.env.layout().clone(),
                    dt: cfg.dt,
                    max_force: cfg.max_force,
                })
            }
            Request::Reset { seed, episode_source } => {
                if matches!(episode_source, Some(EpisodeSource::Record { .. })) && !self.options.allow_file_sources {
                    return Err(Error::Contract("file-backed episode sources are disabled on this server".into()));
                }
                let obs = self.env.reset(seed, episode_source.as_ref())?;
                Ok(ResponseBody::State {
                    obs: obs.flat(),
                    reward: 0.0,
                    done: false,
                    info: None,
                })
            }
            Request::Step { action } => {
                let StepResult {
                    observation,
                    reward,
                    done,
                    info,
                } = self.env.step(&action)?;
                Ok(ResponseBody::State {
                    obs: observation.flat(),
                    reward,
                    done,
                    info: Some(info),
                })
            }
            Request::Close => {
                self.closed = true;
                Ok(ResponseBody::Closed)
            }
        }
    }

    fn respond(&mut self, id: Option<Value>, body: ResponseBody) -> Response {
        let seq = self.seq;
        self.seq += 1;
        Response { seq, id, body }
    }
}

fn parse_error(message: String) -> ResponseBody {
    ResponseBody::Error {
        code: "parse".into(),
        message,
    }
}

fn error_body(e: &Error) -> ResponseBody {
    ResponseBody::Error {
        code: e.category().into(),
        message: e.to_string(),
    }
}

/// Read one line of at most [`MAX_LINE_BYTES`]. `None` at end of input;
/// `Some(Err(..))` for an overlong or non-UTF-8 line, which is consumed.
fn read_request_line<R: BufRead>(reader: &mut R, buf: &mut Vec<u8>) -> std::io::Result<Option<Result<String, String>>> {
    buf.clear();
    let n = reader.by_ref().take(MAX_LINE_BYTES as u64 + 1).read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') && n > MAX_LINE_BYTES {
        // Drain the rest of the oversized line.
        let mut sink = Vec::new();
        while reader.by_ref().take(MAX_LINE_BYTES as u64).read_until(b'\n', &mut sink)? > 0 {
            if sink.last() == Some(&b'\n') {
                break;
            }
            sink.clear();
        }
        return Ok(Some(Err(format!("request line exceeds {MAX_LINE_BYTES} bytes"))));
    }
    Ok(Some(String::from_utf8(std::mem::take(buf)).map_err(|_| "request line is not valid UTF-8".to_string())))
}

/// Serve requests from `reader` until end of input or `close`.
pub fn serve_stream<R: BufRead, W: Write>(session: &mut Session, mut reader: R, mut writer: W) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        let line = match read_request_line(&mut reader, &mut buf).map_err(|e| Error::io("<stream>", e))? {
            None => break,
            Some(line) => line,
        };
        let response = match line {
            Ok(line) if line.trim().is_empty() => continue,
            Ok(line) => session.handle_line(&line),
            Err(message) => session.respond(None, parse_error(message)),
        };
        let mut line = response.to_line();
        line.push('\n');
        writer.write_all(line.as_bytes()).map_err(|e| Error::io("<stream>", e))?;
        writer.flush().map_err(|e| Error::io("<stream>", e))?;
        if session.is_closed() {
            break;
        }
    }
    Ok(())
}

/// Serve on standard input and output.
pub fn serve_stdio(config: EnvConfig, options: SessionOptions) -> Result<()> {
    let mut session = Session::new(config, options)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_stream(&mut session, stdin.lock(), stdout.lock())
}

/// Accept connections, one thread and one independent session each.
/// Returns after `max_sessions` connections have been accepted and served, or never.
pub fn serve_tcp(listener: TcpListener, config: EnvConfig, options: SessionOptions, max_sessions: Option<usize>) -> Result<()> {
    config.validate()?;
    let mut handles = Vec::new();
    for (accepted, stream) in listener.incoming().enumerate() {
        let stream = match stream {
            Ok(s) => s,
            Err(_) => continue,
        };
        let config = config.clone();
        handles.push(std::thread::spawn(move || {
            // A failed connection only ends its own session.
            let _ = serve_connection(stream, config, options);
        }));
        if max_sessions.is_some_and(|m| accepted + 1 >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

fn serve_connection(stream: TcpStream, config: EnvConfig, options: SessionOptions) -> Result<()> {
    // One small reply per request: Nagle plus delayed ACKs would stall every round trip.
    stream.set_nodelay(true).map_err(|e| Error::io("<tcp>", e))?;
    let reader = BufReader::new(stream.try_clone().map_err(|e| Error::io("<tcp>", e))?);
    let mut session = Session::new(config, options)?;
    serve_stream(&mut session, reader, &stream)
}

/// Minimal blocking client, mainly for replay checks and tooling.
pub struct Client<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
}

impl Client<BufReader<TcpStream>, TcpStream> {
    pub fn connect(addr: impl std::net::ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::io("<tcp>", e))?;
        stream.set_nodelay(true).map_err(|e| Error::io("<tcp>", e))?;
        let reader = BufReader::new(stream.try_clone().map_err(|e| Error::io("<tcp>", e))?);
        Ok(Client::new(reader, stream))
    }
}

impl<R: BufRead, W: Write> Client<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            next_id: 0,
        }
    }

    /// Send a request and wait for its response. Error responses become [`Error::Contract`].
    pub fn request(&mut self, request: Request) -> Result<Response> {
        let envelope = RequestEnvelope {
            id: Some(Value::from(self.next_id)),
            request,
        };
        self.next_id += 1;
        let mut line = serde_json::to_string(&envelope)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes()).map_err(|e| Error::io("<client>", e))?;
        self.writer.flush().map_err(|e| Error::io("<client>", e))?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply).map_err(|e| Error::io("<client>", e))? == 0 {
            return Err(Error::Contract("server closed the connection".into()));
        }
        let response: Response = serde_json::from_str(&reply)?;
        if let ResponseBody::Error { code, message } = &response.body {
            return Err(Error::Contract(format!("server error [{code}]: {message}")));
        }
        Ok(response)
    }
}
