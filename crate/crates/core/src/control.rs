//! Line-oriented control protocol over TCP.
//!
//! Every request is one line (or a `<<` block, see below) and every response
//! starts with either `OK n`, followed by exactly `n` payload lines, or
//! `ERR code message`.
//!
//! ```text
//! LIST                                  handle name alias|- state, per stack
//! DEFS                                  stored definitions, rendered
//! DEFINE <adl>                          store one or more definitions
//! START name [alias]                    -> handle
//! STOP handle
//! PAUSE sel | RESUME sel
//! DUMP [stored|active] sel              -> rendered definition
//! RECONF sel <adl>                      -> plan summary
//! GET stored|active path option         -> literal
//! SET stored|active path option literal -> literal actually stored
//! SENSOR LIST                           name value [stale]
//! SENSOR GET name                       -> value
//! ```
//!
//! `DEFINE` and `RECONF` accept `<<` in place of the definition text; the
//! following lines, up to one holding a single `.`, form the text.
//!
//! Paths are `stack[/seg]*/index`, where `stack` is a name, alias or handle
//! number and a segment is `i.b` (alternative branch `b` of node `i`) or
//! `i{key}` (demux branch `key` of node `i`).

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use thiserror::Error;

use crate::adl::{parse_literal, parse_stack, render_stack, NodePath};
use crate::assembly::{AssemblyError, StackHandle};
use crate::event::ScalarValue;
use crate::kernel::{Kernel, KernelError, Scope, StartOptions};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentPath {
    pub stack: String,
    pub node: NodePath,
}

impl FromStr for ComponentPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (stack, rest) = s
            .split_once('/')
            .ok_or_else(|| format!("path {s:?} has no component index"))?;
        if stack.is_empty() {
            return Err(format!("path {s:?} has no stack"));
        }
        let node = rest.parse().map_err(|e| format!("{e}"))?;
        Ok(ComponentPath {
            stack: stack.to_string(),
            node,
        })
    }
}

impl std::fmt::Display for ComponentPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.stack, self.node)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    List,
    Defs,
    Define(String),
    Start {
        name: String,
        alias: Option<String>,
    },
    Stop(StackHandle),
    Pause(String),
    Resume(String),
    Dump {
        scope: Scope,
        selector: String,
    },
    Reconf {
        selector: String,
        adl: String,
    },
    Get {
        scope: Scope,
        path: ComponentPath,
        option: String,
    },
    Set {
        scope: Scope,
        path: ComponentPath,
        option: String,
        value: ScalarValue,
    },
    SensorList,
    SensorGet(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ok(Vec<String>),
    Err { code: String, message: String },
}

impl Response {
    fn err(code: &str, message: impl Into<String>) -> Response {
        Response::Err {
            code: code.to_string(),
            message: message.into().replace(['\n', '\r'], " "),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Response::Ok(_))
    }

    pub fn lines(&self) -> &[String] {
        match self {
            Response::Ok(l) => l,
            Response::Err { .. } => &[],
        }
    }

    /// Wire form, newline-terminated. A payload entry spanning several
    /// lines arrives as several lines; joining them with `\n` restores it.
    pub fn to_wire(&self) -> String {
        match self {
            Response::Ok(lines) => {
                // String literals may hold raw newlines; count physical lines.
                let n: usize = lines.iter().map(|l| l.split('\n').count()).sum();
                let mut s = format!("OK {n}\n");
                for l in lines {
                    s.push_str(l);
                    s.push('\n');
                }
                s
            }
            Response::Err { code, message } => format!("ERR {code} {message}\n"),
        }
    }

    pub fn read_from(r: &mut impl BufRead) -> io::Result<Response> {
        let head = read_line(r)?;
        if let Some(n) = head.strip_prefix("OK ") {
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, head.clone()))?;
            let mut lines = Vec::with_capacity(n);
            for _ in 0..n {
                lines.push(read_line(r)?);
            }
            Ok(Response::Ok(lines))
        } else if let Some(rest) = head.strip_prefix("ERR ") {
            let (code, message) = rest.split_once(' ').unwrap_or((rest, ""));
            Ok(Response::Err {
                code: code.to_string(),
                message: message.to_string(),
            })
        } else {
            Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("bad response line {head:?}"),
            ))
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Response::Ok(lines) => serde_json::json!({ "ok": true, "lines": lines }),
            Response::Err { code, message } => {
                serde_json::json!({ "ok": false, "code": code, "message": message })
            }
        }
    }
}

fn read_line(r: &mut impl BufRead) -> io::Result<String> {
    let mut s = String::new();
    if r.read_line(&mut s)? == 0 {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    while s.ends_with(['\n', '\r']) {
        s.pop();
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct SyntaxError(pub String);

fn scope(word: &str) -> Result<Scope, SyntaxError> {
    match word.to_ascii_lowercase().as_str() {
        "stored" => Ok(Scope::Stored),
        "active" => Ok(Scope::Active),
        _ => Err(SyntaxError(format!(
            "expected stored or active, got {word:?}"
        ))),
    }
}

/// Splits off the first whitespace-delimited word.
fn word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    }
}

fn need<'a>(w: &'a str, what: &str) -> Result<&'a str, SyntaxError> {
    if w.is_empty() {
        Err(SyntaxError(format!("missing {what}")))
    } else {
        Ok(w)
    }
}

impl Request {
    /// Parses a single request line. Block forms must be collapsed first.
    pub fn parse(line: &str) -> Result<Request, SyntaxError> {
        let (cmd, rest) = word(line.trim());
        let upper = cmd.to_ascii_uppercase();
        let done = |r: Request, rest: &str| {
            if rest.trim().is_empty() {
                Ok(r)
            } else {
                Err(SyntaxError(format!("unexpected {:?}", rest.trim())))
            }
        };
        match upper.as_str() {
            "LIST" => done(Request::List, rest),
            "DEFS" => done(Request::Defs, rest),
            "DEFINE" => Ok(Request::Define(
                need(rest.trim(), "definition")?.to_string(),
            )),
            "START" => {
                let (name, rest) = word(rest);
                let (alias, rest) = word(rest);
                done(
                    Request::Start {
                        name: need(name, "stack name")?.to_string(),
                        alias: (!alias.is_empty()).then(|| alias.to_string()),
                    },
                    rest,
                )
            }
            "STOP" => {
                let (h, rest) = word(rest);
                let h: u64 = need(h, "handle")?
                    .parse()
                    .map_err(|_| SyntaxError(format!("bad handle {h:?}")))?;
                done(Request::Stop(StackHandle(h)), rest)
            }
            "PAUSE" | "RESUME" => {
                let (sel, rest) = word(rest);
                let sel = need(sel, "stack")?.to_string();
                done(
                    if upper == "PAUSE" {
                        Request::Pause(sel)
                    } else {
                        Request::Resume(sel)
                    },
                    rest,
                )
            }
            "DUMP" => {
                let (a, rest) = word(rest);
                let (b, rest) = word(rest);
                let (scope, sel) = if b.is_empty() {
                    (Scope::Stored, a)
                } else {
                    (scope(a)?, b)
                };
                done(
                    Request::Dump {
                        scope,
                        selector: need(sel, "stack")?.to_string(),
                    },
                    rest,
                )
            }
            "RECONF" => {
                let (sel, rest) = word(rest);
                Ok(Request::Reconf {
                    selector: need(sel, "stack")?.to_string(),
                    adl: need(rest.trim(), "definition")?.to_string(),
                })
            }
            "GET" | "SET" => {
                let (sc, rest) = word(rest);
                let scope = scope(sc)?;
                let (path, rest) = word(rest);
                let path: ComponentPath = need(path, "path")?.parse().map_err(SyntaxError)?;
                let (option, rest) = word(rest);
                let option = need(option, "option")?.to_string();
                if upper == "GET" {
                    done(
                        Request::Get {
                            scope,
                            path,
                            option,
                        },
                        rest,
                    )
                } else {
                    let value = parse_literal(need(rest.trim(), "value")?)
                        .map_err(|e| SyntaxError(format!("bad literal: {e}")))?;
                    Ok(Request::Set {
                        scope,
                        path,
                        option,
                        value,
                    })
                }
            }
            "SENSOR" => {
                let (sub, rest) = word(rest);
                match sub.to_ascii_uppercase().as_str() {
                    "LIST" => done(Request::SensorList, rest),
                    "GET" => {
                        let (name, rest) = word(rest);
                        done(
                            Request::SensorGet(need(name, "sensor name")?.to_string()),
                            rest,
                        )
                    }
                    _ => Err(SyntaxError(format!("unknown SENSOR subcommand {sub:?}"))),
                }
            }
            "" => Err(SyntaxError("empty request".into())),
            _ => Err(SyntaxError(format!("unknown command {cmd:?}"))),
        }
    }
}

impl std::fmt::Display for Request {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sc = |s: &Scope| match s {
            Scope::Stored => "stored",
            Scope::Active => "active",
        };
        match self {
            Request::List => write!(f, "LIST"),
            Request::Defs => write!(f, "DEFS"),
            Request::Define(t) => write!(f, "DEFINE {t}"),
            Request::Start { name, alias } => match alias {
                Some(a) => write!(f, "START {name} {a}"),
                None => write!(f, "START {name}"),
            },
            Request::Stop(h) => write!(f, "STOP {h}"),
            Request::Pause(s) => write!(f, "PAUSE {s}"),
            Request::Resume(s) => write!(f, "RESUME {s}"),
            Request::Dump { scope, selector } => write!(f, "DUMP {} {selector}", sc(scope)),
            Request::Reconf { selector, adl } => {
                write!(f, "RECONF {selector} {adl}")
            }
            Request::Get {
                scope,
                path,
                option,
            } => write!(f, "GET {} {path} {option}", sc(scope)),
            Request::Set {
                scope,
                path,
                option,
                value,
            } => write!(f, "SET {} {path} {option} {value}", sc(scope)),
            Request::SensorList => write!(f, "SENSOR LIST"),
            Request::SensorGet(n) => write!(f, "SENSOR GET {n}"),
        }
    }
}

fn error_response(e: KernelError) -> Response {
    let code = match &e {
        KernelError::Parse(_) => "parse",
        KernelError::Invalid(_) => "invalid",
        KernelError::Assembly(a) => match a {
            AssemblyError::NoSuchComponent(_) => "unknown",
            AssemblyError::Option { .. } => "option",
            AssemblyError::Invalid(_) | AssemblyError::Unresolved(_) => "invalid",
            _ => "assembly",
        },
        KernelError::Reconfig(_) => "reconfig",
        KernelError::UnknownStack(_)
        | KernelError::UnknownHandle(_)
        | KernelError::NoSuchComponent(_) => "unknown",
        KernelError::Ambiguous(_) | KernelError::AliasInUse(_) | KernelError::BadAlias(_) => {
            "conflict"
        }
        KernelError::NotRunning(_) => "not_running",
        KernelError::Deadlock(_) => "deadlock",
        KernelError::Option { .. } => "option",
        KernelError::Delivery(_) => "delivery",
    };
    Response::err(code, e.to_string())
}

/// Executes requests against a kernel, one at a time across all sessions.
#[derive(Clone)]
pub struct Controller {
    kernel: Kernel,
    serial: Arc<Mutex<()>>,
}

impl Controller {
    pub fn new(kernel: Kernel) -> Self {
        Controller {
            kernel,
            serial: Arc::new(Mutex::new(())),
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn execute(&self, req: &Request) -> Response {
        let _one = self.serial.lock().unwrap_or_else(|e| e.into_inner());
        match self.run(req) {
            Ok(lines) => Response::Ok(lines),
            Err(e) => error_response(e),
        }
    }

    /// Parses and executes one request line.
    pub fn handle_line(&self, line: &str) -> Response {
        match Request::parse(line) {
            Ok(r) => self.execute(&r),
            Err(e) => Response::err("syntax", e.0),
        }
    }

    fn run(&self, req: &Request) -> Result<Vec<String>, KernelError> {
        let k = &self.kernel;
        Ok(match req {
            Request::List => k
                .list_stacks()
                .into_iter()
                .map(|s| {
                    format!(
                        "{} {} {} {}",
                        s.handle,
                        s.name,
                        s.alias.as_deref().unwrap_or("-"),
                        s.state
                    )
                })
                .collect(),
            Request::Defs => k
                .stored_names()
                .into_iter()
                .filter_map(|n| k.stored(&n))
                .map(|d| render_stack(&d))
                .collect(),
            Request::Define(text) => k.load_config(text)?,
            Request::Start { name, alias } => {
                let h = k.start_stack(
                    name.as_str(),
                    StartOptions {
                        alias: alias.clone(),
                        ..Default::default()
                    },
                )?;
                vec![h.to_string()]
            }
            Request::Stop(h) => {
                k.stop_stack(*h)?;
                vec![]
            }
            Request::Pause(sel) => {
                k.pause_stack(k.resolve(sel)?)?;
                vec![]
            }
            Request::Resume(sel) => {
                k.resume_stack(k.resolve(sel)?)?;
                vec![]
            }
            Request::Dump { scope, selector } => {
                let def = match scope {
                    Scope::Stored => k
                        .stored(selector)
                        .ok_or_else(|| KernelError::UnknownStack(selector.clone()))?,
                    Scope::Active => k.active_definition(k.resolve(selector)?)?,
                };
                vec![render_stack(&def)]
            }
            Request::Reconf { selector, adl } => {
                let def = parse_stack(adl)?;
                let plan = k.reconfigure(k.resolve(selector)?, def)?;
                vec![format!(
                    "kept {} created {} destroyed {} rewired {} updated {} reset {}",
                    plan.keep.len(),
                    plan.create.len(),
                    plan.destroy.len(),
                    plan.rewire.len(),
                    plan.option_updates.len(),
                    plan.demux_resets.len()
                )]
            }
            Request::Get {
                scope,
                path,
                option,
            } => vec![k
                .get_option(*scope, &path.stack, &path.node, option)?
                .to_string()],
            Request::Set {
                scope,
                path,
                option,
                value,
            } => vec![k
                .set_option(*scope, &path.stack, &path.node, option, value.clone())?
                .to_string()],
            Request::SensorList => k
                .sensors()
                .list()
                .into_iter()
                .map(|(name, v, stale)| {
                    if stale {
                        format!("{name} {v} stale")
                    } else {
                        format!("{name} {v}")
                    }
                })
                .collect(),
            Request::SensorGet(name) => {
                let s = k
                    .sensors()
                    .lookup(name)
                    .map_err(|_| KernelError::UnknownStack(format!("sensor {name}")))?;
                vec![s.read().to_string()]
            }
        })
    }
}

/// Per-connection state: collects `<<` blocks into single requests.
pub struct Session {
    controller: Controller,
    block: Option<(String, String)>,
}

impl Session {
    pub fn new(controller: Controller) -> Self {
        Session {
            controller,
            block: None,
        }
    }

    /// Feeds one input line; returns a response once a request is complete.
    pub fn feed(&mut self, line: &str) -> Option<Response> {
        if let Some((head, body)) = &mut self.block {
            if line.trim() == "." {
                let full = format!("{head} {body}");
                self.block = None;
                return Some(self.controller.handle_line(&full));
            }
            body.push_str(line);
            body.push('\n');
            return None;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return None;
        }
        if let Some(head) = trimmed.strip_suffix("<<") {
            let cmd = word(head).0.to_ascii_uppercase();
            if cmd == "DEFINE" || cmd == "RECONF" {
                self.block = Some((head.trim().to_string(), String::new()));
                return None;
            }
        }
        Some(self.controller.handle_line(trimmed))
    }
}

/// A running control server.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

/// Binds `addr` and serves each client on its own thread.
pub fn serve(controller: Controller, addr: impl ToSocketAddrs) -> io::Result<Server> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::Builder::new()
        .name("control".into())
        .spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let c = controller.clone();
                        std::thread::spawn(move || {
                            if let Err(e) = session(c, stream) {
                                log::debug!("control session ended: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("accept: {e}"),
                }
            }
        })?;
    Ok(Server {
        addr,
        stop,
        thread: Some(thread),
    })
}

fn session(controller: Controller, stream: TcpStream) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    let mut input = BufReader::new(stream);
    let mut s = Session::new(controller);
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Ok(());
        }
        if let Some(resp) = s.feed(line.trim_end_matches(['\n', '\r'])) {
            out.write_all(resp.to_wire().as_bytes())?;
            out.flush()?;
        }
    }
}

/// Blocking protocol client.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Client> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    /// Sends one request line; multi-line definition text is sent as a
    /// `<<` block.
    pub fn send_line(&mut self, line: &str) -> io::Result<Response> {
        if line.contains('\n') {
            let (head, body) = line.split_once('\n').expect("newline");
            let (cmd, rest) = word(head);
            let (lead, text) = if cmd.eq_ignore_ascii_case("RECONF") {
                let (sel, rest) = word(rest);
                (format!("{cmd} {sel}"), format!("{rest}\n{body}"))
            } else {
                (cmd.to_string(), format!("{rest}\n{body}"))
            };
            if text.lines().any(|l| l.trim() == ".") {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    "definition text contains a lone '.' line",
                ));
            }
            writeln!(self.writer, "{lead} <<")?;
            for l in text.lines() {
                writeln!(self.writer, "{l}")?;
            }
            writeln!(self.writer, ".")?;
        } else {
            writeln!(self.writer, "{line}")?;
        }
        self.writer.flush()?;
        Response::read_from(&mut self.reader)
    }

    pub fn request(&mut self, req: &Request) -> io::Result<Response> {
        self.send_line(&req.to_string())
    }

    pub fn close(self) {
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}

/// Turns a command-line value into a literal: anything that already parses
/// as one is kept, everything else becomes a quoted string.
pub fn literal_arg(raw: &str) -> ScalarValue {
    parse_literal(raw).unwrap_or_else(|_| ScalarValue::Str(raw.to_string()))
}
