//! Standard components and the synthetic DNS demo.
//!
//! | type | output | options |
//! |------|--------|---------|
//! | `trace_source` | linear, initial | `$path`, `$rate` (events/s, 0 = unthrottled) |
//! | `tick` | linear, initial | `$count` (0 = unbounded), `$etype` |
//! | `proto_demux` | demux | `$field` (default `proto`), `$max_categories` (0 = unbounded) |
//! | `switch` | alternative | `$field` (integer port number, default `port`) |
//! | `dns_decode` | linear | |
//! | `pair_matcher` | linear | `$timeout` (trace seconds, default 5.0) |
//! | `count` | linear | `$field` (count only events carrying it) |
//! | `filter` | linear | `$field`, `$equals` |
//! | `file_sink` | linear | `$path` |
//! | `report` | linear | `$stdout` |
//! | `rate_limit` | linear | `$rate` (events/s, 0 = unlimited), `$burst` |
//! | `noop` | linear | |
//! | `stack_send` | linear | `$target`, `$sync` |

mod dns;
mod sources;
pub mod trace;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::time::Instant;

use crate::assembly::{AssemblyError, FactoryRegistry};
use crate::component::{
    Component, ComponentContract, Context, OptionDecl, OutputKind, Port, SendMode, StackError,
    StackErrorKind,
};
use crate::event::{Event, ScalarKind, ScalarValue};
use crate::sensors::SensorWriter;

pub use dns::{DnsDecode, PairMatcher};
pub use sources::{Tick, TraceSource};
pub use trace::{generate, TraceRecord};

/// Demo configuration shipped with the crate.
pub const DEMO_CONFIG: &str = include_str!("../../examples/dns.pandora");

/// Integer-or-float option hook producing a float.
pub(crate) fn float_hook(v: ScalarValue) -> Result<ScalarValue, String> {
    let f = match v {
        ScalarValue::Int(i) => i as f64,
        ScalarValue::Float(f) => f,
        other => return Ok(other),
    };
    if f < 0.0 {
        Err(format!("{f} is negative"))
    } else {
        Ok(ScalarValue::Float(f))
    }
}

pub(crate) fn non_negative(v: ScalarValue) -> Result<ScalarValue, String> {
    match v {
        ScalarValue::Int(i) if i < 0 => Err(format!("{i} is negative")),
        other => Ok(other),
    }
}

pub(crate) fn component_error(ctx: &Context<'_>, message: impl Into<String>) -> StackError {
    StackError::component(ctx.label(), message)
}

/// Registers every standard component.
pub fn register(reg: &FactoryRegistry) -> Result<(), AssemblyError> {
    sources::register(reg)?;
    dns::register(reg)?;

    reg.register(
        ComponentContract::new("proto_demux")
            .output(OutputKind::Demux)
            .with_option(OptionDecl::new("field", ScalarKind::Str).default_value("proto"))
            .with_option(
                OptionDecl::new("max_categories", ScalarKind::Int)
                    .default_value(0i64)
                    .on_set(non_negative),
            ),
        |s| {
            Ok(Box::new(ProtoDemux {
                field: "proto".into(),
                cap: 0,
                dropped: s.counter("dropped")?,
                categories: s.counter("categories")?,
            }))
        },
    )?;
    reg.register(
        ComponentContract::new("switch")
            .output(OutputKind::Alternative)
            .with_option(OptionDecl::new("field", ScalarKind::Str).default_value("port")),
        |_| {
            Ok(Box::new(Switch {
                field: "port".into(),
            }))
        },
    )?;
    reg.register(
        ComponentContract::new("count")
            .with_option(OptionDecl::new("field", ScalarKind::Str).default_value("")),
        |s| {
            Ok(Box::new(Count {
                field: String::new(),
                n: s.counter("n")?,
            }))
        },
    )?;
    reg.register(
        ComponentContract::new("filter")
            .with_option(OptionDecl::new("field", ScalarKind::Str).default_value("proto"))
            .with_option(OptionDecl::new("equals", ScalarKind::Str).default_value("")),
        |s| {
            Ok(Box::new(Filter {
                field: String::new(),
                equals: String::new(),
                passed: s.counter("passed")?,
                dropped: s.counter("dropped")?,
            }))
        },
    )?;
    reg.register(
        ComponentContract::new("file_sink").with_option(OptionDecl::new("path", ScalarKind::Str)),
        |s| {
            Ok(Box::new(FileSink {
                path: None,
                out: None,
                lines: s.counter("lines")?,
            }))
        },
    )?;
    reg.register(
        ComponentContract::new("report")
            .with_option(OptionDecl::new("stdout", ScalarKind::Bool).default_value(false)),
        |s| {
            Ok(Box::new(Report {
                stdout: false,
                events: s.counter("events")?,
            }))
        },
    )?;
    reg.register(
        ComponentContract::new("rate_limit")
            .with_option(
                OptionDecl::new("rate", ScalarKind::Float)
                    .default_value(0.0)
                    .on_set(float_hook),
            )
            .with_option(
                OptionDecl::new("burst", ScalarKind::Int)
                    .default_value(1i64)
                    .on_set(non_negative),
            ),
        |s| {
            Ok(Box::new(RateLimit {
                rate: 0.0,
                burst: 1.0,
                tokens: 1.0,
                last: None,
                passed: s.counter("passed")?,
                dropped: s.counter("dropped")?,
            }))
        },
    )?;
    reg.register(ComponentContract::new("noop"), |_| Ok(Box::new(Noop)))?;
    reg.register(
        ComponentContract::new("stack_send")
            .with_option(OptionDecl::new("target", ScalarKind::Str))
            .with_option(OptionDecl::new("sync", ScalarKind::Bool).default_value(false)),
        |s| {
            Ok(Box::new(StackSend {
                target: None,
                sync: false,
                sent: s.counter("sent")?,
                failed: s.counter("failed")?,
            }))
        },
    )?;
    Ok(())
}

/// A fresh registry holding the standard components.
pub fn registry() -> FactoryRegistry {
    let reg = FactoryRegistry::new();
    register(&reg).expect("standard components register cleanly");
    reg
}

fn str_opt(v: &ScalarValue) -> String {
    v.as_str().unwrap_or_default().to_string()
}

pub struct ProtoDemux {
    field: String,
    cap: usize,
    dropped: SensorWriter,
    categories: SensorWriter,
}

impl Component for ProtoDemux {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        let key = event
            .attr(&self.field)
            .map(|v| v.to_plain_string())
            .unwrap_or_default();
        match ctx.forward_to(Port::Key(&key), event) {
            Err(e) if matches!(e.kind(), StackErrorKind::CategoryLimit { .. }) => {
                self.dropped.add(1);
                log::debug!("{e}");
                Ok(())
            }
            r => {
                self.categories.set(ctx.categories() as i64);
                r
            }
        }
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        match name {
            "field" => self.field = str_opt(value),
            "max_categories" => self.cap = value.as_int().unwrap_or(0) as usize,
            _ => {}
        }
        Ok(())
    }

    fn max_categories(&self) -> Option<usize> {
        (self.cap > 0).then_some(self.cap)
    }
}

pub struct Switch {
    field: String,
}

impl Component for Switch {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        let port = match event.attr(&self.field) {
            None => 0,
            Some(v) => match v.as_int() {
                Some(p) if p >= 0 => p as usize,
                _ => return Err(component_error(ctx, format!("bad port value {v}"))),
            },
        };
        ctx.forward_to(Port::Alt(port), event)
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        if name == "field" {
            self.field = str_opt(value);
        }
        Ok(())
    }
}

pub struct Count {
    field: String,
    n: SensorWriter,
}

impl Component for Count {
    #[inline]
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        if self.field.is_empty() || event.attr(&self.field).is_some() {
            self.n.add(1);
        }
        ctx.forward(event)
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        if name == "field" {
            self.field = str_opt(value);
        }
        Ok(())
    }
}

pub struct Filter {
    field: String,
    equals: String,
    passed: SensorWriter,
    dropped: SensorWriter,
}

impl Component for Filter {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        let hit = event
            .attr(&self.field)
            .is_some_and(|v| v.to_plain_string() == self.equals);
        if hit {
            self.passed.add(1);
            ctx.forward(event)
        } else {
            self.dropped.add(1);
            Ok(())
        }
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        match name {
            "field" => self.field = str_opt(value),
            "equals" => self.equals = str_opt(value),
            _ => {}
        }
        Ok(())
    }
}

pub struct FileSink {
    path: Option<String>,
    out: Option<BufWriter<File>>,
    lines: SensorWriter,
}

impl FileSink {
    fn reopen(&mut self) -> Result<(), String> {
        self.flush();
        let path = self.path.as_deref().ok_or("file_sink needs $path")?;
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| format!("cannot open {path}: {e}"))?;
        self.out = Some(BufWriter::new(f));
        Ok(())
    }

    fn flush(&mut self) {
        if let Some(out) = &mut self.out {
            if let Err(e) = out.flush() {
                log::warn!("file_sink flush: {e}");
            }
        }
    }
}

impl Component for FileSink {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        if let Some(out) = &mut self.out {
            writeln!(out, "{}", event.canonical_line())
                .map_err(|e| component_error(ctx, e.to_string()))?;
            self.lines.add(1);
        }
        ctx.forward(event)
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        if name == "path" {
            self.path = Some(str_opt(value));
            if self.out.is_some() {
                self.reopen()?;
            }
        }
        Ok(())
    }

    fn open(&mut self) -> Result<(), String> {
        self.reopen()
    }

    fn close(&mut self) {
        self.flush();
    }
}

impl Drop for FileSink {
    fn drop(&mut self) {
        self.flush();
    }
}

pub struct Report {
    stdout: bool,
    events: SensorWriter,
}

impl Component for Report {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        self.events.add(1);
        if self.stdout {
            println!("{}", event.canonical_line());
        }
        ctx.forward(event)
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        if name == "stdout" {
            self.stdout = value.as_bool().unwrap_or(false);
        }
        Ok(())
    }
}

/// Token bucket over wall-clock time.
pub struct RateLimit {
    rate: f64,
    burst: f64,
    tokens: f64,
    last: Option<Instant>,
    passed: SensorWriter,
    dropped: SensorWriter,
}

impl Component for RateLimit {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        if self.rate > 0.0 {
            let now = Instant::now();
            if let Some(last) = self.last {
                self.tokens = (self.tokens + now.duration_since(last).as_secs_f64() * self.rate)
                    .min(self.burst);
            }
            self.last = Some(now);
            if self.tokens < 1.0 {
                self.dropped.add(1);
                return Ok(());
            }
            self.tokens -= 1.0;
        }
        self.passed.add(1);
        ctx.forward(event)
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        match name {
            "rate" => self.rate = value.as_float().unwrap_or(0.0),
            "burst" => {
                self.burst = value.as_int().unwrap_or(1).max(1) as f64;
                // The bucket starts full.
                self.tokens = if self.last.is_none() {
                    self.burst
                } else {
                    self.tokens.min(self.burst)
                };
            }
            _ => {}
        }
        Ok(())
    }
}

pub struct Noop;

impl Component for Noop {
    #[inline]
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        ctx.forward(event)
    }
}

/// Hands each event to another stack's initial component, then forwards it.
pub struct StackSend {
    target: Option<String>,
    sync: bool,
    sent: SensorWriter,
    failed: SensorWriter,
}

impl Component for StackSend {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        if let Some(target) = &self.target {
            let mode = if self.sync {
                SendMode::Sync
            } else {
                SendMode::Async
            };
            match ctx.send_to_stack(target, event.clone(), mode) {
                Ok(()) => self.sent.add(1),
                Err(e) => {
                    self.failed.add(1);
                    log::warn!("{}: {e}", ctx.label());
                }
            }
        }
        ctx.forward(event)
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        match name {
            "target" => self.target = Some(str_opt(value)),
            "sync" => self.sync = value.as_bool().unwrap_or(false),
            _ => {}
        }
        Ok(())
    }
}
