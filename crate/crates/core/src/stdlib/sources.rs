use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::time::{Duration, Instant};

use crate::assembly::{AssemblyError, FactoryRegistry};
use crate::component::{Component, ComponentContract, Context, OptionDecl, Production, StackError};
use crate::event::{Event, EventType, ScalarKind, ScalarValue};
use crate::sensors::SensorWriter;

use super::trace::TraceRecord;
use super::{float_hook, non_negative};

pub(super) fn register(reg: &FactoryRegistry) -> Result<(), AssemblyError> {
    reg.register(
        ComponentContract::new("trace_source")
            .initial()
            .with_option(OptionDecl::new("path", ScalarKind::Str))
            .with_option(
                OptionDecl::new("rate", ScalarKind::Float)
                    .default_value(0.0)
                    .on_set(float_hook),
            ),
        |s| {
            Ok(Box::new(TraceSource {
                path: None,
                rate: 0.0,
                lines: None,
                line_no: 0,
                next_due: None,
                done: false,
                emitted: s.counter("emitted")?,
                malformed: s.counter("malformed")?,
            }))
        },
    )?;
    reg.register(
        ComponentContract::new("tick")
            .initial()
            .with_option(
                OptionDecl::new("count", ScalarKind::Int)
                    .default_value(0i64)
                    .on_set(non_negative),
            )
            .with_option(
                OptionDecl::new("etype", ScalarKind::Str)
                    .default_value("tick")
                    .on_set(|v| match &v {
                        ScalarValue::Str(s) if EventType::intern(s).is_err() => {
                            Err(format!("{s:?} is not an event type"))
                        }
                        _ => Ok(v),
                    }),
            ),
        |s| {
            Ok(Box::new(Tick {
                count: 0,
                seq: 0,
                etype: EventType::intern("tick").expect("identifier"),
                stopped: false,
                emitted: s.counter("emitted")?,
            }))
        },
    )?;
    Ok(())
}

/// Replays a trace file, one `pkt` event per line.
pub struct TraceSource {
    path: Option<String>,
    rate: f64,
    lines: Option<Lines<BufReader<File>>>,
    line_no: usize,
    next_due: Option<Instant>,
    done: bool,
    emitted: SensorWriter,
    malformed: SensorWriter,
}

impl TraceSource {
    fn next_record(&mut self) -> Option<TraceRecord> {
        let lines = self.lines.as_mut()?;
        loop {
            let line = match lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    log::warn!("trace read error: {e}");
                    return None;
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            match TraceRecord::parse(&line, self.line_no) {
                Ok(r) => return Some(r),
                Err(e) => {
                    self.malformed.add(1);
                    log::warn!("{e}");
                }
            }
        }
    }
}

impl Component for TraceSource {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        ctx.forward(event)
    }

    fn produce(&mut self, ctx: &mut Context<'_>) -> Result<Production, StackError> {
        if self.done {
            return Ok(Production::Exhausted);
        }
        let now = Instant::now();
        if let Some(due) = self.next_due {
            if now < due {
                return Ok(Production::Idle(due - now));
            }
        }
        let Some(rec) = self.next_record() else {
            self.done = true;
            return Ok(Production::Exhausted);
        };
        if self.rate > 0.0 {
            let step = Duration::from_secs_f64(1.0 / self.rate);
            self.next_due = Some(self.next_due.map_or(now, |d| d.max(now - step)) + step);
        }
        self.emitted.add(1);
        ctx.forward(rec.to_event())?;
        Ok(Production::Emitted)
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        match name {
            "path" => {
                self.path = value.as_str().map(str::to_string);
                if self.lines.is_some() {
                    self.open()?;
                }
            }
            "rate" => {
                self.rate = value.as_float().unwrap_or(0.0);
                self.next_due = None;
            }
            _ => {}
        }
        Ok(())
    }

    fn open(&mut self) -> Result<(), String> {
        let path = self.path.as_deref().ok_or("trace_source needs $path")?;
        let f = File::open(path).map_err(|e| format!("cannot read {path}: {e}"))?;
        self.lines = Some(BufReader::new(f).lines());
        self.line_no = 0;
        self.done = false;
        Ok(())
    }

    fn stop(&mut self) {
        self.done = true;
    }
}

/// Emits `count` events (0 = until stopped) carrying a `seq` attribute.
pub struct Tick {
    count: u64,
    seq: u64,
    etype: EventType,
    stopped: bool,
    emitted: SensorWriter,
}

impl Component for Tick {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        ctx.forward(event)
    }

    fn produce(&mut self, ctx: &mut Context<'_>) -> Result<Production, StackError> {
        if self.stopped || (self.count > 0 && self.seq >= self.count) {
            return Ok(Production::Exhausted);
        }
        let ev = Event::builder(self.etype)
            .attr("seq", self.seq as i64)
            .build();
        self.seq += 1;
        self.emitted.add(1);
        ctx.forward(ev)?;
        Ok(Production::Emitted)
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        match name {
            "count" => self.count = value.as_int().unwrap_or(0) as u64,
            "etype" => {
                self.etype = EventType::intern(value.as_str().unwrap_or("tick"))
                    .map_err(|e| e.to_string())?
            }
            _ => {}
        }
        Ok(())
    }

    fn stop(&mut self) {
        self.stopped = true;
    }
}
