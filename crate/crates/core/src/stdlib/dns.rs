use std::collections::BTreeMap;

use crate::assembly::{AssemblyError, FactoryRegistry};
use crate::component::{Component, ComponentContract, Context, OptionDecl, StackError};
use crate::event::{Event, EventType, ScalarKind, ScalarValue};
use crate::sensors::SensorWriter;

use super::float_hook;

pub(super) fn register(reg: &FactoryRegistry) -> Result<(), AssemblyError> {
    reg.register(ComponentContract::new("dns_decode"), |s| {
        Ok(Box::new(DnsDecode {
            etype: EventType::intern("dns").expect("identifier"),
            decoded: s.counter("decoded")?,
            malformed: s.counter("malformed")?,
        }))
    })?;
    reg.register(
        ComponentContract::new("pair_matcher").with_option(
            OptionDecl::new("timeout", ScalarKind::Float)
                .default_value(5.0)
                .on_set(float_hook),
        ),
        |s| {
            Ok(Box::new(PairMatcher {
                timeout: 5.0,
                open: BTreeMap::new(),
                oldest: f64::INFINITY,
                etype: EventType::intern("txn").expect("identifier"),
                inputs: s.counter("inputs")?,
                pending: s.counter("pending")?,
                matched: s.counter("matched")?,
                orphans: s.counter("orphans")?,
            }))
        },
    )?;
    Ok(())
}

/// Turns `pkt` records carrying `qid`, `qname` and `is_response` into `dns`
/// events with a `qr` attribute of `query` or `response`. Anything else is
/// dropped and counted as malformed.
pub struct DnsDecode {
    etype: EventType,
    decoded: SensorWriter,
    malformed: SensorWriter,
}

impl Component for DnsDecode {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        let fields = (
            event.attr("ts").and_then(ScalarValue::as_float),
            event.attr("src").and_then(ScalarValue::as_str),
            event.attr("dst").and_then(ScalarValue::as_str),
            event.attr("qid").and_then(ScalarValue::as_int),
            event.attr("qname").and_then(ScalarValue::as_str),
            event.attr("is_response").and_then(ScalarValue::as_bool),
        );
        let (Some(ts), Some(src), Some(dst), Some(qid), Some(qname), Some(resp)) = fields else {
            self.malformed.add(1);
            return Ok(());
        };
        let out = Event::builder(self.etype)
            .attr("ts", ts)
            .attr("src", src)
            .attr("dst", dst)
            .attr("qid", qid)
            .attr("qname", qname)
            .attr("qr", if resp { "response" } else { "query" })
            .build();
        self.decoded.add(1);
        ctx.forward(out)
    }
}

type Key = (String, String, i64);

/// Pairs queries with responses on (client, server, qid) and emits one `txn`
/// event per pair.
///
/// Every input ends up in exactly one of three places: `matched` (both
/// halves of a transaction), `orphans` (responses without a query,
/// unparseable inputs, queries replaced by a newer one with the same key or
/// older than `$timeout` in trace time) or `pending`.
pub struct PairMatcher {
    timeout: f64,
    open: BTreeMap<Key, (f64, String)>,
    oldest: f64,
    etype: EventType,
    inputs: SensorWriter,
    pending: SensorWriter,
    matched: SensorWriter,
    orphans: SensorWriter,
}

impl PairMatcher {
    fn expire(&mut self, now: f64) {
        if self.oldest + self.timeout >= now {
            return;
        }
        let before = self.open.len();
        let timeout = self.timeout;
        self.open.retain(|_, (ts, _)| *ts + timeout >= now);
        self.orphans.add((before - self.open.len()) as i64);
        self.oldest = self
            .open
            .values()
            .map(|(ts, _)| *ts)
            .fold(f64::INFINITY, f64::min);
    }
}

impl Component for PairMatcher {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        self.inputs.add(1);
        let fields = (
            event.attr("ts").and_then(ScalarValue::as_float),
            event.attr("src").and_then(ScalarValue::as_str),
            event.attr("dst").and_then(ScalarValue::as_str),
            event.attr("qid").and_then(ScalarValue::as_int),
            event.attr("qr").and_then(ScalarValue::as_str),
        );
        let (Some(ts), Some(src), Some(dst), Some(qid), Some(qr)) = fields else {
            self.orphans.add(1);
            return Ok(());
        };
        self.expire(ts);
        let result = match qr {
            "query" => {
                let qname = event
                    .attr("qname")
                    .map(|v| v.to_plain_string())
                    .unwrap_or_default();
                if self
                    .open
                    .insert((src.to_string(), dst.to_string(), qid), (ts, qname))
                    .is_some()
                {
                    self.orphans.add(1);
                }
                self.oldest = self.oldest.min(ts);
                Ok(())
            }
            "response" => match self.open.remove(&(dst.to_string(), src.to_string(), qid)) {
                Some((qts, qname)) => {
                    self.matched.add(2);
                    let txn = Event::builder(self.etype)
                        .attr("ts", qts)
                        .attr("client", dst)
                        .attr("server", src)
                        .attr("qid", qid)
                        .attr("qname", qname)
                        .attr("latency", ts - qts)
                        .build();
                    ctx.forward(txn)
                }
                None => {
                    self.orphans.add(1);
                    Ok(())
                }
            },
            _ => {
                self.orphans.add(1);
                Ok(())
            }
        };
        self.pending.set(self.open.len() as i64);
        result
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        if name == "timeout" {
            self.timeout = value.as_float().unwrap_or(5.0);
        }
        Ok(())
    }
}
