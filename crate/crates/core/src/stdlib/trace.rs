//! Text traces: one record per line, `ts src dst proto k=v ...`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::event::{Event, EventType, ScalarValue};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub timestamp: f64,
    pub src: String,
    pub dst: String,
    pub proto: String,
    pub fields: Vec<(String, ScalarValue)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trace line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for TraceError {}

/// Bare field values: integer, float, `true`/`false`, otherwise a string.
pub fn parse_value(raw: &str) -> ScalarValue {
    if let Ok(i) = raw.parse::<i64>() {
        return ScalarValue::Int(i);
    }
    if raw.contains('.') && raw.chars().any(|c| c.is_ascii_digit()) {
        if let Ok(f) = raw.parse::<f64>() {
            if f.is_finite() {
                return ScalarValue::Float(f);
            }
        }
    }
    match raw {
        "true" => ScalarValue::Bool(true),
        "false" => ScalarValue::Bool(false),
        _ => ScalarValue::Str(raw.to_string()),
    }
}

impl TraceRecord {
    /// Parses one non-empty line. `line` is only used for error positions.
    pub fn parse(text: &str, line: usize) -> Result<TraceRecord, TraceError> {
        let err = |message: String| TraceError { line, message };
        let mut parts = text.split_whitespace();
        let mut next = |what: &str| parts.next().ok_or_else(|| err(format!("missing {what}")));
        let ts = next("timestamp")?;
        let timestamp: f64 = ts
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| err(format!("bad timestamp {ts:?}")))?;
        let src = next("src")?.to_string();
        let dst = next("dst")?.to_string();
        let proto = next("proto")?.to_string();
        let mut fields = Vec::new();
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| err(format!("field {kv:?} is not key=value")))?;
            if !crate::event::is_identifier(k) || matches!(k, "ts" | "src" | "dst" | "proto") {
                return Err(err(format!("bad field name {k:?}")));
            }
            fields.push((k.to_string(), parse_value(v)));
        }
        Ok(TraceRecord {
            timestamp,
            src,
            dst,
            proto,
            fields,
        })
    }

    /// `pkt` event carrying `ts`, `src`, `dst`, `proto` and every field.
    pub fn to_event(&self) -> Event {
        let mut b = Event::builder(pkt_type())
            .attr("ts", self.timestamp)
            .attr("src", self.src.as_str())
            .attr("dst", self.dst.as_str())
            .attr("proto", self.proto.as_str());
        for (k, v) in &self.fields {
            b = b.attr(k, v.clone());
        }
        b.build()
    }
}

pub(crate) fn pkt_type() -> EventType {
    EventType::intern("pkt").expect("identifier")
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.6} {} {} {}",
            self.timestamp, self.src, self.dst, self.proto
        )?;
        for (k, v) in &self.fields {
            write!(f, " {k}={}", v.to_plain_string())?;
        }
        Ok(())
    }
}

const NAMES: &[&str] = &[
    "example.com",
    "www.example.org",
    "mail.example.net",
    "ns1.example.com",
    "cdn.example.org",
    "api.example.net",
    "static.example.com",
    "db.internal.lan",
];

/// Synthetic DNS-like traffic: queries with matching responses, some lost
/// or late responses, unsolicited responses, and non-DNS noise. Exactly `n`
/// lines, sorted by timestamp; same seed, same text.
pub fn generate(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recs: Vec<(f64, usize, TraceRecord)> = Vec::with_capacity(n + n / 2);
    let mut t = 0.0f64;
    let mut seq = 0usize;
    let mut push = |recs: &mut Vec<(f64, usize, TraceRecord)>, r: TraceRecord| {
        recs.push((r.timestamp, seq, r));
        seq += 1;
    };
    // Generate past `n` so responses that land after the cut are rare.
    while recs.len() < n + n / 8 + 8 {
        t += rng.gen_range(0.0001..0.01);
        t = (t * 1e6).round() / 1e6;
        let client = format!(
            "10.0.0.{}:{}",
            rng.gen_range(1..=40),
            rng.gen_range(1024..1040)
        );
        let server = format!("192.168.1.{}:53", rng.gen_range(1..=3));
        let roll: f64 = rng.gen();
        if roll < 0.08 {
            let proto = if rng.gen_bool(0.5) { "tcp" } else { "icmp" };
            push(
                &mut recs,
                TraceRecord {
                    timestamp: t,
                    src: client,
                    dst: server.replace(":53", ":80"),
                    proto: proto.into(),
                    fields: vec![("len".into(), ScalarValue::Int(rng.gen_range(40..1500)))],
                },
            );
            continue;
        }
        let qid: i64 = rng.gen_range(0..65536);
        let qname = NAMES[rng.gen_range(0..NAMES.len())];
        let dns = |ts: f64, src: &str, dst: &str, resp: bool| TraceRecord {
            timestamp: ts,
            src: src.into(),
            dst: dst.into(),
            proto: "dns".into(),
            fields: vec![
                ("qid".into(), ScalarValue::Int(qid)),
                ("qname".into(), ScalarValue::Str(qname.into())),
                ("is_response".into(), ScalarValue::Bool(resp)),
            ],
        };
        if roll < 0.10 {
            push(&mut recs, dns(t, &server, &client, true));
            continue;
        }
        push(&mut recs, dns(t, &client, &server, false));
        let fate: f64 = rng.gen();
        if fate < 0.04 {
            continue;
        }
        let latency = if fate < 0.05 {
            rng.gen_range(6.0..8.0)
        } else {
            rng.gen_range(0.0005..0.25)
        };
        let rt = ((t + latency) * 1e6).round() / 1e6;
        push(&mut recs, dns(rt, &server, &client, true));
    }
    recs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = String::new();
    for (_, _, r) in recs.into_iter().take(n) {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}
