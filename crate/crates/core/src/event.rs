//! Events and the scalar values they carry.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, OnceLock, RwLock};

use thiserror::Error;

/// Returns true when `s` matches `[a-zA-Z][a-zA-Z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed event type tag {0:?}")]
pub struct TagError(pub String);

#[derive(Default)]
struct Interner {
    ids: HashMap<&'static str, u32>,
    names: Vec<&'static str>,
}

fn interner() -> &'static RwLock<Interner> {
    static INTERNER: OnceLock<RwLock<Interner>> = OnceLock::new();
    INTERNER.get_or_init(Default::default)
}

/// Interned event tag. Two `EventType`s compare equal iff they were interned
/// from the same string.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventType(u32);

impl EventType {
    pub fn intern(tag: &str) -> Result<EventType, TagError> {
        if !is_identifier(tag) {
            return Err(TagError(tag.to_string()));
        }
        if let Some(&id) = interner().read().unwrap().ids.get(tag) {
            return Ok(EventType(id));
        }
        let mut table = interner().write().unwrap();
        if let Some(&id) = table.ids.get(tag) {
            return Ok(EventType(id));
        }
        // Tags live for the whole process; the table only grows.
        let name: &'static str = Box::leak(tag.to_string().into_boxed_str());
        let id = table.names.len() as u32;
        table.names.push(name);
        table.ids.insert(name, id);
        Ok(EventType(id))
    }

    pub fn name(self) -> &'static str {
        interner().read().unwrap().names[self.0 as usize]
    }

    pub fn id(self) -> u32 {
        self.0
    }
}

impl fmt::Debug for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventType({})", self.name())
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarKind {
    Int,
    Float,
    Bool,
    Str,
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarKind::Int => "integer",
            ScalarKind::Float => "float",
            ScalarKind::Bool => "boolean",
            ScalarKind::Str => "string",
        })
    }
}

/// A typed scalar. `Display` renders the value as a description-language
/// literal (strings quoted and escaped, floats always with a decimal point).
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl ScalarValue {
    pub fn kind(&self) -> ScalarKind {
        match self {
            ScalarValue::Int(_) => ScalarKind::Int,
            ScalarValue::Float(_) => ScalarKind::Float,
            ScalarValue::Bool(_) => ScalarKind::Bool,
            ScalarValue::Str(_) => ScalarKind::Str,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ScalarValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            ScalarValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ScalarValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ScalarValue::Str(v) => Some(v),
            _ => None,
        }
    }

    /// Unquoted textual form, used when comparing attributes against strings.
    pub fn to_plain_string(&self) -> String {
        match self {
            ScalarValue::Str(s) => s.clone(),
            other => other.to_string(),
        }
    }

    fn hash_into<H: Hasher>(&self, h: &mut H) {
        match self {
            ScalarValue::Int(v) => (0u8, v).hash(h),
            ScalarValue::Float(v) => (1u8, v.to_bits()).hash(h),
            ScalarValue::Bool(v) => (2u8, v).hash(h),
            ScalarValue::Str(v) => (3u8, v).hash(h),
        }
    }
}

pub(crate) fn write_float(f: &mut impl fmt::Write, v: f64) -> fmt::Result {
    // `Display` for f64 never uses exponent notation and is round-trip exact.
    let s = v.to_string();
    if s.contains('.') || !v.is_finite() {
        f.write_str(&s)
    } else {
        write!(f, "{s}.0")
    }
}

pub(crate) fn write_quoted(f: &mut impl fmt::Write, s: &str) -> fmt::Result {
    f.write_char('"')?;
    for c in s.chars() {
        if c == '"' || c == '\\' {
            f.write_char('\\')?;
        }
        f.write_char(c)?;
    }
    f.write_char('"')
}

impl fmt::Display for ScalarValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarValue::Int(v) => write!(f, "{v}"),
            ScalarValue::Float(v) => write_float(f, *v),
            ScalarValue::Bool(v) => write!(f, "{v}"),
            ScalarValue::Str(s) => write_quoted(f, s),
        }
    }
}

impl From<i64> for ScalarValue {
    fn from(v: i64) -> Self {
        ScalarValue::Int(v)
    }
}

impl From<f64> for ScalarValue {
    fn from(v: f64) -> Self {
        ScalarValue::Float(v)
    }
}

impl From<bool> for ScalarValue {
    fn from(v: bool) -> Self {
        ScalarValue::Bool(v)
    }
}

impl From<&str> for ScalarValue {
    fn from(v: &str) -> Self {
        ScalarValue::Str(v.to_string())
    }
}

impl From<String> for ScalarValue {
    fn from(v: String) -> Self {
        ScalarValue::Str(v)
    }
}

#[derive(Debug, PartialEq)]
struct EventData {
    etype: EventType,
    attrs: BTreeMap<String, ScalarValue>,
    payload: Vec<u8>,
}

/// Immutable message. Cloning is cheap and shares the underlying data; there
/// is no way to mutate an event once built, only to derive a new one.
#[derive(Debug, Clone, PartialEq)]
pub struct Event(Arc<EventData>);

impl Event {
    pub fn new(etype: EventType) -> Event {
        EventBuilder::new(etype).build()
    }

    pub fn builder(etype: EventType) -> EventBuilder {
        EventBuilder::new(etype)
    }

    pub fn etype(&self) -> EventType {
        self.0.etype
    }

    pub fn attr(&self, name: &str) -> Option<&ScalarValue> {
        self.0.attrs.get(name)
    }

    pub fn attrs(&self) -> impl Iterator<Item = (&str, &ScalarValue)> {
        self.0.attrs.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn payload(&self) -> &[u8] {
        &self.0.payload
    }

    /// Starts a builder pre-filled with this event's content.
    pub fn derive(&self) -> EventBuilder {
        EventBuilder {
            etype: self.0.etype,
            attrs: self.0.attrs.clone(),
            payload: self.0.payload.clone(),
        }
    }

    /// `type k=v k=v ...` with attributes in name order and values as
    /// description-language literals. The payload is not included.
    pub fn canonical_line(&self) -> String {
        let mut out = String::from(self.0.etype.name());
        for (k, v) in &self.0.attrs {
            out.push(' ');
            out.push_str(k);
            out.push('=');
            out.push_str(&v.to_string());
        }
        out
    }

    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.0.etype.name().hash(&mut h);
        for (k, v) in &self.0.attrs {
            k.hash(&mut h);
            v.hash_into(&mut h);
        }
        self.0.payload.hash(&mut h);
        h.finish()
    }
}

pub struct EventBuilder {
    etype: EventType,
    attrs: BTreeMap<String, ScalarValue>,
    payload: Vec<u8>,
}

impl EventBuilder {
    pub fn new(etype: EventType) -> Self {
        EventBuilder {
            etype,
            attrs: BTreeMap::new(),
            payload: Vec::new(),
        }
    }

    pub fn etype(mut self, etype: EventType) -> Self {
        self.etype = etype;
        self
    }

    /// Sets an attribute, replacing any previous value under the same name.
    pub fn attr(mut self, name: impl Into<String>, value: impl Into<ScalarValue>) -> Self {
        self.attrs.insert(name.into(), value.into());
        self
    }

    pub fn remove(mut self, name: &str) -> Self {
        self.attrs.remove(name);
        self
    }

    pub fn payload(mut self, payload: impl Into<Vec<u8>>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn build(self) -> Event {
        Event(Arc::new(EventData {
            etype: self.etype,
            attrs: self.attrs,
            payload: self.payload,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_idempotent() {
        let a = EventType::intern("udp").unwrap();
        let b = EventType::intern("udp").unwrap();
        let c = EventType::intern("dns").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.name(), "udp");
    }

    #[test]
    fn malformed_tags_rejected() {
        assert!(EventType::intern("9bad").is_err());
        assert!(EventType::intern("").is_err());
        assert!(EventType::intern("_x").is_err());
        assert!(EventType::intern("a-b").is_err());
        assert!(EventType::intern("a_9").is_ok());
    }

    #[test]
    fn float_literals_keep_decimal_point() {
        assert_eq!(ScalarValue::Float(1.0).to_string(), "1.0");
        assert_eq!(ScalarValue::Float(-0.25).to_string(), "-0.25");
        assert_eq!(ScalarValue::Float(1e-7).to_string(), "0.0000001");
        assert_eq!(ScalarValue::Str("a\"b\\".into()).to_string(), r#""a\"b\\""#);
    }

    #[test]
    fn canonical_line_orders_attributes() {
        let t = EventType::intern("pkt").unwrap();
        let e = Event::builder(t).attr("z", 1i64).attr("a", "x").build();
        assert_eq!(e.canonical_line(), r#"pkt a="x" z=1"#);
    }

    #[test]
    fn derived_event_leaves_original_untouched() {
        let t = EventType::intern("pkt").unwrap();
        let e = Event::builder(t).attr("n", 1i64).build();
        let before = e.digest();
        let d = e.derive().attr("n", 2i64).build();
        assert_eq!(e.digest(), before);
        assert_ne!(d.digest(), before);
    }
}
