//! Named numeric cells published by components and read by monitors.
//!
//! A sensor is looked up once by its flat name (`stack.component.sensor`);
//! the returned [`SensorRef`] reads the cell directly with a single relaxed
//! atomic load, so the per-read cost does not depend on how many sensors
//! exist or where the owning component lives.
//!
//! Passive sensors are simply polled. Active sensors additionally run every
//! subscribed callback, synchronously and on the writer's thread, after each
//! write. Callbacks must be brief.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    Int,
    Float,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorMode {
    Passive,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensorValue {
    Int(i64),
    Float(f64),
}

impl SensorValue {
    pub fn as_f64(self) -> f64 {
        match self {
            SensorValue::Int(v) => v as f64,
            SensorValue::Float(v) => v,
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            SensorValue::Int(v) => v,
            SensorValue::Float(v) => v as i64,
        }
    }
}

impl fmt::Display for SensorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorValue::Int(v) => write!(f, "{v}"),
            SensorValue::Float(v) => crate::event::write_float(f, *v),
        }
    }
}

impl From<i64> for SensorValue {
    fn from(v: i64) -> Self {
        SensorValue::Int(v)
    }
}

impl From<f64> for SensorValue {
    fn from(v: f64) -> Self {
        SensorValue::Float(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SensorError {
    #[error("sensor {0} already registered")]
    Duplicate(String),
    #[error("unknown sensor {0}")]
    Unknown(String),
}

impl From<SensorError> for String {
    fn from(e: SensorError) -> String {
        e.to_string()
    }
}

pub type MonitorCallback = Arc<dyn Fn(&str, SensorValue) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubscriptionId(u64);

struct Cell {
    name: String,
    kind: SensorKind,
    mode: SensorMode,
    bits: AtomicU64,
    stale: AtomicBool,
    monitors: RwLock<Vec<(SubscriptionId, MonitorCallback)>>,
}

impl Cell {
    #[inline]
    fn load(&self) -> SensorValue {
        let bits = self.bits.load(Ordering::Relaxed);
        match self.kind {
            SensorKind::Int => SensorValue::Int(bits as i64),
            SensorKind::Float => SensorValue::Float(f64::from_bits(bits)),
        }
    }

    fn encode(&self, v: SensorValue) -> u64 {
        match (self.kind, v) {
            (SensorKind::Int, v) => v.as_i64() as u64,
            (SensorKind::Float, v) => v.as_f64().to_bits(),
        }
    }

    fn notify(&self) {
        if self.mode == SensorMode::Active {
            let value = self.load();
            for (_, cb) in self.monitors.read().unwrap().iter() {
                cb(&self.name, value);
            }
        }
    }
}

/// Read handle. Reads never block and never fail, even after the owning
/// component is destroyed (the value is then frozen and flagged stale).
#[derive(Clone)]
pub struct SensorRef(Arc<Cell>);

impl SensorRef {
    #[inline]
    pub fn read(&self) -> SensorValue {
        self.0.load()
    }

    #[inline]
    pub fn read_i64(&self) -> i64 {
        self.0.load().as_i64()
    }

    #[inline]
    pub fn read_f64(&self) -> f64 {
        self.0.load().as_f64()
    }

    pub fn is_stale(&self) -> bool {
        self.0.stale.load(Ordering::Relaxed)
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn kind(&self) -> SensorKind {
        self.0.kind
    }

    pub fn mode(&self) -> SensorMode {
        self.0.mode
    }

    pub(crate) fn mark_stale(&self) {
        self.0.stale.store(true, Ordering::Relaxed);
    }
}

impl fmt::Debug for SensorRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SensorRef({}={})", self.0.name, self.read())
    }
}

/// Write handle held by the owning component.
pub struct SensorWriter(Arc<Cell>);

impl SensorWriter {
    #[inline]
    pub fn set(&self, v: impl Into<SensorValue>) {
        let bits = self.0.encode(v.into());
        self.0.bits.store(bits, Ordering::Relaxed);
        self.0.notify();
    }

    /// Adds `delta` to the cell. Integer cells use an atomic add, so several
    /// writers may share one counter.
    #[inline]
    pub fn add(&self, delta: i64) {
        match self.0.kind {
            SensorKind::Int => {
                self.0.bits.fetch_add(delta as u64, Ordering::Relaxed);
            }
            SensorKind::Float => {
                let cur = f64::from_bits(self.0.bits.load(Ordering::Relaxed));
                self.0
                    .bits
                    .store((cur + delta as f64).to_bits(), Ordering::Relaxed);
            }
        }
        self.0.notify();
    }

    #[inline]
    pub fn get(&self) -> SensorValue {
        self.0.load()
    }

    pub fn reader(&self) -> SensorRef {
        SensorRef(self.0.clone())
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }
}

impl fmt::Debug for SensorWriter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SensorWriter({}={})", self.0.name, self.get())
    }
}

#[derive(Default)]
pub struct SensorRegistry {
    cells: RwLock<HashMap<String, Arc<Cell>>>,
    next_subscription: AtomicU64,
}

impl SensorRegistry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Registers a new cell initialised to zero. A stale cell under the same
    /// name is replaced; holders of the old reference keep the frozen value.
    pub fn register(
        &self,
        name: &str,
        kind: SensorKind,
        mode: SensorMode,
    ) -> Result<SensorWriter, SensorError> {
        self.insert(name, kind, mode, None)
    }

    /// Registers `name` over `previous` while that cell is still live. Used
    /// when a replacement component takes over the name of one about to be
    /// destroyed.
    pub(crate) fn register_replacing(
        &self,
        name: &str,
        kind: SensorKind,
        mode: SensorMode,
        previous: &SensorRef,
    ) -> Result<SensorWriter, SensorError> {
        self.insert(name, kind, mode, Some(previous))
    }

    /// Puts a displaced cell back under its name.
    pub(crate) fn restore(&self, sensor: &SensorRef) {
        self.cells
            .write()
            .unwrap()
            .insert(sensor.name().to_string(), sensor.0.clone());
    }

    fn insert(
        &self,
        name: &str,
        kind: SensorKind,
        mode: SensorMode,
        previous: Option<&SensorRef>,
    ) -> Result<SensorWriter, SensorError> {
        let mut cells = self.cells.write().unwrap();
        if let Some(existing) = cells.get(name) {
            let displaceable = previous.is_some_and(|p| Arc::ptr_eq(existing, &p.0));
            if !displaceable && !existing.stale.load(Ordering::Relaxed) {
                return Err(SensorError::Duplicate(name.to_string()));
            }
        }
        let zero = match kind {
            SensorKind::Int => 0,
            SensorKind::Float => 0f64.to_bits(),
        };
        let cell = Arc::new(Cell {
            name: name.to_string(),
            kind,
            mode,
            bits: AtomicU64::new(zero),
            stale: AtomicBool::new(false),
            monitors: RwLock::new(Vec::new()),
        });
        cells.insert(name.to_string(), cell.clone());
        Ok(SensorWriter(cell))
    }

    pub fn lookup(&self, name: &str) -> Result<SensorRef, SensorError> {
        self.cells
            .read()
            .unwrap()
            .get(name)
            .map(|c| SensorRef(c.clone()))
            .ok_or_else(|| SensorError::Unknown(name.to_string()))
    }

    /// Drops a cell from the namespace entirely. Used when a component is
    /// discarded before it ever ran.
    pub(crate) fn unregister(&self, sensor: &SensorRef) {
        let mut cells = self.cells.write().unwrap();
        if let Some(c) = cells.get(sensor.name()) {
            if Arc::ptr_eq(c, &sensor.0) {
                cells.remove(sensor.name());
            }
        }
    }

    /// Snapshot of `(name, value, stale)` sorted by name.
    pub fn list(&self) -> Vec<(String, SensorValue, bool)> {
        let mut rows: Vec<_> = self
            .cells
            .read()
            .unwrap()
            .values()
            .map(|c| (c.name.clone(), c.load(), c.stale.load(Ordering::Relaxed)))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows
    }

    pub fn len(&self) -> usize {
        self.cells.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Attaches a callback to an active sensor. Passive sensors accept the
    /// subscription but never trigger it.
    pub fn subscribe(&self, sensor: &SensorRef, callback: MonitorCallback) -> SubscriptionId {
        let id = SubscriptionId(self.next_subscription.fetch_add(1, Ordering::Relaxed));
        sensor.0.monitors.write().unwrap().push((id, callback));
        id
    }

    pub fn unsubscribe(&self, sensor: &SensorRef, id: SubscriptionId) {
        sensor.0.monitors.write().unwrap().retain(|(s, _)| *s != id);
    }
}

/// A set of sensor references resolved once and polled together.
#[derive(Default)]
pub struct Monitor {
    sensors: Vec<SensorRef>,
}

impl Monitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn watch(&mut self, registry: &SensorRegistry, name: &str) -> Result<usize, SensorError> {
        self.sensors.push(registry.lookup(name)?);
        Ok(self.sensors.len() - 1)
    }

    pub fn poll(&self) -> Vec<SensorValue> {
        self.sensors.iter().map(SensorRef::read).collect()
    }

    pub fn sensors(&self) -> &[SensorRef] {
        &self.sensors
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn registered_sensor_starts_at_zero() {
        let reg = SensorRegistry::new();
        let w = reg
            .register(
                "dns.count.events_seen",
                SensorKind::Int,
                SensorMode::Passive,
            )
            .unwrap();
        let r = reg.lookup("dns.count.events_seen").unwrap();
        assert_eq!(r.read(), SensorValue::Int(0));
        w.set(42i64);
        assert_eq!(r.read_i64(), 42);
        w.add(3);
        assert_eq!(w.get(), SensorValue::Int(45));
    }

    #[test]
    fn duplicate_and_unknown_names() {
        let reg = SensorRegistry::new();
        reg.register("a.b.c", SensorKind::Int, SensorMode::Passive)
            .unwrap();
        assert_eq!(
            reg.register("a.b.c", SensorKind::Float, SensorMode::Passive)
                .unwrap_err(),
            SensorError::Duplicate("a.b.c".into())
        );
        assert!(matches!(reg.lookup("nope"), Err(SensorError::Unknown(_))));
    }

    #[test]
    fn stale_cell_keeps_last_value_and_can_be_replaced() {
        let reg = SensorRegistry::new();
        let w = reg
            .register("s.c.n", SensorKind::Float, SensorMode::Passive)
            .unwrap();
        w.set(2.5);
        let r = w.reader();
        r.mark_stale();
        drop(w);
        assert!(r.is_stale());
        assert_eq!(r.read_f64(), 2.5);
        let w2 = reg
            .register("s.c.n", SensorKind::Float, SensorMode::Passive)
            .unwrap();
        assert_eq!(w2.get(), SensorValue::Float(0.0));
        assert_eq!(r.read_f64(), 2.5);
    }

    #[test]
    fn active_sensor_fires_once_per_write() {
        let reg = SensorRegistry::new();
        let w = reg
            .register("s.c.load", SensorKind::Int, SensorMode::Active)
            .unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let crossings = Arc::new(AtomicUsize::new(0));
        let (c1, c2) = (calls.clone(), crossings.clone());
        let sub = reg.subscribe(
            &w.reader(),
            Arc::new(move |_, v| {
                c1.fetch_add(1, Ordering::SeqCst);
                if v.as_i64() > 10 {
                    c2.fetch_add(1, Ordering::SeqCst);
                }
            }),
        );
        for v in [1i64, 5, 11, 12, 3] {
            w.set(v);
        }
        assert_eq!(calls.load(Ordering::SeqCst), 5);
        assert_eq!(crossings.load(Ordering::SeqCst), 2);
        reg.unsubscribe(&w.reader(), sub);
        w.set(20i64);
        assert_eq!(calls.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn passive_sensor_never_triggers() {
        let reg = SensorRegistry::new();
        let w = reg
            .register("s.c.p", SensorKind::Int, SensorMode::Passive)
            .unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        reg.subscribe(
            &w.reader(),
            Arc::new(move |_, _| {
                c.fetch_add(1, Ordering::SeqCst);
            }),
        );
        w.set(1i64);
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn no_torn_reads_across_threads() {
        let reg = SensorRegistry::new();
        let w = reg
            .register("s.c.f", SensorKind::Float, SensorMode::Passive)
            .unwrap();
        let r = w.reader();
        // Values whose halves differ, so a torn read would show up as
        // something outside the written set.
        let written: Vec<f64> = (0..64)
            .map(|i| (i as f64) * 1.000_000_123e10 + 0.5)
            .collect();
        let w_set = written.clone();
        let writer = std::thread::spawn(move || {
            for _ in 0..2000 {
                for v in &w_set {
                    w.set(*v);
                }
            }
        });
        let mut seen = 0;
        while !writer.is_finished() {
            let v = r.read_f64();
            assert!(v == 0.0 || written.contains(&v), "torn read {v}");
            seen += 1;
        }
        writer.join().unwrap();
        assert!(seen > 0);
    }

    #[test]
    fn monitor_polls_resolved_refs() {
        let reg = SensorRegistry::new();
        let a = reg
            .register("x.a.v", SensorKind::Int, SensorMode::Passive)
            .unwrap();
        let b = reg
            .register("x.b.v", SensorKind::Float, SensorMode::Passive)
            .unwrap();
        let mut m = Monitor::new();
        m.watch(&reg, "x.a.v").unwrap();
        m.watch(&reg, "x.b.v").unwrap();
        a.set(3i64);
        b.set(0.5);
        assert_eq!(m.poll(), vec![SensorValue::Int(3), SensorValue::Float(0.5)]);
        assert!(m.watch(&reg, "x.c.v").is_err());
    }
}
