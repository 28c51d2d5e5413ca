//! Microbenchmarks: component traversal cost and sensor reads versus the
//! control-protocol path.
//!
//! Every benchmark is repeated `runs` times, each run covering about
//! `min_sample` of timed work. The result is the mean over runs of the
//! per-iteration cost with loop overhead subtracted, plus its standard error
//! as a percentage of the mean.

use std::hint::black_box;
use std::io::{self, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::adl::{ComponentNode, StackDefinition};
use crate::assembly::{instantiate, FactoryRegistry, StackEnv, StackInstance};
use crate::component::{Component, ComponentContract, Context, OptionDecl, StackError};
use crate::control::Controller;
use crate::event::{Event, EventType, ScalarKind, ScalarValue};
use crate::kernel::{Kernel, StartOptions};
use crate::sensors::{SensorRef, SensorRegistry};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub runs: usize,
    pub min_sample: Duration,
    /// Runs whose standard error exceeds this percentage are rejected.
    pub max_stderr_pct: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            runs: 50,
            min_sample: Duration::from_millis(100),
            max_stderr_pct: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("no samples")]
    NoSamples,
    #[error("chain length must be at least 2, got {0}")]
    ChainTooShort(usize),
    #[error("{benchmark}: unstable, standard error {stderr_pct:.2}% over {limit}%")]
    Unstable {
        benchmark: String,
        stderr_pct: f64,
        limit: f64,
        result: Box<BenchResult>,
    },
    #[error("setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub benchmark: String,
    pub mean_ns: f64,
    pub stderr_pct: f64,
    pub runs: usize,
    /// Per-run nanoseconds per iteration.
    pub samples: Vec<f64>,
}

impl BenchResult {
    pub fn from_samples(
        benchmark: impl Into<String>,
        samples: Vec<f64>,
    ) -> Result<Self, BenchError> {
        if samples.is_empty() {
            return Err(BenchError::NoSamples);
        }
        let (mean, stderr_pct) = mean_stderr(&samples);
        Ok(BenchResult {
            benchmark: benchmark.into(),
            mean_ns: mean,
            stderr_pct,
            runs: samples.len(),
            samples,
        })
    }

    pub fn median_ns(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        }
    }

    fn gate(self, limit: f64) -> Result<Self, BenchError> {
        if self.stderr_pct <= limit {
            Ok(self)
        } else {
            Err(BenchError::Unstable {
                benchmark: self.benchmark.clone(),
                stderr_pct: self.stderr_pct,
                limit,
                result: Box::new(self),
            })
        }
    }
}

/// Mean and standard error of the mean, the latter as a percentage of the
/// mean (infinite for a zero mean with spread).
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let pct = if mean == 0.0 {
        if se == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        100.0 * se / mean.abs()
    };
    (mean, pct)
}

/// Minimum number of timed blocks per traversal run.
pub const MIN_BLOCKS: usize = 5;

/// Length of one timed block in the traversal benchmark.
const BLOCK: Duration = Duration::from_micros(200);

/// Grows `m` (starting at `start`) until `sample(m)` takes `min`.
fn calibrate(start: u64, min: Duration, mut sample: impl FnMut(u64) -> Duration) -> u64 {
    let mut m = start.max(1);
    loop {
        let t = sample(m);
        if t >= min || m >= u64::MAX / 4 {
            return m;
        }
        let scale = if t.is_zero() {
            10.0
        } else {
            (min.as_secs_f64() / t.as_secs_f64() * 1.2).clamp(1.5, 10.0)
        };
        m = (m as f64 * scale).ceil() as u64;
    }
}

/// No-op component doing `$ops` dependent integer operations per event.
struct Work {
    ops: u64,
    acc: u64,
}

impl Component for Work {
    #[inline]
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        let mut a = self.acc;
        for i in 0..self.ops {
            a = black_box(a.wrapping_mul(6364136223846793005).wrapping_add(i));
        }
        self.acc = a;
        ctx.forward(event)
    }

    fn set_option(&mut self, name: &str, value: &ScalarValue) -> Result<(), String> {
        if name == "ops" {
            self.ops = value.as_int().unwrap_or(0).max(0) as u64;
        }
        Ok(())
    }
}

/// Standard components plus `work`, a pass-through with a tunable amount of
/// arithmetic.
pub fn bench_registry() -> FactoryRegistry {
    let reg = crate::stdlib::registry();
    reg.register(
        ComponentContract::new("work")
            .with_option(OptionDecl::new("ops", ScalarKind::Int).default_value(0i64)),
        |_| Ok(Box::new(Work { ops: 0, acc: 1 })),
    )
    .expect("work registers");
    reg
}

/// `%chain { @c @c ... }` with `n` copies of `node`.
pub fn chain_definition(n: usize, node: &ComponentNode) -> StackDefinition {
    let mut def = StackDefinition::new("chain");
    def.body = vec![node.clone(); n];
    def
}

fn chain(n: usize, node: &ComponentNode, env: &StackEnv) -> Result<StackInstance, BenchError> {
    instantiate(&chain_definition(n, node), env).map_err(|e| BenchError::Setup(e.to_string()))
}

fn push(stack: &mut StackInstance, event: &Event, m: u64) -> Duration {
    let t = Instant::now();
    for _ in 0..m {
        if let Err(e) = stack.inject(black_box(event.clone())) {
            panic!("traversal bench: {e}");
        }
    }
    t.elapsed()
}

/// Per-hop cost of a chain of `n` `noop` components.
pub fn bench_traversal(
    n: usize,
    events: u64,
    cfg: &BenchConfig,
) -> Result<BenchResult, BenchError> {
    bench_traversal_of(n, events, &ComponentNode::simple("noop"), cfg)
}

/// Per-hop cost of a chain of `n` copies of `node`. Each run pushes `M`
/// events through the chain and through a single-component stack; the
/// difference divided by `M(n-1)` is the cost of one extra hop, with the
/// loop, event cloning and injection overhead cancelled out.
pub fn bench_traversal_of(
    n: usize,
    events: u64,
    node: &ComponentNode,
    cfg: &BenchConfig,
) -> Result<BenchResult, BenchError> {
    if n < 2 {
        return Err(BenchError::ChainTooShort(n));
    }
    if events == 0 || cfg.runs == 0 {
        return Err(BenchError::NoSamples);
    }
    let env = StackEnv::new(Arc::new(bench_registry()), SensorRegistry::new());
    let mut long = chain(n, node, &env)?;
    let mut short = chain(1, node, &env)?;
    let event = Event::builder(EventType::intern("bench").expect("identifier"))
        .attr("seq", 0i64)
        .build();
    // Each run alternates short blocks on the two chains and keeps the median
    // block difference, so slow phases of the host hit both sides alike and
    // interrupts land in discarded blocks.
    let m = calibrate(events, BLOCK, |m| push(&mut long, &event, m));
    let rounds =
        (cfg.min_sample.as_nanos() / (2 * BLOCK.as_nanos())).max(MIN_BLOCKS as u128) as usize;
    let mut samples = Vec::with_capacity(cfg.runs);
    let mut diffs = Vec::with_capacity(rounds);
    for _ in 0..cfg.runs {
        diffs.clear();
        for _ in 0..rounds {
            let tn = push(&mut long, &event, m).as_nanos() as f64;
            let t1 = push(&mut short, &event, m).as_nanos() as f64;
            diffs.push(tn - t1);
        }
        diffs.sort_by(f64::total_cmp);
        let diff = diffs[rounds / 2];
        samples.push((diff / (m as f64 * (n - 1) as f64)).max(0.0));
    }
    BenchResult::from_samples(format!("traversal_n{n}_{}", node.type_id), samples)?
        .gate(cfg.max_stderr_pct)
}

fn empty_loop(m: u64) -> Duration {
    let t = Instant::now();
    for i in 0..m {
        black_box(i);
    }
    t.elapsed()
}

fn sensor_loop(s: &SensorRef, m: u64) -> Duration {
    let t = Instant::now();
    for _ in 0..m {
        black_box(black_box(s).read_i64());
    }
    t.elapsed()
}

/// Cost of one passive read through a held reference, loop overhead
/// subtracted.
pub fn bench_sensor_read(
    s: &SensorRef,
    iterations: u64,
    cfg: &BenchConfig,
) -> Result<BenchResult, BenchError> {
    if iterations == 0 || cfg.runs == 0 {
        return Err(BenchError::NoSamples);
    }
    let m = calibrate(iterations, cfg.min_sample, |m| sensor_loop(s, m));
    let mut samples = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs {
        let t = sensor_loop(s, m).as_nanos() as f64;
        let e = empty_loop(m).as_nanos() as f64;
        samples.push(((t - e) / m as f64).max(0.0));
    }
    BenchResult::from_samples("sensor_read", samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorVsMop {
    pub sensor: BenchResult,
    pub mop: BenchResult,
}

impl SensorVsMop {
    /// How many times faster the sensor read is.
    pub fn ratio(&self) -> f64 {
        self.mop.mean_ns / self.sensor.mean_ns.max(f64::MIN_POSITIVE)
    }
}

/// Reads the same integer through a passive sensor and through an in-process
/// `GET active` request on a running stack.
pub fn bench_sensor_vs_mop(iterations: u64, cfg: &BenchConfig) -> Result<SensorVsMop, BenchError> {
    if iterations == 0 || cfg.runs == 0 {
        return Err(BenchError::NoSamples);
    }
    let kernel = Kernel::new(Arc::new(bench_registry()));
    let def = crate::adl::parse_stack("%probe { @tick[$count=1] @count }")
        .map_err(|e| BenchError::Setup(e.to_string()))?;
    let h = kernel
        .start_stack(def, StartOptions::default())
        .map_err(|e| BenchError::Setup(e.to_string()))?;
    let sensor = kernel
        .sensors()
        .lookup("probe.count.n")
        .map_err(|e| BenchError::Setup(e.to_string()))?;
    kernel.wait_until(Duration::from_secs(5), || sensor.read_i64() == 1);
    let controller = Controller::new(kernel.clone());
    let line = "GET active probe/0 count";
    let expect = crate::control::Response::Ok(vec!["1".into()]);
    if controller.handle_line(line) != expect {
        return Err(BenchError::Setup(
            "probe GET returned an unexpected value".into(),
        ));
    }

    let sensor_result = bench_sensor_read(&sensor, iterations, cfg);
    let mop_loop = |m: u64| {
        let t = Instant::now();
        for _ in 0..m {
            black_box(controller.handle_line(black_box(line)));
        }
        t.elapsed()
    };
    let m = calibrate(iterations.min(64), cfg.min_sample, mop_loop);
    let mut samples = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs {
        let t = mop_loop(m).as_nanos() as f64;
        let e = empty_loop(m).as_nanos() as f64;
        samples.push(((t - e) / m as f64).max(0.0));
    }
    let _ = kernel.stop_stack(h);
    Ok(SensorVsMop {
        sensor: sensor_result?,
        mop: BenchResult::from_samples("control_get", samples)?,
    })
}

pub const CSV_HEADER: &str = "benchmark,mean_ns,stderr_pct,runs";

/// Writes results as CSV, header first, one row per result.
pub fn report(results: &[BenchResult], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{:.3},{:.3},{}",
            r.benchmark, r.mean_ns, r.stderr_pct, r.runs
        )?;
    }
    Ok(())
}
