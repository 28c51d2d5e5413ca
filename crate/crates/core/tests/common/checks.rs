//! End-to-end checks returning `Err(reason)` on the first violation. Each is
//! used by a focused integration test and by the acceptance runner.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use pandora::adl::{parse_config, parse_stack, ComponentNode, StackDefinition};
use pandora::control::{Controller, Session};
use pandora::event::{Event, EventType, ScalarValue};
use pandora::{
    instantiate, Kernel, NodePath, Production, Scope, SensorRegistry, StackEnv, StackInstance,
    StartOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grammar::{mutate, Gen, Reference};
use super::probes::{self, Recorder};
use super::{lit, run_to_end};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn build(def: &str, rec: &Recorder) -> Result<StackInstance, String> {
    let def = parse_stack(def).map_err(|e| e.to_string())?;
    let env = StackEnv::new(probes::registry(rec), SensorRegistry::new());
    instantiate(&def, &env).map_err(|e| e.to_string())
}

fn sensor(stack: &StackInstance, name: &str) -> Result<i64, String> {
    stack
        .env()
        .sensors
        .lookup(name)
        .map(|s| s.read_i64())
        .map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------

/// Round-trips `round_trip` generated definitions and compares the parser's
/// accept/reject decision with the reference recognizer on `mutants` edits.
pub fn grammar_corpus(
    seed: u64,
    round_trip: usize,
    mutants: usize,
) -> Result<(usize, usize), String> {
    let reference = Reference::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut texts = Vec::new();
    for i in 0..round_trip {
        let mut g = Gen::new(&mut rng);
        let def = g.definition();
        let text = g.write(&def);
        ensure!(
            reference.accepts(&text),
            "case {i}: reference rejects generated text {text:?}"
        );
        let parsed = parse_stack(&text).map_err(|e| format!("case {i}: {e} in {text:?}"))?;
        ensure!(
            parsed == def,
            "case {i}: parsed structure differs for {text:?}"
        );
        let rendered = pandora::render_stack(&parsed);
        let again = parse_stack(&rendered).map_err(|e| format!("case {i}: rendered text: {e}"))?;
        ensure!(again == def, "case {i}: render/parse changed the structure");
        texts.push(text);
    }
    let mut rejected = 0;
    for i in 0..mutants {
        let base = &texts[i % texts.len().max(1)];
        let m = mutate(&mut rng, base);
        let ours = match parse_stack(&m) {
            Ok(_) => true,
            Err(e) => e.kind != pandora::adl::ParseErrorKind::Syntax,
        };
        let theirs = reference.accepts(&m);
        ensure!(
            ours == theirs,
            "mutant {i}: parser says {ours}, reference says {theirs}: {m:?}"
        );
        rejected += usize::from(!theirs);
    }
    Ok((round_trip, rejected))
}

// ---------------------------------------------------------------------------

/// Injects `events` keyed events over `keys` keys and compares branch
/// creation and routing with a map-based model.
pub fn demux_oracle(seed: u64, events: usize, keys: usize) -> Result<usize, String> {
    let rec = Recorder::default();
    let mut stack = build(
        r#"%d { @proto_demux[$field="k"]<@probe @probe:inner> @probe:join }"#,
        &rec,
    )?;
    let pkt = EventType::intern("pkt").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut created: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut expected = Vec::new();
    for seq in 0..events as i64 {
        // Skewed key choice plus some events lacking the field.
        let key = if rng.gen_bool(0.01) {
            None
        } else {
            let r: f64 = rng.gen();
            Some(format!("key{}", ((r * r) * keys as f64) as usize))
        };
        let mut b = Event::builder(pkt).attr("seq", seq);
        if let Some(k) = &key {
            b = b.attr("k", k.as_str());
        }
        stack.inject(b.build()).map_err(|e| e.to_string())?;

        let k = key.unwrap_or_default();
        if !index.contains_key(&k) {
            index.insert(k.clone(), created.len());
            created.push(k.clone());
        }
        expected.push((format!("probe{{{k}}}"), seq));
        expected.push((format!("inner{{{k}}}"), seq));
        expected.push(("join".to_string(), seq));
    }

    let seen = rec.seen();
    ensure!(
        seen.len() == expected.len(),
        "{} deliveries, expected {}",
        seen.len(),
        expected.len()
    );
    if let Some(i) = (0..seen.len()).find(|&i| seen[i] != expected[i]) {
        return Err(format!(
            "delivery {i}: got {:?}, expected {:?}",
            seen[i], expected[i]
        ));
    }
    let keys_now = stack
        .demux_keys(&NodePath::top(0))
        .map_err(|e| e.to_string())?;
    ensure!(keys_now == created, "branch creation order differs");
    let built: Vec<String> = rec
        .built()
        .into_iter()
        .filter(|p| p.contains('{'))
        .collect();
    let want: Vec<String> = created
        .iter()
        .flat_map(|k| [format!("d.probe{{{k}}}"), format!("d.inner{{{k}}}")])
        .collect();
    ensure!(built == want, "branch construction trace differs");
    let cats = sensor(&stack, "d.proto_demux.categories")?;
    ensure!(
        cats == created.len() as i64,
        "categories sensor {cats}, expected {}",
        created.len()
    );
    stack.destroy();
    Ok(created.len())
}

// ---------------------------------------------------------------------------

fn produce_checking(
    stack: &mut StackInstance,
    events: usize,
    mut check: impl FnMut(&StackInstance, i64) -> Result<(), String>,
) -> Result<(), String> {
    for i in 1..=events as i64 {
        match stack.produce().map_err(|e| e.to_string())? {
            Production::Emitted => check(stack, i)?,
            other => return Err(format!("producer stopped early: {other:?}")),
        }
    }
    Ok(())
}

/// After every production, counters downstream of the producer already
/// reflect the event, for chains, alternatives and demux joins.
pub fn synchrony(events: usize) -> Result<(), String> {
    let rec = Recorder::default();

    let mut chain = build(
        &format!("%c {{ @tick[$count={events}] @count:a @noop @count:b @noop @count:z }}"),
        &rec,
    )?;
    produce_checking(&mut chain, events, |s, i| {
        for c in ["a", "b", "z"] {
            let v = sensor(s, &format!("c.{c}.n"))?;
            ensure!(v == i, "chain: {c} = {v} after {i} productions");
        }
        Ok(())
    })?;

    let mut alt = build(
        &format!(
            "%a {{ @tick[$count={events}] @route[$n=3](@count:b0 | @count:b1 @count:b1x | @count:b2) @count:join }}"
        ),
        &rec,
    )?;
    produce_checking(&mut alt, events, |s, i| {
        let per = |j: i64| (0..i).filter(|q| q % 3 == j).count() as i64;
        for (name, want) in [
            ("b0", per(0)),
            ("b1", per(1)),
            ("b1x", per(1)),
            ("b2", per(2)),
            ("join", i),
        ] {
            let v = sensor(s, &format!("a.{name}.n"))?;
            ensure!(
                v == want,
                "alternative: {name} = {v}, expected {want} after {i}"
            );
        }
        Ok(())
    })?;

    let mut dmx = build(
        &format!(
            r#"%m {{ @tick[$count={events}] @keyer[$m=5] @proto_demux[$field="k"]<@count @count:tail> @count:join }}"#
        ),
        &rec,
    )?;
    produce_checking(&mut dmx, events, |s, i| {
        let join = sensor(s, "m.join.n")?;
        ensure!(join == i, "demux join = {join} after {i}");
        for k in 0..5i64.min(i) {
            let want = (0..i).filter(|q| q % 5 == k).count() as i64;
            for c in ["count", "tail"] {
                let v = sensor(s, &format!("m.{c}{{k{k}}}.n"))?;
                ensure!(v == want, "demux branch {c}{{k{k}}} = {v}, expected {want}");
            }
        }
        Ok(())
    })?;
    for mut s in [chain, alt, dmx] {
        s.destroy();
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn aliases(def: &StackDefinition) -> BTreeMap<String, NodePath> {
    let mut out = BTreeMap::new();
    def.visit(false, &mut |p, n: &ComponentNode| {
        if let Some(a) = &n.alias {
            out.insert(a.clone(), p.clone());
        }
    });
    out
}

/// Reconfigures a running stack twice; checks the destroyed and created
/// sets, counter continuity and that no event is lost.
pub fn reconfig_conservation(total: i64) -> Result<(), String> {
    let kernel = Kernel::with_stdlib();
    let old = parse_stack(&format!(
        "%r {{ @tick:src[$count={total}] @count:a @count:b @noop:n1 @count:z }}"
    ))
    .unwrap();
    let new = parse_stack(&format!(
        r#"%r {{ @tick:src[$count={total}] @count:a @count:f[$field="none"] @noop:n2 @count:z }}"#
    ))
    .unwrap();
    let h = kernel
        .start_stack(old.clone(), StartOptions::default())
        .map_err(|e| e.to_string())?;
    let read = |n: &str| -> Result<(i64, bool), String> {
        let s = kernel.sensors().lookup(n).map_err(|e| e.to_string())?;
        Ok((s.read_i64(), s.is_stale()))
    };
    ensure!(
        kernel.wait_until(Duration::from_secs(10), || read("r.a.n")
            .map(|v| v.0 > 0)
            .unwrap_or(false)),
        "stack never produced"
    );
    kernel.pause_stack(h).map_err(|e| e.to_string())?;
    let (va, _) = read("r.a.n")?;
    let b_sensor = kernel
        .sensors()
        .lookup("r.b.n")
        .map_err(|e| e.to_string())?;

    let plan = kernel
        .reconfigure(h, new.clone())
        .map_err(|e| e.to_string())?;
    let (old_a, new_a) = (aliases(&old), aliases(&new));
    let gone: HashSet<_> = old_a
        .keys()
        .filter(|k| !new_a.contains_key(*k))
        .cloned()
        .collect();
    let born: HashSet<_> = new_a
        .keys()
        .filter(|k| !old_a.contains_key(*k))
        .cloned()
        .collect();
    let destroyed: HashSet<_> = plan
        .destroy
        .iter()
        .map(|p| {
            old.node(p)
                .and_then(|n| n.alias.clone())
                .unwrap_or_default()
        })
        .collect();
    let created: HashSet<_> = plan
        .create
        .iter()
        .map(|p| {
            new.node(p)
                .and_then(|n| n.alias.clone())
                .unwrap_or_default()
        })
        .collect();
    ensure!(
        destroyed == gone,
        "destroyed {destroyed:?}, expected {gone:?}"
    );
    ensure!(created == born, "created {created:?}, expected {born:?}");
    ensure!(
        plan.destroy.len() == gone.len(),
        "destroy list has duplicates"
    );
    ensure!(b_sensor.is_stale(), "destroyed counter sensor is not stale");
    let (va2, stale) = read("r.a.n")?;
    ensure!(
        !stale && va2 == va,
        "kept counter moved from {va} to {va2} across apply"
    );

    kernel.resume_stack(h).map_err(|e| e.to_string())?;
    // A second apply while the producer is running.
    std::thread::sleep(Duration::from_millis(5));
    let back = parse_stack(&format!(
        "%r {{ @tick:src[$count={total}] @count:a @count:b2 @count:z }}"
    ))
    .unwrap();
    kernel.reconfigure(h, back).map_err(|e| e.to_string())?;
    let done = kernel.wait_until(Duration::from_secs(60), || {
        read("r.z.n").map(|v| v.0 == total).unwrap_or(false)
    });
    let (a, _) = read("r.a.n")?;
    let (z, _) = read("r.z.n")?;
    ensure!(
        done && a == total && z == total,
        "lost events: a = {a}, z = {z}, produced {total}"
    );
    ensure!(
        kernel
            .active_definition(h)
            .map_err(|e| e.to_string())?
            .body
            .len()
            == 4,
        "active definition not updated"
    );
    kernel.shutdown();
    Ok(())
}

// ---------------------------------------------------------------------------

/// The demo stack with its source and sink pointed at the given files.
pub fn demo_stack(trace: &Path, out: &Path) -> StackDefinition {
    let mut def = parse_config(pandora::stdlib::DEMO_CONFIG)
        .unwrap()
        .into_iter()
        .find(|d| d.name == "dns")
        .unwrap();
    for n in &mut def.body {
        match n.type_id.as_str() {
            "trace_source" => n.bind("path", ScalarValue::Str(trace.display().to_string())),
            "file_sink" => n.bind("path", ScalarValue::Str(out.display().to_string())),
            _ => {}
        }
    }
    def
}

pub fn run_definition(def: &StackDefinition) -> Result<StackInstance, String> {
    let env = StackEnv::new(Arc::new(pandora::stdlib::registry()), SensorRegistry::new());
    let mut s = instantiate(def, &env).map_err(|e| e.to_string())?;
    run_to_end(&mut s);
    Ok(s)
}

/// Inserting counters and extra sinks anywhere in the demo pipeline leaves
/// the transaction file byte-identical.
pub fn insertion_invariance(dir: &Path, trace: &Path) -> Result<usize, String> {
    let base_out = dir.join("base.txt");
    let mut s = run_definition(&demo_stack(trace, &base_out))?;
    s.destroy();
    let base = std::fs::read(&base_out).map_err(|e| e.to_string())?;
    ensure!(!base.is_empty(), "baseline produced no transactions");

    let len = demo_stack(trace, &base_out).body.len();
    let mut variants = 0;
    for pos in 1..=len {
        for kind in 0..3 {
            let out = dir.join(format!("v{pos}_{kind}.txt"));
            let side = dir.join(format!("side{pos}_{kind}.txt"));
            let mut def = demo_stack(trace, &out);
            let extra = match kind {
                0 => format!("@count:extra{pos}"),
                1 => format!("@file_sink:tap{pos}[$path={}]", lit(&side)),
                _ => format!("@count:c{pos}[$field=\"qid\"] @report:r{pos}"),
            };
            let wrapper = parse_stack(&format!("%w {{ {extra} }}")).unwrap();
            for (i, n) in wrapper.body.into_iter().enumerate() {
                def.body.insert(pos + i, n);
            }
            let mut s = run_definition(&def)?;
            s.destroy();
            let got = std::fs::read(&out).map_err(|e| e.to_string())?;
            ensure!(got == base, "output differs with {extra} inserted at {pos}");
            variants += 1;
        }
    }
    // Inside the demux branch as well.
    let out = dir.join("vbranch.txt");
    let mut def = demo_stack(trace, &out);
    let demux = def
        .body
        .iter_mut()
        .find(|n| n.type_id == "proto_demux")
        .ok_or("demo has no demux")?;
    if let pandora::adl::Shape::Demux(b) = &mut demux.shape {
        b.push(ComponentNode::simple("count"));
        b.insert(0, ComponentNode::simple("noop"));
    }
    let mut s = run_definition(&def)?;
    s.destroy();
    ensure!(
        std::fs::read(&out).map_err(|e| e.to_string())? == base,
        "output differs with components added to the demux branch"
    );
    Ok(variants + 1)
}

// ---------------------------------------------------------------------------

/// Transactions computed straight from trace text.
pub fn pairing_oracle(trace: &str, timeout: f64) -> Vec<String> {
    struct Open {
        key: (String, String, i64),
        ts: f64,
        qname: String,
    }
    let txn = EventType::intern("txn").unwrap();
    let mut open: Vec<Open> = Vec::new();
    let mut out = Vec::new();
    for line in trace.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 4 || parts[3] != "dns" {
            continue;
        }
        let ts: f64 = parts[0].parse().unwrap();
        let (src, dst) = (parts[1].to_string(), parts[2].to_string());
        let f: HashMap<&str, &str> = parts[4..]
            .iter()
            .filter_map(|p| p.split_once('='))
            .collect();
        let qid: i64 = f["qid"].parse().unwrap();
        let resp = f["is_response"] == "true";
        open.retain(|o| o.ts + timeout >= ts);
        if !resp {
            let key = (src, dst, qid);
            open.retain(|o| o.key != key);
            open.push(Open {
                key,
                ts,
                qname: f["qname"].to_string(),
            });
        } else if let Some(i) = open
            .iter()
            .position(|o| o.key == (dst.clone(), src.clone(), qid))
        {
            let q = open.remove(i);
            out.push(
                Event::builder(txn)
                    .attr("ts", q.ts)
                    .attr("client", dst.as_str())
                    .attr("server", src.as_str())
                    .attr("qid", qid)
                    .attr("qname", q.qname.as_str())
                    .attr("latency", ts - q.ts)
                    .build()
                    .canonical_line(),
            );
        }
    }
    out
}

/// Runs the demo twice over one trace: identical output, matching the
/// pairing model, with the matcher's counters conserving its input.
pub fn demo_determinism(dir: &Path, trace: &Path) -> Result<usize, String> {
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("demo_run{run}.txt"));
        let mut s = run_definition(&demo_stack(trace, &out))?;
        let get = |n: &str| sensor(&s, &format!("dns.pair_matcher.{n}"));
        let (inputs, matched, orphans, pending) = (
            get("inputs")?,
            get("matched")?,
            get("orphans")?,
            get("pending")?,
        );
        ensure!(
            matched + orphans + pending == inputs,
            "matched {matched} + orphans {orphans} + pending {pending} != inputs {inputs}"
        );
        let emitted = sensor(&s, "dns.trace_source.emitted")?;
        let records = std::fs::read_to_string(trace)
            .map_err(|e| e.to_string())?
            .lines()
            .count();
        ensure!(
            emitted as usize == records,
            "source emitted {emitted} of {records} records"
        );
        s.destroy();
        outputs.push(std::fs::read_to_string(&out).map_err(|e| e.to_string())?);
    }
    ensure!(
        outputs[0] == outputs[1],
        "two runs over the same trace differ"
    );
    let expected = pairing_oracle(&std::fs::read_to_string(trace).unwrap(), 5.0);
    let got: Vec<&str> = outputs[0].lines().collect();
    ensure!(
        got.len() == expected.len(),
        "{} transactions, model expects {}",
        got.len(),
        expected.len()
    );
    if let Some(i) = (0..got.len()).find(|&i| got[i] != expected[i]) {
        return Err(format!(
            "transaction {i}: {} vs model {}",
            got[i], expected[i]
        ));
    }
    Ok(got.len())
}

// ---------------------------------------------------------------------------

const SCRIPT_CONFIG: &str = r#"
%app { @tick[$count=50] @count:c @noop:mid @count:z }
%side:sd { @tick[$count=3] @report }
"#;

/// Builds the same kernel state once through the text protocol and once
/// through a configuration file plus direct API calls; the snapshots must
/// be equal.
pub fn protocol_equivalence(dir: &Path) -> Result<(), String> {
    let settle = |k: &Kernel| {
        k.wait_until(Duration::from_secs(10), || {
            k.sensors()
                .lookup("app.z.n")
                .map(|s| s.read_i64() == 50)
                .unwrap_or(false)
        })
    };

    // Path 1: protocol session.
    let proto = Kernel::with_stdlib();
    let mut session = Session::new(Controller::new(proto.clone()));
    let mut script: Vec<String> = vec!["DEFINE <<".into()];
    script.extend(SCRIPT_CONFIG.lines().map(String::from));
    script.push(".".into());
    script.extend(
        [
            r#"SET stored app/0 count 50"#,
            "START app",
            "START side alt",
            r#"SET active 1/1 field "seq""#,
            "GET stored app/1 field",
            "GET active 1/1 field",
            "STOP 2",
            "RECONF app <<",
            r#"%app { @tick[$count=50] @count:c[$field="seq"] @count:z }"#,
            ".",
            r#"SET stored side/1 stdout false"#,
        ]
        .map(String::from),
    );
    for line in &script {
        if let Some(r) = session.feed(line) {
            ensure!(r.is_ok(), "{line:?} failed: {}", r.to_wire().trim_end());
            let want = match line.as_str() {
                "GET stored app/1 field" => Some("\"\""),
                "GET active 1/1 field" => Some("\"seq\""),
                _ => None,
            };
            if let Some(w) = want {
                ensure!(
                    r.lines() == [w],
                    "{line:?} returned {:?}, expected {w}",
                    r.lines()
                );
            }
        }
        if line == "START app" {
            ensure!(settle(&proto), "protocol path: app did not finish");
        }
    }

    // Path 2: configuration file and direct calls.
    let cfg = dir.join("equiv.pandora");
    std::fs::write(&cfg, SCRIPT_CONFIG).unwrap();
    let api = Kernel::with_stdlib();
    let e = |e: pandora::KernelError| e.to_string();
    api.load_config(&std::fs::read_to_string(&cfg).unwrap())
        .map_err(e)?;
    api.set_option(
        Scope::Stored,
        "app",
        &NodePath::top(0),
        "count",
        ScalarValue::Int(50),
    )
    .map_err(e)?;
    let h1 = api.start_stack("app", StartOptions::default()).map_err(e)?;
    ensure!(settle(&api), "API path: app did not finish");
    let h2 = api
        .start_stack("side", StartOptions::alias("alt"))
        .map_err(e)?;
    api.set_option(
        Scope::Active,
        "1",
        &NodePath::top(1),
        "field",
        ScalarValue::Str("seq".into()),
    )
    .map_err(e)?;
    let stored = api
        .get_option(Scope::Stored, "app", &NodePath::top(1), "field")
        .map_err(e)?;
    let active = api
        .get_option(Scope::Active, "1", &NodePath::top(1), "field")
        .map_err(e)?;
    ensure!(
        stored == ScalarValue::Str(String::new()) && active == ScalarValue::Str("seq".into()),
        "API path: stored {stored}, active {active}"
    );
    api.stop_stack(h2).map_err(e)?;
    api.reconfigure(
        h1,
        parse_stack(r#"%app { @tick[$count=50] @count:c[$field="seq"] @count:z }"#).unwrap(),
    )
    .map_err(e)?;
    api.set_option(
        Scope::Stored,
        "side",
        &NodePath::top(1),
        "stdout",
        ScalarValue::Bool(false),
    )
    .map_err(e)?;

    let (a, b) = (proto.snapshot(), api.snapshot());
    proto.shutdown();
    api.shutdown();
    ensure!(a == b, "snapshots differ:\nprotocol {a:#?}\napi {b:#?}");
    ensure!(
        a.stacks.len() == 2 && a.stored.len() == 2,
        "unexpected snapshot shape {a:#?}"
    );
    Ok(())
}

/// Seconds elapsed while running `f`.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}
