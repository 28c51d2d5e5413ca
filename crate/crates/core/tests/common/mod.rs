//! Test-side oracles shared by the integration tests.
#![allow(dead_code)]

pub mod checks;
pub mod grammar;
pub mod probes;

use std::path::Path;
use std::time::{Duration, Instant};

use pandora::assembly::StackInstance;
use pandora::component::Production;

/// Drives a stack's initial component until it is exhausted.
pub fn run_to_end(stack: &mut StackInstance) -> usize {
    let mut n = 0;
    loop {
        match stack.produce().expect("produce") {
            Production::Emitted => n += 1,
            Production::Idle(d) => std::thread::sleep(d),
            Production::Exhausted => return n,
        }
    }
}

pub fn wait_for(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + timeout;
    while Instant::now() < end {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    cond()
}

pub fn write_trace(dir: &Path, records: usize, seed: u64) -> std::path::PathBuf {
    let p = dir.join(format!("trace_{records}_{seed}.txt"));
    std::fs::write(&p, pandora::stdlib::generate(records, seed)).unwrap();
    p
}

/// Escapes a path for use inside an ADL string literal.
pub fn lit(p: &Path) -> String {
    pandora::adl::quote(&p.display().to_string())
}
