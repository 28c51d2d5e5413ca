//! Runs the microbenchmarks and prints a CSV table.

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use pandora::bench::{self, BenchConfig, BenchError, BenchResult};

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Traversal,
    Sensors,
}

#[derive(Parser)]
#[command(version, about = "Measure dispatch and introspection costs")]
struct Args {
    which: Which,
    #[arg(long, default_value_t = 50)]
    runs: usize,
    /// Also write the table to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Chain lengths for the traversal benchmark.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
    chains: Vec<usize>,
    /// Minimum duration of one sample, in milliseconds.
    #[arg(long, default_value_t = 100)]
    sample_ms: u64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = BenchConfig {
        runs: args.runs,
        min_sample: std::time::Duration::from_millis(args.sample_ms),
        ..Default::default()
    };
    let mut results: Vec<BenchResult> = Vec::new();
    let mut failed = false;
    let mut keep = |r: Result<BenchResult, BenchError>| match r {
        Ok(r) => results.push(r),
        Err(BenchError::Unstable { result, .. }) => {
            eprintln!(
                "{}: unstable ({:.2}% stderr)",
                result.benchmark, result.stderr_pct
            );
            failed = true;
            results.push(*result);
        }
        Err(e) => {
            eprintln!("{e}");
            failed = true;
        }
    };
    match args.which {
        Which::Traversal => {
            for &n in &args.chains {
                keep(bench::bench_traversal(n, 10_000, &cfg));
            }
        }
        Which::Sensors => match bench::bench_sensor_vs_mop(1_000_000, &cfg) {
            Ok(r) => {
                eprintln!("sensor read is {:.1}x faster than control GET", r.ratio());
                keep(Ok(r.sensor));
                keep(Ok(r.mop));
            }
            Err(e) => keep(Err(e)),
        },
    }
    let mut out = Vec::new();
    bench::report(&results, &mut out).expect("in-memory write");
    print!("{}", String::from_utf8_lossy(&out));
    if let Some(path) = &args.csv {
        let written = File::create(path).and_then(|f| bench::report(&results, f));
        if let Err(e) = written {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
