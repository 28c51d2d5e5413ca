//! Kernel daemon: loads configuration files, optionally starts stacks, and
//! serves the control protocol.

use std::path::PathBuf;

use anyhow::Context as _;
use clap::Parser;
use pandora::control::{serve, Controller};
use pandora::kernel::{Kernel, StartOptions};

#[derive(Parser)]
#[command(version, about = "Run the stack kernel and its control endpoint")]
struct Args {
    /// Definition file to load at startup (repeatable).
    #[arg(long)]
    config: Vec<PathBuf>,
    /// Control endpoint.
    #[arg(long, default_value = "127.0.0.1:7070")]
    control: String,
    /// Stored stack to start once configuration is loaded (repeatable).
    #[arg(long)]
    start: Vec<String>,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let kernel = Kernel::with_stdlib();
    for path in &args.config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let names = kernel
            .load_config(&text)
            .with_context(|| format!("loading {}", path.display()))?;
        log::info!("{}: stored {}", path.display(), names.join(", "));
    }
    for name in &args.start {
        let h = kernel
            .start_stack(name.as_str(), StartOptions::default())
            .with_context(|| format!("starting {name}"))?;
        log::info!("started {name} as {h}");
    }
    let server = serve(Controller::new(kernel), &args.control)
        .with_context(|| format!("binding {}", args.control))?;
    log::info!("control endpoint on {}", server.local_addr());
    server.join();
    Ok(())
}
