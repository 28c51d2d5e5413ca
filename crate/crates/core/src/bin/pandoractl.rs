//! Command-line client for the control protocol.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args as ClapArgs, Parser, Subcommand};
use pandora::control::{literal_arg, Client, ComponentPath, Request, Response};
use pandora::kernel::Scope;

#[derive(Parser)]
#[command(version, about = "Talk to a running kernel")]
struct Cli {
    #[arg(long, default_value = "127.0.0.1:7070", global = true)]
    endpoint: String,
    /// Print responses as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(ClapArgs)]
struct ScopeFlag {
    /// Address the running instance (default).
    #[arg(long, conflicts_with = "stored")]
    active: bool,
    /// Address the stored definition.
    #[arg(long)]
    stored: bool,
}

impl ScopeFlag {
    fn scope(&self) -> Scope {
        if self.stored {
            Scope::Stored
        } else {
            Scope::Active
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// List stacks.
    List,
    /// Print stored definitions.
    Defs,
    /// Store definitions from a file (`-` for stdin).
    Define { file: PathBuf },
    /// Start a stored stack.
    Start {
        name: String,
        #[arg(long)]
        alias: Option<String>,
    },
    /// Stop a stack by handle.
    Stop { handle: u64 },
    /// Hold a running stack.
    Pause { stack: String },
    /// Let a paused stack run again.
    Resume { stack: String },
    /// Print a stored or running definition.
    Dump {
        #[command(flatten)]
        scope: ScopeFlag,
        stack: String,
    },
    /// Reconfigure a running stack from a definition file.
    Reconf { stack: String, file: PathBuf },
    /// Read an option: `get --active dns/0 path`.
    Get {
        #[command(flatten)]
        scope: ScopeFlag,
        path: String,
        option: String,
    },
    /// Write an option; bare words are sent as strings.
    Set {
        #[command(flatten)]
        scope: ScopeFlag,
        path: String,
        option: String,
        value: String,
    },
    /// List sensors.
    Sensors,
    /// Read one sensor.
    Sensor { name: String },
    /// Send a raw protocol line.
    Raw { line: Vec<String> },
}

fn read_text(file: &PathBuf) -> anyhow::Result<String> {
    if file.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))
    }
}

fn path(s: &str) -> anyhow::Result<ComponentPath> {
    s.parse().map_err(anyhow::Error::msg)
}

fn run(cli: Cli) -> anyhow::Result<Response> {
    let mut client = Client::connect(&cli.endpoint)
        .with_context(|| format!("connecting to {}", cli.endpoint))?;
    let resp = match cli.command {
        Cmd::Define { file } => {
            client.send_line(&format!("DEFINE {}", read_text(&file)?.trim()))?
        }
        Cmd::Reconf { stack, file } => {
            client.send_line(&format!("RECONF {stack} {}", read_text(&file)?.trim()))?
        }
        Cmd::Raw { line } => client.send_line(&line.join(" "))?,
        other => {
            let req = match other {
                Cmd::List => Request::List,
                Cmd::Defs => Request::Defs,
                Cmd::Start { name, alias } => Request::Start { name, alias },
                Cmd::Stop { handle } => Request::Stop(pandora::StackHandle(handle)),
                Cmd::Pause { stack } => Request::Pause(stack),
                Cmd::Resume { stack } => Request::Resume(stack),
                Cmd::Dump { scope, stack } => Request::Dump {
                    scope: if scope.active {
                        Scope::Active
                    } else {
                        Scope::Stored
                    },
                    selector: stack,
                },
                Cmd::Get {
                    scope,
                    path: p,
                    option,
                } => Request::Get {
                    scope: scope.scope(),
                    path: path(&p)?,
                    option,
                },
                Cmd::Set {
                    scope,
                    path: p,
                    option,
                    value,
                } => Request::Set {
                    scope: scope.scope(),
                    path: path(&p)?,
                    option,
                    value: literal_arg(&value),
                },
                Cmd::Sensors => Request::SensorList,
                Cmd::Sensor { name } => Request::SensorGet(name),
                Cmd::Define { .. } | Cmd::Reconf { .. } | Cmd::Raw { .. } => unreachable!(),
            };
            client.request(&req)?
        }
    };
    client.close();
    Ok(resp)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(resp) => {
            // A closed stdout (e.g. piped into `head`) is not an error.
            let mut out = std::io::stdout().lock();
            if json {
                let _ = writeln!(out, "{}", resp.to_json());
            } else {
                match &resp {
                    Response::Ok(lines) => {
                        for l in lines {
                            if writeln!(out, "{l}").is_err() {
                                break;
                            }
                        }
                    }
                    Response::Err { code, message } => eprintln!("error ({code}): {message}"),
                }
            }
            if resp.is_ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("pandoractl: {e:#}");
            ExitCode::from(2)
        }
    }
}
