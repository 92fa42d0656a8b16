use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use thinkaudit_core::backend::conformance::run_conformance;
use thinkaudit_core::backend::{open_backend, serve, BackendOptions, TIMEOUT_ENV};
use thinkaudit_core::config::{AdapterSpec, AuditConfig};
use thinkaudit_core::forget_set::generate_forget_set;
use thinkaudit_core::report::{render_report, ReportFormat};
use thinkaudit_core::runner::{run_audit, AuditSummary};
use thinkaudit_core::sim_model::{configure_preset, preset_catalog};
use thinkaudit_core::{BootstrapParams, ForgetSet, ParserConvention, PrefillArm, SimBackend};

#[derive(Parser)]
#[command(
    name = "thinkaudit",
    version,
    about = "Parser-split canary audits for reasoning-formatted models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run audits and render reports.
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
    /// Write a synthetic forget set.
    GenForgetSet {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// The built-in simulator.
    Simulate {
        #[command(subcommand)]
        command: SimulateCommand,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Probe every adapter and append records to the output JSONL.
    Run(RunArgs),
    /// Render tables from a results JSONL.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = BootstrapParams::default().n_boot)]
        n_boot: usize,
        #[arg(long, default_value_t = BootstrapParams::default().seed)]
        seed: u64,
    },
    /// Check that a backend honors the protocol.
    Conformance {
        #[arg(long)]
        backend: String,
        #[arg(long)]
        forget_set: PathBuf,
        /// Per-request timeout in seconds.
        #[arg(long)]
        timeout: Option<f64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML audit config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Label and backend URI pairs, replacing the config's adapters.
    #[arg(long, num_args = 2.., value_names = ["LABEL", "URI"])]
    adapters: Vec<String>,
    #[arg(long)]
    forget_set: Option<PathBuf>,
    /// Prefill arms to run besides auto: bio, meta, none.
    #[arg(long, num_args = 1..)]
    prefill_mode: Vec<PrefillArm>,
    #[arg(long, value_enum)]
    convention: Option<ConventionArg>,
    /// Also score the teacher-forced continuation on prefill arms.
    #[arg(long)]
    tf: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Keep raw generations in the records.
    #[arg(long)]
    store_raw: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    EmptyThink,
    FullThink,
    Both,
}

impl ConventionArg {
    fn conventions(self) -> Vec<ParserConvention> {
        match self {
            ConventionArg::EmptyThink => vec![ParserConvention::EmptyThink],
            ConventionArg::FullThink => vec![ParserConvention::FullThink],
            ConventionArg::Both => ParserConvention::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Serve a preset over the HTTP protocol.
    Serve {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 8008)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Forget set to simulate; defaults to the generated set below.
        #[arg(long)]
        forget_set: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        n: usize,
    },
    /// List the presets.
    List {
        #[arg(long)]
        json: bool,
    },
}

fn build_config(args: RunArgs) -> Result<AuditConfig> {
    if !args.adapters.len().is_multiple_of(2) {
        bail!("--adapters takes LABEL URI pairs, got {} values", args.adapters.len());
    }
    let adapters: Vec<AdapterSpec> = args
        .adapters
        .chunks(2)
        .map(|p| AdapterSpec {
            label: p[0].clone(),
            uri: p[1].clone(),
        })
        .collect();
    let mut cfg = match &args.config {
        Some(path) => AuditConfig::load(path)?,
        None => {
            let (Some(fs), Some(out)) = (&args.forget_set, &args.out) else {
                bail!("without --config, --adapters, --forget-set and --out are required");
            };
            AuditConfig::new(Vec::new(), fs, out)
        }
    };
    if !adapters.is_empty() {
        cfg.adapters = adapters;
    }
    if let Some(fs) = args.forget_set {
        cfg.forget_set_path = fs;
    }
    if let Some(out) = args.out {
        cfg.out_path = out;
    }
    if !args.prefill_mode.is_empty() {
        cfg.arms = std::iter::once(PrefillArm::Auto).chain(args.prefill_mode).collect();
    }
    if let Some(c) = args.convention {
        cfg.conventions = c.conventions();
    }
    if args.tf {
        cfg.tf_enabled = true;
    }
    if let Some(c) = args.concurrency {
        cfg.concurrency_limit = c;
    }
    if args.store_raw {
        cfg.store_raw = true;
    }
    Ok(cfg)
}

fn print_summary(s: &AuditSummary) {
    println!("run {} -> {}", s.run_id, s.out_path.display());
    println!(
        "requests {}, skipped {}, written {}, rows {}, error rows {}{}",
        s.requests,
        s.skipped,
        s.records_written,
        s.total_rows,
        s.error_rows,
        if s.degraded { " (degraded)" } else { "" }
    );
    println!("| adapter | arm | convention | out_acc | thk_leak | gap | well-formed |");
    println!("|---|---|---|---|---|---|---|");
    for c in &s.cells {
        println!(
            "| {} | {} | {} | {:.3} ({}/{}) | {:.3} ({}/{}) | {:+.3} | {}/{} |",
            c.adapter,
            c.arm,
            c.convention,
            c.out_acc,
            c.out_hits,
            c.n,
            c.thk_leak,
            c.thk_hits,
            c.n,
            c.gap,
            c.wellformed,
            c.n
        );
    }
}

fn load_forget_set(path: Option<PathBuf>, seed: u64, n: usize) -> Result<ForgetSet> {
    Ok(match path {
        Some(p) => ForgetSet::load(&p)?,
        None => generate_forget_set(seed, n)?,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Audit { command } => match command {
            AuditCommand::Run(args) => {
                let cfg = build_config(args)?;
                let summary = run_audit(&cfg)?;
                print_summary(&summary);
                Ok(if summary.degraded {
                    ExitCode::from(2)
                } else {
                    ExitCode::SUCCESS
                })
            }
            AuditCommand::Report {
                input,
                format,
                out,
                n_boot,
                seed,
            } => {
                let params = BootstrapParams {
                    n_boot,
                    seed,
                    ..BootstrapParams::default()
                };
                let text = render_report(&input, format, &params)?;
                match out {
                    Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                    None => std::io::stdout().write_all(text.as_bytes())?,
                }
                Ok(ExitCode::SUCCESS)
            }
            AuditCommand::Conformance {
                backend,
                forget_set,
                timeout,
            } => {
                let set = ForgetSet::load(&forget_set)?;
                let mut opts = BackendOptions::default();
                if let Some(t) = timeout {
                    opts.timeout = std::time::Duration::from_secs_f64(t);
                }
                let b = open_backend(&backend, &set, &opts)?;
                let report = run_conformance(b.as_ref(), &set, &Default::default());
                for c in &report.checks {
                    println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
                Ok(if report.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                })
            }
        },
        Command::GenForgetSet { seed, n, out } => {
            let set = generate_forget_set(seed, n)?;
            set.save(&out)?;
            println!("{} authors -> {} ({})", set.len(), out.display(), set.content_hash());
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { command } => match command {
            SimulateCommand::List { json } => {
                if json {
                    println!("{}", serde_json::to_string_pretty(preset_catalog())?);
                } else {
                    for p in preset_catalog() {
                        println!("{:<16} {}", p.name, p.summary);
                    }
                }
                Ok(ExitCode::SUCCESS)
            }
            SimulateCommand::Serve {
                preset,
                port,
                host,
                forget_set,
                seed,
                n,
            } => {
                let set = load_forget_set(forget_set, seed, n)?;
                let config = configure_preset(&preset, &set)?;
                let handle = serve(Arc::new(SimBackend::new(config, set)), SocketAddr::new(host, port))
                    .with_context(|| format!("binding {host}:{port}"))?;
                println!("serving {preset} on {}", handle.url());
                std::io::stdout().flush()?;
                handle.wait();
                Ok(ExitCode::SUCCESS)
            }
        },
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    // Usage errors exit 1 like any other failure; 2 is reserved for degraded runs.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.to_string().contains("timed out") {
                eprintln!("hint: raise the per-request timeout with {TIMEOUT_ENV}=<seconds>");
            }
            ExitCode::FAILURE
        }
    }
}
