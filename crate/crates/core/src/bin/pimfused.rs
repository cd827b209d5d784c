use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pimfused::experiment::{self, ExperimentSpec, ReportFormat, Scenario, System};
use pimfused::simcore::{simulate, SimStats};
use pimfused::trace::{emit_trace_with, trace_stats, CommandTrace, EmitOptions};
use pimfused::workload::LayerCounting;
use pimfused::{analyze, named_config, ArchConfig};

const OVERRIDES_ENV: &str = "PIMFUSED_ARCH_OVERRIDES";

#[derive(Parser)]
#[command(name = "pimfused", version, about = "Fused-layer dataflow mapper and simulator for near-bank DRAM-PIM")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ArchArgs {
    /// Architecture TOML; built-in defaults when omitted.
    #[arg(long)]
    arch: Option<PathBuf>,
    /// aim-like, fused16 or fused4.
    #[arg(long, default_value = "aim-like")]
    system: String,
    /// Buffer label such as G32K_L256; keeps the config's sizes when omitted.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args, Clone)]
struct WorkArgs {
    /// `resnet18` or a workload JSON file.
    #[arg(long, default_value = "resnet18")]
    workload: String,
    /// first8 or full.
    #[arg(long, default_value = "full")]
    scenario: String,
    /// Count only convolutions when forming fused kernels.
    #[arg(long)]
    conv_only: bool,
    /// Fusion plan JSON; replaces the system's default plan and the scenario cut.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Show the architecture configuration.
    Config {
        #[arg(long)]
        print_defaults: bool,
        #[command(flatten)]
        arch: ArchArgs,
    },
    /// Replication, redundancy and traffic metrics as JSON.
    Analyze {
        #[command(flatten)]
        work: WorkArgs,
        #[command(flatten)]
        arch: ArchArgs,
    },
    /// Emit a command trace.
    Trace {
        #[command(flatten)]
        work: WorkArgs,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_commands: Option<usize>,
    },
    /// Replay a trace and write stats JSON.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Energy and area report from stats JSON.
    Ppa {
        #[arg(long)]
        stats: PathBuf,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment spec or a preset sweep.
    Run {
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// fig5, fig6 or fig7.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn base_arch(path: Option<&Path>) -> Result<ArchConfig> {
    let mut arch = match path {
        Some(p) => ArchConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ArchConfig::default(),
    };
    if let Ok(overlay) = std::env::var(OVERRIDES_ENV) {
        let text = std::fs::read_to_string(&overlay).with_context(|| format!("reading {OVERRIDES_ENV}={overlay}"))?;
        arch = arch.with_overlay(&text)?;
    }
    arch.validate()?;
    Ok(arch)
}

fn resolve(a: &ArchArgs) -> Result<(System, ArchConfig)> {
    let Some(system) = System::parse(&a.system.replace('-', "_")) else {
        bail!("unknown system `{}` (aim-like, fused16, fused4)", a.system)
    };
    let mut arch = system.arch(&base_arch(a.arch.as_deref())?);
    if let Some(l) = &a.label {
        arch = named_config(l, &arch)?;
    }
    Ok((system, arch))
}

fn setup(w: &WorkArgs, system: System, arch: &ArchConfig) -> Result<(pimfused::CnnGraph, pimfused::FusionPlan)> {
    let scenario = match w.scenario.to_ascii_lowercase().as_str() {
        "first8" => Scenario::First8,
        "full" => Scenario::Full,
        s => bail!("unknown scenario `{s}` (first8, full)"),
    };
    let counting = if w.conv_only { LayerCounting::ConvOnly } else { LayerCounting::AllLayers };
    let full = experiment::load_workload(&w.workload)?;
    if let Some(p) = &w.plan {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let plan: pimfused::FusionPlan =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        plan.validate(&full, arch)?;
        return Ok((full, plan));
    }
    Ok(experiment::scenario_setup(&full, scenario, system, arch, counting)?)
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Config { print_defaults, arch } => {
            let cfg = if print_defaults { ArchConfig::default() } else { resolve(&arch)?.1 };
            print!("{}", cfg.to_toml_string()?);
        }
        Cmd::Analyze { work, arch } => {
            let (system, arch) = resolve(&arch)?;
            let (g, plan) = setup(&work, system, &arch)?;
            println!("{}", serde_json::to_string_pretty(&analyze(&g, &plan, &arch)?)?);
        }
        Cmd::Trace { work, arch, out, max_commands } => {
            let (system, arch) = resolve(&arch)?;
            let (g, plan) = setup(&work, system, &arch)?;
            let trace = emit_trace_with(&g, &plan, &arch, EmitOptions { max_commands })?;
            std::fs::write(&out, trace.serialize()).with_context(|| format!("writing {}", out.display()))?;
            let st = trace_stats(&trace, &arch);
            eprintln!("{} commands, {} cross-bank bytes", st.commands, st.cross_bank_bytes);
        }
        Cmd::Simulate { trace, arch, out } => {
            let (_, arch) = resolve(&arch)?;
            let text = std::fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let t = CommandTrace::parse(&text)?;
            if t.header.arch_digest != arch.digest() {
                eprintln!("warning: trace was emitted for a different architecture config");
            }
            let stats = simulate(&t, &arch)?;
            eprintln!("{} cycles", stats.cycles);
            write_json(&out, &stats)?;
        }
        Cmd::Ppa { stats, arch, out } => {
            let (_, arch) = resolve(&arch)?;
            let text = std::fs::read_to_string(&stats).with_context(|| format!("reading {}", stats.display()))?;
            let s: SimStats = serde_json::from_str(&text)?;
            let energy = pimfused::estimate_energy(&s, &arch)?;
            let area = pimfused::estimate_area(&arch);
            let report = serde_json::json!({
                "cycles": s.cycles,
                "energy_pj": energy.total(),
                "energy_breakdown_pj": energy,
                "area_mm2": area.total(),
                "area_breakdown_mm2": area,
            });
            write_json(&out, &report)?;
        }
        Cmd::Run { spec, preset, arch, out } => {
            let base = base_arch(arch.as_deref())?;
            let specs: Vec<(String, ExperimentSpec)> = match (spec, preset) {
                (Some(p), None) => {
                    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
                    vec![(stem, ExperimentSpec::load(&p)?)]
                }
                (None, Some(name)) => experiment::preset(&name)?
                    .into_iter()
                    .map(|s| (format!("{name}_{}", s.scenario.as_str().to_lowercase()), s))
                    .collect(),
                _ => bail!("pass exactly one of --spec or --preset"),
            };
            for (stem, spec) in specs {
                let table = experiment::run(&spec, &base)?;
                for f in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::PlotData] {
                    for p in table.report(f, &out, &stem)? {
                        eprintln!("wrote {}", p.display());
                    }
                }
            }
        }
    }
    Ok(())
}
