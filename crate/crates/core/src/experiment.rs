//! Buffer-size sweeps over the three system variants, normalized to the
//! AiM-like G2K_L0 baseline.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{named_config, ArchConfig, PimcoreFunctions};
use crate::dataflow::{FusedKernel, FusionPlan};
use crate::error::{Error, Result};
use crate::ppa::normalize;
use crate::simcore::{simulate, SimStats};
use crate::trace::emit_trace;
use crate::workload::{build_resnet18, default_fusion_plan, CnnGraph, LayerCounting};
use crate::{estimate_area, estimate_energy};

pub const BASELINE_LABEL: &str = "G2K_L0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scenario {
    First8,
    Full,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::First8 => "FIRST8",
            Scenario::Full => "FULL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum System {
    AimLike,
    Fused16,
    Fused4,
}

impl System {
    pub const ALL: [System; 3] = [System::AimLike, System::Fused16, System::Fused4];

    pub fn as_str(self) -> &'static str {
        match self {
            System::AimLike => "AIM_LIKE",
            System::Fused16 => "FUSED16",
            System::Fused4 => "FUSED4",
        }
    }

    pub fn parse(s: &str) -> Option<System> {
        System::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s) || x.as_str().replace('_', "").eq_ignore_ascii_case(s))
    }

    /// `base` with this system's PIMcore grouping and function set.
    pub fn arch(self, base: &ArchConfig) -> ArchConfig {
        let (bpc, f) = match self {
            System::AimLike => (1, PimcoreFunctions::AimLike),
            System::Fused16 => (1, PimcoreFunctions::Pimfused),
            System::Fused4 => (4, PimcoreFunctions::Pimfused),
        };
        ArchConfig { banks_per_pimcore: bpc, pimcore_functions: f, ..base.clone() }
    }

    /// Plan for `g`; the AiM-like system runs everything layer-by-layer.
    pub fn plan(self, g: &CnnGraph, arch: &ArchConfig, counting: LayerCounting) -> Result<FusionPlan> {
        match self {
            System::AimLike => Ok(FusionPlan::layer_by_layer(g)),
            _ => default_fusion_plan(g, arch.num_pimcores(), counting),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// `resnet18` or a path to a workload JSON file.
    #[serde(default = "default_workload")]
    pub workload: String,
    pub scenario: Scenario,
    pub systems: Vec<System>,
    pub grid: Vec<String>,
    #[serde(default)]
    pub counting: LayerCounting,
}

fn default_workload() -> String {
    "resnet18".into()
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<ExperimentSpec> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.systems.is_empty() {
            return Err(Error::Config { field: "grid".into(), reason: "grid and systems must be non-empty".into() });
        }
        for l in &self.grid {
            crate::arch::parse_label(l)?;
        }
        Ok(())
    }
}

/// Loads `resnet18` or a workload file.
pub fn load_workload(name: &str) -> Result<CnnGraph> {
    if name.eq_ignore_ascii_case("resnet18") {
        build_resnet18(224, 224)
    } else {
        CnnGraph::load(Path::new(name))
    }
}

/// Graph and plan for one system under a scenario.
pub fn scenario_setup(
    full: &CnnGraph,
    scenario: Scenario,
    system: System,
    arch: &ArchConfig,
    counting: LayerCounting,
) -> Result<(CnnGraph, FusionPlan)> {
    match scenario {
        Scenario::Full => Ok((full.clone(), system.plan(full, arch, counting)?)),
        Scenario::First8 => {
            // Every system runs the layers of the first fused kernel.
            let n = default_fusion_plan(full, 16, counting)?.kernels[0].layer_ids.len();
            let g = full.truncate(n);
            let plan = match system {
                System::AimLike => FusionPlan::layer_by_layer(&g),
                _ => {
                    let side = (arch.num_pimcores() as f64).sqrt() as usize;
                    FusionPlan {
                        kernels: vec![FusedKernel { layer_ids: (0..n).collect(), tiling: (side, side) }],
                        tail_layers: Vec::new(),
                    }
                }
            };
            Ok((g, plan))
        }
    }
}

/// Cycles, energy and area of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub stats: SimStats,
    pub energy_pj: f64,
    pub area_mm2: f64,
}

pub fn evaluate(g: &CnnGraph, plan: &FusionPlan, arch: &ArchConfig) -> Result<PointResult> {
    let trace = emit_trace(g, plan, arch)?;
    let stats = simulate(&trace, arch)?;
    let energy_pj = estimate_energy(&stats, arch)?.total();
    Ok(PointResult { stats, energy_pj, area_mm2: estimate_area(arch).total() })
}

/// Evaluates `system` at `label` under `scenario`.
pub fn evaluate_point(
    full: &CnnGraph,
    scenario: Scenario,
    system: System,
    label: &str,
    base: &ArchConfig,
    counting: LayerCounting,
) -> Result<PointResult> {
    let wrap = |e: Error| Error::Point {
        point: format!("{} {} {}", scenario.as_str(), system.as_str(), label),
        source: Box::new(e),
    };
    let arch = named_config(label, &system.arch(base)).map_err(wrap)?;
    let (g, plan) = scenario_setup(full, scenario, system, &arch, counting).map_err(wrap)?;
    evaluate(&g, &plan, &arch).map_err(wrap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub system: System,
    pub label: String,
    pub cycles: u64,
    pub energy: f64,
    pub area: f64,
    pub cycles_pct: f64,
    pub energy_pct: f64,
    pub area_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub scenario: Scenario,
    pub rows: Vec<ResultRow>,
}

/// Runs every (system, label) point; rows follow spec order.
pub fn run(spec: &ExperimentSpec, base: &ArchConfig) -> Result<ResultTable> {
    spec.validate()?;
    base.validate()?;
    let full = load_workload(&spec.workload)?;
    let baseline = evaluate_point(&full, spec.scenario, System::AimLike, BASELINE_LABEL, base, spec.counting)?;
    let points: Vec<(System, String)> =
        spec.systems.iter().flat_map(|&s| spec.grid.iter().map(move |l| (s, l.clone()))).collect();
    let results: Vec<Result<PointResult>> =
        points.par_iter().map(|(s, l)| evaluate_point(&full, spec.scenario, *s, l, base, spec.counting)).collect();
    let mut rows = Vec::with_capacity(points.len());
    for ((system, label), r) in points.into_iter().zip(results) {
        let r = r?;
        let pct = |v: f64, b: f64, what| normalize(v, b, what).map(|x| x * 100.0);
        rows.push(ResultRow {
            system,
            label,
            cycles: r.stats.cycles,
            energy: r.energy_pj,
            area: r.area_mm2,
            cycles_pct: pct(r.stats.cycles as f64, baseline.stats.cycles as f64, "cycles")?,
            energy_pct: pct(r.energy_pj, baseline.energy_pj, "energy")?,
            area_pct: pct(r.area_mm2, baseline.area_mm2, "area")?,
        });
    }
    Ok(ResultTable { scenario: spec.scenario, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    PlotData,
}

impl ResultTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["system", "label", "cycles", "energy", "area", "cycles_pct", "energy_pct", "area_pct"])?;
        for r in &self.rows {
            w.write_record([
                r.system.as_str().to_string(),
                r.label.clone(),
                r.cycles.to_string(),
                format!("{:.3}", r.energy),
                format!("{:.6}", r.area),
                format!("{:.3}", r.cycles_pct),
                format!("{:.3}", r.energy_pct),
                format!("{:.3}", r.area_pct),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// One `(file name, contents)` series per system and metric.
    pub fn plot_series(&self) -> Vec<(String, String)> {
        let mut systems: Vec<System> = Vec::new();
        for r in &self.rows {
            if !systems.contains(&r.system) {
                systems.push(r.system);
            }
        }
        let mut out = Vec::new();
        for s in systems {
            for metric in ["cycles", "energy", "area"] {
                let mut body = format!("# {} {} {}_pct\n", self.scenario.as_str(), s.as_str(), metric);
                for (i, r) in self.rows.iter().filter(|r| r.system == s).enumerate() {
                    let v = match metric {
                        "cycles" => r.cycles_pct,
                        "energy" => r.energy_pct,
                        _ => r.area_pct,
                    };
                    body.push_str(&format!("{i} {} {v:.3}\n", r.label));
                }
                out.push((
                    format!("{}_{}_{}.dat", self.scenario.as_str().to_lowercase(), s.as_str().to_lowercase(), metric),
                    body,
                ));
            }
        }
        out
    }

    /// Writes the table to `dir` under `stem`.
    pub fn report(&self, format: ReportFormat, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        if self.rows.is_empty() {
            return Err(Error::Config { field: "table".into(), reason: "nothing to report".into() });
        }
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        match format {
            ReportFormat::Csv => {
                let p = dir.join(format!("{stem}.csv"));
                std::fs::write(&p, self.to_csv()?)?;
                written.push(p);
            }
            ReportFormat::Json => {
                let p = dir.join(format!("{stem}.json"));
                std::fs::write(&p, serde_json::to_string_pretty(self)?)?;
                written.push(p);
            }
            ReportFormat::PlotData => {
                for (name, body) in self.plot_series() {
                    let p = dir.join(format!("{stem}_{name}"));
                    std::fs::write(&p, body)?;
                    written.push(p);
                }
            }
        }
        Ok(written)
    }
}

/// The three sweeps: GBUF @ L0, LBUF @ G2K, and the joint grid.
pub fn preset(name: &str) -> Result<Vec<ExperimentSpec>> {
    let grid: Vec<&str> = match name {
        "fig5" => vec!["G2K_L0", "G4K_L0", "G8K_L0", "G16K_L0", "G32K_L0", "G64K_L0"],
        "fig6" => vec!["G2K_L0", "G2K_L64", "G2K_L128", "G2K_L256", "G2K_L512"],
        "fig7" => vec!["G2K_L0", "G8K_L256", "G32K_L128", "G32K_L256", "G64K_L256", "G64K_L100K"],
        _ => {
            return Err(Error::Config {
                field: "preset".into(),
                reason: format!("unknown preset `{name}` (fig5, fig6, fig7)"),
            })
        }
    };
    let scenarios: &[Scenario] = if name == "fig7" { &[Scenario::Full] } else { &[Scenario::First8, Scenario::Full] };
    Ok(scenarios
        .iter()
        .map(|&scenario| ExperimentSpec {
            workload: default_workload(),
            scenario,
            systems: System::ALL.to_vec(),
            grid: grid.iter().map(|s| s.to_string()).collect(),
            counting: LayerCounting::AllLayers,
        })
        .collect())
}
