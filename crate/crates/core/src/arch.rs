//! Machine description: channel geometry, buffers, timing, energy and area.
//!
//! Every field has a default, so an empty TOML file resolves to the
//! AiM-like baseline (16 one-bank PIMcores, 2 KB GBUF, no LBUF).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which functions a PIMcore implements; only affects area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PimcoreFunctions {
    /// MAC, BN and ReLU only.
    #[default]
    AimLike,
    /// Adds residual addition and pooling.
    Pimfused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub num_banks: usize,
    pub banks_per_pimcore: usize,
    pub gbuf_bytes: u64,
    /// Per-PIMcore LBUF capacity; 0 means no LBUF.
    pub lbuf_bytes: u64,
    pub macs_per_pimcore_per_cycle: u64,
    pub gbcore_ops_per_cycle: u64,
    pub burst_bytes: u64,
    pub row_bytes: u64,
    /// Partial-sum registers in each bank's near-bank datapath. Bounds how
    /// many output pixels one LBUF-held weight burst can be applied to.
    pub accumulators_per_bank: u64,
    pub pimcore_functions: PimcoreFunctions,
    pub clock_ghz: f64,
    pub timing: TimingParams,
    pub energy: EnergyParams,
    pub area: AreaParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    #[serde(rename = "tRCD")]
    pub t_rcd: u64,
    #[serde(rename = "tRP")]
    pub t_rp: u64,
    #[serde(rename = "tCL")]
    pub t_cl: u64,
    #[serde(rename = "tCCD")]
    pub t_ccd: u64,
    #[serde(rename = "tRAS")]
    pub t_ras: u64,
    #[serde(rename = "tWR")]
    pub t_wr: u64,
    pub bus_transfer_cycles_per_burst: u64,
    pub pim_cmd_issue_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub dram_io_access_pj_per_byte: f64,
    pub near_bank_access_fraction: f64,
    /// `[capacity_bytes, pJ/B]` anchors, interpolated linearly in log2(capacity).
    pub sram_access_pj: Vec<(u64, f64)>,
    pub mac_op_pj: f64,
    pub gbcore_op_pj: f64,
    pub bus_pj_per_byte: f64,
    pub leakage_mw: LeakageParams,
}

/// Static power per component, integrated over the simulated runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageParams {
    pub pimcore: f64,
    pub gbcore: f64,
    pub sram_per_kib: f64,
    pub bus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaParams {
    /// MAC/BN/ReLU PIMcore.
    pub pimcore_mm2: f64,
    /// PIMcore that also pools and adds residuals.
    pub pimfused_pimcore_mm2: f64,
    pub gbcore_mm2: f64,
    /// `[capacity_bytes, mm²]` anchors, interpolated linearly in log2(capacity).
    pub sram_mm2: Vec<(u64, f64)>,
    pub bus_mm2: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            num_banks: 16,
            banks_per_pimcore: 1,
            gbuf_bytes: 2048,
            lbuf_bytes: 0,
            macs_per_pimcore_per_cycle: 384,
            gbcore_ops_per_cycle: 32,
            burst_bytes: 32,
            row_bytes: 2048,
            accumulators_per_bank: 64,
            pimcore_functions: PimcoreFunctions::AimLike,
            clock_ghz: 1.0,
            timing: TimingParams::default(),
            energy: EnergyParams::default(),
            area: AreaParams::default(),
        }
    }
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            t_rcd: 18,
            t_rp: 18,
            t_cl: 20,
            t_ccd: 2,
            t_ras: 42,
            t_wr: 18,
            bus_transfer_cycles_per_burst: 8,
            pim_cmd_issue_cycles: 1,
        }
    }
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            dram_io_access_pj_per_byte: 8.0,
            near_bank_access_fraction: 0.40,
            sram_access_pj: vec![(64, 0.06), (256, 0.08), (1024, 0.12), (8192, 0.30), (65536, 0.80)],
            mac_op_pj: 6.0,
            gbcore_op_pj: 1.0,
            bus_pj_per_byte: 2.0,
            leakage_mw: LeakageParams::default(),
        }
    }
}

impl Default for LeakageParams {
    fn default() -> Self {
        LeakageParams { pimcore: 0.5, gbcore: 0.5, sram_per_kib: 0.05, bus: 0.2 }
    }
}

impl Default for AreaParams {
    fn default() -> Self {
        AreaParams {
            pimcore_mm2: 0.11,
            pimfused_pimcore_mm2: 0.165,
            gbcore_mm2: 0.12,
            sram_mm2: vec![(64, 0.055), (256, 0.064), (1024, 0.085), (8192, 0.19), (65536, 0.62)],
            bus_mm2: 0.04,
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), reason: reason.into() }
}

fn check_table(field: &str, table: &[(u64, f64)]) -> Result<()> {
    if table.is_empty() {
        return Err(bad(field, "needs at least one anchor"));
    }
    for w in table.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(bad(field, "capacities must be strictly increasing"));
        }
        if w[1].1 < w[0].1 {
            return Err(bad(field, "values must be non-decreasing in capacity"));
        }
    }
    if table.iter().any(|p| p.0 == 0 || p.1 < 0.0 || !p.1.is_finite()) {
        return Err(bad(field, "anchors need a positive capacity and a finite non-negative value"));
    }
    Ok(())
}

impl ArchConfig {
    pub fn num_pimcores(&self) -> usize {
        self.num_banks / self.banks_per_pimcore
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_banks", self.num_banks as u64),
            ("banks_per_pimcore", self.banks_per_pimcore as u64),
            ("gbuf_bytes", self.gbuf_bytes),
            ("macs_per_pimcore_per_cycle", self.macs_per_pimcore_per_cycle),
            ("gbcore_ops_per_cycle", self.gbcore_ops_per_cycle),
            ("burst_bytes", self.burst_bytes),
            ("row_bytes", self.row_bytes),
            ("accumulators_per_bank", self.accumulators_per_bank),
            ("timing.tRCD", self.timing.t_rcd),
            ("timing.tRP", self.timing.t_rp),
            ("timing.tCL", self.timing.t_cl),
            ("timing.tCCD", self.timing.t_ccd),
            ("timing.tRAS", self.timing.t_ras),
            ("timing.tWR", self.timing.t_wr),
            ("timing.bus_transfer_cycles_per_burst", self.timing.bus_transfer_cycles_per_burst),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(bad(field, "must be strictly positive"));
            }
        }
        if !self.num_banks.is_multiple_of(self.banks_per_pimcore) {
            return Err(bad(
                "banks_per_pimcore",
                format!("{} banks are not divisible into groups of {}", self.num_banks, self.banks_per_pimcore),
            ));
        }
        if !self.row_bytes.is_multiple_of(self.burst_bytes) {
            return Err(bad("row_bytes", "must be a multiple of burst_bytes"));
        }
        if self.clock_ghz <= 0.0 || !self.clock_ghz.is_finite() {
            return Err(bad("clock_ghz", "must be strictly positive"));
        }
        let e = &self.energy;
        if !(e.near_bank_access_fraction > 0.0 && e.near_bank_access_fraction <= 1.0) {
            return Err(bad("energy.near_bank_access_fraction", "must lie in (0, 1]"));
        }
        let energies = [
            ("energy.dram_io_access_pj_per_byte", e.dram_io_access_pj_per_byte),
            ("energy.mac_op_pj", e.mac_op_pj),
            ("energy.gbcore_op_pj", e.gbcore_op_pj),
            ("energy.bus_pj_per_byte", e.bus_pj_per_byte),
            ("energy.leakage_mw.pimcore", e.leakage_mw.pimcore),
            ("energy.leakage_mw.gbcore", e.leakage_mw.gbcore),
            ("energy.leakage_mw.sram_per_kib", e.leakage_mw.sram_per_kib),
            ("energy.leakage_mw.bus", e.leakage_mw.bus),
            ("area.pimcore_mm2", self.area.pimcore_mm2),
            ("area.pimfused_pimcore_mm2", self.area.pimfused_pimcore_mm2),
            ("area.gbcore_mm2", self.area.gbcore_mm2),
            ("area.bus_mm2", self.area.bus_mm2),
        ];
        for (field, v) in energies {
            if v < 0.0 || !v.is_finite() {
                return Err(bad(field, "must be finite and non-negative"));
            }
        }
        check_table("energy.sram_access_pj", &e.sram_access_pj)?;
        check_table("area.sram_mm2", &self.area.sram_mm2)?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<ArchConfig> {
        let cfg: ArchConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ArchConfig> {
        ArchConfig::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Layers a partial TOML document over this config and revalidates.
    pub fn with_overlay(&self, overlay: &str) -> Result<ArchConfig> {
        let mut base = toml::Value::try_from(self)?;
        let top: toml::Value = toml::from_str(overlay)?;
        merge(&mut base, top);
        let cfg: ArchConfig = base.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// The `G<m>K_L<n>` label for the current buffer sizes.
    pub fn label(&self) -> String {
        format_label(self.gbuf_bytes, self.lbuf_bytes)
    }
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `G<m>K_L<n>` (LBUF may carry a `K` suffix) into byte capacities.
pub fn parse_label(label: &str) -> Result<(u64, u64)> {
    let err = || Error::Label(label.to_string());
    let rest = label.strip_prefix('G').ok_or_else(err)?;
    let (g, l) = rest.split_once("K_L").ok_or_else(err)?;
    let m: u64 = g.parse().map_err(|_| err())?;
    if m == 0 || g.starts_with('+') {
        return Err(err());
    }
    let (digits, scale) = match l.strip_suffix('K') {
        Some(d) => (d, 1024),
        None => (l, 1),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    let n: u64 = digits.parse().map_err(|_| err())?;
    Ok((m * 1024, n * scale))
}

pub fn format_label(gbuf_bytes: u64, lbuf_bytes: u64) -> String {
    let l = if lbuf_bytes >= 1024 && lbuf_bytes.is_multiple_of(1024) {
        format!("{}K", lbuf_bytes / 1024)
    } else {
        lbuf_bytes.to_string()
    };
    format!("G{}K_L{}", gbuf_bytes / 1024, l)
}

/// Copy of `base` with GBUF and LBUF resized per `label`.
pub fn named_config(label: &str, base: &ArchConfig) -> Result<ArchConfig> {
    let (gbuf_bytes, lbuf_bytes) = parse_label(label)?;
    Ok(ArchConfig { gbuf_bytes, lbuf_bytes, ..base.clone() })
}

/// Linear interpolation in log2(capacity); flat below the first anchor,
/// continued with the last segment's slope above the last one. Zero
/// capacity maps to zero.
pub fn interpolate_log(table: &[(u64, f64)], capacity: u64) -> f64 {
    if capacity == 0 || table.is_empty() {
        return 0.0;
    }
    let x = (capacity as f64).log2();
    let first = table[0];
    if capacity <= first.0 || table.len() == 1 {
        return if capacity <= first.0 { first.1 } else { table[table.len() - 1].1 };
    }
    let seg = table
        .windows(2)
        .find(|w| capacity <= w[1].0)
        .map(|w| (w[0], w[1]))
        .unwrap_or((table[table.len() - 2], table[table.len() - 1]));
    let (x0, x1) = ((seg.0 .0 as f64).log2(), (seg.1 .0 as f64).log2());
    seg.0 .1 + (seg.1 .1 - seg.0 .1) * (x - x0) / (x1 - x0)
}
