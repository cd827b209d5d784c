//! Cycle-level replay of a command trace.
//!
//! Commands issue in order and start once their banks, the bus or the
//! compute units are free. Within a dependency key, compute waits for every
//! fetch (RD, BK2LBUF, BK2GBUF) and stores wait for fetches and compute. A
//! change of barrier group waits for all earlier commands, and a GBUF fetch
//! opening a new key waits for the previous GBUF key to drain.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::dataflow::FusionPlan;
use crate::error::{Error, Result};
use crate::trace::{CommandTrace, Opcode, PimCommand, Target};
use crate::workload::CnnGraph;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpcodeStats {
    pub commands: u64,
    pub bursts: u64,
    pub busy_cycles: u64,
}

/// Counts that drive the energy model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCounts {
    /// Bank bytes moved to or from co-located PIMcores (over all banks).
    pub near_bank_bytes: u64,
    /// Bank bytes moved through the DRAM I/O onto the shared bus.
    pub io_bytes: u64,
    pub bus_bytes: u64,
    pub gbuf_read_bytes: u64,
    pub gbuf_write_bytes: u64,
    pub lbuf_read_bytes: u64,
    pub lbuf_write_bytes: u64,
    pub activates: u64,
    pub pim_macs: u64,
    pub gbcore_ops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub cycles: u64,
    pub commands: u64,
    pub per_opcode: BTreeMap<Opcode, OpcodeStats>,
    /// Cycles spanned by each barrier group (layer or reorganization), in
    /// trace order.
    pub group_cycles: Vec<(String, u64)>,
    pub actions: ActionCounts,
    /// Fraction of cycles the PIMcores compute.
    pub pim_utilization: f64,
    pub bus_utilization: f64,
    pub arch_digest: String,
}

#[derive(Clone, Copy, Default)]
struct KeyState {
    fetched: u64,
    computed: u64,
    all: u64,
}

#[derive(Clone, Copy)]
struct Bank {
    open: Option<u64>,
    activated_at: u64,
    free: u64,
}

struct Machine<'a> {
    arch: &'a ArchConfig,
    banks: Vec<Bank>,
    bus_free: u64,
    pim_free: u64,
    gb_free: u64,
    keys: HashMap<String, KeyState>,
    done_groups: HashSet<String>,
    group: Option<String>,
    group_floor: u64,
    horizon: u64,
    last_start: u64,
    gbuf_key: Option<String>,
    gbuf_staged: HashMap<String, u64>,
    lbuf_staged: HashMap<String, u64>,
    stats: BTreeMap<Opcode, OpcodeStats>,
    group_cycles: Vec<(String, u64)>,
    actions: ActionCounts,
}

impl Machine<'_> {
    fn banks_of(&self, c: &PimCommand) -> Result<Vec<usize>> {
        match c.target {
            Target::Bank(b) if b < self.arch.num_banks => Ok(vec![b]),
            Target::Bank(b) => Err(Error::Sim { seq: c.seq, reason: format!("bank {b} does not exist") }),
            Target::All => Ok((0..self.arch.num_banks).collect()),
            Target::None => Ok(Vec::new()),
        }
    }

    fn step(&mut self, c: &PimCommand) -> Result<()> {
        let t = &self.arch.timing;
        let err = |reason: String| Error::Sim { seq: c.seq, reason };
        let burst = self.arch.burst_bytes;
        let key = c.key().to_string();
        let group = c.group().to_string();

        if self.group.as_deref() != Some(group.as_str()) {
            if self.done_groups.contains(&group) {
                return Err(err(format!("group `{group}` resumes after later work began")));
            }
            if let Some(prev) = self.group.take() {
                self.group_cycles.push((prev.clone(), self.horizon - self.group_floor));
                self.done_groups.insert(prev);
            }
            self.group = Some(group);
            self.group_floor = self.horizon;
        }

        let mut start = self.last_start.max(self.group_floor);
        let ks = self.keys.get(&key).copied().unwrap_or_default();
        start = start.max(match c.opcode {
            Opcode::PimcoreCmp | Opcode::GbcoreCmp => ks.fetched,
            Opcode::Wr | Opcode::Lbuf2Bk | Opcode::Gbuf2Bk => ks.fetched.max(ks.computed),
            _ => 0,
        });
        if c.opcode == Opcode::Bk2Gbuf && self.gbuf_key.as_deref() != Some(key.as_str()) {
            if let Some(prev) = self.gbuf_key.replace(key.clone()) {
                start = start.max(self.keys.get(&prev).map_or(0, |k| k.all));
                self.gbuf_staged.remove(&prev);
            }
        }

        let banks = self.banks_of(c)?;
        let nb = banks.len() as u64;
        let pim_issue = t.pim_cmd_issue_cycles;
        let bytes = c.bursts * burst;

        for &b in &banks {
            start = start.max(self.banks[b].free);
        }
        if c.opcode.is_column() {
            for &b in &banks {
                match self.banks[b].open {
                    Some(r) if Some(r) == c.row => {}
                    Some(r) => return Err(err(format!("bank {b} has row {r} open, command targets {:?}", c.row))),
                    None => return Err(err(format!("bank {b} has no open row"))),
                }
            }
        }
        let uses_bus = c.opcode.is_cross_bank();
        if uses_bus {
            start = start.max(self.bus_free);
        }

        let duration = match c.opcode {
            Opcode::Act => {
                let row = c.row.ok_or_else(|| err("ACT needs a row".into()))?;
                for &b in &banks {
                    if self.banks[b].open.is_some() {
                        return Err(err(format!("ACT on bank {b} with a row already open")));
                    }
                }
                for &b in &banks {
                    self.banks[b].open = Some(row);
                    self.banks[b].activated_at = start;
                }
                self.actions.activates += nb;
                t.t_rcd
            }
            Opcode::Pre => {
                for &b in &banks {
                    if self.banks[b].open.is_some() {
                        start = start.max(self.banks[b].activated_at + t.t_ras);
                    }
                }
                for &b in &banks {
                    self.banks[b].open = None;
                }
                t.t_rp
            }
            Opcode::Rd => {
                self.actions.near_bank_bytes += bytes * nb;
                t.t_cl + c.bursts * t.t_ccd
            }
            Opcode::Wr => {
                self.actions.near_bank_bytes += bytes * nb;
                t.t_cl + c.bursts * t.t_ccd + t.t_wr
            }
            Opcode::Bk2Lbuf => {
                self.actions.near_bank_bytes += bytes * nb;
                self.actions.lbuf_write_bytes += bytes * nb;
                *self.lbuf_staged.entry(key.clone()).or_default() += bytes * nb;
                pim_issue + t.t_cl + c.bursts * t.t_ccd
            }
            Opcode::Lbuf2Bk => {
                self.actions.near_bank_bytes += bytes * nb;
                self.actions.lbuf_read_bytes += bytes * nb;
                pim_issue + t.t_cl + c.bursts * t.t_ccd + t.t_wr
            }
            Opcode::Bk2Gbuf => {
                self.actions.io_bytes += bytes;
                self.actions.bus_bytes += bytes;
                self.actions.gbuf_write_bytes += bytes;
                *self.gbuf_staged.entry(key.clone()).or_default() += bytes;
                pim_issue + t.t_cl + c.bursts * t.bus_transfer_cycles_per_burst
            }
            Opcode::Gbuf2Bk => {
                self.actions.io_bytes += bytes;
                self.actions.bus_bytes += bytes;
                self.actions.gbuf_read_bytes += bytes;
                pim_issue + t.t_cl + c.bursts * t.bus_transfer_cycles_per_burst + t.t_wr
            }
            Opcode::PimcoreCmp => {
                start = start.max(self.pim_free);
                let ops = c.bursts * burst;
                self.actions.pim_macs += ops * self.arch.num_pimcores() as u64;
                // Operands staged under this key are read once per compute.
                self.actions.gbuf_read_bytes += self.gbuf_staged.get(&key).copied().unwrap_or(0);
                self.actions.lbuf_read_bytes += self.lbuf_staged.remove(&key).unwrap_or(0);
                pim_issue + ops.div_ceil(self.arch.macs_per_pimcore_per_cycle)
            }
            Opcode::GbcoreCmp => {
                start = start.max(self.gb_free);
                let ops = c.bursts * burst;
                self.actions.gbcore_ops += ops;
                self.actions.gbuf_read_bytes += self.gbuf_staged.get(&key).copied().unwrap_or(0);
                pim_issue + ops.div_ceil(self.arch.gbcore_ops_per_cycle)
            }
        };

        let end = start + duration;
        let bank_free = end;
        for &b in &banks {
            self.banks[b].free = bank_free;
        }
        if uses_bus {
            self.bus_free = end;
        }
        match c.opcode {
            Opcode::PimcoreCmp => self.pim_free = end,
            Opcode::GbcoreCmp => self.gb_free = end,
            _ => {}
        }
        let ks = self.keys.entry(key).or_default();
        match c.opcode {
            Opcode::Rd | Opcode::Bk2Lbuf | Opcode::Bk2Gbuf => ks.fetched = ks.fetched.max(end),
            Opcode::PimcoreCmp | Opcode::GbcoreCmp => ks.computed = ks.computed.max(end),
            _ => {}
        }
        ks.all = ks.all.max(end);
        self.horizon = self.horizon.max(end);
        self.last_start = start;
        let s = self.stats.entry(c.opcode).or_default();
        s.commands += 1;
        s.bursts += c.bursts;
        s.busy_cycles += duration;
        Ok(())
    }
}

/// Replays `trace` on `arch`.
pub fn simulate(trace: &CommandTrace, arch: &ArchConfig) -> Result<SimStats> {
    arch.validate()?;
    let mut m = Machine {
        arch,
        banks: vec![Bank { open: None, activated_at: 0, free: 0 }; arch.num_banks],
        bus_free: 0,
        pim_free: 0,
        gb_free: 0,
        keys: HashMap::new(),
        done_groups: HashSet::new(),
        group: None,
        group_floor: 0,
        horizon: 0,
        last_start: 0,
        gbuf_key: None,
        gbuf_staged: HashMap::new(),
        lbuf_staged: HashMap::new(),
        stats: BTreeMap::new(),
        group_cycles: Vec::new(),
        actions: ActionCounts::default(),
    };
    for c in &trace.commands {
        m.step(c)?;
    }
    if let Some(last) = m.group.take() {
        m.group_cycles.push((last, m.horizon - m.group_floor));
    }
    let cycles = m.horizon;
    let busy = |op: Opcode| m.stats.get(&op).map_or(0, |s| s.busy_cycles) as f64;
    let frac = |x: f64| if cycles == 0 { 0.0 } else { x / cycles as f64 };
    Ok(SimStats {
        cycles,
        commands: trace.commands.len() as u64,
        pim_utilization: frac(busy(Opcode::PimcoreCmp)),
        bus_utilization: frac(busy(Opcode::Bk2Gbuf) + busy(Opcode::Gbuf2Bk)),
        per_opcode: m.stats,
        group_cycles: m.group_cycles,
        actions: m.actions,
        arch_digest: arch.digest(),
    })
}

/// Resource bounds no schedule of the plan can beat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub compute_cycles: f64,
    pub bus_cycles: f64,
    pub bank_cycles: f64,
}

impl LowerBound {
    pub fn cycles(&self) -> f64 {
        self.compute_cycles.max(self.bus_cycles).max(self.bank_cycles)
    }
}

/// Compute, bus and near-bank bandwidth bounds from the dataflow metrics.
pub fn analytic_lower_bound(g: &CnnGraph, plan: &FusionPlan, arch: &ArchConfig) -> Result<LowerBound> {
    let m = crate::dataflow::analyze(g, plan, arch)?;
    let nc = arch.num_pimcores() as f64;
    let burst = arch.burst_bytes as f64;
    Ok(LowerBound {
        compute_cycles: m.macs_executed as f64 / (nc * arch.macs_per_pimcore_per_cycle as f64),
        bus_cycles: m.cross_bank_bytes as f64 / burst * arch.timing.bus_transfer_cycles_per_burst as f64,
        bank_cycles: m.near_bank_bytes as f64 / (arch.num_banks as f64 * burst) * arch.timing.t_ccd as f64,
    })
}
