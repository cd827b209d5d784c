//! DRAM-PIM command traces: emission from a lowered program, a line-based
//! text format that round-trips exactly, and summary statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::dataflow::{plan_kernels, FusionPlan};
use crate::error::{Error, Result};
use crate::program::{lower_with, Program, Role, Step, StepOp, TensorKey};
use crate::workload::{CnnGraph, LayerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Act,
    Pre,
    Rd,
    Wr,
    Bk2Gbuf,
    Gbuf2Bk,
    Bk2Lbuf,
    Lbuf2Bk,
    PimcoreCmp,
    GbcoreCmp,
}

impl Opcode {
    pub const ALL: [Opcode; 10] = [
        Opcode::Act,
        Opcode::Pre,
        Opcode::Rd,
        Opcode::Wr,
        Opcode::Bk2Gbuf,
        Opcode::Gbuf2Bk,
        Opcode::Bk2Lbuf,
        Opcode::Lbuf2Bk,
        Opcode::PimcoreCmp,
        Opcode::GbcoreCmp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Opcode::Act => "ACT",
            Opcode::Pre => "PRE",
            Opcode::Rd => "RD",
            Opcode::Wr => "WR",
            Opcode::Bk2Gbuf => "PIM_BK2GBUF",
            Opcode::Gbuf2Bk => "PIM_GBUF2BK",
            Opcode::Bk2Lbuf => "PIM_BK2LBUF",
            Opcode::Lbuf2Bk => "PIM_LBUF2BK",
            Opcode::PimcoreCmp => "PIMCORE_CMP",
            Opcode::GbcoreCmp => "GBCORE_CMP",
        }
    }

    /// Moves data between a bank and the GBUF over the shared bus.
    pub fn is_cross_bank(self) -> bool {
        matches!(self, Opcode::Bk2Gbuf | Opcode::Gbuf2Bk)
    }

    /// Reads or writes bank columns at an open row.
    pub fn is_column(self) -> bool {
        matches!(self, Opcode::Rd | Opcode::Wr | Opcode::Bk2Gbuf | Opcode::Gbuf2Bk | Opcode::Bk2Lbuf | Opcode::Lbuf2Bk)
    }

    /// PIMcores accept every layer kind as a flag, the GBcore only POOL and ADD_RELU.
    pub fn allows_flags(self, flags: &[LayerKind]) -> bool {
        match self {
            Opcode::PimcoreCmp => true,
            Opcode::GbcoreCmp => flags.iter().all(|k| !k.is_conv()),
            _ => flags.is_empty(),
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Opcode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Opcode::ALL.into_iter().find(|o| o.as_str() == s).ok_or_else(|| format!("unknown opcode `{s}`"))
    }
}

/// Bank operand of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Bank(usize),
    All,
    /// GBcore commands touch no bank.
    None,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Bank(b) => write!(f, "{b}"),
            Target::All => f.write_str("ALL"),
            Target::None => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PimCommand {
    pub seq: u64,
    pub opcode: Opcode,
    pub target: Target,
    pub row: Option<u64>,
    /// Starting column, in bursts.
    pub col: Option<u64>,
    /// Bursts moved or computed; per bank for `ALL` commands.
    pub bursts: u64,
    /// Execution flags; compute opcodes only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<LayerKind>,
    /// `<key>:<role>`, e.g. `L3.b0:wgt`.
    pub tag: String,
}

impl PimCommand {
    /// Dependency key: the tag without its role suffix.
    pub fn key(&self) -> &str {
        self.tag.split(':').next().unwrap_or("")
    }

    /// Barrier group: the key up to its first `.`.
    pub fn group(&self) -> &str {
        self.key().split('.').next().unwrap_or("")
    }

    pub fn role(&self) -> Option<Role> {
        self.tag.split(':').nth(1).and_then(Role::parse)
    }

    /// Layer id encoded in an `L<id>` group.
    pub fn layer(&self) -> Option<usize> {
        self.group().strip_prefix('L').and_then(|s| s.parse().ok())
    }
}

fn opt(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl fmt::Display for PimCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} {} {}", self.seq, self.opcode, self.target, opt(self.row), opt(self.col), self.bursts)?;
        if !self.flags.is_empty() {
            let names: Vec<&str> = self.flags.iter().map(|k| k.as_str()).collect();
            write!(f, " flags={}", names.join(","))?;
        }
        if !self.tag.is_empty() {
            write!(f, " tag={}", self.tag)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceHeader {
    pub workload: String,
    pub arch_digest: String,
    pub plan_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommandTrace {
    pub header: TraceHeader,
    pub commands: Vec<PimCommand>,
}

impl CommandTrace {
    pub fn serialize(&self) -> String {
        let mut out = String::with_capacity(self.commands.len() * 40 + 200);
        out.push_str(&format!("# workload={}\n", self.header.workload));
        out.push_str(&format!("# arch={}\n", self.header.arch_digest));
        out.push_str(&format!("# plan={}\n", self.header.plan_digest));
        for c in &self.commands {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<CommandTrace> {
        let mut trace = CommandTrace::default();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let err = |reason: String| Error::TraceParse { line: n, reason };
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim_start();
                if let Some(v) = rest.strip_prefix("workload=") {
                    trace.header.workload = v.to_string();
                } else if let Some(v) = rest.strip_prefix("arch=") {
                    trace.header.arch_digest = v.to_string();
                } else if let Some(v) = rest.strip_prefix("plan=") {
                    trace.header.plan_digest = v.to_string();
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() < 6 {
                return Err(err(format!("expected at least 6 fields, found {}", f.len())));
            }
            let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| err(format!("bad {what} `{s}`")));
            let optnum = |s: &str, what: &str| if s == "-" { Ok(None) } else { num(s, what).map(Some) };
            let seq = num(f[0], "sequence number")?;
            let expected_seq = trace.commands.last().map_or(0, |c| c.seq + 1);
            if seq < expected_seq || (trace.commands.is_empty() && seq != 0) {
                return Err(err(format!("sequence number {seq} must start at 0 and increase strictly")));
            }
            let opcode: Opcode = f[1].parse().map_err(err)?;
            let target = match f[2] {
                "ALL" => Target::All,
                "-" => Target::None,
                s => Target::Bank(num(s, "bank")? as usize),
            };
            let mut rest = &f[6..];
            let mut flags = Vec::new();
            if let Some(list) = rest.first().and_then(|x| x.strip_prefix("flags=")) {
                flags = list
                    .split(',')
                    .map(|x| LayerKind::parse(x).ok_or_else(|| err(format!("unknown flag `{x}`"))))
                    .collect::<Result<Vec<_>>>()?;
                rest = &rest[1..];
            }
            if !opcode.allows_flags(&flags) {
                return Err(err(format!("flags not allowed on {opcode}")));
            }
            let mut tag = String::new();
            if let Some(t) = rest.first().and_then(|x| x.strip_prefix("tag=")) {
                tag = t.to_string();
                rest = &rest[1..];
            }
            if let Some(extra) = rest.first() {
                return Err(err(format!("unexpected field `{extra}`")));
            }
            trace.commands.push(PimCommand {
                seq,
                opcode,
                target,
                row: optnum(f[3], "row")?,
                col: optnum(f[4], "column")?,
                bursts: num(f[5], "burst count")?,
                flags,
                tag,
            });
        }
        Ok(trace)
    }

    /// Header mismatches against the config and plan in use.
    pub fn verify_header(&self, g: &CnnGraph, arch: &ArchConfig, plan: &FusionPlan) -> Vec<String> {
        let mut w = Vec::new();
        if self.header.workload != g.name {
            w.push(format!("trace workload `{}` differs from `{}`", self.header.workload, g.name));
        }
        if self.header.arch_digest != arch.digest() {
            w.push("trace was emitted for a different architecture config".to_string());
        }
        if self.header.plan_digest != plan.digest() {
            w.push("trace was emitted for a different fusion plan".to_string());
        }
        w
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitOptions {
    /// Abort with [`Error::TraceTooLarge`] beyond this many commands.
    pub max_commands: Option<usize>,
}

/// Row buffers the emitter believes are open, per bank.
struct Emitter<'a> {
    arch: &'a ArchConfig,
    open: Vec<Option<u64>>,
    base: HashMap<TensorKey, u64>,
    cmds: Vec<PimCommand>,
    cap: Option<usize>,
}

impl Emitter<'_> {
    fn push(
        &mut self,
        opcode: Opcode,
        target: Target,
        row: Option<u64>,
        col: Option<u64>,
        bursts: u64,
        tag: &str,
    ) -> Result<()> {
        self.push_flagged(opcode, target, row, col, bursts, Vec::new(), tag)
    }

    #[allow(clippy::too_many_arguments)]
    fn push_flagged(
        &mut self,
        opcode: Opcode,
        target: Target,
        row: Option<u64>,
        col: Option<u64>,
        bursts: u64,
        flags: Vec<LayerKind>,
        tag: &str,
    ) -> Result<()> {
        if let Some(cap) = self.cap {
            if self.cmds.len() >= cap {
                return Err(Error::TraceTooLarge { cap });
            }
        }
        let seq = self.cmds.len() as u64;
        self.cmds.push(PimCommand { seq, opcode, target, row, col, bursts, flags, tag: tag.to_string() });
        Ok(())
    }

    fn open_row(&mut self, target: Target, row: u64, tag: &str) -> Result<()> {
        match target {
            Target::Bank(b) => {
                if self.open[b] == Some(row) {
                    return Ok(());
                }
                if self.open[b].is_some() {
                    self.push(Opcode::Pre, target, None, None, 0, tag)?;
                }
                self.push(Opcode::Act, target, Some(row), None, 0, tag)?;
                self.open[b] = Some(row);
            }
            Target::All => {
                if self.open.iter().all(|r| *r == Some(row)) {
                    return Ok(());
                }
                if self.open.iter().any(Option::is_some) {
                    self.push(Opcode::Pre, Target::All, None, None, 0, tag)?;
                }
                self.push(Opcode::Act, Target::All, Some(row), None, 0, tag)?;
                self.open.iter_mut().for_each(|r| *r = Some(row));
            }
            Target::None => {}
        }
        Ok(())
    }

    /// Column accesses over `bursts` starting at `offset`, split at row
    /// boundaries. Repeated passes over a slice (`wrap < bursts`) restart at
    /// `offset`, one pass after another.
    fn columns(&mut self, opcode: Opcode, target: Target, step: &Step, tag: &str) -> Result<()> {
        let per_row = self.arch.row_bytes / self.arch.burst_bytes;
        let start = self.base[&step.tensor.expect("column steps name a tensor")] * per_row
            + step.offset / self.arch.burst_bytes;
        let wrap = step.wrap.clamp(1, step.bursts.max(1));
        let mut pos = 0;
        let mut left = step.bursts;
        while left > 0 {
            let abs = start + pos;
            let (row, col) = (abs / per_row, abs % per_row);
            let chunk = left.min(per_row - col).min(wrap - pos);
            self.open_row(target, row, tag)?;
            self.push(opcode, target, Some(row), Some(col), chunk, tag)?;
            left -= chunk;
            pos = (pos + chunk) % wrap;
        }
        Ok(())
    }
}

/// Lays tensors out in disjoint row ranges shared by every bank. Returns the
/// base row of each tensor.
fn allocate(program: &Program, arch: &ArchConfig) -> HashMap<TensorKey, u64> {
    let per_row = arch.row_bytes / arch.burst_bytes;
    let mut extent: BTreeMap<TensorKey, u64> = BTreeMap::new();
    for s in &program.steps {
        if let Some(t) = s.tensor {
            let end = s.offset / arch.burst_bytes + s.wrap;
            let e = extent.entry(t).or_insert(0);
            *e = (*e).max(end);
        }
    }
    let mut base = HashMap::new();
    let mut next = 0;
    for (t, bursts) in extent {
        base.insert(t, next);
        next += bursts.div_ceil(per_row).max(1);
    }
    base
}

/// Emits the command trace of `plan`.
pub fn emit_trace(g: &CnnGraph, plan: &FusionPlan, arch: &ArchConfig) -> Result<CommandTrace> {
    emit_trace_with(g, plan, arch, EmitOptions::default())
}

pub fn emit_trace_with(g: &CnnGraph, plan: &FusionPlan, arch: &ArchConfig, opts: EmitOptions) -> Result<CommandTrace> {
    arch.validate()?;
    plan.validate(g, arch)?;
    let schedules = plan_kernels(g, plan, arch)?;
    let program = lower_with(g, plan, arch, &schedules)?;
    emit_program(g, plan, arch, &program, opts)
}

pub(crate) fn emit_program(
    g: &CnnGraph,
    plan: &FusionPlan,
    arch: &ArchConfig,
    program: &Program,
    opts: EmitOptions,
) -> Result<CommandTrace> {
    let flags = |s: &Step| s.layer.map(|l| vec![g.layer(l).kind]).unwrap_or_default();
    let base = allocate(program, arch);
    let mut e = Emitter { arch, open: vec![None; arch.num_banks], base, cmds: Vec::new(), cap: opts.max_commands };
    for s in &program.steps {
        let tag = format!("{}:{}", s.key, s.role.as_str());
        match s.op {
            StepOp::GbufFetch { bank } => e.columns(Opcode::Bk2Gbuf, Target::Bank(bank), s, &tag)?,
            StepOp::GbufStore { bank } => e.columns(Opcode::Gbuf2Bk, Target::Bank(bank), s, &tag)?,
            StepOp::LocalRead { via_lbuf } => {
                let op = if via_lbuf { Opcode::Bk2Lbuf } else { Opcode::Rd };
                e.columns(op, Target::All, s, &tag)?
            }
            StepOp::LocalWrite { via_lbuf } => {
                let op = if via_lbuf { Opcode::Lbuf2Bk } else { Opcode::Wr };
                e.columns(op, Target::All, s, &tag)?
            }
            StepOp::PimCompute => {
                e.push_flagged(Opcode::PimcoreCmp, Target::All, None, None, s.bursts, flags(s), &tag)?
            }
            StepOp::GbCompute => {
                e.push_flagged(Opcode::GbcoreCmp, Target::None, None, None, s.bursts, flags(s), &tag)?
            }
        }
    }
    Ok(CommandTrace {
        header: TraceHeader { workload: g.name.clone(), arch_digest: arch.digest(), plan_digest: plan.digest() },
        commands: e.cmds,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpcodeCount {
    pub commands: u64,
    pub bursts: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStats {
    pub commands: u64,
    pub per_opcode: BTreeMap<Opcode, OpcodeCount>,
    /// Burst-padded bytes of BK2GBUF and GBUF2BK commands.
    pub cross_bank_bytes: u64,
    /// Bytes moved by all-bank column commands, summed over banks.
    pub near_bank_bytes: u64,
}

pub fn trace_stats(trace: &CommandTrace, arch: &ArchConfig) -> TraceStats {
    let mut st = TraceStats::default();
    for c in &trace.commands {
        st.commands += 1;
        let e = st.per_opcode.entry(c.opcode).or_default();
        e.commands += 1;
        e.bursts += c.bursts;
        let bytes = c.bursts * arch.burst_bytes;
        if c.opcode.is_cross_bank() {
            st.cross_bank_bytes += bytes;
        } else if c.opcode.is_column() {
            st.near_bank_bytes += match c.target {
                Target::All => bytes * arch.num_banks as u64,
                _ => bytes,
            };
        }
    }
    st
}
