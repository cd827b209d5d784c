//! Abstract execution program: the per-layer sequence of GBUF stages, local
//! bank streams and compute bursts that the trace emitter turns into DRAM
//! commands. Traffic metrics are summed from the same steps.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, PimcoreFunctions};
use crate::dataflow::{balanced_split, plan_kernels, plan_layer_by_layer, FusedTileSchedule, FusionPlan, Placement};
use crate::error::{Error, Result};
use crate::workload::CnnGraph;

/// Logical tensor stored in the banks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TensorKey {
    Input,
    Act(usize),
    Weights(usize),
    /// Halo data a fused kernel gathers from other cores.
    Halo(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepOp {
    /// One bank to the GBUF over the shared bus.
    GbufFetch {
        bank: usize,
    },
    /// GBUF to one bank over the shared bus.
    GbufStore {
        bank: usize,
    },
    /// Every bank to its PIMcore (through the LBUF when present).
    LocalRead {
        via_lbuf: bool,
    },
    LocalWrite {
        via_lbuf: bool,
    },
    PimCompute,
    GbCompute,
}

/// What a step moves; becomes the `:role` suffix of trace tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Wgt,
    Act,
    Out,
    Cmp,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Wgt => "wgt",
            Role::Act => "act",
            Role::Out => "out",
            Role::Cmp => "cmp",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "wgt" => Role::Wgt,
            "act" => Role::Act,
            "out" => Role::Out,
            "cmp" => Role::Cmp,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub op: StepOp,
    /// Per-bank bursts for all-bank steps; total bursts otherwise. Compute
    /// steps carry `ceil(ops / burst_bytes)`.
    pub bursts: u64,
    pub tensor: Option<TensorKey>,
    /// Per-bank byte offset into the tensor slice (burst aligned).
    pub offset: u64,
    /// Bursts after which the access wraps back to `offset` (re-reads of the
    /// same slice); equals `bursts` for single-pass accesses.
    pub wrap: u64,
    /// Dependency key such as `L3.b0`; the part before the first `.` is the
    /// barrier group.
    pub key: String,
    pub role: Role,
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Program {
    pub steps: Vec<Step>,
}

struct Builder<'a> {
    arch: &'a ArchConfig,
    steps: Vec<Step>,
}

impl Builder<'_> {
    fn bursts(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.arch.burst_bytes)
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        op: StepOp,
        bursts: u64,
        tensor: Option<TensorKey>,
        offset: u64,
        key: &str,
        role: Role,
        layer: Option<usize>,
    ) {
        if bursts == 0 {
            return;
        }
        self.steps.push(Step { op, bursts, tensor, offset, wrap: bursts, key: key.to_string(), role, layer });
    }

    /// Marks the last step as repeated passes over `wrap` bursts.
    fn wrap_last(&mut self, wrap: u64) {
        if let Some(s) = self.steps.last_mut() {
            s.wrap = wrap.clamp(1, s.bursts);
        }
    }

    /// Stages `bytes` of `tensor` (spread over every bank) into the GBUF.
    fn gather(&mut self, tensor: TensorKey, bytes: u64, offset: u64, key: &str, layer: usize) {
        let pieces = balanced_split(bytes, self.arch.num_banks);
        for (bank, piece) in pieces.into_iter().enumerate() {
            let b = self.bursts(piece);
            self.push(StepOp::GbufFetch { bank }, b, Some(tensor), offset, key, Role::Act, Some(layer));
        }
    }
}

fn tensor_of(producer: Option<usize>) -> TensorKey {
    producer.map_or(TensorKey::Input, TensorKey::Act)
}

/// Lowers a plan into steps. Kernels and tail layers run in layer order.
pub fn lower(g: &CnnGraph, plan: &FusionPlan, arch: &ArchConfig) -> Result<Program> {
    plan.validate(g, arch)?;
    let schedules = plan_kernels(g, plan, arch)?;
    lower_with(g, plan, arch, &schedules)
}

pub(crate) fn lower_with(
    g: &CnnGraph,
    plan: &FusionPlan,
    arch: &ArchConfig,
    schedules: &[FusedTileSchedule],
) -> Result<Program> {
    let mut b = Builder { arch, steps: Vec::new() };
    let mut units: Vec<(usize, Option<usize>)> = plan
        .kernels
        .iter()
        .enumerate()
        .map(|(k, kern)| (kern.layer_ids[0], Some(k)))
        .chain(plan.tail_layers.iter().map(|&l| (l, None)))
        .collect();
    units.sort();
    for (first, kernel) in units {
        match kernel {
            Some(k) => lower_kernel(&mut b, g, k, &schedules[k])?,
            None if g.layer(first).kind.is_conv() => lower_lbl_conv(&mut b, g, first),
            None => lower_gbcore(&mut b, g, first),
        }
    }
    Ok(Program { steps: b.steps })
}

fn lower_lbl_conv(b: &mut Builder, g: &CnnGraph, id: usize) {
    let arch = b.arch;
    let l = g.layer(id);
    let s = plan_layer_by_layer(l, arch);
    let input = tensor_of(g.producers(id).first().copied());
    let via_lbuf = arch.lbuf_bytes >= arch.burst_bytes;
    let w_bursts = b.bursts(s.weight_bytes_per_bank);
    let per_core_pixel_macs = (s.max_cout_per_core() * l.cin * l.kh * l.kw) as u64;
    let mut in_off = 0;
    let mut out_off = 0;
    for (w, win) in s.windows.iter().enumerate() {
        let key = format!("L{id}.w{w}");
        b.gather(input, win.broadcast_bytes, in_off, &key, id);
        in_off += b.bursts(win.broadcast_bytes.div_ceil(arch.num_banks as u64)) * arch.burst_bytes;
        let passes = win.out_pixels.div_ceil(s.weight_reuse);
        let read = StepOp::LocalRead { via_lbuf };
        b.push(read, passes * w_bursts, Some(TensorKey::Weights(id)), 0, &key, Role::Wgt, Some(id));
        b.wrap_last(w_bursts);
        let ops = win.out_pixels * per_core_pixel_macs;
        b.push(StepOp::PimCompute, b.bursts(ops), None, 0, &key, Role::Cmp, Some(id));
        let out = (win.out_pixels * s.output_bytes_per_core_pixel).div_ceil(arch.banks_per_pimcore as u64);
        let ob = b.bursts(out);
        b.push(StepOp::LocalWrite { via_lbuf }, ob, Some(TensorKey::Act(id)), out_off, &key, Role::Out, Some(id));
        out_off += ob * arch.burst_bytes;
    }
}

/// POOL / ADD_RELU on the GBcore. Element-wise work needs no data from
/// other channels, so each GBUF window covers the slice held by one bank.
fn lower_gbcore(b: &mut Builder, g: &CnnGraph, id: usize) {
    let arch = b.arch;
    let l = g.layer(id);
    let producers = g.producers(id);
    let operands: Vec<TensorKey> = if producers.is_empty() {
        vec![TensorKey::Input]
    } else {
        producers.iter().map(|&p| TensorKey::Act(p)).collect()
    };
    let banks = arch.num_banks;
    let ins = balanced_split(l.input_bytes(), banks);
    let outs = balanced_split(l.output_bytes(), banks);
    let ops = balanced_split(l.elementwise_ops_for_pixels((l.out_h * l.out_w) as u64), banks);
    let mut w = 0;
    for bank in 0..banks {
        let nwin = (ins[bank] * operands.len() as u64).div_ceil(arch.gbuf_bytes).max(1) as usize;
        let (mut in_off, mut out_off) = (0, 0);
        for ((i, o), n) in balanced_split(ins[bank], nwin)
            .into_iter()
            .zip(balanced_split(outs[bank], nwin))
            .zip(balanced_split(ops[bank], nwin))
        {
            let key = format!("L{id}.w{w}");
            w += 1;
            let ib = b.bursts(i);
            for &t in &operands {
                b.push(StepOp::GbufFetch { bank }, ib, Some(t), in_off, &key, Role::Act, Some(id));
            }
            in_off += ib * arch.burst_bytes;
            b.push(StepOp::GbCompute, b.bursts(n), None, 0, &key, Role::Cmp, Some(id));
            let ob = b.bursts(o);
            b.push(StepOp::GbufStore { bank }, ob, Some(TensorKey::Act(id)), out_off, &key, Role::Out, Some(id));
            out_off += ob * arch.burst_bytes;
        }
    }
}

fn lower_kernel(b: &mut Builder, g: &CnnGraph, k: usize, s: &FusedTileSchedule) -> Result<()> {
    let arch = b.arch;
    let bpc = arch.banks_per_pimcore as u64;
    let bpe = s.bytes_per_element;
    let via_lbuf = arch.lbuf_bytes >= arch.burst_bytes;

    // Kernel-boundary reorganization, chunked to the GBUF size.
    let mut n = 0;
    let mut halo_off = vec![0u64; arch.num_banks];
    for t in &s.reorg {
        let src = t.src_core * arch.banks_per_pimcore;
        let dst = t.dst_core * arch.banks_per_pimcore;
        let tensor = match t.tensor {
            crate::dataflow::TensorRef::Network => TensorKey::Input,
            crate::dataflow::TensorRef::Layer(p) => TensorKey::Act(p),
        };
        let mut left = t.bytes;
        while left > 0 {
            let chunk = left.min(arch.gbuf_bytes);
            left -= chunk;
            let key = format!("K{k}.r{n}");
            n += 1;
            let cb = b.bursts(chunk);
            b.push(StepOp::GbufFetch { bank: src }, cb, Some(tensor), 0, &key, Role::Act, None);
            b.push(StepOp::GbufStore { bank: dst }, cb, Some(TensorKey::Halo(k)), halo_off[dst], &key, Role::Act, None);
            halo_off[dst] += cb * arch.burst_bytes;
        }
    }

    for (i, kl) in s.layers.iter().enumerate() {
        let id = kl.layer_id;
        let l = g.layer(id);
        if !l.kind.is_conv() && arch.pimcore_functions == PimcoreFunctions::AimLike {
            return Err(Error::Plan(format!(
                "layer {id} ({}) cannot run on PIMcores without pooling/residual support",
                l.kind.as_str()
            )));
        }
        let producers = g.producers(id);
        // Per-core operand bytes still held in banks, maximized over cores.
        let mut reads: Vec<(TensorKey, u64)> = Vec::new();
        let operand_list: Vec<Option<usize>> =
            if producers.is_empty() { vec![None] } else { producers.iter().map(|&p| Some(p)).collect() };
        for p in operand_list {
            let mut bytes = 0;
            for core in &s.cores {
                let resident = p
                    .and_then(|p| s.layer_ids.iter().position(|&x| x == p))
                    .is_some_and(|pos| core.layers[pos].placement == Placement::Lbuf);
                if !resident {
                    bytes = bytes.max(core.layers[i].input.bytes(bpe));
                }
            }
            if bytes > 0 {
                reads.push((tensor_of(p), bytes));
            }
        }
        let factor = if via_lbuf { 1.0 } else { (l.kh as f64 / l.stride as f64).max(1.0) };
        let core_ops = s
            .cores
            .iter()
            .map(|c| {
                let px = c.layers[i].output.pixels();
                if l.kind.is_conv() {
                    l.macs_for_pixels(px)
                } else {
                    l.elementwise_ops_for_pixels(px)
                }
            })
            .max()
            .unwrap_or(0);
        let weight = l.weight_bytes();
        let nb = if weight > 0 { weight.div_ceil(arch.gbuf_bytes).max(1) as usize } else { 1 };
        let wsplit = balanced_split(weight, nb);
        let osplit = balanced_split(core_ops, nb);
        let home = id % arch.num_banks;
        let mut w_off = 0;
        for blk in 0..nb {
            let key = format!("L{id}.b{blk}");
            let wb = b.bursts(wsplit[blk]);
            b.push(
                StepOp::GbufFetch { bank: home },
                wb,
                Some(TensorKey::Weights(id)),
                w_off,
                &key,
                Role::Wgt,
                Some(id),
            );
            w_off += wb * arch.burst_bytes;
            for &(t, bytes) in &reads {
                let per_bank = ((bytes as f64 * factor).ceil() as u64).div_ceil(bpc);
                let rb = b.bursts(per_bank);
                b.push(StepOp::LocalRead { via_lbuf }, rb, Some(t), 0, &key, Role::Act, Some(id));
                b.wrap_last(b.bursts(bytes.div_ceil(bpc)));
            }
            b.push(StepOp::PimCompute, b.bursts(osplit[blk]), None, 0, &key, Role::Cmp, Some(id));
        }
        let out = s
            .cores
            .iter()
            .filter(|c| c.layers[i].placement == Placement::LocalBank)
            .map(|c| c.layers[i].output.bytes(bpe))
            .max()
            .unwrap_or(0);
        let key = format!("L{id}.b{}", nb - 1);
        let ob = b.bursts(out.div_ceil(bpc));
        b.push(StepOp::LocalWrite { via_lbuf }, ob, Some(TensorKey::Act(id)), 0, &key, Role::Out, Some(id));
    }
    Ok(())
}

impl Program {
    /// Payload of GBUF fetches and stores, burst-padded.
    pub fn cross_bank_bytes(&self, arch: &ArchConfig) -> u64 {
        self.steps
            .iter()
            .filter(|s| matches!(s.op, StepOp::GbufFetch { .. } | StepOp::GbufStore { .. }))
            .map(|s| s.bursts * arch.burst_bytes)
            .sum()
    }
}
