//! Mapping of fused kernels and layer-by-layer layers onto PIMcores.
//!
//! Fused kernels split the last layer's output map into `tx × ty` spatial
//! tiles, one per PIMcore, and back-propagate receptive fields so that every
//! core can run the whole kernel on its own data. Layer-by-layer execution
//! splits output channels across cores and stages activations through the
//! GBUF.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::error::{Error, Result};
use crate::program::{lower, Program, StepOp};
use crate::workload::{CnnGraph, LayerKind, LayerSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedKernel {
    pub layer_ids: Vec<usize>,
    /// Tile counts over (ox, oy).
    pub tiling: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FusionPlan {
    pub kernels: Vec<FusedKernel>,
    pub tail_layers: Vec<usize>,
}

impl FusionPlan {
    /// Every layer executed layer-by-layer (the AiM-like mapping).
    pub fn layer_by_layer(g: &CnnGraph) -> FusionPlan {
        FusionPlan { kernels: Vec::new(), tail_layers: (0..g.len()).collect() }
    }

    /// Checks the plan against the graph and the PIMcore count.
    pub fn validate(&self, g: &CnnGraph, arch: &ArchConfig) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (k, kernel) in self.kernels.iter().enumerate() {
            if kernel.layer_ids.is_empty() {
                return Err(Error::Plan(format!("kernel {k} is empty")));
            }
            if kernel.layer_ids.windows(2).any(|w| w[1] != w[0] + 1) {
                return Err(Error::Plan(format!("kernel {k} is not a contiguous run of layers")));
            }
            let (tx, ty) = kernel.tiling;
            if tx * ty != arch.num_pimcores() {
                return Err(Error::Plan(format!(
                    "kernel {k} tiling {tx}x{ty} does not match {} PIMcores",
                    arch.num_pimcores()
                )));
            }
            for &l in &kernel.layer_ids {
                if l >= g.len() || !seen.insert(l) {
                    return Err(Error::Plan(format!("layer {l} is missing or appears twice")));
                }
            }
        }
        for &l in &self.tail_layers {
            if l >= g.len() || !seen.insert(l) {
                return Err(Error::Plan(format!("layer {l} is missing or appears twice")));
            }
        }
        if seen.len() != g.len() {
            return Err(Error::Plan(format!("plan covers {} of {} layers", seen.len(), g.len())));
        }
        Ok(())
    }

    /// Kernel index holding `layer`, if any.
    pub fn kernel_of(&self, layer: usize) -> Option<usize> {
        self.kernels.iter().position(|k| k.layer_ids.contains(&layer))
    }

    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("plan serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Half-open pixel and channel bounds in one layer's output map.
///
/// Regions describing a layer's *input* carry that layer's id and live in
/// its input-map coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileRegion {
    pub layer_id: usize,
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl TileRegion {
    pub fn full_output(l: &LayerSpec) -> TileRegion {
        TileRegion { layer_id: l.id, x0: 0, x1: l.out_w, y0: 0, y1: l.out_h, c0: 0, c1: l.cout }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn channels(&self) -> usize {
        self.c1.saturating_sub(self.c0)
    }

    pub fn pixels(&self) -> u64 {
        (self.width() * self.height()) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0 || self.channels() == 0
    }

    pub fn bytes(&self, bytes_per_element: usize) -> u64 {
        self.pixels() * (self.channels() * bytes_per_element) as u64
    }

    /// Bounding box of two regions of the same map.
    pub fn bbox(&self, o: &TileRegion) -> TileRegion {
        TileRegion {
            layer_id: self.layer_id,
            x0: self.x0.min(o.x0),
            x1: self.x1.max(o.x1),
            y0: self.y0.min(o.y0),
            y1: self.y1.max(o.y1),
            c0: self.c0.min(o.c0),
            c1: self.c1.max(o.c1),
        }
    }

    pub fn intersect(&self, o: &TileRegion) -> Option<TileRegion> {
        let r = TileRegion {
            layer_id: self.layer_id,
            x0: self.x0.max(o.x0),
            x1: self.x1.min(o.x1),
            y0: self.y0.max(o.y0),
            y1: self.y1.min(o.y1),
            c0: self.c0.max(o.c0),
            c1: self.c1.min(o.c1),
        };
        (!r.is_empty()).then_some(r)
    }

    fn describe(&self) -> String {
        format!("x[{},{}) y[{},{}) c[{},{})", self.x0, self.x1, self.y0, self.y1, self.c0, self.c1)
    }
}

/// Input interval along one axis for output interval `[o0, o1)`.
///
/// Output pixels whose window falls entirely into padding are skipped, so the
/// result is the bounding box of the input pixels actually touched.
fn backprop_axis(o0: usize, o1: usize, k: usize, s: usize, p: usize, n: usize) -> Option<(usize, usize)> {
    let (k, s, p, n) = (k as i64, s as i64, p as i64, n as i64);
    let mut lo = o0 as i64;
    let hi_out = o1 as i64 - 1;
    // first output whose window ends past 0: o·s − p + k > 0
    let need = p - k + 1;
    if need > 0 {
        lo = lo.max((need + s - 1) / s);
    }
    // last output whose window starts before n: o·s − p ≤ n − 1
    let hi = hi_out.min((n - 1 + p).div_euclid(s));
    if lo > hi {
        return None;
    }
    let a = (lo * s - p).max(0);
    let b = (hi * s - p + k).min(n);
    (a < b).then_some((a as usize, b as usize))
}

/// Minimal input region needed to compute `out` of `layer`.
pub fn backprop_tile(out: &TileRegion, layer: &LayerSpec) -> Result<TileRegion> {
    if out.is_empty() || out.x1 > layer.out_w || out.y1 > layer.out_h || out.c1 > layer.cout {
        return Err(Error::RegionBounds { layer: layer.id, region: out.describe() });
    }
    let x = backprop_axis(out.x0, out.x1, layer.kw, layer.stride, layer.padding, layer.in_w);
    let y = backprop_axis(out.y0, out.y1, layer.kh, layer.stride, layer.padding, layer.in_h);
    let (c0, c1) = if layer.kind.is_conv() { (0, layer.cin) } else { (out.c0, out.c1) };
    match (x, y) {
        (Some((x0, x1)), Some((y0, y1))) => Ok(TileRegion { layer_id: layer.id, x0, x1, y0, y1, c0, c1 }),
        _ => Err(Error::Infeasible(format!(
            "output tile {} of layer {} back-propagates to an empty input region",
            out.describe(),
            layer.id
        ))),
    }
}

/// Near-equal split of `n` into `t` ranges; the last range takes the remainder.
pub fn split_axis(n: usize, t: usize) -> Vec<(usize, usize)> {
    let c = n.div_ceil(t.max(1));
    (0..t).map(|i| ((i * c).min(n), ((i + 1) * c).min(n))).collect()
}

/// Balanced split of `total` into `parts` integer shares differing by at most one.
pub fn balanced_split(total: u64, parts: usize) -> Vec<u64> {
    let parts = parts.max(1) as u64;
    (0..parts).map(|i| total / parts + u64::from(i < total % parts)).collect()
}

/// Spatial partition of a map into `tx × ty` tiles, row-major over tiles.
pub fn tile_partition(l: &LayerSpec, tiling: (usize, usize)) -> Vec<TileRegion> {
    let xs = split_axis(l.out_w, tiling.0);
    let ys = split_axis(l.out_h, tiling.1);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &(y0, y1) in &ys {
        for &(x0, x1) in &xs {
            out.push(TileRegion { layer_id: l.id, x0, x1, y0, y1, c0: 0, c1: l.cout });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Placement {
    Lbuf,
    LocalBank,
}

/// A tensor a fused kernel reads but does not produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRef {
    Network,
    Layer(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedLayerTile {
    pub input: TileRegion,
    pub output: TileRegion,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreTiles {
    pub core: usize,
    /// One entry per kernel layer, in kernel order.
    pub layers: Vec<FusedLayerTile>,
    /// Regions of kernel-external tensors this core reads.
    pub external: Vec<(TensorRef, TileRegion)>,
    /// Peak LBUF-resident bytes of intermediate tensors.
    pub peak_lbuf_bytes: u64,
}

/// Static facts about a kernel layer, so schedules are self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelLayer {
    pub layer_id: usize,
    pub kind: LayerKind,
    /// Number of input tensors (2 for ADD_RELU).
    pub operands: usize,
    /// Input map (h, w, c) and output map (h, w, c).
    pub in_dims: (usize, usize, usize),
    pub out_dims: (usize, usize, usize),
    /// MACs for a 1-pixel output across all channels.
    pub macs_per_pixel: u64,
    /// Written to banks because a layer outside the kernel consumes it.
    pub exported: bool,
}

/// Bytes one core must fetch from another core's bank at a kernel boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorgTransfer {
    pub tensor: TensorRef,
    pub src_core: usize,
    pub dst_core: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedTileSchedule {
    pub layer_ids: Vec<usize>,
    pub tiling: (usize, usize),
    pub bytes_per_element: usize,
    pub lbuf_bytes: u64,
    pub layers: Vec<KernelLayer>,
    pub cores: Vec<CoreTiles>,
    pub reorg: Vec<ReorgTransfer>,
}

impl FusedTileSchedule {
    pub fn reorg_bytes(&self) -> u64 {
        self.reorg.iter().map(|t| t.bytes).sum()
    }

    /// Bytes of intermediate tiles placed in local banks, summed over cores.
    pub fn spill_bytes(&self) -> u64 {
        let bpe = self.bytes_per_element;
        let last = self.layers.len() - 1;
        self.cores
            .iter()
            .flat_map(|c| c.layers.iter().enumerate())
            .filter(|(i, t)| *i != last && !self.layers[*i].exported && t.placement == Placement::LocalBank)
            .map(|(_, t)| t.output.bytes(bpe))
            .sum()
    }

    /// Intermediate tile bytes regardless of placement, summed over cores.
    pub fn intermediate_bytes(&self) -> u64 {
        let bpe = self.bytes_per_element;
        let last = self.layers.len() - 1;
        self.cores
            .iter()
            .flat_map(|c| c.layers.iter().enumerate())
            .filter(|(i, _)| *i != last && !self.layers[*i].exported)
            .map(|(_, t)| t.output.bytes(bpe))
            .sum()
    }

    /// Executed MACs summed over all cores.
    pub fn executed_macs(&self) -> u64 {
        self.cores
            .iter()
            .flat_map(|c| c.layers.iter().zip(&self.layers))
            .map(|(t, l)| t.output.pixels() * l.macs_per_pixel)
            .sum()
    }
}

/// Plans a fused kernel whose external inputs are already laid out per tile.
pub fn plan_fused_kernel(g: &CnnGraph, kernel: &FusedKernel, arch: &ArchConfig) -> Result<FusedTileSchedule> {
    plan_kernel(g, kernel, None, arch)
}

/// Plans every kernel of `plan`, including kernel-boundary reorganization.
pub fn plan_kernels(g: &CnnGraph, plan: &FusionPlan, arch: &ArchConfig) -> Result<Vec<FusedTileSchedule>> {
    plan.kernels.iter().map(|k| plan_kernel(g, k, Some(plan), arch)).collect()
}

// `partitions` is keyed by layer, so the core index is the natural loop variable.
#[allow(clippy::needless_range_loop)]
fn plan_kernel(
    g: &CnnGraph,
    kernel: &FusedKernel,
    plan: Option<&FusionPlan>,
    arch: &ArchConfig,
) -> Result<FusedTileSchedule> {
    let ids = &kernel.layer_ids;
    if ids.is_empty() || ids.windows(2).any(|w| w[1] != w[0] + 1) || *ids.last().unwrap() >= g.len() {
        return Err(Error::Plan("fused kernel must be a non-empty contiguous run of layers".into()));
    }
    let ncores = kernel.tiling.0 * kernel.tiling.1;
    if ncores != arch.num_pimcores() {
        return Err(Error::Plan(format!(
            "tiling {}x{} does not match {} PIMcores",
            kernel.tiling.0,
            kernel.tiling.1,
            arch.num_pimcores()
        )));
    }
    let inside: BTreeSet<usize> = ids.iter().copied().collect();
    let last = *ids.last().unwrap();
    let bpe = g.layer(last).bytes_per_element;

    let layers: Vec<KernelLayer> = ids
        .iter()
        .map(|&id| {
            let l = g.layer(id);
            let exported = id != last && g.consumers(id).iter().any(|c| !inside.contains(c));
            KernelLayer {
                layer_id: id,
                kind: l.kind,
                operands: g.producers(id).len().max(1),
                in_dims: (l.in_h, l.in_w, l.cin),
                out_dims: (l.out_h, l.out_w, l.cout),
                macs_per_pixel: l.macs_for_pixels(1),
                exported,
            }
        })
        .collect();

    let partitions: BTreeMap<usize, Vec<TileRegion>> =
        ids.iter().map(|&id| (id, tile_partition(g.layer(id), kernel.tiling))).collect();
    for t in &partitions[&last] {
        if t.is_empty() {
            return Err(Error::Infeasible(format!(
                "{}x{} tiling leaves an empty tile on the {}x{} output of layer {}",
                kernel.tiling.0,
                kernel.tiling.1,
                g.layer(last).out_w,
                g.layer(last).out_h,
                last
            )));
        }
    }

    let mut cores = Vec::with_capacity(ncores);
    for core in 0..ncores {
        // Backward pass: output region each layer must produce on this core.
        let mut need: BTreeMap<usize, TileRegion> = BTreeMap::new();
        let mut external: BTreeMap<TensorRef, TileRegion> = BTreeMap::new();
        let mut inputs: BTreeMap<usize, TileRegion> = BTreeMap::new();
        for (pos, &id) in ids.iter().enumerate().rev() {
            let own = partitions[&id][core];
            let mut out = need.get(&id).copied();
            if id == last || layers[pos].exported || out.is_none() {
                if own.is_empty() {
                    if out.is_none() {
                        return Err(Error::Infeasible(format!("layer {id} gets an empty tile on core {core}")));
                    }
                } else {
                    out = Some(out.map_or(own, |r| r.bbox(&own)));
                }
            }
            let out = out.unwrap();
            need.insert(id, out);
            let input = backprop_tile(&out, g.layer(id))?;
            inputs.insert(id, input);
            let producers = g.producers(id);
            if producers.is_empty() {
                let r = TileRegion { layer_id: id, ..input };
                external.entry(TensorRef::Network).and_modify(|e| *e = e.bbox(&r)).or_insert(r);
            }
            for p in producers {
                let r = TileRegion { layer_id: p, ..input };
                if inside.contains(&p) {
                    need.entry(p).and_modify(|e| *e = e.bbox(&r)).or_insert(r);
                } else {
                    external.entry(TensorRef::Layer(p)).and_modify(|e| *e = e.bbox(&r)).or_insert(r);
                }
            }
        }

        // Forward pass: greedy placement, newest tensor spills first.
        let last_use: BTreeMap<usize, usize> = ids
            .iter()
            .map(|&id| {
                let lu = g.consumers(id).into_iter().filter(|c| inside.contains(c)).max().unwrap_or(id);
                (id, lu)
            })
            .collect();
        let mut live: BTreeMap<usize, u64> = BTreeMap::new();
        let mut peak = 0;
        let mut tiles = Vec::with_capacity(ids.len());
        for (pos, &id) in ids.iter().enumerate() {
            live.retain(|t, _| last_use[t] >= id);
            let out = need[&id];
            let bytes = out.bytes(bpe);
            let internal = id != last && !layers[pos].exported && last_use[&id] > id;
            let used: u64 = live.values().sum();
            let placement = if internal && used + bytes <= arch.lbuf_bytes {
                live.insert(id, bytes);
                Placement::Lbuf
            } else {
                Placement::LocalBank
            };
            peak = peak.max(live.values().sum());
            tiles.push(FusedLayerTile { input: inputs[&id], output: out, placement });
        }
        cores.push(CoreTiles { core, layers: tiles, external: external.into_iter().collect(), peak_lbuf_bytes: peak });
    }

    let reorg = match plan {
        Some(plan) => reorg_transfers(g, plan, &cores, ncores, bpe),
        None => Vec::new(),
    };
    Ok(FusedTileSchedule {
        layer_ids: ids.clone(),
        tiling: kernel.tiling,
        bytes_per_element: bpe,
        lbuf_bytes: arch.lbuf_bytes,
        layers,
        cores,
        reorg,
    })
}

/// Bytes each core lacks locally for its external inputs.
///
/// Tensors produced by an earlier fused kernel are owned per that kernel's
/// spatial partition; tensors produced layer-by-layer are owned as channel
/// slices. The network input is placed by the host and never moves.
fn reorg_transfers(
    g: &CnnGraph,
    plan: &FusionPlan,
    cores: &[CoreTiles],
    ncores: usize,
    bpe: usize,
) -> Vec<ReorgTransfer> {
    let mut out = Vec::new();
    let tensors: BTreeSet<TensorRef> = cores.iter().flat_map(|c| c.external.iter().map(|e| e.0)).collect();
    for tensor in tensors {
        let TensorRef::Layer(p) = tensor else { continue };
        let owners: Vec<TileRegion> = match plan.kernel_of(p) {
            Some(k) => tile_partition(g.layer(p), plan.kernels[k].tiling),
            None => {
                let l = g.layer(p);
                let cs = split_axis(l.cout, ncores);
                cs.iter().map(|&(c0, c1)| TileRegion { c0, c1, ..TileRegion::full_output(l) }).collect()
            }
        };
        for dst in cores {
            let Some((_, region)) = dst.external.iter().find(|e| e.0 == tensor) else { continue };
            for (src, own) in owners.iter().enumerate() {
                if src == dst.core {
                    continue;
                }
                if let Some(overlap) = region.intersect(own) {
                    out.push(ReorgTransfer { tensor, src_core: src, dst_core: dst.core, bytes: overlap.bytes(bpe) });
                }
            }
        }
    }
    out
}

/// Operand-footprint replication: every core's input-operand tiles for every
/// kernel layer plus its output tile of the last layer, over the unique bytes
/// of those tensors, minus one.
pub fn duplication_factor(s: &FusedTileSchedule) -> f64 {
    let (tiles, unique) = footprint(s);
    if unique == 0 {
        0.0
    } else {
        tiles as f64 / unique as f64 - 1.0
    }
}

fn footprint(s: &FusedTileSchedule) -> (u64, u64) {
    let bpe = s.bytes_per_element as u64;
    let last = s.layers.len() - 1;
    let mut tiles = 0;
    let mut unique = 0;
    for (i, l) in s.layers.iter().enumerate() {
        let (h, w, c) = l.in_dims;
        unique += l.operands as u64 * (h * w * c) as u64 * bpe;
        for core in &s.cores {
            tiles += l.operands as u64 * core.layers[i].input.bytes(s.bytes_per_element);
        }
    }
    let (h, w, c) = s.layers[last].out_dims;
    unique += (h * w * c) as u64 * bpe;
    for core in &s.cores {
        tiles += core.layers[last].output.bytes(s.bytes_per_element);
    }
    (tiles, unique)
}

/// Replication of kernel-external inputs only: per-core input tiles over the
/// unique (bounding-box) input bytes, minus one.
pub fn input_duplication_factor(s: &FusedTileSchedule) -> f64 {
    let mut per_tensor: BTreeMap<TensorRef, (u64, Option<TileRegion>)> = BTreeMap::new();
    for core in &s.cores {
        for (t, r) in &core.external {
            let e = per_tensor.entry(*t).or_insert((0, None));
            e.0 += r.bytes(s.bytes_per_element);
            e.1 = Some(e.1.map_or(*r, |u| u.bbox(r)));
        }
    }
    let tiles: u64 = per_tensor.values().map(|v| v.0).sum();
    let unique: u64 = per_tensor.values().filter_map(|v| v.1).map(|r| r.bytes(s.bytes_per_element)).sum();
    if unique == 0 {
        0.0
    } else {
        tiles as f64 / unique as f64 - 1.0
    }
}

/// Executed over nominal MACs of the kernel's layers, minus one.
pub fn redundancy_factor(s: &FusedTileSchedule, g: &CnnGraph) -> f64 {
    let nominal: u64 = s.layer_ids.iter().map(|&id| g.layer(id).macs()).sum();
    if nominal == 0 {
        0.0
    } else {
        s.executed_macs() as f64 / nominal as f64 - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreCoutRange {
    pub core: usize,
    pub c0: usize,
    pub c1: usize,
}

/// One GBUF fill of a layer-by-layer layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LblWindow {
    /// Activation bytes staged into the GBUF and broadcast.
    pub broadcast_bytes: u64,
    /// Output pixels computed from this fill.
    pub out_pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerByLayerSchedule {
    pub layer_id: usize,
    pub cores: Vec<CoreCoutRange>,
    /// Largest per-bank weight slice.
    pub weight_bytes_per_bank: u64,
    pub windows: Vec<LblWindow>,
    /// Output pixels one near-bank weight read is applied to.
    pub weight_reuse: u64,
    /// Largest per-core output written back per output pixel.
    pub output_bytes_per_core_pixel: u64,
}

impl LayerByLayerSchedule {
    pub fn max_cout_per_core(&self) -> usize {
        self.cores.iter().map(|c| c.c1 - c.c0).max().unwrap_or(0)
    }
}

/// Splits `cout` over PIMcores and stages the input through the GBUF.
pub fn plan_layer_by_layer(layer: &LayerSpec, arch: &ArchConfig) -> LayerByLayerSchedule {
    let ncores = arch.num_pimcores();
    let mut c = 0;
    let cores: Vec<CoreCoutRange> = balanced_split(layer.cout as u64, ncores)
        .into_iter()
        .enumerate()
        .map(|(core, n)| {
            let r = CoreCoutRange { core, c0: c, c1: c + n as usize };
            c += n as usize;
            r
        })
        .collect();
    let max_cc = cores.iter().map(|r| r.c1 - r.c0).max().unwrap_or(0) as u64;
    let per_cout = (layer.cin * layer.kh * layer.kw * layer.bytes_per_element) as u64;
    let weight_bytes_per_bank = (max_cc * per_cout).div_ceil(arch.banks_per_pimcore as u64);
    let input = layer.input_bytes();
    let nwin = input.div_ceil(arch.gbuf_bytes).max(1) as usize;
    let pixels = (layer.out_h * layer.out_w) as u64;
    let windows = balanced_split(input, nwin)
        .into_iter()
        .zip(balanced_split(pixels, nwin))
        .map(|(broadcast_bytes, out_pixels)| LblWindow { broadcast_bytes, out_pixels })
        .collect();
    // Weight-stationary reuse needs an LBUF to hold the weight burst and one
    // accumulator per (pixel, output channel) resident in the bank.
    let weight_reuse = if arch.lbuf_bytes < arch.burst_bytes {
        1
    } else {
        let cout_per_bank = (layer.cout as u64).div_ceil(arch.num_banks as u64).max(1);
        (arch.accumulators_per_bank / cout_per_bank).max(1)
    };
    LayerByLayerSchedule {
        layer_id: layer.id,
        cores,
        weight_bytes_per_bank,
        windows,
        weight_reuse,
        output_bytes_per_core_pixel: max_cc * layer.bytes_per_element as u64,
    }
}

/// Per-layer slice of [`DataflowMetrics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer_id: usize,
    pub kind: LayerKind,
    /// Fused kernel index, or `None` for layer-by-layer execution.
    pub kernel: Option<usize>,
    pub macs_nominal: u64,
    pub macs_executed: u64,
    pub cross_bank_bytes: u64,
    pub near_bank_bytes: u64,
    pub spill_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMetrics {
    pub layer_ids: Vec<usize>,
    pub replication_ratio: f64,
    pub input_replication_ratio: f64,
    pub redundancy_ratio: f64,
    pub reorg_bytes: u64,
    pub spill_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataflowMetrics {
    /// Whole-network operand replication (fused tiles over unique bytes).
    pub replication_ratio: f64,
    /// Whole-network executed over nominal MACs, minus one.
    pub redundancy_ratio: f64,
    /// Payload of every BK2GBUF and GBUF2BK transfer, burst-padded.
    pub cross_bank_bytes: u64,
    pub lbuf_spill_bytes: u64,
    /// Bytes moved between banks and their own PIMcores, over all banks.
    pub near_bank_bytes: u64,
    pub macs_nominal: u64,
    pub macs_executed: u64,
    pub kernels: Vec<KernelMetrics>,
    pub per_layer: Vec<LayerMetrics>,
}

/// Aggregates replication, redundancy and traffic over the whole network.
pub fn analyze(g: &CnnGraph, plan: &FusionPlan, arch: &ArchConfig) -> Result<DataflowMetrics> {
    plan.validate(g, arch)?;
    let schedules = plan_kernels(g, plan, arch)?;
    let program = lower(g, plan, arch)?;
    Ok(metrics_from(g, plan, arch, &schedules, &program))
}

pub(crate) fn metrics_from(
    g: &CnnGraph,
    plan: &FusionPlan,
    arch: &ArchConfig,
    schedules: &[FusedTileSchedule],
    program: &Program,
) -> DataflowMetrics {
    let burst = arch.burst_bytes;
    let mut per_layer: Vec<LayerMetrics> = g
        .layers
        .iter()
        .map(|l| LayerMetrics {
            layer_id: l.id,
            kind: l.kind,
            kernel: plan.kernel_of(l.id),
            macs_nominal: l.macs(),
            macs_executed: l.macs(),
            cross_bank_bytes: 0,
            near_bank_bytes: 0,
            spill_bytes: 0,
        })
        .collect();
    let mut cross = 0;
    let mut near = 0;
    for step in &program.steps {
        let bytes = step.bursts * burst;
        match step.op {
            StepOp::GbufFetch { .. } | StepOp::GbufStore { .. } => {
                cross += bytes;
                if let Some(l) = step.layer {
                    per_layer[l].cross_bank_bytes += bytes;
                }
            }
            StepOp::LocalRead { .. } | StepOp::LocalWrite { .. } => {
                let b = bytes * arch.num_banks as u64;
                near += b;
                if let Some(l) = step.layer {
                    per_layer[l].near_bank_bytes += b;
                }
            }
            _ => {}
        }
    }
    let mut kernels = Vec::new();
    let mut fp_tiles = 0;
    let mut fp_unique = 0;
    for s in schedules {
        let (t, u) = footprint(s);
        fp_tiles += t;
        fp_unique += u;
        for (i, kl) in s.layers.iter().enumerate() {
            let m = &mut per_layer[kl.layer_id];
            m.macs_executed = s.cores.iter().map(|c| c.layers[i].output.pixels() * kl.macs_per_pixel).sum();
            m.spill_bytes = if i + 1 == s.layers.len() || kl.exported {
                0
            } else {
                s.cores
                    .iter()
                    .filter(|c| c.layers[i].placement == Placement::LocalBank)
                    .map(|c| c.layers[i].output.bytes(s.bytes_per_element))
                    .sum()
            };
        }
        kernels.push(KernelMetrics {
            layer_ids: s.layer_ids.clone(),
            replication_ratio: duplication_factor(s),
            input_replication_ratio: input_duplication_factor(s),
            redundancy_ratio: redundancy_factor(s, g),
            reorg_bytes: s.reorg_bytes(),
            spill_bytes: s.spill_bytes(),
        });
    }
    // Tail layers read each operand once: unique bytes, no replication.
    for &id in &plan.tail_layers {
        let l = g.layer(id);
        let b = l.input_bytes() * g.producers(id).len().max(1) as u64;
        fp_tiles += b;
        fp_unique += b;
    }
    let macs_nominal: u64 = per_layer.iter().map(|m| m.macs_nominal).sum();
    let macs_executed: u64 = per_layer.iter().map(|m| m.macs_executed).sum();
    DataflowMetrics {
        replication_ratio: if fp_unique == 0 { 0.0 } else { fp_tiles as f64 / fp_unique as f64 - 1.0 },
        redundancy_ratio: if macs_nominal == 0 { 0.0 } else { macs_executed as f64 / macs_nominal as f64 - 1.0 },
        cross_bank_bytes: cross,
        lbuf_spill_bytes: kernels.iter().map(|k| k.spill_bytes).sum(),
        near_bank_bytes: near,
        macs_nominal,
        macs_executed,
        kernels,
        per_layer,
    }
}
