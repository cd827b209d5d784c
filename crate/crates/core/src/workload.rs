//! CNN workloads as shape-annotated layer graphs.
//!
//! BN and ReLU are folded into the preceding convolution, so a graph only
//! ever contains four layer kinds. Pooling and residual addition are
//! standalone layers and count toward fused-kernel sizes by default.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataflow::{FusedKernel, FusionPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LayerKind {
    ConvBn,
    ConvBnRelu,
    Pool,
    AddRelu,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::ConvBn | LayerKind::ConvBnRelu)
    }

    /// Flag spelling used in traces.
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::ConvBn => "CONV_BN",
            LayerKind::ConvBnRelu => "CONV_BN_RELU",
            LayerKind::Pool => "POOL",
            LayerKind::AddRelu => "ADD_RELU",
        }
    }

    pub fn parse(s: &str) -> Option<LayerKind> {
        Some(match s {
            "CONV_BN" => LayerKind::ConvBn,
            "CONV_BN_RELU" => LayerKind::ConvBnRelu,
            "POOL" => LayerKind::Pool,
            "ADD_RELU" => LayerKind::AddRelu,
            _ => return None,
        })
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One layer with its resolved input and output geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: usize,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub bytes_per_element: usize,
}

/// `floor((in + 2·pad − k)/stride) + 1`, or `None` when the kernel does not fit.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < k {
        return None;
    }
    Some((input + 2 * pad - k) / stride + 1)
}

impl LayerSpec {
    /// Builds a layer and derives its output extents.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        kind: LayerKind,
        cin: usize,
        cout: usize,
        k: (usize, usize),
        stride: usize,
        padding: usize,
        in_hw: (usize, usize),
        bytes_per_element: usize,
    ) -> Result<LayerSpec> {
        let out_h = conv_out_dim(in_hw.0, k.0, stride, padding);
        let out_w = conv_out_dim(in_hw.1, k.1, stride, padding);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) if out_h > 0 && out_w > 0 => Ok(LayerSpec {
                id,
                kind,
                cin,
                cout,
                kh: k.0,
                kw: k.1,
                stride,
                padding,
                in_h: in_hw.0,
                in_w: in_hw.1,
                out_h,
                out_w,
                bytes_per_element,
            }),
            _ => Err(Error::Workload(format!(
                "layer {id}: kernel {}x{} stride {stride} pad {padding} does not fit a {}x{} input",
                k.0, k.1, in_hw.0, in_hw.1
            ))),
        }
    }

    pub fn macs(&self) -> u64 {
        if !self.kind.is_conv() {
            return 0;
        }
        self.macs_for_pixels((self.out_h * self.out_w) as u64)
    }

    /// MACs needed to produce `pixels` output pixels across all output channels.
    pub fn macs_for_pixels(&self, pixels: u64) -> u64 {
        if !self.kind.is_conv() {
            return 0;
        }
        pixels * (self.cout * self.cin * self.kh * self.kw) as u64
    }

    /// Element-wise operations for POOL / ADD_RELU layers (comparisons or adds).
    pub fn elementwise_ops_for_pixels(&self, pixels: u64) -> u64 {
        match self.kind {
            LayerKind::Pool => pixels * (self.cout * self.kh * self.kw) as u64,
            LayerKind::AddRelu => pixels * (2 * self.cout) as u64,
            _ => 0,
        }
    }

    pub fn weight_bytes(&self) -> u64 {
        if !self.kind.is_conv() {
            return 0;
        }
        (self.cout * self.cin * self.kh * self.kw * self.bytes_per_element) as u64
    }

    /// Bytes of one input operand tensor.
    pub fn input_bytes(&self) -> u64 {
        (self.cin * self.in_h * self.in_w * self.bytes_per_element) as u64
    }

    pub fn output_bytes(&self) -> u64 {
        (self.cout * self.out_h * self.out_w * self.bytes_per_element) as u64
    }
}

/// A CNN as a DAG of layers. Layer ids equal their index in `layers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnGraph {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub edges: Vec<(usize, usize)>,
    /// Network input as `[channels, height, width]`.
    pub input: [usize; 3],
}

impl CnnGraph {
    pub fn layer(&self, id: usize) -> &LayerSpec {
        &self.layers[id]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Producers of `id` in edge-list order.
    pub fn producers(&self, id: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == id).map(|e| e.0).collect()
    }

    pub fn consumers(&self, id: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == id).map(|e| e.1).collect()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(LayerSpec::macs).sum()
    }

    /// Keeps the first `n` layers and the edges among them.
    pub fn truncate(&self, n: usize) -> CnnGraph {
        let n = n.min(self.layers.len());
        CnnGraph {
            name: format!("{}_first{}", self.name, n),
            layers: self.layers[..n].to_vec(),
            edges: self.edges.iter().copied().filter(|e| e.0 < n && e.1 < n).collect(),
            input: self.input,
        }
    }

    pub fn load(path: &Path) -> Result<CnnGraph> {
        let text = std::fs::read_to_string(path)?;
        let file: WorkloadFile = serde_json::from_str(&text)?;
        let name = file
            .name
            .clone()
            .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        file.into_graph(name)
    }

    pub fn to_file(&self) -> WorkloadFile {
        let bpe = self.layers.first().map(|l| l.bytes_per_element).unwrap_or(1);
        WorkloadFile {
            name: Some(self.name.clone()),
            input: self.input,
            bytes_per_element: Some(bpe),
            layers: self
                .layers
                .iter()
                .map(|l| LayerEntry {
                    id: l.id,
                    kind: l.kind,
                    cin: l.cin,
                    cout: l.cout,
                    k: [l.kh, l.kw],
                    stride: l.stride,
                    pad: l.padding,
                })
                .collect(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// On-disk workload schema. Spatial extents are derived by shape propagation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub layers: Vec<LayerEntry>,
    pub edges: Vec<[usize; 2]>,
    pub input: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes_per_element: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub id: usize,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub k: [usize; 2],
    pub stride: usize,
    pub pad: usize,
}

impl WorkloadFile {
    pub fn into_graph(self, name: String) -> Result<CnnGraph> {
        let bpe = self.bytes_per_element.unwrap_or(1);
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            if l.id != i {
                return Err(Error::Workload(format!("layer at position {i} has id {}", l.id)));
            }
        }
        for e in &self.edges {
            if e[0] >= n || e[1] >= n {
                return Err(Error::Workload(format!("edge {:?} references a missing layer", e)));
            }
            if e[0] >= e[1] {
                return Err(Error::Workload(format!(
                    "edge {:?} does not point forward; layers must be listed in topological order",
                    e
                )));
            }
        }
        let mut layers: Vec<LayerSpec> = Vec::with_capacity(n);
        for entry in &self.layers {
            let src = self.edges.iter().find(|e| e[1] == entry.id).map(|e| e[0]);
            let in_hw = match src {
                Some(p) => (layers[p].out_h, layers[p].out_w),
                None => (self.input[1], self.input[2]),
            };
            layers.push(LayerSpec::new(
                entry.id,
                entry.kind,
                entry.cin,
                entry.cout,
                (entry.k[0], entry.k[1]),
                entry.stride,
                entry.pad,
                in_hw,
                bpe,
            )?);
        }
        Ok(CnnGraph { name, layers, edges: self.edges.iter().map(|e| (e[0], e[1])).collect(), input: self.input })
    }
}

/// A broken graph invariant. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    ShapeFormula { layer: usize },
    ChannelIdentity { layer: usize },
    AddGeometry { layer: usize },
    AddArity { layer: usize, inputs: usize },
    MultipleInputs { layer: usize, inputs: usize },
    MissingInput { layer: usize },
    DanglingEdge { from: usize, to: usize },
    Cycle,
    ChannelMismatch { from: usize, to: usize, produced: usize, expected: usize },
    SpatialMismatch { from: usize, to: usize },
    NetworkInput { layer: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeFormula { layer } => {
                write!(f, "layer {layer}: stored output extents disagree with stride/padding math")
            }
            Violation::ChannelIdentity { layer } => {
                write!(f, "layer {layer}: POOL/ADD_RELU must have cin == cout")
            }
            Violation::AddGeometry { layer } => {
                write!(f, "layer {layer}: ADD_RELU needs a 1x1 kernel, stride 1, no padding")
            }
            Violation::AddArity { layer, inputs } => {
                write!(f, "layer {layer}: ADD_RELU has {inputs} inputs, expected 2")
            }
            Violation::MultipleInputs { layer, inputs } => {
                write!(f, "layer {layer}: {inputs} incoming edges on a single-input layer")
            }
            Violation::MissingInput { layer } => write!(f, "layer {layer}: no incoming edge"),
            Violation::DanglingEdge { from, to } => write!(f, "edge {from}->{to}: missing endpoint"),
            Violation::Cycle => write!(f, "graph contains a cycle"),
            Violation::ChannelMismatch { from, to, produced, expected } => {
                write!(f, "edge {from}->{to}: producer emits {produced} channels, consumer expects {expected}")
            }
            Violation::SpatialMismatch { from, to } => {
                write!(f, "edge {from}->{to}: spatial extents disagree")
            }
            Violation::NetworkInput { layer } => {
                write!(f, "layer {layer}: does not match the network input shape")
            }
        }
    }
}

/// Checks every graph invariant and returns all violations found.
pub fn validate_graph(g: &CnnGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = g.layers.len();
    for (i, l) in g.layers.iter().enumerate() {
        let oh = conv_out_dim(l.in_h, l.kh, l.stride, l.padding);
        let ow = conv_out_dim(l.in_w, l.kw, l.stride, l.padding);
        if oh != Some(l.out_h) || ow != Some(l.out_w) || l.out_h == 0 || l.out_w == 0 {
            out.push(Violation::ShapeFormula { layer: i });
        }
        if matches!(l.kind, LayerKind::Pool | LayerKind::AddRelu) && l.cin != l.cout {
            out.push(Violation::ChannelIdentity { layer: i });
        }
        if l.kind == LayerKind::AddRelu && (l.kh != 1 || l.kw != 1 || l.stride != 1 || l.padding != 0) {
            out.push(Violation::AddGeometry { layer: i });
        }
    }
    let mut valid_edges = Vec::new();
    for &(a, b) in &g.edges {
        if a >= n || b >= n {
            out.push(Violation::DanglingEdge { from: a, to: b });
        } else {
            valid_edges.push((a, b));
        }
    }
    // Kahn's algorithm over the well-formed edges.
    let mut indeg = vec![0usize; n];
    for &(_, b) in &valid_edges {
        indeg[b] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    let mut deg = indeg.clone();
    while let Some(v) = ready.pop() {
        seen += 1;
        for &(a, b) in &valid_edges {
            if a == v {
                deg[b] -= 1;
                if deg[b] == 0 {
                    ready.push(b);
                }
            }
        }
    }
    if seen != n {
        out.push(Violation::Cycle);
    }
    for (i, l) in g.layers.iter().enumerate() {
        let inputs = indeg[i];
        if l.kind == LayerKind::AddRelu {
            if inputs != 2 {
                out.push(Violation::AddArity { layer: i, inputs });
            }
        } else if inputs > 1 {
            out.push(Violation::MultipleInputs { layer: i, inputs });
        }
        if inputs == 0 {
            if i == 0 {
                if l.cin != g.input[0] || l.in_h != g.input[1] || l.in_w != g.input[2] {
                    out.push(Violation::NetworkInput { layer: i });
                }
            } else if l.kind != LayerKind::AddRelu {
                out.push(Violation::MissingInput { layer: i });
            }
        }
    }
    for &(a, b) in &valid_edges {
        let (p, c) = (&g.layers[a], &g.layers[b]);
        if p.cout != c.cin {
            out.push(Violation::ChannelMismatch { from: a, to: b, produced: p.cout, expected: c.cin });
        }
        if p.out_h != c.in_h || p.out_w != c.in_w {
            out.push(Violation::SpatialMismatch { from: a, to: b });
        }
    }
    out
}

/// Standard ResNet18 inference graph with BN/ReLU folded into convolutions.
///
/// Blocks are emitted as `conv, conv, [downsample conv,] add`. The global
/// average pool is a POOL layer and the classifier a 1x1 CONV_BN on a 1x1 map.
pub fn build_resnet18(input_h: usize, input_w: usize) -> Result<CnnGraph> {
    if input_h == 0 || input_w == 0 {
        return Err(Error::Workload(format!("input extents must be positive, got {input_h}x{input_w}")));
    }
    let mut b = GraphBuilder { layers: Vec::new(), edges: Vec::new() };
    let stem = b.push(LayerKind::ConvBnRelu, 3, 64, 7, 2, 3, (input_h, input_w), &[])?;
    let mut x = b.push(LayerKind::Pool, 64, 64, 3, 2, 1, b.out(stem), &[stem])?;
    let mut c = 64;
    for &(cout, stride) in &[(64, 1), (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2), (512, 1)] {
        let a = b.push(LayerKind::ConvBnRelu, c, cout, 3, stride, 1, b.out(x), &[x])?;
        let m = b.push(LayerKind::ConvBn, cout, cout, 3, 1, 1, b.out(a), &[a])?;
        let skip = if stride != 1 || c != cout {
            b.push(LayerKind::ConvBn, c, cout, 1, stride, 0, b.out(x), &[x])?
        } else {
            x
        };
        x = b.push(LayerKind::AddRelu, cout, cout, 1, 1, 0, b.out(m), &[m, skip])?;
        c = cout;
    }
    let (h, w) = b.out(x);
    if h != w {
        return Err(Error::Workload("global pool expects a square final map".into()));
    }
    let gap = b.push(LayerKind::Pool, 512, 512, h, 1, 0, (h, w), &[x])?;
    b.push(LayerKind::ConvBn, 512, 1000, 1, 1, 0, b.out(gap), &[gap])?;
    Ok(CnnGraph { name: "resnet18".into(), layers: b.layers, edges: b.edges, input: [3, input_h, input_w] })
}

struct GraphBuilder {
    layers: Vec<LayerSpec>,
    edges: Vec<(usize, usize)>,
}

impl GraphBuilder {
    fn out(&self, id: usize) -> (usize, usize) {
        (self.layers[id].out_h, self.layers[id].out_w)
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        kind: LayerKind,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        in_hw: (usize, usize),
        srcs: &[usize],
    ) -> Result<usize> {
        let id = self.layers.len();
        self.layers.push(LayerSpec::new(id, kind, cin, cout, (k, k), stride, pad, in_hw, 1)?);
        self.edges.extend(srcs.iter().map(|&s| (s, id)));
        Ok(id)
    }
}

/// How "the first N layers" of a fused kernel are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerCounting {
    /// POOL and ADD_RELU count as layers, numbered in-line with convolutions.
    #[default]
    AllLayers,
    /// Only convolutions count; POOL/ADD_RELU ride along with the kernel
    /// holding the convolution that precedes them.
    ConvOnly,
}

/// Default fused-kernel grouping for 16 one-bank or 4 four-bank PIMcores.
pub fn default_fusion_plan(g: &CnnGraph, num_pimcores: usize, counting: LayerCounting) -> Result<FusionPlan> {
    let (sizes, tiling): (&[usize], (usize, usize)) = match num_pimcores {
        16 => (&[8, 7], (4, 4)),
        4 => (&[8, 7, 7], (2, 2)),
        n => return Err(Error::Plan(format!("no default fusion plan for {n} PIMcores (expected 4 or 16)"))),
    };
    let mut kernels = Vec::new();
    let mut next = 0;
    for &size in sizes {
        let ids = match counting {
            LayerCounting::AllLayers => {
                if next + size > g.len() {
                    return Err(Error::Plan(format!(
                        "graph has {} layers, too short for kernels of {:?}",
                        g.len(),
                        sizes
                    )));
                }
                (next..next + size).collect::<Vec<_>>()
            }
            LayerCounting::ConvOnly => {
                let mut ids = Vec::new();
                let mut convs = 0;
                let mut i = next;
                while i < g.len() && convs < size {
                    if g.layers[i].kind.is_conv() {
                        convs += 1;
                    }
                    ids.push(i);
                    i += 1;
                }
                if convs < size {
                    return Err(Error::Plan(format!("graph has too few convolutions for kernels of {:?}", sizes)));
                }
                while i < g.len() && !g.layers[i].kind.is_conv() {
                    ids.push(i);
                    i += 1;
                }
                ids
            }
        };
        next = ids.last().map(|&l| l + 1).unwrap_or(next);
        kernels.push(FusedKernel { layer_ids: ids, tiling });
    }
    let tail_layers = (next..g.len()).collect();
    Ok(FusionPlan { kernels, tail_layers })
}

/// Layer ids used by a plan, for partition checks.
pub fn plan_layer_set(plan: &FusionPlan) -> BTreeSet<usize> {
    plan.kernels.iter().flat_map(|k| k.layer_ids.iter().copied()).chain(plan.tail_layers.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extent() {
        assert_eq!(conv_out_dim(224, 7, 2, 3), Some(112));
        assert_eq!(conv_out_dim(112, 3, 2, 1), Some(56));
        assert_eq!(conv_out_dim(7, 7, 1, 0), Some(1));
        assert_eq!(conv_out_dim(2, 3, 1, 0), None);
        assert_eq!(conv_out_dim(8, 3, 0, 0), None);
    }
}
