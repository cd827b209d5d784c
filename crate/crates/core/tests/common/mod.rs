//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use pimfused::experiment::System;
use pimfused::workload::{LayerEntry, WorkloadFile};
use pimfused::{named_config, ArchConfig, CnnGraph, FusedKernel, FusionPlan, LayerKind};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

/// Independent per-axis receptive field: the touched input interval of the
/// output interval `[o0, o1)`, by walking every output and kernel tap.
pub fn enumerate_axis(o0: usize, o1: usize, k: usize, s: usize, p: usize, n: usize) -> Option<(usize, usize)> {
    let mut lo = usize::MAX;
    let mut hi = 0;
    for o in o0..o1 {
        for j in 0..k {
            let i = (o * s + j) as i64 - p as i64;
            if i >= 0 && (i as usize) < n {
                lo = lo.min(i as usize);
                hi = hi.max(i as usize + 1);
            }
        }
    }
    (lo < hi).then_some((lo, hi))
}

pub fn conv(id: usize, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> LayerEntry {
    LayerEntry { id, kind: LayerKind::ConvBnRelu, cin, cout, k: [k, k], stride, pad }
}

pub fn chain(name: &str, input: [usize; 3], layers: Vec<LayerEntry>) -> CnnGraph {
    let edges = (1..layers.len()).map(|i| [i - 1, i]).collect();
    WorkloadFile { name: Some(name.into()), layers, edges, input, bytes_per_element: Some(1) }
        .into_graph(name.into())
        .expect("fixture graph is valid")
}

/// Two 3×3 stride-1 unpadded convolutions producing an 8×8 map.
pub fn toy_two_layer() -> CnnGraph {
    chain("toy", [1, 12, 12], vec![conv(0, 1, 1, 3, 1, 0), conv(1, 1, 1, 3, 1, 0)])
}

/// A random (graph, plan, arch) triple; may be infeasible for fused plans.
#[derive(Debug, Clone)]
pub struct Triple {
    pub graph: CnnGraph,
    pub plan: FusionPlan,
    pub arch: ArchConfig,
}

#[derive(Debug, Clone)]
struct LayerDraw {
    pool: bool,
    k: usize,
    stride: usize,
    pad: usize,
    cout: usize,
    residual: bool,
}

fn layer_draw() -> impl Strategy<Value = LayerDraw> {
    (
        any::<bool>(),
        prop::sample::select(vec![1usize, 3, 5]),
        1usize..=2,
        0usize..=2,
        4usize..=48,
        prop::bool::weighted(0.3),
    )
        .prop_map(|(pool, k, stride, pad, cout, residual)| LayerDraw { pool, k, stride, pad, cout, residual })
}

fn build(input: [usize; 3], draws: &[LayerDraw]) -> Option<CnnGraph> {
    let mut layers: Vec<LayerEntry> = Vec::new();
    let mut edges: Vec<[usize; 2]> = Vec::new();
    let (mut c, mut h) = (input[0], input[1]);
    for d in draws {
        let id = layers.len();
        let pad = d.pad.min(d.k / 2);
        let (kind, cout, k, stride) =
            if d.pool && id > 0 { (LayerKind::Pool, c, 2, 2) } else { (LayerKind::ConvBnRelu, d.cout, d.k, d.stride) };
        let pad = if kind == LayerKind::Pool { 0 } else { pad };
        let out = pimfused::workload::conv_out_dim(h, k, stride, pad)?;
        if out < 4 {
            break;
        }
        layers.push(LayerEntry { id, kind, cin: c, cout, k: [k, k], stride, pad });
        if id > 0 {
            edges.push([id - 1, id]);
        }
        c = cout;
        h = out;
        // Residual add of this layer's output with a same-shape same-padding conv of it.
        if d.residual && kind != LayerKind::Pool {
            let a = layers.len();
            layers.push(LayerEntry { id: a, kind: LayerKind::ConvBn, cin: c, cout: c, k: [3, 3], stride: 1, pad: 1 });
            edges.push([a - 1, a]);
            layers.push(LayerEntry {
                id: a + 1,
                kind: LayerKind::AddRelu,
                cin: c,
                cout: c,
                k: [1, 1],
                stride: 1,
                pad: 0,
            });
            edges.push([a, a + 1]);
            edges.push([a - 1, a + 1]);
        }
    }
    if layers.is_empty() {
        return None;
    }
    WorkloadFile { name: Some("rand".into()), layers, edges, input, bytes_per_element: Some(1) }
        .into_graph("rand".into())
        .ok()
}

pub fn triple_draw() -> impl Strategy<Value = Option<Triple>> {
    (
        prop::sample::select(vec![3usize, 8, 16]),
        8usize..=40,
        prop::collection::vec(layer_draw(), 1..=6),
        prop::sample::select(System::ALL.to_vec()),
        prop::sample::select(vec!["G2K_L0", "G4K_L64", "G8K_L256", "G32K_L0", "G32K_L256", "G64K_L100K"]),
        0usize..=8,
        (75u64..=125, 75u64..=125),
    )
        .prop_map(|(c, h, draws, system, label, fused_len, (ts, bs))| {
            let graph = build([c, h, h], &draws)?;
            let mut base = ArchConfig::default();
            let t = &mut base.timing;
            for v in [&mut t.t_rcd, &mut t.t_rp, &mut t.t_cl, &mut t.t_ras, &mut t.t_wr] {
                *v = (*v * ts / 100).max(1);
            }
            t.bus_transfer_cycles_per_burst = (t.bus_transfer_cycles_per_burst * bs / 100).max(1);
            let arch = named_config(label, &system.arch(&base)).ok()?;
            let n = fused_len.min(graph.len());
            let plan = if system == System::AimLike || n == 0 {
                FusionPlan::layer_by_layer(&graph)
            } else {
                let side = (arch.num_pimcores() as f64).sqrt() as usize;
                FusionPlan {
                    kernels: vec![FusedKernel { layer_ids: (0..n).collect(), tiling: (side, side) }],
                    tail_layers: (n..graph.len()).collect(),
                }
            };
            Some(Triple { graph, plan, arch })
        })
}

/// `count` random triples whose traces can be emitted, from a fixed seed.
pub fn random_triples(count: usize) -> Vec<Triple> {
    let mut runner = TestRunner::deterministic();
    let strat = triple_draw();
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < count {
        tries += 1;
        assert!(tries < count * 50, "too few feasible random triples");
        let Some(t) = strat.new_tree(&mut runner).expect("strategy draws").current() else { continue };
        if pimfused::emit_trace(&t.graph, &t.plan, &t.arch).is_ok() {
            out.push(t);
        }
    }
    out
}
