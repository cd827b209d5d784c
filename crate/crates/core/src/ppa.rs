//! Energy and area estimates, generic over the floating-point scalar.

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, PimcoreFunctions};
use crate::error::{Error, Result};
use crate::simcore::SimStats;

fn c<T: FromPrimitive>(x: f64) -> T {
    T::from_f64(x).expect("scalar represents f64 values")
}

fn cu<T: FromPrimitive>(x: u64) -> T {
    T::from_u64(x).expect("scalar represents u64 values")
}

/// Log-linear interpolation over `(capacity, value)` anchors, computed in `T`.
pub fn sram_lookup<T: Float + FromPrimitive>(table: &[(u64, f64)], capacity: u64) -> T {
    if capacity == 0 || table.is_empty() {
        return T::zero();
    }
    if capacity <= table[0].0 || table.len() == 1 {
        return c(if capacity <= table[0].0 { table[0].1 } else { table[table.len() - 1].1 });
    }
    let (a, b) = table
        .windows(2)
        .find(|w| capacity <= w[1].0)
        .map(|w| (w[0], w[1]))
        .unwrap_or((table[table.len() - 2], table[table.len() - 1]));
    let x: T = cu::<T>(capacity).log2();
    let (x0, x1) = (cu::<T>(a.0).log2(), cu::<T>(b.0).log2());
    c::<T>(a.1) + (c::<T>(b.1) - c::<T>(a.1)) * (x - x0) / (x1 - x0)
}

/// Energy in picojoules, by component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown<T> {
    pub near_bank: T,
    pub dram_io: T,
    pub bus: T,
    pub gbuf: T,
    pub lbuf: T,
    pub mac: T,
    pub gbcore: T,
    pub leakage: T,
}

impl<T: Float> EnergyBreakdown<T> {
    pub fn total(&self) -> T {
        self.near_bank + self.dram_io + self.bus + self.gbuf + self.lbuf + self.mac + self.gbcore + self.leakage
    }

    /// Everything except leakage.
    pub fn dynamic(&self) -> T {
        self.total() - self.leakage
    }
}

pub fn estimate_energy<T: Float + FromPrimitive>(stats: &SimStats, arch: &ArchConfig) -> Result<EnergyBreakdown<T>> {
    let digest = arch.digest();
    if stats.arch_digest != digest {
        return Err(Error::DigestMismatch { stats: stats.arch_digest.clone(), arch: digest });
    }
    let e = &arch.energy;
    let a = &stats.actions;
    let io: T = c(e.dram_io_access_pj_per_byte);
    let gbuf_pj: T = sram_lookup(&e.sram_access_pj, arch.gbuf_bytes);
    let lbuf_pj: T = sram_lookup(&e.sram_access_pj, arch.lbuf_bytes);
    let nc = arch.num_pimcores() as f64;
    let lk = &e.leakage_mw;
    let sram_kib = (arch.gbuf_bytes as f64 + nc * arch.lbuf_bytes as f64) / 1024.0;
    let power_mw = nc * lk.pimcore + lk.gbcore + lk.bus + lk.sram_per_kib * sram_kib;
    // mW × ns = pJ
    let ns = cu::<T>(stats.cycles) / c(arch.clock_ghz);
    Ok(EnergyBreakdown {
        near_bank: cu::<T>(a.near_bank_bytes) * io * c(e.near_bank_access_fraction),
        dram_io: cu::<T>(a.io_bytes) * io,
        bus: cu::<T>(a.bus_bytes) * c(e.bus_pj_per_byte),
        gbuf: cu::<T>(a.gbuf_read_bytes + a.gbuf_write_bytes) * gbuf_pj,
        lbuf: cu::<T>(a.lbuf_read_bytes + a.lbuf_write_bytes) * lbuf_pj,
        mac: cu::<T>(a.pim_macs) * c(e.mac_op_pj),
        gbcore: cu::<T>(a.gbcore_ops) * c(e.gbcore_op_pj),
        leakage: c::<T>(power_mw) * ns,
    })
}

/// Added logic area in mm², by component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaBreakdown<T> {
    pub pimcores: T,
    pub gbcore: T,
    pub gbuf: T,
    pub lbufs: T,
    pub bus: T,
}

impl<T: Float> AreaBreakdown<T> {
    pub fn total(&self) -> T {
        self.pimcores + self.gbcore + self.gbuf + self.lbufs + self.bus
    }
}

pub fn estimate_area<T: Float + FromPrimitive>(arch: &ArchConfig) -> AreaBreakdown<T> {
    let a = &arch.area;
    let nc: T = cu(arch.num_pimcores() as u64);
    let core = match arch.pimcore_functions {
        PimcoreFunctions::AimLike => a.pimcore_mm2,
        PimcoreFunctions::Pimfused => a.pimfused_pimcore_mm2,
    };
    AreaBreakdown {
        pimcores: nc * c(core),
        gbcore: c(a.gbcore_mm2),
        gbuf: sram_lookup(&a.sram_mm2, arch.gbuf_bytes),
        lbufs: nc * sram_lookup::<T>(&a.sram_mm2, arch.lbuf_bytes),
        bus: c(a.bus_mm2),
    }
}

/// `value / baseline`, failing on a zero baseline.
pub fn normalize<T: Float>(value: T, baseline: T, what: &'static str) -> Result<T> {
    if baseline == T::zero() {
        Err(Error::ZeroBaseline(what))
    } else {
        Ok(value / baseline)
    }
}
