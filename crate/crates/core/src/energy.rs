//! Static plus dynamic energy over PEs, buffers, NoC and DRAM.

use serde::{Deserialize, Serialize};

use crate::cost::CostEstimate;
use crate::error::{Error, Result};
use crate::hardware::{AcceleratorConfig, Placement};

const PICO: f64 = 1e-12;
const MICRO: f64 = 1e-6;

/// Per-accelerator energy coefficients, in the units of the hardware
/// document (pJ and µW).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCoefficients {
    /// Per 8-bit MAC.
    pub e_mac_pj: f64,
    pub e_param_buf_pj_per_b: f64,
    pub e_act_buf_pj_per_b: f64,
    pub e_noc_pj_per_b: f64,
    pub e_dram_pj_per_b: f64,
    /// Leakage per PE.
    pub p_static_pe_uw: f64,
    /// Leakage per KiB of on-chip storage.
    pub p_static_buf_uw_per_kb: f64,
}

impl EnergyCoefficients {
    pub fn e_mac(&self) -> f64 {
        self.e_mac_pj * PICO
    }

    pub fn e_param_buf(&self) -> f64 {
        self.e_param_buf_pj_per_b * PICO
    }

    pub fn e_act_buf(&self) -> f64 {
        self.e_act_buf_pj_per_b * PICO
    }

    pub fn e_noc(&self) -> f64 {
        self.e_noc_pj_per_b * PICO
    }

    pub fn e_dram(&self) -> f64 {
        self.e_dram_pj_per_b * PICO
    }

    pub fn p_static_pe(&self) -> f64 {
        self.p_static_pe_uw * MICRO
    }

    pub fn p_static_buf(&self) -> f64 {
        self.p_static_buf_uw_per_kb * MICRO
    }

    pub(crate) fn validate(&self, at: &str) -> Result<()> {
        for (field, v) in [
            ("e_mac_pj", self.e_mac_pj),
            ("e_param_buf_pj_per_b", self.e_param_buf_pj_per_b),
            ("e_act_buf_pj_per_b", self.e_act_buf_pj_per_b),
            ("e_noc_pj_per_b", self.e_noc_pj_per_b),
            ("e_dram_pj_per_b", self.e_dram_pj_per_b),
            ("p_static_pe_uw", self.p_static_pe_uw),
            ("p_static_buf_uw_per_kb", self.p_static_buf_uw_per_kb),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(
                    format!("{at}.{field}"),
                    format!("must be non-negative, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Buffer access energy as a function of capacity, interpolated log-log
/// between `(capacity_bytes, pj_per_byte)` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEnergyTable(pub Vec<(f64, f64)>);

impl BufferEnergyTable {
    pub fn pj_per_byte(&self, capacity_bytes: f64) -> f64 {
        let pts = &self.0;
        if capacity_bytes <= 0.0 || pts.is_empty() {
            return 0.0;
        }
        if pts.len() == 1 {
            return pts[0].1;
        }
        // Segment containing the capacity, or the end segment to extrapolate.
        let i = pts
            .windows(2)
            .position(|w| capacity_bytes <= w[1].0)
            .unwrap_or(pts.len() - 2);
        let ((x0, y0), (x1, y1)) = (pts[i], pts[i + 1]);
        let slope = (y1.ln() - y0.ln()) / (x1.ln() - x0.ln());
        (y0.ln() + slope * (capacity_bytes.ln() - x0.ln())).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DramEnergy {
    #[serde(rename = "OnChip")]
    pub on_chip: f64,
    #[serde(rename = "NearMemory")]
    pub near_memory: f64,
}

/// Contents of `data/default_energy.json`: placeholder coefficients for
/// everything except the MAC energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultEnergy {
    pub note: String,
    pub e_mac_pj: f64,
    pub e_noc_pj_per_b: f64,
    pub e_dram_pj_per_b: DramEnergy,
    pub p_static_pe_uw: f64,
    pub p_static_buf_uw_per_kb: f64,
    pub buffer_pj_per_byte: BufferEnergyTable,
}

const BUNDLED_DEFAULTS: &str = include_str!("../data/default_energy.json");

impl DefaultEnergy {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_DEFAULTS).expect("bundled energy defaults parse")
    }

    /// Coefficients for an accelerator with the given placement and buffer
    /// capacities (bytes).
    pub fn coefficients(&self, placement: Placement, act_bytes: f64, param_bytes: f64) -> EnergyCoefficients {
        EnergyCoefficients {
            e_mac_pj: self.e_mac_pj,
            e_param_buf_pj_per_b: self.buffer_pj_per_byte.pj_per_byte(param_bytes),
            e_act_buf_pj_per_b: self.buffer_pj_per_byte.pj_per_byte(act_bytes),
            e_noc_pj_per_b: self.e_noc_pj_per_b,
            e_dram_pj_per_b: match placement {
                Placement::OnChip => self.e_dram_pj_per_b.on_chip,
                Placement::NearMemory => self.e_dram_pj_per_b.near_memory,
            },
            p_static_pe_uw: self.p_static_pe_uw,
            p_static_buf_uw_per_kb: self.p_static_buf_uw_per_kb,
        }
    }
}

/// Joules per component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub pe_dynamic: f64,
    pub pe_static: f64,
    pub buf_dynamic: f64,
    pub buf_static: f64,
    pub noc: f64,
    pub dram: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn from_parts(pe_dynamic: f64, pe_static: f64, buf_dynamic: f64, buf_static: f64, noc: f64, dram: f64) -> Self {
        EnergyBreakdown {
            pe_dynamic,
            pe_static,
            buf_dynamic,
            buf_static,
            noc,
            dram,
            total: pe_dynamic + pe_static + buf_dynamic + buf_static + noc + dram,
        }
    }

    pub fn parts(&self) -> [f64; 6] {
        [
            self.pe_dynamic,
            self.pe_static,
            self.buf_dynamic,
            self.buf_static,
            self.noc,
            self.dram,
        ]
    }

    /// Component-wise sum with the total recomputed from the parts.
    pub fn add(&self, other: &EnergyBreakdown) -> EnergyBreakdown {
        let (a, b) = (self.parts(), other.parts());
        EnergyBreakdown::from_parts(
            a[0] + b[0],
            a[1] + b[1],
            a[2] + b[2],
            a[3] + b[3],
            a[4] + b[4],
            a[5] + b[5],
        )
    }

    pub fn static_total(&self) -> f64 {
        self.pe_static + self.buf_static
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyOptions {
    /// Charge leakage over each layer's latency on its accelerator.
    pub statics: bool,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        EnergyOptions { statics: true }
    }
}

pub fn layer_energy(cost: &CostEstimate, accel: &AcceleratorConfig, opts: &EnergyOptions) -> EnergyBreakdown {
    let e = &accel.energy;
    let (pe_static, buf_static) = if opts.statics {
        (
            e.p_static_pe() * accel.pes() as f64 * cost.latency_s,
            e.p_static_buf() * accel.buffer_kb() * cost.latency_s,
        )
    } else {
        (0.0, 0.0)
    };
    EnergyBreakdown::from_parts(
        cost.macs as f64 * e.e_mac(),
        pe_static,
        cost.param_buf_accesses as f64 * e.e_param_buf() + cost.act_buf_accesses as f64 * e.e_act_buf(),
        buf_static,
        cost.noc_bytes as f64 * e.e_noc(),
        cost.dram_bytes() as f64 * e.e_dram(),
    )
}

/// Best achievable MAC/J at `intensity` MAC per DRAM byte. Memory energy
/// cannot be hidden, so the curve is smooth and approaches `1 / e_mac`.
pub fn energy_roofline(intensity: f64, coeffs: &EnergyCoefficients) -> Result<f64> {
    if intensity.is_nan() || intensity <= 0.0 {
        return Err(Error::Domain(format!("intensity must be positive, got {intensity}")));
    }
    Ok(1.0 / (coeffs.e_mac() + coeffs.e_dram() / intensity))
}

/// Fraction of a layer's parameters the buffer can hold.
pub fn buffer_effectiveness(layer_param_bytes: u64, param_buffer_bytes: u64) -> f64 {
    if layer_param_bytes == 0 {
        return 1.0;
    }
    (param_buffer_bytes as f64 / layer_param_bytes as f64).min(1.0)
}

/// Byte-weighted mean of [`buffer_effectiveness`] over several layers.
pub fn model_buffer_effectiveness(layer_param_bytes: &[u64], param_buffer_bytes: u64) -> f64 {
    let total: u64 = layer_param_bytes.iter().sum();
    if total == 0 {
        return 1.0;
    }
    let cached: u64 = layer_param_bytes.iter().map(|&b| b.min(param_buffer_bytes)).sum();
    cached as f64 / total as f64
}
