//! Accelerator descriptions and the bundled configurations.
//!
//! Config fields are stored in the units of the hardware document (GMAC/s,
//! GB/s, KiB) so that a suite round-trips through JSON without conversion
//! error; accessor methods return SI values for the cost model.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::energy::{DefaultEnergy, EnergyCoefficients};
use crate::error::{Error, Result};

const GIGA: f64 = 1e9;
const KIB: f64 = 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataflowKind {
    /// One fixed dataflow for every layer; recurrent gates run as
    /// back-to-back serialized FC layers.
    BaselineMonolithic,
    /// Outputs reduced in place inside each PE, parameters multicast across
    /// the array.
    PascalFlow,
    /// Weights held in PE registers across timesteps and cells, inputs
    /// multicast across the array.
    PavlovFlow,
    /// Weights held in PE registers, inputs multicast, partial sums reduced
    /// over the on-chip network.
    JacquardFlow,
}

impl fmt::Display for DataflowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    OnChip,
    /// Logic layer of a 3D-stacked memory, with in-stack bandwidth.
    NearMemory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorConfig {
    pub name: String,
    /// PE array `[rows, cols]`.
    pub pe: [u64; 2],
    /// Informational only; the cost model uses `peak_gmacs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_mhz: Option<f64>,
    pub peak_gmacs: f64,
    pub act_buf_kb: f64,
    pub param_buf_kb: f64,
    /// Private register file per PE, bytes.
    #[serde(default)]
    pub pe_reg_b: u64,
    pub dataflow: DataflowKind,
    pub bw_gbps: f64,
    pub placement: Placement,
    pub energy: EnergyCoefficients,
}

impl AcceleratorConfig {
    pub fn pe_rows(&self) -> u64 {
        self.pe[0]
    }

    pub fn pe_cols(&self) -> u64 {
        self.pe[1]
    }

    pub fn pes(&self) -> u64 {
        self.pe[0] * self.pe[1]
    }

    pub fn peak_macs_per_s(&self) -> f64 {
        self.peak_gmacs * GIGA
    }

    /// MAC rate of one PE when the array runs at peak.
    pub fn lane_macs_per_s(&self) -> f64 {
        self.peak_macs_per_s() / self.pes() as f64
    }

    pub fn bandwidth(&self) -> f64 {
        self.bw_gbps * GIGA
    }

    pub fn act_buffer_bytes(&self) -> u64 {
        (self.act_buf_kb * KIB).round() as u64
    }

    pub fn param_buffer_bytes(&self) -> u64 {
        (self.param_buf_kb * KIB).round() as u64
    }

    /// Buffer capacity charged for leakage, in KiB.
    pub fn buffer_kb(&self) -> f64 {
        self.act_buf_kb + self.param_buf_kb + (self.pe_reg_b * self.pes()) as f64 / KIB
    }

    /// Bandwidth-to-peak ratio inverted: the intensity (MAC/byte) above which
    /// the accelerator is compute bound.
    pub fn ridge_point(&self) -> f64 {
        self.peak_macs_per_s() / self.bandwidth()
    }

    fn validate(&self, at: &str, in_stack_gbps: f64) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(
                    format!("{at}.{field}"),
                    format!("must be positive, got {v}"),
                ))
            }
        };
        let non_negative = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(
                    format!("{at}.{field}"),
                    format!("must be non-negative, got {v}"),
                ))
            }
        };
        if self.name.trim().is_empty() {
            return Err(Error::invalid(format!("{at}.name"), "must not be empty"));
        }
        if self.pe[0] == 0 || self.pe[1] == 0 {
            return Err(Error::invalid(format!("{at}.pe"), "array dimensions must be positive"));
        }
        positive("peak_gmacs", self.peak_gmacs)?;
        positive("bw_gbps", self.bw_gbps)?;
        non_negative("act_buf_kb", self.act_buf_kb)?;
        non_negative("param_buf_kb", self.param_buf_kb)?;
        if let Some(clock) = self.clock_mhz {
            positive("clock_mhz", clock)?;
        }
        if self.placement == Placement::NearMemory && self.bw_gbps != in_stack_gbps {
            return Err(Error::invalid(
                format!("{at}.bw_gbps"),
                format!(
                    "near-memory accelerator must use the in-stack bandwidth {in_stack_gbps} GB/s, got {}",
                    self.bw_gbps
                ),
            ));
        }
        self.energy.validate(&format!("{at}.energy"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramConfig {
    pub capacity_gb: f64,
    /// Off-chip bandwidth seen by on-chip accelerators.
    pub ext_bw_gbps: f64,
    /// Bandwidth available inside the memory stack.
    #[serde(default = "default_in_stack_bw")]
    pub in_stack_bw_gbps: f64,
}

fn default_in_stack_bw() -> f64 {
    256.0
}

impl DramConfig {
    pub fn capacity_bytes(&self) -> u64 {
        (self.capacity_gb * KIB * KIB * KIB).round() as u64
    }

    pub fn ext_bandwidth(&self) -> f64 {
        self.ext_bw_gbps * GIGA
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSuite {
    pub accelerators: Vec<AcceleratorConfig>,
    pub dram: DramConfig,
}

impl HardwareSuite {
    pub fn get(&self, name: &str) -> Option<&AcceleratorConfig> {
        self.accelerators.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&AcceleratorConfig> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("hardware suite has no accelerator named `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.accelerators.iter().map(|a| a.name.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if self.accelerators.is_empty() {
            return Err(Error::invalid("accelerators", "suite needs at least one accelerator"));
        }
        for (field, v) in [
            ("dram.capacity_gb", self.dram.capacity_gb),
            ("dram.ext_bw_gbps", self.dram.ext_bw_gbps),
            ("dram.in_stack_bw_gbps", self.dram.in_stack_bw_gbps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(field, format!("must be positive, got {v}")));
            }
        }
        let mut names = HashSet::new();
        for (i, acc) in self.accelerators.iter().enumerate() {
            let at = format!("accelerators[{i}]");
            acc.validate(&at, self.dram.in_stack_bw_gbps)?;
            if !names.insert(acc.name.as_str()) {
                return Err(Error::invalid(
                    format!("{at}.name"),
                    format!("duplicate accelerator name `{}`", acc.name),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suites always serialize")
    }
}

/// Parses and validates a hardware document.
pub fn load_suite(document: &str) -> Result<HardwareSuite> {
    let suite: HardwareSuite = serde_json::from_str(document).map_err(|e| {
        let msg = e.to_string();
        let field = msg.split('`').nth(1).unwrap_or("document").to_string();
        Error::Parse { field, message: msg }
    })?;
    suite.validate()?;
    Ok(suite)
}

pub const BASELINE: &str = "Baseline";
pub const BASE_HB: &str = "Base+HB";
pub const PASCAL: &str = "Pascal";
pub const PAVLOV: &str = "Pavlov";
pub const JACQUARD: &str = "Jacquard";

/// The five bundled accelerators plus a 2 GiB stacked DRAM.
pub fn canonical_suite() -> HardwareSuite {
    let defaults = DefaultEnergy::bundled();
    let make = |name: &str,
                pe: u64,
                peak_gmacs: f64,
                act_kb: f64,
                param_kb: f64,
                pe_reg_b: u64,
                dataflow: DataflowKind,
                bw_gbps: f64,
                placement: Placement| AcceleratorConfig {
        name: name.to_string(),
        pe: [pe, pe],
        clock_mhz: None,
        peak_gmacs,
        act_buf_kb: act_kb,
        param_buf_kb: param_kb,
        pe_reg_b,
        dataflow,
        bw_gbps,
        placement,
        energy: defaults.coefficients(placement, act_kb * KIB, param_kb * KIB),
    };
    let baseline = make(
        BASELINE,
        64,
        1024.0,
        2048.0,
        4096.0,
        0,
        DataflowKind::BaselineMonolithic,
        32.0,
        Placement::OnChip,
    );
    let base_hb = AcceleratorConfig {
        name: BASE_HB.to_string(),
        bw_gbps: 256.0,
        ..baseline.clone()
    };
    HardwareSuite {
        accelerators: vec![
            baseline,
            base_hb,
            make(
                PASCAL,
                32,
                1024.0,
                256.0,
                128.0,
                0,
                DataflowKind::PascalFlow,
                32.0,
                Placement::OnChip,
            ),
            make(
                PAVLOV,
                8,
                64.0,
                128.0,
                0.0,
                512,
                DataflowKind::PavlovFlow,
                256.0,
                Placement::NearMemory,
            ),
            make(
                JACQUARD,
                16,
                256.0,
                128.0,
                128.0,
                0,
                DataflowKind::JacquardFlow,
                256.0,
                Placement::NearMemory,
            ),
        ],
        dram: DramConfig {
            capacity_gb: 2.0,
            ext_bw_gbps: 32.0,
            in_stack_bw_gbps: 256.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_values() {
        let s = canonical_suite();
        s.validate().unwrap();
        let pavlov = s.get(PAVLOV).unwrap();
        assert_eq!(pavlov.peak_macs_per_s(), 64e9);
        assert_eq!(pavlov.pes(), 64);
        assert_eq!(pavlov.pe_reg_b, 512);
        assert_eq!(pavlov.param_buffer_bytes(), 0);
        let base = s.get(BASELINE).unwrap();
        assert_eq!(base.param_buffer_bytes(), 4 * (1 << 20));
        assert_eq!(base.act_buffer_bytes(), 2 * (1 << 20));
        assert_eq!(base.pes(), 4096);
        assert_eq!(base.ridge_point(), 32.0);
        let pascal = s.get(PASCAL).unwrap();
        assert_eq!((pascal.pes(), pascal.peak_macs_per_s()), (1024, 1024e9));
        assert_eq!(pascal.act_buffer_bytes(), 256 * 1024);
        let jac = s.get(JACQUARD).unwrap();
        assert_eq!((jac.pes(), jac.peak_gmacs, jac.bw_gbps), (256, 256.0, 256.0));
        assert_eq!(s.dram.capacity_bytes(), 2 << 30);
    }

    #[test]
    fn base_hb_differs_only_in_bandwidth() {
        let s = canonical_suite();
        let base = s.get(BASELINE).unwrap();
        let hb = s.get(BASE_HB).unwrap();
        assert_eq!(hb.bw_gbps, 8.0 * base.bw_gbps);
        let normalized = AcceleratorConfig {
            name: base.name.clone(),
            bw_gbps: base.bw_gbps,
            ..hb.clone()
        };
        assert_eq!(&normalized, base);
    }

    #[test]
    fn canonical_round_trip() {
        let s = canonical_suite();
        assert_eq!(load_suite(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn zero_bandwidth_rejected() {
        let mut s = canonical_suite();
        s.accelerators[0].bw_gbps = 0.0;
        match load_suite(&s.to_json()) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "accelerators[0].bw_gbps"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = canonical_suite();
        s.accelerators[1].name = BASELINE.to_string();
        match load_suite(&s.to_json()) {
            Err(Error::Validation { field, message }) => {
                assert_eq!(field, "accelerators[1].name");
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_dataflow_rejected() {
        let json = canonical_suite().to_json().replacen("PascalFlow", "EyerissFlow", 1);
        assert!(matches!(load_suite(&json), Err(Error::Parse { .. })));
    }

    #[test]
    fn near_memory_needs_in_stack_bandwidth() {
        let mut s = canonical_suite();
        let i = s.accelerators.iter().position(|a| a.name == PAVLOV).unwrap();
        s.accelerators[i].bw_gbps = 32.0;
        assert!(matches!(s.validate(), Err(Error::Validation { .. })));
    }
}
