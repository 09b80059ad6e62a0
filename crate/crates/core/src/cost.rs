//! Analytical cost model for one layer on one accelerator.
//!
//! Every estimate is a roofline: compute time is MACs over the lanes the
//! dataflow can keep busy, memory time is DRAM bytes over the accelerator's
//! bandwidth, and the two overlap fully unless configured otherwise.

use serde::Serialize;

use crate::hardware::{AcceleratorConfig, DataflowKind};
use crate::ir::{LayerDescriptor, LayerOp, Mvm};
use crate::metrics::LayerMetrics;

/// Accumulator width used for partial sums exchanged over the NoC.
pub const PARTIAL_SUM_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostOptions {
    /// Overlap compute with memory (`max`); `false` adds the two.
    pub overlap: bool,
    /// Run recurrent gate products on the baseline as barrier-separated FC
    /// layers: the DRAM fetch, the load of weights into the array, and the
    /// array pass of one product cannot overlap each other.
    pub gate_serialization: bool,
    /// Treat parameters that fit the parameter buffer as already resident
    /// (warm repeated inference) instead of fetching them once.
    pub steady_state: bool,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            overlap: true,
            gate_serialization: true,
            steady_state: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bottleneck {
    Compute,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub macs: u64,
    /// MAC lanes the dataflow keeps busy.
    pub parallelism: u64,
    pub compute_cycles: u64,
    pub compute_time_s: f64,
    pub memory_time_s: f64,
    /// Time to shift weights into the array; only non-zero for serialized
    /// gate products.
    pub array_load_time_s: f64,
    pub dram_param_bytes: u64,
    pub dram_act_bytes: u64,
    pub param_buf_accesses: u64,
    pub act_buf_accesses: u64,
    pub noc_bytes: u64,
    pub latency_s: f64,
    pub utilization: f64,
    pub bottleneck: Bottleneck,
}

impl CostEstimate {
    pub fn dram_bytes(&self) -> u64 {
        self.dram_param_bytes + self.dram_act_bytes
    }
}

fn holds_weights_across_steps(dataflow: DataflowKind) -> bool {
    matches!(dataflow, DataflowKind::PavlovFlow | DataflowKind::JacquardFlow)
}

/// How many times a layer's parameters cross the DRAM interface per
/// inference. For recurrent gates this is a whole-layer figure: dataflows
/// that keep weights in PE registers fetch once, the rest refetch for every
/// timestep and cell.
pub fn param_fetch_multiplier(layer: &LayerDescriptor, accel: &AcceleratorConfig) -> u64 {
    match &layer.op {
        LayerOp::LstmGate { shape, .. } if !holds_weights_across_steps(accel.dataflow) => shape.timesteps * shape.cells,
        // Convolutions stream their weights once even when they overflow the
        // parameter buffer.
        _ => 1,
    }
}

/// Output elements produced by one descriptor.
fn outputs(layer: &LayerDescriptor) -> u64 {
    match &layer.op {
        LayerOp::StandardConv(s) | LayerOp::PointwiseConv(s) | LayerOp::FullyConnected(s) => s.out_pixels() * s.out_ch,
        LayerOp::DepthwiseConv(s) => s.out_pixels() * s.in_ch,
        LayerOp::LstmGate { shape, .. } => shape.hidden_dim * shape.cells,
        LayerOp::LstmCellCombine { shape, .. } => 2 * shape.hidden_dim * shape.cells,
    }
}

/// Length of the dot product behind each output (the spatially reducible
/// dimension).
fn reduction_len(layer: &LayerDescriptor) -> u64 {
    match &layer.op {
        LayerOp::StandardConv(s) | LayerOp::PointwiseConv(s) | LayerOp::FullyConnected(s) => s.in_ch,
        LayerOp::DepthwiseConv(s) => s.kernel_h * s.kernel_w,
        LayerOp::LstmGate { shape, mvm, .. } => match mvm {
            Mvm::Input => shape.input_dim,
            Mvm::Hidden => shape.hidden_dim,
        },
        LayerOp::LstmCellCombine { .. } => 1,
    }
}

/// How many MACs share one parameter fetch from the buffer.
fn param_spatial_reuse(layer: &LayerDescriptor) -> u64 {
    match &layer.op {
        LayerOp::StandardConv(s) | LayerOp::DepthwiseConv(s) | LayerOp::PointwiseConv(s) => s.out_pixels(),
        LayerOp::FullyConnected(_) | LayerOp::LstmCellCombine { .. } => 1,
        LayerOp::LstmGate { shape, .. } => shape.cells,
    }
}

/// How many output channels consume each input activation.
fn input_fanout(layer: &LayerDescriptor) -> u64 {
    match &layer.op {
        LayerOp::StandardConv(s) | LayerOp::PointwiseConv(s) | LayerOp::FullyConnected(s) => s.out_ch,
        LayerOp::DepthwiseConv(_) | LayerOp::LstmCellCombine { .. } => 1,
        LayerOp::LstmGate { shape, .. } => shape.hidden_dim,
    }
}

/// Concurrently usable MAC lanes under the accelerator's dataflow.
pub fn effective_parallelism(layer: &LayerDescriptor, accel: &AcceleratorConfig) -> u64 {
    let pes = accel.pes();
    let lanes = match (&layer.op, accel.dataflow) {
        (LayerOp::LstmGate { shape, .. }, DataflowKind::PavlovFlow) => pes.min(4 * shape.hidden_dim),
        (LayerOp::LstmGate { shape, .. }, DataflowKind::BaselineMonolithic | DataflowKind::PascalFlow) => {
            pes.min(shape.hidden_dim)
        }
        (LayerOp::LstmCellCombine { .. }, _) => pes.min(outputs(layer)),
        (_, DataflowKind::JacquardFlow) => {
            let per_output = pes.min(reduction_len(layer)).max(1);
            per_output * outputs(layer).min(pes / per_output)
        }
        _ => pes.min(outputs(layer)),
    };
    lanes.max(1)
}

/// DRAM parameter bytes for one descriptor.
fn dram_param_bytes(layer: &LayerDescriptor, m: &LayerMetrics, accel: &AcceleratorConfig, opts: &CostOptions) -> u64 {
    match &layer.op {
        LayerOp::LstmGate { shape, step, .. } => {
            if holds_weights_across_steps(accel.dataflow) {
                // Fetched once for the layer, at its first timestep.
                if step.timestep == 1 {
                    m.param_bytes
                } else {
                    0
                }
            } else {
                m.param_bytes * shape.cells
            }
        }
        _ if opts.steady_state && m.param_bytes <= accel.param_buffer_bytes() => 0,
        _ => m.param_bytes,
    }
}

/// DRAM activation bytes: activations spill only when input and output do
/// not fit the activation buffer together. Output-stationary reduction keeps
/// outputs out of DRAM.
fn dram_act_bytes(m: &LayerMetrics, accel: &AcceleratorConfig) -> u64 {
    if m.input_act_bytes + m.output_act_bytes <= accel.act_buffer_bytes() {
        return 0;
    }
    match accel.dataflow {
        DataflowKind::PascalFlow => m.input_act_bytes,
        _ => m.input_act_bytes + m.output_act_bytes,
    }
}

fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b.max(1))
}

pub fn estimate(layer: &LayerDescriptor, m: &LayerMetrics, accel: &AcceleratorConfig) -> CostEstimate {
    estimate_with(layer, m, accel, &CostOptions::default())
}

pub fn estimate_with(
    layer: &LayerDescriptor,
    m: &LayerMetrics,
    accel: &AcceleratorConfig,
    opts: &CostOptions,
) -> CostEstimate {
    let b = layer.bytes_per_element();
    let lanes = effective_parallelism(layer, accel);
    let lane_rate = accel.lane_macs_per_s();

    let compute_cycles = div_ceil(m.macs, lanes);
    let compute_time_s = compute_cycles as f64 / lane_rate;

    let dram_param = dram_param_bytes(layer, m, accel, opts);
    let dram_act = dram_act_bytes(m, accel);
    let memory_time_s = (dram_param + dram_act) as f64 / accel.bandwidth();

    let noc_bytes = match accel.dataflow {
        DataflowKind::JacquardFlow => reduction_len(layer).saturating_sub(1) * PARTIAL_SUM_BYTES * outputs(layer),
        _ => 0,
    };

    let param_buf_accesses = if accel.param_buffer_bytes() == 0 {
        0
    } else {
        let reads = match accel.dataflow {
            // Each weight is read once and then reused from a PE register.
            DataflowKind::JacquardFlow => m.param_bytes,
            _ => div_ceil(m.macs * b, lanes.min(param_spatial_reuse(layer))),
        };
        dram_param + reads
    };
    let act_buf_accesses = if m.macs == 0 {
        m.input_act_bytes + m.output_act_bytes
    } else {
        let multicast = match accel.dataflow {
            // A fixed array broadcasts each input along one row only.
            DataflowKind::BaselineMonolithic => accel.pe_cols().min(input_fanout(layer)),
            _ => lanes.min(input_fanout(layer)),
        };
        dram_act + div_ceil(m.macs * b, multicast) + m.output_act_bytes
    };

    let serialized = opts.gate_serialization
        && accel.dataflow == DataflowKind::BaselineMonolithic
        && matches!(layer.op, LayerOp::LstmGate { .. });
    let array_load_time_s = if serialized {
        // Weights enter the array one row of `pe_cols` bytes per cycle.
        div_ceil(dram_param, accel.pe_cols()) as f64 / lane_rate
    } else {
        0.0
    };

    let (latency_s, data_time_s) = if serialized {
        (
            memory_time_s + compute_time_s.max(array_load_time_s),
            memory_time_s + array_load_time_s,
        )
    } else if opts.overlap {
        (compute_time_s.max(memory_time_s), memory_time_s)
    } else {
        (compute_time_s + memory_time_s, memory_time_s)
    };

    let utilization = if latency_s > 0.0 {
        (m.macs as f64 / (accel.peak_macs_per_s() * latency_s)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let bottleneck = if compute_time_s >= data_time_s {
        Bottleneck::Compute
    } else {
        Bottleneck::Memory
    };

    CostEstimate {
        macs: m.macs,
        parallelism: lanes,
        compute_cycles,
        compute_time_s,
        memory_time_s,
        array_load_time_s,
        dram_param_bytes: dram_param,
        dram_act_bytes: dram_act,
        param_buf_accesses,
        act_buf_accesses,
        noc_bytes,
        latency_s,
        utilization,
        bottleneck,
    }
}

/// Latency with unlimited bandwidth and no cycle rounding. Used to compare
/// the compute resources two accelerators bring to a layer.
pub fn compute_bound_latency(layer: &LayerDescriptor, m: &LayerMetrics, accel: &AcceleratorConfig) -> f64 {
    m.macs as f64 / (effective_parallelism(layer, accel) as f64 * accel.lane_macs_per_s())
}

/// Throughput roofline in MAC/s at `intensity` MAC/byte.
pub fn roofline_attainable(intensity: f64, accel: &AcceleratorConfig) -> f64 {
    accel.peak_macs_per_s().min(accel.bandwidth() * intensity)
}

/// `n` log-spaced `(intensity, attainable)` points over `[lo, hi]`.
pub fn roofline_series(accel: &AcceleratorConfig, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let x = 10f64.powf(a + t * (b - a));
            (x, roofline_attainable(x, accel))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::{canonical_suite, BASELINE, JACQUARD, PASCAL, PAVLOV};
    use crate::ir::{ConvShape, Gate, LstmStep, RecurrentShape};
    use crate::metrics::layer_metrics;
    use proptest::prelude::*;

    fn accel(name: &str) -> AcceleratorConfig {
        canonical_suite().get(name).unwrap().clone()
    }

    fn gate(h: u64, t: u64, c: u64, step: u64) -> LayerDescriptor {
        LayerDescriptor::new(
            "g",
            LayerOp::LstmGate {
                shape: RecurrentShape::new(h, h, t, c),
                gate: Gate::Input,
                mvm: Mvm::Hidden,
                step: LstmStep {
                    layer: "l".into(),
                    timestep: step,
                },
            },
        )
    }

    fn pointwise() -> LayerDescriptor {
        LayerDescriptor::new(
            "pw",
            LayerOp::PointwiseConv(ConvShape::new((35, 35), 128, 128, (1, 1), 1)),
        )
    }

    #[test]
    fn fetch_multiplier() {
        let g = gate(1024, 10, 1, 1);
        assert_eq!(param_fetch_multiplier(&g, &accel(BASELINE)), 10);
        assert_eq!(param_fetch_multiplier(&g, &accel(PAVLOV)), 1);
        assert_eq!(param_fetch_multiplier(&g, &accel(JACQUARD)), 1);
        assert_eq!(param_fetch_multiplier(&gate(1024, 1, 1, 1), &accel(BASELINE)), 1);
        for a in canonical_suite().accelerators {
            assert_eq!(param_fetch_multiplier(&pointwise(), &a), 1);
        }
    }

    #[test]
    fn parallelism_examples() {
        assert_eq!(effective_parallelism(&gate(1024, 1, 1, 1), &accel(BASELINE)), 1024);
        assert_eq!(effective_parallelism(&pointwise(), &accel(PASCAL)), 1024);
        let tiny = LayerDescriptor::new("fc", LayerOp::FullyConnected(ConvShape::dense(1, 4)));
        assert_eq!(effective_parallelism(&tiny, &accel(BASELINE)), 4);
        assert_eq!(effective_parallelism(&gate(1024, 1, 1, 1), &accel(PAVLOV)), 64);
    }

    #[test]
    fn gate_on_baseline_is_memory_bound() {
        let g = gate(1024, 1, 1, 1);
        let m = layer_metrics(&g);
        let opts = CostOptions {
            gate_serialization: false,
            ..Default::default()
        };
        let e = estimate_with(&g, &m, &accel(BASELINE), &opts);
        assert_eq!(e.bottleneck, Bottleneck::Memory);
        assert!(e.utilization <= 32.0 / 1024.0 + 1e-15);
        assert!((e.utilization - 0.03125).abs() < 1e-12);

        let serialized = estimate(&g, &m, &accel(BASELINE));
        assert_eq!(serialized.bottleneck, Bottleneck::Memory);
        assert!(serialized.utilization < e.utilization);
    }

    #[test]
    fn pointwise_on_pascal_is_compute_bound() {
        let l = pointwise();
        let m = layer_metrics(&l);
        let a = accel(PASCAL);
        assert!(m.param_reuse > a.ridge_point());
        let e = estimate(&l, &m, &a);
        assert_eq!(e.bottleneck, Bottleneck::Compute);
        // 35*35*128 outputs = 153.125 full waves of 1024 lanes.
        assert!(e.utilization > 0.99);

        let even = LayerDescriptor::new(
            "pw",
            LayerOp::PointwiseConv(ConvShape::new((32, 32), 128, 128, (1, 1), 1)),
        );
        let e = estimate(&even, &layer_metrics(&even), &a);
        assert_eq!(e.utilization, 1.0);
    }

    #[test]
    fn combine_latency_comes_from_activations() {
        let small = LayerDescriptor::new(
            "c",
            LayerOp::LstmCellCombine {
                shape: RecurrentShape::new(64, 64, 1, 1),
                step: LstmStep {
                    layer: "l".into(),
                    timestep: 1,
                },
            },
        );
        let e = estimate(&small, &layer_metrics(&small), &accel(PAVLOV));
        assert_eq!((e.compute_cycles, e.latency_s), (0, 0.0));

        let big = LayerDescriptor::new(
            "c",
            LayerOp::LstmCellCombine {
                shape: RecurrentShape::new(8192, 8192, 1, 4),
                step: LstmStep {
                    layer: "l".into(),
                    timestep: 1,
                },
            },
        );
        let m = layer_metrics(&big);
        let a = accel(PAVLOV);
        let e = estimate(&big, &m, &a);
        assert_eq!(e.compute_cycles, 0);
        assert_eq!(
            e.latency_s,
            (m.input_act_bytes + m.output_act_bytes) as f64 / a.bandwidth()
        );
    }

    #[test]
    fn roofline_examples() {
        let base = accel(BASELINE);
        assert_eq!(roofline_attainable(1.0, &base), 32e9);
        assert_eq!(roofline_attainable(1e12, &base), base.peak_macs_per_s());
        assert_eq!(base.ridge_point(), 32.0);
        assert_eq!(base.ridge_point() * crate::metrics::FLOPS_PER_MAC, 64.0);
    }

    #[test]
    fn pascal_has_no_reduction_traffic_and_jacquard_does() {
        let l = LayerDescriptor::new("pw", LayerOp::PointwiseConv(ConvShape::new((4, 4), 64, 32, (1, 1), 1)));
        let m = layer_metrics(&l);
        assert_eq!(estimate(&l, &m, &accel(PASCAL)).noc_bytes, 0);
        let e = estimate(&l, &m, &accel(JACQUARD));
        assert_eq!(e.noc_bytes, 63 * PARTIAL_SUM_BYTES * 16 * 32);
    }

    fn any_layer() -> impl Strategy<Value = LayerDescriptor> {
        prop_oneof![
            (1u64..30, 1u64..200, 1u64..200, 1u64..4).prop_map(|(hw, ci, co, k)| LayerDescriptor::new(
                "c",
                LayerOp::StandardConv(ConvShape::new((hw + k, hw + k), ci, co, (k, k), 1))
            )),
            (1u64..30, 1u64..300).prop_map(|(hw, ch)| LayerDescriptor::new(
                "d",
                LayerOp::DepthwiseConv(ConvShape::new((hw + 2, hw + 2), ch, ch, (3, 3), 1))
            )),
            (1u64..3000, 1u64..3000)
                .prop_map(|(i, o)| LayerDescriptor::new("f", LayerOp::FullyConnected(ConvShape::dense(i, o)))),
            (1u64..2048, 1u64..16, 1u64..4).prop_flat_map(|(h, t, c)| (1..=t).prop_map(move |s| gate(h, t, c, s))),
        ]
    }

    proptest! {
        #[test]
        fn estimate_invariants(layer in any_layer(), which in 0usize..5, overlap in any::<bool>(), ser in any::<bool>()) {
            let a = canonical_suite().accelerators[which].clone();
            let m = layer_metrics(&layer);
            let opts = CostOptions { overlap, gate_serialization: ser, steady_state: false };
            let e = estimate_with(&layer, &m, &a, &opts);
            prop_assert!((0.0..=1.0).contains(&e.utilization));
            prop_assert!(e.latency_s >= m.macs as f64 / a.peak_macs_per_s() * (1.0 - 1e-12));
            prop_assert!(e.latency_s >= e.dram_bytes() as f64 / a.bandwidth() * (1.0 - 1e-12));
            if m.macs > 0 {
                let product = e.utilization * a.peak_macs_per_s() * e.latency_s;
                prop_assert!((product - m.macs as f64).abs() <= 1e-6 * m.macs as f64);
            }
            prop_assert!(e.parallelism >= 1 && e.parallelism <= a.pes());
        }

        #[test]
        fn roofline_monotone(x in 1e-3f64..1e5, dx in 0.0f64..1e3, which in 0usize..5) {
            let a = canonical_suite().accelerators[which].clone();
            prop_assert!(roofline_attainable(x + dx, &a) >= roofline_attainable(x, &a));
            let mut faster = a.clone();
            faster.bw_gbps *= 2.0;
            prop_assert!(roofline_attainable(x, &faster) >= roofline_attainable(x, &a));
            if x >= a.ridge_point() {
                prop_assert_eq!(roofline_attainable(x, &a), a.peak_macs_per_s());
            }
        }

        #[test]
        fn pavlov_traffic_ratio(h in 1u64..1024, t in 1u64..32, c in 1u64..6) {
            let (base, pavlov) = (accel(BASELINE), accel(PAVLOV));
            let (mut tb, mut tp) = (0u64, 0u64);
            for step in 1..=t {
                let g = gate(h, t, c, step);
                let m = layer_metrics(&g);
                tb += estimate(&g, &m, &base).dram_param_bytes;
                tp += estimate(&g, &m, &pavlov).dram_param_bytes;
            }
            prop_assert_eq!(tb, tp * t * c);
        }
    }
}
