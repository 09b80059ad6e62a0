//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use accelsim_core::hardware::{AcceleratorConfig, DataflowKind};
use accelsim_core::ir::{
    from_document, ConvShape, Gate, LayerDescriptor, LayerEntry, LayerKind, LayerOp, LstmStep, ModelClass,
    ModelDocument, ModelGraph, Mvm, RecurrentShape,
};
use rand::seq::SliceRandom;
use rand::Rng;

/// Throughput roofline straight from the document units.
pub fn roofline_oracle(accel: &AcceleratorConfig, intensity: f64) -> f64 {
    (accel.peak_gmacs * 1e9).min(accel.bw_gbps * 1e9 * intensity)
}

/// Parameter bytes from the shape alone.
pub fn param_bytes_oracle(layer: &LayerDescriptor) -> u64 {
    let b = (layer.bits / 8) as u64;
    b * match &layer.op {
        LayerOp::StandardConv(s) | LayerOp::PointwiseConv(s) => s.kernel_h * s.kernel_w * s.in_ch * s.out_ch,
        LayerOp::DepthwiseConv(s) => s.kernel_h * s.kernel_w * s.in_ch,
        LayerOp::FullyConnected(s) => s.in_ch * s.out_ch,
        LayerOp::LstmGate { shape, mvm, .. } => {
            shape.hidden_dim
                * match mvm {
                    Mvm::Input => shape.input_dim,
                    Mvm::Hidden => shape.hidden_dim,
                }
        }
        LayerOp::LstmCellCombine { .. } => 0,
    }
}

fn macs_oracle(layer: &LayerDescriptor) -> u64 {
    match &layer.op {
        LayerOp::StandardConv(s) | LayerOp::PointwiseConv(s) => {
            s.out_h * s.out_w * s.out_ch * s.in_ch * s.kernel_h * s.kernel_w
        }
        LayerOp::DepthwiseConv(s) => s.out_h * s.out_w * s.in_ch * s.kernel_h * s.kernel_w,
        LayerOp::FullyConnected(s) => s.in_ch * s.out_ch,
        LayerOp::LstmGate { shape, mvm, .. } => {
            let operand = match mvm {
                Mvm::Input => shape.input_dim,
                Mvm::Hidden => shape.hidden_dim,
            };
            shape.hidden_dim * operand * shape.cells
        }
        LayerOp::LstmCellCombine { .. } => 0,
    }
}

fn act_bytes_oracle(layer: &LayerDescriptor) -> (u64, u64) {
    let b = (layer.bits / 8) as u64;
    let (i, o) = match &layer.op {
        LayerOp::StandardConv(s) | LayerOp::PointwiseConv(s) => {
            (s.in_h * s.in_w * s.in_ch, s.out_h * s.out_w * s.out_ch)
        }
        LayerOp::DepthwiseConv(s) => (s.in_h * s.in_w * s.in_ch, s.out_h * s.out_w * s.in_ch),
        LayerOp::FullyConnected(s) => (s.in_ch, s.out_ch),
        LayerOp::LstmGate { shape, mvm, .. } => {
            let operand = match mvm {
                Mvm::Input => shape.input_dim,
                Mvm::Hidden => shape.hidden_dim,
            };
            (operand * shape.cells, shape.hidden_dim * shape.cells)
        }
        LayerOp::LstmCellCombine { shape, .. } => {
            (9 * shape.hidden_dim * shape.cells, 2 * shape.hidden_dim * shape.cells)
        }
    };
    (i * b, o * b)
}

/// MAC lanes a dataflow keeps busy, restated from the dataflow descriptions:
/// the fixed baseline and Pascal spread a gate's hidden outputs across the
/// array, Pavlov spreads all four gates, Jacquard assigns a group of PEs to
/// each output and reduces across the group.
fn lanes_oracle(layer: &LayerDescriptor, accel: &AcceleratorConfig) -> u64 {
    let n = accel.pe[0] * accel.pe[1];
    let outputs = match &layer.op {
        LayerOp::StandardConv(s) | LayerOp::PointwiseConv(s) => s.out_h * s.out_w * s.out_ch,
        LayerOp::DepthwiseConv(s) => s.out_h * s.out_w * s.in_ch,
        LayerOp::FullyConnected(s) => s.out_ch,
        LayerOp::LstmGate { shape, .. } => shape.hidden_dim * shape.cells,
        LayerOp::LstmCellCombine { shape, .. } => 2 * shape.hidden_dim * shape.cells,
    };
    let reduction = match &layer.op {
        LayerOp::StandardConv(s) | LayerOp::PointwiseConv(s) | LayerOp::FullyConnected(s) => s.in_ch,
        LayerOp::DepthwiseConv(s) => s.kernel_h * s.kernel_w,
        LayerOp::LstmGate { shape, mvm, .. } => match mvm {
            Mvm::Input => shape.input_dim,
            Mvm::Hidden => shape.hidden_dim,
        },
        LayerOp::LstmCellCombine { .. } => 1,
    };
    let lanes = match (&layer.op, accel.dataflow) {
        (LayerOp::LstmGate { shape, .. }, DataflowKind::PavlovFlow) => n.min(4 * shape.hidden_dim),
        (LayerOp::LstmGate { shape, .. }, DataflowKind::BaselineMonolithic | DataflowKind::PascalFlow) => {
            n.min(shape.hidden_dim)
        }
        (LayerOp::LstmCellCombine { .. }, _) => n.min(outputs),
        (_, DataflowKind::JacquardFlow) => {
            let group = n.min(reduction).max(1);
            group * outputs.min(n / group)
        }
        _ => n.min(outputs),
    };
    lanes.max(1)
}

fn dram_bytes_oracle(layer: &LayerDescriptor, accel: &AcceleratorConfig) -> u64 {
    let params = param_bytes_oracle(layer);
    let keeps_weights = matches!(accel.dataflow, DataflowKind::PavlovFlow | DataflowKind::JacquardFlow);
    let param_traffic = match &layer.op {
        LayerOp::LstmGate { step, .. } if keeps_weights => {
            if step.timestep == 1 {
                params
            } else {
                0
            }
        }
        LayerOp::LstmGate { shape, .. } => params * shape.cells,
        _ => params,
    };
    let (i, o) = act_bytes_oracle(layer);
    let act_capacity = (accel.act_buf_kb * 1024.0).round() as u64;
    let act_traffic = if i + o <= act_capacity {
        0
    } else if accel.dataflow == DataflowKind::PascalFlow {
        i
    } else {
        i + o
    };
    param_traffic + act_traffic
}

/// Tick-level brute-force execution of one layer. Each tick the array retires
/// `lanes` MACs and the DRAM interface moves `bandwidth / clock` bytes.
/// Returns elapsed seconds and the tick length.
pub fn tick_simulate(layer: &LayerDescriptor, accel: &AcceleratorConfig, gate_serialization: bool) -> (f64, f64) {
    let clock = accel.peak_gmacs * 1e9 / (accel.pe[0] * accel.pe[1]) as f64;
    let tick = 1.0 / clock;
    let bytes_per_tick = accel.bw_gbps * 1e9 / clock;
    let macs = macs_oracle(layer);
    let lanes = lanes_oracle(layer, accel);
    let dram = dram_bytes_oracle(layer, accel) as f64;

    let serialized =
        gate_serialization && accel.dataflow == DataflowKind::BaselineMonolithic && layer.kind() == LayerKind::LstmGate;

    let mut ticks = 0u64;
    if serialized {
        // Fetch everything, then shift weights in a row per tick while the
        // array computes.
        let mut fetched = 0.0;
        while fetched < dram {
            fetched += bytes_per_tick;
            ticks += 1;
        }
        let (mut loaded, mut done) = (0u64, 0u64);
        let weights = dram as u64;
        while loaded < weights || done < macs {
            loaded = (loaded + accel.pe[1]).min(weights);
            done = (done + lanes).min(macs);
            ticks += 1;
        }
    } else {
        let (mut fetched, mut done) = (0.0, 0u64);
        while fetched < dram || done < macs {
            fetched += bytes_per_tick;
            done = (done + lanes).min(macs);
            ticks += 1;
        }
    }
    (ticks as f64 * tick, tick)
}

/// A random layer with at most `max_macs` MACs.
pub fn random_small_layer(rng: &mut impl Rng, max_macs: u64) -> LayerDescriptor {
    loop {
        let layer = match rng.gen_range(0..6) {
            0 => {
                let k = *[1u64, 3].choose(rng).unwrap();
                let out = rng.gen_range(1..12);
                LayerDescriptor::new(
                    "l",
                    LayerOp::StandardConv(ConvShape::new(
                        (out + k - 1, out + k - 1),
                        rng.gen_range(1..16),
                        rng.gen_range(1..64),
                        (k, k),
                        1,
                    )),
                )
            }
            1 => {
                let out = rng.gen_range(1..16);
                let c = rng.gen_range(1..128);
                LayerDescriptor::new(
                    "l",
                    LayerOp::DepthwiseConv(ConvShape::new((out + 2, out + 2), c, c, (3, 3), 1)),
                )
            }
            2 => {
                let hw = rng.gen_range(1..16);
                LayerDescriptor::new(
                    "l",
                    LayerOp::PointwiseConv(ConvShape::new(
                        (hw, hw),
                        rng.gen_range(1..64),
                        rng.gen_range(1..64),
                        (1, 1),
                        1,
                    )),
                )
            }
            3 => LayerDescriptor::new(
                "l",
                LayerOp::FullyConnected(ConvShape::dense(rng.gen_range(1..512), rng.gen_range(1..512))),
            ),
            _ => {
                let shape = RecurrentShape::new(
                    rng.gen_range(1..256),
                    rng.gen_range(1..256),
                    rng.gen_range(1..5),
                    rng.gen_range(1..4),
                );
                LayerDescriptor::new(
                    "l",
                    LayerOp::LstmGate {
                        shape,
                        gate: *Gate::ALL.choose(rng).unwrap(),
                        mvm: *Mvm::ALL.choose(rng).unwrap(),
                        step: LstmStep {
                            layer: "r".into(),
                            timestep: rng.gen_range(1..=shape.timesteps),
                        },
                    },
                )
            }
        };
        if macs_oracle(&layer) <= max_macs && macs_oracle(&layer) > 0 {
            return layer;
        }
    }
}

/// A random layer chain with optional skip edges and recurrent layers.
pub fn random_model(rng: &mut impl Rng, name: &str) -> ModelGraph {
    let n = rng.gen_range(1..12);
    let mut layers: Vec<LayerEntry> = Vec::new();
    for i in 0..n {
        let id = format!("l{i}");
        let entry = match rng.gen_range(0..6) {
            0 => {
                let out = *[5u64, 7, 14, 28, 56, 112].choose(rng).unwrap();
                LayerEntry::conv(
                    id,
                    LayerKind::StandardConv,
                    ConvShape::new(
                        (out + 2, out + 2),
                        rng.gen_range(3..400),
                        rng.gen_range(8..400),
                        (3, 3),
                        1,
                    ),
                )
            }
            1 => {
                let out = *[7u64, 14, 16, 28].choose(rng).unwrap();
                let c = rng.gen_range(16..1024);
                LayerEntry::conv(
                    id,
                    LayerKind::DepthwiseConv,
                    ConvShape::new((out + 2, out + 2), c, c, (3, 3), 1),
                )
            }
            2 => {
                let hw = *[7u64, 14, 28, 56].choose(rng).unwrap();
                LayerEntry::conv(
                    id,
                    LayerKind::PointwiseConv,
                    ConvShape::new((hw, hw), rng.gen_range(16..1024), rng.gen_range(16..1024), (1, 1), 1),
                )
            }
            3 => LayerEntry::dense(id, rng.gen_range(64..4096), rng.gen_range(64..4096)),
            4 => LayerEntry::lstm(
                id,
                RecurrentShape::new(
                    rng.gen_range(64..2048),
                    rng.gen_range(64..2048),
                    rng.gen_range(1..4),
                    rng.gen_range(1..3),
                ),
            ),
            _ => {
                let out = rng.gen_range(2..20);
                LayerEntry::conv(
                    id,
                    LayerKind::StandardConv,
                    ConvShape::new(
                        (out + 2, out + 2),
                        rng.gen_range(64..512),
                        rng.gen_range(64..512),
                        (3, 3),
                        1,
                    ),
                )
            }
        };
        let mut preds = Vec::new();
        if i > 0 {
            preds.push(format!("l{}", i - 1));
            if i > 1 && rng.gen_bool(0.3) {
                preds.push(format!("l{}", rng.gen_range(0..i - 1)));
            }
        }
        layers.push(entry.after(preds));
    }
    from_document(&ModelDocument {
        name: name.to_string(),
        class: ModelClass::Cnn,
        layers,
    })
    .expect("random model is valid")
}

pub fn lstm_model(d: u64, h: u64, t: u64, c: u64) -> ModelGraph {
    from_document(&ModelDocument {
        name: "lstm".into(),
        class: ModelClass::Lstm,
        layers: vec![LayerEntry::lstm("rnn", RecurrentShape::new(d, h, t, c))],
    })
    .expect("valid recurrent model")
}
