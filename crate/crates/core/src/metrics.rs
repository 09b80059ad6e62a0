//! Closed-form per-layer characteristics.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::ir::{LayerDescriptor, LayerKind, LayerOp, ModelGraph, Mvm};

/// Throughput reporting counts one MAC as two floating-point operations.
/// Parameter reuse is kept in MAC per byte; convert only when printing.
pub const FLOPS_PER_MAC: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerMetrics {
    pub macs: u64,
    pub param_bytes: u64,
    /// MACs per parameter byte per fetch.
    pub param_reuse: f64,
    pub input_act_bytes: u64,
    pub output_act_bytes: u64,
    /// MACs per input-activation byte.
    pub act_reuse: f64,
}

impl LayerMetrics {
    pub fn param_reuse_flop_per_byte(&self) -> f64 {
        self.param_reuse * FLOPS_PER_MAC
    }
}

pub fn layer_metrics(layer: &LayerDescriptor) -> LayerMetrics {
    let b = layer.bytes_per_element();
    let (macs, param_elems, in_elems, out_elems, cells) = match &layer.op {
        LayerOp::StandardConv(s) => {
            let kernel = s.in_ch * s.kernel_h * s.kernel_w;
            (
                s.out_pixels() * s.out_ch * kernel,
                s.out_ch * kernel,
                s.in_h * s.in_w * s.in_ch,
                s.out_pixels() * s.out_ch,
                1,
            )
        }
        LayerOp::DepthwiseConv(s) => {
            let kernel = s.kernel_h * s.kernel_w;
            (
                s.out_pixels() * s.in_ch * kernel,
                s.in_ch * kernel,
                s.in_h * s.in_w * s.in_ch,
                s.out_pixels() * s.in_ch,
                1,
            )
        }
        LayerOp::PointwiseConv(s) => (
            s.out_pixels() * s.out_ch * s.in_ch,
            s.out_ch * s.in_ch,
            s.in_h * s.in_w * s.in_ch,
            s.out_pixels() * s.out_ch,
            1,
        ),
        LayerOp::FullyConnected(s) => (s.in_ch * s.out_ch, s.in_ch * s.out_ch, s.in_ch, s.out_ch, 1),
        LayerOp::LstmGate { shape, mvm, .. } => {
            let operand = match mvm {
                Mvm::Input => shape.input_dim,
                Mvm::Hidden => shape.hidden_dim,
            };
            let c = shape.cells;
            (
                shape.hidden_dim * operand * c,
                shape.hidden_dim * operand,
                operand * c,
                shape.hidden_dim * c,
                c,
            )
        }
        // Eight gate partial results plus c_{t-1} in; c_t and h_t out.
        LayerOp::LstmCellCombine { shape, .. } => {
            let c = shape.cells;
            (0, 0, 9 * shape.hidden_dim * c, 2 * shape.hidden_dim * c, c)
        }
    };
    let param_bytes = param_elems * b;
    let input_act_bytes = in_elems * b;
    // A recurrent weight is shared by all C cells of a timestep but the
    // baseline refetches it for each, so reuse is counted per fetch.
    let param_reuse = if param_bytes == 0 {
        0.0
    } else {
        macs as f64 / (param_bytes * cells) as f64
    };
    let act_reuse = if input_act_bytes == 0 {
        0.0
    } else {
        macs as f64 / input_act_bytes as f64
    };
    LayerMetrics {
        macs,
        param_bytes,
        param_reuse,
        input_act_bytes,
        output_act_bytes: out_elems * b,
        act_reuse,
    }
}

/// Footprint of one recurrent layer at gate and at layer granularity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LstmFootprint {
    pub layer: String,
    /// `W_x` plus `W_h` of a single gate.
    pub gate_param_bytes: u64,
    /// All four gates.
    pub layer_param_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelMetrics {
    pub total_param_bytes: u64,
    pub total_macs: u64,
    pub layers: Vec<(String, LayerMetrics)>,
    pub lstm_footprints: Vec<LstmFootprint>,
}

impl ModelMetrics {
    pub fn get(&self, id: &str) -> Option<&LayerMetrics> {
        self.layers.iter().find(|(l, _)| l == id).map(|(_, m)| m)
    }
}

/// Aggregates over a model. Recurrent weights are shared across timesteps,
/// so each (layer, gate, product) matrix contributes its bytes once.
pub fn model_metrics(model: &ModelGraph) -> ModelMetrics {
    let mut seen = BTreeSet::new();
    let mut total_param_bytes = 0;
    let mut total_macs = 0;
    let mut layers = Vec::with_capacity(model.len());
    let mut lstm_footprints: Vec<LstmFootprint> = Vec::new();

    for layer in model.layers() {
        let m = layer_metrics(layer);
        total_macs += m.macs;
        match &layer.op {
            LayerOp::LstmGate { gate, mvm, step, .. } => {
                if seen.insert((step.layer.clone(), *gate, *mvm)) {
                    total_param_bytes += m.param_bytes;
                    let fp = match lstm_footprints.iter_mut().find(|f| f.layer == step.layer) {
                        Some(fp) => fp,
                        None => {
                            lstm_footprints.push(LstmFootprint {
                                layer: step.layer.clone(),
                                gate_param_bytes: 0,
                                layer_param_bytes: 0,
                            });
                            lstm_footprints.last_mut().unwrap()
                        }
                    };
                    fp.layer_param_bytes += m.param_bytes;
                    fp.gate_param_bytes = fp.layer_param_bytes / 4;
                }
            }
            _ => total_param_bytes += m.param_bytes,
        }
        layers.push((layer.id.clone(), m));
    }
    ModelMetrics {
        total_param_bytes,
        total_macs,
        layers,
        lstm_footprints,
    }
}

/// Layers whose parameters participate in classification and scheduling.
pub fn is_parameterized(kind: LayerKind) -> bool {
    kind != LayerKind::LstmCellCombine
}
