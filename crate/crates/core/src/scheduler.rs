//! Two-phase, communication-aware layer-to-accelerator mapping.
//!
//! Phase I picks each layer's ideal accelerator from its family. Phase II
//! walks the layers in execution order and only leaves the previous layer's
//! accelerator when the move pays for the DRAM round trip it causes.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cost::{compute_bound_latency, estimate_with, CostOptions};
use crate::error::{Error, Result};
use crate::families::{resolve_family, Family};
use crate::hardware::{HardwareSuite, JACQUARD, PASCAL, PAVLOV};
use crate::ir::ModelGraph;
use crate::metrics::{is_parameterized, layer_metrics, LayerMetrics, FLOPS_PER_MAC};

/// Compute-bound latency ratio beyond which a layer moves to its ideal
/// accelerator.
pub const COMPUTE_RATIO_THRESHOLD: f64 = 2.0;

/// Parameter reuse (MAC/byte) below which a layer counts as memory-hungry.
pub const LOW_REUSE_MAC_PER_BYTE: f64 = 32.0;

/// [`LOW_REUSE_MAC_PER_BYTE`] in FLOP/byte.
pub const LOW_REUSE_FLOP_PER_BYTE: f64 = LOW_REUSE_MAC_PER_BYTE * FLOPS_PER_MAC;

/// Family to accelerator name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyRouting(pub BTreeMap<Family, String>);

impl FamilyRouting {
    /// F1, F2 on Pascal; F3 on Pavlov; F4, F5 on Jacquard.
    pub fn canonical() -> Self {
        FamilyRouting(
            [
                (Family::F1, PASCAL),
                (Family::F2, PASCAL),
                (Family::F3, PAVLOV),
                (Family::F4, JACQUARD),
                (Family::F5, JACQUARD),
            ]
            .into_iter()
            .map(|(f, a)| (f, a.to_string()))
            .collect(),
        )
    }

    /// Every family on the same accelerator.
    pub fn uniform(accelerator: &str) -> Self {
        FamilyRouting(
            Family::CLASSIFIED
                .into_iter()
                .map(|f| (f, accelerator.to_string()))
                .collect(),
        )
    }

    pub fn get(&self, family: Family) -> Result<&str> {
        self.0
            .get(&family)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("routing has no accelerator for family {family}")))
    }

    /// Checks totality over F1..F5 and that every target exists in `suite`.
    pub fn validate(&self, suite: &HardwareSuite) -> Result<()> {
        for f in Family::CLASSIFIED {
            suite.require(self.get(f)?)?;
        }
        Ok(())
    }
}

/// How a layer's ideal accelerator was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdealBasis {
    /// The layer fell inside a family's ranges.
    Family,
    /// Nearest family in log space.
    Nearest,
    /// No parameters; follows its first predecessor.
    Inherited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealAssignment {
    pub layer: String,
    pub family: Family,
    pub basis: IdealBasis,
    pub accelerator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReasonTag {
    /// Ideal accelerator equals the previous destination (or first layer).
    IdealSame,
    MovedCondA,
    MovedCondB,
    StayedWithPrev,
}

impl ReasonTag {
    pub fn name(self) -> &'static str {
        match self {
            ReasonTag::IdealSame => "IdealSame",
            ReasonTag::MovedCondA => "MovedCondA",
            ReasonTag::MovedCondB => "MovedCondB",
            ReasonTag::StayedWithPrev => "StayedWithPrev",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub layer: String,
    pub family: Family,
    pub basis: IdealBasis,
    pub ideal: String,
    pub destination: String,
    pub reason: ReasonTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommCause {
    /// Producer and consumer run on different accelerators.
    CrossAccelerator,
    /// Same accelerator, but the producer's output was evicted before use.
    Evicted,
}

/// Activations handed from producer to consumer through DRAM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommEvent {
    pub producer: String,
    pub consumer: String,
    pub source: String,
    pub destination: String,
    pub bytes: u64,
    pub via_dram: bool,
    pub cause: CommCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub model: String,
    /// In execution order.
    pub assignments: Vec<Assignment>,
    pub communications: Vec<CommEvent>,
}

impl SchedulePlan {
    pub fn destination(&self, layer: &str) -> Option<&str> {
        self.assignments
            .iter()
            .find(|a| a.layer == layer)
            .map(|a| a.destination.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Ideal accelerator per layer, in execution order.
pub fn phase1(model: &ModelGraph, metrics: &[LayerMetrics], routing: &FamilyRouting) -> Result<Vec<IdealAssignment>> {
    for f in Family::CLASSIFIED {
        routing.get(f)?;
    }
    let mut ideal: Vec<IdealAssignment> = Vec::with_capacity(model.len());
    for (layer, m) in model.layers().iter().zip(metrics) {
        let inherited = if is_parameterized(layer.kind()) {
            None
        } else {
            layer
                .predecessors
                .first()
                .and_then(|p| model.position(p))
                .map(|pos| &ideal[pos])
        };
        let entry = match inherited {
            Some(prev) => IdealAssignment {
                layer: layer.id.clone(),
                family: prev.family,
                basis: IdealBasis::Inherited,
                accelerator: prev.accelerator.clone(),
            },
            None => {
                let (family, fallback) = resolve_family(m, layer.kind());
                IdealAssignment {
                    layer: layer.id.clone(),
                    family,
                    basis: if fallback {
                        IdealBasis::Nearest
                    } else {
                        IdealBasis::Family
                    },
                    accelerator: routing.get(family)?.to_string(),
                }
            }
        };
        ideal.push(entry);
    }
    Ok(ideal)
}

/// Activation buffer contents of one accelerator, oldest first.
#[derive(Default)]
struct ActBuffer {
    resident: VecDeque<(usize, u64)>,
    used: u64,
}

impl ActBuffer {
    fn holds(&self, layer: usize) -> bool {
        self.resident.iter().any(|&(l, _)| l == layer)
    }

    fn push(&mut self, layer: usize, bytes: u64, capacity: u64) {
        if bytes > capacity {
            self.resident.clear();
            self.used = 0;
            return;
        }
        self.resident.push_back((layer, bytes));
        self.used += bytes;
        while self.used > capacity {
            let (_, b) = self.resident.pop_front().expect("non-empty while over capacity");
            self.used -= b;
        }
    }
}

/// Final destinations and communication events.
pub fn phase2(
    model: &ModelGraph,
    metrics: &[LayerMetrics],
    ideal: &[IdealAssignment],
    suite: &HardwareSuite,
    opts: &CostOptions,
) -> Result<SchedulePlan> {
    let layers = model.layers();
    let mut assignments: Vec<Assignment> = Vec::with_capacity(layers.len());
    for (i, (layer, m)) in layers.iter().zip(metrics).enumerate() {
        let target = suite.require(&ideal[i].accelerator)?;
        let (destination, reason) = match assignments.last() {
            None => (target.name.clone(), ReasonTag::IdealSame),
            Some(prev) if prev.destination == target.name => (target.name.clone(), ReasonTag::IdealSame),
            Some(prev) => {
                let here = suite.require(&prev.destination)?;
                let cond_a = compute_bound_latency(layer, m, here)
                    >= COMPUTE_RATIO_THRESHOLD * compute_bound_latency(layer, m, target);
                let cond_b = estimate_with(layer, m, here, opts).dram_param_bytes > metrics[i - 1].output_act_bytes
                    && m.param_reuse < LOW_REUSE_MAC_PER_BYTE;
                if cond_a {
                    (target.name.clone(), ReasonTag::MovedCondA)
                } else if cond_b {
                    (target.name.clone(), ReasonTag::MovedCondB)
                } else {
                    (prev.destination.clone(), ReasonTag::StayedWithPrev)
                }
            }
        };
        assignments.push(Assignment {
            layer: layer.id.clone(),
            family: ideal[i].family,
            basis: ideal[i].basis,
            ideal: target.name.clone(),
            destination,
            reason,
        });
    }

    let mut buffers: BTreeMap<&str, ActBuffer> = BTreeMap::new();
    let mut communications = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let dest = assignments[i].destination.as_str();
        for p in &layer.predecessors {
            let pos = model.position(p).expect("validated graph");
            let source = assignments[pos].destination.as_str();
            let cause = if source != dest {
                Some(CommCause::CrossAccelerator)
            } else if pos + 1 != i && !buffers.get(dest).is_some_and(|b| b.holds(pos)) {
                Some(CommCause::Evicted)
            } else {
                None
            };
            if let Some(cause) = cause {
                communications.push(CommEvent {
                    producer: p.clone(),
                    consumer: layer.id.clone(),
                    source: source.to_string(),
                    destination: dest.to_string(),
                    bytes: metrics[pos].output_act_bytes,
                    via_dram: true,
                    cause,
                });
            }
        }
        let capacity = suite.require(dest)?.act_buffer_bytes();
        buffers
            .entry(dest)
            .or_default()
            .push(i, metrics[i].output_act_bytes, capacity);
    }

    Ok(SchedulePlan {
        model: model.name.clone(),
        assignments,
        communications,
    })
}

pub fn schedule(model: &ModelGraph, suite: &HardwareSuite, routing: &FamilyRouting) -> Result<SchedulePlan> {
    schedule_with(model, suite, routing, &CostOptions::default())
}

pub fn schedule_with(
    model: &ModelGraph,
    suite: &HardwareSuite,
    routing: &FamilyRouting,
    opts: &CostOptions,
) -> Result<SchedulePlan> {
    let metrics: Vec<LayerMetrics> = model.layers().iter().map(layer_metrics).collect();
    let ideal = phase1(model, &metrics, routing)?;
    phase2(model, &metrics, &ideal, suite, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::{canonical_suite, BASELINE};
    use crate::ir::{ConvShape, LayerDescriptor, LayerKind, LayerOp, ModelClass};

    fn conv(id: &str, hw: u64, ci: u64, co: u64, k: u64) -> LayerDescriptor {
        LayerDescriptor::new(id, LayerOp::StandardConv(ConvShape::new((hw, hw), ci, co, (k, k), 1)))
    }

    #[test]
    fn routing_must_be_total() {
        let mut r = FamilyRouting::canonical();
        r.0.remove(&Family::F4);
        let g = ModelGraph::new("m", ModelClass::Cnn, vec![conv("a", 114, 24, 32, 3)]).unwrap();
        assert!(matches!(schedule(&g, &canonical_suite(), &r), Err(Error::Config(_))));
    }

    #[test]
    fn routing_targets_must_exist() {
        let r = FamilyRouting::uniform("Nowhere");
        assert!(matches!(r.validate(&canonical_suite()), Err(Error::Config(_))));
    }

    #[test]
    fn threshold_matches_ridge() {
        let suite = canonical_suite();
        assert_eq!(suite.get(BASELINE).unwrap().ridge_point(), LOW_REUSE_MAC_PER_BYTE);
        assert_eq!(LOW_REUSE_FLOP_PER_BYTE, 64.0);
    }

    #[test]
    fn depthwise_after_f1_moves_only_when_worth_it() {
        // 3x3 depthwise on 256 channels sits in F5 (Jacquard). Pascal offers
        // 4x the peak rate, so coming from Pascal the layer stays.
        let dw = LayerDescriptor::new(
            "dw",
            LayerOp::DepthwiseConv(ConvShape::new((16, 16), 256, 256, (3, 3), 1)),
        )
        .with_predecessors(["c"]);
        let g = ModelGraph::new("m", ModelClass::Cnn, vec![conv("c", 114, 24, 32, 3), dw]).unwrap();
        let plan = schedule(&g, &canonical_suite(), &FamilyRouting::canonical()).unwrap();
        assert_eq!(plan.assignments[0].destination, PASCAL);
        assert_eq!(plan.assignments[1].ideal, JACQUARD);
        assert_eq!(g.layers()[1].kind(), LayerKind::DepthwiseConv);
        assert_eq!(plan.assignments[1].reason, ReasonTag::StayedWithPrev);
        assert!(plan.communications.is_empty());
    }

    #[test]
    fn fifo_evicts_oldest() {
        let mut b = ActBuffer::default();
        b.push(0, 60, 100);
        b.push(1, 30, 100);
        assert!(b.holds(0) && b.holds(1));
        b.push(2, 20, 100);
        assert!(!b.holds(0) && b.holds(1) && b.holds(2));
        b.push(3, 200, 100);
        assert!(!b.holds(1) && !b.holds(3));
    }

    #[test]
    fn evicted_skip_source_costs_a_transfer() {
        // Three layers on one accelerator; the skip edge a -> c survives only
        // if a's output is still buffered when c runs.
        let a = conv("a", 114, 24, 32, 3);
        let b = conv("b", 112, 32, 32, 1).with_predecessors(["a"]);
        let c = conv("c", 112, 32, 32, 1).with_predecessors(["b", "a"]);
        let g = ModelGraph::new("m", ModelClass::Cnn, vec![a, b, c]).unwrap();
        let mut suite = canonical_suite();
        let routing = FamilyRouting::uniform(BASELINE);
        // 112*112*32 B = 392 KiB per output, two fit in 2 MiB.
        let plan = schedule(&g, &suite, &routing).unwrap();
        assert!(plan.communications.is_empty());
        suite.accelerators.iter_mut().for_each(|a| a.act_buf_kb = 500.0);
        let plan = schedule(&g, &suite, &routing).unwrap();
        assert_eq!(plan.communications.len(), 1);
        let e = &plan.communications[0];
        assert_eq!((e.producer.as_str(), e.consumer.as_str()), ("a", "c"));
        assert_eq!(e.cause, CommCause::Evicted);
        assert_eq!(e.bytes, 112 * 112 * 32);
    }
}
