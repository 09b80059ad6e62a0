//! Range-based layer family classification.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::{LayerKind, ModelGraph};
use crate::metrics::{is_parameterized, layer_metrics, LayerMetrics};

const KIB: f64 = 1024.0;
const MIB: f64 = 1024.0 * 1024.0;
const MEGA: f64 = 1e6;

/// Fractional widening applied to both edges of every range before matching.
pub const BOUNDARY_SLACK: f64 = 0.10;

/// Upper parameter-reuse bound (MAC/byte) that stands for "minimal" reuse.
pub const MINIMAL_REUSE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    F1,
    F2,
    F3,
    F4,
    F5,
    Unclassified,
}

impl Family {
    pub const CLASSIFIED: [Family; 5] = [Family::F1, Family::F2, Family::F3, Family::F4, Family::F5];

    /// Matching order when several families fit.
    const PRECEDENCE: [Family; 5] = [Family::F3, Family::F4, Family::F1, Family::F2, Family::F5];

    pub fn ranges(self) -> Option<FamilyRanges> {
        let r = |fp: (f64, f64), reuse: (f64, f64), macs: (f64, f64)| FamilyRanges {
            footprint: Range::new(fp.0, fp.1),
            reuse: Range::new(reuse.0, reuse.1),
            macs: Range::new(macs.0 * MEGA, macs.1 * MEGA),
        };
        Some(match self {
            Family::F1 => r((1.0 * KIB, 100.0 * KIB), (780.0, 20_000.0), (30.0, 200.0)),
            Family::F2 => r((100.0 * KIB, 500.0 * KIB), (81.0, 400.0), (20.0, 100.0)),
            Family::F3 => FamilyRanges {
                reuse: Range::exact(0.0, MINIMAL_REUSE),
                ..r((0.9 * MIB, 18.0 * MIB), (0.0, 0.0), (0.1, 10.0))
            },
            Family::F4 => r((0.5 * MIB, 2.5 * MIB), (25.0, 64.0), (5.0, 25.0)),
            Family::F5 => r((1.0 * KIB, 100.0 * KIB), (49.0, 600.0), (0.5, 5.0)),
            Family::Unclassified => return None,
        })
    }

    pub fn is_classified(self) -> bool {
        self != Family::Unclassified
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::F1 => "F1",
            Family::F2 => "F2",
            Family::F3 => "F3",
            Family::F4 => "F4",
            Family::F5 => "F5",
            Family::Unclassified => "Unclassified",
        };
        f.write_str(s)
    }
}

/// Closed interval; `slack` says whether the edges widen before matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    slack: bool,
}

impl Range {
    fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi, slack: true }
    }

    fn exact(lo: f64, hi: f64) -> Self {
        Range { lo, hi, slack: false }
    }

    /// Matching bounds after slack.
    pub fn bounds(&self) -> (f64, f64) {
        if self.slack {
            (self.lo * (1.0 - BOUNDARY_SLACK), self.hi * (1.0 + BOUNDARY_SLACK))
        } else {
            (self.lo, self.hi)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let (lo, hi) = self.bounds();
        v >= lo && v <= hi
    }

    /// Log-space distance from `v` to the widened interval (0 inside).
    fn log_distance(&self, v: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let v = v.max(f64::MIN_POSITIVE);
        if v < lo {
            (lo / v).log10()
        } else if v > hi {
            (v / hi).log10()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyRanges {
    /// Parameter bytes.
    pub footprint: Range,
    /// MAC per parameter byte.
    pub reuse: Range,
    pub macs: Range,
}

impl FamilyRanges {
    fn matches(&self, m: &LayerMetrics) -> bool {
        self.footprint.contains(m.param_bytes as f64)
            && self.reuse.contains(m.param_reuse)
            && self.macs.contains(m.macs as f64)
    }

    fn distance(&self, m: &LayerMetrics) -> f64 {
        let d = [
            self.footprint.log_distance(m.param_bytes as f64),
            self.reuse.log_distance(m.param_reuse),
            self.macs.log_distance(m.macs as f64),
        ];
        d.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Strict range lookup with boundary slack; `Unclassified` when nothing fits.
pub fn classify(m: &LayerMetrics, kind: LayerKind) -> Family {
    if !is_parameterized(kind) {
        return Family::Unclassified;
    }
    if kind == LayerKind::LstmGate {
        // A gate's MAC count scales with its cell multiplicity while its
        // footprint does not, so gates are tied to F3 by footprint and reuse.
        let f3 = Family::F3.ranges().expect("F3 has ranges");
        if f3.footprint.contains(m.param_bytes as f64) && f3.reuse.contains(m.param_reuse) {
            return Family::F3;
        }
    }
    Family::PRECEDENCE
        .into_iter()
        .find(|f| f.ranges().is_some_and(|r| r.matches(m)))
        .unwrap_or(Family::Unclassified)
}

/// Family closest to the metrics in log space of (footprint, reuse, MACs).
/// Ties break by precedence.
pub fn nearest_family(m: &LayerMetrics) -> Family {
    let mut best = (f64::INFINITY, Family::Unclassified);
    for f in Family::PRECEDENCE {
        let d = f.ranges().expect("classified families have ranges").distance(m);
        if d < best.0 {
            best = (d, f);
        }
    }
    best.1
}

/// Classification used for routing: strict lookup, then nearest family.
/// The flag reports whether the fallback was taken.
pub fn resolve_family(m: &LayerMetrics, kind: LayerKind) -> (Family, bool) {
    match classify(m, kind) {
        Family::Unclassified => (nearest_family(m), true),
        f => (f, false),
    }
}

/// Per-family counts over parameterized layers.
pub fn family_histogram(model: &ModelGraph) -> BTreeMap<Family, usize> {
    let mut hist = BTreeMap::new();
    for layer in model.layers().iter().filter(|l| is_parameterized(l.kind())) {
        *hist.entry(classify(&layer_metrics(layer), layer.kind())).or_insert(0) += 1;
    }
    hist
}

/// Fraction of histogram entries that landed in F1..F5.
pub fn classified_fraction(hist: &BTreeMap<Family, usize>) -> f64 {
    let total: usize = hist.values().sum();
    if total == 0 {
        return 0.0;
    }
    let unclassified = hist.get(&Family::Unclassified).copied().unwrap_or(0);
    (total - unclassified) as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{from_document, LayerEntry, ModelClass, ModelDocument, RecurrentShape};
    use proptest::prelude::*;

    fn metrics(param_bytes: u64, reuse: f64, macs: u64) -> LayerMetrics {
        LayerMetrics {
            macs,
            param_bytes,
            param_reuse: reuse,
            input_act_bytes: 1,
            output_act_bytes: 1,
            act_reuse: 0.0,
        }
    }

    #[test]
    fn lstm_gate_is_f3() {
        let m = metrics(2_097_152, 1.0, 2_097_152);
        assert_eq!(classify(&m, LayerKind::LstmGate), Family::F3);
        assert_eq!(classify(&m, LayerKind::FullyConnected), Family::F3);
    }

    #[test]
    fn pointwise_example_resolves_to_f1() {
        // Footprint and reuse sit in F1 but 20.07 M MACs fall short of F1's
        // widened 27 M floor, so only the nearest-family fallback reaches F1.
        let m = metrics(16_384, 1225.0, 20_070_400);
        assert_eq!(classify(&m, LayerKind::PointwiseConv), Family::Unclassified);
        assert_eq!(resolve_family(&m, LayerKind::PointwiseConv), (Family::F1, true));
    }

    #[test]
    fn depthwise_example_needs_slack() {
        let m = metrics(2_304, 196.0, 451_584);
        let f5 = Family::F5.ranges().unwrap();
        assert!(m.macs < f5.macs.lo as u64, "strict ranges miss");
        assert_eq!(classify(&m, LayerKind::DepthwiseConv), Family::F5);
    }

    #[test]
    fn canonical_family_members() {
        // 3x3 conv, 24 -> 32 channels on a 112x112 map.
        assert_eq!(
            classify(&metrics(6_912, 12_544.0, 86_704_128), LayerKind::StandardConv),
            Family::F1
        );
        assert_eq!(
            classify(&metrics(131_072, 196.0, 25_690_112), LayerKind::PointwiseConv),
            Family::F2
        );
        assert_eq!(
            classify(&metrics(589_824, 36.0, 21_233_664), LayerKind::StandardConv),
            Family::F4
        );
    }

    #[test]
    fn combine_is_never_classified() {
        assert_eq!(
            classify(&metrics(0, 0.0, 0), LayerKind::LstmCellCombine),
            Family::Unclassified
        );
    }

    #[test]
    fn histogram_of_lstm_model_is_all_f3() {
        let doc = ModelDocument {
            name: "l".into(),
            class: ModelClass::Lstm,
            layers: vec![LayerEntry::lstm("l0", RecurrentShape::new(1024, 1024, 3, 1))],
        };
        let hist = family_histogram(&from_document(&doc).unwrap());
        assert_eq!(hist.len(), 1);
        assert_eq!(hist[&Family::F3], 24);
    }

    #[test]
    fn empty_histogram() {
        let g = ModelGraph::new("e", ModelClass::Cnn, Vec::new()).unwrap();
        assert!(family_histogram(&g).is_empty());
    }

    proptest! {
        #[test]
        fn family_bounds_hold(fp in 1u64..40_000_000, reuse in 0.1f64..30_000.0, macs in 1u64..400_000_000) {
            let m = metrics(fp, reuse, macs);
            for kind in [LayerKind::StandardConv, LayerKind::LstmGate, LayerKind::FullyConnected] {
                match classify(&m, kind) {
                    Family::F3 => prop_assert!(m.param_reuse <= 8.0),
                    Family::F1 => prop_assert!(m.param_reuse >= 702.0),
                    _ => {}
                }
            }
        }

        #[test]
        fn lstm_gates_in_f3_footprint_are_f3(fp in 943_719u64..=18_874_368, c in 1u64..8) {
            let m = metrics(fp, 1.0, fp * c);
            prop_assert_eq!(classify(&m, LayerKind::LstmGate), Family::F3);
        }

        #[test]
        fn nearest_is_identity_on_members(fp in 1u64..40_000_000, reuse in 0.1f64..30_000.0, macs in 1u64..400_000_000) {
            let m = metrics(fp, reuse, macs);
            let strict = classify(&m, LayerKind::StandardConv);
            if strict.is_classified() {
                prop_assert_eq!(nearest_family(&m), strict);
            }
        }
    }
}
