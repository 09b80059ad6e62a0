//! End-to-end execution of a schedule and scenario comparisons.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cost::{estimate_with, CostEstimate, CostOptions};
use crate::energy::{layer_energy, EnergyBreakdown, EnergyOptions};
use crate::error::{Error, Result};
use crate::hardware::{canonical_suite, HardwareSuite, BASELINE, BASE_HB};
use crate::ir::{LayerKind, ModelGraph};
use crate::metrics::layer_metrics;
use crate::scheduler::{schedule_with, CommEvent, FamilyRouting, ReasonTag, SchedulePlan};

pub const MENSA_G: &str = "Mensa-G";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimOptions {
    pub cost: CostOptions,
    pub energy: EnergyOptions,
    /// Write transferred activations at the external interface bandwidth;
    /// `false` writes at the producer's own bandwidth.
    pub external_writes: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            cost: CostOptions::default(),
            energy: EnergyOptions::default(),
            external_writes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: String,
    pub kind: LayerKind,
    pub accelerator: String,
    pub reason: ReasonTag,
    pub cost: CostEstimate,
    pub energy: EnergyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommCost {
    pub event: CommEvent,
    pub latency_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Subtotal {
    pub layers: usize,
    pub macs: u64,
    pub latency_s: f64,
    pub energy_j: f64,
    /// MAC-weighted mean of layer utilizations.
    pub utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Totals {
    pub macs: u64,
    pub layer_latency_s: f64,
    pub comm_latency_s: f64,
    pub latency_s: f64,
    /// Layers only.
    pub layer_energy: EnergyBreakdown,
    pub comm_energy_j: f64,
    pub energy_j: f64,
    pub dram_bytes: u64,
    pub comm_bytes: u64,
    pub utilization: f64,
    pub throughput_macs_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub model: String,
    pub rows: Vec<LayerRow>,
    pub communications: Vec<CommCost>,
    pub totals: Totals,
    pub per_accelerator: BTreeMap<String, Subtotal>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn weighted_utilization(rows: &[&LayerRow]) -> f64 {
    let macs: u64 = rows.iter().map(|r| r.cost.macs).sum();
    if macs == 0 {
        return 0.0;
    }
    let weighted: f64 = rows.iter().map(|r| r.cost.macs as f64 * r.cost.utilization).sum();
    (weighted / macs as f64).clamp(0.0, 1.0)
}

pub fn simulate(
    model: &ModelGraph,
    plan: &SchedulePlan,
    suite: &HardwareSuite,
    opts: &SimOptions,
) -> Result<SimReport> {
    if plan.assignments.len() != model.len() {
        return Err(Error::Config(format!(
            "plan has {} assignments for {} layers",
            plan.assignments.len(),
            model.len()
        )));
    }
    let mut rows = Vec::with_capacity(model.len());
    for (layer, a) in model.layers().iter().zip(&plan.assignments) {
        if layer.id != a.layer {
            return Err(Error::Config(format!(
                "plan assigns `{}` where `{}` runs",
                a.layer, layer.id
            )));
        }
        let accel = suite.require(&a.destination)?;
        let cost = estimate_with(layer, &layer_metrics(layer), accel, &opts.cost);
        rows.push(LayerRow {
            layer: layer.id.clone(),
            kind: layer.kind(),
            accelerator: accel.name.clone(),
            reason: a.reason,
            energy: layer_energy(&cost, accel, &opts.energy),
            cost,
        });
    }

    let mut communications = Vec::with_capacity(plan.communications.len());
    for event in &plan.communications {
        let src = suite.require(&event.source)?;
        let dst = suite.require(&event.destination)?;
        let bytes = event.bytes as f64;
        let write_bw = if opts.external_writes {
            suite.dram.ext_bandwidth()
        } else {
            src.bandwidth()
        };
        communications.push(CommCost {
            event: event.clone(),
            latency_s: bytes / write_bw + bytes / dst.bandwidth(),
            energy_j: bytes * (src.energy.e_dram() + dst.energy.e_dram()),
        });
    }

    let layer_energy = rows
        .iter()
        .fold(EnergyBreakdown::default(), |acc, r| acc.add(&r.energy));
    let macs = rows.iter().map(|r| r.cost.macs).sum();
    let layer_latency_s: f64 = rows.iter().map(|r| r.cost.latency_s).sum();
    let comm_latency_s: f64 = communications.iter().map(|c| c.latency_s).sum();
    let comm_energy_j: f64 = communications.iter().map(|c| c.energy_j).sum();
    let latency_s = layer_latency_s + comm_latency_s;
    let all: Vec<&LayerRow> = rows.iter().collect();
    let totals = Totals {
        macs,
        layer_latency_s,
        comm_latency_s,
        latency_s,
        layer_energy,
        comm_energy_j,
        energy_j: layer_energy.total + comm_energy_j,
        dram_bytes: rows.iter().map(|r| r.cost.dram_bytes()).sum(),
        comm_bytes: communications.iter().map(|c| c.event.bytes).sum(),
        utilization: weighted_utilization(&all),
        throughput_macs_per_s: if latency_s > 0.0 { macs as f64 / latency_s } else { 0.0 },
    };

    let mut per_accelerator = BTreeMap::new();
    for name in rows.iter().map(|r| r.accelerator.as_str()) {
        if per_accelerator.contains_key(name) {
            continue;
        }
        let mine: Vec<&LayerRow> = rows.iter().filter(|r| r.accelerator == name).collect();
        per_accelerator.insert(
            name.to_string(),
            Subtotal {
                layers: mine.len(),
                macs: mine.iter().map(|r| r.cost.macs).sum(),
                latency_s: mine.iter().map(|r| r.cost.latency_s).sum(),
                energy_j: mine.iter().map(|r| r.energy.total).sum(),
                utilization: weighted_utilization(&mine),
            },
        );
    }

    Ok(SimReport {
        model: model.name.clone(),
        rows,
        communications,
        totals,
        per_accelerator,
    })
}

/// A named system: hardware, routing and options.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub suite: HardwareSuite,
    pub routing: FamilyRouting,
    pub options: SimOptions,
}

impl Scenario {
    pub fn new(name: impl Into<String>, suite: HardwareSuite, routing: FamilyRouting) -> Self {
        Scenario {
            name: name.into(),
            suite,
            routing,
            options: SimOptions::default(),
        }
    }

    pub fn run(&self, model: &ModelGraph) -> Result<(SchedulePlan, SimReport)> {
        let plan = schedule_with(model, &self.suite, &self.routing, &self.options.cost)?;
        let report = simulate(model, &plan, &self.suite, &self.options)?;
        Ok((plan, report))
    }
}

/// Baseline, Base+HB and Mensa-G on the canonical hardware.
pub fn canonical_scenarios() -> Vec<Scenario> {
    scenarios_for(&canonical_suite())
}

/// The standard scenarios whose accelerators all exist in `suite`.
pub fn scenarios_for(suite: &HardwareSuite) -> Vec<Scenario> {
    [
        (BASELINE, FamilyRouting::uniform(BASELINE)),
        (BASE_HB, FamilyRouting::uniform(BASE_HB)),
        (MENSA_G, FamilyRouting::canonical()),
    ]
    .into_iter()
    .filter(|(_, routing)| routing.validate(suite).is_ok())
    .map(|(name, routing)| Scenario::new(name, suite.clone(), routing))
    .collect()
}

/// Scenario totals with ratios against the baseline. Ratios above 1 are
/// improvements except `latency_x`, which is normalized latency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub latency_s: f64,
    pub energy_j: f64,
    pub throughput_macs_per_s: f64,
    pub macs_per_joule: f64,
    pub utilization: f64,
    pub energy_efficiency_x: f64,
    pub throughput_x: f64,
    pub latency_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub model: String,
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, scenario: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.scenario == scenario)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

pub fn compare_suites(model: &ModelGraph, scenarios: &[Scenario], baseline: &str) -> Result<Comparison> {
    if !scenarios.iter().any(|s| s.name == baseline) {
        return Err(Error::Config(format!(
            "baseline scenario `{baseline}` is not among the scenarios"
        )));
    }
    let reports = scenarios
        .iter()
        .map(|s| s.run(model).map(|(_, r)| (s.name.clone(), r)))
        .collect::<Result<Vec<_>>>()?;
    let base = &reports
        .iter()
        .find(|(n, _)| n == baseline)
        .expect("checked above")
        .1
        .totals;
    let rows = reports
        .iter()
        .map(|(name, r)| {
            let t = &r.totals;
            ComparisonRow {
                scenario: name.clone(),
                latency_s: t.latency_s,
                energy_j: t.energy_j,
                throughput_macs_per_s: t.throughput_macs_per_s,
                macs_per_joule: ratio(t.macs as f64, t.energy_j),
                utilization: t.utilization,
                energy_efficiency_x: ratio(base.energy_j, t.energy_j),
                throughput_x: ratio(t.throughput_macs_per_s, base.throughput_macs_per_s),
                latency_x: ratio(t.latency_s, base.latency_s),
            }
        })
        .collect();
    Ok(Comparison {
        model: model.name.clone(),
        baseline: baseline.to_string(),
        rows,
    })
}

/// Per-scenario arithmetic means of the per-model ratios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteMeans {
    pub scenario: String,
    pub energy_efficiency_x: f64,
    pub throughput_x: f64,
    pub latency_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteComparison {
    pub baseline: String,
    pub models: Vec<Comparison>,
    pub means: Vec<SuiteMeans>,
}

pub fn compare_models(models: &[ModelGraph], scenarios: &[Scenario], baseline: &str) -> Result<SuiteComparison> {
    let per_model = models
        .iter()
        .map(|m| compare_suites(m, scenarios, baseline))
        .collect::<Result<Vec<_>>>()?;
    let n = per_model.len().max(1) as f64;
    let means = scenarios
        .iter()
        .map(|s| {
            let rows: Vec<&ComparisonRow> = per_model.iter().filter_map(|c| c.row(&s.name)).collect();
            SuiteMeans {
                scenario: s.name.clone(),
                energy_efficiency_x: rows.iter().map(|r| r.energy_efficiency_x).sum::<f64>() / n,
                throughput_x: rows.iter().map(|r| r.throughput_x).sum::<f64>() / n,
                latency_x: rows.iter().map(|r| r.latency_x).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(SuiteComparison {
        baseline: baseline.to_string(),
        models: per_model,
        means,
    })
}
