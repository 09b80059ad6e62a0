use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use accelsim_core::energy::energy_roofline;
use accelsim_core::engine::{compare_models, scenarios_for, SimReport};
use accelsim_core::families::{classified_fraction, family_histogram, resolve_family, Family};
use accelsim_core::hardware::{canonical_suite, load_suite, HardwareSuite};
use accelsim_core::ir::{from_document, ModelDocument, ModelGraph};
use accelsim_core::metrics::{
    is_parameterized, layer_metrics, model_metrics, LayerMetrics, LstmFootprint, FLOPS_PER_MAC,
};
use accelsim_core::scheduler::{self, FamilyRouting, SchedulePlan};
use accelsim_core::synth::{generate_models, generate_suite, SyntheticSuiteSpec};

use crate::output::{int, json, num, Format, Table};
use crate::SeedArgs;

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

/// Each file holds one model document or an array of them.
pub fn load_models(paths: &[PathBuf]) -> Result<Vec<ModelGraph>, String> {
    let mut models = Vec::new();
    for path in paths {
        let text = read(path)?;
        let at = |e: String| format!("{}: {e}", path.display());
        let docs: Vec<ModelDocument> = if text.trim_start().starts_with('[') {
            serde_json::from_str(&text).map_err(|e| at(e.to_string()))?
        } else {
            vec![serde_json::from_str(&text).map_err(|e| at(e.to_string()))?]
        };
        for doc in &docs {
            models.push(from_document(doc).map_err(|e| at(e.to_string()))?);
        }
    }
    Ok(models)
}

fn suite_spec(seed: &SeedArgs) -> Result<SyntheticSuiteSpec, String> {
    let mut spec = match &seed.spec {
        Some(path) => serde_json::from_str(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?,
        None => SyntheticSuiteSpec::default(),
    };
    spec.seed = seed.seed;
    Ok(spec)
}

pub fn resolve_models(paths: &[PathBuf], synthetic: bool, seed: &SeedArgs) -> Result<Vec<ModelGraph>, String> {
    if synthetic {
        generate_models(&suite_spec(seed)?).map_err(|e| e.to_string())
    } else {
        load_models(paths)
    }
}

pub fn load_hardware(hw: &str) -> Result<HardwareSuite, String> {
    if hw == "canonical" {
        return Ok(canonical_suite());
    }
    load_suite(&read(Path::new(hw))?).map_err(|e| format!("{hw}: {e}"))
}

pub fn load_routing(path: Option<&Path>) -> Result<FamilyRouting, String> {
    match path {
        None => Ok(FamilyRouting::canonical()),
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| format!("{}: {e}", p.display())),
    }
}

#[derive(Serialize)]
struct LayerCharacter<'a> {
    layer: &'a str,
    kind: &'a str,
    #[serde(flatten)]
    metrics: LayerMetrics,
    family: Option<Family>,
    fallback: bool,
}

#[derive(Serialize)]
struct ModelCharacter<'a> {
    model: &'a str,
    total_param_bytes: u64,
    total_macs: u64,
    lstm_footprints: Vec<LstmFootprint>,
    layers: Vec<LayerCharacter<'a>>,
}

pub fn characterize(models: &[ModelGraph], format: Format) -> Result<String, String> {
    let mut out = Vec::new();
    for model in models {
        let mm = model_metrics(model);
        let layers = model
            .layers()
            .iter()
            .map(|l| {
                let m = layer_metrics(l);
                let (family, fallback) = if is_parameterized(l.kind()) {
                    let (f, fb) = resolve_family(&m, l.kind());
                    (Some(f), fb)
                } else {
                    (None, false)
                };
                LayerCharacter {
                    layer: &l.id,
                    kind: l.kind().name(),
                    metrics: m,
                    family,
                    fallback,
                }
            })
            .collect();
        out.push(ModelCharacter {
            model: &model.name,
            total_param_bytes: mm.total_param_bytes,
            total_macs: mm.total_macs,
            lstm_footprints: mm.lstm_footprints,
            layers,
        });
    }
    match format {
        Format::Json => json(&out),
        Format::Csv => {
            let mut t = Table::new(&[
                "model",
                "layer",
                "kind",
                "macs",
                "param_bytes",
                "param_reuse_mac_per_byte",
                "param_reuse_flop_per_byte",
                "input_act_bytes",
                "output_act_bytes",
                "act_reuse",
                "family",
                "fallback",
            ]);
            for m in &out {
                for l in &m.layers {
                    t.push(vec![
                        m.model.to_string(),
                        l.layer.to_string(),
                        l.kind.to_string(),
                        int(l.metrics.macs),
                        int(l.metrics.param_bytes),
                        num(l.metrics.param_reuse),
                        num(l.metrics.param_reuse * FLOPS_PER_MAC),
                        int(l.metrics.input_act_bytes),
                        int(l.metrics.output_act_bytes),
                        num(l.metrics.act_reuse),
                        l.family.map(|f| f.to_string()).unwrap_or_default(),
                        l.fallback.to_string(),
                    ]);
                }
            }
            t.to_csv()
        }
    }
}

#[derive(Serialize)]
struct Histogram {
    model: String,
    layers: BTreeMap<Family, usize>,
    classified_fraction: f64,
}

pub fn cluster(models: &[ModelGraph], format: Format) -> Result<String, String> {
    let mut rows: Vec<Histogram> = models
        .iter()
        .map(|m| {
            let hist = family_histogram(m);
            Histogram {
                model: m.name.clone(),
                classified_fraction: classified_fraction(&hist),
                layers: hist,
            }
        })
        .collect();
    let mut all = BTreeMap::new();
    for r in &rows {
        for (f, n) in &r.layers {
            *all.entry(*f).or_insert(0) += n;
        }
    }
    rows.push(Histogram {
        model: "all".into(),
        classified_fraction: classified_fraction(&all),
        layers: all,
    });
    match format {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut t = Table::new(&["model", "family", "layers", "classified_fraction"]);
            for r in &rows {
                for (f, n) in &r.layers {
                    t.push(vec![
                        r.model.clone(),
                        f.to_string(),
                        n.to_string(),
                        num(r.classified_fraction),
                    ]);
                }
            }
            t.to_csv()
        }
    }
}

#[derive(Serialize)]
struct RooflinePoint<'a> {
    accelerator: &'a str,
    intensity_mac_per_byte: f64,
    attainable_mac_per_s: f64,
    attainable_flop_per_s: f64,
    energy_mac_per_joule: f64,
    ridge_mac_per_byte: f64,
}

pub fn roofline(
    suite: &HardwareSuite,
    accelerator: Option<&str>,
    points: usize,
    min: f64,
    max: f64,
    format: Format,
) -> Result<String, String> {
    if !(min > 0.0 && max >= min && max.is_finite()) {
        return Err(format!("intensity range must satisfy 0 < min <= max, got {min}..{max}"));
    }
    if points == 0 {
        return Err("need at least one point".into());
    }
    let accels: Vec<_> = match accelerator {
        Some(name) => vec![suite.require(name).map_err(|e| e.to_string())?],
        None => suite.accelerators.iter().collect(),
    };
    let mut rows = Vec::new();
    for a in accels {
        for (x, y) in accelsim_core::cost::roofline_series(a, min, max, points) {
            rows.push(RooflinePoint {
                accelerator: &a.name,
                intensity_mac_per_byte: x,
                attainable_mac_per_s: y,
                attainable_flop_per_s: y * FLOPS_PER_MAC,
                energy_mac_per_joule: energy_roofline(x, &a.energy).map_err(|e| e.to_string())?,
                ridge_mac_per_byte: a.ridge_point(),
            });
        }
    }
    match format {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut t = Table::new(&[
                "accelerator",
                "intensity_mac_per_byte",
                "attainable_mac_per_s",
                "attainable_flop_per_s",
                "energy_mac_per_joule",
                "ridge_mac_per_byte",
            ]);
            for r in &rows {
                t.push(vec![
                    r.accelerator.to_string(),
                    num(r.intensity_mac_per_byte),
                    num(r.attainable_mac_per_s),
                    num(r.attainable_flop_per_s),
                    num(r.energy_mac_per_joule),
                    num(r.ridge_mac_per_byte),
                ]);
            }
            t.to_csv()
        }
    }
}

pub fn schedule(
    models: &[ModelGraph],
    suite: &HardwareSuite,
    routing: &FamilyRouting,
    format: Format,
) -> Result<String, String> {
    routing.validate(suite).map_err(|e| e.to_string())?;
    let plans = models
        .iter()
        .map(|m| scheduler::schedule(m, suite, routing))
        .collect::<Result<Vec<SchedulePlan>, _>>()
        .map_err(|e| e.to_string())?;
    match format {
        Format::Json => json(&plans),
        Format::Csv => {
            let mut t = Table::new(&[
                "model",
                "layer",
                "family",
                "basis",
                "ideal",
                "destination",
                "reason",
                "comm_events_in",
                "comm_bytes_in",
            ]);
            for p in &plans {
                for a in &p.assignments {
                    let incoming: Vec<_> = p.communications.iter().filter(|c| c.consumer == a.layer).collect();
                    t.push(vec![
                        p.model.clone(),
                        a.layer.clone(),
                        a.family.to_string(),
                        format!("{:?}", a.basis),
                        a.ideal.clone(),
                        a.destination.clone(),
                        a.reason.name().to_string(),
                        incoming.len().to_string(),
                        incoming.iter().map(|c| c.bytes).sum::<u64>().to_string(),
                    ]);
                }
            }
            t.to_csv()
        }
    }
}

pub fn simulate(
    models: &[ModelGraph],
    suite: &HardwareSuite,
    scenario: &str,
    format: Format,
) -> Result<String, String> {
    let scenarios = scenarios_for(suite);
    let chosen = scenarios.iter().find(|s| s.name == scenario).ok_or_else(|| {
        let names: Vec<&str> = scenarios.iter().map(|s| s.name.as_str()).collect();
        format!(
            "scenario `{scenario}` unavailable on this hardware (have: {})",
            names.join(", ")
        )
    })?;
    let reports = models
        .iter()
        .map(|m| chosen.run(m).map(|(_, r)| r))
        .collect::<Result<Vec<SimReport>, _>>()
        .map_err(|e| e.to_string())?;
    match format {
        Format::Json => json(&reports),
        Format::Csv => {
            let mut t = Table::new(&[
                "model",
                "row",
                "kind",
                "accelerator",
                "reason",
                "macs",
                "latency_s",
                "compute_time_s",
                "memory_time_s",
                "utilization",
                "bottleneck",
                "dram_bytes",
                "energy_j",
                "pe_dynamic_j",
                "pe_static_j",
                "buf_dynamic_j",
                "buf_static_j",
                "noc_j",
                "dram_j",
            ]);
            for r in &reports {
                for row in &r.rows {
                    let (c, e) = (&row.cost, &row.energy);
                    t.push(vec![
                        r.model.clone(),
                        row.layer.clone(),
                        row.kind.name().to_string(),
                        row.accelerator.clone(),
                        row.reason.name().to_string(),
                        int(c.macs),
                        num(c.latency_s),
                        num(c.compute_time_s),
                        num(c.memory_time_s),
                        num(c.utilization),
                        format!("{:?}", c.bottleneck),
                        int(c.dram_bytes()),
                        num(e.total),
                        num(e.pe_dynamic),
                        num(e.pe_static),
                        num(e.buf_dynamic),
                        num(e.buf_static),
                        num(e.noc),
                        num(e.dram),
                    ]);
                }
                for c in &r.communications {
                    let ev = &c.event;
                    t.push(vec![
                        r.model.clone(),
                        format!("{}->{}", ev.producer, ev.consumer),
                        "Transfer".into(),
                        format!("{}->{}", ev.source, ev.destination),
                        format!("{:?}", ev.cause),
                        "0".into(),
                        num(c.latency_s),
                        "0".into(),
                        num(c.latency_s),
                        "0".into(),
                        "Memory".into(),
                        int(ev.bytes),
                        num(c.energy_j),
                        "0".into(),
                        "0".into(),
                        "0".into(),
                        "0".into(),
                        "0".into(),
                        num(c.energy_j),
                    ]);
                }
                let tot = &r.totals;
                let le = &tot.layer_energy;
                t.push(vec![
                    r.model.clone(),
                    "total".into(),
                    "Total".into(),
                    chosen.name.clone(),
                    String::new(),
                    int(tot.macs),
                    num(tot.latency_s),
                    String::new(),
                    String::new(),
                    num(tot.utilization),
                    String::new(),
                    int(tot.dram_bytes + 2 * tot.comm_bytes),
                    num(tot.energy_j),
                    num(le.pe_dynamic),
                    num(le.pe_static),
                    num(le.buf_dynamic),
                    num(le.buf_static),
                    num(le.noc),
                    num(le.dram + tot.comm_energy_j),
                ]);
            }
            t.to_csv()
        }
    }
}

pub fn compare(models: &[ModelGraph], suite: &HardwareSuite, baseline: &str, format: Format) -> Result<String, String> {
    let table = compare_models(models, &scenarios_for(suite), baseline).map_err(|e| e.to_string())?;
    match format {
        Format::Json => json(&table),
        Format::Csv => {
            let mut t = Table::new(&[
                "model",
                "scenario",
                "latency_s",
                "energy_j",
                "throughput_macs_per_s",
                "macs_per_joule",
                "utilization",
                "energy_efficiency_x",
                "throughput_x",
                "latency_x",
            ]);
            for c in &table.models {
                for r in &c.rows {
                    t.push(vec![
                        c.model.clone(),
                        r.scenario.clone(),
                        num(r.latency_s),
                        num(r.energy_j),
                        num(r.throughput_macs_per_s),
                        num(r.macs_per_joule),
                        num(r.utilization),
                        num(r.energy_efficiency_x),
                        num(r.throughput_x),
                        num(r.latency_x),
                    ]);
                }
            }
            if table.models.len() > 1 {
                for m in &table.means {
                    let blank = String::new;
                    t.push(vec![
                        "mean".into(),
                        m.scenario.clone(),
                        blank(),
                        blank(),
                        blank(),
                        blank(),
                        blank(),
                        num(m.energy_efficiency_x),
                        num(m.throughput_x),
                        num(m.latency_x),
                    ]);
                }
            }
            t.to_csv()
        }
    }
}

pub fn generate(seed: &SeedArgs) -> Result<String, String> {
    let docs = generate_suite(&suite_spec(seed)?).map_err(|e| e.to_string())?;
    json(&docs)
}
