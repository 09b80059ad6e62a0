//! Seeded generator for a mixed suite of edge models.
//!
//! Every layer is drawn from shape menus whose metrics fall inside one of
//! the five family ranges, so the suite exercises all accelerators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{
    from_document, ConvShape, LayerEntry, LayerKind, ModelClass, ModelDocument, ModelGraph, RecurrentShape,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSuiteSpec {
    pub seed: u64,
    pub cnn_models: usize,
    pub lstm_models: usize,
    pub transducer_models: usize,
    pub rcnn_models: usize,
    /// Depthwise plus pointwise blocks per CNN (inclusive range).
    pub cnn_blocks: (usize, usize),
    /// Wide low-reuse convolutions near the end of each CNN.
    pub f4_layers: (usize, usize),
    /// Stacked recurrent layers per LSTM model or transducer component.
    pub lstm_layers: (usize, usize),
    /// Candidate input and hidden widths for recurrent layers.
    pub hidden_dims: Vec<u64>,
    pub timesteps: (u64, u64),
}

impl Default for SyntheticSuiteSpec {
    fn default() -> Self {
        SyntheticSuiteSpec {
            seed: 1,
            cnn_models: 4,
            lstm_models: 2,
            transducer_models: 2,
            rcnn_models: 2,
            cnn_blocks: (3, 6),
            f4_layers: (1, 2),
            lstm_layers: (1, 3),
            hidden_dims: vec![1024, 1280, 1536, 2048],
            timesteps: (4, 16),
        }
    }
}

/// Smallest hidden width that keeps a gate product inside F3's footprint.
const MIN_HIDDEN: u64 = 1024;
const MAX_HIDDEN: u64 = 3072;
/// Upper bound on Ci·Co for a classifier head to stay in F3.
const MAX_HEAD_PARAMS: u64 = 11_000_000;

const STEMS: [(u64, u64); 3] = [(24, 48), (32, 32), (32, 48)];
const BLOCKS: [(u64, u64); 3] = [(256, 512), (384, 384), (512, 512)];
const BLOCK_RES: [u64; 2] = [14, 16];
const HEAD_INPUTS: [u64; 2] = [1024, 1280];
const HEAD_OUTPUTS: [u64; 3] = [1000, 2000, 4000];

impl SyntheticSuiteSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Generation(what.to_string()));
        for (name, (lo, hi)) in [
            ("cnn_blocks", self.cnn_blocks),
            ("f4_layers", self.f4_layers),
            ("lstm_layers", self.lstm_layers),
        ] {
            if lo > hi {
                return bad(&format!("{name}: minimum {lo} exceeds maximum {hi}"));
            }
        }
        if self.cnn_blocks.0 == 0 {
            return bad("cnn_blocks: need at least one block");
        }
        if self.lstm_layers.0 == 0 {
            return bad("lstm_layers: need at least one layer");
        }
        let (t0, t1) = self.timesteps;
        if t0 == 0 || t0 > t1 {
            return bad(&format!("timesteps: empty range {t0}..={t1}"));
        }
        if self.hidden_dims.is_empty() {
            return bad("hidden_dims: no candidates");
        }
        if let Some(h) = self
            .hidden_dims
            .iter()
            .find(|h| !(MIN_HIDDEN..=MAX_HIDDEN).contains(*h))
        {
            return bad(&format!("hidden_dims: {h} outside {MIN_HIDDEN}..={MAX_HIDDEN}"));
        }
        if self.cnn_models + self.lstm_models + self.transducer_models + self.rcnn_models == 0 {
            return bad("suite has no models");
        }
        Ok(())
    }
}

/// Appends layers to a chain, each consuming the previous one.
struct Chain {
    layers: Vec<LayerEntry>,
    last: Option<String>,
}

impl Chain {
    fn new() -> Self {
        Chain {
            layers: Vec::new(),
            last: None,
        }
    }

    fn push(&mut self, entry: LayerEntry, extra: Option<String>) -> String {
        let id = entry.id.clone();
        let preds: Vec<String> = self.last.iter().cloned().chain(extra).collect();
        self.layers.push(entry.after(preds));
        self.last = Some(id.clone());
        id
    }
}

fn conv(id: String, kind: LayerKind, out: u64, ci: u64, co: u64, k: u64) -> LayerEntry {
    let pad = k - 1;
    LayerEntry::conv(id, kind, ConvShape::new((out + pad, out + pad), ci, co, (k, k), 1))
}

fn cnn_front(rng: &mut ChaCha8Rng, chain: &mut Chain, blocks: usize) {
    let (ci, co) = *STEMS.choose(rng).expect("non-empty");
    chain.push(conv("stem".into(), LayerKind::StandardConv, 112, ci, co, 3), None);
    if rng.gen_bool(0.5) {
        chain.push(conv("stem2".into(), LayerKind::StandardConv, 56, 32, 64, 3), None);
    }
    let mut prev_pw: Option<String> = None;
    for b in 0..blocks {
        // The first block is the smallest so every CNN spans a wide MAC range.
        let ((cd, cp), r) = if b == 0 {
            (BLOCKS[0], BLOCK_RES[0])
        } else {
            (
                *BLOCKS.choose(rng).expect("non-empty"),
                *BLOCK_RES.choose(rng).expect("non-empty"),
            )
        };
        chain.push(conv(format!("dw{b}"), LayerKind::DepthwiseConv, r, cd, cd, 3), None);
        let pw = chain.push(
            conv(format!("pw{b}"), LayerKind::PointwiseConv, r, cd, cp, 1),
            prev_pw.take(),
        );
        prev_pw = Some(pw);
    }
}

fn cnn_tail(rng: &mut ChaCha8Rng, chain: &mut Chain, f4: usize) {
    for i in 0..f4 {
        let entry = match rng.gen_range(0..4) {
            0 => conv(format!("wide{i}"), LayerKind::PointwiseConv, 7, 512, 1024, 1),
            1 => conv(format!("wide{i}"), LayerKind::StandardConv, 6, 256, 256, 3),
            2 => conv(format!("wide{i}"), LayerKind::StandardConv, 6, 256, 320, 3),
            _ => conv(format!("wide{i}"), LayerKind::StandardConv, 5, 320, 320, 3),
        };
        chain.push(entry, None);
    }
}

fn head(rng: &mut ChaCha8Rng, id: &str, inputs: u64) -> LayerEntry {
    let fitting: Vec<u64> = HEAD_OUTPUTS
        .iter()
        .copied()
        .filter(|o| inputs * o <= MAX_HEAD_PARAMS)
        .collect();
    LayerEntry::dense(id, inputs, *fitting.choose(rng).expect("1000 outputs always fit"))
}

fn lstm_stack(rng: &mut ChaCha8Rng, spec: &SyntheticSuiteSpec, chain: &mut Chain, prefix: &str, t: u64) -> u64 {
    let n = rng.gen_range(spec.lstm_layers.0..=spec.lstm_layers.1);
    let mut h = 0;
    for i in 0..n {
        h = *spec.hidden_dims.choose(rng).expect("validated");
        chain.push(
            LayerEntry::lstm(format!("{prefix}{i}"), RecurrentShape::new(h, h, t, 1)),
            None,
        );
    }
    h
}

fn cnn(rng: &mut ChaCha8Rng, spec: &SyntheticSuiteSpec, name: String) -> ModelDocument {
    let mut chain = Chain::new();
    let blocks = rng.gen_range(spec.cnn_blocks.0..=spec.cnn_blocks.1);
    cnn_front(rng, &mut chain, blocks);
    let f4 = rng.gen_range(spec.f4_layers.0..=spec.f4_layers.1);
    cnn_tail(rng, &mut chain, f4);
    let inputs = *HEAD_INPUTS.choose(rng).expect("non-empty");
    chain.push(head(rng, "fc", inputs), None);
    ModelDocument {
        name,
        class: ModelClass::Cnn,
        layers: chain.layers,
    }
}

fn lstm(rng: &mut ChaCha8Rng, spec: &SyntheticSuiteSpec, name: String) -> ModelDocument {
    let mut chain = Chain::new();
    let t = rng.gen_range(spec.timesteps.0..=spec.timesteps.1);
    let h = lstm_stack(rng, spec, &mut chain, "lstm", t);
    chain.push(head(rng, "fc", h), None);
    ModelDocument {
        name,
        class: ModelClass::Lstm,
        layers: chain.layers,
    }
}

fn transducer(rng: &mut ChaCha8Rng, spec: &SyntheticSuiteSpec, name: String) -> ModelDocument {
    let mut enc = Chain::new();
    let t_enc = rng.gen_range(spec.timesteps.0..=spec.timesteps.1);
    let h = lstm_stack(rng, spec, &mut enc, "enc", t_enc);
    let mut pred = Chain::new();
    let t_pred = rng.gen_range(spec.timesteps.0..=spec.timesteps.1);
    // Prediction networks are shallower than encoders.
    let shallow = SyntheticSuiteSpec {
        lstm_layers: (1, spec.lstm_layers.1.min(2)),
        ..spec.clone()
    };
    lstm_stack(rng, &shallow, &mut pred, "pred", t_pred);
    let mut layers = enc.layers;
    layers.extend(pred.layers);
    let joint = head(rng, "joint0", h).after([enc.last.expect("non-empty"), pred.last.expect("non-empty")]);
    layers.push(joint);
    ModelDocument {
        name,
        class: ModelClass::Transducer,
        layers,
    }
}

fn rcnn(rng: &mut ChaCha8Rng, spec: &SyntheticSuiteSpec, name: String) -> ModelDocument {
    let mut chain = Chain::new();
    cnn_front(rng, &mut chain, spec.cnn_blocks.0.max(2).min(spec.cnn_blocks.1));
    let t = rng.gen_range(spec.timesteps.0..=spec.timesteps.1);
    let h = lstm_stack(rng, spec, &mut chain, "lstm", t);
    chain.push(head(rng, "fc", h), None);
    ModelDocument {
        name,
        class: ModelClass::Rcnn,
        layers: chain.layers,
    }
}

/// Model documents in a fixed order: CNNs, LSTMs, transducers, RCNNs.
pub fn generate_suite(spec: &SyntheticSuiteSpec) -> Result<Vec<ModelDocument>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut docs = Vec::new();
    for i in 0..spec.cnn_models {
        docs.push(cnn(&mut rng, spec, format!("cnn{i}")));
    }
    for i in 0..spec.lstm_models {
        docs.push(lstm(&mut rng, spec, format!("lstm{i}")));
    }
    for i in 0..spec.transducer_models {
        docs.push(transducer(&mut rng, spec, format!("transducer{i}")));
    }
    for i in 0..spec.rcnn_models {
        docs.push(rcnn(&mut rng, spec, format!("rcnn{i}")));
    }
    Ok(docs)
}

/// [`generate_suite`] parsed into graphs.
pub fn generate_models(spec: &SyntheticSuiteSpec) -> Result<Vec<ModelGraph>> {
    generate_suite(spec)?
        .iter()
        .map(|d| from_document(d).map_err(|e| Error::Generation(format!("{}: {e}", d.name))))
        .collect()
}
