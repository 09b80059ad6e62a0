//! Layer-level model representation.
//!
//! A [`ModelGraph`] is an ordered list of [`LayerDescriptor`]s whose
//! `predecessors` induce a DAG. Recurrent layers are stored expanded: one
//! descriptor per (gate, matrix-vector product, timestep) plus one
//! element-wise combine stage per timestep.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StructuralError};

pub const DEFAULT_BITS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    StandardConv,
    DepthwiseConv,
    PointwiseConv,
    FullyConnected,
    LstmGate,
    LstmCellCombine,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::StandardConv => "StandardConv",
            LayerKind::DepthwiseConv => "DepthwiseConv",
            LayerKind::PointwiseConv => "PointwiseConv",
            LayerKind::FullyConnected => "FullyConnected",
            LayerKind::LstmGate => "LstmGate",
            LayerKind::LstmCellCombine => "LstmCellCombine",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Input,
    InputModulation,
    Forget,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::InputModulation, Gate::Forget, Gate::Output];

    fn tag(self) -> &'static str {
        match self {
            Gate::Input => "input",
            Gate::InputModulation => "modulation",
            Gate::Forget => "forget",
            Gate::Output => "output",
        }
    }
}

/// Which operand a gate's matrix-vector product consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mvm {
    /// `W_x · x_t`
    Input,
    /// `W_h · h_{t-1}`
    Hidden,
}

impl Mvm {
    pub const ALL: [Mvm; 2] = [Mvm::Input, Mvm::Hidden];

    fn tag(self) -> &'static str {
        match self {
            Mvm::Input => "x",
            Mvm::Hidden => "h",
        }
    }
}

/// Effective (padding already applied) convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvShape {
    pub in_h: u64,
    pub in_w: u64,
    pub in_ch: u64,
    pub out_ch: u64,
    pub kernel_h: u64,
    pub kernel_w: u64,
    pub stride: u64,
    pub out_h: u64,
    pub out_w: u64,
}

impl ConvShape {
    /// Builds a shape with output dims derived from the input dims.
    pub fn new(in_hw: (u64, u64), in_ch: u64, out_ch: u64, kernel: (u64, u64), stride: u64) -> Self {
        let out = |i: u64, k: u64| if i >= k && stride > 0 { (i - k) / stride + 1 } else { 0 };
        ConvShape {
            in_h: in_hw.0,
            in_w: in_hw.1,
            in_ch,
            out_ch,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride,
            out_h: out(in_hw.0, kernel.0),
            out_w: out(in_hw.1, kernel.1),
        }
    }

    /// A fully-connected layer viewed as a 1x1 convolution on a 1x1 map.
    pub fn dense(inputs: u64, outputs: u64) -> Self {
        ConvShape::new((1, 1), inputs, outputs, (1, 1), 1)
    }

    pub fn out_pixels(&self) -> u64 {
        self.out_h * self.out_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RecurrentShape {
    pub input_dim: u64,
    pub hidden_dim: u64,
    pub timesteps: u64,
    /// Multiplicity scalar: scales MACs and activation work, not weights.
    pub cells: u64,
}

impl RecurrentShape {
    pub fn new(input_dim: u64, hidden_dim: u64, timesteps: u64, cells: u64) -> Self {
        RecurrentShape {
            input_dim,
            hidden_dim,
            timesteps,
            cells,
        }
    }
}

/// Position of an expanded recurrent descriptor inside its parent layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LstmStep {
    pub layer: String,
    /// 1-based.
    pub timestep: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerOp {
    StandardConv(ConvShape),
    DepthwiseConv(ConvShape),
    PointwiseConv(ConvShape),
    FullyConnected(ConvShape),
    LstmGate {
        shape: RecurrentShape,
        gate: Gate,
        mvm: Mvm,
        step: LstmStep,
    },
    LstmCellCombine {
        shape: RecurrentShape,
        step: LstmStep,
    },
}

impl LayerOp {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerOp::StandardConv(_) => LayerKind::StandardConv,
            LayerOp::DepthwiseConv(_) => LayerKind::DepthwiseConv,
            LayerOp::PointwiseConv(_) => LayerKind::PointwiseConv,
            LayerOp::FullyConnected(_) => LayerKind::FullyConnected,
            LayerOp::LstmGate { .. } => LayerKind::LstmGate,
            LayerOp::LstmCellCombine { .. } => LayerKind::LstmCellCombine,
        }
    }

    pub fn conv(&self) -> Option<&ConvShape> {
        match self {
            LayerOp::StandardConv(s)
            | LayerOp::DepthwiseConv(s)
            | LayerOp::PointwiseConv(s)
            | LayerOp::FullyConnected(s) => Some(s),
            _ => None,
        }
    }

    pub fn recurrent(&self) -> Option<&RecurrentShape> {
        match self {
            LayerOp::LstmGate { shape, .. } | LayerOp::LstmCellCombine { shape, .. } => Some(shape),
            _ => None,
        }
    }

    pub fn step(&self) -> Option<&LstmStep> {
        match self {
            LayerOp::LstmGate { step, .. } | LayerOp::LstmCellCombine { step, .. } => Some(step),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDescriptor {
    pub id: String,
    pub op: LayerOp,
    /// Weight/activation precision in bits.
    pub bits: u32,
    pub predecessors: Vec<String>,
}

impl LayerDescriptor {
    pub fn new(id: impl Into<String>, op: LayerOp) -> Self {
        LayerDescriptor {
            id: id.into(),
            op,
            bits: DEFAULT_BITS,
            predecessors: Vec::new(),
        }
    }

    pub fn with_predecessors<I, S>(mut self, preds: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.predecessors = preds.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_bits(mut self, bits: u32) -> Self {
        self.bits = bits;
        self
    }

    pub fn kind(&self) -> LayerKind {
        self.op.kind()
    }

    /// Bytes per element at this layer's precision.
    pub fn bytes_per_element(&self) -> u64 {
        u64::from(self.bits / 8)
    }

    fn validate(&self, at: &str) -> Result<()> {
        if self.bits == 0 || !self.bits.is_multiple_of(8) {
            return Err(Error::invalid(
                format!("{at}.bits"),
                format!("precision must be a positive multiple of 8, got {}", self.bits),
            ));
        }
        if let Some(s) = self.op.conv() {
            let dims = [
                ("hi", s.in_h),
                ("wi", s.in_w),
                ("ci", s.in_ch),
                ("co", s.out_ch),
                ("kh", s.kernel_h),
                ("kw", s.kernel_w),
                ("stride", s.stride),
                ("ho", s.out_h),
                ("wo", s.out_w),
            ];
            for (name, v) in dims {
                if v == 0 {
                    return Err(Error::invalid(format!("{at}.{name}"), "dimension must be positive"));
                }
            }
            if s.in_h < s.kernel_h || s.in_w < s.kernel_w {
                return Err(Error::invalid(format!("{at}.kh"), "kernel larger than input"));
            }
            let expect_h = (s.in_h - s.kernel_h) / s.stride + 1;
            let expect_w = (s.in_w - s.kernel_w) / s.stride + 1;
            if s.out_h != expect_h {
                return Err(Error::invalid(
                    format!("{at}.ho"),
                    format!("expected {expect_h} from hi/kh/stride, got {}", s.out_h),
                ));
            }
            if s.out_w != expect_w {
                return Err(Error::invalid(
                    format!("{at}.wo"),
                    format!("expected {expect_w} from wi/kw/stride, got {}", s.out_w),
                ));
            }
            match self.op {
                LayerOp::DepthwiseConv(_) if s.in_ch != s.out_ch => {
                    return Err(Error::invalid(
                        format!("{at}.co"),
                        format!("depthwise layer needs ci == co ({} != {})", s.in_ch, s.out_ch),
                    ));
                }
                LayerOp::PointwiseConv(_) if s.kernel_h != 1 || s.kernel_w != 1 => {
                    return Err(Error::invalid(format!("{at}.kh"), "pointwise layer needs a 1x1 kernel"));
                }
                LayerOp::FullyConnected(_) if s.in_h != 1 || s.in_w != 1 || s.kernel_h != 1 || s.kernel_w != 1 => {
                    return Err(Error::invalid(
                        format!("{at}.hi"),
                        "fully-connected layer has no spatial extent",
                    ));
                }
                _ => {}
            }
        }
        if let Some(r) = self.op.recurrent() {
            for (name, v) in [
                ("d", r.input_dim),
                ("h", r.hidden_dim),
                ("t", r.timesteps),
                ("c", r.cells),
            ] {
                if v == 0 {
                    return Err(Error::invalid(format!("{at}.{name}"), "dimension must be positive"));
                }
            }
            let step = self.op.step().expect("recurrent ops carry a step");
            if step.timestep == 0 || step.timestep > r.timesteps {
                return Err(Error::invalid(
                    format!("{at}.timestep"),
                    format!("timestep {} outside 1..={}", step.timestep, r.timesteps),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelClass {
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "LSTM")]
    Lstm,
    Transducer,
    #[serde(rename = "RCNN")]
    Rcnn,
}

/// A validated layer DAG stored in topological execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub class: ModelClass,
    layers: Vec<LayerDescriptor>,
    index: HashMap<String, usize>,
}

impl ModelGraph {
    /// Validates the layers and establishes a topological order. Layers that
    /// are already in a valid order keep it.
    pub fn new(name: impl Into<String>, class: ModelClass, layers: Vec<LayerDescriptor>) -> Result<Self> {
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(&format!("layers[{i}]"))?;
        }
        let layers = topo_sort(layers)?;
        let index = layers.iter().enumerate().map(|(i, l)| (l.id.clone(), i)).collect();
        Ok(ModelGraph {
            name: name.into(),
            class,
            layers,
            index,
        })
    }

    pub fn layers(&self) -> &[LayerDescriptor] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn layer(&self, id: &str) -> Option<&LayerDescriptor> {
        self.position(id).map(|i| &self.layers[i])
    }

    /// Ids of all layers `id` depends on, directly or transitively.
    pub fn ancestors(&self, id: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = vec![id];
        while let Some(cur) = stack.pop() {
            if let Some(layer) = self.layer(cur) {
                for p in &layer.predecessors {
                    if seen.insert(p.clone()) {
                        stack.push(p);
                    }
                }
            }
        }
        seen
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            name: self.name.clone(),
            class: self.class,
            layers: self.layers.iter().map(LayerEntry::from_descriptor).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model documents always serialize")
    }
}

fn topo_sort(layers: Vec<LayerDescriptor>) -> Result<Vec<LayerDescriptor>> {
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        if index.insert(l.id.as_str(), i).is_some() {
            return Err(Error::Structure(StructuralError::DuplicateId(l.id.clone())));
        }
    }
    let mut indegree = vec![0usize; layers.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); layers.len()];
    for (i, l) in layers.iter().enumerate() {
        for p in &l.predecessors {
            let &j = index.get(p.as_str()).ok_or_else(|| {
                Error::Structure(StructuralError::DanglingEdge {
                    layer: l.id.clone(),
                    predecessor: p.clone(),
                })
            })?;
            succ[j].push(i);
            indegree[i] += 1;
        }
    }

    // Kahn's algorithm, always releasing the earliest ready layer so that an
    // already-ordered input is returned unchanged.
    let mut ready: BinaryHeap<Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(layers.len());
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &s in &succ[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if order.len() != layers.len() {
        let cycle = find_cycle(&layers, &index, &indegree);
        return Err(Error::Structure(StructuralError::Cycle(cycle)));
    }

    let mut slots: Vec<Option<LayerDescriptor>> = layers.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i].take().expect("each index visited once"))
        .collect())
}

/// Walks predecessor links among the unsorted remainder until a node repeats.
fn find_cycle(layers: &[LayerDescriptor], index: &HashMap<&str, usize>, indegree: &[usize]) -> Vec<String> {
    let start = indegree
        .iter()
        .position(|&d| d > 0)
        .expect("a cycle leaves a positive indegree");
    let mut path = vec![start];
    let mut pos: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    let mut cur = start;
    loop {
        let next = layers[cur]
            .predecessors
            .iter()
            .map(|p| index[p.as_str()])
            .find(|&j| indegree[j] > 0)
            .expect("nodes left on a cycle have an unsorted predecessor");
        if let Some(&at) = pos.get(&next) {
            let mut ids: Vec<String> = path[at..].iter().rev().map(|&i| layers[i].id.clone()).collect();
            ids.push(ids[0].clone());
            return ids;
        }
        pos.insert(next, path.len());
        path.push(next);
        cur = next;
    }
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

/// On-disk model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub name: String,
    pub class: ModelClass,
    pub layers: Vec<LayerEntry>,
}

/// One entry of the `layers` array. Which fields are required depends on
/// `kind`; `LstmLayer` entries are expanded by the loader.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub id: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wi: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub co: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kh: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kw: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ho: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wo: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<Gate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mvm: Option<Mvm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestep: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
    #[serde(default)]
    pub predecessors: Vec<String>,
}

impl LayerEntry {
    pub fn conv(id: impl Into<String>, kind: LayerKind, shape: ConvShape) -> Self {
        LayerEntry {
            id: id.into(),
            kind: kind.name().to_string(),
            hi: Some(shape.in_h),
            wi: Some(shape.in_w),
            ci: Some(shape.in_ch),
            co: Some(shape.out_ch),
            kh: Some(shape.kernel_h),
            kw: Some(shape.kernel_w),
            stride: Some(shape.stride),
            ho: Some(shape.out_h),
            wo: Some(shape.out_w),
            ..Default::default()
        }
    }

    pub fn dense(id: impl Into<String>, inputs: u64, outputs: u64) -> Self {
        LayerEntry {
            id: id.into(),
            kind: LayerKind::FullyConnected.name().to_string(),
            ci: Some(inputs),
            co: Some(outputs),
            ..Default::default()
        }
    }

    /// An un-expanded recurrent layer.
    pub fn lstm(id: impl Into<String>, shape: RecurrentShape) -> Self {
        LayerEntry {
            id: id.into(),
            kind: LSTM_LAYER.to_string(),
            d: Some(shape.input_dim),
            h: Some(shape.hidden_dim),
            t: Some(shape.timesteps),
            c: Some(shape.cells),
            ..Default::default()
        }
    }

    pub fn after<I, S>(mut self, preds: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.predecessors = preds.into_iter().map(Into::into).collect();
        self
    }

    fn from_descriptor(l: &LayerDescriptor) -> Self {
        let mut e = match &l.op {
            LayerOp::FullyConnected(s) => LayerEntry::dense(l.id.clone(), s.in_ch, s.out_ch),
            op @ (LayerOp::StandardConv(s) | LayerOp::DepthwiseConv(s) | LayerOp::PointwiseConv(s)) => {
                LayerEntry::conv(l.id.clone(), op.kind(), *s)
            }
            LayerOp::LstmGate { shape, gate, mvm, step } => LayerEntry {
                gate: Some(*gate),
                mvm: Some(*mvm),
                ..recurrent_entry(&l.id, LayerKind::LstmGate, shape, step)
            },
            LayerOp::LstmCellCombine { shape, step } => recurrent_entry(&l.id, LayerKind::LstmCellCombine, shape, step),
        };
        if l.bits != DEFAULT_BITS {
            e.bits = Some(l.bits);
        }
        e.predecessors = l.predecessors.clone();
        e
    }
}

fn recurrent_entry(id: &str, kind: LayerKind, shape: &RecurrentShape, step: &LstmStep) -> LayerEntry {
    LayerEntry {
        id: id.to_string(),
        kind: kind.name().to_string(),
        d: Some(shape.input_dim),
        h: Some(shape.hidden_dim),
        t: Some(shape.timesteps),
        c: Some(shape.cells),
        layer: Some(step.layer.clone()),
        timestep: Some(step.timestep),
        ..Default::default()
    }
}

const LSTM_LAYER: &str = "LstmLayer";

/// Id of one expanded gate product.
pub fn gate_id(layer: &str, timestep: u64, gate: Gate, mvm: Mvm) -> String {
    format!("{layer}.t{timestep}.{}.{}", gate.tag(), mvm.tag())
}

/// Id of the combine stage that produces `h_t` and `c_t`.
pub fn combine_id(layer: &str, timestep: u64) -> String {
    format!("{layer}.t{timestep}.combine")
}

/// Parses and validates a model document.
pub fn load_model(document: &str) -> Result<ModelGraph> {
    let doc: ModelDocument = serde_json::from_str(document).map_err(|e| Error::parse(json_field(&e), e.to_string()))?;
    from_document(&doc)
}

fn json_field(e: &serde_json::Error) -> String {
    // serde reports field names inside backticks, e.g. "missing field `id`".
    let msg = e.to_string();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "document".to_string())
}

/// Builds a graph from an in-memory document, expanding `LstmLayer` entries.
pub fn from_document(doc: &ModelDocument) -> Result<ModelGraph> {
    // Recurrent layers that get expanded, keyed by their document id.
    let mut expanded: HashMap<&str, RecurrentShape> = HashMap::new();
    let mut layers = Vec::new();

    for (i, entry) in doc.layers.iter().enumerate() {
        let at = format!("layers[{i}]");
        let bits = entry.bits.unwrap_or(DEFAULT_BITS);

        if entry.kind == LSTM_LAYER {
            let shape = recurrent_shape(entry, &at)?;
            if entry.gate.is_some() || entry.mvm.is_some() || entry.layer.is_some() || entry.timestep.is_some() {
                return Err(Error::parse(
                    format!("{at}.kind"),
                    "LstmLayer entries take no gate, mvm, layer or timestep",
                ));
            }
            if shape.timesteps == 0 {
                return Err(Error::invalid(format!("{at}.t"), "dimension must be positive"));
            }
            for t in 1..=shape.timesteps {
                let inputs: Vec<String> = entry
                    .predecessors
                    .iter()
                    .map(|p| resolve_lstm_ref(&expanded, p, Some((t, shape.timesteps))))
                    .collect();
                let step = LstmStep {
                    layer: entry.id.clone(),
                    timestep: t,
                };
                let mut gate_ids = Vec::with_capacity(8);
                for gate in Gate::ALL {
                    for mvm in Mvm::ALL {
                        let preds = match (mvm, t) {
                            (Mvm::Hidden, t) if t > 1 => vec![combine_id(&entry.id, t - 1)],
                            (Mvm::Hidden, _) => Vec::new(),
                            (Mvm::Input, _) => inputs.clone(),
                        };
                        let id = gate_id(&entry.id, t, gate, mvm);
                        gate_ids.push(id.clone());
                        layers.push(LayerDescriptor {
                            id,
                            op: LayerOp::LstmGate {
                                shape,
                                gate,
                                mvm,
                                step: step.clone(),
                            },
                            bits,
                            predecessors: preds,
                        });
                    }
                }
                layers.push(LayerDescriptor {
                    id: combine_id(&entry.id, t),
                    op: LayerOp::LstmCellCombine { shape, step },
                    bits,
                    predecessors: gate_ids,
                });
            }
            expanded.insert(entry.id.as_str(), shape);
            continue;
        }

        let kind = parse_kind(&entry.kind)
            .ok_or_else(|| Error::parse(format!("{at}.kind"), format!("unknown layer kind `{}`", entry.kind)))?;
        let op = match kind {
            LayerKind::StandardConv => LayerOp::StandardConv(conv_shape(entry, kind, &at)?),
            LayerKind::DepthwiseConv => LayerOp::DepthwiseConv(conv_shape(entry, kind, &at)?),
            LayerKind::PointwiseConv => LayerOp::PointwiseConv(conv_shape(entry, kind, &at)?),
            LayerKind::FullyConnected => LayerOp::FullyConnected(conv_shape(entry, kind, &at)?),
            LayerKind::LstmGate | LayerKind::LstmCellCombine => {
                let shape = recurrent_shape(entry, &at)?;
                let step = LstmStep {
                    layer: entry
                        .layer
                        .clone()
                        .ok_or_else(|| Error::parse(format!("{at}.layer"), "missing field"))?,
                    timestep: entry
                        .timestep
                        .ok_or_else(|| Error::parse(format!("{at}.timestep"), "missing field"))?,
                };
                if kind == LayerKind::LstmGate {
                    LayerOp::LstmGate {
                        shape,
                        gate: entry
                            .gate
                            .ok_or_else(|| Error::parse(format!("{at}.gate"), "missing field"))?,
                        mvm: entry
                            .mvm
                            .ok_or_else(|| Error::parse(format!("{at}.mvm"), "missing field"))?,
                        step,
                    }
                } else {
                    LayerOp::LstmCellCombine { shape, step }
                }
            }
        };
        let predecessors = entry
            .predecessors
            .iter()
            .map(|p| resolve_lstm_ref(&expanded, p, None))
            .collect();
        layers.push(LayerDescriptor {
            id: entry.id.clone(),
            op,
            bits,
            predecessors,
        });
    }

    ModelGraph::new(doc.name.clone(), doc.class, layers)
}

/// Maps a reference to an expanded recurrent layer onto the combine stage
/// that produces the consumed hidden state. A stacked recurrent consumer with
/// the same sequence length reads `h_t` step by step; anything else reads the
/// final state.
fn resolve_lstm_ref(expanded: &HashMap<&str, RecurrentShape>, pred: &str, consumer_step: Option<(u64, u64)>) -> String {
    match expanded.get(pred) {
        None => pred.to_string(),
        Some(shape) => match consumer_step {
            Some((t, len)) if len == shape.timesteps => combine_id(pred, t),
            _ => combine_id(pred, shape.timesteps),
        },
    }
}

fn parse_kind(s: &str) -> Option<LayerKind> {
    Some(match s {
        "StandardConv" => LayerKind::StandardConv,
        "DepthwiseConv" => LayerKind::DepthwiseConv,
        "PointwiseConv" => LayerKind::PointwiseConv,
        "FullyConnected" => LayerKind::FullyConnected,
        "LstmGate" => LayerKind::LstmGate,
        "LstmCellCombine" => LayerKind::LstmCellCombine,
        _ => return None,
    })
}

fn required(v: Option<u64>, at: &str, field: &str) -> Result<u64> {
    v.ok_or_else(|| Error::parse(format!("{at}.{field}"), "missing field"))
}

fn conv_shape(e: &LayerEntry, kind: LayerKind, at: &str) -> Result<ConvShape> {
    let ci = required(e.ci, at, "ci")?;
    if kind == LayerKind::FullyConnected {
        let co = required(e.co, at, "co")?;
        let mut s = ConvShape::dense(ci, co);
        // Spatial fields are tolerated only when they describe a 1x1 map.
        s.in_h = e.hi.unwrap_or(1);
        s.in_w = e.wi.unwrap_or(1);
        s.kernel_h = e.kh.unwrap_or(1);
        s.kernel_w = e.kw.unwrap_or(1);
        s.stride = e.stride.unwrap_or(1);
        s.out_h = e.ho.unwrap_or(1);
        s.out_w = e.wo.unwrap_or(1);
        return Ok(s);
    }
    let co = match kind {
        LayerKind::DepthwiseConv => e.co.unwrap_or(ci),
        _ => required(e.co, at, "co")?,
    };
    let (kh, kw) = match kind {
        LayerKind::PointwiseConv => (e.kh.unwrap_or(1), e.kw.unwrap_or(1)),
        _ => (required(e.kh, at, "kh")?, required(e.kw, at, "kw")?),
    };
    let hi = required(e.hi, at, "hi")?;
    let wi = required(e.wi, at, "wi")?;
    let stride = e.stride.unwrap_or(1);
    let mut s = ConvShape::new((hi, wi), ci, co, (kh, kw), stride);
    if let Some(ho) = e.ho {
        s.out_h = ho;
    }
    if let Some(wo) = e.wo {
        s.out_w = wo;
    }
    Ok(s)
}

fn recurrent_shape(e: &LayerEntry, at: &str) -> Result<RecurrentShape> {
    Ok(RecurrentShape {
        input_dim: required(e.d, at, "d")?,
        hidden_dim: required(e.h, at, "h")?,
        timesteps: required(e.t, at, "t")?,
        cells: e.c.unwrap_or(1),
    })
}

/// One layer of a stacked sub-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackLayer {
    Lstm(RecurrentShape),
    FullyConnected { inputs: u64, outputs: u64 },
}

impl StackLayer {
    fn entry(&self, id: String) -> LayerEntry {
        match *self {
            StackLayer::Lstm(shape) => LayerEntry::lstm(id, shape),
            StackLayer::FullyConnected { inputs, outputs } => LayerEntry::dense(id, inputs, outputs),
        }
    }
}

/// Builds a transducer: an encoder stack and a prediction stack feeding a
/// joint stack whose first layer consumes both.
pub fn build_transducer(
    name: &str,
    encoder: &[StackLayer],
    prediction: &[StackLayer],
    joint: &[StackLayer],
) -> Result<ModelGraph> {
    for (field, stack) in [("encoder", encoder), ("prediction", prediction), ("joint", joint)] {
        if stack.is_empty() {
            return Err(Error::invalid(field, "component needs at least one layer"));
        }
    }
    let mut entries = Vec::new();
    let mut chain = |prefix: &str, stack: &[StackLayer], first_preds: Vec<String>| -> String {
        let mut prev = first_preds;
        let mut last = String::new();
        for (i, layer) in stack.iter().enumerate() {
            let id = format!("{prefix}{i}");
            entries.push(layer.entry(id.clone()).after(prev.clone()));
            prev = vec![id.clone()];
            last = id;
        }
        last
    };
    let enc_last = chain("enc", encoder, Vec::new());
    let pred_last = chain("pred", prediction, Vec::new());
    chain("joint", joint, vec![enc_last, pred_last]);
    from_document(&ModelDocument {
        name: name.to_string(),
        class: ModelClass::Transducer,
        layers: entries,
    })
}
