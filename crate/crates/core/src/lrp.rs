//! Layer-wise relevance propagation.
//!
//! A relevance pass starts from the selected output score `f(x)` and walks
//! the network in reverse. Linear layers (dense and convolution, the latter
//! seen as a sparse linear map over its patch table) redistribute relevance
//! in proportion to the weighted activations `z_ij = a_i · w_ij`, using either
//! the epsilon rule or the alpha-beta rule. ReLU passes relevance straight
//! through, max-pooling gives each window's relevance to its winner, and
//! flatten only reshapes.
//!
//! For bias-free networks with `epsilon = 0` (no vanishing denominators) or
//! `alpha + beta = 1`, every layer's relevance sums to `f(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{Conv2d, Dense, Layer, PAD};
use crate::network::{argmax, ActivationTrace, Network};
use crate::tensor::Tensor;

/// Default stabilizer for the epsilon rule.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Tolerance used when deciding whether `alpha + beta` equals one.
const UNIT_MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Rule {
    /// `R_i = Σ_j z_ij / (Σ_i' z_i'j + ε·sign(Σ_i' z_i'j)) · R_j`, with `sign(0) = +1`.
    Epsilon { epsilon: f64 },
    /// `R_i = Σ_j (α·z⁺_ij / Σ z⁺_·j + β·z⁻_ij / Σ z⁻_·j) · R_j`.
    AlphaBeta { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasPolicy {
    /// Biases are left out of every denominator.
    Ignore,
    /// The bias joins the denominator as a virtual input of activation 1;
    /// the share it would receive is dropped.
    Absorb,
}

/// What the alpha-beta rule does with a column whose positive (or negative)
/// weighted activations are all zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OneSided {
    /// The empty side's coefficient moves to the other side, so the column
    /// still hands down `(α + β)·R_j`.
    Fold,
    /// The empty side contributes nothing.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    pub rule: Rule,
    pub bias_policy: BiasPolicy,
    pub renormalize: bool,
    pub one_sided: OneSided,
    /// Index into the flattened network output whose score is explained.
    pub output_selector: usize,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            rule: Rule::AlphaBeta {
                alpha: 2.0,
                beta: -1.0,
            },
            bias_policy: BiasPolicy::Absorb,
            renormalize: true,
            one_sided: OneSided::Fold,
            output_selector: 0,
        }
    }
}

impl LrpConfig {
    pub fn epsilon(epsilon: f64) -> Self {
        Self {
            rule: Rule::Epsilon { epsilon },
            ..Self::default()
        }
    }

    pub fn alpha_beta(alpha: f64, beta: f64) -> Self {
        Self {
            rule: Rule::AlphaBeta { alpha, beta },
            ..Self::default()
        }
    }

    pub fn with_bias_policy(mut self, policy: BiasPolicy) -> Self {
        self.bias_policy = policy;
        self
    }

    pub fn with_renormalize(mut self, on: bool) -> Self {
        self.renormalize = on;
        self
    }

    pub fn with_output(mut self, index: usize) -> Self {
        self.output_selector = index;
        self
    }

    /// Whether the rule redistributes exactly the relevance it receives.
    pub fn is_conserving(&self) -> bool {
        match self.rule {
            Rule::Epsilon { epsilon } => epsilon == 0.0,
            Rule::AlphaBeta { alpha, beta } => (alpha + beta - 1.0).abs() <= UNIT_MASS_TOL,
        }
    }

    /// Checks parameter ranges. With `strict_conservation`, alpha-beta
    /// configurations must also satisfy `alpha + beta = 1`.
    pub fn validate(&self, strict_conservation: bool) -> Result<()> {
        match self.rule {
            Rule::Epsilon { epsilon } => {
                if !epsilon.is_finite() || epsilon < 0.0 {
                    return Err(Error::Config(format!(
                        "epsilon must be finite and non-negative, got {epsilon}"
                    )));
                }
            }
            Rule::AlphaBeta { alpha, beta } => {
                if !alpha.is_finite() || !beta.is_finite() {
                    return Err(Error::Config(format!(
                        "alpha and beta must be finite, got alpha={alpha}, beta={beta}"
                    )));
                }
                if strict_conservation && (alpha + beta - 1.0).abs() > UNIT_MASS_TOL {
                    return Err(Error::Config(format!(
                        "strict conservation requires alpha + beta = 1, got {}",
                        alpha + beta
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Column-wise access to the weighted activations of a linear layer.
///
/// Rows are lower-layer neurons, columns upper-layer neurons. Dense layers,
/// convolutions and explicit matrices all present themselves this way so
/// one redistribution routine serves them all.
pub trait WeightedActivations {
    fn lower_len(&self) -> usize;
    fn upper_len(&self) -> usize;
    /// Clears `out`, fills it with `(i, z_ij)` for every structural entry of
    /// column `j`, and returns the column's bias term.
    fn column(&self, j: usize, out: &mut Vec<(usize, f64)>) -> f64;
}

/// An explicit `lower × upper` matrix of weighted activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ZMatrix {
    z: Tensor,
    bias: Vec<f64>,
}

impl ZMatrix {
    /// `z` must be 2-D (`lower × upper`). `bias`, when given, has one entry
    /// per column.
    pub fn new(z: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        if z.shape().len() != 2 {
            return Err(Error::Config(format!("z must be 2-D, got {:?}", z.shape())));
        }
        let upper = z.shape()[1];
        let bias = bias.unwrap_or_else(|| vec![0.0; upper]);
        if bias.len() != upper {
            return Err(Error::Config(format!(
                "bias has {} entries for {upper} columns",
                bias.len()
            )));
        }
        Ok(Self { z, bias })
    }
}

impl WeightedActivations for ZMatrix {
    fn lower_len(&self) -> usize {
        self.z.shape()[0]
    }

    fn upper_len(&self) -> usize {
        self.z.shape()[1]
    }

    fn column(&self, j: usize, out: &mut Vec<(usize, f64)>) -> f64 {
        out.clear();
        let upper = self.upper_len();
        out.extend((0..self.lower_len()).map(|i| (i, self.z.data()[i * upper + j])));
        self.bias[j]
    }
}

struct DenseView<'a> {
    layer: &'a Dense,
    input: &'a [f64],
}

impl WeightedActivations for DenseView<'_> {
    fn lower_len(&self) -> usize {
        self.layer.inputs()
    }

    fn upper_len(&self) -> usize {
        self.layer.outputs()
    }

    fn column(&self, j: usize, out: &mut Vec<(usize, f64)>) -> f64 {
        out.clear();
        let n = self.layer.inputs();
        let row = &self.layer.weight.data()[j * n..(j + 1) * n];
        out.extend(row.iter().zip(self.input).enumerate().map(|(i, (w, a))| (i, a * w)));
        self.layer.bias[j]
    }
}

struct ConvView<'a> {
    layer: &'a Conv2d,
    input: &'a [f64],
    table: Vec<usize>,
    positions: usize,
}

impl WeightedActivations for ConvView<'_> {
    fn lower_len(&self) -> usize {
        self.input.len()
    }

    fn upper_len(&self) -> usize {
        self.layer.out_channels() * self.positions
    }

    fn column(&self, j: usize, out: &mut Vec<(usize, f64)>) -> f64 {
        out.clear();
        let taps = self.layer.taps();
        let (oc, p) = (j / self.positions, j % self.positions);
        let filter = &self.layer.kernel.data()[oc * taps..(oc + 1) * taps];
        let patch = &self.table[p * taps..(p + 1) * taps];
        out.extend(
            patch
                .iter()
                .zip(filter)
                .filter(|(&idx, _)| idx != PAD)
                .map(|(&idx, &w)| (idx, self.input[idx] * w)),
        );
        self.layer.bias[oc]
    }
}

/// Result of redistributing one linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Redistributed {
    pub relevance: Vec<f64>,
    /// Columns carrying nonzero relevance whose denominator vanished; their
    /// relevance could not be handed down.
    pub dropped_columns: Vec<usize>,
}

/// Redistributes upper-layer relevance onto the lower layer of a linear map.
pub fn redistribute_linear<W: WeightedActivations + ?Sized>(
    z: &W,
    r_upper: &[f64],
    cfg: &LrpConfig,
) -> Result<Redistributed> {
    if r_upper.len() != z.upper_len() {
        return Err(Error::Config(format!(
            "upper relevance has {} entries for {} columns",
            r_upper.len(),
            z.upper_len()
        )));
    }
    cfg.validate(false)?;
    let absorb = cfg.bias_policy == BiasPolicy::Absorb;
    let mut relevance = vec![0.0; z.lower_len()];
    let mut dropped_columns = Vec::new();
    let mut column = Vec::new();

    for (j, &rj) in r_upper.iter().enumerate() {
        if rj == 0.0 {
            continue;
        }
        let bias = z.column(j, &mut column);
        match cfg.rule {
            Rule::Epsilon { epsilon } => {
                let mut s: f64 = column.iter().map(|&(_, zij)| zij).sum();
                if absorb {
                    s += bias;
                }
                let sign = if s >= 0.0 { 1.0 } else { -1.0 };
                let denom = s + epsilon * sign;
                if denom == 0.0 {
                    dropped_columns.push(j);
                    continue;
                }
                let factor = rj / denom;
                for &(i, zij) in &column {
                    relevance[i] += zij * factor;
                }
            }
            Rule::AlphaBeta { alpha, beta } => {
                let (mut pos, mut neg) = column.iter().fold((0.0, 0.0), |(p, n), &(_, zij)| {
                    (p + zij.max(0.0), n + zij.min(0.0))
                });
                if absorb {
                    pos += bias.max(0.0);
                    neg += bias.min(0.0);
                }
                let (a, b) = match (pos > 0.0, neg < 0.0) {
                    (true, true) => (alpha, beta),
                    (false, false) => {
                        dropped_columns.push(j);
                        continue;
                    }
                    (true, false) => match cfg.one_sided {
                        OneSided::Fold => (alpha + beta, 0.0),
                        OneSided::Drop => (alpha, 0.0),
                    },
                    (false, true) => match cfg.one_sided {
                        OneSided::Fold => (0.0, alpha + beta),
                        OneSided::Drop => (0.0, beta),
                    },
                };
                let pos_factor = if pos > 0.0 { a * rj / pos } else { 0.0 };
                let neg_factor = if neg < 0.0 { b * rj / neg } else { 0.0 };
                for &(i, zij) in &column {
                    if zij > 0.0 {
                        relevance[i] += zij * pos_factor;
                    } else if zij < 0.0 {
                        relevance[i] += zij * neg_factor;
                    }
                }
            }
        }
    }
    Ok(Redistributed {
        relevance,
        dropped_columns,
    })
}

/// Winner-take-all: the whole of `r_out` goes to the largest entry, ties
/// broken by the lowest flat index.
pub fn redistribute_maxpool(window_values: &[f64], r_out: f64) -> Vec<f64> {
    assert!(!window_values.is_empty(), "pooling window must be nonempty");
    let taps: Vec<usize> = (0..window_values.len()).collect();
    let mut out = vec![0.0; window_values.len()];
    out[argmax(window_values, &taps)] = r_out;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    /// Relevance lost because a column's denominator vanished.
    ZeroDenominator { layer: usize, columns: usize },
    /// A layer summed to exactly zero so it could not be rescaled.
    ZeroLayerSum { layer: usize },
}

/// Per-layer relevance from one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    /// `layers[l]` is shaped like the input of layer `l`; entry 0 is the
    /// input heatmap.
    layers: Vec<Tensor>,
    /// Relevance at the network output (the selected score, zero elsewhere).
    top: Tensor,
    score: f64,
    violations: Vec<Violation>,
}

impl RelevanceMap {
    pub fn heatmap(&self) -> &Tensor {
        &self.layers[0]
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn top(&self) -> &Tensor {
        &self.top
    }

    /// The explained score `f(x)`.
    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn layer_sums(&self) -> Vec<f64> {
        self.layers.iter().map(Tensor::sum).collect()
    }

    /// Flat little-endian `f64` dump of every layer plus its JSON index.
    pub fn export(&self, net: &Network) -> Result<(Vec<u8>, String)> {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.layers.len());
        for (l, rel) in self.layers.iter().enumerate() {
            let kind = net.layers().get(l).map(Layer::kind).unwrap_or("output");
            entries.push(ExportEntry {
                index: l,
                name: format!("{kind}_{l}.input"),
                shape: rel.shape().to_vec(),
                sum: rel.sum(),
                offset_bytes: blob.len(),
                len: rel.len(),
            });
            for v in rel.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let index = ExportIndex {
            score: self.score,
            dtype: "f64-le".into(),
            layers: entries,
            violations: self.violations.clone(),
        };
        let mut json = serde_json::to_string_pretty(&index)?;
        json.push('\n');
        Ok((blob, json))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportIndex {
    pub score: f64,
    pub dtype: String,
    pub layers: Vec<ExportEntry>,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportEntry {
    pub index: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub sum: f64,
    pub offset_bytes: usize,
    pub len: usize,
}

/// Runs the backward relevance pass over a recorded forward trace.
pub fn relprop(net: &Network, trace: &ActivationTrace, cfg: &LrpConfig) -> Result<RelevanceMap> {
    cfg.validate(false)?;
    check_trace(net, trace)?;
    let output = trace.output();
    if cfg.output_selector >= output.len() {
        return Err(Error::Config(format!(
            "output selector {} out of range for {} outputs",
            cfg.output_selector,
            output.len()
        )));
    }
    let score = output.data()[cfg.output_selector];
    let mut top = vec![0.0; output.len()];
    top[cfg.output_selector] = score;
    let top = Tensor::from_parts(output.shape().to_vec(), top);

    let mut violations = Vec::new();
    let mut current = top.clone();
    let mut layers = Vec::with_capacity(net.layers().len());
    for (l, layer) in net.layers().iter().enumerate().rev() {
        let input = trace.input(l);
        let lower = match layer {
            Layer::Dense(d) => {
                let view = DenseView {
                    layer: d,
                    input: input.data(),
                };
                linear_step(&view, l, &current, input, cfg, &mut violations)?
            }
            Layer::Conv2d(c) => {
                let view = ConvView {
                    layer: c,
                    input: input.data(),
                    table: c.patch_table(input.shape()),
                    positions: current.shape()[1] * current.shape()[2],
                };
                linear_step(&view, l, &current, input, cfg, &mut violations)?
            }
            Layer::MaxPool2d(p) => {
                let x = input.data();
                let mut rel = vec![0.0; input.len()];
                for (w, taps) in p.windows(input.shape()).iter().enumerate() {
                    let r = current.data()[w];
                    if r != 0.0 {
                        rel[taps[argmax(x, taps)]] += r;
                    }
                }
                Tensor::from_parts(input.shape().to_vec(), rel)
            }
            Layer::Relu => current.clone(),
            Layer::Flatten => Tensor::from_parts(input.shape().to_vec(), current.data().to_vec()),
        };
        let lower = if cfg.renormalize {
            rescale_layer(lower, l, score, &mut violations)
        } else {
            lower
        };
        layers.push(lower.clone());
        current = lower;
    }
    layers.reverse();
    if let Some(l) = layers.iter().position(|t| t.first_non_finite().is_some()) {
        return Err(Error::NonFiniteActivation { layer: l });
    }
    Ok(RelevanceMap {
        layers,
        top,
        score,
        violations,
    })
}

/// Forward pass followed by a relevance pass.
pub fn explain(net: &Network, x: &Tensor, cfg: &LrpConfig) -> Result<RelevanceMap> {
    let trace = net.forward(x)?;
    relprop(net, &trace, cfg)
}

fn linear_step<W: WeightedActivations>(
    view: &W,
    layer: usize,
    upper: &Tensor,
    input: &Tensor,
    cfg: &LrpConfig,
    violations: &mut Vec<Violation>,
) -> Result<Tensor> {
    let out = redistribute_linear(view, upper.data(), cfg)?;
    if !out.dropped_columns.is_empty() {
        violations.push(Violation::ZeroDenominator {
            layer,
            columns: out.dropped_columns.len(),
        });
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out.relevance))
}

fn check_trace(net: &Network, trace: &ActivationTrace) -> Result<()> {
    if trace.len() != net.layers().len() {
        return Err(Error::TraceMismatch(format!(
            "trace has {} layers, network has {}",
            trace.len(),
            net.layers().len()
        )));
    }
    for (l, a) in trace.activations().iter().enumerate() {
        if a.shape() != net.shape_at(l) {
            return Err(Error::TraceMismatch(format!(
                "activation {l} has shape {:?}, network expects {:?}",
                a.shape(),
                net.shape_at(l)
            )));
        }
    }
    Ok(())
}

/// Rescales one layer so it sums to `target`. A layer already within a few
/// ulps of the target is returned untouched.
fn rescale_layer(layer: Tensor, index: usize, target: f64, violations: &mut Vec<Violation>) -> Tensor {
    let sum = layer.sum();
    if (sum - target).abs() <= 4.0 * f64::EPSILON * target.abs() {
        return layer;
    }
    if sum == 0.0 {
        violations.push(Violation::ZeroLayerSum { layer: index });
        return layer;
    }
    layer.scale(target / sum)
}

/// Rescales every layer of `rel` multiplicatively so each sums to `target`.
///
/// Layers summing to exactly zero cannot be rescaled; they are left as they
/// are and flagged in the returned map's violations.
pub fn renormalize(rel: &RelevanceMap, target: f64) -> RelevanceMap {
    let mut violations = rel.violations.clone();
    let layers = rel
        .layers
        .iter()
        .enumerate()
        .map(|(l, t)| rescale_layer(t.clone(), l, target, &mut violations))
        .collect();
    RelevanceMap {
        layers,
        top: rel.top.clone(),
        score: rel.score,
        violations,
    }
}

/// Floor on the reference magnitude when computing relative drift.
pub const DRIFT_FLOOR: f64 = f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub layer_sums: Vec<f64>,
    pub reference: f64,
    /// `max_l |sum_l − f(x)| / max(|f(x)|, DRIFT_FLOOR)`.
    pub drift: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn check_conservation(rel: &RelevanceMap, fx: f64, tol: f64) -> ConservationReport {
    let layer_sums = rel.layer_sums();
    let scale = fx.abs().max(DRIFT_FLOOR);
    let drift = layer_sums
        .iter()
        .map(|s| (s - fx).abs() / scale)
        .fold(0.0, f64::max);
    ConservationReport {
        layer_sums,
        reference: fx,
        drift,
        tolerance: tol,
        passed: drift <= tol,
    }
}
