//! The relevance matching network: a per-query-term feed-forward scorer
//! over matching histograms with shared weights, a softmax term gating
//! network (term-vector, idf, or uniform), gated aggregation into the
//! final score, and exact analytic gradients of the pairwise hinge loss.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};
use crate::histogram::HistogramMode;

/// Input representation fed to the matching network for each query term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Count histogram.
    Ch,
    /// Normalized histogram.
    Nh,
    /// Log-count histogram.
    Lch,
    /// Top-k strongest interactions (ablation input).
    Kmax,
}

impl InputKind {
    pub fn histogram_mode(&self) -> Option<HistogramMode> {
        match self {
            InputKind::Ch => Some(HistogramMode::Count),
            InputKind::Nh => Some(HistogramMode::Normalized),
            InputKind::Lch => Some(HistogramMode::LogCount),
            InputKind::Kmax => None,
        }
    }
}

/// Term gating network flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    /// Softmax over `w_g . term_vector`.
    TermVector,
    /// Softmax over `w_g * idf`.
    Idf,
    /// Uniform weights 1/M (no learned gate).
    Uniform,
}

/// A model variant: input representation crossed with gating flavor,
/// e.g. `LCHxIDF`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub input: InputKind,
    pub gating: Gating,
}

impl ModelVariant {
    pub fn new(input: InputKind, gating: Gating) -> Result<Self> {
        if input == InputKind::Kmax && gating != Gating::Idf {
            return Err(Error::InvalidConfig(
                "kmax input is only supported with idf gating".into(),
            ));
        }
        Ok(ModelVariant { input, gating })
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let input = match self.input {
            InputKind::Ch => "CH",
            InputKind::Nh => "NH",
            InputKind::Lch => "LCH",
            InputKind::Kmax => "KMAX",
        };
        let gating = match self.gating {
            Gating::TermVector => "TV",
            Gating::Idf => "IDF",
            Gating::Uniform => "UNI",
        };
        write!(f, "{input}x{gating}")
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.to_uppercase();
        // Split at the last x so the one inside KMAX survives.
        let (i, g) = upper.rsplit_once('X').ok_or_else(|| {
            Error::InvalidConfig(format!("variant {s:?} is not of the form INPUTxGATING"))
        })?;
        let input = match i {
            "CH" => InputKind::Ch,
            "NH" => InputKind::Nh,
            "LCH" => InputKind::Lch,
            "KMAX" => InputKind::Kmax,
            other => {
                return Err(Error::InvalidConfig(format!("unknown input kind {other:?}")));
            }
        };
        let gating = match g {
            "TV" => Gating::TermVector,
            "IDF" => Gating::Idf,
            "UNI" => Gating::Uniform,
            other => {
                return Err(Error::InvalidConfig(format!("unknown gating {other:?}")));
            }
        };
        ModelVariant::new(input, gating)
    }
}

/// Architecture and variant description, stored alongside the weights in
/// every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Node counts from the input layer to the scalar output,
    /// e.g. [30, 5, 1]. All layers apply tanh.
    pub layer_sizes: Vec<usize>,
    pub variant: ModelVariant,
    /// Term vector dimensionality; required for term-vector gating.
    pub embedding_dim: usize,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "need at least an input and an output layer".into(),
            ));
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidConfig("output layer must have 1 node".into()));
        }
        if self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("zero-size layer".into()));
        }
        if self.variant.gating == Gating::TermVector && self.embedding_dim == 0 {
            return Err(Error::InvalidConfig(
                "term-vector gating requires embedding_dim".into(),
            ));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    fn gate_len(&self) -> usize {
        match self.variant.gating {
            Gating::TermVector => self.embedding_dim,
            Gating::Idf => 1,
            Gating::Uniform => 0,
        }
    }
}

/// All learned parameters. Weight matrices are (out x in); the same
/// matrices score every query term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrmmParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Gating weight vector: length d for term-vector gating, 1 for idf,
    /// empty for uniform.
    pub gate: Array1<f64>,
}

impl DrmmParams {
    /// Symmetric uniform init with r = sqrt(6 / (fan_in + fan_out)) per
    /// layer; biases and gate start at zero so gates are uniform at step 0.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in config.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w_mat = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-r..r));
            weights.push(w_mat);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(DrmmParams {
            weights,
            biases,
            gate: Array1::zeros(config.gate_len()),
        })
    }

    pub fn zeros_like(&self) -> Self {
        DrmmParams {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            gate: Array1::zeros(self.gate.raw_dim()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
            && self.gate.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.raw_dim() == b.raw_dim())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.raw_dim() == b.raw_dim())
            && self.gate.len() == other.gate.len()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
        self.gate += &other.gate;
    }

    /// Elementwise `self *= c`.
    pub fn scale(&mut self, c: f64) {
        for a in &mut self.weights {
            *a *= c;
        }
        for a in &mut self.biases {
            *a *= c;
        }
        self.gate *= c;
    }

    /// Flat parameter vector in a fixed order (weights, biases, gate).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.weights {
            out.extend(w.iter());
        }
        for b in &self.biases {
            out.extend(b.iter());
        }
        out.extend(self.gate.iter());
        out
    }

    /// Inverse of [`flatten`](Self::flatten); shapes must match.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.flatten().len();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                expected
            )));
        }
        let mut it = flat.iter();
        for w in &mut self.weights {
            for x in w.iter_mut() {
                *x = *it.next().unwrap();
            }
        }
        for b in &mut self.biases {
            for x in b.iter_mut() {
                *x = *it.next().unwrap();
            }
        }
        for x in self.gate.iter_mut() {
            *x = *it.next().unwrap();
        }
        Ok(())
    }
}

/// Per-query-term gating input. The kind must match the model's gating.
#[derive(Debug, Clone, PartialEq)]
pub enum GateFeature {
    Vector(Array1<f64>),
    Scalar(f64),
    None,
}

/// One query term's network input plus its gating feature.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTermInput {
    pub z0: Array1<f64>,
    pub gate_feature: GateFeature,
}

/// A (query, d+, d-) training instance: gate features are shared across
/// the two documents, the per-term inputs differ.
#[derive(Debug, Clone)]
pub struct TripleInput {
    pub gate_features: Vec<GateFeature>,
    pub plus: Vec<Array1<f64>>,
    pub minus: Vec<Array1<f64>>,
}

/// Forward pass for one query term: z(l) = tanh(W(l) z(l-1) + b(l)),
/// returning the scalar z(L) in (-1, 1).
pub fn term_forward(z0: &Array1<f64>, params: &DrmmParams) -> Result<f64> {
    Ok(*forward_layers(z0, params)?.last().unwrap().first().unwrap())
}

/// Activations for every layer, input included. Used by backprop.
fn forward_layers(z0: &Array1<f64>, params: &DrmmParams) -> Result<Vec<Array1<f64>>> {
    let mut acts = Vec::with_capacity(params.weights.len() + 1);
    acts.push(z0.clone());
    for (w, b) in params.weights.iter().zip(&params.biases) {
        let prev = acts.last().unwrap();
        if w.ncols() != prev.len() {
            return Err(Error::ShapeMismatch(format!(
                "layer expects {} inputs, got {}",
                w.ncols(),
                prev.len()
            )));
        }
        let z = (w.dot(prev) + b).mapv(f64::tanh);
        acts.push(z);
    }
    Ok(acts)
}

fn gate_logit(feature: &GateFeature, gate: &Array1<f64>, gating: Gating) -> Result<f64> {
    match (gating, feature) {
        (Gating::TermVector, GateFeature::Vector(x)) => {
            if x.len() != gate.len() {
                return Err(Error::ShapeMismatch(format!(
                    "gate feature of {} vs gate weight of {}",
                    x.len(),
                    gate.len()
                )));
            }
            Ok(gate.dot(x))
        }
        (Gating::Idf, GateFeature::Scalar(x)) => Ok(gate[0] * x),
        (g, f) => Err(Error::ShapeMismatch(format!(
            "gate feature {f:?} does not match gating mode {g:?}"
        ))),
    }
}

/// Softmax aggregation weights over the query terms. Uniform gating
/// returns exactly 1/M; otherwise a max-subtracted softmax of the gate
/// logits.
pub fn gate_weights(
    features: &[GateFeature],
    params: &DrmmParams,
    gating: Gating,
) -> Result<Vec<f64>> {
    let m = features.len();
    if m == 0 {
        return Err(Error::NoQueryTerms);
    }
    if gating == Gating::Uniform {
        return Ok(vec![1.0 / m as f64; m]);
    }
    let logits: Vec<f64> = features
        .iter()
        .map(|f| gate_logit(f, &params.gate, gating))
        .collect::<Result<_>>()?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&u| (u - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Relevance score from separately held gate features and per-term
/// inputs: the gate-weighted sum of per-term network outputs. Always
/// strictly inside (-1, 1).
pub fn score_parts(
    gate_features: &[GateFeature],
    term_inputs: &[Array1<f64>],
    params: &DrmmParams,
    gating: Gating,
) -> Result<f64> {
    if gate_features.len() != term_inputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gate features vs {} term inputs",
            gate_features.len(),
            term_inputs.len()
        )));
    }
    let gates = gate_weights(gate_features, params, gating)?;
    let mut s = 0.0;
    for (z0, g) in term_inputs.iter().zip(&gates) {
        s += g * term_forward(z0, params)?;
    }
    Ok(s)
}

/// Relevance score of a bundled per-term input list.
pub fn score(inputs: &[QueryTermInput], params: &DrmmParams, gating: Gating) -> Result<f64> {
    let features: Vec<GateFeature> = inputs.iter().map(|i| i.gate_feature.clone()).collect();
    let z0s: Vec<Array1<f64>> = inputs.iter().map(|i| i.z0.clone()).collect();
    score_parts(&features, &z0s, params, gating)
}

/// Hinge loss of a triple and its exact analytic gradient with respect to
/// every parameter. When the margin is satisfied the loss is 0 and every
/// gradient entry is exactly zero.
pub fn gradients(
    triple: &TripleInput,
    params: &DrmmParams,
    gating: Gating,
) -> Result<(f64, DrmmParams)> {
    let m = triple.gate_features.len();
    if m == 0 {
        return Err(Error::NoQueryTerms);
    }
    if triple.plus.len() != m || triple.minus.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "triple with {m} gate features but {} / {} document inputs",
            triple.plus.len(),
            triple.minus.len()
        )));
    }

    let gates = gate_weights(&triple.gate_features, params, gating)?;

    let plus_acts: Vec<Vec<Array1<f64>>> = triple
        .plus
        .iter()
        .map(|z0| forward_layers(z0, params))
        .collect::<Result<_>>()?;
    let minus_acts: Vec<Vec<Array1<f64>>> = triple
        .minus
        .iter()
        .map(|z0| forward_layers(z0, params))
        .collect::<Result<_>>()?;

    let outputs = |acts: &[Vec<Array1<f64>>]| -> Vec<f64> {
        acts.iter().map(|a| a.last().unwrap()[0]).collect()
    };
    let z_plus = outputs(&plus_acts);
    let z_minus = outputs(&minus_acts);

    let s_plus: f64 = gates.iter().zip(&z_plus).map(|(g, z)| g * z).sum();
    let s_minus: f64 = gates.iter().zip(&z_minus).map(|(g, z)| g * z).sum();
    let margin = 1.0 - s_plus + s_minus;

    let mut grads = params.zeros_like();
    if margin <= 0.0 {
        return Ok((0.0, grads));
    }

    // dL/ds+ = -1, dL/ds- = +1 on the active side of the hinge.
    for (sign, acts) in [(-1.0, &plus_acts), (1.0, &minus_acts)] {
        for (term_acts, &g) in acts.iter().zip(&gates) {
            backprop_term(term_acts, sign * g, params, &mut grads);
        }
    }

    // Gate gradient: ds/dw_g = sum_i z_i(L) g_i (x_i - sum_j g_j x_j),
    // with the same features on both sides of the triple.
    match gating {
        Gating::Uniform => {}
        Gating::Idf => {
            let xs: Vec<f64> = triple
                .gate_features
                .iter()
                .map(|f| match f {
                    GateFeature::Scalar(x) => Ok(*x),
                    other => Err(Error::ShapeMismatch(format!(
                        "expected scalar gate feature, got {other:?}"
                    ))),
                })
                .collect::<Result<_>>()?;
            let xbar: f64 = gates.iter().zip(&xs).map(|(g, x)| g * x).sum();
            let mut acc = 0.0;
            for (sign, zl) in [(-1.0, &z_plus), (1.0, &z_minus)] {
                for ((&z, &g), &x) in zl.iter().zip(&gates).zip(&xs) {
                    acc += sign * z * g * (x - xbar);
                }
            }
            grads.gate[0] = acc;
        }
        Gating::TermVector => {
            let xs: Vec<&Array1<f64>> = triple
                .gate_features
                .iter()
                .map(|f| match f {
                    GateFeature::Vector(x) => Ok(x),
                    other => Err(Error::ShapeMismatch(format!(
                        "expected vector gate feature, got {other:?}"
                    ))),
                })
                .collect::<Result<_>>()?;
            let mut xbar = Array1::<f64>::zeros(params.gate.len());
            for (&g, x) in gates.iter().zip(&xs) {
                xbar.scaled_add(g, *x);
            }
            for (sign, zl) in [(-1.0, &z_plus), (1.0, &z_minus)] {
                for ((&z, &g), x) in zl.iter().zip(&gates).zip(&xs) {
                    grads.gate.scaled_add(sign * z * g, &(*x - &xbar));
                }
            }
        }
    }

    Ok((margin, grads))
}

/// Accumulate the matching-network gradient for one term of one document.
/// `dloss_dz` is dL/dz(L) for that term (sign times gate weight).
fn backprop_term(acts: &[Array1<f64>], dloss_dz: f64, params: &DrmmParams, grads: &mut DrmmParams) {
    let layers = params.weights.len();
    // delta at the output layer; tanh' = 1 - z^2.
    let z_out = &acts[layers];
    let mut delta = Array1::from_elem(1, dloss_dz * (1.0 - z_out[0] * z_out[0]));
    for l in (0..layers).rev() {
        let z_prev = &acts[l];
        let outer = delta
            .view()
            .insert_axis(Axis(1))
            .dot(&z_prev.view().insert_axis(Axis(0)));
        grads.weights[l] += &outer;
        grads.biases[l] += &delta;
        if l > 0 {
            let dz_prev = params.weights[l].t().dot(&delta);
            delta = &dz_prev * &z_prev.mapv(|z| 1.0 - z * z);
        }
    }
}

/// A trained model: configuration plus parameters, persistable as JSON.
/// Reloading reproduces scores bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrmmModel {
    pub config: NetworkConfig,
    pub params: DrmmParams,
    /// RNG seed the parameters were initialized (and trained) with.
    pub seed: u64,
}

impl DrmmModel {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let params = DrmmParams::init(&config, seed)?;
        Ok(DrmmModel {
            config,
            params,
            seed,
        })
    }

    pub fn score(&self, inputs: &[QueryTermInput]) -> Result<f64> {
        score(inputs, &self.params, self.config.variant.gating)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.params.all_finite() {
            return Err(Error::NonFiniteGradient("refusing to save model".into()));
        }
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: DrmmModel = serde_json::from_str(&read_file(path)?)?;
        model.config.validate()?;
        Ok(model)
    }
}
