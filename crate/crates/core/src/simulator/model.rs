use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grad::{sigmoid, Tape, Var};
use crate::linalg::Matrix;
use crate::types::{GroundTruthPref, ItemFeatures};
use crate::{Error, Result};

const FORMAT_TAG: &str = "perfrank-relevance-model v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.w.mul_vec(input);
        out.iter_mut().zip(&self.b).for_each(|(o, b)| *o += b);
        out
    }
}

/// Feed-forward relevance scorer over the concatenation `(x, u*)`.
///
/// Widths run `2d → 4d → 2d → d → ⌈d/2⌉ → 1`, ReLU on hidden layers and a
/// sigmoid on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceModel {
    pub d: usize,
    pub layers: Vec<Layer>,
}

/// Layer widths for feature dimension `d`, input first.
pub fn layer_widths(d: usize) -> Vec<usize> {
    vec![2 * d, 4 * d, 2 * d, d, d.div_ceil(2), 1]
}

impl RelevanceModel {
    /// All weights and biases zero; outputs 0.5 everywhere.
    pub fn zeros(d: usize) -> Self {
        let w = layer_widths(d);
        let layers = w
            .windows(2)
            .map(|p| Layer {
                w: Matrix::zeros(p[1], p[0]),
                b: vec![0.0; p[1]],
            })
            .collect();
        Self { d, layers }
    }

    /// He-normal weights, zero biases.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(d);
        for layer in &mut m.layers {
            let fan_in = layer.w.cols as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            layer.w.data.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        m
    }

    /// Builds a model from explicit layers, checking the shapes.
    pub fn from_layers(d: usize, layers: Vec<Layer>) -> Result<Self> {
        let widths = layer_widths(d);
        if layers.len() != widths.len() - 1 {
            return Err(Error::ModelFormat(format!(
                "expected {} layers, got {}",
                widths.len() - 1,
                layers.len()
            )));
        }
        for (i, (layer, p)) in layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.w.rows != p[1] || layer.w.cols != p[0] || layer.b.len() != p[1] {
                return Err(Error::ModelFormat(format!(
                    "layer {i}: expected {}x{}, got {}x{} with {} biases",
                    p[1],
                    p[0],
                    layer.w.rows,
                    layer.w.cols,
                    layer.b.len()
                )));
            }
            if !layer.w.is_finite() || layer.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::ModelFormat(format!("layer {i}: non-finite weight")));
            }
        }
        Ok(Self { d, layers })
    }

    /// Pre-activations and activations of every layer, for backprop.
    pub(crate) fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(acts.last().unwrap());
            if i == last {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Output logit before the sigmoid.
    pub fn logit(&self, input: &[f64]) -> f64 {
        let mut a = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.forward(&a);
            if i != last {
                a.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        a[0]
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        sigmoid(self.logit(input))
    }

    /// Relevance of item features `x` for a user with preference `u_star`.
    pub fn score_pair(&self, x: &[f64], u_star: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: x.len() });
        }
        if u_star.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: u_star.len() });
        }
        let mut input = Vec::with_capacity(2 * self.d);
        input.extend_from_slice(x);
        input.extend_from_slice(u_star);
        Ok(self.forward(&input))
    }

    /// Writes the model as text: a version tag, `d`, then each layer's shape
    /// header followed by its weight rows and bias row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_TAG}");
        let _ = writeln!(s, "d {}", self.d);
        let _ = writeln!(s, "layers {}", self.layers.len());
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        for (i, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {i} {} {}", layer.w.rows, layer.w.cols);
            for r in 0..layer.w.rows {
                let _ = writeln!(s, "{}", join(layer.w.row(r)));
            }
            let _ = writeln!(s, "{}", join(&layer.b));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::ModelFormat(msg);
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .map(|(n, l)| (n + 1, l.trim()))
                .ok_or_else(|| bad(format!("unexpected end of file, expected {what}")))
        };
        let (_, tag) = next("version tag")?;
        if tag != FORMAT_TAG {
            return Err(bad(format!("unsupported model format `{tag}`")));
        }
        let header = |line: (usize, &str), key: &str, count: usize| -> Result<Vec<usize>> {
            let mut parts = line.1.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(format!("line {}: expected `{key}`", line.0)));
            }
            let vals: Vec<usize> = parts
                .map(|p| p.parse().map_err(|_| bad(format!("line {}: bad integer `{p}`", line.0))))
                .collect::<Result<_>>()?;
            if vals.len() != count {
                return Err(bad(format!("line {}: expected {count} values after `{key}`", line.0)));
            }
            Ok(vals)
        };
        let floats = |line: (usize, &str), want: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = line
                .1
                .split_whitespace()
                .map(|p| p.parse().map_err(|_| bad(format!("line {}: bad number `{p}`", line.0))))
                .collect::<Result<_>>()?;
            if vals.len() != want {
                return Err(bad(format!("line {}: expected {want} numbers, got {}", line.0, vals.len())));
            }
            Ok(vals)
        };
        let d = header(next("d")?, "d", 1)?[0];
        let n_layers = header(next("layers")?, "layers", 1)?[0];
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let shape = header(next("layer header")?, "layer", 3)?;
            if shape[0] != i {
                return Err(bad(format!("layer {i} header out of order")));
            }
            let (rows, cols) = (shape[1], shape[2]);
            let mut w = Matrix::zeros(rows, cols);
            for r in 0..rows {
                let row = floats(next("weight row")?, cols)?;
                w.data[r * cols..(r + 1) * cols].copy_from_slice(&row);
            }
            let b = floats(next("bias row")?, rows)?;
            layers.push(Layer { w, b });
        }
        Self::from_layers(d, layers)
    }
}

/// `𝒮(x; u*)`, the simulator's relevance for one item and one user.
pub fn relevance(model: &RelevanceModel, x: &ItemFeatures, u_star: &GroundTruthPref) -> Result<f64> {
    model.score_pair(&x.x, &u_star.u_star)
}

/// Relevance of every item in `items` for one user.
pub fn relevance_vector<'a>(
    model: &RelevanceModel,
    items: impl IntoIterator<Item = &'a [f64]>,
    u_star: &[f64],
) -> Result<Vec<f64>> {
    items.into_iter().map(|x| model.score_pair(x, u_star)).collect()
}

/// Weights of a model placed on a tape once, shared by every forward pass
/// recorded through [`TapeModel::forward`].
pub struct TapeModel {
    layers: Vec<(Var, Var)>,
}

impl TapeModel {
    pub fn new(tape: &mut Tape, model: &RelevanceModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| (tape.constant(l.w.clone()), tape.const_vec(&l.b)))
            .collect();
        Self { layers }
    }

    /// Relevance of item node `x` for preference `u_star`; the weights carry
    /// no gradient.
    pub fn forward(&self, tape: &mut Tape, x: Var, u_star: &[f64]) -> Var {
        let u = tape.const_vec(u_star);
        let mut a = tape.concat(&[x, u]);
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matvec(w, a);
            let z = tape.add(z, b);
            a = if i == last { tape.sigmoid(z) } else { tape.relu(z) };
        }
        a
    }

    /// Relevance of several item nodes, concatenated into one vector node.
    pub fn forward_many(&self, tape: &mut Tape, xs: &[Var], u_star: &[f64]) -> Var {
        let parts: Vec<Var> = xs.iter().map(|&x| self.forward(tape, x, u_star)).collect();
        tape.concat(&parts)
    }
}

/// One-off tape forward pass; see [`TapeModel`] for repeated use.
pub fn relevance_node(tape: &mut Tape, model: &RelevanceModel, x: Var, u_star: &[f64]) -> Var {
    TapeModel::new(tape, model).forward(tape, x, u_star)
}
