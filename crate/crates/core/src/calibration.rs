//! Calibration statistics: per-channel mean absolute activations for every
//! named linear layer, from a toy model run or a stats file.
//!
//! # Stats file
//!
//! `ANYS` magic, a little-endian `u32` header length, a JSON header, then
//! the payload: for each module in header order, `len` little-endian `f32`.
//!
//! ```json
//! {"version":1,"token_count":12,"source":"toy","modules":[{"name":"l1","len":64}]}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pack::write_atomic;

pub const STATS_MAGIC: [u8; 4] = *b"ANYS";
pub const STATS_VERSION: u32 = 1;

/// `E|x_j|` per input channel, keyed by module name.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStats {
    entries: BTreeMap<String, Vec<f32>>,
    token_count: u64,
    source: String,
}

impl ActivationStats {
    pub fn new(token_count: u64, source: impl Into<String>) -> Self {
        Self {
            entries: BTreeMap::new(),
            token_count,
            source: source.into(),
        }
    }

    /// Adds (or replaces) a module's statistics. Values must be finite and
    /// non-negative.
    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f32>) -> Result<()> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidStatistic { index, value });
        }
        self.entries.insert(name.into(), values);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    /// The statistics for `name`, checked against the weight's column count.
    pub fn for_matrix(&self, name: &str, cols: usize) -> Result<&[f32]> {
        let s = self
            .get(name)
            .ok_or_else(|| Error::Malformed(format!("no statistics for module '{name}'")))?;
        if s.len() != cols {
            return Err(Error::ShapeMismatch(format!(
                "statistics for '{name}' have {} channels, weights have {cols} columns",
                s.len()
            )));
        }
        Ok(s)
    }

    pub fn modules(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Identity,
    Relu,
    Tanh,
}

impl Nonlinearity {
    fn apply(self, v: f32) -> f32 {
        match self {
            Nonlinearity::Identity => v,
            Nonlinearity::Relu => v.max(0.0),
            Nonlinearity::Tanh => v.tanh(),
        }
    }
}

/// One linear layer `y = act(x · Wᵀ)` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLayer {
    pub name: String,
    pub weight: Matrix,
    pub activation: Nonlinearity,
}

/// A stack of linear layers standing in for a model's linear modules.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    input_dim: usize,
    layers: Vec<ToyLayer>,
}

#[derive(Serialize, Deserialize)]
struct LayerSpec {
    name: String,
    rows: usize,
    cols: usize,
    weights: Vec<f32>,
    activation: Nonlinearity,
}

#[derive(Serialize, Deserialize)]
struct ModelSpec {
    input_dim: usize,
    layers: Vec<LayerSpec>,
}

impl ToyModel {
    pub fn new(input_dim: usize, layers: Vec<ToyLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("model has no layers".into()));
        }
        let mut dim = input_dim;
        for l in &layers {
            if l.weight.cols() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer '{}' expects {} inputs, previous layer gives {dim}",
                    l.name,
                    l.weight.cols()
                )));
            }
            dim = l.weight.rows();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[ToyLayer] {
        &self.layers
    }

    /// Parses the JSON model description used by the CLI:
    /// `{"input_dim": K, "layers": [{"name", "rows", "cols", "weights": [...], "activation"}]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        let layers = spec
            .layers
            .into_iter()
            .map(|l| {
                Ok(ToyLayer {
                    weight: Matrix::new(l.rows, l.cols, l.weights)?,
                    name: l.name,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.input_dim, layers)
    }

    pub fn to_json(&self) -> Result<String> {
        let spec = ModelSpec {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    name: l.name.clone(),
                    rows: l.weight.rows(),
                    cols: l.weight.cols(),
                    weights: l.weight.data().to_vec(),
                    activation: l.activation,
                })
                .collect(),
        };
        Ok(serde_json::to_string(&spec)?)
    }

    /// Inputs seen by every layer for a batch, in layer order. The first
    /// entry is `inputs` itself.
    pub fn layer_inputs(&self, inputs: &Matrix) -> Result<Vec<Matrix>> {
        if inputs.cols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "inputs have {} features, model expects {}",
                inputs.cols(),
                self.input_dim
            )));
        }
        let mut seen = Vec::with_capacity(self.layers.len());
        let mut cur = inputs.clone();
        for (idx, l) in self.layers.iter().enumerate() {
            let y = cur.matmul_transposed(&l.weight)?;
            let (r, c) = y.shape();
            let act: Vec<f32> = y.into_data().into_iter().map(|v| l.activation.apply(v)).collect();
            seen.push(cur);
            if idx + 1 < self.layers.len() {
                cur = Matrix::new(r, c, act)?;
            } else {
                break;
            }
        }
        Ok(seen)
    }
}

/// Per-channel mean of `|x|` over the rows of `x`.
pub fn mean_abs(x: &Matrix) -> Vec<f32> {
    let mut acc = vec![0.0f64; x.cols()];
    for row in x.row_iter() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += f64::from(v.abs());
        }
    }
    let m = x.rows() as f64;
    acc.into_iter().map(|a| (a / m) as f32).collect()
}

/// Runs the batch through the model and records `E|x_j|` at every layer input.
pub fn collect_stats(model: &ToyModel, inputs: &Matrix) -> Result<ActivationStats> {
    let mut stats = ActivationStats::new(inputs.rows() as u64, "toy-model");
    for (layer, x) in model.layers.iter().zip(model.layer_inputs(inputs)?) {
        stats.insert(layer.name.clone(), mean_abs(&x))?;
    }
    Ok(stats)
}

#[derive(Serialize, Deserialize)]
struct StatsHeader {
    version: u32,
    token_count: u64,
    source: String,
    modules: Vec<ModuleEntry>,
}

#[derive(Serialize, Deserialize)]
struct ModuleEntry {
    name: String,
    len: usize,
}

pub fn stats_to_bytes(stats: &ActivationStats) -> Result<Vec<u8>> {
    let header = StatsHeader {
        version: STATS_VERSION,
        token_count: stats.token_count,
        source: stats.source.clone(),
        modules: stats
            .entries
            .iter()
            .map(|(k, v)| ModuleEntry {
                name: k.clone(),
                len: v.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&STATS_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in stats.entries.values() {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn stats_from_bytes(buf: &[u8]) -> Result<ActivationStats> {
    let need = |offset: usize, n: usize| -> Result<()> {
        if buf.len() < offset + n {
            Err(Error::Truncated {
                offset: buf.len(),
                needed: offset + n - buf.len(),
            })
        } else {
            Ok(())
        }
    };
    need(0, 8)?;
    let magic: [u8; 4] = buf[..4].try_into().unwrap();
    if magic != STATS_MAGIC {
        return Err(Error::MagicMismatch { found: magic });
    }
    let hlen = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    need(8, hlen)?;
    let header: StatsHeader = serde_json::from_slice(&buf[8..8 + hlen])
        .map_err(|e| Error::Malformed(format!("stats header: {e}")))?;
    if header.version != STATS_VERSION {
        return Err(Error::UnsupportedVersion(header.version as u16));
    }
    let mut stats = ActivationStats::new(header.token_count, header.source);
    let mut pos = 8 + hlen;
    for m in header.modules {
        need(pos, m.len * 4)?;
        let values = buf[pos..pos + m.len * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += m.len * 4;
        stats.insert(m.name, values)?;
    }
    if pos != buf.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", buf.len() - pos)));
    }
    Ok(stats)
}

pub fn save_stats(stats: &ActivationStats, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &stats_to_bytes(stats)?)
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<ActivationStats> {
    stats_from_bytes(&std::fs::read(path)?)
}

const CALIBRATION_PROMPT: &str = concat!(
    "- Fiction: \"Once upon a time, a girl named Alice was living alone on an island. ",
    "One day, she met a wizard ...\"\n",
    "- News: \"The United Nations held its General Assembly meeting this year amid multiple ",
    "world crises and wars. In his speech, the General Secretary called for ...\"\n",
    "- Code: ~public static void main(String[] args) {\\n System.out.println(\"Hello world!\");\\n} ~\n",
    "- Math: (5.2 + 2.7) / 0.6 - 1.9 * 2.2 =\n",
    "- Facts: \"The capital of Egypt is Cairo. It is the largest city in the region and is home to...\"",
);

/// The single curated multi-topic calibration sample (fiction, news, code,
/// math, facts) for runtimes that export statistics from a real model.
pub fn default_prompt() -> &'static str {
    CALIBRATION_PROMPT
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_layer(k: usize) -> ToyModel {
        let w = Matrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 }).unwrap();
        ToyModel::new(
            k,
            vec![ToyLayer {
                name: "l1".into(),
                weight: w,
                activation: Nonlinearity::Identity,
            }],
        )
        .unwrap()
    }

    #[test]
    fn mean_abs_example() {
        let x = Matrix::from_rows(&[[1.0, -1.0], [3.0, -3.0]]).unwrap();
        let s = collect_stats(&single_layer(2), &x).unwrap();
        assert_eq!(s.get("l1").unwrap(), &[2.0, 2.0]);
        assert_eq!(s.token_count(), 2);
    }

    #[test]
    fn zeros_give_zero_stats() {
        let x = Matrix::zeros(3, 4).unwrap();
        let s = collect_stats(&single_layer(4), &x).unwrap();
        assert_eq!(s.get("l1").unwrap(), &[0.0; 4]);
    }

    #[test]
    fn identity_stack_passes_through() {
        let eye = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 }).unwrap();
        let layer = |n: &str| ToyLayer {
            name: n.into(),
            weight: eye.clone(),
            activation: Nonlinearity::Identity,
        };
        let m = ToyModel::new(3, vec![layer("a"), layer("b")]).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 4.0, -1.5]]).unwrap();
        let s = collect_stats(&m, &x).unwrap();
        assert_eq!(s.get("a"), s.get("b"));
    }

    #[test]
    fn later_layers_see_activated_outputs() {
        let w1 = Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]).unwrap();
        let w2 = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let m = ToyModel::new(
            2,
            vec![
                ToyLayer {
                    name: "a".into(),
                    weight: w1,
                    activation: Nonlinearity::Relu,
                },
                ToyLayer {
                    name: "b".into(),
                    weight: w2,
                    activation: Nonlinearity::Tanh,
                },
            ],
        )
        .unwrap();
        let x = Matrix::from_rows(&[[2.0, 2.0], [-2.0, -4.0]]).unwrap();
        let s = collect_stats(&m, &x).unwrap();
        // Layer a outputs relu([2,-2]) = [2,0] and relu([-2,4]) = [0,4].
        assert_eq!(s.get("b").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn model_dims_must_compose() {
        let layer = ToyLayer {
            name: "x".into(),
            weight: Matrix::zeros(2, 3).unwrap(),
            activation: Nonlinearity::Identity,
        };
        assert!(ToyModel::new(4, vec![layer]).is_err());
    }

    #[test]
    fn stats_bytes_round_trip_and_errors() {
        let mut s = ActivationStats::new(7, "unit");
        s.insert("b", vec![0.5, 1.25]).unwrap();
        s.insert("a", vec![3.0]).unwrap();
        let bytes = stats_to_bytes(&s).unwrap();
        assert_eq!(stats_from_bytes(&bytes).unwrap(), s);

        let cut = &bytes[..bytes.len() - 3];
        match stats_from_bytes(cut) {
            Err(Error::Truncated { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("expected truncation, got {other:?}"),
        }

        let mut neg = bytes.clone();
        let n = neg.len();
        neg[n - 4..].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(matches!(stats_from_bytes(&neg), Err(Error::InvalidStatistic { .. })));

        assert!(s.insert("c", vec![f32::NAN]).is_err());
    }

    #[test]
    fn prompt_constant() {
        let p = default_prompt();
        assert!(p.contains("Once upon a time, a girl named Alice"));
        assert!(p.contains("The capital of Egypt is Cairo"));
        assert_eq!(p.split_whitespace().count(), default_prompt().split_whitespace().count());
        assert_eq!(p.lines().count(), 5);
    }
}
