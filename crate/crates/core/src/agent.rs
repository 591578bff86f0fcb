//! Inference for the configuration agent: a three-layer ReLU encoder with a
//! classification head (which scorer to use) and a two-output regression
//! head (iterations and cost coefficient).
//!
//! Weights come from a single JSON document produced by the trainer:
//!
//! ```json
//! {"version": 1, "dims": [1024, 512, 256, 128], "labels": ["additive", ...],
//!  "regression_scale": {"max_iterations": 50, "lambda_max": 0.5},
//!  "tensors": {"W1": {"shape": [512, 1024], "data": [...]}, "b1": ..., ...},
//!  "fixtures": [{"embedding": [...], "label_scores": [...], "regression_raw": [...]}]}
//! ```
//!
//! Matrices are row-major `[out, in]`; biases have shape `[out]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Query;
use crate::mcts::SearchConfig;

pub const WEIGHTS_VERSION: u32 = 1;
pub const DEFAULT_DIMS: [usize; 4] = [1024, 512, 256, 128];

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("cannot read weight file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed weight file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported weight file version {found} (expected {WEIGHTS_VERSION})")]
    Version { found: u32 },
    #[error("dims must list 4 positive sizes, got {0:?}")]
    Dims(Vec<usize>),
    #[error("missing tensor {0}")]
    MissingTensor(&'static str),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {name} declares {declared} values but holds {found}")]
    DataLength {
        name: String,
        declared: usize,
        found: usize,
    },
    #[error("tensor {0} contains a non-finite value")]
    NonFinite(String),
    #[error("need at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("invalid regression scale: {0}")]
    Scale(String),
    #[error("embedding has dimension {found}, agent expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("fixture {index}: {field} differs by {error:e} (tolerance {tolerance:e})")]
    FixtureMismatch {
        index: usize,
        field: &'static str,
        error: f64,
        tolerance: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionScale {
    pub max_iterations: u32,
    pub lambda_max: f64,
}

/// A reference input and the outputs the exporter computed for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub embedding: Vec<f64>,
    pub label_scores: Vec<f64>,
    pub regression_raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightFile {
    version: u32,
    dims: Vec<usize>,
    labels: Vec<String>,
    regression_scale: RegressionScale,
    tensors: BTreeMap<String, Tensor>,
    #[serde(default)]
    fixtures: Vec<Fixture>,
}

/// A fully connected layer: `out = W x + b` with `W` row-major `[rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.cols);
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub feature: Vec<f64>,
    pub label_scores: Vec<f64>,
    pub regression_raw: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentPrediction {
    pub label: String,
    pub label_scores: Vec<f64>,
    pub iterations: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentWeights {
    pub dims: [usize; 4],
    /// Encoder layers, input to feature.
    pub layers: [Dense; 3],
    pub classifier: Dense,
    pub regressor: Dense,
    pub labels: Vec<String>,
    pub regression_scale: RegressionScale,
    pub fixtures: Vec<Fixture>,
}

const LAYER_NAMES: [(&str, &str); 3] = [("W1", "b1"), ("W2", "b2"), ("W3", "b3")];

impl AgentWeights {
    /// All-zero weights for the given layer sizes.
    pub fn zeros(dims: [usize; 4], labels: Vec<String>, regression_scale: RegressionScale) -> Self {
        AgentWeights {
            dims,
            layers: [
                Dense::zeros(dims[1], dims[0]),
                Dense::zeros(dims[2], dims[1]),
                Dense::zeros(dims[3], dims[2]),
            ],
            classifier: Dense::zeros(labels.len(), dims[3]),
            regressor: Dense::zeros(2, dims[3]),
            labels,
            regression_scale,
            fixtures: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = fs::read_to_string(path).map_err(|source| AgentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let file: WeightFile = serde_json::from_str(text)?;
        if file.version != WEIGHTS_VERSION {
            return Err(AgentError::Version {
                found: file.version,
            });
        }
        let dims: [usize; 4] = file
            .dims
            .clone()
            .try_into()
            .map_err(|_| AgentError::Dims(file.dims.clone()))?;
        if dims.contains(&0) {
            return Err(AgentError::Dims(file.dims));
        }
        if file.labels.len() < 2 {
            return Err(AgentError::TooFewLabels(file.labels.len()));
        }
        let scale = file.regression_scale;
        if scale.max_iterations < 1 || !scale.lambda_max.is_finite() || scale.lambda_max < 0.0 {
            return Err(AgentError::Scale(format!("{scale:?}")));
        }
        let k = file.labels.len();
        let mut tensors = file.tensors;
        let mut take = |w: &'static str, b: &'static str, rows: usize, cols: usize| {
            Ok::<_, AgentError>(Dense {
                rows,
                cols,
                weights: take_tensor(&mut tensors, w, &[rows, cols])?,
                bias: take_tensor(&mut tensors, b, &[rows])?,
            })
        };
        let layers = [
            take(LAYER_NAMES[0].0, LAYER_NAMES[0].1, dims[1], dims[0])?,
            take(LAYER_NAMES[1].0, LAYER_NAMES[1].1, dims[2], dims[1])?,
            take(LAYER_NAMES[2].0, LAYER_NAMES[2].1, dims[3], dims[2])?,
        ];
        let classifier = take("Wc", "bc", k, dims[3])?;
        let regressor = take("Wr", "br", 2, dims[3])?;

        for (i, f) in file.fixtures.iter().enumerate() {
            let name = format!("fixtures[{i}]");
            check_len(&format!("{name}.embedding"), f.embedding.len(), dims[0])?;
            check_len(&format!("{name}.label_scores"), f.label_scores.len(), k)?;
            check_len(&format!("{name}.regression_raw"), f.regression_raw.len(), 2)?;
            let values = f
                .embedding
                .iter()
                .chain(&f.label_scores)
                .chain(&f.regression_raw);
            if values.into_iter().any(|v| !v.is_finite()) {
                return Err(AgentError::NonFinite(name));
            }
        }

        Ok(AgentWeights {
            dims,
            layers,
            classifier,
            regressor,
            labels: file.labels,
            regression_scale: scale,
            fixtures: file.fixtures,
        })
    }

    /// Canonical JSON: fixed key order and shortest round-trip floats, so
    /// load followed by export reproduces the file byte for byte.
    pub fn to_json(&self) -> String {
        let mut tensors = BTreeMap::new();
        let dense = [
            (&self.layers[0], LAYER_NAMES[0]),
            (&self.layers[1], LAYER_NAMES[1]),
            (&self.layers[2], LAYER_NAMES[2]),
            (&self.classifier, ("Wc", "bc")),
            (&self.regressor, ("Wr", "br")),
        ];
        for (layer, (w, b)) in dense {
            tensors.insert(
                w.to_string(),
                Tensor {
                    shape: vec![layer.rows, layer.cols],
                    data: layer.weights.clone(),
                },
            );
            tensors.insert(
                b.to_string(),
                Tensor {
                    shape: vec![layer.rows],
                    data: layer.bias.clone(),
                },
            );
        }
        let file = WeightFile {
            version: WEIGHTS_VERSION,
            dims: self.dims.to_vec(),
            labels: self.labels.clone(),
            regression_scale: self.regression_scale,
            tensors,
            fixtures: self.fixtures.clone(),
        };
        serde_json::to_string(&file).expect("weights serialize")
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        fs::write(path, self.to_json()).map_err(|source| AgentError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn forward(&self, embedding: &[f64]) -> Result<AgentOutput, AgentError> {
        if embedding.len() != self.dims[0] {
            return Err(AgentError::InputDimension {
                expected: self.dims[0],
                found: embedding.len(),
            });
        }
        let h1 = relu(self.layers[0].apply(embedding));
        let h2 = relu(self.layers[1].apply(&h1));
        let feature = relu(self.layers[2].apply(&h2));
        let label_scores = self.classifier.apply(&feature);
        let r = self.regressor.apply(&feature);
        Ok(AgentOutput {
            feature,
            label_scores,
            regression_raw: [r[0], r[1]],
        })
    }

    /// Maps forward outputs to a scorer label and search settings.
    pub fn interpret(&self, output: &AgentOutput) -> AgentPrediction {
        let mut best = 0;
        for (i, s) in output.label_scores.iter().enumerate() {
            if *s > output.label_scores[best] {
                best = i;
            }
        }
        let max_iterations = self.regression_scale.max_iterations as f64;
        let iterations = (sigmoid(output.regression_raw[0]) * max_iterations)
            .round()
            .clamp(1.0, max_iterations) as usize;
        let lambda_max = self.regression_scale.lambda_max;
        let lambda = (sigmoid(output.regression_raw[1]) * lambda_max).clamp(0.0, lambda_max);
        AgentPrediction {
            label: self.labels[best].clone(),
            label_scores: output.label_scores.clone(),
            iterations,
            lambda,
        }
    }

    pub fn predict(&self, query: &Query) -> Result<AgentPrediction, AgentError> {
        let x: Vec<f64> = query.embedding.iter().map(|&v| f64::from(v)).collect();
        Ok(self.interpret(&self.forward(&x)?))
    }

    /// Returns `base` with scorer, iterations and cost coefficient replaced
    /// by the agent's prediction. Budget and exploration are kept.
    pub fn predict_config(
        &self,
        query: &Query,
        base: &SearchConfig,
    ) -> Result<SearchConfig, AgentError> {
        let p = self.predict(query)?;
        Ok(SearchConfig {
            scorer: p.label,
            iterations: p.iterations,
            cost_coefficient: p.lambda,
            ..base.clone()
        })
    }

    /// Runs every embedded fixture and checks outputs within `tolerance`.
    pub fn verify_fixtures(&self, tolerance: f64) -> Result<usize, AgentError> {
        for (index, fixture) in self.fixtures.iter().enumerate() {
            let out = self.forward(&fixture.embedding)?;
            let pairs = [
                (
                    "label_scores",
                    out.label_scores.as_slice(),
                    fixture.label_scores.as_slice(),
                ),
                (
                    "regression_raw",
                    &out.regression_raw[..],
                    fixture.regression_raw.as_slice(),
                ),
            ];
            for (field, got, want) in pairs {
                let error = got
                    .iter()
                    .zip(want)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if error > tolerance {
                    return Err(AgentError::FixtureMismatch {
                        index,
                        field,
                        error,
                        tolerance,
                    });
                }
            }
        }
        Ok(self.fixtures.len())
    }

    /// Appends a fixture computed with this engine's forward pass.
    pub fn push_fixture(&mut self, embedding: Vec<f64>) -> Result<(), AgentError> {
        let out = self.forward(&embedding)?;
        self.fixtures.push(Fixture {
            embedding,
            label_scores: out.label_scores,
            regression_raw: out.regression_raw.to_vec(),
        });
        Ok(())
    }
}

fn check_len(name: &str, found: usize, expected: usize) -> Result<(), AgentError> {
    if found != expected {
        return Err(AgentError::Shape {
            name: name.to_string(),
            expected: vec![expected],
            found: vec![found],
        });
    }
    Ok(())
}

fn take_tensor(
    tensors: &mut BTreeMap<String, Tensor>,
    name: &'static str,
    shape: &[usize],
) -> Result<Vec<f64>, AgentError> {
    let tensor = tensors
        .remove(name)
        .ok_or(AgentError::MissingTensor(name))?;
    if tensor.shape != shape {
        return Err(AgentError::Shape {
            name: name.to_string(),
            expected: shape.to_vec(),
            found: tensor.shape,
        });
    }
    let declared: usize = shape.iter().product();
    if tensor.data.len() != declared {
        return Err(AgentError::DataLength {
            name: name.to_string(),
            declared,
            found: tensor.data.len(),
        });
    }
    if tensor.data.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::NonFinite(name.to_string()));
    }
    Ok(tensor.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SMALL: [usize; 4] = [8, 6, 5, 4];

    fn labels() -> Vec<String> {
        vec!["additive".into(), "coverage".into(), "order".into()]
    }

    fn scale() -> RegressionScale {
        RegressionScale {
            max_iterations: 50,
            lambda_max: 0.5,
        }
    }

    fn random_weights(dims: [usize; 4], seed: u64) -> AgentWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = AgentWeights::zeros(dims, labels(), scale());
        let layers = w
            .layers
            .iter_mut()
            .chain([&mut w.classifier, &mut w.regressor]);
        for layer in layers {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        w
    }

    fn output(label_scores: Vec<f64>, r: [f64; 2]) -> AgentOutput {
        AgentOutput {
            feature: vec![],
            label_scores,
            regression_raw: r,
        }
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let w = AgentWeights::zeros(SMALL, labels(), scale());
        let out = w.forward(&[0.3; 8]).unwrap();
        assert!(out.feature.iter().all(|&v| v == 0.0));
        assert_eq!(out.label_scores, vec![0.0; 3]);
        assert_eq!(out.regression_raw, [0.0, 0.0]);
    }

    #[test]
    fn relu_clamps_negative_pre_activations() {
        let mut w = AgentWeights::zeros([2, 2, 2, 2], labels(), scale());
        for layer in &mut w.layers {
            layer.weights = vec![1.0, 0.0, 0.0, 1.0];
        }
        w.layers[0].bias = vec![-5.0, 0.0];
        let out = w.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(out.feature, vec![0.0, 2.0]);
    }

    #[test]
    fn interpret_examples() {
        let w = AgentWeights::zeros(SMALL, labels(), scale());
        let p = w.interpret(&output(vec![0.0; 3], [0.0, 0.0]));
        assert_eq!(p.iterations, 25);
        assert_eq!(p.lambda, 0.25);
        assert_eq!(
            w.interpret(&output(vec![0.1, 0.2, 0.9], [0.0; 2])).label,
            "order"
        );
        assert_eq!(
            w.interpret(&output(vec![0.7, 0.7, 0.1], [0.0; 2])).label,
            "additive"
        );
        let low = w.interpret(&output(vec![0.0; 3], [-100.0, -100.0]));
        assert_eq!(low.iterations, 1);
        assert!(low.lambda < 1e-40);
        let high = w.interpret(&output(vec![0.0; 3], [100.0, 100.0]));
        assert_eq!(high.iterations, 50);
        assert_eq!(high.lambda, 0.5);
    }

    #[test]
    fn predict_config_overrides_only_predicted_fields() {
        let mut w = AgentWeights::zeros(SMALL, labels(), scale());
        w.classifier.bias = vec![0.0, 1.0, 0.0];
        let q = Query::new("q", "anything", 8);
        let base = SearchConfig {
            budget: 333,
            exploration: 1.7,
            ..SearchConfig::default()
        };
        let cfg = w.predict_config(&q, &base).unwrap();
        assert_eq!(cfg.scorer, "coverage");
        assert_eq!(cfg.iterations, 25);
        assert_eq!(cfg.cost_coefficient, 0.25);
        assert_eq!((cfg.budget, cfg.exploration), (333, 1.7));
        assert!(w.predict(&Query::new("q", "x", 9)).is_err());
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let mut w = random_weights(SMALL, 3);
        w.push_fixture(vec![0.25; 8]).unwrap();
        let text = w.to_json();
        let loaded = AgentWeights::from_json(&text).unwrap();
        assert_eq!(loaded, w);
        assert_eq!(loaded.to_json(), text);
        assert_eq!(loaded.verify_fixtures(1e-12).unwrap(), 1);
    }

    #[test]
    fn loader_names_the_bad_tensor() {
        let w = random_weights(SMALL, 4);
        let mut doc: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        doc["tensors"]["W2"]["shape"] = serde_json::json!([7, 6]);
        match AgentWeights::from_json(&doc.to_string()) {
            Err(AgentError::Shape { name, .. }) => assert_eq!(name, "W2"),
            other => panic!("unexpected {other:?}"),
        }

        let mut doc: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        doc["tensors"]["b3"]["data"].as_array_mut().unwrap().pop();
        assert!(matches!(
            AgentWeights::from_json(&doc.to_string()),
            Err(AgentError::DataLength { name, .. }) if name == "b3"
        ));

        let mut doc: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        doc["tensors"].as_object_mut().unwrap().remove("Wr");
        assert!(matches!(
            AgentWeights::from_json(&doc.to_string()),
            Err(AgentError::MissingTensor("Wr"))
        ));

        let mut doc: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        doc["version"] = serde_json::json!(2);
        assert!(matches!(
            AgentWeights::from_json(&doc.to_string()),
            Err(AgentError::Version { found: 2 })
        ));

        let mut doc: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        doc["labels"] = serde_json::json!(["only"]);
        assert!(matches!(
            AgentWeights::from_json(&doc.to_string()),
            Err(AgentError::TooFewLabels(1))
        ));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = random_weights(SMALL, 5).to_json();
        assert!(matches!(
            AgentWeights::from_json(&text[..text.len() / 2]),
            Err(AgentError::Parse(_))
        ));
    }

    #[test]
    fn fixture_mismatch_is_reported() {
        let mut w = random_weights(SMALL, 6);
        w.push_fixture(vec![0.5; 8]).unwrap();
        w.fixtures[0].regression_raw[1] += 1e-3;
        assert!(matches!(
            w.verify_fixtures(1e-5),
            Err(AgentError::FixtureMismatch {
                field: "regression_raw",
                ..
            })
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            AgentWeights::load(Path::new("/nonexistent/weights.json")),
            Err(AgentError::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn label_is_first_maximum(scores in prop::collection::vec(-2i32..2, 3)) {
            let w = AgentWeights::zeros(SMALL, labels(), scale());
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let p = w.interpret(&output(scores.clone(), [0.0; 2]));
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let first = scores.iter().position(|&s| s == max).unwrap();
            prop_assert_eq!(p.label, labels()[first].clone());
        }

        #[test]
        fn forward_is_deterministic(seed in any::<u64>(), x in prop::collection::vec(-1.0f64..1.0, 8)) {
            let w = random_weights(SMALL, seed);
            prop_assert_eq!(w.forward(&x).unwrap(), w.forward(&x).unwrap());
        }
    }
}
