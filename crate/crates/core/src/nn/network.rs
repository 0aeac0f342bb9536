use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Linear => f.write_str("linear"),
        }
    }
}

/// A dense layer `activation(W x + b)` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Vec<f64>,
    bias: Vec<f64>,
    inputs: usize,
    activation: Activation,
}

impl Layer {
    /// `weights[i][j]` multiplies input `j` into output `i`.
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let outputs = weights.len();
        if outputs == 0 {
            return Err(Error::InvalidParameter {
                name: "weights",
                message: "layer has no output rows".into(),
            });
        }
        let inputs = weights[0].len();
        if inputs == 0 || weights.iter().any(|row| row.len() != inputs) {
            return Err(Error::InvalidParameter {
                name: "weights",
                message: "weight rows must be non-empty and of equal length".into(),
            });
        }
        if bias.len() != outputs {
            return Err(Error::InvalidParameter {
                name: "bias",
                message: format!("expected {} entries, got {}", outputs, bias.len()),
            });
        }
        Ok(Layer {
            weights: weights.into_iter().flatten().collect(),
            bias,
            inputs,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.inputs)
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weight_rows().zip(&self.bias).map(|(row, b)| {
            let z = row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v);
            self.activation.apply(z)
        }));
    }
}

/// Feedforward network of dense layers. Cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Arc<[Layer]>,
    input_dim: usize,
}

impl Network {
    /// Validates dimension chaining and that the last layer is linear.
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::param("input_dim", "must be positive"));
        }
        if layers.is_empty() {
            return Err(Error::param("layers", "network has no layers"));
        }
        let mut expected = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.inputs() != expected {
                return Err(Error::DimensionMismatch {
                    layer: i,
                    message: format!("expects {} inputs but receives {}", layer.inputs(), expected),
                });
            }
            expected = layer.outputs();
        }
        let last = layers.len() - 1;
        if layers[last].activation() != Activation::Linear {
            return Err(Error::DimensionMismatch {
                layer: last,
                message: "last layer must use the linear activation".into(),
            });
        }
        Ok(Network {
            layers: layers.into(),
            input_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dim {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in self.layers.iter() {
            layer.apply(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "network".into(),
            message: e.to_string(),
        })?;
        file.into_network()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weight_rows().map(<[f64]>::to_vec).collect(),
                    bias: l.bias.clone(),
                    activation: l.activation.to_string(),
                })
                .collect(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("network serializes")
    }
}

/// Reads a network weight file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    Network::load(path)
}

/// On-disk layout of a weight file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub input_dim: usize,
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerFile {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: String,
}

impl NetworkFile {
    pub fn into_network(self) -> Result<Network> {
        let layers = self
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let act = Activation::parse(&l.activation)?;
                Layer::new(l.weights, l.bias, act).map_err(|e| Error::DimensionMismatch {
                    layer: i,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(self.input_dim, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> Network {
        let n = w[0].len();
        let mut layers = vec![Layer::new(w, b, act).unwrap()];
        if act == Activation::Relu {
            let k = layers[0].outputs();
            let id = (0..k).map(|i| (0..k).map(|j| f64::from(i == j)).collect()).collect();
            layers.push(Layer::new(id, vec![0.0; k], Activation::Linear).unwrap());
        }
        Network::new(n, layers).unwrap()
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let net = single(vec![vec![1.0]], vec![-1.0], Activation::Relu);
        assert_eq!(net.forward(&[0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn linear_layer_is_affine() {
        let net = single(vec![vec![2.0]], vec![1.0], Activation::Linear);
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn identity_layer_round_trips() {
        let net = Network::from_json_str(
            r#"{"input_dim": 3, "layers": [{"weights": [[1,0,0],[0,1,0],[0,0,1]], "bias": [0,0,0], "activation": "linear"}]}"#,
        )
        .unwrap();
        for x in [[0.0, -1.5, 2.25], [1e9, -3.0, 0.125]] {
            assert_eq!(net.forward(&x).unwrap(), x.to_vec());
        }
    }

    #[test]
    fn loads_chained_dimensions() {
        let net = Network::from_json_str(
            r#"{"input_dim": 2, "layers": [
                {"weights": [[1,0],[0,1],[1,1]], "bias": [0,0,0], "activation": "relu"},
                {"weights": [[1,1,1]], "bias": [0], "activation": "linear"}]}"#,
        )
        .unwrap();
        assert_eq!(net.input_dim(), 2);
        assert_eq!(net.output_dim(), 1);
    }

    #[test]
    fn reports_offending_layer_on_mismatch() {
        let err = Network::from_json_str(
            r#"{"input_dim": 2, "layers": [
                {"weights": [[1,0],[0,1],[1,1]], "bias": [0,0,0], "activation": "relu"},
                {"weights": [[1,1,1,1]], "bias": [0], "activation": "linear"}]}"#,
        )
        .unwrap_err();
        match err {
            Error::DimensionMismatch { layer, .. } => assert_eq!(layer, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_activation() {
        let err = Network::from_json_str(
            r#"{"input_dim": 1, "layers": [{"weights": [[1]], "bias": [0], "activation": "tanh"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownActivation(ref s) if s == "tanh"));
    }

    #[test]
    fn rejects_relu_output_layer() {
        let err = Network::from_json_str(
            r#"{"input_dim": 1, "layers": [{"weights": [[1]], "bias": [0], "activation": "relu"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { layer: 0, .. }));
    }

    #[test]
    fn rejects_non_finite_and_wrong_length_inputs() {
        let net = single(vec![vec![1.0, 1.0]], vec![0.0], Activation::Linear);
        assert!(matches!(net.forward(&[1.0, f64::NAN]), Err(Error::NonFinite(1))));
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dim { expected: 2, got: 1 })));
    }

    #[test]
    fn json_round_trip_preserves_network() {
        let net = single(
            vec![vec![0.5, -2.0], vec![1.0, 3.0]],
            vec![0.25, -1.0],
            Activation::Relu,
        );
        let again = Network::from_json_str(&net.to_json_string()).unwrap();
        assert_eq!(net, again);
    }
}
