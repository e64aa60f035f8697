use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{check_dim, Error, Result};

/// One affine layer. `weight` is stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Feed-forward network with tanh hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Partial derivatives of a scalar loss, one entry per [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`DenseNet::forward_trace`]; `acts[0]` is the input.
pub struct Trace {
    acts: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("trace always holds the input")
    }
}

impl DenseNet {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        rng.random_range(-bound..=bound)
                    }),
                    bias: Array1::from_shape_simple_fn(fan_out, || {
                        rng.random_range(-bound..=bound)
                    }),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            check_dim("bias length", l.weight.nrows(), l.bias.len())?;
            if i > 0 {
                check_dim(
                    "layer chaining",
                    layers[i - 1].weight.nrows(),
                    l.weight.ncols(),
                )?;
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weight.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.weight.nrows()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Rows of `input` are independent samples.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.input_dim(), input.ncols())?;
        let last = self.layers.len() - 1;
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            x = affine(&x, layer);
            if i < last {
                x.mapv_inplace(f64::tanh);
            }
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: ArrayView2<f64>) -> Result<Trace> {
        check_dim("network input", self.input_dim(), input.ncols())?;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = affine(acts.last().unwrap(), layer);
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        Ok(Trace { acts })
    }

    /// Gradients of a loss whose derivative w.r.t. the network output is
    /// `output_grad`, summed over the batch rows.
    pub fn backward_trace(&self, trace: &Trace, output_grad: ArrayView2<f64>) -> Result<Gradients> {
        let out = trace.output();
        check_dim("output_grad rows", out.nrows(), output_grad.nrows())?;
        check_dim("output_grad cols", out.ncols(), output_grad.ncols())?;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a_prev = &trace.acts[i];
            grads.push(Dense {
                weight: delta.t().dot(a_prev),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let mut back = delta.dot(&layer.weight);
                back.zip_mut_with(a_prev, |d, &a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        check_dim("network input", self.input_dim(), input.len())?;
        check_dim("output_grad", self.output_dim(), output_grad.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row view");
        let trace = self.forward_trace(x)?;
        self.backward_trace(&trace, g)
    }

    /// Flattened parameters, layer by layer, weight (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        check_dim("flat parameter vector", self.num_params(), params.len())?;
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weight
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes(),
            params: self.params_flat(),
        }
    }

    pub fn from_checkpoint(ckpt: &NetCheckpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        let mut net = Self::zeros(&ckpt.layer_sizes)?;
        net.set_params_flat(&ckpt.params)?;
        if !net.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: NetCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_checkpoint(&ckpt)
    }
}

fn affine(x: &Array2<f64>, layer: &Dense) -> Array2<f64> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias;
    z
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "layer_sizes needs at least 2 entries, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "zero-width layer in {sizes:?}"
        )));
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk network parameters. serde_json writes shortest round-trip
/// representations, so f64 values survive save/load bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetCheckpoint {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|&v| v == 0.0))
    }

    pub fn is_congruent(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weight.dim() == l.weight.dim() && g.bias.len() == l.bias.len())
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = DenseNet::from_layers(vec![Dense {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
        }])
        .unwrap();
        assert_eq!(
            net.forward(&[0.5, -1.5, 2.0]).unwrap(),
            vec![0.5, -1.5, 2.0]
        );
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseNet::zeros(&[3]).is_err());
        assert!(DenseNet::zeros(&[3, 0, 2]).is_err());
        let net = DenseNet::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn hand_evaluated_two_layer_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = DenseNet::new(&[3, 4, 2], &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1];
        let l = net.layers();
        let mut hidden = [0.0; 4];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut s = l[0].bias[j];
            for i in 0..3 {
                s += l[0].weight[[j, i]] * x[i];
            }
            *h = s.tanh();
        }
        let mut expect = [0.0; 2];
        for (j, e) in expect.iter_mut().enumerate() {
            let mut s = l[1].bias[j];
            for i in 0..4 {
                s += l[1].weight[[j, i]] * hidden[i];
            }
            *e = s;
        }
        let got = net.forward(&x).unwrap();
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-14, "{g} vs {e}");
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 4, 2], &mut rng).unwrap();
        let g = net.backward(&[1.0, 2.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
        assert!(g.is_congruent(&net));
    }

    #[test]
    fn scalar_linear_closed_form() {
        let net = DenseNet::from_layers(vec![Dense {
            weight: Array2::from_shape_vec((1, 3), vec![0.2, -0.4, 0.9]).unwrap(),
            bias: Array1::zeros(1),
        }])
        .unwrap();
        let x = [1.5, -2.0, 0.25];
        let g = net.backward(&x, &[3.0]).unwrap();
        for i in 0..3 {
            assert_eq!(g.layers[0].weight[[0, i]], x[i] * 3.0);
        }
        assert_eq!(g.layers[0].bias[0], 3.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[5, 7, 3], &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        net.save(&p).unwrap();
        let back = DenseNet::load(&p).unwrap();
        let a: Vec<u64> = net.params_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_version_is_checked() {
        let mut ckpt = DenseNet::zeros(&[2, 2]).unwrap().to_checkpoint();
        ckpt.version = 99;
        assert!(matches!(
            DenseNet::from_checkpoint(&ckpt),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseNet::new(&[6, 8, 8, 3], &mut rng).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, -0.5, 0.6];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
