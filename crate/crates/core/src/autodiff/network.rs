//! Dense multilayer networks over a flat parameter vector.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{row, ParamId, Tape, Var};
use crate::error::{shape_err, Error, Result};

/// Log-std bounds of the Gaussian policy head.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    /// Final layer emits `[mean | log_std]`; log-std is clamped.
    GaussianPolicy,
}

/// Which space a [`GradientVector`] lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSpace {
    Parameter,
    Input,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub space: GradientSpace,
}

impl GradientVector {
    pub fn parameter(values: Vec<f64>) -> Self {
        Self {
            values,
            space: GradientSpace::Parameter,
        }
    }

    pub fn input(values: Vec<f64>) -> Self {
        Self {
            values,
            space: GradientSpace::Input,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &GradientVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output of [`Network::build`].
#[derive(Debug, Clone, Copy)]
pub enum HeadOutput {
    Linear(Var),
    Gaussian { mean: Var, log_std: Var },
}

impl HeadOutput {
    pub fn linear(self) -> Result<Var> {
        match self {
            HeadOutput::Linear(v) => Ok(v),
            HeadOutput::Gaussian { .. } => shape_err("expected a linear head"),
        }
    }
}

/// Shape header written next to a parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkHeader {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub head: OutputHead,
    pub param_count: usize,
    pub encoding: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    head: OutputHead,
    params: Vec<f64>,
}

pub fn param_count_for(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Network {
    /// Builds a network with uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// initialization drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        head: OutputHead,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation, head)?;
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = (w[0] + 1) * w[1];
            for p in &mut net.params[offset..offset + n] {
                *p = rng.random_range(-bound..=bound);
            }
            offset += n;
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize], activation: Activation, head: OutputHead) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return shape_err("a network needs at least input and output sizes");
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return shape_err("layer sizes must be positive");
        }
        if head == OutputHead::GaussianPolicy && layer_sizes[layer_sizes.len() - 1] % 2 != 0 {
            return shape_err("gaussian head needs an even output width");
        }
        let n = param_count_for(layer_sizes);
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations: vec![activation; layer_sizes.len() - 2],
            head,
            params: vec![0.0; n],
        })
    }

    pub fn with_params(
        layer_sizes: &[usize],
        activations: Vec<Activation>,
        head: OutputHead,
        params: Vec<f64>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || activations.len() != layer_sizes.len() - 2 {
            return shape_err("one activation per hidden layer is required");
        }
        let expected = param_count_for(layer_sizes);
        if params.len() != expected {
            return shape_err(format!(
                "parameter vector has {} entries, layers need {expected}",
                params.len()
            ));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations,
            head,
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return shape_err("parameter length mismatch");
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Records the forward computation on `tape`. `id` must be the handle
    /// returned when this network's parameters were registered.
    pub fn build(&self, tape: &mut Tape<'_>, id: ParamId, x: Var) -> Result<HeadOutput> {
        let mut h = x;
        let mut offset = 0;
        let layers = self.layer_sizes.len() - 1;
        for (i, w) in self.layer_sizes.windows(2).enumerate() {
            h = tape.affine(h, id, offset, w[0], w[1])?;
            offset += (w[0] + 1) * w[1];
            if i + 1 < layers {
                h = match self.activations[i] {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        match self.head {
            OutputHead::Linear => Ok(HeadOutput::Linear(h)),
            OutputHead::GaussianPolicy => {
                let half = self.output_dim() / 2;
                let mean = tape.slice(h, 0, half)?;
                let raw = tape.slice(h, half, half)?;
                let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
                Ok(HeadOutput::Gaussian { mean, log_std })
            }
        }
    }

    /// Batched forward pass; rows are samples. The Gaussian head returns
    /// `[mean | clamped log_std]`.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return shape_err(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            ));
        }
        let mut tape = Tape::new();
        let id = tape.register(&self.params, false);
        let x = tape.constant(input.clone());
        match self.build(&mut tape, id, x)? {
            HeadOutput::Linear(v) => Ok(tape.value(v).clone()),
            HeadOutput::Gaussian { mean, log_std } => {
                let out = tape.concat(mean, log_std)?;
                Ok(tape.value(out).clone())
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward_batch(&row(input))?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Exact gradient of `loss` with respect to every parameter. `loss`
    /// receives the tape and the network's head output and must return a
    /// `1 x 1` node.
    pub fn param_gradient<F>(&self, input: &Array2<f64>, loss: F) -> Result<GradientVector>
    where
        F: FnOnce(&mut Tape<'_>, HeadOutput) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let id = tape.register(&self.params, true);
        let x = tape.constant(input.clone());
        let out = self.build(&mut tape, id, x)?;
        let l = loss(&mut tape, out)?;
        let mut grads = tape.backward(l)?;
        let values = grads
            .take_param(id)
            .unwrap_or_else(|| vec![0.0; self.params.len()]);
        Ok(GradientVector::parameter(values))
    }

    /// Exact gradient of `loss` with respect to the input batch, parameters
    /// held fixed. Returned row-major with the input's shape.
    pub fn input_gradient<F>(&self, input: &Array2<f64>, loss: F) -> Result<GradientVector>
    where
        F: FnOnce(&mut Tape<'_>, HeadOutput) -> Result<Var>,
    {
        if input.ncols() != self.input_dim() {
            return shape_err(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            ));
        }
        let mut tape = Tape::new();
        let id = tape.register(&self.params, false);
        let x = tape.variable(input.clone());
        let out = self.build(&mut tape, id, x)?;
        let l = loss(&mut tape, out)?;
        let grads = tape.backward(l)?;
        let values = match grads.wrt(x) {
            Some(g) => g.iter().copied().collect(),
            None => vec![0.0; input.len()],
        };
        Ok(GradientVector::input(values))
    }

    /// Writes `<stem>.bin` (little-endian f64 parameters) and `<stem>.json`
    /// (shape header) into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = NetworkHeader {
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            head: self.head,
            param_count: self.params.len(),
            encoding: "f64-le".into(),
        };
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&header)?,
        )?;
        fs::write(dir.join(format!("{stem}.bin")), self.to_le_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let header: NetworkHeader =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
        let params = params_from_le_bytes(&bytes)?;
        if params.len() != header.param_count {
            return Err(Error::Shape(format!(
                "blob holds {} parameters, header says {}",
                params.len(),
                header.param_count
            )));
        }
        Self::with_params(&header.layer_sizes, header.activations, header.head, params)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.params.iter().flat_map(|p| p.to_le_bytes()).collect()
    }
}

pub fn params_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return shape_err("parameter blob length is not a multiple of 8");
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// `params - lr * grad`.
pub fn sgd_step(net: &Network, grad: &GradientVector, lr: f64) -> Result<Network> {
    if grad.space != GradientSpace::Parameter {
        return shape_err("sgd_step needs a parameter-space gradient");
    }
    if grad.len() != net.param_count() {
        return shape_err(format!(
            "gradient has {} entries, network has {} parameters",
            grad.len(),
            net.param_count()
        ));
    }
    if let Some(i) = grad.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient entry at {i}")));
    }
    let mut next = net.clone();
    for (p, g) in next.params.iter_mut().zip(&grad.values) {
        *p -= lr * g;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::new(&[3, 5, 2], Activation::Tanh, OutputHead::Linear, &mut rng).unwrap();
        assert_eq!(net.param_count(), 4 * 5 + 6 * 2);
    }

    #[test]
    fn identity_layer() {
        let net = Network::with_params(
            &[2, 2],
            vec![],
            OutputHead::Linear,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeros(&[3, 4, 2], Activation::Relu, OutputHead::Linear).unwrap();
        assert_eq!(net.forward(&[0.3, -9.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn wrong_input_width_is_shape_error() {
        let net = Network::zeros(&[3, 2], Activation::Relu, OutputHead::Linear).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn init_within_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::new(&[16, 4], Activation::Relu, OutputHead::Linear, &mut rng).unwrap();
        assert!(net.params().iter().all(|p| p.abs() <= 0.25));
    }

    #[test]
    fn gaussian_head_clamps_log_std() {
        // output = bias only: mean 0.5, raw log-std 10
        let net = Network::with_params(
            &[1, 2],
            vec![],
            OutputHead::GaussianPolicy,
            vec![0.0, 0.0, 0.5, 10.0],
        )
        .unwrap();
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![0.5, LOG_STD_MAX]);
    }

    #[test]
    fn quadratic_loss_gradient() {
        // 1x1 linear net, loss = 0.5 * y^2, x = 1 -> dL/dw = w
        let w = 0.7;
        let net = Network::with_params(&[1, 1], vec![], OutputHead::Linear, vec![w, 0.0]).unwrap();
        let g = net
            .param_gradient(&array![[1.0]], |t, out| {
                let y = out.linear()?;
                let sq = t.square(y);
                let s = t.sum(sq);
                Ok(t.scale(s, 0.5))
            })
            .unwrap();
        assert_eq!(g.values, vec![w, w]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::new(&[2, 3, 1], Activation::Tanh, OutputHead::Linear, &mut rng).unwrap();
        let g = net
            .param_gradient(&array![[0.1, 0.2]], |t, _| Ok(t.constant(array![[4.0]])))
            .unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
        let gi = net
            .input_gradient(&array![[0.1, 0.2]], |t, _| Ok(t.constant(array![[4.0]])))
            .unwrap();
        assert_eq!(gi.values, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_input_gradient_is_column_sums() {
        // W is stored in x W orientation: input i feeds output j at W[i][j].
        let params = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.1, 0.2, 0.3];
        let net = Network::with_params(&[2, 3], vec![], OutputHead::Linear, params).unwrap();
        let g = net
            .input_gradient(&array![[0.4, -1.0]], |t, out| Ok(t.sum(out.linear()?)))
            .unwrap();
        assert_eq!(g.values, vec![6.0, 15.0]);
    }

    #[test]
    fn sgd_arithmetic() {
        let net = Network::with_params(&[1, 1], vec![], OutputHead::Linear, vec![1.0, 1.0]).unwrap();
        let g = GradientVector::parameter(vec![1.0, -1.0]);
        let next = sgd_step(&net, &g, 0.5).unwrap();
        assert_eq!(next.params(), &[0.5, 1.5]);
        assert_eq!(sgd_step(&net, &g, 0.0).unwrap().params(), net.params());
    }

    #[test]
    fn sgd_rejects_bad_gradients() {
        let net = Network::with_params(&[1, 1], vec![], OutputHead::Linear, vec![1.0, 1.0]).unwrap();
        let nan = GradientVector::parameter(vec![f64::NAN, 0.0]);
        assert!(matches!(sgd_step(&net, &nan, 0.1), Err(Error::Numeric(_))));
        let input = GradientVector::input(vec![0.0, 0.0]);
        assert!(matches!(sgd_step(&net, &input, 0.1), Err(Error::Shape(_))));
        let short = GradientVector::parameter(vec![0.0]);
        assert!(sgd_step(&net, &short, 0.1).is_err());
    }

    #[test]
    fn two_steps_equal_one_doubled_step() {
        let net = Network::with_params(&[1, 1], vec![], OutputHead::Linear, vec![0.25, -0.5]).unwrap();
        let g = GradientVector::parameter(vec![0.5, 0.25]);
        let twice = sgd_step(&sgd_step(&net, &g, 0.25).unwrap(), &g, 0.25).unwrap();
        let once = sgd_step(&net, &g, 0.5).unwrap();
        assert_eq!(twice.params(), once.params());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net =
            Network::new(&[3, 4, 4], Activation::Tanh, OutputHead::GaussianPolicy, &mut rng).unwrap();
        net.save(dir.path(), "policy").unwrap();
        let back = Network::load(dir.path(), "policy").unwrap();
        assert_eq!(back, net);
        let bytes = std::fs::read(dir.path().join("policy.bin")).unwrap();
        assert_eq!(bytes.len(), net.param_count() * 8);
        assert_eq!(&bytes[..8], &net.params()[0].to_le_bytes());
    }
}
