//! Dense layers, Adam and a central-difference gradient checker.
//!
//! Everything here works on plain `f64` slices. Weight matrices are stored
//! row-major with shape `out x in`.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {out_dim}x{in_dim} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weight,
            bias,
            activation,
        })
    }

    /// He-style uniform init: `U(-sqrt(6/in), sqrt(6/in))`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        DenseLayer {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "layer expects input of length {}, got {}",
                self.in_dim,
                input.len()
            )));
        }
        Ok(())
    }

    /// `W x + b` before the activation.
    pub(crate) fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).fold(*b, |acc, (w, x)| acc + w * x))
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self
            .affine(input)
            .into_iter()
            .map(|z| self.activation.apply(z))
            .collect())
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<DenseGrads> {
        self.check_input(input)?;
        if upstream.len() != self.out_dim {
            return Err(Error::Shape(format!(
                "layer expects upstream gradient of length {}, got {}",
                self.out_dim,
                upstream.len()
            )));
        }
        let pre = self.affine(input);
        Ok(self.backward_from_pre(input, &pre, upstream))
    }

    /// Backward pass given the cached pre-activation.
    pub(crate) fn backward_from_pre(
        &self,
        input: &[f64],
        pre: &[f64],
        upstream: &[f64],
    ) -> DenseGrads {
        let delta: Vec<f64> = pre
            .iter()
            .zip(upstream)
            .map(|(&z, &g)| g * self.activation.derivative(z))
            .collect();
        let mut weight = vec![0.0; self.weight.len()];
        let mut input_grad = vec![0.0; self.in_dim];
        for (o, &d) in delta.iter().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grad_row = &mut weight[o * self.in_dim..(o + 1) * self.in_dim];
            for j in 0..self.in_dim {
                grad_row[j] = d * input[j];
                input_grad[j] += d * row[j];
            }
        }
        DenseGrads {
            input: input_grad,
            weight,
            bias: delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one flat parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// Bias-corrected Adam update of every parameter.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.check(params, grads)?;
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient at position {pos}; step skipped"
            )));
        }
        self.step += 1;
        let (c1, c2) = self.corrections();
        for (k, &g) in grads.iter().enumerate() {
            self.update(k, params, g, c1, c2);
        }
        Ok(())
    }

    /// Adam update restricted to `rows` of a row-major block with `row_len`
    /// columns; `row_grads` holds the gradient of each listed row back to back.
    /// Moments of unlisted rows are left as they are, so rows that did not
    /// take part in a batch do not move.
    pub fn step_rows(
        &mut self,
        params: &mut [f64],
        rows: &[usize],
        row_grads: &[f64],
        row_len: usize,
    ) -> Result<()> {
        if params.len() != self.first.len() || row_grads.len() != rows.len() * row_len {
            return Err(Error::Shape(format!(
                "adam state of length {} given {} params and {} row gradients for {} rows of {row_len}",
                self.first.len(),
                params.len(),
                row_grads.len(),
                rows.len()
            )));
        }
        for &row in rows {
            if (row + 1) * row_len > params.len() {
                return Err(Error::IndexOutOfRange {
                    what: "parameter row",
                    index: row,
                    len: params.len() / row_len.max(1),
                });
            }
        }
        if let Some(pos) = row_grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of row {}; step skipped",
                rows[pos / row_len]
            )));
        }
        self.step += 1;
        let (c1, c2) = self.corrections();
        for (&row, grad) in rows.iter().zip(row_grads.chunks_exact(row_len)) {
            for (j, &g) in grad.iter().enumerate() {
                self.update(row * row_len + j, params, g, c1, c2);
            }
        }
        Ok(())
    }

    fn check(&self, params: &[f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "adam state of length {} given {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        Ok(())
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (
            1.0 - self.config.beta1.powi(t),
            1.0 - self.config.beta2.powi(t),
        )
    }

    #[inline]
    fn update(&mut self, k: usize, params: &mut [f64], g: f64, c1: f64, c2: f64) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.first[k] = beta1 * self.first[k] + (1.0 - beta1) * g;
        self.second[k] = beta2 * self.second[k] + (1.0 - beta2) * g * g;
        let m_hat = self.first[k] / c1;
        let v_hat = self.second[k] / c2;
        params[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Relative error used by the gradient checker.
///
/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps gradients that are
/// numerically zero from dividing by zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Central-difference gradient of `loss` at `params`.
pub fn numeric_gradient<F>(mut loss: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + step;
            let plus = loss(&probe);
            probe[k] = orig - step;
            let minus = loss(&probe);
            probe[k] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Largest relative error between `analytic` and the central-difference
/// gradient of `loss` at `params`.
pub fn grad_check<F>(loss: F, params: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let numeric = numeric_gradient(loss, params, step);
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, GRAD_CHECK_FLOOR))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::from_parts(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(layer.forward(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn relu_clips_negative() {
        let layer = DenseLayer::from_parts(1, 2, vec![1.0, 1.0], vec![1.0, -6.0], Activation::Relu)
            .unwrap();
        // W x + b = (2, -5)
        assert_eq!(layer.forward(&[1.0]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let layer = DenseLayer::zeros(3, 2, Activation::Relu);
        assert!(matches!(layer.forward(&[1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            layer.backward(&[1.0, 2.0, 3.0], &[1.0]),
            Err(Error::Shape(_))
        ));
        assert!(
            DenseLayer::from_parts(2, 2, vec![0.0; 3], vec![0.0; 2], Activation::Identity).is_err()
        );
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = DenseLayer::he_uniform(4, 3, Activation::Relu, &mut rng);
        let g = layer.backward(&[0.3, -0.2, 1.0, 0.5], &[0.0; 3]).unwrap();
        assert!(g
            .input
            .iter()
            .chain(&g.weight)
            .chain(&g.bias)
            .all(|&v| v == 0.0));
    }

    fn random_layer_loss(layer: &DenseLayer, input: &[f64], probe: &[f64]) -> f64 {
        // scalar head: sum of probe-weighted outputs
        layer
            .forward(input)
            .unwrap()
            .iter()
            .zip(probe)
            .map(|(o, p)| o * p)
            .sum()
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (in_dim, out_dim, act) in [(3, 2, Activation::Identity), (5, 4, Activation::Relu)] {
            let layer = DenseLayer::he_uniform(in_dim, out_dim, act, &mut rng);
            let mut layer = layer;
            layer
                .bias
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.5..0.5));
            let input: Vec<f64> = (0..in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let probe: Vec<f64> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let grads = layer.backward(&input, &probe).unwrap();

            let err = grad_check(
                |x| random_layer_loss(&layer, x, &probe),
                &input,
                &grads.input,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "input grad err {err}");

            let mut params = layer.weight.clone();
            params.extend_from_slice(&layer.bias);
            let mut analytic = grads.weight.clone();
            analytic.extend_from_slice(&grads.bias);
            let err = grad_check(
                |p| {
                    let l = DenseLayer::from_parts(
                        in_dim,
                        out_dim,
                        p[..in_dim * out_dim].to_vec(),
                        p[in_dim * out_dim..].to_vec(),
                        act,
                    )
                    .unwrap();
                    random_layer_loss(&l, &input, &probe)
                },
                &params,
                &analytic,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "param grad err {err}");
        }
    }

    #[test]
    fn quadratic_grad_check() {
        let err = grad_check(|w| w[0] * w[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut params = vec![0.5, -1.0];
        let mut state = AdamState::new(2, AdamConfig::default());
        state.step(&mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(params, vec![0.5, -1.0]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [2.5, -0.01] {
            let mut params = vec![1.0];
            let mut state = AdamState::new(1, AdamConfig::default());
            state.step(&mut params, &[g]).unwrap();
            // m_hat = g, v_hat = g^2 => delta = -lr * g / (|g| + eps)
            let expected = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((params[0] - expected).abs() < 1e-15);
            assert!((params[0] - (1.0 - 1e-3 * g.signum())).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_rejects_non_finite_and_skips() {
        let mut params = vec![1.0, 2.0];
        let mut state = AdamState::new(2, AdamConfig::default());
        assert!(matches!(
            state.step(&mut params, &[f64::NAN, 1.0]),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(state.steps(), 0);
        assert!(matches!(
            state.step(&mut params, &[1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn adam_rows_leave_other_rows_alone() {
        let mut params = vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let mut state = AdamState::new(6, AdamConfig::default());
        state.step_rows(&mut params, &[1], &[5.0, 5.0], 2).unwrap();
        assert_eq!(&params[0..2], &[1.0, 1.0]);
        assert_eq!(&params[4..6], &[3.0, 3.0]);
        assert!(params[2] < 2.0);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut params: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut state = AdamState::new(16, AdamConfig::default());
            for _ in 0..50 {
                let grads: Vec<f64> = params
                    .iter()
                    .map(|p| 2.0 * p + rng.gen_range(-0.1..0.1))
                    .collect();
                state.step(&mut params, &grads).unwrap();
            }
            params
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::he_uniform(6, 4, Activation::Relu, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = layer.forward(&x).unwrap();
        let b = layer.forward(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
