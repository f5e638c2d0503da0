//! Feed-forward MLP with input skip connections, recorded on a [`Tape`].
//!
//! Besides the plain forward pass, [`Mlp::forward_with_input_grad`] builds
//! the network's gradient w.r.t. its input *as part of the forward graph*
//! (a hand-rolled reverse chain out of ordinary tape ops). Losses that
//! consume that gradient — the Eikonal term, or a color network fed with
//! SDF normals — then differentiate w.r.t. parameters through a single
//! ordinary backward sweep.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    None,
    Relu,
    /// Smooth ReLU; `beta` controls sharpness.
    Softplus { beta: f64 },
    Sigmoid,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

/// Architecture description. Layer `l` in `skips` receives
/// `concat(previous_activation, network_input)` instead of the previous
/// activation alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub skips: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>, skips: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || layers.is_empty() {
            return Err(Error::contract("mlp needs an input and at least one layer"));
        }
        if layers.iter().any(|l| l.width == 0) {
            return Err(Error::contract("layer widths must be positive"));
        }
        if skips.iter().any(|&s| s == 0 || s >= layers.len()) {
            return Err(Error::contract(
                "skip indices must be in 1..depth (layer 0 already sees the input)",
            ));
        }
        Ok(MlpSpec { input_dim, layers, skips })
    }

    /// Uniform widths, one activation for hidden layers, explicit output.
    pub fn uniform(
        input_dim: usize,
        hidden_width: usize,
        hidden_count: usize,
        output_dim: usize,
        hidden_act: Activation,
        output_act: Activation,
        skips: Vec<usize>,
    ) -> Result<Self> {
        let mut layers = vec![
            LayerSpec { width: hidden_width, activation: hidden_act };
            hidden_count
        ];
        layers.push(LayerSpec { width: output_dim, activation: output_act });
        MlpSpec::new(input_dim, layers, skips)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().width
    }

    fn layer_input_width(&self, l: usize) -> usize {
        let prev = if l == 0 {
            self.input_dim
        } else {
            self.layers[l - 1].width
        };
        if self.skips.contains(&l) {
            prev + self.input_dim
        } else {
            prev
        }
    }

    /// Weight/bias shapes in parameter order `[W0, b0, W1, b1, ...]`.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.layers.len() * 2);
        for l in 0..self.layers.len() {
            shapes.push((self.layer_input_width(l), self.layers[l].width));
            shapes.push((1, self.layers[l].width));
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|&(r, c)| r * c).sum()
    }

    fn check_params(&self, params: &[Var], tape: &Tape) -> Result<()> {
        let shapes = self.param_shapes();
        if params.len() != shapes.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (&p, &shape)) in params.iter().zip(&shapes).enumerate() {
            if tape.value(p).shape() != shape {
                return Err(Error::contract(format!(
                    "parameter {i} has shape {:?}, expected {:?}",
                    tape.value(p).shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    /// Fan-in scaled uniform initialization: weights
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    pub fn init_fan_in(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        let mut params = Vec::new();
        for (i, (rows, cols)) in self.param_shapes().into_iter().enumerate() {
            if i % 2 == 1 {
                params.push(Tensor::zeros(rows, cols));
                continue;
            }
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            params.push(Tensor::from_vec(rows, cols, data));
        }
        params
    }
}

fn apply_activation(tape: &mut Tape, z: Var, act: Activation) -> Var {
    match act {
        Activation::None => z,
        Activation::Relu => tape.relu(z),
        Activation::Softplus { beta } => tape.softplus(z, beta),
        Activation::Sigmoid => tape.sigmoid(z),
        Activation::Exp => tape.exp(z),
    }
}

/// Derivative of an activation at preactivation `z`, as a tape node.
/// `post` is the already-computed activation output (reused where the
/// derivative is cheaper in terms of the output).
fn activation_derivative(tape: &mut Tape, z: Var, post: Var, act: Activation) -> Option<Var> {
    match act {
        Activation::None => None,
        Activation::Relu => Some(tape.step(z)),
        Activation::Softplus { beta } => {
            let s = tape.scale(z, beta);
            Some(tape.sigmoid(s))
        }
        Activation::Sigmoid => {
            let neg = tape.neg(post);
            let om = tape.add_const(neg, 1.0);
            Some(tape.mul(post, om))
        }
        Activation::Exp => Some(post),
    }
}

/// The MLP itself is stateless; parameters live on the tape.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
}

struct LayerTrace {
    z: Var,
    post: Var,
    activation: Activation,
    skip: bool,
    prev_width: usize,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Mlp {
        Mlp { spec }
    }

    /// Forward pass over a `[batch x input_dim]` input.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Var> {
        let (out, _) = self.forward_traced(tape, params, input)?;
        tape.check_finite(out, "mlp forward output")?;
        Ok(out)
    }

    fn forward_traced(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: Var,
    ) -> Result<(Var, Vec<LayerTrace>)> {
        self.spec.check_params(params, tape)?;
        if tape.value(input).cols() != self.spec.input_dim {
            return Err(Error::contract(format!(
                "input width {} does not match spec input_dim {}",
                tape.value(input).cols(),
                self.spec.input_dim
            )));
        }
        let mut traces = Vec::with_capacity(self.spec.layers.len());
        let mut a = input;
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let skip = self.spec.skips.contains(&l);
            let prev_width = tape.value(a).cols();
            let x_l = if skip { tape.concat_cols(&[a, input]) } else { a };
            let w = params[2 * l];
            let b = params[2 * l + 1];
            let zw = tape.matmul(x_l, w);
            let z = tape.add_row(zw, b);
            let post = apply_activation(tape, z, layer.activation);
            traces.push(LayerTrace {
                z,
                post,
                activation: layer.activation,
                skip,
                prev_width,
            });
            a = post;
        }
        Ok((a, traces))
    }

    /// Forward pass plus the gradient of output column `out_col` w.r.t. the
    /// input, built from tape ops so it stays differentiable.
    ///
    /// Returns `(output [B x out], input_grad [B x input_dim])`.
    pub fn forward_with_input_grad(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: Var,
        out_col: usize,
    ) -> Result<(Var, Var)> {
        let (out, traces) = self.forward_traced(tape, params, input)?;
        tape.check_finite(out, "mlp forward output")?;
        if out_col >= self.spec.output_dim() {
            return Err(Error::contract(format!(
                "out_col {out_col} out of range for output dim {}",
                self.spec.output_dim()
            )));
        }
        let batch = tape.value(input).rows();

        // Seed: d(out[:, c]) / d(z_last[:, c]) through the output activation.
        let last = traces.last().unwrap();
        let mut g_col = match activation_derivative(tape, last.z, last.post, last.activation) {
            Some(d) => tape.slice_cols(d, out_col, 1),
            None => tape.constant(Tensor::filled(batch, 1, 1.0)),
        };

        // Last layer maps through its weight column: g_in = g_col * W[:, c]'.
        let w_last = params[2 * (self.spec.layers.len() - 1)];
        let col = tape.slice_cols(w_last, out_col, 1);
        let col_t = tape.transpose(col);
        let mut g_in = tape.matmul(g_col, col_t);

        let mut grad_x: Option<Var> = None;
        for l in (0..self.spec.layers.len() - 1).rev() {
            let trace = &traces[l];
            // Split off the skip half of the *following* layer's input grad.
            let following = &traces[l + 1];
            let g_prev = if following.skip {
                let g_skip = tape.slice_cols(g_in, following.prev_width, self.spec.input_dim);
                grad_x = Some(match grad_x {
                    Some(acc) => tape.add(acc, g_skip),
                    None => g_skip,
                });
                tape.slice_cols(g_in, 0, following.prev_width)
            } else {
                g_in
            };
            // Through this layer's activation and weight.
            let g_z = match activation_derivative(tape, trace.z, trace.post, trace.activation) {
                Some(d) => tape.mul(g_prev, d),
                None => g_prev,
            };
            let w = params[2 * l];
            let w_t = tape.transpose(w);
            g_in = tape.matmul(g_z, w_t);
            g_col = g_z;
        }
        let _ = g_col;

        // Layer 0 consumes the raw input directly (skip at 0 is rejected by
        // the spec constructor).
        let grad = match grad_x {
            Some(acc) => tape.add(acc, g_in),
            None => g_in,
        };
        Ok((out, grad))
    }
}

/// Draw a random unit direction over a list of tensor shapes.
pub fn random_direction(shapes: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut dirs: Vec<Tensor> = shapes
        .iter()
        .map(|&(r, c)| {
            let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::from_vec(r, c, data)
        })
        .collect();
    let norm: f64 = dirs
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v * v))
        .sum::<f64>()
        .sqrt();
    for d in &mut dirs {
        for v in d.data_mut() {
            *v /= norm;
        }
    }
    dirs
}

/// Central-difference directional derivative check.
///
/// `eval` maps a parameter list to a scalar; `analytic` is the gradient
/// list at `params`. Returns `(analytic_dot, fd)` for one random direction.
pub fn directional_derivative_check(
    params: &[Tensor],
    analytic: &[Tensor],
    eval: impl Fn(&[Tensor]) -> f64,
    rng: &mut ChaCha8Rng,
    h: f64,
) -> (f64, f64) {
    let shapes: Vec<_> = params.iter().map(|t| t.shape()).collect();
    let dir = random_direction(&shapes, rng);
    let dot: f64 = analytic
        .iter()
        .zip(&dir)
        .flat_map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b))
        .sum();
    let shift = |sign: f64| -> Vec<Tensor> {
        params
            .iter()
            .zip(&dir)
            .map(|(p, d)| p.zip(d, |pv, dv| pv + sign * h * dv))
            .collect()
    };
    let fd = (eval(&shift(1.0)) - eval(&shift(-1.0))) / (2.0 * h);
    (dot, fd)
}

/// Relative error with a floor, as used by the gradient acceptance suite.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn attach(tape: &mut Tape, params: &[Tensor]) -> Vec<Var> {
        params.iter().map(|t| tape.param(t.clone())).collect()
    }

    #[test]
    fn zero_weights_sigmoid_head_gives_half() {
        let spec = MlpSpec::uniform(2, 4, 1, 3, Activation::Relu, Activation::Sigmoid, vec![])
            .unwrap();
        let mlp = Mlp::new(spec.clone());
        let params: Vec<Tensor> = spec
            .param_shapes()
            .iter()
            .map(|&(r, c)| Tensor::zeros(r, c))
            .collect();
        let mut tape = Tape::new();
        let vars = attach(&mut tape, &params);
        let x = tape.constant(Tensor::row(&[0.3, -0.7]));
        let y = mlp.forward(&mut tape, &vars, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn identity_layer_relu() {
        let spec = MlpSpec::new(
            2,
            vec![LayerSpec { width: 2, activation: Activation::Relu }],
            vec![],
        )
        .unwrap();
        let mlp = Mlp::new(spec);
        let params = vec![
            Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
            Tensor::zeros(1, 2),
        ];
        let mut tape = Tape::new();
        let vars = attach(&mut tape, &params);
        let x = tape.constant(Tensor::row(&[-1.0, 2.0]));
        let y = mlp.forward(&mut tape, &vars, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn two_layer_hand_computation() {
        // Layer 1: W = [[1, 2], [3, 4]], b = (0.5, -0.5), ReLU.
        // Layer 2: W = [[1], [-1]], b = (0.25), linear.
        let spec = MlpSpec::new(
            2,
            vec![
                LayerSpec { width: 2, activation: Activation::Relu },
                LayerSpec { width: 1, activation: Activation::None },
            ],
            vec![],
        )
        .unwrap();
        let mlp = Mlp::new(spec);
        let params = vec![
            Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]),
            Tensor::row(&[0.5, -0.5]),
            Tensor::from_vec(2, 1, vec![1.0, -1.0]),
            Tensor::row(&[0.25]),
        ];
        let mut tape = Tape::new();
        let vars = attach(&mut tape, &params);
        let x = tape.constant(Tensor::row(&[1.0, -2.0]));
        let y = mlp.forward(&mut tape, &vars, x).unwrap();
        // z1 = (1*1 + -2*3 + 0.5, 1*2 + -2*4 - 0.5) = (-4.5, -6.5) -> relu 0.
        // z2 = 0 + 0.25.
        assert!((tape.value(y).item() - 0.25).abs() < 1e-12);

        let x2 = tape.constant(Tensor::row(&[2.0, 0.5]));
        let y2 = mlp.forward(&mut tape, &vars, x2).unwrap();
        // z1 = (2 + 1.5 + 0.5, 4 + 2 - 0.5) = (4, 5.5) -> relu same.
        // z2 = 4 - 5.5 + 0.25 = -1.25.
        assert!((tape.value(y2).item() + 1.25).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let spec = MlpSpec::uniform(3, 4, 1, 1, Activation::Relu, Activation::None, vec![])
            .unwrap();
        let mlp = Mlp::new(spec);
        let mut tape = Tape::new();
        let bad = vec![tape.param(Tensor::zeros(2, 2))];
        let x = tape.constant(Tensor::row(&[0.0, 0.0, 0.0]));
        assert!(mlp.forward(&mut tape, &bad, x).is_err());
    }

    /// Parameter gradients of a scalar loss match finite differences.
    #[test]
    fn parameter_gradients_match_fd() {
        let spec = MlpSpec::uniform(
            3,
            8,
            2,
            2,
            Activation::Softplus { beta: 10.0 },
            Activation::Sigmoid,
            vec![1],
        )
        .unwrap();
        let mlp = Mlp::new(spec.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let params = spec.init_fan_in(&mut rng);
        let input = Tensor::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.13).sin()).collect());

        let eval = |p: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = p.iter().map(|t| tape.param(t.clone())).collect();
            let x = tape.constant(input.clone());
            let y = mlp.forward(&mut tape, &vars, x).unwrap();
            let sq = tape.square(y);
            let loss = tape.mean_all(sq);
            tape.value(loss).item()
        };

        let mut tape = Tape::new();
        let vars = attach(&mut tape, &params);
        let x = tape.constant(input.clone());
        let y = mlp.forward(&mut tape, &vars, x).unwrap();
        let sq = tape.square(y);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

        for probe in 0..20 {
            let (dot, fd) =
                directional_derivative_check(&params, &analytic, eval, &mut rng, 1e-5);
            assert!(
                relative_error(dot, fd) < 1e-4,
                "probe {probe}: analytic {dot} vs fd {fd}"
            );
        }
    }

    /// The explicit input-gradient chain matches finite differences of the
    /// forward pass w.r.t. the input point.
    #[test]
    fn input_grad_chain_matches_fd() {
        let spec = MlpSpec::uniform(
            3,
            16,
            3,
            2,
            Activation::Softplus { beta: 50.0 },
            Activation::None,
            vec![2],
        )
        .unwrap();
        let mlp = Mlp::new(spec.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = spec.init_fan_in(&mut rng);

        let eval_at = |x: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
            let xv = tape.constant(Tensor::row(x));
            let y = mlp.forward(&mut tape, &vars, xv).unwrap();
            tape.value(y).at(0, 0)
        };

        let x0 = [0.21, -0.53, 0.87];
        let mut tape = Tape::new();
        let vars = attach(&mut tape, &params);
        let xv = tape.constant(Tensor::row(&x0));
        let (_, grad) = mlp.forward_with_input_grad(&mut tape, &vars, xv, 0).unwrap();
        let g = tape.value(grad).clone();
        assert_eq!(g.shape(), (1, 3));

        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x0;
            let mut xm = x0;
            xp[i] += h;
            xm[i] -= h;
            let fd = (eval_at(&xp) - eval_at(&xm)) / (2.0 * h);
            assert!(
                relative_error(g.at(0, i), fd) < 1e-5,
                "axis {i}: chain {} vs fd {fd}",
                g.at(0, i)
            );
        }
    }

    /// Double-backward: parameter gradients of a loss on the *input
    /// gradient* match finite differences. This is the path Eikonal-style
    /// losses rely on.
    #[test]
    fn loss_on_input_gradient_matches_fd() {
        let spec = MlpSpec::uniform(
            3,
            12,
            2,
            1,
            Activation::Softplus { beta: 20.0 },
            Activation::None,
            vec![1],
        )
        .unwrap();
        let mlp = Mlp::new(spec.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let params = spec.init_fan_in(&mut rng);
        let input = Tensor::from_vec(5, 3, (0..15).map(|i| (i as f64 * 0.31).cos()).collect());

        let eval = |p: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = p.iter().map(|t| tape.param(t.clone())).collect();
            let x = tape.constant(input.clone());
            let (_, grad) = mlp.forward_with_input_grad(&mut tape, &vars, x, 0).unwrap();
            let sq = tape.square(grad);
            let norms = tape.row_sum(sq);
            let safe = tape.clamp_min(norms, 1e-20);
            let r = tape.sqrt(safe);
            let dev = tape.add_const(r, -1.0);
            let dev2 = tape.square(dev);
            let loss = tape.mean_all(dev2);
            tape.value(loss).item()
        };

        let mut tape = Tape::new();
        let vars = attach(&mut tape, &params);
        let x = tape.constant(input.clone());
        let (_, grad) = mlp.forward_with_input_grad(&mut tape, &vars, x, 0).unwrap();
        let sq = tape.square(grad);
        let norms = tape.row_sum(sq);
        let safe = tape.clamp_min(norms, 1e-20);
        let r = tape.sqrt(safe);
        let dev = tape.add_const(r, -1.0);
        let dev2 = tape.square(dev);
        let loss = tape.mean_all(dev2);
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

        for probe in 0..20 {
            let (dot, fd) =
                directional_derivative_check(&params, &analytic, eval, &mut rng, 1e-5);
            assert!(
                relative_error(dot, fd) < 1e-4,
                "probe {probe}: analytic {dot} vs fd {fd}"
            );
        }
    }

    #[test]
    fn forward_deterministic_bitwise() {
        let spec = MlpSpec::uniform(3, 32, 2, 4, Activation::Relu, Activation::None, vec![1])
            .unwrap();
        let mlp = Mlp::new(spec.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = spec.init_fan_in(&mut rng);
        let input = Tensor::from_vec(7, 3, (0..21).map(|i| (i as f64).sin()).collect());
        let run = || {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
            let x = tape.constant(input.clone());
            let y = mlp.forward(&mut tape, &vars, x).unwrap();
            tape.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
