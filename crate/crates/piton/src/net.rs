//! Fully connected networks on the graph: evaluation and input jets.
//!
//! Layers are affine maps with tanh between them and an affine final layer.
//! Weights are stored `[out, in]` under `{prefix}.w{l}`, biases `[1, out]`
//! under `{prefix}.b{l}`.
//!
//! Input jets carry (value, first, second) derivatives of the network output
//! with respect to designated input columns. They are propagated forward
//! through each layer as extra channels built from ordinary graph ops, so
//! every jet component stays differentiable with respect to the parameters.
//! For a layer `y = tanh(v)` with `s = 1 - y^2` the channels update as
//! `y_a = s v_a` and `y_aa = s v_aa - 2 y s v_a^2`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, NodeId};
use crate::tensor::{ParamSet, Tensor};

/// Layer widths, e.g. `[13, 100, 1]` for one hidden layer of 100.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        MlpSpec { dims }
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn output_width(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

pub fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.w{layer}")
}

pub fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.b{layer}")
}

/// Glorot-uniform weights, zero biases. Draw order is layer by layer,
/// weights row-major, which pins the RNG stream layout.
pub fn init_mlp(
    params: &mut ParamSet,
    prefix: &str,
    spec: &MlpSpec,
    rng: &mut impl Rng,
) -> Result<()> {
    for (l, w) in spec.dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        params.insert(
            weight_name(prefix, l),
            Tensor::from_vec(vec![fan_out, fan_in], data)?,
            true,
        )?;
        params.insert(bias_name(prefix, l), Tensor::zeros(vec![1, fan_out]), true)?;
    }
    Ok(())
}

/// How a named weight materializes as a graph node. The LoRA resolver
/// splices `W + A B` in front of the base weight when adapter factors are
/// bound; the plain resolver always uses the base weight.
pub trait WeightResolver {
    fn weight(&self, g: &mut Graph, bound: &Bound, name: &str) -> Result<NodeId>;
}

pub struct PlainWeights;

impl WeightResolver for PlainWeights {
    fn weight(&self, g: &mut Graph, bound: &Bound, name: &str) -> Result<NodeId> {
        bound.node(name)
    }
}

/// Uses `name.lora_a` / `name.lora_b` when present.
pub struct LoraWeights;

impl WeightResolver for LoraWeights {
    fn weight(&self, g: &mut Graph, bound: &Bound, name: &str) -> Result<NodeId> {
        let base = bound.node(name)?;
        match (
            bound.node(&format!("{name}.lora_a")),
            bound.node(&format!("{name}.lora_b")),
        ) {
            (Ok(a), Ok(b)) => {
                let delta = g.matmul(a, b)?;
                g.add(base, delta)
            }
            _ => Ok(base),
        }
    }
}

fn layer_shape_check(
    g: &Graph,
    prefix: &str,
    layer: usize,
    x: NodeId,
    w: NodeId,
) -> Result<()> {
    let (_, xin) = g.dims(x);
    let (wout, win) = g.dims(w);
    if xin != win {
        return Err(Error::ShapeMismatch {
            context: format!("{prefix} layer {layer}"),
            expected: format!("input width {win}"),
            actual: format!("input width {xin} (weight is [{wout},{win}])"),
        });
    }
    Ok(())
}

/// Forward pass `[n, d_in] -> [n, d_out]` on the graph.
pub fn mlp_forward(
    g: &mut Graph,
    bound: &Bound,
    resolver: &dyn WeightResolver,
    prefix: &str,
    spec: &MlpSpec,
    mut x: NodeId,
) -> Result<NodeId> {
    let last = spec.layers() - 1;
    for l in 0..spec.layers() {
        let w = resolver.weight(g, bound, &weight_name(prefix, l))?;
        let b = bound.node(&bias_name(prefix, l))?;
        layer_shape_check(g, prefix, l, x, w)?;
        let z = g.matmul_transb(x, w)?;
        let z = g.add_row(z, b)?;
        x = if l == last { z } else { g.tanh(z) };
    }
    Ok(x)
}

/// Which input columns get derivative channels. Every column in `second`
/// also gets a first-order channel. `seed` is the constant d(column)/d(raw
/// variable) factor, used when the column is an affine rescaling of the raw
/// coordinate.
#[derive(Debug, Clone)]
pub struct JetRequest {
    pub first: Vec<(usize, f64)>,
    pub second: Vec<usize>,
}

impl JetRequest {
    pub fn validate(&self, input_width: usize) -> Result<()> {
        for &(col, _) in &self.first {
            if col >= input_width {
                return Err(Error::ShapeMismatch {
                    context: "jet request".into(),
                    expected: format!("column < {input_width}"),
                    actual: format!("column {col}"),
                });
            }
        }
        for col in &self.second {
            if !self.first.iter().any(|(c, _)| c == col) {
                return Err(Error::ShapeMismatch {
                    context: "jet request".into(),
                    expected: "second-order columns listed in `first`".into(),
                    actual: format!("column {col}"),
                });
            }
        }
        Ok(())
    }
}

/// Output value and derivative channels, all `[n, d_out]` nodes.
pub struct JetBatch {
    pub value: NodeId,
    pub d1: Vec<(usize, NodeId)>,
    pub d2: Vec<(usize, NodeId)>,
}

impl JetBatch {
    pub fn d1_for(&self, col: usize) -> Option<NodeId> {
        self.d1.iter().find(|(c, _)| *c == col).map(|(_, n)| *n)
    }

    pub fn d2_for(&self, col: usize) -> Option<NodeId> {
        self.d2.iter().find(|(c, _)| *c == col).map(|(_, n)| *n)
    }
}

/// Forward pass carrying jet channels for the requested input columns.
pub fn mlp_forward_jet(
    g: &mut Graph,
    bound: &Bound,
    resolver: &dyn WeightResolver,
    prefix: &str,
    spec: &MlpSpec,
    x: NodeId,
    req: &JetRequest,
) -> Result<JetBatch> {
    req.validate(spec.input_width())?;
    let (n, d_in) = g.dims(x);

    let mut value = x;
    // Seed: d(input)/d(raw var) is `seed` in the designated column.
    let mut d1: Vec<(usize, NodeId)> = Vec::with_capacity(req.first.len());
    for &(col, seed) in &req.first {
        let mut e = vec![0.0; n * d_in];
        for i in 0..n {
            e[i * d_in + col] = seed;
        }
        d1.push((col, g.constant(n, d_in, e)));
    }
    let mut d2: Vec<(usize, NodeId)> = req
        .second
        .iter()
        .map(|&col| (col, g.constant(n, d_in, vec![0.0; n * d_in])))
        .collect();

    let last = spec.layers() - 1;
    for l in 0..spec.layers() {
        let w = resolver.weight(g, bound, &weight_name(prefix, l))?;
        let b = bound.node(&bias_name(prefix, l))?;
        layer_shape_check(g, prefix, l, value, w)?;

        let z = g.matmul_transb(value, w)?;
        let z = g.add_row(z, b)?;
        for (_, ch) in d1.iter_mut() {
            *ch = g.matmul_transb(*ch, w)?;
        }
        for (_, ch) in d2.iter_mut() {
            *ch = g.matmul_transb(*ch, w)?;
        }

        if l == last {
            value = z;
        } else {
            let y = g.tanh(z);
            let y2 = g.square(y);
            let neg = g.scale(y2, -1.0);
            let s = g.add_const(neg, 1.0); // 1 - y^2
            let ys = g.mul(y, s)?;
            let m2ys = g.scale(ys, -2.0); // -2 y (1 - y^2)
            for (col, ch2) in d2.iter_mut() {
                let ch1 = d1
                    .iter()
                    .find(|(c, _)| c == col)
                    .map(|(_, n)| *n)
                    .expect("validated: second-order columns have first-order channels");
                let lin = g.mul(s, *ch2)?;
                let d1sq = g.square(ch1);
                let curv = g.mul(m2ys, d1sq)?;
                *ch2 = g.add(lin, curv)?;
            }
            for (_, ch1) in d1.iter_mut() {
                *ch1 = g.mul(s, *ch1)?;
            }
            value = y;
        }
    }

    Ok(JetBatch { value, d1, d2 })
}

/// Network output together with first and second derivatives with respect
/// to designated scalar inputs.
#[derive(Debug, Clone)]
pub struct InputJet {
    /// `[d_out]` network output.
    pub value: Tensor,
    /// `[k, d_out]`: one row per designated input.
    pub d1: Tensor,
    /// `[k, d_out]`: zeros when the requested order is 1.
    pub d2: Tensor,
}

/// Evaluate an MLP on a single input vector.
pub fn eval_mlp(params: &ParamSet, spec: &MlpSpec, input: &Tensor) -> Result<Tensor> {
    input.ensure_finite("eval_mlp input")?;
    if input.len() != spec.input_width() {
        return Err(Error::ShapeMismatch {
            context: "eval_mlp".into(),
            expected: format!("input width {}", spec.input_width()),
            actual: format!("{}", input.len()),
        });
    }
    let mut g = Graph::new();
    let bound = g.bind(params);
    let x = g.constant(1, input.len(), input.data().to_vec());
    let out = mlp_forward(&mut g, &bound, &PlainWeights, "net", spec, x)?;
    Ok(Tensor::from_vec(
        vec![spec.output_width()],
        g.value(out).to_vec(),
    )?)
}

/// Exact derivatives of the network output with respect to designated
/// inputs, to first or second order.
pub fn input_jet(
    params: &ParamSet,
    spec: &MlpSpec,
    input: &Tensor,
    designated: &[usize],
    order: usize,
) -> Result<InputJet> {
    if order == 0 || order > 2 {
        return Err(Error::UnsupportedOrder { order });
    }
    input.ensure_finite("input_jet input")?;
    let req = JetRequest {
        first: designated.iter().map(|&c| (c, 1.0)).collect(),
        second: if order == 2 {
            designated.to_vec()
        } else {
            Vec::new()
        },
    };
    let mut g = Graph::new();
    let bound = g.bind(params);
    let x = g.constant(1, input.len(), input.data().to_vec());
    let jet = mlp_forward_jet(&mut g, &bound, &PlainWeights, "net", spec, x, &req)?;

    let w = spec.output_width();
    let k = designated.len();
    let value = Tensor::from_vec(vec![w], g.value(jet.value).to_vec())?;
    let mut d1 = vec![0.0; k * w];
    for (slot, &col) in designated.iter().enumerate() {
        let node = jet.d1_for(col).expect("channel present");
        d1[slot * w..(slot + 1) * w].copy_from_slice(g.value(node));
    }
    let mut d2 = vec![0.0; k * w];
    if order == 2 {
        for (slot, &col) in designated.iter().enumerate() {
            let node = jet.d2_for(col).expect("channel present");
            d2[slot * w..(slot + 1) * w].copy_from_slice(g.value(node));
        }
    }
    Ok(InputJet {
        value,
        d1: Tensor::from_vec(vec![k, w], d1)?,
        d2: Tensor::from_vec(vec![k, w], d2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_params(w: f64, b: f64) -> (ParamSet, MlpSpec) {
        let spec = MlpSpec::new(vec![1, 1]);
        let mut p = ParamSet::new();
        p.insert("net.w0", Tensor::from_vec(vec![1, 1], vec![w]).unwrap(), true)
            .unwrap();
        p.insert("net.b0", Tensor::from_vec(vec![1, 1], vec![b]).unwrap(), true)
            .unwrap();
        (p, spec)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(vec![3, 4, 2]);
        let mut p = ParamSet::new();
        for (l, w) in spec.dims.windows(2).enumerate() {
            p.insert(weight_name("net", l), Tensor::zeros(vec![w[1], w[0]]), true)
                .unwrap();
            p.insert(bias_name("net", l), Tensor::zeros(vec![1, w[1]]), true)
                .unwrap();
        }
        let out = eval_mlp(&p, &spec, &Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_tanh_layer_hand_value() {
        // hidden layer then affine identity output reproduces tanh(w x)
        let spec = MlpSpec::new(vec![1, 1, 1]);
        let mut p = ParamSet::new();
        p.insert("net.w0", Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(), true)
            .unwrap();
        p.insert("net.b0", Tensor::zeros(vec![1, 1]), true).unwrap();
        p.insert("net.w1", Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(), true)
            .unwrap();
        p.insert("net.b1", Tensor::zeros(vec![1, 1]), true).unwrap();
        let out = eval_mlp(&p, &spec, &Tensor::scalar(0.5)).unwrap();
        assert!((out.data()[0] - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn identity_linear_layer_passes_input() {
        let spec = MlpSpec::new(vec![2, 2]);
        let mut p = ParamSet::new();
        p.insert(
            "net.w0",
            Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            true,
        )
        .unwrap();
        p.insert("net.b0", Tensor::zeros(vec![1, 2]), true).unwrap();
        let out = eval_mlp(&p, &spec, &Tensor::from_vec(vec![2], vec![0.7, -1.3]).unwrap())
            .unwrap();
        assert_eq!(out.data(), &[0.7, -1.3]);
    }

    #[test]
    fn affine_network_has_zero_second_derivative() {
        let (p, spec) = toy_params(2.5, 0.3);
        let jet = input_jet(&p, &spec, &Tensor::scalar(0.4), &[0], 2).unwrap();
        assert_eq!(jet.d2.data(), &[0.0]);
        assert!((jet.d1.data()[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn one_tanh_neuron_symbolic_jet() {
        // y = tanh(w x), w = 2, x = 0.3
        // d1 = w (1 - y^2), d2 = -2 w^2 y (1 - y^2)
        let spec = MlpSpec::new(vec![1, 1, 1]);
        let mut p = ParamSet::new();
        p.insert("net.w0", Tensor::from_vec(vec![1, 1], vec![2.0]).unwrap(), true)
            .unwrap();
        p.insert("net.b0", Tensor::zeros(vec![1, 1]), true).unwrap();
        p.insert("net.w1", Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(), true)
            .unwrap();
        p.insert("net.b1", Tensor::zeros(vec![1, 1]), true).unwrap();
        let jet = input_jet(&p, &spec, &Tensor::scalar(0.3), &[0], 2).unwrap();
        let y = (2.0f64 * 0.3).tanh();
        let d1 = 2.0 * (1.0 - y * y);
        let d2 = -2.0 * 4.0 * y * (1.0 - y * y);
        assert!((jet.value.data()[0] - y).abs() < 1e-15);
        assert!((jet.d1.data()[0] - d1).abs() < 1e-14);
        assert!((jet.d2.data()[0] - d2).abs() < 1e-13);
    }

    #[test]
    fn jet_first_derivative_matches_finite_difference() {
        let spec = MlpSpec::new(vec![2, 16, 1]);
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        init_mlp(&mut p, "net", &spec, &mut rng).unwrap();
        let x0 = [0.37, -0.61];
        let h = 1e-5;
        let jet = input_jet(
            &p,
            &spec,
            &Tensor::from_vec(vec![2], x0.to_vec()).unwrap(),
            &[0, 1],
            2,
        )
        .unwrap();
        for col in 0..2 {
            let mut xp = x0;
            xp[col] += h;
            let mut xm = x0;
            xm[col] -= h;
            let fp = eval_mlp(&p, &spec, &Tensor::from_vec(vec![2], xp.to_vec()).unwrap())
                .unwrap()
                .data()[0];
            let fm = eval_mlp(&p, &spec, &Tensor::from_vec(vec![2], xm.to_vec()).unwrap())
                .unwrap()
                .data()[0];
            let f0 = eval_mlp(&p, &spec, &Tensor::from_vec(vec![2], x0.to_vec()).unwrap())
                .unwrap()
                .data()[0];
            let fd1 = (fp - fm) / (2.0 * h);
            let fd2 = (fp - 2.0 * f0 + fm) / (h * h);
            let a1 = jet.d1.data()[col];
            let a2 = jet.d2.data()[col];
            assert!(
                (a1 - fd1).abs() / (a1.abs() + 1e-12) < 1e-6,
                "d1 col {col}: {a1} vs {fd1}"
            );
            assert!(
                (a2 - fd2).abs() / (a2.abs() + 1e-12) < 1e-4,
                "d2 col {col}: {a2} vs {fd2}"
            );
        }
    }

    #[test]
    fn order_three_unsupported() {
        let (p, spec) = toy_params(1.0, 0.0);
        assert!(matches!(
            input_jet(&p, &spec, &Tensor::scalar(0.1), &[0], 3),
            Err(Error::UnsupportedOrder { order: 3 })
        ));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let (p, spec) = toy_params(1.0, 0.0);
        let err = eval_mlp(&p, &spec, &Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(err.is_err());
    }

    #[test]
    fn evaluation_is_bitwise_deterministic() {
        let spec = MlpSpec::new(vec![3, 8, 8, 1]);
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        init_mlp(&mut p, "net", &spec, &mut rng).unwrap();
        let x = Tensor::from_vec(vec![3], vec![0.2, -0.9, 0.44]).unwrap();
        let a = eval_mlp(&p, &spec, &x).unwrap();
        let b = eval_mlp(&p, &spec, &x).unwrap();
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
    }
}
