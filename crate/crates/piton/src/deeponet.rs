//! Deep operator networks: K branch nets, one trunk net, dot-product head.
//!
//! The model output for a sensor vector `u` and coordinate `x` is
//! `sum_k p_k(u) b_k(x)`: each of the K branch networks maps the m sensor
//! values to one coefficient, and the trunk maps the coordinate vector to
//! the K basis values. Trunk coordinates are affinely rescaled to [-1, 1]
//! per input column before entering the network; the scaling constants are
//! part of the model and are folded into derivative seeds by the jet
//! builders.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, NodeId};
use crate::lora::{self, LoraRanks};
use crate::net::{
    self, bias_name, weight_name, JetBatch, JetRequest, LoraWeights, MlpSpec, PlainWeights,
    WeightResolver,
};
use crate::tensor::{average_params, ParamSet, Tensor};

/// Column offsets/scales for trunk inputs: `x_hat = (x - offset) * scale`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InputScale {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScale {
    pub fn identity(width: usize) -> Self {
        InputScale {
            offset: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    /// Map `[lo, hi]` per column onto `[-1, 1]`.
    pub fn normalizing(ranges: &[(f64, f64)]) -> Self {
        let mut offset = Vec::with_capacity(ranges.len());
        let mut scale = Vec::with_capacity(ranges.len());
        for &(lo, hi) in ranges {
            offset.push(0.5 * (lo + hi));
            scale.push(2.0 / (hi - lo));
        }
        InputScale { offset, scale }
    }

    pub fn apply(&self, coords: &[f64], width: usize) -> Vec<f64> {
        coords
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.offset[i % width]) * self.scale[i % width])
            .collect()
    }
}

/// Architecture description, independent of the parameter values.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    /// Basis count K: number of branch nets and trunk output width.
    pub basis: usize,
    /// Sensor count m: input width of every branch net.
    pub sensors: usize,
    /// Hidden widths of each branch net (input/output widths are implied).
    pub branch_hidden: Vec<usize>,
    /// Trunk input width (coordinate dimension) and hidden widths.
    pub trunk_input: usize,
    pub trunk_hidden: Vec<usize>,
}

impl ModelSpec {
    /// The architecture used by all benchmark experiments: 10 basis
    /// functions, branch nets m -> 100 -> 1, trunk 2 -> 100^5 -> 10.
    pub fn benchmark_default() -> Self {
        ModelSpec {
            basis: 10,
            sensors: 13,
            branch_hidden: vec![100],
            trunk_input: 2,
            trunk_hidden: vec![100; 5],
        }
    }

    pub fn branch_spec(&self) -> MlpSpec {
        let mut dims = vec![self.sensors];
        dims.extend_from_slice(&self.branch_hidden);
        dims.push(1);
        MlpSpec::new(dims)
    }

    pub fn trunk_spec(&self) -> MlpSpec {
        let mut dims = vec![self.trunk_input];
        dims.extend_from_slice(&self.trunk_hidden);
        dims.push(self.basis);
        MlpSpec::new(dims)
    }

    pub fn branch_prefix(k: usize) -> String {
        format!("branch{k}")
    }

    pub const TRUNK_PREFIX: &'static str = "trunk";
}

/// Whether every parameter trains or only adapter factors do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Full,
    Lora,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub tag: String,
    pub provenance: String,
}

/// A deep operator network: spec, trunk input scaling, parameters, and
/// optional adapter ranks when LoRA-wrapped.
#[derive(Debug, Clone)]
pub struct DeepONetModel {
    pub spec: ModelSpec,
    pub trunk_scale: InputScale,
    pub params: ParamSet,
    pub lora: Option<LoraRanks>,
    pub meta: ModelMeta,
}

impl DeepONetModel {
    /// Fresh Glorot-initialized model. Branch nets are initialized in index
    /// order, then the trunk.
    pub fn init(spec: ModelSpec, trunk_scale: InputScale, rng: &mut impl Rng, meta: ModelMeta) -> Result<Self> {
        if trunk_scale.offset.len() != spec.trunk_input {
            return Err(Error::InvalidConfig(format!(
                "trunk scale width {} != trunk input {}",
                trunk_scale.offset.len(),
                spec.trunk_input
            )));
        }
        let mut params = ParamSet::new();
        let bspec = spec.branch_spec();
        for k in 0..spec.basis {
            net::init_mlp(&mut params, &ModelSpec::branch_prefix(k), &bspec, rng)?;
        }
        net::init_mlp(&mut params, ModelSpec::TRUNK_PREFIX, &spec.trunk_spec(), rng)?;
        Ok(DeepONetModel {
            spec,
            trunk_scale,
            params,
            lora: None,
            meta,
        })
    }

    /// Same spec and scaling, different parameter values.
    pub fn with_params(&self, params: ParamSet, provenance: &str) -> DeepONetModel {
        DeepONetModel {
            spec: self.spec.clone(),
            trunk_scale: self.trunk_scale.clone(),
            params,
            lora: self.lora.clone(),
            meta: ModelMeta {
                seed: self.meta.seed,
                tag: self.meta.tag.clone(),
                provenance: provenance.into(),
            },
        }
    }

    fn weight_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let bspec = self.spec.branch_spec();
        for k in 0..self.spec.basis {
            for l in 0..bspec.layers() {
                names.push(weight_name(&ModelSpec::branch_prefix(k), l));
            }
        }
        for l in 0..self.spec.trunk_spec().layers() {
            names.push(weight_name(ModelSpec::TRUNK_PREFIX, l));
        }
        names
    }

    /// Attach adapters to every affine layer and freeze the base. Ranks are
    /// clamped per layer; the final trunk layer uses its own rank.
    pub fn wrap_lora(&mut self, ranks: &LoraRanks, rng: &mut impl Rng) -> Result<()> {
        if self.lora.is_some() {
            return Err(Error::InvalidConfig("model already LoRA-wrapped".into()));
        }
        let trunk_layers = self.spec.trunk_spec().layers();
        for name in self.weight_names() {
            let requested = if name.starts_with("branch") {
                ranks.branch
            } else if name == weight_name(ModelSpec::TRUNK_PREFIX, trunk_layers - 1) {
                ranks.trunk_final
            } else {
                ranks.trunk
            };
            lora::wrap_weight(&mut self.params, &name, requested, rng)?;
        }
        for p in self.params.iter_mut() {
            p.trainable = lora::is_adapter_name(&p.name);
        }
        self.lora = Some(ranks.clone());
        Ok(())
    }

    /// Drop adapters, restoring a plain fully trainable model. Adapter
    /// deltas are NOT folded into the base.
    pub fn strip_lora(&mut self) -> ParamSet {
        let mut base = ParamSet::new();
        for p in self.params.iter() {
            if !lora::is_adapter_name(&p.name) {
                base.insert(p.name.clone(), p.value.clone(), true)
                    .expect("unique names");
            }
        }
        self.lora = None;
        std::mem::replace(&mut self.params, base)
    }

    fn resolver(&self) -> Box<dyn WeightResolver> {
        if self.lora.is_some() {
            Box::new(LoraWeights)
        } else {
            Box::new(PlainWeights)
        }
    }

    /// Branch coefficients for a batch of sensor vectors: `[n, m] -> [n, K]`.
    pub fn branch_outputs(&self, g: &mut Graph, bound: &Bound, inputs: NodeId) -> Result<NodeId> {
        let resolver = self.resolver();
        let bspec = self.spec.branch_spec();
        let mut parts = Vec::with_capacity(self.spec.basis);
        for k in 0..self.spec.basis {
            parts.push(net::mlp_forward(
                g,
                bound,
                resolver.as_ref(),
                &ModelSpec::branch_prefix(k),
                &bspec,
                inputs,
            )?);
        }
        g.concat_cols(&parts)
    }

    /// Scaled trunk input node from raw coordinates (row-major `[n, d]`).
    pub fn trunk_input_node(&self, g: &mut Graph, coords: &[f64]) -> NodeId {
        let d = self.spec.trunk_input;
        let n = coords.len() / d;
        let scaled = self.trunk_scale.apply(coords, d);
        g.constant(n, d, scaled)
    }

    /// Trunk basis values at raw coordinates: `[n, d] -> [n, K]`.
    pub fn trunk_outputs(&self, g: &mut Graph, bound: &Bound, coords: &[f64]) -> Result<NodeId> {
        let x = self.trunk_input_node(g, coords);
        net::mlp_forward(
            g,
            bound,
            self.resolver().as_ref(),
            ModelSpec::TRUNK_PREFIX,
            &self.spec.trunk_spec(),
            x,
        )
    }

    /// Trunk basis values with derivative channels with respect to the raw
    /// coordinates of the requested columns (scaling is folded into the
    /// seeds).
    pub fn trunk_outputs_jet(
        &self,
        g: &mut Graph,
        bound: &Bound,
        coords: &[f64],
        first: &[usize],
        second: &[usize],
    ) -> Result<JetBatch> {
        let x = self.trunk_input_node(g, coords);
        let req = JetRequest {
            first: first
                .iter()
                .map(|&c| (c, self.trunk_scale.scale[c]))
                .collect(),
            second: second.to_vec(),
        };
        net::mlp_forward_jet(
            g,
            bound,
            self.resolver().as_ref(),
            ModelSpec::TRUNK_PREFIX,
            &self.spec.trunk_spec(),
            x,
            &req,
        )
    }

    /// Batched evaluation: predictions `[n_inputs, n_coords]`.
    pub fn eval_batch(&self, inputs: &Tensor, coords: &[f64]) -> Result<Tensor> {
        let (n_u, m) = inputs.matrix_dims();
        if m != self.spec.sensors {
            return Err(Error::ShapeMismatch {
                context: "deeponet eval".into(),
                expected: format!("{} sensors", self.spec.sensors),
                actual: format!("{m}"),
            });
        }
        inputs.ensure_finite("deeponet eval inputs")?;
        let mut g = Graph::new();
        let bound = g.bind(&self.params);
        let u = g.constant(n_u, m, inputs.data().to_vec());
        let p = self.branch_outputs(&mut g, &bound, u)?;
        let b = self.trunk_outputs(&mut g, &bound, coords)?;
        let out = g.matmul_transb(p, b)?;
        let n_pts = coords.len() / self.spec.trunk_input;
        Ok(Tensor::from_vec(vec![n_u, n_pts], g.value(out).to_vec())?)
    }

    /// Single-sample evaluation `sum_k p_k(u) b_k(coord)`.
    pub fn eval(&self, sensor_values: &Tensor, coord: &[f64]) -> Result<f64> {
        if coord.len() != self.spec.trunk_input {
            return Err(Error::ShapeMismatch {
                context: "deeponet eval coord".into(),
                expected: format!("{} coordinates", self.spec.trunk_input),
                actual: format!("{}", coord.len()),
            });
        }
        let inputs = Tensor::from_vec(vec![1, sensor_values.len()], sensor_values.data().to_vec())?;
        let out = self.eval_batch(&inputs, coord)?;
        Ok(out.data()[0])
    }

    /// Trainable parameter count in the given mode. Full counts every base
    /// weight and bias; LoRA counts adapter entries only (biases frozen).
    pub fn count_trainable(&self, mode: TrainMode) -> usize {
        match mode {
            TrainMode::Full => {
                let bspec = self.spec.branch_spec();
                self.spec.basis * bspec.param_count() + self.spec.trunk_spec().param_count()
            }
            TrainMode::Lora => self
                .params
                .iter()
                .filter(|p| lora::is_adapter_name(&p.name))
                .map(|p| p.value.len())
                .sum(),
        }
    }

    /// Names of parameters that train in the given mode.
    pub fn trainable_names(&self, mode: TrainMode) -> Vec<String> {
        match mode {
            TrainMode::Full => self
                .params
                .iter()
                .filter(|p| !lora::is_adapter_name(&p.name))
                .map(|p| p.name.clone())
                .collect(),
            TrainMode::Lora => self
                .params
                .iter()
                .filter(|p| lora::is_adapter_name(&p.name))
                .map(|p| p.name.clone())
                .collect(),
        }
    }
}

/// Elementwise mean across models' parameter sets (see
/// [`crate::tensor::average_params`] for ordering guarantees).
pub fn average_models(models: &[&DeepONetModel]) -> Result<ParamSet> {
    let sets: Vec<&ParamSet> = models.iter().map(|m| &m.params).collect();
    average_params(&sets)
}
