//! Scalar-output MLPs with layer-addressable parameters and optional
//! low-rank adapters.
//!
//! Each dense layer `l` maps `h ↦ W_l h + b_l`; hidden layers are followed by
//! the configured activation, the output layer is linear with width 1. With
//! adapters enabled the base weights are frozen inside the [`Model`] and the
//! trainable [`ParamVector`] holds only the factors `A` (r×fan_in) and
//! `B` (fan_out×r), composed as `W + B·A` (scaling factor 1).

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentGroup {
    DenseWeight,
    DenseBias,
    LoraA,
    LoraB,
}

impl SegmentGroup {
    pub fn tag(self) -> &'static str {
        match self {
            SegmentGroup::DenseWeight => "dense-weight",
            SegmentGroup::DenseBias => "dense-bias",
            SegmentGroup::LoraA => "lora-A",
            SegmentGroup::LoraB => "lora-B",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId {
    pub layer: usize,
    pub group: SegmentGroup,
}

impl SegmentId {
    pub fn new(layer: usize, group: SegmentGroup) -> Self {
        Self { layer, group }
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{}", self.layer, self.group.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Ordered, contiguous partition of the parameter vector into named segments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMap {
    segments: Vec<Segment>,
}

impl LayerMap {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut expected = 0;
        let mut seen = BTreeSet::new();
        for s in &segments {
            if s.offset != expected {
                return Err(Error::Shape(format!(
                    "segment {} starts at {} but previous segment ended at {expected}",
                    s.id, s.offset
                )));
            }
            if !seen.insert(s.id) {
                return Err(Error::Shape(format!("duplicate segment id {}", s.id)));
            }
            expected += s.len;
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn dim(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn get(&self, id: SegmentId) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<SegmentId> {
        self.segments.iter().map(|s| s.id).collect()
    }

    /// Distinct layer indices in ascending order.
    pub fn layers(&self) -> Vec<usize> {
        self.segments
            .iter()
            .map(|s| s.id.layer)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn layer_segments(&self, layer: usize) -> Vec<SegmentId> {
        self.segments
            .iter()
            .filter(|s| s.id.layer == layer)
            .map(|s| s.id)
            .collect()
    }

    /// Parameter indices covered by `subset`, in layer-map order.
    pub fn indices(&self, subset: &[SegmentId]) -> Result<Vec<usize>> {
        if subset.is_empty() {
            return Err(Error::Domain("parameter subset is empty".into()));
        }
        let wanted: BTreeSet<SegmentId> = subset.iter().copied().collect();
        for id in &wanted {
            if self.get(*id).is_none() {
                return Err(Error::Domain(format!("unknown segment {id}")));
            }
        }
        Ok(self
            .segments
            .iter()
            .filter(|s| wanted.contains(&s.id))
            .flat_map(|s| s.range())
            .collect())
    }
}

/// Flat parameter vector tied to its layer map.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layer_map: Arc<LayerMap>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layer_map: Arc<LayerMap>) -> Result<Self> {
        if values.len() != layer_map.dim() {
            return Err(Error::Shape(format!(
                "{} values for a layer map of dimension {}",
                values.len(),
                layer_map.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(Self { values, layer_map })
    }

    /// Same layer map, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, Arc::clone(&self.layer_map))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layer_map(&self) -> &LayerMap {
        &self.layer_map
    }

    pub fn shared_layer_map(&self) -> Arc<LayerMap> {
        Arc::clone(&self.layer_map)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, id: SegmentId) -> Option<&[f64]> {
        self.layer_map.get(id).map(|s| &self.values[s.range()])
    }

    /// `‖self − other‖₂`.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoraConfig {
    /// Dense layer indices that receive an adapter.
    pub target_layers: Vec<usize>,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub lora: Option<LoraConfig>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_widths.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden_widths);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be at least 1".into()));
        }
        if let Some(lora) = &self.lora {
            let widths = self.widths();
            let n_layers = widths.len() - 1;
            if lora.rank == 0 {
                return Err(Error::Config("LoRA rank must be at least 1".into()));
            }
            if lora.target_layers.is_empty() {
                return Err(Error::Config("LoRA needs at least one target layer".into()));
            }
            for &l in &lora.target_layers {
                if l >= n_layers {
                    return Err(Error::Config(format!(
                        "LoRA target layer {l} does not exist ({n_layers} layers)"
                    )));
                }
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                if lora.rank > fan_in.min(fan_out) {
                    return Err(Error::Config(format!(
                        "LoRA rank {} exceeds min(fan_in, fan_out) = {} on layer {l}",
                        lora.rank,
                        fan_in.min(fan_out)
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct DenseSlot {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct LoraSlot {
    a: usize,
    b: usize,
}

/// Weights actually used by the forward pass for one parameter value.
struct Effective {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Immutable model handle; parameters are passed in per call.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    widths: Vec<usize>,
    dense: Vec<DenseSlot>,
    /// Frozen dense parameters, present only when adapters are active.
    frozen: Option<Vec<f64>>,
    lora: Vec<Option<LoraSlot>>,
    rank: usize,
    layer_map: Arc<LayerMap>,
}

/// Builds the model and its deterministic initial parameters `θ0`.
pub fn build_model(cfg: &ModelConfig) -> Result<(Model, ParamVector)> {
    Model::build(cfg)
}

impl Model {
    pub fn build(cfg: &ModelConfig) -> Result<(Model, ParamVector)> {
        cfg.validate()?;
        let widths = cfg.widths();
        let n_layers = widths.len() - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let mut dense_segments = Vec::new();
        let mut dense = Vec::with_capacity(n_layers);
        let mut base = Vec::new();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w = base.len();
            let std = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(&mut rng);
                base.push(std * z);
            }
            let b = base.len();
            base.extend(std::iter::repeat_n(0.0, fan_out));
            dense_segments.push(Segment {
                id: SegmentId::new(l, SegmentGroup::DenseWeight),
                offset: w,
                len: fan_in * fan_out,
            });
            dense_segments.push(Segment {
                id: SegmentId::new(l, SegmentGroup::DenseBias),
                offset: b,
                len: fan_out,
            });
            dense.push(DenseSlot { w, b });
        }

        let Some(lora_cfg) = &cfg.lora else {
            let layer_map = Arc::new(LayerMap::new(dense_segments)?);
            let theta0 = ParamVector::new(base, Arc::clone(&layer_map))?;
            let model = Model {
                config: cfg.clone(),
                widths,
                dense,
                frozen: None,
                lora: vec![None; n_layers],
                rank: 0,
                layer_map,
            };
            return Ok((model, theta0));
        };

        let r = lora_cfg.rank;
        let targets: BTreeSet<usize> = lora_cfg.target_layers.iter().copied().collect();
        let mut lora = vec![None; n_layers];
        let mut segments = Vec::new();
        let mut values = Vec::new();
        let a_scale = 1.0 / (r as f64).sqrt();
        for &l in &targets {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let a = values.len();
            for _ in 0..r * fan_in {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(a_scale * z);
            }
            let b = values.len();
            values.extend(std::iter::repeat_n(0.0, fan_out * r));
            segments.push(Segment {
                id: SegmentId::new(l, SegmentGroup::LoraA),
                offset: a,
                len: r * fan_in,
            });
            segments.push(Segment {
                id: SegmentId::new(l, SegmentGroup::LoraB),
                offset: b,
                len: fan_out * r,
            });
            lora[l] = Some(LoraSlot { a, b });
        }
        let layer_map = Arc::new(LayerMap::new(segments)?);
        let theta0 = ParamVector::new(values, Arc::clone(&layer_map))?;
        let model = Model {
            config: cfg.clone(),
            widths,
            dense,
            frozen: Some(base),
            lora,
            rank: r,
            layer_map,
        };
        Ok((model, theta0))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn layer_map(&self) -> &LayerMap {
        &self.layer_map
    }

    pub fn shared_layer_map(&self) -> Arc<LayerMap> {
        Arc::clone(&self.layer_map)
    }

    pub fn dim(&self) -> usize {
        self.layer_map.dim()
    }

    pub fn has_lora(&self) -> bool {
        self.frozen.is_some()
    }

    /// Wraps raw values in this model's layer map.
    pub fn params(&self, values: Vec<f64>) -> Result<ParamVector> {
        ParamVector::new(values, Arc::clone(&self.layer_map))
    }

    fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        if !Arc::ptr_eq(&theta.layer_map, &self.layer_map) && *theta.layer_map != *self.layer_map {
            return Err(Error::Shape(
                "parameter vector does not belong to this model".into(),
            ));
        }
        Ok(())
    }

    fn check_inputs(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "inputs have {} columns, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn effective(&self, theta: &[f64]) -> Effective {
        let base = self.frozen.as_deref().unwrap_or(theta);
        let mut weights = Vec::with_capacity(self.n_layers());
        let mut biases = Vec::with_capacity(self.n_layers());
        for (l, slot) in self.dense.iter().enumerate() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let mut w = base[slot.w..slot.w + fan_in * fan_out].to_vec();
            if let Some(ls) = &self.lora[l] {
                let r = self.rank;
                let a = &theta[ls.a..ls.a + r * fan_in];
                let b = &theta[ls.b..ls.b + fan_out * r];
                for o in 0..fan_out {
                    for k in 0..r {
                        let bok = b[o * r + k];
                        if bok == 0.0 {
                            continue;
                        }
                        for i in 0..fan_in {
                            w[o * fan_in + i] += bok * a[k * fan_in + i];
                        }
                    }
                }
            }
            weights.push(w);
            biases.push(base[slot.b..slot.b + fan_out].to_vec());
        }
        Effective { weights, biases }
    }

    /// Pre-activations of every layer for one input; the last entry holds the output.
    fn forward_trace(&self, eff: &Effective, x: &[f64]) -> Vec<Vec<f64>> {
        let act = self.config.activation;
        let n_layers = self.n_layers();
        let mut zs = Vec::with_capacity(n_layers);
        let mut h: Vec<f64> = x.to_vec();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = &eff.weights[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    eff.biases[l][o]
                        + w[o * fan_in..(o + 1) * fan_in]
                            .iter()
                            .zip(&h)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                h = z.iter().map(|&v| act.apply(v)).collect();
            }
            zs.push(z);
        }
        zs
    }

    /// Adds `scale · ∂f(x)/∂θ` into `out` (length `dim`).
    fn accumulate_gradient(
        &self,
        eff: &Effective,
        theta: &[f64],
        x: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> f64 {
        let act = self.config.activation;
        let n_layers = self.n_layers();
        let zs = self.forward_trace(eff, x);
        let output = zs[n_layers - 1][0];

        let mut delta = vec![scale];
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let input: Vec<f64> = if l == 0 {
                x.to_vec()
            } else {
                zs[l - 1].iter().map(|&v| act.apply(v)).collect()
            };
            match &self.lora[l] {
                Some(ls) => {
                    let r = self.rank;
                    let a = &theta[ls.a..ls.a + r * fan_in];
                    let b = &theta[ls.b..ls.b + fan_out * r];
                    // ∂/∂A = Bᵀ δ hᵀ
                    for k in 0..r {
                        let btd: f64 = (0..fan_out).map(|o| b[o * r + k] * delta[o]).sum();
                        if btd != 0.0 {
                            for i in 0..fan_in {
                                out[ls.a + k * fan_in + i] += btd * input[i];
                            }
                        }
                    }
                    // ∂/∂B = δ (A h)ᵀ
                    for k in 0..r {
                        let ah: f64 = (0..fan_in).map(|i| a[k * fan_in + i] * input[i]).sum();
                        for o in 0..fan_out {
                            out[ls.b + o * r + k] += delta[o] * ah;
                        }
                    }
                }
                None if self.frozen.is_none() => {
                    let slot = &self.dense[l];
                    for o in 0..fan_out {
                        let d = delta[o];
                        out[slot.b + o] += d;
                        if d != 0.0 {
                            let row = &mut out[slot.w + o * fan_in..slot.w + (o + 1) * fan_in];
                            for (g, &h) in row.iter_mut().zip(&input) {
                                *g += d * h;
                            }
                        }
                    }
                }
                None => {}
            }
            if l > 0 {
                let w = &eff.weights[l];
                let prev = &zs[l - 1];
                delta = (0..fan_in)
                    .map(|i| {
                        let back: f64 = (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum();
                        back * act.derivative(prev[i])
                    })
                    .collect();
            }
        }
        output
    }

    pub fn forward_one(&self, theta: &ParamVector, x: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let eff = self.effective(&theta.values);
        Ok(self.forward_trace(&eff, x)[self.n_layers() - 1][0])
    }

    /// `f_θ(X)`, one output per row of `x`.
    pub fn forward(&self, theta: &ParamVector, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_inputs(x)?;
        let eff = self.effective(&theta.values);
        let last = self.n_layers() - 1;
        Ok((0..x.rows())
            .map(|i| self.forward_trace(&eff, x.row(i))[last][0])
            .collect())
    }

    /// Output of the frozen base network, ignoring any adapters.
    pub fn forward_base(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_inputs(x)?;
        let Some(base) = &self.frozen else {
            return Err(Error::Domain(
                "model has no frozen base (no adapters)".into(),
            ));
        };
        let mut plain = self.clone();
        plain.frozen = None;
        plain.lora = vec![None; self.n_layers()];
        let eff = plain.effective(base);
        let last = self.n_layers() - 1;
        Ok((0..x.rows())
            .map(|i| plain.forward_trace(&eff, x.row(i))[last][0])
            .collect())
    }

    /// Jacobian of `f_θ(X)` with respect to every trainable parameter (n × dim).
    pub fn jacobian_full(&self, theta: &ParamVector, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_theta(theta)?;
        self.check_inputs(x)?;
        let eff = self.effective(&theta.values);
        let dim = self.dim();
        let mut jac = DenseMatrix::zeros(x.rows(), dim);
        for i in 0..x.rows() {
            self.accumulate_gradient(&eff, &theta.values, x.row(i), 1.0, jac.row_mut(i));
        }
        Ok(jac)
    }

    /// Jacobian restricted to the parameters of `subset`, columns in layer-map order.
    pub fn jacobian(
        &self,
        theta: &ParamVector,
        x: &DenseMatrix,
        subset: &[SegmentId],
    ) -> Result<DenseMatrix> {
        let cols = self.layer_map.indices(subset)?;
        let full = self.jacobian_full(theta, x)?;
        if cols.len() == full.cols() {
            return Ok(full);
        }
        let rows: Vec<usize> = (0..full.rows()).collect();
        Ok(full.submatrix(&rows, &cols))
    }

    /// Residual `f_θ(X) − Y` and the gradient `2 Jᵀ (f_θ(X) − Y)` of the squared-loss risk.
    pub fn risk_gradient(
        &self,
        theta: &ParamVector,
        x: &DenseMatrix,
        y: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = self.forward(theta, x)?;
        if y.len() != f.len() {
            return Err(Error::Shape(format!(
                "{} targets for {} samples",
                y.len(),
                f.len()
            )));
        }
        let residual: Vec<f64> = f.iter().zip(y).map(|(a, b)| a - b).collect();
        let eff = self.effective(&theta.values);
        let mut grad = vec![0.0; self.dim()];
        for (i, &r) in residual.iter().enumerate() {
            if r != 0.0 {
                self.accumulate_gradient(&eff, &theta.values, x.row(i), 2.0 * r, &mut grad);
            }
        }
        Ok((residual, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear(d: usize) -> ModelConfig {
        ModelConfig {
            input_dim: d,
            hidden_widths: vec![],
            activation: Activation::Identity,
            lora: None,
            seed: 0,
        }
    }

    fn random_inputs(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::new(
            n,
            d,
            (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_model_is_dot_product() {
        let (model, theta0) = build_model(&linear(2)).unwrap();
        let theta = theta0.with_values(vec![1.0, 2.0, 0.0]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(model.forward(&theta, &x).unwrap(), vec![11.0]);
    }

    #[test]
    fn linear_jacobian_is_design_matrix() {
        let (model, theta0) = build_model(&linear(3)).unwrap();
        let x = random_inputs(5, 3, 7);
        let w = model
            .jacobian(&theta0, &x, &[SegmentId::new(0, SegmentGroup::DenseWeight)])
            .unwrap();
        assert_eq!(w, x);
        let b = model
            .jacobian(&theta0, &x, &[SegmentId::new(0, SegmentGroup::DenseBias)])
            .unwrap();
        assert_eq!(b.as_slice(), &[1.0; 5]);
    }

    #[test]
    fn lora_adds_m_plus_p_times_r_parameters() {
        let cfg = ModelConfig {
            input_dim: 4,
            hidden_widths: vec![4],
            activation: Activation::Tanh,
            lora: Some(LoraConfig {
                target_layers: vec![0],
                rank: 1,
            }),
            seed: 3,
        };
        let (model, theta0) = build_model(&cfg).unwrap();
        assert_eq!(theta0.len(), (4 + 4) * 1);
        assert!(model.has_lora());
        assert!(theta0
            .segment(SegmentId::new(0, SegmentGroup::LoraB))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn lora_rank_validation() {
        let cfg = ModelConfig {
            input_dim: 4,
            hidden_widths: vec![2],
            activation: Activation::Tanh,
            lora: Some(LoraConfig {
                target_layers: vec![0],
                rank: 3,
            }),
            seed: 0,
        };
        assert!(matches!(build_model(&cfg), Err(Error::Config(_))));
        let mut bad = linear(2);
        bad.hidden_widths = vec![0];
        assert!(matches!(build_model(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_init() {
        let cfg = ModelConfig {
            input_dim: 3,
            hidden_widths: vec![5, 4],
            activation: Activation::Tanh,
            lora: None,
            seed: 42,
        };
        let (_, a) = build_model(&cfg).unwrap();
        let (_, b) = build_model(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_adapter_matches_frozen_base() {
        let cfg = ModelConfig {
            input_dim: 3,
            hidden_widths: vec![6, 5],
            activation: Activation::Tanh,
            lora: Some(LoraConfig {
                target_layers: vec![0, 1],
                rank: 2,
            }),
            seed: 11,
        };
        let (model, theta0) = build_model(&cfg).unwrap();
        let x = random_inputs(9, 3, 1);
        assert_eq!(
            model.forward(&theta0, &x).unwrap(),
            model.forward_base(&x).unwrap()
        );
    }

    #[test]
    fn jacobian_rejects_bad_subsets() {
        let (model, theta0) = build_model(&linear(2)).unwrap();
        let x = random_inputs(2, 2, 0);
        assert!(matches!(
            model.jacobian(&theta0, &x, &[]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            model.jacobian(&theta0, &x, &[SegmentId::new(0, SegmentGroup::LoraA)]),
            Err(Error::Domain(_))
        ));
        let wrong = random_inputs(2, 3, 0);
        assert!(matches!(
            model.forward(&theta0, &wrong),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn risk_gradient_is_twice_jacobian_transpose_residual() {
        let cfg = ModelConfig {
            input_dim: 2,
            hidden_widths: vec![3],
            activation: Activation::Tanh,
            lora: None,
            seed: 5,
        };
        let (model, theta0) = build_model(&cfg).unwrap();
        let x = random_inputs(4, 2, 9);
        let y = vec![0.5, -0.2, 0.1, 1.0];
        let (r, g) = model.risk_gradient(&theta0, &x, &y).unwrap();
        let j = model.jacobian_full(&theta0, &x).unwrap();
        let expect = j.transpose().matvec(&r).unwrap();
        for (a, b) in g.iter().zip(&expect) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_map_validation() {
        let seg = |layer, offset, len| Segment {
            id: SegmentId::new(layer, SegmentGroup::DenseWeight),
            offset,
            len,
        };
        assert!(LayerMap::new(vec![seg(0, 0, 2), seg(1, 3, 1)]).is_err());
        assert!(LayerMap::new(vec![seg(0, 0, 2), seg(0, 2, 1)]).is_err());
        assert_eq!(
            LayerMap::new(vec![seg(0, 0, 2), seg(1, 2, 1)])
                .unwrap()
                .dim(),
            3
        );
    }
}
