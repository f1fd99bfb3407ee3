//! Attention-pooling value network with hand-written reverse-mode gradients.
//!
//! Every human is embedded together with the robot features and its local
//! map. A score net turns each embedding (optionally joined with the crowd
//! mean) into a logit, the logits are softmax-normalised and the weighted sum
//! of embeddings is fed with the robot features to the value head.
//!
//! Parameters live in one flat vector. Layers are laid out embedding,
//! attention, head; within a layer the `out x in` weight matrix comes first
//! in row-major order, followed by the bias.

mod checkpoint;
mod local_map;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use local_map::{build_local_maps, LocalMapConfig, MAP_CHANNELS};

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{HumanFeatures, RobotFeatures, RotatedState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden sizes of the per-human embedding MLP; the last one is the
    /// embedding width.
    pub embedding: Vec<usize>,
    /// Score MLP sizes, ending in 1.
    pub attention: Vec<usize>,
    /// Value head sizes, ending in 1.
    pub head: Vec<usize>,
    /// Feed the mean embedding next to each embedding into the score net.
    pub global_score: bool,
    pub local_map: LocalMapConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            embedding: vec![150, 100],
            attention: vec![100, 100, 1],
            head: vec![150, 100, 100, 1],
            global_score: true,
            local_map: LocalMapConfig::default(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, sizes: &[usize]| -> Result<()> {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::Config(format!("network.{name} needs non-zero layer sizes")));
            }
            Ok(())
        };
        check("embedding", &self.embedding)?;
        check("attention", &self.attention)?;
        check("head", &self.head)?;
        if self.attention.last() != Some(&1) || self.head.last() != Some(&1) {
            return Err(Error::Config("network.attention and network.head must end in 1".into()));
        }
        if self.local_map.grid_side == 0 || !(self.local_map.cell_size > 0.0) {
            return Err(Error::Config("local map needs grid_side >= 1 and cell_size > 0".into()));
        }
        Ok(())
    }

    /// Width of one per-human input row: robot, human, map.
    pub fn human_input_dim(&self) -> usize {
        RobotFeatures::DIM + HumanFeatures::DIM + self.local_map.len()
    }

    pub fn embedding_dim(&self) -> usize {
        *self.embedding.last().expect("validated config")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layer {
    pub offset: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Layer {
    fn weight_len(&self) -> usize {
        self.n_in * self.n_out
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    fn end(&self) -> usize {
        self.bias_offset() + self.n_out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub embedding: Vec<Layer>,
    pub attention: Vec<Layer>,
    pub head: Vec<Layer>,
    pub total: usize,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let mut offset = 0;
        let mut stack = |n_in: usize, sizes: &[usize]| {
            let mut prev = n_in;
            sizes
                .iter()
                .map(|&n_out| {
                    let l = Layer {
                        offset,
                        n_in: prev,
                        n_out,
                    };
                    offset = l.end();
                    prev = n_out;
                    l
                })
                .collect::<Vec<_>>()
        };
        let d = cfg.embedding_dim();
        let embedding = stack(cfg.human_input_dim(), &cfg.embedding);
        let attention = stack(if cfg.global_score { 2 * d } else { d }, &cfg.attention);
        let head = stack(RobotFeatures::DIM + d, &cfg.head);
        Self {
            embedding,
            attention,
            head,
            total: offset,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.embedding.iter().chain(&self.attention).chain(&self.head)
    }
}

/// Network inputs for one joint state, flattened once so the state can be
/// replayed many times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    pub robot: [f64; RobotFeatures::DIM],
    /// `n_humans` rows of `human_input_dim` values.
    pub humans: Vec<f64>,
    pub n_humans: usize,
}

impl StateFeatures {
    pub fn encode(rotated: &RotatedState, maps: &[Vec<f64>], cfg: &NetworkConfig) -> Result<Self> {
        if maps.len() != rotated.humans.len() {
            return Err(Error::Dimension(format!(
                "{} local maps for {} humans",
                maps.len(),
                rotated.humans.len()
            )));
        }
        let robot = rotated.robot.to_array();
        let width = cfg.human_input_dim();
        let mut humans = Vec::with_capacity(width * maps.len());
        for (h, map) in rotated.humans.iter().zip(maps) {
            if map.len() != cfg.local_map.len() {
                return Err(Error::Dimension(format!(
                    "local map of length {} (expected {})",
                    map.len(),
                    cfg.local_map.len()
                )));
            }
            humans.extend_from_slice(&robot);
            humans.extend_from_slice(&h.to_array());
            humans.extend_from_slice(map);
        }
        Ok(Self {
            robot,
            humans,
            n_humans: maps.len(),
        })
    }

    /// Builds the local maps as well.
    pub fn from_rotated(rotated: &RotatedState, cfg: &NetworkConfig) -> Self {
        let maps = build_local_maps(rotated, &cfg.local_map);
        Self::encode(rotated, &maps, cfg).expect("maps built from the same config")
    }
}

/// Several states stacked for one batched pass.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    robot: Array2<f64>,
    humans: Array2<f64>,
    /// `(first row, row count)` of each state's humans.
    groups: Vec<(usize, usize)>,
}

impl FeatureBatch {
    pub fn new<'a>(states: impl IntoIterator<Item = &'a StateFeatures>, cfg: &NetworkConfig) -> Self {
        let width = cfg.human_input_dim();
        let mut robot = Vec::new();
        let mut humans = Vec::new();
        let mut groups = Vec::new();
        let mut row = 0;
        for st in states {
            debug_assert_eq!(st.humans.len(), st.n_humans * width);
            robot.extend_from_slice(&st.robot);
            humans.extend_from_slice(&st.humans);
            groups.push((row, st.n_humans));
            row += st.n_humans;
        }
        let n = groups.len();
        Self {
            robot: Array2::from_shape_vec((n, RobotFeatures::DIM), robot).expect("row width"),
            humans: Array2::from_shape_vec((row, width), humans).expect("row width"),
            groups,
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Intermediate values of a single-state forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub embeddings: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
    pub pooled: Vec<f64>,
    pub value: f64,
}

/// Network parameters; an immutable snapshot from the point of view of
/// forward and gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNetParams {
    config: NetworkConfig,
    layout: Layout,
    data: Vec<f64>,
}

struct BatchTrace {
    emb: Vec<Array2<f64>>,
    att: Vec<Array2<f64>>,
    head: Vec<Array2<f64>>,
    weights: Vec<f64>,
}

fn weights_of<'a>(p: &'a [f64], l: &Layer) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((l.n_out, l.n_in), &p[l.offset..l.bias_offset()]).expect("layout")
}

fn bias_of<'a>(p: &'a [f64], l: &Layer) -> ArrayView1<'a, f64> {
    ArrayView1::from(&p[l.bias_offset()..l.end()])
}

/// Returns every activation, input included.
fn mlp_forward(p: &[f64], layers: &[Layer], x: Array2<f64>, relu_last: bool) -> Vec<Array2<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x);
    for (k, l) in layers.iter().enumerate() {
        let mut z = acts[k].dot(&weights_of(p, l).t());
        z += &bias_of(p, l);
        if k + 1 < layers.len() || relu_last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        acts.push(z);
    }
    acts
}

/// Accumulates parameter gradients for `d` (gradient w.r.t. the last
/// activation) and returns the gradient w.r.t. the input when asked.
fn mlp_backward(
    p: &[f64],
    layers: &[Layer],
    acts: &[Array2<f64>],
    relu_last: bool,
    mut d: Array2<f64>,
    grad: &mut [f64],
    want_input: bool,
) -> Option<Array2<f64>> {
    for (k, l) in layers.iter().enumerate().rev() {
        if k + 1 < layers.len() || relu_last {
            d.zip_mut_with(&acts[k + 1], |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let dw = d.t().dot(&acts[k]);
        for (g, v) in grad[l.offset..l.bias_offset()].iter_mut().zip(dw.iter()) {
            *g += v;
        }
        let db = d.sum_axis(Axis(0));
        for (g, v) in grad[l.bias_offset()..l.end()].iter_mut().zip(db.iter()) {
            *g += v;
        }
        if k > 0 || want_input {
            d = d.dot(&weights_of(p, l));
        }
    }
    want_input.then_some(d)
}

impl ValueNetParams {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases,
    /// drawn layer by layer in storage order.
    pub fn init<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for l in net.layout.clone().layers() {
            let bound = 1.0 / (l.n_in as f64).sqrt();
            for v in &mut net.data[l.offset..l.end()] {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let data = vec![0.0; layout.total];
        Ok(Self { config, layout, data })
    }

    pub fn from_flat(config: NetworkConfig, data: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if data.len() != net.data.len() {
            return Err(Error::Dimension(format!(
                "{} parameters (expected {})",
                data.len(),
                net.data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite network parameter".into()));
        }
        net.data = data;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.data
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with a dimension mismatch unless `other` describes exactly the
    /// same architecture.
    pub fn check_config(&self, other: &NetworkConfig) -> Result<()> {
        if &self.config != other {
            return Err(Error::Dimension(format!(
                "network {:?} does not match configured {:?}",
                self.config, other
            )));
        }
        Ok(())
    }

    fn forward_batch(&self, batch: &FeatureBatch) -> (Vec<f64>, BatchTrace) {
        let p = &self.data[..];
        let d = self.config.embedding_dim();
        let emb = mlp_forward(p, &self.layout.embedding, batch.humans.clone(), true);
        let e = emb.last().expect("at least one layer");

        let n_states = batch.groups.len();
        let mut means = Array2::<f64>::zeros((n_states, d));
        for (s, &(start, n)) in batch.groups.iter().enumerate() {
            if n > 0 {
                let m = e.slice(s![start..start + n, ..]).sum_axis(Axis(0)) / n as f64;
                means.row_mut(s).assign(&m);
            }
        }

        let score_in = if self.config.global_score {
            let mut a = Array2::<f64>::zeros((e.nrows(), 2 * d));
            a.slice_mut(s![.., ..d]).assign(e);
            for (s, &(start, n)) in batch.groups.iter().enumerate() {
                for r in start..start + n {
                    a.slice_mut(s![r, d..]).assign(&means.row(s));
                }
            }
            a
        } else {
            e.clone()
        };
        let att = mlp_forward(p, &self.layout.attention, score_in, false);
        let logits = att.last().expect("at least one layer");

        let mut weights = vec![0.0; e.nrows()];
        let mut head_in = Array2::<f64>::zeros((n_states, RobotFeatures::DIM + d));
        head_in.slice_mut(s![.., ..RobotFeatures::DIM]).assign(&batch.robot);
        for (s, &(start, n)) in batch.groups.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let max = (start..start + n)
                .map(|r| logits[[r, 0]])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for r in start..start + n {
                let w = (logits[[r, 0]] - max).exp();
                weights[r] = w;
                total += w;
            }
            let mut pooled = head_in.slice_mut(s![s, RobotFeatures::DIM..]);
            for r in start..start + n {
                weights[r] /= total;
                pooled.scaled_add(weights[r], &e.row(r));
            }
        }
        let head = mlp_forward(p, &self.layout.head, head_in, false);
        let values = head.last().expect("at least one layer").column(0).to_vec();
        (
            values,
            BatchTrace {
                emb,
                att,
                head,
                weights,
            },
        )
    }

    fn backward_batch(&self, batch: &FeatureBatch, trace: &BatchTrace, dvalues: &[f64]) -> Vec<f64> {
        let p = &self.data[..];
        let d = self.config.embedding_dim();
        let mut grad = vec![0.0; self.data.len()];

        let dv = Array2::from_shape_vec((dvalues.len(), 1), dvalues.to_vec()).expect("one column");
        let dhead_in = mlp_backward(p, &self.layout.head, &trace.head, false, dv, &mut grad, true)
            .expect("input gradient requested");
        let dpooled = dhead_in.slice(s![.., RobotFeatures::DIM..]);

        let e = trace.emb.last().expect("at least one layer");
        let mut de = Array2::<f64>::zeros(e.raw_dim());
        let mut dlogits = Array2::<f64>::zeros((e.nrows(), 1));
        for (s, &(start, n)) in batch.groups.iter().enumerate() {
            let dc = dpooled.row(s);
            let mut mean_gw = 0.0;
            for r in start..start + n {
                let gw = dc.dot(&e.row(r));
                dlogits[[r, 0]] = gw;
                mean_gw += trace.weights[r] * gw;
                de.row_mut(r).scaled_add(trace.weights[r], &dc);
            }
            for r in start..start + n {
                dlogits[[r, 0]] = trace.weights[r] * (dlogits[[r, 0]] - mean_gw);
            }
        }

        let dscore_in = mlp_backward(p, &self.layout.attention, &trace.att, false, dlogits, &mut grad, true)
            .expect("input gradient requested");
        de += &dscore_in.slice(s![.., ..d]);
        if self.config.global_score {
            for &(start, n) in &batch.groups {
                if n == 0 {
                    continue;
                }
                let dm = dscore_in.slice(s![start..start + n, d..]).sum_axis(Axis(0)) / n as f64;
                for r in start..start + n {
                    de.row_mut(r).scaled_add(1.0, &dm);
                }
            }
        }
        mlp_backward(p, &self.layout.embedding, &trace.emb, true, de, &mut grad, false);
        grad
    }

    /// Values of every state in the batch.
    pub fn predict(&self, batch: &FeatureBatch) -> Vec<f64> {
        self.forward_batch(batch).0
    }

    pub fn predict_one(&self, state: &StateFeatures) -> f64 {
        self.predict(&FeatureBatch::new([state], &self.config))[0]
    }

    /// Mean squared error over the batch and its gradient.
    pub fn loss_and_gradient(&self, batch: &FeatureBatch, targets: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(batch.len(), targets.len(), "one target per state");
        let (values, trace) = self.forward_batch(batch);
        let n = targets.len() as f64;
        let mut loss = 0.0;
        let dv: Vec<f64> = values
            .iter()
            .zip(targets)
            .map(|(v, t)| {
                loss += (v - t) * (v - t);
                2.0 * (v - t) / n
            })
            .collect();
        (loss / n, self.backward_batch(batch, &trace, &dv))
    }

    pub fn forward(&self, rotated: &RotatedState, maps: &[Vec<f64>]) -> Result<(f64, ForwardTrace)> {
        let st = StateFeatures::encode(rotated, maps, &self.config)?;
        let batch = FeatureBatch::new([&st], &self.config);
        let (values, trace) = self.forward_batch(&batch);
        let d = self.config.embedding_dim();
        let e = trace.emb.last().expect("at least one layer");
        let logits = trace.att.last().expect("at least one layer").column(0).to_vec();
        let head_in = &trace.head[0];
        Ok((
            values[0],
            ForwardTrace {
                embeddings: e.rows().into_iter().map(|r| r.to_vec()).collect(),
                logits,
                weights: trace.weights,
                pooled: head_in
                    .slice(s![0, RobotFeatures::DIM..RobotFeatures::DIM + d])
                    .to_vec(),
                value: values[0],
            },
        ))
    }

    /// Gradient of `(value - target)^2` for one state, laid out like the
    /// parameters.
    pub fn gradient(&self, rotated: &RotatedState, maps: &[Vec<f64>], target: f64) -> Result<Vec<f64>> {
        let st = StateFeatures::encode(rotated, maps, &self.config)?;
        let batch = FeatureBatch::new([&st], &self.config);
        Ok(self.loss_and_gradient(&batch, &[target]).1)
    }
}
