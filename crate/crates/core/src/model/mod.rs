//! Time-aware heterogeneous graph attention network.
//!
//! Node inputs are projected per feature space into a shared hidden size,
//! then `L` layers of relation-typed attention aggregate neighbor messages.
//! Each relation has its own state and time transforms and attention vectors;
//! messages from all relations are summed. Type-specific decoders map final
//! states back to raw feature space for masked reconstruction, and a small
//! MLP head scores video nodes.

mod checkpoint;
mod propagate;
mod time;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointError,
    MODEL_MAGIC,
};
pub use propagate::{attention_coefficients, classify, decode, propagate, GraphPlan, Propagation, RelationPlan};
pub use time::time_encode;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::graph::{NodeKind, RelationKind};
use crate::rng::{seeded, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden_dim: usize,
    /// Length of the sinusoidal time-gap encoding; must be even.
    pub time_dim: usize,
    pub num_layers: usize,
    pub leaky_slope: f64,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden_dim: 256, time_dim: 16, num_layers: 4, leaky_slope: 0.2, init_seed: 0 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden_dim == 0 {
            return Err("hidden_dim must be positive".into());
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(format!("time_dim {} must be positive and even", self.time_dim));
        }
        if !self.leaky_slope.is_finite() {
            return Err("leaky_slope must be finite".into());
        }
        Ok(())
    }
}

/// Raw feature dimensions of the three feature spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub video: usize,
    pub uploader: usize,
    pub event: usize,
}

impl ModelDims {
    pub fn of(&self, space: NodeKind) -> usize {
        match space.feature_space() {
            NodeKind::Video => self.video,
            NodeKind::Event => self.event,
            _ => self.uploader,
        }
    }
}

/// Affine layer `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: T,
    pub bias: T,
}

/// One hidden layer with LeakyReLU, then a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

/// Per-layer, per-relation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationParams<T> {
    /// State block of the message transform, `h x h`.
    pub theta_state: T,
    /// Time block of the message transform, `d_t x h`.
    pub theta_time: T,
    /// Scores the receiving node, `h x 1`.
    pub att_target: T,
    /// Scores the sending neighbor, `h x 1`.
    pub att_neighbor: T,
    /// Scores the time-gap encoding, `d_t x 1`.
    pub att_time: T,
}

/// Every learnable tensor of the network. `Params<Array2<f64>>` holds values;
/// `Params<Var>` is the same structure bound to a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub proj_video: T,
    /// Shared by uploader and cluster-center nodes.
    pub proj_uploader: T,
    pub proj_event: T,
    /// `layers[l][relation code]`.
    pub layers: Vec<Vec<RelationParams<T>>>,
    /// Learnable replacement input for masked nodes, `1 x h`.
    pub mask: T,
    pub decoder_video: Mlp<T>,
    pub decoder_uploader: Mlp<T>,
    pub decoder_event: Mlp<T>,
    pub classifier: Mlp<T>,
}

pub type ModelParams = Params<Array2<f64>>;

impl<T> Dense<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a T) -> U) -> Dense<U> {
        Dense { weight: f(&format!("{prefix}.weight"), &self.weight), bias: f(&format!("{prefix}.bias"), &self.bias) }
    }
}

impl<T> Mlp<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a T) -> U) -> Mlp<U> {
        Mlp {
            hidden: self.hidden.map(&format!("{prefix}.hidden"), f),
            output: self.output.map(&format!("{prefix}.output"), f),
        }
    }

    fn push_all(self, out: &mut Vec<T>) {
        out.extend([self.hidden.weight, self.hidden.bias, self.output.weight, self.output.bias]);
    }

    fn push_all_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.extend([&mut self.hidden.weight, &mut self.hidden.bias, &mut self.output.weight, &mut self.output.bias]);
    }
}

impl<T> Params<T> {
    /// Applies `f` to every tensor with its dotted name, preserving structure.
    pub fn map<'a, U>(&'a self, mut f: impl FnMut(&str, &'a T) -> U) -> Params<U> {
        let f = &mut f;
        Params {
            proj_video: f("proj_video", &self.proj_video),
            proj_uploader: f("proj_uploader", &self.proj_uploader),
            proj_event: f("proj_event", &self.proj_event),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, rels)| {
                    rels.iter()
                        .zip(RelationKind::ALL)
                        .map(|(p, r)| {
                            let base = format!("layer{l}.{}", r.name());
                            RelationParams {
                                theta_state: f(&format!("{base}.theta_state"), &p.theta_state),
                                theta_time: f(&format!("{base}.theta_time"), &p.theta_time),
                                att_target: f(&format!("{base}.att_target"), &p.att_target),
                                att_neighbor: f(&format!("{base}.att_neighbor"), &p.att_neighbor),
                                att_time: f(&format!("{base}.att_time"), &p.att_time),
                            }
                        })
                        .collect()
                })
                .collect(),
            mask: f("mask", &self.mask),
            decoder_video: self.decoder_video.map("decoder_video", f),
            decoder_uploader: self.decoder_uploader.map("decoder_uploader", f),
            decoder_event: self.decoder_event.map("decoder_event", f),
            classifier: self.classifier.map("classifier", f),
        }
    }

    /// Tensors in the same order as [`Params::names`].
    pub fn into_vec(self) -> Vec<T> {
        let mut out = vec![self.proj_video, self.proj_uploader, self.proj_event];
        for rels in self.layers {
            for p in rels {
                out.extend([p.theta_state, p.theta_time, p.att_target, p.att_neighbor, p.att_time]);
            }
        }
        out.push(self.mask);
        self.decoder_video.push_all(&mut out);
        self.decoder_uploader.push_all(&mut out);
        self.decoder_event.push_all(&mut out);
        self.classifier.push_all(&mut out);
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.proj_video, &mut self.proj_uploader, &mut self.proj_event];
        for rels in &mut self.layers {
            for p in rels {
                out.extend([
                    &mut p.theta_state,
                    &mut p.theta_time,
                    &mut p.att_target,
                    &mut p.att_neighbor,
                    &mut p.att_time,
                ]);
            }
        }
        out.push(&mut self.mask);
        self.decoder_video.push_all_mut(&mut out);
        self.decoder_uploader.push_all_mut(&mut out);
        self.decoder_event.push_all_mut(&mut out);
        self.classifier.push_all_mut(&mut out);
        out
    }

    /// Same structure as `self`, filled from `values` in [`Params::names`] order.
    pub fn rebuild<U>(&self, values: Vec<U>) -> Params<U> {
        assert_eq!(values.len(), self.names().len(), "tensor count");
        let mut it = values.into_iter();
        self.map(|_, _| it.next().expect("counted"))
    }

    pub fn names(&self) -> Vec<String> {
        self.map(|name, _| name.to_string()).into_vec()
    }

    pub fn decoder(&self, space: NodeKind) -> &Mlp<T> {
        match space.feature_space() {
            NodeKind::Video => &self.decoder_video,
            NodeKind::Event => &self.decoder_event,
            _ => &self.decoder_uploader,
        }
    }
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize, shape: (usize, usize)) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
}

fn dense(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Dense<Array2<f64>> {
    Dense { weight: glorot(rng, fan_in, fan_out, (fan_in, fan_out)), bias: Array2::zeros((1, fan_out)) }
}

fn mlp(rng: &mut impl Rng, input: usize, hidden: usize, output: usize) -> Mlp<Array2<f64>> {
    Mlp { hidden: dense(rng, input, hidden), output: dense(rng, hidden, output) }
}

/// Fresh classifier head drawn from its own seeded stream.
pub fn init_classifier(cfg: &NetConfig, seed: u64) -> Mlp<Array2<f64>> {
    let mut rng = seeded(seed, stream::CLASSIFIER_INIT);
    mlp(&mut rng, cfg.hidden_dim, cfg.hidden_dim, 1)
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, zero mask vector.
    pub fn init(cfg: &NetConfig, dims: ModelDims) -> Self {
        let mut rng = seeded(cfg.init_seed, stream::INIT);
        let h = cfg.hidden_dim;
        let dt = cfg.time_dim;
        let proj_video = glorot(&mut rng, dims.video, h, (dims.video, h));
        let proj_uploader = glorot(&mut rng, dims.uploader, h, (dims.uploader, h));
        let proj_event = glorot(&mut rng, dims.event, h, (dims.event, h));
        let layers = (0..cfg.num_layers)
            .map(|_| {
                RelationKind::ALL
                    .iter()
                    .map(|_| RelationParams {
                        theta_state: glorot(&mut rng, h + dt, h, (h, h)),
                        theta_time: glorot(&mut rng, h + dt, h, (dt, h)),
                        att_target: glorot(&mut rng, h, 1, (h, 1)),
                        att_neighbor: glorot(&mut rng, h, 1, (h, 1)),
                        att_time: glorot(&mut rng, dt, 1, (dt, 1)),
                    })
                    .collect()
            })
            .collect();
        Params {
            proj_video,
            proj_uploader,
            proj_event,
            layers,
            mask: Array2::zeros((1, h)),
            decoder_video: mlp(&mut rng, h, h, dims.video),
            decoder_uploader: mlp(&mut rng, h, h, dims.uploader),
            decoder_event: mlp(&mut rng, h, h, dims.event),
            classifier: init_classifier(cfg, cfg.init_seed),
        }
    }

    /// Places every tensor on `tape`, as a parameter when `trainable` accepts
    /// its name and as a constant otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Params<Var> {
        self.map(|name, t| if trainable(name) { tape.param(t.clone()) } else { tape.constant(t.clone()) })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Array2::zeros(t.dim()))
    }

    pub fn parameter_count(&self) -> usize {
        self.map(|_, t| t.len()).into_vec().into_iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.map(|_, t| t.iter().all(|x| x.is_finite())).into_vec().into_iter().all(|b| b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims { video: 5, uploader: 3, event: 4 }
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = NetConfig { hidden_dim: 8, time_dim: 4, num_layers: 2, ..Default::default() };
        let p = ModelParams::init(&cfg, dims());
        assert_eq!(p.proj_video.dim(), (5, 8));
        assert_eq!(p.proj_uploader.dim(), (3, 8));
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[1].len(), 6);
        assert_eq!(p.layers[0][3].theta_time.dim(), (4, 8));
        assert_eq!(p.layers[0][3].att_time.dim(), (4, 1));
        assert_eq!(p.decoder_event.output.weight.dim(), (8, 4));
        assert_eq!(p.classifier.output.bias.dim(), (1, 1));
        assert!(p.mask.iter().all(|&x| x == 0.0));
        assert!(p.classifier.hidden.bias.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let cfg = NetConfig { hidden_dim: 4, time_dim: 2, num_layers: 1, ..Default::default() };
        let p = ModelParams::init(&cfg, dims());
        let names = p.names();
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert_eq!(names.len(), 3 + 6 * 5 + 1 + 4 * 4);
        assert_eq!(names[3], "layer0.uploader_video.theta_state");
        assert_eq!(names.last().unwrap(), "classifier.output.bias");
        let values = p.clone().into_vec();
        let mut q = p.clone();
        let refs = q.values_mut();
        assert_eq!(values.len(), refs.len());
        for (v, r) in values.iter().zip(refs) {
            assert_eq!(v, r);
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = NetConfig { hidden_dim: 6, time_dim: 2, num_layers: 1, init_seed: 4, ..Default::default() };
        assert_eq!(ModelParams::init(&cfg, dims()), ModelParams::init(&cfg, dims()));
        let other = NetConfig { init_seed: 5, ..cfg.clone() };
        assert_ne!(ModelParams::init(&cfg, dims()), ModelParams::init(&other, dims()));
    }

    #[test]
    fn odd_time_dim_rejected() {
        assert!(NetConfig { time_dim: 3, ..Default::default() }.validate().is_err());
        assert!(NetConfig::default().validate().is_ok());
    }
}
