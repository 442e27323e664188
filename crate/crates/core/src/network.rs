//! The two-path network: a shared convolutional trunk feeding a supervised
//! path and an unsupervised path with identical layouts.
//!
//! Layer plan for an `[B, 1, L, D]` batch:
//!
//! ```text
//! shared:  conv(a0) conv(a1) conv(a2) -> pool -> conv(b0) conv(b1) conv(b2) -> pool
//! path:    conv(p0) conv(p1) conv(p2) -> pool -> flatten -> dropout -> dense(C)
//! ```
//!
//! Every convolution is 3×3, same-padded and followed by ReLU. Each path
//! owns its parameters; both read the same trunk output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{ConvParams, DenseParams, Mode, KERNEL};
use crate::seed::derive_seed;

/// Filter counts of the nine convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPlan {
    pub shared_a: [usize; 3],
    pub shared_b: [usize; 3],
    pub path: [usize; 3],
}

impl FilterPlan {
    /// 128×3 and 256×3 in the trunk; 512, 256, 128 in each path.
    pub const STANDARD: FilterPlan = FilterPlan {
        shared_a: [128, 128, 128],
        shared_b: [256, 256, 256],
        path: [512, 256, 128],
    };

    /// The standard plan with every width divided by `divisor` (rounded up).
    pub fn narrowed(divisor: usize) -> FilterPlan {
        let d = divisor.max(1);
        let f = |xs: [usize; 3]| xs.map(|x| x.div_ceil(d));
        let s = Self::STANDARD;
        FilterPlan {
            shared_a: f(s.shared_a),
            shared_b: f(s.shared_b),
            path: f(s.path),
        }
    }

    fn shared(&self) -> impl Iterator<Item = usize> + '_ {
        self.shared_a.iter().chain(&self.shared_b).copied()
    }

    pub fn as_array(&self) -> [usize; 9] {
        let mut out = [0; 9];
        for (o, v) in out
            .iter_mut()
            .zip(self.shared().chain(self.path.iter().copied()))
        {
            *o = v;
        }
        out
    }

    pub fn from_array(v: [usize; 9]) -> FilterPlan {
        FilterPlan {
            shared_a: [v[0], v[1], v[2]],
            shared_b: [v[3], v[4], v[5]],
            path: [v[6], v[7], v[8]],
        }
    }
}

impl Default for FilterPlan {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Input geometry, class count and filter plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Rows of the input "image" (tokens).
    pub max_len: usize,
    /// Columns of the input "image" (embedding width).
    pub embed_dim: usize,
    pub classes: usize,
    pub filters: FilterPlan,
}

/// Three 2×2 pools need at least 8 rows and columns.
pub const MIN_SPATIAL: usize = 8;

impl Architecture {
    pub fn new(max_len: usize, embed_dim: usize, classes: usize) -> Self {
        Architecture {
            max_len,
            embed_dim,
            classes,
            filters: FilterPlan::STANDARD,
        }
    }

    pub fn with_filters(mut self, filters: FilterPlan) -> Self {
        self.filters = filters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.max_len < MIN_SPATIAL || self.embed_dim < MIN_SPATIAL {
            return Err(Error::Invalid(format!(
                "input {}x{} too small for three 2x2 pooling stages (need at least {MIN_SPATIAL}x{MIN_SPATIAL})",
                self.max_len, self.embed_dim
            )));
        }
        if self.filters.as_array().contains(&0) {
            return Err(Error::Invalid("filter counts must be positive".into()));
        }
        Ok(())
    }

    /// `[C, H, W]` of the shared trunk output.
    pub fn trunk_shape(&self) -> [usize; 3] {
        [self.filters.shared_b[2], self.max_len / 2 / 2, self.embed_dim / 2 / 2]
    }

    /// Width of each path's flattened feature vector.
    pub fn flat_width(&self) -> usize {
        let [_, h, w] = self.trunk_shape();
        self.filters.path[2] * (h / 2) * (w / 2)
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, 1, self.max_len, self.embed_dim]
    }

    /// `(in, out)` channel pairs of the six trunk convolutions.
    fn shared_channels(&self) -> Vec<(usize, usize)> {
        channel_chain(1, self.filters.shared())
    }

    fn path_channels(&self) -> Vec<(usize, usize)> {
        channel_chain(self.filters.shared_b[2], self.filters.path.iter().copied())
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let conv = |(i, o): (usize, usize)| o * i * KERNEL * KERNEL + o;
        let shared: usize = self.shared_channels().into_iter().map(conv).sum();
        let path: usize = self.path_channels().into_iter().map(conv).sum::<usize>()
            + self.classes * self.flat_width()
            + self.classes;
        shared + 2 * path
    }
}

fn channel_chain(first: usize, outs: impl Iterator<Item = usize>) -> Vec<(usize, usize)> {
    let mut prev = first;
    outs.map(|o| {
        let pair = (prev, o);
        prev = o;
        pair
    })
    .collect()
}

/// Parameters of one path: three convolutions and a dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct PathParams {
    pub convs: Vec<ConvParams>,
    pub head: DenseParams,
}

/// The three trainable parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub shared: Vec<ConvParams>,
    pub supervised: PathParams,
    pub unsupervised: PathParams,
}

/// Which parameter set a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Shared,
    Supervised,
    Unsupervised,
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = normal.sample(rng);
    }
    t
}

fn init_conv((c_in, c_out): (usize, usize), rng: &mut ChaCha8Rng) -> ConvParams {
    ConvParams {
        filters: he_normal(&[c_out, c_in, KERNEL, KERNEL], c_in * KERNEL * KERNEL, rng),
        biases: Tensor::zeros([c_out]),
    }
}

fn init_path(arch: &Architecture, rng: &mut ChaCha8Rng) -> PathParams {
    let convs = arch.path_channels().into_iter().map(|c| init_conv(c, rng)).collect();
    let width = arch.flat_width();
    PathParams {
        convs,
        head: DenseParams {
            weights: he_normal(&[arch.classes, width], width, rng),
            biases: Tensor::zeros([arch.classes]),
        },
    }
}

/// He-normal weights (`N(0, 2 / fan_in)`), zero biases, deterministic in `seed`.
pub fn init_network(arch: Architecture, seed: u64) -> Result<NetworkParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = arch.shared_channels().into_iter().map(|c| init_conv(c, &mut rng)).collect();
    let supervised = init_path(&arch, &mut rng);
    let unsupervised = init_path(&arch, &mut rng);
    Ok(NetworkParams {
        arch,
        shared,
        supervised,
        unsupervised,
    })
}

impl NetworkParams {
    /// All tensors in checkpoint order: trunk convolutions, then the
    /// supervised path, then the unsupervised path; filters before biases,
    /// head weights before head biases.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.shared {
            out.extend([&c.filters, &c.biases]);
        }
        for p in [&self.supervised, &self.unsupervised] {
            for c in &p.convs {
                out.extend([&c.filters, &c.biases]);
            }
            out.extend([&p.head.weights, &p.head.biases]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.shared {
            out.extend([&mut c.filters, &mut c.biases]);
        }
        for p in [&mut self.supervised, &mut self.unsupervised] {
            for c in &mut p.convs {
                out.extend([&mut c.filters, &mut c.biases]);
            }
            out.extend([&mut p.head.weights, &mut p.head.biases]);
        }
        out
    }

    /// Names matching [`NetworkParams::tensors`], e.g. `shared.conv3.filters`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.shared.len() {
            out.push(format!("shared.conv{i}.filters"));
            out.push(format!("shared.conv{i}.biases"));
        }
        for (prefix, p) in [("supervised", &self.supervised), ("unsupervised", &self.unsupervised)] {
            for i in 0..p.convs.len() {
                out.push(format!("{prefix}.conv{i}.filters"));
                out.push(format!("{prefix}.conv{i}.biases"));
            }
            out.push(format!("{prefix}.head.weights"));
            out.push(format!("{prefix}.head.biases"));
        }
        out
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let path = |g| std::iter::repeat_n(g, 2 * self.supervised.convs.len() + 2);
        std::iter::repeat_n(ParamGroup::Shared, 2 * self.shared.len())
            .chain(path(ParamGroup::Supervised))
            .chain(path(ParamGroup::Unsupervised))
            .collect()
    }

    /// Shapes in checkpoint order, as implied by the architecture alone.
    pub fn expected_shapes(arch: &Architecture) -> Vec<Vec<usize>> {
        let conv = |(i, o): (usize, usize)| [vec![o, i, KERNEL, KERNEL], vec![o]];
        let mut out: Vec<Vec<usize>> = arch.shared_channels().into_iter().flat_map(conv).collect();
        for _ in 0..2 {
            out.extend(arch.path_channels().into_iter().flat_map(conv));
            out.push(vec![arch.classes, arch.flat_width()]);
            out.push(vec![arch.classes]);
        }
        out
    }

    /// Rebuilds parameters from tensors in checkpoint order.
    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        let shapes = Self::expected_shapes(&arch);
        if shapes.len() != tensors.len() {
            return Err(Error::Architecture(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (i, (s, t)) in shapes.iter().zip(&tensors).enumerate() {
            if s.as_slice() != t.shape() {
                return Err(Error::Architecture(format!(
                    "parameter tensor {i} has shape {:?}, architecture implies {s:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut conv = || ConvParams {
            filters: it.next().expect("count checked"),
            biases: it.next().expect("count checked"),
        };
        let shared = (0..6).map(|_| conv()).collect();
        let sup_convs = (0..3).map(|_| conv()).collect::<Vec<_>>();
        let sup_head = conv();
        let unsup_convs = (0..3).map(|_| conv()).collect::<Vec<_>>();
        let unsup_head = conv();
        let head = |c: ConvParams| DenseParams {
            weights: c.filters,
            biases: c.biases,
        };
        Ok(NetworkParams {
            arch,
            shared,
            supervised: PathParams {
                convs: sup_convs,
                head: head(sup_head),
            },
            unsupervised: PathParams {
                convs: unsup_convs,
                head: head(unsup_head),
            },
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Graph handles for every parameter tensor, in checkpoint order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    all: Vec<Var>,
}

impl ParamVars {
    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(g: &mut Graph, params: &NetworkParams) -> Self {
        ParamVars {
            all: params.tensors().into_iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    /// Wraps handles already registered on a graph, in checkpoint order.
    pub fn from_vars(all: Vec<Var>) -> Self {
        ParamVars { all }
    }

    pub fn vars(&self) -> &[Var] {
        &self.all
    }

    fn conv(&self, index: usize) -> (Var, Var) {
        (self.all[2 * index], self.all[2 * index + 1])
    }
}

/// Dropout behaviour of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub mode: Mode,
    /// Mask seed; the two paths draw from independent streams derived from it.
    pub seed: u64,
}

impl Dropout {
    pub fn inference() -> Self {
        Dropout {
            rate: 0.0,
            mode: Mode::Inference,
            seed: 0,
        }
    }

    pub fn training(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            mode: Mode::Training,
            seed,
        }
    }
}

/// Graph handles produced by [`forward_graph`].
#[derive(Debug, Clone, Copy)]
pub struct TwoPathVars {
    pub trunk: Var,
    pub flat: Var,
    pub flat_prime: Var,
    pub z: Var,
    pub z_prime: Var,
}

fn conv_relu_block(g: &mut Graph, mut x: Var, convs: &[(Var, Var)]) -> Result<Var> {
    for &c in convs {
        let y = g.conv2d(x, c)?;
        x = g.relu(y)?;
    }
    Ok(x)
}

fn path_forward(
    g: &mut Graph,
    arch: &Architecture,
    trunk: Var,
    convs: &[(Var, Var)],
    head: (Var, Var),
    dropout: &Dropout,
    path_id: u64,
) -> Result<(Var, Var)> {
    let x = conv_relu_block(g, trunk, convs)?;
    let x = g.maxpool2(x)?;
    let batch = g.value(x).shape()[0];
    let flat = g.reshape(x, [batch, arch.flat_width()])?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[dropout.seed, path_id]));
    let dropped = g.dropout(flat, dropout.rate, dropout.mode, &mut rng)?;
    Ok((flat, g.dense(dropped, head)?))
}

/// Builds the two-path forward pass on `g` for a `[B, 1, L, D]` batch.
pub fn forward_graph(
    g: &mut Graph,
    params: &NetworkParams,
    vars: &ParamVars,
    batch: Var,
    dropout: &Dropout,
) -> Result<TwoPathVars> {
    let arch = &params.arch;
    let shape = g.value(batch).shape().to_vec();
    let expected = arch.input_shape(shape.first().copied().unwrap_or(0));
    if shape != expected || shape[0] == 0 {
        return Err(Error::shape("network input", &expected, &shape));
    }
    let n_shared = params.shared.len();
    let n_path = params.supervised.convs.len();
    let shared: Vec<_> = (0..n_shared).map(|i| vars.conv(i)).collect();

    let x = conv_relu_block(g, batch, &shared[..3])?;
    let x = g.maxpool2(x)?;
    let x = conv_relu_block(g, x, &shared[3..])?;
    let trunk = g.maxpool2(x)?;

    let sup_base = n_shared;
    let sup_convs: Vec<_> = (sup_base..sup_base + n_path).map(|i| vars.conv(i)).collect();
    let sup_head = vars.conv(sup_base + n_path);
    let unsup_base = sup_base + n_path + 1;
    let unsup_convs: Vec<_> = (unsup_base..unsup_base + n_path).map(|i| vars.conv(i)).collect();
    let unsup_head = vars.conv(unsup_base + n_path);

    let (flat, z) = path_forward(g, arch, trunk, &sup_convs, sup_head, dropout, 0)?;
    let (flat_prime, z_prime) = path_forward(g, arch, trunk, &unsup_convs, unsup_head, dropout, 1)?;
    Ok(TwoPathVars {
        trunk,
        flat,
        flat_prime,
        z,
        z_prime,
    })
}

/// Logits of both paths, each `[B, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPathOutput {
    pub z: Tensor,
    pub z_prime: Tensor,
}

/// Evaluates both paths without recording a graph.
pub fn forward_two_path(batch: &Tensor, params: &NetworkParams, dropout: &Dropout) -> Result<TwoPathOutput> {
    let mut g = Graph::inference();
    let vars = ParamVars::bind(&mut g, params);
    let x = g.constant(batch.clone());
    let out = forward_graph(&mut g, params, &vars, x, dropout)?;
    Ok(TwoPathOutput {
        z: g.value(out.z).clone(),
        z_prime: g.value(out.z_prime).clone(),
    })
}

/// Row-wise argmax; ties go to the lower class index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let classes = *scores.shape().last().expect("non-empty shape");
    scores
        .data()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}

/// Predicted class per sample: argmax of the supervised path's softmax,
/// inference mode.
pub fn predict(batch: &Tensor, params: &NetworkParams) -> Result<Vec<usize>> {
    let out = forward_two_path(batch, params, &Dropout::inference())?;
    Ok(argmax_rows(&crate::layers::softmax(&out.z)?))
}
