use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::numerics::Matrix;
use crate::tokenizer::PAD;

/// Standard deviation of the normal initializer for projections and embeddings.
pub const INIT_STD: f64 = 0.02;

/// Uniform traversal over the tensors of a parameter structure.
///
/// `visit` and `try_map` walk tensors in the same fixed order, so a flat
/// vector built from one lines up with the other.
pub trait Tensors<T>: Sized {
    type With<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T));

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<Self::With<U>, E>;

    fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Self::With<U> {
        match self.try_map::<U, std::convert::Infallible>("", &mut |n, t| Ok(f(n, t))) {
            Ok(v) => v,
            Err(e) => match e {},
        }
    }

    fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t)));
        out
    }

    fn to_flat(&self) -> Vec<T>
    where
        T: Clone,
    {
        self.named().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Same structure with `values` in traversal order.
    fn with_flat<U>(&self, values: Vec<U>) -> Self::With<U> {
        let expected = self.named().len();
        assert_eq!(values.len(), expected, "flat value count");
        let mut it = values.into_iter();
        self.map(|_, _| it.next().expect("length checked"))
    }
}

fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

macro_rules! tensor_group {
    ($name:ident; leaves: $($leaf:ident),*; groups: $($group:ident),*) => {
        impl<T> Tensors<T> for $name<T> {
            type With<U> = $name<U>;

            #[allow(unused_variables)]
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
                $( f(join(prefix, stringify!($leaf)), &self.$leaf); )*
                $( self.$group.visit(&join(prefix, stringify!($group)), f); )*
            }

            #[allow(unused_variables)]
            fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<$name<U>, E> {
                Ok($name {
                    $( $leaf: f(&join(prefix, stringify!($leaf)), &self.$leaf)?, )*
                    $( $group: self.$group.try_map(&join(prefix, stringify!($group)), f)?, )*
                })
            }
        }
    };
}

/// `y = x W + b` with `W: in × out`, `b: 1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub gain: T,
    pub bias: T,
}

/// Pre-norm feed-forward block: `x + down(gelu(up(norm(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<T> {
    pub norm: Norm<T>,
    pub up: Linear<T>,
    pub down: Linear<T>,
}

/// One decoder layer: pre-attention norms, the three attention branches,
/// the cross-slot key/value maps and one feed-forward block per branch.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer<T> {
    pub text_norm: Norm<T>,
    pub cross_norm: Norm<T>,
    pub seq_norm: Norm<T>,
    pub text_q: Linear<T>,
    pub text_k: Linear<T>,
    pub text_v: Linear<T>,
    pub text_out: Linear<T>,
    pub cross_q: Linear<T>,
    pub cross_out: Linear<T>,
    /// Keys derived from the cross branch output.
    pub cross_key: Linear<T>,
    /// Values derived from the cross branch output.
    pub cross_value: Linear<T>,
    pub seq_q: Linear<T>,
    pub seq_k: Linear<T>,
    pub seq_v: Linear<T>,
    pub seq_out: Linear<T>,
    pub text_ffn: FeedForward<T>,
    pub cross_ffn: FeedForward<T>,
    pub seq_ffn: FeedForward<T>,
}

tensor_group!(Linear; leaves: weight, bias; groups: );
tensor_group!(Norm; leaves: gain, bias; groups: );
tensor_group!(FeedForward; leaves: ; groups: norm, up, down);
tensor_group!(DecoderLayer; leaves: ; groups:
    text_norm, cross_norm, seq_norm,
    text_q, text_k, text_v, text_out,
    cross_q, cross_out, cross_key, cross_value,
    seq_q, seq_k, seq_v, seq_out,
    text_ffn, cross_ffn, seq_ffn);

/// Every tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    /// Shared by sequence tokens and CROSS slots.
    pub token_embedding: T,
    /// Present when the text path uses a trainable word table.
    pub text_table: Option<T>,
    /// Present when `d_text != d_model`.
    pub text_projection: Option<Linear<T>>,
    pub layers: Vec<DecoderLayer<T>>,
    pub final_norm: Norm<T>,
    pub head: Linear<T>,
}

impl<T> Tensors<T> for ModelWeights<T> {
    type With<U> = ModelWeights<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "token_embedding"), &self.token_embedding);
        if let Some(t) = &self.text_table {
            f(join(prefix, "text_table"), t);
        }
        if let Some(p) = &self.text_projection {
            p.visit(&join(prefix, "text_projection"), f);
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layers.{i}")), f);
        }
        self.final_norm.visit(&join(prefix, "final_norm"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<ModelWeights<U>, E> {
        let token_embedding = f(&join(prefix, "token_embedding"), &self.token_embedding)?;
        let text_table = self.text_table.as_ref().map(|t| f(&join(prefix, "text_table"), t)).transpose()?;
        let text_projection =
            self.text_projection.as_ref().map(|p| p.try_map(&join(prefix, "text_projection"), f)).transpose()?;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.try_map(&join(prefix, &format!("layers.{i}")), f))
            .collect::<Result<_, _>>()?;
        Ok(ModelWeights {
            token_embedding,
            text_table,
            text_projection,
            layers,
            final_norm: self.final_norm.try_map(&join(prefix, "final_norm"), f)?,
            head: self.head.try_map(&join(prefix, "head"), f)?,
        })
    }
}

pub type ModelParams = ModelWeights<Matrix>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Which entries of a tensor receive weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    All,
    None,
    /// Every row except the given one.
    ExceptRow(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
    pub decay: Decay,
}

impl TensorSpec {
    fn normal(rows: usize, cols: usize) -> Self {
        Self { rows, cols, init: Init::Normal, decay: Decay::All }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn linear_spec(d_in: usize, d_out: usize) -> Linear<TensorSpec> {
    Linear {
        weight: TensorSpec::normal(d_in, d_out),
        bias: TensorSpec { rows: 1, cols: d_out, init: Init::Zeros, decay: Decay::All },
    }
}

fn norm_spec(d: usize) -> Norm<TensorSpec> {
    Norm {
        gain: TensorSpec { rows: 1, cols: d, init: Init::Ones, decay: Decay::None },
        bias: TensorSpec { rows: 1, cols: d, init: Init::Zeros, decay: Decay::None },
    }
}

fn ffn_spec(d: usize, hidden: usize) -> FeedForward<TensorSpec> {
    FeedForward { norm: norm_spec(d), up: linear_spec(d, hidden), down: linear_spec(hidden, d) }
}

fn layer_spec(d: usize, hidden: usize) -> DecoderLayer<TensorSpec> {
    let lin = || linear_spec(d, d);
    DecoderLayer {
        text_norm: norm_spec(d),
        cross_norm: norm_spec(d),
        seq_norm: norm_spec(d),
        text_q: lin(),
        text_k: lin(),
        text_v: lin(),
        text_out: lin(),
        cross_q: lin(),
        cross_out: lin(),
        cross_key: lin(),
        cross_value: lin(),
        seq_q: lin(),
        seq_k: lin(),
        seq_v: lin(),
        seq_out: lin(),
        text_ffn: ffn_spec(d, hidden),
        cross_ffn: ffn_spec(d, hidden),
        seq_ffn: ffn_spec(d, hidden),
    }
}

impl ModelWeights<TensorSpec> {
    /// Shapes, initializers and decay rules for `config`.
    pub fn layout(config: &ModelConfig) -> Self {
        let d = config.d_model;
        ModelWeights {
            token_embedding: TensorSpec {
                rows: config.vocab_size,
                cols: d,
                init: Init::Normal,
                decay: Decay::ExceptRow(PAD),
            },
            text_table: config.uses_trainable_text().then(|| TensorSpec::normal(config.text_vocab_size, config.d_text)),
            text_projection: config.has_text_projection().then(|| linear_spec(config.d_text, d)),
            layers: (0..config.n_layers).map(|_| layer_spec(d, config.ffn_dim)).collect(),
            final_norm: norm_spec(d),
            head: linear_spec(d, config.vocab_size),
        }
    }
}

impl ModelParams {
    /// Draws fresh parameters. Tensors are filled in traversal order from one seeded stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        ModelWeights::layout(config).map(|_, spec| match spec.init {
            Init::Zeros => Matrix::zeros(spec.rows, spec.cols),
            Init::Ones => Matrix::filled(spec.rows, spec.cols, 1.0),
            Init::Normal => {
                Matrix::from_vec(spec.rows, spec.cols, (0..spec.len()).map(|_| normal.sample(&mut rng)).collect())
            }
        })
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }
}

/// Exact number of scalars in `params`.
pub fn count_parameters(params: &ModelParams) -> usize {
    params.count()
}
