//! Forward-only networks: tanh MLPs and the plus-kernel shared-weight
//! convolution used as a grid world model.
//!
//! Parameters live in flat `f64` slices. An MLP layer stores its weights
//! row-major (`out x in`) followed by its biases, layer after layer.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("malformed observation: {0}")]
    MalformedObservation(String),
    #[error("checkpoint parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    fn parse(s: &str) -> Result<Self, NnError> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(NnError::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected network; hidden layers always use `hidden_activation`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
}

impl MlpArchitecture {
    pub fn new(layer_sizes: &[usize], output_activation: Activation) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::InvalidArchitecture(
                "an MLP needs at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(NnError::InvalidArchitecture(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            hidden_activation: Activation::Tanh,
            output_activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn widest(&self) -> usize {
        *self.layer_sizes.iter().max().unwrap()
    }

    pub fn buffer(&self) -> ForwardBuffer {
        ForwardBuffer::with_width(self.widest())
    }

    /// Checked forward pass that allocates its own scratch space.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check(params, input)?;
        let mut buf = self.buffer();
        Ok(self.forward_into(params, input, &mut buf).to_vec())
    }

    pub fn check(&self, params: &[f64], input: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::DimensionMismatch {
                what: "parameter vector",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Unchecked hot-path forward pass. Dimensions are debug-asserted only.
    ///
    /// The first layer skips zero inputs, which is exact (a skipped term only
    /// ever contributes a signed zero) and pays off on binary observations.
    pub fn forward_into<'b>(
        &self,
        params: &[f64],
        input: &[f64],
        buf: &'b mut ForwardBuffer,
    ) -> &'b [f64] {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(input.len(), self.input_dim());
        let ForwardBuffer { a, b, active } = buf;
        let n_layers = self.layer_sizes.len() - 1;
        let mut offset = 0;

        active.clear();
        active.extend(
            input
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(j, _)| j),
        );

        for layer in 0..n_layers {
            let n_in = self.layer_sizes[layer];
            let n_out = self.layer_sizes[layer + 1];
            let weights = &params[offset..offset + n_in * n_out];
            let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let act = if layer + 1 == n_layers {
                self.output_activation
            } else {
                self.hidden_activation
            };

            if layer == 0 {
                for (i, out) in b[..n_out].iter_mut().enumerate() {
                    let row = &weights[i * n_in..(i + 1) * n_in];
                    let mut acc = 0.0;
                    for &j in active.iter() {
                        acc += row[j] * input[j];
                    }
                    *out = act.apply(acc + biases[i]);
                }
            } else {
                let x = &a[..n_in];
                for (i, out) in b[..n_out].iter_mut().enumerate() {
                    let row = &weights[i * n_in..(i + 1) * n_in];
                    let acc: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
                    *out = act.apply(acc + biases[i]);
                }
            }
            std::mem::swap(a, b);
        }
        &a[..self.output_dim()]
    }
}

impl fmt::Display for MlpArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        write!(
            f,
            "mlp:{}:{}:{}",
            sizes.join("-"),
            self.hidden_activation.name(),
            self.output_activation.name()
        )
    }
}

/// Reusable scratch space for [`MlpArchitecture::forward_into`].
#[derive(Debug, Clone, Default)]
pub struct ForwardBuffer {
    a: Vec<f64>,
    b: Vec<f64>,
    active: Vec<usize>,
}

impl ForwardBuffer {
    pub fn with_width(width: usize) -> Self {
        Self {
            a: vec![0.0; width],
            b: vec![0.0; width],
            active: Vec::with_capacity(width),
        }
    }
}

pub const GRID_WINDOW: usize = 5;
pub const GRID_CELLS: usize = GRID_WINDOW * GRID_WINDOW;
pub const GRID_PLANES: usize = 2;
pub const GRID_OBS_LEN: usize = GRID_CELLS * GRID_PLANES;
pub const GRID_ACTIONS: usize = 5;

/// Shared-weight convolution over a 5x5 window with a plus-shaped receptive
/// field (center, up, down, left, right), the one-hot action appended to
/// every field. The per-cell network is `10 -> hidden (tanh) -> 1`; its
/// weights are laid out exactly like an MLP of those sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlusConvArchitecture {
    pub hidden_units: usize,
    pub threshold: f64,
}

impl Default for PlusConvArchitecture {
    fn default() -> Self {
        Self {
            hidden_units: 100,
            threshold: 0.5,
        }
    }
}

impl PlusConvArchitecture {
    pub const FIELD_SIZE: usize = 5;
    pub const ACTION_DIM: usize = GRID_ACTIONS;
    pub const OUTPUT_DIM_PER_CELL: usize = 1;

    pub fn new(hidden_units: usize) -> Result<Self, NnError> {
        if hidden_units == 0 {
            return Err(NnError::InvalidArchitecture(
                "plus-conv needs at least one hidden unit".into(),
            ));
        }
        Ok(Self {
            hidden_units,
            ..Self::default()
        })
    }

    pub fn param_count(&self) -> usize {
        let fan_in = Self::FIELD_SIZE + Self::ACTION_DIM;
        fan_in * self.hidden_units
            + self.hidden_units
            + self.hidden_units * Self::OUTPUT_DIM_PER_CELL
            + Self::OUTPUT_DIM_PER_CELL
    }

    /// The per-cell network as an MLP (same parameter layout).
    pub fn cell_network(&self) -> MlpArchitecture {
        MlpArchitecture::new(
            &[
                Self::FIELD_SIZE + Self::ACTION_DIM,
                self.hidden_units,
                Self::OUTPUT_DIM_PER_CELL,
            ],
            Activation::Identity,
        )
        .expect("positive sizes")
    }

    /// Plus-shaped neighborhood of `cell` in one plane, zero outside the window.
    pub fn gather(plane: &[f64], cell: usize) -> [f64; 5] {
        let (r, c) = ((cell / GRID_WINDOW) as isize, (cell % GRID_WINDOW) as isize);
        let at = |r: isize, c: isize| -> f64 {
            if (0..GRID_WINDOW as isize).contains(&r) && (0..GRID_WINDOW as isize).contains(&c) {
                plane[r as usize * GRID_WINDOW + c as usize]
            } else {
                0.0
            }
        };
        [at(r, c), at(r - 1, c), at(r + 1, c), at(r, c - 1), at(r, c + 1)]
    }

    /// Pre-threshold predictions for all 50 cells.
    pub fn forward_raw(
        &self,
        params: &[f64],
        obs: &[f64],
        action: usize,
    ) -> Result<[f64; GRID_OBS_LEN], NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::DimensionMismatch {
                what: "parameter vector",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        if obs.len() != GRID_OBS_LEN {
            return Err(NnError::DimensionMismatch {
                what: "grid observation",
                expected: GRID_OBS_LEN,
                got: obs.len(),
            });
        }
        if action >= GRID_ACTIONS {
            return Err(NnError::MalformedObservation(format!(
                "action index {action} out of range"
            )));
        }
        let mut out = [0.0; GRID_OBS_LEN];
        self.forward_raw_into(params, obs, action, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`forward_raw`](Self::forward_raw).
    ///
    /// For binary observations every cell output is a function of its 5-bit
    /// neighborhood pattern, so at most 32 distinct evaluations are needed.
    pub fn forward_raw_into(
        &self,
        params: &[f64],
        obs: &[f64],
        action: usize,
        out: &mut [f64; GRID_OBS_LEN],
    ) {
        let h = self.hidden_units;
        let fan_in = Self::FIELD_SIZE + Self::ACTION_DIM;
        let w1 = &params[..fan_in * h];
        let b1 = &params[fan_in * h..fan_in * h + h];
        let w2 = &params[fan_in * h + h..fan_in * h + 2 * h];
        let b2 = params[fan_in * h + 2 * h];

        let binary = obs.iter().all(|&v| v == 0.0 || v == 1.0);
        let mut cache = [f64::NAN; 32];
        let mut hidden = vec![0.0; h];

        for plane in 0..GRID_PLANES {
            let plane_obs = &obs[plane * GRID_CELLS..(plane + 1) * GRID_CELLS];
            for cell in 0..GRID_CELLS {
                let field = Self::gather(plane_obs, cell);
                let eval = |hidden: &mut [f64]| {
                    for (i, hv) in hidden.iter_mut().enumerate() {
                        let row = &w1[i * fan_in..(i + 1) * fan_in];
                        let mut acc = 0.0;
                        for (k, &v) in field.iter().enumerate() {
                            if v != 0.0 {
                                acc += row[k] * v;
                            }
                        }
                        acc += row[Self::FIELD_SIZE + action];
                        *hv = (acc + b1[i]).tanh();
                    }
                    let acc: f64 = w2.iter().zip(hidden.iter()).map(|(w, v)| w * v).sum();
                    acc + b2
                };
                out[plane * GRID_CELLS + cell] = if binary {
                    let key = field
                        .iter()
                        .enumerate()
                        .fold(0usize, |k, (i, &v)| k | ((v as usize) << i));
                    if cache[key].is_nan() {
                        cache[key] = eval(&mut hidden);
                    }
                    cache[key]
                } else {
                    eval(&mut hidden)
                };
            }
        }
    }

    /// Thresholded prediction: 1 where the raw output exceeds the threshold.
    pub fn forward(
        &self,
        params: &[f64],
        obs: &[f64],
        action: usize,
    ) -> Result<[f64; GRID_OBS_LEN], NnError> {
        if obs.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(NnError::MalformedObservation(
                "grid observation entries must be 0 or 1".into(),
            ));
        }
        let raw = self.forward_raw(params, obs, action)?;
        Ok(threshold(&raw, self.threshold))
    }
}

impl fmt::Display for PlusConvArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "plusconv:{}-{}-{}-{}",
            Self::FIELD_SIZE,
            Self::ACTION_DIM,
            self.hidden_units,
            Self::OUTPUT_DIM_PER_CELL
        )
    }
}

/// Rounds to 1 strictly above `t`, to 0 otherwise.
pub fn threshold<const N: usize>(raw: &[f64; N], t: f64) -> [f64; N] {
    let mut out = [0.0; N];
    for (o, &v) in out.iter_mut().zip(raw) {
        *o = if v > t { 1.0 } else { 0.0 };
    }
    out
}

/// Any network (or concatenation of two) whose parameters fit in one vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Mlp(MlpArchitecture),
    PlusConv(PlusConvArchitecture),
    /// Policy parameters first, world-model parameters second.
    Joint {
        policy: Box<Architecture>,
        model: Box<Architecture>,
    },
}

impl Architecture {
    pub fn param_count(&self) -> usize {
        match self {
            Architecture::Mlp(a) => a.param_count(),
            Architecture::PlusConv(a) => a.param_count(),
            Architecture::Joint { policy, model } => policy.param_count() + model.param_count(),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Mlp(a) => a.fmt(f),
            Architecture::PlusConv(a) => a.fmt(f),
            Architecture::Joint { policy, model } => write!(f, "joint:{policy}+{model}"),
        }
    }
}

impl FromStr for Architecture {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("joint:") {
            let (p, m) = rest
                .split_once('+')
                .ok_or_else(|| NnError::Parse(format!("joint descriptor `{s}` lacks `+`")))?;
            return Ok(Architecture::Joint {
                policy: Box::new(p.parse()?),
                model: Box::new(m.parse()?),
            });
        }
        let parts: Vec<&str> = s.split(':').collect();
        let sizes = |field: &str| -> Result<Vec<usize>, NnError> {
            field
                .split('-')
                .map(|n| {
                    n.parse::<usize>()
                        .map_err(|_| NnError::Parse(format!("bad layer size `{n}` in `{s}`")))
                })
                .collect()
        };
        match parts.as_slice() {
            ["mlp", layers, hidden, output] => {
                let hidden = Activation::parse(hidden)?;
                if hidden != Activation::Tanh {
                    return Err(NnError::Parse("hidden activation must be tanh".into()));
                }
                Ok(Architecture::Mlp(MlpArchitecture::new(
                    &sizes(layers)?,
                    Activation::parse(output)?,
                )?))
            }
            ["plusconv", dims] => match sizes(dims)?.as_slice() {
                [5, 5, hidden, 1] => Ok(Architecture::PlusConv(PlusConvArchitecture::new(*hidden)?)),
                _ => Err(NnError::Parse(format!("unsupported plus-conv shape `{dims}`"))),
            },
            _ => Err(NnError::Parse(format!("unknown architecture descriptor `{s}`"))),
        }
    }
}

/// Flat learnable parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

pub const CHECKPOINT_TAG: &str = "obsdrop-params";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Two-line text checkpoint. Rust's shortest round-trip float formatting
    /// makes the value line bit-exact on re-read.
    pub fn to_checkpoint(&self, arch: &Architecture) -> Result<String, NnError> {
        if self.len() != arch.param_count() {
            return Err(NnError::DimensionMismatch {
                what: "parameter vector",
                expected: arch.param_count(),
                got: self.len(),
            });
        }
        let values: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        Ok(format!(
            "{CHECKPOINT_TAG} v{CHECKPOINT_VERSION} {arch}\n{}\n",
            values.join(" ")
        ))
    }

    pub fn from_checkpoint(text: &str) -> Result<(Architecture, ParamVector), NnError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| NnError::Parse("empty checkpoint".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(CHECKPOINT_TAG) {
            return Err(NnError::Parse("missing checkpoint tag".into()));
        }
        let version = fields.next().unwrap_or("");
        if version != format!("v{CHECKPOINT_VERSION}") {
            return Err(NnError::Parse(format!("unsupported checkpoint version `{version}`")));
        }
        let arch: Architecture = fields
            .next()
            .ok_or_else(|| NnError::Parse("missing architecture descriptor".into()))?
            .parse()?;
        let values = lines
            .flat_map(|l| l.split_whitespace())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| NnError::Parse(format!("bad parameter value `{t}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != arch.param_count() {
            return Err(NnError::DimensionMismatch {
                what: "checkpoint parameters",
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        Ok((arch, ParamVector(values)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Straightforward dense matrix-multiply forward pass.
    fn naive_mlp(sizes: &[usize], out_act: Activation, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (ni, no) = (sizes[l], sizes[l + 1]);
            let mut y = vec![0.0; no];
            for i in 0..no {
                let mut s = 0.0;
                for j in 0..ni {
                    s += params[off + i * ni + j] * x[j];
                }
                s += params[off + ni * no + i];
                y[i] = if l + 2 == sizes.len() {
                    out_act.apply(s)
                } else {
                    s.tanh()
                };
            }
            off += ni * no + no;
            x = y;
        }
        x
    }

    #[test]
    fn param_counts() {
        let fc = MlpArchitecture::new(&[55, 100, 50], Activation::Identity).unwrap();
        assert_eq!(fc.param_count(), 10650);
        assert_eq!(PlusConvArchitecture::default().param_count(), 1201);
        let small = MlpArchitecture::new(&[5, 10, 1], Activation::Tanh).unwrap();
        assert_eq!(small.param_count(), 71);
        assert_eq!(PlusConvArchitecture::default().cell_network().param_count(), 1201);
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(MlpArchitecture::new(&[3], Activation::Tanh).is_err());
        assert!(MlpArchitecture::new(&[3, 0, 2], Activation::Tanh).is_err());
        assert!(PlusConvArchitecture::new(0).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let arch = MlpArchitecture::new(&[4, 7, 3], Activation::Tanh).unwrap();
        let out = arch
            .forward(&vec![0.0; arch.param_count()], &[0.3, -2.0, 5.0, 1.0])
            .unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_single_layer() {
        let arch = MlpArchitecture::new(&[3, 3], Activation::Identity).unwrap();
        let mut p = vec![0.0; arch.param_count()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let x = [0.25, -1.5, 3.0];
        assert_eq!(arch.forward(&p, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let arch = MlpArchitecture::new(&[2, 2], Activation::Identity).unwrap();
        assert!(matches!(
            arch.forward(&[0.0; 5], &[1.0, 2.0]),
            Err(NnError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            arch.forward(&[0.0; 6], &[1.0]),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matches_naive_oracle() {
        for (k, sizes) in [vec![5, 10, 1], vec![6, 30, 5], vec![50, 100, 32, 5]]
            .into_iter()
            .enumerate()
        {
            let arch = MlpArchitecture::new(&sizes, Activation::Tanh).unwrap();
            let p = random_vec(arch.param_count(), 100 + k as u64);
            let mut x = random_vec(sizes[0], 200 + k as u64);
            x[0] = 0.0;
            let got = arch.forward(&p, &x).unwrap();
            let want = naive_mlp(&sizes, Activation::Tanh, &p, &x);
            assert_eq!(got, want);
        }
    }

    fn naive_plusconv(params: &[f64], obs: &[f64], action: usize) -> Vec<f64> {
        let mut out = vec![0.0; GRID_OBS_LEN];
        for plane in 0..2 {
            for r in 0..5i32 {
                for c in 0..5i32 {
                    let get = |rr: i32, cc: i32| {
                        if (0..5).contains(&rr) && (0..5).contains(&cc) {
                            obs[plane * 25 + (rr * 5 + cc) as usize]
                        } else {
                            0.0
                        }
                    };
                    let mut input = vec![
                        get(r, c),
                        get(r - 1, c),
                        get(r + 1, c),
                        get(r, c - 1),
                        get(r, c + 1),
                    ];
                    input.extend((0..5).map(|a| if a == action { 1.0 } else { 0.0 }));
                    out[plane * 25 + (r * 5 + c) as usize] =
                        naive_mlp(&[10, 100, 1], Activation::Identity, params, &input)[0];
                }
            }
        }
        out
    }

    fn random_binary(seed: u64, density: f64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..GRID_OBS_LEN)
            .map(|_| if rng.random_bool(density) { 1.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn plusconv_zero() {
        let arch = PlusConvArchitecture::default();
        let out = arch
            .forward(&vec![0.0; 1201], &[0.0; GRID_OBS_LEN], 2)
            .unwrap();
        assert_eq!(out, [0.0; GRID_OBS_LEN]);
    }

    #[test]
    fn plusconv_matches_per_cell_oracle() {
        let arch = PlusConvArchitecture::default();
        for seed in 0..5 {
            let p = random_vec(1201, seed);
            let obs = random_binary(seed + 50, 0.4);
            let action = seed as usize % 5;
            let got = arch.forward_raw(&p, &obs, action).unwrap();
            let want = naive_plusconv(&p, &obs, action);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn plusconv_rejects_malformed() {
        let arch = PlusConvArchitecture::default();
        let mut obs = [0.0; GRID_OBS_LEN];
        obs[3] = 0.5;
        assert!(matches!(
            arch.forward(&vec![0.0; 1201], &obs, 0),
            Err(NnError::MalformedObservation(_))
        ));
        assert!(arch.forward_raw(&vec![0.0; 1201], &[0.0; 10], 0).is_err());
        assert!(arch.forward_raw(&vec![0.0; 1201], &[0.0; GRID_OBS_LEN], 5).is_err());
    }

    #[test]
    fn threshold_ties_round_down() {
        assert_eq!(threshold(&[0.5, 0.5000001, -3.0], 0.5), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn descriptors_round_trip() {
        let joint = Architecture::Joint {
            policy: Box::new(Architecture::Mlp(
                MlpArchitecture::new(&[50, 100, 32, 5], Activation::Identity).unwrap(),
            )),
            model: Box::new(Architecture::PlusConv(PlusConvArchitecture::default())),
        };
        let text = joint.to_string();
        assert_eq!(text, "joint:mlp:50-100-32-5:tanh:identity+plusconv:5-5-100-1");
        assert_eq!(text.parse::<Architecture>().unwrap(), joint);
        assert!("conv:3".parse::<Architecture>().is_err());
    }

    #[test]
    fn checkpoint_rejects_wrong_length() {
        let arch = Architecture::Mlp(MlpArchitecture::new(&[2, 2], Activation::Tanh).unwrap());
        assert!(ParamVector::zeros(3).to_checkpoint(&arch).is_err());
        let bad = format!("{CHECKPOINT_TAG} v1 {arch}\n1 2 3\n");
        assert!(ParamVector::from_checkpoint(&bad).is_err());
        let wrong_version = format!("{CHECKPOINT_TAG} v9 {arch}\n1 2 3 4 5 6\n");
        assert!(ParamVector::from_checkpoint(&wrong_version).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trips_bit_exactly(values in prop::collection::vec(any::<f64>(), 71)) {
            let arch = Architecture::Mlp(MlpArchitecture::new(&[5, 10, 1], Activation::Tanh).unwrap());
            let pv = ParamVector(values);
            let text = pv.to_checkpoint(&arch).unwrap();
            let (arch2, back) = ParamVector::from_checkpoint(&text).unwrap();
            prop_assert_eq!(arch2, arch);
            for (a, b) in pv.0.iter().zip(&back.0) {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }

        #[test]
        fn plusconv_translation_equivariant(bits in prop::collection::vec(any::<bool>(), 9),
                                            seed in 0u64..1000, action in 0usize..5,
                                            dr in -1i32..=1, dc in -1i32..=1) {
            // A 3x3 pattern placed in the window interior, then shifted by one cell.
            let arch = PlusConvArchitecture::default();
            let p = random_vec(1201, seed);
            let place = |r0: i32, c0: i32| {
                let mut obs = vec![0.0; GRID_OBS_LEN];
                for (k, &b) in bits.iter().enumerate() {
                    let (r, c) = (r0 + k as i32 / 3, c0 + k as i32 % 3);
                    obs[(r * 5 + c) as usize] = if b { 1.0 } else { 0.0 };
                }
                obs
            };
            let base = arch.forward_raw(&p, &place(1, 1), action).unwrap();
            let shifted = arch.forward_raw(&p, &place(1 + dr, 1 + dc), action).unwrap();
            // Cells whose receptive field stays interior in both placements.
            for r in 1..4i32 {
                for c in 1..4i32 {
                    let (r2, c2) = (r + dr, c + dc);
                    if (1..4).contains(&r2) && (1..4).contains(&c2) {
                        prop_assert_eq!(base[(r * 5 + c) as usize].to_bits(),
                                        shifted[(r2 * 5 + c2) as usize].to_bits());
                    }
                }
            }
        }
    }
}
