//! Quantum self-attention, parameterized quantum layer, encoder stack and
//! prediction head, with a hand-written backward pass for each.
//!
//! Shapes: a cluster instance is a `k × d` token matrix. Block 1 maps the
//! fused `k × D` features to `k × n` Pauli readouts; later blocks stay at
//! `k × n`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::pqc::{build_ansatz, vjp, CircuitDescriptor, Encoding, Entangler, Observable};
use crate::qsim::{qubits_for_dim, PauliAxis};

/// `k × d` token matrix.
pub type TokenSequence = Array2<f64>;

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

/// How many circuits produce query, key and value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SharingMode {
    /// One circuit per role, each read out with `σz`.
    Separate,
    /// One circuit for query (`σx`) and key (`σy`), one for value (`σz`).
    SharedQk,
    /// One circuit; `σx`, `σy`, `σz` give query, key, value.
    #[default]
    Shared,
}

impl SharingMode {
    pub const ALL: [SharingMode; 3] = [
        SharingMode::Separate,
        SharingMode::SharedQk,
        SharingMode::Shared,
    ];

    /// Readout plan: for each circuit, which axis feeds which role.
    pub fn readouts(self) -> Vec<Vec<(PauliAxis, Role)>> {
        use PauliAxis::*;
        match self {
            SharingMode::Separate => vec![
                vec![(Z, Role::Query)],
                vec![(Z, Role::Key)],
                vec![(Z, Role::Value)],
            ],
            SharingMode::SharedQk => vec![
                vec![(X, Role::Query), (Y, Role::Key)],
                vec![(Z, Role::Value)],
            ],
            SharingMode::Shared => vec![vec![(X, Role::Query), (Y, Role::Key), (Z, Role::Value)]],
        }
    }
}

impl fmt::Display for SharingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SharingMode::Separate => "1Q-1K-1V",
            SharingMode::SharedQk => "1QK-1V",
            SharingMode::Shared => "1QKV",
        })
    }
}

impl FromStr for SharingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "1Q-1K-1V" => Ok(SharingMode::Separate),
            "1QK-1V" => Ok(SharingMode::SharedQk),
            "1QKV" => Ok(SharingMode::Shared),
            _ => Err(Error::Config(format!("unknown sharing mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Key,
    Value,
}

/// Per-block attention settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub sharing: SharingMode,
    pub n_qubits: usize,
    pub depth: usize,
    pub input_dim: usize,
    pub entangle: Entangler,
}

impl AttentionConfig {
    /// Angle encoding when the input already has one value per qubit,
    /// amplitude encoding otherwise.
    pub fn encoding(&self) -> Result<Encoding> {
        if self.input_dim == self.n_qubits {
            return Ok(Encoding::Angle);
        }
        let needed = qubits_for_dim(self.input_dim)?;
        if needed != self.n_qubits {
            return Err(Error::contract(format!(
                "input dimension {} needs {needed} qubits for amplitude encoding, configured {}",
                self.input_dim, self.n_qubits
            )));
        }
        Ok(Encoding::Amplitude)
    }
}

/// Distinct circuit evaluations per token in one attention block.
pub fn circuit_evals_per_token(cfg: &AttentionConfig) -> usize {
    cfg.sharing.readouts().len()
}

/// Model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Tokens per cluster instance.
    pub k: usize,
    /// Feature dimension `D`.
    pub input_dim: usize,
    pub n_qubits: usize,
    /// Ansatz layers `L`.
    pub depth: usize,
    /// Encoder blocks `T`.
    pub blocks: usize,
    pub sharing: SharingMode,
    pub entangle: Entangler,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.blocks == 0 || self.n_qubits == 0 {
            return Err(Error::Config("k, blocks and n_qubits must be ≥ 1".into()));
        }
        if self.input_dim < 2 || self.n_qubits < 2 {
            return Err(Error::Config(
                "layer norm needs rows of length ≥ 2 (input_dim and n_qubits)".into(),
            ));
        }
        self.attention(0).encoding()?;
        Ok(())
    }

    /// Attention settings of block `t` (0-based).
    pub fn attention(&self, t: usize) -> AttentionConfig {
        AttentionConfig {
            sharing: self.sharing,
            n_qubits: self.n_qubits,
            depth: self.depth,
            input_dim: if t == 0 {
                self.input_dim
            } else {
                self.n_qubits
            },
            entangle: self.entangle,
        }
    }

    pub fn circuit(&self) -> CircuitDescriptor {
        build_ansatz(self.n_qubits, self.depth, self.entangle)
    }

    pub fn layout(&self) -> ParamLayout {
        let np = self.circuit().n_params;
        let n = self.n_qubits;
        let mut b = ParamLayout::default();
        b.push("w_e", &[self.k, self.input_dim]);
        for t in 0..self.blocks {
            let d_in = self.attention(t).input_dim;
            b.push(&format!("block{t}.ln1.gain"), &[d_in]);
            b.push(&format!("block{t}.ln1.bias"), &[d_in]);
            for c in 0..self.sharing.readouts().len() {
                b.push(&format!("block{t}.qsa.{c}"), &[np]);
            }
            b.push(&format!("block{t}.ln2.gain"), &[n]);
            b.push(&format!("block{t}.ln2.bias"), &[n]);
            b.push(&format!("block{t}.pql"), &[np]);
        }
        b.push("head.weight", &[n]);
        b.push("head.bias", &[1]);
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named tensors packed into one flat vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl ParamLayout {
    fn push(&mut self, name: &str, shape: &[usize]) {
        let spec = TensorSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += spec.len();
        self.tensors.push(spec);
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn range(&self, name: &str) -> std::ops::Range<usize> {
        self.get(name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
            .range()
    }
}

/// All trainable values.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl EncoderParams {
    /// Circuit angles uniform in `[-π/4, π/4]`, `W_e` and head weights small
    /// uniform, layer norms at identity, head bias zero.
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let layout = cfg.layout();
        let mut values = vec![0.0; layout.total()];
        let angle =
            Uniform::new_inclusive(-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4)
                .expect("valid range");
        let small = Uniform::new_inclusive(-0.1, 0.1).expect("valid range");
        let head = Uniform::new_inclusive(-0.5, 0.5).expect("valid range");
        for spec in layout.tensors() {
            let dst = &mut values[spec.range()];
            let name = spec.name.as_str();
            if name.contains(".qsa.") || name.ends_with(".pql") {
                dst.iter_mut().for_each(|v| *v = angle.sample(rng));
            } else if name == "w_e" {
                dst.iter_mut().for_each(|v| *v = small.sample(rng));
            } else if name == "head.weight" {
                dst.iter_mut().for_each(|v| *v = head.sample(rng));
            } else if name.ends_with(".gain") {
                dst.fill(1.0);
            }
        }
        Self { layout, values }
    }

    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::contract(format!(
                "layout expects {} values, got {}",
                layout.total(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> &[f64] {
        &self.values[self.layout.range(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.layout.range(name);
        &mut self.values[r]
    }

    /// `W_e` as a `k × D` matrix.
    pub fn w_e(&self) -> Array2<f64> {
        let spec = self.layout.get("w_e").expect("w_e present");
        Array2::from_shape_vec((spec.shape[0], spec.shape[1]), self.get("w_e").to_vec())
            .expect("shape matches layout")
    }
}

// ---------------------------------------------------------------------------
// layer norm

/// Cached normalized rows for the backward pass.
#[derive(Debug, Clone)]
pub struct LnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

/// Row-wise layer normalization with affine gain and bias.
pub fn layer_norm(x: &TokenSequence, gain: &[f64], bias: &[f64]) -> TokenSequence {
    layer_norm_cached(x, gain, bias).0
}

fn layer_norm_cached(x: &TokenSequence, gain: &[f64], bias: &[f64]) -> (TokenSequence, LnCache) {
    let (rows, cols) = x.dim();
    let mut xhat = Array2::zeros((rows, cols));
    let mut inv_std = Vec::with_capacity(rows);
    for (r, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for (c, v) in row.iter().enumerate() {
            xhat[[r, c]] = (v - mean) * inv;
        }
    }
    let mut y = xhat.clone();
    for mut row in y.outer_iter_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v * gain[c] + bias[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Returns `dx` and accumulates gain/bias gradients.
fn layer_norm_backward(
    cache: &LnCache,
    gain: &[f64],
    dy: &TokenSequence,
    d_gain: &mut [f64],
    d_bias: &mut [f64],
) -> TokenSequence {
    let (rows, cols) = dy.dim();
    let mut dx = Array2::zeros((rows, cols));
    for r in 0..rows {
        let mut dxhat = vec![0.0; cols];
        for c in 0..cols {
            let g = dy[[r, c]];
            d_gain[c] += g * cache.xhat[[r, c]];
            d_bias[c] += g;
            dxhat[c] = g * gain[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
        let mean_dx = (0..cols)
            .map(|c| dxhat[c] * cache.xhat[[r, c]])
            .sum::<f64>()
            / cols as f64;
        for c in 0..cols {
            dx[[r, c]] = cache.inv_std[r] * (dxhat[c] - mean_d - cache.xhat[[r, c]] * mean_dx);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// attention

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// `softmax(Q Kᵀ · scale) V`. Returns the output and the attention weights.
pub fn attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    scale: f64,
) -> (Array2<f64>, Array2<f64>) {
    let weights = softmax_rows(&(q.dot(&k.t()) * scale));
    (weights.dot(v), weights)
}

fn attention_backward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    weights: &Array2<f64>,
    scale: f64,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dv = weights.t().dot(d_out);
    let dw = d_out.dot(&v.t());
    let mut dlogits = Array2::zeros(weights.dim());
    for r in 0..weights.nrows() {
        let dot: f64 = (0..weights.ncols())
            .map(|c| dw[[r, c]] * weights[[r, c]])
            .sum();
        for c in 0..weights.ncols() {
            dlogits[[r, c]] = weights[[r, c]] * (dw[[r, c]] - dot);
        }
    }
    let dq = dlogits.dot(k) * scale;
    let dk = dlogits.t().dot(q) * scale;
    (dq, dk, dv)
}

/// Classical single-head self-attention: `y_i = Σ_j a_ij·(W_v s_j)` with
/// `a_ij = softmax_j((W_q s_i)ᵀ(W_k s_j))`. Returns output and coefficients.
pub fn classical_self_attention(
    s: &TokenSequence,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    wv: &Array2<f64>,
) -> Result<(TokenSequence, Array2<f64>)> {
    let d = s.ncols();
    for (name, w) in [("W_q", wq), ("W_k", wk), ("W_v", wv)] {
        if w.dim() != (d, d) {
            return Err(Error::contract(format!(
                "{name} must be {d}×{d}, got {:?}",
                w.dim()
            )));
        }
    }
    // rows of s are tokens, so x ↦ W x becomes S Wᵀ
    let q = s.dot(&wq.t());
    let k = s.dot(&wk.t());
    let v = s.dot(&wv.t());
    let (out, weights) = attention(&q, &k, &v, 1.0);
    Ok((out, weights))
}

/// Intermediates of one quantum self-attention call.
#[derive(Debug, Clone)]
pub struct QsaOutput {
    pub output: TokenSequence,
    pub weights: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Number of circuit runs performed.
    pub circuit_evals: usize,
}

/// Quantum self-attention over the rows of `s`. `thetas` holds one
/// parameter vector per circuit of the sharing mode.
pub fn quantum_self_attention(
    s: &TokenSequence,
    cfg: &AttentionConfig,
    thetas: &[&[f64]],
) -> Result<QsaOutput> {
    if s.ncols() != cfg.input_dim {
        return Err(Error::contract(format!(
            "token width {} does not match attention input dimension {}",
            s.ncols(),
            cfg.input_dim
        )));
    }
    let plan = cfg.sharing.readouts();
    if thetas.len() != plan.len() {
        return Err(Error::contract(format!(
            "{} needs {} circuits, got {}",
            cfg.sharing,
            plan.len(),
            thetas.len()
        )));
    }
    let circuit = build_ansatz(cfg.n_qubits, cfg.depth, cfg.entangle);
    let encoding = cfg.encoding()?;
    let (k, n) = (s.nrows(), cfg.n_qubits);
    let mut q = Array2::zeros((k, n));
    let mut key = Array2::zeros((k, n));
    let mut v = Array2::zeros((k, n));
    let mut evals = 0;
    for (h, row) in s.outer_iter().enumerate() {
        let row = row.to_vec();
        let encoded = encoding.encode(&row)?;
        for (theta, reads) in thetas.iter().zip(&plan) {
            let out = circuit.run(theta, &encoded)?;
            evals += 1;
            for &(axis, role) in reads {
                let dst = match role {
                    Role::Query => &mut q,
                    Role::Key => &mut key,
                    Role::Value => &mut v,
                };
                dst.row_mut(h).assign(&Array1::from(out.expectations(axis)));
            }
        }
    }
    let (output, weights) = attention(&q, &key, &v, 1.0 / (n as f64).sqrt());
    Ok(QsaOutput {
        output,
        weights,
        q,
        k: key,
        v,
        circuit_evals: evals,
    })
}

/// Backward of [`quantum_self_attention`]: returns `ds` and accumulates one
/// gradient per circuit into `d_thetas`.
fn quantum_self_attention_backward(
    s: &TokenSequence,
    cfg: &AttentionConfig,
    thetas: &[&[f64]],
    fwd: &QsaOutput,
    d_out: &TokenSequence,
    d_thetas: &mut [Vec<f64>],
) -> Result<TokenSequence> {
    let n = cfg.n_qubits;
    let scale = 1.0 / (n as f64).sqrt();
    let (dq, dk, dv) = attention_backward(&fwd.q, &fwd.k, &fwd.v, &fwd.weights, scale, d_out);
    let circuit = build_ansatz(n, cfg.depth, cfg.entangle);
    let encoding = cfg.encoding()?;
    let plan = cfg.sharing.readouts();
    let mut ds = Array2::zeros(s.dim());
    for (h, row) in s.outer_iter().enumerate() {
        let row = row.to_vec();
        for (c, (theta, reads)) in thetas.iter().zip(&plan).enumerate() {
            let mut obs = Observable::default();
            for &(axis, role) in reads {
                let src = match role {
                    Role::Query => &dq,
                    Role::Key => &dk,
                    Role::Value => &dv,
                };
                obs.push(axis, src.row(h).to_vec());
            }
            let (_, g) = vjp(&circuit, theta, &row, encoding, &obs)?;
            for (acc, d) in d_thetas[c].iter_mut().zip(&g.d_theta) {
                *acc += d;
            }
            for (acc, d) in ds.row_mut(h).iter_mut().zip(&g.d_input) {
                *acc += d;
            }
        }
    }
    Ok(ds)
}

/// Parameterized quantum layer: angle-encode each row, apply the circuit and
/// read per-qubit `σz`.
pub fn parameterized_quantum_layer(
    z: &TokenSequence,
    circuit: &CircuitDescriptor,
    theta: &[f64],
) -> Result<TokenSequence> {
    if z.ncols() != circuit.n_qubits {
        return Err(Error::contract(format!(
            "token width {} does not match {} qubits",
            z.ncols(),
            circuit.n_qubits
        )));
    }
    let mut out = Array2::zeros(z.dim());
    for (h, row) in z.outer_iter().enumerate() {
        let state = Encoding::Angle.encode(&row.to_vec())?;
        let e = circuit.run(theta, &state)?.expectations(PauliAxis::Z);
        out.row_mut(h).assign(&Array1::from(e));
    }
    Ok(out)
}

fn parameterized_quantum_layer_backward(
    z: &TokenSequence,
    circuit: &CircuitDescriptor,
    theta: &[f64],
    d_out: &TokenSequence,
    d_theta: &mut [f64],
) -> Result<TokenSequence> {
    let mut dz = Array2::zeros(z.dim());
    for (h, row) in z.outer_iter().enumerate() {
        let obs = Observable {
            terms: vec![(PauliAxis::Z, d_out.row(h).to_vec())],
        };
        let (_, g) = vjp(circuit, theta, &row.to_vec(), Encoding::Angle, &obs)?;
        for (acc, d) in d_theta.iter_mut().zip(&g.d_theta) {
            *acc += d;
        }
        dz.row_mut(h).assign(&Array1::from(g.d_input));
    }
    Ok(dz)
}

// ---------------------------------------------------------------------------
// encoder

#[derive(Debug, Clone)]
struct BlockCache {
    input: TokenSequence,
    ln1: LnCache,
    qsa_in: TokenSequence,
    qsa: QsaOutput,
    ln2: LnCache,
    pql_in: TokenSequence,
}

/// Forward intermediates of [`Encoder::forward`].
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    blocks: Vec<BlockCache>,
    pub output: TokenSequence,
    /// Circuit runs performed by the attention sublayers.
    pub qsa_circuit_evals: usize,
    /// Head logits, one per token.
    pub logits: Vec<f64>,
    /// Head probabilities, one per token.
    pub y: Vec<f64>,
}

/// The encoder stack plus prediction head for a fixed configuration.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    circuit: CircuitDescriptor,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            circuit: cfg.circuit(),
            cfg,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn check_params(&self, params: &EncoderParams) -> Result<()> {
        if *params.layout() != self.cfg.layout() {
            return Err(Error::contract(
                "parameter layout does not match encoder config",
            ));
        }
        Ok(())
    }

    fn qsa_thetas<'a>(&self, params: &'a EncoderParams, t: usize) -> Vec<&'a [f64]> {
        (0..self.cfg.sharing.readouts().len())
            .map(|c| params.get(&format!("block{t}.qsa.{c}")))
            .collect()
    }

    /// Encoder stack followed by the head.
    pub fn forward(&self, params: &EncoderParams, s: &TokenSequence) -> Result<EncoderTrace> {
        self.check_params(params)?;
        if s.dim() != (self.cfg.k, self.cfg.input_dim) {
            return Err(Error::contract(format!(
                "expected {}×{} tokens, got {:?}",
                self.cfg.k,
                self.cfg.input_dim,
                s.dim()
            )));
        }
        let mut z = s.clone();
        let mut blocks = Vec::with_capacity(self.cfg.blocks);
        let mut evals = 0;
        for t in 0..self.cfg.blocks {
            let input = z;
            let (qsa_in, ln1) = layer_norm_cached(
                &input,
                params.get(&format!("block{t}.ln1.gain")),
                params.get(&format!("block{t}.ln1.bias")),
            );
            let qsa = quantum_self_attention(
                &qsa_in,
                &self.cfg.attention(t),
                &self.qsa_thetas(params, t),
            )?;
            evals += qsa.circuit_evals;
            // block 0 changes width D → n, so it has no attention residual
            let z_prime = if t == 0 {
                qsa.output.clone()
            } else {
                &input + &qsa.output
            };
            let (pql_in, ln2) = layer_norm_cached(
                &z_prime,
                params.get(&format!("block{t}.ln2.gain")),
                params.get(&format!("block{t}.ln2.bias")),
            );
            let pql = parameterized_quantum_layer(
                &pql_in,
                &self.circuit,
                params.get(&format!("block{t}.pql")),
            )?;
            z = &z_prime + &pql;
            blocks.push(BlockCache {
                input,
                ln1,
                qsa_in,
                qsa,
                ln2,
                pql_in,
            });
        }
        let (logits, y) = head_logits(&z, params.get("head.weight"), params.get("head.bias")[0])?;
        Ok(EncoderTrace {
            blocks,
            output: z,
            qsa_circuit_evals: evals,
            logits,
            y,
        })
    }

    /// Backpropagates `d_logits` (one per token). Returns the gradient in the
    /// parameter layout and the gradient with respect to the input tokens.
    pub fn backward(
        &self,
        params: &EncoderParams,
        trace: &EncoderTrace,
        d_logits: &[f64],
    ) -> Result<(Vec<f64>, TokenSequence)> {
        let layout = params.layout();
        let mut grad = vec![0.0; layout.total()];
        let (k, n) = trace.output.dim();

        let w = params.get("head.weight");
        let mut dz = Array2::zeros((k, n));
        {
            let wr = layout.range("head.weight");
            let br = layout.range("head.bias");
            for h in 0..k {
                for j in 0..n {
                    grad[wr.start + j] += d_logits[h] * trace.output[[h, j]];
                    dz[[h, j]] = d_logits[h] * w[j];
                }
                grad[br.start] += d_logits[h];
            }
        }

        for t in (0..self.cfg.blocks).rev() {
            let cache = &trace.blocks[t];
            // Z = Z' + PQL(LN2(Z'))
            let mut d_pql_theta = vec![0.0; self.circuit.n_params];
            let d_pql_in = parameterized_quantum_layer_backward(
                &cache.pql_in,
                &self.circuit,
                params.get(&format!("block{t}.pql")),
                &dz,
                &mut d_pql_theta,
            )?;
            add_into(
                &mut grad,
                layout.range(&format!("block{t}.pql")),
                &d_pql_theta,
            );
            let (mut dg, mut db) = (vec![0.0; n], vec![0.0; n]);
            let d_zprime_ln = layer_norm_backward(
                &cache.ln2,
                params.get(&format!("block{t}.ln2.gain")),
                &d_pql_in,
                &mut dg,
                &mut db,
            );
            add_into(&mut grad, layout.range(&format!("block{t}.ln2.gain")), &dg);
            add_into(&mut grad, layout.range(&format!("block{t}.ln2.bias")), &db);
            let d_zprime = &dz + &d_zprime_ln;

            // Z' = [Z +] QSA(LN1(Z))
            let thetas = self.qsa_thetas(params, t);
            let mut d_thetas = vec![vec![0.0; self.circuit.n_params]; thetas.len()];
            let d_qsa_in = quantum_self_attention_backward(
                &cache.qsa_in,
                &self.cfg.attention(t),
                &thetas,
                &cache.qsa,
                &d_zprime,
                &mut d_thetas,
            )?;
            for (c, d) in d_thetas.iter().enumerate() {
                add_into(&mut grad, layout.range(&format!("block{t}.qsa.{c}")), d);
            }
            let d_in_width = cache.input.ncols();
            let (mut dg, mut db) = (vec![0.0; d_in_width], vec![0.0; d_in_width]);
            let d_input_ln = layer_norm_backward(
                &cache.ln1,
                params.get(&format!("block{t}.ln1.gain")),
                &d_qsa_in,
                &mut dg,
                &mut db,
            );
            add_into(&mut grad, layout.range(&format!("block{t}.ln1.gain")), &dg);
            add_into(&mut grad, layout.range(&format!("block{t}.ln1.bias")), &db);
            dz = if t == 0 {
                d_input_ln
            } else {
                &d_zprime + &d_input_ln
            };
        }
        Ok((grad, dz))
    }
}

fn add_into(grad: &mut [f64], range: std::ops::Range<usize>, src: &[f64]) {
    for (g, s) in grad[range].iter_mut().zip(src) {
        *g += s;
    }
}

/// Runs the encoder stack and returns its `k × n` output.
pub fn encoder_forward(
    s: &TokenSequence,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<TokenSequence> {
    Ok(Encoder::new(*cfg)?.forward(params, s)?.output)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn head_logits(z: &TokenSequence, weight: &[f64], bias: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if weight.len() != z.ncols() {
        return Err(Error::contract(format!(
            "head has {} weights for width {}",
            weight.len(),
            z.ncols()
        )));
    }
    let w = ArrayView1::from(weight);
    let logits: Vec<f64> = z.outer_iter().map(|row| row.dot(&w) + bias).collect();
    let y = logits.iter().map(|&l| sigmoid(l)).collect();
    Ok((logits, y))
}

/// Per-token `sigmoid(w·z + b)`.
pub fn head_forward(z: &TokenSequence, weight: &[f64], bias: f64) -> Result<Vec<f64>> {
    head_logits(z, weight, bias).map(|(_, y)| y)
}

/// Column mean, used by tests and the demo for uniform-attention checks.
pub fn column_mean(v: &Array2<f64>) -> Array1<f64> {
    v.mean_axis(Axis(0)).expect("non-empty")
}
