//! Gated recurrent cells and the additive attention used at both levels of
//! the model.
//!
//! All functions record onto a [`Tape`]; parameters are passed as bundles of
//! tape handles obtained by mapping a `Tensor` bundle through
//! [`Tape::leaf`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{param_tree, Init};
use crate::scalar::Scalar;

param_tree! {
    /// Weights of one GRU: input matrices `w_*` (hidden × input), recurrent
    /// matrices `u_*` (hidden × hidden) and biases `b_*` for the reset (`r`),
    /// update (`z`) and candidate (`h`) paths.
    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct GruParams<P> {
        pub w_r: P,
        pub w_z: P,
        pub w_h: P,
        pub u_r: P,
        pub u_z: P,
        pub u_h: P,
        pub b_r: P,
        pub b_z: P,
        pub b_h: P,
    }
}

param_tree! {
    /// GRU whose three gate pre-activations each gain `c_* · context`.
    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct ContextGruParams<P> {
        pub base: GruParams<P> as tree,
        pub c_r: P,
        pub c_z: P,
        pub c_h: P,
    }
}

param_tree! {
    /// Additive attention `exp(tanh(W[q; k])ᵀ u)` normalized over keys.
    ///
    /// `W` is held as its two column blocks: `w_query` (score × query_dim)
    /// and `w_key` (score × key_dim), so key projections are computed once
    /// per key set.
    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct AttentionParams<P> {
        pub w_query: P,
        pub w_key: P,
        pub u: P,
    }
}

impl<T: Scalar> GruParams<Tensor<T>> {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, init: &mut Init<'_, R>) -> Self {
        Self {
            w_r: init.matrix(hidden, input_dim),
            w_z: init.matrix(hidden, input_dim),
            w_h: init.matrix(hidden, input_dim),
            u_r: init.matrix(hidden, hidden),
            u_z: init.matrix(hidden, hidden),
            u_h: init.matrix(hidden, hidden),
            b_r: init.vector(hidden, hidden),
            b_z: init.vector(hidden, hidden),
            b_h: init.vector(hidden, hidden),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input_dim]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_r: w(),
            w_z: w(),
            w_h: w(),
            u_r: u(),
            u_z: u(),
            u_h: u(),
            b_r: b(),
            b_z: b(),
            b_h: b(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_r.rows()
    }

    /// Checks that all nine tensors agree on one `(input, hidden)` pair.
    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_dim(), self.hidden_dim());
        let ok = [&self.w_r, &self.w_z, &self.w_h].iter().all(|w| w.shape() == [h, i])
            && [&self.u_r, &self.u_z, &self.u_h].iter().all(|u| u.shape() == [h, h])
            && [&self.b_r, &self.b_z, &self.b_h].iter().all(|b| b.shape() == [h]);
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "GRU parameters inconsistent with input {i}, hidden {h}"
            )))
        }
    }
}

impl<T: Scalar> ContextGruParams<Tensor<T>> {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, context_dim: usize, init: &mut Init<'_, R>) -> Self {
        Self {
            base: GruParams::init(input_dim, hidden, init),
            c_r: init.matrix(hidden, context_dim),
            c_z: init.matrix(hidden, context_dim),
            c_h: init.matrix(hidden, context_dim),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize, context_dim: usize) -> Self {
        let c = || Tensor::zeros(&[hidden, context_dim]);
        Self {
            base: GruParams::zeros(input_dim, hidden),
            c_r: c(),
            c_z: c(),
            c_h: c(),
        }
    }

    pub fn context_dim(&self) -> usize {
        self.c_r.cols()
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let (h, c) = (self.base.hidden_dim(), self.context_dim());
        if [&self.c_r, &self.c_z, &self.c_h].iter().all(|m| m.shape() == [h, c]) {
            Ok(())
        } else {
            Err(Error::contract("context matrices must be hidden × context_dim"))
        }
    }
}

impl<T: Scalar> AttentionParams<Tensor<T>> {
    pub fn init<R: Rng>(query_dim: usize, key_dim: usize, score_hidden: usize, init: &mut Init<'_, R>) -> Self {
        let fan_in = query_dim + key_dim;
        let w = init.matrix::<T>(score_hidden, fan_in);
        let (w_query, w_key) = split_columns(&w, query_dim);
        Self {
            w_query,
            w_key,
            u: init.vector(score_hidden, score_hidden),
        }
    }

    pub fn zeros(query_dim: usize, key_dim: usize, score_hidden: usize) -> Self {
        Self {
            w_query: Tensor::zeros(&[score_hidden, query_dim]),
            w_key: Tensor::zeros(&[score_hidden, key_dim]),
            u: Tensor::zeros(&[score_hidden]),
        }
    }

    /// Rebuilds from the full `score_hidden × (query_dim + key_dim)` matrix.
    pub fn from_score_matrix(w_score: &Tensor<T>, query_dim: usize, u: Tensor<T>) -> Result<Self> {
        if w_score.shape().len() != 2 || query_dim == 0 || query_dim >= w_score.cols() {
            return Err(Error::contract("score matrix must have query and key column blocks"));
        }
        if u.shape() != [w_score.rows()] {
            return Err(Error::contract("score vector length must equal score matrix rows"));
        }
        let (w_query, w_key) = split_columns(w_score, query_dim);
        Ok(Self { w_query, w_key, u })
    }

    /// The full score matrix `[w_query | w_key]`.
    pub fn w_score(&self) -> Tensor<T> {
        let (rows, qc, kc) = (self.w_query.rows(), self.w_query.cols(), self.w_key.cols());
        let mut data = Vec::with_capacity(rows * (qc + kc));
        for r in 0..rows {
            data.extend_from_slice(&self.w_query.data()[r * qc..(r + 1) * qc]);
            data.extend_from_slice(&self.w_key.data()[r * kc..(r + 1) * kc]);
        }
        Tensor::matrix(rows, qc + kc, data).expect("consistent blocks")
    }

    pub fn query_dim(&self) -> usize {
        self.w_query.cols()
    }

    pub fn key_dim(&self) -> usize {
        self.w_key.cols()
    }
}

fn split_columns<T: Scalar>(w: &Tensor<T>, left: usize) -> (Tensor<T>, Tensor<T>) {
    let (rows, cols) = (w.rows(), w.cols());
    let mut a = Vec::with_capacity(rows * left);
    let mut b = Vec::with_capacity(rows * (cols - left));
    for r in 0..rows {
        let row = &w.data()[r * cols..(r + 1) * cols];
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    (
        Tensor::matrix(rows, left, a).expect("left block"),
        Tensor::matrix(rows, cols - left, b).expect("right block"),
    )
}

/// `σ`/`tanh` argument: `Σ matrix·input + bias`.
fn affine<T: Scalar>(tape: &mut Tape<T>, terms: &[(Var, Var)], bias: Var) -> Result<Var> {
    let mut acc = bias;
    for &(w, x) in terms {
        let wx = tape.matmul(w, x)?;
        acc = tape.add(acc, wx)?;
    }
    Ok(acc)
}

fn check_vector<T: Scalar>(tape: &Tape<T>, v: Var, len: usize, what: &str) -> Result<()> {
    let shape = tape.value(v).shape();
    if shape != [len] {
        return Err(Error::contract(format!("{what} must have shape [{len}], got {shape:?}")));
    }
    Ok(())
}

/// One GRU update:
/// `r = σ(W_r x + U_r h + b_r)`, `z = σ(W_z x + U_z h + b_z)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_step<T: Scalar>(tape: &mut Tape<T>, p: &GruParams<Var>, x: Var, h_prev: Var) -> Result<Var> {
    gated_update(tape, p, Some(x), h_prev, None)
}

/// GRU update with a context term `C_g · context` added inside every gate;
/// with `x = None` the input terms are dropped and only the biases remain.
pub fn context_gru_step<T: Scalar>(
    tape: &mut Tape<T>,
    p: &ContextGruParams<Var>,
    x: Option<Var>,
    h_prev: Var,
    context: Var,
) -> Result<Var> {
    gated_update(tape, &p.base, x, h_prev, Some((context, [p.c_r, p.c_z, p.c_h])))
}

fn gated_update<T: Scalar>(
    tape: &mut Tape<T>,
    p: &GruParams<Var>,
    x: Option<Var>,
    h_prev: Var,
    context: Option<(Var, [Var; 3])>,
) -> Result<Var> {
    let hidden = tape.value(p.u_r).rows();
    check_vector(tape, h_prev, hidden, "previous hidden state")?;
    if let Some(x) = x {
        check_vector(tape, x, tape.value(p.w_r).cols(), "GRU input")?;
    }
    if let Some((c, [c_r, _, _])) = context {
        check_vector(tape, c, tape.value(c_r).cols(), "context")?;
    }

    let gate = |tape: &mut Tape<T>, w: Var, u: Var, b: Var, recurrent: Var, ci: usize| {
        let mut terms = Vec::with_capacity(3);
        if let Some(x) = x {
            terms.push((w, x));
        }
        terms.push((u, recurrent));
        if let Some((c, cm)) = context {
            terms.push((cm[ci], c));
        }
        affine(tape, &terms, b)
    };

    let r_pre = gate(tape, p.w_r, p.u_r, p.b_r, h_prev, 0)?;
    let r = tape.sigmoid(r_pre)?;
    let z_pre = gate(tape, p.w_z, p.u_z, p.b_z, h_prev, 1)?;
    let z = tape.sigmoid(z_pre)?;
    let reset_h = tape.mul(r, h_prev)?;
    let cand_pre = gate(tape, p.w_h, p.u_h, p.b_h, reset_h, 2)?;
    let cand = tape.tanh(cand_pre)?;
    // (1 − z) ⊙ h + z ⊙ h̃  ==  h + z ⊙ (h̃ − h)
    let delta = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, delta)?;
    tape.add(h_prev, step)
}

/// Zero initial state of the given width.
pub fn zero_state<T: Scalar>(tape: &mut Tape<T>, width: usize) -> Var {
    tape.constant(Tensor::zeros(&[width]))
}

/// Runs a forward GRU over `series` and a backward GRU over its reverse,
/// both from zero states, and returns `[h→_t ; h←_t]` for every position.
pub fn bidirectional_encode<T: Scalar>(
    tape: &mut Tape<T>,
    fwd: &GruParams<Var>,
    bwd: &GruParams<Var>,
    series: &[Var],
) -> Result<Vec<Var>> {
    if series.is_empty() {
        return Err(Error::contract("cannot encode an empty series"));
    }
    let (hf, hb) = (tape.value(fwd.u_r).rows(), tape.value(bwd.u_r).rows());

    let mut forward = Vec::with_capacity(series.len());
    let mut h = zero_state(tape, hf);
    for &x in series {
        h = gru_step(tape, fwd, x, h)?;
        forward.push(h);
    }
    let mut backward = vec![h; series.len()];
    let mut h = zero_state(tape, hb);
    for (t, &x) in series.iter().enumerate().rev() {
        h = gru_step(tape, bwd, x, h)?;
        backward[t] = h;
    }
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}

/// Keys stacked into a matrix together with their score projections, reused
/// across every query that attends over the same set.
#[derive(Clone, Copy, Debug)]
pub struct PreparedKeys {
    /// `[n, key_dim]`
    pub stacked: Var,
    /// `[n, score_hidden]`, row `j` is `w_key · key_j`.
    pub projected: Var,
    pub count: usize,
}

pub fn prepare_keys<T: Scalar>(tape: &mut Tape<T>, p: &AttentionParams<Var>, keys: &[Var]) -> Result<PreparedKeys> {
    if keys.is_empty() {
        return Err(Error::contract("attention needs at least one key"));
    }
    let stacked = tape.stack(keys)?;
    let projected = tape.matmul_nt(stacked, p.w_key)?;
    Ok(PreparedKeys {
        stacked,
        projected,
        count: keys.len(),
    })
}

/// Attention coefficients of `query` over prepared keys and the resulting
/// context vector `Σ_j coeff_j · key_j`.
pub fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    p: &AttentionParams<Var>,
    keys: &PreparedKeys,
    query: Var,
) -> Result<(Var, Var)> {
    let q = tape.matmul(p.w_query, query)?;
    let pre = tape.add_row(keys.projected, q)?;
    let act = tape.tanh(pre)?;
    let scores = tape.matmul(act, p.u)?;
    let coeffs = tape.softmax(scores)?;
    let context = tape.matmul_tn(keys.stacked, coeffs)?;
    Ok((coeffs, context))
}

/// `coeff_j = exp(tanh(W[query; key_j])ᵀ u) / Σ_k exp(tanh(W[query; key_k])ᵀ u)`.
pub fn attention_weights<T: Scalar>(
    tape: &mut Tape<T>,
    p: &AttentionParams<Var>,
    query: Var,
    keys: &[Var],
) -> Result<Var> {
    let prepared = prepare_keys(tape, p, keys)?;
    attend(tape, p, &prepared, query).map(|(c, _)| c)
}

/// Weighted sum `Σ_j coefficients_j · keys_j`.
pub fn context_vector<T: Scalar>(tape: &mut Tape<T>, coefficients: Var, keys: &[Var]) -> Result<Var> {
    let n = tape.value(coefficients).len();
    if n != keys.len() {
        return Err(Error::contract(format!(
            "{n} coefficients for {} keys",
            keys.len()
        )));
    }
    let stacked = tape.stack(keys)?;
    tape.matmul_tn(stacked, coefficients)
}

/// Binds a parameter bundle onto a tape as differentiable leaves.
pub fn bind<T, B>(tape: &mut Tape<T>, params: &B) -> B::Rebind<Var>
where
    T: Scalar,
    B: crate::params::ParamTree<Leaf = Tensor<T>>,
{
    params.map(&mut |t| tape.leaf(t.clone()))
}
