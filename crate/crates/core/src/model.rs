//! The four-stage network: per-series bidirectional encoding, dual-purpose
//! decoding with temporal attention, the transformation layer, and the
//! inter-series attention decoder.
//!
//! Tape-level functions take parameters bound as [`Var`] handles so the
//! same code serves inference and training. [`Seq2Graph`] wraps concrete
//! weights and returns plain-value traces.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::cells::{
    attend, bidirectional_encode, context_gru_step, prepare_keys, zero_state, AttentionParams,
    ContextGruParams, GruParams,
};
use crate::error::{Error, Result};
use crate::params::{param_tree, Init, ParamTree};
use crate::scalar::Scalar;
use crate::seed::rng_for;

/// Architecture hyperparameters.
///
/// Optional widths fall back to: `v_dim = dp_hidden`, `feat_dim = dec_hidden`,
/// temporal score width = key width (`2·enc_hidden`), inter-series score
/// width = `feat_dim`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of series.
    pub d: usize,
    /// Window length.
    pub m: usize,
    pub enc_hidden: usize,
    pub dp_hidden: usize,
    pub dec_hidden: usize,
    #[serde(default)]
    pub v_dim: Option<usize>,
    #[serde(default)]
    pub feat_dim: Option<usize>,
    #[serde(default)]
    pub temporal_score_hidden: Option<usize>,
    #[serde(default)]
    pub inter_score_hidden: Option<usize>,
    #[serde(default = "default_share")]
    pub share_temporal_attention: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_share() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 2,
            m: 8,
            enc_hidden: 32,
            dp_hidden: 32,
            dec_hidden: 32,
            v_dim: None,
            feat_dim: None,
            temporal_score_hidden: None,
            inter_score_hidden: None,
            share_temporal_attention: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Config with every width set to `width`.
    pub fn uniform(d: usize, m: usize, width: usize) -> Self {
        Self {
            d,
            m,
            enc_hidden: width,
            dp_hidden: width,
            dec_hidden: width,
            ..Self::default()
        }
    }

    pub fn v_width(&self) -> usize {
        self.v_dim.unwrap_or(self.dp_hidden)
    }

    pub fn feat_width(&self) -> usize {
        self.feat_dim.unwrap_or(self.dec_hidden)
    }

    /// Width of an encoder output `[h→; h←]`.
    pub fn key_width(&self) -> usize {
        2 * self.enc_hidden
    }

    pub fn temporal_score_width(&self) -> usize {
        self.temporal_score_hidden.unwrap_or(self.key_width())
    }

    pub fn inter_score_width(&self) -> usize {
        self.inter_score_hidden.unwrap_or(self.feat_width())
    }

    pub fn temporal_attention_count(&self) -> usize {
        if self.share_temporal_attention {
            1
        } else {
            self.d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("m", self.m),
            ("enc_hidden", self.enc_hidden),
            ("dp_hidden", self.dp_hidden),
            ("dec_hidden", self.dec_hidden),
            ("v_dim", self.v_width()),
            ("feat_dim", self.feat_width()),
            ("temporal_score_hidden", self.temporal_score_width()),
            ("inter_score_hidden", self.inter_score_width()),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

param_tree! {
    /// Everything owned by one series before the inter-series stage.
    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct SeriesBranch<P> {
        pub enc_fwd: GruParams<P> as tree,
        pub enc_bwd: GruParams<P> as tree,
        pub dual: ContextGruParams<P> as tree,
        /// `v_dim × v_dim`
        pub w_o: P,
        /// `v_dim × dp_hidden`
        pub u_o: P,
        /// `v_dim × key_width`
        pub c_o: P,
        pub b_o: P,
    }
}

param_tree! {
    /// Scalar output head of the inter-series decoder.
    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct Readout<P> {
        /// `1 × feat_dim`
        pub c_o: P,
        /// `1 × dec_hidden`
        pub u_o: P,
        pub b_o: P,
        /// `1 × 1`, feedback of the previous prediction (multi-step only).
        pub w_y: P,
    }
}

param_tree! {
    /// All learnable weights.
    ///
    /// `temporal_attention` holds one entry when shared across series and
    /// `d` entries otherwise. The decoder GRU's input matrices are only used
    /// by the multi-step decoder; next-step forward has no input token.
    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct ModelParams<P> {
        pub branches: Vec<SeriesBranch<P>> as tree,
        pub temporal_attention: Vec<AttentionParams<P>> as tree,
        /// `feat_dim × (m · v_dim)`, shared by all series.
        pub w_f: P,
        pub b_f: P,
        pub decoder: ContextGruParams<P> as tree,
        pub inter_attention: AttentionParams<P> as tree,
        pub readout: Readout<P> as tree,
    }
}

impl<T: Scalar> ModelParams<Tensor<T>> {
    /// Seeded uniform initialization from the config's `init` stream.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(cfg.seed, "init");
        let mut init = Init { rng: &mut rng };
        let (key, v, dp) = (cfg.key_width(), cfg.v_width(), cfg.dp_hidden);
        // Blocks of one affine map share the fan-in of its whole input.
        let out_fan = v + dp + key;
        let branches = (0..cfg.d)
            .map(|_| SeriesBranch {
                enc_fwd: GruParams::init(1, cfg.enc_hidden, &mut init),
                enc_bwd: GruParams::init(1, cfg.enc_hidden, &mut init),
                dual: ContextGruParams::init(v, dp, key, &mut init),
                w_o: init.block(v, v, out_fan),
                u_o: init.block(v, dp, out_fan),
                c_o: init.block(v, key, out_fan),
                b_o: init.vector(v, out_fan),
            })
            .collect();
        let temporal_attention = (0..cfg.temporal_attention_count())
            .map(|_| AttentionParams::init(dp, key, cfg.temporal_score_width(), &mut init))
            .collect();
        let (feat, dec) = (cfg.feat_width(), cfg.dec_hidden);
        Ok(Self {
            branches,
            temporal_attention,
            w_f: init.matrix(feat, cfg.m * v),
            b_f: init.vector(feat, cfg.m * v),
            decoder: ContextGruParams::init(1, dec, feat, &mut init),
            inter_attention: AttentionParams::init(dec, feat, cfg.inter_score_width(), &mut init),
            readout: Readout {
                c_o: init.block(1, feat, feat + dec + 1),
                u_o: init.block(1, dec, feat + dec + 1),
                b_o: init.vector(1, feat + dec + 1),
                w_y: init.block(1, 1, feat + dec + 1),
            },
        })
    }

    /// All-zero parameters of the right shapes.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self::init(cfg)?.map(&mut |t| Tensor::zeros(t.shape())))
    }

    /// Checks every tensor's shape against what `cfg` prescribes.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(cfg)?;
        if self.leaf_count() != expected.leaf_count() {
            return Err(Error::contract(format!(
                "parameter bundle has {} tensors, config needs {}",
                self.leaf_count(),
                expected.leaf_count()
            )));
        }
        for (i, (a, b)) in self.leaves().into_iter().zip(expected.leaves()).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::contract(format!(
                    "parameter tensor {i} has shape {:?}, config needs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Binds every tensor as a differentiable tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> ModelParams<Var> {
        self.map(&mut |t| tape.leaf(t.clone()))
    }

    /// Binds every tensor as a constant (inference only).
    pub fn bind_constant(&self, tape: &mut Tape<T>) -> ModelParams<Var> {
        self.map(&mut |t| tape.constant(t.clone()))
    }
}

/// Number of scalar weights a config implies.
pub fn parameter_count(cfg: &ModelConfig) -> Result<usize> {
    let p = ModelParams::<Tensor<f64>>::zeros(cfg)?;
    Ok(crate::params::element_count(&p))
}

/// Handles to every intermediate the attention analysis needs.
#[derive(Clone, Debug)]
pub struct TapeTrace {
    /// `alphas[d][t]`: coefficients over the m keys at decode step t.
    pub alphas: Vec<Vec<Var>>,
    /// `betas[i]`: coefficients over the D features for output i.
    pub betas: Vec<Var>,
    /// `[D]` predictions.
    pub y_hat: Var,
    pub v_sequences: Vec<Vec<Var>>,
}

fn tanh_affine<T: Scalar>(tape: &mut Tape<T>, terms: &[(Var, Var)], bias: Var) -> Result<Var> {
    let mut acc = bias;
    for &(w, x) in terms {
        let wx = tape.matmul(w, x)?;
        acc = tape.add(acc, wx)?;
    }
    tape.tanh(acc)
}

/// Temporal decoding of one series' encodings.
///
/// Returns the `m` outputs `v_t` and the `m` attention vectors `α_t`.
pub fn dual_purpose_decode<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &ModelParams<Var>,
    series_index: usize,
    encodings: &[Var],
) -> Result<(Vec<Var>, Vec<Var>)> {
    if encodings.len() != cfg.m {
        return Err(Error::contract(format!(
            "dual-purpose decoder expects {} encodings, got {}",
            cfg.m,
            encodings.len()
        )));
    }
    let branch = params
        .branches
        .get(series_index)
        .ok_or_else(|| Error::contract(format!("series index {series_index} out of range")))?;
    let att = &params.temporal_attention[if cfg.share_temporal_attention { 0 } else { series_index }];

    let keys = prepare_keys(tape, att, encodings)?;
    let mut s = zero_state(tape, cfg.dp_hidden);
    let mut v = zero_state(tape, cfg.v_width());
    let mut vs = Vec::with_capacity(cfg.m);
    let mut alphas = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let (alpha, c) = attend(tape, att, &keys, s)?;
        s = context_gru_step(tape, &branch.dual, Some(v), s, c)?;
        v = tanh_affine(tape, &[(branch.w_o, v), (branch.u_o, s), (branch.c_o, c)], branch.b_o)?;
        vs.push(v);
        alphas.push(alpha);
    }
    Ok((vs, alphas))
}

/// `tanh(W_f · [v_1; …; v_m] + b_f)`.
pub fn transform_features<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &ModelParams<Var>,
    v_sequence: &[Var],
) -> Result<Var> {
    if v_sequence.len() != cfg.m {
        return Err(Error::contract(format!(
            "transformation expects {} vectors, got {}",
            cfg.m,
            v_sequence.len()
        )));
    }
    let flat = tape.concat(v_sequence)?;
    tanh_affine(tape, &[(params.w_f, flat)], params.b_f)
}

/// Inter-series decoding: one step per output series, no input token.
///
/// Returns `ŷ` as a `[D]` node and the `D` attention vectors `β_i`.
pub fn decode_inter<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &ModelParams<Var>,
    features: &[Var],
) -> Result<(Var, Vec<Var>)> {
    if features.len() != cfg.d {
        return Err(Error::contract(format!(
            "decoder expects {} feature vectors, got {}",
            cfg.d,
            features.len()
        )));
    }
    let att = &params.inter_attention;
    let ro = &params.readout;
    let keys = prepare_keys(tape, att, features)?;
    let mut q = zero_state(tape, cfg.dec_hidden);
    let mut ys = Vec::with_capacity(cfg.d);
    let mut betas = Vec::with_capacity(cfg.d);
    for _ in 0..cfg.d {
        let (beta, c) = attend(tape, att, &keys, q)?;
        q = context_gru_step(tape, &params.decoder, None, q, c)?;
        ys.push(tanh_affine(tape, &[(ro.c_o, c), (ro.u_o, q)], ro.b_o)?);
        betas.push(beta);
    }
    Ok((tape.concat(&ys)?, betas))
}

struct SeriesStage {
    features: Vec<Var>,
    alphas: Vec<Vec<Var>>,
    v_sequences: Vec<Vec<Var>>,
}

fn check_window<T: Scalar>(cfg: &ModelConfig, window: &Tensor<T>) -> Result<()> {
    if window.shape() != [cfg.m, cfg.d] {
        return Err(Error::contract(format!(
            "window must have shape [{}, {}], got {:?}",
            cfg.m,
            cfg.d,
            window.shape()
        )));
    }
    let lo = T::lit(-0.01);
    let hi = T::lit(1.01);
    if let Some(bad) = window.data().iter().find(|&&x| !(x >= lo && x <= hi)) {
        log::warn!("window value {bad} lies outside the normalized range [0, 1]");
    }
    Ok(())
}

fn series_stage<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &ModelParams<Var>,
    window: &Tensor<T>,
) -> Result<SeriesStage> {
    check_window(cfg, window)?;
    let mut stage = SeriesStage {
        features: Vec::with_capacity(cfg.d),
        alphas: Vec::with_capacity(cfg.d),
        v_sequences: Vec::with_capacity(cfg.d),
    };
    for d in 0..cfg.d {
        let xs: Vec<Var> = (0..cfg.m)
            .map(|t| tape.constant(Tensor::vector(vec![window.at(t, d)])))
            .collect();
        let branch = &params.branches[d];
        let enc = bidirectional_encode(tape, &branch.enc_fwd, &branch.enc_bwd, &xs)?;
        let (vs, alphas) = dual_purpose_decode(tape, cfg, params, d, &enc)?;
        stage.features.push(transform_features(tape, cfg, params, &vs)?);
        stage.alphas.push(alphas);
        stage.v_sequences.push(vs);
    }
    Ok(stage)
}

/// Full next-step pass over one `[m, D]` window.
pub fn forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &ModelParams<Var>,
    window: &Tensor<T>,
) -> Result<TapeTrace> {
    let stage = series_stage(tape, cfg, params, window)?;
    let (y_hat, betas) = decode_inter(tape, cfg, params, &stage.features)?;
    Ok(TapeTrace {
        alphas: stage.alphas,
        betas,
        y_hat,
        v_sequences: stage.v_sequences,
    })
}

/// Multi-step decoding of one series: `q_i = GRU(y_{i−1}, q_{i−1}, c_i)` and
/// `y_i = tanh(W_y y_{i−1} + C_o c_i + U_o q_i + b_o)` with `y_0 = 0`.
///
/// Returns the `horizon` predictions (each `[1]`) and the `β_i`.
pub fn multi_step_tape<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &ModelParams<Var>,
    window: &Tensor<T>,
    target_series: usize,
    horizon: usize,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if target_series >= cfg.d {
        return Err(Error::contract(format!(
            "target series {target_series} out of range for {} series",
            cfg.d
        )));
    }
    if horizon == 0 {
        return Err(Error::contract("horizon must be at least 1"));
    }
    let stage = series_stage(tape, cfg, params, window)?;
    let att = &params.inter_attention;
    let ro = &params.readout;
    let keys = prepare_keys(tape, att, &stage.features)?;
    let mut q = zero_state(tape, cfg.dec_hidden);
    let mut y = zero_state(tape, 1);
    let mut ys = Vec::with_capacity(horizon);
    let mut betas = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (beta, c) = attend(tape, att, &keys, q)?;
        q = context_gru_step(tape, &params.decoder, Some(y), q, c)?;
        y = tanh_affine(tape, &[(ro.w_y, y), (ro.c_o, c), (ro.u_o, q)], ro.b_o)?;
        ys.push(y);
        betas.push(beta);
    }
    Ok((ys, betas))
}

/// Plain-value record of one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace<T> {
    /// `[d][t][j]`: series, decode step, key position (oldest first).
    pub alphas: Vec<Vec<Vec<T>>>,
    /// `[i][d]`: output series, input series.
    pub betas: Vec<Vec<T>>,
    pub y_hat: Vec<T>,
    /// `[d][t][k]`
    pub v_sequences: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn from_tape(tape: &Tape<T>, trace: &TapeTrace) -> Self {
        let vals = |v: &Var| tape.value(*v).data().to_vec();
        Self {
            alphas: trace.alphas.iter().map(|a| a.iter().map(vals).collect()).collect(),
            betas: trace.betas.iter().map(vals).collect(),
            y_hat: vals(&trace.y_hat),
            v_sequences: trace
                .v_sequences
                .iter()
                .map(|s| s.iter().map(vals).collect())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiStepTrace<T> {
    pub target_series: usize,
    pub y: Vec<T>,
    /// `[i][d]`: future step, input series.
    pub betas: Vec<Vec<T>>,
}

/// A configured network with concrete weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seq2Graph<T> {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor<T>>,
}

impl<T: Scalar> Seq2Graph<T> {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        crate::params::element_count(&self.params)
    }

    pub fn forward(&self, window: &Tensor<T>) -> Result<ForwardTrace<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind_constant(&mut tape);
        let trace = forward_tape(&mut tape, &self.config, &p, window)?;
        Ok(ForwardTrace::from_tape(&tape, &trace))
    }

    pub fn multi_step_forward(
        &self,
        window: &Tensor<T>,
        target_series: usize,
        horizon: usize,
    ) -> Result<MultiStepTrace<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind_constant(&mut tape);
        let (ys, betas) = multi_step_tape(&mut tape, &self.config, &p, window, target_series, horizon)?;
        Ok(MultiStepTrace {
            target_series,
            y: ys.iter().map(|v| tape.value(*v).item()).collect(),
            betas: betas.iter().map(|b| tape.value(*b).data().to_vec()).collect(),
        })
    }
}
