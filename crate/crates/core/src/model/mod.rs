//! Compact pre-norm encoder-decoder transformer with hand-written backward
//! passes, plus the LM, similarity and order heads.
//!
//! Decoder states are indexed in the shifted frame: the decoder reads
//! `[PAD, y_0, ..., y_{L-2}]` and row `t` of the states predicts `y_t`, so
//! row `t` has consumed exactly `y_{<t}`.

mod checkpoint;
mod heads;
mod layers;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, OptimizerState};
pub use heads::{lm_distribution, order_score, similarity_score};
pub use params::{ParamLayout, TensorId, TensorSpec};

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{AugmentedSequence, TokenId, PAD};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Salt};
use layers::{attend, attend_backward, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward};
use layers::{AttnCache, NormCache};

pub(crate) use layers::{log_softmax, sigmoid, softmax_in_place};

/// Token fed to the decoder before `<bos>`.
pub const DECODER_START: TokenId = PAD;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 4,
            d_ff: 128,
            vocab_size: 0,
            max_len: 128,
            dropout_rate: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.vocab_size < 7 {
            return bad(format!("vocab_size {} < 7", self.vocab_size));
        }
        if self.max_len < 5 {
            return bad(format!("max_len {} < 5", self.max_len));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: TensorId,
    b: TensorId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: TensorId,
    b: TensorId,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
}

#[derive(Debug, Clone, Copy)]
struct Ffn {
    up: Lin,
    down: Lin,
}

#[derive(Debug, Clone, Copy)]
struct EncBlock {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
struct DecBlock {
    ln1: Norm,
    self_attn: Attn,
    ln2: Norm,
    cross: Attn,
    ln3: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct ModelIds {
    tok_emb: TensorId,
    enc_pos: TensorId,
    dec_pos: TensorId,
    enc: Vec<EncBlock>,
    enc_ln: Norm,
    dec: Vec<DecBlock>,
    dec_ln: Norm,
    lm_w: TensorId,
    lm_b: TensorId,
    sim_w: TensorId,
    ord_w: TensorId,
}

fn build_layout(c: &ModelConfig) -> (ParamLayout, ModelIds) {
    let mut l = ParamLayout::default();
    let d = c.d_model;
    let lin = |l: &mut ParamLayout, name: &str, i: usize, o: usize| Lin {
        w: l.add(format!("{name}.w"), i, o),
        b: l.add(format!("{name}.b"), 1, o),
    };
    let norm = |l: &mut ParamLayout, name: &str| Norm {
        g: l.add(format!("{name}.g"), 1, d),
        b: l.add(format!("{name}.b"), 1, d),
    };
    let attn = |l: &mut ParamLayout, name: &str| Attn {
        q: lin(l, &format!("{name}.q"), d, d),
        k: lin(l, &format!("{name}.k"), d, d),
        v: lin(l, &format!("{name}.v"), d, d),
        o: lin(l, &format!("{name}.o"), d, d),
    };
    let ffn = |l: &mut ParamLayout, name: &str| Ffn {
        up: lin(l, &format!("{name}.up"), d, c.d_ff),
        down: lin(l, &format!("{name}.down"), c.d_ff, d),
    };
    let tok_emb = l.add("embed.tokens", c.vocab_size, d);
    let enc_pos = l.add("encoder.positions", c.max_len, d);
    let dec_pos = l.add("decoder.positions", c.max_len, d);
    let enc = (0..c.n_layers_enc)
        .map(|i| {
            let p = format!("encoder.{i}");
            EncBlock {
                ln1: norm(&mut l, &format!("{p}.ln1")),
                attn: attn(&mut l, &format!("{p}.attn")),
                ln2: norm(&mut l, &format!("{p}.ln2")),
                ffn: ffn(&mut l, &format!("{p}.ffn")),
            }
        })
        .collect();
    let enc_ln = norm(&mut l, "encoder.ln");
    let dec = (0..c.n_layers_dec)
        .map(|i| {
            let p = format!("decoder.{i}");
            DecBlock {
                ln1: norm(&mut l, &format!("{p}.ln1")),
                self_attn: attn(&mut l, &format!("{p}.self_attn")),
                ln2: norm(&mut l, &format!("{p}.ln2")),
                cross: attn(&mut l, &format!("{p}.cross_attn")),
                ln3: norm(&mut l, &format!("{p}.ln3")),
                ffn: ffn(&mut l, &format!("{p}.ffn")),
            }
        })
        .collect();
    let dec_ln = norm(&mut l, "decoder.ln");
    let lm_w = l.add("lm_head.w", d, c.vocab_size);
    let lm_b = l.add("lm_head.b", 1, c.vocab_size);
    let sim_w = l.add("similarity.w", d, d);
    let ord_w = l.add("order.w", d, d);
    let ids = ModelIds {
        tok_emb,
        enc_pos,
        dec_pos,
        enc,
        enc_ln,
        dec,
        dec_ln,
        lm_w,
        lm_b,
        sim_w,
        ord_w,
    };
    (l, ids)
}

/// Dropout mask for one sublayer output, or `None` when dropout is off.
fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < rate { 0.0 } else { keep }))
}

#[derive(Debug, Clone)]
struct AttnLayerCache {
    xq: Array2<f64>,
    inner: AttnCache,
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct FfnCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct EncBlockCache {
    n1: NormCache,
    attn: AttnLayerCache,
    n2: NormCache,
    ffn: FfnCache,
}

#[derive(Debug, Clone)]
struct DecBlockCache {
    n1: NormCache,
    self_attn: AttnLayerCache,
    cross: Option<(NormCache, AttnLayerCache)>,
    n3: NormCache,
    ffn: FfnCache,
}

/// Encoder forward state; `memory` is the final normalized output.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    ids: Vec<TokenId>,
    blocks: Vec<EncBlockCache>,
    norm: Option<NormCache>,
    pub memory: Array2<f64>,
}

/// Final-layer decoder states `H` (row `t` predicts target token `t`).
#[derive(Debug, Clone)]
pub struct DecoderStates {
    inputs: Vec<TokenId>,
    blocks: Vec<DecBlockCache>,
    norm: NormCache,
    pub h: Array2<f64>,
}

impl DecoderStates {
    pub fn rows(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub encoder: EncoderPass,
    pub decoder: DecoderStates,
}

/// `[DECODER_START, y_0, ..., y_{L-2}]`.
pub fn shift_right(target: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(target.len());
    if !target.is_empty() {
        v.push(DECODER_START);
        v.extend_from_slice(&target[..target.len() - 1]);
    }
    v
}

/// Sentence-level (`H^s`) and discourse-level (`H^d`) representations.
#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    pub sentence: Array2<f64>,
    pub discourse: Array2<f64>,
}

/// Rows of `H` whose next-token targets are the `<sen>` / `<dis>` tokens.
pub fn extract_reps(h: &ArrayView2<f64>, aug: &AugmentedSequence) -> Result<Representations> {
    let gather = |positions: &[usize]| -> Result<Array2<f64>> {
        let mut out = Array2::zeros((positions.len(), h.ncols()));
        for (k, &p) in positions.iter().enumerate() {
            if p >= h.nrows() {
                return Err(Error::PositionOutOfRange { pos: p, rows: h.nrows() });
            }
            out.row_mut(k).assign(&h.row(p));
        }
        Ok(out)
    };
    Ok(Representations {
        sentence: gather(&aug.sen_positions)?,
        discourse: gather(&aug.dis_positions)?,
    })
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: ParamLayout,
    ids: ModelIds,
    params: Vec<f64>,
}

impl Model {
    /// Fresh model with N(0, 0.02) weights, unit norm gains and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, ids) = build_layout(&config);
        let mut params = vec![0.0; layout.total];
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for spec in &layout.specs {
            let mut rng = rng_for(seed, &[Salt::Str("init"), Salt::Str(&spec.name)]);
            let slot = &mut params[spec.range()];
            if spec.name.ends_with(".g") {
                slot.fill(1.0);
            } else if spec.name.ends_with(".b") {
                slot.fill(0.0);
            } else {
                slot.iter_mut().for_each(|p| *p = normal.sample(&mut rng));
            }
        }
        Ok(Model {
            config,
            layout,
            ids,
            params,
        })
    }

    pub fn from_parts(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, ids) = build_layout(&config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Model {
            config,
            layout,
            ids,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.layout.specs.iter().find(|s| s.name == name)
    }

    fn mat(&self, id: TensorId) -> ArrayView2<'_, f64> {
        self.layout.mat(&self.params, id)
    }

    fn vector(&self, id: TensorId) -> ndarray::ArrayView1<'_, f64> {
        self.layout.vector(&self.params, id)
    }

    fn add_mat(&self, grads: &mut [f64], id: TensorId, g: &Array2<f64>) {
        let mut view = self.layout.mat_mut(grads, id);
        view += g;
    }

    fn add_vec(&self, grads: &mut [f64], id: TensorId, g: &Array1<f64>) {
        let mut view = self.layout.vector_mut(grads, id);
        view += g;
    }

    fn lin(&self, l: Lin, x: &ArrayView2<f64>) -> Array2<f64> {
        linear(x, &self.mat(l.w), &self.vector(l.b))
    }

    fn lin_back(&self, grads: &mut [f64], l: Lin, x: &ArrayView2<f64>, dy: &ArrayView2<f64>) -> Array2<f64> {
        let (dx, dw, db) = linear_backward(x, &self.mat(l.w), dy);
        self.add_mat(grads, l.w, &dw);
        self.add_vec(grads, l.b, &db);
        dx
    }

    fn norm(&self, n: Norm, x: &ArrayView2<f64>) -> (Array2<f64>, NormCache) {
        layer_norm(x, &self.vector(n.g), &self.vector(n.b))
    }

    fn norm_back(&self, grads: &mut [f64], n: Norm, cache: &NormCache, dy: &ArrayView2<f64>) -> Array2<f64> {
        let (dx, dg, db) = layer_norm_backward(cache, &self.vector(n.g), dy);
        self.add_vec(grads, n.g, &dg);
        self.add_vec(grads, n.b, &db);
        dx
    }

    fn embed(&self, ids: &[TokenId], pos: TensorId) -> Result<Array2<f64>> {
        let emb = self.mat(self.ids.tok_emb);
        let pe = self.mat(pos);
        let mut x = Array2::zeros((ids.len(), self.config.d_model));
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.config.vocab_size {
                return Err(Error::Config(format!("token id {id} outside vocabulary")));
            }
            let mut row = x.row_mut(t);
            row.assign(&emb.row(id));
            row += &pe.row(t);
        }
        Ok(x)
    }

    fn embed_back(&self, grads: &mut [f64], ids: &[TokenId], pos: TensorId, dx: &Array2<f64>) {
        {
            let mut de = self.layout.mat_mut(grads, self.ids.tok_emb);
            for (t, &id) in ids.iter().enumerate() {
                let mut row = de.row_mut(id as usize);
                row += &dx.row(t);
            }
        }
        let mut dp = self.layout.mat_mut(grads, pos);
        for t in 0..ids.len() {
            let mut row = dp.row_mut(t);
            row += &dx.row(t);
        }
    }

    fn attention(
        &self,
        a: Attn,
        xq: Array2<f64>,
        xkv: Option<&ArrayView2<f64>>,
        causal: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, AttnLayerCache) {
        let q = self.lin(a.q, &xq.view());
        let (k, v) = match xkv {
            Some(m) => (self.lin(a.k, m), self.lin(a.v, m)),
            None => (self.lin(a.k, &xq.view()), self.lin(a.v, &xq.view())),
        };
        let inner = attend(q, k, v, self.config.n_heads, causal);
        let mut out = self.lin(a.o, &inner.mixed.view());
        let mask = dropout_mask(out.nrows(), out.ncols(), self.config.dropout_rate, rng);
        if let Some(m) = &mask {
            out *= m;
        }
        (out, AttnLayerCache { xq, inner, mask })
    }

    /// Returns `(d xq, d xkv)`; for self-attention `d xkv` is already folded in.
    fn attention_back(
        &self,
        grads: &mut [f64],
        a: Attn,
        cache: &AttnLayerCache,
        xkv: Option<&ArrayView2<f64>>,
        dout: &ArrayView2<f64>,
    ) -> (Array2<f64>, Option<Array2<f64>>) {
        let dout = match &cache.mask {
            Some(m) => dout * m,
            None => dout.to_owned(),
        };
        let dmixed = self.lin_back(grads, a.o, &cache.inner.mixed.view(), &dout.view());
        let (dq, dk, dv) = attend_backward(&cache.inner, &dmixed.view(), self.config.n_heads);
        let mut dxq = self.lin_back(grads, a.q, &cache.xq.view(), &dq.view());
        match xkv {
            Some(m) => {
                let mut dm = self.lin_back(grads, a.k, m, &dk.view());
                dm += &self.lin_back(grads, a.v, m, &dv.view());
                (dxq, Some(dm))
            }
            None => {
                dxq += &self.lin_back(grads, a.k, &cache.xq.view(), &dk.view());
                dxq += &self.lin_back(grads, a.v, &cache.xq.view(), &dv.view());
                (dxq, None)
            }
        }
    }

    fn feed_forward(&self, f: Ffn, x: Array2<f64>, rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, FfnCache) {
        let pre = self.lin(f.up, &x.view());
        let act = pre.mapv(gelu);
        let mut out = self.lin(f.down, &act.view());
        let mask = dropout_mask(out.nrows(), out.ncols(), self.config.dropout_rate, rng);
        if let Some(m) = &mask {
            out *= m;
        }
        (out, FfnCache { x, pre, act, mask })
    }

    fn feed_forward_back(&self, grads: &mut [f64], f: Ffn, cache: &FfnCache, dout: &ArrayView2<f64>) -> Array2<f64> {
        let dout = match &cache.mask {
            Some(m) => dout * m,
            None => dout.to_owned(),
        };
        let mut dact = self.lin_back(grads, f.down, &cache.act.view(), &dout.view());
        dact.zip_mut_with(&cache.pre, |g, &p| *g *= gelu_grad(p));
        self.lin_back(grads, f.up, &cache.x.view(), &dact.view())
    }

    /// Bidirectional encoder over the input; an empty input gives an empty
    /// memory.
    pub fn encode(&self, input: &[TokenId], mut rng: Option<&mut ChaCha8Rng>) -> Result<EncoderPass> {
        if input.len() > self.config.max_len {
            return Err(Error::TooLong {
                len: input.len(),
                max_len: self.config.max_len,
            });
        }
        if input.is_empty() {
            return Ok(EncoderPass {
                ids: vec![],
                blocks: vec![],
                norm: None,
                memory: Array2::zeros((0, self.config.d_model)),
            });
        }
        let mut x = self.embed(input, self.ids.enc_pos)?;
        let mut blocks = Vec::with_capacity(self.ids.enc.len());
        for b in &self.ids.enc {
            let (n1, c1) = self.norm(b.ln1, &x.view());
            let (a, attn) = self.attention(b.attn, n1, None, false, rng.as_deref_mut());
            x += &a;
            let (n2, c2) = self.norm(b.ln2, &x.view());
            let (f, ffn) = self.feed_forward(b.ffn, n2, rng.as_deref_mut());
            x += &f;
            blocks.push(EncBlockCache { n1: c1, attn, n2: c2, ffn });
        }
        let (memory, norm) = self.norm(self.ids.enc_ln, &x.view());
        Ok(EncoderPass {
            ids: input.to_vec(),
            blocks,
            norm: Some(norm),
            memory,
        })
    }

    /// Causal decoder over already right-shifted inputs.
    pub fn decode_states(
        &self,
        shifted: &[TokenId],
        memory: &ArrayView2<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<DecoderStates> {
        if shifted.len() > self.config.max_len {
            return Err(Error::TooLong {
                len: shifted.len(),
                max_len: self.config.max_len,
            });
        }
        let mut x = self.embed(shifted, self.ids.dec_pos)?;
        let mut blocks = Vec::with_capacity(self.ids.dec.len());
        for b in &self.ids.dec {
            let (n1, c1) = self.norm(b.ln1, &x.view());
            let (a, self_attn) = self.attention(b.self_attn, n1, None, true, rng.as_deref_mut());
            x += &a;
            let cross = if memory.nrows() > 0 {
                let (n2, c2) = self.norm(b.ln2, &x.view());
                let (a, cache) = self.attention(b.cross, n2, Some(memory), false, rng.as_deref_mut());
                x += &a;
                Some((c2, cache))
            } else {
                None
            };
            let (n3, c3) = self.norm(b.ln3, &x.view());
            let (f, ffn) = self.feed_forward(b.ffn, n3, rng.as_deref_mut());
            x += &f;
            blocks.push(DecBlockCache {
                n1: c1,
                self_attn,
                cross,
                n3: c3,
                ffn,
            });
        }
        let (h, norm) = self.norm(self.ids.dec_ln, &x.view());
        Ok(DecoderStates {
            inputs: shifted.to_vec(),
            blocks,
            norm,
            h,
        })
    }

    /// Teacher-forced pass over an unshifted target (e.g. an augmented
    /// sequence's ids).
    pub fn forward(&self, input: &[TokenId], target: &[TokenId], mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardPass> {
        let encoder = self.encode(input, rng.as_deref_mut())?;
        let decoder = self.decode_states(&shift_right(target), &encoder.memory.view(), rng)?;
        Ok(ForwardPass { encoder, decoder })
    }

    /// Accumulates parameter gradients given `dL/dH`.
    pub fn backward(&self, pass: &ForwardPass, dh: &ArrayView2<f64>, grads: &mut [f64]) {
        let dec = &pass.decoder;
        let memory = pass.encoder.memory.view();
        let mut dmem = Array2::<f64>::zeros(memory.dim());
        let mut dx = self.norm_back(grads, self.ids.dec_ln, &dec.norm, dh);
        for (b, c) in self.ids.dec.iter().zip(&dec.blocks).rev() {
            let dn3 = self.feed_forward_back(grads, b.ffn, &c.ffn, &dx.view());
            dx += &self.norm_back(grads, b.ln3, &c.n3, &dn3.view());
            if let Some((c2, cross)) = &c.cross {
                let (dn2, dm) = self.attention_back(grads, b.cross, cross, Some(&memory), &dx.view());
                dmem += &dm.expect("cross attention memory gradient");
                dx += &self.norm_back(grads, b.ln2, c2, &dn2.view());
            }
            let (dn1, _) = self.attention_back(grads, b.self_attn, &c.self_attn, None, &dx.view());
            dx += &self.norm_back(grads, b.ln1, &c.n1, &dn1.view());
        }
        self.embed_back(grads, &dec.inputs, self.ids.dec_pos, &dx);

        let enc = &pass.encoder;
        let Some(norm) = &enc.norm else { return };
        let mut dx = self.norm_back(grads, self.ids.enc_ln, norm, &dmem.view());
        for (b, c) in self.ids.enc.iter().zip(&enc.blocks).rev() {
            let dn2 = self.feed_forward_back(grads, b.ffn, &c.ffn, &dx.view());
            dx += &self.norm_back(grads, b.ln2, &c.n2, &dn2.view());
            let (dn1, _) = self.attention_back(grads, b.attn, &c.attn, None, &dx.view());
            dx += &self.norm_back(grads, b.ln1, &c.n1, &dn1.view());
        }
        self.embed_back(grads, &enc.ids, self.ids.enc_pos, &dx);
    }

    /// `H W + b` for every row of `h`.
    pub fn lm_logits(&self, h: &ArrayView2<f64>) -> Array2<f64> {
        linear(h, &self.mat(self.ids.lm_w), &self.vector(self.ids.lm_b))
    }

    pub fn lm_backward(&self, h: &ArrayView2<f64>, dlogits: &ArrayView2<f64>, grads: &mut [f64]) -> Array2<f64> {
        self.lin_back(
            grads,
            Lin {
                w: self.ids.lm_w,
                b: self.ids.lm_b,
            },
            h,
            dlogits,
        )
    }

    /// Next-token distribution for one decoder state.
    pub fn next_token_distribution(&self, h_row: ndarray::ArrayView1<f64>) -> Vec<f64> {
        lm_distribution(h_row, &self.mat(self.ids.lm_w), &self.vector(self.ids.lm_b))
    }

    pub fn similarity_weights(&self) -> ArrayView2<'_, f64> {
        self.mat(self.ids.sim_w)
    }

    pub fn order_weights(&self) -> ArrayView2<'_, f64> {
        self.mat(self.ids.ord_w)
    }

    /// `P` with `p_ij = sigmoid(s_ij + s_ji)`, `S = H^s W^s H^sᵀ`.
    pub fn similarity_matrix(&self, hs: &ArrayView2<f64>) -> Array2<f64> {
        heads::symmetric_scores(hs, &self.similarity_weights())
    }

    /// Backpropagates `dL/dP` through the similarity head; returns `dL/dH^s`.
    pub fn similarity_backward(
        &self,
        hs: &ArrayView2<f64>,
        p: &ArrayView2<f64>,
        dp: &ArrayView2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        let dz = dp * &p.mapv(|v| v * (1.0 - v));
        let ds = &dz + &dz.t();
        self.bilinear_back(self.ids.sim_w, hs, &ds, grads)
    }

    /// `Q` with `q_ij = sigmoid(H^d_i W^d H^d_j)` for all ordered pairs.
    pub fn order_matrix(&self, hd: &ArrayView2<f64>) -> Array2<f64> {
        heads::pair_scores(hd, &self.order_weights())
    }

    /// Backpropagates `dL/dZ` (pre-sigmoid order logits); returns `dL/dH^d`.
    pub fn order_backward(&self, hd: &ArrayView2<f64>, dz: &ArrayView2<f64>, grads: &mut [f64]) -> Array2<f64> {
        self.bilinear_back(self.ids.ord_w, hd, &dz.to_owned(), grads)
    }

    /// For `Z = H W Hᵀ`: `dW += Hᵀ dZ H`, returns `dZ H Wᵀ + dZᵀ H W`.
    fn bilinear_back(&self, w: TensorId, h: &ArrayView2<f64>, dz: &Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        let wm = self.mat(w);
        let dw = h.t().dot(dz).dot(h);
        let dh = dz.dot(h).dot(&wm.t()) + dz.t().dot(h).dot(&wm);
        self.add_mat(grads, w, &dw);
        dh
    }
}

/// Sum of gradient rows into `H`-shaped buffer at the given positions.
pub(crate) fn scatter_rows(dh: &mut Array2<f64>, positions: &[usize], rows: &Array2<f64>) {
    for (k, &p) in positions.iter().enumerate() {
        let mut r = dh.row_mut(p);
        r += &rows.row(k);
    }
}
