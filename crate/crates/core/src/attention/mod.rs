//! Toy-scale bidirectional cross-attention between a panorama token grid and
//! perspective token grids, with exact gradients.
//!
//! Features are stored row-major as `[frame][token][channel]`; a token grid
//! of `h × w` cells has token index `row * w + col`. Attention scores are
//! computed over flattened `(frame, token)` pairs: with
//! [`AttentionScope::Joint`] a query may attend to keys of every frame,
//! with [`AttentionScope::PerFrame`] only to keys of its own frame. In both
//! cases the per-frame correspondence mask decides which token pairs are
//! linked.

mod denoiser;

pub use self::denoiser::{generation_loss, ToyDenoiser};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::erp::{CorrespondenceMask, SphericalPosEncoding};
use crate::error::{Error, Result};

/// Token features over `frames` frames of an `h × w` token grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    frames: usize,
    grid: (usize, usize),
    channels: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(frames: usize, grid: (usize, usize), channels: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || grid.0 == 0 || grid.1 == 0 || channels == 0 {
            return Err(Error::arg("feature tensors need at least one frame, token and channel"));
        }
        if data.len() != frames * grid.0 * grid.1 * channels {
            return Err(Error::shape(format!(
                "{} values for {frames} frames of {}x{} tokens with {channels} channels",
                data.len(),
                grid.0,
                grid.1
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::arg(format!("feature value {v} is not finite")));
        }
        Ok(FeatureTensor {
            frames,
            grid,
            channels,
            data,
        })
    }

    pub fn zeros(frames: usize, grid: (usize, usize), channels: usize) -> Result<Self> {
        Self::new(frames, grid, channels, vec![0.0; frames * grid.0 * grid.1 * channels])
    }

    /// `f(frame, token, channel)`.
    pub fn from_fn(
        frames: usize,
        grid: (usize, usize),
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let tokens = grid.0 * grid.1;
        let mut data = Vec::with_capacity(frames * tokens * channels);
        for t in 0..frames {
            for k in 0..tokens {
                for c in 0..channels {
                    data.push(f(t, k, c));
                }
            }
        }
        Self::new(frames, grid, channels, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn tokens(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, frame: usize, token: usize, channel: usize) -> usize {
        (frame * self.tokens() + token) * self.channels + channel
    }

    pub fn get(&self, frame: usize, token: usize, channel: usize) -> f64 {
        self.data[self.index(frame, token, channel)]
    }

    pub fn token(&self, frame: usize, token: usize) -> &[f64] {
        let i = self.index(frame, token, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &FeatureTensor) -> bool {
        self.frames == other.frames && self.grid == other.grid && self.channels == other.channels
    }

    /// `(frames · tokens) × channels`.
    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.frames * self.tokens(), self.channels, &self.data)
    }

    fn with_matrix(&self, m: &DMatrix<f64>) -> FeatureTensor {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        FeatureTensor { data, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionScope {
    /// Every query attends over the keys of all frames.
    #[default]
    Joint,
    /// Queries attend only to keys of their own frame.
    PerFrame,
}

/// Structure of one cross-attention direction.
///
/// `mask` is `query tokens × key tokens` for a single frame and is
/// replicated across frames. Encodings, when present, are added to the
/// query and key features (not the values) before projection.
#[derive(Clone, Debug)]
pub struct CrossAttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub mask: CorrespondenceMask,
    pub query_encoding: Option<SphericalPosEncoding>,
    pub key_encoding: Option<SphericalPosEncoding>,
    pub scope: AttentionScope,
}

impl CrossAttentionConfig {
    pub fn new(heads: usize, head_dim: usize, mask: CorrespondenceMask) -> Self {
        CrossAttentionConfig {
            heads,
            head_dim,
            mask,
            query_encoding: None,
            key_encoding: None,
            scope: AttentionScope::Joint,
        }
    }

    pub fn channels(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Same structure with queries and keys swapped.
    pub fn reversed(&self) -> Self {
        CrossAttentionConfig {
            mask: self.mask.transposed(),
            query_encoding: self.key_encoding.clone(),
            key_encoding: self.query_encoding.clone(),
            ..self.clone()
        }
    }

    fn check(&self, query: &FeatureTensor, kv: &FeatureTensor, weights: &AttentionWeights) -> Result<()> {
        let c = self.channels();
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::arg("attention needs at least one head of positive width"));
        }
        if query.channels != c || kv.channels != c {
            return Err(Error::shape(format!(
                "{} heads x {} = {c} channels, features have {} and {}",
                self.heads, self.head_dim, query.channels, kv.channels
            )));
        }
        if query.frames != kv.frames {
            return Err(Error::shape(format!("{} query frames vs {} key frames", query.frames, kv.frames)));
        }
        if self.mask.rows() != query.tokens() || self.mask.cols() != kv.tokens() {
            return Err(Error::shape(format!(
                "mask is {}x{}, tokens are {} queries x {} keys",
                self.mask.rows(),
                self.mask.cols(),
                query.tokens(),
                kv.tokens()
            )));
        }
        for (enc, tokens, side) in [
            (&self.query_encoding, query.tokens(), "query"),
            (&self.key_encoding, kv.tokens(), "key"),
        ] {
            if let Some(e) = enc {
                if e.dim() != c || e.tokens() != tokens {
                    return Err(Error::shape(format!(
                        "{side} encoding is {}x{}, expected {tokens}x{c}",
                        e.tokens(),
                        e.dim()
                    )));
                }
            }
        }
        if weights.channels() != c {
            return Err(Error::shape(format!("weights are for {} channels, expected {c}", weights.channels())));
        }
        Ok(())
    }

    fn allowed(&self, q_tokens: usize, k_tokens: usize, i: usize, j: usize) -> bool {
        let (tq, p) = (i / q_tokens, i % q_tokens);
        let (tk, k) = (j / k_tokens, j % k_tokens);
        (self.scope == AttentionScope::Joint || tq == tk) && self.mask.get(p, k)
    }
}

/// Projection matrices, applied to row vectors (`x · W`).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
}

impl AttentionWeights {
    pub fn identity(channels: usize) -> Self {
        let i = DMatrix::identity(channels, channels);
        AttentionWeights {
            wq: i.clone(),
            wk: i.clone(),
            wv: i.clone(),
            wo: i,
        }
    }

    /// Independent normal entries with standard deviation `1/√channels`.
    pub fn random(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (channels as f64).sqrt()).expect("valid deviation");
        let mut draw = || DMatrix::from_fn(channels, channels, |_, _| normal.sample(&mut rng));
        AttentionWeights {
            wq: draw(),
            wk: draw(),
            wv: draw(),
            wo: draw(),
        }
    }

    /// Random input projections with a zero output projection, so the
    /// residual update starts at exactly zero.
    pub fn zero_output(channels: usize, seed: u64) -> Self {
        AttentionWeights {
            wo: DMatrix::zeros(channels, channels),
            ..Self::random(channels, seed)
        }
    }

    pub fn channels(&self) -> usize {
        self.wq.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.channels();
        AttentionWeights {
            wq: DMatrix::zeros(c, c),
            wk: DMatrix::zeros(c, c),
            wv: DMatrix::zeros(c, c),
            wo: DMatrix::zeros(c, c),
        }
    }

    pub fn matrices(&self) -> [&DMatrix<f64>; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    pub fn matrices_mut(&mut self) -> [&mut DMatrix<f64>; 4] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
struct Forward {
    xq: DMatrix<f64>,
    xk: DMatrix<f64>,
    xv: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    /// Post-softmax weights per head, `(T·Nq) × (T·Nk)`.
    probs: Vec<DMatrix<f64>>,
    o: DMatrix<f64>,
    /// Query rows with no admissible key.
    empty: Vec<bool>,
    out: DMatrix<f64>,
}

fn add_encoding(x: &mut DMatrix<f64>, enc: &Option<SphericalPosEncoding>, tokens: usize) {
    if let Some(e) = enc {
        for r in 0..x.nrows() {
            for (c, v) in e.row(r % tokens).iter().enumerate() {
                x[(r, c)] += v;
            }
        }
    }
}

fn forward(query: &FeatureTensor, kv: &FeatureTensor, cfg: &CrossAttentionConfig, w: &AttentionWeights) -> Forward {
    let (nq, nk) = (query.tokens(), kv.tokens());
    let mut xq = query.matrix();
    let mut xk = kv.matrix();
    let xv = xk.clone();
    add_encoding(&mut xq, &cfg.query_encoding, nq);
    add_encoding(&mut xk, &cfg.key_encoding, nk);
    let q = &xq * &w.wq;
    let k = &xk * &w.wk;
    let v = &xv * &w.wv;
    let (rows, cols) = (q.nrows(), k.nrows());
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let empty: Vec<bool> = (0..rows).map(|i| !cfg.mask.row_any(i % nq)).collect();
    let mut o = DMatrix::zeros(rows, cfg.channels());
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let span = h * cfg.head_dim;
        let qh = q.columns(span, cfg.head_dim);
        let kh = k.columns(span, cfg.head_dim);
        let mut p = qh * kh.transpose() * scale;
        for i in 0..rows {
            if empty[i] {
                p.row_mut(i).fill(0.0);
                continue;
            }
            let mut max = f64::NEG_INFINITY;
            for j in 0..cols {
                if cfg.allowed(nq, nk, i, j) {
                    max = max.max(p[(i, j)]);
                }
            }
            let mut sum = 0.0;
            for j in 0..cols {
                let e = if cfg.allowed(nq, nk, i, j) { (p[(i, j)] - max).exp() } else { 0.0 };
                p[(i, j)] = e;
                sum += e;
            }
            p.row_mut(i).scale_mut(1.0 / sum);
        }
        o.columns_mut(span, cfg.head_dim).copy_from(&(&p * v.columns(span, cfg.head_dim)));
        probs.push(p);
    }
    let mut out = &o * &w.wo;
    let raw = query.matrix();
    for (i, e) in empty.iter().enumerate() {
        if *e {
            out.row_mut(i).copy_from(&raw.row(i));
        }
    }
    Forward {
        xq,
        xk,
        xv,
        q,
        k,
        v,
        probs,
        o,
        empty,
        out,
    }
}

/// Multi-head scaled dot-product attention of `query` tokens over `kv`
/// tokens. Keys outside the mask get exactly zero weight. A query token
/// with no admissible key is returned unchanged.
pub fn cross_attend(
    query: &FeatureTensor,
    kv: &FeatureTensor,
    cfg: &CrossAttentionConfig,
    weights: &AttentionWeights,
) -> Result<FeatureTensor> {
    cfg.check(query, kv, weights)?;
    Ok(query.with_matrix(&forward(query, kv, cfg, weights).out))
}

/// Post-softmax attention weights, one `(T·Nq) × (T·Nk)` matrix per head.
/// Rows of queries without admissible keys are zero.
pub fn attention_weights(
    query: &FeatureTensor,
    kv: &FeatureTensor,
    cfg: &CrossAttentionConfig,
    weights: &AttentionWeights,
) -> Result<Vec<DMatrix<f64>>> {
    cfg.check(query, kv, weights)?;
    Ok(forward(query, kv, cfg, weights).probs)
}

/// Gradients of a scalar through [`cross_attend`].
#[derive(Clone, Debug)]
pub struct AttentionGrads {
    pub weights: AttentionWeights,
    pub query: FeatureTensor,
    pub kv: FeatureTensor,
}

/// Backpropagates `d_out` (the gradient with respect to the output of
/// [`cross_attend`]) to the weights and both inputs.
pub fn cross_attend_backward(
    query: &FeatureTensor,
    kv: &FeatureTensor,
    cfg: &CrossAttentionConfig,
    weights: &AttentionWeights,
    d_out: &FeatureTensor,
) -> Result<AttentionGrads> {
    cfg.check(query, kv, weights)?;
    if !d_out.same_shape(query) {
        return Err(Error::shape("output gradient must have the query's shape"));
    }
    let f = forward(query, kv, cfg, weights);
    let mut dy = d_out.matrix();
    let mut dxq_pass = DMatrix::zeros(dy.nrows(), dy.ncols());
    for (i, e) in f.empty.iter().enumerate() {
        if *e {
            dxq_pass.row_mut(i).copy_from(&dy.row(i));
            dy.row_mut(i).fill(0.0);
        }
    }
    let d_wo = f.o.transpose() * &dy;
    let d_o = &dy * weights.wo.transpose();
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let mut dq = DMatrix::zeros(f.q.nrows(), f.q.ncols());
    let mut dk = DMatrix::zeros(f.k.nrows(), f.k.ncols());
    let mut dv = DMatrix::zeros(f.v.nrows(), f.v.ncols());
    for (h, p) in f.probs.iter().enumerate() {
        let span = h * cfg.head_dim;
        let doh = d_o.columns(span, cfg.head_dim);
        let dp = doh * f.v.columns(span, cfg.head_dim).transpose();
        dv.columns_mut(span, cfg.head_dim).copy_from(&(p.transpose() * doh));
        let mut ds = p.component_mul(&dp);
        for i in 0..ds.nrows() {
            let row_dot: f64 = ds.row(i).sum();
            for j in 0..ds.ncols() {
                ds[(i, j)] -= p[(i, j)] * row_dot;
            }
        }
        ds *= scale;
        dq.columns_mut(span, cfg.head_dim).copy_from(&(&ds * f.k.columns(span, cfg.head_dim)));
        dk.columns_mut(span, cfg.head_dim).copy_from(&(ds.transpose() * f.q.columns(span, cfg.head_dim)));
    }
    let grads = AttentionWeights {
        wq: f.xq.transpose() * &dq,
        wk: f.xk.transpose() * &dk,
        wv: f.xv.transpose() * &dv,
        wo: d_wo,
    };
    let dxq = dq * weights.wq.transpose() + dxq_pass;
    let dxk = dk * weights.wk.transpose() + dv * weights.wv.transpose();
    Ok(AttentionGrads {
        weights: grads,
        query: query.with_matrix(&dxq),
        kv: kv.with_matrix(&dxk),
    })
}

/// Attention structure between the panorama and one perspective view.
/// `to_pano` has panorama queries and view keys; `to_view` the reverse.
#[derive(Clone, Debug)]
pub struct ViewLink {
    pub to_pano: CrossAttentionConfig,
    pub to_view: CrossAttentionConfig,
}

impl ViewLink {
    /// Both directions from the panorama-side configuration, with the
    /// transposed mask and swapped encodings for the reverse direction.
    pub fn symmetric(to_pano: CrossAttentionConfig) -> Self {
        ViewLink {
            to_view: to_pano.reversed(),
            to_pano,
        }
    }
}

/// Weights of the two attention directions, shared by all views.
#[derive(Clone, Debug, PartialEq)]
pub struct BidirectionalWeights {
    pub to_pano: AttentionWeights,
    pub to_view: AttentionWeights,
}

/// Attention output used as a residual update: zero for queries without
/// admissible keys.
fn residual_update(
    query: &FeatureTensor,
    kv: &FeatureTensor,
    cfg: &CrossAttentionConfig,
    weights: &AttentionWeights,
) -> Result<DMatrix<f64>> {
    cfg.check(query, kv, weights)?;
    let f = forward(query, kv, cfg, weights);
    let mut out = f.out;
    for (i, e) in f.empty.iter().enumerate() {
        if *e {
            out.row_mut(i).fill(0.0);
        }
    }
    Ok(out)
}

/// One exchange between the panorama branch and `N` perspective branches.
///
/// Both directions read the input features (neither sees the other's
/// update). The panorama receives the sum of its updates from every view;
/// each view receives its update from the panorama. Updates are added
/// residually, and tokens without any correspondence keep their value.
pub fn bidirectional_step(
    pano: &FeatureTensor,
    views: &[FeatureTensor],
    links: &[ViewLink],
    weights: &BidirectionalWeights,
) -> Result<(FeatureTensor, Vec<FeatureTensor>)> {
    if views.is_empty() {
        return Err(Error::arg("bidirectional attention needs at least one perspective view"));
    }
    if views.len() != links.len() {
        return Err(Error::arg(format!("{} views but {} view links", views.len(), links.len())));
    }
    let mut pano_next = pano.matrix();
    let mut views_next = Vec::with_capacity(views.len());
    for (view, link) in views.iter().zip(links) {
        pano_next += residual_update(pano, view, &link.to_pano, &weights.to_pano)?;
        let update = residual_update(view, pano, &link.to_view, &weights.to_view)?;
        views_next.push(view.with_matrix(&(view.matrix() + update)));
    }
    Ok((pano.with_matrix(&pano_next), views_next))
}
