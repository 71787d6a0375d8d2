//! Pre-norm causal transformer over triplet tokens with a hand-written
//! backward pass. Parameters live in one flat vector so the optimizer,
//! soft updates and checkpoints are plain slice operations.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// Architecture dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_width: usize,
    pub max_positions: usize,
    /// Size of the interval-of-day table; 0 disables it.
    pub phases: usize,
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.input, self.d_model, self.n_layers, self.n_heads, self.ff_width, self.max_positions];
        if widths.contains(&0) {
            return Err(Error::Config("network widths must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads)));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Named parameter groups, for gradient checks and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Embedding,
    Positional,
    Phase,
    Attention,
    LayerNorm,
    FeedForward,
    Head,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Span {
    pub off: usize,
    pub len: usize,
}

impl Span {
    fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.off..self.off + self.len]
    }

    fn of_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.off..self.off + self.len]
    }
}

#[derive(Clone, Debug)]
struct LayerSpans {
    ln1_g: Span,
    ln1_b: Span,
    wq: Span,
    bq: Span,
    wk: Span,
    bk: Span,
    wv: Span,
    bv: Span,
    wo: Span,
    bo: Span,
    ln2_g: Span,
    ln2_b: Span,
    w1: Span,
    b1: Span,
    w2: Span,
    b2: Span,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    emb_w: Span,
    emb_b: Span,
    pos: Span,
    phase: Span,
    layers: Vec<LayerSpans>,
    lnf_g: Span,
    lnf_b: Span,
    head_w: Span,
    head_b: Span,
    pub total: usize,
    pub groups: Vec<(ParamGroup, Span)>,
}

impl Layout {
    fn new(s: &NetShape) -> Layout {
        let mut off = 0;
        let mut groups = Vec::new();
        let mut take = |len: usize, g: ParamGroup| {
            let span = Span { off, len };
            off += len;
            groups.push((g, span));
            span
        };
        let (d, f) = (s.d_model, s.ff_width);
        let emb_w = take(d * s.input, ParamGroup::Embedding);
        let emb_b = take(d, ParamGroup::Embedding);
        let pos = take(s.max_positions * d, ParamGroup::Positional);
        let phase = take(s.phases * d, ParamGroup::Phase);
        let mut layers = Vec::with_capacity(s.n_layers);
        for _ in 0..s.n_layers {
            layers.push(LayerSpans {
                ln1_g: take(d, ParamGroup::LayerNorm),
                ln1_b: take(d, ParamGroup::LayerNorm),
                wq: take(d * d, ParamGroup::Attention),
                bq: take(d, ParamGroup::Attention),
                wk: take(d * d, ParamGroup::Attention),
                bk: take(d, ParamGroup::Attention),
                wv: take(d * d, ParamGroup::Attention),
                bv: take(d, ParamGroup::Attention),
                wo: take(d * d, ParamGroup::Attention),
                bo: take(d, ParamGroup::Attention),
                ln2_g: take(d, ParamGroup::LayerNorm),
                ln2_b: take(d, ParamGroup::LayerNorm),
                w1: take(f * d, ParamGroup::FeedForward),
                b1: take(f, ParamGroup::FeedForward),
                w2: take(d * f, ParamGroup::FeedForward),
                b2: take(d, ParamGroup::FeedForward),
            });
        }
        let lnf_g = take(d, ParamGroup::LayerNorm);
        let lnf_b = take(d, ParamGroup::LayerNorm);
        let head_w = take(2 * d, ParamGroup::Head);
        let head_b = take(2, ParamGroup::Head);
        groups.retain(|(_, s)| s.len > 0);
        Layout { emb_w, emb_b, pos, phase, layers, lnf_g, lnf_b, head_w, head_b, total: off, groups }
    }
}

/// Tokens with explicit attention sets. Token `i` attends to `keys[i]`,
/// all of which are `<= i`; several causal sequences sharing a prefix can
/// be packed into one graph this way.
#[derive(Clone, Debug, Default)]
pub struct TokenGraph {
    input: usize,
    feats: Vec<f64>,
    pos: Vec<usize>,
    phase: Vec<usize>,
    keys: Vec<Vec<usize>>,
}

impl TokenGraph {
    pub fn new(input: usize) -> Self {
        TokenGraph { input, ..Default::default() }
    }

    /// Plain causal sequence: token `i` sees `0..=i`.
    pub fn causal(feats: &[Vec<f64>], pos: &[usize], phase: &[usize]) -> Result<Self> {
        let input = feats.first().map_or(0, Vec::len);
        let mut g = TokenGraph::new(input);
        for i in 0..feats.len() {
            g.push(&feats[i], pos[i], phase[i], (0..=i).collect())?;
        }
        Ok(g)
    }

    pub fn push(&mut self, feat: &[f64], pos: usize, phase: usize, keys: Vec<usize>) -> Result<usize> {
        if feat.len() != self.input {
            return Err(Error::DimensionMismatch { expected: self.input, got: feat.len() });
        }
        let i = self.pos.len();
        if keys.is_empty() || keys.iter().any(|&k| k > i) {
            return Err(Error::invalid(format!("token {i} must attend to a nonempty set of positions <= {i}")));
        }
        self.feats.extend_from_slice(feat);
        self.pos.push(pos);
        self.phase.push(phase);
        self.keys.push(keys);
        Ok(i)
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn input(&self) -> usize {
        self.input
    }

    /// Overwrites one token's features, keeping its attention set.
    pub fn set_features(&mut self, i: usize, feat: &[f64]) {
        self.feats[i * self.input..(i + 1) * self.input].copy_from_slice(feat);
    }
}

// ---- dense kernels -------------------------------------------------------

/// `y = x wᵀ + b` for `x` rows × input, `w` out × input.
fn linear(x: &[f64], rows: usize, input: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    let mut y = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    if rows > 0 {
        // SAFETY: dimensions and strides describe the slices above.
        unsafe {
            matrixmultiply::dgemm(
                rows, input, out, 1.0, x.as_ptr(), input as isize, 1, w.as_ptr(), 1, input as isize, 1.0,
                y.as_mut_ptr(), out as isize, 1,
            );
        }
    }
    y
}

/// Accumulates `dw += dyᵀ x`, `db += Σ dy`, and returns `dy w` if asked.
fn linear_back(
    dy: &[f64],
    x: &[f64],
    rows: usize,
    input: usize,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let out = db.len();
    if rows == 0 {
        return want_dx.then(Vec::new);
    }
    for r in 0..rows {
        for (acc, g) in db.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
            *acc += g;
        }
    }
    // SAFETY: dimensions and strides describe the slices.
    unsafe {
        matrixmultiply::dgemm(
            out, rows, input, 1.0, dy.as_ptr(), 1, out as isize, x.as_ptr(), input as isize, 1, 1.0,
            dw.as_mut_ptr(), input as isize, 1,
        );
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * input];
        // SAFETY: as above.
        unsafe {
            matrixmultiply::dgemm(
                rows, out, input, 1.0, dy.as_ptr(), out as isize, 1, w.as_ptr(), input as isize, 1, 0.0,
                dx.as_mut_ptr(), input as isize, 1,
            );
        }
        dx
    })
}

struct Norm {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    y: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64]) -> Norm {
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    let mut y = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = g[c] * h + b[c];
        }
    }
    Norm { xhat, rstd, y }
}

fn layer_norm_back(dy: &[f64], n: &Norm, d: usize, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let rows = n.rstd.len();
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let (dyr, xh) = (&dy[r * d..(r + 1) * d], &n.xhat[r * d..(r + 1) * d]);
        for c in 0..d {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[r * d + c] = n.rstd[r] * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

// ---- forward / backward --------------------------------------------------

struct LayerCache {
    n1: Norm,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights, per token per head over its key set.
    probs: Vec<Vec<f64>>,
    attn: Vec<f64>,
    n2: Norm,
    u: Vec<f64>,
    act: Vec<f64>,
}

/// Activations of one forward pass, kept for the backward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    nf: Norm,
}

/// Q-network: a shape plus its parameter layout.
#[derive(Clone, Debug)]
pub struct QNet {
    shape: NetShape,
    layout: Layout,
}

impl QNet {
    pub fn new(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        Ok(QNet { layout: Layout::new(&shape), shape })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    /// Index ranges of every parameter group.
    pub fn groups(&self) -> Vec<(ParamGroup, std::ops::Range<usize>)> {
        self.layout.groups.iter().map(|(g, s)| (*g, s.off..s.off + s.len)).collect()
    }

    /// Scaled Gaussian weights, unit layer-norm gains, zero biases and a
    /// zero output head.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let s = &self.shape;
        let l = &self.layout;
        let mut p = vec![0.0; l.total];
        let fill = |p: &mut [f64], span: Span, std: f64, rng: &mut Rng| {
            let n = Normal::new(0.0, std).expect("positive std");
            for v in span.of_mut(p) {
                *v = n.sample(rng);
            }
        };
        let d = s.d_model as f64;
        let resid = 1.0 / (2.0 * s.n_layers as f64).sqrt();
        fill(&mut p, l.emb_w, 1.0 / (s.input as f64).sqrt(), rng);
        fill(&mut p, l.pos, 0.1, rng);
        fill(&mut p, l.phase, 0.1, rng);
        for ls in &l.layers {
            for w in [ls.wq, ls.wk, ls.wv] {
                fill(&mut p, w, 1.0 / d.sqrt(), rng);
            }
            fill(&mut p, ls.wo, resid / d.sqrt(), rng);
            fill(&mut p, ls.w1, 1.0 / d.sqrt(), rng);
            fill(&mut p, ls.w2, resid / (s.ff_width as f64).sqrt(), rng);
            ls.ln1_g.of_mut(&mut p).fill(1.0);
            ls.ln2_g.of_mut(&mut p).fill(1.0);
        }
        l.lnf_g.of_mut(&mut p).fill(1.0);
        p
    }

    /// Randomizes the output head as well; gradient checks need every
    /// group to carry signal.
    pub fn init_dense(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = self.init(rng);
        for v in self.layout.head_w.of_mut(&mut p) {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in self.layout.head_b.of_mut(&mut p) {
            *v = rng.random_range(-0.5..0.5);
        }
        for (g, s) in self.layout.groups.clone() {
            if g == ParamGroup::LayerNorm {
                for v in s.of_mut(&mut p) {
                    *v += rng.random_range(-0.2..0.2);
                }
            }
        }
        p
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::DimensionMismatch { expected: self.layout.total, got: params.len() });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network parameter {i}")));
        }
        Ok(())
    }

    fn check_graph(&self, g: &TokenGraph) -> Result<()> {
        if g.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        if g.input != self.shape.input {
            return Err(Error::DimensionMismatch { expected: self.shape.input, got: g.input });
        }
        if let Some(&p) = g.pos.iter().find(|&&p| p >= self.shape.max_positions) {
            return Err(Error::invalid(format!("position {p} beyond table of {}", self.shape.max_positions)));
        }
        if self.shape.phases > 0 {
            if let Some(&p) = g.phase.iter().find(|&&p| p >= self.shape.phases) {
                return Err(Error::invalid(format!("phase {p} beyond table of {}", self.shape.phases)));
            }
        }
        Ok(())
    }

    /// Q-values at every token, `len × 2` in action order (−1, +1).
    pub fn forward(&self, params: &[f64], g: &TokenGraph) -> Result<Vec<[f64; 2]>> {
        self.forward_cached(params, g).map(|(q, _)| q)
    }

    pub fn forward_cached(&self, params: &[f64], g: &TokenGraph) -> Result<(Vec<[f64; 2]>, ForwardCache)> {
        self.check_params(params)?;
        self.check_graph(g)?;
        let s = &self.shape;
        let l = &self.layout;
        let (n, d, f) = (g.len(), s.d_model, s.ff_width);
        let mut x = linear(&g.feats, n, s.input, l.emb_w.of(params), l.emb_b.of(params));
        let (pos, phase) = (l.pos.of(params), l.phase.of(params));
        for i in 0..n {
            add_into(&mut x[i * d..(i + 1) * d], &pos[g.pos[i] * d..(g.pos[i] + 1) * d]);
            if s.phases > 0 {
                add_into(&mut x[i * d..(i + 1) * d], &phase[g.phase[i] * d..(g.phase[i] + 1) * d]);
            }
        }
        let mut layers = Vec::with_capacity(s.n_layers);
        for ls in &l.layers {
            let n1 = layer_norm(&x, d, ls.ln1_g.of(params), ls.ln1_b.of(params));
            let q = linear(&n1.y, n, d, ls.wq.of(params), ls.bq.of(params));
            let k = linear(&n1.y, n, d, ls.wk.of(params), ls.bk.of(params));
            let v = linear(&n1.y, n, d, ls.wv.of(params), ls.bv.of(params));
            let (attn, probs) = self.attend(&q, &k, &v, g);
            let mut h = linear(&attn, n, d, ls.wo.of(params), ls.bo.of(params));
            add_into(&mut h, &x);
            let n2 = layer_norm(&h, d, ls.ln2_g.of(params), ls.ln2_b.of(params));
            let u = linear(&n2.y, n, d, ls.w1.of(params), ls.b1.of(params));
            let act: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let mut out = linear(&act, n, f, ls.w2.of(params), ls.b2.of(params));
            add_into(&mut out, &h);
            layers.push(LayerCache { n1, q, k, v, probs, attn, n2, u, act });
            x = out;
        }
        let nf = layer_norm(&x, d, l.lnf_g.of(params), l.lnf_b.of(params));
        let qv = linear(&nf.y, n, d, l.head_w.of(params), l.head_b.of(params));
        let q = qv.chunks(2).map(|c| [c[0], c[1]]).collect();
        Ok((q, ForwardCache { layers, nf }))
    }

    fn attend(&self, q: &[f64], k: &[f64], v: &[f64], g: &TokenGraph) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (d, hd) = (self.shape.d_model, self.shape.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = vec![0.0; q.len()];
        let mut probs = Vec::with_capacity(g.len());
        for i in 0..g.len() {
            let keys = &g.keys[i];
            let mut p = vec![0.0; self.shape.n_heads * keys.len()];
            for h in 0..self.shape.n_heads {
                let qi = &q[i * d + h * hd..i * d + (h + 1) * hd];
                let ph = &mut p[h * keys.len()..(h + 1) * keys.len()];
                for (slot, &j) in ph.iter_mut().zip(keys) {
                    let kj = &k[j * d + h * hd..j * d + (h + 1) * hd];
                    *slot = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax(ph);
                let oi = &mut out[i * d + h * hd..i * d + (h + 1) * hd];
                for (&w, &j) in ph.iter().zip(keys) {
                    let vj = &v[j * d + h * hd..j * d + (h + 1) * hd];
                    for (o, b) in oi.iter_mut().zip(vj) {
                        *o += w * b;
                    }
                }
            }
            probs.push(p);
        }
        (out, probs)
    }

    /// Gradient of `Σ_i dq[i] · Q[i]` with respect to the parameters.
    pub fn backward(&self, params: &[f64], g: &TokenGraph, cache: &ForwardCache, dq: &[[f64; 2]]) -> Vec<f64> {
        let s = &self.shape;
        let l = &self.layout;
        let (n, d, f) = (g.len(), s.d_model, s.ff_width);
        let mut grad = vec![0.0; l.total];
        let dqf: Vec<f64> = dq.iter().flat_map(|q| q.iter().copied()).collect();

        let (hw, hb) = split2(&mut grad, l.head_w, l.head_b);
        let daf = linear_back(&dqf, &cache.nf.y, n, d, l.head_w.of(params), hw, hb, true).unwrap();
        let (gg, gb) = split2(&mut grad, l.lnf_g, l.lnf_b);
        let mut dx = layer_norm_back(&daf, &cache.nf, d, l.lnf_g.of(params), gg, gb);

        for (ls, c) in l.layers.iter().zip(&cache.layers).rev() {
            // out = h + W2 gelu(W1 ln2(h) + b1) + b2
            let mut dh = dx.clone();
            let (w2, b2) = split2(&mut grad, ls.w2, ls.b2);
            let mut du = linear_back(&dx, &c.act, n, f, ls.w2.of(params), w2, b2, true).unwrap();
            for (z, &u) in du.iter_mut().zip(&c.u) {
                *z *= gelu_grad(u);
            }
            let (w1, b1) = split2(&mut grad, ls.w1, ls.b1);
            let da2 = linear_back(&du, &c.n2.y, n, d, ls.w1.of(params), w1, b1, true).unwrap();
            let (g2, b2n) = split2(&mut grad, ls.ln2_g, ls.ln2_b);
            add_into(&mut dh, &layer_norm_back(&da2, &c.n2, d, ls.ln2_g.of(params), g2, b2n));

            // h = x + Wo attn + bo
            dx = dh.clone();
            let (wo, bo) = split2(&mut grad, ls.wo, ls.bo);
            let dattn = linear_back(&dh, &c.attn, n, d, ls.wo.of(params), wo, bo, true).unwrap();
            let (dqa, dka, dva) = self.attend_back(&dattn, c, g);
            let mut da1 = vec![0.0; n * d];
            for (dy, w, b) in [(&dqa, ls.wq, ls.bq), (&dka, ls.wk, ls.bk), (&dva, ls.wv, ls.bv)] {
                let (gw, gb) = split2(&mut grad, w, b);
                add_into(&mut da1, &linear_back(dy, &c.n1.y, n, d, w.of(params), gw, gb, true).unwrap());
            }
            let (g1, b1n) = split2(&mut grad, ls.ln1_g, ls.ln1_b);
            add_into(&mut dx, &layer_norm_back(&da1, &c.n1, d, ls.ln1_g.of(params), g1, b1n));
        }

        let (ew, eb) = split2(&mut grad, l.emb_w, l.emb_b);
        linear_back(&dx, &g.feats, n, s.input, l.emb_w.of(params), ew, eb, false);
        for i in 0..n {
            let row = &dx[i * d..(i + 1) * d];
            let p = g.pos[i];
            add_into(&mut grad[l.pos.off + p * d..l.pos.off + (p + 1) * d], row);
            if s.phases > 0 {
                let ph = g.phase[i];
                add_into(&mut grad[l.phase.off + ph * d..l.phase.off + (ph + 1) * d], row);
            }
        }
        grad
    }

    fn attend_back(&self, dout: &[f64], c: &LayerCache, g: &TokenGraph) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (d, hd) = (self.shape.d_model, self.shape.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = vec![0.0; dout.len()];
        let mut dk = vec![0.0; dout.len()];
        let mut dv = vec![0.0; dout.len()];
        let mut ds = Vec::new();
        for i in 0..g.len() {
            let keys = &g.keys[i];
            for h in 0..self.shape.n_heads {
                let ph = &c.probs[i][h * keys.len()..(h + 1) * keys.len()];
                let doi = &dout[i * d + h * hd..i * d + (h + 1) * hd];
                ds.clear();
                for (&w, &j) in ph.iter().zip(keys) {
                    let r = j * d + h * hd..j * d + (h + 1) * hd;
                    ds.push(doi.iter().zip(&c.v[r.clone()]).map(|(a, b)| a * b).sum::<f64>());
                    for (acc, o) in dv[r].iter_mut().zip(doi) {
                        *acc += w * o;
                    }
                }
                let dot: f64 = ph.iter().zip(&ds).map(|(a, b)| a * b).sum();
                let qi = i * d + h * hd..i * d + (h + 1) * hd;
                for ((&w, &j), &dp) in ph.iter().zip(keys).zip(&ds) {
                    let sg = scale * w * (dp - dot);
                    if sg == 0.0 {
                        continue;
                    }
                    let r = j * d + h * hd..j * d + (h + 1) * hd;
                    for ((dqv, kv), (dkv, qv)) in
                        dq[qi.clone()].iter_mut().zip(&c.k[r.clone()]).zip(dk[r].iter_mut().zip(&c.q[qi.clone()]))
                    {
                        *dqv += sg * kv;
                        *dkv += sg * qv;
                    }
                }
            }
        }
        (dq, dk, dv)
    }

    /// Empty key/value cache for incremental inference.
    pub fn kv_cache(&self) -> KvCache {
        KvCache { k: vec![Vec::new(); self.shape.n_layers], v: vec![Vec::new(); self.shape.n_layers], len: 0 }
    }

    /// Runs one token against the cached prefix. With `commit` its keys and
    /// values are appended so later tokens can attend to it.
    pub fn forward_token(
        &self,
        params: &[f64],
        cache: &mut KvCache,
        feat: &[f64],
        pos: usize,
        phase: usize,
        commit: bool,
    ) -> Result<[f64; 2]> {
        let s = &self.shape;
        let l = &self.layout;
        if feat.len() != s.input {
            return Err(Error::DimensionMismatch { expected: s.input, got: feat.len() });
        }
        if pos >= s.max_positions || (s.phases > 0 && phase >= s.phases) {
            return Err(Error::invalid(format!("position {pos} / phase {phase} outside the embedding tables")));
        }
        let (d, hd, f) = (s.d_model, s.head_dim(), s.ff_width);
        let mut x = linear(feat, 1, s.input, l.emb_w.of(params), l.emb_b.of(params));
        add_into(&mut x, &l.pos.of(params)[pos * d..(pos + 1) * d]);
        if s.phases > 0 {
            add_into(&mut x, &l.phase.of(params)[phase * d..(phase + 1) * d]);
        }
        let scale = 1.0 / (hd as f64).sqrt();
        for (li, ls) in l.layers.iter().enumerate() {
            let a1 = layer_norm(&x, d, ls.ln1_g.of(params), ls.ln1_b.of(params)).y;
            let q = linear(&a1, 1, d, ls.wq.of(params), ls.bq.of(params));
            let k = linear(&a1, 1, d, ls.wk.of(params), ls.bk.of(params));
            let v = linear(&a1, 1, d, ls.wv.of(params), ls.bv.of(params));
            let (kc, vc) = (&cache.k[li], &cache.v[li]);
            let mut attn = vec![0.0; d];
            for h in 0..s.n_heads {
                let r = h * hd..(h + 1) * hd;
                let key = |j: usize| if j < cache.len { &kc[j * d..(j + 1) * d] } else { &k[..] };
                let val = |j: usize| if j < cache.len { &vc[j * d..(j + 1) * d] } else { &v[..] };
                let mut p: Vec<f64> = (0..=cache.len)
                    .map(|j| scale * q[r.clone()].iter().zip(&key(j)[r.clone()]).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                softmax(&mut p);
                for (j, w) in p.iter().enumerate() {
                    for (o, b) in attn[r.clone()].iter_mut().zip(&val(j)[r.clone()]) {
                        *o += w * b;
                    }
                }
            }
            let mut h = linear(&attn, 1, d, ls.wo.of(params), ls.bo.of(params));
            add_into(&mut h, &x);
            let a2 = layer_norm(&h, d, ls.ln2_g.of(params), ls.ln2_b.of(params)).y;
            let act: Vec<f64> = linear(&a2, 1, d, ls.w1.of(params), ls.b1.of(params)).into_iter().map(gelu).collect();
            let mut out = linear(&act, 1, f, ls.w2.of(params), ls.b2.of(params));
            add_into(&mut out, &h);
            if commit {
                cache.k[li].extend_from_slice(&k);
                cache.v[li].extend_from_slice(&v);
            }
            x = out;
        }
        if commit {
            cache.len += 1;
        }
        let a = layer_norm(&x, d, l.lnf_g.of(params), l.lnf_b.of(params)).y;
        let q = linear(&a, 1, d, l.head_w.of(params), l.head_b.of(params));
        Ok([q[0], q[1]])
    }
}

/// Per-layer keys and values of committed tokens.
#[derive(Clone, Debug)]
pub struct KvCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn softmax(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Two disjoint mutable views of the gradient vector.
fn split2(grad: &mut [f64], a: Span, b: Span) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.off + a.len <= b.off);
    let (left, right) = grad.split_at_mut(b.off);
    (&mut left[a.off..a.off + a.len], &mut right[..b.len])
}

/// Per-token mean and variance of the normalized (pre-affine) activations;
/// exposed for the layer-norm property check.
pub fn layer_norm_moments(x: &[f64], d: usize) -> Vec<(f64, f64)> {
    let ones = vec![1.0; d];
    let zeros = vec![0.0; d];
    let n = layer_norm(x, d, &ones, &zeros);
    n.xhat
        .chunks(d)
        .map(|r| {
            let m = r.iter().sum::<f64>() / d as f64;
            (m, r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d as f64)
        })
        .collect()
}
