//! Pre-norm decoder-only transformer with learned positional embeddings.
//!
//! Block structure: `x + attn(ln1(x))` then `x + mlp(ln2(x))`, a final layer
//! norm, and an untied unembedding.  Attention is causal multi-head with
//! per-row softmax over the unmasked prefix; the MLP uses the tanh
//! approximation of GELU.  The backward pass is written out layer by layer
//! against the same caches the forward pass fills; `grad_check` holds it to
//! finite differences.

use ndarray::prelude::*;

use super::params::{Init, LayoutBuilder};
use super::{
    cross_entropy_mean, CapturePoint, ForwardOutput, ModelConfig, ParamSet, Scalar, NO_TARGET,
};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub struct Transformer<F: Scalar> {
    cfg: ModelConfig,
    params: ParamSet<F>,
}

struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Vec<F>,
    out: Array2<F>,
}

struct BlockCache<F> {
    ln1: LnCache<F>,
    qkv: Array2<F>,
    /// `(B, H, P, P)` causal attention weights; entries above the diagonal
    /// are zero.
    probs: Array4<F>,
    ctx: Array2<F>,
    ln2: LnCache<F>,
    pre: Array2<F>,
    tanh: Array2<F>,
    /// Residual stream after this block.
    resid_post: Array2<F>,
}

struct Trace<F> {
    x0: Array2<F>,
    blocks: Vec<BlockCache<F>>,
    ln_f: LnCache<F>,
}

impl<F: Scalar> Transformer<F> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut b = LayoutBuilder::new();
        b.add("embed.tok", &[cfg.vocab, d], Init::Normal002);
        b.add("embed.pos", &[cfg.n_ctx, d], Init::Normal002);
        for i in 0..cfg.n_layers {
            b.add(format!("blocks.{i}.ln1.g"), &[d], Init::One);
            b.add(format!("blocks.{i}.ln1.b"), &[d], Init::Zero);
            b.add(format!("blocks.{i}.attn.w_qkv"), &[d, 3 * d], Init::Normal002);
            b.add(format!("blocks.{i}.attn.b_qkv"), &[3 * d], Init::Zero);
            b.add(format!("blocks.{i}.attn.w_o"), &[d, d], Init::Normal002);
            b.add(format!("blocks.{i}.attn.b_o"), &[d], Init::Zero);
            b.add(format!("blocks.{i}.ln2.g"), &[d], Init::One);
            b.add(format!("blocks.{i}.ln2.b"), &[d], Init::Zero);
            b.add(format!("blocks.{i}.mlp.w_in"), &[d, cfg.d_ff()], Init::Normal002);
            b.add(format!("blocks.{i}.mlp.b_in"), &[cfg.d_ff()], Init::Zero);
            b.add(format!("blocks.{i}.mlp.w_out"), &[cfg.d_ff(), d], Init::Normal002);
            b.add(format!("blocks.{i}.mlp.b_out"), &[d], Init::Zero);
        }
        b.add("ln_f.g", &[d], Init::One);
        b.add("ln_f.b", &[d], Init::Zero);
        b.add("unembed.w", &[d, cfg.vocab], Init::Normal002);
        b.add("unembed.b", &[cfg.vocab], Init::Zero);
        Ok(Self {
            cfg,
            params: b.build(cfg.init_seed),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    fn check_tokens(&self, tokens: &ArrayView2<u32>) -> Result<(usize, usize)> {
        let (batch, positions) = tokens.dim();
        if positions > self.cfg.n_ctx {
            return Err(Error::ShapeMismatch(format!(
                "sequence length {positions} exceeds context {}",
                self.cfg.n_ctx
            )));
        }
        if tokens.iter().any(|&t| t as usize >= self.cfg.vocab) {
            return Err(Error::InvalidParameter("token id out of vocabulary".into()));
        }
        Ok((batch, positions))
    }

    pub fn forward_with_capture(
        &self,
        tokens: ArrayView2<u32>,
        points: &[CapturePoint],
    ) -> Result<ForwardOutput<F>> {
        let (b, p) = self.check_tokens(&tokens)?;
        let (logits, trace) = self.run(&tokens, b, p);
        let mut captures = Vec::with_capacity(points.len());
        for &point in points {
            let arr2 = match point {
                CapturePoint::Embed => trace.x0.clone(),
                CapturePoint::ResidPost(k) => trace.blocks[k].resid_post.clone(),
                CapturePoint::FinalPrenorm => trace.blocks.last().map_or_else(
                    || trace.x0.clone(),
                    |blk| blk.resid_post.clone(),
                ),
                CapturePoint::Logits => logits.clone(),
            };
            let w = arr2.ncols();
            let data = arr2.into_raw_vec_and_offset().0;
            captures.push((point, Array3::from_shape_vec((b, p, w), data).unwrap()));
        }
        let v = logits.ncols();
        let logits3 =
            Array3::from_shape_vec((b, p, v), logits.into_raw_vec_and_offset().0).unwrap();
        Ok(ForwardOutput {
            logits: logits3,
            captures,
        })
    }

    pub fn loss_and_grad(
        &self,
        tokens: ArrayView2<u32>,
        targets: ArrayView2<u32>,
    ) -> Result<(f64, ParamSet<F>)> {
        let (b, p) = self.check_tokens(&tokens)?;
        if targets.dim() != (b, p) {
            return Err(Error::ShapeMismatch("targets shape mismatch".into()));
        }
        let (logits, trace) = self.run(&tokens, b, p);
        let logits3 =
            Array3::from_shape_vec((b, p, self.cfg.vocab), logits.clone().into_raw_vec_and_offset().0)
                .unwrap();
        let loss = cross_entropy_mean(&logits3, targets)?;
        let grads = self.backward(&tokens, targets, &logits, &trace, b, p);
        Ok((loss, grads))
    }

    // -- forward ------------------------------------------------------------

    fn run(&self, tokens: &ArrayView2<u32>, b: usize, p: usize) -> (Array2<F>, Trace<F>) {
        let d = self.cfg.d_model;
        let rows = b * p;
        let tok = self.params.view2("embed.tok").unwrap();
        let pos = self.params.view2("embed.pos").unwrap();

        let mut x = Array2::<F>::zeros((rows, d));
        for i in 0..b {
            for j in 0..p {
                let t = tokens[[i, j]] as usize;
                let mut row = x.row_mut(i * p + j);
                row.assign(&tok.row(t));
                row += &pos.row(j);
            }
        }
        let x0 = x.clone();

        let mut blocks = Vec::with_capacity(self.cfg.n_layers);
        for i in 0..self.cfg.n_layers {
            let (blk, next) = self.block_forward(i, &x, b, p);
            blocks.push(blk);
            x = next;
        }

        let ln_f = self.ln_forward(&x, "ln_f");
        let wu = self.params.view2("unembed.w").unwrap();
        let bu = self.params.view1("unembed.b").unwrap();
        let mut logits = ln_f.out.dot(&wu);
        add_row_bias(&mut logits, &bu);

        (
            logits,
            Trace {
                x0,
                blocks,
                ln_f,
            },
        )
    }

    fn block_forward(&self, i: usize, x: &Array2<F>, b: usize, p: usize) -> (BlockCache<F>, Array2<F>) {
        let d = self.cfg.d_model;
        let h = self.cfg.n_heads;
        let k = self.cfg.d_head();
        let scale = F::from_f64(1.0 / (k as f64).sqrt());

        let ln1 = self.ln_forward(x, &format!("blocks.{i}.ln1"));
        let w_qkv = self.params.view2(&format!("blocks.{i}.attn.w_qkv")).unwrap();
        let b_qkv = self.params.view1(&format!("blocks.{i}.attn.b_qkv")).unwrap();
        let mut qkv = ln1.out.dot(&w_qkv);
        add_row_bias(&mut qkv, &b_qkv);

        // causal attention
        let mut probs = Array4::<F>::zeros((b, h, p, p));
        let mut ctx = Array2::<F>::zeros((b * p, d));
        {
            let qkv_s = qkv.as_slice().unwrap();
            let ctx_s = ctx.as_slice_mut().unwrap();
            let stride = 3 * d;
            let mut srow = vec![F::zero(); p];
            for bi in 0..b {
                for hi in 0..h {
                    let q_off = hi * k;
                    let k_off = d + hi * k;
                    let v_off = 2 * d + hi * k;
                    for ii in 0..p {
                        let qrow = &qkv_s[(bi * p + ii) * stride + q_off..][..k];
                        // scores over the causal prefix
                        let mut maxv = F::neg_infinity();
                        for ji in 0..=ii {
                            let krow = &qkv_s[(bi * p + ji) * stride + k_off..][..k];
                            let mut acc = F::zero();
                            for t in 0..k {
                                acc = acc + qrow[t] * krow[t];
                            }
                            let sc = acc * scale;
                            srow[ji] = sc;
                            if sc > maxv {
                                maxv = sc;
                            }
                        }
                        let mut denom = F::zero();
                        for ji in 0..=ii {
                            let e = (srow[ji] - maxv).exp();
                            srow[ji] = e;
                            denom = denom + e;
                        }
                        let inv = F::one() / denom;
                        let out = &mut ctx_s[(bi * p + ii) * d + hi * k..][..k];
                        for ji in 0..=ii {
                            let w = srow[ji] * inv;
                            probs[[bi, hi, ii, ji]] = w;
                            let vrow = &qkv_s[(bi * p + ji) * stride + v_off..][..k];
                            for t in 0..k {
                                out[t] = out[t] + w * vrow[t];
                            }
                        }
                    }
                }
            }
        }

        let w_o = self.params.view2(&format!("blocks.{i}.attn.w_o")).unwrap();
        let b_o = self.params.view1(&format!("blocks.{i}.attn.b_o")).unwrap();
        let mut attn_out = ctx.dot(&w_o);
        add_row_bias(&mut attn_out, &b_o);
        let resid_mid = x + &attn_out;

        let ln2 = self.ln_forward(&resid_mid, &format!("blocks.{i}.ln2"));
        let w_in = self.params.view2(&format!("blocks.{i}.mlp.w_in")).unwrap();
        let b_in = self.params.view1(&format!("blocks.{i}.mlp.b_in")).unwrap();
        let mut pre = ln2.out.dot(&w_in);
        add_row_bias(&mut pre, &b_in);

        let mut tanh = pre.clone();
        let mut act = pre.clone();
        {
            let t_s = tanh.as_slice_mut().unwrap();
            let a_s = act.as_slice_mut().unwrap();
            let c = F::from_f64(GELU_C);
            let a3 = F::from_f64(GELU_A);
            let half = F::from_f64(0.5);
            for idx in 0..t_s.len() {
                let u = t_s[idx];
                let t = (c * (u + a3 * u * u * u)).tanh();
                t_s[idx] = t;
                a_s[idx] = half * u * (F::one() + t);
            }
        }

        let w_out = self.params.view2(&format!("blocks.{i}.mlp.w_out")).unwrap();
        let b_out = self.params.view1(&format!("blocks.{i}.mlp.b_out")).unwrap();
        let mut mlp_out = act.dot(&w_out);
        add_row_bias(&mut mlp_out, &b_out);
        let resid_post = &resid_mid + &mlp_out;

        let next = resid_post.clone();
        (
            BlockCache {
                ln1,
                qkv,
                probs,
                ctx,
                ln2,
                pre,
                tanh,
                resid_post,
            },
            next,
        )
    }

    fn ln_forward(&self, x: &Array2<F>, prefix: &str) -> LnCache<F> {
        let g = self.params.view1(&format!("{prefix}.g")).unwrap();
        let bb = self.params.view1(&format!("{prefix}.b")).unwrap();
        let (rows, d) = x.dim();
        let inv_d = F::from_f64(1.0 / d as f64);
        let eps = F::from_f64(LN_EPS);
        let mut xhat = Array2::<F>::zeros((rows, d));
        let mut out = Array2::<F>::zeros((rows, d));
        let mut rstd = vec![F::zero(); rows];
        let xs = x.as_slice().unwrap();
        let xh = xhat.as_slice_mut().unwrap();
        let os = out.as_slice_mut().unwrap();
        let gs = g.as_slice().unwrap();
        let bs = bb.as_slice().unwrap();
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mut mean = F::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_d;
            let mut var = F::zero();
            for &v in row {
                let c = v - mean;
                var = var + c * c;
            }
            var = var * inv_d;
            let r_std = F::one() / (var + eps).sqrt();
            rstd[r] = r_std;
            let xh_row = &mut xh[r * d..(r + 1) * d];
            let o_row = &mut os[r * d..(r + 1) * d];
            for t in 0..d {
                let hat = (row[t] - mean) * r_std;
                xh_row[t] = hat;
                o_row[t] = hat * gs[t] + bs[t];
            }
        }
        LnCache { xhat, rstd, out }
    }

    // -- backward -----------------------------------------------------------

    fn backward(
        &self,
        tokens: &ArrayView2<u32>,
        targets: ArrayView2<u32>,
        logits: &Array2<F>,
        trace: &Trace<F>,
        b: usize,
        p: usize,
    ) -> ParamSet<F> {
        
        let v = self.cfg.vocab;
        let rows = b * p;
        let mut grads = self.params.zeros_like();

        // softmax cross-entropy gradient, averaged over target positions
        let mut count = 0usize;
        for i in 0..b {
            for j in 0..p {
                if targets[[i, j]] != NO_TARGET {
                    count += 1;
                }
            }
        }
        let inv_count = F::from_f64(1.0 / count.max(1) as f64);
        let mut dlogits = Array2::<F>::zeros((rows, v));
        {
            let ls = logits.as_slice().unwrap();
            let ds = dlogits.as_slice_mut().unwrap();
            for i in 0..b {
                for j in 0..p {
                    let t = targets[[i, j]];
                    if t == NO_TARGET {
                        continue;
                    }
                    let r = i * p + j;
                    let lrow = &ls[r * v..(r + 1) * v];
                    let drow = &mut ds[r * v..(r + 1) * v];
                    let mut maxv = F::neg_infinity();
                    for &x in lrow {
                        if x > maxv {
                            maxv = x;
                        }
                    }
                    let mut denom = F::zero();
                    for &x in lrow {
                        denom = denom + (x - maxv).exp();
                    }
                    let inv = F::one() / denom;
                    for t2 in 0..v {
                        drow[t2] = (lrow[t2] - maxv).exp() * inv * inv_count;
                    }
                    drow[t as usize] = drow[t as usize] - inv_count;
                }
            }
        }

        // unembedding
        let wu = self.params.view2("unembed.w").unwrap();
        {
            let mut g_wu = grads.view2_mut("unembed.w").unwrap();
            g_wu.assign(&trace.ln_f.out.t().dot(&dlogits));
        }
        {
            let mut g_bu = grads.view1_mut("unembed.b").unwrap();
            for (t, gslot) in g_bu.iter_mut().enumerate() {
                let mut acc = F::zero();
                for r in 0..rows {
                    acc = acc + dlogits[[r, t]];
                }
                *gslot = acc;
            }
        }
        let d_lnf_out = dlogits.dot(&wu.t());
        let mut dx = self.ln_backward(&d_lnf_out, &trace.ln_f, "ln_f", &mut grads);

        // blocks in reverse
        for i in (0..self.cfg.n_layers).rev() {
            dx = self.block_backward(i, &trace.blocks[i], &dx, b, p, &mut grads);
        }

        // embeddings
        {
            let mut g_tok = grads.view2_mut("embed.tok").unwrap();
            for i in 0..b {
                for j in 0..p {
                    let t = tokens[[i, j]] as usize;
                    let src = dx.row(i * p + j);
                    let mut dst = g_tok.row_mut(t);
                    dst += &src;
                }
            }
        }
        {
            let mut g_pos = grads.view2_mut("embed.pos").unwrap();
            for j in 0..p {
                let mut dst = g_pos.row_mut(j);
                for i in 0..b {
                    dst += &dx.row(i * p + j);
                }
            }
        }

        grads
    }

    fn block_backward(
        &self,
        i: usize,
        blk: &BlockCache<F>,
        d_resid_post: &Array2<F>,
        b: usize,
        p: usize,
        grads: &mut ParamSet<F>,
    ) -> Array2<F> {
        let d = self.cfg.d_model;
        let h = self.cfg.n_heads;
        let k = self.cfg.d_head();
        let scale = F::from_f64(1.0 / (k as f64).sqrt());

        // MLP path
        let w_out = self.params.view2(&format!("blocks.{i}.mlp.w_out")).unwrap();
        // recompute act = 0.5 * pre * (1 + tanh)
        let mut act = blk.pre.clone();
        {
            let a_s = act.as_slice_mut().unwrap();
            let t_s = blk.tanh.as_slice().unwrap();
            let half = F::from_f64(0.5);
            for idx in 0..a_s.len() {
                a_s[idx] = half * a_s[idx] * (F::one() + t_s[idx]);
            }
        }
        {
            let mut g_wout = grads.view2_mut(&format!("blocks.{i}.mlp.w_out")).unwrap();
            g_wout.assign(&act.t().dot(d_resid_post));
        }
        accumulate_bias(grads, &format!("blocks.{i}.mlp.b_out"), d_resid_post);
        let mut d_pre = d_resid_post.dot(&w_out.t());
        {
            // gelu'(u) = 0.5 (1 + t) + 0.5 u (1 - t^2) c (1 + 3 a u^2)
            let dp = d_pre.as_slice_mut().unwrap();
            let pre = blk.pre.as_slice().unwrap();
            let tn = blk.tanh.as_slice().unwrap();
            let c = F::from_f64(GELU_C);
            let a3 = F::from_f64(GELU_A);
            let three = F::from_f64(3.0);
            let half = F::from_f64(0.5);
            for idx in 0..dp.len() {
                let u = pre[idx];
                let t = tn[idx];
                let sech2 = F::one() - t * t;
                let slope = half * (F::one() + t)
                    + half * u * sech2 * c * (F::one() + three * a3 * u * u);
                dp[idx] = dp[idx] * slope;
            }
        }
        let w_in = self.params.view2(&format!("blocks.{i}.mlp.w_in")).unwrap();
        {
            let mut g_win = grads.view2_mut(&format!("blocks.{i}.mlp.w_in")).unwrap();
            g_win.assign(&blk.ln2.out.t().dot(&d_pre));
        }
        accumulate_bias(grads, &format!("blocks.{i}.mlp.b_in"), &d_pre);
        let d_ln2_out = d_pre.dot(&w_in.t());
        let mut d_resid_mid =
            self.ln_backward(&d_ln2_out, &blk.ln2, &format!("blocks.{i}.ln2"), grads);
        d_resid_mid += d_resid_post;

        // attention path
        let w_o = self.params.view2(&format!("blocks.{i}.attn.w_o")).unwrap();
        {
            let mut g_wo = grads.view2_mut(&format!("blocks.{i}.attn.w_o")).unwrap();
            g_wo.assign(&blk.ctx.t().dot(&d_resid_mid));
        }
        accumulate_bias(grads, &format!("blocks.{i}.attn.b_o"), &d_resid_mid);
        let d_ctx = d_resid_mid.dot(&w_o.t());

        let mut d_qkv = Array2::<F>::zeros((b * p, 3 * d));
        {
            let qkv_s = blk.qkv.as_slice().unwrap();
            let dq_s = d_qkv.as_slice_mut().unwrap();
            let dctx_s = d_ctx.as_slice().unwrap();
            let stride = 3 * d;
            let mut dprobs = vec![F::zero(); p];
            let mut dscores = vec![F::zero(); p];
            for bi in 0..b {
                for hi in 0..h {
                    let q_off = hi * k;
                    let k_off = d + hi * k;
                    let v_off = 2 * d + hi * k;
                    for ii in 0..p {
                        let dout = &dctx_s[(bi * p + ii) * d + hi * k..][..k];
                        // d probs and d v
                        for ji in 0..=ii {
                            let vrow = &qkv_s[(bi * p + ji) * stride + v_off..][..k];
                            let mut acc = F::zero();
                            for t in 0..k {
                                acc = acc + dout[t] * vrow[t];
                            }
                            dprobs[ji] = acc;
                            let w = blk.probs[[bi, hi, ii, ji]];
                            let dvrow = &mut dq_s[(bi * p + ji) * stride + v_off..][..k];
                            for t in 0..k {
                                dvrow[t] = dvrow[t] + w * dout[t];
                            }
                        }
                        // softmax backward
                        let mut dot = F::zero();
                        for ji in 0..=ii {
                            dot = dot + dprobs[ji] * blk.probs[[bi, hi, ii, ji]];
                        }
                        for ji in 0..=ii {
                            dscores[ji] = blk.probs[[bi, hi, ii, ji]] * (dprobs[ji] - dot);
                        }
                        // d q and d k
                        let dqrow_base = (bi * p + ii) * stride + q_off;
                        for ji in 0..=ii {
                            let s = dscores[ji] * scale;
                            let krow = &qkv_s[(bi * p + ji) * stride + k_off..][..k];
                            let qrow = &qkv_s[(bi * p + ii) * stride + q_off..][..k];
                            for t in 0..k {
                                dq_s[dqrow_base + t] = dq_s[dqrow_base + t] + s * krow[t];
                            }
                            let dkrow_base = (bi * p + ji) * stride + k_off;
                            for t in 0..k {
                                dq_s[dkrow_base + t] = dq_s[dkrow_base + t] + s * qrow[t];
                            }
                        }
                    }
                }
            }
        }

        let w_qkv = self.params.view2(&format!("blocks.{i}.attn.w_qkv")).unwrap();
        {
            let mut g_wqkv = grads.view2_mut(&format!("blocks.{i}.attn.w_qkv")).unwrap();
            g_wqkv.assign(&blk.ln1.out.t().dot(&d_qkv));
        }
        accumulate_bias(grads, &format!("blocks.{i}.attn.b_qkv"), &d_qkv);
        let d_ln1_out = d_qkv.dot(&w_qkv.t());
        let mut dx = self.ln_backward(&d_ln1_out, &blk.ln1, &format!("blocks.{i}.ln1"), grads);
        dx += &d_resid_mid;
        dx
    }

    /// Layer-norm backward; accumulates gain/bias gradients and returns dx.
    fn ln_backward(
        &self,
        dy: &Array2<F>,
        cache: &LnCache<F>,
        prefix: &str,
        grads: &mut ParamSet<F>,
    ) -> Array2<F> {
        let (rows, d) = dy.dim();
        let g = self.params.view1(&format!("{prefix}.g")).unwrap();
        let inv_d = F::from_f64(1.0 / d as f64);
        let mut dx = Array2::<F>::zeros((rows, d));
        {
            let dy_s = dy.as_slice().unwrap();
            let xh_s = cache.xhat.as_slice().unwrap();
            let dx_s = dx.as_slice_mut().unwrap();
            let g_s = g.as_slice().unwrap();
            for r in 0..rows {
                let dy_row = &dy_s[r * d..(r + 1) * d];
                let xh_row = &xh_s[r * d..(r + 1) * d];
                let dx_row = &mut dx_s[r * d..(r + 1) * d];
                let mut m1 = F::zero();
                let mut m2 = F::zero();
                for t in 0..d {
                    let dxh = dy_row[t] * g_s[t];
                    m1 = m1 + dxh;
                    m2 = m2 + dxh * xh_row[t];
                }
                m1 = m1 * inv_d;
                m2 = m2 * inv_d;
                let rstd = cache.rstd[r];
                for t in 0..d {
                    let dxh = dy_row[t] * g_s[t];
                    dx_row[t] = rstd * (dxh - m1 - xh_row[t] * m2);
                }
            }
        }
        // gain and bias gradients
        {
            let mut gg = grads.view1_mut(&format!("{prefix}.g")).unwrap();
            for t in 0..d {
                let mut acc = F::zero();
                for r in 0..rows {
                    acc = acc + dy[[r, t]] * cache.xhat[[r, t]];
                }
                gg[t] = gg[t] + acc;
            }
        }
        {
            let mut gb = grads.view1_mut(&format!("{prefix}.b")).unwrap();
            for t in 0..d {
                let mut acc = F::zero();
                for r in 0..rows {
                    acc = acc + dy[[r, t]];
                }
                gb[t] = gb[t] + acc;
            }
        }
        dx
    }
}

fn add_row_bias<F: Scalar>(x: &mut Array2<F>, bias: &ArrayView1<F>) {
    let (rows, d) = x.dim();
    let xs = x.as_slice_mut().unwrap();
    let bs = bias.as_slice().unwrap();
    for r in 0..rows {
        let row = &mut xs[r * d..(r + 1) * d];
        for t in 0..d {
            row[t] = row[t] + bs[t];
        }
    }
}

fn accumulate_bias<F: Scalar>(grads: &mut ParamSet<F>, name: &str, dy: &Array2<F>) {
    let mut gb = grads.view1_mut(name).unwrap();
    let (rows, d) = dy.dim();
    for t in 0..d {
        let mut acc = F::zero();
        for r in 0..rows {
            acc = acc + dy[[r, t]];
        }
        gb[t] = gb[t] + acc;
    }
}
