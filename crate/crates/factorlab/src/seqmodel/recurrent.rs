//! Stacked recurrent sequence models: vanilla tanh RNN and LSTM.
//!
//! Both share the layout `embed -> stacked cells -> linear readout` and a
//! hand-written backward-through-time pass.  Hidden (and cell) states start
//! at zero each sequence.

use ndarray::prelude::*;

use super::params::{Init, LayoutBuilder};
use super::{
    cross_entropy_mean, Arch, CapturePoint, ForwardOutput, ModelConfig, ParamSet, Scalar,
    NO_TARGET,
};
use crate::{Error, Result};

pub struct RecurrentNet<F: Scalar> {
    cfg: ModelConfig,
    params: ParamSet<F>,
    gates: usize, // 1 for rnn, 4 for lstm (columns per hidden unit)
}

/// Per-(layer, step) forward state kept for backward-through-time.
struct Step<F> {
    h: Array2<F>,
    // LSTM only:
    c: Array2<F>,
    i: Array2<F>,
    f: Array2<F>,
    g: Array2<F>,
    o: Array2<F>,
    tc: Array2<F>,
}

struct Trace<F> {
    embedded: Array2<F>, // (B*P, d)
    steps: Vec<Vec<Step<F>>>, // [layer][t]
}

impl<F: Scalar> RecurrentNet<F> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let gates = match cfg.arch {
            Arch::Lstm => 4,
            Arch::Rnn => 1,
            Arch::Transformer => {
                return Err(Error::InvalidParameter(
                    "recurrent net built with transformer config".into(),
                ))
            }
        };
        let d = cfg.d_model;
        let mut b = LayoutBuilder::new();
        b.add("embed.tok", &[cfg.vocab, d], Init::Normal002);
        for j in 0..cfg.n_layers {
            b.add(format!("layers.{j}.w_x"), &[d, gates * d], Init::Normal002);
            b.add(format!("layers.{j}.w_h"), &[d, gates * d], Init::Normal002);
            b.add(format!("layers.{j}.b"), &[gates * d], Init::Zero);
        }
        b.add("unembed.w", &[d, cfg.vocab], Init::Normal002);
        b.add("unembed.b", &[cfg.vocab], Init::Zero);
        Ok(Self {
            cfg,
            params: b.build(cfg.init_seed),
            gates,
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
        let d = self.cfg.d_model;
        let mut captures = Vec::with_capacity(points.len());
        for &point in points {
            let arr: Array3<F> = match point {
                CapturePoint::Embed => Array3::from_shape_vec(
                    (b, p, d),
                    trace.embedded.clone().into_raw_vec_and_offset().0,
                )
                .unwrap(),
                CapturePoint::ResidPost(k) => stack_steps(&trace.steps[k], b, p, d),
                CapturePoint::FinalPrenorm => {
                    stack_steps(&trace.steps[self.cfg.n_layers - 1], b, p, d)
                }
                CapturePoint::Logits => Array3::from_shape_vec(
                    (b, p, self.cfg.vocab),
                    logits.clone().into_raw_vec_and_offset().0,
                )
                .unwrap(),
            };
            captures.push((point, arr));
        }
        let logits3 = Array3::from_shape_vec(
            (b, p, self.cfg.vocab),
            logits.into_raw_vec_and_offset().0,
        )
        .unwrap();
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
        let logits3 = Array3::from_shape_vec(
            (b, p, self.cfg.vocab),
            logits.clone().into_raw_vec_and_offset().0,
        )
        .unwrap();
        let loss = cross_entropy_mean(&logits3, targets)?;
        let grads = self.backward(&tokens, targets, &logits, &trace, b, p);
        Ok((loss, grads))
    }

    fn run(&self, tokens: &ArrayView2<u32>, b: usize, p: usize) -> (Array2<F>, Trace<F>) {
        let d = self.cfg.d_model;
        let tok = self.params.view2("embed.tok").unwrap();
        let mut embedded = Array2::<F>::zeros((b * p, d));
        for i in 0..b {
            for j in 0..p {
                embedded.row_mut(i * p + j).assign(&tok.row(tokens[[i, j]] as usize));
            }
        }

        let mut steps: Vec<Vec<Step<F>>> = Vec::with_capacity(self.cfg.n_layers);
        for _ in 0..self.cfg.n_layers {
            steps.push(Vec::with_capacity(p));
        }

        for t in 0..p {
            for j in 0..self.cfg.n_layers {
                // input at time t for layer j
                let input: Array2<F> = if j == 0 {
                    let mut x = Array2::zeros((b, d));
                    for i in 0..b {
                        x.row_mut(i).assign(&embedded.row(i * p + t));
                    }
                    x
                } else {
                    steps[j - 1][t].h.clone()
                };
                let h_prev: Array2<F> = if t == 0 {
                    Array2::zeros((b, d))
                } else {
                    steps[j][t - 1].h.clone()
                };
                let w_x = self.params.view2(&format!("layers.{j}.w_x")).unwrap();
                let w_h = self.params.view2(&format!("layers.{j}.w_h")).unwrap();
                let bias = self.params.view1(&format!("layers.{j}.b")).unwrap();
                let mut z = input.dot(&w_x) + h_prev.dot(&w_h);
                {
                    let zs = z.as_slice_mut().unwrap();
                    let bs = bias.as_slice().unwrap();
                    let width = self.gates * d;
                    for r in 0..b {
                        let row = &mut zs[r * width..(r + 1) * width];
                        for q in 0..width {
                            row[q] = row[q] + bs[q];
                        }
                    }
                }
                let step = if self.gates == 1 {
                    let h = z.mapv(|v| v.tanh());
                    Step {
                        h,
                        c: Array2::zeros((0, 0)),
                        i: Array2::zeros((0, 0)),
                        f: Array2::zeros((0, 0)),
                        g: Array2::zeros((0, 0)),
                        o: Array2::zeros((0, 0)),
                        tc: Array2::zeros((0, 0)),
                    }
                } else {
                    let c_prev: Array2<F> = if t == 0 {
                        Array2::zeros((b, d))
                    } else {
                        steps[j][t - 1].c.clone()
                    };
                    let mut gi = Array2::<F>::zeros((b, d));
                    let mut gf = Array2::<F>::zeros((b, d));
                    let mut gg = Array2::<F>::zeros((b, d));
                    let mut go = Array2::<F>::zeros((b, d));
                    let mut c = Array2::<F>::zeros((b, d));
                    let mut tc = Array2::<F>::zeros((b, d));
                    let mut hh = Array2::<F>::zeros((b, d));
                    for r in 0..b {
                        for q in 0..d {
                            let zi = sigmoid(z[[r, q]]);
                            let zf = sigmoid(z[[r, d + q]]);
                            let zg = z[[r, 2 * d + q]].tanh();
                            let zo = sigmoid(z[[r, 3 * d + q]]);
                            let cv = zf * c_prev[[r, q]] + zi * zg;
                            let tcv = cv.tanh();
                            gi[[r, q]] = zi;
                            gf[[r, q]] = zf;
                            gg[[r, q]] = zg;
                            go[[r, q]] = zo;
                            c[[r, q]] = cv;
                            tc[[r, q]] = tcv;
                            hh[[r, q]] = zo * tcv;
                        }
                    }
                    Step {
                        h: hh,
                        c,
                        i: gi,
                        f: gf,
                        g: gg,
                        o: go,
                        tc,
                    }
                };
                steps[j].push(step);
            }
        }

        // readout from the top layer at every position
        let wu = self.params.view2("unembed.w").unwrap();
        let bu = self.params.view1("unembed.b").unwrap();
        let mut h_all = Array2::<F>::zeros((b * p, d));
        let top = self.cfg.n_layers - 1;
        for t in 0..p {
            for i in 0..b {
                h_all.row_mut(i * p + t).assign(&steps[top][t].h.row(i));
            }
        }
        let mut logits = h_all.dot(&wu);
        {
            let ls = logits.as_slice_mut().unwrap();
            let bs = bu.as_slice().unwrap();
            let v = self.cfg.vocab;
            for r in 0..b * p {
                let row = &mut ls[r * v..(r + 1) * v];
                for q in 0..v {
                    row[q] = row[q] + bs[q];
                }
            }
        }
        (logits, Trace { embedded, steps })
    }

    fn backward(
        &self,
        tokens: &ArrayView2<u32>,
        targets: ArrayView2<u32>,
        logits: &Array2<F>,
        trace: &Trace<F>,
        b: usize,
        p: usize,
    ) -> ParamSet<F> {
        let d = self.cfg.d_model;
        let v = self.cfg.vocab;
        let layers = self.cfg.n_layers;
        let mut grads = self.params.zeros_like();

        let mut count = 0usize;
        for i in 0..b {
            for j in 0..p {
                if targets[[i, j]] != NO_TARGET {
                    count += 1;
                }
            }
        }
        let inv_count = F::from_f64(1.0 / count.max(1) as f64);
        let mut dlogits = Array2::<F>::zeros((b * p, v));
        for i in 0..b {
            for j in 0..p {
                let t = targets[[i, j]];
                if t == NO_TARGET {
                    continue;
                }
                let r = i * p + j;
                let lrow = logits.row(r);
                let mut maxv = F::neg_infinity();
                for &x in lrow.iter() {
                    if x > maxv {
                        maxv = x;
                    }
                }
                let mut denom = F::zero();
                for &x in lrow.iter() {
                    denom = denom + (x - maxv).exp();
                }
                let inv = F::one() / denom;
                let mut drow = dlogits.row_mut(r);
                for q in 0..v {
                    drow[q] = (lrow[q] - maxv).exp() * inv * inv_count;
                }
                drow[t as usize] = drow[t as usize] - inv_count;
            }
        }

        // readout gradients and dh into the top layer
        let top = layers - 1;
        let mut h_all = Array2::<F>::zeros((b * p, d));
        for t in 0..p {
            for i in 0..b {
                h_all.row_mut(i * p + t).assign(&trace.steps[top][t].h.row(i));
            }
        }
        {
            let mut g_wu = grads.view2_mut("unembed.w").unwrap();
            g_wu.assign(&h_all.t().dot(&dlogits));
        }
        {
            let mut g_bu = grads.view1_mut("unembed.b").unwrap();
            for q in 0..v {
                let mut acc = F::zero();
                for r in 0..b * p {
                    acc = acc + dlogits[[r, q]];
                }
                g_bu[q] = acc;
            }
        }
        let wu = self.params.view2("unembed.w").unwrap();
        let dh_readout = dlogits.dot(&wu.t()); // (B*P, d)

        // BPTT
        let mut d_embedded = Array2::<F>::zeros((b * p, d));
        // recurrent carries per layer
        let mut dh_rec: Vec<Array2<F>> = (0..layers).map(|_| Array2::zeros((b, d))).collect();
        let mut dc_rec: Vec<Array2<F>> = (0..layers).map(|_| Array2::zeros((b, d))).collect();
        for t in (0..p).rev() {
            // d_from_above[j]: input-gradient of layer j+1 at time t
            let mut d_from_above: Array2<F> = Array2::zeros((b, d));
            for j in (0..layers).rev() {
                let mut dh = dh_rec[j].clone();
                if j == top {
                    for i in 0..b {
                        let mut row = dh.row_mut(i);
                        row += &dh_readout.row(i * p + t);
                    }
                } else {
                    dh += &d_from_above;
                }

                let step = &trace.steps[j][t];
                // gate-space gradient
                let dz: Array2<F> = if self.gates == 1 {
                    let mut dz = dh;
                    for r in 0..b {
                        for q in 0..d {
                            let h = step.h[[r, q]];
                            dz[[r, q]] = dz[[r, q]] * (F::one() - h * h);
                        }
                    }
                    dz
                } else {
                    let c_prev: Array2<F> = if t == 0 {
                        Array2::zeros((b, d))
                    } else {
                        trace.steps[j][t - 1].c.clone()
                    };
                    let mut dz = Array2::<F>::zeros((b, 4 * d));
                    let mut dc_next = Array2::<F>::zeros((b, d));
                    for r in 0..b {
                        for q in 0..d {
                            let dhv = dh[[r, q]];
                            let o = step.o[[r, q]];
                            let tc = step.tc[[r, q]];
                            let dov = dhv * tc;
                            let mut dc = dhv * o * (F::one() - tc * tc) + dc_rec[j][[r, q]];
                            let i_g = step.i[[r, q]];
                            let f_g = step.f[[r, q]];
                            let g_g = step.g[[r, q]];
                            let div = dc * g_g;
                            let dgv = dc * i_g;
                            let dfv = dc * c_prev[[r, q]];
                            dc = dc * f_g;
                            dz[[r, q]] = div * i_g * (F::one() - i_g);
                            dz[[r, d + q]] = dfv * f_g * (F::one() - f_g);
                            dz[[r, 2 * d + q]] = dgv * (F::one() - g_g * g_g);
                            dz[[r, 3 * d + q]] = dov * o * (F::one() - o);
                            dc_next[[r, q]] = dc;
                        }
                    }
                    dc_rec[j] = dc_next;
                    dz
                };

                // parameter gradients
                let input: Array2<F> = if j == 0 {
                    let mut x = Array2::zeros((b, d));
                    for i in 0..b {
                        x.row_mut(i).assign(&trace.embedded.row(i * p + t));
                    }
                    x
                } else {
                    trace.steps[j - 1][t].h.clone()
                };
                let h_prev: Array2<F> = if t == 0 {
                    Array2::zeros((b, d))
                } else {
                    trace.steps[j][t - 1].h.clone()
                };
                {
                    let mut g_wx = grads.view2_mut(&format!("layers.{j}.w_x")).unwrap();
                    let upd = input.t().dot(&dz);
                    g_wx += &upd;
                }
                {
                    let mut g_wh = grads.view2_mut(&format!("layers.{j}.w_h")).unwrap();
                    let upd = h_prev.t().dot(&dz);
                    g_wh += &upd;
                }
                {
                    let mut g_b = grads.view1_mut(&format!("layers.{j}.b")).unwrap();
                    for q in 0..self.gates * d {
                        let mut acc = F::zero();
                        for r in 0..b {
                            acc = acc + dz[[r, q]];
                        }
                        g_b[q] = g_b[q] + acc;
                    }
                }
                let w_x = self.params.view2(&format!("layers.{j}.w_x")).unwrap();
                let w_h = self.params.view2(&format!("layers.{j}.w_h")).unwrap();
                let d_input = dz.dot(&w_x.t());
                dh_rec[j] = dz.dot(&w_h.t());
                if j == 0 {
                    for i in 0..b {
                        let mut row = d_embedded.row_mut(i * p + t);
                        row += &d_input.row(i);
                    }
                } else {
                    d_from_above = d_input;
                }
            }
        }

        // embedding gradient
        {
            let mut g_tok = grads.view2_mut("embed.tok").unwrap();
            for i in 0..b {
                for j in 0..p {
                    let t = tokens[[i, j]] as usize;
                    let mut dst = g_tok.row_mut(t);
                    dst += &d_embedded.row(i * p + j);
                }
            }
        }
        grads
    }
}

fn stack_steps<F: Scalar>(steps: &[Step<F>], b: usize, p: usize, d: usize) -> Array3<F> {
    let mut out = Array3::zeros((b, p, d));
    for (t, step) in steps.iter().enumerate() {
        for i in 0..b {
            out.slice_mut(s![i, t, ..]).assign(&step.h.row(i));
        }
    }
    out
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}
