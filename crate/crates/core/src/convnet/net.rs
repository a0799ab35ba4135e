use alloc::vec::Vec;

use rand::Rng as _;

use super::layers::{self, Layer, Plan};
use super::params::{zeros_like, Gradients, NetworkParams};
use super::spec::{DropInference, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Train or test behaviour of a forward pass.
pub enum Pass<'a> {
    /// Per-example DropConnect masks (and random crops) drawn from the rng.
    Train(&'a mut Rng),
    Test,
}

/// A network architecture with its precomputed layer plan.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    plan: Plan,
}

/// Per-example scratch buffers, reused across examples.
struct Workspace {
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    cols: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
    masks: Vec<Option<Vec<f64>>>,
    grad: Vec<f64>,
    grad_next: Vec<f64>,
    dcol: Vec<f64>,
}

fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = libm::exp(logits[0] - m);
    let e1 = libm::exp(logits[1] - m);
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// `-ln softmax(logits)[class]`, computed stably.
fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + libm::log(libm::exp(logits[0] - m) + libm::exp(logits[1] - m));
    lse - logits[class]
}

impl Network {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Network { spec: spec.clone(), plan: Plan::build(spec)? })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Input length the network expects (before cropping).
    pub fn input_len(&self) -> usize {
        self.spec.input.iter().product()
    }

    fn workspace(&self) -> Workspace {
        let mut cols = Vec::new();
        let mut argmax = Vec::new();
        let mut masks = Vec::new();
        let mut max_col = 0;
        for layer in &self.plan.layers {
            match layer {
                Layer::Conv(w) | Layer::Local(w) => {
                    cols.push(alloc::vec![0.0; w.taps * w.positions]);
                    max_col = max_col.max(w.taps * w.positions);
                }
                Layer::Pool(p) => argmax.push(alloc::vec![0u32; p.out_shape.iter().product()]),
                Layer::Dense { .. } => masks.push(None),
                Layer::Relu => {}
            }
        }
        let widest = self.plan.sizes.iter().copied().chain([self.plan.input.iter().product()]).max().unwrap_or(0);
        Workspace {
            input: alloc::vec![0.0; self.plan.input.iter().product()],
            acts: self.plan.sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
            cols,
            argmax,
            masks,
            grad: Vec::with_capacity(widest),
            grad_next: Vec::with_capacity(widest),
            dcol: Vec::with_capacity(max_col),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::input(alloc::format!(
                "observation has {} values, network expects {:?}",
                x.len(),
                self.spec.input
            )));
        }
        Ok(())
    }

    /// Copy `x` into the workspace input, cropping if configured.
    fn load_input(&self, x: &[f64], ws: &mut Workspace, rng: Option<&mut Rng>) {
        let Some(crop) = self.spec.crop_px else {
            ws.input.copy_from_slice(x);
            return;
        };
        let [c, d, h, w] = self.spec.input;
        let cd = if self.spec.is_volumetric() { crop } else { 1 };
        let (oz, oy, ox) = match rng {
            Some(rng) => (rng.random_range(0..=d - cd), rng.random_range(0..=h - crop), rng.random_range(0..=w - crop)),
            None => ((d - cd) / 2, (h - crop) / 2, (w - crop) / 2),
        };
        let mut n = 0;
        for ci in 0..c {
            for z in 0..cd {
                for y in 0..crop {
                    let row = ((ci * d + oz + z) * h + oy + y) * w + ox;
                    ws.input[n..n + crop].copy_from_slice(&x[row..row + crop]);
                    n += crop;
                }
            }
        }
    }

    /// DropConnect masks for every dense layer, or `None` when the rate is 0.
    fn draw_masks(&self, ws: &mut Workspace, rng: &mut Rng) {
        let rate = self.spec.dropconnect_rate;
        let mut m = 0;
        for layer in &self.plan.layers {
            if let Layer::Dense { n_in, n_out } = *layer {
                ws.masks[m] = (rate > 0.0).then(|| {
                    let mut mask = ws.masks[m].take().unwrap_or_default();
                    mask.clear();
                    mask.extend((0..n_in * n_out).map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 }));
                    mask
                });
                m += 1;
            }
        }
    }

    fn clear_masks(ws: &mut Workspace) {
        for m in &mut ws.masks {
            *m = None;
        }
    }

    /// Run one example through the network; returns the logits. Dense
    /// layers use their mask when present, otherwise weights scaled by
    /// `dense_scale`.
    fn run<'w>(&self, params: &NetworkParams, ws: &'w mut Workspace, dense_scale: f64) -> &'w [f64] {
        let (mut t, mut c, mut p, mut m) = (0, 0, 0, 0);
        for (i, layer) in self.plan.layers.iter().enumerate() {
            let (before, rest) = ws.acts.split_at_mut(i);
            let input: &[f64] = if i == 0 { &ws.input } else { &before[i - 1] };
            let out = &mut rest[0];
            match layer {
                Layer::Conv(win) => {
                    layers::im2col(win, input, &mut ws.cols[c]);
                    let pt = &params.tensors[t];
                    layers::conv_forward(win, &pt.weights, &pt.bias, &ws.cols[c], out);
                    c += 1;
                    t += 1;
                }
                Layer::Local(win) => {
                    layers::im2col(win, input, &mut ws.cols[c]);
                    let pt = &params.tensors[t];
                    layers::local_forward(win, &pt.weights, &pt.bias, &ws.cols[c], out);
                    c += 1;
                    t += 1;
                }
                Layer::Pool(pw) => {
                    layers::pool_forward(pw, input, out, &mut ws.argmax[p]);
                    p += 1;
                }
                Layer::Relu => {
                    for (o, &x) in out.iter_mut().zip(input) {
                        *o = x.max(0.0);
                    }
                }
                Layer::Dense { n_in, .. } => {
                    let pt = &params.tensors[t];
                    match &ws.masks[m] {
                        Some(mask) => {
                            for (o, (w_o, m_o)) in
                                out.iter_mut().zip(pt.weights.chunks_exact(*n_in).zip(mask.chunks_exact(*n_in)))
                            {
                                *o = w_o.iter().zip(m_o).zip(input).map(|((w, m), x)| m * w * x).sum::<f64>();
                            }
                        }
                        None => {
                            for (o, w_o) in out.iter_mut().zip(pt.weights.chunks_exact(*n_in)) {
                                *o = w_o.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                            }
                            if dense_scale != 1.0 {
                                for o in out.iter_mut() {
                                    *o *= dense_scale;
                                }
                            }
                        }
                    }
                    for (o, b) in out.iter_mut().zip(&pt.bias) {
                        *o += b;
                    }
                    m += 1;
                    t += 1;
                }
            }
        }
        ws.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Backpropagate `dlogits` (already in `ws.grad`) and accumulate into
    /// `grads`.
    fn backprop(&self, params: &NetworkParams, ws: &mut Workspace, dense_scale: f64, grads: &mut Gradients) {
        let mut t = params.tensors.len();
        let mut c = ws.cols.len();
        let mut p = ws.argmax.len();
        let mut m = ws.masks.len();
        for (i, layer) in self.plan.layers.iter().enumerate().rev() {
            let input: &[f64] = if i == 0 { &ws.input } else { &ws.acts[i - 1] };
            let need_input_grad = i > 0;
            let in_len = input.len();
            match layer {
                Layer::Conv(win) | Layer::Local(win) => {
                    t -= 1;
                    c -= 1;
                    let pt = &params.tensors[t];
                    let g = &mut grads[t];
                    let dcol = if need_input_grad {
                        ws.dcol.resize(win.taps * win.positions, 0.0);
                        Some(ws.dcol.as_mut_slice())
                    } else {
                        None
                    };
                    if matches!(layer, Layer::Conv(_)) {
                        layers::conv_backward(
                            win,
                            &pt.weights,
                            &ws.cols[c],
                            &ws.grad,
                            &mut g.weights,
                            &mut g.bias,
                            dcol,
                        );
                    } else {
                        layers::local_backward(
                            win,
                            &pt.weights,
                            &ws.cols[c],
                            &ws.grad,
                            &mut g.weights,
                            &mut g.bias,
                            dcol,
                        );
                    }
                    if need_input_grad {
                        ws.grad_next.clear();
                        ws.grad_next.resize(in_len, 0.0);
                        layers::col2im(win, &ws.dcol, &mut ws.grad_next);
                    }
                }
                Layer::Pool(_) => {
                    p -= 1;
                    ws.grad_next.resize(in_len, 0.0);
                    layers::pool_backward(&ws.argmax[p], &ws.grad, &mut ws.grad_next);
                }
                Layer::Relu => {
                    let out = &ws.acts[i];
                    ws.grad_next.clear();
                    ws.grad_next.extend(ws.grad.iter().zip(out).map(|(&g, &o)| if o > 0.0 { g } else { 0.0 }));
                }
                Layer::Dense { n_in, .. } => {
                    t -= 1;
                    m -= 1;
                    let pt = &params.tensors[t];
                    let g = &mut grads[t];
                    for (gb, &d) in g.bias.iter_mut().zip(&ws.grad) {
                        *gb += d;
                    }
                    ws.grad_next.clear();
                    ws.grad_next.resize(in_len, 0.0);
                    let rows = pt.weights.chunks_exact(*n_in).zip(g.weights.chunks_exact_mut(*n_in)).zip(&ws.grad);
                    match &ws.masks[m] {
                        Some(mask) => {
                            for (((w_o, gw_o), &d), m_o) in rows.zip(mask.chunks_exact(*n_in)) {
                                for ((((gw, &w), &mk), &x), dx) in
                                    gw_o.iter_mut().zip(w_o).zip(m_o).zip(input).zip(ws.grad_next.iter_mut())
                                {
                                    *gw += d * mk * x;
                                    *dx += d * mk * w;
                                }
                            }
                        }
                        None => {
                            for ((w_o, gw_o), &d) in rows {
                                let ds = d * dense_scale;
                                for (((gw, &w), &x), dx) in
                                    gw_o.iter_mut().zip(w_o).zip(input).zip(ws.grad_next.iter_mut())
                                {
                                    *gw += ds * x;
                                    *dx += ds * w;
                                }
                            }
                        }
                    }
                }
            }
            if need_input_grad {
                core::mem::swap(&mut ws.grad, &mut ws.grad_next);
            }
        }
    }

    fn keep(&self) -> f64 {
        1.0 - self.spec.dropconnect_rate
    }

    fn check_params(&self, params: &NetworkParams) -> Result<()> {
        if params.spec != self.spec {
            return Err(Error::input("parameters were built for a different network spec"));
        }
        Ok(())
    }

    /// Two-class softmax probabilities for each input.
    pub fn forward(&self, params: &NetworkParams, batch: &[&[f64]], pass: Pass<'_>) -> Result<Vec<[f64; 2]>> {
        self.check_params(params)?;
        for x in batch {
            self.check_input(x)?;
        }
        let mut ws = self.workspace();
        let mut out = Vec::with_capacity(batch.len());
        match pass {
            Pass::Train(rng) => {
                for x in batch {
                    self.load_input(x, &mut ws, Some(&mut *rng));
                    self.draw_masks(&mut ws, rng);
                    out.push(softmax2(self.run(params, &mut ws, 1.0)));
                }
            }
            Pass::Test => {
                for x in batch {
                    out.push(self.test_probs(params, x, &mut ws));
                }
            }
        }
        Ok(out)
    }

    fn test_probs(&self, params: &NetworkParams, x: &[f64], ws: &mut Workspace) -> [f64; 2] {
        self.load_input(x, ws, None);
        match self.spec.dropconnect_inference {
            DropInference::Sampled { samples, seed } if self.spec.dropconnect_rate > 0.0 => {
                let mut rng = rng::rng_for(seed, rng::stream::DROPCONNECT, u64::MAX);
                let mut acc = [0.0; 2];
                for _ in 0..samples {
                    self.draw_masks(ws, &mut rng);
                    let p = softmax2(self.run(params, ws, 1.0));
                    acc[0] += p[0];
                    acc[1] += p[1];
                }
                Self::clear_masks(ws);
                [acc[0] / samples as f64, acc[1] / samples as f64]
            }
            _ => {
                Self::clear_masks(ws);
                softmax2(self.run(params, ws, self.keep()))
            }
        }
    }

    /// Positive-class probability of one observation (test mode).
    pub fn predict(&self, params: &NetworkParams, x: &[f64]) -> Result<f64> {
        Ok(self.forward(params, &[x], Pass::Test)?[0][1])
    }

    /// Positive-class probabilities of many observations (test mode).
    pub fn predict_many(&self, params: &NetworkParams, xs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.forward(params, xs, Pass::Test)?.into_iter().map(|p| p[1]).collect())
    }

    /// Test-mode output of every layer in order, tagged `"conv"`, `"local"`,
    /// `"pool"`, `"relu"` or `"dense"`. The last entry holds the logits.
    pub fn layer_outputs(&self, params: &NetworkParams, x: &[f64]) -> Result<Vec<(&'static str, Vec<f64>)>> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut ws = self.workspace();
        self.load_input(x, &mut ws, None);
        self.run(params, &mut ws, self.keep());
        let names = self.plan.layers.iter().map(|l| match l {
            Layer::Conv(_) => "conv",
            Layer::Local(_) => "local",
            Layer::Pool(_) => "pool",
            Layer::Relu => "relu",
            Layer::Dense { .. } => "dense",
        });
        Ok(names.zip(ws.acts).collect())
    }

    /// Mean cross-entropy over the batch plus `weight_decay · ½‖W‖²` over
    /// all weights (not biases), and its gradient.
    pub fn loss_and_gradients(
        &self,
        params: &NetworkParams,
        batch: &[&[f64]],
        labels: &[usize],
        pass: Pass<'_>,
        weight_decay: f64,
    ) -> Result<(f64, Gradients)> {
        self.check_params(params)?;
        if batch.is_empty() || batch.len() != labels.len() {
            return Err(Error::input("batch and labels must be non-empty and of equal length"));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::input("labels must be 0 or 1"));
        }
        for x in batch {
            self.check_input(x)?;
        }
        let mut grads = zeros_like(&params.tensors);
        let mut ws = self.workspace();
        let inv_n = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let (mut rng, scale) = match pass {
            Pass::Train(rng) => (Some(rng), 1.0),
            Pass::Test => (None, self.keep()),
        };
        for (x, &y) in batch.iter().zip(labels) {
            match rng.as_deref_mut() {
                Some(rng) => {
                    self.load_input(x, &mut ws, Some(&mut *rng));
                    self.draw_masks(&mut ws, rng);
                }
                None => {
                    self.load_input(x, &mut ws, None);
                    Self::clear_masks(&mut ws);
                }
            }
            let logits = self.run(params, &mut ws, scale);
            loss += cross_entropy(logits, y) * inv_n;
            let p = softmax2(logits);
            ws.grad.clear();
            ws.grad.extend([(p[0] - (y == 0) as u8 as f64) * inv_n, (p[1] - (y == 1) as u8 as f64) * inv_n]);
            self.backprop(params, &mut ws, scale, &mut grads);
        }
        if weight_decay > 0.0 {
            for (g, pt) in grads.iter_mut().zip(&params.tensors) {
                for (gw, &w) in g.weights.iter_mut().zip(&pt.weights) {
                    loss += 0.5 * weight_decay * w * w;
                    *gw += weight_decay * w;
                }
            }
        }
        Ok((loss, grads))
    }
}
