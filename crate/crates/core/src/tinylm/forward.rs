use super::linalg::{dot, mat_vec, mat_vec_acc, outer_acc, softmax_in_place, vec_mat_acc};
use super::{CompiledPlan, InterventionPlan, Model};
use crate::corpus::{Label, Task};
use crate::error::{Error, Result};
use crate::trace::ActivationTrace;

/// Per-task logits plus the FFN activation trace of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Indexed by [`Task::index`].
    pub logits: [Vec<f64>; 2],
    pub trace: ActivationTrace,
}

impl ForwardOutput {
    pub fn task_logits(&self, task: Task) -> &[f64] {
        &self.logits[task.index()]
    }
}

/// Intermediate values of one block, kept for backpropagation.
pub(crate) struct LayerCache {
    x_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][query][key]`, zero above the diagonal.
    probs: Vec<f64>,
    o: Vec<f64>,
    /// Residual stream after attention, the FFN input.
    a: Vec<f64>,
    hpre: Vec<f64>,
    /// Post-ReLU, post-intervention FFN activations `[token][neuron]`.
    pub(crate) n: Vec<f64>,
}

pub(crate) struct Cache {
    tokens: Vec<u32>,
    pub(crate) layers: Vec<LayerCache>,
    /// Final-token representation read by the heads.
    y: Vec<f64>,
    pub(crate) logits: [Vec<f64>; 2],
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

impl Model {
    pub(crate) fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        let c = &self.config;
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if tokens.len() > c.max_seq {
            return Err(Error::InvalidInput(format!(
                "{} tokens exceed max_seq {}",
                tokens.len(),
                c.max_seq
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
            return Err(Error::InvalidInput(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    /// Runs the model, applying `plan` to the FFN hidden activations of the
    /// named layers at every token position.
    pub fn forward(&self, tokens: &[u32], plan: Option<&InterventionPlan>) -> Result<ForwardOutput> {
        let cache = self.run(tokens, plan)?;
        let trace = ActivationTrace::from_layers(
            0,
            tokens.len(),
            self.config.d_ff,
            cache
                .layers
                .iter()
                .map(|l| l.n.iter().map(|&x| x as f32).collect())
                .collect(),
        );
        Ok(ForwardOutput {
            logits: cache.logits,
            trace,
        })
    }

    /// Logits of one task without materializing a trace.
    pub fn logits(&self, tokens: &[u32], task: Task, plan: Option<&InterventionPlan>) -> Result<Vec<f64>> {
        let [e, r] = self.run(tokens, plan)?.logits;
        Ok(match task {
            Task::Emotion => e,
            Task::Rhetoric => r,
        })
    }

    /// Argmax label of `task`, ties broken by lowest label index.
    pub fn predict_label(&self, tokens: &[u32], task: Task, plan: Option<&InterventionPlan>) -> Result<Label> {
        let logits = self.logits(tokens, task, plan)?;
        Ok(task.labels()[argmax(&logits)])
    }

    pub(crate) fn run(&self, tokens: &[u32], plan: Option<&InterventionPlan>) -> Result<Cache> {
        self.check_tokens(tokens)?;
        let compiled = match plan {
            Some(p) if !p.is_empty() => {
                p.validate(&self.config)?;
                Some(p.compile(self.config.n_layers))
            }
            _ => None,
        };
        Ok(self.run_compiled(tokens, compiled.as_ref()))
    }

    pub(crate) fn run_compiled(&self, tokens: &[u32], plan: Option<&CompiledPlan>) -> Cache {
        let c = &self.config;
        let (d, f, t_len) = (c.d_model, c.d_ff, tokens.len());
        let (n_heads, dh) = (c.n_heads, c.d_model / c.n_heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let p = &self.params;
        let lay = &self.layout;

        let mut x = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let e = &p[lay.tok_emb + tok as usize * d..][..d];
            let pe = &p[lay.pos_emb + t * d..][..d];
            for ((xi, a), b) in x[t * d..(t + 1) * d].iter_mut().zip(e).zip(pe) {
                *xi = a + b;
            }
        }

        let mut layers = Vec::with_capacity(c.n_layers);
        for (l, off) in lay.layers.iter().enumerate() {
            let mut q = vec![0.0; t_len * d];
            let mut k = vec![0.0; t_len * d];
            let mut v = vec![0.0; t_len * d];
            for t in 0..t_len {
                let ut = &x[t * d..(t + 1) * d];
                vec_mat_acc(ut, &p[off.wq..off.wq + d * d], &mut q[t * d..(t + 1) * d]);
                vec_mat_acc(ut, &p[off.wk..off.wk + d * d], &mut k[t * d..(t + 1) * d]);
                vec_mat_acc(ut, &p[off.wv..off.wv + d * d], &mut v[t * d..(t + 1) * d]);
            }
            let mut probs = vec![0.0; n_heads * t_len * t_len];
            let mut o = vec![0.0; t_len * d];
            for h in 0..n_heads {
                let hs = h * dh;
                for i in 0..t_len {
                    let row = &mut probs[(h * t_len + i) * t_len..][..i + 1];
                    let qi = &q[i * d + hs..i * d + hs + dh];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = dot(qi, &k[j * d + hs..j * d + hs + dh]) * scale;
                    }
                    softmax_in_place(row);
                    let oi = &mut o[i * d + hs..i * d + hs + dh];
                    for (j, &pij) in row.iter().enumerate() {
                        for (ov, vv) in oi.iter_mut().zip(&v[j * d + hs..j * d + hs + dh]) {
                            *ov += pij * vv;
                        }
                    }
                }
            }
            let mut a = x.clone();
            for t in 0..t_len {
                vec_mat_acc(
                    &o[t * d..(t + 1) * d],
                    &p[off.wo..off.wo + d * d],
                    &mut a[t * d..(t + 1) * d],
                );
            }
            let mut hpre = vec![0.0; t_len * f];
            let mut n = vec![0.0; t_len * f];
            let b_in = &p[off.b_in..off.b_in + f];
            let b_out = &p[off.b_out..off.b_out + d];
            let mut x_out = a.clone();
            for t in 0..t_len {
                let ht = &mut hpre[t * f..(t + 1) * f];
                ht.copy_from_slice(b_in);
                vec_mat_acc(&a[t * d..(t + 1) * d], &p[off.w_in..off.w_in + d * f], ht);
                let nt = &mut n[t * f..(t + 1) * f];
                for (nv, hv) in nt.iter_mut().zip(ht.iter()) {
                    *nv = if *hv > 0.0 { *hv } else { 0.0 };
                }
                if let Some(plan) = plan {
                    plan.apply(l, nt);
                }
                let xt = &mut x_out[t * d..(t + 1) * d];
                for (xv, bv) in xt.iter_mut().zip(b_out) {
                    *xv += bv;
                }
                vec_mat_acc(nt, &p[off.w_out..off.w_out + f * d], xt);
            }
            layers.push(LayerCache {
                x_in: std::mem::replace(&mut x, x_out),
                q,
                k,
                v,
                probs,
                o,
                a,
                hpre,
                n,
            });
        }

        let y = x[(t_len - 1) * d..].to_vec();
        let logits = [Task::Emotion, Task::Rhetoric].map(|task| {
            let (w, b) = lay.heads[task.index()];
            let k = task.num_labels();
            let mut out = p[b..b + k].to_vec();
            vec_mat_acc(&y, &p[w..w + d * k], &mut out);
            out
        });

        Cache {
            tokens: tokens.to_vec(),
            layers,
            y,
            logits,
        }
    }

    /// Cross-entropy loss of `label` and its gradient accumulated into
    /// `grad` (same layout as the parameters). The cache must come from an
    /// unintervened forward pass.
    pub(crate) fn backward(&self, cache: &Cache, label: Label, grad: &mut [f64]) -> f64 {
        let c = &self.config;
        let (d, f) = (c.d_model, c.d_ff);
        let t_len = cache.tokens.len();
        let (n_heads, dh) = (c.n_heads, c.d_model / c.n_heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let p = &self.params;
        let lay = &self.layout;
        let task = label.task();

        let mut probs = cache.logits[task.index()].clone();
        softmax_in_place(&mut probs);
        let target = label.index();
        let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
        let mut dlogits = probs;
        dlogits[target] -= 1.0;

        let k = task.num_labels();
        let (hw, hb) = lay.heads[task.index()];
        outer_acc(&cache.y, &dlogits, &mut grad[hw..hw + d * k]);
        for (g, dl) in grad[hb..hb + k].iter_mut().zip(&dlogits) {
            *g += dl;
        }
        let mut dx = vec![0.0; t_len * d];
        mat_vec(&p[hw..hw + d * k], &dlogits, &mut dx[(t_len - 1) * d..]);

        let mut dn = vec![0.0; f];
        for (lc, off) in cache.layers.iter().zip(&lay.layers).rev() {
            // x_out = a + FFN(a)
            let mut da = dx.clone();
            for t in 0..t_len {
                let df = &dx[t * d..(t + 1) * d];
                for (g, v) in grad[off.b_out..off.b_out + d].iter_mut().zip(df) {
                    *g += v;
                }
                outer_acc(&lc.n[t * f..(t + 1) * f], df, &mut grad[off.w_out..off.w_out + f * d]);
                mat_vec(&p[off.w_out..off.w_out + f * d], df, &mut dn);
                for (dv, hv) in dn.iter_mut().zip(&lc.hpre[t * f..(t + 1) * f]) {
                    if *hv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                for (g, v) in grad[off.b_in..off.b_in + f].iter_mut().zip(&dn) {
                    *g += v;
                }
                outer_acc(&lc.a[t * d..(t + 1) * d], &dn, &mut grad[off.w_in..off.w_in + d * f]);
                mat_vec_acc(&p[off.w_in..off.w_in + d * f], &dn, &mut da[t * d..(t + 1) * d]);
            }

            // a = x_in + Attn(x_in) W_o
            let mut dxin = da.clone();
            let mut d_o = vec![0.0; t_len * d];
            for t in 0..t_len {
                let dat = &da[t * d..(t + 1) * d];
                outer_acc(&lc.o[t * d..(t + 1) * d], dat, &mut grad[off.wo..off.wo + d * d]);
                mat_vec(&p[off.wo..off.wo + d * d], dat, &mut d_o[t * d..(t + 1) * d]);
            }
            let mut dq = vec![0.0; t_len * d];
            let mut dk = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            let mut dp = vec![0.0; t_len];
            for h in 0..n_heads {
                let hs = h * dh;
                for i in 0..t_len {
                    let row = &lc.probs[(h * t_len + i) * t_len..][..i + 1];
                    let doi = &d_o[i * d + hs..i * d + hs + dh];
                    for j in 0..=i {
                        dp[j] = dot(doi, &lc.v[j * d + hs..j * d + hs + dh]);
                        for (g, x) in dv[j * d + hs..j * d + hs + dh].iter_mut().zip(doi) {
                            *g += row[j] * x;
                        }
                    }
                    let mix = dot(row, &dp[..=i]);
                    for j in 0..=i {
                        let ds = row[j] * (dp[j] - mix) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for e in 0..dh {
                            dq[i * d + hs + e] += ds * lc.k[j * d + hs + e];
                            dk[j * d + hs + e] += ds * lc.q[i * d + hs + e];
                        }
                    }
                }
            }
            for t in 0..t_len {
                let xt = &lc.x_in[t * d..(t + 1) * d];
                for (w, g) in [(off.wq, &dq), (off.wk, &dk), (off.wv, &dv)] {
                    let gt = &g[t * d..(t + 1) * d];
                    outer_acc(xt, gt, &mut grad[w..w + d * d]);
                    mat_vec_acc(&p[w..w + d * d], gt, &mut dxin[t * d..(t + 1) * d]);
                }
            }
            debug_assert_eq!(lc.x_in.len(), dxin.len());
            dx = dxin;
        }

        for (t, &tok) in cache.tokens.iter().enumerate() {
            let dxt = &dx[t * d..(t + 1) * d];
            let e = lay.tok_emb + tok as usize * d;
            for (g, v) in grad[e..e + d].iter_mut().zip(dxt) {
                *g += v;
            }
            let pe = lay.pos_emb + t * d;
            for (g, v) in grad[pe..pe + d].iter_mut().zip(dxt) {
                *g += v;
            }
        }
        loss
    }
}
