use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ParamLayout, TensorSpec, ToyDenoiserConfig};
use crate::denoiser::{
    check_predict_args, log_softmax, top_k, Denoiser, DenoiserOutput, PositionPrediction,
};
use crate::error::{Error, Result};
use crate::state::SeqState;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub cfg: ToyDenoiserConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
}

fn mat<'a>(buf: &'a [f64], spec: &TensorSpec) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((spec.shape[0], spec.shape[1]), &buf[spec.range()])
        .expect("tensor shape")
}

fn vec1<'a>(buf: &'a [f64], spec: &TensorSpec) -> ArrayView1<'a, f64> {
    ArrayView1::from_shape(spec.shape[0], &buf[spec.range()]).expect("tensor shape")
}

fn mat_mut<'a>(buf: &'a mut [f64], spec: &TensorSpec) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((spec.shape[0], spec.shape[1]), &mut buf[spec.range()])
        .expect("tensor shape")
}

fn vec1_mut<'a>(buf: &'a mut [f64], spec: &TensorSpec) -> ArrayViewMut1<'a, f64> {
    ArrayViewMut1::from_shape(spec.shape[0], &mut buf[spec.range()]).expect("tensor shape")
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.insert_axis(Axis(1));
    let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / d;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * rstd.view().insert_axis(Axis(1));
    let y = &xhat * &g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: ArrayView1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * &g;
    let d = dy.ncols() as f64;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1));
    dx -= &(&cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
    dx * cache.rstd.view().insert_axis(Axis(1))
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LnCache,
    h: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    h2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Array2<f64>,
}

impl ToyDenoiser {
    pub fn new(cfg: ToyDenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::for_config(&cfg);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let resid_scale = 1.0 / ((2 * cfg.layers) as f64).sqrt();
        for spec in &layout.tensors {
            let name = spec.name.rsplit('.').next().unwrap_or(&spec.name);
            let std = match name {
                "tok_emb" | "pos_emb" => 0.1,
                "wq" | "wk" | "wv" | "w1" | "w_out" => 1.0 / (spec.shape[0] as f64).sqrt(),
                "wo" | "w2" => resid_scale / (spec.shape[0] as f64).sqrt(),
                _ => 0.0,
            };
            let slot = &mut params[spec.range()];
            if name.ends_with("_g") {
                slot.fill(1.0);
            } else if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("valid std");
                slot.iter_mut().for_each(|p| *p = normal.sample(&mut rng));
            }
        }
        Ok(Self {
            cfg,
            layout,
            params,
        })
    }

    pub fn from_parts(cfg: ToyDenoiserConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::for_config(&cfg);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            cfg,
            layout,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn spec(&self, name: &str) -> &TensorSpec {
        self.layout.get(name)
    }

    fn m(&self, params: &[f64], name: &str) -> Array2<f64> {
        mat(params, self.spec(name)).to_owned()
    }

    pub(crate) fn forward_with(&self, params: &[f64], tokens: &[u32]) -> Result<ForwardCache> {
        let len = tokens.len();
        if len > self.cfg.max_positions {
            return Err(Error::SequenceTooLong {
                len,
                max: self.cfg.max_positions,
            });
        }
        let d = self.cfg.model_dim;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let tok = mat(params, self.spec("tok_emb"));
        let pos = mat(params, self.spec("pos_emb"));
        let mut x = Array2::<f64>::zeros((len, d));
        for (i, &t) in tokens.iter().enumerate() {
            if t as usize >= self.cfg.vocab_size {
                return Err(Error::Config(format!("token {t} outside toy vocabulary")));
            }
            let mut row = x.row_mut(i);
            row += &tok.row(t as usize);
            row += &pos.row(i);
        }
        let mut layers = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let p = |n: &str| format!("l{l}.{n}");
            let (h, ln1) = layer_norm(
                &x,
                vec1(params, self.spec(&p("ln1_g"))),
                vec1(params, self.spec(&p("ln1_b"))),
            );
            let q = h.dot(&mat(params, self.spec(&p("wq")))) + vec1(params, self.spec(&p("bq")));
            let k = h.dot(&mat(params, self.spec(&p("wk")))) + vec1(params, self.spec(&p("bk")));
            let v = h.dot(&mat(params, self.spec(&p("wv")))) + vec1(params, self.spec(&p("bv")));
            let mut o = Array2::<f64>::zeros((len, d));
            let mut attn = Vec::with_capacity(self.cfg.heads);
            for hd in 0..self.cfg.heads {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut a);
                o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
                attn.push(a);
            }
            x = x + o.dot(&mat(params, self.spec(&p("wo")))) + vec1(params, self.spec(&p("bo")));
            let (h2, ln2) = layer_norm(
                &x,
                vec1(params, self.spec(&p("ln2_g"))),
                vec1(params, self.spec(&p("ln2_b"))),
            );
            let u = h2.dot(&mat(params, self.spec(&p("w1")))) + vec1(params, self.spec(&p("b1")));
            let g = u.mapv(gelu);
            x = x + g.dot(&mat(params, self.spec(&p("w2")))) + vec1(params, self.spec(&p("b2")));
            layers.push(LayerCache {
                ln1,
                h,
                q,
                k,
                v,
                attn,
                o,
                ln2,
                h2,
                u,
                g,
            });
        }
        let (hf, lnf) = layer_norm(
            &x,
            vec1(params, self.spec("lnf_g")),
            vec1(params, self.spec("lnf_b")),
        );
        Ok(ForwardCache {
            tokens: tokens.to_vec(),
            layers,
            lnf,
            hf,
        })
    }

    pub(crate) fn logits_with(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        rows: &[usize],
    ) -> Array2<f64> {
        let sel = cache.hf.select(Axis(0), rows);
        sel.dot(&mat(params, self.spec("w_out"))) + vec1(params, self.spec("b_out"))
    }

    /// Accumulates parameter gradients given `dlogits` for the selected rows.
    pub(crate) fn backward_with(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        rows: &[usize],
        dlogits: &Array2<f64>,
        grads: &mut [f64],
    ) {
        let len = cache.tokens.len();
        let d = self.cfg.model_dim;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let sel = cache.hf.select(Axis(0), rows);
        mat_mut(grads, self.spec("w_out")).scaled_add(1.0, &sel.t().dot(dlogits));
        vec1_mut(grads, self.spec("b_out")).scaled_add(1.0, &dlogits.sum_axis(Axis(0)));
        let dsel = dlogits.dot(&mat(params, self.spec("w_out")).t());
        let mut dhf = Array2::<f64>::zeros((len, d));
        for (i, &r) in rows.iter().enumerate() {
            let mut row = dhf.row_mut(r);
            row += &dsel.row(i);
        }
        let mut dx = self.ln_backward(params, grads, "lnf_g", "lnf_b", &dhf, &cache.lnf);

        for l in (0..self.cfg.layers).rev() {
            let c = &cache.layers[l];
            let p = |n: &str| format!("l{l}.{n}");
            // MLP block: x += gelu(h2 W1 + b1) W2 + b2
            mat_mut(grads, self.spec(&p("w2"))).scaled_add(1.0, &c.g.t().dot(&dx));
            vec1_mut(grads, self.spec(&p("b2"))).scaled_add(1.0, &dx.sum_axis(Axis(0)));
            let dg = dx.dot(&mat(params, self.spec(&p("w2"))).t());
            let mut du = dg;
            du.zip_mut_with(&c.u, |a, &u| *a *= gelu_grad(u));
            mat_mut(grads, self.spec(&p("w1"))).scaled_add(1.0, &c.h2.t().dot(&du));
            vec1_mut(grads, self.spec(&p("b1"))).scaled_add(1.0, &du.sum_axis(Axis(0)));
            let dh2 = du.dot(&mat(params, self.spec(&p("w1"))).t());
            dx += &self.ln_backward(params, grads, &p("ln2_g"), &p("ln2_b"), &dh2, &c.ln2);

            // attention block: x += concat_h(softmax(q_h k_hᵀ s) v_h) Wo + bo
            mat_mut(grads, self.spec(&p("wo"))).scaled_add(1.0, &c.o.t().dot(&dx));
            vec1_mut(grads, self.spec(&p("bo"))).scaled_add(1.0, &dx.sum_axis(Axis(0)));
            let d_o = dx.dot(&mat(params, self.spec(&p("wo"))).t());
            let mut dq = Array2::<f64>::zeros((len, d));
            let mut dk = Array2::<f64>::zeros((len, d));
            let mut dv = Array2::<f64>::zeros((len, d));
            for hd in 0..self.cfg.heads {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let a = &c.attn[hd];
                let d_oh = d_o.slice(cols);
                let da = d_oh.dot(&c.v.slice(cols).t());
                dv.slice_mut(cols).assign(&a.t().dot(&d_oh));
                let row_dot = (&da * a).sum_axis(Axis(1));
                let ds = (da - &row_dot.insert_axis(Axis(1))) * a * scale;
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            let mut dh = Array2::<f64>::zeros((len, d));
            for (name, bias, dproj) in [("wq", "bq", &dq), ("wk", "bk", &dk), ("wv", "bv", &dv)] {
                mat_mut(grads, self.spec(&p(name))).scaled_add(1.0, &c.h.t().dot(dproj));
                vec1_mut(grads, self.spec(&p(bias))).scaled_add(1.0, &dproj.sum_axis(Axis(0)));
                dh += &dproj.dot(&mat(params, self.spec(&p(name))).t());
            }
            dx += &self.ln_backward(params, grads, &p("ln1_g"), &p("ln1_b"), &dh, &c.ln1);
        }

        let tok_spec = self.spec("tok_emb").clone();
        let pos_spec = self.spec("pos_emb").clone();
        {
            let mut dtok = mat_mut(grads, &tok_spec);
            for (i, &t) in cache.tokens.iter().enumerate() {
                let mut row = dtok.row_mut(t as usize);
                row += &dx.row(i);
            }
        }
        let mut dpos = mat_mut(grads, &pos_spec);
        let mut head = dpos.slice_mut(s![..len, ..]);
        head += &dx;
    }

    fn ln_backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        g: &str,
        b: &str,
        dy: &Array2<f64>,
        cache: &LnCache,
    ) -> Array2<f64> {
        let gs = self.spec(g).clone();
        let bs = self.spec(b).clone();
        let mut dg = Array1::zeros(gs.shape[0]);
        let mut db = Array1::zeros(bs.shape[0]);
        let dx = layer_norm_backward(dy, cache, vec1(params, &gs), &mut dg, &mut db);
        vec1_mut(grads, &gs).scaled_add(1.0, &dg);
        vec1_mut(grads, &bs).scaled_add(1.0, &db);
        dx
    }

    /// Full-vocabulary log-probabilities at each requested position.
    pub fn logprobs(&self, tokens: &[u32], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let cache = self.forward_with(&self.params, tokens)?;
        let logits = self.logits_with(&self.params, &cache, positions);
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| log_softmax(r.as_slice().expect("contiguous row")))
            .collect())
    }

    /// Copy of one tensor's parameters, for inspection.
    pub fn tensor(&self, name: &str) -> Array2<f64> {
        let spec = self.spec(name);
        if spec.shape.len() == 2 {
            self.m(&self.params, name)
        } else {
            vec1(&self.params, spec).to_owned().insert_axis(Axis(0))
        }
    }
}

impl Denoiser for ToyDenoiser {
    fn predict(&self, state: &SeqState, k: usize) -> Result<DenoiserOutput> {
        check_predict_args(state, k)?;
        let positions: Vec<usize> = state.masked_positions().collect();
        let lps = self.logprobs(&state.tokens, &positions)?;
        Ok(DenoiserOutput {
            predictions: positions
                .into_iter()
                .zip(lps)
                .map(|(position, lp)| PositionPrediction {
                    position,
                    candidates: top_k(&lp, k),
                })
                .collect(),
        })
    }

    fn describe(&self) -> String {
        format!(
            "toy(layers={}, heads={}, dim={}, params={}, seed={})",
            self.cfg.layers,
            self.cfg.heads,
            self.cfg.model_dim,
            self.param_count(),
            self.cfg.seed
        )
    }
}
