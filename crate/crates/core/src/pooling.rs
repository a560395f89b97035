//! Pooling operators acting on an `S x M` matrix of instance embeddings.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::Bag;
use crate::error::{Error, Result};
use crate::math::{argmax, logsumexp, softmax_in_place};

/// Instance embeddings of one bag; at least one row, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBag(Array2<f64>);

impl EmbeddingBag {
    pub fn new(h: Array2<f64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::Empty("embedding bag needs at least one instance and one feature"));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("embedding bag has non-finite entries".into()));
        }
        Ok(Self(h))
    }

    pub fn from_bag(bag: &Bag) -> Self {
        Self(bag.to_array())
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let flat = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(Array2::from_shape_vec((rows.len(), m), flat).expect("shape checked"))
    }

    pub fn num_instances(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

pub fn max_pool(h: &EmbeddingBag) -> Array1<f64> {
    h.0.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b))
}

pub fn mean_pool(h: &EmbeddingBag) -> Array1<f64> {
    h.0.mean_axis(Axis(0)).expect("nonempty")
}

/// Per-feature `log(mean_j exp(h[j][m]))`, a smooth stand-in for max.
pub fn logsumexp_pool(h: &EmbeddingBag) -> Array1<f64> {
    let log_s = (h.num_instances() as f64).ln();
    h.0.columns()
        .into_iter()
        .map(|c| logsumexp(&c.to_vec()) - log_s)
        .collect()
}

/// Row index of the per-column maximum, lowest index on ties.
pub fn column_argmax(h: ArrayView2<'_, f64>) -> Vec<usize> {
    h.columns()
        .into_iter()
        .map(|c| argmax(&c.to_vec()).expect("nonempty"))
        .collect()
}

/// Gated-free attention pooling: `a = softmax_j(u . tanh(U h_j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbmilParams {
    /// `L x M` projection.
    pub proj: Array2<f64>,
    /// Length-`L` scoring vector.
    pub score: Array1<f64>,
}

impl AbmilParams {
    pub fn new(proj: Array2<f64>, score: Array1<f64>) -> Result<Self> {
        if proj.nrows() == 0 || proj.nrows() != score.len() {
            return Err(Error::ShapeMismatch(format!(
                "ABMIL projection has {} rows, score vector has {} entries",
                proj.nrows(),
                score.len()
            )));
        }
        Ok(Self { proj, score })
    }

    pub fn hidden_dim(&self) -> usize {
        self.score.len()
    }
}

/// Attention weights of [`abmil_pool`] without the weighted sum.
pub fn abmil_weights(h: &EmbeddingBag, p: &AbmilParams) -> Result<Array1<f64>> {
    if p.proj.ncols() != h.num_features() || p.proj.nrows() != p.score.len() {
        return Err(Error::ShapeMismatch(format!(
            "ABMIL params are {}x{}, bag has {} features",
            p.proj.nrows(),
            p.proj.ncols(),
            h.num_features()
        )));
    }
    let hidden = h.0.dot(&p.proj.t()).mapv(f64::tanh);
    let mut logits = hidden.dot(&p.score).to_vec();
    softmax_in_place(&mut logits);
    Ok(Array1::from(logits))
}

pub fn abmil_pool(h: &EmbeddingBag, p: &AbmilParams) -> Result<(Array1<f64>, Array1<f64>)> {
    let a = abmil_weights(h, p)?;
    let z = a.dot(&h.0);
    Ok((z, a))
}

/// Instance graph used by the smoothing operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// `A[j][k] = 1` iff `|j - k| = 1`.
    #[default]
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    pub alpha: f64,
    #[serde(default)]
    pub adjacency: Adjacency,
}

impl SmoothConfig {
    pub fn chain(alpha: f64) -> Result<Self> {
        let cfg = Self { alpha, adjacency: Adjacency::Chain };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidParams(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// The tridiagonal system `(alpha L + (1 - alpha) I) g = rhs` for a chain of
/// `n` instances, factored once and solved per column.
#[derive(Debug, Clone)]
pub struct ChainSystem {
    alpha: f64,
    diag: Vec<f64>,
    // Thomas forward-sweep coefficients.
    c_prime: Vec<f64>,
    denom: Vec<f64>,
}

impl ChainSystem {
    pub fn new(cfg: &SmoothConfig, n: usize) -> Result<Self> {
        cfg.validate()?;
        if n == 0 {
            return Err(Error::Empty("chain system needs at least one instance"));
        }
        let alpha = cfg.alpha;
        let off = -alpha;
        let diag: Vec<f64> = (0..n)
            .map(|j| {
                let degree = (j > 0) as usize + (j + 1 < n) as usize;
                alpha * degree as f64 + (1.0 - alpha)
            })
            .collect();
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = diag[0];
        if n > 1 {
            c_prime[0] = off / denom[0];
        }
        for j in 1..n {
            denom[j] = diag[j] - off * c_prime[j - 1];
            if j + 1 < n {
                c_prime[j] = off / denom[j];
            }
        }
        Ok(Self { alpha, diag, c_prime, denom })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(rhs.len(), n);
        let off = -self.alpha;
        rhs[0] /= self.denom[0];
        for j in 1..n {
            rhs[j] = (rhs[j] - off * rhs[j - 1]) / self.denom[j];
        }
        for j in (0..n - 1).rev() {
            rhs[j] -= self.c_prime[j] * rhs[j + 1];
        }
    }

    /// `(alpha L + (1 - alpha) I) x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut v = self.diag[j] * x[j];
                if j > 0 {
                    v -= self.alpha * x[j - 1];
                }
                if j + 1 < n {
                    v -= self.alpha * x[j + 1];
                }
                v
            })
            .collect()
    }

    /// `L x` for the chain Laplacian.
    pub fn laplacian_apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|j| {
                let mut v = 0.0;
                if j > 0 {
                    v += x[j] - x[j - 1];
                }
                if j + 1 < n {
                    v += x[j] - x[j + 1];
                }
                v
            })
            .collect()
    }

    /// Smooths a single column: solves with right-hand side `(1 - alpha) x`.
    pub fn smooth_column(&self, x: &mut [f64]) {
        let scale = 1.0 - self.alpha;
        for v in x.iter_mut() {
            *v *= scale;
        }
        self.solve_in_place(x);
    }

    /// Derivative of the smoothed column with respect to alpha, given the
    /// input column `x` and its smoothed value `g`.
    ///
    /// Differentiating `(alpha L + (1-alpha) I) g = (1-alpha) x` gives
    /// `(alpha L + (1-alpha) I) g' = g - x - L g`.
    pub fn smooth_column_alpha_derivative(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let lg = self.laplacian_apply(g);
        let mut rhs: Vec<f64> = (0..x.len()).map(|j| g[j] - x[j] - lg[j]).collect();
        self.solve_in_place(&mut rhs);
        rhs
    }
}

/// Minimizer of `alpha * E_D(g) + (1 - alpha) * |h - g|_F^2` where
/// `E_D(g) = 1/2 sum_{j,k} A[j][k] |g_j - g_k|^2`. Setting the gradient to
/// zero gives `(alpha L + (1 - alpha) I) g = (1 - alpha) h` with `L = D - A`,
/// solved column by column.
pub fn smooth(h: &EmbeddingBag, cfg: &SmoothConfig) -> Result<EmbeddingBag> {
    let system = ChainSystem::new(cfg, h.num_instances())?;
    let mut out = h.0.clone();
    let mut col = vec![0.0; h.num_instances()];
    for mut c in out.columns_mut() {
        for (dst, src) in col.iter_mut().zip(c.iter()) {
            *dst = *src;
        }
        system.smooth_column(&mut col);
        for (dst, src) in c.iter_mut().zip(&col) {
            *dst = *src;
        }
    }
    Ok(EmbeddingBag(out))
}

/// One head of self-attention with a prepended class token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnParams {
    /// `d x M` query map.
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    /// Length-`M` class-token embedding, placed before the instances.
    pub class_token: Array1<f64>,
}

impl AttnParams {
    pub fn head_dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn check(&self, m: usize) -> Result<()> {
        let d = self.w_q.nrows();
        let ok = d >= 1
            && [&self.w_q, &self.w_k, &self.w_v].iter().all(|w| w.nrows() == d && w.ncols() == m)
            && self.class_token.len() == m;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "attention maps {:?}/{:?}/{:?} and class token of {} do not fit M={m}",
                self.w_q.dim(),
                self.w_k.dim(),
                self.w_v.dim(),
                self.class_token.len()
            )));
        }
        Ok(())
    }
}

/// Returns the class-token output (length `d`) and the `(S+1) x (S+1)`
/// row-stochastic attention matrix. Row and column 0 belong to the class
/// token.
pub fn self_attention_forward(h: &EmbeddingBag, p: &AttnParams) -> Result<(Array1<f64>, Array2<f64>)> {
    p.check(h.num_features())?;
    let (s, m) = (h.num_instances(), h.num_features());
    let mut x = Array2::zeros((s + 1, m));
    x.row_mut(0).assign(&p.class_token);
    x.slice_mut(ndarray::s![1.., ..]).assign(&h.0);

    let q = x.dot(&p.w_q.t());
    let k = x.dot(&p.w_k.t());
    let v = x.dot(&p.w_v.t());
    let scale = (p.head_dim() as f64).sqrt().recip();
    let mut attn = q.dot(&k.t()) * scale;
    for mut row in attn.rows_mut() {
        let mut buf = row.to_vec();
        softmax_in_place(&mut buf);
        row.assign(&ArrayView1::from(&buf));
    }
    let out = attn.row(0).dot(&v);
    Ok((out, attn))
}

/// 1-D cross-correlation along the instance axis, applied per feature with
/// zero padding: `out[j] = sum_t kernel[t] * h[j + t - T]`.
pub fn conv_over_instances(h: &EmbeddingBag, kernel: &[f64]) -> Result<EmbeddingBag> {
    if kernel.len() % 2 == 0 {
        return Err(Error::InvalidParams(format!("kernel length {} is not odd", kernel.len())));
    }
    let s = h.num_instances();
    if kernel.len() > 2 * s - 1 {
        return Err(Error::InvalidParams(format!(
            "kernel length {} exceeds 2S-1 = {}",
            kernel.len(),
            2 * s - 1
        )));
    }
    let half = (kernel.len() / 2) as isize;
    let mut out = Array2::zeros(h.0.raw_dim());
    for j in 0..s as isize {
        let mut row = out.row_mut(j as usize);
        for (t, &w) in kernel.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let src = j + t as isize - half;
            if src < 0 || src >= s as isize {
                continue;
            }
            row.scaled_add(w, &h.0.row(src as usize));
        }
    }
    Ok(EmbeddingBag(out))
}

/// Writes a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv(m: ArrayView2<'_, f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()?;
    Ok(())
}
