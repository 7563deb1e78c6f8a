//! Channel-correspondence convolution: a k-NN graph over spatial positions
//! built from channel-space cosine similarity, with each position absorbing
//! the mean difference to its neighbours through a learned 1×1 transform.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array5, ArrayView2, Axis, Ix2};
use rand::Rng;

use crate::nn::{join, Module, Param, Real, Visitor};

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Pairwise cosine similarity between the columns of a `(C, P)` matrix.
/// Columns with zero norm have similarity 0 to every other column.
pub fn cosine_similarity_matrix<F: Real>(x: ArrayView2<'_, F>) -> Array2<F> {
    let p = x.ncols();
    let mut rows = x.t().as_standard_layout().into_owned();
    for mut r in rows.outer_iter_mut() {
        let n = r.iter().map(|v| *v * *v).sum::<F>().sqrt();
        if n > F::zero() {
            r.mapv_inplace(|v| v / n);
        } else {
            r.fill(F::zero());
        }
    }
    let flat = rows.as_slice().expect("standard layout");
    let c = x.nrows();
    let mut sim = Array2::zeros((p, p));
    for a in 0..p {
        let ra = &flat[a * c..(a + 1) * c];
        sim[[a, a]] = dot(ra, ra);
        for b in a + 1..p {
            let v = dot(ra, &flat[b * c..(b + 1) * c]);
            sim[[a, b]] = v;
            sim[[b, a]] = v;
        }
    }
    sim
}

/// For every column of a `(C, P)` matrix, the `k` other columns with the
/// highest cosine similarity. Ties go to the smaller index. Returns a
/// row-major `P × k` index table.
pub fn cosine_knn<F: Real>(x: ArrayView2<'_, F>, k: usize) -> Vec<usize> {
    let p = x.ncols();
    assert!(k >= 1 && k < p, "k = {k} must be in [1, {p})");
    let sim = cosine_similarity_matrix(x);
    let mut out = Vec::with_capacity(p * k);
    let mut best: Vec<(F, usize)> = Vec::with_capacity(k + 1);
    for a in 0..p {
        best.clear();
        for b in 0..p {
            if b == a {
                continue;
            }
            let s = sim[[a, b]];
            // candidates arrive in index order, so an equal score never displaces
            let pos = best.iter().position(|&(bs, _)| s > bs).unwrap_or(best.len());
            if pos < k {
                best.insert(pos, (s, b));
                best.truncate(k);
            }
        }
        out.extend(best.iter().map(|&(_, b)| b));
    }
    out
}

#[derive(Debug, Clone)]
struct Cache<F> {
    neighbors: Vec<Vec<usize>>,
    // (N, P, C) mean neighbour difference per position
    messages: Vec<Array2<F>>,
}

#[derive(Debug, Clone)]
pub struct Ccc<F> {
    pub transform: Param<F>,
    k: usize,
    cache: Option<Cache<F>>,
}

impl<F: Real> Ccc<F> {
    pub fn new<R: Rng + ?Sized>(channels: usize, k: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        Self {
            transform: Param::uniform(&[channels, channels], bound, rng),
            k,
            cache: None,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn w(&self) -> ArrayView2<'_, F> {
        self.transform.value.view().into_dimensionality::<Ix2>().expect("2-d transform")
    }

    /// Neighbour table of the most recent forward pass, one `P × k` table per sample.
    pub fn last_neighbors(&self) -> Option<&[Vec<usize>]> {
        self.cache.as_ref().map(|c| c.neighbors.as_slice())
    }

    pub fn forward(&mut self, x: Array5<F>) -> Array5<F> {
        let mut y = x.as_standard_layout().into_owned();
        let (n, c, h, w, d) = y.dim();
        let p = h * w * d;
        let kf = F::of(self.k as f64);
        let mut neighbors = Vec::with_capacity(n);
        let mut messages = Vec::with_capacity(n);
        let weight = self.w().to_owned();
        for s in 0..n {
            let mut ys = y
                .index_axis_mut(Axis(0), s)
                .into_shape_with_order((c, p))
                .expect("contiguous sample");
            let nbrs = cosine_knn(ys.view(), self.k);
            let xt = ys.t().as_standard_layout().into_owned();
            let mut msg = Array2::<F>::zeros((p, c));
            for pos in 0..p {
                let mut row = msg.row_mut(pos);
                for &q in &nbrs[pos * self.k..(pos + 1) * self.k] {
                    row += &xt.row(q);
                }
                row.mapv_inplace(|v| v / kf);
                row -= &xt.row(pos);
            }
            general_mat_mul(F::one(), &weight, &msg.t(), F::one(), &mut ys);
            neighbors.push(nbrs);
            messages.push(msg);
        }
        self.cache = Some(Cache {
            neighbors,
            messages,
        });
        y
    }

    pub fn backward(&mut self, dy: Array5<F>) -> Array5<F> {
        let Cache {
            neighbors,
            messages,
        } = self.cache.take().expect("forward before backward");
        let mut dx = dy.as_standard_layout().into_owned();
        let (n, c, h, w, d) = dx.dim();
        let p = h * w * d;
        let kf = F::of(self.k as f64);
        let weight = self.w().to_owned();
        let mut dw = Array2::<F>::zeros((c, c));
        for s in 0..n {
            let mut dxs = dx
                .index_axis_mut(Axis(0), s)
                .into_shape_with_order((c, p))
                .expect("contiguous sample");
            general_mat_mul(F::one(), &dxs, &messages[s], F::one(), &mut dw);
            // (P, C) gradient w.r.t. the messages
            let dmsg = dxs.t().dot(&weight);
            let nbrs = &neighbors[s];
            let mut spread = Array2::<F>::zeros((p, c));
            for pos in 0..p {
                let g = dmsg.row(pos);
                for &q in &nbrs[pos * self.k..(pos + 1) * self.k] {
                    spread.row_mut(q).scaled_add(F::one() / kf, &g);
                }
                spread.row_mut(pos).scaled_add(-F::one(), &g);
            }
            dxs += &spread.t();
        }
        let mut tg = self
            .transform
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2-d transform");
        tg += &dw;
        dx
    }
}

impl<F: Real> Module<F> for Ccc<F> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<F>) {
        v.param(&join(prefix, "transform"), &mut self.transform);
    }
}
