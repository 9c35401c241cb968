use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::layers::Linear;
use super::params::{Grads, ParamStore};
use crate::rope::Rotor;

/// Multi-head self-attention where each token's queries and keys are
/// multiplied by that token's [`Rotor`] before the dot product. The same
/// rotor is applied in every head.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    mixed: Array2<f64>,
}

impl SelfAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, width: usize, heads: usize, head_dim: usize, rng: &mut R) -> Self {
        assert!(head_dim % 2 == 0, "head_dim must be even");
        Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), width, 3 * heads * head_dim, true, rng),
            out: Linear::new(store, &format!("{name}.out"), heads * head_dim, width, true, rng),
            heads,
            head_dim,
        }
    }

    fn inner(&self) -> usize {
        self.heads * self.head_dim
    }

    fn rotate_rows(&self, m: &mut Array2<f64>, rotors: &[Rotor], adjoint: bool) {
        let dh = self.head_dim;
        let mut tmp = vec![0.0; dh];
        for (mut row, rotor) in m.rows_mut().into_iter().zip(rotors) {
            let row = row.as_slice_mut().expect("standard layout");
            for h in 0..self.heads {
                let seg = &mut row[h * dh..(h + 1) * dh];
                if adjoint {
                    rotor.apply_adjoint_into(seg, &mut tmp);
                } else {
                    rotor.apply_into(seg, &mut tmp);
                }
                seg.copy_from_slice(&tmp);
            }
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Array2<f64>, rotors: &[Rotor]) -> (Array2<f64>, AttentionCache) {
        let n = x.nrows();
        debug_assert_eq!(rotors.len(), n);
        let inner = self.inner();
        let dh = self.head_dim;
        let qkv = self.qkv.forward(store, x);
        let mut q = qkv.slice(s![.., 0..inner]).to_owned();
        let mut k = qkv.slice(s![.., inner..2 * inner]).to_owned();
        let v = qkv.slice(s![.., 2 * inner..3 * inner]).to_owned();
        self.rotate_rows(&mut q, rotors, false);
        self.rotate_rows(&mut k, rotors, false);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut mixed = Array2::zeros((n, inner));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![.., cols.clone()]);
            let kh = k.slice(s![.., cols.clone()]);
            let vh = v.slice(s![.., cols.clone()]);
            let mut p = qh.dot(&kh.t());
            for mut row in p.rows_mut() {
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b * scale));
                let mut z = 0.0;
                row.mapv_inplace(|v| {
                    let e = (v * scale - m).exp();
                    z += e;
                    e
                });
                row.mapv_inplace(|v| v / z);
            }
            mixed.slice_mut(s![.., cols]).assign(&p.dot(&vh));
            probs.push(p);
        }
        let y = self.out.forward(store, &mixed);
        (y, AttentionCache { x: x.clone(), q, k, v, probs, mixed })
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &AttentionCache,
        rotors: &[Rotor],
        dy: &Array2<f64>,
        grads: &mut Grads,
    ) -> Array2<f64> {
        let n = dy.nrows();
        let inner = self.inner();
        let dh = self.head_dim;
        let scale = 1.0 / (dh as f64).sqrt();
        let dmixed = self.out.backward(store, &cache.mixed, dy, grads);

        let mut dqkv = Array2::zeros((n, 3 * inner));
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &cache.probs[h];
            let dout = dmixed.slice(s![.., cols.clone()]);
            let vh = cache.v.slice(s![.., cols.clone()]);
            let dp = dout.dot(&vh.t());
            let dv = p.t().dot(&dout);
            // softmax backward, then the 1/sqrt(dh) scale
            let mut ds = &dp * p;
            let rs = ds.sum_axis(Axis(1));
            for ((mut row, prow), r) in ds.rows_mut().into_iter().zip(p.rows()).zip(rs.iter()) {
                row.zip_mut_with(&prow, |d, &pv| *d -= pv * r);
            }
            ds.mapv_inplace(|v| v * scale);
            let dq = ds.dot(&cache.k.slice(s![.., cols.clone()]));
            let dk = ds.t().dot(&cache.q.slice(s![.., cols.clone()]));
            dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dq);
            dqkv.slice_mut(s![.., inner + h * dh..inner + (h + 1) * dh]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * inner + h * dh..2 * inner + (h + 1) * dh]).assign(&dv);
        }
        let mut dq = dqkv.slice(s![.., 0..inner]).to_owned();
        let mut dk = dqkv.slice(s![.., inner..2 * inner]).to_owned();
        self.rotate_rows(&mut dq, rotors, true);
        self.rotate_rows(&mut dk, rotors, true);
        dqkv.slice_mut(s![.., 0..inner]).assign(&dq);
        dqkv.slice_mut(s![.., inner..2 * inner]).assign(&dk);
        self.qkv.backward(store, &cache.x, &dqkv, grads)
    }
}
