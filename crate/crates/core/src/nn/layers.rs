use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamId, ParamStore};

/// `y = x W + b`, with `W` stored as `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let std = (1.0 / fan_in as f64).sqrt();
        let w = store.normal(format!("{name}.w"), fan_in, fan_out, std, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), 1, fan_out));
        Self { w, b }
    }

    pub fn zero_init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let w = store.zeros(format!("{name}.w"), fan_in, fan_out);
        let b = bias.then(|| store.zeros(format!("{name}.b"), 1, fan_out));
        Self { w, b }
    }

    pub fn in_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w).nrows()
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w).ncols()
    }

    pub fn forward(&self, store: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(store.get(self.w));
        if let Some(b) = self.b {
            y += store.get(b);
        }
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, store: &ParamStore, x: &Array2<f64>, dy: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        *grads.get_mut(self.w) += &x.t().dot(dy);
        if let Some(b) = self.b {
            *grads.get_mut(b) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&store.get(self.w).t())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Gelu,
    Silu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh()),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Gelu => {
                let u = GELU_C * (x + 0.044_715 * x * x * x);
                let th = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

/// Two linear layers with a pointwise nonlinearity between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: [usize; 3], act: Activation, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dims[0], dims[1], true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), dims[1], dims[2], true, rng),
            act,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let pre = self.fc1.forward(store, x);
        let hidden = pre.mapv(|v| self.act.apply(v));
        let y = self.fc2.forward(store, &hidden);
        (y, MlpCache { x: x.clone(), pre, hidden })
    }

    pub fn backward(&self, store: &ParamStore, cache: &MlpCache, dy: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let dh = self.fc2.backward(store, &cache.hidden, dy, grads);
        let mut dpre = dh;
        dpre.zip_mut_with(&cache.pre, |d, p| *d *= self.act.derivative(*p));
        self.fc1.backward(store, &cache.x, &dpre, grads)
    }
}

/// Row-wise layer norm with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Array2::ones((1, dim)));
        let bias = store.zeros(format!("{name}.bias"), 1, dim);
        Self { gain, bias, eps: 1e-5 }
    }

    pub fn forward(&self, store: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let n = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + self.eps).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let y = &xhat * store.get(self.gain) + store.get(self.bias);
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, store: &ParamStore, cache: &LayerNormCache, dy: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        *grads.get_mut(self.gain) += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        *grads.get_mut(self.bias) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * store.get(self.gain);
        let n = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (r, (mut out, (g, xh))) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows().into_iter().zip(cache.xhat.rows()))
            .enumerate()
        {
            let mg = g.sum() / n;
            let mgx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
            let is = cache.inv_std[r];
            for ((o, gv), xv) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
                *o = is * (gv - mg - xv * mgx);
            }
        }
        dx
    }
}

/// Sinusoidal features of a scalar time, `[cos(t f_k), sin(t f_k)]`.
pub fn time_features(t: f64, dim: usize, max_period: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let f = (-(max_period.ln()) * k as f64 / half as f64).exp();
        out[k] = (t * f).cos();
        out[half + k] = (t * f).sin();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activation_derivatives_match_central_differences() {
        for act in [Activation::Identity, Activation::Gelu, Activation::Silu] {
            for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 5);
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64 * 0.3 - 1.0 + (j as f64).sin());
        let (y, _) = ln.forward(&store, &x);
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 5.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", 4, 3, true, &mut rng);
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i + 2 * j) as f64 * 0.1 - 0.3);
        let target = Array2::from_shape_fn((2, 3), |(i, j)| (i as f64) - (j as f64) * 0.5);
        let loss = |s: &ParamStore, x: &Array2<f64>| {
            let y = lin.forward(s, x);
            (&y - &target).mapv(|v| v * v).sum() * 0.5
        };
        let y = lin.forward(&store, &x);
        let dy = &y - &target;
        let mut grads = store.zero_grads();
        let dx = lin.backward(&store, &x, &dy, &mut grads);
        let h = 1e-6;
        for id in store.ids().collect::<Vec<_>>() {
            for idx in 0..store.get(id).len() {
                let (r, c) = (idx / store.get(id).ncols(), idx % store.get(id).ncols());
                let mut p = store.clone();
                p.get_mut(id)[[r, c]] += h;
                let mut m = store.clone();
                m.get_mut(id)[[r, c]] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!((fd - grads.get(id)[[r, c]]).abs() < 1e-7);
            }
        }
        for r in 0..2 {
            for c in 0..4 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * h);
                assert!((fd - dx[[r, c]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn time_features_start_at_cos_one() {
        let f = time_features(0.0, 8, 10_000.0);
        assert_eq!(&f[..4], &[1.0; 4]);
        assert_eq!(&f[4..], &[0.0; 4]);
    }
}
