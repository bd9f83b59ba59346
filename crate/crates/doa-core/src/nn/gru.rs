//! Bidirectional gated recurrent unit with tanh candidate activation.
//!
//! The cell uses the dual-bias (reset-after) parameterization: the reset
//! gate multiplies the already-biased recurrent contribution of the
//! candidate, `n = tanh(Wx + bx + r * (Wh h + bh))`. Update and reset gates
//! are sigmoids; the new state is `h = z * h_prev + (1 - z) * n`, so with a
//! zero initial state every output component stays inside (-1, 1).
//!
//! Gate blocks are packed `[z | r | n]` along the last weight axis.

use rand_chacha::ChaCha12Rng;

use super::layers::{init_const, init_uniform};
use super::params::{Grads, ParamStore};
use super::tensor::Tensor;
use super::Scalar;

#[derive(Debug, Clone)]
pub struct BiGru {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

struct DirectionCache<T> {
    /// h[0] is the zero initial state; h[s + 1] is the output of step s.
    h: Vec<Vec<T>>,
    z: Vec<Vec<T>>,
    r: Vec<Vec<T>>,
    n: Vec<Vec<T>>,
    /// Biased recurrent candidate contribution `Wh_n h_prev + bh_n`.
    gh_n: Vec<Vec<T>>,
}

pub struct BiGruCache<T> {
    fwd: DirectionCache<T>,
    bwd: DirectionCache<T>,
    input: Tensor<T>,
}

impl BiGru {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
        }
    }

    fn block(&self, dir: &str, which: &str) -> String {
        format!("{}.{dir}.{which}", self.name)
    }

    pub fn block_shapes(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        for dir in ["fwd", "bwd"] {
            out.push((self.block(dir, "wx"), vec![self.input, 3 * self.hidden], true));
            out.push((self.block(dir, "wh"), vec![self.hidden, 3 * self.hidden], true));
            out.push((self.block(dir, "bx"), vec![3 * self.hidden], true));
            out.push((self.block(dir, "bh"), vec![3 * self.hidden], true));
        }
        out
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha12Rng) {
        for dir in ["fwd", "bwd"] {
            init_uniform(
                store,
                &self.block(dir, "wx"),
                vec![self.input, 3 * self.hidden],
                self.input,
                rng,
            );
            init_uniform(
                store,
                &self.block(dir, "wh"),
                vec![self.hidden, 3 * self.hidden],
                self.hidden,
                rng,
            );
            init_const(store, &self.block(dir, "bx"), vec![3 * self.hidden], 0.0, true);
            init_const(store, &self.block(dir, "bh"), vec![3 * self.hidden], 0.0, true);
        }
    }

    /// Input `(L, input, 1)`, output `(L, 2*hidden, 1)`: forward-direction
    /// state first, backward-direction state concatenated after it.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> (Tensor<T>, BiGruCache<T>) {
        let [l, w, ch] = x.shape();
        assert_eq!(ch, 1, "{}: GRU input must have one channel", self.name);
        assert_eq!(w, self.input, "{}: input width mismatch", self.name);
        let hid = self.hidden;
        let mut y = Tensor::zeros([l, 2 * hid, 1]);

        let fwd = self.run_direction(p, x, "fwd", false);
        let bwd = self.run_direction(p, x, "bwd", true);
        for t in 0..l {
            let row = &mut y.data_mut()[t * 2 * hid..(t + 1) * 2 * hid];
            row[..hid].copy_from_slice(&fwd.h[t + 1]);
            row[hid..].copy_from_slice(&bwd.h[l - t]);
        }
        (
            y,
            BiGruCache {
                fwd,
                bwd,
                input: x.clone(),
            },
        )
    }

    fn run_direction<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        dir: &str,
        reversed: bool,
    ) -> DirectionCache<T> {
        let [l, w, _] = x.shape();
        let hid = self.hidden;
        let wx = &p.get(&self.block(dir, "wx")).data;
        let wh = &p.get(&self.block(dir, "wh")).data;
        let bx = &p.get(&self.block(dir, "bx")).data;
        let bh = &p.get(&self.block(dir, "bh")).data;

        let mut cache = DirectionCache {
            h: vec![vec![T::zero(); hid]],
            z: Vec::with_capacity(l),
            r: Vec::with_capacity(l),
            n: Vec::with_capacity(l),
            gh_n: Vec::with_capacity(l),
        };
        let mut gx = vec![T::zero(); 3 * hid];
        let mut gh = vec![T::zero(); 3 * hid];
        for s in 0..l {
            let t = if reversed { l - 1 - s } else { s };
            let x_row = &x.data()[t * w..(t + 1) * w];
            gx.copy_from_slice(bx);
            for (i, &xv) in x_row.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                let w_row = &wx[i * 3 * hid..(i + 1) * 3 * hid];
                for (j, &wv) in w_row.iter().enumerate() {
                    gx[j] += xv * wv;
                }
            }
            gh.copy_from_slice(bh);
            let h_prev = cache.h.last().unwrap().clone();
            for (k, &hv) in h_prev.iter().enumerate() {
                if hv == T::zero() {
                    continue;
                }
                let w_row = &wh[k * 3 * hid..(k + 1) * 3 * hid];
                for (j, &wv) in w_row.iter().enumerate() {
                    gh[j] += hv * wv;
                }
            }
            let mut z = vec![T::zero(); hid];
            let mut r = vec![T::zero(); hid];
            let mut n = vec![T::zero(); hid];
            let mut gh_n = vec![T::zero(); hid];
            let mut h = vec![T::zero(); hid];
            for j in 0..hid {
                z[j] = sigmoid(gx[j] + gh[j]);
                r[j] = sigmoid(gx[hid + j] + gh[hid + j]);
                gh_n[j] = gh[2 * hid + j];
                n[j] = (gx[2 * hid + j] + r[j] * gh_n[j]).tanh();
                h[j] = z[j] * h_prev[j] + (T::one() - z[j]) * n[j];
            }
            cache.z.push(z);
            cache.r.push(r);
            cache.n.push(n);
            cache.gh_n.push(gh_n);
            cache.h.push(h);
        }
        cache
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BiGruCache<T>,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Tensor<T> {
        let [l, _, _] = cache.input.shape();
        let hid = self.hidden;
        let mut gin = Tensor::zeros(cache.input.shape());

        // Split the concatenated output gradient per direction.
        let g_fwd: Vec<&[T]> = (0..l).map(|t| &gout.row(t, 0)[..hid]).collect();
        let g_bwd: Vec<&[T]> = (0..l)
            .map(|t| &gout.data()[t * 2 * hid + hid..(t + 1) * 2 * hid])
            .collect();
        self.backward_direction(p, cache, &g_fwd, "fwd", false, grads, &mut gin);
        self.backward_direction(p, cache, &g_bwd, "bwd", true, grads, &mut gin);
        gin
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_direction<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BiGruCache<T>,
        gy: &[&[T]],
        dir: &str,
        reversed: bool,
        grads: &mut Grads<T>,
        gin: &mut Tensor<T>,
    ) {
        let [l, w, _] = cache.input.shape();
        let hid = self.hidden;
        let dcache = if reversed { &cache.bwd } else { &cache.fwd };
        let wx = &p.get(&self.block(dir, "wx")).data;
        let wh = &p.get(&self.block(dir, "wh")).data;

        let mut dh_carry = vec![T::zero(); hid];
        let mut dgx = vec![T::zero(); 3 * hid];
        let mut dgh = vec![T::zero(); 3 * hid];
        for s in (0..l).rev() {
            let t = if reversed { l - 1 - s } else { s };
            let z = &dcache.z[s];
            let r = &dcache.r[s];
            let n = &dcache.n[s];
            let gh_n = &dcache.gh_n[s];
            let h_prev = &dcache.h[s];

            let mut dh_prev = vec![T::zero(); hid];
            for j in 0..hid {
                let dh = gy[t][j] + dh_carry[j];
                let dz = dh * (h_prev[j] - n[j]);
                let dn = dh * (T::one() - z[j]);
                dh_prev[j] = dh * z[j];
                let da_n = dn * (T::one() - n[j] * n[j]);
                let dr = da_n * gh_n[j];
                let da_z = dz * z[j] * (T::one() - z[j]);
                let da_r = dr * r[j] * (T::one() - r[j]);
                dgx[j] = da_z;
                dgx[hid + j] = da_r;
                dgx[2 * hid + j] = da_n;
                dgh[j] = da_z;
                dgh[hid + j] = da_r;
                dgh[2 * hid + j] = da_n * r[j];
            }

            let x_row = &cache.input.data()[t * w..(t + 1) * w];
            {
                let gwx = grads.block_mut(&self.block(dir, "wx"));
                let gx_row = &mut gin.data_mut()[t * w..(t + 1) * w];
                for i in 0..w {
                    let xv = x_row[i];
                    let w_row = &wx[i * 3 * hid..(i + 1) * 3 * hid];
                    let gw_row = &mut gwx[i * 3 * hid..(i + 1) * 3 * hid];
                    let mut acc = T::zero();
                    for j in 0..3 * hid {
                        acc += w_row[j] * dgx[j];
                        gw_row[j] += xv * dgx[j];
                    }
                    gx_row[i] += acc;
                }
            }
            {
                let gbx = grads.block_mut(&self.block(dir, "bx"));
                for j in 0..3 * hid {
                    gbx[j] += dgx[j];
                }
            }
            {
                let gwh = grads.block_mut(&self.block(dir, "wh"));
                for k in 0..hid {
                    let hv = h_prev[k];
                    let w_row = &wh[k * 3 * hid..(k + 1) * 3 * hid];
                    let gw_row = &mut gwh[k * 3 * hid..(k + 1) * 3 * hid];
                    let mut acc = T::zero();
                    for j in 0..3 * hid {
                        acc += w_row[j] * dgh[j];
                        gw_row[j] += hv * dgh[j];
                    }
                    dh_prev[k] += acc;
                }
            }
            {
                let gbh = grads.block_mut(&self.block(dir, "bh"));
                for j in 0..3 * hid {
                    gbh[j] += dgh[j];
                }
            }
            dh_carry = dh_prev;
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_input_gradient, check_param_gradients, seeded_tensor};
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_weights_give_zero_outputs() {
        let gru = BiGru::new("g", 3, 4);
        let mut p = ParamStore::<f64>::new();
        for (name, shape, trainable) in gru.block_shapes() {
            let n: usize = shape.iter().product();
            p.insert(&name, shape, vec![0.0; n], trainable);
        }
        let x = seeded_tensor([6, 3, 1], 1);
        let (y, _) = gru.forward(&p, &x);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outputs_bounded_by_one() {
        let gru = BiGru::new("g", 5, 8);
        let mut p = ParamStore::<f64>::new();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        gru.init(&mut p, &mut rng);
        // Exaggerate the weights to push the cell toward saturation.
        for (_, block) in p.iter_mut() {
            for v in &mut block.data {
                *v *= 20.0;
            }
        }
        let x = seeded_tensor([32, 5, 1], 2);
        let (y, _) = gru.forward(&p, &x);
        assert!(y.data().iter().all(|&v| v.abs() < 1.0));
    }

    #[test]
    fn gradients_match_finite_differences_over_full_sequence() {
        let gru = BiGru::new("g", 3, 4);
        let mut p = ParamStore::<f64>::new();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        gru.init(&mut p, &mut rng);
        // Nonzero biases so every gate path carries gradient.
        for name in ["g.fwd.bx", "g.fwd.bh", "g.bwd.bx", "g.bwd.bh"] {
            for v in &mut p.get_mut(name).data {
                *v = rng.random_range(-0.2..0.2);
            }
        }
        let x = seeded_tensor([7, 3, 1], 3);
        let fwd = |p: &ParamStore<f64>, x: &Tensor<f64>| gru.forward(p, x);
        let bwd = |p: &ParamStore<f64>,
                   cache: &BiGruCache<f64>,
                   g: &Tensor<f64>,
                   grads: &mut Grads<f64>| gru.backward(p, cache, g, grads);
        check_param_gradients(&p, &x, fwd, bwd, 25);
        check_input_gradient(&p, &x, fwd, bwd, 21);
    }
}
