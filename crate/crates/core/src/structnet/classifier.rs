use crate::numerics::RngStream;

/// Fully connected ReLU network with a scalar logit output.
///
/// Parameters live in one flat vector, layer by layer: the `out x in`
/// weight matrix (row-major) followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Classifier {
    /// Zero-initialized network with layer widths `sizes` (input first, output last).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && *sizes.last().unwrap() == 1, "classifier must end in one logit");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`) for ReLU layers,
    /// `sqrt(1 / fan_in)` for the output layer, zero biases.
    pub fn random(sizes: &[usize], rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(sizes);
        let layers = net.sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let gain = if l + 1 == layers { 1.0 } else { 2.0 };
            let std = (gain / fan_in as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = std * rng.standard_normal();
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        let net = Self::zeros(sizes);
        (net.params.len() == params.len()).then_some(Self { params, ..net })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Total number of hidden units; size of the pre-activation buffer.
    pub(crate) fn hidden_units(&self) -> usize {
        self.sizes[1..self.sizes.len() - 1].iter().sum()
    }

    /// Logit for `input`; hidden pre-activations are written to `pre`.
    pub(crate) fn forward(&self, input: &[f64], pre: &mut [f64], act: &mut [f64]) -> f64 {
        match *self.sizes {
            [4, 16, 8, 1] => fixed::forward::<4, 16, 8>(&self.params, input, pre, act),
            [8, 16, 8, 1] => fixed::forward::<8, 16, 8>(&self.params, input, pre, act),
            _ => self.forward_any(input, pre, act),
        }
    }

    fn forward_any(&self, input: &[f64], pre: &mut [f64], act: &mut [f64]) -> f64 {
        let layers = self.sizes.len() - 1;
        let (mut off, mut hoff) = (0, 0);
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = self.params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (prev, next) = act.split_at_mut(hoff);
            let x: &[f64] = if l == 0 { &input[..n_in] } else { &prev[hoff - n_in..] };
            if l + 1 == layers {
                return b[0] + dot(&w[..n_in], x);
            }
            for (o, row) in w.chunks_exact(n_in).enumerate() {
                let s = b[o] + dot(row, x);
                pre[hoff + o] = s;
                next[o] = s.max(0.0);
            }
            hoff += n_out;
            off += n_in * n_out + n_out;
        }
        unreachable!("classifier has an output layer")
    }

    /// Accumulates `dlogit`-scaled parameter gradients into `grad` and writes
    /// the input gradient to `d_input`. `delta` is scratch of `hidden_units()` length.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        input: &[f64],
        pre: &[f64],
        act: &[f64],
        dlogit: f64,
        grad: &mut [f64],
        delta: &mut [f64],
        d_input: &mut [f64],
    ) {
        match *self.sizes {
            [4, 16, 8, 1] => fixed::backward::<4, 16, 8>(&self.params, input, pre, act, dlogit, grad, d_input),
            [8, 16, 8, 1] => fixed::backward::<8, 16, 8>(&self.params, input, pre, act, dlogit, grad, d_input),
            _ => self.backward_any(input, pre, act, dlogit, grad, delta, d_input),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_any(
        &self,
        input: &[f64],
        pre: &[f64],
        act: &[f64],
        dlogit: f64,
        grad: &mut [f64],
        delta: &mut [f64],
        d_input: &mut [f64],
    ) {
        let layers = self.sizes.len() - 1;
        let mut off = self.params.len();
        // Start of layer l's input activations in the hidden buffers (l >= 1).
        let mut hin = self.hidden_units();
        let out = [dlogit];
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            off -= n_in * n_out + n_out;
            let hout = hin;
            if l > 0 {
                hin -= n_in;
            }
            let (below, above) = delta.split_at_mut(hout);
            let out_delta: &[f64] = if l + 1 == layers { &out } else { &above[..n_out] };
            let x: &[f64] = if l == 0 { &input[..n_in] } else { &act[hin..hout] };
            let d_in: &mut [f64] = if l == 0 { &mut d_input[..n_in] } else { &mut below[hin..hout] };
            d_in.iter_mut().for_each(|v| *v = 0.0);
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let w = &self.params[off..off + n_in * n_out];
            for (o, ((&d, grow), row)) in out_delta.iter().zip(gw.chunks_exact_mut(n_in)).zip(w.chunks_exact(n_in)).enumerate() {
                if d == 0.0 {
                    continue;
                }
                for ((g, xi), (di, wi)) in grow.iter_mut().zip(x).zip(d_in.iter_mut().zip(row)) {
                    *g += d * xi;
                    *di += d * wi;
                }
                gb[o] += d;
            }
            if l > 0 {
                for (di, &p) in d_in.iter_mut().zip(&pre[hin..hout]) {
                    if p <= 0.0 {
                        *di = 0.0;
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-hidden-layer networks with compile-time widths, same parameter layout.
mod fixed {
    struct Layers<'a, const I: usize, const H1: usize, const H2: usize> {
        w1: &'a [[f64; I]; H1],
        b1: &'a [f64; H1],
        w2: &'a [[f64; H1]; H2],
        b2: &'a [f64; H2],
        w3: &'a [f64; H2],
    }

    fn split<const I: usize, const H1: usize, const H2: usize>(p: &[f64]) -> (Layers<'_, I, H1, H2>, f64) {
        let (w1, p) = p.split_at(I * H1);
        let (b1, p) = p.split_at(H1);
        let (w2, p) = p.split_at(H1 * H2);
        let (b2, p) = p.split_at(H2);
        let (w3, p) = p.split_at(H2);
        let layers = Layers {
            w1: w1.as_chunks::<I>().0.try_into().unwrap(),
            b1: b1.try_into().unwrap(),
            w2: w2.as_chunks::<H1>().0.try_into().unwrap(),
            b2: b2.try_into().unwrap(),
            w3: w3.try_into().unwrap(),
        };
        (layers, p[0])
    }

    #[inline]
    fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub(super) fn forward<const I: usize, const H1: usize, const H2: usize>(
        params: &[f64],
        input: &[f64],
        pre: &mut [f64],
        act: &mut [f64],
    ) -> f64 {
        let (n, b3) = split::<I, H1, H2>(params);
        let x: &[f64; I] = input[..I].try_into().unwrap();
        let (p1, p2) = pre[..H1 + H2].split_at_mut(H1);
        let (a1, a2) = act[..H1 + H2].split_at_mut(H1);
        let (p1, a1): (&mut [f64; H1], &mut [f64; H1]) = (p1.try_into().unwrap(), a1.try_into().unwrap());
        let (p2, a2): (&mut [f64; H2], &mut [f64; H2]) = (p2.try_into().unwrap(), a2.try_into().unwrap());
        for o in 0..H1 {
            p1[o] = n.b1[o] + dot(&n.w1[o], x);
            a1[o] = p1[o].max(0.0);
        }
        for o in 0..H2 {
            p2[o] = n.b2[o] + dot(&n.w2[o], a1);
            a2[o] = p2[o].max(0.0);
        }
        b3 + dot(n.w3, a2)
    }

    pub(super) fn backward<const I: usize, const H1: usize, const H2: usize>(
        params: &[f64],
        input: &[f64],
        pre: &[f64],
        act: &[f64],
        dlogit: f64,
        grad: &mut [f64],
        d_input: &mut [f64],
    ) {
        let (n, _) = split::<I, H1, H2>(params);
        let x: &[f64; I] = input[..I].try_into().unwrap();
        let p1: &[f64; H1] = pre[..H1].try_into().unwrap();
        let p2: &[f64; H2] = pre[H1..H1 + H2].try_into().unwrap();
        let a1: &[f64; H1] = act[..H1].try_into().unwrap();
        let a2: &[f64; H2] = act[H1..H1 + H2].try_into().unwrap();
        let (gw1, g) = grad.split_at_mut(I * H1);
        let (gb1, g) = g.split_at_mut(H1);
        let (gw2, g) = g.split_at_mut(H1 * H2);
        let (gb2, g) = g.split_at_mut(H2);
        let (gw3, gb3) = g.split_at_mut(H2);
        gb3[0] += dlogit;
        let mut d2 = [0.0; H2];
        for o in 0..H2 {
            gw3[o] += dlogit * a2[o];
            d2[o] = if p2[o] > 0.0 { dlogit * n.w3[o] } else { 0.0 };
        }
        let mut d1 = [0.0; H1];
        let gw2: &mut [[f64; H1]] = gw2.as_chunks_mut::<H1>().0;
        for o in 0..H2 {
            let d = d2[o];
            gb2[o] += d;
            for (k, (g, w)) in gw2[o].iter_mut().zip(&n.w2[o]).enumerate() {
                *g += d * a1[k];
                d1[k] += d * w;
            }
        }
        for (d, p) in d1.iter_mut().zip(p1) {
            if *p <= 0.0 {
                *d = 0.0;
            }
        }
        let d_in: &mut [f64; I] = (&mut d_input[..I]).try_into().unwrap();
        *d_in = [0.0; I];
        let gw1: &mut [[f64; I]] = gw1.as_chunks_mut::<I>().0;
        for o in 0..H1 {
            let d = d1[o];
            gb1[o] += d;
            for k in 0..I {
                gw1[o][k] += d * x[k];
                d_in[k] += d * n.w1[o][k];
            }
        }
    }
}
