//! Gated recurrent unit and dense layers with hand-written backward passes.
//!
//! Gate order in every stacked matrix is update (z), reset (r), candidate (n):
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)
//! r  = sigmoid(Wr x + Ur h + br)
//! n  = tanh(Wn x + Un (r * h) + bn)
//! h' = z * h + (1 - z) * n
//! ```

use rand::Rng;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `out[i] += W[i, :] . x` for a row-major `W` with `cols` columns.
pub(crate) fn matvec_add(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += W^T v`.
pub(crate) fn matvec_t_add(w: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (&vi, row) in v.iter().zip(w.chunks_exact(cols)) {
        if vi != 0.0 {
            axpy(out, vi, row);
        }
    }
}

/// `G += v x^T`.
pub(crate) fn outer_add(g: &mut [f64], cols: usize, v: &[f64], x: &[f64]) {
    for (&vi, row) in v.iter().zip(g.chunks_exact_mut(cols)) {
        if vi != 0.0 {
            axpy(row, vi, x);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn uniform_fill<R: Rng>(rng: &mut R, len: usize, bound: f64) -> Vec<f64> {
    (0..len)
        .map(|_| rng.gen_range(-bound..=bound) as f32 as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub input: usize,
    pub hidden: usize,
    /// `3 * hidden` rows of `input` columns.
    pub w_input: Vec<f64>,
    /// `3 * hidden` rows of `hidden` columns.
    pub w_recurrent: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Forward activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub rh: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w_input: vec![0.0; 3 * hidden * input],
            w_recurrent: vec![0.0; 3 * hidden * hidden],
            bias: vec![0.0; 3 * hidden],
        }
    }

    pub fn random<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            input,
            hidden,
            w_input: uniform_fill(rng, 3 * hidden * input, 1.0 / (input as f64).sqrt()),
            w_recurrent: uniform_fill(rng, 3 * hidden * hidden, 1.0 / (hidden as f64).sqrt()),
            bias: uniform_fill(rng, 3 * hidden, 1.0 / (hidden as f64).sqrt()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w_input.len() + self.w_recurrent.len() + self.bias.len()
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> GruStep {
        let hd = self.hidden;
        let (wi, wh) = (&self.w_input, &self.w_recurrent);
        let ni = self.input;

        let mut z = self.bias[..hd].to_vec();
        matvec_add(&wi[..hd * ni], ni, x, &mut z);
        matvec_add(&wh[..hd * hd], hd, h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = self.bias[hd..2 * hd].to_vec();
        matvec_add(&wi[hd * ni..2 * hd * ni], ni, x, &mut r);
        matvec_add(&wh[hd * hd..2 * hd * hd], hd, h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut n = self.bias[2 * hd..].to_vec();
        matvec_add(&wi[2 * hd * ni..], ni, x, &mut n);
        matvec_add(&wh[2 * hd * hd..], hd, &rh, &mut n);
        n.iter_mut().for_each(|v| *v = v.tanh());

        let h = (0..hd)
            .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * n[i])
            .collect();
        GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            rh,
            h,
        }
    }

    /// Accumulates parameter gradients into `grad`; writes input and
    /// previous-state gradients into `dx` / `dh_prev` (added, not replaced).
    pub fn backward(
        &self,
        step: &GruStep,
        dh: &[f64],
        grad: &mut GruLayer,
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let hd = self.hidden;
        let ni = self.input;
        let mut da_z = vec![0.0; hd];
        let mut da_r = vec![0.0; hd];
        let mut da_n = vec![0.0; hd];
        for i in 0..hd {
            let (z, n) = (step.z[i], step.n[i]);
            dh_prev[i] += dh[i] * z;
            da_z[i] = dh[i] * (step.h_prev[i] - n) * z * (1.0 - z);
            da_n[i] = dh[i] * (1.0 - z) * (1.0 - n * n);
        }

        let mut d_rh = vec![0.0; hd];
        matvec_t_add(&self.w_recurrent[2 * hd * hd..], hd, &da_n, &mut d_rh);
        for i in 0..hd {
            let r = step.r[i];
            dh_prev[i] += d_rh[i] * r;
            da_r[i] = d_rh[i] * step.h_prev[i] * r * (1.0 - r);
        }

        let blocks = [(&da_z, 0usize), (&da_r, 1), (&da_n, 2)];
        for (da, b) in blocks {
            let wi = &self.w_input[b * hd * ni..(b + 1) * hd * ni];
            matvec_t_add(wi, ni, da, dx);
            outer_add(
                &mut grad.w_input[b * hd * ni..(b + 1) * hd * ni],
                ni,
                da,
                &step.x,
            );
            let rec_in = if b == 2 { &step.rh } else { &step.h_prev };
            outer_add(
                &mut grad.w_recurrent[b * hd * hd..(b + 1) * hd * hd],
                hd,
                da,
                rec_in,
            );
            if b != 2 {
                matvec_t_add(
                    &self.w_recurrent[b * hd * hd..(b + 1) * hd * hd],
                    hd,
                    da,
                    dh_prev,
                );
            }
            axpy(&mut grad.bias[b * hd..(b + 1) * hd], 1.0, da);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            weight: vec![0.0; input * output],
            bias: vec![0.0; output],
        }
    }

    pub fn random<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            input,
            output,
            weight: uniform_fill(rng, input * output, bound),
            bias: uniform_fill(rng, output, bound),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `tanh(W x + b)`
    pub fn forward_tanh(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        matvec_add(&self.weight, self.input, x, &mut y);
        y.iter_mut().for_each(|v| *v = v.tanh());
        y
    }

    /// Backward through `tanh(W x + b)` given the output `y` and `dy`.
    pub fn backward_tanh(
        &self,
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        grad: &mut Dense,
        dx: &mut [f64],
    ) {
        let da: Vec<f64> = y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect();
        outer_add(&mut grad.weight, self.input, &da, x);
        axpy(&mut grad.bias, 1.0, &da);
        matvec_t_add(&self.weight, self.input, &da, dx);
    }
}
