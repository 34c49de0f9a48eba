//! GRU and LSTM cells with explicit backward passes.
//!
//! Gate blocks are stacked gate-major: rows `k*D..(k+1)*D` of the input
//! matrix `W` (`D x H`), recurrent matrix `U` (`D x D`) and bias belong to
//! gate `k`. GRU gate order is (update z, reset r, candidate n); LSTM
//! order is (input i, forget f, cell g, output o).

use super::math::{sigmoid, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    /// Parameter count for input width `h` and hidden width `d`.
    pub fn param_count(self, h: usize, d: usize) -> usize {
        self.gates() * (d * h + d * d + d)
    }
}

/// Borrowed view of one cell's parameters (or of their gradients).
pub struct CellParams<'a> {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
}

pub struct CellGrads<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

impl<'a> CellParams<'a> {
    pub fn split(kind: CellKind, input: usize, hidden: usize, values: &'a [f64]) -> Self {
        let g = kind.gates();
        let (w, rest) = values.split_at(g * hidden * input);
        let (u, b) = rest.split_at(g * hidden * hidden);
        debug_assert_eq!(b.len(), g * hidden);
        CellParams {
            kind,
            input,
            hidden,
            w,
            u,
            b,
        }
    }

    fn w_gate(&self, k: usize) -> Mat<'a> {
        let n = self.hidden * self.input;
        Mat::new(&self.w[k * n..(k + 1) * n], self.hidden, self.input)
    }

    fn u_gate(&self, k: usize) -> Mat<'a> {
        let n = self.hidden * self.hidden;
        Mat::new(&self.u[k * n..(k + 1) * n], self.hidden, self.hidden)
    }

    fn b_gate(&self, k: usize) -> &'a [f64] {
        &self.b[k * self.hidden..(k + 1) * self.hidden]
    }

    /// `W_k x + U_k h + b_k`
    fn preact(&self, k: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = self.w_gate(k).mul_vec(x);
        let uh = self.u_gate(k).mul_vec(h);
        for ((a, uh), b) in a.iter_mut().zip(uh).zip(self.b_gate(k)) {
            *a += uh + b;
        }
        a
    }
}

impl<'a> CellGrads<'a> {
    pub fn split(kind: CellKind, input: usize, hidden: usize, values: &'a mut [f64]) -> Self {
        let g = kind.gates();
        let (w, rest) = values.split_at_mut(g * hidden * input);
        let (u, b) = rest.split_at_mut(g * hidden * hidden);
        CellGrads { w, u, b }
    }

    /// Accumulates the gradient of gate `k`'s pre-activation `W_k x + U_k hin + b_k`.
    fn add_gate(
        &mut self,
        k: usize,
        input: usize,
        hidden: usize,
        da: &[f64],
        x: &[f64],
        hin: &[f64],
    ) {
        let wn = hidden * input;
        let un = hidden * hidden;
        for (row, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let w = &mut self.w[k * wn + row * input..k * wn + (row + 1) * input];
            for (w, &xv) in w.iter_mut().zip(x) {
                *w += d * xv;
            }
            let u = &mut self.u[k * un + row * hidden..k * un + (row + 1) * hidden];
            for (u, &hv) in u.iter_mut().zip(hin) {
                *u += d * hv;
            }
            self.b[k * hidden + row] += d;
        }
    }
}

/// Recurrent state: `h`, plus the memory cell `c` for LSTMs (empty for GRUs).
#[derive(Clone, Debug, PartialEq)]
pub struct RnnState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RnnState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        let c = match kind {
            CellKind::Gru => Vec::new(),
            CellKind::Lstm => vec![0.0; hidden],
        };
        RnnState {
            h: vec![0.0; hidden],
            c,
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct StepCache {
    x: Vec<f64>,
    prev: RnnState,
    gates: Vec<Vec<f64>>,
    // GRU: r ⊙ h_prev. LSTM: tanh(c_new).
    aux: Vec<f64>,
}

pub fn step(p: &CellParams, x: &[f64], prev: &RnnState) -> (RnnState, StepCache) {
    let d = p.hidden;
    match p.kind {
        CellKind::Gru => {
            let z: Vec<f64> = p.preact(0, x, &prev.h).into_iter().map(sigmoid).collect();
            let r: Vec<f64> = p.preact(1, x, &prev.h).into_iter().map(sigmoid).collect();
            let rh: Vec<f64> = r.iter().zip(&prev.h).map(|(r, h)| r * h).collect();
            let n: Vec<f64> = p.preact(2, x, &rh).into_iter().map(f64::tanh).collect();
            let h: Vec<f64> = (0..d)
                .map(|j| z[j] * prev.h[j] + (1.0 - z[j]) * n[j])
                .collect();
            let cache = StepCache {
                x: x.to_vec(),
                prev: prev.clone(),
                gates: vec![z, r, n],
                aux: rh,
            };
            (RnnState { h, c: Vec::new() }, cache)
        }
        CellKind::Lstm => {
            let i: Vec<f64> = p.preact(0, x, &prev.h).into_iter().map(sigmoid).collect();
            let f: Vec<f64> = p.preact(1, x, &prev.h).into_iter().map(sigmoid).collect();
            let g: Vec<f64> = p.preact(2, x, &prev.h).into_iter().map(f64::tanh).collect();
            let o: Vec<f64> = p.preact(3, x, &prev.h).into_iter().map(sigmoid).collect();
            let c: Vec<f64> = (0..d).map(|j| f[j] * prev.c[j] + i[j] * g[j]).collect();
            let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h: Vec<f64> = (0..d).map(|j| o[j] * tc[j]).collect();
            let cache = StepCache {
                x: x.to_vec(),
                prev: prev.clone(),
                gates: vec![i, f, g, o],
                aux: tc,
            };
            (RnnState { h, c }, cache)
        }
    }
}

/// Backward through one step. `dnext` holds the loss gradient w.r.t. the
/// step's output state; returns `(dx, dprev)`.
pub fn step_backward(
    p: &CellParams,
    cache: &StepCache,
    dnext: &RnnState,
    grads: &mut CellGrads,
) -> (Vec<f64>, RnnState) {
    let (h_in, d) = (p.input, p.hidden);
    let x = &cache.x;
    let hp = &cache.prev.h;
    let mut dx = vec![0.0; h_in];
    let mut dh_prev = vec![0.0; d];
    let mut dc_prev = Vec::new();

    // dx += W_kᵀ da, dhin += U_kᵀ da
    let mut through = |k: usize, da: &[f64], dhin: &mut [f64]| {
        p.w_gate(k).add_tmul_vec(da, &mut dx);
        p.u_gate(k).add_tmul_vec(da, dhin);
    };

    match p.kind {
        CellKind::Gru => {
            let (z, r, n) = (&cache.gates[0], &cache.gates[1], &cache.gates[2]);
            let rh = &cache.aux;
            let dh = &dnext.h;
            let dan: Vec<f64> = (0..d)
                .map(|j| dh[j] * (1.0 - z[j]) * (1.0 - n[j] * n[j]))
                .collect();
            let daz: Vec<f64> = (0..d)
                .map(|j| dh[j] * (hp[j] - n[j]) * z[j] * (1.0 - z[j]))
                .collect();
            for j in 0..d {
                dh_prev[j] += dh[j] * z[j];
            }
            grads.add_gate(2, h_in, d, &dan, x, rh);
            let mut drh = vec![0.0; d];
            through(2, &dan, &mut drh);
            let dar: Vec<f64> = (0..d)
                .map(|j| drh[j] * hp[j] * r[j] * (1.0 - r[j]))
                .collect();
            for j in 0..d {
                dh_prev[j] += drh[j] * r[j];
            }
            grads.add_gate(0, h_in, d, &daz, x, hp);
            grads.add_gate(1, h_in, d, &dar, x, hp);
            through(0, &daz, &mut dh_prev);
            through(1, &dar, &mut dh_prev);
        }
        CellKind::Lstm => {
            let (i, f, g, o) = (
                &cache.gates[0],
                &cache.gates[1],
                &cache.gates[2],
                &cache.gates[3],
            );
            let tc = &cache.aux;
            let cp = &cache.prev.c;
            let dc: Vec<f64> = (0..d)
                .map(|j| dnext.c[j] + dnext.h[j] * o[j] * (1.0 - tc[j] * tc[j]))
                .collect();
            let dai: Vec<f64> = (0..d).map(|j| dc[j] * g[j] * i[j] * (1.0 - i[j])).collect();
            let daf: Vec<f64> = (0..d)
                .map(|j| dc[j] * cp[j] * f[j] * (1.0 - f[j]))
                .collect();
            let dag: Vec<f64> = (0..d).map(|j| dc[j] * i[j] * (1.0 - g[j] * g[j])).collect();
            let dao: Vec<f64> = (0..d)
                .map(|j| dnext.h[j] * tc[j] * o[j] * (1.0 - o[j]))
                .collect();
            dc_prev = (0..d).map(|j| dc[j] * f[j]).collect();
            for (k, da) in [&dai, &daf, &dag, &dao].into_iter().enumerate() {
                grads.add_gate(k, h_in, d, da, x, hp);
                through(k, da, &mut dh_prev);
            }
        }
    }
    (
        dx,
        RnnState {
            h: dh_prev,
            c: dc_prev,
        },
    )
}
