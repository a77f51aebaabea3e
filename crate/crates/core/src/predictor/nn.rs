//! Layer primitives with explicit backward passes.
//!
//! All activations use a "features x batch" layout: a row-major matrix whose
//! column `b` holds sample `b`. Convolution activations are `[C][B][H][W]`,
//! which is the same thing with the spatial positions folded into the column
//! index. Parameters live in one flat `Vec<f64>`; layers hold offsets into it.

use std::ops::Range;

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows x cols`.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "matrix view out of bounds");
        MatRef {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha * a * b + beta * c`, with `c` row-major `a.rows x b.cols`.
pub fn gemm(alpha: f64, a: MatRef, b: MatRef, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the MatRef constructors guarantee the views lie inside their
    // slices (transposition only swaps strides) and `c` holds m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU expressed through its output.
pub fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub len: usize,
}

impl ParamLayout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len;
        let spec = TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.len += spec.len();
        self.tensors.push(spec);
        offset
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Fully connected layer `y = W x + b`, `W` is `n_out x n_in`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn register(layout: &mut ParamLayout, name: &str, n_in: usize, n_out: usize) -> Self {
        let w = layout.add(format!("{name}.w"), &[n_out, n_in]);
        let b = layout.add(format!("{name}.b"), &[n_out]);
        Dense { w, b, n_in, n_out }
    }

    fn weights<'a>(&self, p: &'a [f64]) -> MatRef<'a> {
        MatRef::new(&p[self.w..self.w + self.n_in * self.n_out], self.n_out, self.n_in)
    }

    pub fn forward(&self, p: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.n_out * batch];
        for (o, row) in y.chunks_mut(batch).enumerate() {
            row.fill(p[self.b + o]);
        }
        gemm(1.0, self.weights(p), MatRef::new(x, self.n_in, batch), 1.0, &mut y);
        y
    }

    /// Accumulates parameter gradients into `g`; returns `dx` when asked.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: &[f64],
        dy: &[f64],
        batch: usize,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let dyv = MatRef::new(dy, self.n_out, batch);
        gemm(
            1.0,
            dyv,
            MatRef::new(x, self.n_in, batch).t(),
            1.0,
            &mut g[self.w..self.w + self.n_in * self.n_out],
        );
        for (o, row) in dy.chunks(batch).enumerate() {
            g[self.b + o] += row.iter().sum::<f64>();
        }
        want_dx.then(|| {
            let mut dx = vec![0.0; self.n_in * batch];
            gemm(1.0, self.weights(p).t(), dyv, 0.0, &mut dx);
            dx
        })
    }
}

/// 2-D convolution over `[C][B][H][W]` activations via im2col.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub w: usize,
    pub b: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Spatial size of a `[C][B][H][W]` activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spatial {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
}

impl Spatial {
    pub fn plane(&self) -> usize {
        self.batch * self.h * self.w
    }
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = layout.add(format!("{name}.w"), &[c_out, c_in, kernel, kernel]);
        let b = layout.add(format!("{name}.b"), &[c_out]);
        Conv2d {
            w,
            b,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    pub fn out_shape(&self, s: Spatial) -> Spatial {
        Spatial {
            batch: s.batch,
            h: (s.h + 2 * self.pad - self.kernel) / self.stride + 1,
            w: (s.w + 2 * self.pad - self.kernel) / self.stride + 1,
        }
    }

    fn weights<'a>(&self, p: &'a [f64]) -> MatRef<'a> {
        MatRef::new(&p[self.w..self.w + self.c_out * self.fan_in()], self.c_out, self.fan_in())
    }

    fn im2col(&self, x: &[f64], s: Spatial) -> Vec<f64> {
        let o = self.out_shape(s);
        let k = self.kernel;
        let n = o.plane();
        let mut cols = vec![0.0; self.fan_in() * n];
        for ci in 0..self.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for b in 0..s.batch {
                        let src = &x[(ci * s.batch + b) * s.h * s.w..][..s.h * s.w];
                        for oy in 0..o.h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * s.w..][..s.w];
                            let dst_row = &mut dst[(b * o.h + oy) * o.w..][..o.w];
                            for (ox, d) in dst_row.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < s.w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f64], s: Spatial) -> Vec<f64> {
        let o = self.out_shape(s);
        let k = self.kernel;
        let n = o.plane();
        let mut dx = vec![0.0; self.c_in * s.plane()];
        for ci in 0..self.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &dcols[row * n..(row + 1) * n];
                    for b in 0..s.batch {
                        let dst = &mut dx[(ci * s.batch + b) * s.h * s.w..][..s.h * s.w];
                        for oy in 0..o.h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            let src_row = &src[(b * o.h + oy) * o.w..][..o.w];
                            let dst_row = &mut dst[iy as usize * s.w..][..s.w];
                            for (ox, v) in src_row.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < s.w as isize {
                                    dst_row[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output and the im2col buffer needed by `backward`.
    pub fn forward(&self, p: &[f64], x: &[f64], s: Spatial) -> (Vec<f64>, Vec<f64>) {
        let o = self.out_shape(s);
        let n = o.plane();
        let cols = self.im2col(x, s);
        let mut y = vec![0.0; self.c_out * n];
        for (c, row) in y.chunks_mut(n).enumerate() {
            row.fill(p[self.b + c]);
        }
        gemm(1.0, self.weights(p), MatRef::new(&cols, self.fan_in(), n), 1.0, &mut y);
        (y, cols)
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cols: &[f64],
        dy: &[f64],
        s: Spatial,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let n = self.out_shape(s).plane();
        let dyv = MatRef::new(dy, self.c_out, n);
        gemm(
            1.0,
            dyv,
            MatRef::new(cols, self.fan_in(), n).t(),
            1.0,
            &mut g[self.w..self.w + self.c_out * self.fan_in()],
        );
        for (c, row) in dy.chunks(n).enumerate() {
            g[self.b + c] += row.iter().sum::<f64>();
        }
        want_dx.then(|| {
            let mut dcols = vec![0.0; self.fan_in() * n];
            gemm(1.0, self.weights(p).t(), dyv, 0.0, &mut dcols);
            self.col2im(&dcols, s)
        })
    }
}

/// Single-layer LSTM. Gate rows are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
    pub n_in: usize,
    pub hidden: usize,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Gate activations per step, `[4H x B]` each (already squashed).
    gates: Vec<Vec<f64>>,
    /// Cell state per step (index 0 is the zero initial state).
    cells: Vec<Vec<f64>>,
    /// Hidden state per step (index 0 is the zero initial state).
    hiddens: Vec<Vec<f64>>,
    batch: usize,
}

impl LstmCache {
    pub fn last_hidden(&self) -> &[f64] {
        self.hiddens.last().expect("at least the initial state")
    }
}

impl Lstm {
    pub fn register(layout: &mut ParamLayout, name: &str, n_in: usize, hidden: usize) -> Self {
        let wx = layout.add(format!("{name}.wx"), &[4 * hidden, n_in]);
        let wh = layout.add(format!("{name}.wh"), &[4 * hidden, hidden]);
        let b = layout.add(format!("{name}.b"), &[4 * hidden]);
        Lstm {
            wx,
            wh,
            b,
            n_in,
            hidden,
        }
    }

    /// `inputs[t]` is `[n_in x B]`.
    pub fn forward(&self, p: &[f64], inputs: &[Vec<f64>], batch: usize) -> LstmCache {
        let h4 = 4 * self.hidden;
        let hb = self.hidden * batch;
        let wx = MatRef::new(&p[self.wx..self.wx + h4 * self.n_in], h4, self.n_in);
        let wh = MatRef::new(&p[self.wh..self.wh + h4 * self.hidden], h4, self.hidden);
        let mut cache = LstmCache {
            gates: Vec::with_capacity(inputs.len()),
            cells: vec![vec![0.0; hb]],
            hiddens: vec![vec![0.0; hb]],
            batch,
        };
        for x in inputs {
            let mut a = vec![0.0; h4 * batch];
            for (r, row) in a.chunks_mut(batch).enumerate() {
                row.fill(p[self.b + r]);
            }
            gemm(1.0, wx, MatRef::new(x, self.n_in, batch), 1.0, &mut a);
            let h_prev = cache.hiddens.last().expect("state");
            gemm(1.0, wh, MatRef::new(h_prev, self.hidden, batch), 1.0, &mut a);
            let (ifo_i, rest) = a.split_at_mut(hb);
            let (ifo_f, rest) = rest.split_at_mut(hb);
            let (gg, ifo_o) = rest.split_at_mut(hb);
            let c_prev = cache.cells.last().expect("state");
            let mut c = vec![0.0; hb];
            let mut h = vec![0.0; hb];
            for j in 0..hb {
                let i = sigmoid(ifo_i[j]);
                let f = sigmoid(ifo_f[j]);
                let g = gg[j].tanh();
                let o = sigmoid(ifo_o[j]);
                ifo_i[j] = i;
                ifo_f[j] = f;
                gg[j] = g;
                ifo_o[j] = o;
                c[j] = f * c_prev[j] + i * g;
                h[j] = o * c[j].tanh();
            }
            cache.gates.push(a);
            cache.cells.push(c);
            cache.hiddens.push(h);
        }
        cache
    }

    /// Backpropagates a gradient on the final hidden state. Returns `d inputs[t]`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        inputs: &[Vec<f64>],
        cache: &LstmCache,
        d_last: &[f64],
    ) -> Vec<Vec<f64>> {
        let batch = cache.batch;
        let h4 = 4 * self.hidden;
        let hb = self.hidden * batch;
        let wx = MatRef::new(&p[self.wx..self.wx + h4 * self.n_in], h4, self.n_in);
        let wh = MatRef::new(&p[self.wh..self.wh + h4 * self.hidden], h4, self.hidden);
        let mut dh = d_last.to_vec();
        let mut dc = vec![0.0; hb];
        let mut dxs = vec![Vec::new(); inputs.len()];
        let mut da = vec![0.0; h4 * batch];
        for t in (0..inputs.len()).rev() {
            let gates = &cache.gates[t];
            let c = &cache.cells[t + 1];
            let c_prev = &cache.cells[t];
            for j in 0..hb {
                let (i, f, gg, o) = (gates[j], gates[hb + j], gates[2 * hb + j], gates[3 * hb + j]);
                let tc = c[j].tanh();
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                da[j] = dcj * gg * i * (1.0 - i);
                da[hb + j] = dcj * c_prev[j] * f * (1.0 - f);
                da[2 * hb + j] = dcj * i * (1.0 - gg * gg);
                da[3 * hb + j] = dh[j] * tc * o * (1.0 - o);
                dc[j] = dcj * f;
            }
            let dav = MatRef::new(&da, h4, batch);
            gemm(
                1.0,
                dav,
                MatRef::new(&inputs[t], self.n_in, batch).t(),
                1.0,
                &mut g[self.wx..self.wx + h4 * self.n_in],
            );
            gemm(
                1.0,
                dav,
                MatRef::new(&cache.hiddens[t], self.hidden, batch).t(),
                1.0,
                &mut g[self.wh..self.wh + h4 * self.hidden],
            );
            for (r, row) in da.chunks(batch).enumerate() {
                g[self.b + r] += row.iter().sum::<f64>();
            }
            let mut dx = vec![0.0; self.n_in * batch];
            gemm(1.0, wx.t(), dav, 0.0, &mut dx);
            dxs[t] = dx;
            gemm(1.0, wh.t(), dav, 0.0, &mut dh);
        }
        dxs
    }
}
