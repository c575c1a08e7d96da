//! Convolution primitives with hand-written backward passes.
//!
//! Weights live in a flat parameter arena owned by the network; a
//! [`ConvSpec`] records shapes and arena offsets. Weight layout is
//! `[kr][kc][cin][cout]` so the innermost loops run over contiguous
//! output channels.

use super::{Scalar, Tensor};

/// Shape and arena placement of one (possibly transposed) convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub transposed: bool,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvSpec {
    pub fn w_len(&self) -> usize {
        self.kernel * self.kernel * self.in_ch * self.out_ch
    }

    pub fn b_len(&self) -> usize {
        self.out_ch
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.transposed {
            (
                (h - 1) * self.stride + self.kernel - 2 * self.pad,
                (w - 1) * self.stride + self.kernel - 2 * self.pad,
            )
        } else {
            (
                (h + 2 * self.pad - self.kernel) / self.stride + 1,
                (w + 2 * self.pad - self.kernel) / self.stride + 1,
            )
        }
    }

    /// Glorot-uniform limit for this layer's weights.
    pub fn init_limit(&self) -> f64 {
        let fan_in = self.kernel * self.kernel * self.in_ch;
        let fan_out = self.kernel * self.kernel * self.out_ch;
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &Tensor<T>) -> Tensor<T> {
        if self.transposed {
            self.tconv_forward(params, x)
        } else {
            self.conv_forward(params, x)
        }
    }

    /// Backward pass: accumulates weight/bias gradients into `grads` (same
    /// layout as the parameter arena) and returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        x: &Tensor<T>,
        d_out: &Tensor<T>,
        grads: &mut [T],
    ) -> Tensor<T> {
        if self.transposed {
            self.tconv_backward(params, x, d_out, grads)
        } else {
            self.conv_backward(params, x, d_out, grads)
        }
    }

    fn conv_forward<T: Scalar>(&self, params: &[T], x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.channels, self.in_ch);
        let (oh, ow) = self.out_dims(x.height, x.width);
        let (k, cin, cout) = (self.kernel, self.in_ch, self.out_ch);
        let w = &params[self.w_off..self.w_off + self.w_len()];
        let b = &params[self.b_off..self.b_off + self.b_len()];
        let mut out = Tensor::zeros(oh, ow, cout);
        let mut acc = vec![T::ZERO; cout];
        for or in 0..oh {
            let r_base = (or * self.stride) as isize - self.pad as isize;
            for oc in 0..ow {
                let c_base = (oc * self.stride) as isize - self.pad as isize;
                acc.copy_from_slice(b);
                for kr in 0..k {
                    let ir = r_base + kr as isize;
                    if ir < 0 || ir >= x.height as isize {
                        continue;
                    }
                    for kc in 0..k {
                        let ic = c_base + kc as isize;
                        if ic < 0 || ic >= x.width as isize {
                            continue;
                        }
                        let xoff = (ir as usize * x.width + ic as usize) * cin;
                        let woff = (kr * k + kc) * cin * cout;
                        for ci in 0..cin {
                            let xv = x.data[xoff + ci];
                            let ws = &w[woff + ci * cout..woff + (ci + 1) * cout];
                            for (a, &wv) in acc.iter_mut().zip(ws) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
                let ooff = (or * ow + oc) * cout;
                out.data[ooff..ooff + cout].copy_from_slice(&acc);
            }
        }
        out
    }

    fn conv_backward<T: Scalar>(
        &self,
        params: &[T],
        x: &Tensor<T>,
        d_out: &Tensor<T>,
        grads: &mut [T],
    ) -> Tensor<T> {
        let (oh, ow) = self.out_dims(x.height, x.width);
        debug_assert_eq!((d_out.height, d_out.width), (oh, ow));
        let (k, cin, cout) = (self.kernel, self.in_ch, self.out_ch);
        let w = &params[self.w_off..self.w_off + self.w_len()];
        let mut d_x = Tensor::zeros(x.height, x.width, cin);
        for or in 0..oh {
            let r_base = (or * self.stride) as isize - self.pad as isize;
            for oc in 0..ow {
                let c_base = (oc * self.stride) as isize - self.pad as isize;
                let doff = (or * ow + oc) * cout;
                let dvals = &d_out.data[doff..doff + cout];
                for (co, &dv) in dvals.iter().enumerate() {
                    grads[self.b_off + co] += dv;
                }
                for kr in 0..k {
                    let ir = r_base + kr as isize;
                    if ir < 0 || ir >= x.height as isize {
                        continue;
                    }
                    for kc in 0..k {
                        let ic = c_base + kc as isize;
                        if ic < 0 || ic >= x.width as isize {
                            continue;
                        }
                        let xoff = (ir as usize * x.width + ic as usize) * cin;
                        let woff = (kr * k + kc) * cin * cout;
                        for ci in 0..cin {
                            let xv = x.data[xoff + ci];
                            let ws = &w[woff + ci * cout..woff + (ci + 1) * cout];
                            let gws =
                                &mut grads[self.w_off + woff + ci * cout..][..cout];
                            let mut dxv = T::ZERO;
                            for co in 0..cout {
                                let dv = dvals[co];
                                gws[co] += xv * dv;
                                dxv += ws[co] * dv;
                            }
                            d_x.data[xoff + ci] += dxv;
                        }
                    }
                }
            }
        }
        d_x
    }

    fn tconv_forward<T: Scalar>(&self, params: &[T], x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.channels, self.in_ch);
        let (oh, ow) = self.out_dims(x.height, x.width);
        let (k, cin, cout) = (self.kernel, self.in_ch, self.out_ch);
        let w = &params[self.w_off..self.w_off + self.w_len()];
        let b = &params[self.b_off..self.b_off + self.b_len()];
        let mut out = Tensor::zeros(oh, ow, cout);
        for px in 0..oh * ow {
            out.data[px * cout..(px + 1) * cout].copy_from_slice(b);
        }
        for r in 0..x.height {
            for c in 0..x.width {
                let xoff = (r * x.width + c) * cin;
                for kr in 0..k {
                    let or = (r * self.stride + kr) as isize - self.pad as isize;
                    if or < 0 || or >= oh as isize {
                        continue;
                    }
                    for kc in 0..k {
                        let oc = (c * self.stride + kc) as isize - self.pad as isize;
                        if oc < 0 || oc >= ow as isize {
                            continue;
                        }
                        let ooff = (or as usize * ow + oc as usize) * cout;
                        let woff = (kr * k + kc) * cin * cout;
                        for ci in 0..cin {
                            let xv = x.data[xoff + ci];
                            let ws = &w[woff + ci * cout..woff + (ci + 1) * cout];
                            let os = &mut out.data[ooff..ooff + cout];
                            for (o, &wv) in os.iter_mut().zip(ws) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn tconv_backward<T: Scalar>(
        &self,
        params: &[T],
        x: &Tensor<T>,
        d_out: &Tensor<T>,
        grads: &mut [T],
    ) -> Tensor<T> {
        let (oh, ow) = self.out_dims(x.height, x.width);
        debug_assert_eq!((d_out.height, d_out.width), (oh, ow));
        let (k, cin, cout) = (self.kernel, self.in_ch, self.out_ch);
        let w = &params[self.w_off..self.w_off + self.w_len()];
        for px in 0..oh * ow {
            let ds = &d_out.data[px * cout..(px + 1) * cout];
            for (co, &dv) in ds.iter().enumerate() {
                grads[self.b_off + co] += dv;
            }
        }
        let mut d_x = Tensor::zeros(x.height, x.width, cin);
        for r in 0..x.height {
            for c in 0..x.width {
                let xoff = (r * x.width + c) * cin;
                for kr in 0..k {
                    let or = (r * self.stride + kr) as isize - self.pad as isize;
                    if or < 0 || or >= oh as isize {
                        continue;
                    }
                    for kc in 0..k {
                        let oc = (c * self.stride + kc) as isize - self.pad as isize;
                        if oc < 0 || oc >= ow as isize {
                            continue;
                        }
                        let ooff = (or as usize * ow + oc as usize) * cout;
                        let dvals = &d_out.data[ooff..ooff + cout];
                        let woff = (kr * k + kc) * cin * cout;
                        for ci in 0..cin {
                            let xv = x.data[xoff + ci];
                            let ws = &w[woff + ci * cout..woff + (ci + 1) * cout];
                            let gws =
                                &mut grads[self.w_off + woff + ci * cout..][..cout];
                            let mut dxv = T::ZERO;
                            for co in 0..cout {
                                let dv = dvals[co];
                                gws[co] += xv * dv;
                                dxv += ws[co] * dv;
                            }
                            d_x.data[xoff + ci] += dxv;
                        }
                    }
                }
            }
        }
        d_x
    }
}

pub fn leaky_relu<T: Scalar>(t: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut out = t.clone();
    for v in &mut out.data {
        if *v < T::ZERO {
            *v *= slope;
        }
    }
    out
}

/// Derivative taken from the pre-activation values.
pub fn leaky_relu_backward<T: Scalar>(pre: &Tensor<T>, d_post: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut out = d_post.clone();
    for (d, &p) in out.data.iter_mut().zip(&pre.data) {
        if p <= T::ZERO {
            *d *= slope;
        }
    }
    out
}

/// Logistic function clamped into the open interval (0, 1): the raw
/// expression saturates to exactly 0 or 1 for large finite inputs.
pub fn sigmoid<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let mut out = t.clone();
    for v in &mut out.data {
        let s = T::ONE / (T::ONE + (-*v).exp());
        *v = if s <= T::ZERO {
            T::MIN_POS
        } else if s >= T::ONE {
            T::BELOW_ONE
        } else {
            s
        };
    }
    out
}

/// Derivative taken from the post-activation values: y * (1 - y).
pub fn sigmoid_backward<T: Scalar>(post: &Tensor<T>, d_post: &Tensor<T>) -> Tensor<T> {
    let mut out = d_post.clone();
    for (d, &y) in out.data.iter_mut().zip(&post.data) {
        *d *= y * (T::ONE - y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_spec(in_ch: usize, out_ch: usize, transposed: bool) -> (ConvSpec, Vec<f64>) {
        let kernel = if transposed { 4 } else { 3 };
        let spec = ConvSpec {
            in_ch,
            out_ch,
            kernel,
            stride: 2,
            pad: 1,
            transposed,
            w_off: 0,
            b_off: kernel * kernel * in_ch * out_ch,
        };
        let params = vec![0.0; spec.w_len() + spec.b_len()];
        (spec, params)
    }

    #[test]
    fn zero_weights_emit_bias() {
        let (spec, mut params) = conv_spec(2, 3, false);
        params[spec.b_off] = 0.3;
        params[spec.b_off + 1] = -0.2;
        let x = Tensor::<f64>::zeros(8, 8, 2);
        let y = spec.forward(&params, &x);
        assert_eq!((y.height, y.width, y.channels), (4, 4, 3));
        for px in 0..16 {
            assert_eq!(y.data[px * 3], 0.3);
            assert_eq!(y.data[px * 3 + 1], -0.2);
            assert_eq!(y.data[px * 3 + 2], 0.0);
        }
    }

    /// Direct-convolution oracle: independent triple loop over the ramp.
    #[test]
    fn conv_matches_direct_dot_products() {
        let spec = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            stride: 1,
            pad: 1,
            transposed: false,
            w_off: 0,
            b_off: 9,
        };
        let mut params = vec![0.0f64; 10];
        for (i, w) in params[..9].iter_mut().enumerate() {
            *w = (i as f64 + 1.0) * 0.1;
        }
        params[9] = 0.05;
        let ramp: Vec<f64> = (0..25).map(|i| i as f64 * 0.04).collect();
        let x = Tensor::new(5, 5, 1, ramp.clone()).unwrap();
        let y = spec.forward(&params, &x);
        for or in 0..5i64 {
            for oc in 0..5i64 {
                let mut expect = params[9];
                for kr in 0..3i64 {
                    for kc in 0..3i64 {
                        let (ir, ic) = (or + kr - 1, oc + kc - 1);
                        if (0..5).contains(&ir) && (0..5).contains(&ic) {
                            expect += ramp[(ir * 5 + ic) as usize] * params[(kr * 3 + kc) as usize];
                        }
                    }
                }
                let got = y.get(or as usize, oc as usize, 0);
                assert!((got - expect).abs() < 1e-6, "({or},{oc}): {got} vs {expect}");
            }
        }
    }

    /// Scatter-add oracle for the transposed convolution on a 2x2 input.
    #[test]
    fn tconv_matches_scatter_add() {
        let (spec, mut params) = conv_spec(2, 3, true);
        for (i, w) in params[..spec.w_len()].iter_mut().enumerate() {
            *w = ((i * 37) % 19) as f64 * 0.01 - 0.09;
        }
        params[spec.b_off] = 0.02;
        params[spec.b_off + 2] = -0.01;
        let x = Tensor::new(2, 2, 2, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        let y = spec.forward(&params, &x);
        assert_eq!((y.height, y.width, y.channels), (4, 4, 3));

        let mut expect = Tensor::<f64>::zeros(4, 4, 3);
        for px in 0..16 {
            expect.data[px * 3..px * 3 + 3]
                .copy_from_slice(&params[spec.b_off..spec.b_off + 3]);
        }
        for r in 0..2 {
            for c in 0..2 {
                for kr in 0..4 {
                    for kc in 0..4 {
                        let or = (r * 2 + kr) as isize - 1;
                        let oc = (c * 2 + kc) as isize - 1;
                        if !(0..4).contains(&or) || !(0..4).contains(&oc) {
                            continue;
                        }
                        for ci in 0..2 {
                            for co in 0..3 {
                                let w = params[((kr * 4 + kc) * 2 + ci) * 3 + co];
                                let v = x.get(r, c, ci) * w;
                                let idx = ((or as usize) * 4 + oc as usize) * 3 + co;
                                expect.data[idx] += v;
                            }
                        }
                    }
                }
            }
        }
        for (a, b) in y.data.iter().zip(&expect.data) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sigmoid_codomain_and_midpoint() {
        let x = Tensor::new(1, 1, 3, vec![-50.0f64, 0.0, 50.0]).unwrap();
        let y = sigmoid(&x);
        assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(y.data[1], 0.5);
    }

    /// Doubling the output gradient must double every parameter gradient
    /// exactly (scaling by two is exact in binary floating point).
    #[test]
    fn backward_is_linear_in_upstream_gradient() {
        let (spec, mut params) = conv_spec(2, 2, false);
        for (i, w) in params.iter_mut().enumerate() {
            *w = ((i * 13) % 7) as f64 * 0.05 - 0.15;
        }
        let x = Tensor::new(4, 4, 2, (0..32).map(|i| (i as f64 * 0.07).sin()).collect()).unwrap();
        let d1 = Tensor::new(2, 2, 2, (0..8).map(|i| (i as f64 - 3.0) * 0.1).collect()).unwrap();
        let mut d2 = d1.clone();
        for v in &mut d2.data {
            *v *= 2.0;
        }
        let mut g1 = vec![0.0; params.len()];
        let mut g2 = vec![0.0; params.len()];
        let dx1 = spec.backward(&params, &x, &d1, &mut g1);
        let dx2 = spec.backward(&params, &x, &d2, &mut g2);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(*b, 2.0 * *a);
        }
        for (a, b) in dx1.data.iter().zip(&dx2.data) {
            assert_eq!(*b, 2.0 * *a);
        }
    }
}
