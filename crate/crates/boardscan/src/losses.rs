//! Loss terms and their analytic gradients: mean squared error, windowed
//! structural-similarity, Dice overlap, and the training composites.
//!
//! Gradients are hand-derived; every term is finite-difference checked in
//! the tests, and again end to end through the whole model.

use crate::error::{Error, Result};
use crate::nnet::{Scalar, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Weights of the composite objective.
///
/// `lambda` scales the structural term next to MSE, `gamma` scales the
/// Dice supervision of the gate, `epsilon` smooths Dice for empty masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.1,
            gamma: 0.1,
            epsilon: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.gamma < 0.0 || self.epsilon <= 0.0 {
            return Err(Error::Arg(format!(
                "loss weights need lambda >= 0, gamma >= 0, epsilon > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Mean of (a - b)^2 over all entries, with the gradient wrt `a`.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if !a.same_shape(b) {
        return Err(Error::Shape("mse operands differ in shape".into()));
    }
    let n = T::from_f64(a.data.len() as f64);
    let mut grad = Tensor::zeros(a.height, a.width, a.channels);
    let mut sum = T::ZERO;
    let two = T::from_f64(2.0);
    for i in 0..a.data.len() {
        let d = a.data[i] - b.data[i];
        sum += d * d;
        grad.data[i] = two * d / n;
    }
    Ok((sum / n, grad))
}

fn gaussian_kernel<T: Scalar>() -> [T; SSIM_WINDOW] {
    let mut g = [0.0f64; SSIM_WINDOW];
    let mean = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - mean;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    let mut out = [T::ZERO; SSIM_WINDOW];
    for (o, v) in out.iter_mut().zip(g) {
        *o = T::from_f64(v / sum);
    }
    out
}

/// Separable valid-mode filtering of an h*w plane: output (h-10)*(w-10).
fn valid_filter<T: Scalar>(plane: &[T], h: usize, w: usize, g: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ww = w - SSIM_WINDOW + 1;
    let wh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![T::ZERO; h * ww];
    for r in 0..h {
        let row = &plane[r * w..(r + 1) * w];
        let dst = &mut horiz[r * ww..(r + 1) * ww];
        for (c, d) in dst.iter_mut().enumerate() {
            let mut acc = T::ZERO;
            for (u, &gv) in g.iter().enumerate() {
                acc += gv * row[c + u];
            }
            *d = acc;
        }
    }
    let mut out = vec![T::ZERO; wh * ww];
    for rw in 0..wh {
        let dst = &mut out[rw * ww..(rw + 1) * ww];
        for (v, &gv) in g.iter().enumerate() {
            let src = &horiz[(rw + v) * ww..(rw + v + 1) * ww];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += gv * s;
            }
        }
    }
    out
}

/// Adjoint of [`valid_filter`]: scatter per-window coefficients back onto
/// the pixel plane.
fn adjoint_filter<T: Scalar>(coef: &[T], h: usize, w: usize, g: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ww = w - SSIM_WINDOW + 1;
    let wh = h - SSIM_WINDOW + 1;
    // vertical scatter: (wh x ww) -> (h x ww)
    let mut vert = vec![T::ZERO; h * ww];
    for rw in 0..wh {
        let src = &coef[rw * ww..(rw + 1) * ww];
        for (v, &gv) in g.iter().enumerate() {
            let dst = &mut vert[(rw + v) * ww..(rw + v + 1) * ww];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += gv * s;
            }
        }
    }
    // horizontal scatter: (h x ww) -> (h x w)
    let mut out = vec![T::ZERO; h * w];
    for r in 0..h {
        let src = &vert[r * ww..(r + 1) * ww];
        let dst = &mut out[r * w..(r + 1) * w];
        for (cw, &s) in src.iter().enumerate() {
            for (u, &gv) in g.iter().enumerate() {
                dst[cw + u] += gv * s;
            }
        }
    }
    out
}

/// `1 - mean SSIM` between two images, with the gradient wrt `a`.
///
/// SSIM uses the standard 11x11 Gaussian window (sigma 1.5) with
/// stabilizers C1 = K1^2 and C2 = K2^2 for unit dynamic range, evaluated
/// per channel over all fully-interior window positions.
pub fn ssim_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if !a.same_shape(b) {
        return Err(Error::Shape("ssim operands differ in shape".into()));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::Arg(format!(
            "ssim needs dims >= {SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    let (h, w, ch) = (a.height, a.width, a.channels);
    let (wh, ww) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let g = gaussian_kernel::<T>();
    let c1 = T::from_f64(SSIM_K1 * SSIM_K1);
    let c2 = T::from_f64(SSIM_K2 * SSIM_K2);
    let two = T::from_f64(2.0);
    let n_windows = T::from_f64((wh * ww * ch) as f64);

    let mut grad = Tensor::zeros(h, w, ch);
    let mut ssim_sum = T::ZERO;
    let mut x = vec![T::ZERO; h * w];
    let mut y = vec![T::ZERO; h * w];
    let mut xx = vec![T::ZERO; h * w];
    let mut yy = vec![T::ZERO; h * w];
    let mut xy = vec![T::ZERO; h * w];
    for c in 0..ch {
        for px in 0..h * w {
            let xv = a.data[px * ch + c];
            let yv = b.data[px * ch + c];
            x[px] = xv;
            y[px] = yv;
            xx[px] = xv * xv;
            yy[px] = yv * yv;
            xy[px] = xv * yv;
        }
        let mu_x = valid_filter(&x, h, w, &g);
        let mu_y = valid_filter(&y, h, w, &g);
        let s_xx = valid_filter(&xx, h, w, &g);
        let s_yy = valid_filter(&yy, h, w, &g);
        let s_xy = valid_filter(&xy, h, w, &g);

        // Per-window coefficients of dS/dx_j = w_j (alpha + beta*y_j + gamma*x_j)
        let mut alpha = vec![T::ZERO; wh * ww];
        let mut beta = vec![T::ZERO; wh * ww];
        let mut gamma = vec![T::ZERO; wh * ww];
        for q in 0..wh * ww {
            let (mx, my) = (mu_x[q], mu_y[q]);
            let var_x = s_xx[q] - mx * mx;
            let var_y = s_yy[q] - my * my;
            let cov = s_xy[q] - mx * my;
            let a1 = two * mx * my + c1;
            let a2 = two * cov + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = var_x + var_y + c2;
            let s = (a1 * a2) / (b1 * b2);
            ssim_sum += s;
            let inv_b1b2 = T::ONE / (b1 * b2);
            alpha[q] = two * (my * (a2 - a1) * inv_b1b2 + s * mx * (T::ONE / b2 - T::ONE / b1));
            beta[q] = two * a1 * inv_b1b2;
            gamma[q] = -two * s / b2;
        }
        let ga = adjoint_filter(&alpha, h, w, &g);
        let gb = adjoint_filter(&beta, h, w, &g);
        let gg = adjoint_filter(&gamma, h, w, &g);
        let scale = -T::ONE / n_windows;
        for px in 0..h * w {
            grad.data[px * ch + c] = scale * (ga[px] + y[px] * gb[px] + x[px] * gg[px]);
        }
    }
    Ok((T::ONE - ssim_sum / n_windows, grad))
}

/// Soft Dice loss `1 - (2 sum(m*gt) + eps) / (sum(m) + sum(gt) + eps)`,
/// with the gradient wrt `m`.
pub fn dice_loss<T: Scalar>(
    m: &Tensor<T>,
    m_gt: &Tensor<T>,
    epsilon: f64,
) -> Result<(T, Tensor<T>)> {
    if !m.same_shape(m_gt) {
        return Err(Error::Shape("dice operands differ in shape".into()));
    }
    let eps = T::from_f64(epsilon);
    let two = T::from_f64(2.0);
    let mut inter = T::ZERO;
    let mut sum_m = T::ZERO;
    let mut sum_gt = T::ZERO;
    for i in 0..m.data.len() {
        inter += m.data[i] * m_gt.data[i];
        sum_m += m.data[i];
        sum_gt += m_gt.data[i];
    }
    let u = two * inter + eps;
    let v = sum_m + sum_gt + eps;
    let loss = T::ONE - u / v;
    let inv_v2 = T::ONE / (v * v);
    let mut grad = Tensor::zeros(m.height, m.width, m.channels);
    for i in 0..m.data.len() {
        grad.data[i] = -(two * m_gt.data[i] * v - u) * inv_v2;
    }
    Ok((loss, grad))
}

/// Value and input gradients of the composite objective.
#[derive(Debug, Clone)]
pub struct TotalLoss<T> {
    pub value: T,
    pub mse: T,
    pub ssim: T,
    pub dice: T,
    /// Gradient wrt the gated blend output.
    pub d_blended: Tensor<T>,
    /// Gradient wrt the gate mask from the Dice term only; the fusion path
    /// through the blend is the caller's responsibility.
    pub d_mask: Tensor<T>,
}

/// Composite objective: reconstruction terms on the gated blend plus Dice
/// supervision of the gate mask.
pub fn total_loss<T: Scalar>(
    blended: &Tensor<T>,
    target: &Tensor<T>,
    m: &Tensor<T>,
    m_gt: &Tensor<T>,
    w: &LossWeights,
) -> Result<TotalLoss<T>> {
    w.validate()?;
    let (l_mse, g_mse) = mse(blended, target)?;
    let mut value = l_mse;
    let mut d_blended = g_mse;
    let mut l_ssim = T::ZERO;
    if w.lambda > 0.0 {
        let lambda = T::from_f64(w.lambda);
        let (l, g) = ssim_loss(blended, target)?;
        l_ssim = l;
        value += lambda * l;
        for (d, &gv) in d_blended.data.iter_mut().zip(&g.data) {
            *d += lambda * gv;
        }
    }
    let mut l_dice = T::ZERO;
    let mut d_mask = Tensor::zeros(m.height, m.width, m.channels);
    if w.gamma > 0.0 {
        let gamma = T::from_f64(w.gamma);
        let (l, g) = dice_loss(m, m_gt, w.epsilon)?;
        l_dice = l;
        value += gamma * l;
        for (d, &gv) in d_mask.data.iter_mut().zip(&g.data) {
            *d = gamma * gv;
        }
    }
    Ok(TotalLoss {
        value,
        mse: l_mse,
        ssim: l_ssim,
        dice: l_dice,
        d_blended,
        d_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn fd_loss_grad(
        a: &Tensor<f64>,
        grad: &Tensor<f64>,
        mut f: impl FnMut(&Tensor<f64>) -> f64,
        tol: f64,
    ) {
        let h = 1e-5;
        for i in (0..a.data.len()).step_by(7) {
            let mut p = a.clone();
            p.data[i] += h;
            let plus = f(&p);
            p.data[i] -= 2.0 * h;
            let minus = f(&p);
            let numeric = (plus - minus) / (2.0 * h);
            let err = crate::nnet::gradcheck::rel_err(grad.data[i], numeric);
            assert!(err < tol, "index {i}: analytic {} vs fd {numeric}", grad.data[i]);
        }
    }

    #[test]
    fn mse_trivial_cases() {
        let a = Tensor::<f64>::new(2, 2, 1, vec![1.0; 4]).unwrap();
        let b = Tensor::<f64>::zeros(2, 2, 1);
        let (l, _) = mse(&a, &b).unwrap();
        assert_eq!(l, 1.0);
        let (l0, g0) = mse(&a, &a).unwrap();
        assert_eq!(l0, 0.0);
        assert!(g0.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tensor(4, 4, 3, &mut rng);
        let b = random_tensor(4, 4, 3, &mut rng);
        let (l, g) = mse(&a, &b).unwrap();
        let direct: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / 48.0;
        assert!((l - direct).abs() < 1e-12 * direct.max(1.0));
        fd_loss_grad(&a, &g, |p| mse(p, &b).unwrap().0, 1e-7);
    }

    #[test]
    fn ssim_identity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_tensor(12, 14, 3, &mut rng);
        let (l, _) = ssim_loss(&a, &a).unwrap();
        assert!(l.abs() < 1e-9, "{l}");
    }

    #[test]
    fn ssim_index_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a = random_tensor(13, 11, 1, &mut rng);
            let b = random_tensor(13, 11, 1, &mut rng);
            let (lab, _) = ssim_loss(&a, &b).unwrap();
            let (lba, _) = ssim_loss(&b, &a).unwrap();
            assert!((lab - lba).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_loss_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let a = random_tensor(12, 12, 1, &mut rng);
            let b = random_tensor(12, 12, 1, &mut rng);
            let (l, _) = ssim_loss(&a, &b).unwrap();
            assert!((0.0..=2.0).contains(&l), "{l}");
        }
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::<f64>::zeros(10, 12, 1);
        assert!(ssim_loss(&a, &a).is_err());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_tensor(12, 12, 1, &mut rng);
        let b = random_tensor(12, 12, 1, &mut rng);
        let (_, g) = ssim_loss(&a, &b).unwrap();
        fd_loss_grad(&a, &g, |p| ssim_loss(p, &b).unwrap().0, 1e-4);
    }

    #[test]
    fn dice_perfect_match_is_zero() {
        let m = Tensor::<f64>::new(2, 4, 1, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let (l, _) = dice_loss(&m, &m, 1.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn dice_disjoint_closed_form() {
        // areas 8 and 8, eps 1 -> 1 - 1/17
        let mut m = Tensor::<f64>::zeros(4, 8, 1);
        let mut gt = Tensor::<f64>::zeros(4, 8, 1);
        for i in 0..8 {
            m.data[i] = 1.0;
            gt.data[16 + i] = 1.0;
        }
        let (l, _) = dice_loss(&m, &gt, 1.0).unwrap();
        assert!((l - (1.0 - 1.0 / 17.0)).abs() < 1e-12);
    }

    #[test]
    fn dice_empty_vs_empty_is_zero() {
        let m = Tensor::<f64>::zeros(4, 4, 1);
        let (l, _) = dice_loss(&m, &m, 1.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_tensor(8, 8, 1, &mut rng);
        let gt = Tensor::new(
            8,
            8,
            1,
            (0..64).map(|i| if (i * 5) % 3 == 0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let (_, g) = dice_loss(&m, &gt, 1.0).unwrap();
        fd_loss_grad(&m, &g, |p| dice_loss(p, &gt, 1.0).unwrap().0, 1e-6);
    }

    #[test]
    fn total_recomposes_from_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let blended = random_tensor(12, 12, 3, &mut rng);
        let target = random_tensor(12, 12, 3, &mut rng);
        let m = random_tensor(12, 12, 1, &mut rng);
        let gt = Tensor::new(
            12,
            12,
            1,
            (0..144).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let w = LossWeights::default();
        let t = total_loss(&blended, &target, &m, &gt, &w).unwrap();
        let expect = mse(&blended, &target).unwrap().0
            + w.lambda * ssim_loss(&blended, &target).unwrap().0
            + w.gamma * dice_loss(&m, &gt, w.epsilon).unwrap().0;
        assert!((t.value - expect).abs() < 1e-12);
    }

    #[test]
    fn total_zero_weights_identity_target() {
        let a = Tensor::<f64>::new(12, 12, 3, vec![0.25; 432]).unwrap();
        let m = Tensor::<f64>::zeros(12, 12, 1);
        let w = LossWeights {
            lambda: 0.0,
            gamma: 0.0,
            epsilon: 1.0,
        };
        let t = total_loss(&a, &a, &m, &m, &w).unwrap();
        assert_eq!(t.value, 0.0);
    }

    #[test]
    fn total_monotone_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let blended = random_tensor(12, 12, 3, &mut rng);
        let target = random_tensor(12, 12, 3, &mut rng);
        let m = random_tensor(12, 12, 1, &mut rng);
        let gt = Tensor::new(
            12,
            12,
            1,
            (0..144).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let at = |lambda: f64, gamma: f64| {
            total_loss(
                &blended,
                &target,
                &m,
                &gt,
                &LossWeights { lambda, gamma, epsilon: 1.0 },
            )
            .unwrap()
            .value
        };
        assert!(at(0.2, 0.1) >= at(0.1, 0.1));
        assert!(at(0.1, 0.2) >= at(0.1, 0.1));
    }

    #[test]
    fn weights_validated() {
        let w = LossWeights {
            lambda: -0.1,
            gamma: 0.1,
            epsilon: 1.0,
        };
        assert!(w.validate().is_err());
        let w = LossWeights {
            lambda: 0.1,
            gamma: 0.1,
            epsilon: 0.0,
        };
        assert!(w.validate().is_err());
    }
}
