//! 2-D convolution and transposed convolution via im2col + GEMM.

use std::rc::Rc;

use super::scalar::{matmul, Scalar};
use super::tensor::Tensor;
use super::AutogradError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

const OUTSIDE: u32 = u32::MAX;

/// Maps every (kernel tap, output position) pair to a flat input position,
/// or [`OUTSIDE`] for zero padding.
#[derive(Debug)]
struct PatchIndex {
    k: usize,
    out_h: usize,
    out_w: usize,
    in_hw: usize,
    index: Vec<u32>,
}

impl PatchIndex {
    fn new(
        in_h: usize,
        in_w: usize,
        k: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Self, AutogradError> {
        if stride == 0 || k == 0 {
            return Err(AutogradError::Geometry("kernel and stride must be positive".into()));
        }
        if mode == PadMode::Reflect && (pad >= in_h || pad >= in_w) {
            return Err(AutogradError::Geometry(format!(
                "reflect padding {pad} needs input larger than {pad}, got {in_h}x{in_w}"
            )));
        }
        let span_h = in_h + 2 * pad;
        let span_w = in_w + 2 * pad;
        if span_h < k || span_w < k {
            return Err(AutogradError::Geometry(format!(
                "kernel {k} larger than padded input {span_h}x{span_w}"
            )));
        }
        if (span_h - k) % stride != 0 || (span_w - k) % stride != 0 {
            return Err(AutogradError::Geometry(format!(
                "stride {stride} does not divide padded extent minus kernel ({} x {})",
                span_h - k,
                span_w - k
            )));
        }
        let out_h = (span_h - k) / stride + 1;
        let out_w = (span_w - k) / stride + 1;
        let locate = |i: isize, n: usize| -> Option<usize> {
            if (0..n as isize).contains(&i) {
                return Some(i as usize);
            }
            match mode {
                PadMode::Zero => None,
                PadMode::Reflect => {
                    let r = if i < 0 { -i } else { 2 * (n as isize - 1) - i };
                    Some(r as usize)
                }
            }
        };
        let p = out_h * out_w;
        let mut index = vec![OUTSIDE; k * k * p];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ki * k + kj) * p;
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let Some(y) = locate(iy, in_h) else { continue };
                    for ox in 0..out_w {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if let Some(x) = locate(ix, in_w) {
                            index[row + oy * out_w + ox] = (y * in_w + x) as u32;
                        }
                    }
                }
            }
        }
        Ok(Self {
            k,
            out_h,
            out_w,
            in_hw: in_h * in_w,
            index,
        })
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// `cols[(c·k² + tap)·P + pos] = x[c, index[tap·P + pos]]`.
    fn im2col<T: Scalar>(&self, x: &[T], channels: usize, cols: &mut [T]) {
        let taps = self.k * self.k;
        let p = self.positions();
        for c in 0..channels {
            let plane = &x[c * self.in_hw..(c + 1) * self.in_hw];
            for tap in 0..taps {
                let dst = &mut cols[(c * taps + tap) * p..(c * taps + tap + 1) * p];
                let idx = &self.index[tap * p..(tap + 1) * p];
                for (d, &i) in dst.iter_mut().zip(idx) {
                    *d = if i == OUTSIDE { T::zero() } else { plane[i as usize] };
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds columns back onto the input grid.
    fn col2im<T: Scalar>(&self, cols: &[T], channels: usize, x: &mut [T]) {
        let taps = self.k * self.k;
        let p = self.positions();
        for c in 0..channels {
            let plane = &mut x[c * self.in_hw..(c + 1) * self.in_hw];
            for tap in 0..taps {
                let src = &cols[(c * taps + tap) * p..(c * taps + tap + 1) * p];
                let idx = &self.index[tap * p..(tap + 1) * p];
                for (s, &i) in src.iter().zip(idx) {
                    if i != OUTSIDE {
                        plane[i as usize] = plane[i as usize] + *s;
                    }
                }
            }
        }
    }
}

fn expect_rank4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 4], AutogradError> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(AutogradError::ShapeMismatch(format!(
            "{what} must be rank 4, got {s:?}"
        )));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize) -> Result<(), AutogradError> {
    if let Some(b) = bias {
        if b.numel() != channels {
            return Err(AutogradError::ShapeMismatch(format!(
                "bias has {} entries for {channels} output channels",
                b.numel()
            )));
        }
    }
    Ok(())
}

fn bias_grad<T: Scalar>(g: &[T], n: usize, channels: usize, positions: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for s in 0..n {
        for (o, acc) in gb.iter_mut().enumerate() {
            let base = (s * channels + o) * positions;
            *acc = *acc + g[base..base + positions].iter().copied().sum::<T>();
        }
    }
    gb
}

/// Cross-correlation of `input` (`N×C×H×W`) with `weight` (`O×C×k×k`).
///
/// Output spatial size is `(H + 2p − k)/s + 1`; the division must be exact.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    mode: PadMode,
) -> Result<Tensor<T>, AutogradError> {
    let [n, c, h, w] = expect_rank4(input, "conv2d input")?;
    let [o, wc, k, k2] = expect_rank4(weight, "conv2d weight")?;
    if wc != c || k != k2 {
        return Err(AutogradError::ShapeMismatch(format!(
            "weight {:?} incompatible with input {:?}",
            weight.shape(),
            input.shape()
        )));
    }
    check_bias(bias, o)?;
    let geo = Rc::new(PatchIndex::new(h, w, k, stride, pad, mode)?);
    let p = geo.positions();
    let ckk = c * k * k;

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); n * o * p];
    let keep_cols = weight.requires_grad();
    let mut saved_cols = Vec::with_capacity(if keep_cols { n * ckk * p } else { 0 });
    let mut cols = vec![T::zero(); ckk * p];
    for s in 0..n {
        geo.im2col(&x[s * c * h * w..(s + 1) * c * h * w], c, &mut cols);
        matmul(o, ckk, p, &wt, false, &cols, false, &mut out[s * o * p..(s + 1) * o * p], false);
        if keep_cols {
            saved_cols.extend_from_slice(&cols);
        }
    }
    if let Some(b) = bias {
        let bd = b.data();
        for s in 0..n {
            for (oc, &bv) in bd.iter().enumerate() {
                for v in &mut out[(s * o + oc) * p..(s * o + oc + 1) * p] {
                    *v = *v + bv;
                }
            }
        }
    }
    drop((x, wt));

    let need_input = input.requires_grad();
    let need_weight = weight.requires_grad();
    let need_bias = bias.is_some_and(Tensor::requires_grad);
    let weight_saved = weight.clone();
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    let (out_h, out_w) = (geo.out_h, geo.out_w);
    Ok(Tensor::from_op(vec![n, o, out_h, out_w], out, parents, move |g| {
        let mut grads = Vec::with_capacity(3);
        grads.push(need_input.then(|| {
            let wt = weight_saved.data();
            let mut gx = vec![T::zero(); n * c * h * w];
            let mut dcols = vec![T::zero(); ckk * p];
            for s in 0..n {
                matmul(ckk, o, p, &wt, true, &g[s * o * p..(s + 1) * o * p], false, &mut dcols, false);
                geo.col2im(&dcols, c, &mut gx[s * c * h * w..(s + 1) * c * h * w]);
            }
            gx
        }));
        grads.push(need_weight.then(|| {
            let mut gw = vec![T::zero(); o * ckk];
            for s in 0..n {
                matmul(
                    o,
                    p,
                    ckk,
                    &g[s * o * p..(s + 1) * o * p],
                    false,
                    &saved_cols[s * ckk * p..(s + 1) * ckk * p],
                    true,
                    &mut gw,
                    true,
                );
            }
            gw
        }));
        if has_bias {
            grads.push(need_bias.then(|| bias_grad(g, n, o, p)));
        }
        grads
    }))
}

/// Transposed convolution of `input` (`N×Cin×H×W`) with `weight` (`Cin×Cout×k×k`),
/// the adjoint of [`conv2d`] with zero padding. Output size is `(H − 1)·s − 2p + k`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, AutogradError> {
    let [n, cin, h, w] = expect_rank4(input, "conv_transpose2d input")?;
    let [wcin, cout, k, k2] = expect_rank4(weight, "conv_transpose2d weight")?;
    if wcin != cin || k != k2 {
        return Err(AutogradError::ShapeMismatch(format!(
            "weight {:?} incompatible with input {:?}",
            weight.shape(),
            input.shape()
        )));
    }
    check_bias(bias, cout)?;
    if stride == 0 || h == 0 || w == 0 {
        return Err(AutogradError::Geometry("empty input or zero stride".into()));
    }
    let span_h = (h - 1) * stride + k;
    let span_w = (w - 1) * stride + k;
    if span_h <= 2 * pad || span_w <= 2 * pad {
        return Err(AutogradError::Geometry(format!(
            "padding {pad} consumes the whole output"
        )));
    }
    let (out_h, out_w) = (span_h - 2 * pad, span_w - 2 * pad);
    // The forward conv of the output grid reproduces the input grid.
    let geo = Rc::new(PatchIndex::new(out_h, out_w, k, stride, pad, PadMode::Zero)?);
    debug_assert_eq!((geo.out_h, geo.out_w), (h, w));
    let p = h * w;
    let out_hw = out_h * out_w;
    let ckk = cout * k * k;

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); n * cout * out_hw];
    let mut cols = vec![T::zero(); ckk * p];
    for s in 0..n {
        matmul(ckk, cin, p, &wt, true, &x[s * cin * p..(s + 1) * cin * p], false, &mut cols, false);
        geo.col2im(&cols, cout, &mut out[s * cout * out_hw..(s + 1) * cout * out_hw]);
    }
    if let Some(b) = bias {
        let bd = b.data();
        for s in 0..n {
            for (oc, &bv) in bd.iter().enumerate() {
                for v in &mut out[(s * cout + oc) * out_hw..(s * cout + oc + 1) * out_hw] {
                    *v = *v + bv;
                }
            }
        }
    }
    drop((x, wt));

    let need_input = input.requires_grad();
    let need_weight = weight.requires_grad();
    let need_bias = bias.is_some_and(Tensor::requires_grad);
    let input_saved = need_weight.then(|| input.clone());
    let weight_saved = weight.clone();
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(vec![n, cout, out_h, out_w], out, parents, move |g| {
        let mut dcols = vec![T::zero(); ckk * p];
        let mut gx = need_input.then(|| vec![T::zero(); n * cin * p]);
        let mut gw = need_weight.then(|| vec![T::zero(); cin * ckk]);
        let wt = weight_saved.data();
        let x = input_saved.as_ref().map(|t| t.data());
        for s in 0..n {
            geo.im2col(&g[s * cout * out_hw..(s + 1) * cout * out_hw], cout, &mut dcols);
            if let Some(gx) = gx.as_mut() {
                matmul(cin, ckk, p, &wt, false, &dcols, false, &mut gx[s * cin * p..(s + 1) * cin * p], false);
            }
            if let (Some(gw), Some(x)) = (gw.as_mut(), x.as_ref()) {
                matmul(cin, p, ckk, &x[s * cin * p..(s + 1) * cin * p], false, &dcols, true, gw, true);
            }
        }
        let mut grads = vec![gx, gw];
        if has_bias {
            grads.push(need_bias.then(|| bias_grad(g, n, cout, out_hw)));
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::randn(&[2, 1, 5, 4], 0.0, 1.0, &mut rng);
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, None, 1, 0, PadMode::Zero).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        let yt = conv_transpose2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(yt.to_vec(), x.to_vec());
    }

    #[test]
    fn averaging_constant_with_reflect_pad() {
        let x = Tensor::<f64>::full(&[1, 1, 6, 6], 3.5);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let y = conv2d(&x, &k, None, 1, 1, PadMode::Reflect).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 6]);
        assert!(y.to_vec().iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn indivisible_stride_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 64, 64]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(
            conv2d(&x, &k, None, 2, 1, PadMode::Zero),
            Err(AutogradError::Geometry(_))
        ));
        let k4 = Tensor::zeros(&[1, 1, 4, 4]);
        let y = conv2d(&x, &k4, None, 2, 1, PadMode::Zero).unwrap();
        assert_eq!(y.shape(), &[1, 1, 32, 32]);
    }

    #[test]
    fn transpose_output_size() {
        let x = Tensor::<f64>::zeros(&[1, 3, 16, 16]);
        let k = Tensor::zeros(&[3, 2, 4, 4]);
        let y = conv_transpose2d(&x, &k, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 32, 32]);
    }
}
