//! Forward and backward kernels for the refiner's layer set, on
//! channel-major `f64` feature maps.

/// Dense `channels x height x width` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor buffer length");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// `c = a * b` for row-major `m x k` and `k x n` operands, with explicit
/// strides so transposed views need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every stride/extent pair indexes inside the slices, which the
    // callers size as m*k, k*n and m*n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `input` into a `(channels*k*k) x (height*width)` patch matrix
/// with zero padding `k/2`.
pub fn im2col(input: &Tensor, kernel: usize) -> Vec<f64> {
    let (c, h, w) = input.shape();
    let pad = (kernel / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; c * kernel * kernel * hw];
    for ch in 0..c {
        let src = &input.data[ch * hw..(ch + 1) * hw];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    for x in x_lo..x_hi {
                        dst[y * w + x] = src[sy * w + (x as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub fn col2im(cols: &[f64], channels: usize, height: usize, width: usize, kernel: usize) -> Tensor {
    let pad = (kernel / 2) as isize;
    let hw = height * width;
    let mut out = Tensor::zeros(channels, height, width);
    for ch in 0..channels {
        let dst = &mut out.data[ch * hw..(ch + 1) * hw];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..height {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (width as isize - dx).min(width as isize).max(0) as usize;
                    for x in x_lo..x_hi {
                        dst[sy * width + (x as isize + dx) as usize] += src[y * width + x];
                    }
                }
            }
        }
    }
    out
}

/// Same-padded stride-1 convolution. `weight` is
/// `[out][in][k][k]` row-major. Returns the output and the patch matrix the
/// backward pass needs (for 1x1 kernels this is a copy of the input).
pub fn conv2d_forward(
    input: &Tensor,
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
    kernel: usize,
) -> (Tensor, Vec<f64>) {
    let (c, h, w) = input.shape();
    let hw = h * w;
    let k = c * kernel * kernel;
    assert_eq!(weight.len(), out_channels * k, "conv weight shape");
    assert_eq!(bias.len(), out_channels, "conv bias shape");
    let cols = if kernel == 1 {
        input.data.clone()
    } else {
        im2col(input, kernel)
    };
    let mut out = Tensor::zeros(out_channels, h, w);
    gemm(out_channels, k, hw, weight, k as isize, 1, &cols, hw as isize, 1, &mut out.data);
    for (plane, &b) in out.data.chunks_exact_mut(hw).zip(bias) {
        for v in plane {
            *v += b;
        }
    }
    (out, cols)
}

pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Option<Tensor>,
}

pub fn conv2d_backward(
    cols: &[f64],
    input_shape: (usize, usize, usize),
    weight: &[f64],
    grad_out: &Tensor,
    kernel: usize,
    need_input_grad: bool,
) -> ConvGrads {
    let (c, h, w) = input_shape;
    let hw = h * w;
    let k = c * kernel * kernel;
    let oc = grad_out.channels;
    assert_eq!(grad_out.plane(), hw, "conv output gradient shape");

    let mut d_weight = vec![0.0; oc * k];
    // dW = dOut (oc x hw) * cols^T (hw x k)
    gemm(oc, hw, k, &grad_out.data, hw as isize, 1, cols, 1, hw as isize, &mut d_weight);
    let d_bias = grad_out
        .data
        .chunks_exact(hw)
        .map(|plane| plane.iter().sum())
        .collect();

    let d_input = need_input_grad.then(|| {
        let mut d_cols = vec![0.0; k * hw];
        // dCols = W^T (k x oc) * dOut (oc x hw)
        gemm(k, oc, hw, weight, 1, k as isize, &grad_out.data, hw as isize, 1, &mut d_cols);
        if kernel == 1 {
            Tensor::from_vec(c, h, w, d_cols)
        } else {
            col2im(&d_cols, c, h, w, kernel)
        }
    });
    ConvGrads {
        weight: d_weight,
        bias: d_bias,
        input: d_input,
    }
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in &mut out.data {
        *v = v.max(0.0);
    }
    out
}

/// Gradient passes where the forward output was strictly positive.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(output.channels, output.height, output.width, data)
}

/// 2x2 stride-2 max pooling; returns the flat input index chosen for each
/// output cell (first maximum in row-major window order).
pub fn maxpool2_forward(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best_idx = base + (2 * y) * w + 2 * x;
                let mut best = input.data[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    if input.data[idx] > best {
                        best = input.data[idx];
                        best_idx = idx;
                    }
                }
                let o = (ch * oh + y) * ow + x;
                out.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward(argmax: &[usize], input_shape: (usize, usize, usize), grad_out: &Tensor) -> Tensor {
    let (c, h, w) = input_shape;
    let mut d_in = Tensor::zeros(c, h, w);
    for (&idx, &g) in argmax.iter().zip(&grad_out.data) {
        d_in.data[idx] += g;
    }
    d_in
}

/// Source taps `(lo, hi, frac)` for each output coordinate along one axis.
fn bilinear_taps(in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let scale = 1.0 / factor as f64;
    (0..in_len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn upsample_bilinear_forward(input: &Tensor, factor: usize) -> Tensor {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h * factor, w * factor);
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let mut out = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let src = &input.data[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out.data[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

pub fn upsample_bilinear_backward(
    input_shape: (usize, usize, usize),
    factor: usize,
    grad_out: &Tensor,
) -> Tensor {
    let (c, h, w) = input_shape;
    let (oh, ow) = (h * factor, w * factor);
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let mut d_in = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let g = &grad_out.data[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut d_in.data[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    d_in
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in &mut out.data {
        *v = sigmoid(*v);
    }
    out
}

pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&y, &g)| g * y * (1.0 - y))
        .collect();
    Tensor::from_vec(output.channels, output.height, output.width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of the im2col path.
    fn naive_conv(input: &Tensor, weight: &[f64], bias: &[f64], oc: usize, k: usize) -> Tensor {
        let (c, h, w) = input.shape();
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros(oc, h, w);
        for o in 0..oc {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for i in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = x as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * c + i) * k + ky) * k + kx]
                                    * input.data[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out.data[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    fn ramp(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 37 % 23) as f64 - 11.0) * scale).collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for k in [1, 3] {
            let input = Tensor::from_vec(3, 5, 4, ramp(60, 0.1));
            let weight = ramp(2 * 3 * k * k, 0.05);
            let bias = vec![0.3, -0.2];
            let (fast, _) = conv2d_forward(&input, &weight, &bias, 2, k);
            let slow = naive_conv(&input, &weight, &bias, 2, k);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let x = Tensor::from_vec(2, 4, 5, ramp(40, 0.3));
        let cols = im2col(&x, 3);
        let y = ramp(cols.len(), 0.7);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, 2, 4, 5, 3);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = Tensor::from_vec(1, 2, 4, vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 2.0]);
        let (y, idx) = maxpool2_forward(&x);
        assert_eq!(y.data, vec![5.0, 2.0]);
        // tie resolves to the first element of the window
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = Tensor::from_vec(1, 2, 3, vec![0.7; 6]);
        let y = upsample_bilinear_forward(&x, 4);
        assert_eq!(y.shape(), (1, 8, 12));
        assert!(y.data.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = Tensor::from_vec(2, 3, 2, ramp(12, 0.4));
        let y = upsample_bilinear_forward(&x, 2);
        let g = Tensor::from_vec(2, 6, 4, ramp(48, 0.9));
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let back = upsample_bilinear_backward(x.shape(), 2, &g);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
