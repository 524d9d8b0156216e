use std::ops::Range;

use super::real::{matmul, Real};

/// A single sample's activation, channel-major `C×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Feature<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Channel concatenation `[self; other]`.
    pub fn concat(&self, other: &Feature<T>) -> Feature<T> {
        assert_eq!((self.h, self.w), (other.h, other.w));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Feature::from_vec(self.c + other.c, self.h, self.w, data)
    }

    /// Inverse of [`Feature::concat`] for gradients.
    pub fn split_channels(mut self, first: usize) -> (Feature<T>, Feature<T>) {
        let at = first * self.plane();
        let rest = self.data.split_off(at);
        let second = Feature::from_vec(self.c - first, self.h, self.w, rest);
        self.c = first;
        (self, second)
    }
}

/// Hands out contiguous ranges of a flat parameter vector.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    len: usize,
    weight_blocks: Vec<(Range<usize>, usize)>,
}

impl ParamAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.len..self.len + n;
        self.len += n;
        r
    }

    fn weights(&mut self, n: usize, fan_in: usize) -> Range<usize> {
        let r = self.take(n);
        self.weight_blocks.push((r.clone(), fan_in));
        r
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Weight ranges with their fan-in, for initialization.
    pub fn weight_blocks(&self) -> &[(Range<usize>, usize)] {
        &self.weight_blocks
    }

    pub fn conv(&mut self, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
        let w = self.weights(cout * cin * k * k, cin * k * k);
        let b = self.take(cout);
        Conv2d {
            cin,
            cout,
            k,
            stride,
            pad,
            w,
            b,
        }
    }

    pub fn upconv(&mut self, cin: usize, cout: usize) -> UpConv2x2 {
        let w = self.weights(cin * cout * 4, cin);
        let b = self.take(cout);
        UpConv2x2 { cin, cout, w, b }
    }

    pub fn linear(&mut self, nin: usize, nout: usize) -> Linear {
        let w = self.weights(nout * nin, nin);
        let b = self.take(nout);
        Linear { nin, nout, w, b }
    }
}

/// Square-kernel 2-D convolution with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    w: Range<usize>,
    b: Range<usize>,
}

impl Conv2d {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn macs(&self, h: usize, w: usize) -> usize {
        let (ho, wo) = self.out_hw(h, w);
        ho * wo * self.cout * self.cin * self.k * self.k
    }

    fn im2col<T: Real>(&self, x: &Feature<T>, ho: usize, wo: usize) -> Vec<T> {
        let (k, s) = (self.k, self.stride);
        let p = ho * wo;
        let mut cols = vec![T::zero(); self.cin * k * k * p];
        for c in 0..self.cin {
            let plane = &x.data[c * x.plane()..(c + 1) * x.plane()];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Feature<T> {
        let (k, s) = (self.k, self.stride);
        let p = ho * wo;
        let mut out = Feature::zeros(self.cin, h, w);
        for c in 0..self.cin {
            let plane = &mut out.data[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * s + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Feature<T>) -> Feature<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (ho, wo) = self.out_hw(x.h, x.w);
        let p = ho * wo;
        let cols = self.im2col(x, ho, wo);
        let mut out = Feature::zeros(self.cout, ho, wo);
        for (co, &bias) in params[self.b.clone()].iter().enumerate() {
            out.data[co * p..(co + 1) * p].fill(bias);
        }
        let ckk = self.cin * self.k * self.k;
        matmul(
            self.cout,
            ckk,
            p,
            &params[self.w.clone()],
            false,
            &cols,
            false,
            &mut out.data,
            T::one(),
        );
        out
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient when `need_dx`.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        x: &Feature<T>,
        dy: &Feature<T>,
        grad: &mut [T],
        need_dx: bool,
    ) -> Option<Feature<T>> {
        let (ho, wo) = (dy.h, dy.w);
        let p = ho * wo;
        let ckk = self.cin * self.k * self.k;
        let cols = self.im2col(x, ho, wo);
        matmul(
            self.cout,
            p,
            ckk,
            &dy.data,
            false,
            &cols,
            true,
            &mut grad[self.w.clone()],
            T::one(),
        );
        for (co, gb) in grad[self.b.clone()].iter_mut().enumerate() {
            *gb = *gb + dy.data[co * p..(co + 1) * p].iter().copied().sum::<T>();
        }
        if !need_dx {
            return None;
        }
        let mut dcols = cols;
        matmul(
            ckk,
            self.cout,
            p,
            &params[self.w.clone()],
            true,
            &dy.data,
            false,
            &mut dcols,
            T::zero(),
        );
        Some(self.col2im(&dcols, x.h, x.w, ho, wo))
    }
}

/// Transposed convolution with a 2×2 kernel and stride 2 (exact 2× upsampling).
#[derive(Debug, Clone, PartialEq)]
pub struct UpConv2x2 {
    pub cin: usize,
    pub cout: usize,
    w: Range<usize>,
    b: Range<usize>,
}

impl UpConv2x2 {
    pub fn macs(&self, h: usize, w: usize) -> usize {
        h * w * self.cin * self.cout * 4
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Feature<T>) -> Feature<T> {
        assert_eq!(x.c, self.cin, "upconv input channels");
        let pin = x.plane();
        let rows = self.cout * 4;
        let mut cols = vec![T::zero(); rows * pin];
        matmul(
            rows,
            self.cin,
            pin,
            &params[self.w.clone()],
            true,
            &x.data,
            false,
            &mut cols,
            T::zero(),
        );
        let (h, w) = (2 * x.h, 2 * x.w);
        let mut out = Feature::zeros(self.cout, h, w);
        let bias = &params[self.b.clone()];
        for co in 0..self.cout {
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let row = &cols[(co * 4 + d) * pin..][..pin];
                for i in 0..x.h {
                    for j in 0..x.w {
                        out.data[co * h * w + (2 * i + di) * w + 2 * j + dj] =
                            row[i * x.w + j] + bias[co];
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Real>(
        &self,
        params: &[T],
        x: &Feature<T>,
        dy: &Feature<T>,
        grad: &mut [T],
    ) -> Feature<T> {
        let pin = x.plane();
        let rows = self.cout * 4;
        let (h, w) = (dy.h, dy.w);
        let mut dcols = vec![T::zero(); rows * pin];
        for co in 0..self.cout {
            let plane = &dy.data[co * h * w..(co + 1) * h * w];
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let row = &mut dcols[(co * 4 + d) * pin..][..pin];
                for i in 0..x.h {
                    for j in 0..x.w {
                        row[i * x.w + j] = plane[(2 * i + di) * w + 2 * j + dj];
                    }
                }
            }
        }
        matmul(
            self.cin,
            pin,
            rows,
            &x.data,
            false,
            &dcols,
            true,
            &mut grad[self.w.clone()],
            T::one(),
        );
        for (co, gb) in grad[self.b.clone()].iter_mut().enumerate() {
            *gb = *gb
                + dy.data[co * h * w..(co + 1) * h * w]
                    .iter()
                    .copied()
                    .sum::<T>();
        }
        let mut dx = Feature::zeros(self.cin, x.h, x.w);
        matmul(
            self.cin,
            rows,
            pin,
            &params[self.w.clone()],
            false,
            &dcols,
            false,
            &mut dx.data,
            T::zero(),
        );
        dx
    }
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub nin: usize,
    pub nout: usize,
    w: Range<usize>,
    b: Range<usize>,
}

impl Linear {
    pub fn forward<T: Real>(&self, params: &[T], x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nin);
        let mut y = params[self.b.clone()].to_vec();
        matmul(
            self.nout,
            self.nin,
            1,
            &params[self.w.clone()],
            false,
            x,
            false,
            &mut y,
            T::one(),
        );
        y
    }

    pub fn backward<T: Real>(&self, params: &[T], x: &[T], dy: &[T], grad: &mut [T]) -> Vec<T> {
        matmul(
            self.nout,
            1,
            self.nin,
            dy,
            false,
            x,
            false,
            &mut grad[self.w.clone()],
            T::one(),
        );
        for (gb, &d) in grad[self.b.clone()].iter_mut().zip(dy) {
            *gb = *gb + d;
        }
        let mut dx = vec![T::zero(); self.nin];
        matmul(
            self.nin,
            self.nout,
            1,
            &params[self.w.clone()],
            true,
            dy,
            false,
            &mut dx,
            T::zero(),
        );
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * f).sin()).collect()
    }

    /// Direct-summation convolution used as an oracle.
    fn naive_conv(layer: &Conv2d, params: &[f64], x: &Feature<f64>) -> Feature<f64> {
        let (ho, wo) = layer.out_hw(x.h, x.w);
        let k = layer.k;
        let mut out = Feature::zeros(layer.cout, ho, wo);
        let w = &params[layer.w.clone()];
        for co in 0..layer.cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = params[layer.b.start + co];
                    for ci in 0..layer.cin {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * layer.stride + ki) as isize - layer.pad as isize;
                                let ix = (ox * layer.stride + kj) as isize - layer.pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                acc += w[((co * layer.cin + ci) * k + ki) * k + kj]
                                    * x.data[(ci * x.h + iy as usize) * x.w + ix as usize];
                            }
                        }
                    }
                    out.data[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    /// Scalar loss `sum(y * r)` for a fixed random direction `r`.
    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_forward_matches_direct_sum() {
        let mut alloc = ParamAllocator::new();
        let layer = alloc.conv(2, 3, 3, 2, 1);
        let params = seq(alloc.len(), 0.37);
        let x = Feature::from_vec(2, 5, 6, seq(60, 0.91));
        let got = layer.forward(&params, &x);
        let want = naive_conv(&layer, &params, &x);
        assert_eq!((got.h, got.w), (3, 3));
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut alloc = ParamAllocator::new();
        let layer = alloc.conv(2, 3, 3, 2, 1);
        let params = seq(alloc.len(), 0.37);
        let x = Feature::from_vec(2, 6, 6, seq(72, 0.91));
        let y = layer.forward(&params, &x);
        let r = seq(y.data.len(), 1.77);
        let dy = Feature::from_vec(y.c, y.h, y.w, r.clone());
        let mut grad = vec![0.0; params.len()];
        let dx = layer.backward(&params, &x, &dy, &mut grad, true).unwrap();
        let h = 1e-6;
        for i in (0..params.len()).step_by(7) {
            let mut p = params.clone();
            p[i] += h;
            let up = dot(&layer.forward(&p, &x).data, &r);
            p[i] -= 2.0 * h;
            let down = dot(&layer.forward(&p, &x).data, &r);
            assert!(
                ((up - down) / (2.0 * h) - grad[i]).abs() < 1e-6,
                "param {i}"
            );
        }
        for i in (0..x.data.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let up = dot(&layer.forward(&params, &xp).data, &r);
            xp.data[i] -= 2.0 * h;
            let down = dot(&layer.forward(&params, &xp).data, &r);
            assert!(
                ((up - down) / (2.0 * h) - dx.data[i]).abs() < 1e-6,
                "input {i}"
            );
        }
    }

    #[test]
    fn upconv_backward_matches_finite_differences() {
        let mut alloc = ParamAllocator::new();
        let layer = alloc.upconv(3, 2);
        let params = seq(alloc.len(), 0.53);
        let x = Feature::from_vec(3, 2, 3, seq(18, 0.29));
        let y = layer.forward(&params, &x);
        assert_eq!((y.c, y.h, y.w), (2, 4, 6));
        let r = seq(y.data.len(), 1.13);
        let dy = Feature::from_vec(y.c, y.h, y.w, r.clone());
        let mut grad = vec![0.0; params.len()];
        let dx = layer.backward(&params, &x, &dy, &mut grad);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = dot(&layer.forward(&p, &x).data, &r);
            p[i] -= 2.0 * h;
            let down = dot(&layer.forward(&p, &x).data, &r);
            assert!(
                ((up - down) / (2.0 * h) - grad[i]).abs() < 1e-6,
                "param {i}"
            );
        }
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let up = dot(&layer.forward(&params, &xp).data, &r);
            xp.data[i] -= 2.0 * h;
            let down = dot(&layer.forward(&params, &xp).data, &r);
            assert!(
                ((up - down) / (2.0 * h) - dx.data[i]).abs() < 1e-6,
                "input {i}"
            );
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut alloc = ParamAllocator::new();
        let layer = alloc.linear(4, 3);
        let params = seq(alloc.len(), 0.41);
        let x = seq(4, 0.77);
        let r = seq(3, 2.1);
        let mut grad = vec![0.0; params.len()];
        let dx = layer.backward(&params, &x, &r, &mut grad);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = dot(&layer.forward(&p, &x), &r);
            p[i] -= 2.0 * h;
            let down = dot(&layer.forward(&p, &x), &r);
            assert!(((up - down) / (2.0 * h) - grad[i]).abs() < 1e-6);
        }
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += h;
            let up = dot(&layer.forward(&params, &xp), &r);
            xp[i] -= 2.0 * h;
            let down = dot(&layer.forward(&params, &xp), &r);
            assert!(((up - down) / (2.0 * h) - dx[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Feature::from_vec(1, 2, 2, vec![1.0f32, 2.0, 3.0, 4.0]);
        let b = Feature::from_vec(2, 2, 2, (5..13).map(|v| v as f32).collect());
        let (x, y) = a.concat(&b).split_channels(1);
        assert_eq!(x, a);
        assert_eq!(y, b);
    }
}
