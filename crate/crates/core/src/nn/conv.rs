use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Ix2};
use rand::Rng;

use super::{kaiming_normal, stack_batch, Layer, Param};
use crate::exec;

/// 2D convolution over square kernels, computed per sample as an im2col
/// matrix product. Weights are stored `(out, in, k, k)`.
pub struct Conv2d {
    weight: Param,
    bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    input: Option<Array4<f64>>,
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be positive");
        let shape = [out_channels, in_channels, kernel, kernel];
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::new(format!("{name}.weight"), kaiming_normal(&shape, fan_in, rng)),
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), &[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn geometry(&self, x: &Array4<f64>) -> Geometry {
        let (_, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "{}: channel mismatch", self.weight.name);
        let span = |len: usize| {
            let padded = len + 2 * self.padding;
            assert!(padded >= self.kernel, "{}: input smaller than kernel", self.weight.name);
            (padded - self.kernel) / self.stride + 1
        };
        Geometry {
            channels: c,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            in_h: h,
            in_w: w,
            out_h: span(h),
            out_w: span(w),
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .expect("contiguous weights")
    }

    fn sample_forward(&self, x: ArrayView3<'_, f64>, g: Geometry) -> Array3<f64> {
        let cols = im2col(x, g);
        let mut y = self.weight_matrix().dot(&cols);
        if let Some(b) = &self.bias {
            for (mut row, bv) in y.rows_mut().into_iter().zip(b.value.iter()) {
                row += *bv;
            }
        }
        y.into_shape_with_order((self.out_channels, g.out_h, g.out_w))
            .expect("contiguous output")
    }
}

fn im2col(x: ArrayView3<'_, f64>, g: Geometry) -> Array2<f64> {
    let spatial = g.out_h * g.out_w;
    if g.is_pointwise() {
        return x
            .to_owned()
            .into_shape_with_order((g.channels, spatial))
            .expect("contiguous input");
    }
    let k = g.kernel;
    let mut cols = Array2::zeros((g.channels * k * k, spatial));
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("fresh array");
    for c in 0..g.channels {
        let plane = &src[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let out = &mut dst[row * spatial..(row + 1) * spatial];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            out[oy * g.out_w + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, g: Geometry) -> Array3<f64> {
    if g.is_pointwise() {
        return cols
            .clone()
            .into_shape_with_order((g.channels, g.in_h, g.in_w))
            .expect("contiguous");
    }
    let k = g.kernel;
    let spatial = g.out_h * g.out_w;
    let mut x = Array3::zeros((g.channels, g.in_h, g.in_w));
    let src = cols.as_slice().expect("standard layout");
    let dst = x.as_slice_mut().expect("fresh array");
    for c in 0..g.channels {
        let plane = &mut dst[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let col = &src[row * spatial..(row + 1) * spatial];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let base = iy as usize * g.in_w;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            plane[base + ix as usize] += col[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

impl Layer for Conv2d {
    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let g = self.geometry(x);
        let outs = exec::map_range(x.dim().0, |i| self.sample_forward(x.index_axis(Axis(0), i), g));
        stack_batch(outs)
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let y = self.forward(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let x = self.input.take().expect("backward without forward_train");
        let g = self.geometry(&x);
        let w = self.weight_matrix();
        let spatial = g.out_h * g.out_w;
        let parts = exec::map_range(x.dim().0, |i| {
            let cols = im2col(x.index_axis(Axis(0), i), g);
            let go = grad_out
                .index_axis(Axis(0), i)
                .into_shape_with_order((self.out_channels, spatial))
                .expect("contiguous gradient")
                .to_owned();
            let d_weight = go.dot(&cols.t());
            let d_bias = go.sum_axis(Axis(1));
            let d_cols = w.t().dot(&go);
            (d_weight, d_bias, col2im(&d_cols, g))
        });

        let mut dx = Vec::with_capacity(parts.len());
        {
            let mut wg = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
                .expect("contiguous")
                .into_dimensionality::<Ix2>()
                .expect("2d");
            for (dw, _, _) in &parts {
                wg += dw;
            }
        }
        if let Some(b) = self.bias.as_mut() {
            for (_, db, _) in &parts {
                b.grad += db;
            }
        }
        for (_, _, d) in parts {
            dx.push(d);
        }
        stack_batch(dx)
    }

    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}
