use ndarray::{s, Array1, Array2, Array4, ArrayD, Axis, Ix1, Ix2, IxDyn};
use rand::Rng;

use super::{fan_in_uniform, Layer, Param};
use crate::exec;

pub struct Relu {
    input: Option<Array4<f64>>,
}

impl Relu {
    pub fn new() -> Self {
        Self { input: None }
    }
}

impl Default for Relu {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Relu {
    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        x.mapv(|v| v.max(0.0))
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array4<f64> {
        self.input = Some(x.clone());
        self.forward(x)
    }

    fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let x = self.input.take().expect("backward without forward_train");
        let mut g = grad_out.clone();
        g.zip_mut_with(&x, |g, &x| {
            if x <= 0.0 {
                *g = 0.0
            }
        });
        g
    }
}

/// Appends two channels holding the normalized column and row coordinate in
/// [-1, 1], giving later convolutions access to absolute position.
pub struct AddCoords {
    channels: Option<usize>,
}

impl AddCoords {
    pub fn new() -> Self {
        Self { channels: None }
    }
}

impl Default for AddCoords {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for AddCoords {
    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let coord = |i: usize, len: usize| {
            if len > 1 {
                2.0 * i as f64 / (len - 1) as f64 - 1.0
            } else {
                0.0
            }
        };
        let mut out = Array4::zeros((n, c + 2, h, w));
        out.slice_mut(s![.., ..c, .., ..]).assign(x);
        for ((_, ch, y, xx), v) in out.slice_mut(s![.., c.., .., ..]).indexed_iter_mut() {
            *v = if ch == 0 { coord(xx, w) } else { coord(y, h) };
        }
        out
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array4<f64> {
        self.channels = Some(x.dim().1);
        self.forward(x)
    }

    fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let c = self.channels.take().expect("backward without forward_train");
        grad_out.slice(s![.., ..c, .., ..]).to_owned()
    }
}

/// Batch normalization with frozen statistics: the running mean and variance
/// are fixed buffers, only the affine scale and shift train. The layer is the
/// same per-channel affine map in training and evaluation, so samples never
/// interact.
pub struct BatchNorm2d {
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    eps: f64,
    normalized: Option<Array4<f64>>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        let ones = ArrayD::ones(IxDyn(&[channels]));
        Self {
            gamma: Param::new(format!("{name}.weight"), ones.clone()),
            beta: Param::zeros(format!("{name}.bias"), &[channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), ArrayD::zeros(IxDyn(&[channels]))),
            running_var: Param::buffer(format!("{name}.running_var"), ones),
            eps: 1e-5,
            normalized: None,
        }
    }

    fn inv_std(&self) -> Array1<f64> {
        self.running_var
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("1d")
            .mapv(|v| 1.0 / (v + self.eps).sqrt())
    }

    fn normalize(&self, x: &Array4<f64>) -> Array4<f64> {
        let mean = self.running_mean.value.view().into_dimensionality::<Ix1>().expect("1d");
        let inv = self.inv_std();
        let mut out = x.clone();
        for (c, mut plane) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (mean[c], inv[c]);
            plane.mapv_inplace(|v| (v - m) * s);
        }
        out
    }

    fn affine(&self, xhat: &Array4<f64>) -> Array4<f64> {
        let mut out = xhat.clone();
        for (c, mut plane) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (g, b) = (self.gamma.value[[c]], self.beta.value[[c]]);
            plane.mapv_inplace(|v| v * g + b);
        }
        out
    }
}

impl Layer for BatchNorm2d {
    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        self.affine(&self.normalize(x))
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let xhat = self.normalize(x);
        let y = self.affine(&xhat);
        self.normalized = Some(xhat);
        y
    }

    fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let xhat = self.normalized.take().expect("backward without forward_train");
        let inv = self.inv_std();
        let mut dx = grad_out.clone();
        for c in 0..inv.len() {
            let g_plane = grad_out.index_axis(Axis(1), c);
            let x_plane = xhat.index_axis(Axis(1), c);
            self.gamma.grad[[c]] += (&g_plane * &x_plane).sum();
            self.beta.grad[[c]] += g_plane.sum();
            let scale = self.gamma.value[[c]] * inv[c];
            dx.index_axis_mut(Axis(1), c).mapv_inplace(|v| v * scale);
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    /// Input shape and flat argmax index per output element.
    cache: Option<((usize, usize, usize, usize), Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    fn pool(&self, x: &Array4<f64>) -> (Array4<f64>, Vec<usize>) {
        let (n, c, h, w) = x.dim();
        let out_len = |len: usize| (len + 2 * self.padding - self.kernel) / self.stride + 1;
        let (oh, ow) = (out_len(h), out_len(w));
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let per_sample = exec::map_range(n, |i| {
            let mut vals = Vec::with_capacity(c * oh * ow);
            let mut idx = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                let base = (i * c + ch) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut arg = usize::MAX;
                        for ki in 0..self.kernel {
                            let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kj in 0..self.kernel {
                                let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let flat = base + iy as usize * w + ix as usize;
                                if src[flat] > best {
                                    best = src[flat];
                                    arg = flat;
                                }
                            }
                        }
                        vals.push(best);
                        idx.push(arg);
                    }
                }
            }
            (vals, idx)
        });
        let mut vals = Vec::with_capacity(n * c * oh * ow);
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        for (v, i) in per_sample {
            vals.extend(v);
            idx.extend(i);
        }
        (Array4::from_shape_vec((n, c, oh, ow), vals).expect("sized"), idx)
    }
}

impl Layer for MaxPool2d {
    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        self.pool(x).0
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let (y, idx) = self.pool(x);
        self.cache = Some((x.dim(), idx));
        y
    }

    fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let (shape, idx) = self.cache.take().expect("backward without forward_train");
        let mut dx = Array4::zeros(shape);
        let dst = dx.as_slice_mut().expect("fresh array");
        for (g, &i) in grad_out.iter().zip(&idx) {
            dst[i] += g;
        }
        dx
    }
}

/// Fully-connected layer on `(batch, features)` inputs.
pub struct Linear {
    weight: Param,
    bias: Param,
    input: Option<Array2<f64>>,
}

impl Linear {
    /// Fan-in scaled uniform weights, zero bias.
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                fan_in_uniform(&[out_features, in_features], in_features, rng),
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_features]),
            input: None,
        }
    }

    pub fn out_features(&self) -> usize {
        self.bias.value.len()
    }

    fn w(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2d")
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let b = self.bias.value.view().into_dimensionality::<Ix1>().expect("1d");
        x.dot(&self.w().t()) + &b
    }

    pub fn forward_train(&mut self, x: &Array2<f64>) -> Array2<f64> {
        self.input = Some(x.clone());
        self.forward(x)
    }

    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("backward without forward_train");
        let dw = grad_out.t().dot(&x);
        self.weight.grad += &dw.into_dyn();
        self.bias.grad += &grad_out.sum_axis(Axis(0)).into_dyn();
        grad_out.dot(&self.w())
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{gradcheck, random4};
    use crate::oracle::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_gradients() {
        gradcheck(&mut Relu::new(), &random4((2, 2, 3, 3), 1), 1e-8);
    }

    #[test]
    fn coords_layout_and_gradients() {
        let x = random4((1, 1, 3, 5), 2);
        let y = AddCoords::new().forward(&x);
        assert_eq!(y.dim(), (1, 3, 3, 5));
        assert_eq!(y[[0, 1, 0, 0]], -1.0);
        assert_eq!(y[[0, 1, 2, 4]], 1.0);
        assert_eq!(y[[0, 2, 0, 3]], -1.0);
        assert_eq!(y[[0, 2, 2, 3]], 1.0);
        gradcheck(&mut AddCoords::new(), &random4((2, 2, 3, 4), 3), 1e-8);
    }

    #[test]
    fn batchnorm_gradients() {
        let mut bn = BatchNorm2d::new("bn", 3);
        for (i, p) in bn.params_mut().into_iter().enumerate() {
            p.value.iter_mut().enumerate().for_each(|(j, v)| *v = 0.5 + 0.3 * i as f64 + 0.1 * j as f64);
        }
        gradcheck(&mut bn, &random4((2, 3, 2, 3), 4), 1e-7);
    }

    #[test]
    fn maxpool_gradients() {
        let mut pool = MaxPool2d::new(3, 2, 1);
        let x = random4((2, 2, 7, 6), 5);
        assert_eq!(pool.forward(&x).dim(), (2, 2, 4, 3));
        gradcheck(&mut pool, &x, 1e-7);
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::new("fc", 4, 3, &mut rng);
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let probe = Array2::from_shape_fn((2, 3), |(i, j)| 0.2 * i as f64 - 0.7 * j as f64 + 0.1);
        lin.forward_train(&x);
        let dx = lin.backward(&probe);
        let num = central_difference(
            |v| (lin.forward(&Array2::from_shape_vec((2, 4), v.to_vec()).unwrap()) * &probe).sum(),
            x.as_slice().unwrap(),
            1e-5,
        );
        assert!(relative_error(dx.as_slice().unwrap(), &num) < 1e-8);
        let w0 = lin.weight.value.clone();
        let analytic: Vec<f64> = lin.weight.grad.iter().copied().collect();
        let num = central_difference(
            |v| {
                lin.weight.value = ArrayD::from_shape_vec(w0.raw_dim(), v.to_vec()).unwrap();
                (lin.forward(&x) * &probe).sum()
            },
            &w0.iter().copied().collect::<Vec<_>>(),
            1e-5,
        );
        assert!(relative_error(&analytic, &num) < 1e-8);
    }

    #[test]
    fn linear_head_init_is_fan_in_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lin = Linear::new("fc", 64, 90, &mut rng);
        let bound = 1.0 / 8.0;
        assert!(lin.weight.value.iter().all(|v| v.abs() <= bound));
        assert!(lin.bias.value.iter().all(|v| *v == 0.0));
    }
}
