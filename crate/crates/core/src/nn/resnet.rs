use ndarray::Array4;
use rand::Rng;

use super::{AddCoords, BatchNorm2d, Conv2d, Layer, MaxPool2d, Param, Relu};

#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn with(mut self, layer: impl Layer + 'static) -> Self {
        self.push(layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let mut layers = self.layers.iter();
        let Some(first) = layers.next() else {
            return x.clone();
        };
        layers.fold(first.forward(x), |h, l| l.forward(&h))
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let mut layers = self.layers.iter_mut();
        let Some(first) = layers.next() else {
            return x.clone();
        };
        let h = first.forward_train(x);
        layers.fold(h, |h, l| l.forward_train(&h))
    }

    fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let mut layers = self.layers.iter_mut().rev();
        let Some(last) = layers.next() else {
            return grad_out.clone();
        };
        let g = last.backward(grad_out);
        layers.fold(g, |g, l| l.backward(&g))
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// ResNet bottleneck block (1x1, 3x3 strided, 1x1 with 4x expansion) with a
/// projection shortcut when the shape changes.
pub struct Bottleneck {
    main: Sequential,
    downsample: Option<Sequential>,
    out_relu: Relu,
}

impl Bottleneck {
    pub const EXPANSION: usize = 4;

    pub fn new(name: &str, in_ch: usize, width: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let out_ch = width * Self::EXPANSION;
        let main = Sequential::new()
            .with(Conv2d::new(&format!("{name}.conv1"), in_ch, width, 1, 1, 0, false, rng))
            .with(BatchNorm2d::new(&format!("{name}.bn1"), width))
            .with(Relu::new())
            .with(Conv2d::new(&format!("{name}.conv2"), width, width, 3, stride, 1, false, rng))
            .with(BatchNorm2d::new(&format!("{name}.bn2"), width))
            .with(Relu::new())
            .with(Conv2d::new(&format!("{name}.conv3"), width, out_ch, 1, 1, 0, false, rng))
            .with(BatchNorm2d::new(&format!("{name}.bn3"), out_ch));
        let downsample = (stride != 1 || in_ch != out_ch).then(|| {
            Sequential::new()
                .with(Conv2d::new(&format!("{name}.downsample.0"), in_ch, out_ch, 1, stride, 0, false, rng))
                .with(BatchNorm2d::new(&format!("{name}.downsample.1"), out_ch))
        });
        Self {
            main,
            downsample,
            out_relu: Relu::new(),
        }
    }
}

impl Layer for Bottleneck {
    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let branch = self.main.forward(x);
        let shortcut = match &self.downsample {
            Some(d) => d.forward(x),
            None => x.clone(),
        };
        self.out_relu.forward(&(branch + shortcut))
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let branch = self.main.forward_train(x);
        let shortcut = match &mut self.downsample {
            Some(d) => d.forward_train(x),
            None => x.clone(),
        };
        self.out_relu.forward_train(&(branch + shortcut))
    }

    fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let g = self.out_relu.backward(grad_out);
        let d_branch = self.main.backward(&g);
        let d_short = match &mut self.downsample {
            Some(d) => d.backward(&g),
            None => g,
        };
        d_branch + d_short
    }

    fn params(&self) -> Vec<&Param> {
        let mut p = self.main.params();
        if let Some(d) = &self.downsample {
            p.extend(d.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.main.params_mut();
        if let Some(d) = &mut self.downsample {
            p.extend(d.params_mut());
        }
        p
    }
}

/// ResNet-50 feature extractor (everything before the classifier), torchvision
/// parameter naming. Returns the backbone and its feature width (2048).
pub fn resnet50(rng: &mut impl Rng) -> (Sequential, usize) {
    let mut net = Sequential::new()
        .with(Conv2d::new("conv1", 3, 64, 7, 2, 3, false, rng))
        .with(BatchNorm2d::new("bn1", 64))
        .with(Relu::new())
        .with(MaxPool2d::new(3, 2, 1));
    let mut in_ch = 64;
    for (stage, (blocks, width)) in [(3, 64), (4, 128), (6, 256), (3, 512)].into_iter().enumerate() {
        for b in 0..blocks {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            let name = format!("layer{}.{b}", stage + 1);
            net.push(Bottleneck::new(&name, in_ch, width, stride, rng));
            in_ch = width * Bottleneck::EXPANSION;
        }
    }
    (net, in_ch)
}

/// Four 3x3 conv blocks on the image plus two coordinate channels. Returns the
/// backbone and its feature width (64).
pub fn toy_cnn(in_channels: usize, rng: &mut impl Rng) -> (Sequential, usize) {
    let widths = [16, 32, 32, 64];
    let mut net = Sequential::new().with(AddCoords::new());
    let mut in_ch = in_channels + 2;
    for (i, &w) in widths.iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        net.push(Conv2d::new(&format!("toy.conv{}", i + 1), in_ch, w, 3, stride, 1, true, rng));
        net.push(Relu::new());
        in_ch = w;
    }
    (net, in_ch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{gradcheck, random4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bottleneck_gradients_with_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut block = Bottleneck::new("b", 3, 2, 2, &mut rng);
        assert!(block.downsample.is_some());
        gradcheck(&mut block, &random4((2, 3, 5, 5), 12), 1e-6);
    }

    #[test]
    fn bottleneck_gradients_identity_shortcut() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut block = Bottleneck::new("b", 8, 2, 1, &mut rng);
        assert!(block.downsample.is_none());
        gradcheck(&mut block, &random4((1, 8, 4, 4), 14), 1e-6);
    }

    #[test]
    fn toy_backbone_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (mut net, width) = toy_cnn(1, &mut rng);
        assert_eq!(width, 64);
        gradcheck(&mut net, &random4((1, 1, 8, 8), 16), 1e-6);
    }

    #[test]
    fn resnet50_parameter_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (net, width) = resnet50(&mut rng);
        assert_eq!(width, 2048);
        let params = net.params();
        let trainable: usize = params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum();
        // torchvision resnet50 has 25,557,032 parameters; the 2048x1000
        // classifier (2,049,000) is not part of the backbone.
        assert_eq!(trainable, 25_557_032 - 2_049_000);
        let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        assert!(names.contains(&"conv1.weight"));
        assert!(names.contains(&"layer4.2.bn3.running_var"));
        assert!(names.contains(&"layer2.0.downsample.0.weight"));
        assert!(!names.contains(&"layer2.1.downsample.0.weight"));
    }
}
