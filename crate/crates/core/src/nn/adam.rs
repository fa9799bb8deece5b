use ndarray::Zip;

use crate::nn::mlp::{Gradients, Layer, Mlp};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adaptive moment estimation over an [`Mlp`]'s parameters.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Mlp<T>, cfg: AdamConfig) -> Self {
        let zeros = |l: &Layer<T>| Layer {
            weights: l.weights.mapv(|_| T::zero()),
            bias: l.bias.mapv(|_| T::zero()),
        };
        Self {
            cfg,
            step: 0,
            m: net.layers().iter().map(zeros).collect(),
            v: net.layers().iter().map(zeros).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.cfg.lr
    }

    /// One descent step along `grads`.
    pub fn minimize(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>) {
        self.apply(net, grads, T::one());
    }

    /// One ascent step along `grads`.
    pub fn maximize(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>) {
        self.apply(net, grads, -T::one());
    }

    fn apply(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>, sign: T) {
        self.step += 1;
        let (b1, b2) = (lit::<T>(self.cfg.beta1), lit::<T>(self.cfg.beta2));
        let bc1 = T::one() - b1.powi(self.step);
        let bc2 = T::one() - b2.powi(self.step);
        let lr = lit::<T>(self.cfg.lr);
        let eps = lit::<T>(self.cfg.eps);
        let one = T::one();
        let update = |p: &mut T, &g: &T, m: &mut T, v: &mut T| {
            let g = sign * g;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}
