use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::uniform;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// Logistic squash onto (0, 1).
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => a * (T::one() - a),
            Activation::Tanh => T::one() - a * a,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

/// One affine map; `weights` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.weights.mapv_inplace(|x| x * s);
            l.bias.mapv_inplace(|x| x * s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| *x == T::zero()))
    }
}

/// Cached activations of a batched forward pass, consumed by
/// [`Mlp::backward_trace`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub input: Array2<T>,
    pre: Vec<Array2<T>>,
    post: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Network output, one row per sample.
    pub fn output(&self) -> &Array2<T> {
        self.post.last().expect("at least one layer")
    }
}

/// Multilayer perceptron: hidden layers share one activation, the last
/// layer has its own.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
    hidden: Activation,
    output: Activation,
}

fn flatten<T: Scalar>(layers: &[Layer<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

impl<T: Scalar> Mlp<T> {
    /// Weights and biases drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden, output)?;
        for l in &mut net.layers {
            let bound = 1.0 / (l.inputs() as f64).sqrt();
            l.weights.mapv_inplace(|_| lit(uniform(rng, -bound, bound)));
            l.bias.mapv_inplace(|_| lit(uniform(rng, -bound, bound)));
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("a network needs input and output widths".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("zero-width layer in {dims:?}")));
        }
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    /// Builds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer<T>>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("no layers".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::shape(w[0].outputs(), w[1].inputs()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::shape(l.outputs(), l.bias.len()));
            }
        }
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.outputs()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape(self.num_params(), params.len()));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().expect("counted"));
            l.bias.iter_mut().for_each(|b| *b = it.next().expect("counted"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Overwrites this network's parameters with `other`'s.
    pub fn copy_from(&mut self, other: &Mlp<T>) {
        debug_assert_eq!(self.layer_dims(), other.layer_dims());
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.assign(&src.weights);
            dst.bias.assign(&src.bias);
        }
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: ArrayView1<T>) -> Result<Array1<T>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), input.len()));
        }
        let mut a = input.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let mut z = l.weights.dot(&a);
            z += &l.bias;
            z.mapv_inplace(|x| act.apply(x));
            a = z;
        }
        Ok(a)
    }

    /// Batched forward pass, one sample per row.
    pub fn forward_batch(&self, input: ArrayView2<T>) -> Result<Array2<T>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), input.ncols()));
        }
        let mut a = input.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let mut z = a.dot(&l.weights.t());
            z += &l.bias;
            z.mapv_inplace(|x| act.apply(x));
            a = z;
        }
        Ok(a)
    }

    /// Batched forward pass keeping what the backward pass needs.
    pub fn forward_trace(&self, input: ArrayView2<T>) -> Result<ForwardTrace<T>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), input.ncols()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<T>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let a_in = if i == 0 { input } else { post[i - 1].view() };
            let mut z = a_in.dot(&l.weights.t());
            z += &l.bias;
            let act = self.activation(i);
            let a = z.mapv(|x| act.apply(x));
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace {
            input: input.to_owned(),
            pre,
            post,
        })
    }

    /// Reverse-mode pass for a scalar loss whose gradient with respect to the
    /// network output is `upstream` (`batch × output_dim`). Returns parameter
    /// gradients (summed over the batch) and, if requested, the gradient with
    /// respect to the input.
    pub fn backward_trace(
        &self,
        trace: &ForwardTrace<T>,
        upstream: ArrayView2<T>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Gradients<T>>, Option<Array2<T>>)> {
        let out = trace.output();
        if upstream.dim() != out.dim() {
            return Err(Error::shape(format!("{:?}", out.dim()), format!("{:?}", upstream.dim())));
        }
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_owned();
        let act = self.activation(last);
        Zip::from(&mut delta)
            .and(&trace.pre[last])
            .and(&trace.post[last])
            .for_each(|d, &z, &a| *d = *d * act.derivative(z, a));

        let mut grads: Vec<Layer<T>> = Vec::new();
        let mut input_grad = None;
        for i in (0..=last).rev() {
            let l = &self.layers[i];
            let a_in = if i == 0 { trace.input.view() } else { trace.post[i - 1].view() };
            if want_params {
                grads.push(Layer {
                    weights: delta.t().dot(&a_in),
                    bias: delta.sum_axis(Axis(0)),
                });
            }
            if i == 0 {
                if want_input {
                    input_grad = Some(delta.dot(&l.weights));
                }
                break;
            }
            let mut d_prev = delta.dot(&l.weights);
            let act = self.activation(i - 1);
            Zip::from(&mut d_prev)
                .and(&trace.pre[i - 1])
                .and(&trace.post[i - 1])
                .for_each(|d, &z, &a| *d = *d * act.derivative(z, a));
            delta = d_prev;
        }
        let grads = want_params.then(|| {
            grads.reverse();
            Gradients { layers: grads }
        });
        Ok((grads, input_grad))
    }

    /// Single-sample convenience: gradients of `upstream · f(input)`.
    pub fn backward(&self, input: ArrayView1<T>, upstream: ArrayView1<T>) -> Result<(Gradients<T>, Array1<T>)> {
        let x = input.insert_axis(Axis(0));
        let trace = self.forward_trace(x)?;
        let up = upstream.insert_axis(Axis(0));
        let (g, dx) = self.backward_trace(&trace, up, true, true)?;
        Ok((g.expect("requested"), dx.expect("requested").row(0).to_owned()))
    }
}
