use crate::tensor::{OpKind, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Logistic function without overflow for large |x|.
pub fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn activation(&self, kind: Activation, x: &Var<T>) -> Var<T> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Gelu => self.gelu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&self, x: &Var<T>) -> Var<T> {
        let out = x.value().map(|v| v.max(T::zero()));
        let xv = x.shared();
        self.record(OpKind::Relu, out, &[x], move |g, _| {
            vec![Some(g.zip_map(&xv, |gi, v| if v > T::zero() { gi } else { T::zero() }).expect("same shape"))]
        })
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&self, x: &Var<T>) -> Var<T> {
        let out = x.value().map(|v| {
            let f = v.as_f64();
            T::lit(f * normal_cdf(f))
        });
        let xv = x.shared();
        self.record(OpKind::Gelu, out, &[x], move |g, _| {
            let d: Tensor<T> = xv.map(|v| {
                let f = v.as_f64();
                T::lit(normal_cdf(f) + f * normal_pdf(f))
            });
            vec![Some(g.zip_map(&d, |gi, di| gi * di).expect("same shape"))]
        })
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Var<T> {
        let out = x.value().map(stable_sigmoid);
        let yv = std::sync::Arc::new(out.clone());
        self.record(OpKind::Sigmoid, out, &[x], move |g, _| {
            vec![Some(g.zip_map(&yv, |gi, s| gi * s * (T::one() - s)).expect("same shape"))]
        })
    }
}
