use std::sync::Arc;

use super::broadcast::{binary_map, broadcast_shape, reduce_to};
use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Inputs to `exp` and `softplus` are clamped here before exponentiation.
pub const EXP_CLAMP: f64 = 40.0;

/// Elementwise primitive selector for [`Var::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Softplus,
    Sigmoid,
    Silu,
    Gelu,
    Neg,
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::of(EXP_CLAMP) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn forward<T: Real>(self) -> fn(T, T) -> T {
        match self {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu<T: Real>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(0.044715) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let x2 = x * x;
    let u = T::of(GELU_C) * (x + T::of(0.044715) * x2 * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * 0.044715) * x2);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

impl<'t, T: Real> Var<'t, T> {
    pub fn elementwise(self, op: ElementwiseOp, other: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        use ElementwiseOp::*;
        let need = |o: Option<Var<'t, T>>| {
            o.ok_or_else(|| Error::InvalidArgument(format!("{op:?} needs a second operand")))
        };
        match op {
            Add => self.add(need(other)?),
            Sub => self.sub(need(other)?),
            Mul => self.mul(need(other)?),
            Div => self.div(need(other)?),
            Exp => self.exp(),
            Softplus => self.softplus(),
            Sigmoid => self.sigmoid(),
            Silu => self.silu(),
            Gelu => self.gelu(),
            Neg => self.neg(),
        }
    }

    fn binary(self, other: Var<'t, T>, op: Binary) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let name = op.name();
        let out_shape = broadcast_shape(a.shape(), b.shape())
            .map_err(|_| Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())))?;
        let f = op.forward::<T>();
        let out = Tensor::new(out_shape.clone(), binary_map(&a, &b, &out_shape, f))?;
        self.tape.push(name, out, &[self, other], move || {
            Box::new(move |g: &Tensor<T>| {
                let scaled = |d: Vec<T>| -> Tensor<T> {
                    let v = g.data().iter().zip(&d).map(|(&g, &d)| g * d).collect();
                    Tensor::new(out_shape.clone(), v).unwrap()
                };
                let (ga, gb) = match op {
                    Binary::Add => (g.clone(), g.clone()),
                    Binary::Sub => (g.clone(), g.map(|v| -v)),
                    Binary::Mul => (
                        scaled(binary_map(&a, &b, &out_shape, |_, y| y)),
                        scaled(binary_map(&a, &b, &out_shape, |x, _| x)),
                    ),
                    Binary::Div => (
                        scaled(binary_map(&a, &b, &out_shape, |_, y| T::one() / y)),
                        scaled(binary_map(&a, &b, &out_shape, |x, y| -x / (y * y))),
                    ),
                };
                vec![Some(reduce_to(&ga, a.shape())), Some(reduce_to(&gb, b.shape()))]
            })
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Div)
    }

    /// Unary primitive; `df(x, y)` is the derivative given input and output.
    fn unary(self, op: &'static str, f: impl Fn(T) -> T, df: fn(T, T) -> T) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = Arc::new(x.map(f));
        self.tape.push_shared(op, y.clone(), &[self], move || {
            Box::new(move |g: &Tensor<T>| {
                let d: Vec<T> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(Tensor::new(x.shape().to_vec(), d).unwrap())]
            })
        })
    }

    /// `exp(min(x, 40))`; the gradient is zero on the clamped region.
    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary(
            "exp",
            |x| x.min(T::of(EXP_CLAMP)).exp(),
            |x, y| if x > T::of(EXP_CLAMP) { T::zero() } else { y },
        )
    }

    /// `ln(1 + e^x)`, returning `x` itself above the clamp threshold.
    pub fn softplus(self) -> Result<Var<'t, T>> {
        self.unary("softplus", softplus, |x, _| if x > T::of(EXP_CLAMP) { T::one() } else { sigmoid(x) })
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn silu(self) -> Result<Var<'t, T>> {
        self.unary("silu", |x| x * sigmoid(x), |x, _| {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Result<Var<'t, T>> {
        self.unary("gelu", gelu, |x, _| gelu_grad(x))
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(self, c: f64) -> Result<Var<'t, T>> {
        let c = T::of(c);
        let x = self.value();
        let out = x.map(|v| v * c);
        let shape = x.shape().to_vec();
        self.tape.push("scale", out, &[self], move || {
            Box::new(move |g: &Tensor<T>| vec![Some(Tensor::new(shape.clone(), g.data().iter().map(|&v| v * c).collect()).unwrap())])
        })
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t, T>> {
        let c = T::of(c);
        let out = self.value().map(|v| v + c);
        self.tape.push("add_scalar", out, &[self], || Box::new(|g: &Tensor<T>| vec![Some(g.clone())]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn silu_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1]));
        assert_eq!(x.silu().unwrap().value().item(), 0.0);
    }

    #[test]
    fn add_vectors() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
        assert_eq!(a.elementwise(ElementwiseOp::Add, Some(b)).unwrap().value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_errors() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::ones([2, 3]));
        let b = tape.constant(Tensor::ones([2]));
        assert!(matches!(a.add(b), Err(Error::ShapeMismatch { .. })));
        assert!(a.elementwise(ElementwiseOp::Mul, None).is_err());
    }

    #[test]
    fn clamped_exp_stays_finite() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_f64([3], &[100.0, 1000.0, -1000.0]).unwrap(), true);
        let y = x.exp().unwrap();
        assert!(y.value().all_finite());
        let s = x.softplus().unwrap();
        assert_eq!(s.value().data()[0], 100.0);
        assert_eq!(s.value().data()[2], 0.0);
    }

    #[test]
    fn non_finite_division_is_an_error() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones([1]));
        let b = tape.constant(Tensor::zeros([1]));
        assert!(matches!(a.div(b), Err(Error::NonFinite { op: "div" })));
    }

    #[test]
    fn softplus_of_zero_is_ln2() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1]));
        assert!((x.softplus().unwrap().value().item() - 2f64.ln()).abs() < 1e-15);
    }
}
