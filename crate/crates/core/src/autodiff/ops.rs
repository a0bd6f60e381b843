//! Primitive kernels: forward values and vector-Jacobian products.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// A differentiable primitive.
///
/// Matrix products treat a vector right operand as a single column and
/// return a vector in that case.
#[derive(Clone, Debug, PartialEq)]
pub enum Op<T> {
    /// `a · b` with `a: [r, c]`, `b: [c]` or `[c, n]`.
    MatMul,
    /// `aᵀ · b` with `a: [c, r]`, `b: [c]` or `[c, n]`.
    MatMulTn,
    /// `a · bᵀ` with `a: [r, c]`, `b: [n, c]`.
    MatMulNt,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// Adds a `[k]` vector to every row of an `[n, k]` matrix.
    AddRow,
    /// Concatenation along the first axis.
    Concat,
    /// Stacks `n` vectors of length `k` into an `[n, k]` matrix.
    Stack,
    Sigmoid,
    Tanh,
    Exp,
    /// Normalized exponential over a vector.
    Softmax,
    Sum,
    Mean,
    Scale(T),
    /// Contiguous range of the flattened values, returned as a vector.
    Slice { start: usize, len: usize },
}

impl<T: Scalar> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::MatMulTn => "matmul_tn",
            Op::MatMulNt => "matmul_nt",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul_elementwise",
            Op::AddRow => "add_row",
            Op::Concat => "concat",
            Op::Stack => "stack",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Softmax => "softmax",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Scale(_) => "scale",
            Op::Slice { .. } => "slice",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::MatMul | Op::MatMulTn | Op::MatMulNt | Op::Add | Op::Sub | Op::Mul | Op::AddRow => {
                Some(2)
            }
            Op::Concat | Op::Stack => None,
            _ => Some(1),
        }
    }
}

impl<T: Scalar> fmt::Display for Op<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Scale(k) => write!(f, "scale({k})"),
            Op::Slice { start, len } => write!(f, "slice({start},{len})"),
            op => f.write_str(op.name()),
        }
    }
}

/// Parses `name` or `name(args)`, e.g. `"tanh"`, `"scale(0.5)"`, `"slice(2,3)"`.
impl<T: Scalar> FromStr for Op<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            _ => (s, None),
        };
        let bad = || Error::contract(format!("unknown primitive `{s}`"));
        let op = match (name, args) {
            ("matmul", None) => Op::MatMul,
            ("matmul_tn", None) => Op::MatMulTn,
            ("matmul_nt", None) => Op::MatMulNt,
            ("add", None) => Op::Add,
            ("sub", None) => Op::Sub,
            ("mul" | "mul_elementwise", None) => Op::Mul,
            ("add_row", None) => Op::AddRow,
            ("concat", None) => Op::Concat,
            ("stack", None) => Op::Stack,
            ("sigmoid", None) => Op::Sigmoid,
            ("tanh", None) => Op::Tanh,
            ("exp", None) => Op::Exp,
            ("softmax", None) => Op::Softmax,
            ("sum", None) => Op::Sum,
            ("mean", None) => Op::Mean,
            ("scale", Some(a)) => Op::Scale(T::lit(a.trim().parse::<f64>().map_err(|_| bad())?)),
            ("slice", Some(a)) => {
                let parts: Vec<usize> = a
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                match parts[..] {
                    [start, len] => Op::Slice { start, len },
                    _ => return Err(bad()),
                }
            }
            _ => return Err(bad()),
        };
        Ok(op)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn shape_err<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `[c]` is treated as `[c, 1]`.
fn as_cols<T: Scalar>(t: &Tensor<T>) -> Option<(usize, usize)> {
    match t.shape() {
        [c] => Some((*c, 1)),
        [c, n] => Some((*c, *n)),
        _ => None,
    }
}

fn as_matrix<T: Scalar>(t: &Tensor<T>) -> Option<(usize, usize)> {
    match t.shape() {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

/// Evaluates a primitive on concrete tensors.
pub fn primitive_forward<T: Scalar>(op: &Op<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(Error::contract(format!(
                "{} takes {n} inputs, got {}",
                op.name(),
                inputs.len()
            )));
        }
    } else if inputs.is_empty() {
        return Err(Error::contract(format!("{} needs at least one input", op.name())));
    }
    let a = inputs[0];
    match op {
        Op::MatMul => {
            let b = inputs[1];
            let ((r, c), (c2, n)) = match (as_matrix(a), as_cols(b)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(shape_err("matmul", a, b)),
            };
            if c != c2 {
                return Err(shape_err("matmul", a, b));
            }
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![T::zero(); r * n];
            if n == 1 {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &ad[i * c..(i + 1) * c];
                    *o = row.iter().zip(bd).map(|(&x, &y)| x * y).sum();
                }
            } else {
                for i in 0..r {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for k in 0..c {
                        let aik = ad[i * c + k];
                        let brow = &bd[k * n..(k + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aik * bv;
                        }
                    }
                }
            }
            let shape = if b.shape().len() == 1 { vec![r] } else { vec![r, n] };
            Tensor::new(shape, out)
        }
        Op::MatMulTn => {
            let b = inputs[1];
            let ((c, r), (c2, n)) = match (as_matrix(a), as_cols(b)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(shape_err("matmul_tn", a, b)),
            };
            if c != c2 {
                return Err(shape_err("matmul_tn", a, b));
            }
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![T::zero(); r * n];
            for k in 0..c {
                let arow = &ad[k * r..(k + 1) * r];
                let brow = &bd[k * n..(k + 1) * n];
                for (i, &aki) in arow.iter().enumerate() {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aki * bv;
                    }
                }
            }
            let shape = if b.shape().len() == 1 { vec![r] } else { vec![r, n] };
            Tensor::new(shape, out)
        }
        Op::MatMulNt => {
            let b = inputs[1];
            let ((r, c), (n, c2)) = match (as_matrix(a), as_matrix(b)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(shape_err("matmul_nt", a, b)),
            };
            if c != c2 {
                return Err(shape_err("matmul_nt", a, b));
            }
            let (ad, bd) = (a.data(), b.data());
            let mut out = Vec::with_capacity(r * n);
            for i in 0..r {
                let arow = &ad[i * c..(i + 1) * c];
                for j in 0..n {
                    let brow = &bd[j * c..(j + 1) * c];
                    out.push(arow.iter().zip(brow).map(|(&x, &y)| x * y).sum());
                }
            }
            Tensor::new(vec![r, n], out)
        }
        Op::Add | Op::Sub | Op::Mul => {
            let b = inputs[1];
            if a.shape() != b.shape() {
                return Err(shape_err(op.name(), a, b));
            }
            let f: fn(T, T) -> T = match op {
                Op::Add => |x, y| x + y,
                Op::Sub => |x, y| x - y,
                _ => |x, y| x * y,
            };
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        Op::AddRow => {
            let b = inputs[1];
            let k = match (as_matrix(a), b.shape()) {
                (Some((_, k)), [kb]) if k == *kb => k,
                _ => return Err(shape_err("add_row", a, b)),
            };
            let bd = b.data();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bd[i % k])
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        Op::Concat => {
            let tail = &a.shape()[1..];
            let mut rows = 0;
            let mut data = Vec::with_capacity(inputs.iter().map(|t| t.len()).sum());
            for t in inputs {
                if &t.shape()[1..] != tail {
                    return Err(shape_err("concat", a, t));
                }
                rows += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            let mut shape = vec![rows];
            shape.extend_from_slice(tail);
            Tensor::new(shape, data)
        }
        Op::Stack => {
            let k = match a.shape() {
                [k] => *k,
                _ => return Err(Error::contract(format!("stack takes vectors, got {:?}", a.shape()))),
            };
            let mut data = Vec::with_capacity(k * inputs.len());
            for t in inputs {
                if t.shape() != [k] {
                    return Err(shape_err("stack", a, t));
                }
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![inputs.len(), k], data)
        }
        Op::Sigmoid => Ok(a.map(sigmoid)),
        Op::Tanh => Ok(a.map(|x| x.tanh())),
        Op::Exp => Ok(a.map(|x| x.exp())),
        Op::Softmax => {
            if a.shape().len() != 1 {
                return Err(Error::contract(format!("softmax takes a vector, got {:?}", a.shape())));
            }
            let max = a.data().iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = a.data().iter().map(|&x| (x - max).exp()).collect();
            let total: T = exps.iter().copied().sum();
            Ok(Tensor::vector(exps.into_iter().map(|e| e / total).collect()))
        }
        Op::Sum => Ok(Tensor::scalar(a.data().iter().copied().sum())),
        Op::Mean => {
            let s: T = a.data().iter().copied().sum();
            Ok(Tensor::scalar(s / T::lit(a.len() as f64)))
        }
        Op::Scale(k) => Ok(a.map(|x| x * *k)),
        Op::Slice { start, len } => {
            if *len == 0 || start + len > a.len() {
                return Err(Error::contract(format!(
                    "slice {start}..{} out of bounds for {} values",
                    start + len,
                    a.len()
                )));
            }
            Ok(Tensor::vector(a.data()[*start..start + len].to_vec()))
        }
    }
}

/// Adds the contribution of `g = ∂L/∂out` to `acc = ∂L/∂inputs[which]`.
pub(crate) fn accumulate_grad<T: Scalar>(
    op: &Op<T>,
    inputs: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &Tensor<T>,
    which: usize,
    acc: &mut Tensor<T>,
) {
    let gd = g.data();
    let accd = acc.data_mut();
    match op {
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let n = as_cols(b).map_or(1, |s| s.1);
            let (ad, bd) = (a.data(), b.data());
            if which == 0 && n == 1 {
                // outer product g bᵀ
                for (i, &gi) in gd.iter().enumerate() {
                    for (da, &bk) in accd[i * c..(i + 1) * c].iter_mut().zip(bd) {
                        *da += gi * bk;
                    }
                }
            } else if which == 0 {
                // dA[i,k] += Σ_j g[i,j] b[k,j]
                for i in 0..r {
                    let grow = &gd[i * n..(i + 1) * n];
                    let arow = &mut accd[i * c..(i + 1) * c];
                    for (k, da) in arow.iter_mut().enumerate() {
                        let brow = &bd[k * n..(k + 1) * n];
                        *da += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<T>();
                    }
                }
            } else if n == 1 {
                // Aᵀ g
                for (i, &gi) in gd.iter().enumerate() {
                    for (db, &aik) in accd.iter_mut().zip(&ad[i * c..(i + 1) * c]) {
                        *db += aik * gi;
                    }
                }
            } else {
                // dB[k,j] += Σ_i a[i,k] g[i,j]
                for i in 0..r {
                    let grow = &gd[i * n..(i + 1) * n];
                    let arow = &ad[i * c..(i + 1) * c];
                    for (k, &aik) in arow.iter().enumerate() {
                        let brow = &mut accd[k * n..(k + 1) * n];
                        for (db, &gv) in brow.iter_mut().zip(grow) {
                            *db += aik * gv;
                        }
                    }
                }
            }
        }
        Op::MatMulTn => {
            let (a, b) = (inputs[0], inputs[1]);
            let (c, r) = (a.shape()[0], a.shape()[1]);
            let n = as_cols(b).map_or(1, |s| s.1);
            let (ad, bd) = (a.data(), b.data());
            if which == 0 {
                // dA[k,i] += Σ_j b[k,j] g[i,j]
                for k in 0..c {
                    let brow = &bd[k * n..(k + 1) * n];
                    let arow = &mut accd[k * r..(k + 1) * r];
                    for (i, da) in arow.iter_mut().enumerate() {
                        let grow = &gd[i * n..(i + 1) * n];
                        *da += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<T>();
                    }
                }
            } else {
                // dB[k,j] += Σ_i a[k,i] g[i,j]
                for k in 0..c {
                    let arow = &ad[k * r..(k + 1) * r];
                    let brow = &mut accd[k * n..(k + 1) * n];
                    for (i, &aki) in arow.iter().enumerate() {
                        let grow = &gd[i * n..(i + 1) * n];
                        for (db, &gv) in brow.iter_mut().zip(grow) {
                            *db += aki * gv;
                        }
                    }
                }
            }
        }
        Op::MatMulNt => {
            let (a, b) = (inputs[0], inputs[1]);
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[0];
            let (ad, bd) = (a.data(), b.data());
            if which == 0 {
                // dA[i,k] += Σ_j g[i,j] b[j,k]
                for i in 0..r {
                    let arow = &mut accd[i * c..(i + 1) * c];
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        let brow = &bd[j * c..(j + 1) * c];
                        for (da, &bv) in arow.iter_mut().zip(brow) {
                            *da += gij * bv;
                        }
                    }
                }
            } else {
                // dB[j,k] += Σ_i g[i,j] a[i,k]
                for i in 0..r {
                    let arow = &ad[i * c..(i + 1) * c];
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        let brow = &mut accd[j * c..(j + 1) * c];
                        for (db, &av) in brow.iter_mut().zip(arow) {
                            *db += gij * av;
                        }
                    }
                }
            }
        }
        Op::Add => add_into(accd, gd),
        Op::Sub => {
            if which == 0 {
                add_into(accd, gd)
            } else {
                for (a, &v) in accd.iter_mut().zip(gd) {
                    *a -= v;
                }
            }
        }
        Op::Mul => {
            let other = inputs[1 - which].data();
            for ((a, &v), &o) in accd.iter_mut().zip(gd).zip(other) {
                *a += v * o;
            }
        }
        Op::AddRow => {
            if which == 0 {
                add_into(accd, gd)
            } else {
                let k = accd.len();
                for (i, &v) in gd.iter().enumerate() {
                    accd[i % k] += v;
                }
            }
        }
        Op::Concat => {
            let offset: usize = inputs[..which].iter().map(|t| t.len()).sum();
            add_into(accd, &gd[offset..offset + accd.len()]);
        }
        Op::Stack => {
            let k = accd.len();
            add_into(accd, &gd[which * k..(which + 1) * k]);
        }
        Op::Sigmoid => {
            for ((a, &v), &y) in accd.iter_mut().zip(gd).zip(out.data()) {
                *a += v * y * (T::one() - y);
            }
        }
        Op::Tanh => {
            for ((a, &v), &y) in accd.iter_mut().zip(gd).zip(out.data()) {
                *a += v * (T::one() - y * y);
            }
        }
        Op::Exp => {
            for ((a, &v), &y) in accd.iter_mut().zip(gd).zip(out.data()) {
                *a += v * y;
            }
        }
        Op::Softmax => {
            let y = out.data();
            let dot: T = gd.iter().zip(y).map(|(&v, &p)| v * p).sum();
            for ((a, &v), &p) in accd.iter_mut().zip(gd).zip(y) {
                *a += p * (v - dot);
            }
        }
        Op::Sum => {
            let v = gd[0];
            accd.iter_mut().for_each(|a| *a += v);
        }
        Op::Mean => {
            let v = gd[0] / T::lit(accd.len() as f64);
            accd.iter_mut().for_each(|a| *a += v);
        }
        Op::Scale(k) => {
            for (a, &v) in accd.iter_mut().zip(gd) {
                *a += v * *k;
            }
        }
        Op::Slice { start, len } => {
            add_into(&mut accd[*start..start + len], gd);
        }
    }
}

#[inline]
fn add_into<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (a, &v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let z = Tensor::scalar(0.0);
        assert_eq!(primitive_forward(&Op::Sigmoid, &[&z]).unwrap().item(), 0.5);
        assert_eq!(primitive_forward(&Op::Tanh, &[&z]).unwrap().item(), 0.0);
    }

    #[test]
    fn identity_matmul() {
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let out = primitive_forward(&Op::MatMul, &[&Tensor::identity(2), &b]).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let at = t(&[3, 2], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let x = t(&[2], &[0.5, -1.0]);
        let tn = primitive_forward(&Op::MatMulTn, &[&a, &x]).unwrap();
        let plain = primitive_forward(&Op::MatMul, &[&at, &x]).unwrap();
        assert_eq!(tn, plain);
        let nt = primitive_forward(&Op::MatMulNt, &[&a, &a]).unwrap();
        let plain = primitive_forward(&Op::MatMul, &[&a, &at]).unwrap();
        assert_eq!(nt, plain);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2], &[0.0; 2]);
        let err = primitive_forward(&Op::MatMul, &[&a, &b]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
        assert!(primitive_forward(&Op::Add, &[&a, &b]).is_err());
        assert!(primitive_forward(&Op::Tanh, &[&a, &b]).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("tanh".parse::<Op<f64>>().unwrap(), Op::Tanh);
        assert_eq!("scale(0.5)".parse::<Op<f64>>().unwrap(), Op::Scale(0.5));
        assert_eq!(
            "slice(1, 2)".parse::<Op<f64>>().unwrap(),
            Op::Slice { start: 1, len: 2 }
        );
        assert!(matches!("relu".parse::<Op<f64>>(), Err(Error::Contract(_))));
        assert!("slice(1)".parse::<Op<f64>>().is_err());
    }

    #[test]
    fn softmax_is_normalized() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        let y = primitive_forward(&Op::Softmax, &[&x]).unwrap();
        let s: f64 = y.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(y.data()[2] > y.data()[1]);
    }
}
