//! Parameter bundles generic over their leaf type.
//!
//! The same struct holds concrete weights (`Tensor<T>`), their tape handles
//! (`Var`) during a forward pass, and gradients or optimizer moments after
//! one. Leaves are always visited in declaration order.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

pub trait ParamTree {
    type Leaf;
    type Rebind<Q>: ParamTree<Leaf = Q>;

    fn map<Q>(&self, f: &mut dyn FnMut(&Self::Leaf) -> Q) -> Self::Rebind<Q>;
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Self::Leaf));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Self::Leaf));

    fn leaves(&self) -> Vec<&Self::Leaf> {
        let mut out = Vec::new();
        self.visit(&mut |l| out.push(l));
        out
    }

    fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}

impl<P: ParamTree> ParamTree for Vec<P> {
    type Leaf = P::Leaf;
    type Rebind<Q> = Vec<P::Rebind<Q>>;

    fn map<Q>(&self, f: &mut dyn FnMut(&Self::Leaf) -> Q) -> Self::Rebind<Q> {
        self.iter().map(|p| p.map(f)).collect()
    }
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Self::Leaf)) {
        self.iter().for_each(|p| p.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Self::Leaf)) {
        self.iter_mut().for_each(|p| p.visit_mut(f));
    }
}

/// Declares a `struct Name<P>` whose fields are leaves (`P`) or nested
/// parameter trees (marked `as tree`), and implements [`ParamTree`] for it.
macro_rules! param_tree {
    (
        $(#[$meta:meta])*
        pub struct $name:ident<P> {
            $( $(#[$fmeta:meta])* pub $field:ident : $ty:ty $(as $nested:ident)? ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        pub struct $name<P> {
            $( $(#[$fmeta])* pub $field: $ty, )*
        }

        impl<P> $crate::params::ParamTree for $name<P> {
            type Leaf = P;
            type Rebind<Q> = $name<Q>;

            fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> $name<Q> {
                $name { $( $field: param_tree!(@map [$($nested)?] &self.$field, f), )* }
            }

            fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a P)) {
                $( param_tree!(@visit [$($nested)?] &self.$field, f); )*
            }

            fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
                $( param_tree!(@visit_mut [$($nested)?] &mut self.$field, f); )*
            }
        }
    };
    (@map [] $x:expr, $f:ident) => { $f($x) };
    (@map [tree] $x:expr, $f:ident) => { $crate::params::ParamTree::map($x, $f) };
    (@visit [] $x:expr, $f:ident) => { $f($x) };
    (@visit [tree] $x:expr, $f:ident) => { $crate::params::ParamTree::visit($x, $f) };
    (@visit_mut [] $x:expr, $f:ident) => { $f($x) };
    (@visit_mut [tree] $x:expr, $f:ident) => { $crate::params::ParamTree::visit_mut($x, $f) };
}

pub(crate) use param_tree;

/// Weight initializer: uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub struct Init<'r, R: Rng> {
    pub rng: &'r mut R,
}

impl<R: Rng> Init<'_, R> {
    fn uniform<T: Scalar>(&mut self, n: usize, fan_in: usize) -> Vec<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        (0..n)
            .map(|_| T::lit(self.rng.gen_range(-bound..=bound)))
            .collect()
    }

    /// `[rows, cols]` matrix with fan-in `cols`.
    pub fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Tensor<T> {
        Tensor::matrix(rows, cols, self.uniform(rows * cols, cols)).expect("positive dims")
    }

    /// `[rows, cols]` column block of a wider map with the given fan-in.
    pub fn block<T: Scalar>(&mut self, rows: usize, cols: usize, fan_in: usize) -> Tensor<T> {
        Tensor::matrix(rows, cols, self.uniform(rows * cols, fan_in)).expect("positive dims")
    }

    pub fn vector<T: Scalar>(&mut self, len: usize, fan_in: usize) -> Tensor<T> {
        Tensor::vector(self.uniform(len, fan_in))
    }
}

/// Adds `other` into `acc` leaf by leaf.
pub fn accumulate<T, A, B>(acc: &mut A, other: &B)
where
    T: Scalar,
    A: ParamTree<Leaf = Tensor<T>>,
    B: ParamTree<Leaf = Tensor<T>>,
{
    let src = other.leaves();
    let mut i = 0;
    acc.visit_mut(&mut |t| {
        t.add_assign(src[i]);
        i += 1;
    });
}

pub fn squared_norm<T: Scalar, A: ParamTree<Leaf = Tensor<T>>>(tree: &A) -> T {
    let mut s = T::zero();
    tree.visit(&mut |t| s += t.sum_sq());
    s
}

pub fn scale<T: Scalar, A: ParamTree<Leaf = Tensor<T>>>(tree: &mut A, k: T) {
    tree.visit_mut(&mut |t| t.scale_in_place(k));
}

pub fn all_finite<T: Scalar, A: ParamTree<Leaf = Tensor<T>>>(tree: &A) -> bool {
    let mut ok = true;
    tree.visit(&mut |t| ok &= t.is_finite());
    ok
}

pub fn element_count<T: Scalar, A: ParamTree<Leaf = Tensor<T>>>(tree: &A) -> usize {
    let mut n = 0;
    tree.visit(&mut |t| n += t.len());
    n
}

/// Rebuilds `tree`'s structure with leaves taken in order from `leaves`.
///
/// Panics if the counts differ.
pub fn with_leaves<A: ParamTree, Q: Clone>(tree: &A, leaves: &[Q]) -> A::Rebind<Q> {
    assert_eq!(tree.leaf_count(), leaves.len(), "leaf count mismatch");
    let mut i = 0;
    tree.map(&mut |_| {
        i += 1;
        leaves[i - 1].clone()
    })
}
