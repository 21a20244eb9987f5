use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::Scalar;
use super::AutogradError;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Computes parent gradients from the output gradient.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct Node<T: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: Cell<bool>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Dense n-dimensional array that records the operations producing it.
///
/// Cloning a `Tensor` clones the handle, not the data.
pub struct Tensor<T: Scalar = f32>(pub(crate) Rc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn make(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(requires_grad),
            parents,
            backward,
        }))
    }

    /// Constant leaf (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, AutogradError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutogradError::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self::make(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Trainable leaf.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self, AutogradError> {
        let t = Self::from_vec(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(shape.to_vec(), vec![T::zero(); shape.iter().product()], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::make(shape.to_vec(), vec![value; shape.iter().product()], false, Vec::new(), None)
    }

    pub fn scalar(value: T) -> Self {
        Self::make(vec![1], vec![value], false, Vec::new(), None)
    }

    /// Leaf with entries drawn from `N(mean, std²)`.
    pub fn randn(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(mean, std).expect("valid normal parameters");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
        Self::make(shape.to_vec(), data, false, Vec::new(), None)
    }

    /// Result of an operation; records `backward` only if some parent needs gradients.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        if parents.iter().any(Tensor::requires_grad) {
            Self::make(shape, data, true, parents, Some(Box::new(backward)))
        } else {
            Self::make(shape, data, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values, for optimizers and initialization.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.0.grad.borrow()
    }

    /// Overwrites the accumulated gradient.
    pub fn set_grad(&self, grad: Vec<T>) {
        assert_eq!(grad.len(), self.numel(), "gradient size mismatch");
        *self.0.grad.borrow_mut() = Some(grad);
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    /// Toggles gradient tracking on a leaf; used to freeze a network during another's update.
    pub fn set_requires_grad(&self, flag: bool) {
        self.0.requires_grad.set(flag);
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Constant copy detached from the graph.
    pub fn detach(&self) -> Self {
        Self::make(self.0.shape.clone(), self.to_vec(), false, Vec::new(), None)
    }

    /// Same data viewed under another shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, AutogradError> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(AutogradError::ShapeMismatch(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape()
            )));
        }
        Ok(Self::from_op(shape.to_vec(), self.to_vec(), vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reverse-mode accumulation from a single-element root into every leaf
    /// that requires gradients. Repeated calls accumulate.
    pub fn backward(&self) -> Result<(), AutogradError> {
        if self.numel() != 1 {
            return Err(AutogradError::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    if node.requires_grad() {
                        accumulate_into(&mut node.0.grad.borrow_mut(), grad);
                    }
                }
                Some(backward) => {
                    let parent_grads = backward(&grad);
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                    for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                        if let Some(pg) = pg {
                            if parent.requires_grad() {
                                match pending.get_mut(&parent.id()) {
                                    Some(acc) => add_assign(acc, &pg),
                                    None => {
                                        pending.insert(parent.id(), pg);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that require gradients, parents before children.
    fn topological_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.0.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

fn add_assign<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a = *a + *b;
    }
}

fn accumulate_into<T: Scalar>(slot: &mut Option<Vec<T>>, grad: Vec<T>) {
    match slot {
        Some(acc) => add_assign(acc, &grad),
        None => *slot = Some(grad),
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
}

fn broadcast_kind<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Broadcast, AutogradError> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if b.numel() == 1 {
        Ok(Broadcast::RightScalar)
    } else if a.numel() == 1 {
        Ok(Broadcast::LeftScalar)
    } else {
        Err(AutogradError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

fn reduce_for<T: Scalar>(grad: Vec<T>, scalar_side: bool) -> Vec<T> {
    if scalar_side {
        vec![grad.iter().copied().sum()]
    } else {
        grad
    }
}

impl<T: Scalar> Tensor<T> {
    fn binary(
        &self,
        other: &Tensor<T>,
        f: impl Fn(T, T) -> T,
        // (out_grad, a, b) -> (da, db), elementwise
        df: impl Fn(T, T, T) -> (T, T) + 'static,
    ) -> Result<Tensor<T>, AutogradError> {
        let kind = broadcast_kind(self, other)?;
        let a = self.to_vec();
        let b = other.to_vec();
        let shape = match kind {
            Broadcast::LeftScalar => other.shape().to_vec(),
            _ => self.shape().to_vec(),
        };
        let n: usize = shape.iter().product();
        let at = |i: usize| if matches!(kind, Broadcast::LeftScalar) { a[0] } else { a[i] };
        let bt = |i: usize| if matches!(kind, Broadcast::RightScalar) { b[0] } else { b[i] };
        let out: Vec<T> = (0..n).map(|i| f(at(i), bt(i))).collect();
        let need = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(shape, out, vec![self.clone(), other.clone()], move |g| {
            let mut da = Vec::with_capacity(if need.0 { g.len() } else { 0 });
            let mut db = Vec::with_capacity(if need.1 { g.len() } else { 0 });
            for (i, &gi) in g.iter().enumerate() {
                let ai = if matches!(kind, Broadcast::LeftScalar) { a[0] } else { a[i] };
                let bi = if matches!(kind, Broadcast::RightScalar) { b[0] } else { b[i] };
                let (x, y) = df(gi, ai, bi);
                if need.0 {
                    da.push(x);
                }
                if need.1 {
                    db.push(y);
                }
            }
            vec![
                need.0.then(|| reduce_for(da, matches!(kind, Broadcast::LeftScalar))),
                need.1.then(|| reduce_for(db, matches!(kind, Broadcast::RightScalar))),
            ]
        }))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
        self.binary(other, |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
        self.binary(other, |a, b| a - b, |g, _, _| (g, -g))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
        self.binary(other, |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Tensor<T> {
        let x = self.to_vec();
        let y: Vec<T> = x.iter().map(|&v| f(v)).collect();
        let y_saved = y.clone();
        Tensor::from_op(self.shape().to_vec(), y, vec![self.clone()], move |g| {
            // df(x, y) is the local derivative
            vec![Some(
                g.iter()
                    .zip(x.iter().zip(&y_saved))
                    .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                    .collect(),
            )]
        })
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(move |v| v + c, |_, _| T::one())
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        self.unary(move |v| v * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(-T::one())
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        self.unary(
            move |v| if v > T::zero() { v } else { v * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            |v| v.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(|v| v * v, |x, _| x + x)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|v| v.exp(), |_, y| y)
    }

    /// `log(1 + exp(v))`, computed stably.
    pub fn softplus(&self) -> Tensor<T> {
        self.unary(
            |v| v.max(T::zero()) + (-v.abs()).exp().ln_1p(),
            |x, _| T::one() / (T::one() + (-x).exp()),
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / T::from_usize(n.max(1)).unwrap();
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![1], vec![s * inv], vec![self.clone()], move |g| {
            vec![Some(vec![g[0] * inv; n])]
        })
    }

    /// Concatenation of two `N×C×H×W` tensors along the channel axis.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(AutogradError::ShapeMismatch(format!(
                "cannot concatenate {sa:?} and {sb:?} along channels"
            )));
        }
        let (n, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let a = self.data();
        let b = other.data();
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(&a[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&b[i * cb * hw..(i + 1) * cb * hw]);
        }
        drop((a, b));
        Ok(Tensor::from_op(
            vec![n, ca + cb, sa[2], sa[3]],
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                let mut ga = Vec::with_capacity(n * ca * hw);
                let mut gb = Vec::with_capacity(n * cb * hw);
                for i in 0..n {
                    let base = i * (ca + cb) * hw;
                    ga.extend_from_slice(&g[base..base + ca * hw]);
                    gb.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
                }
                vec![Some(ga), Some(gb)]
            },
        ))
    }
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
    same_shape(a, b)?;
    Ok(a.sub(b)?.abs().mean())
}

/// Mean squared difference.
pub fn mse_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
    same_shape(a, b)?;
    Ok(a.sub(b)?.square().mean())
}

/// Mean squared difference against a constant target.
pub fn mse_to_const<T: Scalar>(a: &Tensor<T>, target: T) -> Tensor<T> {
    a.add_scalar(-target).square().mean()
}

/// Mean binary cross-entropy of logits against a constant 0/1 target.
pub fn bce_with_logits_to_const<T: Scalar>(logits: &Tensor<T>, target: T) -> Tensor<T> {
    // target·softplus(−z) + (1 − target)·softplus(z)
    let pos = logits.neg().softplus().mul_scalar(target);
    let neg = logits.softplus().mul_scalar(T::one() - target);
    pos.add(&neg).expect("same shape").mean()
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(), AutogradError> {
    if a.shape() != b.shape() {
        return Err(AutogradError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Stacks `C×H×W` images into an `N×C×H×W` constant tensor.
pub fn stack_images<T: Scalar>(images: &[&[T]], c: usize, h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        assert_eq!(img.len(), c * h * w, "image size mismatch");
        data.extend_from_slice(img);
    }
    Tensor::from_vec(&[images.len(), c, h, w], data).expect("consistent shape")
}
