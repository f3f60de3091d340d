//! Reverse-mode automatic differentiation over [`Array`] values.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Nodes whose
//! inputs do not require gradients keep no backward closure, so inference and
//! frozen-network passes cost nothing extra.

use std::cell::RefCell;
use std::rc::Rc;

use super::{Array, Real};

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Ctx<'_, T>) -> Vec<Option<Array<T>>>>;

pub(crate) struct Ctx<'a, T: Real> {
    pub inputs: &'a [Rc<Array<T>>],
    pub output: &'a Array<T>,
    pub grad: &'a Array<T>,
    pub needs: &'a [bool],
}

impl<T: Real> Ctx<'_, T> {
    pub fn input(&self, i: usize) -> &Array<T> {
        &self.inputs[i]
    }
}

struct Node<T: Real> {
    value: Rc<Array<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Array<T>, requires_grad: bool) -> Var<'_, T> {
        let id = self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn var(&self, value: Array<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub(crate) fn op<F>(&self, parents: &[usize], value: Array<T>, backward: F) -> Var<'_, T>
    where
        F: Fn(&Ctx<'_, T>) -> Vec<Option<Array<T>>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        let id = self.push(Node {
            value: Rc::new(value),
            parents: parents.to_vec(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Array<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a scalar `root` (seed 1).
    pub fn backward(&self, root: Var<'_, T>) -> Gradients<T> {
        let seed = Array::full(root.value().shape(), T::one());
        self.backward_with(root, seed)
    }

    /// Back-propagates from `root` with an explicit output gradient.
    pub fn backward_with(&self, root: Var<'_, T>, seed: Array<T>) -> Gradients<T> {
        assert!(std::ptr::eq(root.tape, self), "variable from another tape");
        assert_eq!(seed.shape(), root.value().shape(), "seed shape");
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array<T>>> = (0..=root.id).map(|_| None).collect();
        grads[root.id] = Some(seed);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Array<T>>> =
                node.parents.iter().map(|&p| Rc::clone(&nodes[p].value)).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let ctx = Ctx {
                inputs: &inputs,
                output: &node.value,
                grad: &grad,
                needs: &needs,
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(grad);
        }
        Gradients { grads }
    }
}

/// Gradients produced by one backward pass, indexed by variable.
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Array<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape when it received none.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Array<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(v.value().shape()))
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Array<T>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> Rc<Array<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> T {
        self.value().item()
    }
}
