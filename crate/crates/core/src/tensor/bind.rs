//! Strategies for bringing parameter tensors into a graph.
//!
//! Model parameters live outside any graph as plain [`Tensor`]s. To run a
//! forward pass they are "bound": each tensor becomes a [`Var`]. The two
//! strategies are [`LeafBinder`] (one leaf per parameter — training and
//! inference) and [`FlatBinder`] (consecutive slices of one flat vector —
//! lets the finite-difference oracle perturb every parameter of a whole
//! model through a single input tensor).
//!
//! Both rely on parameters being visited in one canonical order; the order
//! is defined by the `for_each_named` traversals of the parameter structs.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Turns parameter tensors into graph variables, one call per parameter, in
/// canonical order.
pub trait Binder {
    fn bind(&mut self, g: &mut Graph, name: &str, t: &Tensor) -> Result<Var>;
}

/// Binds each parameter as its own leaf and records the created variables
/// in order, so callers can read gradients back after `backward`.
#[derive(Debug, Default)]
pub struct LeafBinder {
    pub requires_grad: bool,
    pub vars: Vec<Var>,
}

impl LeafBinder {
    pub fn new(requires_grad: bool) -> Self {
        LeafBinder {
            requires_grad,
            vars: Vec::new(),
        }
    }
}

impl Binder for LeafBinder {
    fn bind(&mut self, g: &mut Graph, _name: &str, t: &Tensor) -> Result<Var> {
        let mut tensor = t.clone();
        tensor.set_requires_grad(self.requires_grad);
        let v = g.leaf(tensor);
        self.vars.push(v);
        Ok(v)
    }
}

/// Carves each parameter out of one flat `[P]` variable by slice + reshape.
/// Values come from the flat vector, not from the passed tensors (only
/// their shapes are used), so perturbing the flat leaf perturbs the bound
/// parameters.
#[derive(Debug)]
pub struct FlatBinder {
    flat: Var,
    offset: usize,
}

impl FlatBinder {
    pub fn new(flat: Var) -> Self {
        FlatBinder { flat, offset: 0 }
    }

    /// Elements consumed so far; equals the total parameter count after a
    /// full bind.
    pub fn consumed(&self) -> usize {
        self.offset
    }
}

impl Binder for FlatBinder {
    fn bind(&mut self, g: &mut Graph, name: &str, t: &Tensor) -> Result<Var> {
        let n = t.numel();
        let avail = g.tensor(self.flat).numel();
        if self.offset + n > avail {
            return Err(Error::InvalidShape {
                op: "flat_bind",
                shape: t.shape().to_vec(),
                reason: format!(
                    "parameter `{name}` needs {n} values at offset {}, flat vector has {avail}",
                    self.offset
                ),
            });
        }
        let piece = g.slice(self.flat, 0, self.offset, n)?;
        self.offset += n;
        g.reshape(piece, t.shape().to_vec())
    }
}

/// Packs tensors visited in canonical order into one flat vector, the
/// inverse layout of [`FlatBinder`].
pub fn flatten_params<'a>(tensors: impl Iterator<Item = &'a Tensor>) -> Tensor {
    let mut data = Vec::new();
    for t in tensors {
        data.extend_from_slice(t.data());
    }
    let n = data.len();
    Tensor::from_vec(vec![n], data).expect("flat shape always matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_binder_records_vars_in_order() {
        let mut g = Graph::new();
        let mut b = LeafBinder::new(true);
        let t1 = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let t2 = Tensor::from_vec(vec![1], vec![3.0]).unwrap();
        let v1 = b.bind(&mut g, "a", &t1).unwrap();
        let v2 = b.bind(&mut g, "b", &t2).unwrap();
        assert_eq!(b.vars, vec![v1, v2]);
        assert!(g.tensor(v1).requires_grad());
        assert_eq!(g.value(v2), &[3.0]);
    }

    #[test]
    fn flat_binder_slices_sequentially_and_checks_bounds() {
        let mut g = Graph::new();
        let flat = g.leaf(Tensor::from_vec(vec![5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let mut b = FlatBinder::new(flat);
        let shape_a = Tensor::zeros(vec![2, 2]);
        let shape_b = Tensor::zeros(vec![1]);
        let a = b.bind(&mut g, "a", &shape_a).unwrap();
        assert_eq!(g.shape(a), &[2, 2]);
        assert_eq!(g.value(a), &[1.0, 2.0, 3.0, 4.0]);
        let bb = b.bind(&mut g, "b", &shape_b).unwrap();
        assert_eq!(g.value(bb), &[5.0]);
        assert_eq!(b.consumed(), 5);
        assert!(b.bind(&mut g, "c", &shape_b).is_err());
    }

    #[test]
    fn flatten_is_the_inverse_layout() {
        let t1 = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let t2 = Tensor::from_vec(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let flat = flatten_params([&t1, &t2].into_iter());
        assert_eq!(flat.shape(), &[4]);
        assert_eq!(flat.data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
