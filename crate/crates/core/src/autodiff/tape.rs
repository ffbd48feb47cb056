use super::tensor::Tensor;

pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    // Returns one gradient per parent, in order.
    backward: Option<BackwardFn>,
}

/// Append-only record of executed operations.
///
/// Nodes are stored in execution order, so a reverse scan visits every node
/// after all of its consumers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            parents: Vec::new(),
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn tracks_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Records an op result. `backward` is only kept when some parent tracks gradients.
    pub(crate) fn push(&mut self, mut value: Tensor, parents: &[Var], backward: impl FnOnce() -> BackwardFn) -> Var {
        let tracks = parents.iter().any(|&p| self.tracks_grad(p));
        value.set_requires_grad(tracks);
        self.nodes.push(Node {
            value,
            parents: if tracks { parents.to_vec() } else { Vec::new() },
            backward: tracks.then(backward),
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep seeded with ones at `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0; self.nodes[output.0].value.len()]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    if !self.tracks_grad(*p) {
                        continue;
                    }
                    match &mut grads[p.0] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of `len` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap().with_grad());
        let y = tape.add(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let s = tape.sum(z);
        let g = tape.backward(s);
        assert_eq!(g.get(x).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([1], vec![1.0]).unwrap().with_grad());
        let w = tape.leaf(Tensor::new([1], vec![2.0]).unwrap().with_grad());
        let y = tape.mul(x, w).unwrap();
        let g = tape.backward(y);
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap(), &[1.0]);
    }
}
