//! Builds exact ReLU networks for piecewise-linear margins expressed as
//! nested min/max trees over affine functions of the input.
//!
//! Each reduction level pairs children using
//! `min(a, b) = a − relu(a − b)` and `max(a, b) = a + relu(b − a)`, with the
//! linear term carried through the ReLU layer as `relu(a) − relu(−a)`. With
//! unit weights and dyadic offsets the compiled network reproduces
//! [`Expr::eval`] bit-for-bit on dyadic inputs, which keeps margins on grid-aligned
//! boundaries exactly zero.

use super::network::{Activation, Layer, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Affine { coeffs: Vec<f64>, bias: f64 },
    Min(Vec<Expr>),
    Max(Vec<Expr>),
}

impl Expr {
    /// `x[axis] − c`.
    pub fn coord_minus(dim: usize, axis: usize, c: f64) -> Expr {
        let mut coeffs = vec![0.0; dim];
        coeffs[axis] = 1.0;
        Expr::Affine { coeffs, bias: -c }
    }

    /// `c − x[axis]`.
    pub fn const_minus_coord(dim: usize, axis: usize, c: f64) -> Expr {
        let mut coeffs = vec![0.0; dim];
        coeffs[axis] = -1.0;
        Expr::Affine { coeffs, bias: c }
    }

    /// `min_i min(x_i − lower_i, upper_i − x_i)`: non-negative exactly on the
    /// closed box.
    pub fn inside_box(lower: &[f64], upper: &[f64]) -> Expr {
        let n = lower.len();
        Expr::Min(
            (0..n)
                .flat_map(|i| {
                    [
                        Expr::coord_minus(n, i, lower[i]),
                        Expr::const_minus_coord(n, i, upper[i]),
                    ]
                })
                .collect(),
        )
    }

    /// `max_i max(lower_i − x_i, x_i − upper_i)`: non-negative exactly off the
    /// open box.
    pub fn outside_box(lower: &[f64], upper: &[f64]) -> Expr {
        let n = lower.len();
        Expr::Max(
            (0..n)
                .flat_map(|i| {
                    [
                        Expr::const_minus_coord(n, i, lower[i]),
                        Expr::coord_minus(n, i, upper[i]),
                    ]
                })
                .collect(),
        )
    }

    /// Direct evaluation, independent of the compiled network.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Affine { coeffs, bias } => coeffs.iter().zip(x).fold(*bias, |acc, (a, b)| acc + a * b),
            Expr::Min(children) => children.iter().map(|c| c.eval(x)).fold(f64::INFINITY, f64::min),
            Expr::Max(children) => children.iter().map(|c| c.eval(x)).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Compiles into a single-output network whose output equals `eval`.
    pub fn compile(&self, input_dim: usize) -> Result<Network> {
        let mut node = Node::from_expr(self, input_dim)?;
        let mut layers = Vec::new();
        let mut width = input_dim;
        loop {
            if let Node::Leaf(form) = node {
                layers.push(Layer::new(vec![form.coeffs], vec![form.bias], Activation::Linear)?);
                return Network::new(input_dim, layers);
            }
            let mut units = Vec::new();
            let next = step(node, &mut units);
            let (weights, bias): (Vec<_>, Vec<_>) = units
                .iter()
                .map(|f: &Form| {
                    debug_assert_eq!(f.coeffs.len(), width);
                    (f.coeffs.clone(), f.bias)
                })
                .unzip();
            width = units.len();
            layers.push(Layer::new(weights, bias, Activation::Relu)?);
            node = next.densify(width);
        }
    }
}

#[derive(Debug, Clone)]
struct Form {
    coeffs: Vec<f64>,
    bias: f64,
}

impl Form {
    fn scaled_sum(&self, other: &Form, s: f64) -> Form {
        Form {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + s * b).collect(),
            bias: self.bias + s * other.bias,
        }
    }

    fn negated(&self) -> Form {
        Form {
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
            bias: -self.bias,
        }
    }
}

#[derive(Debug)]
enum Node {
    Leaf(Form),
    Min(Vec<Node>),
    Max(Vec<Node>),
}

/// Leaves after a step are sparse combinations of the new layer's units.
enum Pending {
    Leaf(Vec<(usize, f64)>),
    Min(Vec<Pending>),
    Max(Vec<Pending>),
}

impl Node {
    fn from_expr(e: &Expr, dim: usize) -> Result<Node> {
        Ok(match e {
            Expr::Affine { coeffs, bias } => {
                if coeffs.len() != dim {
                    return Err(Error::Dim {
                        expected: dim,
                        got: coeffs.len(),
                    });
                }
                Node::Leaf(Form {
                    coeffs: coeffs.clone(),
                    bias: *bias,
                })
            }
            Expr::Min(c) | Expr::Max(c) if c.is_empty() => {
                return Err(Error::param("expr", "min/max over no children"));
            }
            Expr::Min(c) => Node::Min(c.iter().map(|e| Node::from_expr(e, dim)).collect::<Result<_>>()?),
            Expr::Max(c) => Node::Max(c.iter().map(|e| Node::from_expr(e, dim)).collect::<Result<_>>()?),
        })
    }
}

impl Pending {
    fn densify(self, width: usize) -> Node {
        match self {
            Pending::Leaf(terms) => {
                let mut coeffs = vec![0.0; width];
                for (i, c) in terms {
                    coeffs[i] += c;
                }
                Node::Leaf(Form { coeffs, bias: 0.0 })
            }
            Pending::Min(c) => collapse(c.into_iter().map(|p| p.densify(width)).collect(), true),
            Pending::Max(c) => collapse(c.into_iter().map(|p| p.densify(width)).collect(), false),
        }
    }
}

fn collapse(mut children: Vec<Node>, is_min: bool) -> Node {
    if children.len() == 1 {
        children.pop().unwrap()
    } else if is_min {
        Node::Min(children)
    } else {
        Node::Max(children)
    }
}

fn push(units: &mut Vec<Form>, f: Form) -> usize {
    units.push(f);
    units.len() - 1
}

fn pass_through(f: &Form, units: &mut Vec<Form>) -> Pending {
    let p = push(units, f.clone());
    let n = push(units, f.negated());
    Pending::Leaf(vec![(p, 1.0), (n, -1.0)])
}

fn step(node: Node, units: &mut Vec<Form>) -> Pending {
    match node {
        Node::Leaf(f) => pass_through(&f, units),
        Node::Min(children) => reduce(children, true, units),
        Node::Max(children) => reduce(children, false, units),
    }
}

fn reduce(children: Vec<Node>, is_min: bool, units: &mut Vec<Form>) -> Pending {
    let all_leaves = children.iter().all(|c| matches!(c, Node::Leaf(_)));
    let out = if all_leaves {
        let forms: Vec<Form> = children
            .into_iter()
            .map(|c| match c {
                Node::Leaf(f) => f,
                _ => unreachable!(),
            })
            .collect();
        let mut out = Vec::with_capacity(forms.len().div_ceil(2));
        for pair in forms.chunks(2) {
            match pair {
                [a, b] => {
                    let p = push(units, a.clone());
                    let n = push(units, a.negated());
                    // min: a − relu(a − b); max: a + relu(b − a)
                    let (diff, sign) = if is_min {
                        (a.scaled_sum(b, -1.0), -1.0)
                    } else {
                        (b.scaled_sum(a, -1.0), 1.0)
                    };
                    let d = push(units, diff);
                    out.push(Pending::Leaf(vec![(p, 1.0), (n, -1.0), (d, sign)]));
                }
                [a] => out.push(pass_through(a, units)),
                _ => unreachable!(),
            }
        }
        out
    } else {
        children.into_iter().map(|c| step(c, units)).collect()
    };
    if is_min {
        Pending::Min(out)
    } else {
        Pending::Max(out)
    }
}
