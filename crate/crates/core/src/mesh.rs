//! Uniform 1D mesh, per-node vector fields and discrete norms.

use serde::Serialize;

use crate::constitutive::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mesh {
    nodes: Vec<f64>,
}

/// Uniform mesh of `num_cells` cells on `[x_left, x_right]`.
pub fn build_mesh(num_cells: usize, x_left: f64, x_right: f64) -> Result<Mesh> {
    if num_cells < 2 {
        return Err(Error::Argument(format!("need at least 2 cells, got {num_cells}")));
    }
    if !(x_left < x_right) || !x_left.is_finite() || !x_right.is_finite() {
        return Err(Error::Argument(format!("empty domain [{x_left}, {x_right}]")));
    }
    let len = x_right - x_left;
    let mut nodes: Vec<f64> =
        (0..=num_cells).map(|k| x_left + len * k as f64 / num_cells as f64).collect();
    nodes[num_cells] = x_right;
    Ok(Mesh { nodes })
}

impl Mesh {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn x_left(&self) -> f64 {
        self.nodes[0]
    }

    pub fn x_right(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.x_right() - self.x_left()
    }

    pub fn cell_width(&self, cell: usize) -> f64 {
        self.nodes[cell + 1] - self.nodes[cell]
    }

    pub fn boundary_nodes(&self) -> [usize; 2] {
        [0, self.nodes.len() - 1]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        node == 0 || node + 1 == self.nodes.len()
    }

    /// Row sums of the P1 mass matrix.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.num_nodes()];
        for c in 0..self.num_cells() {
            let h = self.cell_width(c);
            m[c] += 0.5 * h;
            m[c + 1] += 0.5 * h;
        }
        m
    }
}

/// `n` values per mesh node, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    n: usize,
    values: Vec<f64>,
}

impl NodalField {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() % n != 0 {
            return Err(Error::SizeMismatch { expected: n, got: values.len() });
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize, num_nodes: usize) -> Self {
        Self { n, values: vec![0.0; n * num_nodes] }
    }

    pub fn from_nodes(nodes: &[Vec<f64>]) -> Result<Self> {
        let n = nodes.first().map_or(0, Vec::len);
        if let Some(bad) = nodes.iter().find(|v| v.len() != n) {
            return Err(Error::SizeMismatch { expected: n, got: bad.len() });
        }
        Self::new(n, nodes.concat())
    }

    pub fn n_species(&self) -> usize {
        self.n
    }

    pub fn num_nodes(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.values.iter().skip(i).step_by(self.n).copied().collect()
    }

    /// Per-node sums over the `n` components.
    pub fn totals(&self) -> Vec<f64> {
        self.values.chunks_exact(self.n).map(|c| c.iter().sum()).collect()
    }

    /// Checks that interior nodes are admissible and boundary nodes carry
    /// the boundary state exactly.
    pub fn check_species(&self, model: &Model, mesh: &Mesh) -> Result<()> {
        if self.n != model.n_species() {
            return Err(Error::SizeMismatch { expected: model.n_species(), got: self.n });
        }
        if self.num_nodes() != mesh.num_nodes() {
            return Err(Error::SizeMismatch { expected: mesh.num_nodes(), got: self.num_nodes() });
        }
        for k in 0..self.num_nodes() {
            let s = self.node(k);
            if mesh.is_boundary(k) {
                if s != model.s_gamma() {
                    return Err(Error::Precondition(format!(
                        "boundary node {k} holds {s:?}, expected the boundary state"
                    )));
                }
                continue;
            }
            if s.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Precondition(format!("node {k}: non-positive species {s:?}")));
            }
            let total: f64 = s.iter().sum();
            if !(total < 1.0) {
                return Err(Error::Precondition(format!("node {k}: total {total} not below 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNorms {
    /// Mass-lumped L² norm.
    pub l2: f64,
    /// H¹ seminorm with piecewise-constant gradients.
    pub h1_semi: f64,
}

pub fn field_norms(field: &NodalField, mesh: &Mesh) -> Result<FieldNorms> {
    if field.num_nodes() != mesh.num_nodes() {
        return Err(Error::SizeMismatch { expected: mesh.num_nodes(), got: field.num_nodes() });
    }
    let mass = mesh.lumped_mass();
    let n = field.n_species();
    let l2: f64 = (0..field.num_nodes())
        .map(|k| mass[k] * field.node(k).iter().map(|v| v * v).sum::<f64>())
        .sum();
    let h1: f64 = (0..mesh.num_cells())
        .map(|c| {
            let h = mesh.cell_width(c);
            (0..n).map(|i| (field.node(c + 1)[i] - field.node(c)[i]).powi(2)).sum::<f64>() / h
        })
        .sum();
    Ok(FieldNorms { l2: l2.sqrt(), h1_semi: h1.sqrt() })
}

pub fn scalar_norms(values: &[f64], mesh: &Mesh) -> Result<FieldNorms> {
    field_norms(&NodalField::new(1, values.to_vec())?, mesh)
}
