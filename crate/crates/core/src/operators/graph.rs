//! Quadrilateral grid graph with free and bound nodes.
//!
//! Nodes are indexed row-major over a `rows × cols` grid. Bound nodes carry
//! the value zero and are not unknowns. Edges run left→right and
//! top→bottom; an edge is *free* when at least one endpoint is free, and only
//! free edges appear in `L`. The increment on edge `tail → head` is
//! `x(head) − x(tail)`.
//!
//! `M` has one row per grid cell (loop), traversed clockwise with rows
//! growing downward: top edge `+`, right edge `+`, bottom edge `−`, left
//! edge `−`. Edges between two bound nodes contribute nothing.

use super::sparse::CsrMatrix;
use super::{check_len, norm};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeDirection {
    Horizontal,
    Vertical,
}

/// A free edge, given by its grid endpoints `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridEdge {
    pub tail: (usize, usize),
    pub head: (usize, usize),
    pub direction: EdgeDirection,
}

#[derive(Debug, Clone)]
pub struct IncrementGraph {
    rows: usize,
    cols: usize,
    bound: Vec<bool>,
    node_index: Vec<Option<usize>>,
    nodes: Vec<(usize, usize)>,
    edges: Vec<GridEdge>,
    h_edge: Vec<Option<usize>>,
    v_edge: Vec<Option<usize>>,
    l: CsrMatrix,
    m: CsrMatrix,
}

impl IncrementGraph {
    /// Grid whose outer ring is bound and whose interior is free.
    pub fn with_outer_ring(rows: usize, cols: usize) -> Result<Self> {
        let bound = (0..rows * cols)
            .map(|k| {
                let (r, c) = (k / cols, k % cols);
                r == 0 || c == 0 || r + 1 == rows || c + 1 == cols
            })
            .collect::<Vec<_>>();
        Self::build(rows, cols, &bound)
    }

    /// Free `n × n` pixel image surrounded by a ring of bound nodes.
    pub fn for_image(n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::with_outer_ring(n_rows + 2, n_cols + 2)
    }

    /// Chain of `n` free nodes preceded by a single bound node: `L` is the 1D
    /// first difference with `x_0 = 0`.
    pub fn chain(n: usize) -> Result<Self> {
        let mut bound = vec![false; n + 1];
        bound[0] = true;
        Self::build(1, n + 1, &bound)
    }

    /// General constructor; `bound[k]` marks grid node `k` (row-major) as bound.
    pub fn build(rows: usize, cols: usize, bound: &[bool]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DegenerateGrid);
        }
        check_len("boundary mask", bound.len(), rows * cols)?;

        let mut node_index = vec![None; rows * cols];
        let mut nodes = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if !bound[r * cols + c] {
                    node_index[r * cols + c] = Some(nodes.len());
                    nodes.push((r, c));
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::DegenerateGrid);
        }

        let mut edges = Vec::new();
        let mut h_edge = vec![None; rows * cols];
        let mut v_edge = vec![None; rows * cols];
        let free = |r: usize, c: usize| !bound[r * cols + c];
        // Interleave horizontal and vertical edges row by row so edge indices
        // stay spatially local.
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols && (free(r, c) || free(r, c + 1)) {
                    h_edge[r * cols + c] = Some(edges.len());
                    edges.push(GridEdge {
                        tail: (r, c),
                        head: (r, c + 1),
                        direction: EdgeDirection::Horizontal,
                    });
                }
                if r + 1 < rows && (free(r, c) || free(r + 1, c)) {
                    v_edge[r * cols + c] = Some(edges.len());
                    edges.push(GridEdge {
                        tail: (r, c),
                        head: (r + 1, c),
                        direction: EdgeDirection::Vertical,
                    });
                }
            }
        }

        let l_rows = edges
            .iter()
            .map(|e| {
                let mut row = Vec::with_capacity(2);
                if let Some(t) = node_index[e.tail.0 * cols + e.tail.1] {
                    row.push((t, -1.0));
                }
                if let Some(h) = node_index[e.head.0 * cols + e.head.1] {
                    row.push((h, 1.0));
                }
                row
            })
            .collect();
        let l = CsrMatrix::from_rows(nodes.len(), l_rows);

        let mut m_rows = Vec::with_capacity(rows.saturating_sub(1) * cols.saturating_sub(1));
        for r in 0..rows.saturating_sub(1) {
            for c in 0..cols.saturating_sub(1) {
                let mut row = Vec::with_capacity(4);
                let sides = [
                    (h_edge[r * cols + c], 1.0),
                    (v_edge[r * cols + c + 1], 1.0),
                    (h_edge[(r + 1) * cols + c], -1.0),
                    (v_edge[r * cols + c], -1.0),
                ];
                for (e, s) in sides {
                    if let Some(e) = e {
                        row.push((e, s));
                    }
                }
                m_rows.push(row);
            }
        }
        let m = CsrMatrix::from_rows(edges.len(), m_rows);

        Ok(IncrementGraph {
            rows,
            cols,
            bound: bound.to_vec(),
            node_index,
            nodes,
            edges,
            h_edge,
            v_edge,
            l,
            m,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn n_v(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_e(&self) -> usize {
        self.edges.len()
    }

    pub fn n_t(&self) -> usize {
        self.m.nrows()
    }

    /// Difference matrix, `n_e × n_v`.
    pub fn l(&self) -> &CsrMatrix {
        &self.l
    }

    /// Loop circulation matrix, `n_t × n_e`.
    pub fn m(&self) -> &CsrMatrix {
        &self.m
    }

    pub fn edges(&self) -> &[GridEdge] {
        &self.edges
    }

    pub fn nodes(&self) -> &[(usize, usize)] {
        &self.nodes
    }

    pub fn is_bound(&self, r: usize, c: usize) -> bool {
        self.bound[r * self.cols + c]
    }

    pub fn node_index(&self, r: usize, c: usize) -> Option<usize> {
        self.node_index[r * self.cols + c]
    }

    /// Index of the horizontal edge leaving `(r, c)` to the right, if free.
    pub fn horizontal_edge(&self, r: usize, c: usize) -> Option<usize> {
        self.h_edge[r * self.cols + c]
    }

    /// Index of the vertical edge leaving `(r, c)` downward, if free.
    pub fn vertical_edge(&self, r: usize, c: usize) -> Option<usize> {
        self.v_edge[r * self.cols + c]
    }

    /// Edge increments `y = L x`.
    pub fn increments(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("nodal values", x.len(), self.n_v())?;
        let mut y = vec![0.0; self.n_e()];
        self.l.matvec(x, &mut y);
        Ok(y)
    }

    /// Half bandwidth of `LᵀL` under the natural node ordering.
    pub fn normal_bandwidth(&self) -> usize {
        (0..self.l.nrows())
            .map(|e| {
                let cols: Vec<usize> = self.l.row(e).map(|(c, _)| c).collect();
                match cols.as_slice() {
                    [a, b] => a.abs_diff(*b),
                    _ => 0,
                }
            })
            .max()
            .unwrap_or(0)
    }
}

/// Relative circulation `‖M y‖ / max(‖y‖, ε)`.
pub fn circulation_residual(g: &IncrementGraph, y: &[f64]) -> Result<f64> {
    check_len("edge increments", y.len(), g.n_e())?;
    let mut my = vec![0.0; g.n_t()];
    g.m.matvec(y, &mut my);
    Ok(norm(&my) / norm(y).max(f64::EPSILON))
}
