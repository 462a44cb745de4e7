//! Lattice grid in logarithmic coordinates, cut to a polygon adapted to the
//! fan of the moment polytope.
//!
//! Every facet normal `ν` of the polytope bounds the grid by `⟨ν, k⟩ < c_ν`
//! with `c_ν = round(K |ν|)`, so the domain is a polygon circumscribing the
//! disk of radius `L`. Normals of adjacent facets meeting at an obtuse angle
//! contribute an extra truncating side `ν + ν'`. Nodes just outside the
//! domain ("ghosts") copy the value of the first interior node found by
//! walking inward along the most violated normal.
//!
//! Each interior node owns a dual cell whose boundary passes through
//! half-integer points. Discrete gradients live on those points: undivided
//! differences across cell sides, averaged differences elsewhere.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{mat_apply, Lattice, ReducedModel};

/// Cell corner offsets in half units, counter-clockwise from the lower left.
pub const CELL_2D: [Lattice; 8] = [
    [-1, -1],
    [0, -1],
    [1, -1],
    [1, 0],
    [1, 1],
    [0, 1],
    [-1, 1],
    [-1, 0],
];

/// Node across cell side `j` (from point `j` to point `j + 1`).
pub const ACROSS_2D: [Lattice; 8] = [
    [0, -1],
    [0, -1],
    [1, 0],
    [1, 0],
    [0, 1],
    [0, 1],
    [-1, 0],
    [-1, 0],
];

pub const CELL_1D: [Lattice; 2] = [[-1, 0], [1, 0]];

#[derive(Debug, Clone)]
pub struct Grid {
    pub n: usize,
    pub half_width: f64,
    pub nodes_per_axis: usize,
    /// Grid units per half width, `(N - 1) / 2`.
    pub k: i64,
    pub spacing: f64,
    /// Domain sides as (normal, offset in grid units).
    pub sides: Vec<(Lattice, i64)>,
    /// Interior nodes in integer coordinates, ordered row by row.
    pub nodes: Vec<Lattice>,
    /// Node positions `h·k`.
    pub x: Vec<[f64; 2]>,
    /// Interior plus the ring of ghosts around it.
    pub ext: Vec<Lattice>,
    /// Interior nodes, with weights, whose values each extended node takes.
    pub ext_src: Vec<Vec<(usize, f64)>>,
    /// Points per cell: 2 in one dimension, 8 in two.
    pub m: usize,
    /// Half-integer gradient points, in half units.
    pub points: Vec<Lattice>,
    /// For node `i`, `cell[i * m + j]` is its `j`-th boundary point.
    pub cell: Vec<usize>,
    /// Gradient stencils per point (CSR over interior nodes, both components).
    pub pg_ptr: Vec<usize>,
    pub pg_idx: Vec<usize>,
    pub pg_val: Vec<[f64; 2]>,
    /// Slack `min_ν (c_ν − ⟨ν, k⟩)` of each node, 1 on the outermost ring.
    pub depth: Vec<i64>,
    index: BTreeMap<Lattice, usize>,
    ext_index: BTreeMap<Lattice, usize>,
}

impl Grid {
    /// Domain for `model` with half width `half_width` and `N` nodes per
    /// axis (`N` odd, at least 9).
    pub fn new(model: &ReducedModel, half_width: f64, nodes_per_axis: usize) -> Result<Grid> {
        if nodes_per_axis < 9 || nodes_per_axis % 2 == 0 {
            return Err(Error::Config(format!(
                "nodes per axis must be odd and at least 9, got {nodes_per_axis}"
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Config(format!("half width must be positive, got {half_width}")));
        }
        let n = model.n;
        let k = ((nodes_per_axis - 1) / 2) as i64;
        let h = half_width / k as f64;
        let mut normals: Vec<Lattice> = model.facets.iter().map(|f| f.normal).collect();
        if n == 2 {
            let f = normals.len();
            for i in 0..f {
                let a = normals[i];
                let b = normals[(i + 1) % f];
                if a[0] * b[0] + a[1] * b[1] < 0 {
                    normals.push([a[0] + b[0], a[1] + b[1]]);
                }
            }
        }
        let sides: Vec<(Lattice, i64)> = normals
            .iter()
            .map(|&v| (v, math::round(k as f64 * math::hypot(v[0] as f64, v[1] as f64)) as i64))
            .collect();
        let slack = |p: Lattice| -> i64 {
            sides
                .iter()
                .map(|&(v, c)| c - (v[0] * p[0] + v[1] * p[1]))
                .min()
                .unwrap_or(0)
        };
        let r = 3 * k + 3;
        let mut nodes = Vec::new();
        if n == 1 {
            for i in -r..=r {
                if slack([i, 0]) > 0 {
                    nodes.push([i, 0]);
                }
            }
        } else {
            for j in -r..=r {
                for i in -r..=r {
                    if slack([i, j]) > 0 {
                        nodes.push([i, j]);
                    }
                }
            }
        }
        let index: BTreeMap<Lattice, usize> =
            nodes.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let depth: Vec<i64> = nodes.iter().map(|&p| slack(p)).collect();

        // A ghost copies the node reached by stepping back across the most
        // violated side; ties are averaged so the rule is equivariant.
        fn source(
            q: Lattice,
            sides: &[(Lattice, i64)],
            index: &BTreeMap<Lattice, usize>,
            budget: i64,
        ) -> Option<Vec<(usize, f64)>> {
            if let Some(&i) = index.get(&q) {
                return Some(vec![(i, 1.0)]);
            }
            if budget == 0 {
                return None;
            }
            let worst = sides.iter().map(|&(v, c)| v[0] * q[0] + v[1] * q[1] - c).max()?;
            let tied: Vec<Lattice> = sides
                .iter()
                .filter(|&&(v, c)| v[0] * q[0] + v[1] * q[1] - c == worst)
                .map(|&(v, _)| v)
                .collect();
            let share = 1.0 / tied.len() as f64;
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for v in tied {
                for (i, w) in source([q[0] - v[0], q[1] - v[1]], sides, index, budget - 1)? {
                    *acc.entry(i).or_insert(0.0) += share * w;
                }
            }
            Some(acc.into_iter().collect())
        }

        let ring: &[i64] = &[-1, 0, 1];
        let mut ext = nodes.clone();
        let mut ext_index = index.clone();
        for &p in &nodes {
            for &dj in if n == 1 { &[0][..] } else { ring } {
                for &di in ring {
                    let q = [p[0] + di, p[1] + dj];
                    if !ext_index.contains_key(&q) {
                        ext_index.insert(q, ext.len());
                        ext.push(q);
                    }
                }
            }
        }
        let ext_src = ext
            .iter()
            .map(|&p| {
                source(p, &sides, &index, 4 * r)
                    .ok_or_else(|| Error::Config(format!("ghost node {p:?} has no interior source")))
            })
            .collect::<Result<Vec<_>>>()?;

        let offsets: &[Lattice] = if n == 1 { &CELL_1D } else { &CELL_2D };
        let m = offsets.len();
        let mut points = Vec::new();
        let mut point_index: BTreeMap<Lattice, usize> = BTreeMap::new();
        let mut cell = Vec::with_capacity(nodes.len() * m);
        for &p in &nodes {
            for o in offsets {
                let q = [2 * p[0] + o[0], 2 * p[1] + o[1]];
                let id = *point_index.entry(q).or_insert_with(|| {
                    points.push(q);
                    points.len() - 1
                });
                cell.push(id);
            }
        }

        let mut pg_ptr = vec![0];
        let mut pg_idx = Vec::new();
        let mut pg_val = Vec::new();
        for &q in &points {
            let mut row: BTreeMap<usize, [f64; 2]> = BTreeMap::new();
            let mut add = |node: Lattice, c: [f64; 2]| -> Result<()> {
                let e = *ext_index
                    .get(&node)
                    .ok_or_else(|| Error::Config(format!("stencil node {node:?} missing")))?;
                for &(src, w) in &ext_src[e] {
                    let s = row.entry(src).or_insert([0.0; 2]);
                    s[0] += w * c[0] / h;
                    s[1] += w * c[1] / h;
                }
                Ok(())
            };
            let (a, b) = (q[0], q[1]);
            let odd = |v: i64| v.rem_euclid(2) == 1;
            if n == 1 {
                let i0 = (a - 1).div_euclid(2);
                add([i0, 0], [-1.0, 0.0])?;
                add([i0 + 1, 0], [1.0, 0.0])?;
            } else if odd(a) && odd(b) {
                let (i0, j0) = ((a - 1).div_euclid(2), (b - 1).div_euclid(2));
                add([i0, j0], [-0.5, -0.5])?;
                add([i0 + 1, j0], [0.5, -0.5])?;
                add([i0, j0 + 1], [-0.5, 0.5])?;
                add([i0 + 1, j0 + 1], [0.5, 0.5])?;
            } else if odd(a) {
                let (i0, j) = ((a - 1).div_euclid(2), b.div_euclid(2));
                add([i0, j], [-1.0, 0.0])?;
                add([i0 + 1, j], [1.0, 0.0])?;
                add([i0, j + 1], [0.0, 0.25])?;
                add([i0, j - 1], [0.0, -0.25])?;
                add([i0 + 1, j + 1], [0.0, 0.25])?;
                add([i0 + 1, j - 1], [0.0, -0.25])?;
            } else {
                let (i, j0) = (a.div_euclid(2), (b - 1).div_euclid(2));
                add([i, j0], [0.0, -1.0])?;
                add([i, j0 + 1], [0.0, 1.0])?;
                add([i + 1, j0], [0.25, 0.0])?;
                add([i - 1, j0], [-0.25, 0.0])?;
                add([i + 1, j0 + 1], [0.25, 0.0])?;
                add([i - 1, j0 + 1], [-0.25, 0.0])?;
            }
            for (c, v) in row {
                pg_idx.push(c);
                pg_val.push(v);
            }
            pg_ptr.push(pg_idx.len());
        }

        let x = nodes.iter().map(|p| [h * p[0] as f64, h * p[1] as f64]).collect();
        Ok(Grid {
            n,
            half_width,
            nodes_per_axis,
            k,
            spacing: h,
            sides,
            nodes,
            x,
            ext,
            ext_src,
            m,
            points,
            cell,
            pg_ptr,
            pg_idx,
            pg_val,
            depth,
            index,
            ext_index,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Interior index of a lattice node, if inside.
    pub fn index_of(&self, p: Lattice) -> Option<usize> {
        self.index.get(&p).copied()
    }

    /// Interior nodes and weights supplying the value at `p`, for `p` in the
    /// ghost ring.
    pub fn value_sources(&self, p: Lattice) -> Option<&[(usize, f64)]> {
        self.ext_index.get(&p).map(|&e| &self.ext_src[e][..])
    }

    pub fn point_x(&self, q: usize) -> [f64; 2] {
        let p = self.points[q];
        [0.5 * self.spacing * p[0] as f64, 0.5 * self.spacing * p[1] as f64]
    }

    /// Discrete gradient of `phi` at every gradient point.
    pub fn point_gradients(&self, phi: &[f64]) -> Vec<[f64; 2]> {
        (0..self.points.len())
            .map(|q| {
                let mut g = [0.0; 2];
                for e in self.pg_ptr[q]..self.pg_ptr[q + 1] {
                    let v = phi[self.pg_idx[e]];
                    g[0] += self.pg_val[e][0] * v;
                    g[1] += self.pg_val[e][1] * v;
                }
                g
            })
            .collect()
    }

    /// Value of `phi` at a lattice node in the extended set.
    pub fn ext_value(&self, phi: &[f64], p: Lattice) -> f64 {
        self.value_sources(p).expect("node outside the ghost ring").iter().map(|&(i, w)| w * phi[i]).sum()
    }

    /// Node permutation induced by each symmetry, `perm[g][i] = σ_g(node i)`.
    pub fn symmetry_permutations(&self, model: &ReducedModel) -> Result<Vec<Vec<usize>>> {
        model
            .group
            .iter()
            .map(|g| {
                self.nodes
                    .iter()
                    .map(|&p| {
                        self.index_of(mat_apply(g, p)).ok_or_else(|| {
                            Error::Config(format!("grid not invariant under {g:?}"))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Nodes at least `band` grid units inside every side.
    pub fn core_mask(&self, band: i64) -> Vec<bool> {
        self.depth.iter().map(|&d| d > band).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn one_dimensional_domain() {
        let m = build_model("cp1").unwrap();
        let g = Grid::new(&m, 12.0, 25).unwrap();
        assert_eq!(g.len(), 23);
        assert_eq!(g.nodes[0], [-11, 0]);
        assert_eq!(g.value_sources([12, 0]), Some(&[(g.index_of([11, 0]).unwrap(), 1.0)][..]));
        assert!((g.spacing - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_are_exact_on_linear_functions() {
        for name in ["cp1", "p1xp1", "cp2", "blowup3"] {
            let m = build_model(name).unwrap();
            let g = Grid::new(&m, 3.0, 13).unwrap();
            let phi: Vec<f64> = g.x.iter().map(|x| 0.3 * x[0] - 0.7 * x[1]).collect();
            let d = g.point_gradients(&phi);
            for (c, i) in g.cell.iter().zip(0..) {
                let node = i / g.m;
                if g.depth[node] > 2 {
                    let want = if g.n == 1 { [0.3, 0.0] } else { [0.3, -0.7] };
                    assert!((d[*c][0] - want[0]).abs() < 1e-12, "{name}");
                    assert!((d[*c][1] - want[1]).abs() < 1e-12, "{name}");
                }
            }
        }
    }

    #[test]
    fn domains_are_symmetric() {
        for name in crate::model::preset_names() {
            let m = build_model(name).unwrap();
            let g = Grid::new(&m, 4.0, 17).unwrap();
            assert!(g.symmetry_permutations(&m).is_ok(), "{name}");
        }
    }

    #[test]
    fn rejects_even_node_count() {
        let m = build_model("cp1").unwrap();
        assert!(Grid::new(&m, 12.0, 16).is_err());
    }
}
