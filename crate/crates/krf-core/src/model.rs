//! Toric Fano presets: anticanonical lattice points, symmetry groups and the
//! polytope data derived from them.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Integer point of ℤⁿ stored in two slots; the second is 0 when `n = 1`.
pub type Lattice = [i64; 2];

/// Integer matrix acting on ℝⁿ, padded to 2×2 with the identity when `n = 1`.
pub type IMat = [[i64; 2]; 2];

pub const IDENTITY: IMat = [[1, 0], [0, 1]];

pub fn mat_mul(a: &IMat, b: &IMat) -> IMat {
    let mut c = [[0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn mat_apply(a: &IMat, p: Lattice) -> Lattice {
    [a[0][0] * p[0] + a[0][1] * p[1], a[1][0] * p[0] + a[1][1] * p[1]]
}

/// Which potential is used as the reference metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// `log Σ e^{⟨u,x⟩}` over the lattice points.
    Guillemin,
    /// Weighted sum reproducing a known Kähler–Einstein potential.
    KahlerEinstein,
}

/// A facet `⟨normal, u⟩ ≤ offset` of the moment polytope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Facet {
    pub normal: Lattice,
    pub offset: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub name: String,
    pub n: usize,
    pub lattice_points: Vec<Lattice>,
    /// Positive coefficients of the exponentials in the reference potential.
    pub weights: Vec<f64>,
    pub reference: ReferenceKind,
    pub polytope_volume: f64,
    pub generators: Vec<IMat>,
    /// Every element of the finite group generated by `generators`.
    pub group: Vec<IMat>,
    pub facets: Vec<Facet>,
    pub has_ke_expected: bool,
    ke_weights: Option<Vec<f64>>,
}

struct Preset {
    name: &'static str,
    n: usize,
    points: &'static [Lattice],
    generators: &'static [IMat],
    ke_expected: bool,
    ke_weights: Option<&'static [f64]>,
}

const SWAP: IMat = [[0, 1], [1, 0]];
const FLIP: IMat = [[-1, 0], [0, 1]];
const NEG: IMat = [[-1, 0], [0, -1]];

const PRESETS: &[Preset] = &[
    Preset {
        name: "cp1",
        n: 1,
        points: &[[-1, 0], [0, 0], [1, 0]],
        generators: &[FLIP],
        ke_expected: true,
        ke_weights: Some(&[1.0, 2.0, 1.0]),
    },
    Preset {
        name: "p1xp1",
        n: 2,
        points: &[
            [-1, -1], [-1, 0], [-1, 1],
            [0, -1], [0, 0], [0, 1],
            [1, -1], [1, 0], [1, 1],
        ],
        generators: &[SWAP, FLIP],
        ke_expected: true,
        ke_weights: Some(&[1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]),
    },
    Preset {
        name: "cp2",
        n: 2,
        points: &[
            [-1, -1], [-1, 0], [-1, 1], [-1, 2],
            [0, -1], [0, 0], [0, 1],
            [1, -1], [1, 0],
            [2, -1],
        ],
        generators: &[SWAP],
        ke_expected: true,
        ke_weights: Some(&[1.0, 3.0, 3.0, 1.0, 3.0, 6.0, 3.0, 3.0, 3.0, 1.0]),
    },
    Preset {
        name: "blowup1",
        n: 2,
        points: &[
            [-1, 0], [-1, 1], [-1, 2],
            [0, -1], [0, 0], [0, 1],
            [1, -1], [1, 0],
            [2, -1],
        ],
        generators: &[SWAP],
        ke_expected: false,
        ke_weights: None,
    },
    Preset {
        name: "blowup2",
        n: 2,
        points: &[
            [-1, -1], [-1, 0], [-1, 1],
            [0, -1], [0, 0], [0, 1],
            [1, -1], [1, 0],
        ],
        generators: &[SWAP],
        ke_expected: false,
        ke_weights: None,
    },
    Preset {
        name: "blowup3",
        n: 2,
        points: &[[1, 0], [0, 1], [-1, 1], [-1, 0], [0, -1], [1, -1], [0, 0]],
        generators: &[SWAP, NEG],
        ke_expected: true,
        ke_weights: None,
    },
];

/// Names of the registered presets.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

/// Registered preset with the lattice-point reference potential.
pub fn build_model(name: &str) -> Result<ReducedModel> {
    let p = PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    let mut m = ReducedModel::new(
        p.name,
        p.n,
        p.points.to_vec(),
        p.generators.to_vec(),
        p.ke_expected,
    )?;
    m.ke_weights = p.ke_weights.map(|w| w.to_vec());
    Ok(m)
}

impl ReducedModel {
    /// Validated model with unit weights.
    pub fn new(
        name: &str,
        n: usize,
        points: Vec<Lattice>,
        generators: Vec<IMat>,
        has_ke_expected: bool,
    ) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(Error::Config(format!("{name}: dimension {n} unsupported")));
        }
        let mut points = points;
        if n == 1 {
            for p in points.iter_mut() {
                if p[1] != 0 {
                    return Err(Error::Config(format!("{name}: point {p:?} is not one-dimensional")));
                }
            }
        }
        let set: BTreeSet<Lattice> = points.iter().copied().collect();
        if set.len() != points.len() {
            return Err(Error::Config(format!("{name}: repeated lattice points")));
        }
        points.sort();
        let (facets, volume) = if n == 1 {
            let lo = points.first().map(|p| p[0]).unwrap_or(0);
            let hi = points.last().map(|p| p[0]).unwrap_or(0);
            let f = vec![
                Facet { normal: [-1, 0], offset: -lo },
                Facet { normal: [1, 0], offset: hi },
            ];
            (f, (hi - lo) as f64)
        } else {
            let hull = convex_hull(&points);
            (hull_facets(&hull), shoelace(&hull))
        };
        if volume <= 0.0 {
            return Err(Error::Config(format!("{name}: lattice points do not span ℝ^{n}")));
        }
        for g in &generators {
            let signed_perm = g.iter().all(|row| row.iter().filter(|&&v| v != 0).count() == 1)
                && g.iter().flatten().all(|&v| v.abs() <= 1)
                && g[0][0] * g[1][1] - g[0][1] * g[1][0] != 0;
            if !signed_perm || (n == 1 && (g[0][1] != 0 || g[1] != [0, 1])) {
                return Err(Error::Config(format!(
                    "{name}: symmetry generator {g:?} is not a signed permutation"
                )));
            }
            for p in &points {
                if !set.contains(&mat_apply(g, *p)) {
                    return Err(Error::Config(format!(
                        "{name}: symmetry {g:?} does not preserve the lattice points"
                    )));
                }
            }
        }
        let group = close_group(&generators);
        let weights = vec![1.0; points.len()];
        Ok(ReducedModel {
            name: name.to_string(),
            n,
            lattice_points: points,
            weights,
            reference: ReferenceKind::Guillemin,
            polytope_volume: volume,
            generators,
            group,
            facets,
            has_ke_expected,
            ke_weights: None,
        })
    }

    /// Same model with the reference potential replaced by a known
    /// Kähler–Einstein potential, when one is registered.
    pub fn with_ke_reference(&self) -> Result<Self> {
        let w = self.ke_weights.as_ref().ok_or_else(|| {
            Error::Config(format!("{}: no Kähler–Einstein reference registered", self.name))
        })?;
        let mut m = self.clone();
        m.weights = w.clone();
        m.reference = ReferenceKind::KahlerEinstein;
        Ok(m)
    }

    pub fn has_ke_reference(&self) -> bool {
        self.ke_weights.is_some()
    }

    /// Attach custom reference weights (one per lattice point, all positive).
    pub fn set_ke_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.lattice_points.len() || weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config(format!("{}: invalid reference weights", self.name)));
        }
        self.ke_weights = Some(weights);
        Ok(())
    }

    pub fn ke_weights(&self) -> Option<&[f64]> {
        self.ke_weights.as_deref()
    }
}

fn close_group(generators: &[IMat]) -> Vec<IMat> {
    let mut group = vec![IDENTITY];
    let mut i = 0;
    while i < group.len() {
        let a = group[i];
        for g in generators {
            let b = mat_mul(g, &a);
            if !group.contains(&b) {
                group.push(b);
            }
        }
        i += 1;
    }
    group
}

fn cross(o: Lattice, a: Lattice, b: Lattice) -> i64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise hull vertices (monotone chain) of sorted points.
pub fn convex_hull(sorted: &[Lattice]) -> Vec<Lattice> {
    if sorted.len() < 3 {
        return sorted.to_vec();
    }
    let mut lower: Vec<Lattice> = Vec::new();
    for &p in sorted {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Lattice> = Vec::new();
    for &p in sorted.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn hull_facets(hull: &[Lattice]) -> Vec<Facet> {
    let m = hull.len();
    (0..m)
        .map(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % m];
            let d = [b[0] - a[0], b[1] - a[1]];
            let g = gcd(d[0], d[1]).max(1);
            let normal = [d[1] / g, -d[0] / g];
            Facet { normal, offset: normal[0] * a[0] + normal[1] * a[1] }
        })
        .collect()
}

fn shoelace(hull: &[Lattice]) -> f64 {
    let m = hull.len();
    if m < 3 {
        return 0.0;
    }
    let twice: i64 = (0..m)
        .map(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % m];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() as f64 / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volumes_match_anticanonical_degrees() {
        for (name, v) in [
            ("cp1", 2.0),
            ("p1xp1", 4.0),
            ("cp2", 4.5),
            ("blowup1", 4.0),
            ("blowup2", 3.5),
            ("blowup3", 3.0),
        ] {
            assert_eq!(build_model(name).unwrap().polytope_volume, v, "{name}");
        }
    }

    #[test]
    fn group_orders() {
        assert_eq!(build_model("cp1").unwrap().group.len(), 2);
        assert_eq!(build_model("p1xp1").unwrap().group.len(), 8);
        assert_eq!(build_model("blowup3").unwrap().group.len(), 4);
    }

    #[test]
    fn unknown_preset_is_config_error() {
        assert!(matches!(build_model("cp3"), Err(Error::Config(_))));
    }

    #[test]
    fn facets_contain_all_points() {
        for name in preset_names() {
            let m = build_model(name).unwrap();
            for p in &m.lattice_points {
                for f in &m.facets {
                    assert!(f.normal[0] * p[0] + f.normal[1] * p[1] <= f.offset);
                }
            }
        }
    }

    #[test]
    fn rejects_non_preserving_symmetry() {
        let r = ReducedModel::new("x", 2, vec![[0, 0], [1, 0], [0, 1]], vec![FLIP], false);
        assert!(r.is_err());
    }
}
