//! Periodic hypercubic lattices.
//!
//! Sites are numbered in row-major order: the last coordinate varies fastest,
//! so `flat = ((c0 * L1 + c1) * L2 + c2) ...`. Every matrix built on a lattice
//! uses this ordering, which makes operators reproducible bit for bit.
//!
//! Edges are undirected and stored once. In a direction of side length 2 the
//! forward and backward neighbours of a site coincide; such a pair carries a
//! single edge and the lattice records a warning.

use crate::error::{Error, Result};
use crate::linalg::SymmetricOperator;

/// Geometry of a periodic box: dimension and side lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeShape {
    side_lengths: Vec<usize>,
    strides: Vec<usize>,
    num_sites: usize,
}

impl LatticeShape {
    pub fn dimension(&self) -> usize {
        self.side_lengths.len()
    }

    pub fn side_lengths(&self) -> &[usize] {
        &self.side_lengths
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    /// Coordinates of a flat site index.
    pub fn coordinates(&self, site: usize) -> Vec<usize> {
        debug_assert!(site < self.num_sites);
        self.side_lengths
            .iter()
            .zip(&self.strides)
            .map(|(&len, &stride)| (site / stride) % len)
            .collect()
    }

    /// Flat index of a coordinate tuple; coordinates are reduced modulo the
    /// side lengths.
    pub fn flat_index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dimension());
        coords
            .iter()
            .zip(&self.side_lengths)
            .zip(&self.strides)
            .map(|((&c, &len), &stride)| (c % len) * stride)
            .sum()
    }

    /// Site reached from `site` by the periodic translation `shift`.
    pub fn translate(&self, site: usize, shift: &[usize]) -> usize {
        let coords: Vec<usize> = self
            .coordinates(site)
            .iter()
            .zip(shift)
            .map(|(&c, &s)| c + s)
            .collect();
        self.flat_index(&coords)
    }

    /// Minimal periodic displacement of `site` from the origin, per direction.
    pub fn displacement_from_origin(&self, site: usize) -> Vec<usize> {
        self.coordinates(site)
            .iter()
            .zip(&self.side_lengths)
            .map(|(&c, &len)| c.min(len - c))
            .collect()
    }

    /// Euclidean length of the minimal periodic displacement from the origin.
    pub fn distance_from_origin(&self, site: usize) -> f64 {
        self.displacement_from_origin(site)
            .iter()
            .map(|&x| (x * x) as f64)
            .sum::<f64>()
            .sqrt()
    }
}

/// An undirected nearest-neighbour edge, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
}

/// Shape plus the deduplicated periodic edge list and per-site incidence.
#[derive(Debug, Clone)]
pub struct Lattice {
    shape: LatticeShape,
    edges: Vec<Edge>,
    incident: Vec<Vec<usize>>,
    warnings: Vec<String>,
}

/// Builds the periodic lattice with the given side lengths.
pub fn build_lattice(dimension: usize, side_lengths: &[usize]) -> Result<Lattice> {
    Lattice::new(dimension, side_lengths)
}

impl Lattice {
    pub fn new(dimension: usize, side_lengths: &[usize]) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidLattice("dimension must be at least 1".into()));
        }
        if side_lengths.len() != dimension {
            return Err(Error::InvalidLattice(format!(
                "dimension {dimension} needs {dimension} side lengths, got {}",
                side_lengths.len()
            )));
        }
        if let Some((k, &len)) = side_lengths.iter().enumerate().find(|(_, &l)| l < 2) {
            return Err(Error::InvalidLattice(format!(
                "side length {len} in direction {k} is below 2"
            )));
        }
        let num_sites = side_lengths
            .iter()
            .try_fold(1usize, |acc, &l| acc.checked_mul(l))
            .ok_or_else(|| Error::InvalidLattice("site count overflows usize".into()))?;
        let mut strides = vec![1usize; dimension];
        for k in (0..dimension.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * side_lengths[k + 1];
        }
        let shape = LatticeShape {
            side_lengths: side_lengths.to_vec(),
            strides,
            num_sites,
        };

        let mut warnings = Vec::new();
        for (k, &len) in side_lengths.iter().enumerate() {
            if len == 2 {
                let msg = format!(
                    "direction {k} has side length 2: forward and backward neighbours coincide, \
                     a single edge is stored per pair"
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }

        let mut edges = Vec::with_capacity(num_sites * dimension);
        for site in 0..num_sites {
            let coords = shape.coordinates(site);
            for k in 0..dimension {
                let len = side_lengths[k];
                if len == 2 && coords[k] == 1 {
                    continue;
                }
                let mut next = coords.clone();
                next[k] = (coords[k] + 1) % len;
                let other = shape.flat_index(&next);
                edges.push(Edge {
                    a: site.min(other),
                    b: site.max(other),
                });
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut incident = vec![Vec::with_capacity(2 * dimension); num_sites];
        for (e, edge) in edges.iter().enumerate() {
            incident[edge.a].push(e);
            incident[edge.b].push(e);
        }

        Ok(Self {
            shape,
            edges,
            incident,
            warnings,
        })
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn dimension(&self) -> usize {
        self.shape.dimension()
    }

    pub fn num_sites(&self) -> usize {
        self.shape.num_sites()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Indices (into [`Lattice::edges`]) of the edges touching `site`.
    pub fn incident_edges(&self, site: usize) -> &[usize] {
        &self.incident[site]
    }

    /// Neighbour sites of `site`, one per incident edge.
    pub fn neighbors(&self, site: usize) -> impl Iterator<Item = usize> + '_ {
        self.incident[site].iter().map(move |&e| {
            let edge = self.edges[e];
            if edge.a == site {
                edge.b
            } else {
                edge.a
            }
        })
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub(crate) fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_sites() {
            return Err(Error::LengthMismatch {
                expected: self.num_sites(),
                found: values.len(),
            });
        }
        Ok(())
    }
}

/// `-Δ` with periodic boundary conditions (positive semidefinite convention).
pub fn laplacian(lattice: &Lattice) -> SymmetricOperator {
    let ones = vec![1.0; lattice.edges().len()];
    SymmetricOperator::from_edge_weights(lattice.num_sites(), lattice.edges(), &ones, None)
}

/// `Σ_edges (f_a - f_b)^2`, the quadratic form of `-Δ`.
pub fn gradient_form(lattice: &Lattice, f: &[f64]) -> Result<f64> {
    lattice.check_len(f)?;
    Ok(lattice
        .edges()
        .iter()
        .map(|e| {
            let d = f[e.a] - f[e.b];
            d * d
        })
        .sum())
}
