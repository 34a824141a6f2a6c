//! Lattice geometry and torus grids.
//!
//! A lattice is generated by basis vectors `a_j`; its dual basis `b_j` satisfies
//! `<b_j, a_i> = 2π δ_ji`. A [`TorusGrid`] discretizes the torus spanned by
//! `L_j a_j` with `N_j` uniform nodes per direction in lattice coordinates.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Index range searched for dual vectors in Brillouin-zone and `r0` queries.
pub const DUAL_SEARCH: i64 = 4;

/// A Bravais lattice in `R^d` with its dual lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dim: usize,
    basis: Vec<Vec<f64>>,
    dual: Vec<Vec<f64>>,
    cell_volume: f64,
    r0: f64,
    r1: f64,
    /// Nonzero dual vectors with |m_j| <= DUAL_SEARCH, with their squared lengths.
    shell: Vec<(Vec<f64>, f64)>,
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Calls `f` on every integer vector in `[-r, r]^d`.
pub(crate) fn for_each_index(d: usize, r: i64, mut f: impl FnMut(&[i64])) {
    let mut m = vec![-r; d];
    loop {
        f(&m);
        let mut j = 0;
        loop {
            if j == d {
                return;
            }
            m[j] += 1;
            if m[j] <= r {
                break;
            }
            m[j] = -r;
            j += 1;
        }
    }
}

impl Lattice {
    /// Builds the lattice from `d` basis vectors of length `d`.
    pub fn new(basis: Vec<Vec<f64>>) -> Result<Self> {
        let d = basis.len();
        if d == 0 || basis.iter().any(|a| a.len() != d) {
            return Err(Error::InvalidGrid(format!(
                "basis must be d vectors of length d, got {d} vectors"
            )));
        }
        let a = DMatrix::from_fn(d, d, |i, j| basis[i][j]);
        let det = a.determinant();
        let scale = basis
            .iter()
            .map(|v| dot(v, v).sqrt())
            .fold(0.0_f64, f64::max);
        if !(det.abs() > 1e-12 * scale.powi(d as i32)) {
            return Err(Error::DegenerateBasis { det });
        }
        // Rows of B satisfy B A^T = 2π I.
        let at_inv = a
            .transpose()
            .try_inverse()
            .ok_or(Error::DegenerateBasis { det })?;
        let bmat = at_inv * (2.0 * std::f64::consts::PI);
        let dual: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| bmat[(i, j)]).collect())
            .collect();

        let mut shell = Vec::new();
        for_each_index(d, DUAL_SEARCH, |m| {
            if m.iter().all(|&v| v == 0) {
                return;
            }
            let mut b = vec![0.0; d];
            for (j, &mj) in m.iter().enumerate() {
                for l in 0..d {
                    b[l] += mj as f64 * dual[j][l];
                }
            }
            let n2 = dot(&b, &b);
            shell.push((b, n2));
        });
        let r0 = 0.5
            * shell
                .iter()
                .map(|s| s.1)
                .fold(f64::INFINITY, f64::min)
                .sqrt();

        let mut diam2 = 0.0_f64;
        for_each_index(d, 1, |t| {
            let mut x = vec![0.0; d];
            for (j, &tj) in t.iter().enumerate() {
                for l in 0..d {
                    x[l] += tj as f64 * basis[j][l];
                }
            }
            diam2 = diam2.max(dot(&x, &x));
        });

        Ok(Self {
            dim: d,
            basis,
            dual,
            cell_volume: det.abs(),
            r0,
            r1: 0.5 * diam2.sqrt(),
            shell,
        })
    }

    /// Unit lattice `Z^d`.
    pub fn cubic(d: usize) -> Self {
        let basis = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(basis).expect("identity basis is nondegenerate")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn dual_basis(&self) -> &[Vec<f64>] {
        &self.dual
    }

    /// `|Ω| = |det[a_1..a_d]|`.
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Inscribed radius of the Brillouin zone: half the shortest dual vector.
    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// Half the diameter of the cell.
    pub fn r1(&self) -> f64 {
        self.r1
    }

    /// Cartesian point `Σ t_j a_j`.
    pub fn point(&self, t: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (j, &tj) in t.iter().enumerate() {
            for l in 0..self.dim {
                x[l] += tj * self.basis[j][l];
            }
        }
        x
    }

    /// Dual vector `Σ m_j b_j`.
    pub fn dual_vector(&self, m: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (j, &mj) in m.iter().enumerate() {
            for l in 0..self.dim {
                x[l] += mj * self.dual[j][l];
            }
        }
        x
    }

    /// Membership in the closed central Brillouin zone: `|ξ| <= |ξ - b|` for
    /// all nonzero dual `b` with `|m_j| <= 4`. Boundary points count as inside.
    pub fn in_brillouin(&self, xi: &[f64]) -> bool {
        // |ξ|² <= |ξ-b|²  <=>  2<ξ,b> <= |b|².
        self.shell
            .iter()
            .all(|(b, n2)| 2.0 * dot(xi, b) <= n2 * (1.0 + 1e-12))
    }
}

/// Uniform grid on the torus spanned by `periods[j] · a_j`.
///
/// Nodes sit at `Σ_j (k_j / N_j) L_j a_j`; Fourier modes are
/// `ξ = Σ_j (m_j / L_j) b_j` with `m_j ∈ {-N_j/2, .., N_j/2 - 1}`.
#[derive(Debug, Clone)]
pub struct TorusGrid {
    lattice: Arc<Lattice>,
    points: Vec<usize>,
    periods: Vec<usize>,
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
            && self.periods == other.periods
            && (Arc::ptr_eq(&self.lattice, &other.lattice) || self.lattice == other.lattice)
    }
}

impl TorusGrid {
    /// Grid over a single lattice cell.
    pub fn cell(lattice: Arc<Lattice>, points: Vec<usize>) -> Result<Self> {
        let periods = vec![1; lattice.dim()];
        Self::new(lattice, points, periods)
    }

    pub fn new(lattice: Arc<Lattice>, points: Vec<usize>, periods: Vec<usize>) -> Result<Self> {
        let d = lattice.dim();
        if points.len() != d || periods.len() != d {
            return Err(Error::InvalidGrid(format!(
                "expected {d} entries in points and periods, got {} and {}",
                points.len(),
                periods.len()
            )));
        }
        if points.iter().any(|&n| n == 0 || n % 2 != 0) {
            return Err(Error::InvalidGrid(format!(
                "points per dimension must be even and positive, got {points:?}"
            )));
        }
        if periods.contains(&0) {
            return Err(Error::InvalidGrid("periods must be positive".into()));
        }
        Ok(Self {
            lattice,
            points,
            periods,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn lattice_arc(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn periods(&self) -> &[usize] {
        &self.periods
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Torus volume `Π L_j · |Ω|`.
    pub fn volume(&self) -> f64 {
        self.periods.iter().product::<usize>() as f64 * self.lattice.cell_volume()
    }

    /// Multi-index of a node in row-major order (last index fastest).
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let d = self.dim();
        let mut k = vec![0; d];
        for j in (0..d).rev() {
            k[j] = idx % self.points[j];
            idx /= self.points[j];
        }
        k
    }

    pub fn ravel(&self, k: &[usize]) -> usize {
        k.iter()
            .zip(&self.points)
            .fold(0, |acc, (&kj, &nj)| acc * nj + kj)
    }

    /// Lattice coordinates `t_j = k_j L_j / N_j` of a node.
    pub fn node_coords(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .iter()
            .enumerate()
            .map(|(j, &k)| k as f64 * self.periods[j] as f64 / self.points[j] as f64)
            .collect()
    }

    /// Cartesian position of a node.
    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.lattice.point(&self.node_coords(idx))
    }

    /// Signed mode index for FFT position `i` along direction `j`.
    pub fn signed_mode(&self, j: usize, i: usize) -> i64 {
        let n = self.points[j];
        if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Modes whose cell harmonic lies strictly inside the cell band, for a
    /// torus that repeats a cell of `cell_points` nodes.
    ///
    /// Mode `m` splits as `m = jq + r` with `q = points / cell_points` and
    /// `r ∈ [−q/2, q/2)`; it is kept when `|j| < cell_points / 2` on every
    /// axis. With `q = 1` this drops the Nyquist mode of an even grid.
    pub fn cell_band(&self, cell_points: &[usize]) -> Vec<bool> {
        let q: Vec<i64> = self
            .points
            .iter()
            .zip(cell_points)
            .map(|(&p, &c)| (p / c.max(1)) as i64)
            .collect();
        (0..self.len())
            .map(|idx| {
                self.mode_index(idx).iter().enumerate().all(|(a, &m)| {
                    let j = (2 * m + q[a]).div_euclid(2 * q[a]);
                    2 * j.abs() < cell_points[a] as i64
                })
            })
            .collect()
    }

    /// Integer mode indices `m_j` of the Fourier coefficient stored at `idx`.
    pub fn mode_index(&self, idx: usize) -> Vec<i64> {
        self.unravel(idx)
            .iter()
            .enumerate()
            .map(|(j, &i)| self.signed_mode(j, i))
            .collect()
    }

    /// Cartesian wave vector of the Fourier coefficient stored at `idx`.
    pub fn xi(&self, idx: usize) -> Vec<f64> {
        let m: Vec<f64> = self
            .mode_index(idx)
            .iter()
            .enumerate()
            .map(|(j, &mj)| mj as f64 / self.periods[j] as f64)
            .collect();
        self.lattice.dual_vector(&m)
    }

    /// Same lattice, refined by an integer factor per direction.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            lattice: self.lattice.clone(),
            points: self.points.iter().map(|n| n * factor).collect(),
            periods: self.periods.clone(),
        }
    }

    /// Whether a field on `cell` maps node-exactly onto this grid at `ε = 1/k`.
    pub fn commensurate_with(&self, cell: &TorusGrid, k: usize) -> bool {
        (0..self.dim())
            .all(|j| (self.periods[j] * k * cell.points[j]).is_multiple_of(self.points[j]))
    }

    /// Torus over `periods` cells with `k` oscillation periods per cell and
    /// `cell_points` nodes per oscillation period.
    pub fn scaled(cell: &TorusGrid, k: usize, periods: &[usize]) -> Result<Self> {
        let points = cell
            .points
            .iter()
            .zip(periods)
            .map(|(&m, &l)| m * k * l)
            .collect();
        Self::new(cell.lattice.clone(), points, periods.to_vec())
    }
}
