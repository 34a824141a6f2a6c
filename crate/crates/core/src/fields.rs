//! Matrix-valued periodic fields and vector-valued torus functions.
//!
//! [`PeriodicField`] stores one complex `rows × cols` matrix per grid node,
//! entry-major (`data[(r*cols + c)*nodes + node]`), so every entry is a
//! contiguous grid array. [`TorusFunction`] stores `ncomp` component arrays
//! back to back. Both use lattice-coordinate grids from [`crate::lattice`].

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::TorusGrid;
use crate::linalg::CMat;
use crate::spectral::Spectral;

/// Grid samples of a `Γ`-periodic matrix function.
#[derive(Debug, Clone)]
pub struct PeriodicField {
    grid: TorusGrid,
    rows: usize,
    cols: usize,
    data: Vec<C64>,
    hermitian: bool,
}

impl PeriodicField {
    pub fn new(grid: TorusGrid, rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols * grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} field on {} nodes",
                data.len(),
                grid.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite field value".into()));
        }
        Ok(Self {
            grid,
            rows,
            cols,
            data,
            hermitian: false,
        })
    }

    pub fn zeros(grid: TorusGrid, rows: usize, cols: usize) -> Self {
        let n = rows * cols * grid.len();
        Self {
            grid,
            rows,
            cols,
            data: vec![C64::default(); n],
            hermitian: false,
        }
    }

    pub fn constant(grid: TorusGrid, value: &CMat) -> Self {
        let (rows, cols) = value.shape();
        let nodes = grid.len();
        let mut data = Vec::with_capacity(rows * cols * nodes);
        for r in 0..rows {
            for c in 0..cols {
                data.extend(std::iter::repeat_n(value[(r, c)], nodes));
            }
        }
        Self {
            grid,
            rows,
            cols,
            data,
            hermitian: false,
        }
    }

    /// Samples `f(t)` at every node, `t` in lattice coordinates.
    pub fn from_fn(grid: TorusGrid, rows: usize, cols: usize, f: impl Fn(&[f64]) -> CMat) -> Self {
        let nodes = grid.len();
        let mut out = Self::zeros(grid, rows, cols);
        for node in 0..nodes {
            let m = f(&out.grid.node_coords(node));
            assert_eq!(
                m.shape(),
                (rows, cols),
                "field function returned wrong shape"
            );
            for r in 0..rows {
                for c in 0..cols {
                    out.data[(r * cols + c) * nodes + node] = m[(r, c)];
                }
            }
        }
        out
    }

    /// Real scalar field from `f(t)`, `t` in lattice coordinates.
    pub fn scalar_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let data = (0..grid.len())
            .map(|i| C64::new(f(&grid.node_coords(i)), 0.0))
            .collect();
        Self {
            grid,
            rows: 1,
            cols: 1,
            data,
            hermitian: false,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn is_hermitian_flagged(&self) -> bool {
        self.hermitian
    }

    /// Grid array of entry `(r, c)`.
    pub fn entry(&self, r: usize, c: usize) -> &[C64] {
        let n = self.nodes();
        let k = r * self.cols + c;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn entry_mut(&mut self, r: usize, c: usize) -> &mut [C64] {
        let n = self.nodes();
        let k = r * self.cols + c;
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Matrix at one node.
    pub fn at(&self, node: usize) -> CMat {
        let n = self.nodes();
        CMat::from_fn(self.rows, self.cols, |r, c| {
            self.data[(r * self.cols + c) * n + node]
        })
    }

    fn set_at(&mut self, node: usize, m: &CMat) {
        let n = self.nodes();
        for r in 0..self.rows {
            for c in 0..self.cols {
                self.data[(r * self.cols + c) * n + node] = m[(r, c)];
            }
        }
    }

    /// Asserts pointwise Hermiticity to 1e-12 and records it.
    pub fn with_hermitian_flag(mut self) -> Result<Self> {
        let dev = self.hermitian_deviation();
        if self.rows != self.cols || dev > 1e-12 {
            return Err(Error::NotHermitian { deviation: dev });
        }
        self.hermitian = true;
        Ok(self)
    }

    /// Largest `|f_rc - conj(f_cr)|` over nodes (infinite for non-square fields).
    pub fn hermitian_deviation(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut dev = 0.0_f64;
        for r in 0..self.rows {
            for c in r..self.cols {
                for (x, y) in self.entry(r, c).iter().zip(self.entry(c, r)) {
                    dev = dev.max((x - y.conj()).norm());
                }
            }
        }
        dev
    }

    /// Quadrature mean over the grid.
    pub fn mean(&self) -> CMat {
        let n = self.nodes() as f64;
        CMat::from_fn(self.rows, self.cols, |r, c| {
            self.entry(r, c).iter().sum::<C64>() / n
        })
    }

    /// Pointwise inverse.
    pub fn inverse(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::ShapeMismatch("inverse of a non-square field".into()));
        }
        let mut out = self.clone();
        out.hermitian = false;
        if self.rows == 1 {
            for (node, z) in out.data.iter_mut().enumerate() {
                if z.norm() < 1e-14 {
                    return Err(Error::SingularPoint { node });
                }
                *z = z.inv();
            }
            return Ok(out);
        }
        for node in 0..self.nodes() {
            let m = self.at(node);
            let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let det = m.determinant().norm();
            let inv = if det > 1e-14 * scale.powi(self.rows as i32) {
                m.try_inverse()
            } else {
                None
            };
            match inv {
                Some(inv) => out.set_at(node, &inv),
                None => return Err(Error::SingularPoint { node }),
            }
        }
        Ok(out)
    }

    /// `(mean f^{-1})^{-1}`.
    pub fn harmonic_mean(&self) -> Result<CMat> {
        self.inverse()?
            .mean()
            .try_inverse()
            .ok_or(Error::SingularPoint { node: 0 })
    }

    /// Pointwise conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let n = self.nodes();
        let mut data = vec![C64::default(); self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let src = self.entry(r, c);
                let k = c * self.rows + r;
                for (d, s) in data[k * n..(k + 1) * n].iter_mut().zip(src) {
                    *d = s.conj();
                }
            }
        }
        Self {
            grid: self.grid.clone(),
            rows: self.cols,
            cols: self.rows,
            data,
            hermitian: self.hermitian,
        }
    }

    /// Pointwise matrix product `self · other`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows || self.nodes() != other.nodes() {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{} fields",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.grid.clone(), self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = vec![C64::default(); self.nodes()];
                for k in 0..self.cols {
                    for ((d, x), y) in acc.iter_mut().zip(self.entry(r, k)).zip(other.entry(k, c)) {
                        *d += x * y;
                    }
                }
                out.entry_mut(r, c).copy_from_slice(&acc);
            }
        }
        Ok(out)
    }

    /// Pointwise product projected back onto the grid's mode set. With
    /// `dealias` the product is formed on a 3/2-padded grid first, otherwise
    /// this is [`Self::mul`]. `self` acts as the multiplier and `other` as the
    /// operand, which keeps `⟨v, P(g u)⟩` Hermitian in `(u, v)`.
    pub fn mul_projected(&self, other: &Self, dealias: bool) -> Result<Self> {
        if !dealias {
            return self.mul(other);
        }
        if self.cols != other.rows || self.nodes() != other.nodes() {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{} fields",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let sp = Spectral::dealiased(&self.grid);
        let plain = Spectral::new(&self.grid);
        let np = sp.nphys();
        let pa = self.phys_data(&sp);
        let pb = sp.embed_grid(other.data());
        let mut out = Self::zeros(self.grid.clone(), self.rows, other.cols);
        let mut acc = vec![C64::default(); np];
        let mut coeffs = vec![C64::default(); self.nodes()];
        for r in 0..self.rows {
            for c in 0..other.cols {
                acc.iter_mut().for_each(|z| *z = C64::default());
                for k in 0..self.cols {
                    let x = &pa[(r * self.cols + k) * np..(r * self.cols + k + 1) * np];
                    let y = &pb[(k * other.cols + c) * np..(k * other.cols + c + 1) * np];
                    for ((d, x), y) in acc.iter_mut().zip(x).zip(y) {
                        *d += x * y;
                    }
                }
                sp.forward(&acc, &mut coeffs);
                plain.inverse(&coeffs, out.entry_mut(r, c));
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.shape() != other.shape() || self.nodes() != other.nodes() {
            return Err(Error::ShapeMismatch("fields differ in shape".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            rows: self.rows,
            cols: self.cols,
            data,
            hermitian: false,
        })
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= s);
        out.hermitian = self.hermitian && s.im == 0.0;
        out
    }

    /// Adds a constant matrix at every node.
    pub fn add_constant(&self, m: &CMat) -> Result<Self> {
        self.add(&Self::constant(self.grid.clone(), m))
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z = f(*z));
        out.hermitian = false;
        out
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Smallest and largest real parts over all entries.
    pub fn real_range(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| {
                (lo.min(z.re), hi.max(z.re))
            })
    }

    /// Checks pointwise Hermitian positive definiteness.
    pub fn check_positive(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::NotPositive { node: 0 });
        }
        let scale = self.max_abs().max(1e-300);
        for node in 0..self.nodes() {
            let m = self.at(node);
            let herm_dev = (&m - m.adjoint())
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            if herm_dev > 1e-10 * scale {
                return Err(Error::NotPositive { node });
            }
            let h = crate::linalg::hermitian_part(&m);
            if crate::linalg::min_eigenvalue(&h) <= 1e-14 * scale {
                return Err(Error::NotPositive { node });
            }
        }
        Ok(())
    }

    /// `f^ε(x) = f(x/ε)` with `ε = 1/k`, sampled exactly on `torus`.
    pub fn sample_scaled(&self, k: usize, torus: &TorusGrid) -> Result<Self> {
        let cell = &self.grid;
        if k == 0 || torus.dim() != cell.dim() || !torus.commensurate_with(cell, k) {
            return Err(Error::Incommensurable {
                cell: cell.points().to_vec(),
                torus: torus.points().to_vec(),
                periods: torus.periods().to_vec(),
                k,
            });
        }
        let d = cell.dim();
        // Torus index k_j sits at lattice coordinate k_j L_j / N_j; scaled by k
        // it lands on cell index k_j L_j k M_j / N_j (mod M_j).
        let maps: Vec<Vec<usize>> = (0..d)
            .map(|j| {
                let (n, m, l) = (torus.points()[j], cell.points()[j], torus.periods()[j]);
                let step = l * k * m / n;
                (0..n).map(|i| (i * step) % m).collect()
            })
            .collect();
        let tn = torus.len();
        let src: Vec<usize> = (0..tn)
            .map(|idx| {
                let ks = torus.unravel(idx);
                let cs: Vec<usize> = ks.iter().enumerate().map(|(j, &kj)| maps[j][kj]).collect();
                cell.ravel(&cs)
            })
            .collect();
        let cn = cell.len();
        let mut data = Vec::with_capacity(self.rows * self.cols * tn);
        for e in 0..self.rows * self.cols {
            let block = &self.data[e * cn..(e + 1) * cn];
            data.extend(src.iter().map(|&s| block[s]));
        }
        Ok(Self {
            grid: torus.clone(),
            rows: self.rows,
            cols: self.cols,
            data,
            hermitian: self.hermitian,
        })
    }

    /// Applies the field pointwise to a component-major vector with `cols`
    /// components, accumulating `rows` components into `out`.
    pub fn apply_add(&self, u: &[C64], out: &mut [C64]) {
        let n = self.nodes();
        for r in 0..self.rows {
            let o = &mut out[r * n..(r + 1) * n];
            for c in 0..self.cols {
                let f = self.entry(r, c);
                let x = &u[c * n..(c + 1) * n];
                for ((o, f), x) in o.iter_mut().zip(f).zip(x) {
                    *o += f * x;
                }
            }
        }
    }

    /// As [`Self::apply_add`] with the pointwise adjoint.
    pub fn apply_adjoint_add(&self, u: &[C64], out: &mut [C64]) {
        let n = self.nodes();
        for c in 0..self.cols {
            let o = &mut out[c * n..(c + 1) * n];
            for r in 0..self.rows {
                let f = self.entry(r, c);
                let x = &u[r * n..(r + 1) * n];
                for ((o, f), x) in o.iter_mut().zip(f).zip(x) {
                    *o += f.conj() * x;
                }
            }
        }
    }

    /// Entry arrays resampled for a (possibly padded) spectral context.
    pub fn phys_data(&self, sp: &Spectral) -> Vec<C64> {
        sp.to_phys_grid(&self.data)
    }
}

/// Accumulates `out += F u` (or `F* u`) where `coef` holds the entry arrays of a
/// `rows × cols` field on `np` points and `u`, `out` are component-major.
pub(crate) fn apply_entries_add(
    coef: &[C64],
    (rows, cols): (usize, usize),
    np: usize,
    u: &[C64],
    out: &mut [C64],
    adjoint: bool,
) {
    let (cin, cout) = if adjoint { (rows, cols) } else { (cols, rows) };
    for o in 0..cout {
        let dst = &mut out[o * np..(o + 1) * np];
        for i in 0..cin {
            let x = &u[i * np..(i + 1) * np];
            if adjoint {
                let f = &coef[(i * cols + o) * np..(i * cols + o + 1) * np];
                for ((d, f), x) in dst.iter_mut().zip(f).zip(x) {
                    *d += f.conj() * x;
                }
            } else {
                let f = &coef[(o * cols + i) * np..(o * cols + i + 1) * np];
                for ((d, f), x) in dst.iter_mut().zip(f).zip(x) {
                    *d += f * x;
                }
            }
        }
    }
}

/// Discrete norms of a torus function.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub h_minus_1: f64,
}

/// Vector-valued function on a torus grid (component-major storage).
#[derive(Debug, Clone)]
pub struct TorusFunction {
    grid: TorusGrid,
    ncomp: usize,
    data: Vec<C64>,
}

impl TorusFunction {
    pub fn new(grid: TorusGrid, ncomp: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != ncomp * grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {ncomp} components on {} nodes",
                data.len(),
                grid.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::ShapeMismatch(
                "non-finite torus function value".into(),
            ));
        }
        Ok(Self { grid, ncomp, data })
    }

    pub fn zeros(grid: TorusGrid, ncomp: usize) -> Self {
        let n = grid.len() * ncomp;
        Self {
            grid,
            ncomp,
            data: vec![C64::default(); n],
        }
    }

    /// Samples `f(x)` at Cartesian node positions.
    pub fn from_fn(grid: TorusGrid, ncomp: usize, f: impl Fn(&[f64]) -> Vec<C64>) -> Self {
        let n = grid.len();
        let mut data = vec![C64::default(); n * ncomp];
        for node in 0..n {
            let v = f(&grid.node(node));
            for c in 0..ncomp {
                data[c * n + node] = v[c];
            }
        }
        Self { grid, ncomp, data }
    }

    /// `e^{i<ξ,x>}` in component `comp`, where `ξ` is the grid mode with integer index `m`.
    pub fn plane_wave(grid: TorusGrid, ncomp: usize, comp: usize, m: &[i64]) -> Self {
        let d = grid.dim();
        let n = grid.len();
        let mut data = vec![C64::default(); n * ncomp];
        for node in 0..n {
            let t = grid.node_coords(node);
            let phase: f64 = (0..d)
                .map(|j| 2.0 * std::f64::consts::PI * m[j] as f64 * t[j] / grid.periods()[j] as f64)
                .sum();
            data[comp * n + node] = C64::from_polar(1.0, phase);
        }
        Self { grid, ncomp, data }
    }

    /// Random function with independent complex Gaussian Fourier coefficients
    /// on modes with `|m_j| <= band` (all modes when `band` is `None`).
    pub fn random(grid: TorusGrid, ncomp: usize, band: Option<i64>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.len();
        let sp = Spectral::new(&grid);
        let mut coeffs = vec![C64::default(); n * ncomp];
        for c in 0..ncomp {
            for idx in 0..n {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                let keep = band.is_none_or(|b| grid.mode_index(idx).iter().all(|m| m.abs() <= b));
                if keep {
                    coeffs[c * n + idx] = C64::new(re, im);
                }
            }
        }
        let mut data = vec![C64::default(); n * ncomp];
        sp.inverse_many(&coeffs, &mut data);
        Self { grid, ncomp, data }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[C64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// `<u, v> = ∫ Σ_c u_c conj(v_c)` by quadrature.
    pub fn inner(&self, other: &Self) -> C64 {
        let w = self.grid.volume() / self.grid.len() as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b.conj())
            .sum::<C64>()
            * w
    }

    pub fn l2(&self) -> f64 {
        let w = self.grid.volume() / self.grid.len() as f64;
        (self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() * w).sqrt()
    }

    /// L2, H1 and H^{-1} norms through the Fourier weights `(1+|ξ|²)^{±1/2}`.
    pub fn norms(&self) -> Norms {
        let sp = Spectral::new(&self.grid);
        self.norms_with(&sp)
    }

    pub fn norms_with(&self, sp: &Spectral) -> Norms {
        let n = self.grid.len();
        let mut coeffs = vec![C64::default(); self.data.len()];
        sp.forward_many(&self.data, &mut coeffs);
        let (mut l2, mut h1, mut hm1) = (0.0, 0.0, 0.0);
        for c in 0..self.ncomp {
            for (z, &x2) in coeffs[c * n..(c + 1) * n].iter().zip(sp.xi2()) {
                let a = z.norm_sqr();
                l2 += a;
                h1 += a * (1.0 + x2);
                hm1 += a / (1.0 + x2);
            }
        }
        let v = self.grid.volume();
        Norms {
            l2: (l2 * v).sqrt(),
            h1: (h1 * v).sqrt(),
            h_minus_1: (hm1 * v).sqrt(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other);
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= s);
        out
    }

    /// `self += a · x`.
    pub fn axpy(&mut self, a: C64, x: &Self) {
        assert_eq!(self.data.len(), x.data.len(), "axpy shape mismatch");
        for (y, x) in self.data.iter_mut().zip(&x.data) {
            *y += a * x;
        }
    }

    /// Pointwise product with a field on the same grid (`field.cols == ncomp`).
    pub fn multiply_by(&self, field: &PeriodicField) -> Result<Self> {
        if field.cols() != self.ncomp || field.nodes() != self.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} field applied to {} components",
                field.rows(),
                field.cols(),
                self.ncomp
            )));
        }
        let mut out = Self::zeros(self.grid.clone(), field.rows());
        field.apply_add(&self.data, &mut out.data);
        Ok(out)
    }
}
