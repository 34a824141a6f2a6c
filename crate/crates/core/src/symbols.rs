//! The first-order symbol `b(ξ) = Σ_l b_l ξ_l` and its ellipticity bounds.
//!
//! Convention: `D = -i∇`, so the mode `e^{i<ξ,x>}` has `D_l`-symbol `ξ_l` and
//! `b(D)` acts on Fourier coefficients as the `m × n` matrix `b(ξ)`.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fields::TorusFunction;
use crate::linalg::{hermitian_eigenvalues, CMat};
use crate::spectral::Spectral;

/// Constant matrices `b_1..b_d` (each `m × n`) with sampled ellipticity bounds.
#[derive(Debug, Clone)]
pub struct SymbolB {
    b_mats: Vec<CMat>,
    m: usize,
    n: usize,
    alpha0: f64,
    alpha1: f64,
}

/// Unit vectors on `S^{d-1}`: both signs in 1D, equispaced angles in 2D and a
/// Fibonacci lattice in 3D and above (projected from the first three axes).
fn sphere_samples(d: usize, count: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    let mut v = vec![0.0; d];
                    v[0] = r * a.cos();
                    v[1] = r * a.sin();
                    v[2] = z;
                    v
                })
                .collect()
        }
    }
}

fn eval_mats(b_mats: &[CMat], xi: &[f64]) -> CMat {
    let (m, n) = b_mats[0].shape();
    let mut out = CMat::zeros(m, n);
    for (b, &x) in b_mats.iter().zip(xi) {
        out += b * C64::new(x, 0.0);
    }
    out
}

fn alphas_at(b_mats: &[CMat], samples: usize) -> Result<(f64, f64)> {
    let d = b_mats.len();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for theta in sphere_samples(d, samples) {
        let bt = eval_mats(b_mats, &theta);
        let ev = hermitian_eigenvalues(&(bt.adjoint() * &bt));
        let min = ev[0];
        if min.max(0.0).sqrt() < 1e-10 {
            return Err(Error::RankDeficient {
                sigma_min: min.max(0.0).sqrt(),
            });
        }
        lo = lo.min(min);
        hi = hi.max(*ev.last().unwrap());
    }
    Ok((lo, hi))
}

/// Extremal eigenvalues of `b(θ)* b(θ)` over unit `θ`, refined by doubling the
/// sample count until both bounds move by less than `1e-3` (relative).
pub fn estimate_alphas(b_mats: &[CMat], samples: usize) -> Result<(f64, f64)> {
    let d = b_mats.len();
    let mut count = samples.max(100 * d);
    let mut prev = alphas_at(b_mats, count)?;
    if d == 1 {
        return Ok(prev);
    }
    loop {
        count *= 2;
        let next = alphas_at(b_mats, count)?;
        let change = ((next.0 - prev.0).abs() / prev.0).max((next.1 - prev.1).abs() / prev.1);
        prev = next;
        if change < 1e-3 || count > 1 << 18 {
            return Ok(prev);
        }
    }
}

impl SymbolB {
    pub fn new(b_mats: Vec<CMat>) -> Result<Self> {
        let Some(first) = b_mats.first() else {
            return Err(Error::InvalidConfig(
                "symbol needs at least one matrix".into(),
            ));
        };
        let (m, n) = first.shape();
        if b_mats.iter().any(|b| b.shape() != (m, n)) {
            return Err(Error::ShapeMismatch(
                "symbol matrices differ in shape".into(),
            ));
        }
        if m < n {
            return Err(Error::ShapeMismatch(format!(
                "symbol needs m >= n, got {m}x{n}"
            )));
        }
        let (alpha0, alpha1) = estimate_alphas(&b_mats, 100 * b_mats.len())?;
        Ok(Self {
            b_mats,
            m,
            n,
            alpha0,
            alpha1,
        })
    }

    /// `b(D) = D`: `b_l = e_l` as `d × 1` columns.
    pub fn gradient(d: usize) -> Self {
        let b_mats = (0..d)
            .map(|l| CMat::from_fn(d, 1, |r, _| C64::new(if r == l { 1.0 } else { 0.0 }, 0.0)))
            .collect();
        Self::new(b_mats).expect("gradient symbol is elliptic")
    }

    pub fn dim(&self) -> usize {
        self.b_mats.len()
    }

    /// Output components.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Input components.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    pub fn b_mats(&self) -> &[CMat] {
        &self.b_mats
    }

    /// `b(ξ)` as an `m × n` matrix.
    pub fn eval(&self, xi: &[f64]) -> CMat {
        eval_mats(&self.b_mats, xi)
    }

    /// Row-major `b(ξ)` for every mode of `sp`, `m*n` entries per mode.
    pub fn table(&self, sp: &Spectral) -> Vec<C64> {
        let mut t = Vec::with_capacity(sp.nmodes() * self.m * self.n);
        for idx in 0..sp.nmodes() {
            let b = self.eval(sp.xi(idx));
            for r in 0..self.m {
                for c in 0..self.n {
                    t.push(b[(r, c)]);
                }
            }
        }
        t
    }

    /// `out = b(ξ) u` on component-major coefficient arrays.
    pub fn apply_coeffs(&self, table: &[C64], u: &[C64], out: &mut [C64]) {
        let nm = u.len() / self.n;
        let (m, n) = (self.m, self.n);
        out.iter_mut().for_each(|z| *z = C64::default());
        for idx in 0..nm {
            let b = &table[idx * m * n..(idx + 1) * m * n];
            for r in 0..m {
                let mut acc = C64::default();
                for c in 0..n {
                    acc += b[r * n + c] * u[c * nm + idx];
                }
                out[r * nm + idx] = acc;
            }
        }
    }

    /// `out = b(ξ)* v` on component-major coefficient arrays.
    pub fn apply_adjoint_coeffs(&self, table: &[C64], v: &[C64], out: &mut [C64]) {
        let nm = v.len() / self.m;
        let (m, n) = (self.m, self.n);
        out.iter_mut().for_each(|z| *z = C64::default());
        for idx in 0..nm {
            let b = &table[idx * m * n..(idx + 1) * m * n];
            for c in 0..n {
                let mut acc = C64::default();
                for r in 0..m {
                    acc += b[r * n + c].conj() * v[r * nm + idx];
                }
                out[c * nm + idx] = acc;
            }
        }
    }
}

/// `b(D) u` for a torus function with `n` components.
pub fn apply_bd(b: &SymbolB, u: &TorusFunction) -> Result<TorusFunction> {
    apply_symbol(b, u, false)
}

/// `b(D)* v` for a torus function with `m` components.
pub fn apply_bd_adjoint(b: &SymbolB, v: &TorusFunction) -> Result<TorusFunction> {
    apply_symbol(b, v, true)
}

fn apply_symbol(b: &SymbolB, u: &TorusFunction, adjoint: bool) -> Result<TorusFunction> {
    let (cin, cout) = if adjoint { (b.m, b.n) } else { (b.n, b.m) };
    if u.ncomp() != cin || u.grid().dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "symbol expects {cin} components in dimension {}, got {} in dimension {}",
            b.dim(),
            u.ncomp(),
            u.grid().dim()
        )));
    }
    let sp = Spectral::new(u.grid());
    let nm = sp.nmodes();
    let table = b.table(&sp);
    let mut uh = vec![C64::default(); cin * nm];
    sp.forward_many(u.data(), &mut uh);
    let mut vh = vec![C64::default(); cout * nm];
    if adjoint {
        b.apply_adjoint_coeffs(&table, &uh, &mut vh);
    } else {
        b.apply_coeffs(&table, &uh, &mut vh);
    }
    let mut out = vec![C64::default(); cout * nm];
    sp.inverse_many(&vh, &mut out);
    TorusFunction::new(u.grid().clone(), cout, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Lattice, TorusGrid};
    use crate::linalg::c;
    use std::sync::Arc;

    #[test]
    fn gradient_alphas() {
        for d in 1..=3 {
            let b = SymbolB::gradient(d);
            assert!((b.alpha0() - 1.0).abs() < 1e-12);
            assert!((b.alpha1() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_symbol_alphas() {
        let b = SymbolB::new(vec![CMat::from_element(1, 1, c(2.0))]).unwrap();
        assert!((b.alpha0() - 4.0).abs() < 1e-12 && (b.alpha1() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_alphas() {
        let b1 = CMat::from_column_slice(2, 1, &[c(1.0), c(0.0)]);
        let b2 = CMat::from_column_slice(2, 1, &[c(0.0), c(2.0)]);
        let b = SymbolB::new(vec![b1, b2]).unwrap();
        assert!((b.alpha0() - 1.0).abs() < 1e-9);
        assert!((b.alpha1() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_detected() {
        let b1 = CMat::from_column_slice(1, 1, &[c(1.0)]);
        let b2 = CMat::from_column_slice(1, 1, &[c(0.0)]);
        assert!(matches!(
            SymbolB::new(vec![b1, b2]),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn derivative_of_plane_wave() {
        let lat = Arc::new(Lattice::new(vec![vec![2.0 * std::f64::consts::PI]]).unwrap());
        let grid = TorusGrid::cell(lat, vec![16]).unwrap();
        let u = TorusFunction::plane_wave(grid, 1, 0, &[3]);
        let b = SymbolB::new(vec![CMat::from_element(1, 1, c(2.0))]).unwrap();
        let v = apply_bd(&b, &u).unwrap();
        for (x, y) in v.data().iter().zip(u.data()) {
            assert!((x - y * 6.0).norm() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_constant_and_wave() {
        let grid = TorusGrid::cell(Arc::new(Lattice::cubic(2)), vec![8, 8]).unwrap();
        let one = TorusFunction::from_fn(grid.clone(), 1, |_| vec![c(1.0)]);
        let g = apply_bd(&SymbolB::gradient(2), &one).unwrap();
        assert!(g.data().iter().all(|z| z.norm() < 1e-14));
        let u = TorusFunction::plane_wave(grid.clone(), 1, 0, &[1, -2]);
        let g = apply_bd(&SymbolB::gradient(2), &u).unwrap();
        let k = [2.0 * std::f64::consts::PI, -4.0 * std::f64::consts::PI];
        for node in 0..grid.len() {
            for l in 0..2 {
                assert!((g.component(l)[node] - u.data()[node] * k[l]).norm() < 1e-11);
            }
        }
    }
}
