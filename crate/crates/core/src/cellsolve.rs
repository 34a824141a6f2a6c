//! Cell problems on one period and the constants of the effective operator.
//!
//! Both cell problems share the operator `b(D)* g b(D)` on mean-zero periodic
//! functions. It is discretized Fourier-Galerkin with pseudospectral products
//! (optionally 3/2 dealiased) and solved by conjugate gradients with the
//! constant-coefficient inverse `(b(ξ)* ḡ b(ξ))^{-1}` as preconditioner. The
//! zero mode is pinned to zero.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{apply_entries_add, PeriodicField};
use crate::krylov::{self, KrylovConfig};
use crate::lattice::TorusGrid;
use crate::linalg::{c, fro, hermitian_part, identity, min_eigenvalue, CMat};
use crate::spectral::Spectral;
use crate::symbols::SymbolB;

/// Dense eigensolves are used for the ground state up to this many nodes.
const DENSE_OMEGA_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy)]
pub struct CellConfig {
    pub krylov: KrylovConfig,
    /// Form coefficient products on a 3/2-padded grid.
    pub dealias: bool,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            krylov: KrylovConfig {
                rtol: 1e-10,
                maxiter: 5000,
                restart: 60,
            },
            dealias: false,
        }
    }
}

/// Diagnostics for one right-hand-side column of a cell problem.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ColumnResidual {
    pub iterations: usize,
    /// Relative residual in the coefficient (L2) norm.
    pub l2: f64,
    /// Relative residual with weights `(1+|ξ|²)^{-1/2}`.
    pub h_minus_1: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CellResiduals {
    pub lambda: Vec<ColumnResidual>,
    pub lambda_tilde: Vec<ColumnResidual>,
}

/// `u ↦ b(D)* g b(D) u (+ P u)` on Fourier coefficients of `n`-vector
/// functions over one cell.
struct CellForm<'a> {
    b: &'a SymbolB,
    sp: Spectral,
    table: Vec<C64>,
    g_phys: Vec<C64>,
    potential: Option<Vec<C64>>,
    precond: Vec<CMat>,
    band: Vec<bool>,
    pin_zero: bool,
}

impl<'a> CellForm<'a> {
    fn new(
        g: &PeriodicField,
        b: &'a SymbolB,
        potential: Option<&PeriodicField>,
        dealias: bool,
    ) -> Result<Self> {
        let m = b.m();
        if g.shape() != (m, m) {
            return Err(Error::ShapeMismatch(format!(
                "coefficient g must be {m}x{m}, got {:?}",
                g.shape()
            )));
        }
        if g.grid().dim() != b.dim() {
            return Err(Error::ShapeMismatch(
                "symbol and grid dimensions differ".into(),
            ));
        }
        let sp = if dealias {
            Spectral::dealiased(g.grid())
        } else {
            Spectral::new(g.grid())
        };
        let table = b.table(&sp);
        let g_phys = g.phys_data(&sp);
        let gbar = hermitian_part(&g.mean());
        let shift = potential.map_or(0.0, |p| p.mean()[(0, 0)].re.abs() + 1.0);
        let n = b.n();
        let precond = (0..sp.nmodes())
            .map(|idx| {
                let bx = b.eval(sp.xi(idx));
                let mut k = bx.adjoint() * &gbar * &bx;
                if potential.is_some() {
                    k += identity(n) * c(shift);
                }
                if idx == 0 && potential.is_none() {
                    identity(n)
                } else {
                    k.try_inverse().unwrap_or_else(|| identity(n))
                }
            })
            .collect();
        Ok(Self {
            b,
            table,
            g_phys,
            potential: potential.map(|p| p.phys_data(&sp)),
            pin_zero: potential.is_none(),
            band: g.grid().cell_band(g.grid().points()),
            precond,
            sp,
        })
    }

    /// Zeroes the Nyquist modes, which lie outside the symmetric band.
    fn project(&self, u: &mut [C64]) {
        let nm = self.band.len();
        for (i, z) in u.iter_mut().enumerate() {
            if !self.band[i % nm] {
                *z = C64::default();
            }
        }
    }

    fn apply(&self, u: &[C64], out: &mut [C64]) {
        let mut u = u.to_vec();
        self.project(&mut u);
        let u = &u[..];
        let (m, n) = (self.b.m(), self.b.n());
        let nm = self.sp.nmodes();
        let np = self.sp.nphys();
        let mut bu = vec![C64::default(); m * nm];
        self.b.apply_coeffs(&self.table, u, &mut bu);
        let mut phys = vec![C64::default(); m * np];
        self.sp.inverse_many(&bu, &mut phys);
        let mut w = vec![C64::default(); m * np];
        apply_entries_add(&self.g_phys, (m, m), np, &phys, &mut w, false);
        let mut wh = vec![C64::default(); m * nm];
        self.sp.forward_many(&w, &mut wh);
        self.b.apply_adjoint_coeffs(&self.table, &wh, out);
        if let Some(pot) = &self.potential {
            let mut p = vec![C64::default(); np];
            let mut ph = vec![C64::default(); nm];
            for comp in 0..n {
                self.sp.inverse(&u[comp * nm..(comp + 1) * nm], &mut p);
                for (x, v) in p.iter_mut().zip(pot) {
                    *x *= v;
                }
                self.sp.forward(&p, &mut ph);
                for (o, x) in out[comp * nm..(comp + 1) * nm].iter_mut().zip(&ph) {
                    *o += x;
                }
            }
        }
        if self.pin_zero {
            for comp in 0..n {
                out[comp * nm] = u[comp * nm];
            }
        }
        self.project(out);
    }

    fn precondition(&self, r: &[C64], z: &mut [C64]) {
        let n = self.b.n();
        let nm = self.sp.nmodes();
        for (idx, p) in self.precond.iter().enumerate() {
            for i in 0..n {
                let mut acc = C64::default();
                for j in 0..n {
                    acc += p[(i, j)] * r[j * nm + idx];
                }
                z[i * nm + idx] = acc;
            }
        }
    }

    fn solve(&self, rhs: &[C64], cfg: &KrylovConfig) -> Result<(Vec<C64>, ColumnResidual)> {
        let mut rhs = rhs.to_vec();
        self.project(&mut rhs);
        let rhs = &rhs[..];
        let mut x = vec![C64::default(); rhs.len()];
        let stats = krylov::cg(
            |u, out| self.apply(u, out),
            |r, z| self.precondition(r, z),
            rhs,
            &mut x,
            cfg,
        )?;
        let mut ax = vec![C64::default(); rhs.len()];
        self.apply(&x, &mut ax);
        let res: Vec<C64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let rel = |v: &[C64], w: &[C64]| {
            let den = krylov::norm(w);
            if den == 0.0 {
                0.0
            } else {
                krylov::norm(v) / den
            }
        };
        Ok((
            x,
            ColumnResidual {
                iterations: stats.iterations,
                l2: rel(&res, rhs),
                h_minus_1: rel(&self.hm1_weighted(&res), &self.hm1_weighted(rhs)),
            },
        ))
    }

    fn hm1_weighted(&self, v: &[C64]) -> Vec<C64> {
        let xi2 = self.sp.xi2();
        let nm = xi2.len();
        v.iter()
            .enumerate()
            .map(|(i, z)| z / (1.0 + xi2[i % nm]).sqrt())
            .collect()
    }
}

/// Coefficients of each column of `f` (component-major, `rows` components).
fn column_coeffs(f: &PeriodicField, col: usize, sp: &Spectral) -> Vec<C64> {
    let nm = sp.nmodes();
    let mut out = vec![C64::default(); f.rows() * nm];
    for r in 0..f.rows() {
        sp.forward(f.entry(r, col), &mut out[r * nm..(r + 1) * nm]);
    }
    out
}

/// Assembles a field from per-column coefficient blocks.
fn field_from_columns(grid: &TorusGrid, rows: usize, cols: &[Vec<C64>]) -> Result<PeriodicField> {
    let sp = Spectral::new(grid);
    let nm = sp.nmodes();
    let mut out = PeriodicField::zeros(grid.clone(), rows, cols.len());
    for (k, coeffs) in cols.iter().enumerate() {
        for r in 0..rows {
            sp.inverse(&coeffs[r * nm..(r + 1) * nm], out.entry_mut(r, k));
        }
    }
    Ok(out)
}

/// `b(D) F` applied column by column to an `n × p` field.
pub fn bd_field(b: &SymbolB, f: &PeriodicField) -> Result<PeriodicField> {
    if f.rows() != b.n() {
        return Err(Error::ShapeMismatch(format!(
            "b(D) expects {} rows, field has {}",
            b.n(),
            f.rows()
        )));
    }
    let sp = Spectral::new(f.grid());
    let nm = sp.nmodes();
    let table = b.table(&sp);
    let cols: Vec<Vec<C64>> = (0..f.cols())
        .map(|k| {
            let u = column_coeffs(f, k, &sp);
            let mut out = vec![C64::default(); b.m() * nm];
            b.apply_coeffs(&table, &u, &mut out);
            out
        })
        .collect();
    field_from_columns(f.grid(), b.m(), &cols)
}

/// Solution of the first cell problem.
#[derive(Debug, Clone)]
pub struct LambdaSolution {
    /// `Λ`, `n × m`, mean zero.
    pub lambda: PeriodicField,
    /// `b(D)Λ`, `m × m`.
    pub b_lambda: PeriodicField,
    /// `g̃ = g (b(D)Λ + 1)`.
    pub g_tilde: PeriodicField,
    pub g0: CMat,
    pub residuals: Vec<ColumnResidual>,
}

/// Solves `b(D)* g (b(D)Λ + 1_m) = 0` with `∫Λ = 0`.
pub fn solve_lambda(g: &PeriodicField, b: &SymbolB, cfg: &CellConfig) -> Result<LambdaSolution> {
    g.check_positive()?;
    let form = CellForm::new(g, b, None, cfg.dealias)?;
    let (m, nm, np) = (b.m(), form.sp.nmodes(), form.sp.nphys());
    let results: Vec<_> = (0..m)
        .into_par_iter()
        .map(|k| {
            let col = &form.g_phys;
            let mut gk = vec![C64::default(); m * nm];
            for r in 0..m {
                let e = &col[(r * m + k) * np..(r * m + k + 1) * np];
                form.sp.forward(e, &mut gk[r * nm..(r + 1) * nm]);
            }
            let mut rhs = vec![C64::default(); b.n() * nm];
            b.apply_adjoint_coeffs(&form.table, &gk, &mut rhs);
            rhs.iter_mut().for_each(|z| *z = -*z);
            form.solve(&rhs, &cfg.krylov)
        })
        .collect();
    let mut cols = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for r in results {
        let (x, res) = r?;
        cols.push(x);
        residuals.push(res);
    }
    let lambda = field_from_columns(g.grid(), b.n(), &cols)?;
    let b_lambda = bd_field(b, &lambda)?;
    let g_tilde = g.mul_projected(&b_lambda.add_constant(&identity(m))?, cfg.dealias)?;
    let g0 = g_tilde.mean();
    Ok(LambdaSolution {
        lambda,
        b_lambda,
        g_tilde,
        g0,
        residuals,
    })
}

/// Solves `b(D)* g b(D)Λ̃ + Σ D_j a_j* = 0` with `∫Λ̃ = 0`.
pub fn solve_lambda_tilde(
    g: &PeriodicField,
    a: &[PeriodicField],
    b: &SymbolB,
    cfg: &CellConfig,
) -> Result<(PeriodicField, Vec<ColumnResidual>)> {
    let n = b.n();
    if a.len() != b.dim() || a.iter().any(|aj| aj.shape() != (n, n)) {
        return Err(Error::ShapeMismatch(format!(
            "expected {} lower-order coefficients of shape {n}x{n}",
            b.dim()
        )));
    }
    g.check_positive()?;
    let form = CellForm::new(g, b, None, cfg.dealias)?;
    let plain = Spectral::new(g.grid());
    let nm = plain.nmodes();
    let adj: Vec<PeriodicField> = a.iter().map(|aj| aj.adjoint()).collect();
    let results: Vec<_> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rhs = vec![C64::default(); n * nm];
            for (j, aj) in adj.iter().enumerate() {
                let col = column_coeffs(aj, k, &plain);
                for r in 0..n {
                    for idx in 0..nm {
                        rhs[r * nm + idx] -= col[r * nm + idx] * plain.xi(idx)[j];
                    }
                }
            }
            form.solve(&rhs, &cfg.krylov)
        })
        .collect();
    let mut cols = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for r in results {
        let (x, res) = r?;
        cols.push(x);
        residuals.push(res);
    }
    Ok((field_from_columns(g.grid(), n, &cols)?, residuals))
}

/// `V = mean((b(D)Λ)* g b(D)Λ̃)` and `W = mean((b(D)Λ̃)* g b(D)Λ̃)`.
pub fn assemble_vw(
    g: &PeriodicField,
    lambda: &PeriodicField,
    lambda_tilde: &PeriodicField,
    b: &SymbolB,
    dealias: bool,
) -> Result<(CMat, CMat)> {
    let bl = bd_field(b, lambda)?;
    let blt = bd_field(b, lambda_tilde)?;
    let gblt = g.mul_projected(&blt, dealias)?;
    Ok((
        bl.adjoint().mul(&gblt)?.mean(),
        blt.adjoint().mul(&gblt)?.mean(),
    ))
}

/// Cell solutions and the constants derived from them.
#[derive(Debug, Clone)]
pub struct CellSolution {
    /// `Λ`, `n × m`.
    pub lambda: PeriodicField,
    /// `Λ̃`, `n × n`.
    pub lambda_tilde: PeriodicField,
    /// `b(D)Λ`, `m × m`.
    pub b_lambda: PeriodicField,
    /// `b(D)Λ̃`, `m × n`.
    pub b_lambda_tilde: PeriodicField,
    /// `g̃ = g(b(D)Λ + 1)`, `m × m`.
    pub g_tilde: PeriodicField,
    /// `g b(D)Λ̃`, `m × n`.
    pub g_b_lambda_tilde: PeriodicField,
    pub g0: CMat,
    pub v: CMat,
    pub w: CMat,
    pub residuals: CellResiduals,
}

/// Solves both cell problems and assembles `g⁰`, `V`, `W`.
pub fn solve_cell(
    g: &PeriodicField,
    a: &[PeriodicField],
    b: &SymbolB,
    cfg: &CellConfig,
) -> Result<CellSolution> {
    let ls = solve_lambda(g, b, cfg)?;
    let (lambda_tilde, lt_res) = solve_lambda_tilde(g, a, b, cfg)?;
    let b_lambda_tilde = bd_field(b, &lambda_tilde)?;
    let g_b_lambda_tilde = g.mul_projected(&b_lambda_tilde, cfg.dealias)?;
    let v = ls.b_lambda.adjoint().mul(&g_b_lambda_tilde)?.mean();
    let w = b_lambda_tilde.adjoint().mul(&g_b_lambda_tilde)?.mean();
    Ok(CellSolution {
        lambda: ls.lambda,
        lambda_tilde,
        b_lambda: ls.b_lambda,
        b_lambda_tilde,
        g_tilde: ls.g_tilde,
        g_b_lambda_tilde,
        g0: ls.g0,
        v,
        w,
        residuals: CellResiduals {
            lambda: ls.residuals,
            lambda_tilde: lt_res,
        },
    })
}

/// Constant-coefficient effective operator `B⁰ = 𝓑⁰ + c₅Q̄₀` with symbol
/// `L₀(ξ) = b(ξ)*g⁰b(ξ) − b(ξ)*V − V*b(ξ) + Σ (a_j+a_j*)‾ ξ_j + Q̄ − W + c₅Q̄₀`.
#[derive(Debug, Clone)]
pub struct EffectiveOperator {
    pub b: SymbolB,
    pub g0: CMat,
    pub v: CMat,
    /// `mean(a_j + a_j*)` for each direction.
    pub abar: Vec<CMat>,
    pub qbar: CMat,
    pub w: CMat,
    pub q0bar: CMat,
    pub c5: f64,
    /// Reference shift for `L(ξ) = L₀(ξ) + λ₀ Q̄₀`.
    pub lambda0: f64,
}

impl EffectiveOperator {
    /// Symbol of `𝓑⁰` (without the `c₅` shift).
    pub fn unshifted(&self, xi: &[f64]) -> CMat {
        let bx = self.b.eval(xi);
        let mut s = bx.adjoint() * &self.g0 * &bx;
        let bv = bx.adjoint() * &self.v;
        s -= &bv + bv.adjoint();
        for (a, &x) in self.abar.iter().zip(xi) {
            s += a * c(x);
        }
        s += &self.qbar - &self.w;
        s
    }

    pub fn l0(&self, xi: &[f64]) -> CMat {
        self.unshifted(xi) + &self.q0bar * c(self.c5)
    }

    pub fn l(&self, xi: &[f64]) -> CMat {
        self.l0(xi) + &self.q0bar * c(self.lambda0)
    }

    pub fn n(&self) -> usize {
        self.b.n()
    }

    /// Same operator with a different shift `c₅` (and `λ₀ = c₅ + 1`).
    pub fn with_shift(&self, c5: f64) -> Self {
        Self {
            c5,
            lambda0: c5 + 1.0,
            ..self.clone()
        }
    }
}

fn relative_skew(m: &CMat) -> f64 {
    let scale = fro(m).max(1e-300);
    fro(&(m - m.adjoint())) / scale
}

/// Assembles the effective operator from cell data and the means of the
/// lower-order coefficients. `λ₀` is set to `c₅ + 1`.
pub fn build_effective(
    cell: &CellSolution,
    a: &[PeriodicField],
    q: &PeriodicField,
    q0: &PeriodicField,
    b: &SymbolB,
    c5: f64,
) -> Result<EffectiveOperator> {
    let n = b.n();
    if q.shape() != (n, n) || q0.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!("Q and Q0 must be {n}x{n}")));
    }
    q0.check_positive()?;
    let abar: Vec<CMat> = a.iter().map(|aj| aj.mean() + aj.mean().adjoint()).collect();
    let qbar = q.mean();
    let q0bar = q0.mean();
    let mut deviation = 0.0_f64;
    for m in [&cell.g0, &cell.w, &qbar, &q0bar] {
        if fro(m) > 1e-14 {
            deviation = deviation.max(relative_skew(m));
        }
    }
    if deviation > 1e-10 {
        return Err(Error::NotHermitian { deviation });
    }
    Ok(EffectiveOperator {
        b: b.clone(),
        g0: hermitian_part(&cell.g0),
        v: cell.v.clone(),
        abar,
        qbar: hermitian_part(&qbar),
        w: hermitian_part(&cell.w),
        q0bar: hermitian_part(&q0bar),
        c5,
        lambda0: c5 + 1.0,
    })
}

/// Lower-order coefficients of a magnetic Schrödinger operator
/// `(D − A)* g (D − A) + ε^{-1} v + 𝒱` in divergence form.
#[derive(Debug, Clone)]
pub struct SchrodingerCoefficients {
    /// `a_j = −η_j + iγ_j` with `η = gA`, `γ = −∇Φ`, `ΔΦ = v`.
    pub a_fields: Vec<PeriodicField>,
    /// `Q = 𝒱 + <gA, A>`.
    pub q: PeriodicField,
    pub phi: PeriodicField,
    pub eta: PeriodicField,
}

/// Builds `a_j` and `Q` from the vector potential `A` (`d × 1`), the mean-zero
/// potential `v`, the bounded potential `𝒱` and the metric `g` (`d × d`).
pub fn schrodinger_coefficients(
    a_pot: &PeriodicField,
    v: &PeriodicField,
    vcal: &PeriodicField,
    g: &PeriodicField,
) -> Result<SchrodingerCoefficients> {
    let grid = g.grid();
    let d = grid.dim();
    if g.shape() != (d, d)
        || a_pot.shape() != (d, 1)
        || v.shape() != (1, 1)
        || vcal.shape() != (1, 1)
    {
        return Err(Error::ShapeMismatch(
            "Schrödinger data needs g: dxd, A: dx1, v and V: scalar".into(),
        ));
    }
    let sp = Spectral::new(grid);
    let nm = sp.nmodes();
    let vmean = v.mean()[(0, 0)].norm();
    let vnorm = (v.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / nm as f64).sqrt();
    if vmean > 1e-10 * vnorm.max(1e-300) {
        return Err(Error::NonzeroMean { mean: vmean });
    }
    let mut vh = vec![C64::default(); nm];
    sp.forward(v.data(), &mut vh);
    let xi2 = sp.xi2();
    let phi_h: Vec<C64> = (0..nm)
        .map(|i| {
            if i == 0 {
                C64::default()
            } else {
                -vh[i] / xi2[i]
            }
        })
        .collect();
    let mut phi = PeriodicField::zeros(grid.clone(), 1, 1);
    sp.inverse(&phi_h, phi.entry_mut(0, 0));
    let eta = g.mul(a_pot)?;
    let mut a_fields = Vec::with_capacity(d);
    let mut buf = vec![C64::default(); nm];
    for j in 0..d {
        for (i, z) in buf.iter_mut().enumerate() {
            *z = -C64::i() * sp.xi(i)[j] * phi_h[i];
        }
        let mut gamma = vec![C64::default(); nm];
        sp.inverse(&buf, &mut gamma);
        let data = eta
            .entry(j, 0)
            .iter()
            .zip(&gamma)
            .map(|(e, gm)| -e + C64::i() * gm.re)
            .collect();
        a_fields.push(PeriodicField::new(grid.clone(), 1, 1, data)?);
    }
    let q = vcal.add(&a_pot.adjoint().mul(&eta)?)?;
    Ok(SchrodingerCoefficients {
        a_fields,
        q,
        phi,
        eta,
    })
}

/// Effective potentials `A⁰ = (g⁰)^{-1}(Re V + mean(gA))` and
/// `𝒱⁰ = mean 𝒱 + mean<gA, A> − <g⁰A⁰, A⁰> − W`, so that
/// `B⁰ = (D − A⁰)* g⁰ (D − A⁰) + 𝒱⁰ + c₅Q̄₀`.
pub fn schrodinger_effective_potentials(
    coeffs: &SchrodingerCoefficients,
    vcal: &PeriodicField,
    cell: &CellSolution,
) -> Result<(Vec<f64>, f64)> {
    let d = cell.g0.nrows();
    let g0 = cell.g0.map(|z| z.re);
    let eta_bar = coeffs.eta.mean();
    let rhs = nalgebra::DVector::from_fn(d, |r, _| cell.v[(r, 0)].re + eta_bar[(r, 0)].re);
    let a0 = g0
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularPoint { node: 0 })?;
    let q_extra = coeffs.q.sub(vcal)?.mean()[(0, 0)].re;
    let v0 =
        vcal.mean()[(0, 0)].re + q_extra - (a0.transpose() * &g0 * &a0)[(0, 0)] - cell.w[(0, 0)].re;
    Ok((a0.iter().copied().collect(), v0))
}

/// Positive periodic ground state of `D* ǧ D + v̌` on one cell.
#[derive(Debug, Clone)]
pub struct OmegaSolution {
    /// `ω > 0` with `mean ω² = 1`.
    pub omega: PeriodicField,
    pub lambda_min: f64,
    /// `v̌ − λ_min`, for which `ω` solves the equation with eigenvalue zero.
    pub v_shifted: PeriodicField,
    /// `‖Hω − λω‖ / ‖ω‖` relative to the largest symbol value of `H`.
    pub residual: f64,
}

/// Lowest periodic eigenpair of `D* ǧ D + v̌`. Dense for small cells,
/// preconditioned LOPCG otherwise.
pub fn solve_omega(
    g_check: &PeriodicField,
    v_check: &PeriodicField,
    dealias: bool,
) -> Result<OmegaSolution> {
    let grid = g_check.grid();
    let d = grid.dim();
    if v_check.shape() != (1, 1) {
        return Err(Error::ShapeMismatch("potential must be scalar".into()));
    }
    g_check.check_positive()?;
    let b = SymbolB::gradient(d);
    let form = CellForm::new(g_check, &b, Some(v_check), dealias)?;
    let nm = form.sp.nmodes();
    let (lambda, coeffs) = if nm <= DENSE_OMEGA_LIMIT {
        let modes: Vec<usize> = (0..nm).filter(|&i| form.band[i]).collect();
        let mut h = CMat::zeros(modes.len(), modes.len());
        let mut e = vec![C64::default(); nm];
        let mut col = vec![C64::default(); nm];
        for (j, &mj) in modes.iter().enumerate() {
            e[mj] = c(1.0);
            form.apply(&e, &mut col);
            e[mj] = C64::default();
            for (i, &mi) in modes.iter().enumerate() {
                h[(i, j)] = col[mi];
            }
        }
        let eig = hermitian_part(&h).symmetric_eigen();
        let (k, &lam) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty cell");
        let mut x = vec![C64::default(); nm];
        for (i, &mi) in modes.iter().enumerate() {
            x[mi] = eig.eigenvectors[(i, k)];
        }
        (lam, x)
    } else {
        let mut x0 = vec![C64::default(); nm];
        x0[0] = c(1.0);
        let (lam, x, _) = krylov::lopcg_smallest(
            |u, out| form.apply(u, out),
            |u, out| out.copy_from_slice(u),
            |r, z| form.precondition(r, z),
            &x0,
            1e-10,
            5000,
        )?;
        (lam, x)
    };
    let mut hx = vec![C64::default(); nm];
    form.apply(&coeffs, &mut hx);
    let residual = hx
        .iter()
        .zip(&coeffs)
        .map(|(a, x)| (a - x * lambda).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / krylov::norm(&coeffs);
    let xi2_max = form.sp.xi2().iter().copied().fold(0.0, f64::max);
    let residual = residual / (g_check.max_abs() * xi2_max + v_check.max_abs()).max(1.0);
    let plain = Spectral::new(grid);
    let mut values = vec![C64::default(); nm];
    plain.inverse(&coeffs, &mut values);
    let peak = values
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .expect("nonempty cell");
    let phase = peak.conj() / peak.norm();
    let real: Vec<f64> = values.iter().map(|z| (z * phase).re).collect();
    if real.iter().any(|&x| x <= 0.0) {
        return Err(Error::SignFlip);
    }
    let scale = (real.iter().map(|x| x * x).sum::<f64>() / nm as f64).sqrt();
    let omega = PeriodicField::new(
        grid.clone(),
        1,
        1,
        real.iter().map(|x| c(x / scale)).collect(),
    )?;
    let v_shifted = v_check.map(|z| z - lambda);
    Ok(OmegaSolution {
        omega,
        lambda_min: lambda,
        v_shifted,
        residual,
    })
}

/// Smallest eigenvalue of `g⁰ − g̲` and of `ḡ − g⁰` (both should be ≥ 0).
pub fn voigt_reuss_gaps(g: &PeriodicField, g0: &CMat) -> Result<(f64, f64)> {
    let lower = g.harmonic_mean()?;
    let upper = g.mean();
    Ok((min_eigenvalue(&(g0 - lower)), min_eigenvalue(&(upper - g0))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn line(points: usize) -> TorusGrid {
        TorusGrid::cell(Arc::new(Lattice::cubic(1)), vec![points]).unwrap()
    }

    fn two_phase(grid: TorusGrid) -> PeriodicField {
        PeriodicField::scalar_fn(grid, |t| if t[0] < 0.5 { 1.0 } else { 4.0 })
    }

    #[test]
    fn constant_coefficient_has_zero_corrector() {
        let grid = TorusGrid::cell(Arc::new(Lattice::cubic(2)), vec![8, 8]).unwrap();
        let gm = crate::linalg::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let g = PeriodicField::constant(grid, &gm);
        let s = solve_lambda(&g, &SymbolB::gradient(2), &CellConfig::default()).unwrap();
        assert!(s.lambda.max_abs() < 1e-12);
        assert!(fro(&(&s.g0 - &gm)) < 1e-12);
    }

    #[test]
    fn two_phase_line_gives_harmonic_mean() {
        let g = two_phase(line(256));
        let s = solve_lambda(&g, &SymbolB::gradient(1), &CellConfig::default()).unwrap();
        assert!((s.g0[(0, 0)].re - 1.6).abs() < 1e-6, "g0 = {}", s.g0);
        // Λ = iψ with ψ' = 1.6/g − 1: a triangle wave with extremes ∓0.15.
        let psi: Vec<f64> = s.lambda.data().iter().map(|z| z.im).collect();
        assert!(s.lambda.data().iter().all(|z| z.re.abs() < 1e-10));
        assert!((psi[0] + 0.15).abs() < 5e-3, "psi(0) = {}", psi[0]);
        assert!((psi[128] - 0.15).abs() < 5e-3, "psi(1/2) = {}", psi[128]);
        assert!(s.lambda.mean()[(0, 0)].norm() < 1e-12);
        assert!((s.g_tilde.mean()[(0, 0)] - s.g0[(0, 0)]).norm() < 1e-12);
        assert!(s.residuals[0].h_minus_1 < 1e-10);
    }

    #[test]
    fn laminate_rule() {
        let grid = TorusGrid::cell(Arc::new(Lattice::cubic(2)), vec![64, 16]).unwrap();
        let g = PeriodicField::from_fn(grid, 2, 2, |t| {
            let s = if t[0] < 0.5 { 1.0 } else { 4.0 };
            identity(2) * c(s)
        });
        let s = solve_lambda(&g, &SymbolB::gradient(2), &CellConfig::default()).unwrap();
        assert!((s.g0[(0, 0)].re - 1.6).abs() < 1e-6);
        assert!((s.g0[(1, 1)].re - 2.5).abs() < 1e-9);
        assert!(s.g0[(0, 1)].norm() < 1e-9);
    }

    #[test]
    fn lambda_tilde_for_cosine_coefficient() {
        let grid = line(64);
        let g = PeriodicField::scalar_fn(grid.clone(), |_| 1.0);
        let a = PeriodicField::scalar_fn(grid.clone(), |t| (2.0 * PI * t[0]).cos());
        let cell = solve_cell(&g, &[a], &SymbolB::gradient(1), &CellConfig::default()).unwrap();
        for node in 0..64 {
            let x = grid.node(node)[0];
            let want = C64::new(0.0, -(2.0 * PI * x).sin() / (2.0 * PI));
            assert!((cell.lambda_tilde.data()[node] - want).norm() < 1e-12);
        }
        assert!((cell.w[(0, 0)].re - 0.5).abs() < 1e-12);
        assert!(cell.v.norm() < 1e-12);
    }

    #[test]
    fn constant_lower_order_terms_give_zero_lambda_tilde() {
        let grid = line(16);
        let g = two_phase(grid.clone());
        let a = PeriodicField::constant(grid, &CMat::from_element(1, 1, C64::new(0.3, -0.2)));
        let (lt, _) =
            solve_lambda_tilde(&g, &[a], &SymbolB::gradient(1), &CellConfig::default()).unwrap();
        assert!(lt.max_abs() < 1e-14);
    }

    #[test]
    fn assemble_vw_dropouts() {
        let grid = line(32);
        let g = two_phase(grid.clone());
        let zero = PeriodicField::zeros(grid.clone(), 1, 1);
        let lt = PeriodicField::scalar_fn(grid, |t| (2.0 * PI * t[0]).sin());
        let b = SymbolB::gradient(1);
        let (v, _) = assemble_vw(&g, &zero, &lt, &b, false).unwrap();
        assert!(v.norm() < 1e-14);
        let (v, w) = assemble_vw(&g, &lt, &zero, &b, false).unwrap();
        assert!(v.norm() < 1e-14 && w.norm() < 1e-14);
    }

    #[test]
    fn effective_symbol_of_laplacian() {
        let grid = line(16);
        let g = PeriodicField::scalar_fn(grid.clone(), |_| 1.0);
        let zero = PeriodicField::zeros(grid.clone(), 1, 1);
        let one = PeriodicField::scalar_fn(grid, |_| 1.0);
        let b = SymbolB::gradient(1);
        let cell = solve_cell(&g, std::slice::from_ref(&zero), &b, &CellConfig::default()).unwrap();
        let eff =
            build_effective(&cell, std::slice::from_ref(&zero), &zero, &one, &b, 0.7).unwrap();
        for xi in [0.0, 1.5, -3.0] {
            assert!((eff.l0(&[xi])[(0, 0)].re - (xi * xi + 0.7)).abs() < 1e-12);
            assert!((eff.l(&[xi])[(0, 0)].re - (xi * xi + 2.4)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_phase_effective_symbol() {
        let grid = line(256);
        let g = two_phase(grid.clone());
        let zero = PeriodicField::zeros(grid.clone(), 1, 1);
        let one = PeriodicField::scalar_fn(grid, |_| 1.0);
        let b = SymbolB::gradient(1);
        let cell = solve_cell(&g, std::slice::from_ref(&zero), &b, &CellConfig::default()).unwrap();
        let eff =
            build_effective(&cell, std::slice::from_ref(&zero), &zero, &one, &b, 0.25).unwrap();
        assert!((eff.l0(&[2.0])[(0, 0)].re - (1.6 * 4.0 + 0.25)).abs() < 1e-6);
    }

    #[test]
    fn non_hermitian_potential_is_rejected() {
        let grid = TorusGrid::cell(Arc::new(Lattice::cubic(1)), vec![8]).unwrap();
        let b = SymbolB::new(vec![crate::linalg::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]])]).unwrap();
        let g = PeriodicField::constant(grid.clone(), &identity(2));
        let zero = PeriodicField::zeros(grid.clone(), 2, 2);
        let cell = solve_cell(&g, std::slice::from_ref(&zero), &b, &CellConfig::default()).unwrap();
        let q = PeriodicField::constant(
            grid.clone(),
            &crate::linalg::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]),
        );
        let q0 = PeriodicField::constant(grid, &identity(2));
        assert!(matches!(
            build_effective(&cell, &[zero], &q, &q0, &b, 0.0),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn poisson_potential_single_mode() {
        let grid = line(32);
        let g = PeriodicField::scalar_fn(grid.clone(), |_| 1.0);
        let v = PeriodicField::scalar_fn(grid.clone(), |t| (2.0 * PI * t[0]).cos());
        let zero = PeriodicField::zeros(grid.clone(), 1, 1);
        let s = schrodinger_coefficients(&zero, &v, &zero, &g).unwrap();
        for node in 0..32 {
            let x = grid.node(node)[0];
            let phi = -(2.0 * PI * x).cos() / (4.0 * PI * PI);
            let gamma = -(2.0 * PI * x).sin() / (2.0 * PI);
            assert!((s.phi.data()[node].re - phi).abs() < 1e-14);
            assert!((s.a_fields[0].data()[node] - C64::new(0.0, gamma)).norm() < 1e-14);
        }
        assert!(s.q.max_abs() < 1e-15);
    }

    #[test]
    fn nonzero_mean_potential_is_rejected() {
        let grid = line(16);
        let g = PeriodicField::scalar_fn(grid.clone(), |_| 1.0);
        let v = PeriodicField::scalar_fn(grid.clone(), |t| 1.0 + (2.0 * PI * t[0]).cos());
        let zero = PeriodicField::zeros(grid, 1, 1);
        assert!(matches!(
            schrodinger_coefficients(&zero, &v, &zero, &g),
            Err(Error::NonzeroMean { .. })
        ));
    }

    #[test]
    fn constant_vector_potential() {
        let grid = TorusGrid::cell(Arc::new(Lattice::cubic(2)), vec![8, 8]).unwrap();
        let gm = crate::linalg::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]]);
        let g = PeriodicField::constant(grid.clone(), &gm);
        let a =
            PeriodicField::constant(grid.clone(), &crate::linalg::from_rows(&[&[0.5], &[-1.0]]));
        let vcal = PeriodicField::scalar_fn(grid.clone(), |_| 0.25);
        let zero = PeriodicField::zeros(grid, 1, 1);
        let s = schrodinger_coefficients(&a, &zero, &vcal, &g).unwrap();
        let q = 0.25 + 2.0 * 0.25 + 3.0;
        assert!(s.q.data().iter().all(|z| (z.re - q).abs() < 1e-14));
        assert!(s.a_fields[0]
            .data()
            .iter()
            .all(|z| (z - c(-1.0)).norm() < 1e-14));
        assert!(s.a_fields[1]
            .data()
            .iter()
            .all(|z| (z - c(3.0)).norm() < 1e-14));
        let cell = solve_cell(
            &g,
            &s.a_fields,
            &SymbolB::gradient(2),
            &CellConfig::default(),
        )
        .unwrap();
        let (a0, v0) = schrodinger_effective_potentials(&s, &vcal, &cell).unwrap();
        assert!((a0[0] - 0.5).abs() < 1e-12 && (a0[1] + 1.0).abs() < 1e-12);
        assert!((v0 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn schrodinger_symbol_matches_magnetic_form() {
        let grid = line(128);
        let g = two_phase(grid.clone());
        let a = PeriodicField::scalar_fn(grid.clone(), |t| 0.3 + 0.5 * (2.0 * PI * t[0]).sin());
        let v = PeriodicField::scalar_fn(grid.clone(), |t| {
            (2.0 * PI * t[0]).cos() - 0.5 * (4.0 * PI * t[0]).sin()
        });
        let vcal = PeriodicField::scalar_fn(grid.clone(), |t| 1.0 + 0.2 * (2.0 * PI * t[0]).cos());
        let q0 = PeriodicField::scalar_fn(grid, |t| 1.0 + 0.3 * (2.0 * PI * t[0]).cos());
        let b = SymbolB::gradient(1);
        let s = schrodinger_coefficients(&a, &v, &vcal, &g).unwrap();
        let cell = solve_cell(&g, &s.a_fields, &b, &CellConfig::default()).unwrap();
        let eff = build_effective(&cell, &s.a_fields, &s.q, &q0, &b, 0.5).unwrap();
        let (a0, v0) = schrodinger_effective_potentials(&s, &vcal, &cell).unwrap();
        let g0 = eff.g0[(0, 0)].re;
        for xi in [-7.0, -1.0, 0.0, 2.5, 9.0] {
            let want = (xi - a0[0]).powi(2) * g0 + v0 + 0.5 * eff.q0bar[(0, 0)].re;
            assert!((eff.l0(&[xi])[(0, 0)].re - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
        let wmin = min_eigenvalue(&eff.w);
        assert!(wmin >= -1e-10 * fro(&eff.w));
    }

    #[test]
    fn flat_potential_ground_state() {
        let grid = line(32);
        let g = PeriodicField::scalar_fn(grid.clone(), |_| 1.0);
        let zero = PeriodicField::zeros(grid, 1, 1);
        let s = solve_omega(&g, &zero, false).unwrap();
        assert!(s.lambda_min.abs() < 1e-12);
        assert!(s.omega.data().iter().all(|z| (z.re - 1.0).abs() < 1e-12));
    }

    #[test]
    fn mathieu_ground_state_and_shift() {
        let grid = line(256);
        let g = PeriodicField::scalar_fn(grid.clone(), |_| 1.0);
        let v = PeriodicField::scalar_fn(grid, |t| (2.0 * PI * t[0]).cos());
        let s = solve_omega(&g, &v, false).unwrap();
        // Second-order perturbation: λ ≈ −(1/2)²/(4π²) · 2 = −1/(8π²).
        assert!(s.lambda_min < 0.0 && (s.lambda_min + 1.0 / (8.0 * PI * PI)).abs() < 1e-4);
        assert!(s.residual < 1e-10, "residual {}", s.residual);
        let mean_sq = s.omega.data().iter().map(|z| z.re * z.re).sum::<f64>() / 256.0;
        assert!((mean_sq - 1.0).abs() < 1e-12);
        let again = solve_omega(&g, &s.v_shifted, false).unwrap();
        assert!(again.lambda_min.abs() < 1e-9);
    }

    #[test]
    fn iterative_ground_state_matches_dense() {
        let g1 = line(256);
        let g2 = line(1024);
        let run = |grid: TorusGrid| {
            let g = PeriodicField::scalar_fn(grid.clone(), |t| 1.5 + 0.5 * (2.0 * PI * t[0]).sin());
            let v = PeriodicField::scalar_fn(grid, |t| 3.0 * (2.0 * PI * t[0]).cos());
            solve_omega(&g, &v, false).unwrap()
        };
        let dense = run(g1);
        let iter = run(g2);
        assert!((dense.lambda_min - iter.lambda_min).abs() < 1e-8);
        for i in 0..256 {
            assert!((dense.omega.data()[i] - iter.omega.data()[4 * i]).norm() < 1e-6);
        }
    }
}
