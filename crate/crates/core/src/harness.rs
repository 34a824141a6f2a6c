//! Two-parameter sweeps over `(ε, ζ)`: discrepancy maps, operator-norm
//! measurement, rate fits and verdicts.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::cellsolve::{
    build_effective, schrodinger_coefficients, solve_cell, solve_omega, CellConfig, CellSolution,
    EffectiveOperator, OmegaSolution,
};
use crate::config::{eps_to_k, ModelSpec, RunConfig, Series, SpecEntry, SpecName, Tolerances};
use crate::corrector::{CorrectorConfig, CorrectorOps};
use crate::error::{Error, Result};
use crate::fields::{PeriodicField, TorusFunction};
use crate::krylov::{self, KrylovConfig};
use crate::lattice::TorusGrid;
use crate::linalg::CMat;
use crate::resolvent::{
    calibrate_shift, effective_bottom, estimate_opnorm, from_coeffs, pencil_bottom,
    solve_oscillatory_coeffs, to_coeffs, Coefficients, EffectiveResolvent, LinearMap, NormKind,
    OpNormConfig, OscillatoryOperator, ShiftCalibration,
};
use crate::smoothing::SmoothingKind;
use crate::spectral::Spectral;

/// `c(φ) = |sin φ|^{-1}` near the positive half-line, `1` on `[π/2, 3π/2]`.
pub fn c_phi(phi: f64) -> Result<f64> {
    if !(phi > 0.0 && phi < 2.0 * PI) {
        return Err(Error::OutOfRange { value: phi });
    }
    if (PI / 2.0..=1.5 * PI).contains(&phi) {
        Ok(1.0)
    } else {
        Ok(1.0 / phi.sin().abs())
    }
}

/// `ϱ(ζ) = c(ψ)² |ζ − c_♭|^{-2}` for `|ζ − c_♭| < 1`, `c(ψ)²` otherwise,
/// with `ψ = arg(ζ − c_♭) ∈ (0, 2π)`.
pub fn rho_zeta(zeta: C64, c_flat: f64) -> Result<f64> {
    let w = zeta - c_flat;
    if w.im == 0.0 && w.re >= 0.0 {
        return Err(Error::OutOfRange { value: zeta.re });
    }
    let mut psi = w.arg();
    if psi <= 0.0 {
        psi += 2.0 * PI;
    }
    let c2 = c_phi(psi)?.powi(2);
    let r = w.norm();
    Ok(if r < 1.0 { c2 / (r * r) } else { c2 })
}

fn arg_positive(z: C64) -> f64 {
    let a = z.arg();
    if a <= 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

/// How the bound depends on `ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaFactor {
    /// `|ζ|^{-1/2}`.
    InvSqrt,
    One,
    /// `ϱ(ζ)`.
    Rho,
    /// `ϱ(ζ) |ζ + 1|^{1/2}`.
    RhoShifted,
}

/// Expected behaviour in `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsLaw {
    /// Fitted slope within `exponent ± tol`.
    Slope { exponent: f64, tol: f64 },
    /// Fitted slope below `max`.
    Below { max: f64 },
}

/// One estimate: the discrepancy map, its norm pair and the predicted law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateSpec {
    pub name: SpecName,
    pub norm_in: NormKind,
    pub norm_out: NormKind,
    pub eps_law: EpsLaw,
    pub zeta_factor: ZetaFactor,
    /// Whether the bound carries `c(φ)²`.
    pub phi_factor: bool,
}

impl EstimateSpec {
    pub fn of(name: SpecName, tol: &Tolerances) -> Self {
        use NormKind::*;
        let slope = |t: f64| EpsLaw::Slope {
            exponent: 1.0,
            tol: t,
        };
        let (norm_in, norm_out, eps_law, zeta_factor, phi_factor) = match name {
            SpecName::L2Main => (L2, L2, slope(tol.eps_slope), ZetaFactor::InvSqrt, true),
            SpecName::H1Corrector => (L2, H1, slope(tol.eps_slope), ZetaFactor::One, true),
            SpecName::DCorrector => (L2, DSemi, slope(tol.eps_slope), ZetaFactor::One, true),
            SpecName::Flux => (L2, L2, slope(tol.eps_slope), ZetaFactor::One, true),
            SpecName::L2Rho => (L2, L2, slope(tol.eps_slope), ZetaFactor::Rho, false),
            SpecName::H1Rho => (
                L2,
                DSemi,
                slope(tol.eps_slope),
                ZetaFactor::RhoShifted,
                false,
            ),
            SpecName::FluxRho => (L2, L2, slope(tol.eps_slope), ZetaFactor::RhoShifted, false),
            SpecName::SchrodingerSandwich => {
                (L2, L2, slope(tol.eps_slope), ZetaFactor::InvSqrt, true)
            }
            SpecName::DNoCorrector => {
                (L2, DSemi, EpsLaw::Below { max: 0.3 }, ZetaFactor::One, true)
            }
            SpecName::SmoothingGap => (L2, H1, slope(tol.smoothing_slope), ZetaFactor::One, true),
            SpecName::WeightOscillation => (
                H1,
                HMinus1,
                slope(tol.smoothing_slope),
                ZetaFactor::One,
                false,
            ),
        };
        Self {
            name,
            norm_in,
            norm_out,
            eps_law,
            zeta_factor,
            phi_factor,
        }
    }

    /// The `ζ`- and `φ`-dependent part of the bound.
    pub fn zeta_weight(&self, zeta: C64, c_flat: f64) -> Result<f64> {
        let f = match self.zeta_factor {
            ZetaFactor::InvSqrt => zeta.norm().powf(-0.5),
            ZetaFactor::One => 1.0,
            ZetaFactor::Rho => rho_zeta(zeta, c_flat)?,
            ZetaFactor::RhoShifted => rho_zeta(zeta, c_flat)? * (zeta + 1.0).norm().sqrt(),
        };
        let p = if self.phi_factor {
            c_phi(arg_positive(zeta))?.powi(2)
        } else {
            1.0
        };
        Ok(f * p)
    }

    fn uses_rho(&self) -> bool {
        matches!(self.zeta_factor, ZetaFactor::Rho | ZetaFactor::RhoShifted)
    }
}

/// Assembled problem: coefficients, cell solution and shifted effective operator.
#[derive(Debug)]
pub struct Problem {
    pub name: String,
    /// Coefficients of `B_ε` (the factored operator for ground-state models).
    pub coeffs: Coefficients,
    pub cell: CellSolution,
    pub eff: EffectiveOperator,
    pub c5: f64,
    pub calibration: Option<ShiftCalibration>,
    pub cell_grid: TorusGrid,
    pub periods: Vec<usize>,
    pub dealias: bool,
    /// Ground state and the untransformed operator for ground-state models.
    pub ground_state: Option<GroundState>,
}

#[derive(Debug)]
pub struct GroundState {
    pub omega: OmegaSolution,
    /// `B̌_ε` coefficients with the shifted `ε^{-2}` potential.
    pub check: Coefficients,
}

fn zeros(grid: &TorusGrid, n: usize, d: usize) -> Vec<PeriodicField> {
    (0..d)
        .map(|_| PeriodicField::zeros(grid.clone(), n, n))
        .collect()
}

impl Problem {
    pub fn build(cfg: &RunConfig, base: &Path) -> Result<Self> {
        let grid = cfg.cell_grid()?;
        let d = grid.dim();
        let b = cfg.symbol.build(d)?;
        let (m, n) = (b.m(), b.n());
        let dealias = cfg.grids.dealias;
        let (coeffs, ground_state) = match &cfg.coefficients {
            ModelSpec::General { g, a, q, q0 } => {
                let a = if a.is_empty() {
                    zeros(&grid, n, d)
                } else {
                    a.iter()
                        .map(|f| f.build(&grid, n, n, base))
                        .collect::<Result<_>>()?
                };
                let coeffs = Coefficients {
                    b,
                    g: g.build(&grid, m, m, base)?,
                    a,
                    q: q.build(&grid, n, n, base)?,
                    q0: q0.build(&grid, n, n, base)?,
                    singular: None,
                };
                (coeffs, None)
            }
            ModelSpec::Schrodinger {
                g,
                vector_potential,
                v,
                vcal,
                q0,
            } => {
                let g = g.build(&grid, d, d, base)?;
                let s = schrodinger_coefficients(
                    &vector_potential.build(&grid, d, 1, base)?,
                    &v.build(&grid, 1, 1, base)?,
                    &vcal.build(&grid, 1, 1, base)?,
                    &g,
                )?;
                let coeffs = Coefficients {
                    b,
                    g,
                    a: s.a_fields,
                    q: s.q,
                    q0: q0.build(&grid, 1, 1, base)?,
                    singular: None,
                };
                (coeffs, None)
            }
            ModelSpec::GroundState { g, v, vcal, q0 } => {
                let g_check = g.build(&grid, d, d, base)?;
                let omega = solve_omega(&g_check, &v.build(&grid, 1, 1, base)?, dealias)?;
                let vcal = vcal.build(&grid, 1, 1, base)?;
                let q0 = q0.build(&grid, 1, 1, base)?;
                let w2 = omega.omega.mul(&omega.omega)?;
                let check = Coefficients {
                    b: b.clone(),
                    g: g_check.clone(),
                    a: zeros(&grid, 1, d),
                    q: vcal.clone(),
                    q0: q0.clone(),
                    singular: Some(omega.v_shifted.clone()),
                };
                let mut gt = PeriodicField::zeros(grid.clone(), d, d);
                for r in 0..d {
                    for col in 0..d {
                        let e: Vec<C64> = g_check
                            .entry(r, col)
                            .iter()
                            .zip(w2.data())
                            .map(|(x, w)| x * w)
                            .collect();
                        gt.entry_mut(r, col).copy_from_slice(&e);
                    }
                }
                let coeffs = Coefficients {
                    b,
                    g: gt,
                    a: zeros(&grid, 1, d),
                    q: w2.mul(&vcal)?,
                    q0: w2.mul(&q0)?,
                    singular: None,
                };
                (coeffs, Some(GroundState { omega, check }))
            }
        };
        coeffs.validate()?;
        let cell_cfg = CellConfig {
            krylov: KrylovConfig {
                rtol: cfg.solver.cell_rtol,
                maxiter: 20 * cfg.solver.maxiter.max(250),
                restart: cfg.solver.restart,
            },
            dealias,
        };
        let cell = solve_cell(&coeffs.g, &coeffs.a, &coeffs.b, &cell_cfg)?;
        let eff0 = build_effective(&cell, &coeffs.a, &coeffs.q, &coeffs.q0, &coeffs.b, 0.0)?;
        let periods = cfg.grids.periods.clone();
        let (c5, calibration) = match cfg.shift.c5 {
            Some(c5) => (c5, None),
            None => {
                let eps_ref = cfg
                    .shift
                    .reference_eps
                    .unwrap_or_else(|| cfg.sweep.eps_list.iter().copied().fold(0.0, f64::max));
                let k = eps_to_k(eps_ref)?;
                let torus = TorusGrid::scaled(&grid, k, &periods)?;
                let cal = calibrate_shift(&coeffs, &eff0, k, &torus, dealias, cfg.shift.margin)?;
                (cal.c5, Some(cal))
            }
        };
        Ok(Self {
            name: cfg.name.clone(),
            eff: eff0.with_shift(c5),
            coeffs,
            cell,
            c5,
            calibration,
            cell_grid: grid,
            periods,
            dealias,
            ground_state,
        })
    }

    pub fn torus(&self, k: usize) -> Result<TorusGrid> {
        TorusGrid::scaled(&self.cell_grid, k, &self.periods)
    }

    pub fn torus_with_periods(&self, k: usize, periods: &[usize]) -> Result<TorusGrid> {
        TorusGrid::scaled(&self.cell_grid, k, periods)
    }

    pub fn operator(&self, k: usize) -> Result<OscillatoryOperator> {
        OscillatoryOperator::new(&self.coeffs, k, &self.torus(k)?, self.c5, self.dealias)
    }

    /// `0.99 · min` of the oscillatory pencil bottom at `k` and the effective one.
    pub fn lower_bound(&self, k: usize) -> Result<f64> {
        let op = self.operator(k)?;
        let (osc, _) = pencil_bottom(&op, &self.eff, k as u64)?;
        let eff = effective_bottom(&self.eff, op.spectral());
        Ok(0.99 * osc.min(eff))
    }
}

/// Krylov bookkeeping across the solves behind one measurement.
#[derive(Debug, Clone, Copy, Default, Serialize, PartialEq)]
pub struct SolveDiagnostics {
    pub solves: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
}

impl SolveDiagnostics {
    fn record(&mut self, s: &krylov::KrylovStats) {
        self.solves += 1;
        self.max_iterations = self.max_iterations.max(s.iterations);
        self.max_residual = self.max_residual.max(s.residual);
    }
}

/// Operators needed at one `(ε, ζ)` point.
pub struct PointContext<'a> {
    pub problem: &'a Problem,
    pub k: usize,
    pub zeta: C64,
    pub op: OscillatoryOperator,
    pre: EffectiveResolvent,
    pre_adj: EffectiveResolvent,
    corr: CorrectorOps,
    corr_fourier: Option<CorrectorOps>,
    check: Option<(OscillatoryOperator, Vec<f64>)>,
    pub krylov: KrylovConfig,
}

impl<'a> PointContext<'a> {
    pub fn new(
        problem: &'a Problem,
        k: usize,
        zeta: C64,
        corrector: CorrectorConfig,
        krylov: KrylovConfig,
        periods: Option<&[usize]>,
    ) -> Result<Self> {
        let torus = match periods {
            Some(p) => problem.torus_with_periods(k, p)?,
            None => problem.torus(k)?,
        };
        let op = OscillatoryOperator::new(&problem.coeffs, k, &torus, problem.c5, problem.dealias)?;
        let sp = op.spectral();
        let pre = EffectiveResolvent::new(&problem.eff, zeta, sp)?;
        let pre_adj = EffectiveResolvent::new(&problem.eff, zeta.conj(), sp)?;
        let corr = CorrectorOps::new(
            &problem.cell,
            &problem.eff.b,
            k,
            &torus,
            corrector,
            problem.dealias,
        )?;
        let check = match &problem.ground_state {
            Some(gs) => {
                let check_op =
                    OscillatoryOperator::new(&gs.check, k, &torus, problem.c5, problem.dealias)?;
                let w = gs.omega.omega.sample_scaled(k, &torus)?;
                Some((check_op, w.data().iter().map(|z| z.re).collect()))
            }
            None => None,
        };
        Ok(Self {
            problem,
            k,
            zeta,
            op,
            pre,
            pre_adj,
            corr,
            corr_fourier: None,
            check,
            krylov,
        })
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.k as f64
    }

    pub fn spectral(&self) -> &Spectral {
        self.op.spectral()
    }

    fn fourier_corrector(&mut self) -> Result<&CorrectorOps> {
        if self.corr_fourier.is_none() {
            let cfg = CorrectorConfig {
                smoothing: SmoothingKind::Fourier,
                ..*self.corr.config()
            };
            self.corr_fourier = Some(CorrectorOps::new(
                &self.problem.cell,
                &self.problem.eff.b,
                self.k,
                self.op.grid(),
                cfg,
                self.problem.dealias,
            )?);
        }
        Ok(self.corr_fourier.as_ref().expect("just built"))
    }

    fn effective(&self, f: &[C64], adjoint: bool) -> Vec<C64> {
        let mut out = vec![C64::default(); f.len()];
        if adjoint {
            self.pre_adj.apply_coeffs(f, &mut out);
        } else {
            self.pre.apply_coeffs(f, &mut out);
        }
        out
    }

    /// `(B_ε − ζQ₀^ε)^{-1} f` (or at `ζ̄` for the adjoint) on coefficients.
    pub fn oscillatory(
        &self,
        f: &[C64],
        adjoint: bool,
        diag: &mut SolveDiagnostics,
    ) -> Result<Vec<C64>> {
        let (z, pre) = if adjoint {
            (self.zeta.conj(), &self.pre_adj)
        } else {
            (self.zeta, &self.pre)
        };
        let mut x = vec![C64::default(); f.len()];
        let stats = solve_oscillatory_coeffs(&self.op, pre, z, f, &mut x, &self.krylov)?;
        diag.record(&stats);
        Ok(x)
    }

    fn omega_mul(&self, w: &[f64], u: &[C64]) -> Vec<C64> {
        let sp = self.spectral();
        let mut phys = vec![C64::default(); u.len()];
        sp.inverse_many(u, &mut phys);
        for (p, wi) in phys.iter_mut().zip(w) {
            *p *= wi;
        }
        let mut out = vec![C64::default(); u.len()];
        sp.forward_many(&phys, &mut out);
        out
    }

    /// `ω^ε (B⁰ − ζQ̄₀)^{-1} ω^ε f`.
    fn sandwiched_effective(&self, f: &[C64], adjoint: bool) -> Result<Vec<C64>> {
        let (_, w) = self.check.as_ref().ok_or_else(|| {
            Error::InvalidConfig("the sandwich estimate needs a ground-state model".into())
        })?;
        Ok(self.omega_mul(w, &self.effective(&self.omega_mul(w, f), adjoint)))
    }

    /// `(B̌_ε − ζQ̌₀^ε)^{-1} f`, preconditioned by the sandwiched effective resolvent.
    pub fn check_solve(
        &self,
        f: &[C64],
        adjoint: bool,
        diag: &mut SolveDiagnostics,
    ) -> Result<Vec<C64>> {
        let (op, _) = self.check.as_ref().ok_or_else(|| {
            Error::InvalidConfig("the sandwich estimate needs a ground-state model".into())
        })?;
        let z = if adjoint { self.zeta.conj() } else { self.zeta };
        let mut x = vec![C64::default(); f.len()];
        let stats = krylov::gmres(
            |u, out| op.apply_coeffs(z, u, out),
            |r, out| {
                let y = self
                    .sandwiched_effective(r, adjoint)
                    .expect("ground state present");
                out.copy_from_slice(&y);
            },
            &op.projected(f),
            &mut x,
            &self.krylov,
        )?;
        diag.record(&stats);
        op.project(&mut x);
        Ok(x)
    }

    fn weight_oscillation(&self, f: &[C64], adjoint: bool) -> Vec<C64> {
        let n = self.op.n();
        let nm = self.spectral().nmodes();
        // Q₀ is Hermitian pointwise, so the adjoint is the same map.
        let _ = adjoint;
        let mut out = vec![C64::default(); f.len()];
        self.op.apply_weight_coeffs(f, &mut out);
        let q = &self.problem.eff.q0bar;
        for idx in 0..nm {
            for r in 0..n {
                let mut acc = C64::default();
                for col in 0..n {
                    acc += q[(r, col)] * f[col * nm + idx];
                }
                out[r * nm + idx] -= acc;
            }
        }
        out
    }

    /// `‖w_out (L₀ − ζQ̄₀)^{-1} w_in^{-1}‖` over the modes: the size of the
    /// effective resolvent in the spec's norms, used for the noise floor.
    pub fn reference_scale(&self, spec: &EstimateSpec) -> f64 {
        let sp = self.spectral();
        let eff = &self.problem.eff;
        (0..sp.nmodes())
            .map(|i| {
                let xi = sp.xi(i);
                let x2 = sp.xi2()[i];
                let r = (eff.l0(xi) - &eff.q0bar * self.zeta)
                    .try_inverse()
                    .map_or(f64::INFINITY, |m| m.norm());
                let flux = if matches!(spec.name, SpecName::Flux | SpecName::FluxRho) {
                    (&eff.g0 * eff.b.eval(xi)).norm().max(1.0)
                } else {
                    1.0
                };
                spec.norm_out.weight(x2) / spec.norm_in.weight(x2) * r * flux
            })
            .fold(0.0, f64::max)
    }

    /// Output component count of a spec's map.
    pub fn n_out(&self, name: SpecName) -> usize {
        match name {
            SpecName::Flux | SpecName::FluxRho => self.problem.eff.b.m(),
            _ => self.op.n(),
        }
    }

    fn sub(a: Vec<C64>, b: &[C64]) -> Vec<C64> {
        a.into_iter().zip(b).map(|(x, y)| x - y).collect()
    }

    /// Applies the discrepancy map of `name` (or its adjoint) to coefficients.
    pub fn discrepancy(
        &mut self,
        name: SpecName,
        f: &[C64],
        adjoint: bool,
        diag: &mut SolveDiagnostics,
    ) -> Result<Vec<C64>> {
        let mut f = f.to_vec();
        self.op.project(&mut f);
        let mut out = self.discrepancy_in_band(name, &f, adjoint, diag)?;
        self.op.project(&mut out);
        Ok(out)
    }

    fn discrepancy_in_band(
        &mut self,
        name: SpecName,
        f: &[C64],
        adjoint: bool,
        diag: &mut SolveDiagnostics,
    ) -> Result<Vec<C64>> {
        let eps = self.eps();
        Ok(match (name, adjoint) {
            (SpecName::L2Main | SpecName::L2Rho | SpecName::DNoCorrector, _) => Self::sub(
                self.oscillatory(f, adjoint, diag)?,
                &self.effective(f, adjoint),
            ),
            (SpecName::H1Corrector | SpecName::DCorrector | SpecName::H1Rho, false) => {
                let u0 = self.effective(f, false);
                let k = self.corr.corrector_coeffs(&u0);
                let u = self.oscillatory(f, false, diag)?;
                u.iter()
                    .zip(&u0)
                    .zip(&k)
                    .map(|((a, b), kk)| a - b - kk * eps)
                    .collect()
            }
            (SpecName::H1Corrector | SpecName::DCorrector | SpecName::H1Rho, true) => {
                let kt = self.effective(&self.corr.corrector_adjoint_coeffs(f), true);
                let r0 = self.effective(f, true);
                let u = self.oscillatory(f, true, diag)?;
                u.iter()
                    .zip(&r0)
                    .zip(&kt)
                    .map(|((a, b), kk)| a - b - kk * eps)
                    .collect()
            }
            (SpecName::Flux | SpecName::FluxRho, false) => {
                let u = self.oscillatory(f, false, diag)?;
                let g = self.corr.flux_coeffs(&self.effective(f, false));
                Self::sub(self.op.flux_coeffs(&u), &g)
            }
            (SpecName::Flux | SpecName::FluxRho, true) => {
                let u = self.oscillatory(&self.op.flux_adjoint_coeffs(f), true, diag)?;
                let g = self.effective(&self.corr.flux_adjoint_coeffs(f), true);
                Self::sub(u, &g)
            }
            (SpecName::SchrodingerSandwich, adj) => {
                let u = self.check_solve(f, adj, diag)?;
                Self::sub(u, &self.sandwiched_effective(f, adj)?)
            }
            (SpecName::SmoothingGap, false) => {
                let u0 = self.effective(f, false);
                let ks = self.corr.corrector_coeffs(&u0);
                let kf = self.fourier_corrector()?.corrector_coeffs(&u0);
                ks.iter().zip(&kf).map(|(a, b)| (a - b) * eps).collect()
            }
            (SpecName::SmoothingGap, true) => {
                let ks = self.corr.corrector_adjoint_coeffs(f);
                let kf = self.fourier_corrector()?.corrector_adjoint_coeffs(f);
                let d: Vec<C64> = ks.iter().zip(&kf).map(|(a, b)| (a - b) * eps).collect();
                self.effective(&d, true)
            }
            (SpecName::WeightOscillation, adj) => self.weight_oscillation(f, adj),
        })
    }
}

struct DiscrepancyMap<'c, 'a> {
    ctx: &'c mut PointContext<'a>,
    name: SpecName,
    diag: SolveDiagnostics,
}

impl LinearMap for DiscrepancyMap<'_, '_> {
    fn n_in(&self) -> usize {
        self.ctx.op.n()
    }

    fn n_out(&self) -> usize {
        self.ctx.n_out(self.name)
    }

    fn apply(&mut self, x: &[C64]) -> Result<Vec<C64>> {
        self.ctx.discrepancy(self.name, x, false, &mut self.diag)
    }

    fn apply_adjoint(&mut self, y: &[C64]) -> Result<Vec<C64>> {
        self.ctx.discrepancy(self.name, y, true, &mut self.diag)
    }
}

fn weighted_norm(v: &[C64], xi2: &[f64], norm: NormKind) -> f64 {
    let nm = xi2.len();
    v.iter()
        .enumerate()
        .map(|(i, z)| z.norm_sqr() * norm.weight(xi2[i % nm]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Measurement settings shared by all points of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct MeasureConfig {
    pub opnorm: OpNormConfig,
    pub panel: usize,
    pub krylov: KrylovConfig,
    pub corrector: CorrectorConfig,
    /// Absolute noise floor per unit reference scale: `noise · rtol`.
    pub noise_floor: f64,
}

/// One measured `(spec, ε, ζ)` point.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PointMeasurement {
    pub spec: SpecName,
    pub series: Series,
    pub eps: f64,
    pub k: usize,
    pub zeta: [f64; 2],
    pub modulus: f64,
    pub phi: f64,
    /// Randomized operator-norm estimate.
    pub opnorm: f64,
    pub opnorm_spread: f64,
    /// False when the power iteration stayed unsettled at noise level.
    pub settled: bool,
    /// Largest ratio over the deterministic right-hand-side panel.
    pub panel: f64,
    /// `max(opnorm, panel)`.
    pub measured: f64,
    /// `measured / (ε^p · ζ-weight)`.
    pub normalized: f64,
    /// Size of the effective resolvent in the same norms.
    pub reference_scale: f64,
    pub power_iterations: usize,
    pub solver: SolveDiagnostics,
    pub error: Option<String>,
}

/// Estimates the discrepancy of `spec` at `(k, ζ)`.
pub fn measure_discrepancy(
    problem: &Problem,
    spec: &EstimateSpec,
    series: Series,
    k: usize,
    zeta: C64,
    c_flat: f64,
    cfg: &MeasureConfig,
) -> PointMeasurement {
    let mut out = PointMeasurement {
        spec: spec.name,
        series,
        eps: 1.0 / k as f64,
        k,
        zeta: [zeta.re, zeta.im],
        modulus: zeta.norm(),
        phi: arg_positive(zeta),
        opnorm: f64::NAN,
        opnorm_spread: f64::NAN,
        settled: true,
        panel: f64::NAN,
        measured: f64::NAN,
        normalized: f64::NAN,
        reference_scale: f64::NAN,
        power_iterations: 0,
        solver: SolveDiagnostics::default(),
        error: None,
    };
    if let Err(e) = measure_into(problem, spec, k, zeta, c_flat, cfg, &mut out) {
        out.error = Some(e.to_string());
    }
    out
}

fn measure_into(
    problem: &Problem,
    spec: &EstimateSpec,
    k: usize,
    zeta: C64,
    c_flat: f64,
    cfg: &MeasureConfig,
    out: &mut PointMeasurement,
) -> Result<()> {
    let mut ctx = PointContext::new(problem, k, zeta, cfg.corrector, cfg.krylov, None)?;
    let xi2 = ctx.spectral().xi2().to_vec();
    let torus = ctx.op.grid().clone();
    out.reference_scale = ctx.reference_scale(spec);
    let mut map = DiscrepancyMap {
        ctx: &mut ctx,
        name: spec.name,
        diag: SolveDiagnostics::default(),
    };
    let est = estimate_opnorm(&mut map, &xi2, spec.norm_in, spec.norm_out, &cfg.opnorm);
    let band_max = torus
        .points()
        .iter()
        .map(|&p| p as i64 / 2)
        .min()
        .unwrap_or(1);
    let unit = *problem.periods.iter().max().unwrap_or(&1) as i64;
    let mut panel = 0.0f64;
    let sp = Spectral::new(&torus);
    for i in 0..cfg.panel {
        let band = ((i as i64 + 1) * unit).min(band_max).max(1);
        let f = TorusFunction::random(
            torus.clone(),
            map.n_in(),
            Some(band),
            cfg.opnorm.seed.wrapping_add(7919 * (i as u64 + 1)),
        );
        let fh = to_coeffs(&sp, &f);
        let y = map.apply(&fh)?;
        let den = weighted_norm(&fh, &xi2, spec.norm_in);
        if den > 0.0 {
            panel = panel.max(weighted_norm(&y, &xi2, spec.norm_out) / den);
        }
    }
    out.panel = panel;
    out.solver = map.diag;
    match est {
        Ok(est) => {
            out.opnorm = est.estimate;
            out.opnorm_spread = est.spread;
            out.power_iterations = est.iterations;
        }
        // A map at roundoff level has no dominant direction to settle on.
        Err(Error::NoConvergence { estimate, .. })
            if estimate.max(panel) <= cfg.noise_floor * out.reference_scale.max(1.0) =>
        {
            out.opnorm = estimate;
            out.settled = false;
        }
        Err(e) => return Err(e),
    }
    out.measured = out.opnorm.max(panel);
    let eps_weight = match spec.eps_law {
        EpsLaw::Slope { exponent, .. } => out.eps.powf(exponent),
        EpsLaw::Below { .. } => 1.0,
    };
    out.normalized = out.measured / (eps_weight * spec.zeta_weight(zeta, c_flat)?);
    Ok(())
}

/// Log-log least-squares fit.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    /// Standard error of the slope (zero for three exact points).
    pub slope_stderr: f64,
    pub points: usize,
}

/// Fits `log y = slope · log x + intercept` over points with positive data.
pub fn fit_rates(points: &[(f64, f64)]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::InsufficientPoints { got: n });
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientPoints { got: 1 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        residual: (ss / nf).sqrt(),
        slope_stderr: (ss / (nf - 2.0) / sxx).sqrt(),
        points: n,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FitRecord {
    pub spec: SpecName,
    pub series: Series,
    pub fit: Option<RateFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Verdict {
    pub spec: SpecName,
    pub check: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

impl Verdict {
    fn new(spec: SpecName, check: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            spec,
            check: check.to_string(),
            value,
            lo,
            hi,
            pass: value.is_finite() && value >= lo && value <= hi,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TorusSensitivity {
    pub spec: SpecName,
    pub eps: f64,
    pub zeta: [f64; 2],
    pub periods: Vec<usize>,
    pub value: f64,
    pub value_doubled: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ProblemSummary {
    pub g0: Vec<Vec<[f64; 2]>>,
    pub c5: f64,
    pub lambda0: f64,
    pub calibration: Option<ShiftCalibration>,
    pub c_flat: Option<f64>,
    pub ground_state_eigenvalue: Option<f64>,
    pub cell_max_residual: f64,
}

/// Full output of a verification run.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepReport {
    pub name: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: u64,
    /// Unix seconds; the only field that differs between identical runs.
    pub generated_at: u64,
    pub problem: ProblemSummary,
    pub specs: Vec<EstimateSpec>,
    pub points: Vec<PointMeasurement>,
    pub fits: Vec<FitRecord>,
    pub verdicts: Vec<Verdict>,
    pub torus_sensitivity: Option<TorusSensitivity>,
    pub all_pass: bool,
}

impl SweepReport {
    pub fn points_for(
        &self,
        spec: SpecName,
        series: Series,
    ) -> impl Iterator<Item = &PointMeasurement> {
        self.points
            .iter()
            .filter(move |p| p.spec == spec && p.series == series)
    }

    pub fn fit_for(&self, spec: SpecName, series: Series) -> Option<&RateFit> {
        self.fits
            .iter()
            .find(|f| f.spec == spec && f.series == series)
            .and_then(|f| f.fit.as_ref())
    }

    pub fn verdict(&self, spec: SpecName, check: &str) -> Option<&Verdict> {
        self.verdicts
            .iter()
            .find(|v| v.spec == spec && v.check == check)
    }
}

pub fn cmat_json(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| {
            (0..m.ncols())
                .map(|col| [m[(r, col)].re, m[(r, col)].im])
                .collect()
        })
        .collect()
}

struct Task {
    entry: usize,
    spec: EstimateSpec,
    series: Series,
    k: usize,
    zeta: C64,
}

fn plan(cfg: &RunConfig, specs: &[(SpecEntry, EstimateSpec)]) -> Result<Vec<Task>> {
    let sw = &cfg.sweep;
    let eps_min = sw.eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    let series_k = eps_to_k(sw.series_eps.unwrap_or(eps_min))?;
    let mut tasks = Vec::new();
    for (i, (entry, spec)) in specs.iter().enumerate() {
        for &series in &entry.series {
            match series {
                Series::Eps => {
                    let z = entry.zeta.unwrap_or(sw.zeta);
                    for &e in &sw.eps_list {
                        tasks.push(Task {
                            entry: i,
                            spec: *spec,
                            series,
                            k: eps_to_k(e)?,
                            zeta: C64::new(z[0], z[1]),
                        });
                    }
                }
                Series::Zeta => {
                    for &m in entry.zeta_list.as_ref().unwrap_or(&sw.zeta_list) {
                        tasks.push(Task {
                            entry: i,
                            spec: *spec,
                            series,
                            k: series_k,
                            zeta: C64::from_polar(m, sw.zeta_phi),
                        });
                    }
                }
                Series::Phi => {
                    for &phi in &sw.phi_list {
                        tasks.push(Task {
                            entry: i,
                            spec: *spec,
                            series,
                            k: series_k,
                            zeta: C64::from_polar(sw.phi_modulus, phi),
                        });
                    }
                }
            }
        }
    }
    Ok(tasks)
}

fn series_verdicts(
    spec: &EstimateSpec,
    series: Series,
    pts: &[&PointMeasurement],
    tol: &Tolerances,
    rtol: f64,
    fits: &mut Vec<FitRecord>,
    verdicts: &mut Vec<Verdict>,
) {
    let name = spec.name;
    let ok: Vec<&&PointMeasurement> = pts.iter().filter(|p| p.error.is_none()).collect();
    let floor = |p: &PointMeasurement| tol.noise * rtol * p.reference_scale.max(1.0);
    // Discrepancies at solver-noise level carry no rate.
    if !ok.is_empty() && ok.iter().all(|p| p.measured <= floor(p)) {
        let worst = ok.iter().map(|p| p.measured / floor(p)).fold(0.0, f64::max);
        verdicts.push(Verdict::new(
            name,
            &format!("{}_noise_floor", series_name(series)),
            worst,
            0.0,
            1.0,
        ));
        return;
    }
    let record = |fits: &mut Vec<FitRecord>, data: Vec<(f64, f64)>| -> Option<RateFit> {
        match fit_rates(&data) {
            Ok(f) => {
                fits.push(FitRecord {
                    spec: name,
                    series,
                    fit: Some(f),
                    error: None,
                });
                Some(f)
            }
            Err(e) => {
                fits.push(FitRecord {
                    spec: name,
                    series,
                    fit: None,
                    error: Some(e.to_string()),
                });
                None
            }
        }
    };
    match series {
        Series::Eps => {
            let fit = record(fits, ok.iter().map(|p| (p.eps, p.measured)).collect());
            let slope = fit.map_or(f64::NAN, |f| f.slope);
            let (lo, hi) = match spec.eps_law {
                EpsLaw::Slope { exponent, tol } => (exponent - tol, exponent + tol),
                EpsLaw::Below { max } => (f64::NEG_INFINITY, max),
            };
            verdicts.push(Verdict::new(name, "eps_slope", slope, lo, hi));
        }
        Series::Zeta => {
            let fit = record(fits, ok.iter().map(|p| (p.modulus, p.measured)).collect());
            if spec.zeta_factor == ZetaFactor::InvSqrt {
                let slope = fit.map_or(f64::NAN, |f| f.slope);
                verdicts.push(Verdict::new(
                    name,
                    "zeta_slope",
                    slope,
                    -0.5 - tol.zeta_slope,
                    -0.5 + tol.zeta_slope,
                ));
            }
            let vals: Vec<f64> = ok.iter().map(|p| p.normalized).collect();
            let max = vals.iter().copied().fold(0.0, f64::max);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            if ok.len() < 2 {
                verdicts.push(Verdict::new(name, "zeta_uniformity", f64::NAN, 0.0, 0.0));
            } else if spec.uses_rho() {
                verdicts.push(Verdict::new(
                    name,
                    "zeta_ratio",
                    max / min,
                    1.0,
                    tol.rho_ratio,
                ));
            } else {
                verdicts.push(Verdict::new(
                    name,
                    "zeta_variation",
                    (max - min) / max,
                    0.0,
                    tol.zeta_variation,
                ));
            }
        }
        Series::Phi => {
            // One-point normalization: the c(φ)² envelope scaled to the first angle.
            let vals: Vec<f64> = ok
                .iter()
                .map(|p| p.measured / c_phi(p.phi).map_or(f64::NAN, |c| c * c))
                .collect();
            let max = vals.iter().copied().fold(0.0, f64::max);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let value = if ok.len() < 2 { f64::NAN } else { max / min };
            verdicts.push(Verdict::new(name, "phi_ratio", value, 1.0, tol.phi_ratio));
        }
    }
}

fn series_name(s: Series) -> &'static str {
    match s {
        Series::Eps => "eps",
        Series::Zeta => "zeta",
        Series::Phi => "phi",
    }
}

/// Builds the problem and runs every configured series.
pub fn run_verification(cfg: &RunConfig, base: &Path) -> Result<SweepReport> {
    let problem = Problem::build(cfg, base)?;
    run_on_problem(cfg, &problem)
}

pub fn measure_config(cfg: &RunConfig) -> MeasureConfig {
    MeasureConfig {
        opnorm: OpNormConfig {
            iters: cfg.opnorm.iters,
            seeds: cfg.opnorm.seeds,
            seed: cfg.seeds,
            stall_tol: cfg.opnorm.stall_tol,
        },
        panel: cfg.opnorm.panel,
        krylov: KrylovConfig {
            rtol: cfg.solver.rtol,
            maxiter: cfg.solver.maxiter,
            restart: cfg.solver.restart,
        },
        corrector: cfg.corrector,
        noise_floor: cfg.tolerances.noise * cfg.solver.rtol,
    }
}

pub fn run_on_problem(cfg: &RunConfig, problem: &Problem) -> Result<SweepReport> {
    let tol = &cfg.tolerances;
    let specs: Vec<(SpecEntry, EstimateSpec)> = cfg
        .sweep
        .specs
        .iter()
        .map(|e| (e.clone(), EstimateSpec::of(e.name, tol)))
        .collect();
    let mcfg = measure_config(cfg);
    let c_flat = if specs.iter().any(|(_, s)| s.uses_rho()) {
        let eps_min = cfg
            .sweep
            .eps_list
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Some(problem.lower_bound(eps_to_k(eps_min)?)?)
    } else {
        None
    };
    let tasks = plan(cfg, &specs)?;
    // Series of one spec can share a point (e.g. ζ = −1 at the series ε); measure it once.
    let key = |t: &Task| (t.spec.name, t.k, t.zeta.re.to_bits(), t.zeta.im.to_bits());
    let mut first: Vec<usize> = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        first.push(
            tasks[..i]
                .iter()
                .position(|u| key(u) == key(t))
                .unwrap_or(i),
        );
    }
    let unique: Vec<usize> = (0..tasks.len()).filter(|&i| first[i] == i).collect();
    let measured: Vec<PointMeasurement> = unique
        .par_iter()
        .map(|&i| {
            let t = &tasks[i];
            measure_discrepancy(
                problem,
                &t.spec,
                t.series,
                t.k,
                t.zeta,
                c_flat.unwrap_or(0.0),
                &mcfg,
            )
        })
        .collect();
    let points: Vec<PointMeasurement> = tasks
        .iter()
        .zip(&first)
        .map(|(t, &f)| {
            let at = unique
                .binary_search(&f)
                .expect("first occurrence is measured");
            PointMeasurement {
                series: t.series,
                ..measured[at].clone()
            }
        })
        .collect();
    let mut fits = Vec::new();
    let mut verdicts = Vec::new();
    for (i, (entry, spec)) in specs.iter().enumerate() {
        for &series in &entry.series {
            let pts: Vec<&PointMeasurement> = tasks
                .iter()
                .zip(&points)
                .filter(|(t, _)| t.entry == i && t.series == series)
                .map(|(_, p)| p)
                .collect();
            series_verdicts(
                spec,
                series,
                &pts,
                tol,
                cfg.solver.rtol,
                &mut fits,
                &mut verdicts,
            );
        }
    }
    for (t, p) in tasks.iter().zip(&points) {
        if let Some(e) = &p.error {
            log::warn!(
                "{} at ε = 1/{}, ζ = {}: {e}",
                t.spec.name.as_str(),
                t.k,
                t.zeta
            );
        }
    }
    let torus_sensitivity = if cfg.sweep.torus_sensitivity {
        specs.first().map(|(entry, spec)| {
            let eps_max = cfg.sweep.eps_list.iter().copied().fold(0.0, f64::max);
            let k = eps_to_k(eps_max).unwrap_or(1);
            let z = entry.zeta.unwrap_or(cfg.sweep.zeta);
            let zeta = C64::new(z[0], z[1]);
            let base = points
                .iter()
                .find(|p| p.spec == spec.name && p.k == k && p.zeta == z && p.error.is_none())
                .cloned()
                .unwrap_or_else(|| {
                    measure_discrepancy(
                        problem,
                        spec,
                        Series::Eps,
                        k,
                        zeta,
                        c_flat.unwrap_or(0.0),
                        &mcfg,
                    )
                });
            let doubled: Vec<usize> = problem.periods.iter().map(|p| 2 * p).collect();
            let big =
                measure_with_periods(problem, spec, k, zeta, &doubled, &mcfg).unwrap_or(f64::NAN);
            TorusSensitivity {
                spec: spec.name,
                eps: 1.0 / k as f64,
                zeta: z,
                periods: problem.periods.clone(),
                value: base.measured,
                value_doubled: big,
                ratio: big / base.measured,
            }
        })
    } else {
        None
    };
    let all_pass = !verdicts.is_empty() && verdicts.iter().all(|v| v.pass);
    let cell_max_residual = problem
        .cell
        .residuals
        .lambda
        .iter()
        .chain(&problem.cell.residuals.lambda_tilde)
        .map(|r| r.l2)
        .fold(0.0, f64::max);
    Ok(SweepReport {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds,
        generated_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        problem: ProblemSummary {
            g0: cmat_json(&problem.eff.g0),
            c5: problem.c5,
            lambda0: problem.eff.lambda0,
            calibration: problem.calibration,
            c_flat,
            ground_state_eigenvalue: problem.ground_state.as_ref().map(|g| g.omega.lambda_min),
            cell_max_residual,
        },
        specs: specs.iter().map(|(_, s)| *s).collect(),
        points,
        fits,
        verdicts,
        torus_sensitivity,
        all_pass,
    })
}

/// Operator-norm estimate of one discrepancy on a torus with other periods.
pub fn measure_with_periods(
    problem: &Problem,
    spec: &EstimateSpec,
    k: usize,
    zeta: C64,
    periods: &[usize],
    cfg: &MeasureConfig,
) -> Result<f64> {
    let mut ctx = PointContext::new(problem, k, zeta, cfg.corrector, cfg.krylov, Some(periods))?;
    let xi2 = ctx.spectral().xi2().to_vec();
    let mut map = DiscrepancyMap {
        ctx: &mut ctx,
        name: spec.name,
        diag: SolveDiagnostics::default(),
    };
    Ok(estimate_opnorm(&mut map, &xi2, spec.norm_in, spec.norm_out, &cfg.opnorm)?.estimate)
}

/// Random-probe checks of the solver contract at one point.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct ContractCheck {
    /// Largest `‖(B_ε − ζQ₀^ε)u − f‖ / ‖f‖`, recomputed independently.
    pub max_residual: f64,
    /// Largest relative defect of `<R(ζ)f, h> = <f, R(ζ̄)h>`.
    pub adjoint_defect: f64,
    /// Largest relative defect of `R(ζ₁) − R(ζ₂) = (ζ₁ − ζ₂) R(ζ₁) Q₀ R(ζ₂)`.
    pub identity_defect: f64,
    pub probes: usize,
}

/// Verifies residuals, adjoint symmetry and the resolvent identity on random probes.
pub fn check_solver_contract(
    problem: &Problem,
    k: usize,
    zeta1: C64,
    zeta2: C64,
    probes: usize,
    krylov: KrylovConfig,
    seed: u64,
) -> Result<ContractCheck> {
    let ctx1 = PointContext::new(problem, k, zeta1, CorrectorConfig::default(), krylov, None)?;
    let ctx2 = PointContext::new(problem, k, zeta2, CorrectorConfig::default(), krylov, None)?;
    let sp = ctx1.spectral();
    let torus = ctx1.op.grid().clone();
    let n = ctx1.op.n();
    let mut diag = SolveDiagnostics::default();
    let mut max_residual = 0.0f64;
    let mut adjoint_defect = 0.0f64;
    let mut identity_defect = 0.0f64;
    for p in 0..probes {
        let s = seed.wrapping_mul(31).wrapping_add(2 * p as u64);
        let f = to_coeffs(sp, &TorusFunction::random(torus.clone(), n, Some(32), s));
        let h = to_coeffs(
            sp,
            &TorusFunction::random(torus.clone(), n, Some(32), s + 1),
        );
        let u = ctx1.oscillatory(&f, false, &mut diag)?;
        let mut au = vec![C64::default(); f.len()];
        ctx1.op.apply_coeffs(zeta1, &u, &mut au);
        let r: Vec<C64> = au.iter().zip(&f).map(|(a, b)| a - b).collect();
        max_residual = max_residual.max(krylov::norm(&r) / krylov::norm(&f));
        let v = ctx1.oscillatory(&h, true, &mut diag)?;
        let lhs = krylov::dot(&h, &u);
        let rhs = krylov::dot(&v, &f);
        adjoint_defect = adjoint_defect.max((lhs - rhs).norm() / lhs.norm().max(rhs.norm()));
        let u2 = ctx2.oscillatory(&f, false, &mut diag)?;
        let mut qu2 = vec![C64::default(); f.len()];
        ctx1.op.apply_weight_coeffs(&u2, &mut qu2);
        let w = ctx1.oscillatory(&qu2, false, &mut diag)?;
        let lhs: Vec<C64> = u.iter().zip(&u2).map(|(a, b)| a - b).collect();
        let rhs: Vec<C64> = w.iter().map(|x| x * (zeta1 - zeta2)).collect();
        let d: Vec<C64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        identity_defect = identity_defect.max(krylov::norm(&d) / krylov::norm(&lhs).max(1e-300));
    }
    Ok(ContractCheck {
        max_residual,
        adjoint_defect,
        identity_defect,
        probes,
    })
}

/// `(B_ε − ζQ₀^ε)^{-1} f` for the problem's operator at `ε = 1/k`.
pub fn solve_rhs(
    problem: &Problem,
    k: usize,
    zeta: C64,
    f: &TorusFunction,
    krylov: KrylovConfig,
) -> Result<(TorusFunction, krylov::KrylovStats)> {
    let ctx = PointContext::new(problem, k, zeta, CorrectorConfig::default(), krylov, None)?;
    if f.grid() != ctx.op.grid() || f.ncomp() != ctx.op.n() {
        return Err(Error::ShapeMismatch(
            "right-hand side does not match the torus".into(),
        ));
    }
    let sp = ctx.spectral();
    let fh = to_coeffs(sp, f);
    let mut x = vec![C64::default(); fh.len()];
    let stats = solve_oscillatory_coeffs(&ctx.op, &ctx.pre, zeta, &fh, &mut x, &krylov)?;
    Ok((from_coeffs(sp, ctx.op.n(), &x), stats))
}
