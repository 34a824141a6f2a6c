//! First-order correctors and flux approximants.
//!
//! `K(ε;ζ) = ([Λ^ε] b(D) + [Λ̃^ε]) S_ε (B⁰ − ζQ̄₀)^{-1}` and
//! `G(ε;ζ) = g̃^ε S_ε b(D)(B⁰ − ζQ̄₀)^{-1} + g^ε(b(D)Λ̃)^ε S_ε (B⁰ − ζQ̄₀)^{-1}`.
//! Dropping `S_ε` on either term gives the simplified variants. Products with
//! the oscillating fields use the same (collocation or dealiased) rule as the
//! oscillatory operator, so discrete discrepancies carry no product mismatch.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::cellsolve::{CellSolution, EffectiveOperator};
use crate::error::{Error, Result};
use crate::fields::{apply_entries_add, PeriodicField, TorusFunction};
use crate::lattice::TorusGrid;
use crate::resolvent::{from_coeffs, to_coeffs, EffectiveResolvent};
use crate::smoothing::{Smoothing, SmoothingKind};
use crate::spectral::Spectral;
use crate::symbols::SymbolB;

/// Sampled `Λ` or `Λ̃` values above this trigger a boundedness warning when
/// the smoothing is dropped.
const UNBOUNDED_WARN: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CorrectorConfig {
    pub smoothing: SmoothingKind,
    pub drop_s_lambda: bool,
    pub drop_s_lambda_tilde: bool,
}

/// Flux approximant selected by which terms keep the smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FluxVariant {
    G,
    G1,
    G2,
    G3,
}

impl CorrectorConfig {
    pub fn smoothed(kind: SmoothingKind) -> Self {
        Self {
            smoothing: kind,
            ..Self::default()
        }
    }

    /// Whether `S` is applied on the `Λ` term.
    pub fn smooths_lambda(&self) -> bool {
        self.smoothing != SmoothingKind::None && !self.drop_s_lambda
    }

    pub fn smooths_lambda_tilde(&self) -> bool {
        self.smoothing != SmoothingKind::None && !self.drop_s_lambda_tilde
    }

    pub fn flux_variant(&self) -> FluxVariant {
        match (self.smooths_lambda(), self.smooths_lambda_tilde()) {
            (true, true) => FluxVariant::G,
            (false, true) => FluxVariant::G1,
            (true, false) => FluxVariant::G2,
            (false, false) => FluxVariant::G3,
        }
    }
}

/// An oscillating multiplier resampled for the product grid.
#[derive(Debug)]
struct Multiplier {
    data: Vec<C64>,
    rows: usize,
    cols: usize,
}

impl Multiplier {
    fn new(f: &PeriodicField, sp: &Spectral) -> Self {
        Self {
            data: f.phys_data(sp),
            rows: f.rows(),
            cols: f.cols(),
        }
    }
}

/// Corrector and flux maps at one `ε`, acting on coefficients of `u₀`.
#[derive(Debug)]
pub struct CorrectorOps {
    /// Collocation transforms on the torus.
    plain: Spectral,
    /// Product transforms (padded when dealiasing).
    sp: Spectral,
    b: SymbolB,
    table: Vec<C64>,
    smooth: Vec<f64>,
    cfg: CorrectorConfig,
    lambda: Multiplier,
    lambda_tilde: Multiplier,
    g_tilde: Multiplier,
    g_b_lambda_tilde: Multiplier,
    k: usize,
}

impl CorrectorOps {
    pub fn new(
        cell: &CellSolution,
        b: &SymbolB,
        k: usize,
        torus: &TorusGrid,
        cfg: CorrectorConfig,
        dealias: bool,
    ) -> Result<Self> {
        let plain = Spectral::new(torus);
        let sp = if dealias {
            Spectral::dealiased(torus)
        } else {
            Spectral::new(torus)
        };
        let eps = 1.0 / k as f64;
        let smooth = match cfg.smoothing {
            SmoothingKind::None => vec![1.0; plain.nmodes()],
            kind => Smoothing::new(kind, eps).table(&plain),
        };
        let lambda = cell.lambda.sample_scaled(k, torus)?;
        let lambda_tilde = cell.lambda_tilde.sample_scaled(k, torus)?;
        if !cfg.smooths_lambda() && lambda.max_abs() > UNBOUNDED_WARN {
            log::warn!(
                "dropping the smoothing on Λ, but sampled |Λ| reaches {:.3e}",
                lambda.max_abs()
            );
        }
        if !cfg.smooths_lambda_tilde() && lambda_tilde.max_abs() > UNBOUNDED_WARN {
            log::warn!(
                "dropping the smoothing on Λ̃, but sampled |Λ̃| reaches {:.3e}",
                lambda_tilde.max_abs()
            );
        }
        Ok(Self {
            table: b.table(&plain),
            b: b.clone(),
            smooth,
            cfg,
            lambda: Multiplier::new(&lambda, &sp),
            lambda_tilde: Multiplier::new(&lambda_tilde, &sp),
            g_tilde: Multiplier::new(&cell.g_tilde.sample_scaled(k, torus)?, &sp),
            g_b_lambda_tilde: Multiplier::new(&cell.g_b_lambda_tilde.sample_scaled(k, torus)?, &sp),
            k,
            plain,
            sp,
        })
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.k as f64
    }

    /// Collocation transforms on the torus.
    pub fn spectral(&self) -> &Spectral {
        &self.plain
    }

    pub fn config(&self) -> &CorrectorConfig {
        &self.cfg
    }

    fn smoothed(&self, on: bool, coeffs: &[C64]) -> Vec<C64> {
        let nm = self.sp.nmodes();
        if !on {
            return coeffs.to_vec();
        }
        coeffs
            .iter()
            .enumerate()
            .map(|(i, z)| z * self.smooth[i % nm])
            .collect()
    }

    fn phys(&self, coeffs: &[C64]) -> Vec<C64> {
        let ncomp = coeffs.len() / self.sp.nmodes();
        let mut out = vec![C64::default(); ncomp * self.sp.nphys()];
        self.sp.inverse_many(coeffs, &mut out);
        out
    }

    fn coeffs(&self, phys: &[C64]) -> Vec<C64> {
        let ncomp = phys.len() / self.sp.nphys();
        let mut out = vec![C64::default(); ncomp * self.sp.nmodes()];
        self.sp.forward_many(phys, &mut out);
        out
    }

    fn bd(&self, u: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::default(); self.b.m() * self.sp.nmodes()];
        self.b.apply_coeffs(&self.table, u, &mut out);
        out
    }

    fn bd_adjoint(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::default(); self.b.n() * self.sp.nmodes()];
        self.b.apply_adjoint_coeffs(&self.table, v, &mut out);
        out
    }

    /// Sum of `F₁ (S? b(D)u) + F₂ (S? u)` for an `(· × m, · × n)` field pair.
    fn two_term(
        &self,
        f1: &Multiplier,
        s1: bool,
        f2: &Multiplier,
        s2: bool,
        u: &[C64],
    ) -> Vec<C64> {
        let np = self.sp.nphys();
        let mut out = vec![C64::default(); f1.rows * np];
        let x1 = self.phys(&self.smoothed(s1, &self.bd(u)));
        apply_entries_add(&f1.data, (f1.rows, f1.cols), np, &x1, &mut out, false);
        let x2 = self.phys(&self.smoothed(s2, u));
        apply_entries_add(&f2.data, (f2.rows, f2.cols), np, &x2, &mut out, false);
        self.coeffs(&out)
    }

    fn two_term_adjoint(
        &self,
        f1: &Multiplier,
        s1: bool,
        f2: &Multiplier,
        s2: bool,
        v: &[C64],
    ) -> Vec<C64> {
        let np = self.sp.nphys();
        let vp = self.phys(v);
        let mut w1 = vec![C64::default(); self.b.m() * np];
        apply_entries_add(&f1.data, (f1.rows, f1.cols), np, &vp, &mut w1, true);
        let mut w2 = vec![C64::default(); self.b.n() * np];
        apply_entries_add(&f2.data, (f2.rows, f2.cols), np, &vp, &mut w2, true);
        let mut out = self.bd_adjoint(&self.smoothed(s1, &self.coeffs(&w1)));
        for (o, z) in out.iter_mut().zip(self.smoothed(s2, &self.coeffs(&w2))) {
            *o += z;
        }
        out
    }

    /// `Λ^ε S b(D) u₀ + Λ̃^ε S u₀`.
    pub fn corrector_coeffs(&self, u0: &[C64]) -> Vec<C64> {
        self.two_term(
            &self.lambda,
            self.cfg.smooths_lambda(),
            &self.lambda_tilde,
            self.cfg.smooths_lambda_tilde(),
            u0,
        )
    }

    /// Adjoint of [`Self::corrector_coeffs`].
    pub fn corrector_adjoint_coeffs(&self, v: &[C64]) -> Vec<C64> {
        self.two_term_adjoint(
            &self.lambda,
            self.cfg.smooths_lambda(),
            &self.lambda_tilde,
            self.cfg.smooths_lambda_tilde(),
            v,
        )
    }

    /// `g̃^ε S b(D) u₀ + g^ε(b(D)Λ̃)^ε S u₀`.
    pub fn flux_coeffs(&self, u0: &[C64]) -> Vec<C64> {
        self.two_term(
            &self.g_tilde,
            self.cfg.smooths_lambda(),
            &self.g_b_lambda_tilde,
            self.cfg.smooths_lambda_tilde(),
            u0,
        )
    }

    /// Adjoint of [`Self::flux_coeffs`].
    pub fn flux_adjoint_coeffs(&self, v: &[C64]) -> Vec<C64> {
        self.two_term_adjoint(
            &self.g_tilde,
            self.cfg.smooths_lambda(),
            &self.g_b_lambda_tilde,
            self.cfg.smooths_lambda_tilde(),
            v,
        )
    }
}

fn effective_solve(
    eff: &EffectiveOperator,
    zeta: C64,
    f: &TorusFunction,
) -> Result<(Spectral, Vec<C64>)> {
    if f.ncomp() != eff.n() {
        return Err(Error::ShapeMismatch(
            "right-hand side has the wrong number of components".into(),
        ));
    }
    let sp = Spectral::new(f.grid());
    let r = EffectiveResolvent::new(eff, zeta, &sp)?;
    let fh = to_coeffs(&sp, f);
    let mut u0 = vec![C64::default(); fh.len()];
    r.apply_coeffs(&fh, &mut u0);
    Ok((sp, u0))
}

/// `K(ε;ζ) f` with `ε = 1/k`.
pub fn apply_corrector(
    cfg: CorrectorConfig,
    cell: &CellSolution,
    eff: &EffectiveOperator,
    k: usize,
    zeta: C64,
    f: &TorusFunction,
    dealias: bool,
) -> Result<TorusFunction> {
    let (sp, u0) = effective_solve(eff, zeta, f)?;
    let ops = CorrectorOps::new(cell, &eff.b, k, f.grid(), cfg, dealias)?;
    Ok(from_coeffs(&sp, eff.n(), &ops.corrector_coeffs(&u0)))
}

/// `(B⁰ − ζQ̄₀)^{-1} f + εK(ε;ζ) f`.
pub fn approx_resolvent(
    cfg: CorrectorConfig,
    cell: &CellSolution,
    eff: &EffectiveOperator,
    k: usize,
    zeta: C64,
    f: &TorusFunction,
    dealias: bool,
) -> Result<TorusFunction> {
    let (sp, u0) = effective_solve(eff, zeta, f)?;
    let ops = CorrectorOps::new(cell, &eff.b, k, f.grid(), cfg, dealias)?;
    let eps = ops.eps();
    let total: Vec<C64> = u0
        .iter()
        .zip(ops.corrector_coeffs(&u0))
        .map(|(a, b)| a + b * eps)
        .collect();
    Ok(from_coeffs(&sp, eff.n(), &total))
}

/// The flux approximant selected by `cfg` applied to `f`.
pub fn approx_flux(
    cfg: CorrectorConfig,
    cell: &CellSolution,
    eff: &EffectiveOperator,
    k: usize,
    zeta: C64,
    f: &TorusFunction,
    dealias: bool,
) -> Result<TorusFunction> {
    let (sp, u0) = effective_solve(eff, zeta, f)?;
    let ops = CorrectorOps::new(cell, &eff.b, k, f.grid(), cfg, dealias)?;
    Ok(from_coeffs(&sp, eff.b.m(), &ops.flux_coeffs(&u0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellsolve::{build_effective, solve_cell, CellConfig};
    use crate::krylov::KrylovConfig;
    use crate::lattice::Lattice;
    use crate::linalg::{c, CMat};
    use crate::resolvent::{
        solve_oscillatory, Coefficients, OscillatoryOperator, SpectralParameter,
    };
    use crate::smoothing::steklov_symbol;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn lattice() -> Arc<Lattice> {
        Arc::new(Lattice::cubic(1))
    }

    fn two_phase(points: usize, lower: bool) -> Coefficients {
        let grid = TorusGrid::cell(lattice(), vec![points]).unwrap();
        let scalar = |f: &dyn Fn(f64) -> C64| {
            PeriodicField::from_fn(grid.clone(), 1, 1, |t| CMat::from_element(1, 1, f(t[0])))
        };
        let l = if lower { 1.0 } else { 0.0 };
        Coefficients {
            b: SymbolB::gradient(1),
            g: scalar(&|x| c(if x < 0.5 { 1.0 } else { 4.0 })),
            a: vec![scalar(&|x| {
                C64::new(
                    -0.3 * l * (2.0 * PI * x).cos(),
                    0.5 * l * (2.0 * PI * x).sin(),
                )
            })],
            q: scalar(&|x| c(1.0 + l * 0.5 * (2.0 * PI * x).cos())),
            q0: scalar(&|x| c(1.0 + l * 0.3 * (2.0 * PI * x).sin())),
            singular: None,
        }
    }

    fn constant() -> Coefficients {
        let grid = TorusGrid::cell(lattice(), vec![8]).unwrap();
        let one = PeriodicField::constant(grid.clone(), &CMat::from_element(1, 1, c(2.0)));
        Coefficients {
            b: SymbolB::gradient(1),
            g: one.clone(),
            a: vec![PeriodicField::constant(
                grid.clone(),
                &CMat::from_element(1, 1, C64::new(0.2, 0.1)),
            )],
            q: one.clone(),
            q0: one,
            singular: None,
        }
    }

    fn solved(coeffs: &Coefficients, c5: f64) -> (CellSolution, EffectiveOperator) {
        let cs = solve_cell(&coeffs.g, &coeffs.a, &coeffs.b, &CellConfig::default()).unwrap();
        let eff = build_effective(&cs, &coeffs.a, &coeffs.q, &coeffs.q0, &coeffs.b, c5).unwrap();
        (cs, eff)
    }

    fn torus(points: usize, periods: usize) -> TorusGrid {
        TorusGrid::new(lattice(), vec![points], vec![periods]).unwrap()
    }

    #[test]
    fn constant_coefficients_have_zero_corrector() {
        let coeffs = constant();
        let (cs, eff) = solved(&coeffs, 0.0);
        let t = torus(64, 2);
        let f = TorusFunction::random(t, 1, Some(10), 3);
        for kind in [
            SmoothingKind::Steklov,
            SmoothingKind::Fourier,
            SmoothingKind::None,
        ] {
            let cfg = CorrectorConfig::smoothed(kind);
            let k = apply_corrector(cfg, &cs, &eff, 4, c(-1.0), &f, false).unwrap();
            assert!(k.l2() < 1e-12 * f.l2());
            let u0 = crate::resolvent::solve_effective(&eff, c(-1.0), &f).unwrap();
            let approx = approx_resolvent(cfg, &cs, &eff, 8, c(-1.0), &f, false).unwrap();
            assert!(approx.sub(&u0).l2() < 1e-13 * u0.l2());
        }
        // Without smoothing the flux approximant reduces to g⁰ b(D) u₀.
        let u0 = crate::resolvent::solve_effective(&eff, c(-1.0), &f).unwrap();
        let fl = approx_flux(
            CorrectorConfig::smoothed(SmoothingKind::None),
            &cs,
            &eff,
            4,
            c(-1.0),
            &f,
            false,
        )
        .unwrap();
        let want = crate::resolvent::effective_flux(&eff, &u0).unwrap();
        assert!(fl.sub(&want).l2() < 1e-12 * want.l2());
    }

    #[test]
    fn single_mode_matches_dense_composition() {
        let coeffs = two_phase(16, true);
        let (cs, eff) = solved(&coeffs, 1.0);
        let t = torus(64, 1);
        let (k, mode) = (4usize, 3i64);
        let zeta = C64::new(-0.5, 1.0);
        let f = TorusFunction::plane_wave(t.clone(), 1, 0, &[mode]);
        let out =
            apply_corrector(CorrectorConfig::default(), &cs, &eff, k, zeta, &f, false).unwrap();
        let xi = 2.0 * PI * mode as f64;
        let u0 = 1.0 / (eff.l0(&[xi])[(0, 0)] - zeta * eff.q0bar[(0, 0)]);
        let s = steklov_symbol(&Lattice::cubic(1), 1.0 / k as f64, &[xi]);
        for node in 0..64 {
            let x = node as f64 / 64.0;
            let cell_node = (node * k) % 64 / 4;
            let wave = C64::from_polar(1.0, xi * x) * u0 * s;
            let want =
                cs.lambda.data()[cell_node] * wave * xi + cs.lambda_tilde.data()[cell_node] * wave;
            assert!(
                (out.data()[node] - want).norm() < 1e-12 * want.norm().max(1.0),
                "node {node}"
            );
        }
    }

    #[test]
    fn approximant_is_linear() {
        let coeffs = two_phase(16, true);
        let (cs, eff) = solved(&coeffs, 1.0);
        let t = torus(128, 2);
        let f1 = TorusFunction::random(t.clone(), 1, Some(12), 1);
        let f2 = TorusFunction::random(t, 1, Some(12), 2);
        let cfg = CorrectorConfig::default();
        let z = C64::new(-1.0, 0.5);
        let a = approx_resolvent(cfg, &cs, &eff, 4, z, &f1.add(&f2), false).unwrap();
        let b = approx_resolvent(cfg, &cs, &eff, 4, z, &f1, false)
            .unwrap()
            .add(&approx_resolvent(cfg, &cs, &eff, 4, z, &f2, false).unwrap());
        assert!(a.sub(&b).l2() <= 1e-12 * a.l2());
    }

    #[test]
    fn adjoints_match() {
        let coeffs = two_phase(16, true);
        let (cs, eff) = solved(&coeffs, 1.0);
        let t = torus(128, 2);
        for cfg in [
            CorrectorConfig::default(),
            CorrectorConfig::smoothed(SmoothingKind::Fourier),
            CorrectorConfig {
                drop_s_lambda: true,
                ..Default::default()
            },
        ] {
            for dealias in [false, true] {
                let ops = CorrectorOps::new(&cs, &eff.b, 4, &t, cfg, dealias).unwrap();
                let sp = ops.spectral();
                let u = to_coeffs(sp, &TorusFunction::random(t.clone(), 1, None, 4));
                let v = to_coeffs(sp, &TorusFunction::random(t.clone(), 1, None, 5));
                let dot = |x: &[C64], y: &[C64]| crate::krylov::dot(x, y);
                let lhs = dot(&ops.corrector_coeffs(&u), &v);
                let rhs = dot(&u, &ops.corrector_adjoint_coeffs(&v));
                assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
                let lhs = dot(&ops.flux_coeffs(&u), &v);
                let rhs = dot(&u, &ops.flux_adjoint_coeffs(&v));
                assert!((lhs - rhs).norm() < 1e-10 * lhs.norm(), "dealias {dealias}");
            }
        }
    }

    #[test]
    fn variants_follow_flags() {
        let mut cfg = CorrectorConfig::default();
        assert_eq!(cfg.flux_variant(), FluxVariant::G);
        cfg.drop_s_lambda = true;
        assert_eq!(cfg.flux_variant(), FluxVariant::G1);
        cfg.drop_s_lambda_tilde = true;
        assert_eq!(cfg.flux_variant(), FluxVariant::G3);
        cfg.drop_s_lambda = false;
        assert_eq!(cfg.flux_variant(), FluxVariant::G2);
        assert_eq!(
            CorrectorConfig::smoothed(SmoothingKind::None).flux_variant(),
            FluxVariant::G3
        );
    }

    fn band_rhs(t: &TorusGrid) -> TorusFunction {
        TorusFunction::from_fn(t.clone(), 1, |x| {
            let s = 2.0 * PI * x[0];
            vec![C64::new(
                s.cos() + 0.5 * (2.0 * s).sin(),
                0.3 * (3.0 * s).cos(),
            )]
        })
    }

    #[test]
    fn corrector_improves_h1_accuracy() {
        let coeffs = two_phase(16, true);
        let (cs, eff) = solved(&coeffs, 1.0);
        let k = 32;
        let t = torus(16 * k, 1);
        let op = OscillatoryOperator::new(&coeffs, k, &t, 1.0, false).unwrap();
        let f = band_rhs(&t);
        let z = SpectralParameter::new(c(-1.0)).unwrap();
        let (u, _) = solve_oscillatory(&op, &eff, &z, &f, &KrylovConfig::default()).unwrap();
        let u0 = crate::resolvent::solve_effective(&eff, z.zeta, &f).unwrap();
        let approx =
            approx_resolvent(CorrectorConfig::default(), &cs, &eff, k, z.zeta, &f, false).unwrap();
        let with = u.sub(&approx).norms().h1;
        let without = u.sub(&u0).norms().h1;
        assert!(
            without >= 3.0 * with,
            "with {with:.3e}, without {without:.3e}"
        );
    }
}
