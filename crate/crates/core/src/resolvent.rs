//! Generalized resolvents on the torus.
//!
//! The oscillatory operator `B_ε − ζQ₀^ε` is applied matrix-free on Fourier
//! coefficients and inverted by right-preconditioned GMRES, with the effective
//! resolvent `(L₀(ξ) − ζQ̄₀)^{-1}` (diagonal in Fourier) as preconditioner.
//! All coefficient vectors are component-major over the torus mode set.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cellsolve::EffectiveOperator;
use crate::error::{Error, Result};
use crate::fields::{apply_entries_add, PeriodicField, TorusFunction};
use crate::krylov::{self, KrylovConfig, KrylovStats};
use crate::lattice::TorusGrid;
use crate::linalg::{c, condition, hermitian_part, identity, pencil_min_eigenvalue, CMat};
use crate::scratch;
use crate::spectral::Spectral;
use crate::symbols::SymbolB;

/// Periodic coefficients of `𝓑 = b(D)* g b(D) + Σ (a_j D_j + D_j a_j*) + Q`
/// and the weight `Q₀`, all on one cell grid.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub b: SymbolB,
    pub g: PeriodicField,
    pub a: Vec<PeriodicField>,
    pub q: PeriodicField,
    pub q0: PeriodicField,
    /// Scalar potential entering the oscillatory operator as `ε^{-2} v(x/ε)`.
    pub singular: Option<PeriodicField>,
}

impl Coefficients {
    pub fn cell_grid(&self) -> &TorusGrid {
        self.g.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n, d) = (self.b.m(), self.b.n(), self.b.dim());
        let grid = self.cell_grid();
        if grid.dim() != d {
            return Err(Error::ShapeMismatch(
                "symbol and cell grid dimensions differ".into(),
            ));
        }
        if self.g.shape() != (m, m) {
            return Err(Error::ShapeMismatch(format!("g must be {m}x{m}")));
        }
        if self.a.len() != d || self.a.iter().any(|a| a.shape() != (n, n)) {
            return Err(Error::ShapeMismatch(format!(
                "need {d} coefficients a_j of shape {n}x{n}"
            )));
        }
        if self.q.shape() != (n, n) || self.q0.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!("Q and Q0 must be {n}x{n}")));
        }
        if let Some(v) = &self.singular {
            if v.shape() != (1, 1) || n != 1 {
                return Err(Error::ShapeMismatch(
                    "singular potential needs n = 1".into(),
                ));
            }
        }
        let all = [&self.g, &self.q, &self.q0]
            .into_iter()
            .chain(&self.a)
            .chain(self.singular.as_ref());
        if all.into_iter().any(|f| f.grid() != grid) {
            return Err(Error::ShapeMismatch(
                "coefficients live on different grids".into(),
            ));
        }
        self.g.check_positive()?;
        self.q0.check_positive()
    }
}

/// Spectral parameter `ζ` off the half-line `[c_♭, ∞)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SpectralParameter {
    pub zeta: C64,
    pub c_flat: f64,
}

impl SpectralParameter {
    pub fn new(zeta: C64) -> Result<Self> {
        Self::with_lower_bound(zeta, 0.0)
    }

    pub fn with_lower_bound(zeta: C64, c_flat: f64) -> Result<Self> {
        if !zeta.re.is_finite() || !zeta.im.is_finite() || (zeta.im == 0.0 && zeta.re >= c_flat) {
            return Err(Error::InadmissibleZeta {
                re: zeta.re,
                im: zeta.im,
            });
        }
        Ok(Self { zeta, c_flat })
    }

    /// `ζ = |ζ| e^{iφ}` on the ray `φ`.
    pub fn polar(modulus: f64, phi: f64) -> Result<Self> {
        Self::new(C64::from_polar(modulus, phi))
    }

    /// `arg ζ ∈ (0, 2π)`.
    pub fn phi(&self) -> f64 {
        let a = self.zeta.arg();
        if a <= 0.0 {
            a + 2.0 * std::f64::consts::PI
        } else {
            a
        }
    }
}

/// `B_ε = 𝓑_ε + c₅Q₀^ε` sampled on a torus grid.
pub struct OscillatoryOperator {
    sp: Spectral,
    plain: Spectral,
    b: SymbolB,
    table: Vec<C64>,
    g: Vec<C64>,
    a: Vec<Vec<C64>>,
    /// `Q^ε + ε^{-2}v^ε + c₅Q₀^ε`.
    q: Vec<C64>,
    q0: Vec<C64>,
    g_torus: PeriodicField,
    band: Vec<bool>,
    k: usize,
    c5: f64,
}

impl std::fmt::Debug for OscillatoryOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OscillatoryOperator")
            .field("points", &self.plain.grid().points())
            .field("k", &self.k)
            .field("c5", &self.c5)
            .finish()
    }
}

impl OscillatoryOperator {
    /// Samples the coefficients at `ε = 1/k` on `torus`.
    pub fn new(
        coeffs: &Coefficients,
        k: usize,
        torus: &TorusGrid,
        c5: f64,
        dealias: bool,
    ) -> Result<Self> {
        coeffs.validate()?;
        let sp = if dealias {
            Spectral::dealiased(torus)
        } else {
            Spectral::new(torus)
        };
        let n = coeffs.b.n();
        let g_torus = coeffs.g.sample_scaled(k, torus)?;
        let mut q = coeffs.q.sample_scaled(k, torus)?;
        let q0 = coeffs.q0.sample_scaled(k, torus)?;
        q = q.add(&q0.scale(c(c5)))?;
        if let Some(v) = &coeffs.singular {
            let scale = (k * k) as f64;
            q = q.add(&v.sample_scaled(k, torus)?.scale(c(scale)))?;
        }
        debug_assert_eq!(q.shape(), (n, n));
        let a = coeffs
            .a
            .iter()
            .map(|aj| Ok(aj.sample_scaled(k, torus)?.phys_data(&sp)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            table: coeffs.b.table(&sp),
            g: g_torus.phys_data(&sp),
            a,
            q: q.phys_data(&sp),
            q0: q0.phys_data(&sp),
            plain: Spectral::new(torus),
            b: coeffs.b.clone(),
            band: torus.cell_band(coeffs.g.grid().points()),
            g_torus,
            k,
            c5,
            sp,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.plain.grid()
    }

    /// Collocation transforms on the torus grid.
    pub fn spectral(&self) -> &Spectral {
        &self.plain
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.k as f64
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c5(&self) -> f64 {
        self.c5
    }

    pub fn symbol(&self) -> &SymbolB {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.b.n()
    }

    pub fn nmodes(&self) -> usize {
        self.plain.nmodes()
    }

    /// `g^ε` on the torus grid.
    pub fn g_torus(&self) -> &PeriodicField {
        &self.g_torus
    }

    /// Modes of the discrete space: those whose cell harmonic lies inside
    /// the symmetric cell band (see [`TorusGrid::cell_band`]).
    pub fn band(&self) -> &[bool] {
        &self.band
    }

    /// Zeroes the coefficients outside [`Self::band`], component by component.
    pub fn project(&self, u: &mut [C64]) {
        let nm = self.band.len();
        for (i, z) in u.iter_mut().enumerate() {
            if !self.band[i % nm] {
                *z = C64::default();
            }
        }
    }

    pub fn projected(&self, u: &[C64]) -> Vec<C64> {
        let mut v = u.to_vec();
        self.project(&mut v);
        v
    }

    /// `out = (B_ε − ζQ₀^ε) u` on coefficients.
    pub fn apply_coeffs(&self, zeta: C64, u: &[C64], out: &mut [C64]) {
        let mut uc = scratch::copied(u);
        self.project(&mut uc);
        let u = &uc[..];
        let (m, n) = (self.b.m(), self.b.n());
        let nm = self.sp.nmodes();
        let np = self.sp.nphys();
        let mut bu = scratch::zeroed(m * nm);
        self.b.apply_coeffs(&self.table, u, &mut bu);
        let mut phys = scratch::zeroed(m * np);
        self.sp.inverse_many(&bu, &mut phys);
        let mut w = scratch::zeroed(m * np);
        apply_entries_add(&self.g, (m, m), np, &phys, &mut w, false);
        let mut wh = scratch::zeroed(m * nm);
        self.sp.forward_many(&w, &mut wh);
        self.b.apply_adjoint_coeffs(&self.table, &wh, out);

        let mut up = scratch::zeroed(n * np);
        self.sp.inverse_many(u, &mut up);
        let mut acc = scratch::zeroed(n * np);
        apply_entries_add(&self.q, (n, n), np, &up, &mut acc, false);
        if zeta != C64::default() {
            let mut tmp = scratch::zeroed(n * np);
            apply_entries_add(&self.q0, (n, n), np, &up, &mut tmp, false);
            for (a, t) in acc.iter_mut().zip(&tmp) {
                *a -= zeta * t;
            }
        }
        let mut du = scratch::zeroed(n * nm);
        let mut dup = scratch::zeroed(n * np);
        let mut tmp = scratch::zeroed(n * np);
        let mut th = scratch::zeroed(n * nm);
        for (j, aj) in self.a.iter().enumerate() {
            for (i, (d, x)) in du.iter_mut().zip(u).enumerate() {
                *d = x * self.sp.xi(i % nm)[j];
            }
            self.sp.inverse_many(&du, &mut dup);
            apply_entries_add(aj, (n, n), np, &dup, &mut acc, false);
            tmp.iter_mut().for_each(|z| *z = C64::default());
            apply_entries_add(aj, (n, n), np, &up, &mut tmp, true);
            self.sp.forward_many(&tmp, &mut th);
            for (i, (o, t)) in out.iter_mut().zip(&th).enumerate() {
                *o += t * self.sp.xi(i % nm)[j];
            }
        }
        let mut ah = scratch::zeroed(n * nm);
        self.sp.forward_many(&acc, &mut ah);
        for (o, a) in out.iter_mut().zip(&ah) {
            *o += a;
        }
        self.project(out);
    }

    /// `out = Q₀^ε u` on coefficients.
    pub fn apply_weight_coeffs(&self, u: &[C64], out: &mut [C64]) {
        let n = self.b.n();
        let np = self.sp.nphys();
        let mut up = scratch::zeroed(n * np);
        let mut uc = scratch::copied(u);
        self.project(&mut uc);
        self.sp.inverse_many(&uc, &mut up);
        let mut acc = scratch::zeroed(n * np);
        apply_entries_add(&self.q0, (n, n), np, &up, &mut acc, false);
        self.sp.forward_many(&acc, out);
        self.project(out);
    }

    /// `(B_ε − ζQ₀^ε) u`.
    pub fn apply(&self, zeta: C64, u: &TorusFunction) -> Result<TorusFunction> {
        self.check_input(u, self.n())?;
        let uh = to_coeffs(&self.plain, u);
        let mut out = vec![C64::default(); uh.len()];
        self.apply_coeffs(zeta, &uh, &mut out);
        Ok(from_coeffs(&self.plain, self.n(), &out))
    }

    /// Flux `g^ε b(D) u` as coefficients with `m` components.
    pub fn flux_coeffs(&self, u: &[C64]) -> Vec<C64> {
        let m = self.b.m();
        let nm = self.sp.nmodes();
        let np = self.sp.nphys();
        let mut bu = scratch::zeroed(m * nm);
        let mut uc = scratch::copied(u);
        self.project(&mut uc);
        self.b.apply_coeffs(&self.table, &uc, &mut bu);
        let mut phys = scratch::zeroed(m * np);
        self.sp.inverse_many(&bu, &mut phys);
        let mut w = scratch::zeroed(m * np);
        apply_entries_add(&self.g, (m, m), np, &phys, &mut w, false);
        let mut out = vec![C64::default(); m * nm];
        self.sp.forward_many(&w, &mut out);
        out
    }

    /// Adjoint of [`Self::flux_coeffs`]: `b(D)* g^ε v`.
    pub fn flux_adjoint_coeffs(&self, v: &[C64]) -> Vec<C64> {
        let m = self.b.m();
        let nm = self.sp.nmodes();
        let np = self.sp.nphys();
        let mut phys = scratch::zeroed(m * np);
        self.sp.inverse_many(v, &mut phys);
        let mut w = scratch::zeroed(m * np);
        apply_entries_add(&self.g, (m, m), np, &phys, &mut w, true);
        let mut wh = scratch::zeroed(m * nm);
        self.sp.forward_many(&w, &mut wh);
        let mut out = vec![C64::default(); self.b.n() * nm];
        self.b.apply_adjoint_coeffs(&self.table, &wh, &mut out);
        self.project(&mut out);
        out
    }

    fn check_input(&self, u: &TorusFunction, ncomp: usize) -> Result<()> {
        if u.grid() != self.grid() || u.ncomp() != ncomp {
            return Err(Error::ShapeMismatch(format!(
                "operator expects {ncomp} components on grid {:?}",
                self.grid().points()
            )));
        }
        Ok(())
    }
}

pub(crate) fn to_coeffs(sp: &Spectral, u: &TorusFunction) -> Vec<C64> {
    let mut out = vec![C64::default(); u.data().len()];
    sp.forward_many(u.data(), &mut out);
    out
}

pub(crate) fn from_coeffs(sp: &Spectral, ncomp: usize, coeffs: &[C64]) -> TorusFunction {
    let mut out = vec![C64::default(); coeffs.len()];
    sp.inverse_many(coeffs, &mut out);
    TorusFunction::new(sp.grid().clone(), ncomp, out).expect("coefficient length matches grid")
}

/// Per-mode inverses `(L₀(ξ) − ζQ̄₀)^{-1}` over a torus mode set.
#[derive(Debug, Clone)]
pub struct EffectiveResolvent {
    n: usize,
    nm: usize,
    inv: Vec<C64>,
}

impl EffectiveResolvent {
    pub fn new(eff: &EffectiveOperator, zeta: C64, sp: &Spectral) -> Result<Self> {
        let n = eff.n();
        let nm = sp.nmodes();
        let mut inv = Vec::with_capacity(nm * n * n);
        for idx in 0..nm {
            let mat = eff.l0(sp.xi(idx)) - &eff.q0bar * zeta;
            let cond = condition(&mat);
            let mi = if cond.is_finite() && cond <= 1e14 {
                mat.clone().try_inverse()
            } else {
                None
            };
            let Some(mi) = mi else {
                return Err(Error::ModeSingular {
                    mode: idx,
                    condition: cond,
                });
            };
            for r in 0..n {
                for col in 0..n {
                    inv.push(mi[(r, col)]);
                }
            }
        }
        Ok(Self { n, nm, inv })
    }

    pub fn apply_coeffs(&self, f: &[C64], out: &mut [C64]) {
        let (n, nm) = (self.n, self.nm);
        for idx in 0..nm {
            let m = &self.inv[idx * n * n..(idx + 1) * n * n];
            for r in 0..n {
                let mut acc = C64::default();
                for col in 0..n {
                    acc += m[r * n + col] * f[col * nm + idx];
                }
                out[r * nm + idx] = acc;
            }
        }
    }
}

/// `(B⁰ − ζQ̄₀)^{-1} f`, exact per mode.
pub fn solve_effective(
    eff: &EffectiveOperator,
    zeta: C64,
    f: &TorusFunction,
) -> Result<TorusFunction> {
    if f.ncomp() != eff.n() {
        return Err(Error::ShapeMismatch(
            "right-hand side has the wrong number of components".into(),
        ));
    }
    let sp = Spectral::new(f.grid());
    let r = EffectiveResolvent::new(eff, zeta, &sp)?;
    let fh = to_coeffs(&sp, f);
    let mut out = vec![C64::default(); fh.len()];
    r.apply_coeffs(&fh, &mut out);
    Ok(from_coeffs(&sp, f.ncomp(), &out))
}

/// Preconditioned GMRES on coefficients, warm-started from `x`. The
/// right-hand side is projected onto the operator's band first.
pub fn solve_oscillatory_coeffs(
    op: &OscillatoryOperator,
    pre: &EffectiveResolvent,
    zeta: C64,
    fh: &[C64],
    x: &mut [C64],
    cfg: &KrylovConfig,
) -> Result<KrylovStats> {
    op.project(x);
    krylov::gmres(
        |u, out| op.apply_coeffs(zeta, u, out),
        |r, z| pre.apply_coeffs(r, z),
        &op.projected(fh),
        x,
        cfg,
    )
}

/// `(B_ε − ζQ₀^ε)^{-1} f` by right-preconditioned GMRES.
pub fn solve_oscillatory(
    op: &OscillatoryOperator,
    eff: &EffectiveOperator,
    zeta: &SpectralParameter,
    f: &TorusFunction,
    cfg: &KrylovConfig,
) -> Result<(TorusFunction, KrylovStats)> {
    op.check_input(f, op.n())?;
    let pre = EffectiveResolvent::new(eff, zeta.zeta, op.spectral())?;
    let fh = to_coeffs(op.spectral(), f);
    let mut x = vec![C64::default(); fh.len()];
    let stats = solve_oscillatory_coeffs(op, &pre, zeta.zeta, &fh, &mut x, cfg)?;
    Ok((from_coeffs(op.spectral(), op.n(), &x), stats))
}

/// Conjugate-gradient solve for real `ζ` below the spectrum, where the
/// system is Hermitian positive definite.
pub fn solve_oscillatory_cg(
    op: &OscillatoryOperator,
    eff: &EffectiveOperator,
    zeta: f64,
    f: &TorusFunction,
    cfg: &KrylovConfig,
) -> Result<(TorusFunction, KrylovStats)> {
    op.check_input(f, op.n())?;
    let z = C64::new(zeta, 0.0);
    let pre = EffectiveResolvent::new(eff, z, op.spectral())?;
    let fh = to_coeffs(op.spectral(), f);
    let mut x = vec![C64::default(); fh.len()];
    let stats = krylov::cg(
        |u, out| op.apply_coeffs(z, u, out),
        |r, out| pre.apply_coeffs(r, out),
        &op.projected(&fh),
        &mut x,
        cfg,
    )?;
    Ok((from_coeffs(op.spectral(), op.n(), &x), stats))
}

/// Flux `g^ε b(D) u` of the oscillatory problem.
pub fn flux(op: &OscillatoryOperator, u: &TorusFunction) -> Result<TorusFunction> {
    op.check_input(u, op.n())?;
    let fh = op.flux_coeffs(&to_coeffs(op.spectral(), u));
    Ok(from_coeffs(op.spectral(), op.symbol().m(), &fh))
}

/// Flux `g⁰ b(D) u` of the effective problem.
pub fn effective_flux(eff: &EffectiveOperator, u: &TorusFunction) -> Result<TorusFunction> {
    let bu = crate::symbols::apply_bd(&eff.b, u)?;
    let m = eff.b.m();
    let nodes = u.grid().len();
    let mut out = vec![C64::default(); m * nodes];
    PeriodicField::constant(u.grid().clone(), &eff.g0).apply_add(bu.data(), &mut out);
    TorusFunction::new(u.grid().clone(), m, out)
}

/// Norms on torus functions expressed as Fourier weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L2,
    H1,
    HMinus1,
    /// `‖D u‖_{L2}`.
    DSemi,
}

impl NormKind {
    pub fn weight(self, xi2: f64) -> f64 {
        match self {
            NormKind::L2 => 1.0,
            NormKind::H1 => (1.0 + xi2).sqrt(),
            NormKind::HMinus1 => 1.0 / (1.0 + xi2).sqrt(),
            NormKind::DSemi => xi2.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OpNormConfig {
    pub iters: usize,
    pub seeds: usize,
    pub seed: u64,
    /// Stop a seed early once successive estimates change by less than this.
    pub stall_tol: f64,
}

impl Default for OpNormConfig {
    fn default() -> Self {
        Self {
            iters: 60,
            seeds: 5,
            seed: 0,
            stall_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OpNormEstimate {
    pub estimate: f64,
    /// `(max − min) / max` over seeds.
    pub spread: f64,
    pub per_seed: Vec<f64>,
    pub iterations: usize,
}

/// Linear map on coefficient vectors together with its adjoint.
pub trait LinearMap {
    fn n_in(&self) -> usize;
    fn n_out(&self) -> usize;
    fn apply(&mut self, x: &[C64]) -> Result<Vec<C64>>;
    fn apply_adjoint(&mut self, y: &[C64]) -> Result<Vec<C64>>;
}

/// Randomized power iteration on `T*T` with `T = W_out A W_in^{-1}`, so the
/// result estimates `‖A‖` between the weighted spaces. Every vector lives on
/// the mode set whose `|ξ|²` table is `xi2`.
pub fn estimate_opnorm(
    map: &mut dyn LinearMap,
    xi2: &[f64],
    norm_in: NormKind,
    norm_out: NormKind,
    cfg: &OpNormConfig,
) -> Result<OpNormEstimate> {
    if norm_in == NormKind::DSemi {
        return Err(Error::InvalidConfig(
            "the D-seminorm is only valid as an output norm".into(),
        ));
    }
    if cfg.iters < 20 || cfg.seeds < 3 {
        return Err(Error::InvalidConfig(
            "operator norms need iters >= 20 and seeds >= 3".into(),
        ));
    }
    let nm = xi2.len();
    let w_in: Vec<f64> = xi2.iter().map(|&x| 1.0 / norm_in.weight(x)).collect();
    let w_out: Vec<f64> = xi2.iter().map(|&x| norm_out.weight(x)).collect();
    let scale = |v: &mut [C64], w: &[f64]| {
        for (i, z) in v.iter_mut().enumerate() {
            *z *= w[i % nm];
        }
    };
    let mut per_seed = Vec::with_capacity(cfg.seeds);
    let mut total_iters = 0;
    for s in 0..cfg.seeds {
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(s as u64));
        let mut x: Vec<C64> = (0..map.n_in() * nm)
            .map(|_| {
                C64::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                )
            })
            .collect();
        let nx = krylov::norm(&x);
        x.iter_mut().for_each(|z| *z /= nx);
        let mut history: Vec<f64> = Vec::new();
        for _ in 0..cfg.iters {
            total_iters += 1;
            let mut v = x.clone();
            scale(&mut v, &w_in);
            let mut y = map.apply(&v)?;
            scale(&mut y, &w_out);
            let est = krylov::norm(&y);
            history.push(est);
            if est == 0.0 {
                break;
            }
            scale(&mut y, &w_out);
            let mut z = map.apply_adjoint(&y)?;
            scale(&mut z, &w_in);
            let nz = krylov::norm(&z);
            if nz == 0.0 {
                break;
            }
            x = z.into_iter().map(|v| v / nz).collect();
            if let [.., a, b] = history.as_slice() {
                if (b - a).abs() <= cfg.stall_tol * b {
                    break;
                }
            }
        }
        let last = *history.last().unwrap_or(&0.0);
        if history.len() == cfg.iters && history.len() >= 2 {
            let prev = history[history.len() - 2];
            let change = (last - prev).abs() / last.max(1e-300);
            if change > 0.05 {
                let estimate = history.iter().copied().fold(0.0, f64::max);
                return Err(Error::NoConvergence { change, estimate });
            }
        }
        per_seed.push(last);
    }
    let max = per_seed.iter().copied().fold(0.0, f64::max);
    let min = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OpNormEstimate {
        estimate: max,
        spread: if max > 0.0 { (max - min) / max } else { 0.0 },
        per_seed,
        iterations: total_iters,
    })
}

/// Outcome of the shift calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftCalibration {
    /// Smallest generalized eigenvalue of `(𝓑_ε, Q₀^ε)` without shift.
    pub lambda_min: f64,
    /// Smallest per-mode eigenvalue of `(𝓑⁰(ξ), Q̄₀)` over the torus modes.
    pub lambda_min_effective: f64,
    pub c5: f64,
    pub iterations: usize,
}

/// Smallest eigenvalue of the pencil `(B_ε, Q₀^ε)` for the operator as built
/// (including its `c₅`), by preconditioned LOPCG.
pub fn pencil_bottom(
    op: &OscillatoryOperator,
    eff: &EffectiveOperator,
    seed: u64,
) -> Result<(f64, usize)> {
    let sp = op.spectral();
    let nm = sp.nmodes();
    let n = op.n();
    let gbar = hermitian_part(&eff.g0);
    let shift = 1.0 + eff.qbar.iter().map(|z| z.norm()).fold(0.0, f64::max) + op.c5().abs();
    let pre: Vec<CMat> = (0..nm)
        .map(|i| {
            let bx = eff.b.eval(sp.xi(i));
            (bx.adjoint() * &gbar * &bx + identity(n) * c(shift))
                .try_inverse()
                .unwrap_or_else(|| identity(n))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0: Vec<C64> = (0..n * nm)
        .map(|i| {
            let r: f64 = StandardNormal.sample(&mut rng);
            let base = if i % nm == 0 { 1.0 } else { 0.0 };
            c(base + 1e-3 * r / (1.0 + sp.xi2()[i % nm]))
        })
        .collect();
    op.project(&mut x0);
    let nx = krylov::norm(&x0);
    x0.iter_mut().for_each(|z| *z /= nx);
    let (lambda, _, iters) = krylov::lopcg_smallest(
        |u, out| op.apply_coeffs(C64::default(), u, out),
        |u, out| op.apply_weight_coeffs(u, out),
        |r, z| {
            for (idx, p) in pre.iter().enumerate() {
                for i in 0..n {
                    let mut acc = C64::default();
                    for j in 0..n {
                        acc += p[(i, j)] * r[j * nm + idx];
                    }
                    z[i * nm + idx] = acc;
                }
            }
        },
        &x0,
        1e-9,
        4000,
    )?;
    Ok((lambda, iters))
}

/// Smallest per-mode eigenvalue of `(L₀(ξ), Q̄₀)` over the modes of `sp`.
pub fn effective_bottom(eff: &EffectiveOperator, sp: &Spectral) -> f64 {
    (0..sp.nmodes())
        .map(|i| pencil_min_eigenvalue(&eff.l0(sp.xi(i)), &eff.q0bar).unwrap_or(f64::NEG_INFINITY))
        .fold(f64::INFINITY, f64::min)
}

/// Determines `c₅ = max(0, −λ_min) + margin` where `λ_min` is the lower of the
/// oscillatory and effective pencil bottoms for the unshifted operators.
pub fn calibrate_shift(
    coeffs: &Coefficients,
    eff_unshifted: &EffectiveOperator,
    k: usize,
    torus: &TorusGrid,
    dealias: bool,
    margin: f64,
) -> Result<ShiftCalibration> {
    let eff0 = eff_unshifted.with_shift(0.0);
    let op = OscillatoryOperator::new(coeffs, k, torus, 0.0, dealias)?;
    let (lambda_min, iterations) = pencil_bottom(&op, &eff0, k as u64)?;
    let lambda_min_effective = effective_bottom(&eff0, op.spectral());
    let c5 = (-lambda_min.min(lambda_min_effective)).max(0.0) + margin;
    Ok(ShiftCalibration {
        lambda_min,
        lambda_min_effective,
        c5,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellsolve::{build_effective, solve_cell, CellConfig};
    use crate::lattice::Lattice;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn cell(points: usize) -> TorusGrid {
        TorusGrid::cell(Arc::new(Lattice::cubic(1)), vec![points]).unwrap()
    }

    fn scalar(grid: &TorusGrid, f: impl Fn(f64) -> f64) -> PeriodicField {
        PeriodicField::scalar_fn(grid.clone(), |t| f(t[0]))
    }

    fn model(grid: &TorusGrid, oscillating: bool) -> Coefficients {
        let osc = if oscillating { 1.0 } else { 0.0 };
        Coefficients {
            b: SymbolB::gradient(1),
            g: scalar(grid, |x| if oscillating && x >= 0.5 { 4.0 } else { 1.0 }),
            a: vec![PeriodicField::from_fn(grid.clone(), 1, 1, |t| {
                CMat::from_element(
                    1,
                    1,
                    C64::new(
                        -0.3 * osc * (2.0 * PI * t[0]).cos(),
                        0.4 * osc * (2.0 * PI * t[0]).sin(),
                    ),
                )
            })],
            q: scalar(grid, |x| 0.5 + osc * 0.5 * (2.0 * PI * x).cos()),
            q0: scalar(grid, |x| 1.0 + osc * 0.3 * (2.0 * PI * x).cos()),
            singular: None,
        }
    }

    fn effective(coeffs: &Coefficients, c5: f64) -> EffectiveOperator {
        let cs = solve_cell(&coeffs.g, &coeffs.a, &coeffs.b, &CellConfig::default()).unwrap();
        build_effective(&cs, &coeffs.a, &coeffs.q, &coeffs.q0, &coeffs.b, c5).unwrap()
    }

    fn torus(points: usize, periods: usize) -> TorusGrid {
        TorusGrid::new(Arc::new(Lattice::cubic(1)), vec![points], vec![periods]).unwrap()
    }

    #[test]
    fn effective_resolvent_of_plane_wave() {
        let grid = cell(8);
        let coeffs = model(&grid, false);
        let mut eff = effective(&coeffs, 0.0);
        eff.qbar = CMat::zeros(1, 1);
        let t = torus(32, 2);
        let u = TorusFunction::plane_wave(t.clone(), 1, 0, &[3]);
        let k2 = (2.0 * PI * 3.0 / 2.0).powi(2);
        let r = solve_effective(&eff, c(-1.0), &u).unwrap();
        for (a, b) in r.data().iter().zip(u.data()) {
            assert!((a - b / (k2 + 1.0)).norm() < 1e-13);
        }
        let one = TorusFunction::from_fn(t, 1, |_| vec![c(2.0)]);
        let r = solve_effective(&eff, c(-1.0), &one).unwrap();
        assert!(r.data().iter().all(|z| (z - 2.0).norm() < 1e-13));
    }

    #[test]
    fn two_by_two_diagonal_symbol() {
        let t = torus(16, 1);
        let b = SymbolB::new(vec![crate::linalg::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]])]).unwrap();
        let eff = EffectiveOperator {
            b,
            g0: identity(2),
            v: CMat::zeros(2, 2),
            abar: vec![CMat::zeros(2, 2)],
            qbar: CMat::zeros(2, 2),
            w: CMat::zeros(2, 2),
            q0bar: crate::linalg::from_rows(&[&[1.0, 0.0], &[0.0, 3.0]]),
            c5: 0.0,
            lambda0: 1.0,
        };
        let f = TorusFunction::random(t.clone(), 2, None, 3);
        let u = solve_effective(&eff, C64::i(), &f).unwrap();
        let sp = Spectral::new(&t);
        let (fh, uh) = (to_coeffs(&sp, &f), to_coeffs(&sp, &u));
        for idx in 0..16 {
            let xi = sp.xi(idx)[0];
            let m = CMat::from_fn(2, 2, |r, cc| {
                if r != cc {
                    C64::default()
                } else if r == 0 {
                    c(xi * xi) - C64::i()
                } else {
                    c(4.0 * xi * xi) - C64::i() * 3.0
                }
            });
            let inv = m.try_inverse().unwrap();
            for r in 0..2 {
                let want = inv[(r, 0)] * fh[idx] + inv[(r, 1)] * fh[16 + idx];
                assert!((uh[r * 16 + idx] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_coefficients_match_effective() {
        let grid = cell(8);
        let coeffs = model(&grid, false);
        let eff = effective(&coeffs, 0.5);
        let t = torus(64, 4);
        let op = OscillatoryOperator::new(&coeffs, 2, &t, 0.5, false).unwrap();
        let f = TorusFunction::random(t, 1, Some(20), 1);
        let z = SpectralParameter::polar(2.0, 2.0).unwrap();
        let (u, stats) = solve_oscillatory(&op, &eff, &z, &f, &KrylovConfig::default()).unwrap();
        let u0 = solve_effective(&eff, z.zeta, &f).unwrap();
        assert!(u.sub(&u0).l2() <= 1e-9 * u0.l2());
        assert!(stats.iterations <= 2);
    }

    #[test]
    fn oscillatory_solve_contract_and_cg_agreement() {
        let grid = cell(16);
        let coeffs = model(&grid, true);
        let eff = effective(&coeffs, 1.0);
        let t = torus(256, 4);
        let op = OscillatoryOperator::new(&coeffs, 4, &t, 1.0, false).unwrap();
        let f = TorusFunction::random(t, 1, Some(40), 2);
        let cfg = KrylovConfig::default();
        let z = -eff.lambda0;
        let (u1, s1) =
            solve_oscillatory(&op, &eff, &SpectralParameter::new(c(z)).unwrap(), &f, &cfg).unwrap();
        let (u2, _) = solve_oscillatory_cg(&op, &eff, z, &f, &cfg).unwrap();
        assert!(u1.sub(&u2).l2() <= 1e-8 * u1.l2());
        let r = op.apply(c(z), &u1).unwrap().sub(&f);
        assert!(
            r.l2() <= cfg.rtol * f.l2() * 1.0001,
            "{} {:?}",
            r.l2() / f.l2(),
            s1
        );
    }

    #[test]
    fn operator_is_hermitian() {
        let grid = cell(16);
        let coeffs = model(&grid, true);
        let t = torus(128, 2);
        for dealias in [false, true] {
            let op = OscillatoryOperator::new(&coeffs, 4, &t, 0.3, dealias).unwrap();
            let u = TorusFunction::random(t.clone(), 1, None, 5);
            let v = TorusFunction::random(t.clone(), 1, None, 6);
            let bu = op.apply(C64::default(), &u).unwrap();
            let bv = op.apply(C64::default(), &v).unwrap();
            let lhs = bu.inner(&v);
            let rhs = u.inner(&bv);
            assert!(
                (lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0),
                "dealias {dealias}"
            );
        }
    }

    #[test]
    fn flux_of_plane_wave_and_constant() {
        let grid = cell(32);
        let coeffs = model(&grid, false);
        let t = torus(32, 1);
        let mut c1 = coeffs.clone();
        c1.g = scalar(&grid, |_| 1.0);
        let op = OscillatoryOperator::new(&c1, 1, &t, 0.0, false).unwrap();
        let u = TorusFunction::plane_wave(t.clone(), 1, 0, &[2]);
        let fl = flux(&op, &u).unwrap();
        for (a, b) in fl.data().iter().zip(u.data()) {
            assert!((a - b * (4.0 * PI)).norm() < 1e-11);
        }
        let one = TorusFunction::from_fn(t, 1, |_| vec![c(1.0)]);
        assert!(flux(&op, &one).unwrap().l2() < 1e-13);
    }

    #[test]
    fn two_phase_cell_flux_is_constant() {
        // u = x + εΛ(x/ε) has flux g(1 + Λ') = g̲ in the 1D two-phase medium.
        let grid = cell(64);
        let coeffs = model(&grid, true);
        let cs = solve_cell(&coeffs.g, &coeffs.a, &coeffs.b, &CellConfig::default()).unwrap();
        let op = OscillatoryOperator::new(&coeffs, 1, &grid, 0.0, false).unwrap();
        // The periodic part only: flux(Λ) + g = g̃ = g⁰.
        let lam = TorusFunction::new(grid.clone(), 1, cs.lambda.data().to_vec()).unwrap();
        let fl = flux(&op, &lam).unwrap();
        for (node, z) in fl.data().iter().enumerate() {
            let total = z + coeffs.g.data()[node];
            assert!((total - 1.6).norm() < 1e-6, "node {node}: {total}");
        }
    }

    struct Multiplier(Vec<f64>);

    impl LinearMap for Multiplier {
        fn n_in(&self) -> usize {
            1
        }
        fn n_out(&self) -> usize {
            1
        }
        fn apply(&mut self, x: &[C64]) -> Result<Vec<C64>> {
            Ok(x.iter().zip(&self.0).map(|(a, m)| a * m).collect())
        }
        fn apply_adjoint(&mut self, y: &[C64]) -> Result<Vec<C64>> {
            self.apply(y)
        }
    }

    #[test]
    fn opnorm_of_multipliers() {
        let t = torus(64, 2);
        let sp = Spectral::new(&t);
        let cfg = OpNormConfig::default();
        let sym: Vec<f64> = sp
            .xi2()
            .iter()
            .map(|&x| 1.0 / (1.0 + x) + 0.2 * (x.sqrt()).sin())
            .collect();
        let max = sym.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let est = estimate_opnorm(
            &mut Multiplier(sym),
            sp.xi2(),
            NormKind::L2,
            NormKind::L2,
            &cfg,
        )
        .unwrap();
        assert!((est.estimate - max).abs() <= 0.01 * max);
        let est = estimate_opnorm(
            &mut Multiplier(vec![0.0; 64]),
            sp.xi2(),
            NormKind::L2,
            NormKind::L2,
            &cfg,
        )
        .unwrap();
        assert_eq!(est.estimate, 0.0);
        let est = estimate_opnorm(
            &mut Multiplier(vec![3.0; 64]),
            sp.xi2(),
            NormKind::L2,
            NormKind::L2,
            &cfg,
        )
        .unwrap();
        assert!((est.estimate - 3.0).abs() < 1e-6);
        // Identity from H1 to L2 has norm 1 (attained at the zero mode).
        let est = estimate_opnorm(
            &mut Multiplier(vec![1.0; 64]),
            sp.xi2(),
            NormKind::H1,
            NormKind::L2,
            &cfg,
        )
        .unwrap();
        assert!((est.estimate - 1.0).abs() < 1e-3);
    }

    #[test]
    fn spectral_parameter_admissibility() {
        assert!(SpectralParameter::new(c(1.0)).is_err());
        assert!(SpectralParameter::new(c(0.0)).is_err());
        assert!(SpectralParameter::new(c(-1.0)).is_ok());
        assert!(SpectralParameter::with_lower_bound(c(0.2), 0.5).is_ok());
        let p = SpectralParameter::polar(1.0, 1.5 * PI).unwrap();
        assert!((p.phi() - 1.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn calibrated_shift_makes_operator_nonnegative() {
        let grid = cell(16);
        let mut coeffs = model(&grid, true);
        coeffs.q = scalar(&grid, |x| -2.0 + (2.0 * PI * x).cos());
        let eff = effective(&coeffs, 0.0);
        let t = torus(128, 2);
        let cal = calibrate_shift(&coeffs, &eff, 4, &t, false, 0.25).unwrap();
        assert!(cal.lambda_min < 0.0);
        let eff = eff.with_shift(cal.c5);
        let op = OscillatoryOperator::new(&coeffs, 4, &t, cal.c5, false).unwrap();
        let (bottom, _) = pencil_bottom(&op, &eff, 9).unwrap();
        assert!(bottom >= 0.25 - 1e-6);
        for seed in 0..5 {
            let u = TorusFunction::random(t.clone(), 1, None, seed);
            let q = op.apply(C64::default(), &u).unwrap().inner(&u).re;
            assert!(q >= -1e-9 * u.l2().powi(2));
        }
    }
}
