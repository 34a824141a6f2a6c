//! Matrix-free Krylov solvers on complex vectors.
//!
//! All solvers use the Euclidean inner product of the coefficient arrays they
//! are given; callers pick the representation (the spectral solvers pass
//! Fourier coefficients, where this is proportional to the L2 product).

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::CMat;

#[derive(Debug, Clone, Copy)]
pub struct KrylovConfig {
    pub rtol: f64,
    pub maxiter: usize,
    pub restart: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            maxiter: 2000,
            restart: 60,
        }
    }
}

/// Outcome of a Krylov solve; `residual` is the true relative residual.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(a: C64, x: &[C64], y: &mut [C64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn true_residual(
    apply: &mut impl FnMut(&[C64], &mut [C64]),
    b: &[C64],
    x: &[C64],
    r: &mut [C64],
) -> f64 {
    apply(x, r);
    for (r, b) in r.iter_mut().zip(b) {
        *r = b - *r;
    }
    norm(r)
}

/// Preconditioned conjugate gradients for a Hermitian positive definite
/// operator, starting from `x`.
pub fn cg(
    mut apply: impl FnMut(&[C64], &mut [C64]),
    mut precond: impl FnMut(&[C64], &mut [C64]),
    b: &[C64],
    x: &mut [C64],
    cfg: &KrylovConfig,
) -> Result<KrylovStats> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|z| *z = C64::default());
        return Ok(KrylovStats {
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let target = cfg.rtol * bnorm;
    let mut r = vec![C64::default(); n];
    let mut rn = true_residual(&mut apply, b, x, &mut r);
    let mut z = vec![C64::default(); n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z).re;
    let mut ap = vec![C64::default(); n];
    let mut it = 0;
    while it < cfg.maxiter {
        if rn <= target {
            // Confirm with an explicit residual; recurrences drift.
            rn = true_residual(&mut apply, b, x, &mut r);
            if rn <= target {
                break;
            }
            precond(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z).re;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap).re;
        if !(pap > 0.0) {
            return Err(Error::SolverDiverged {
                iterations: it,
                residual: rn / bnorm,
                target: cfg.rtol,
            });
        }
        let alpha = rz / pap;
        axpy(C64::new(alpha, 0.0), &p, x);
        axpy(C64::new(-alpha, 0.0), &ap, &mut r);
        rn = norm(&r);
        precond(&r, &mut z);
        let rz_new = dot(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for (p, z) in p.iter_mut().zip(&z) {
            *p = z + *p * beta;
        }
        it += 1;
    }
    let rn = true_residual(&mut apply, b, x, &mut r);
    if rn > target {
        return Err(Error::SolverDiverged {
            iterations: it,
            residual: rn / bnorm,
            target: cfg.rtol,
        });
    }
    Ok(KrylovStats {
        iterations: it,
        residual: rn / bnorm,
        converged: true,
    })
}

/// Right-preconditioned restarted GMRES: solves `A M y = b`, `x = M y`,
/// starting from `x`. Convergence is judged on the true residual `b - A x`.
pub fn gmres(
    mut apply: impl FnMut(&[C64], &mut [C64]),
    mut precond: impl FnMut(&[C64], &mut [C64]),
    b: &[C64],
    x: &mut [C64],
    cfg: &KrylovConfig,
) -> Result<KrylovStats> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|z| *z = C64::default());
        return Ok(KrylovStats {
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let target = cfg.rtol * bnorm;
    let m = cfg.restart.max(1);
    let mut r = vec![C64::default(); n];
    let mut beta = true_residual(&mut apply, b, x, &mut r);
    let mut iters = 0;
    let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
    let mut zs: Vec<Vec<C64>> = Vec::with_capacity(m);
    let mut h = vec![vec![C64::default(); m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![C64::default(); m];
    let mut g = vec![C64::default(); m + 1];
    let mut w = vec![C64::default(); n];
    let mut stalled_cycles = 0;
    while beta > target {
        if iters >= cfg.maxiter {
            return Err(Error::SolverDiverged {
                iterations: iters,
                residual: beta / bnorm,
                target: cfg.rtol,
            });
        }
        v.clear();
        zs.clear();
        v.push(r.iter().map(|z| z / beta).collect());
        g.iter_mut().for_each(|z| *z = C64::default());
        g[0] = C64::new(beta, 0.0);
        let mut k = 0;
        while k < m && iters < cfg.maxiter {
            let mut z = vec![C64::default(); n];
            precond(&v[k], &mut z);
            apply(&z, &mut w);
            zs.push(z);
            for pass in 0..2 {
                for i in 0..=k {
                    let hik = dot(&v[i], &w);
                    if pass == 0 {
                        h[i][k] = hik;
                    } else {
                        h[i][k] += hik;
                    }
                    axpy(-hik, &v[i], &mut w);
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = C64::new(hn, 0.0);
            for i in 0..k {
                let (a, bb) = (h[i][k], h[i + 1][k]);
                h[i][k] = a * cs[i] + sn[i] * bb;
                h[i + 1][k] = -sn[i].conj() * a + bb * cs[i];
            }
            let (a, bb) = (h[k][k], h[k + 1][k]);
            let rho = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if rho == 0.0 {
                cs[k] = 1.0;
                sn[k] = C64::default();
            } else if a.norm() == 0.0 {
                cs[k] = 0.0;
                sn[k] = bb.conj() / rho;
            } else {
                cs[k] = a.norm() / rho;
                sn[k] = (a / a.norm()) * bb.conj() / rho;
            }
            h[k][k] = cs[k] * a + sn[k] * bb;
            h[k + 1][k] = C64::default();
            g[k + 1] = -sn[k].conj() * g[k];
            g[k] *= cs[k];
            iters += 1;
            k += 1;
            let est = g[k].norm();
            if est <= 0.5 * target || hn <= 1e-300 {
                break;
            }
            v.push(w.iter().map(|z| z / hn).collect());
        }
        // Back substitution for the k x k upper triangle.
        let mut y = vec![C64::default(); k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (yj, zj) in y.iter().zip(&zs) {
            axpy(*yj, zj, x);
        }
        let prev = beta;
        beta = true_residual(&mut apply, b, x, &mut r);
        if beta > 0.999 * prev {
            stalled_cycles += 1;
            if stalled_cycles >= 3 {
                return Err(Error::SolverDiverged {
                    iterations: iters,
                    residual: beta / bnorm,
                    target: cfg.rtol,
                });
            }
        } else {
            stalled_cycles = 0;
        }
    }
    Ok(KrylovStats {
        iterations: iters,
        residual: beta / bnorm,
        converged: true,
    })
}

/// Smallest eigenpair of the Hermitian pencil `(A, M)` with `M` positive
/// definite, by locally optimal preconditioned CG (single vector).
/// Returns the Ritz value and an `M`-normalized vector.
///
/// The search block `[x, p, w]` is `M`-orthonormalized before each
/// Rayleigh-Ritz step, so it stays well conditioned near convergence.
pub fn lopcg_smallest(
    mut apply_a: impl FnMut(&[C64], &mut [C64]),
    mut apply_m: impl FnMut(&[C64], &mut [C64]),
    mut precond: impl FnMut(&[C64], &mut [C64]),
    x0: &[C64],
    tol: f64,
    maxiter: usize,
) -> Result<(f64, Vec<C64>, usize)> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut mx = vec![C64::default(); n];
    let mut ax = vec![C64::default(); n];
    apply_m(&x, &mut mx);
    let s = dot(&x, &mx).re.sqrt();
    x.iter_mut().for_each(|z| *z /= s);
    mx.iter_mut().for_each(|z| *z /= s);
    apply_a(&x, &mut ax);
    let mut lambda = dot(&x, &ax).re;
    let mut p: Option<(Vec<C64>, Vec<C64>, Vec<C64>)> = None;
    let mut r = vec![C64::default(); n];
    for it in 0..maxiter {
        for i in 0..n {
            r[i] = ax[i] - mx[i] * lambda;
        }
        let rn = norm(&r);
        if rn <= tol * (norm(&ax) + lambda.abs().max(1.0) * norm(&mx)) {
            return Ok((lambda, x, it));
        }
        let mut basis: Vec<(Vec<C64>, Vec<C64>, Vec<C64>)> = Vec::with_capacity(3);
        basis.push((x.clone(), ax.clone(), mx.clone()));
        if let Some((mut pv, mut ap, mut mp)) = p.take() {
            // p is carried with its images, so project them along.
            for _ in 0..2 {
                let c0 = dot(&mx, &pv);
                axpy(-c0, &x, &mut pv);
                axpy(-c0, &ax, &mut ap);
                axpy(-c0, &mx, &mut mp);
            }
            let pn = dot(&pv, &mp).re.max(0.0).sqrt();
            if pn > 1e-12 {
                for v in [&mut pv, &mut ap, &mut mp] {
                    v.iter_mut().for_each(|z| *z /= pn);
                }
                basis.push((pv, ap, mp));
            }
        }
        let mut w = vec![C64::default(); n];
        precond(&r, &mut w);
        let w0 = norm(&w);
        for _ in 0..2 {
            for (b, _, mb) in &basis {
                let c0 = dot(mb, &w);
                axpy(-c0, b, &mut w);
            }
        }
        let mut mw = vec![C64::default(); n];
        apply_m(&w, &mut mw);
        let wn = dot(&w, &mw).re.max(0.0).sqrt();
        if wn > 1e-10 * w0 && wn > 0.0 {
            w.iter_mut().for_each(|z| *z /= wn);
            mw.iter_mut().for_each(|z| *z /= wn);
            let mut aw = vec![C64::default(); n];
            apply_a(&w, &mut aw);
            basis.push((w, aw, mw));
        } else if basis.len() == 1 {
            return Ok((lambda, x, it));
        }
        let k = basis.len();
        let sa = crate::linalg::hermitian_part(&CMat::from_fn(k, k, |i, j| {
            dot(&basis[i].0, &basis[j].1)
        }));
        let eig = sa.symmetric_eigen();
        let imin = (0..k)
            .min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
            .unwrap_or(0);
        let y = eig.eigenvectors.column(imin).into_owned();
        let mut pn = vec![C64::default(); n];
        let mut apn = vec![C64::default(); n];
        let mut mpn = vec![C64::default(); n];
        for (j, b) in basis.iter().enumerate().skip(1) {
            axpy(y[j], &b.0, &mut pn);
            axpy(y[j], &b.1, &mut apn);
            axpy(y[j], &b.2, &mut mpn);
        }
        for i in 0..n {
            x[i] = x[i] * y[0] + pn[i];
        }
        // Fresh images every step keep the residual honest.
        apply_m(&x, &mut mx);
        let s = dot(&x, &mx).re.sqrt();
        x.iter_mut().for_each(|z| *z /= s);
        mx.iter_mut().for_each(|z| *z /= s);
        apply_a(&x, &mut ax);
        lambda = dot(&x, &ax).re;
        p = Some((pn, apn, mpn));
    }
    for i in 0..n {
        r[i] = ax[i] - mx[i] * lambda;
    }
    Err(Error::SolverDiverged {
        iterations: maxiter,
        residual: norm(&r),
        target: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hpd(n: usize) -> CMat {
        let a = CMat::from_fn(n, n, |i, j| {
            C64::new(
                ((i * 7 + j * 3) % 5) as f64 - 2.0,
                ((i + 2 * j) % 3) as f64 - 1.0,
            )
        });
        a.adjoint() * &a + CMat::identity(n, n) * C64::new(n as f64, 0.0)
    }

    fn matvec(a: &CMat) -> impl FnMut(&[C64], &mut [C64]) + '_ {
        move |x, y| {
            for i in 0..a.nrows() {
                y[i] = (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum();
            }
        }
    }

    #[test]
    fn cg_and_gmres_agree_with_dense_solve() {
        let n = 12;
        let a = hpd(n);
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let dense = a
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_vec(b.clone()))
            .unwrap();
        let cfg = KrylovConfig {
            rtol: 1e-12,
            maxiter: 200,
            restart: 5,
        };
        let mut x1 = vec![C64::default(); n];
        cg(matvec(&a), |r, z| z.copy_from_slice(r), &b, &mut x1, &cfg).unwrap();
        let mut x2 = vec![C64::default(); n];
        let st = gmres(matvec(&a), |r, z| z.copy_from_slice(r), &b, &mut x2, &cfg).unwrap();
        assert!(st.residual <= 1e-12);
        for i in 0..n {
            assert!((x1[i] - dense[i]).norm() < 1e-9);
            assert!((x2[i] - dense[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn gmres_nonhermitian() {
        let n = 10;
        let a = hpd(n) + CMat::from_fn(n, n, |i, j| C64::new(0.0, (i as f64 - j as f64) * 0.3));
        let b: Vec<C64> = (0..n).map(|i| C64::new(1.0, -(i as f64))).collect();
        let mut x = vec![C64::default(); n];
        let cfg = KrylovConfig {
            rtol: 1e-11,
            maxiter: 1000,
            restart: 4,
        };
        gmres(matvec(&a), |r, z| z.copy_from_slice(r), &b, &mut x, &cfg).unwrap();
        let mut ax = vec![C64::default(); n];
        matvec(&a)(&x, &mut ax);
        let res: Vec<C64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&res) <= 1e-11 * norm(&b) * 1.0001);
    }

    #[test]
    fn gmres_reports_divergence() {
        let n = 6;
        let a = hpd(n);
        let b: Vec<C64> = (0..n).map(|i| C64::new(1.0 + i as f64, 0.0)).collect();
        let mut x = vec![C64::default(); n];
        let cfg = KrylovConfig {
            rtol: 1e-14,
            maxiter: 2,
            restart: 1,
        };
        let err = gmres(matvec(&a), |r, z| z.copy_from_slice(r), &b, &mut x, &cfg).unwrap_err();
        assert!(matches!(err, Error::SolverDiverged { .. }));
    }

    #[test]
    fn lopcg_finds_smallest_pencil_eigenvalue() {
        let n = 15;
        let a = hpd(n) - CMat::identity(n, n) * C64::new(20.0, 0.0);
        let m = CMat::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(1.0 + i as f64 / n as f64, 0.0)
            } else {
                C64::default()
            }
        });
        let exact = crate::linalg::pencil_min_eigenvalue(&a, &m).unwrap();
        let x0: Vec<C64> = (0..n).map(|i| C64::new(1.0, (i as f64).sin())).collect();
        let (lam, _, _) = lopcg_smallest(
            matvec(&a),
            matvec(&m),
            |r, z| z.copy_from_slice(r),
            &x0,
            1e-10,
            500,
        )
        .unwrap();
        assert!(
            (lam - exact).abs() < 1e-8 * exact.abs().max(1.0),
            "{lam} vs {exact}"
        );
    }
}
