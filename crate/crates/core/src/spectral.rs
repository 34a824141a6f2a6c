//! FFT plumbing shared by every Fourier-space kernel.
//!
//! Coefficients are stored in FFT order over the mode grid and normalized so
//! that `u(x) = Σ û(ξ) e^{i<ξ,x>}`. A physical grid larger than the mode grid
//! (3/2 padding) turns collocation products into dealiased ones.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::lattice::TorusGrid;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

/// Forward/inverse transforms and the mode table for one torus grid.
pub struct Spectral {
    grid: TorusGrid,
    phys: Vec<usize>,
    plans: Vec<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
    xi: Vec<f64>,
    xi2: Vec<f64>,
    /// Position of each mode in the physical FFT array.
    pad: Option<Vec<usize>>,
    nphys: usize,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("points", &self.grid.points())
            .field("phys", &self.phys)
            .finish()
    }
}

impl Spectral {
    /// Collocation transforms: physical grid equals the mode grid.
    pub fn new(grid: &TorusGrid) -> Self {
        Self::with_phys(grid, grid.points().to_vec())
    }

    /// Transforms on a 3/2-padded physical grid.
    pub fn dealiased(grid: &TorusGrid) -> Self {
        let phys = grid
            .points()
            .iter()
            .map(|&n| {
                let p = (3 * n).div_ceil(2);
                p + p % 2
            })
            .collect();
        Self::with_phys(grid, phys)
    }

    fn with_phys(grid: &TorusGrid, phys: Vec<usize>) -> Self {
        let d = grid.dim();
        let nmodes = grid.len();
        let mut xi = Vec::with_capacity(nmodes * d);
        let mut xi2 = Vec::with_capacity(nmodes);
        for idx in 0..nmodes {
            let v = grid.xi(idx);
            xi2.push(v.iter().map(|x| x * x).sum());
            xi.extend(v);
        }
        let padded = phys.as_slice() != grid.points();
        let pad = padded.then(|| {
            (0..nmodes)
                .map(|idx| {
                    let m = grid.mode_index(idx);
                    m.iter().zip(&phys).fold(0usize, |acc, (&mj, &pj)| {
                        acc * pj + mj.rem_euclid(pj as i64) as usize
                    })
                })
                .collect()
        });
        Self {
            plans: phys.iter().map(|&p| plans(p)).collect(),
            nphys: phys.iter().product(),
            phys,
            grid: grid.clone(),
            xi,
            xi2,
            pad,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn nmodes(&self) -> usize {
        self.xi2.len()
    }

    pub fn nphys(&self) -> usize {
        self.nphys
    }

    pub fn phys_shape(&self) -> &[usize] {
        &self.phys
    }

    pub fn is_dealiased(&self) -> bool {
        self.pad.is_some()
    }

    /// Cartesian wave vector of mode `idx`.
    pub fn xi(&self, idx: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.xi[idx * d..(idx + 1) * d]
    }

    /// `|ξ|²` for every mode.
    pub fn xi2(&self) -> &[f64] {
        &self.xi2
    }

    fn fft_nd(&self, data: &mut [C64], inverse: bool) {
        let d = self.phys.len();
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        for j in 0..d {
            let n = self.phys[j];
            let fft = if inverse {
                &self.plans[j].1
            } else {
                &self.plans[j].0
            };
            let need = fft.get_inplace_scratch_len();
            if scratch.len() < need {
                scratch.resize(need, C64::default());
            }
            let stride: usize = self.phys[j + 1..].iter().product();
            if stride == 1 {
                fft.process_with_scratch(data, &mut scratch[..need]);
                continue;
            }
            let outer: usize = self.phys[..j].iter().product();
            line.resize(n, C64::default());
            for o in 0..outer {
                let base = o * n * stride;
                for r in 0..stride {
                    for k in 0..n {
                        line[k] = data[base + k * stride + r];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch[..need]);
                    for k in 0..n {
                        data[base + k * stride + r] = line[k];
                    }
                }
            }
        }
    }

    /// Physical samples (length `nphys`) to normalized coefficients (length `nmodes`).
    pub fn forward(&self, phys: &[C64], out: &mut [C64]) {
        debug_assert_eq!(phys.len(), self.nphys);
        debug_assert_eq!(out.len(), self.nmodes());
        let scale = 1.0 / self.nphys as f64;
        match &self.pad {
            None => {
                out.copy_from_slice(phys);
                self.fft_nd(out, false);
                out.iter_mut().for_each(|c| *c *= scale);
            }
            Some(pad) => {
                let mut buf = crate::scratch::copied(phys);
                self.fft_nd(&mut buf, false);
                for (o, &p) in out.iter_mut().zip(pad) {
                    *o = buf[p] * scale;
                }
            }
        }
    }

    /// Coefficients to physical samples on the (possibly padded) grid.
    pub fn inverse(&self, coeffs: &[C64], out: &mut [C64]) {
        debug_assert_eq!(coeffs.len(), self.nmodes());
        debug_assert_eq!(out.len(), self.nphys);
        match &self.pad {
            None => out.copy_from_slice(coeffs),
            Some(pad) => {
                out.iter_mut().for_each(|c| *c = C64::default());
                for (&c, &p) in coeffs.iter().zip(pad) {
                    out[p] = c;
                }
            }
        }
        self.fft_nd(out, true);
    }

    /// Applies [`Self::forward`] to each contiguous component block.
    pub fn forward_many(&self, phys: &[C64], out: &mut [C64]) {
        let ncomp = out.len() / self.nmodes();
        for c in 0..ncomp {
            self.forward(
                &phys[c * self.nphys..(c + 1) * self.nphys],
                &mut out[c * self.nmodes()..(c + 1) * self.nmodes()],
            );
        }
    }

    /// Applies [`Self::inverse`] to each contiguous component block.
    pub fn inverse_many(&self, coeffs: &[C64], out: &mut [C64]) {
        let ncomp = coeffs.len() / self.nmodes();
        for c in 0..ncomp {
            self.inverse(
                &coeffs[c * self.nmodes()..(c + 1) * self.nmodes()],
                &mut out[c * self.nphys..(c + 1) * self.nphys],
            );
        }
    }

    /// Places the grid coefficients of `values` on the physical grid unchanged;
    /// the adjoint of [`Self::forward`] up to normalization. Use this for
    /// operands, and [`Self::to_phys_grid`] for multipliers.
    pub fn embed_grid(&self, values: &[C64]) -> Vec<C64> {
        if self.pad.is_none() {
            return values.to_vec();
        }
        let plain = Spectral::new(&self.grid);
        let ncomp = values.len() / self.nmodes();
        let mut coeffs = vec![C64::default(); values.len()];
        plain.forward_many(values, &mut coeffs);
        let mut out = vec![C64::default(); ncomp * self.nphys];
        self.inverse_many(&coeffs, &mut out);
        out
    }

    /// Resamples grid values onto the physical grid through the trigonometric
    /// interpolant. Identity for collocation transforms.
    ///
    /// Nyquist coefficients are split evenly between `±N/2`, so real (or
    /// pointwise Hermitian) data stays real (Hermitian) after resampling.
    pub fn to_phys_grid(&self, values: &[C64]) -> Vec<C64> {
        if self.pad.is_none() {
            return values.to_vec();
        }
        let plain = Spectral::new(&self.grid);
        let nm = self.nmodes();
        let ncomp = values.len() / nm;
        let mut coeffs = vec![C64::default(); values.len()];
        plain.forward_many(values, &mut coeffs);
        let points = self.grid.points();
        let targets: Vec<Vec<usize>> = (0..nm)
            .map(|idx| {
                let m = self.grid.mode_index(idx);
                let mut pos = vec![0usize];
                for (j, (&mj, &pj)) in m.iter().zip(&self.phys).enumerate() {
                    let nyquist = points[j].is_multiple_of(2) && mj == -(points[j] as i64) / 2;
                    let choices: Vec<i64> = if nyquist { vec![mj, -mj] } else { vec![mj] };
                    pos = pos
                        .iter()
                        .flat_map(|&acc| {
                            choices
                                .iter()
                                .map(move |&c| acc * pj + c.rem_euclid(pj as i64) as usize)
                        })
                        .collect();
                }
                pos
            })
            .collect();
        let mut out = vec![C64::default(); ncomp * self.nphys];
        for comp in 0..ncomp {
            let dst = &mut out[comp * self.nphys..(comp + 1) * self.nphys];
            for (idx, pos) in targets.iter().enumerate() {
                let share = coeffs[comp * nm + idx] / pos.len() as f64;
                for &p in pos {
                    dst[p] += share;
                }
            }
            self.fft_nd(dst, true);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;

    fn grid(points: Vec<usize>, periods: Vec<usize>) -> TorusGrid {
        TorusGrid::new(Arc::new(Lattice::cubic(points.len())), points, periods).unwrap()
    }

    #[test]
    fn resampling_keeps_real_data_real() {
        let g = grid(vec![8, 6], vec![1, 1]);
        let sp = Spectral::dealiased(&g);
        let vals: Vec<C64> = (0..g.len())
            .map(|i| C64::new(((i * 7) % 5) as f64 - 2.0, 0.0))
            .collect();
        let out = sp.to_phys_grid(&vals);
        assert!(out.iter().all(|z| z.im.abs() < 1e-12));
        let mut back = vec![C64::default(); g.len()];
        sp.forward(&out, &mut back);
        let mut direct = vec![C64::default(); g.len()];
        Spectral::new(&g).forward(&vals, &mut direct);
        for (idx, (a, b)) in back.iter().zip(&direct).enumerate() {
            let m = g.mode_index(idx);
            if m[0] != -4 && m[1] != -3 {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn plane_wave_has_single_coefficient() {
        let g = grid(vec![8, 6], vec![1, 2]);
        let sp = Spectral::new(&g);
        let target = g.ravel(&[3, 4]);
        let k = g.xi(target);
        let phys: Vec<C64> = (0..g.len())
            .map(|i| {
                let x = g.node(i);
                C64::from_polar(1.0, k[0] * x[0] + k[1] * x[1])
            })
            .collect();
        let mut c = vec![C64::default(); g.len()];
        sp.forward(&phys, &mut c);
        for (i, v) in c.iter().enumerate() {
            let want = if i == target { 1.0 } else { 0.0 };
            assert!((v - want).norm() < 1e-12, "mode {i}: {v}");
        }
        let mut back = vec![C64::default(); g.len()];
        sp.inverse(&c, &mut back);
        for (a, b) in back.iter().zip(&phys) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn padded_round_trip_preserves_coefficients() {
        let g = grid(vec![8], vec![1]);
        let sp = Spectral::dealiased(&g);
        assert_eq!(sp.phys_shape(), &[12]);
        let coeffs: Vec<C64> = (0..8)
            .map(|i| C64::new(i as f64, -(i as f64) / 3.0))
            .collect();
        let mut phys = vec![C64::default(); 12];
        sp.inverse(&coeffs, &mut phys);
        let mut back = vec![C64::default(); 8];
        sp.forward(&phys, &mut back);
        for (a, b) in back.iter().zip(&coeffs) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn padded_product_drops_aliased_modes() {
        // e^{2πix}·e^{2πix} = e^{4πix} lies outside the 4-node mode set; collocation
        // folds it onto the Nyquist slot, the padded product discards it.
        let g = grid(vec![4], vec![1]);
        let mut c = vec![C64::default(); 4];
        c[1] = C64::new(1.0, 0.0);
        for (sp, nyquist) in [(Spectral::dealiased(&g), 0.0), (Spectral::new(&g), 1.0)] {
            let mut p = vec![C64::default(); sp.nphys()];
            sp.inverse(&c, &mut p);
            let sq: Vec<C64> = p.iter().map(|v| v * v).collect();
            let mut out = vec![C64::default(); 4];
            sp.forward(&sq, &mut out);
            assert!((out[2] - nyquist).norm() < 1e-12);
            assert!(out[0].norm() < 1e-12 && out[1].norm() < 1e-12);
        }
    }
}
