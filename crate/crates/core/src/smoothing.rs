//! Steklov averaging `S_ε` and the Brillouin-zone projector `Π_ε` as Fourier
//! multipliers on the torus.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::fields::TorusFunction;
use crate::lattice::Lattice;
use crate::spectral::Spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingKind {
    #[default]
    Steklov,
    Fourier,
    None,
}

impl std::str::FromStr for SmoothingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "steklov" => Ok(Self::Steklov),
            "fourier" => Ok(Self::Fourier),
            "none" => Ok(Self::None),
            other => Err(format!("unknown smoothing '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    pub kind: SmoothingKind,
    pub eps: f64,
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-8 {
        1.0 - t * t / 6.0
    } else {
        t.sin() / t
    }
}

/// `|Ω|^{-1} ∫_Ω e^{-i<εξ,z>} dz = Π_j sinc(<εξ, a_j>/2)` for the
/// parallelepiped cell centred at the origin.
pub fn steklov_symbol(lattice: &Lattice, eps: f64, xi: &[f64]) -> f64 {
    lattice
        .basis()
        .iter()
        .map(|a| {
            let t: f64 = a.iter().zip(xi).map(|(a, x)| a * x).sum();
            sinc(0.5 * eps * t)
        })
        .product()
}

impl Smoothing {
    pub fn new(kind: SmoothingKind, eps: f64) -> Self {
        Self { kind, eps }
    }

    pub fn none() -> Self {
        Self::new(SmoothingKind::None, 1.0)
    }

    /// Multiplier value at `ξ`.
    pub fn symbol(&self, lattice: &Lattice, xi: &[f64]) -> f64 {
        match self.kind {
            SmoothingKind::Steklov => steklov_symbol(lattice, self.eps, xi),
            SmoothingKind::Fourier => {
                let scaled: Vec<f64> = xi.iter().map(|x| x * self.eps).collect();
                if lattice.in_brillouin(&scaled) {
                    1.0
                } else {
                    0.0
                }
            }
            SmoothingKind::None => 1.0,
        }
    }

    /// Multiplier values for every mode of `sp`.
    pub fn table(&self, sp: &Spectral) -> Vec<f64> {
        let lat = sp.grid().lattice();
        (0..sp.nmodes())
            .map(|i| self.symbol(lat, sp.xi(i)))
            .collect()
    }

    /// Multiplies component-major coefficients in place.
    pub fn apply_coeffs(&self, table: &[f64], coeffs: &mut [C64]) {
        if self.kind == SmoothingKind::None {
            return;
        }
        let nm = table.len();
        for (i, z) in coeffs.iter_mut().enumerate() {
            *z *= table[i % nm];
        }
    }
}

/// Applies the smoothing to every component of `u`.
pub fn apply_smoothing(s: &Smoothing, u: &TorusFunction) -> TorusFunction {
    if s.kind == SmoothingKind::None {
        return u.clone();
    }
    let sp = Spectral::new(u.grid());
    let mut coeffs = vec![C64::default(); u.data().len()];
    sp.forward_many(u.data(), &mut coeffs);
    s.apply_coeffs(&s.table(&sp), &mut coeffs);
    let mut out = vec![C64::default(); coeffs.len()];
    sp.inverse_many(&coeffs, &mut out);
    TorusFunction::new(u.grid().clone(), u.ncomp(), out).expect("shape preserved")
}
