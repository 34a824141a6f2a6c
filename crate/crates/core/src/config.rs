//! JSON run configuration: lattice, grids, coefficient fields, symbol, shift,
//! solver settings and the sweep plan.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::corrector::CorrectorConfig;
use crate::error::{Error, Result};
use crate::fields::PeriodicField;
use crate::gridio;
use crate::lattice::{Lattice, TorusGrid};
use crate::linalg::{identity, CMat};
use crate::symbols::SymbolB;

/// A constant matrix: a scalar (multiple of the identity), real rows, or
/// separate real and imaginary rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Real(Vec<Vec<f64>>),
    Complex {
        re: Vec<Vec<f64>>,
        im: Vec<Vec<f64>>,
    },
}

fn rows_to_cmat(re: &[Vec<f64>], im: Option<&[Vec<f64>]>) -> Result<CMat> {
    let rows = re.len();
    let cols = re.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || re.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidConfig(
            "matrix rows must be non-empty and equally long".into(),
        ));
    }
    if let Some(im) = im {
        if im.len() != rows || im.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig(
                "real and imaginary parts differ in shape".into(),
            ));
        }
    }
    Ok(CMat::from_fn(rows, cols, |r, c| {
        C64::new(re[r][c], im.map_or(0.0, |im| im[r][c]))
    }))
}

impl MatrixSpec {
    /// The matrix with its own shape; scalars become `1 × 1`.
    pub fn to_cmat_auto(&self) -> Result<CMat> {
        match self {
            MatrixSpec::Scalar(s) => Ok(CMat::from_element(1, 1, C64::new(*s, 0.0))),
            MatrixSpec::Real(re) => rows_to_cmat(re, None),
            MatrixSpec::Complex { re, im } => rows_to_cmat(re, Some(im)),
        }
    }

    /// The matrix at a required shape; a scalar means `s·I` (or `s` in every
    /// entry of a row or column vector).
    pub fn to_cmat(&self, rows: usize, cols: usize) -> Result<CMat> {
        let m = match self {
            MatrixSpec::Scalar(s) if rows == cols => identity(rows) * C64::new(*s, 0.0),
            MatrixSpec::Scalar(s) if rows == 1 || cols == 1 => {
                CMat::from_element(rows, cols, C64::new(*s, 0.0))
            }
            other => other.to_cmat_auto()?,
        };
        if m.shape() != (rows, cols) {
            return Err(Error::InvalidConfig(format!(
                "expected a {rows}x{cols} matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    /// Integer mode in lattice coordinates: the term oscillates as `2π<m, t>`.
    pub mode: Vec<i64>,
    #[serde(default)]
    pub cos: Option<MatrixSpec>,
    #[serde(default)]
    pub sin: Option<MatrixSpec>,
}

/// A periodic coefficient field on the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Constant {
        value: MatrixSpec,
    },
    /// `mean + Σ cos·cos(2π<m,t>) + sin·sin(2π<m,t>)`.
    Fourier {
        mean: MatrixSpec,
        #[serde(default)]
        terms: Vec<FourierTerm>,
    },
    /// `values[0]` where `t_axis < fraction`, `values[1]` elsewhere.
    TwoPhase {
        values: [MatrixSpec; 2],
        #[serde(default = "half")]
        fraction: f64,
        #[serde(default)]
        axis: usize,
        #[serde(default)]
        interface: InterfaceRule,
    },
    GridFile {
        path: PathBuf,
    },
}

fn half() -> f64 {
    0.5
}

/// Value taken by nodes that sit exactly on a phase interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceRule {
    /// The phase on the right of the node (half-open intervals).
    #[default]
    Right,
    /// The mean of both phases, as the Fourier series of a jump does. Keeps
    /// an equal split symmetric about a node.
    Mean,
}

impl FieldSpec {
    pub fn constant(s: f64) -> Self {
        FieldSpec::Constant {
            value: MatrixSpec::Scalar(s),
        }
    }

    /// Samples the field on `grid` with the given shape; relative grid-file
    /// paths resolve against `base`.
    pub fn build(
        &self,
        grid: &TorusGrid,
        rows: usize,
        cols: usize,
        base: &Path,
    ) -> Result<PeriodicField> {
        match self {
            FieldSpec::Constant { value } => Ok(PeriodicField::constant(
                grid.clone(),
                &value.to_cmat(rows, cols)?,
            )),
            FieldSpec::Fourier { mean, terms } => {
                let mean = mean.to_cmat(rows, cols)?;
                let zero = MatrixSpec::Scalar(0.0);
                let terms = terms
                    .iter()
                    .map(|t| {
                        if t.mode.len() != grid.dim() {
                            return Err(Error::InvalidConfig(
                                "Fourier mode has the wrong dimension".into(),
                            ));
                        }
                        Ok((
                            t.mode.clone(),
                            t.cos.as_ref().unwrap_or(&zero).to_cmat(rows, cols)?,
                            t.sin.as_ref().unwrap_or(&zero).to_cmat(rows, cols)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PeriodicField::from_fn(grid.clone(), rows, cols, |t| {
                    let mut m = mean.clone();
                    for (mode, cm, sm) in &terms {
                        let arg: f64 =
                            2.0 * PI * mode.iter().zip(t).map(|(&k, x)| k as f64 * x).sum::<f64>();
                        m += cm * C64::new(arg.cos(), 0.0) + sm * C64::new(arg.sin(), 0.0);
                    }
                    m
                }))
            }
            FieldSpec::TwoPhase {
                values,
                fraction,
                axis,
                interface,
            } => {
                if *axis >= grid.dim() || !(0.0..=1.0).contains(fraction) {
                    return Err(Error::InvalidConfig(
                        "two_phase needs a valid axis and fraction".into(),
                    ));
                }
                let a = values[0].to_cmat(rows, cols)?;
                let b = values[1].to_cmat(rows, cols)?;
                let mean = (&a + &b) * C64::new(0.5, 0.0);
                let n = grid.points()[*axis] as f64;
                Ok(PeriodicField::from_fn(grid.clone(), rows, cols, |t| {
                    let x = t[*axis];
                    let on = |y: f64| ((x - y) * n).abs() < 1e-9;
                    if *interface == InterfaceRule::Mean && (on(0.0) || on(*fraction)) {
                        mean.clone()
                    } else if x < *fraction {
                        a.clone()
                    } else {
                        b.clone()
                    }
                }))
            }
            FieldSpec::GridFile { path } => {
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                let f = gridio::read_field(&path, grid)?;
                if f.shape() != (rows, cols) {
                    return Err(Error::ShapeMismatch(format!(
                        "{} holds a {}x{} field, expected {rows}x{cols}",
                        path.display(),
                        f.rows(),
                        f.cols()
                    )));
                }
                Ok(f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum SymbolSpec {
    /// `b(D) = D`.
    Gradient,
    Custom {
        b_mats: Vec<MatrixSpec>,
    },
}

impl SymbolSpec {
    pub fn build(&self, d: usize) -> Result<SymbolB> {
        match self {
            SymbolSpec::Gradient => Ok(SymbolB::gradient(d)),
            SymbolSpec::Custom { b_mats } => {
                if b_mats.len() != d {
                    return Err(Error::InvalidConfig(format!("need {d} matrices b_j")));
                }
                SymbolB::new(
                    b_mats
                        .iter()
                        .map(MatrixSpec::to_cmat_auto)
                        .collect::<Result<_>>()?,
                )
            }
        }
    }
}

/// Coefficient model of the oscillatory operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Coefficients given directly.
    General {
        g: FieldSpec,
        /// One `n × n` field per dimension; empty means zero.
        #[serde(default)]
        a: Vec<FieldSpec>,
        #[serde(default = "zero_field")]
        q: FieldSpec,
        #[serde(default = "unit_field")]
        q0: FieldSpec,
    },
    /// `(D − A)* g (D − A) + ε^{-1}v + 𝒱` with mean-zero `v`, in divergence form.
    Schrodinger {
        g: FieldSpec,
        vector_potential: FieldSpec,
        v: FieldSpec,
        #[serde(default = "zero_field")]
        vcal: FieldSpec,
        #[serde(default = "unit_field")]
        q0: FieldSpec,
    },
    /// `D* g D + ε^{-2}v + 𝒱` factored through the periodic ground state of
    /// `D* g D + v`.
    GroundState {
        g: FieldSpec,
        v: FieldSpec,
        #[serde(default = "zero_field")]
        vcal: FieldSpec,
        #[serde(default = "unit_field")]
        q0: FieldSpec,
    },
}

fn zero_field() -> FieldSpec {
    FieldSpec::constant(0.0)
}

fn unit_field() -> FieldSpec {
    FieldSpec::constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridsSpec {
    /// Nodes per cell; also the torus nodes per oscillation period.
    pub cell_points: Vec<usize>,
    /// Lattice periods spanned by the torus.
    pub periods: Vec<usize>,
    #[serde(default)]
    pub dealias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Fixed `c₅`; calibrated when absent.
    #[serde(default)]
    pub c5: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// `ε` at which the calibration runs; the largest swept `ε` when absent.
    #[serde(default)]
    pub reference_eps: Option<f64>,
}

fn default_margin() -> f64 {
    0.25
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            c5: None,
            margin: default_margin(),
            reference_eps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_maxiter")]
    pub maxiter: usize,
    #[serde(default = "default_restart")]
    pub restart: usize,
    #[serde(default = "default_cell_rtol")]
    pub cell_rtol: f64,
}

fn default_rtol() -> f64 {
    1e-8
}
fn default_maxiter() -> usize {
    2000
}
fn default_restart() -> usize {
    60
}
fn default_cell_rtol() -> f64 {
    1e-11
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            rtol: default_rtol(),
            maxiter: default_maxiter(),
            restart: default_restart(),
            cell_rtol: default_cell_rtol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNormSpec {
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Number of deterministic band-limited right-hand sides.
    #[serde(default = "default_panel")]
    pub panel: usize,
    #[serde(default = "default_stall")]
    pub stall_tol: f64,
}

fn default_iters() -> usize {
    60
}
fn default_seeds() -> usize {
    5
}
fn default_panel() -> usize {
    8
}
fn default_stall() -> f64 {
    1e-4
}

impl Default for OpNormSpec {
    fn default() -> Self {
        Self {
            iters: default_iters(),
            seeds: default_seeds(),
            panel: default_panel(),
            stall_tol: default_stall(),
        }
    }
}

/// Discrepancies the harness can measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecName {
    L2Main,
    H1Corrector,
    DCorrector,
    Flux,
    L2Rho,
    H1Rho,
    FluxRho,
    SchrodingerSandwich,
    /// `D(R_ε − R₀)` without corrector.
    DNoCorrector,
    /// `ε(K_Steklov − K_Fourier)` in `H¹`.
    SmoothingGap,
    /// Multiplication by `Q₀^ε − Q̄₀` from `H¹` to `H^{-1}`.
    WeightOscillation,
}

impl SpecName {
    pub fn as_str(self) -> &'static str {
        match self {
            SpecName::L2Main => "l2_main",
            SpecName::H1Corrector => "h1_corrector",
            SpecName::DCorrector => "d_corrector",
            SpecName::Flux => "flux",
            SpecName::L2Rho => "l2_rho",
            SpecName::H1Rho => "h1_rho",
            SpecName::FluxRho => "flux_rho",
            SpecName::SchrodingerSandwich => "schrodinger_sandwich",
            SpecName::DNoCorrector => "d_no_corrector",
            SpecName::SmoothingGap => "smoothing_gap",
            SpecName::WeightOscillation => "weight_oscillation",
        }
    }
}

impl std::str::FromStr for SpecName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown estimate '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    /// Vary `ε` at the reference `ζ`.
    Eps,
    /// Vary `|ζ|` on a ray at fixed `ε`.
    Zeta,
    /// Vary `arg ζ` at fixed `|ζ|` and `ε`.
    Phi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecEntry {
    pub name: SpecName,
    #[serde(default = "eps_only")]
    pub series: Vec<Series>,
    /// Moduli for the `ζ` series, overriding the sweep default.
    #[serde(default)]
    pub zeta_list: Option<Vec<f64>>,
    /// Reference `ζ = [re, im]` for the `ε` series, overriding the sweep default.
    #[serde(default)]
    pub zeta: Option<[f64; 2]>,
}

fn eps_only() -> Vec<Series> {
    vec![Series::Eps]
}

impl SpecEntry {
    pub fn new(name: SpecName, series: &[Series]) -> Self {
        Self {
            name,
            series: series.to_vec(),
            zeta_list: None,
            zeta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub eps_list: Vec<f64>,
    /// Reference `ζ = [re, im]` for `ε` series.
    #[serde(default = "default_zeta")]
    pub zeta: [f64; 2],
    /// Moduli `|ζ|` for `ζ` series.
    #[serde(default)]
    pub zeta_list: Vec<f64>,
    /// Ray of the `ζ` series.
    #[serde(default = "default_phi")]
    pub zeta_phi: f64,
    /// `ε` for the `ζ` and `φ` series; the smallest swept `ε` when absent.
    #[serde(default)]
    pub series_eps: Option<f64>,
    #[serde(default)]
    pub phi_list: Vec<f64>,
    #[serde(default = "one")]
    pub phi_modulus: f64,
    pub specs: Vec<SpecEntry>,
    /// Repeat one point on a torus with doubled periods.
    #[serde(default)]
    pub torus_sensitivity: bool,
}

fn default_zeta() -> [f64; 2] {
    [-1.0, 0.0]
}
fn default_phi() -> f64 {
    PI
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    #[serde(default = "tol_slope")]
    pub eps_slope: f64,
    #[serde(default = "tol_slope")]
    pub zeta_slope: f64,
    /// Allowed `(max − min)/max` of normalized values over a `ζ` series.
    #[serde(default = "tol_variation")]
    pub zeta_variation: f64,
    /// Allowed `max/min` of `c(φ)²`-normalized values over a `φ` series.
    #[serde(default = "tol_phi")]
    pub phi_ratio: f64,
    /// Noise floor as a multiple of the solver tolerance.
    #[serde(default = "tol_noise")]
    pub noise: f64,
    /// Allowed `max/min` of `ϱ`-normalized values over a `ζ` series.
    #[serde(default = "tol_rho")]
    pub rho_ratio: f64,
    /// Slope tolerance for the smoothing-gap and weight-oscillation checks.
    #[serde(default = "tol_smoothing")]
    pub smoothing_slope: f64,
}

fn tol_slope() -> f64 {
    0.15
}
fn tol_variation() -> f64 {
    0.5
}
fn tol_phi() -> f64 {
    4.0
}
fn tol_noise() -> f64 {
    10.0
}
fn tol_rho() -> f64 {
    3.0
}
fn tol_smoothing() -> f64 {
    0.2
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_slope: tol_slope(),
            zeta_slope: tol_slope(),
            zeta_variation: tol_variation(),
            phi_ratio: tol_phi(),
            noise: tol_noise(),
            rho_ratio: tol_rho(),
            smoothing_slope: tol_smoothing(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    /// Lattice basis vectors, one per row.
    pub lattice: Vec<Vec<f64>>,
    pub grids: GridsSpec,
    #[serde(default = "gradient")]
    pub symbol: SymbolSpec,
    pub coefficients: ModelSpec,
    #[serde(default)]
    pub shift: ShiftSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub opnorm: OpNormSpec,
    #[serde(default)]
    pub corrector: CorrectorConfig,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seeds: u64,
}

fn gradient() -> SymbolSpec {
    SymbolSpec::Gradient
}

/// `k = 1/ε`, which must be a positive integer.
pub fn eps_to_k(eps: f64) -> Result<usize> {
    let k = (1.0 / eps).round();
    if !(eps > 0.0) || k < 1.0 || ((1.0 / eps) - k).abs() > 1e-9 * k {
        return Err(Error::InvalidConfig(format!(
            "ε = {eps} is not 1/K for an integer K"
        )));
    }
    Ok(k as usize)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; returns it with the directory for relative paths.
    pub fn from_file(path: &Path) -> Result<(Self, PathBuf)> {
        let cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lattice.len();
        if self.grids.cell_points.len() != d || self.grids.periods.len() != d {
            return Err(Error::InvalidConfig(
                "grids must list one entry per dimension".into(),
            ));
        }
        if self.sweep.eps_list.is_empty() {
            return Err(Error::InvalidConfig("eps_list is empty".into()));
        }
        for &e in self.sweep.eps_list.iter().chain(&self.sweep.series_eps) {
            eps_to_k(e)?;
        }
        if !(self.solver.rtol > 0.0 && self.solver.rtol <= 1e-6) {
            return Err(Error::InvalidConfig(
                "solver rtol must lie in (0, 1e-6]".into(),
            ));
        }
        let needs_gradient = !matches!(self.coefficients, ModelSpec::General { .. });
        if needs_gradient && self.symbol != SymbolSpec::Gradient {
            return Err(Error::InvalidConfig(
                "Schrödinger models need the gradient symbol".into(),
            ));
        }
        Ok(())
    }

    pub fn lattice(&self) -> Result<Arc<Lattice>> {
        Ok(Arc::new(Lattice::new(self.lattice.clone())?))
    }

    pub fn cell_grid(&self) -> Result<TorusGrid> {
        TorusGrid::cell(self.lattice()?, self.grids.cell_points.clone())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_specs() {
        let m = MatrixSpec::Scalar(2.0).to_cmat(2, 2).unwrap();
        assert_eq!(m, identity(2) * C64::new(2.0, 0.0));
        let v = MatrixSpec::Scalar(0.5).to_cmat(2, 1).unwrap();
        assert_eq!(v.shape(), (2, 1));
        let c: MatrixSpec =
            serde_json::from_str(r#"{"re": [[1, 0], [0, 1]], "im": [[0, 1], [-1, 0]]}"#).unwrap();
        let m = c.to_cmat(2, 2).unwrap();
        assert_eq!(m[(0, 1)], C64::new(0.0, 1.0));
        assert!(c.to_cmat(1, 1).is_err());
    }

    #[test]
    fn two_phase_and_fourier_fields() {
        let grid = TorusGrid::cell(Arc::new(Lattice::cubic(1)), vec![16]).unwrap();
        let spec: FieldSpec =
            serde_json::from_str(r#"{"kind": "two_phase", "values": [1, 4]}"#).unwrap();
        let g = spec.build(&grid, 1, 1, Path::new(".")).unwrap();
        assert_eq!(g.data()[7].re, 1.0);
        assert_eq!(g.data()[8].re, 4.0);
        let spec: FieldSpec = serde_json::from_str(
            r#"{"kind": "fourier", "mean": 1, "terms": [{"mode": [1], "cos": 0.5}]}"#,
        )
        .unwrap();
        let f = spec.build(&grid, 1, 1, Path::new(".")).unwrap();
        assert!((f.data()[0].re - 1.5).abs() < 1e-15);
        assert!((f.data()[8].re - 0.5).abs() < 1e-15);
        let spec: FieldSpec =
            serde_json::from_str(r#"{"kind": "two_phase", "values": [1, 4], "interface": "mean"}"#)
                .unwrap();
        let g = spec.build(&grid, 1, 1, Path::new(".")).unwrap();
        let v: Vec<f64> = g.data().iter().map(|z| z.re).collect();
        assert_eq!((v[0], v[1], v[7], v[8], v[9]), (2.5, 1.0, 1.0, 2.5, 4.0));
        for i in 0..16 {
            assert_eq!(v[(4 + i) % 16], v[(16 + 4 - i) % 16]);
        }
    }

    #[test]
    fn eps_must_be_reciprocal_integer() {
        assert_eq!(eps_to_k(0.125).unwrap(), 8);
        assert_eq!(eps_to_k(1.0 / 3.0).unwrap(), 3);
        assert!(eps_to_k(0.3).is_err());
        assert!(eps_to_k(0.0).is_err());
    }

    #[test]
    fn spec_names_parse() {
        assert_eq!("l2_main".parse::<SpecName>().unwrap(), SpecName::L2Main);
        assert_eq!(
            SpecName::SchrodingerSandwich.as_str(),
            "schrodinger_sandwich"
        );
        assert!("nope".parse::<SpecName>().is_err());
    }
}
