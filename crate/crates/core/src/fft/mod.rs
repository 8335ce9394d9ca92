//! Galerkin FFT solver for periodic linear micro-elasticity on voxel grids.
//!
//! The fluctuation strain `ε*` is sought in the space of compatible,
//! zero-mean fields. With the projection `P` onto that space the discrete
//! equilibrium `P[C : (ε̄ + ε*)] = 0` is a symmetric positive semidefinite
//! system that conjugate gradients solves matrix-free: the stiffness is applied
//! voxel by voxel and `P` in Fourier space. Every iterate stays in the range
//! of `P`, so the mean strain equals `ε̄` throughout.

mod fft3;
mod projection;

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::io::{write_u32, write_u8};
use crate::microstructure::VoxelGrid;
use crate::tensor::{unit_strain, MaterialParams, TensorError, VoigtMatrix, VoigtVector};

use projection::{mandel_zeros, MandelField};
pub use projection::ProjectionOperator;

pub const FIELD_MAGIC: &[u8; 4] = b"MUQF";
pub const FIELD_VERSION: u32 = 1;

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum FftError {
    #[error("field of size {field} does not match operator size {expected}")]
    DimensionMismatch { expected: usize, field: usize },
    #[error("CG did not converge: {iterations} iterations, relative residual {residual:.3e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("strain state {strain_index}: {source}")]
    StrainState {
        strain_index: usize,
        #[source]
        source: Box<FftError>,
    },
    #[error(transparent)]
    Material(#[from] TensorError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: 1e-8,
            max_iter: 500,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), FftError> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(FftError::InvalidConfig(format!(
                "rel_tol {} must lie in (0, 1)",
                self.rel_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(FftError::InvalidConfig("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Voigt field with six components per voxel, voxels ordered like the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoigtField {
    n: usize,
    data: Vec<[f64; 6]>,
}

/// Strain with engineering shear components.
pub type StrainField = VoigtField;
/// Stress in MPa.
pub type StressField = VoigtField;

impl VoigtField {
    pub fn zeros(n: usize) -> Self {
        VoigtField {
            n,
            data: vec![[0.0; 6]; n * n * n],
        }
    }

    pub fn constant(n: usize, v: &VoigtVector) -> Self {
        VoigtField {
            n,
            data: vec![v.0; n * n * n],
        }
    }

    pub fn from_data(n: usize, data: Vec<[f64; 6]>) -> Result<Self, FftError> {
        if data.len() != n * n * n {
            return Err(FftError::DimensionMismatch {
                expected: n * n * n,
                field: data.len(),
            });
        }
        Ok(VoigtField { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[[f64; 6]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[f64; 6]] {
        &mut self.data
    }

    pub fn mean(&self) -> VoigtVector {
        let mut acc = [0.0; 6];
        for v in &self.data {
            for c in 0..6 {
                acc[c] += v[c];
            }
        }
        let inv = 1.0 / self.data.len() as f64;
        VoigtVector(acc.map(|a| a * inv))
    }

    fn to_mandel(&self) -> MandelField {
        let mut m = mandel_zeros(self.data.len());
        for (i, v) in self.data.iter().enumerate() {
            m[0][i] = v[0];
            m[1][i] = v[1];
            m[2][i] = v[2];
            m[3][i] = v[3] / SQRT2;
            m[4][i] = v[4] / SQRT2;
            m[5][i] = v[5] / SQRT2;
        }
        m
    }

    fn from_mandel(n: usize, m: &MandelField) -> Self {
        let data = (0..n * n * n)
            .map(|i| {
                [
                    m[0][i],
                    m[1][i],
                    m[2][i],
                    m[3][i] * SQRT2,
                    m[4][i] * SQRT2,
                    m[5][i] * SQRT2,
                ]
            })
            .collect();
        VoigtField { n, data }
    }
}

/// Projects a strain-shaped field onto compatible zero-mean fields.
pub fn project(op: &ProjectionOperator, field: &StrainField) -> Result<StrainField, FftError> {
    if field.n != op.n() {
        return Err(FftError::DimensionMismatch {
            expected: op.n(),
            field: field.n,
        });
    }
    let input = field.to_mandel();
    let mut out = mandel_zeros(input[0].len());
    op.apply(&input, &mut out);
    Ok(VoigtField::from_mandel(field.n, &out))
}

/// Lamé constants of the two phases.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Phases {
    lambda: [f64; 2],
    g: [f64; 2],
}

impl Phases {
    fn new(mat_m: &MaterialParams, mat_i: &MaterialParams) -> Result<Self, FftError> {
        let (lm, gm) = mat_m.to_lame_unchecked()?;
        let (li, gi) = mat_i.to_lame_unchecked()?;
        Ok(Phases {
            lambda: [lm, li],
            g: [gm, gi],
        })
    }

    /// Applies the voxel stiffness to a Mandel strain field.
    fn apply(&self, grid: &VoxelGrid, eps: &MandelField, out: &mut MandelField) {
        let phase = grid.data();
        let [o0, o1, o2, o3, o4, o5] = out;
        for i in 0..phase.len() {
            let p = phase[i] as usize;
            let (l, g2) = (self.lambda[p], 2.0 * self.g[p]);
            let tr = l * (eps[0][i] + eps[1][i] + eps[2][i]);
            o0[i] = tr + g2 * eps[0][i];
            o1[i] = tr + g2 * eps[1][i];
            o2[i] = tr + g2 * eps[2][i];
            o3[i] = g2 * eps[3][i];
            o4[i] = g2 * eps[4][i];
            o5[i] = g2 * eps[5][i];
        }
    }

    fn stress(&self, phase: u8, e: &[f64; 6]) -> [f64; 6] {
        let p = phase as usize;
        let (l, g) = (self.lambda[p], self.g[p]);
        let tr = l * (e[0] + e[1] + e[2]);
        [
            tr + 2.0 * g * e[0],
            tr + 2.0 * g * e[1],
            tr + 2.0 * g * e[2],
            g * e[3],
            g * e[4],
            g * e[5],
        ]
    }
}

impl MaterialParams {
    /// Lamé pair without the `λ ≥ 0` restriction of the `LameG` representation,
    /// so auxetic inputs given as `(K, G)` still reach the solver.
    fn to_lame_unchecked(&self) -> Result<(f64, f64), TensorError> {
        let (k, g) = self.to_kg()?;
        Ok((k - 2.0 * g / 3.0, g))
    }
}

/// Convergence summary of one CG solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &MandelField, b: &MandelField) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

/// Reusable solver for one grid resolution.
#[derive(Debug, Clone)]
pub struct MicroSolver {
    op: ProjectionOperator,
}

impl MicroSolver {
    pub fn new(n: usize) -> Self {
        MicroSolver {
            op: ProjectionOperator::new(n),
        }
    }

    pub fn operator(&self) -> &ProjectionOperator {
        &self.op
    }

    /// Solves for the strain field and reports convergence without failing on it.
    pub fn solve_with_report(
        &self,
        grid: &VoxelGrid,
        mat_m: &MaterialParams,
        mat_i: &MaterialParams,
        eps_bar: &VoigtVector,
        cfg: &SolverConfig,
    ) -> Result<(StrainField, SolveReport), FftError> {
        cfg.validate()?;
        let n = grid.n();
        if n != self.op.n() {
            return Err(FftError::DimensionMismatch {
                expected: self.op.n(),
                field: n,
            });
        }
        let phases = Phases::new(mat_m, mat_i)?;
        let len = grid.len();
        let macro_field = VoigtField::constant(n, eps_bar).to_mandel();

        // b = -P C ε̄
        let mut tmp = mandel_zeros(len);
        phases.apply(grid, &macro_field, &mut tmp);
        let scale = dot(&tmp, &tmp).sqrt();
        let mut r = mandel_zeros(len);
        self.op.apply(&tmp, &mut r);
        for c in r.iter_mut() {
            for v in c.iter_mut() {
                *v = -*v;
            }
        }
        let b_norm = dot(&r, &r).sqrt();
        let mut x = mandel_zeros(len);
        let mut report = SolveReport {
            iterations: 0,
            residual: 0.0,
            converged: true,
        };

        if b_norm > 1e-13 * scale {
            let mut p = r.clone();
            let mut ap = mandel_zeros(len);
            let mut rr = b_norm * b_norm;
            report.converged = false;
            report.residual = 1.0;
            for it in 1..=cfg.max_iter {
                phases.apply(grid, &p, &mut tmp);
                self.op.apply(&tmp, &mut ap);
                let pap = dot(&p, &ap);
                if pap <= 0.0 || !pap.is_finite() {
                    report.iterations = it;
                    break;
                }
                let alpha = rr / pap;
                for c in 0..6 {
                    for ((xi, ri), (pi, api)) in x[c]
                        .iter_mut()
                        .zip(r[c].iter_mut())
                        .zip(p[c].iter().zip(ap[c].iter()))
                    {
                        *xi += alpha * pi;
                        *ri -= alpha * api;
                    }
                }
                let rr_new = dot(&r, &r);
                report.iterations = it;
                report.residual = rr_new.sqrt() / b_norm;
                if report.residual <= cfg.rel_tol {
                    report.converged = true;
                    break;
                }
                let beta = rr_new / rr;
                rr = rr_new;
                for c in 0..6 {
                    for (pi, ri) in p[c].iter_mut().zip(r[c].iter()) {
                        *pi = ri + beta * *pi;
                    }
                }
            }
        }

        for c in 0..6 {
            for (xi, mi) in x[c].iter_mut().zip(macro_field[c].iter()) {
                *xi += mi;
            }
        }
        Ok((VoigtField::from_mandel(n, &x), report))
    }

    /// Solves the micro problem for macro strain `eps_bar`.
    pub fn solve(
        &self,
        grid: &VoxelGrid,
        mat_m: &MaterialParams,
        mat_i: &MaterialParams,
        eps_bar: &VoigtVector,
        cfg: &SolverConfig,
    ) -> Result<StrainField, FftError> {
        let (field, report) = self.solve_with_report(grid, mat_m, mat_i, eps_bar, cfg)?;
        if !report.converged {
            return Err(FftError::NoConvergence {
                iterations: report.iterations,
                residual: report.residual,
            });
        }
        Ok(field)
    }

    /// Effective stiffness from the six unit macro strains.
    pub fn homogenize(
        &self,
        grid: &VoxelGrid,
        mat_m: &MaterialParams,
        mat_i: &MaterialParams,
        cfg: &SolverConfig,
    ) -> Result<VoigtMatrix, FftError> {
        let columns: Vec<Result<VoigtVector, FftError>> = (1..=6)
            .into_par_iter()
            .map(|i| {
                let eps_bar = unit_strain(i)?;
                let field = self
                    .solve(grid, mat_m, mat_i, &eps_bar, cfg)
                    .map_err(|e| FftError::StrainState {
                        strain_index: i,
                        source: Box::new(e),
                    })?;
                average_stress(grid, mat_m, mat_i, &field)
            })
            .collect();
        let mut cols = [VoigtVector::zeros(); 6];
        for (i, c) in columns.into_iter().enumerate() {
            cols[i] = c?;
        }
        let c = VoigtMatrix::from_columns(&cols);
        log::debug!("homogenized stiffness asymmetry {:.3e}", c.asymmetry());
        Ok(c.symmetrized())
    }
}

/// Strain field solving the periodic micro problem for macro strain `eps_bar`.
pub fn solve_micro(
    grid: &VoxelGrid,
    mat_m: &MaterialParams,
    mat_i: &MaterialParams,
    eps_bar: &VoigtVector,
    cfg: &SolverConfig,
) -> Result<StrainField, FftError> {
    MicroSolver::new(grid.n()).solve(grid, mat_m, mat_i, eps_bar, cfg)
}

/// Effective Voigt stiffness; column `i` is the mean stress under `unit_strain(i)`.
pub fn homogenize(
    grid: &VoxelGrid,
    mat_m: &MaterialParams,
    mat_i: &MaterialParams,
    cfg: &SolverConfig,
) -> Result<VoigtMatrix, FftError> {
    MicroSolver::new(grid.n()).homogenize(grid, mat_m, mat_i, cfg)
}

/// Voxel-wise stress `C(x) ε(x)`.
pub fn stress_field(
    grid: &VoxelGrid,
    mat_m: &MaterialParams,
    mat_i: &MaterialParams,
    eps: &StrainField,
) -> Result<StressField, FftError> {
    if eps.n != grid.n() {
        return Err(FftError::DimensionMismatch {
            expected: grid.n(),
            field: eps.n,
        });
    }
    let phases = Phases::new(mat_m, mat_i)?;
    let data = grid
        .data()
        .iter()
        .zip(eps.data.iter())
        .map(|(&p, e)| phases.stress(p, e))
        .collect();
    Ok(VoigtField { n: eps.n, data })
}

/// Volume average of the stress.
pub fn average_stress(
    grid: &VoxelGrid,
    mat_m: &MaterialParams,
    mat_i: &MaterialParams,
    eps: &StrainField,
) -> Result<VoigtVector, FftError> {
    Ok(stress_field(grid, mat_m, mat_i, eps)?.mean())
}

/// `|⟨σ:ε⟩ − ⟨σ⟩:⟨ε⟩| / |⟨σ⟩:⟨ε⟩|`.
pub fn hill_mandel_residual(
    grid: &VoxelGrid,
    mat_m: &MaterialParams,
    mat_i: &MaterialParams,
    eps: &StrainField,
) -> Result<f64, FftError> {
    let sigma = stress_field(grid, mat_m, mat_i, eps)?;
    let work: f64 = sigma
        .data
        .iter()
        .zip(eps.data.iter())
        .map(|(s, e)| s.iter().zip(e.iter()).map(|(a, b)| a * b).sum::<f64>())
        .sum::<f64>()
        / eps.data.len() as f64;
    let macro_work = sigma.mean().dot(&eps.mean());
    Ok((work - macro_work).abs() / macro_work.abs())
}

/// Writes a grid plus a strain field as `MUQF`: the grid header and voxels,
/// followed by `n³ × 6` little-endian `f32` components, voxel-major.
pub fn write_field_file<W: Write>(
    mut w: W,
    grid: &VoxelGrid,
    field: &StrainField,
) -> Result<(), FftError> {
    if field.n != grid.n() {
        return Err(FftError::DimensionMismatch {
            expected: grid.n(),
            field: field.n,
        });
    }
    w.write_all(FIELD_MAGIC)?;
    write_u32(&mut w, FIELD_VERSION)?;
    write_u32(&mut w, grid.n() as u32)?;
    for &v in grid.data() {
        write_u8(&mut w, v)?;
    }
    for v in &field.data {
        for c in v {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
    }
    Ok(())
}
