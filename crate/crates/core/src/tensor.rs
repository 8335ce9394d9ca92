//! Linear-elastic tensor algebra in Voigt notation.
//!
//! Voigt ordering is `(11, 22, 33, 23, 13, 12)`. Strain vectors carry
//! engineering shear (`γ_ij = 2 ε_ij`), so a stiffness matrix has plain `G`
//! on its shear diagonal and `σ = C ε` is an ordinary matrix-vector product.

use nalgebra::{Matrix6, Vector6};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("non-physical material parameters: {0}")]
    NonPhysical(String),
    #[error("degenerate stiffness matrix: {0}")]
    Degenerate(String),
    #[error("Voigt index {0} out of range 1..=6")]
    IndexOutOfRange(usize),
}

/// Parameter representation of an isotropic linear-elastic material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Representation {
    /// First Lamé constant and shear modulus.
    LameG,
    /// Young's modulus and Poisson's ratio.
    ENu,
    /// Bulk and shear modulus.
    KG,
}

/// Isotropic material parameters in one of three equivalent forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaterialParams {
    LameG { lambda: f64, g: f64 },
    ENu { e: f64, nu: f64 },
    KG { k: f64, g: f64 },
}

impl MaterialParams {
    pub fn representation(&self) -> Representation {
        match self {
            MaterialParams::LameG { .. } => Representation::LameG,
            MaterialParams::ENu { .. } => Representation::ENu,
            MaterialParams::KG { .. } => Representation::KG,
        }
    }

    /// Checks the invariants of the current representation.
    pub fn validate(&self) -> Result<(), TensorError> {
        let finite = |v: f64, name: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(TensorError::NonPhysical(format!("{name} is not finite")))
            }
        };
        match *self {
            MaterialParams::ENu { e, nu } => {
                finite(e, "E")?;
                finite(nu, "nu")?;
                if e <= 0.0 {
                    return Err(TensorError::NonPhysical(format!("E = {e} must be > 0")));
                }
                if !(0.0..0.5).contains(&nu) {
                    return Err(TensorError::NonPhysical(format!(
                        "nu = {nu} must lie in [0, 0.5)"
                    )));
                }
            }
            MaterialParams::KG { k, g } => {
                finite(k, "K")?;
                finite(g, "G")?;
                if k <= 0.0 || g <= 0.0 {
                    return Err(TensorError::NonPhysical(format!(
                        "K = {k}, G = {g} must both be > 0"
                    )));
                }
            }
            MaterialParams::LameG { lambda, g } => {
                finite(lambda, "lambda")?;
                finite(g, "G")?;
                if lambda < 0.0 || g <= 0.0 {
                    return Err(TensorError::NonPhysical(format!(
                        "lambda = {lambda} must be >= 0 and G = {g} > 0"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bulk and shear modulus `(K, G)`.
    pub fn to_kg(&self) -> Result<(f64, f64), TensorError> {
        match convert_params(*self, Representation::KG)? {
            MaterialParams::KG { k, g } => Ok((k, g)),
            _ => unreachable!(),
        }
    }

    /// Young's modulus and Poisson's ratio `(E, ν)`.
    pub fn to_enu(&self) -> Result<(f64, f64), TensorError> {
        match convert_params(*self, Representation::ENu)? {
            MaterialParams::ENu { e, nu } => Ok((e, nu)),
            _ => unreachable!(),
        }
    }

    /// Lamé constant and shear modulus `(λ, G)`.
    pub fn to_lame(&self) -> Result<(f64, f64), TensorError> {
        match convert_params(*self, Representation::LameG)? {
            MaterialParams::LameG { lambda, g } => Ok((lambda, g)),
            _ => unreachable!(),
        }
    }

    /// Voigt stiffness of this material.
    pub fn stiffness(&self) -> Result<VoigtMatrix, TensorError> {
        let (k, g) = self.to_kg()?;
        Ok(isotropic_stiffness(k, g))
    }
}

/// Converts isotropic parameters between representations.
pub fn convert_params(
    p: MaterialParams,
    target: Representation,
) -> Result<MaterialParams, TensorError> {
    p.validate()?;
    // Everything routes through (K, G).
    let (k, g) = match p {
        MaterialParams::KG { k, g } => (k, g),
        MaterialParams::LameG { lambda, g } => (lambda + 2.0 * g / 3.0, g),
        MaterialParams::ENu { e, nu } => (e / (3.0 * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu))),
    };
    let out = match target {
        Representation::KG => {
            if let MaterialParams::KG { .. } = p {
                return Ok(p);
            }
            MaterialParams::KG { k, g }
        }
        Representation::LameG => match p {
            MaterialParams::LameG { .. } => return Ok(p),
            MaterialParams::ENu { e, nu } => MaterialParams::LameG {
                lambda: e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
                g,
            },
            MaterialParams::KG { .. } => MaterialParams::LameG {
                lambda: k - 2.0 * g / 3.0,
                g,
            },
        },
        Representation::ENu => match p {
            MaterialParams::ENu { .. } => return Ok(p),
            _ => MaterialParams::ENu {
                e: 9.0 * k * g / (3.0 * k + g),
                nu: (3.0 * k - 2.0 * g) / (2.0 * (3.0 * k + g)),
            },
        },
    };
    out.validate()?;
    Ok(out)
}

/// Six-component stress or strain in Voigt notation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoigtVector(pub [f64; 6]);

impl VoigtVector {
    pub fn zeros() -> Self {
        VoigtVector([0.0; 6])
    }

    pub fn dot(&self, other: &VoigtVector) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vector6<f64>> for VoigtVector {
    fn from(v: Vector6<f64>) -> Self {
        VoigtVector([v[0], v[1], v[2], v[3], v[4], v[5]])
    }
}

impl From<VoigtVector> for Vector6<f64> {
    fn from(v: VoigtVector) -> Self {
        Vector6::from_row_slice(&v.0)
    }
}

/// Unit macro strain with a one in Voigt slot `i` (1-based).
pub fn unit_strain(i: usize) -> Result<VoigtVector, TensorError> {
    if !(1..=6).contains(&i) {
        return Err(TensorError::IndexOutOfRange(i));
    }
    let mut v = [0.0; 6];
    v[i - 1] = 1.0;
    Ok(VoigtVector(v))
}

/// 6×6 stiffness (or compliance) matrix in Voigt notation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoigtMatrix(pub Matrix6<f64>);

impl VoigtMatrix {
    pub fn zeros() -> Self {
        VoigtMatrix(Matrix6::zeros())
    }

    pub fn from_rows(rows: [[f64; 6]; 6]) -> Self {
        VoigtMatrix(Matrix6::from_fn(|i, j| rows[i][j]))
    }

    /// Builds a matrix column by column.
    pub fn from_columns(cols: &[VoigtVector; 6]) -> Self {
        VoigtMatrix(Matrix6::from_fn(|i, j| cols[j].0[i]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn column(&self, j: usize) -> VoigtVector {
        VoigtVector(std::array::from_fn(|i| self.0[(i, j)]))
    }

    pub fn mul_vec(&self, v: &VoigtVector) -> VoigtVector {
        (self.0 * Vector6::from(*v)).into()
    }

    pub fn scale(&self, s: f64) -> VoigtMatrix {
        VoigtMatrix(self.0 * s)
    }

    pub fn transpose(&self) -> VoigtMatrix {
        VoigtMatrix(self.0.transpose())
    }

    /// Average with the transpose.
    pub fn symmetrized(&self) -> VoigtMatrix {
        VoigtMatrix((self.0 + self.0.transpose()) * 0.5)
    }

    /// `‖C − Cᵀ‖_F / ‖C‖_F`, zero for the zero matrix.
    pub fn asymmetry(&self) -> f64 {
        let n = self.0.norm();
        if n == 0.0 {
            0.0
        } else {
            (self.0 - self.0.transpose()).norm() / n
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Inverse through Cholesky; fails unless the matrix is symmetric positive definite.
    pub fn inverse_spd(&self) -> Result<VoigtMatrix, TensorError> {
        let sym = self.symmetrized();
        let chol = sym.0.cholesky().ok_or_else(|| {
            TensorError::Degenerate("matrix is not positive definite".to_string())
        })?;
        let inv = chol.inverse();
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::Degenerate("inverse is not finite".to_string()));
        }
        Ok(VoigtMatrix(inv))
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn symmetric_eigenvalues(&self) -> [f64; 6] {
        let eig = self.symmetrized().0.symmetric_eigen();
        let mut vals: [f64; 6] = std::array::from_fn(|i| eig.eigenvalues[i]);
        vals.sort_by(|a, b| a.total_cmp(b));
        vals
    }

    /// The 21 entries of the upper triangle, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(21);
        for i in 0..6 {
            for j in i..6 {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }
}

impl std::ops::Add for VoigtMatrix {
    type Output = VoigtMatrix;
    fn add(self, rhs: VoigtMatrix) -> VoigtMatrix {
        VoigtMatrix(self.0 + rhs.0)
    }
}

impl std::ops::Sub for VoigtMatrix {
    type Output = VoigtMatrix;
    fn sub(self, rhs: VoigtMatrix) -> VoigtMatrix {
        VoigtMatrix(self.0 - rhs.0)
    }
}

/// Isotropic Voigt stiffness from bulk and shear modulus.
///
/// Normal block `λ + 2G` on the diagonal and `λ` off it, `G` on the shear
/// diagonal, with `λ = K − 2G/3`.
pub fn isotropic_stiffness(k: f64, g: f64) -> VoigtMatrix {
    let lambda = k - 2.0 * g / 3.0;
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = lambda;
        }
        m[(i, i)] = lambda + 2.0 * g;
        m[(i + 3, i + 3)] = g;
    }
    VoigtMatrix(m)
}

/// Isotropic engineering constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoProps {
    pub e: f64,
    pub nu: f64,
}

/// Transversely isotropic engineering constants, fiber axis along direction 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransverseIsoProps {
    pub e1: f64,
    pub e2: f64,
    pub g12: f64,
    pub g23: f64,
    pub nu12: f64,
    pub nu23: f64,
}

impl TransverseIsoProps {
    pub fn as_array(&self) -> [f64; 6] {
        [self.e1, self.e2, self.g12, self.g23, self.nu12, self.nu23]
    }

    pub const NAMES: [&'static str; 6] = ["E1", "E2", "G12", "G23", "nu12", "nu23"];

    /// Stiffness assembled from the compliance of these constants.
    ///
    /// `g23` is taken as given; a consistent transversely isotropic material
    /// has `g23 = e2 / (2 (1 + nu23))`.
    pub fn stiffness(&self) -> Result<VoigtMatrix, TensorError> {
        let mut s = Matrix6::zeros();
        s[(0, 0)] = 1.0 / self.e1;
        s[(1, 1)] = 1.0 / self.e2;
        s[(2, 2)] = 1.0 / self.e2;
        s[(0, 1)] = -self.nu12 / self.e1;
        s[(0, 2)] = -self.nu12 / self.e1;
        s[(1, 2)] = -self.nu23 / self.e2;
        s[(1, 0)] = s[(0, 1)];
        s[(2, 0)] = s[(0, 2)];
        s[(2, 1)] = s[(1, 2)];
        s[(3, 3)] = 1.0 / self.g23;
        s[(4, 4)] = 1.0 / self.g12;
        s[(5, 5)] = 1.0 / self.g12;
        VoigtMatrix(s).inverse_spd()
    }
}

/// Isotropic constants of an effective stiffness, neglecting any anisotropy.
///
/// `μ̄` is the mean of the three shear diagonals and `λ̄` the mean of the six
/// off-diagonal entries of the normal block.
pub fn extract_isotropic(c: &VoigtMatrix) -> Result<IsoProps, TensorError> {
    let mu = (c.get(3, 3) + c.get(4, 4) + c.get(5, 5)) / 3.0;
    let lambda = (c.get(0, 1) + c.get(0, 2) + c.get(1, 2) + c.get(1, 0) + c.get(2, 0) + c.get(2, 1))
        / 6.0;
    if lambda + mu <= 0.0 || !(lambda + mu).is_finite() {
        return Err(TensorError::Degenerate(format!(
            "lambda + mu = {} must be positive",
            lambda + mu
        )));
    }
    Ok(IsoProps {
        e: mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu),
        nu: lambda / (2.0 * (lambda + mu)),
    })
}

/// Transversely isotropic constants (fiber axis 1) read from the compliance.
pub fn extract_transverse_isotropic(c: &VoigtMatrix) -> Result<TransverseIsoProps, TensorError> {
    let s = c.inverse_spd()?.0;
    let e1 = 1.0 / s[(0, 0)];
    let e2 = 0.5 * (1.0 / s[(1, 1)] + 1.0 / s[(2, 2)]);
    let nu12 = -0.5 * (s[(0, 1)] + s[(0, 2)]) * e1;
    let nu23 = -s[(1, 2)] * e2;
    let g23 = 1.0 / s[(3, 3)];
    let g12 = 0.5 * (1.0 / s[(4, 4)] + 1.0 / s[(5, 5)]);
    Ok(TransverseIsoProps {
        e1,
        e2,
        g12,
        g23,
        nu12,
        nu23,
    })
}
