//! Symplectic linear algebra at ℏ = 2.
//!
//! Quadratures are interleaved, `(x₁, p₁, x₂, p₂, …)`, and the symplectic form
//! is `Ω = ⊕ [[0, 1], [-1, 0]]`. With ℏ = 2 the vacuum covariance is the
//! identity and a coherent state `|α⟩` has mean `2 (Re α, Im α)`.
//!
//! Gate conventions (all phases measured anticlockwise):
//!
//! | gate | matrix |
//! |------|--------|
//! | squeeze `(r, φ)` | `cosh r·I − sinh r·S_φ`, `S_φ = [[cos φ, sin φ], [sin φ, −cos φ]]` |
//! | rotation `φ` | `R_φ = [[cos φ, −sin φ], [sin φ, cos φ]]` |
//! | beamsplitter `(θ, φ)` | `[[cos θ·I, −sin θ·R_φᵀ], [sin θ·R_φ, cos θ·I]]` |
//! | two-mode squeeze `(r, φ)` | `[[cosh r·I, −sinh r·S_φ], [−sinh r·S_φ, cosh r·I]]` |
//!
//! A positive `r` squeezes `x`. The beamsplitter has transmission amplitude
//! `cos θ`, and `θ = π/2` swaps the modes with a sign flip on the first.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use num_complex::Complex64;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Fixed reduced Planck constant.
pub const HBAR: f64 = 2.0;

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("non-finite gate parameter in {values:?}")))
    }
}

/// The `2N × 2N` symplectic form.
pub fn omega(num_modes: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * num_modes, 2 * num_modes);
    for k in 0..num_modes {
        m[(2 * k, 2 * k + 1)] = 1.0;
        m[(2 * k + 1, 2 * k)] = -1.0;
    }
    m
}

/// Largest elementwise deviation of `S Ω Sᵀ` from `Ω`.
pub fn symplectic_defect(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows() / 2;
    let om = omega(n);
    (s * &om * s.transpose() - om).amax()
}

/// A real matrix preserving the symplectic form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix(DMatrix<f64>);

impl SymplecticMatrix {
    /// Accepts `m` if `m Ω mᵀ = Ω` to within `1e-10` relative to `‖m‖²`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() % 2 != 0 || m.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "symplectic matrix must be square with even size, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(1.0);
        let defect = symplectic_defect(&m);
        if !(defect <= 1e-10 * scale * scale) {
            return Err(Error::InvalidArgument(format!(
                "matrix is not symplectic (defect {defect:.3e})"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn identity(num_modes: usize) -> Self {
        Self(DMatrix::identity(2 * num_modes, 2 * num_modes))
    }

    pub fn num_modes(&self) -> usize {
        self.0.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &SymplecticMatrix) -> SymplecticMatrix {
        Self(&self.0 * &other.0)
    }

    /// Inverse via `S⁻¹ = −Ω Sᵀ Ω`.
    pub fn inverse(&self) -> SymplecticMatrix {
        let om = omega(self.num_modes());
        Self(-(&om * self.0.transpose() * &om))
    }
}

fn s_phi(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, s, s, -c)
}

fn rot(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

fn from2(m: Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

fn blocks4(a: Matrix2<f64>, b: Matrix2<f64>, c: Matrix2<f64>, d: Matrix2<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            m[(i, j)] = a[(i, j)];
            m[(i, j + 2)] = b[(i, j)];
            m[(i + 2, j)] = c[(i, j)];
            m[(i + 2, j + 2)] = d[(i, j)];
        }
    }
    m
}

/// Single-mode squeezer.
pub fn squeeze_symplectic(r: f64, phi: f64) -> Result<SymplecticMatrix> {
    check_finite(&[r, phi])?;
    Ok(SymplecticMatrix(from2(Matrix2::identity() * r.cosh() - s_phi(phi) * r.sinh())))
}

/// Phase rotation by `φ`.
pub fn rotation_symplectic(phi: f64) -> Result<SymplecticMatrix> {
    check_finite(&[phi])?;
    Ok(SymplecticMatrix(from2(rot(phi))))
}

/// Two-mode beamsplitter with transmission amplitude `cos θ`.
pub fn beamsplitter_symplectic(theta: f64, phi: f64) -> Result<SymplecticMatrix> {
    check_finite(&[theta, phi])?;
    let (s, c) = theta.sin_cos();
    let r = rot(phi);
    let i2 = Matrix2::identity();
    Ok(SymplecticMatrix(blocks4(i2 * c, -r.transpose() * s, r * s, i2 * c)))
}

/// Two-mode squeezer.
pub fn two_mode_squeeze_symplectic(r: f64, phi: f64) -> Result<SymplecticMatrix> {
    check_finite(&[r, phi])?;
    let i2 = Matrix2::identity() * r.cosh();
    let off = -s_phi(phi) * r.sinh();
    Ok(SymplecticMatrix(blocks4(i2, off, off, i2)))
}

/// Phase-space displacement `√(2ℏ)(Re α, Im α)`.
pub fn displacement_vector(alpha: Complex64) -> DVector<f64> {
    let k = (2.0 * HBAR).sqrt();
    DVector::from_vec(vec![k * alpha.re, k * alpha.im])
}

/// Convert a squeezing level in dB to the squeezing parameter, keeping the sign.
pub fn db_to_r(db: f64) -> f64 {
    db * std::f64::consts::LN_10 / 20.0
}

pub fn r_to_db(r: f64) -> f64 {
    r * 20.0 / std::f64::consts::LN_10
}

/// Gate families with closed-form parameter derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// params `(r, φ)`
    Squeeze,
    /// params `(r, φ)`
    Squeeze2,
    /// params `(θ, φ)`
    Beamsplitter,
    /// params `(φ)`
    Rotation,
    /// params `(Re α, Im α)`
    Displacement,
}

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squeeze" => Ok(Self::Squeeze),
            "squeeze2" | "two_mode_squeeze" => Ok(Self::Squeeze2),
            "beamsplitter" => Ok(Self::Beamsplitter),
            "rotation" => Ok(Self::Rotation),
            "displacement" => Ok(Self::Displacement),
            other => Err(Error::InvalidArgument(format!("unknown gate kind {other:?}"))),
        }
    }
}

impl GateKind {
    pub fn num_params(self) -> usize {
        match self {
            Self::Rotation => 1,
            _ => 2,
        }
    }

    pub fn num_modes(self) -> usize {
        match self {
            Self::Squeeze2 | Self::Beamsplitter => 2,
            _ => 1,
        }
    }

    fn check(self, params: &[f64], which: Option<usize>) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::InvalidArgument(format!(
                "{self:?} takes {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        if let Some(w) = which {
            if w >= self.num_params() {
                return Err(Error::InvalidArgument(format!("{self:?} has no parameter {w}")));
            }
        }
        check_finite(params)
    }

    /// The gate's symplectic matrix (identity for a displacement).
    pub fn symplectic(self, params: &[f64]) -> Result<SymplecticMatrix> {
        self.check(params, None)?;
        match self {
            Self::Squeeze => squeeze_symplectic(params[0], params[1]),
            Self::Squeeze2 => two_mode_squeeze_symplectic(params[0], params[1]),
            Self::Beamsplitter => beamsplitter_symplectic(params[0], params[1]),
            Self::Rotation => rotation_symplectic(params[0]),
            Self::Displacement => Ok(SymplecticMatrix::identity(1)),
        }
    }

    /// The gate's displacement vector (zero unless a displacement).
    pub fn displacement(self, params: &[f64]) -> Result<DVector<f64>> {
        self.check(params, None)?;
        Ok(match self {
            Self::Displacement => displacement_vector(Complex64::new(params[0], params[1])),
            _ => DVector::zeros(2 * self.num_modes()),
        })
    }
}

/// `∂S/∂params[which]` for the given gate.
pub fn d_symplectic(kind: GateKind, params: &[f64], which: usize) -> Result<DMatrix<f64>> {
    kind.check(params, Some(which))?;
    let i2 = Matrix2::<f64>::identity();
    let z2 = Matrix2::<f64>::zeros();
    Ok(match kind {
        GateKind::Squeeze => {
            let (r, phi) = (params[0], params[1]);
            if which == 0 {
                from2(i2 * r.sinh() - s_phi(phi) * r.cosh())
            } else {
                let (s, c) = phi.sin_cos();
                from2(-Matrix2::new(-s, c, c, s) * r.sinh())
            }
        }
        GateKind::Squeeze2 => {
            let (r, phi) = (params[0], params[1]);
            if which == 0 {
                let off = -s_phi(phi) * r.cosh();
                blocks4(i2 * r.sinh(), off, off, i2 * r.sinh())
            } else {
                let (s, c) = phi.sin_cos();
                let off = -Matrix2::new(-s, c, c, s) * r.sinh();
                blocks4(z2, off, off, z2)
            }
        }
        GateKind::Beamsplitter => {
            let (theta, phi) = (params[0], params[1]);
            let (s, c) = theta.sin_cos();
            if which == 0 {
                let r = rot(phi);
                blocks4(-i2 * s, -r.transpose() * c, r * c, -i2 * s)
            } else {
                let (sp, cp) = phi.sin_cos();
                let dr = Matrix2::new(-sp, -cp, cp, -sp);
                blocks4(z2, -dr.transpose() * s, dr * s, z2)
            }
        }
        GateKind::Rotation => {
            let (s, c) = params[0].sin_cos();
            from2(Matrix2::new(-s, -c, c, -s))
        }
        GateKind::Displacement => DMatrix::zeros(2, 2),
    })
}

/// `∂d/∂params[which]` for the given gate.
pub fn d_displacement(kind: GateKind, params: &[f64], which: usize) -> Result<DVector<f64>> {
    kind.check(params, Some(which))?;
    let mut v = DVector::zeros(2 * kind.num_modes());
    if kind == GateKind::Displacement {
        v[which] = (2.0 * HBAR).sqrt();
    }
    Ok(v)
}

fn check_modes(modes: &[usize], num_modes: usize) -> Result<()> {
    for (i, &m) in modes.iter().enumerate() {
        if m >= num_modes {
            return Err(Error::ModeOutOfRange { index: m, modes: num_modes });
        }
        if modes[..i].contains(&m) {
            return Err(Error::InvalidArgument(format!("mode {m} listed twice")));
        }
    }
    Ok(())
}

/// Embed a `2k × 2k` matrix acting on `modes` into `2N × 2N`, filling the
/// remaining diagonal with `fill` (1 for unitaries, 0 for noise terms).
pub fn embed(local: &DMatrix<f64>, modes: &[usize], num_modes: usize, fill: f64) -> Result<DMatrix<f64>> {
    check_modes(modes, num_modes)?;
    if local.nrows() != 2 * modes.len() || local.ncols() != 2 * modes.len() {
        return Err(Error::InvalidArgument(format!(
            "operator of size {} does not match {} modes",
            local.nrows(),
            modes.len()
        )));
    }
    let mut m = DMatrix::identity(2 * num_modes, 2 * num_modes) * fill;
    for &a in modes {
        for q in 0..2 {
            m[(2 * a + q, 2 * a + q)] = 0.0;
        }
    }
    for (i, &a) in modes.iter().enumerate() {
        for (j, &b) in modes.iter().enumerate() {
            for q in 0..2 {
                for s in 0..2 {
                    m[(2 * a + q, 2 * b + s)] = local[(2 * i + q, 2 * j + s)];
                }
            }
        }
    }
    Ok(m)
}

/// Embed a local vector acting on `modes` into a `2N` vector.
pub fn embed_vector(local: &DVector<f64>, modes: &[usize], num_modes: usize) -> Result<DVector<f64>> {
    check_modes(modes, num_modes)?;
    if local.len() != 2 * modes.len() {
        return Err(Error::InvalidArgument("displacement size does not match modes".into()));
    }
    let mut v = DVector::zeros(2 * num_modes);
    for (i, &a) in modes.iter().enumerate() {
        v[2 * a] = local[2 * i];
        v[2 * a + 1] = local[2 * i + 1];
    }
    Ok(v)
}

/// A Gaussian channel `μ ↦ Xμ + d`, `σ ↦ XσXᵀ + Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChannel {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    d: DVector<f64>,
}

impl GaussianChannel {
    /// Validates complete positivity, `Y + iΩ − i XΩXᵀ ≥ 0` (ℏ = 2).
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let n2 = x.nrows();
        if n2 % 2 != 0 || x.ncols() != n2 || y.shape() != (n2, n2) || d.len() != n2 {
            return Err(Error::InvalidArgument("channel matrices have inconsistent shapes".into()));
        }
        if (&y - y.transpose()).amax() > 1e-12 * y.amax().max(1.0) {
            return Err(Error::InvalidArgument("channel Y matrix is not symmetric".into()));
        }
        let om = omega(n2 / 2);
        let anti = &om - &x * &om * x.transpose();
        let h = DMatrix::from_fn(n2, n2, |i, j| Complex64::new(y[(i, j)], anti[(i, j)]));
        let min = SymmetricEigen::new(h).eigenvalues.min();
        if min < -1e-10 {
            return Err(Error::InvalidArgument(format!(
                "channel violates complete positivity (min eigenvalue {min:.3e})"
            )));
        }
        Ok(Self { x, y, d })
    }

    pub fn num_modes(&self) -> usize {
        self.x.nrows() / 2
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    fn uniform(num_modes: usize, xs: f64, ys: f64) -> Self {
        let n2 = 2 * num_modes;
        Self {
            x: DMatrix::identity(n2, n2) * xs,
            y: DMatrix::identity(n2, n2) * ys,
            d: DVector::zeros(n2),
        }
    }

    /// Loss with transmissivity `eta` into a thermal bath of `nbar` photons,
    /// applied independently to each of `num_modes` modes.
    pub fn loss(eta: f64, nbar: f64, num_modes: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) || !(nbar >= 0.0) || !nbar.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "loss channel needs eta in [0, 1] and nbar >= 0, got eta={eta}, nbar={nbar}"
            )));
        }
        Ok(Self::uniform(num_modes, eta.sqrt(), (HBAR / 2.0) * (1.0 - eta) * (2.0 * nbar + 1.0)))
    }

    /// Phase-insensitive amplifier with gain `g ≥ 1`.
    pub fn gain(g: f64, num_modes: usize) -> Result<Self> {
        if !(g >= 1.0) || !g.is_finite() {
            return Err(Error::InvalidArgument(format!("gain must be >= 1, got {g}")));
        }
        Ok(Self::uniform(num_modes, g.sqrt(), (HBAR / 2.0) * (g - 1.0)))
    }

    /// Classical random displacement with variance `w` per quadrature.
    pub fn random_displacement(w: f64, num_modes: usize) -> Result<Self> {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {w}")));
        }
        Ok(Self::uniform(num_modes, 1.0, w))
    }
}

/// `σ = S (I + ν) Sᵀ` with `ν` the thermal excess per quadrature.
#[derive(Debug, Clone)]
pub struct WilliamsonDecomposition {
    pub s: SymplecticMatrix,
    /// Excess variances, one pair of equal entries per mode.
    pub nu: DVector<f64>,
}

impl WilliamsonDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let s = self.s.matrix();
        let d = DMatrix::from_diagonal(&self.nu.map(|v| v + HBAR / 2.0));
        s * d * s.transpose()
    }

    /// Largest per-mode thermal excess.
    pub fn max_excess(&self) -> f64 {
        self.nu.max()
    }
}

/// Symmetric square root and inverse square root via the spectral decomposition.
pub(crate) fn sqrt_spd(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(sigma.clone());
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::UnphysicalState(format!(
            "covariance is not positive definite (min eigenvalue {min:.3e})"
        )));
    }
    let v = &eig.eigenvectors;
    let sq = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
    let isq = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e.sqrt())) * v.transpose();
    Ok((sq, isq))
}

/// Williamson decomposition of a real symmetric positive-definite covariance.
///
/// Uses the spectrum of the Hermitian matrix `−i σ^{1/2} Ω σ^{1/2}`, whose
/// eigenvalues are `±D_k` (the symplectic eigenvalues). For each positive
/// eigenvector `v` the columns `√2 Re v`, `√2 Im v` form an orthogonal `O`
/// with `Oᵀ σ^{1/2}Ωσ^{1/2} O = ⊕ D_k Ω₂`, and `S = σ^{1/2} O D^{-1/2}`.
pub fn williamson(sigma: &DMatrix<f64>) -> Result<WilliamsonDecomposition> {
    let n2 = sigma.nrows();
    if n2 == 0 || n2 % 2 != 0 || sigma.ncols() != n2 {
        return Err(Error::InvalidArgument("covariance must be 2N x 2N".into()));
    }
    let asym = (sigma - sigma.transpose()).amax();
    if asym > 1e-10 * sigma.amax() {
        return Err(Error::InvalidArgument(format!("covariance is not symmetric ({asym:.3e})")));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let (sq, _) = sqrt_spd(&sym)?;
    let n = n2 / 2;
    let a = &sq * omega(n) * &sq;
    let h = DMatrix::from_fn(n2, n2, |i, j| Complex64::new(0.0, -a[(i, j)]));
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n2).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut o = DMatrix::zeros(n2, n2);
    let mut dvals = DVector::zeros(n2);
    // the n largest eigenvalues are the positive ones; order modes by ascending D
    for (k, &idx) in order[..n].iter().rev().enumerate() {
        let d = eig.eigenvalues[idx];
        if d < HBAR / 2.0 - 1e-9 * sym.amax().max(1.0) {
            return Err(Error::UnphysicalState(format!(
                "symplectic eigenvalue {d:.12} below the vacuum level"
            )));
        }
        let v = eig.eigenvectors.column(idx);
        for i in 0..n2 {
            o[(i, 2 * k)] = std::f64::consts::SQRT_2 * v[i].re;
            o[(i, 2 * k + 1)] = std::f64::consts::SQRT_2 * v[i].im;
        }
        dvals[2 * k] = d;
        dvals[2 * k + 1] = d;
    }
    let s = sq * o * DMatrix::from_diagonal(&dvals.map(|d| 1.0 / d.sqrt()));
    let nu = dvals.map(|d| (d - HBAR / 2.0).max(0.0));
    Ok(WilliamsonDecomposition { s: SymplecticMatrix(s), nu })
}
