//! Matrix models: rank-one multiplicative perturbations of a Haar
//! unitary or of a unitarily invariant normal matrix with iid unimodular
//! eigenvalues, plus the spectral data (phases and overlap weights) that
//! determines their characteristic functions.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, EigVals, QRSquare};
use num_complex::Complex64;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::sampling::{self, CircularLaw, Seed};

/// Dense-path guard; everything here is O(n^3) with n^2 memory.
pub const MAX_DIM: usize = 1024;

/// Two eigenphases closer than this are treated as one eigenvalue and
/// their weights merged.
pub const DEGENERACY_TOL: f64 = 1e-8;

const SALT_FRAME: u64 = 0x6672616d65;
const SALT_PHASES: u64 = 0x7068617365;

/// Strength of the rank-one contraction, in either parameterization.
///
/// `Amplitude(a)` keeps the zero-order value of the characteristic
/// function at `a` and contracts by `1 - a / sqrt(n)`; `Time(t)`
/// contracts by `1 - t` directly, so `t = 0` is a rank-one projection
/// and `t = 1` is no perturbation at all.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strength {
    Amplitude(Complex64),
    Time(f64),
}

impl Strength {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Strength::Amplitude(a) => {
                if !a.re.is_finite() || !a.im.is_finite() {
                    return Err(Error::invalid("a", "must be finite"));
                }
                if a.norm() == 0.0 {
                    return Err(Error::invalid("a", "must be nonzero"));
                }
                Ok(())
            }
            Strength::Time(t) => {
                if !t.is_finite() || !(-1.0..=1.0).contains(&t) {
                    return Err(Error::invalid("t", "must lie in [-1, 1]"));
                }
                Ok(())
            }
        }
    }

    /// The factor multiplying the distinguished direction: `A v = s v`.
    pub fn contraction(&self, n: usize) -> Complex64 {
        match *self {
            Strength::Amplitude(a) => a / (n as f64).sqrt(),
            Strength::Time(t) => Complex64::new(t, 0.0),
        }
    }

    /// Amplitude-scale view of the same strength: `a = s sqrt(n)`.
    pub fn amplitude(&self, n: usize) -> Complex64 {
        match *self {
            Strength::Amplitude(a) => a,
            Strength::Time(t) => Complex64::new(t * (n as f64).sqrt(), 0.0),
        }
    }
}

/// How the distinguished direction is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectionKind {
    /// First standard basis vector.
    FirstBasis,
    /// Uniform on the unit sphere, independent of everything else.
    UniformSphere,
}

impl DirectionKind {
    pub fn realize(self, n: usize, seed: Seed) -> Result<Array1<Complex64>> {
        match self {
            DirectionKind::FirstBasis => {
                sampling::check_dim(n)?;
                let mut v = Array1::zeros(n);
                v[0] = Complex64::new(1.0, 0.0);
                Ok(v)
            }
            DirectionKind::UniformSphere => sampling::sample_unit_vector(n, seed),
        }
    }
}

/// Rank-one perturbation `A = I - (1 - s) v v*` with `s` the contraction
/// factor of [`Strength`].
#[derive(Clone, Debug)]
pub struct PerturbationParams {
    pub n: usize,
    pub strength: Strength,
    pub v: Array1<Complex64>,
}

impl PerturbationParams {
    pub fn validate(&self) -> Result<()> {
        sampling::check_dim(self.n)?;
        self.strength.validate()?;
        if self.v.len() != self.n {
            return Err(Error::invalid("v", "length must equal n"));
        }
        let norm: f64 = self.v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("v", format!("must be unit, got norm {norm}")));
        }
        Ok(())
    }
}

/// A = I - (1 - s) v v*.
pub fn build_perturbation(params: &PerturbationParams) -> Result<Array2<Complex64>> {
    params.validate()?;
    let n = params.n;
    let s = params.strength.contraction(n);
    let coeff = Complex64::new(1.0, 0.0) - s;
    let mut a = Array2::eye(n);
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] -= coeff * params.v[i] * params.v[j].conj();
        }
    }
    Ok(a)
}

/// Which base ensemble the perturbation multiplies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaseModelKind {
    /// Haar-distributed unitary.
    HaarUnitary,
    /// `V D V*` with `V` Haar and `D` diagonal of iid phases.
    IidPhases(CircularLaw),
}

/// A realized base matrix. For the iid-phase model the sampled diagonal
/// is retained so tests can compare it against the recovered spectrum.
#[derive(Clone, Debug)]
pub struct BaseModel {
    pub kind: BaseModelKind,
    pub matrix: Array2<Complex64>,
    pub diagonal: Option<Vec<Complex64>>,
}

pub fn sample_base_model(kind: BaseModelKind, n: usize, seed: Seed) -> Result<BaseModel> {
    sampling::check_dim(n)?;
    match kind {
        BaseModelKind::HaarUnitary => Ok(BaseModel {
            kind,
            matrix: sampling::sample_haar_unitary(n, seed)?,
            diagonal: None,
        }),
        BaseModelKind::IidPhases(law) => {
            let v = sampling::sample_haar_unitary(n, seed.salted(SALT_FRAME))?;
            let d = sampling::sample_circular(law, n, seed.salted(SALT_PHASES))?;
            // M = V diag(d) V*
            let mut scaled = v.clone();
            for j in 0..n {
                for i in 0..n {
                    scaled[[i, j]] *= d[j];
                }
            }
            let matrix = scaled.dot(&v.mapv(|c| c.conj()).reversed_axes());
            Ok(BaseModel {
                kind,
                matrix,
                diagonal: Some(d),
            })
        }
    }
}

/// Base matrix times the rank-one contraction.
pub fn perturbed_matrix(base: &BaseModel, params: &PerturbationParams) -> Result<Array2<Complex64>> {
    if base.matrix.nrows() != params.n {
        return Err(Error::invalid("n", "params and base matrix disagree"));
    }
    let a = build_perturbation(params)?;
    Ok(base.matrix.dot(&a))
}

/// Where a set of points in the plane came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Eigensolver,
    RootFinder,
    Gaf,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Eigensolver => "eigensolver",
            Provenance::RootFinder => "rootfinder",
            Provenance::Gaf => "gaf",
        }
    }
}

/// Finite point configuration in the complex plane, tagged with the
/// algorithm that produced it. Points are kept in a deterministic order
/// (by argument, then modulus).
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub points: Vec<Complex64>,
    pub provenance: Provenance,
}

impl PointSet {
    pub fn new(mut points: Vec<Complex64>, provenance: Provenance) -> Self {
        points.sort_by(compare_complex);
        PointSet { points, provenance }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "re,im,provenance")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.re, p.im, self.provenance.as_str())?;
        }
        Ok(())
    }
}

fn compare_complex(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    a.arg()
        .total_cmp(&b.arg())
        .then(a.norm().total_cmp(&b.norm()))
        .then(a.re.total_cmp(&b.re))
        .then(a.im.total_cmp(&b.im))
}

/// Hausdorff distance between two finite point sets. Zero when both
/// are empty, infinite when exactly one is.
pub fn hausdorff_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let one_sided = |from: &[Complex64], to: &[Complex64]| {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max)
    };
    one_sided(a, b).max(one_sided(b, a))
}

/// Eigenvalues of a dense matrix.
pub fn spectrum(m: &Array2<Complex64>) -> Result<PointSet> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::invalid("matrix", "must be square and nonempty"));
    }
    if m.nrows() > MAX_DIM {
        return Err(Error::DimensionTooLarge {
            n: m.nrows(),
            max: MAX_DIM,
        });
    }
    let vals = m.eigvals().map_err(|e| Error::Eigensolver {
        detail: format!("eigvals on {}x{} matrix: {e}", m.nrows(), m.ncols()),
    })?;
    Ok(PointSet::new(vals.to_vec(), Provenance::Eigensolver))
}

/// Eigenphases of the base matrix together with the squared overlaps of
/// the distinguished direction against an orthonormal eigenbasis.
///
/// `phases.len() == weights.len() <= dim`, with equality unless
/// degenerate eigenvalues were merged (then `merged_degenerate` is set
/// and each merged weight is the squared norm of the projection onto
/// the corresponding eigenspace). Weights sum to 1 within 1e-10.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralData {
    pub phases: Vec<Complex64>,
    pub weights: Vec<f64>,
    pub dim: usize,
    pub merged_degenerate: bool,
}

impl SpectralData {
    pub fn validate(&self) -> Result<()> {
        if self.phases.len() != self.weights.len() {
            return Err(Error::invalid("weights", "length mismatch with phases"));
        }
        if self.dim == 0 || self.phases.is_empty() {
            return Err(Error::ZeroDimension);
        }
        if self.phases.len() > self.dim {
            return Err(Error::invalid("phases", "more entries than dim"));
        }
        for p in &self.phases {
            if (p.norm() - 1.0).abs() > 1e-8 {
                return Err(Error::invalid("phases", format!("|phase| = {}", p.norm())));
            }
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("weights", format!("sum to {total}")));
        }
        if self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("weights", "negative entry"));
        }
        Ok(())
    }

    /// Distance from z to the nearest eigenphase (= nearest pole of the
    /// resolvent form).
    pub fn pole_distance(&self, z: Complex64) -> f64 {
        self.phases
            .iter()
            .map(|p| (z - p).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// The scaled resolvent overlap
    /// `sqrt(dim) * sum_k w_k z conj(u_k) / (1 - z conj(u_k))`
    /// and its z-derivative. Callers must stay away from the poles at
    /// z = u_k and check [`SpectralData::pole_distance`] first.
    pub fn resolvent_form(&self, z: Complex64) -> (Complex64, Complex64) {
        let scale = (self.dim as f64).sqrt();
        let mut value = Complex64::new(0.0, 0.0);
        let mut deriv = Complex64::new(0.0, 0.0);
        for (p, w) in self.phases.iter().zip(self.weights.iter()) {
            let u = p.conj();
            let denom = Complex64::new(1.0, 0.0) - z * u;
            let zu = z * u;
            value += *w * zu / denom;
            deriv += *w * u / (denom * denom);
        }
        (scale * value, scale * deriv)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "phase_re,phase_im,weight")?;
        for (p, w) in self.phases.iter().zip(self.weights.iter()) {
            writeln!(out, "{},{},{}", p.re, p.im, w)?;
        }
        Ok(())
    }
}

/// Extract spectral data from a realized base matrix.
///
/// The eigenvector matrix from the general solver is re-orthonormalized
/// by a QR pass (the input is normal, so this only polishes roundoff;
/// within a degenerate cluster it picks an orthonormal basis of the
/// eigenspace, which is all the weights depend on). Phases are sorted
/// by argument and renormalized to exact unit modulus.
pub fn spectral_data(m: &Array2<Complex64>, v: &Array1<Complex64>) -> Result<SpectralData> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::invalid("matrix", "must be square and nonempty"));
    }
    if v.len() != n {
        return Err(Error::invalid("v", "length must equal matrix dimension"));
    }
    let (vals, vecs) = m.eig().map_err(|e| Error::Eigensolver {
        detail: format!("eig on {n}x{n} matrix: {e}"),
    })?;

    // sort eigenpairs by argument so degenerate clusters are adjacent
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| compare_complex(&vals[i], &vals[j]));
    let mut sorted_vecs = Array2::zeros((n, n));
    let mut sorted_vals = Vec::with_capacity(n);
    for (col, &idx) in order.iter().enumerate() {
        sorted_vals.push(vals[idx]);
        for row in 0..n {
            sorted_vecs[[row, col]] = vecs[[row, idx]];
        }
    }

    let (q, _) = sorted_vecs.qr_square().map_err(|e| Error::Eigensolver {
        detail: format!("orthonormalization of eigenvectors: {e}"),
    })?;

    let mut raw_weights = Vec::with_capacity(n);
    for col in 0..n {
        let mut overlap = Complex64::new(0.0, 0.0);
        for row in 0..n {
            overlap += q[[row, col]].conj() * v[row];
        }
        raw_weights.push(overlap.norm_sqr());
    }

    let (phases, weights, merged) = merge_degenerate(&sorted_vals, &raw_weights);
    let data = SpectralData {
        phases,
        weights,
        dim: n,
        merged_degenerate: merged,
    };
    data.validate()?;
    Ok(data)
}

fn merge_degenerate(
    vals: &[Complex64],
    weights: &[f64],
) -> (Vec<Complex64>, Vec<f64>, bool) {
    let n = vals.len();
    // group chains of adjacent (in sorted order) near-equal eigenvalues
    let mut groups: Vec<(usize, usize)> = Vec::new(); // [start, end)
    let mut start = 0usize;
    for i in 1..n {
        if (vals[i] - vals[i - 1]).norm() > DEGENERACY_TOL {
            groups.push((start, i));
            start = i;
        }
    }
    groups.push((start, n));

    // the argument sort can split a cluster across the branch cut
    let wrap_merge = groups.len() >= 2
        && (vals[groups[0].0] - vals[n - 1]).norm() <= DEGENERACY_TOL;

    let mut phases = Vec::with_capacity(groups.len());
    let mut merged_weights = Vec::with_capacity(groups.len());
    let mut merged = false;
    for (gi, &(a, b)) in groups.iter().enumerate() {
        if wrap_merge && gi == groups.len() - 1 && groups.len() >= 2 {
            continue; // folded into group 0 below
        }
        let (mut lo, mut hi) = (a, b);
        let mut extra: Option<(usize, usize)> = None;
        if wrap_merge && gi == 0 {
            extra = Some(*groups.last().unwrap());
        }
        let mut centroid = Complex64::new(0.0, 0.0);
        let mut weight = 0.0;
        let mut count = 0usize;
        loop {
            for i in lo..hi {
                centroid += vals[i];
                weight += weights[i];
                count += 1;
            }
            match extra.take() {
                Some((a2, b2)) => {
                    lo = a2;
                    hi = b2;
                }
                None => break,
            }
        }
        if count > 1 {
            merged = true;
        }
        let centroid = centroid / count as f64;
        phases.push(unimodular(centroid));
        merged_weights.push(weight);
    }
    (phases, merged_weights, merged)
}

fn unimodular(z: Complex64) -> Complex64 {
    let n = z.norm();
    if n == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        z / n
    }
}

/// Spectral data for the iid-phase model sampled without touching a
/// matrix: by unitary invariance the weights are flat Dirichlet,
/// independent of the phases, for any fixed direction.
pub fn sample_spectral_data_iid(law: CircularLaw, n: usize, seed: Seed) -> Result<SpectralData> {
    sampling::check_dim(n)?;
    law.validate()?;
    let mut phases = sampling::sample_circular(law, n, seed.salted(SALT_PHASES))?;
    let weights = sampling::sample_dirichlet_weights(n, &mut seed.salted(SALT_FRAME).rng());
    let mut pairs: Vec<(Complex64, f64)> = phases.drain(..).zip(weights).collect();
    pairs.sort_by(|a, b| compare_complex(&a.0, &b.0));
    let (phases, weights): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let data = SpectralData {
        phases,
        weights,
        dim: n,
        merged_degenerate: false,
    };
    data.validate()?;
    Ok(data)
}
