//! Seeded randomness and the base matrix ensembles.
//!
//! Convention used everywhere in this crate: a standard complex Gaussian
//! `c` has independent real and imaginary parts of variance 1/2, so that
//! `E|c|^2 = 1` and `|c|^2` is Exp(1)-distributed. Real-component
//! variance 1 would silently rescale every moment downstream; tests pin
//! the Exp(1) tail to catch that.

use ndarray::{Array1, Array2};
use ndarray_linalg::QRSquare;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

/// Root seed plus stream index for a counter-based ChaCha8 generator.
///
/// `root` selects the key, `stream` the ChaCha stream; distinct streams
/// under one root are independent generators, so per-sample streams give
/// reproducible results regardless of how samples are distributed over
/// threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Seed {
    pub root: u64,
    pub stream: u64,
}

impl Seed {
    pub fn new(root: u64) -> Self {
        Seed { root, stream: 0 }
    }

    /// Same key, different stream.
    pub fn with_stream(self, stream: u64) -> Self {
        Seed { stream, ..self }
    }

    /// Derive an unrelated root for a sub-component, keeping the stream.
    /// Different salts give statistically independent generators.
    pub fn salted(self, salt: u64) -> Self {
        Seed {
            root: splitmix64(self.root ^ splitmix64(salt)),
            stream: self.stream,
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(self.stream);
        rng
    }
}

// Fixed-increment splitmix64 step; bijective on u64.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard complex Gaussian with `E|c|^2 = 1`: both components are
/// N(0, 1/2).
pub fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// n x n matrix of iid standard complex Gaussians.
pub fn sample_ginibre(n: usize, seed: Seed) -> Result<Array2<Complex64>> {
    check_dim(n)?;
    let mut rng = seed.rng();
    Ok(Array2::from_shape_simple_fn((n, n), || {
        complex_gaussian(&mut rng)
    }))
}

/// Haar-distributed unitary via QR of a Ginibre matrix.
///
/// The raw Q of a QR factorization is not Haar: the factorization is
/// only unique once the diagonal of R is pinned down, and LAPACK's
/// choice biases the phases. Rescaling column j of Q by the phase of
/// `r_jj` restores uniqueness (R diagonal positive) and with it the
/// Haar law.
pub fn sample_haar_unitary(n: usize, seed: Seed) -> Result<Array2<Complex64>> {
    let g = sample_ginibre(n, seed)?;
    let (mut q, r) = g.qr_square()?;
    for j in 0..n {
        let d = r[[j, j]];
        let phase = if d.norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            d / d.norm()
        };
        for i in 0..n {
            q[[i, j]] *= phase;
        }
    }
    Ok(q)
}

/// Haar-distributed unitary stored implicitly as a product of nested
/// reflectors, one per column, plus a final scalar phase.
///
/// Sampling is O(n^2) and applying `U` or `U*` to a vector is O(n^2),
/// against O(n^3) for the dense route. The law is exactly Haar: block k
/// maps the first basis vector of the trailing subspace to a uniformly
/// distributed unit vector, and conditionally on its first column a
/// Haar unitary is a Haar unitary of the stabilizer times any fixed
/// completion.
#[derive(Clone, Debug)]
pub struct HouseholderUnitary {
    n: usize,
    // blocks[i] acts on coordinates i.., i = 0..n-1; w empty means the
    // reflector degenerated to the identity.
    blocks: Vec<Reflector>,
    final_phase: Complex64,
}

#[derive(Clone, Debug)]
struct Reflector {
    w: Vec<Complex64>,
    // 2 / ||w||^2, or 0 when w = 0
    beta: f64,
    alpha: Complex64,
}

impl Reflector {
    /// Unitary H with H e1 = u, factored as (I - beta w w*) diag(alpha, I).
    fn pointing_at(u: &[Complex64]) -> Reflector {
        let u1 = u[0];
        let phase = if u1.norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            u1 / u1.norm()
        };
        let alpha = -phase;
        let mut w: Vec<Complex64> = u.to_vec();
        w[0] -= alpha;
        let norm_sq: f64 = w.iter().map(|c| c.norm_sqr()).sum();
        // With alpha = -phase(u1) the subtraction never cancels:
        // ||w||^2 = 2 + 2|u1| >= 2.
        let beta = if norm_sq > 0.0 { 2.0 / norm_sq } else { 0.0 };
        Reflector { w, beta, alpha }
    }

    // v <- (I - beta w w*) v
    fn reflect(&self, v: &mut [Complex64]) {
        if self.beta == 0.0 {
            return;
        }
        let overlap: Complex64 = self
            .w
            .iter()
            .zip(v.iter())
            .map(|(w, x)| w.conj() * x)
            .sum();
        let scale = self.beta * overlap;
        for (x, w) in v.iter_mut().zip(self.w.iter()) {
            *x -= scale * w;
        }
    }
}

impl HouseholderUnitary {
    pub fn sample(n: usize, seed: Seed) -> Result<Self> {
        check_dim(n)?;
        let mut rng = seed.rng();
        let mut blocks = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n - 1 {
            let m = n - i;
            let mut u: Vec<Complex64> = (0..m).map(|_| complex_gaussian(&mut rng)).collect();
            let norm = u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for c in u.iter_mut() {
                *c /= norm;
            }
            blocks.push(Reflector::pointing_at(&u));
        }
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        Ok(HouseholderUnitary {
            n,
            blocks,
            final_phase: Complex64::from_polar(1.0, theta),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// v <- U v
    pub fn apply(&self, v: &mut [Complex64]) {
        assert_eq!(v.len(), self.n);
        v[self.n - 1] *= self.final_phase;
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let tail = &mut v[i..];
            tail[0] *= block.alpha;
            block.reflect(tail);
        }
    }

    /// v <- U* v
    pub fn apply_adjoint(&self, v: &mut [Complex64]) {
        assert_eq!(v.len(), self.n);
        for (i, block) in self.blocks.iter().enumerate() {
            let tail = &mut v[i..];
            block.reflect(tail);
            tail[0] *= block.alpha.conj();
        }
        v[self.n - 1] *= self.final_phase.conj();
    }

    /// Dense form, for tests and small-n cross-checks.
    pub fn to_matrix(&self) -> Array2<Complex64> {
        let n = self.n;
        let mut m = Array2::zeros((n, n));
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            col.fill(Complex64::new(0.0, 0.0));
            col[j] = Complex64::new(1.0, 0.0);
            self.apply(&mut col);
            for i in 0..n {
                m[[i, j]] = col[i];
            }
        }
        m
    }
}

/// Distribution of the iid diagonal phases in the `V D V*` model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CircularLaw {
    /// Uniform on the unit circle.
    UniformCircle,
    /// exp(i theta), theta normal with mean `mu` and variance `sigma2`.
    WrappedNormal { mu: f64, sigma2: f64 },
    /// exp(i theta), theta Cauchy with location `x0` and scale `gamma`.
    WrappedCauchy { x0: f64, gamma: f64 },
}

impl CircularLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CircularLaw::UniformCircle => Ok(()),
            CircularLaw::WrappedNormal { mu, sigma2 } => {
                if !mu.is_finite() {
                    return Err(Error::invalid("mu", "must be finite"));
                }
                if !sigma2.is_finite() || sigma2 < 0.0 {
                    return Err(Error::invalid("sigma2", "must be finite and nonnegative"));
                }
                Ok(())
            }
            CircularLaw::WrappedCauchy { x0, gamma } => {
                if !x0.is_finite() {
                    return Err(Error::invalid("x0", "must be finite"));
                }
                if !gamma.is_finite() || gamma < 0.0 {
                    return Err(Error::invalid("gamma", "must be finite and nonnegative"));
                }
                Ok(())
            }
        }
    }

    /// E[Z^k] for a sample Z of the law, in closed form.
    pub fn moment(&self, k: u32) -> Complex64 {
        if k == 0 {
            return Complex64::new(1.0, 0.0);
        }
        let k = f64::from(k);
        match *self {
            CircularLaw::UniformCircle => Complex64::new(0.0, 0.0),
            CircularLaw::WrappedNormal { mu, sigma2 } => {
                Complex64::from_polar((-k * k * sigma2 / 2.0).exp(), k * mu)
            }
            CircularLaw::WrappedCauchy { x0, gamma } => {
                Complex64::from_polar((-gamma * k).exp(), k * x0)
            }
        }
    }

    /// sup over k >= 1 of |E[Z^k]|. The modulus is decreasing in k for
    /// every supported law, so this is |E[Z]|.
    pub fn moment_sup(&self) -> f64 {
        self.moment(1).norm()
    }
}

/// n iid phases from the law.
pub fn sample_circular(law: CircularLaw, n: usize, seed: Seed) -> Result<Vec<Complex64>> {
    law.validate()?;
    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(draw_phase(law, &mut rng));
    }
    Ok(out)
}

pub(crate) fn draw_phase(law: CircularLaw, rng: &mut impl Rng) -> Complex64 {
    let theta = match law {
        CircularLaw::UniformCircle => rng.random::<f64>() * std::f64::consts::TAU,
        CircularLaw::WrappedNormal { mu, sigma2 } => {
            let g: f64 = rng.sample(StandardNormal);
            mu + sigma2.sqrt() * g
        }
        CircularLaw::WrappedCauchy { x0, gamma } => {
            // standard Cauchy as tan of a uniform angle
            let u: f64 = rng.random::<f64>() - 0.5;
            x0 + gamma * (std::f64::consts::PI * u).tan()
        }
    };
    Complex64::from_polar(1.0, theta)
}

/// Uniform unit vector in C^n (normalized complex Gaussian).
pub fn sample_unit_vector(n: usize, seed: Seed) -> Result<Array1<Complex64>> {
    check_dim(n)?;
    let mut rng = seed.rng();
    let mut v = Array1::from_shape_simple_fn(n, || complex_gaussian(&mut rng));
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    v.mapv_inplace(|c| c / norm);
    Ok(v)
}

/// Flat Dirichlet weights: n normalized Exp(1) draws. This is the joint
/// law of the squared overlaps of a fixed vector with a Haar frame.
pub fn sample_dirichlet_weights(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    w
}

pub(crate) fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::ZeroDimension);
    }
    if n > crate::models::MAX_DIM {
        return Err(Error::DimensionTooLarge {
            n,
            max: crate::models::MAX_DIM,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray_linalg::EigVals;
    use proptest::prelude::*;

    fn seed(root: u64) -> Seed {
        Seed::new(root)
    }

    // P(|c|^2 > 1) = exp(-1); frozen before the sampler was written.
    const EXP1_TAIL_AT_ONE: f64 = 0.367_879_441_171_442_33;

    #[test]
    fn gaussian_modulus_squared_is_exp1() {
        let mut rng = seed(11).rng();
        let n = 200_000usize;
        let mut tail = 0usize;
        let mut sum = 0.0;
        for _ in 0..n {
            let m = complex_gaussian(&mut rng).norm_sqr();
            sum += m;
            if m > 1.0 {
                tail += 1;
            }
        }
        let p_hat = tail as f64 / n as f64;
        let stderr = (EXP1_TAIL_AT_ONE * (1.0 - EXP1_TAIL_AT_ONE) / n as f64).sqrt();
        assert!(
            (p_hat - EXP1_TAIL_AT_ONE).abs() < 4.0 * stderr,
            "tail {p_hat} vs {EXP1_TAIL_AT_ONE}"
        );
        // E|c|^2 = 1 with Var |c|^2 = 1
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn circular_moments_match_closed_forms() {
        let laws = [
            CircularLaw::UniformCircle,
            CircularLaw::WrappedNormal {
                mu: 0.7,
                sigma2: 0.3,
            },
            CircularLaw::WrappedCauchy {
                x0: -0.4,
                gamma: 0.6,
            },
        ];
        let n = 100_000usize;
        for (i, law) in laws.iter().enumerate() {
            let zs = sample_circular(*law, n, seed(100 + i as u64)).unwrap();
            for z in &zs {
                assert!((z.norm() - 1.0).abs() < 1e-14);
            }
            for k in 1..=4u32 {
                let mean: Complex64 =
                    zs.iter().map(|z| z.powu(k)).sum::<Complex64>() / n as f64;
                let expected = law.moment(k);
                // |Z^k| = 1 so each component has variance <= 1
                let band = 4.0 / (n as f64).sqrt();
                assert!(
                    (mean - expected).norm() < 2.0 * band,
                    "law {law:?} k={k}: {mean} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn moment_sup_dominates_all_moments() {
        proptest!(|(sigma2 in 0.01f64..10.0, gamma in 0.01f64..5.0, mu in -3.0f64..3.0)| {
            for law in [
                CircularLaw::WrappedNormal { mu, sigma2 },
                CircularLaw::WrappedCauchy { x0: mu, gamma },
                CircularLaw::UniformCircle,
            ] {
                let sup = law.moment_sup();
                for k in 1..=20u32 {
                    prop_assert!(law.moment(k).norm() <= sup + 1e-15);
                }
            }
        });
    }

    #[test]
    fn haar_unitary_is_unitary() {
        for (i, n) in [1usize, 2, 5, 33].into_iter().enumerate() {
            let u = sample_haar_unitary(n, seed(7 + i as u64)).unwrap();
            let mut dev: f64 = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let mut s = Complex64::new(0.0, 0.0);
                    for k in 0..n {
                        s += u[[k, a]].conj() * u[[k, b]];
                    }
                    let target = if a == b { 1.0 } else { 0.0 };
                    dev = dev.max((s - Complex64::new(target, 0.0)).norm());
                }
            }
            assert!(dev < 1e-13 * n as f64, "n={n}: dev {dev}");
        }
    }

    #[test]
    fn haar_eigenvalues_on_unit_circle() {
        let u = sample_haar_unitary(16, seed(3)).unwrap();
        let eig = u.eigvals().unwrap();
        for lam in eig.iter() {
            assert!((lam.norm() - 1.0).abs() < 1e-10, "|lambda| = {}", lam.norm());
        }
    }

    // First-column overlap |u_1|^2 of a Haar unitary is Beta(1, n-1):
    // P(|u_1|^2 > 0.2) = 0.8^7 at n = 8. Frozen exact value.
    const BETA_TAIL_N8: f64 = 0.209_715_2;

    #[test]
    fn haar_first_column_overlap_tail() {
        let n = 8usize;
        let samples = 20_000usize;
        let mut hits = 0usize;
        for i in 0..samples {
            let u = sample_haar_unitary(n, seed(1000).with_stream(i as u64)).unwrap();
            if u[[0, 0]].norm_sqr() > 0.2 {
                hits += 1;
            }
        }
        let p_hat = hits as f64 / samples as f64;
        let stderr = (BETA_TAIL_N8 * (1.0 - BETA_TAIL_N8) / samples as f64).sqrt();
        assert!(
            (p_hat - BETA_TAIL_N8).abs() < 4.0 * stderr,
            "tail {p_hat} vs {BETA_TAIL_N8}"
        );
    }

    #[test]
    fn reflector_chain_first_column_overlap_tail() {
        let n = 8usize;
        let samples = 20_000usize;
        let mut hits = 0usize;
        let mut e1 = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..samples {
            let u = HouseholderUnitary::sample(n, seed(2000).with_stream(i as u64)).unwrap();
            e1.fill(Complex64::new(0.0, 0.0));
            e1[0] = Complex64::new(1.0, 0.0);
            u.apply(&mut e1);
            if e1[0].norm_sqr() > 0.2 {
                hits += 1;
            }
        }
        let p_hat = hits as f64 / samples as f64;
        let stderr = (BETA_TAIL_N8 * (1.0 - BETA_TAIL_N8) / samples as f64).sqrt();
        assert!(
            (p_hat - BETA_TAIL_N8).abs() < 4.0 * stderr,
            "tail {p_hat} vs {BETA_TAIL_N8}"
        );
    }

    #[test]
    fn reflector_chain_is_unitary_and_consistent() {
        let n = 16usize;
        let u = HouseholderUnitary::sample(n, seed(5)).unwrap();
        let m = u.to_matrix();
        // unitarity of the dense form
        let mut dev: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    s += m[[k, a]].conj() * m[[k, b]];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                dev = dev.max((s - Complex64::new(target, 0.0)).norm());
            }
        }
        assert!(dev < 1e-13, "unitarity dev {dev}");

        // apply agrees with the dense matrix, and apply_adjoint inverts it
        let mut rng = seed(6).rng();
        let v: Vec<Complex64> = (0..n).map(|_| complex_gaussian(&mut rng)).collect();
        let mut uv = v.clone();
        u.apply(&mut uv);
        for i in 0..n {
            let dense: Complex64 = (0..n).map(|j| m[[i, j]] * v[j]).sum();
            assert!((uv[i] - dense).norm() < 1e-13);
        }
        let mut back = uv.clone();
        u.apply_adjoint(&mut back);
        for i in 0..n {
            assert!((back[i] - v[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn dirichlet_weights_are_uniform_for_n2() {
        // flat Dirichlet on the 1-simplex is U[0,1] in the first weight
        let samples = 50_000usize;
        let mut rng = seed(77).rng();
        let mut below_half = 0usize;
        for _ in 0..samples {
            let w = sample_dirichlet_weights(2, &mut rng);
            assert!((w[0] + w[1] - 1.0).abs() < 1e-12);
            assert!(w[0] > 0.0 && w[1] > 0.0);
            if w[0] < 0.5 {
                below_half += 1;
            }
        }
        let p_hat = below_half as f64 / samples as f64;
        let stderr = (0.25f64 / samples as f64).sqrt();
        assert!((p_hat - 0.5).abs() < 4.0 * stderr, "p {p_hat}");
    }

    #[test]
    fn unit_vector_is_normalized() {
        let v = sample_unit_vector(37, seed(9)).unwrap();
        let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-14);
    }

    #[test]
    fn seeding_is_deterministic_and_streams_differ() {
        let a = sample_haar_unitary(6, seed(42)).unwrap();
        let b = sample_haar_unitary(6, seed(42)).unwrap();
        assert_eq!(a, b);
        let c = sample_haar_unitary(6, seed(42).with_stream(1)).unwrap();
        assert_ne!(a, c);
        let d = sample_haar_unitary(6, seed(42).salted(1)).unwrap();
        assert_ne!(a, d);
    }

    proptest! {
        #[test]
        fn rng_streams_reproduce(root in any::<u64>(), stream in any::<u64>()) {
            let s = Seed { root, stream };
            let mut r1 = s.rng();
            let mut r2 = s.rng();
            for _ in 0..8 {
                prop_assert_eq!(r1.random::<u64>(), r2.random::<u64>());
            }
        }

        #[test]
        fn salting_changes_root_not_stream(root in any::<u64>(), salt in 1u64..u64::MAX) {
            let s = Seed::new(root).with_stream(3);
            let t = s.salted(salt);
            prop_assert_eq!(t.stream, 3);
            prop_assert_ne!(t.root, s.root);
        }
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            sample_haar_unitary(0, seed(1)),
            Err(Error::ZeroDimension)
        ));
        assert!(matches!(
            sample_unit_vector(0, seed(1)),
            Err(Error::ZeroDimension)
        ));
    }
}
