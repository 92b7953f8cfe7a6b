//! Monte Carlo estimators for the quantitative identities: scaled
//! resolvent coefficients, joint moments, the tightness envelope, trace
//! moments, and count-distribution comparisons. Estimation is
//! sample-parallel with one seed stream per sample index and a
//! sequential index-order reduction, so results do not depend on the
//! worker count.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{sample_base_model, sample_spectral_data_iid, spectral_data, BaseModelKind};
use crate::sampling::{check_dim, sample_haar_unitary, CircularLaw, HouseholderUnitary, Seed};

pub const MAX_COEFF_ORDER: usize = 32;
pub const MAX_JOINT_DEGREE: u32 = 8;

/// Running (sum, sum of squared magnitudes, count) triple. Merging is
/// associative up to floating-point reassociation; the deterministic
/// pipelines below only ever fold in index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct MomentAccumulator {
    sum: Complex64,
    abs_sqr: f64,
    count: u64,
}

impl MomentAccumulator {
    pub fn push(&mut self, z: Complex64) {
        self.sum += z;
        self.abs_sqr += z.norm_sqr();
        self.count += 1;
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            sum: self.sum + other.sum,
            abs_sqr: self.abs_sqr + other.abs_sqr,
            count: self.count + other.count,
        }
    }

    pub fn estimate(&self) -> MCEstimate {
        let n = self.count as f64;
        let mean = self.sum / n;
        // total variance over both components
        let var = (self.abs_sqr / n - mean.norm_sqr()).max(0.0);
        MCEstimate {
            value: mean,
            stderr: (var / n).sqrt(),
            samples: self.count,
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MCEstimate {
    pub value: Complex64,
    pub stderr: f64,
    pub samples: u64,
}

impl MCEstimate {
    /// |value - reference| <= band * stderr
    pub fn within(&self, reference: Complex64, band: f64) -> bool {
        (self.value - reference).norm() <= band * self.stderr
    }
}

fn estimate_of(values: impl IntoIterator<Item = Complex64>) -> MCEstimate {
    let mut acc = MomentAccumulator::default();
    for v in values {
        acc.push(v);
    }
    acc.estimate()
}

/// Deterministic sample-parallel map: sample i runs on seed stream i and
/// results come back in index order regardless of how rayon schedules
/// the work.
pub fn sample_map<T, F>(samples: u64, seed: Seed, f: F) -> Result<Vec<T>>
where
    F: Fn(Seed) -> Result<T> + Sync,
    T: Send,
{
    if samples == 0 {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    (0..samples)
        .into_par_iter()
        .map(|i| f(seed.with_stream(i)))
        .collect()
}

/// One row of scaled coefficients sqrt(N) v*(U*)^k v (Haar) or
/// sqrt(N/2) sum_j w_j conj(phase_j)^k (diagonal-conjugation models),
/// k = 1..k_max.
fn coefficient_row(
    kind: &BaseModelKind,
    n: usize,
    k_max: usize,
    seed: Seed,
) -> Result<Vec<Complex64>> {
    match kind {
        BaseModelKind::HaarUnitary => {
            let h = HouseholderUnitary::sample(n, seed)?;
            let scale = (n as f64).sqrt();
            let mut v = vec![Complex64::new(0.0, 0.0); n];
            v[0] = Complex64::new(1.0, 0.0);
            Ok((0..k_max)
                .map(|_| {
                    h.apply_adjoint(&mut v);
                    v[0] * scale
                })
                .collect())
        }
        BaseModelKind::IidPhases(law) => {
            let data = sample_spectral_data_iid(*law, n, seed)?;
            let scale = (n as f64 / 2.0).sqrt();
            let mut pows: Vec<Complex64> = data.phases.iter().map(|p| p.conj()).collect();
            let mut row = Vec::with_capacity(k_max);
            for _ in 0..k_max {
                let m: Complex64 = data
                    .weights
                    .iter()
                    .zip(&pows)
                    .map(|(w, p)| p * *w)
                    .sum();
                row.push(m * scale);
                for (p, phase) in pows.iter_mut().zip(&data.phases) {
                    *p *= phase.conj();
                }
            }
            Ok(row)
        }
    }
}

fn check_order(k_max: usize) -> Result<()> {
    if k_max == 0 || k_max > MAX_COEFF_ORDER {
        return Err(Error::invalid(
            "k_max",
            format!("must lie in 1..={MAX_COEFF_ORDER}"),
        ));
    }
    Ok(())
}

/// Matrix of scaled coefficient samples, one row per sample.
pub fn coefficient_samples(
    kind: &BaseModelKind,
    n: usize,
    k_max: usize,
    samples: u64,
    seed: Seed,
) -> Result<Array2<Complex64>> {
    check_dim(n)?;
    check_order(k_max)?;
    let rows = sample_map(samples, seed, |s| coefficient_row(kind, n, k_max, s))?;
    let flat: Vec<Complex64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((samples as usize, k_max), flat)
        .map_err(|e| Error::invalid("samples", e.to_string()))
}

/// Product of coefficient powers: orders with multiplicities for the
/// plain factors and for the conjugated factors.
#[derive(Debug, Clone)]
pub struct MomentSpec {
    pub powers: Vec<(u32, u32)>,
    pub conj_powers: Vec<(u32, u32)>,
}

impl MomentSpec {
    pub fn validate(&self) -> Result<()> {
        for side in [&self.powers, &self.conj_powers] {
            for window in side.windows(2) {
                if window[0].0 >= window[1].0 {
                    return Err(Error::invalid("powers", "orders must strictly increase"));
                }
            }
            for &(order, mult) in side {
                if order == 0 || order as usize > MAX_COEFF_ORDER {
                    return Err(Error::invalid(
                        "powers",
                        format!("order must lie in 1..={MAX_COEFF_ORDER}"),
                    ));
                }
                if mult == 0 {
                    return Err(Error::invalid("powers", "multiplicity must be positive"));
                }
            }
        }
        if self.degree() == 0 {
            return Err(Error::invalid("powers", "empty product"));
        }
        if self.degree() > MAX_JOINT_DEGREE {
            return Err(Error::invalid(
                "powers",
                format!(
                    "total degree {} exceeds {MAX_JOINT_DEGREE}; the estimator variance would be uninformative",
                    self.degree()
                ),
            ));
        }
        Ok(())
    }

    pub fn degree(&self) -> u32 {
        self.powers
            .iter()
            .chain(&self.conj_powers)
            .map(|&(_, mult)| mult)
            .sum()
    }

    pub fn max_order(&self) -> u32 {
        self.powers
            .iter()
            .chain(&self.conj_powers)
            .map(|&(order, _)| order)
            .max()
            .unwrap_or(0)
    }

    /// Large-dimension limit of the joint moment: nonzero only when the
    /// conjugated factors mirror the plain ones exactly, where it is the
    /// product of the multiplicity factorials.
    pub fn limit_value(&self) -> f64 {
        if self.powers == self.conj_powers {
            self.powers
                .iter()
                .map(|&(_, mult)| (1..=mult as u64).product::<u64>() as f64)
                .product()
        } else {
            0.0
        }
    }
}

pub fn joint_moment(
    kind: &BaseModelKind,
    n: usize,
    spec: &MomentSpec,
    samples: u64,
    seed: Seed,
) -> Result<MCEstimate> {
    check_dim(n)?;
    spec.validate()?;
    let k_max = spec.max_order() as usize;
    let products = sample_map(samples, seed, |s| {
        let row = coefficient_row(kind, n, k_max, s)?;
        let mut value = Complex64::new(1.0, 0.0);
        for &(order, mult) in &spec.powers {
            value *= row[order as usize - 1].powi(mult as i32);
        }
        for &(order, mult) in &spec.conj_powers {
            value *= row[order as usize - 1].conj().powi(mult as i32);
        }
        Ok(value)
    })?;
    Ok(estimate_of(products))
}

/// MC profile of E|f(z)|^2 for the scaled resolvent transform over a
/// grid of evaluation points.
pub fn tightness_profile(
    kind: &BaseModelKind,
    n: usize,
    z_grid: &[Complex64],
    samples: u64,
    seed: Seed,
) -> Result<Vec<(Complex64, MCEstimate)>> {
    check_dim(n)?;
    if z_grid.is_empty() {
        return Err(Error::invalid("z_grid", "empty grid"));
    }
    for z in z_grid {
        if z.norm() > 0.95 {
            return Err(Error::invalid("z_grid", "grid points must satisfy |z| <= 0.95"));
        }
    }
    let rows = sample_map(samples, seed, |s| {
        let data = match kind {
            BaseModelKind::HaarUnitary => {
                let base = sample_base_model(BaseModelKind::HaarUnitary, n, s)?;
                let mut v = ndarray::Array1::zeros(n);
                v[0] = Complex64::new(1.0, 0.0);
                spectral_data(&base.matrix, &v)?
            }
            BaseModelKind::IidPhases(law) => sample_spectral_data_iid(*law, n, s)?,
        };
        Ok(z_grid
            .iter()
            .map(|&z| {
                let (value, _) = data.resolvent_form(z);
                Complex64::new(value.norm_sqr(), 0.0)
            })
            .collect::<Vec<_>>())
    })?;
    Ok(z_grid
        .iter()
        .enumerate()
        .map(|(j, &z)| (z, estimate_of(rows.iter().map(|row| row[j]))))
        .collect())
}

/// MC estimate of E|tr U^l|^2 for Haar unitaries.
pub fn trace_moment(n: usize, l: u32, samples: u64, seed: Seed) -> Result<MCEstimate> {
    check_dim(n)?;
    if l == 0 {
        return Err(Error::invalid("l", "power must be at least 1"));
    }
    let values = sample_map(samples, seed, |s| {
        let u = sample_haar_unitary(n, s)?;
        let spectrum = crate::models::spectrum(&u)?;
        let trace: Complex64 = spectrum.points.iter().map(|lambda| lambda.powi(l as i32)).sum();
        Ok(Complex64::new(trace.norm_sqr(), 0.0))
    })?;
    Ok(estimate_of(values))
}

/// Total-variation distance between two count histograms (index =
/// count value), and whether it clears the threshold.
pub fn compare_counts(a: &[u64], b: &[u64], threshold: f64) -> Result<(f64, bool)> {
    let total_a: u64 = a.iter().sum();
    let total_b: u64 = b.iter().sum();
    if total_a == 0 || total_b == 0 {
        return Err(Error::invalid("histogram", "empty histogram"));
    }
    let len = a.len().max(b.len());
    let mut tv = 0.0;
    for i in 0..len {
        let pa = a.get(i).copied().unwrap_or(0) as f64 / total_a as f64;
        let pb = b.get(i).copied().unwrap_or(0) as f64 / total_b as f64;
        tv += (pa - pb).abs();
    }
    let tv = tv / 2.0;
    Ok((tv, tv <= threshold))
}

/// Gate on the phase law's moment decay: the largest moment magnitude
/// must not exceed n^{-1/2}, the hypothesis under which the
/// diagonal-conjugation limit theorems apply.
pub fn validate_phase_law(law: &CircularLaw, n: usize) -> Result<()> {
    check_dim(n)?;
    law.validate()?;
    let bound = law.moment_sup();
    let threshold = 1.0 / (n as f64).sqrt();
    if bound > threshold + 1e-12 {
        return Err(Error::SlowPhaseDecay {
            n,
            bound,
            threshold,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::complex_gaussian;
    use ndarray::Array1;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn haar() -> BaseModelKind {
        BaseModelKind::HaarUnitary
    }

    fn vdv() -> BaseModelKind {
        BaseModelKind::IidPhases(CircularLaw::UniformCircle)
    }

    #[test]
    fn estimate_closed_form() {
        let mut acc = MomentAccumulator::default();
        for z in [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)] {
            acc.push(z);
        }
        let est = acc.estimate();
        assert_eq!(est.value, c(0.0, 0.0));
        // E|z|^2 = 1, mean 0, so stderr = sqrt(1/4)
        assert!((est.stderr - 0.5).abs() < 1e-15);
        assert_eq!(est.samples, 4);
    }

    #[test]
    fn merge_matches_sequential_fold() {
        let mut rng = Seed::new(11).rng();
        let values: Vec<Complex64> = (0..1000).map(|_| complex_gaussian(&mut rng)).collect();
        let mut seq = MomentAccumulator::default();
        for &v in &values {
            seq.push(v);
        }
        let mut left = MomentAccumulator::default();
        let mut right = MomentAccumulator::default();
        for &v in &values[..333] {
            left.push(v);
        }
        for &v in &values[333..] {
            right.push(v);
        }
        let merged = left.merge(right).estimate();
        let direct = seq.estimate();
        assert!((merged.value - direct.value).norm() <= 1e-9 * direct.value.norm().max(1.0));
        assert!((merged.stderr - direct.stderr).abs() <= 1e-9 * direct.stderr);
        assert_eq!(merged.samples, direct.samples);
    }

    proptest! {
        #[test]
        fn merge_is_split_invariant(split in 1usize..199) {
            let mut rng = Seed::new(23).rng();
            let values: Vec<Complex64> = (0..200).map(|_| complex_gaussian(&mut rng)).collect();
            let mut seq = MomentAccumulator::default();
            for &v in &values {
                seq.push(v);
            }
            let mut a = MomentAccumulator::default();
            let mut b = MomentAccumulator::default();
            for &v in &values[..split] {
                a.push(v);
            }
            for &v in &values[split..] {
                b.push(v);
            }
            let merged = a.merge(b).estimate();
            let direct = seq.estimate();
            prop_assert!((merged.value - direct.value).norm() <= 1e-9);
            prop_assert!((merged.stderr - direct.stderr).abs() <= 1e-9);
        }
    }

    #[test]
    fn sample_map_is_worker_count_invariant() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                coefficient_samples(&vdv(), 32, 3, 64, Seed::new(77)).unwrap()
            })
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one, four);
    }

    #[test]
    fn haar_coefficient_routes_agree() {
        // reflector-product route vs eigendecomposition route vs direct
        // adjoint powers, all on the same matrix
        let n = 16;
        let seed = Seed::new(41);
        let h = HouseholderUnitary::sample(n, seed).unwrap();
        let row = coefficient_row(&haar(), n, 4, seed).unwrap();

        let u = h.to_matrix();
        let mut v = Array1::zeros(n);
        v[0] = c(1.0, 0.0);
        let data = spectral_data(&u, &v).unwrap();
        let scale = (n as f64).sqrt();
        let mut pows: Vec<Complex64> = data.phases.iter().map(|p| p.conj()).collect();
        for k in 0..4 {
            let m: Complex64 = data
                .weights
                .iter()
                .zip(&pows)
                .map(|(w, p)| p * *w)
                .sum();
            assert!(
                (row[k] - m * scale).norm() < 1e-9,
                "k={}: reflector {} vs spectral {}",
                k + 1,
                row[k],
                m * scale
            );
            for (p, phase) in pows.iter_mut().zip(&data.phases) {
                *p *= phase.conj();
            }
        }

        // direct powers of the adjoint matrix
        let ustar = u.t().mapv(|x| x.conj());
        let mut w = Array1::zeros(n);
        w[0] = c(1.0, 0.0);
        for k in 0..4 {
            w = ustar.dot(&w);
            assert!((row[k] - w[0] * scale).norm() < 1e-9, "k={}", k + 1);
        }
    }

    #[test]
    fn haar_coefficient_finite_dimension_moment() {
        // exact finite-n second moment: E[n |m_k|^2] = (n+k)/(n+1)
        let n = 8;
        let rows = coefficient_samples(&haar(), n, 3, 40_000, Seed::new(52)).unwrap();
        for k in 0..3 {
            let est = estimate_of(rows.column(k).iter().map(|v| c(v.norm_sqr(), 0.0)));
            let reference = (n as f64 + (k + 1) as f64) / (n as f64 + 1.0);
            assert!(
                est.within(c(reference, 0.0), 4.0),
                "k={}: {} +- {} vs {}",
                k + 1,
                est.value,
                est.stderr,
                reference
            );
        }
    }

    #[test]
    fn vdv_coefficient_finite_dimension_moment() {
        // E[(n/2) |m_k|^2] = n E[w^2] (n/2) ... = n/(n+1) for uniform phases
        let n = 8;
        let rows = coefficient_samples(&vdv(), n, 2, 40_000, Seed::new(53)).unwrap();
        for k in 0..2 {
            let est = estimate_of(rows.column(k).iter().map(|v| c(v.norm_sqr(), 0.0)));
            let reference = n as f64 / (n as f64 + 1.0);
            assert!(
                est.within(c(reference, 0.0), 4.0),
                "k={}: {} +- {} vs {}",
                k + 1,
                est.value,
                est.stderr,
                reference
            );
        }
    }

    #[test]
    fn coefficient_squares_average_to_zero() {
        // rotation symmetry kills E[(sqrt(n) m_k)^2]
        let rows = coefficient_samples(&haar(), 16, 2, 20_000, Seed::new(54)).unwrap();
        for k in 0..2 {
            let est = estimate_of(rows.column(k).iter().map(|v| v * v));
            assert!(est.within(c(0.0, 0.0), 4.0), "k={}: {}", k + 1, est.value);
        }
    }

    #[test]
    fn moment_spec_validation_and_limits() {
        let abs_fourth = MomentSpec {
            powers: vec![(1, 2)],
            conj_powers: vec![(1, 2)],
        };
        abs_fourth.validate().unwrap();
        assert_eq!(abs_fourth.limit_value(), 2.0);

        let mismatch = MomentSpec {
            powers: vec![(1, 1)],
            conj_powers: vec![(2, 1)],
        };
        mismatch.validate().unwrap();
        assert_eq!(mismatch.limit_value(), 0.0);

        let paired = MomentSpec {
            powers: vec![(1, 2), (3, 1)],
            conj_powers: vec![(1, 2), (3, 1)],
        };
        assert_eq!(paired.limit_value(), 2.0);

        let too_big = MomentSpec {
            powers: vec![(1, 5)],
            conj_powers: vec![(1, 5)],
        };
        assert!(too_big.validate().is_err());
        let unsorted = MomentSpec {
            powers: vec![(2, 1), (1, 1)],
            conj_powers: vec![],
        };
        assert!(unsorted.validate().is_err());
    }

    #[test]
    fn joint_moments_reach_their_limits() {
        let n = 256;
        let samples = 10_000;
        let abs_fourth = MomentSpec {
            powers: vec![(1, 2)],
            conj_powers: vec![(1, 2)],
        };
        let est = joint_moment(&vdv(), n, &abs_fourth, samples, Seed::new(60)).unwrap();
        assert!(
            est.within(c(2.0, 0.0), 4.0),
            "E|S1|^4 = {} +- {}",
            est.value,
            est.stderr
        );

        let crossed = MomentSpec {
            powers: vec![(1, 1)],
            conj_powers: vec![(2, 1)],
        };
        let est = joint_moment(&vdv(), n, &crossed, samples, Seed::new(61)).unwrap();
        assert!(est.within(c(0.0, 0.0), 4.0), "E[S1 conj(S2)] = {}", est.value);

        // mismatched orders only vanish asymptotically; the exact
        // finite-n value for flat weights and unit phases is
        // (n/2)^{3/2} sum_j E[w_j^3] = (n/2)^{3/2} 6/((n+1)(n+2))
        let odd = MomentSpec {
            powers: vec![(1, 2)],
            conj_powers: vec![(2, 1)],
        };
        assert_eq!(odd.limit_value(), 0.0);
        let n = 64;
        let exact = (n as f64 / 2.0).powf(1.5) * 6.0 / ((n as f64 + 1.0) * (n as f64 + 2.0));
        let est = joint_moment(&vdv(), n, &odd, samples, Seed::new(62)).unwrap();
        assert!(
            est.within(c(exact, 0.0), 4.0),
            "E[S1^2 conj(S2)] = {} +- {} vs {exact}",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn doubling_samples_halves_stderr() {
        let spec = MomentSpec {
            powers: vec![(1, 1)],
            conj_powers: vec![(1, 1)],
        };
        let small = joint_moment(&vdv(), 16, &spec, 4000, Seed::new(63)).unwrap();
        let large = joint_moment(&vdv(), 16, &spec, 8000, Seed::new(63)).unwrap();
        let ratio = large.stderr / small.stderr;
        let ideal = 0.5f64.sqrt();
        assert!(
            (ratio / ideal - 1.0).abs() <= 0.2,
            "stderr ratio {ratio} vs {ideal}"
        );
    }

    #[test]
    fn trace_moments_match_identity() {
        // E|tr U^l|^2 = min(l, n), including the saturated branch
        for (l, reference) in [(1u32, 1.0), (8, 8.0), (20, 8.0)] {
            let est = trace_moment(8, l, 20_000, Seed::new(70 + l as u64)).unwrap();
            assert!(
                est.within(c(reference, 0.0), 4.0),
                "l={l}: {} +- {} vs {reference}",
                est.value,
                est.stderr
            );
        }
    }

    #[test]
    fn tightness_profile_matches_finite_dimension_series() {
        // E|f(z)|^2 = sum_{l=1}^n r^{2l} (n+l)/(n+1) + tail, tail below
        // n r^{2(n+1)}/(1-r^2) ~ 1e-9 at r=0.5, n=16
        let n = 16;
        let z = c(0.5, 0.0);
        let profile = tightness_profile(&haar(), n, &[c(0.0, 0.0), z], 3000, Seed::new(80)).unwrap();
        let (z0, at_zero) = profile[0];
        assert_eq!(z0, c(0.0, 0.0));
        assert_eq!(at_zero.value, c(0.0, 0.0));

        let (_, est) = profile[1];
        let r2 = z.norm_sqr();
        let series: f64 = (1..=n)
            .map(|l| r2.powi(l as i32) * (n as f64 + l as f64) / (n as f64 + 1.0))
            .sum();
        assert!(
            (est.value.re - series).abs() <= 4.0 * est.stderr + 1e-8,
            "{} +- {} vs {}",
            est.value.re,
            est.stderr,
            series
        );
        // the dimension-free envelope holds with room to spare
        let envelope = 2.0 * r2 / (1.0 - r2);
        assert!(est.value.re <= envelope + 4.0 * est.stderr);
    }

    #[test]
    fn compare_counts_basics() {
        let (tv, pass) = compare_counts(&[5, 5], &[5, 5], 0.05).unwrap();
        assert_eq!(tv, 0.0);
        assert!(pass);
        let (tv, pass) = compare_counts(&[10, 0], &[0, 10], 0.05).unwrap();
        assert_eq!(tv, 1.0);
        assert!(!pass);
        let (tv, _) = compare_counts(&[8, 2], &[8, 2, 0, 0], 0.05).unwrap();
        assert_eq!(tv, 0.0);
        assert!(compare_counts(&[], &[1], 0.05).is_err());
        assert!(compare_counts(&[0, 0], &[1], 0.05).is_err());
    }

    #[test]
    fn phase_law_gate() {
        let n = 64;
        validate_phase_law(&CircularLaw::UniformCircle, n).unwrap();
        // sigma^2 = ln n sits exactly on the n^{-1/2} boundary
        validate_phase_law(
            &CircularLaw::WrappedNormal {
                mu: 0.0,
                sigma2: (n as f64).ln(),
            },
            n,
        )
        .unwrap();
        let slow = CircularLaw::WrappedNormal {
            mu: 0.0,
            sigma2: 1.0,
        };
        match validate_phase_law(&slow, n) {
            Err(Error::SlowPhaseDecay { bound, threshold, .. }) => {
                assert!(bound > threshold);
            }
            other => panic!("expected slow-decay rejection, got {other:?}"),
        }
        assert!(validate_phase_law(
            &CircularLaw::WrappedCauchy { x0: 0.0, gamma: 0.1 },
            n
        )
        .is_err());
    }
}
