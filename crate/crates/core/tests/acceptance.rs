//! Acceptance suite: one test per numbered criterion. Every test prints
//! a single `criterion N: PASS|FAIL` line before asserting, so a full
//! run with --nocapture gives the complete scoreboard.

use std::time::Instant;

use num_complex::Complex64;
use spectra_core::charfn::{self, CharFn, Disk};
use spectra_core::dynamics::{self, TrajectoryBundle};
use spectra_core::gaf;
use spectra_core::models::{
    self, BaseModelKind, PerturbationParams, Strength,
};
use spectra_core::sampling::{self, CircularLaw, Seed};
use spectra_core::stats::{self, MomentAccumulator};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn haar() -> BaseModelKind {
    BaseModelKind::HaarUnitary
}

fn vdv() -> BaseModelKind {
    BaseModelKind::IidPhases(CircularLaw::UniformCircle)
}

fn report(criterion: u32, pass: bool, elapsed: f64) -> bool {
    println!(
        "criterion {criterion}: {} ({elapsed:.1}s)",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

/// Mean squared trace of Haar unitary powers equals min(l, n).
#[test]
fn criterion_01_trace_moments() {
    let start = Instant::now();
    let n = 8;
    let l_max = 12usize;
    let samples = 100_000;
    let rows = stats::sample_map(samples, Seed::new(101), |s| {
        let u = sampling::sample_haar_unitary(n, s)?;
        let spectrum = models::spectrum(&u)?;
        Ok((1..=l_max)
            .map(|l| {
                spectrum
                    .points
                    .iter()
                    .map(|z| z.powi(l as i32))
                    .sum::<Complex64>()
                    .norm_sqr()
            })
            .collect::<Vec<f64>>())
    })
    .unwrap();

    let mut detail = Vec::new();
    for l in 1..=l_max {
        let mut acc = MomentAccumulator::default();
        for row in &rows {
            acc.push(c(row[l - 1], 0.0));
        }
        let est = acc.estimate();
        let reference = (l as f64).min(n as f64);
        if !est.within(c(reference, 0.0), 4.0) {
            detail.push(format!(
                "l={l}: {} vs {reference} (stderr {})",
                est.value.re, est.stderr
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(1, detail.is_empty() && elapsed <= 120.0, elapsed);
    assert!(pass, "failed moments: {detail:?}, elapsed {elapsed:.1}s");
}

/// Fourth joint moment of eigenbasis overlap weights at n=4 equals
/// (1 + delta_{k1 k2}) / 20.
#[test]
fn criterion_02_overlap_weight_moments() {
    let start = Instant::now();
    let n = 4;
    let samples = 100_000;
    let pairs = stats::sample_map(samples, Seed::new(102), |s| {
        let base = models::sample_base_model(BaseModelKind::HaarUnitary, n, s.salted(1))?;
        let v = sampling::sample_unit_vector(n, s.salted(2))?;
        let data = models::spectral_data(&base.matrix, &v)?;
        Ok((
            data.weights[0] * data.weights[1],
            data.weights[0] * data.weights[0],
        ))
    })
    .unwrap();

    let mut distinct = MomentAccumulator::default();
    let mut repeated = MomentAccumulator::default();
    for (d, r) in &pairs {
        distinct.push(c(*d, 0.0));
        repeated.push(c(*r, 0.0));
    }
    let distinct = distinct.estimate();
    let repeated = repeated.estimate();
    let ok_distinct = distinct.within(c(1.0 / 20.0, 0.0), 4.0);
    let ok_repeated = repeated.within(c(2.0 / 20.0, 0.0), 4.0);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(2, ok_distinct && ok_repeated && elapsed <= 60.0, elapsed);
    assert!(
        pass,
        "E[w1 w2] = {} (ref 0.05, stderr {}), E[w1^2] = {} (ref 0.1, stderr {}), elapsed {elapsed:.1}s",
        distinct.value.re, distinct.stderr, repeated.value.re, repeated.stderr
    );
}

/// Scaled series coefficients are asymptotically standard complex
/// gaussians: E|S_k|^2 = 1, E[S_k^2] = 0, E|S_1|^4 = 2.
#[test]
fn criterion_03_coefficient_clt() {
    let start = Instant::now();
    let samples = 10_000;
    let mut detail = Vec::new();
    for (m, kind) in [(0u64, haar()), (1, vdv())] {
        for (i, n) in [100usize, 400].into_iter().enumerate() {
            let mat = stats::coefficient_samples(
                &kind,
                n,
                4,
                samples,
                Seed::new(103).salted(m * 2 + i as u64),
            )
            .unwrap();
            for k in 1..=4 {
                let col = mat.column(k - 1);
                let mut abs_sqr = MomentAccumulator::default();
                let mut plain_sqr = MomentAccumulator::default();
                let mut abs_fourth = MomentAccumulator::default();
                for s in col.iter() {
                    abs_sqr.push(c(s.norm_sqr(), 0.0));
                    plain_sqr.push(s * s);
                    abs_fourth.push(c(s.norm_sqr() * s.norm_sqr(), 0.0));
                }
                let tag = format!("{kind:?} n={n} k={k}");
                let est = abs_sqr.estimate();
                if !est.within(c(1.0, 0.0), 4.0) {
                    detail.push(format!("{tag}: E|S|^2 = {}", est.value.re));
                }
                let est = plain_sqr.estimate();
                if !est.within(c(0.0, 0.0), 4.0) {
                    detail.push(format!("{tag}: E[S^2] = {}", est.value));
                }
                if k == 1 {
                    let est = abs_fourth.estimate();
                    if !est.within(c(2.0, 0.0), 4.0) {
                        detail.push(format!("{tag}: E|S|^4 = {}", est.value.re));
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(3, detail.is_empty() && elapsed <= 600.0, elapsed);
    assert!(pass, "failed limits: {detail:?}, elapsed {elapsed:.1}s");
}

/// Zeros of the characteristic function inside D(0, 0.9) coincide with
/// the eigensolver spectrum there: equal counts, Hausdorff <= 1e-8.
#[test]
fn criterion_04_oracle_equivalence() {
    let start = Instant::now();
    let a = c(1.0, 0.0);
    let radius = 0.9;
    let samples = 100;
    let mut detail = Vec::new();
    for (m, kind) in [(0u64, haar()), (1, vdv())] {
        for (i, n) in [16usize, 64].into_iter().enumerate() {
            let outcomes = stats::sample_map(
                samples,
                Seed::new(104).salted(m * 2 + i as u64),
                move |s| {
                    let base = models::sample_base_model(kind, n, s.salted(1))?;
                    let v = sampling::sample_unit_vector(n, s.salted(2))?;
                    let data = models::spectral_data(&base.matrix, &v)?;
                    let f = match kind {
                        BaseModelKind::HaarUnitary => CharFn::haar_form(a, data)?,
                        BaseModelKind::IidPhases(_) => CharFn::iid_form(a, data)?,
                    };
                    let zeros = charfn::find_zeros(&f, &Disk::new(c(0.0, 0.0), radius)?)?;
                    let params = PerturbationParams {
                        n,
                        strength: Strength::Amplitude(a),
                        v,
                    };
                    let spectrum = models::spectrum(&models::perturbed_matrix(&base, &params)?)?;
                    let inside: Vec<Complex64> = spectrum
                        .points
                        .iter()
                        .copied()
                        .filter(|z| z.norm() < radius)
                        .collect();
                    Ok((
                        zeros.len() == inside.len(),
                        models::hausdorff_distance(&zeros.points, &inside),
                    ))
                },
            )
            .unwrap();
            let mismatches = outcomes.iter().filter(|(ok, _)| !ok).count();
            let worst = outcomes.iter().map(|(_, d)| *d).fold(0.0f64, f64::max);
            if mismatches > 0 || worst > 1e-8 {
                detail.push(format!(
                    "{kind:?} n={n}: {mismatches} count mismatches, worst distance {worst:.3e}"
                ));
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(4, detail.is_empty() && elapsed <= 300.0, elapsed);
    assert!(pass, "oracle disagreement: {detail:?}, elapsed {elapsed:.1}s");
}

/// Every eigenvalue of the perturbed matrix lies strictly inside the
/// unit disk, at all the sizes the other criteria exercise.
#[test]
fn criterion_05_spectrum_confinement() {
    let start = Instant::now();
    let a = c(1.0, 0.0);
    let mut violations = 0usize;
    let mut largest = 0.0f64;
    for (m, kind) in [(0u64, haar()), (1, vdv())] {
        for (i, (n, samples)) in [(4usize, 200u64), (8, 200), (16, 100), (64, 100), (100, 50), (400, 20)]
            .into_iter()
            .enumerate()
        {
            let maxima = stats::sample_map(
                samples,
                Seed::new(105).salted(m * 10 + i as u64),
                move |s| {
                    let base = models::sample_base_model(kind, n, s.salted(1))?;
                    let v = sampling::sample_unit_vector(n, s.salted(2))?;
                    let params = PerturbationParams {
                        n,
                        strength: Strength::Amplitude(a),
                        v,
                    };
                    let spectrum = models::spectrum(&models::perturbed_matrix(&base, &params)?)?;
                    Ok(spectrum
                        .points
                        .iter()
                        .map(|z| z.norm())
                        .fold(0.0f64, f64::max))
                },
            )
            .unwrap();
            for max in maxima {
                largest = largest.max(max);
                if max >= 1.0 {
                    violations += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(5, violations == 0, elapsed);
    assert!(
        pass,
        "{violations} samples escaped the unit disk, largest modulus {largest}"
    );
}

/// Mean squared resolvent transform stays below 2r^2/(1 - r^2) at every
/// grid point (up to MC noise).
#[test]
fn criterion_06_tightness_envelope() {
    let start = Instant::now();
    let grid: Vec<Complex64> = [0.1, 0.3, 0.5, 0.7, 0.9].map(|r| c(r, 0.0)).to_vec();
    let profile = stats::tightness_profile(&haar(), 64, &grid, 10_000, Seed::new(106)).unwrap();
    let mut detail = Vec::new();
    for (z, est) in profile {
        let r2 = z.norm_sqr();
        let envelope = 2.0 * r2 / (1.0 - r2);
        if est.value.re > envelope + 4.0 * est.stderr {
            detail.push(format!(
                "z={}: {} > {envelope} + 4*{}",
                z.re, est.value.re, est.stderr
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(6, detail.is_empty() && elapsed <= 180.0, elapsed);
    assert!(pass, "envelope exceeded: {detail:?}, elapsed {elapsed:.1}s");
}

/// Zero-count histograms in D(0, 0.5): finite-n model vs the limiting
/// random series, total variation within 0.05.
#[test]
fn criterion_07_count_distribution_convergence() {
    let start = Instant::now();
    let n = 400;
    let q = 0.5;
    let samples = 10_000;
    let mut detail = Vec::new();
    for (m, kind, a_prime) in [
        (0u64, haar(), c(1.0, 0.0)),
        (1, vdv(), c(std::f64::consts::FRAC_1_SQRT_2, 0.0)),
    ] {
        let model_hist = dynamics::disk_count_histogram(
            kind,
            n,
            c(1.0, 0.0),
            q,
            samples,
            Seed::new(107).salted(m),
        )
        .unwrap();
        let counts = stats::sample_map(samples, Seed::new(117).salted(m), move |s| {
            let phi = gaf::sample_gaf(a_prime, 256, s)?;
            Ok(gaf::gaf_zero_count(&phi, q, s)?.0)
        })
        .unwrap();
        let mut gaf_hist = vec![0u64; counts.iter().map(|c| c + 1).max().unwrap_or(1)];
        for count in counts {
            gaf_hist[count] += 1;
        }
        let (tv, ok) = stats::compare_counts(&model_hist, &gaf_hist, 0.05).unwrap();
        if !ok {
            detail.push(format!("{kind:?}: tv = {tv:.4}"));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(7, detail.is_empty() && elapsed <= 1800.0, elapsed);
    assert!(pass, "count histograms diverge: {detail:?}, elapsed {elapsed:.1}s");
}

/// Outlier separation and near-circle collapse at the two timescale
/// exponents, each holding for at least 90% of samples.
#[test]
fn criterion_08_timescale_fractions() {
    let start = Instant::now();
    let mut detail = Vec::new();
    for (m, kind) in [(0u64, haar()), (1, vdv())] {
        let sweep =
            dynamics::separation_sweep(kind, 256, 0.3, 0.1, 1000, Seed::new(108).salted(m))
                .unwrap();
        if sweep.separated_fraction < 0.9 {
            detail.push(format!(
                "{kind:?}: separated fraction {} at t={:.3e} (radii {:.3}/{:.3})",
                sweep.separated_fraction, sweep.t_separated, sweep.rho_in, sweep.rho_out
            ));
        }
        if sweep.near_circle_fraction < 0.9 {
            detail.push(format!(
                "{kind:?}: near-circle fraction {} at t={:.3e} (band {:.3})",
                sweep.near_circle_fraction, sweep.t_near_circle, sweep.band_radius
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(8, detail.is_empty() && elapsed <= 1200.0, elapsed);
    assert!(pass, "fractions under gate: {detail:?}, elapsed {elapsed:.1}s");
}

/// At the critical time, both no-zero and multiple-zero events keep
/// probabilities above half the closed-form floors, and the floors
/// agree with direct simulation of their defining events.
#[test]
fn criterion_09_critical_time_events() {
    let start = Instant::now();
    let n = 400;
    let a = c(1.0, 0.0);
    let q = 0.2;
    let samples = 10_000;
    let mut detail = Vec::new();
    for (m, kind, a_prime) in [
        (0u64, haar(), c(1.0, 0.0)),
        (1, vdv(), c(std::f64::consts::FRAC_1_SQRT_2, 0.0)),
    ] {
        let report = dynamics::critical_time_test(kind, n, a, q, samples, Seed::new(109).salted(m))
            .unwrap();
        if !report.p0_pass {
            detail.push(format!(
                "{kind:?}: p0_hat {} under {}",
                report.p0_hat,
                0.5 * report.p0_bound
            ));
        }
        if !report.p2_pass {
            detail.push(format!(
                "{kind:?}: p2_hat {} under {}",
                report.p2_hat,
                0.5 * report.p2_bound
            ));
        }

        let s = 2.0 * a_prime.norm();
        let (p_empty, p_two) = gaf::lemma_event_probabilities(a_prime, q, s).unwrap();
        let counts = gaf::lemma_events_mc(a_prime, q, s, 200_000, Seed::new(119).salted(m)).unwrap();
        let (empty_rate, empty_se) = counts.empty_rate();
        let (two_rate, two_se) = counts.two_rate();
        if (empty_rate - p_empty).abs() > 3.0 * empty_se {
            detail.push(format!(
                "{kind:?}: empty-event rate {empty_rate} vs closed form {p_empty} (se {empty_se:.2e})"
            ));
        }
        if (two_rate - p_two).abs() > 3.0 * two_se {
            detail.push(format!(
                "{kind:?}: two-event rate {two_rate} vs closed form {p_two} (se {two_se:.2e})"
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(9, detail.is_empty() && elapsed <= 1800.0, elapsed);
    assert!(pass, "critical-time gates missed: {detail:?}, elapsed {elapsed:.1}s");
}

/// Sup norm on a compact disk is controlled by the area integral over
/// its delta-enlargement: ||f||_K^p <= (pi delta^2)^{-1} integral.
#[test]
fn criterion_10_supnorm_inequality() {
    let start = Instant::now();
    let holds = stats::sample_map(100, Seed::new(110), |s| {
        let mut rng = s.rng();
        let coeffs: Vec<Complex64> = (0..=10).map(|_| sampling::complex_gaussian(&mut rng)).collect();
        let f = CharFn::from_series(coeffs)?;
        charfn::supnorm_integral_check(&f, &Disk::new(c(0.0, 0.0), 0.5)?, 0.2, 2)
    })
    .unwrap();
    let misses = holds.iter().filter(|ok| !**ok).count();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(10, misses == 0 && elapsed <= 60.0, elapsed);
    assert!(pass, "{misses}/100 polynomials violated the bound");
}

/// Identical seeds produce byte-identical CSV artifacts, whatever the
/// worker count.
#[test]
fn criterion_11_worker_count_determinism() {
    let start = Instant::now();
    let artifacts = || {
        let report =
            dynamics::critical_time_test(vdv(), 64, c(1.0, 0.0), 0.2, 200, Seed::new(111))
                .unwrap();
        let mut hist_csv = String::from("count,hits\n");
        for (count, hits) in report.histogram.iter().enumerate() {
            hist_csv.push_str(&format!("{count},{hits}\n"));
        }

        let grid = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let bundles = stats::sample_map(20, Seed::new(112), move |s| {
            let base = models::sample_base_model(vdv(), 32, s.salted(1))?;
            let v = sampling::sample_unit_vector(32, s.salted(2))?;
            dynamics::trajectories(&base, &v, &grid)
        })
        .unwrap();
        let mut traj_csv = Vec::new();
        use std::io::Write as _;
        writeln!(traj_csv, "{}", TrajectoryBundle::csv_header()).unwrap();
        for (i, bundle) in bundles.iter().enumerate() {
            bundle.write_csv_rows(&mut traj_csv, i as u64).unwrap();
        }
        (hist_csv, String::from_utf8(traj_csv).unwrap())
    };

    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(artifacts);
    let quad = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(artifacts);
    let repeat = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(artifacts);

    let elapsed = start.elapsed().as_secs_f64();
    let pass = report(11, single == quad && quad == repeat, elapsed);
    assert!(pass, "artifacts differ across worker counts or repeats");
}
