//! Time-parametrized perturbation experiments: eigenvalue trajectories
//! over a grid of contraction times, the two-phase separation sweep,
//! and the critical-time zero-count test with its analytic lower
//! bounds.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use std::io::{self, Write};

use crate::charfn::{self, CharFn, Disk, RADIUS_JITTER};
use crate::error::{Error, Result};
use crate::gaf;
use crate::models::{
    self, BaseModel, BaseModelKind, PerturbationParams, PointSet, Strength,
};
use crate::sampling::{self, HouseholderUnitary, Seed};
use crate::stats;

const SALT_BASE: u64 = 0x62617365;
const SALT_DIRECTION: u64 = 0x646972;
const SALT_SEPARATED: u64 = 0x736570;
const SALT_NEAR: u64 = 0x6e656172;

/// Two optimal matchings closer than this in total cost count as a tie.
const AMBIGUITY_TOL: f64 = 1e-9;
const MAX_REFINEMENTS: usize = 3;

/// Certified series counting pushes the truncation tail below this.
const SERIES_TAIL_TARGET: f64 = 1e-9;
const MAX_SERIES_ORDER: usize = 4096;

/// Eigenvalue paths over a time grid. `paths[j][i]` is path j at
/// `t_grid[i]`; every time slice holds the full spectrum at that time
/// and consecutive slices are matched by minimal total squared
/// distance.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBundle {
    pub t_grid: Vec<f64>,
    pub paths: Vec<Vec<Complex64>>,
}

impl TrajectoryBundle {
    pub fn dim(&self) -> usize {
        self.paths.len()
    }

    /// The spectrum at grid index i, across all paths.
    pub fn slice(&self, i: usize) -> Vec<Complex64> {
        self.paths.iter().map(|p| p[i]).collect()
    }

    pub fn csv_header() -> &'static str {
        "sample_id,t,path_id,re,im"
    }

    /// Rows only, time-major; lets a caller stack several samples under
    /// one header.
    pub fn write_csv_rows<W: Write>(&self, mut out: W, sample_id: u64) -> io::Result<()> {
        for (i, t) in self.t_grid.iter().enumerate() {
            for (j, path) in self.paths.iter().enumerate() {
                let z = path[i];
                writeln!(out, "{sample_id},{t},{j},{},{}", z.re, z.im)?;
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W, sample_id: u64) -> io::Result<()> {
        writeln!(out, "{}", Self::csv_header())?;
        self.write_csv_rows(out, sample_id)
    }
}

/// Eigenvalue trajectories of `base * A(t)` over the grid.
///
/// Consecutive spectra are matched by a minimal-total-cost assignment
/// on squared distances. A tie between two assignments (within
/// [`AMBIGUITY_TOL`] of each other) triggers eigensolves at bisection
/// midpoints, composing the sub-matchings; three nested refinements
/// without resolution is an error.
pub fn trajectories(
    base: &BaseModel,
    v: &Array1<Complex64>,
    t_grid: &[f64],
) -> Result<TrajectoryBundle> {
    let n = base.matrix.nrows();
    if t_grid.is_empty() {
        return Err(Error::invalid("t_grid", "must be nonempty"));
    }
    if t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("t_grid", "must be finite"));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("t_grid", "must be strictly increasing"));
    }
    let slice = |t: f64| -> Result<Vec<Complex64>> {
        let params = PerturbationParams {
            n,
            strength: Strength::Time(t),
            v: v.clone(),
        };
        Ok(models::spectrum(&models::perturbed_matrix(base, &params)?)?.points)
    };
    let mut columns: Vec<Vec<Complex64>> = vec![slice(t_grid[0])?];
    for w in t_grid.windows(2) {
        let prev = columns.last().expect("seeded with the first slice");
        let next = slice(w[1])?;
        let perm = match_slices(&slice, w[0], prev, w[1], &next, 0)?;
        columns.push(perm.iter().map(|&k| next[k]).collect());
    }
    let paths = (0..n)
        .map(|j| columns.iter().map(|col| col[j]).collect())
        .collect();
    Ok(TrajectoryBundle {
        t_grid: t_grid.to_vec(),
        paths,
    })
}

/// Match s1 onto s0, recursing through midpoint slices while the
/// optimal assignment is tied. Returns perm with s1[perm[j]]
/// continuing s0[j].
fn match_slices(
    slice: &dyn Fn(f64) -> Result<Vec<Complex64>>,
    t0: f64,
    s0: &[Complex64],
    t1: f64,
    s1: &[Complex64],
    depth: usize,
) -> Result<Vec<usize>> {
    let cost = cost_matrix(s0, s1);
    let perm = assignment(&cost);
    if assignment_slack(&cost, &perm) > AMBIGUITY_TOL {
        return Ok(perm);
    }
    if depth >= MAX_REFINEMENTS {
        return Err(Error::AmbiguousMatching {
            refinements: depth,
        });
    }
    let tm = 0.5 * (t0 + t1);
    let sm = slice(tm)?;
    let first = match_slices(slice, t0, s0, tm, &sm, depth + 1)?;
    let second = match_slices(slice, tm, &sm, t1, s1, depth + 1)?;
    Ok(first.iter().map(|&k| second[k]).collect())
}

fn cost_matrix(s0: &[Complex64], s1: &[Complex64]) -> Array2<f64> {
    let n = s0.len();
    Array2::from_shape_fn((n, n), |(i, j)| (s0[i] - s1[j]).norm_sqr())
}

/// Minimal-total-cost assignment on a square matrix by shortest
/// augmenting paths with dual potentials, O(n^3). Returns the column
/// matched to each row.
fn assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    // 1-indexed working arrays; p[j] = row matched to column j, row 0
    // is the sentinel for the row currently being inserted.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}

/// Smallest cost increase over all transpositions of the assignment.
/// Zero means another assignment ties; infinity for n = 1. Any
/// transposition of an optimal assignment costs at least as much, so
/// this is nonnegative up to rounding.
fn assignment_slack(cost: &Array2<f64>, perm: &[usize]) -> f64 {
    let n = perm.len();
    let mut slack = f64::INFINITY;
    for j in 0..n {
        for k in (j + 1)..n {
            let kept = cost[[j, perm[j]]] + cost[[k, perm[k]]];
            let swapped = cost[[j, perm[k]]] + cost[[k, perm[j]]];
            slack = slack.min(swapped - kept);
        }
    }
    slack
}

/// Eigenvalue counts of one spectrum against a pair of probe radii:
/// strictly inside the inner disk, strictly outside the outer one, and
/// the closed annulus between.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparationProbe {
    pub rho_in: f64,
    pub rho_out: f64,
    pub counts: (usize, usize, usize),
}

impl SeparationProbe {
    pub fn total(&self) -> usize {
        self.counts.0 + self.counts.1 + self.counts.2
    }

    /// Exactly one eigenvalue near the origin, the rest past the outer
    /// radius.
    pub fn separated(&self) -> bool {
        self.counts.0 == 1 && self.counts.1 == 0
    }

    /// No eigenvalue at or below the outer radius.
    pub fn all_outside(&self) -> bool {
        self.counts.0 == 0 && self.counts.1 == 0
    }
}

pub fn classify_spectrum(points: &PointSet, rho_in: f64, rho_out: f64) -> Result<SeparationProbe> {
    if !(rho_in.is_finite() && rho_out.is_finite()) || rho_in <= 0.0 || rho_in > rho_out {
        return Err(Error::invalid("rho", "need 0 < rho_in <= rho_out"));
    }
    let mut counts = (0usize, 0usize, 0usize);
    for z in &points.points {
        let r = z.norm();
        if r < rho_in {
            counts.0 += 1;
        } else if r > rho_out {
            counts.2 += 1;
        } else {
            counts.1 += 1;
        }
    }
    Ok(SeparationProbe {
        rho_in,
        rho_out,
        counts,
    })
}

/// Probe radii for the separated phase at time t. The small zero of
/// the characteristic function sits near `t sqrt(n)` divided by an
/// order-one random factor, so the inner radius is the geometric mean
/// of `1.2 t sqrt(n)` and the empirical bulk inner edge 0.55, capped
/// below the outer radius 1/2.
pub fn probe_radii(n: usize, t: f64) -> (f64, f64) {
    let rho_out = 0.5;
    let outlier_scale = 1.2 * t.abs() * (n as f64).sqrt();
    let rho_in = (outlier_scale * 0.55).sqrt().min(0.9 * rho_out);
    (rho_in, rho_out)
}

/// Outcome of [`separation_sweep`]: per-phase fractions plus the raw
/// per-sample probes.
#[derive(Clone, Debug)]
pub struct SweepReport {
    pub n: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub samples: u64,
    /// t = n^(-1/2 - alpha), the phase with an expected lone outlier.
    pub t_separated: f64,
    pub rho_in: f64,
    pub rho_out: f64,
    pub separated_fraction: f64,
    /// t = n^(-1/2 + alpha), the phase hugging the unit circle.
    pub t_near_circle: f64,
    /// Inner edge 1 - n^(epsilon - alpha) of the allowed band.
    pub band_radius: f64,
    pub near_circle_fraction: f64,
    pub separated_probes: Vec<SeparationProbe>,
    pub near_circle_probes: Vec<SeparationProbe>,
}

impl SweepReport {
    pub fn csv_header() -> &'static str {
        "n,t,alpha,inner_count,annulus_count,outer_count,pass"
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::csv_header())?;
        for probe in &self.separated_probes {
            write_probe_row(&mut out, self.n, self.t_separated, self.alpha, probe, probe.separated())?;
        }
        for probe in &self.near_circle_probes {
            write_probe_row(&mut out, self.n, self.t_near_circle, self.alpha, probe, probe.all_outside())?;
        }
        Ok(())
    }
}

fn write_probe_row<W: Write>(
    out: &mut W,
    n: usize,
    t: f64,
    alpha: f64,
    probe: &SeparationProbe,
    pass: bool,
) -> io::Result<()> {
    writeln!(
        out,
        "{n},{t},{alpha},{},{},{},{pass}",
        probe.counts.0, probe.counts.1, probe.counts.2
    )
}

/// Two-phase sweep around the critical time scale n^(-1/2).
///
/// Below it, at t = n^(-1/2 - alpha), a run counts as separated when
/// exactly one eigenvalue lies inside the inner probe disk and none in
/// the annulus up to the outer radius. Above it, at t = n^(-1/2 +
/// alpha), a run passes when every eigenvalue is strictly outside the
/// disk of radius 1 - n^(epsilon - alpha).
pub fn separation_sweep(
    kind: BaseModelKind,
    n: usize,
    alpha: f64,
    epsilon: f64,
    samples: u64,
    seed: Seed,
) -> Result<SweepReport> {
    if n < 16 {
        return Err(Error::invalid("n", "sweep needs n >= 16"));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::invalid("alpha", "must be positive"));
    }
    if !epsilon.is_finite() || epsilon <= 0.0 || epsilon >= alpha {
        return Err(Error::invalid("epsilon", "must lie in (0, alpha)"));
    }
    let nf = n as f64;
    let t_separated = nf.powf(-0.5 - alpha);
    let t_near_circle = nf.powf(-0.5 + alpha);
    if t_near_circle > 1.0 {
        return Err(Error::invalid("alpha", "n^(-1/2 + alpha) exceeds 1"));
    }
    let (rho_in, rho_out) = probe_radii(n, t_separated);
    let band_radius = 1.0 - nf.powf(epsilon - alpha);

    let separated_probes = stats::sample_map(samples, seed.salted(SALT_SEPARATED), |s| {
        let points = perturbed_spectrum(kind, n, t_separated, s)?;
        classify_spectrum(&points, rho_in, rho_out)
    })?;
    let near_circle_probes = stats::sample_map(samples, seed.salted(SALT_NEAR), |s| {
        let points = perturbed_spectrum(kind, n, t_near_circle, s)?;
        classify_spectrum(&points, band_radius, band_radius)
    })?;

    let frac = |probes: &[SeparationProbe], hit: fn(&SeparationProbe) -> bool| {
        probes.iter().filter(|p| hit(p)).count() as f64 / samples as f64
    };
    Ok(SweepReport {
        n,
        alpha,
        epsilon,
        samples,
        t_separated,
        rho_in,
        rho_out,
        separated_fraction: frac(&separated_probes, SeparationProbe::separated),
        t_near_circle,
        band_radius,
        near_circle_fraction: frac(&near_circle_probes, SeparationProbe::all_outside),
        separated_probes,
        near_circle_probes,
    })
}

/// One fresh draw of the perturbed model at contraction time t, with
/// an independent uniform direction.
fn perturbed_spectrum(kind: BaseModelKind, n: usize, t: f64, seed: Seed) -> Result<PointSet> {
    let base = models::sample_base_model(kind, n, seed.salted(SALT_BASE))?;
    let v = sampling::sample_unit_vector(n, seed.salted(SALT_DIRECTION))?;
    let params = PerturbationParams {
        n,
        strength: Strength::Time(t),
        v,
    };
    models::spectrum(&models::perturbed_matrix(&base, &params)?)
}

/// Critical-time outcome: empirical zero-count probabilities for the
/// disk D(0, q) against the analytic lower bounds of the limiting
/// model, with pass gates at half the bound.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CriticalTimeReport {
    pub n: usize,
    pub q: f64,
    pub samples: u64,
    /// histogram[k] = number of draws with exactly k eigenvalues in
    /// D(0, q).
    pub histogram: Vec<u64>,
    pub p0_hat: f64,
    pub p2_hat: f64,
    pub p0_bound: f64,
    pub p2_bound: f64,
    pub p0_pass: bool,
    pub p2_pass: bool,
}

/// Empirical zero-count test at the critical time t = a n^(-1/2).
///
/// Counts eigenvalues of the perturbed model inside D(0, q) over
/// `samples` draws and compares P(count = 0) and P(count >= 2) against
/// half the closed-form limiting bounds. The amplitude seen by the
/// limit is a itself for the Haar model and a / sqrt(2) for the
/// iid-phase model; the second-zero bound is evaluated at its pivot
/// s = 2 |a'|.
pub fn critical_time_test(
    kind: BaseModelKind,
    n: usize,
    a: Complex64,
    q: f64,
    samples: u64,
    seed: Seed,
) -> Result<CriticalTimeReport> {
    let a_prime = match kind {
        BaseModelKind::HaarUnitary => a,
        BaseModelKind::IidPhases(_) => a * std::f64::consts::FRAC_1_SQRT_2,
    };
    let s = 2.0 * a_prime.norm();
    let (p0_bound, p2_bound) = gaf::lemma_event_probabilities(a_prime, q, s)?;
    let histogram = disk_count_histogram(kind, n, a, q, samples, seed)?;
    let total = samples as f64;
    let p0_hat = histogram.first().copied().unwrap_or(0) as f64 / total;
    let p2_hat = histogram.iter().skip(2).sum::<u64>() as f64 / total;
    Ok(CriticalTimeReport {
        n,
        q,
        samples,
        histogram,
        p0_hat,
        p2_hat,
        p0_bound,
        p2_bound,
        p0_pass: p0_hat >= 0.5 * p0_bound,
        p2_pass: p2_hat >= 0.5 * p2_bound,
    })
}

/// Distribution of the eigenvalue count of the perturbed model in
/// D(0, q), computed from the characteristic function without a dense
/// eigensolve. Entry k is the number of draws with exactly k
/// eigenvalues inside.
///
/// The Haar route truncates the moment series of a fresh reflector
/// product and certifies the count against the dropped tail; the
/// iid-phase route counts on the exact rational form.
pub fn disk_count_histogram(
    kind: BaseModelKind,
    n: usize,
    a: Complex64,
    q: f64,
    samples: u64,
    seed: Seed,
) -> Result<Vec<u64>> {
    sampling::check_dim(n)?;
    Strength::Amplitude(a).validate()?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("q", "must lie in (0, 1)"));
    }
    let counts = stats::sample_map(samples, seed, |s| sample_disk_count(kind, n, a, q, s))?;
    let mut histogram = vec![0u64; counts.iter().max().map_or(0, |m| m + 1)];
    for c in counts {
        histogram[c] += 1;
    }
    Ok(histogram)
}

fn sample_disk_count(
    kind: BaseModelKind,
    n: usize,
    a: Complex64,
    q: f64,
    seed: Seed,
) -> Result<usize> {
    // an eigenvalue can graze the counting contour; growing the disk by
    // jitter-scale steps resolves the sample and moves the count law by
    // far less than the tolerances the histograms are compared at
    let mut radius = q;
    for _ in 0..4 {
        match disk_count_at(kind, n, a, radius, seed) {
            Err(Error::JitterDisagreement { .. })
            | Err(Error::ContourIndeterminate { .. })
            | Err(Error::CertificateInvalid { .. }) => {
                radius *= 1.0 + 37.0 * RADIUS_JITTER;
            }
            other => return other,
        }
    }
    disk_count_at(kind, n, a, radius, seed)
}

fn disk_count_at(
    kind: BaseModelKind,
    n: usize,
    a: Complex64,
    q: f64,
    seed: Seed,
) -> Result<usize> {
    let disk = Disk::new(Complex64::new(0.0, 0.0), q)?;
    match kind {
        BaseModelKind::HaarUnitary => {
            let scale = Complex64::new((n as f64).sqrt(), 0.0) - a;
            // the certified contour pokes out to q (1 + jitter)
            let q_reach = q * (1.0 + 2.0 * RADIUS_JITTER);
            let kept = series_order(scale.norm(), q_reach)?;
            let reflector = HouseholderUnitary::sample(n, seed)?;
            let moments = adjoint_moment_series(&reflector, kept);
            let f = CharFn::from_moment_sequence(a, scale, &moments)?;
            let tail = charfn::geometric_tail(scale.norm(), q_reach, kept);
            charfn::count_zeros_certified(&f, &disk, tail)
        }
        BaseModelKind::IidPhases(law) => {
            let data = models::sample_spectral_data_iid(law, n, seed)?;
            let f = CharFn::iid_form(a, data)?;
            charfn::count_zeros(&f, &disk)
        }
    }
}

/// Smallest truncation order whose geometric tail drops below the
/// certification target.
fn series_order(coeff_bound: f64, q: f64) -> Result<usize> {
    let mut kept = 8;
    while charfn::geometric_tail(coeff_bound, q, kept) > SERIES_TAIL_TARGET {
        kept *= 2;
        if kept > MAX_SERIES_ORDER {
            return Err(Error::invalid(
                "q",
                "tail bound does not reach the certification target at any supported order",
            ));
        }
    }
    Ok(kept)
}

/// m_k = e1* (U*)^k e1 for k = 1..=kept. By unitary invariance the law
/// matches overlaps against a uniform direction.
fn adjoint_moment_series(reflector: &HouseholderUnitary, kept: usize) -> Vec<Complex64> {
    let n = reflector.dim();
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    w[0] = Complex64::new(1.0, 0.0);
    let mut moments = Vec::with_capacity(kept);
    for _ in 0..kept {
        reflector.apply_adjoint(&mut w);
        moments.push(w[0]);
    }
    moments
}
