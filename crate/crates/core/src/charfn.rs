//! Characteristic functions of the perturbed models and certified
//! counting and location of their zeros in disks.
//!
//! Inside the open unit disk the zeros of the rational form coincide
//! with the eigenvalues of the perturbed matrix, which is what makes
//! contour counting a practical stand-in for dense eigensolves. The
//! series form covers truncated power series (coefficient samples,
//! Gaussian limits); counts on truncations transfer to the full
//! function through an explicit Rouche margin.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::{PointSet, Provenance, SpectralData};

/// Evaluation refuses points closer than this to a pole.
pub const POLE_MARGIN: f64 = 1e-12;
/// Counting contours for rational forms must stay this far inside the
/// unit circle, where all the poles live.
pub const CONTOUR_MARGIN: f64 = 1e-6;
/// Relative radius jitter for the two-contour counting protocol.
pub const RADIUS_JITTER: f64 = 1e-4;
/// Zeros closer than this are reported as one point.
pub const DEDUP_TOL: f64 = 1e-8;

const MIN_NODES: usize = 64;
const MAX_NODES: usize = 8192;
// node ceiling for cells large enough that splitting them is cheaper
// than certifying a hard count
const COARSE_CELL_NODES: usize = 512;
const WINDING_RESIDUAL: f64 = 0.25;
const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_RESIDUAL: f64 = 1e-10;

/// Closed disk in the complex plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disk {
    pub center: Complex64,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Complex64, radius: f64) -> Result<Self> {
        if !center.re.is_finite() || !center.im.is_finite() {
            return Err(Error::invalid("center", "must be finite"));
        }
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::invalid("radius", "must be positive and finite"));
        }
        Ok(Disk { center, radius })
    }

    pub fn contains(&self, z: Complex64) -> bool {
        (z - self.center).norm() <= self.radius
    }
}

/// Characteristic function in one of its two computational forms.
#[derive(Clone, Debug)]
pub enum CharFn {
    Rational(RationalCharFn),
    Series(SeriesCharFn),
}

/// `f(z) = offset - factor * R(z)` with `R` the scaled resolvent
/// overlap of the spectral data. Analytic off the eigenphases.
#[derive(Clone, Debug)]
pub struct RationalCharFn {
    pub offset: Complex64,
    pub factor: Complex64,
    pub data: SpectralData,
}

/// Plain power series `sum_k c_k z^k`, entire as far as this crate is
/// concerned (truncations of the forms above and of Gaussian limits).
#[derive(Clone, Debug)]
pub struct SeriesCharFn {
    pub coeffs: Vec<Complex64>,
}

impl CharFn {
    /// Characteristic function of the Haar model at amplitude `a`:
    /// value `a` at the origin, slope set by the spectral overlaps.
    pub fn haar_form(a: Complex64, data: SpectralData) -> Result<CharFn> {
        data.validate()?;
        let sqrt_n = (data.dim as f64).sqrt();
        Ok(CharFn::Rational(RationalCharFn {
            offset: a,
            factor: Complex64::new(1.0, 0.0) - a / sqrt_n,
            data,
        }))
    }

    /// Characteristic function of the iid-phase model at amplitude `a`.
    /// The variance split between the two Gaussian sources halves the
    /// scale: value `a / sqrt(2)` at the origin.
    pub fn iid_form(a: Complex64, data: SpectralData) -> Result<CharFn> {
        data.validate()?;
        let sqrt_n = (data.dim as f64).sqrt();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        Ok(CharFn::Rational(RationalCharFn {
            offset: a * inv_sqrt2,
            factor: (Complex64::new(1.0, 0.0) - a / sqrt_n) * inv_sqrt2,
            data,
        }))
    }

    pub fn from_series(coeffs: Vec<Complex64>) -> Result<CharFn> {
        if coeffs.is_empty() {
            return Err(Error::invalid("coeffs", "must be nonempty"));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::invalid("coeffs", "must be finite"));
        }
        Ok(CharFn::Series(SeriesCharFn { coeffs }))
    }

    /// Series with constant term `head` and k-th coefficient
    /// `-scale * m_k` for the supplied moment sequence (k >= 1).
    pub fn from_moment_sequence(
        head: Complex64,
        scale: Complex64,
        moments: &[Complex64],
    ) -> Result<CharFn> {
        let mut coeffs = Vec::with_capacity(moments.len() + 1);
        coeffs.push(head);
        coeffs.extend(moments.iter().map(|m| -scale * m));
        CharFn::from_series(coeffs)
    }

    /// Value and derivative at z.
    pub fn eval(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        let full = self.eval_full(z)?;
        Ok((full.value, full.deriv))
    }

    /// Natural magnitude scale at z: sum of absolute values of all
    /// terms entering the evaluation. Residuals of genuine zeros are
    /// judged relative to this.
    pub fn magnitude_scale(&self, z: Complex64) -> f64 {
        match self {
            CharFn::Rational(f) => {
                let sqrt_n = (f.data.dim as f64).sqrt();
                let mut sum = 0.0;
                for (p, w) in f.data.phases.iter().zip(f.data.weights.iter()) {
                    let denom = (Complex64::new(1.0, 0.0) - z * p.conj()).norm();
                    if denom > 0.0 {
                        sum += w * z.norm() / denom;
                    }
                }
                f.offset.norm() + f.factor.norm() * sqrt_n * sum
            }
            CharFn::Series(f) => {
                let r = z.norm();
                let mut sum = 0.0;
                let mut pow = 1.0;
                for c in &f.coeffs {
                    sum += c.norm() * pow;
                    pow *= r;
                }
                sum
            }
        }
    }

    fn eval_full(&self, z: Complex64) -> Result<EvalData> {
        match self {
            CharFn::Rational(f) => {
                let dist = f.data.pole_distance(z);
                if dist <= POLE_MARGIN {
                    return Err(Error::PoleProximity {
                        z,
                        margin: POLE_MARGIN,
                    });
                }
                let (r, dr) = f.data.resolvent_form(z);
                Ok(EvalData {
                    value: f.offset - f.factor * r,
                    deriv: -f.factor * dr,
                })
            }
            CharFn::Series(f) => {
                // Horner for value and derivative together
                let mut value = Complex64::new(0.0, 0.0);
                let mut deriv = Complex64::new(0.0, 0.0);
                for c in f.coeffs.iter().rev() {
                    deriv = deriv * z + value;
                    value = value * z + c;
                }
                Ok(EvalData { value, deriv })
            }
        }
    }

    /// Upper bound for |f'| on the closed disk |z| <= r, used as a
    /// Lipschitz constant between contour nodes.
    fn deriv_bound(&self, r: f64) -> f64 {
        match self {
            CharFn::Rational(f) => {
                // every pole is unimodular, so |1 - z conj(u)| >= 1 - r
                let d = (1.0 - r).max(POLE_MARGIN);
                f.factor.norm() * (f.data.dim as f64).sqrt() / (d * d)
            }
            CharFn::Series(f) => {
                // term k contributes k |c_k| r^{k-1}
                let mut sum = 0.0;
                let mut pow = 1.0;
                for (k, c) in f.coeffs.iter().enumerate().skip(1) {
                    sum += k as f64 * c.norm() * pow;
                    pow *= r;
                }
                sum
            }
        }
    }

    fn check_contour_domain(&self, disk: &Disk) -> Result<()> {
        if let CharFn::Rational(_) = self {
            let reach = disk.center.norm() + disk.radius * (1.0 + 2.0 * RADIUS_JITTER);
            if reach > 1.0 - CONTOUR_MARGIN {
                return Err(Error::ContourProximity {
                    radius: disk.radius,
                    margin: CONTOUR_MARGIN,
                });
            }
        }
        Ok(())
    }
}

struct EvalData {
    value: Complex64,
    deriv: Complex64,
}

struct Winding {
    count: usize,
    /// least |f| over the accepted node set
    min_abs: f64,
    /// node count of the accepted level
    nodes: usize,
    /// sum of the enclosed zeros (first contour moment)
    zero_sum: Complex64,
}

/// Argument-principle winding along |z - c| = r with node doubling.
/// Accepts when the integral sits within 0.25 of the same nonnegative
/// integer on two consecutive levels.
fn winding_scan(f: &CharFn, center: Complex64, r: f64, start: usize, cap: usize) -> Result<Winding> {
    let mut prev: Option<i64> = None;
    let mut nodes = start;
    loop {
        let mut integral = Complex64::new(0.0, 0.0);
        let mut first_moment = Complex64::new(0.0, 0.0);
        let mut min_abs = f64::INFINITY;
        for j in 0..nodes {
            let theta = std::f64::consts::TAU * j as f64 / nodes as f64;
            let w = Complex64::from_polar(r, theta);
            let z = center + w;
            let e = f.eval_full(z)?;
            let abs = e.value.norm();
            if abs == 0.0 {
                return Err(Error::ContourProximity {
                    radius: r,
                    margin: 0.0,
                });
            }
            min_abs = min_abs.min(abs);
            let log_deriv = e.deriv / e.value * w;
            integral += log_deriv;
            first_moment += log_deriv * z;
        }
        integral /= nodes as f64;
        first_moment /= nodes as f64;
        let rounded = integral.re.round();
        let residual = (integral - Complex64::new(rounded, 0.0)).norm();
        if residual < WINDING_RESIDUAL && rounded >= 0.0 {
            let k = rounded as i64;
            if prev == Some(k) {
                return Ok(Winding {
                    count: k as usize,
                    min_abs,
                    nodes,
                    zero_sum: first_moment,
                });
            }
            prev = Some(k);
        } else {
            prev = None;
        }
        if nodes >= cap {
            return Err(Error::ContourIndeterminate { residual, nodes });
        }
        nodes *= 2;
    }
}

/// Number of zeros of f in the disk, counted with multiplicity.
///
/// Counts are taken on the two contours r(1 +- jitter) and must agree;
/// disagreement means a zero lies within jitter of the boundary and is
/// reported as an error rather than silently resolved. For rational
/// forms the jittered contours must stay inside the unit circle by the
/// contour margin.
pub fn count_zeros(f: &CharFn, disk: &Disk) -> Result<usize> {
    count_and_sum(f, disk).map(|(count, _)| count)
}

/// Dual-jitter count plus the sum of the enclosed zeros (the first
/// contour moment, averaged over the two contours).
fn count_and_sum(f: &CharFn, disk: &Disk) -> Result<(usize, Complex64)> {
    count_capped(f, disk, MAX_NODES)
}

fn count_capped(f: &CharFn, disk: &Disk, cap: usize) -> Result<(usize, Complex64)> {
    Disk::new(disk.center, disk.radius)?;
    f.check_contour_domain(disk)?;
    let lo = winding_scan(f, disk.center, disk.radius * (1.0 - RADIUS_JITTER), MIN_NODES, cap)?;
    let hi = winding_scan(f, disk.center, disk.radius * (1.0 + RADIUS_JITTER), MIN_NODES, cap)?;
    if lo.count != hi.count {
        return Err(Error::JitterDisagreement {
            lo: lo.count,
            hi: hi.count,
        });
    }
    Ok((lo.count, (lo.zero_sum + hi.zero_sum) * 0.5))
}

/// Zero count plus a Rouche certificate against a perturbation bound.
///
/// A count of the truncated function transfers to any function within
/// `tail_bound` of it (in sup norm over the contour) provided |f|
/// exceeds `tail_bound` on the whole contour. The node minimum is
/// turned into a contour minimum with the global derivative bound, so
/// a valid certificate is a proof, not a heuristic.
pub fn count_zeros_certified(f: &CharFn, disk: &Disk, tail_bound: f64) -> Result<usize> {
    if !(tail_bound >= 0.0) {
        return Err(Error::invalid("tail_bound", "must be nonnegative"));
    }
    Disk::new(disk.center, disk.radius)?;
    f.check_contour_domain(disk)?;
    let mut count = None;
    for dir in [-1.0, 1.0] {
        let r = disk.radius * (1.0 + dir * RADIUS_JITTER);
        let reach = disk.center.norm() + r;
        let lip = f.deriv_bound(reach);
        let mut start = MIN_NODES;
        let w = loop {
            let w = winding_scan(f, disk.center, r, start, MAX_NODES)?;
            // max distance from a contour point to the nearest node
            let spacing = std::f64::consts::PI * r / w.nodes as f64;
            let margin = w.min_abs - lip * spacing;
            if margin > tail_bound {
                break w;
            }
            // refinement halves the spacing while the node minimum can
            // only drop to the true contour minimum, so the margin
            // improves until a zero genuinely grazes the contour
            if w.nodes >= MAX_NODES {
                return Err(Error::CertificateInvalid {
                    q: disk.radius,
                    degree: match f {
                        CharFn::Series(s) => s.coeffs.len().saturating_sub(1),
                        CharFn::Rational(r) => r.data.phases.len(),
                    },
                    margin,
                    tailbound: tail_bound,
                });
            }
            start = w.nodes;
        };
        match count {
            None => count = Some(w.count),
            Some(c) if c != w.count => {
                return Err(Error::JitterDisagreement {
                    lo: c.min(w.count),
                    hi: c.max(w.count),
                })
            }
            _ => {}
        }
    }
    Ok(count.unwrap())
}

/// Tail of a geometric coefficient envelope: if every dropped
/// coefficient is bounded by `coeff_bound`, the dropped part of the
/// series is at most this on |z| <= q.
pub fn geometric_tail(coeff_bound: f64, q: f64, kept: usize) -> f64 {
    coeff_bound * q.powi(kept as i32 + 1) / (1.0 - q)
}

/// Locate all zeros of f in the disk.
///
/// Strategy: total count by contour, then a worklist of counted
/// regions. A region whose count is already covered by located zeros
/// is dropped; a single zero is polished by Newton; a multi-zero
/// region is first tested for being a point-like cluster (all of its
/// zeros in one epsilon-disk around their contour centroid, emitted as
/// one location), then contracted around the centroid when that keeps
/// the count, and only then covered by four overlapping children. The
/// located set must reproduce the total count, with multiplicity, or
/// the call fails.
///
/// Rational forms are first traded for a tail-bounded polynomial
/// truncation: the subdivision cover overshoots its parent disk, which
/// a contour over a rational form cannot afford near the pole circle,
/// while a polynomial can be counted anywhere. Each approximate zero
/// is then polished against the exact function, and the final count
/// check below still runs against the exact function's contour count.
pub fn find_zeros(f: &CharFn, disk: &Disk) -> Result<PointSet> {
    let counted = match (count_and_sum(f, disk), f) {
        (Err(e), CharFn::Rational(rational))
            if matches!(
                e,
                Error::JitterDisagreement { .. } | Error::ContourIndeterminate { .. }
            ) =>
        {
            // a zero grazes the requested contour; re-certify on a nearby
            // radius chosen through a verified zero-free gap
            return find_zeros_shifted(f, rational, disk, e);
        }
        (counted, _) => counted,
    };
    let (total, top_sum) = counted?;
    if total == 0 {
        return Ok(PointSet::new(Vec::new(), Provenance::RootFinder));
    }
    let found = match f {
        CharFn::Series(_) => locate_distinct(f, disk, total, top_sum)?,
        CharFn::Rational(rational) => {
            let reach = disk.center.norm() + disk.radius * (1.0 + 2.0 * RADIUS_JITTER);
            let g = CharFn::Series(rational_truncation(rational, reach)?);
            let wide = Disk {
                center: disk.center,
                radius: disk.radius * (1.0 + 2.0 * RADIUS_JITTER),
            };
            let mut polished = Vec::new();
            for z in locate_cells(&g, &wide)? {
                push_distinct(&mut polished, polish(f, z));
            }
            polished
        }
    };
    reconcile(f, disk, found, total)
}

/// Fallback for a requested contour that passes too close to a zero to
/// certify a count. Locates every zero out to a slightly wider ring,
/// picks a replacement radius in the widest gap between zero moduli
/// (walls stand in for anything beyond the searched ring), certifies
/// the count there, and keeps the zeros strictly inside the requested
/// disk. Fails with the original error when no gap is wide enough for
/// the quadrature to resolve.
fn find_zeros_shifted(
    f: &CharFn,
    rational: &RationalCharFn,
    disk: &Disk,
    orig: Error,
) -> Result<PointSet> {
    let wide = Disk {
        center: disk.center,
        radius: disk.radius * (1.0 + 256.0 * RADIUS_JITTER),
    };
    let reach = disk.center.norm() + wide.radius * (1.0 + 2.0 * RADIUS_JITTER);
    if reach >= 1.0 - CONTOUR_MARGIN {
        return Err(orig);
    }
    let g = CharFn::Series(rational_truncation(rational, reach)?);
    let mut candidates = Vec::new();
    for z in locate_cells(&g, &wide)? {
        push_distinct(&mut candidates, polish(f, z));
    }
    let inner = disk.radius * (1.0 - 4.0 * RADIUS_JITTER);
    let outer = disk.radius * (1.0 + 224.0 * RADIUS_JITTER);
    let mut cuts: Vec<f64> = candidates
        .iter()
        .map(|z| (z - disk.center).norm())
        .filter(|m| (inner..=outer).contains(m))
        .collect();
    cuts.push(inner);
    cuts.push(outer);
    cuts.sort_by(|a, b| a.total_cmp(b));
    let (mut best_mid, mut best_gap) = (0.0f64, 0.0f64);
    for w in cuts.windows(2) {
        let gap = w[1] - w[0];
        if gap > best_gap {
            best_gap = gap;
            best_mid = 0.5 * (w[0] + w[1]);
        }
    }
    if best_gap < disk.radius * 48.0 * RADIUS_JITTER {
        return Err(orig);
    }
    let count_disk = Disk {
        center: disk.center,
        radius: best_mid,
    };
    let (total, _) = count_and_sum(f, &count_disk)?;
    let set = reconcile(f, &count_disk, candidates, total)?;
    let points = set
        .points
        .into_iter()
        .filter(|z| (z - disk.center).norm() < disk.radius)
        .collect();
    Ok(PointSet::new(points, Provenance::RootFinder))
}

/// Quadtree localization for entire functions. Square cells tile the
/// bounding square of the disk and are counted on their circumscribed
/// circles, which a series tolerates anywhere. Cells that leave the
/// disk are dropped, so the search never escalates toward the exterior
/// zero ring that a truncated rational form carries near |z| = 1.
fn locate_cells(f: &CharFn, disk: &Disk) -> Result<Vec<Complex64>> {
    let floor = (disk.radius * 1e-9).max(1e-12);
    let cluster_eps = (10.0 * floor).max(0.25 * DEDUP_TOL);
    let keep_band = disk.radius * (1.0 + 3.0 * RADIUS_JITTER) + 2.0 * DEDUP_TOL;
    let mut found: Vec<Complex64> = Vec::new();
    // (cell center, half side)
    let mut stack = vec![(disk.center, disk.radius)];
    let mut budget = 50_000usize;
    while let Some((center, half)) = stack.pop() {
        budget = budget
            .checked_sub(1)
            .filter(|&b| b > 0)
            .ok_or_else(|| Error::QuadratureFailure {
                detail: "zero search exhausted its cell budget".into(),
            })?;
        let dx = ((center.re - disk.center.re).abs() - half).max(0.0);
        let dy = ((center.im - disk.center.im).abs() - half).max(0.0);
        if dx * dx + dy * dy > keep_band * keep_band {
            continue;
        }
        let r_circ = half * std::f64::consts::SQRT_2;
        // a coarse cell exists only to be split; a few hundred nodes
        // decide that, and a circle that cannot certify there is split
        // anyway, so the full escalation budget would be wasted on it
        let counted = if half >= disk.radius * 0.24 {
            count_capped(
                f,
                &Disk {
                    center,
                    radius: r_circ,
                },
                COARSE_CELL_NODES,
            )
            .map(|(c, s)| (c, r_circ, s))
        } else {
            count_with_growth(f, center, r_circ)
        };
        let (count, r_eff, zero_sum) = match counted {
            Ok(v) => v,
            // a circle crossing a dense zero cluster (the exterior ring
            // of a truncation) may never certify; the cell is still
            // splittable, and the final count check guards the result
            Err(Error::JitterDisagreement { .. })
            | Err(Error::ContourIndeterminate { .. })
            | Err(Error::ContourProximity { .. }) => {
                if half > floor {
                    split(&mut stack, center, half);
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        if count == 0 {
            continue;
        }
        let located = found.iter().filter(|z| (*z - center).norm() <= r_eff).count();
        if located >= count {
            continue;
        }
        if half <= floor {
            push_distinct(&mut found, center);
            continue;
        }
        if count == 1 {
            if let Some(z) = newton(f, center, r_eff) {
                if (z - center).norm() <= r_eff * 1.01 {
                    push_distinct(&mut found, z);
                    continue;
                }
            }
        } else if cluster_eps < 0.5 * half {
            let centroid = zero_sum / count as f64;
            if let Ok((c, eps_eff, _)) = count_with_growth(f, centroid, cluster_eps) {
                if c == count && (centroid - center).norm() + eps_eff <= r_eff {
                    push_distinct(&mut found, centroid);
                    continue;
                }
            }
        }
        split(&mut stack, center, half);
    }
    Ok(found)
}

fn split(stack: &mut Vec<(Complex64, f64)>, center: Complex64, half: f64) {
    let q = half / 2.0;
    for (sx, sy) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
        stack.push((center + Complex64::new(sx * q, sy * q), q));
    }
}

fn locate_distinct(
    f: &CharFn,
    disk: &Disk,
    total: usize,
    top_sum: Complex64,
) -> Result<Vec<Complex64>> {
    let floor = (disk.radius * 1e-9).max(1e-12);
    let cluster_eps = (10.0 * floor).max(0.25 * DEDUP_TOL);
    let mut found: Vec<Complex64> = Vec::new();
    let mut stack = vec![Region {
        center: disk.center,
        radius: disk.radius,
        count: total,
        zero_sum: top_sum,
    }];
    // hard cap so adversarial geometry fails loudly instead of spinning
    let mut budget = 50_000usize;
    while let Some(region) = stack.pop() {
        budget = budget
            .checked_sub(1)
            .filter(|&b| b > 0)
            .ok_or_else(|| Error::QuadratureFailure {
                detail: "zero search exhausted its region budget".into(),
            })?;
        let located = found
            .iter()
            .filter(|z| (*z - region.center).norm() <= region.radius)
            .count();
        if located >= region.count {
            // regions overlap, so siblings re-see zeros that are already
            // located; everything owed here is accounted for
            continue;
        }
        if region.radius <= floor {
            push_distinct(&mut found, region.center);
            continue;
        }
        if region.count == 1 {
            // accept only a zero that lies in this region; Newton can
            // tunnel into a neighboring basin, which would shadow the
            // zero owned here
            if let Some(z) = newton(f, region.center, region.radius) {
                if (z - region.center).norm() <= region.radius * 1.01 {
                    push_distinct(&mut found, z);
                    continue;
                }
            }
            // fall through to subdivision with a poor Newton start
        } else {
            let centroid = region.zero_sum / region.count as f64;
            if cluster_eps < 0.5 * region.radius {
                if let Ok((c, r_eff, _)) = count_with_growth(f, centroid, cluster_eps) {
                    // the probe disk must sit inside the region, otherwise
                    // its count could borrow zeros from a neighbor
                    if c == region.count
                        && (centroid - region.center).norm() + r_eff <= region.radius
                    {
                        push_distinct(&mut found, centroid);
                        continue;
                    }
                }
            }
            let shrunk = 0.45 * region.radius;
            if let Ok((c, r_eff, s)) = count_with_growth(f, centroid, shrunk) {
                if c == region.count
                    && (centroid - region.center).norm() + r_eff <= region.radius
                {
                    stack.push(Region {
                        center: centroid,
                        radius: r_eff,
                        count: c,
                        zero_sum: s,
                    });
                    continue;
                }
            }
        }
        // four children cover the disk: centers at radius r/sqrt(2), child
        // radius 0.75 r (max distance of a disk point to the nearest child
        // center is r/sqrt(2) < 0.75 r)
        let child_r = 0.75 * region.radius;
        for j in 0..4 {
            let angle = std::f64::consts::FRAC_PI_4 + std::f64::consts::FRAC_PI_2 * j as f64;
            let child_c = region.center
                + Complex64::from_polar(region.radius * std::f64::consts::FRAC_1_SQRT_2, angle);
            let (count, r_eff, zero_sum) = count_with_growth(f, child_c, child_r)?;
            if count > 0 {
                stack.push(Region {
                    center: child_c,
                    radius: r_eff,
                    count,
                    zero_sum,
                });
            }
        }
    }
    Ok(found)
}

/// Truncation of the rational form's power series with tail below
/// 1e-12 of the coefficient scale on |z| <= rho; good enough that
/// Newton polishing recovers the exact zeros.
fn rational_truncation(f: &RationalCharFn, rho: f64) -> Result<SeriesCharFn> {
    const MAX_LOCATE_ORDER: usize = 8192;
    let sqrt_n = (f.data.dim as f64).sqrt();
    let scale = f.factor.norm() * sqrt_n;
    let mut kept = 64usize;
    while geometric_tail(scale, rho, kept) > scale * 1e-12 {
        kept *= 2;
        if kept > MAX_LOCATE_ORDER {
            return Err(Error::QuadratureFailure {
                detail: format!(
                    "series order for zero location exceeds {MAX_LOCATE_ORDER} at reach {rho}"
                ),
            });
        }
    }
    let mut pows: Vec<Complex64> = f.data.phases.iter().map(|p| p.conj()).collect();
    let mut coeffs = Vec::with_capacity(kept + 1);
    coeffs.push(f.offset);
    for _ in 0..kept {
        let m: Complex64 = f
            .data
            .weights
            .iter()
            .zip(&pows)
            .map(|(w, p)| p * *w)
            .sum();
        coeffs.push(-f.factor * sqrt_n * m);
        for (p, phase) in pows.iter_mut().zip(&f.data.phases) {
            *p *= phase.conj();
        }
    }
    Ok(SeriesCharFn { coeffs })
}

fn reconcile(f: &CharFn, disk: &Disk, found: Vec<Complex64>, total: usize) -> Result<PointSet> {
    let mut zeros = found;
    // keep only zeros inside (a jitter band around) the requested disk;
    // children of the cover can poke outside it
    zeros.retain(|z| (z - disk.center).norm() <= disk.radius * (1.0 + RADIUS_JITTER));

    if zeros.len() != total {
        // fewer locations than the count means multiplicity (located
        // zeros are pairwise separated by construction): re-count around
        // each location and expand
        let mut with_mult = Vec::new();
        let mut sum = 0usize;
        for &z in &zeros {
            let rho = local_radius(&zeros, z, disk.radius);
            let m = count_zeros(f, &Disk { center: z, radius: rho })?;
            sum += m;
            for _ in 0..m {
                with_mult.push(z);
            }
        }
        if sum != total {
            return Err(Error::ZeroCountMismatch {
                found: sum,
                expected: total,
            });
        }
        zeros = with_mult;
    }
    Ok(PointSet::new(zeros, Provenance::RootFinder))
}

struct Region {
    center: Complex64,
    radius: f64,
    count: usize,
    zero_sum: Complex64,
}

fn push_distinct(found: &mut Vec<Complex64>, z: Complex64) {
    if !found.iter().any(|p| (p - z).norm() <= DEDUP_TOL) {
        found.push(z);
    }
}

fn local_radius(zeros: &[Complex64], z: Complex64, top_radius: f64) -> f64 {
    let mut rho = top_radius * 1e-3;
    for &other in zeros {
        let d = (other - z).norm();
        if d > DEDUP_TOL {
            rho = rho.min(d / 3.0);
        }
    }
    rho.max(10.0 * DEDUP_TOL)
}

// regions may have zeros arbitrarily close to their boundary; grow the
// contour a little when the jittered counts disagree (growing keeps the
// cover property). Returns the radius the count belongs to.
fn count_with_growth(f: &CharFn, center: Complex64, radius: f64) -> Result<(usize, f64, Complex64)> {
    let mut r = radius;
    for _ in 0..4 {
        match count_and_sum(f, &Disk { center, radius: r }) {
            Ok((c, s)) => return Ok((c, r, s)),
            Err(Error::JitterDisagreement { .. }) | Err(Error::ContourIndeterminate { .. }) => {
                r *= 1.0 + 37.0 * RADIUS_JITTER;
            }
            Err(e) => return Err(e),
        }
    }
    count_and_sum(f, &Disk { center, radius: r }).map(|(c, s)| (c, r, s))
}

fn newton(f: &CharFn, start: Complex64, clamp: f64) -> Option<Complex64> {
    let mut z = start;
    for _ in 0..NEWTON_MAX_ITERS {
        let e = f.eval_full(z).ok()?;
        let scale = f.magnitude_scale(z).max(f64::MIN_POSITIVE);
        if e.value.norm() <= NEWTON_RESIDUAL * scale {
            return Some(polish(f, z));
        }
        if e.deriv.norm() == 0.0 {
            return None;
        }
        let mut step = e.value / e.deriv;
        let norm = step.norm();
        if norm > clamp {
            step *= clamp / norm;
        }
        z -= step;
        if (z - start).norm() > 4.0 * clamp {
            // running away from the region that owns the zero
            return None;
        }
    }
    None
}

// an iterate at the acceptance threshold can still sit ~1e-10 away from
// the zero; a few unclamped steps push a simple zero to machine precision
fn polish(f: &CharFn, mut z: Complex64) -> Complex64 {
    let Ok(e) = f.eval_full(z) else { return z };
    let mut best = e.value.norm();
    for _ in 0..3 {
        let Ok(e) = f.eval_full(z) else { break };
        if e.deriv.norm() == 0.0 {
            break;
        }
        let next = z - e.value / e.deriv;
        let Ok(next_e) = f.eval_full(next) else { break };
        if next_e.value.norm() >= best {
            break;
        }
        best = next_e.value.norm();
        z = next;
    }
    z
}

/// Checks the sub-mean-value inequality
/// `sup_K |f|^p <= (pi delta^2)^{-1} integral over the delta-fattening
/// of K of |f|^p` for a closed disk K, to 1e-6 relative tolerance.
///
/// Both sides are computed numerically: the sup over the boundary of K
/// (max modulus principle) by doubling node counts, the integral in
/// polar coordinates by a trapezoid rule in the angle and Simpson in
/// the radius, also doubled to convergence.
pub fn supnorm_integral_check(f: &CharFn, region: &Disk, delta: f64, p: u32) -> Result<bool> {
    Disk::new(region.center, region.radius)?;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid("delta", "must be positive and finite"));
    }
    if p == 0 {
        return Err(Error::invalid("p", "must be at least 1"));
    }
    if let CharFn::Rational(_) = f {
        let reach = region.center.norm() + region.radius + delta;
        if reach > 1.0 - CONTOUR_MARGIN {
            return Err(Error::ContourProximity {
                radius: region.radius + delta,
                margin: CONTOUR_MARGIN,
            });
        }
    }

    let sup = boundary_sup(f, region)?;
    let lhs = sup.powi(p as i32);

    let big_r = region.radius + delta;
    let integral = polar_integral(f, region.center, big_r, p)?;
    let rhs = integral / (std::f64::consts::PI * delta * delta);

    Ok(lhs <= rhs * (1.0 + 1e-6))
}

// Grid scan plus golden-section refinement of every bracketed local
// maximum. Only true point evaluations enter the running max, so the
// result is always a lower bound on the sup; the grid is fine enough
// that the refined bracket maxima cover it to machine precision.
fn boundary_sup(f: &CharFn, region: &Disk) -> Result<f64> {
    const NODES: usize = 4096;
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let value = |theta: f64| -> Result<f64> {
        let z = region.center + Complex64::from_polar(region.radius, theta);
        Ok(f.eval_full(z)?.value.norm())
    };
    let step = std::f64::consts::TAU / NODES as f64;
    let mut grid = Vec::with_capacity(NODES);
    for j in 0..NODES {
        grid.push(value(step * j as f64)?);
    }
    let mut sup: f64 = 0.0;
    for j in 0..NODES {
        let here = grid[j];
        sup = sup.max(here);
        if here < grid[(j + NODES - 1) % NODES] || here < grid[(j + 1) % NODES] {
            continue;
        }
        let mut lo = step * (j as f64 - 1.0);
        let mut hi = step * (j as f64 + 1.0);
        let mut x1 = hi - INV_PHI * (hi - lo);
        let mut x2 = lo + INV_PHI * (hi - lo);
        let mut f1 = value(x1)?;
        let mut f2 = value(x2)?;
        for _ in 0..48 {
            sup = sup.max(f1).max(f2);
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INV_PHI * (hi - lo);
                f2 = value(x2)?;
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INV_PHI * (hi - lo);
                f1 = value(x1)?;
            }
        }
        sup = sup.max(f1).max(f2);
    }
    Ok(sup)
}

fn polar_integral(f: &CharFn, center: Complex64, big_r: f64, p: u32) -> Result<f64> {
    let mut radial = 64usize; // Simpson panels
    let mut angular = 128usize;
    let mut prev = f64::NAN;
    loop {
        let mut total = 0.0;
        let h = big_r / radial as f64;
        for i in 0..=radial {
            let rho = i as f64 * h;
            // Simpson weights 1,4,2,...,4,1
            let w_r = if i == 0 || i == radial {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let mut ring = 0.0;
            if rho == 0.0 {
                // integrand has a factor rho
            } else {
                for j in 0..angular {
                    let theta = std::f64::consts::TAU * j as f64 / angular as f64;
                    let z = center + Complex64::from_polar(rho, theta);
                    let e = f.eval_full(z)?;
                    ring += e.value.norm().powi(p as i32);
                }
                ring *= std::f64::consts::TAU / angular as f64;
            }
            total += w_r * ring * rho;
        }
        total *= h / 3.0;
        if prev.is_finite() && (total - prev).abs() <= 2.5e-7 * (1.0 + total.abs()) {
            return Ok(total);
        }
        prev = total;
        if radial >= 1 << 12 {
            return Err(Error::QuadratureFailure {
                detail: format!("area integral did not stabilize at {radial} radial panels"),
            });
        }
        radial *= 2;
        angular *= 2;
    }
}
