//! The limiting random analytic function `phi(z) = a - sum_{k>=1} c_k z^k`
//! with i.i.d. standard complex Gaussian coefficients, truncated to a
//! polynomial whose zero count in a disk is certified by a Rouche bound
//! against the dropped tail, plus closed forms for the probabilities of
//! the two coefficient events that force zero or two-plus zeros.

use num_complex::Complex64;
use serde::Serialize;

use crate::charfn::{self, CharFn, Disk};
use crate::error::{Error, Result};
use crate::models::{PointSet, Provenance};
use crate::sampling::{complex_gaussian, Seed};

/// Truncation orders are doubled up to this cap while the certificate
/// stays invalid.
pub const MAX_TRUNCATION: usize = 4096;

/// Degree-M truncation of the limiting function. Coefficient k of the
/// series is `coeffs[k-1]`; the value at 0 is exactly `head`.
#[derive(Debug, Clone)]
pub struct TruncatedGaf {
    pub head: Complex64,
    pub coeffs: Vec<Complex64>,
}

impl TruncatedGaf {
    pub fn from_parts(head: Complex64, coeffs: Vec<Complex64>) -> Result<Self> {
        if head == Complex64::new(0.0, 0.0) || !head.is_finite() {
            return Err(Error::invalid("head", "must be nonzero and finite"));
        }
        if coeffs.is_empty() {
            return Err(Error::invalid("coeffs", "need at least one coefficient"));
        }
        Ok(Self { head, coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn char_fn(&self) -> CharFn {
        let mut poly = Vec::with_capacity(self.coeffs.len() + 1);
        poly.push(self.head);
        poly.extend(self.coeffs.iter().map(|c| -c));
        CharFn::from_series(poly).expect("nonempty coefficient vector")
    }

    /// Upper bound for |phi'| on |z| <= r.
    fn deriv_bound(&self, r: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 1) as f64 * c.norm() * r.powi(i as i32))
            .sum()
    }
}

/// Draws the truncation from the seed. Coefficients come off the stream
/// in order, so redrawing with a larger order extends the same function:
/// the first `order` coefficients are unchanged.
pub fn sample_gaf(a: Complex64, order: usize, seed: Seed) -> Result<TruncatedGaf> {
    if a == Complex64::new(0.0, 0.0) || !a.is_finite() {
        return Err(Error::invalid("a", "must be nonzero and finite"));
    }
    if order == 0 {
        return Err(Error::invalid("order", "must be at least 1"));
    }
    let mut rng = seed.rng();
    let coeffs = (0..order).map(|_| complex_gaussian(&mut rng)).collect();
    Ok(TruncatedGaf { head: a, coeffs })
}

/// Rouche certificate that the truncation's zero count in D(0, q) is the
/// zero count of every extension whose dropped coefficients satisfy
/// |c_k| <= k: valid iff the tail bound sum_{k>order} k q^k stays below
/// a verified lower bound for min_{|z|=q} |phi|.
#[derive(Debug, Clone, Serialize)]
pub struct TruncationCertificate {
    pub q: f64,
    #[serde(rename = "M")]
    pub order: usize,
    pub margin: f64,
    pub tailbound: f64,
    pub valid: bool,
}

/// sum_{k > order} k q^k in closed form.
pub fn envelope_tail(q: f64, order: usize) -> f64 {
    let m = order as f64;
    q.powi(order as i32 + 1) * (m + 1.0 - m * q) / ((1.0 - q) * (1.0 - q))
}

/// Certifies the truncation at radius q. The margin is a true lower
/// bound for the contour minimum: the least node value minus the
/// derivative bound times the largest node-to-contour distance.
pub fn certify(phi: &TruncatedGaf, q: f64) -> Result<TruncationCertificate> {
    check_radius(q)?;
    let f = phi.char_fn();
    let tailbound = envelope_tail(q, phi.order());
    let lip = phi.deriv_bound(q);
    let mut nodes = 256usize;
    let margin = loop {
        let mut node_min = f64::INFINITY;
        for j in 0..nodes {
            let z = Complex64::from_polar(q, std::f64::consts::TAU * j as f64 / nodes as f64);
            let (value, _) = f.eval(z)?;
            node_min = node_min.min(value.norm());
        }
        let slack = lip * std::f64::consts::PI * q / nodes as f64;
        let margin = node_min - slack;
        if margin > tailbound || nodes >= 16384 {
            break margin;
        }
        if node_min <= tailbound {
            // refining only shrinks the node minimum
            break margin;
        }
        nodes *= 2;
    };
    Ok(TruncationCertificate {
        q,
        order: phi.order(),
        margin,
        tailbound,
        valid: tailbound < margin,
    })
}

/// Zeros of the truncation in D(0, q) together with a valid certificate.
///
/// If the certificate fails at the given order, the function is extended
/// with fresh tail coefficients (the seed must be the one that produced
/// `phi`, so the existing coefficients are reproduced) and the order
/// doubles until the certificate validates or the cap is hit.
pub fn gaf_zeros(
    phi: &TruncatedGaf,
    q: f64,
    seed: Seed,
) -> Result<(PointSet, TruncationCertificate)> {
    let (extended, cert) = certified_extension(phi, q, seed)?;
    let zeros = charfn::find_zeros(&extended.char_fn(), &Disk::new(Complex64::new(0.0, 0.0), q)?)?;
    Ok((PointSet::new(zeros.points, Provenance::Gaf), cert))
}

/// Zero count variant: same certificate machinery without locating.
///
/// A zero can graze the counting contour, in which case the count is
/// retried on a contour grown by jitter-scale steps until it certifies;
/// the returned certificate then speaks for the grown radius.
pub fn gaf_zero_count(
    phi: &TruncatedGaf,
    q: f64,
    seed: Seed,
) -> Result<(usize, TruncationCertificate)> {
    let mut radius = q;
    for _ in 0..4 {
        match gaf_count_at(phi, radius, seed) {
            Err(Error::JitterDisagreement { .. })
            | Err(Error::ContourIndeterminate { .. })
            | Err(Error::CertificateInvalid { .. }) => {
                radius *= 1.0 + 37.0 * charfn::RADIUS_JITTER;
            }
            other => return other,
        }
    }
    gaf_count_at(phi, radius, seed)
}

fn gaf_count_at(
    phi: &TruncatedGaf,
    q: f64,
    seed: Seed,
) -> Result<(usize, TruncationCertificate)> {
    let (extended, cert) = certified_extension(phi, q, seed)?;
    let count = charfn::count_zeros(
        &extended.char_fn(),
        &Disk::new(Complex64::new(0.0, 0.0), q)?,
    )?;
    Ok((count, cert))
}

fn certified_extension(
    phi: &TruncatedGaf,
    q: f64,
    seed: Seed,
) -> Result<(TruncatedGaf, TruncationCertificate)> {
    check_radius(q)?;
    let mut current = phi.clone();
    loop {
        let cert = certify(&current, q)?;
        if cert.valid {
            return Ok((current, cert));
        }
        if current.order() >= MAX_TRUNCATION {
            return Err(Error::CertificateInvalid {
                q,
                degree: cert.order,
                margin: cert.margin,
                tailbound: cert.tailbound,
            });
        }
        let next_order = (current.order() * 2).min(MAX_TRUNCATION);
        let extended = sample_gaf(phi.head, next_order, seed)?;
        if extended.coeffs[..phi.order()] != phi.coeffs[..] {
            return Err(Error::invalid(
                "seed",
                "does not reproduce the truncation's coefficients; extension needs the generating seed".to_owned(),
            ));
        }
        current = extended;
    }
}

fn check_radius(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("q", "must lie in (0, 1)"));
    }
    Ok(())
}

/// Closed-form probabilities of the two coefficient events.
///
/// The no-zero event keeps |c_1| < r with r = |a|/q - q(2-q)/(1-q)^2 and
/// |c_k| <= k for k >= 2; the two-zero event keeps |c_2| q^2 > 2s,
/// |c_1| q < s - |a| and |c_k| <= k for k >= 3. With |c_k|^2 exponential
/// of rate 1 each factor is explicit; the infinite products truncate
/// once a factor is within 1e-16 of 1.
pub fn lemma_event_probabilities(a_prime: Complex64, q: f64, s: f64) -> Result<(f64, f64)> {
    check_radius(q)?;
    let a = a_prime.norm();
    let drift = q * q * (2.0 - q) / ((1.0 - q) * (1.0 - q));
    if a - drift <= 0.0 {
        return Err(Error::invalid(
            "a_prime",
            format!("|a'| = {a} must exceed q^2(2-q)/(1-q)^2 = {drift}"),
        ));
    }
    if s <= a {
        return Err(Error::invalid("s", format!("must exceed |a'| = {a}")));
    }
    let r = a / q - drift / q;
    let p_empty = -(-(r * r)).exp_m1() * tail_product(2);
    let big = 2.0 * s / (q * q);
    let linear = (s - a) / q;
    let p_two = (-(big * big)).exp() * -(-(linear * linear)).exp_m1() * tail_product(3);
    Ok((p_empty, p_two))
}

/// prod_{k >= from} (1 - e^{-k^2}), truncated when factors reach 1.
fn tail_product(from: u32) -> f64 {
    let mut product = 1.0;
    let mut k = from;
    loop {
        let dent = (-(k as f64 * k as f64)).exp();
        if dent < 1e-16 {
            return product;
        }
        product *= 1.0 - dent;
        k += 1;
    }
}

/// Hit counts for the two events by direct simulation of the
/// coefficients, the Monte Carlo validation of the closed forms. Tail
/// constraints are checked up to k = 50; beyond that the violation
/// probability is below e^{-2601}.
#[derive(Debug, Clone, Copy)]
pub struct EventCounts {
    pub empty_hits: u64,
    pub two_hits: u64,
    pub samples: u64,
}

impl EventCounts {
    /// (rate, binomial standard error)
    pub fn empty_rate(&self) -> (f64, f64) {
        rate_and_stderr(self.empty_hits, self.samples)
    }

    pub fn two_rate(&self) -> (f64, f64) {
        rate_and_stderr(self.two_hits, self.samples)
    }
}

fn rate_and_stderr(hits: u64, samples: u64) -> (f64, f64) {
    let p = hits as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

pub fn lemma_events_mc(
    a_prime: Complex64,
    q: f64,
    s: f64,
    samples: u64,
    seed: Seed,
) -> Result<EventCounts> {
    check_radius(q)?;
    let a = a_prime.norm();
    let drift = q * q * (2.0 - q) / ((1.0 - q) * (1.0 - q));
    if a - drift <= 0.0 || s <= a {
        return Err(Error::invalid("a_prime", "event preconditions violated"));
    }
    let r = a / q - drift / q;
    const K_CAP: usize = 50;
    let mut rng = seed.rng();
    let mut empty_hits = 0u64;
    let mut two_hits = 0u64;
    for _ in 0..samples {
        let coeffs: Vec<f64> = (0..K_CAP).map(|_| complex_gaussian(&mut rng).norm()).collect();
        let tail_from = |start: usize| {
            coeffs[start - 1..]
                .iter()
                .zip(start..)
                .all(|(c, k)| *c <= k as f64)
        };
        if coeffs[0] < r && tail_from(2) {
            empty_hits += 1;
        }
        if coeffs[1] * q * q > 2.0 * s && a + coeffs[0] * q < s && tail_from(3) {
            two_hits += 1;
        }
    }
    Ok(EventCounts {
        empty_hits,
        two_hits,
        samples,
    })
}
