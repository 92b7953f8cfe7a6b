//! Experiment dispatch: call into the core modules, collect check
//! rows, and write the CSV/JSON artifacts atomically.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use spectra_core::charfn::{self, CharFn, Disk};
use spectra_core::dynamics;
use spectra_core::gaf::{self, TruncationCertificate};
use spectra_core::models::{
    self, BaseModel, BaseModelKind, PerturbationParams, Strength,
};
use spectra_core::sampling::{self, Seed};
use spectra_core::stats::{self, MomentAccumulator};

use crate::config::{Experiment, ExperimentConfig};

const SALT_BASE: u64 = 0x62617365;
const SALT_DIRECTION: u64 = 0x646972;
const SALT_MODEL_SIDE: u64 = 0x6d6f64;
const SALT_GAF_SIDE: u64 = 0x676166;

/// Truncation order for freshly sampled limiting functions; the
/// certificate machinery extends it if the contour demands more.
const GAF_ORDER: usize = 256;

/// Count-and-location agreement tolerance for the oracle experiment.
const ORACLE_TOL: f64 = 1e-8;

pub enum RunError {
    Core(spectra_core::Error),
    Io(std::io::Error),
}

impl From<spectra_core::Error> for RunError {
    fn from(e: spectra_core::Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl RunError {
    pub fn diagnostic_json(&self) -> String {
        let (kind, detail) = match self {
            RunError::Core(e) => ("numerical", e.to_string()),
            RunError::Io(e) => ("io", e.to_string()),
        };
        serde_json::json!({ "error": kind, "detail": detail }).to_string()
    }
}

/// One verified quantity: estimate, spread, and the reference it is
/// held against.
#[derive(Clone, Debug)]
pub struct CheckRow {
    pub quantity: String,
    pub value: Complex64,
    pub stderr: f64,
    pub samples: u64,
    pub reference: f64,
    pub pass: bool,
}

impl CheckRow {
    fn real(quantity: impl Into<String>, value: f64) -> CheckRowBuilder {
        CheckRowBuilder {
            quantity: quantity.into(),
            value: Complex64::new(value, 0.0),
            stderr: 0.0,
            samples: 0,
        }
    }

    fn complex(quantity: impl Into<String>, value: Complex64) -> CheckRowBuilder {
        CheckRowBuilder {
            quantity: quantity.into(),
            value,
            stderr: 0.0,
            samples: 0,
        }
    }
}

struct CheckRowBuilder {
    quantity: String,
    value: Complex64,
    stderr: f64,
    samples: u64,
}

impl CheckRowBuilder {
    fn stderr(mut self, stderr: f64) -> Self {
        self.stderr = stderr;
        self
    }

    fn samples(mut self, samples: u64) -> Self {
        self.samples = samples;
        self
    }

    fn against(self, reference: f64, pass: bool) -> CheckRow {
        CheckRow {
            quantity: self.quantity,
            value: self.value,
            stderr: self.stderr,
            samples: self.samples,
            reference,
            pass,
        }
    }
}

pub struct RunOutput {
    pub pass: bool,
    pub rows: Vec<CheckRow>,
    pub artifacts: Vec<String>,
    pub out_dir: PathBuf,
}

/// Artifact writer: contents land in `.name.tmp` first and are renamed
/// into place, so partially written files never carry a final name.
struct Sink {
    dir: PathBuf,
    names: Vec<String>,
}

impl Sink {
    fn write(&mut self, name: &str, contents: &[u8]) -> std::io::Result<()> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, self.dir.join(name))?;
        self.names.push(name.to_owned());
        Ok(())
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let started = Instant::now();
    fs::create_dir_all(&cfg.out_dir)?;
    let mut sink = Sink {
        dir: cfg.out_dir.clone(),
        names: Vec::new(),
    };

    let rows = match cfg.experiment {
        Experiment::Moments => run_moments(cfg)?,
        Experiment::Coefficients => run_coefficients(cfg)?,
        Experiment::Tightness => run_tightness(cfg)?,
        Experiment::OracleEquivalence => run_oracle(cfg)?,
        Experiment::GafCompare => run_gaf_compare(cfg, &mut sink)?,
        Experiment::Trajectories => run_trajectories(cfg, &mut sink)?,
        Experiment::SeparationSweep => run_sweep(cfg, &mut sink)?,
        Experiment::CriticalTime => run_critical_time(cfg, &mut sink)?,
        Experiment::SupnormCheck => run_supnorm(cfg)?,
    };

    sink.write(
        "results.csv",
        results_csv(cfg.experiment.name(), &rows).as_bytes(),
    )?;
    let pass = rows.iter().all(|r| r.pass);
    let summary = summary_json(cfg, &rows, pass, &sink.names, started.elapsed().as_secs_f64());
    sink.write("summary.json", summary.as_bytes())?;

    Ok(RunOutput {
        pass,
        rows,
        artifacts: sink.names,
        out_dir: cfg.out_dir.clone(),
    })
}

fn results_csv(experiment_id: &str, rows: &[CheckRow]) -> String {
    let mut out = String::from(
        "experiment_id,quantity,value_re,value_im,stderr,samples,reference_value,pass\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{experiment_id},{},{},{},{},{},{},{}\n",
            r.quantity, r.value.re, r.value.im, r.stderr, r.samples, r.reference, r.pass
        ));
    }
    out
}

fn summary_json(
    cfg: &ExperimentConfig,
    rows: &[CheckRow],
    pass: bool,
    artifacts: &[String],
    wall_time_seconds: f64,
) -> String {
    #[derive(serde::Serialize)]
    struct CheckJson<'a> {
        name: &'a str,
        value_re: f64,
        value_im: f64,
        stderr: f64,
        samples: u64,
        reference: f64,
        pass: bool,
    }
    #[derive(serde::Serialize)]
    struct SummaryJson<'a> {
        experiment: &'a str,
        pass: bool,
        config: &'a BTreeMap<String, String>,
        checks: Vec<CheckJson<'a>>,
        wall_time_seconds: f64,
        artifacts: &'a [String],
    }
    let checks = rows
        .iter()
        .map(|r| CheckJson {
            name: &r.quantity,
            value_re: r.value.re,
            value_im: r.value.im,
            stderr: r.stderr,
            samples: r.samples,
            reference: r.reference,
            pass: r.pass,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&SummaryJson {
        experiment: cfg.experiment.name(),
        pass,
        config: &cfg.echo,
        checks,
        wall_time_seconds,
        artifacts,
    })
    .expect("summary serialization is infallible");
    text.push('\n');
    text
}

fn binomial_stderr(p: f64, samples: u64) -> f64 {
    (p * (1.0 - p) / samples as f64).sqrt()
}

fn run_moments(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>, RunError> {
    let seed = Seed::new(cfg.seed);
    let mut rows = Vec::new();
    for l in 1..=cfg.l_max {
        let est = stats::trace_moment(cfg.n, l, cfg.samples, seed.salted(u64::from(l)))?;
        let reference = f64::from(l).min(cfg.n as f64);
        let pass = (est.value.re - reference).abs() <= 4.0 * est.stderr;
        rows.push(
            CheckRow::complex(format!("trace_moment_l{l}"), est.value)
                .stderr(est.stderr)
                .samples(est.samples)
                .against(reference, pass),
        );
    }
    Ok(rows)
}

fn run_coefficients(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>, RunError> {
    let mat = stats::coefficient_samples(
        &cfg.model,
        cfg.n,
        cfg.k_max,
        cfg.samples,
        Seed::new(cfg.seed),
    )?;
    let mut rows = Vec::new();
    for k in 1..=cfg.k_max {
        let col = mat.column(k - 1);
        let mut abs_sqr = MomentAccumulator::default();
        let mut plain_sqr = MomentAccumulator::default();
        let mut abs_fourth = MomentAccumulator::default();
        for s in col.iter() {
            abs_sqr.push(Complex64::new(s.norm_sqr(), 0.0));
            plain_sqr.push(s * s);
            if k == 1 {
                abs_fourth.push(Complex64::new(s.norm_sqr() * s.norm_sqr(), 0.0));
            }
        }
        let est = abs_sqr.estimate();
        rows.push(
            CheckRow::complex(format!("abs_sqr_k{k}"), est.value)
                .stderr(est.stderr)
                .samples(est.samples)
                .against(1.0, (est.value.re - 1.0).abs() <= 4.0 * est.stderr),
        );
        let est = plain_sqr.estimate();
        rows.push(
            CheckRow::complex(format!("plain_sqr_k{k}"), est.value)
                .stderr(est.stderr)
                .samples(est.samples)
                .against(0.0, est.value.norm() <= 4.0 * est.stderr),
        );
        if k == 1 {
            let est = abs_fourth.estimate();
            rows.push(
                CheckRow::complex("abs_fourth_k1", est.value)
                    .stderr(est.stderr)
                    .samples(est.samples)
                    .against(2.0, (est.value.re - 2.0).abs() <= 4.0 * est.stderr),
            );
        }
    }
    Ok(rows)
}

fn run_tightness(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>, RunError> {
    let grid: Vec<Complex64> = cfg
        .z_grid
        .iter()
        .map(|r| Complex64::new(*r, 0.0))
        .collect();
    let profile = stats::tightness_profile(&cfg.model, cfg.n, &grid, cfg.samples, Seed::new(cfg.seed))?;
    let mut rows = Vec::new();
    for (z, est) in profile {
        let r2 = z.norm_sqr();
        let envelope = 2.0 * r2 / (1.0 - r2);
        let pass = est.value.re <= envelope + 4.0 * est.stderr;
        rows.push(
            CheckRow::complex(format!("tightness_z{}", z.re), est.value)
                .stderr(est.stderr)
                .samples(est.samples)
                .against(envelope, pass),
        );
    }
    Ok(rows)
}

fn run_oracle(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>, RunError> {
    let n = cfg.n;
    let a = cfg.a;
    let radius = cfg.radius;
    let kind = cfg.model;
    let outcomes = stats::sample_map(cfg.samples, Seed::new(cfg.seed), move |s| {
        let base = match kind {
            BaseModelKind::HaarUnitary => BaseModel {
                kind,
                matrix: sampling::sample_haar_unitary(n, s.salted(SALT_BASE))?,
                diagonal: None,
            },
            BaseModelKind::IidPhases(_) => models::sample_base_model(kind, n, s.salted(SALT_BASE))?,
        };
        let v = sampling::sample_unit_vector(n, s.salted(SALT_DIRECTION))?;
        let data = models::spectral_data(&base.matrix, &v)?;
        let f = match kind {
            BaseModelKind::HaarUnitary => CharFn::haar_form(a, data)?,
            BaseModelKind::IidPhases(_) => CharFn::iid_form(a, data)?,
        };
        let disk = Disk::new(Complex64::new(0.0, 0.0), radius)?;
        let zeros = charfn::find_zeros(&f, &disk)?;
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
        let distance = models::hausdorff_distance(&zeros.points, &inside);
        Ok((zeros.len() == inside.len() && distance <= ORACLE_TOL, distance))
    })?;
    let matched = outcomes.iter().filter(|(ok, _)| *ok).count() as f64;
    let fraction = matched / cfg.samples as f64;
    let worst = outcomes.iter().map(|(_, d)| *d).fold(0.0f64, f64::max);
    Ok(vec![
        CheckRow::real("matched_fraction", fraction)
            .stderr(binomial_stderr(fraction, cfg.samples))
            .samples(cfg.samples)
            .against(1.0, fraction == 1.0),
        CheckRow::real("hausdorff_max", worst)
            .samples(cfg.samples)
            .against(ORACLE_TOL, worst <= ORACLE_TOL),
    ])
}

fn run_gaf_compare(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Vec<CheckRow>, RunError> {
    let seed = Seed::new(cfg.seed);
    let model_hist =
        dynamics::disk_count_histogram(cfg.model, cfg.n, cfg.a, cfg.q, cfg.samples, seed.salted(SALT_MODEL_SIDE))?;
    let a_prime = match cfg.model {
        BaseModelKind::HaarUnitary => cfg.a,
        BaseModelKind::IidPhases(_) => cfg.a * std::f64::consts::FRAC_1_SQRT_2,
    };
    let q = cfg.q;
    let gaf_counts: Vec<(usize, TruncationCertificate)> =
        stats::sample_map(cfg.samples, seed.salted(SALT_GAF_SIDE), move |s| {
            let phi = gaf::sample_gaf(a_prime, GAF_ORDER, s)?;
            gaf::gaf_zero_count(&phi, q, s)
        })?;
    let mut gaf_hist = vec![0u64; gaf_counts.iter().map(|(c, _)| c + 1).max().unwrap_or(1)];
    for (c, _) in &gaf_counts {
        gaf_hist[*c] += 1;
    }
    let binding = gaf_counts
        .iter()
        .map(|(_, cert)| cert)
        .min_by(|a, b| a.margin.total_cmp(&b.margin))
        .expect("at least one sample");

    let (tv, ok) = stats::compare_counts(&model_hist, &gaf_hist, cfg.threshold)?;

    let len = model_hist.len().max(gaf_hist.len());
    let mut hist_csv = String::from("count,model_hits,gaf_hits\n");
    for i in 0..len {
        hist_csv.push_str(&format!(
            "{i},{},{}\n",
            model_hist.get(i).copied().unwrap_or(0),
            gaf_hist.get(i).copied().unwrap_or(0)
        ));
    }
    sink.write("histogram.csv", hist_csv.as_bytes())?;
    let mut cert_json = serde_json::to_string_pretty(binding).expect("certificate serializes");
    cert_json.push('\n');
    sink.write("certificate.json", cert_json.as_bytes())?;

    Ok(vec![CheckRow::real("tv_distance", tv)
        .samples(cfg.samples)
        .against(cfg.threshold, ok)])
}

fn run_trajectories(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Vec<CheckRow>, RunError> {
    let n = cfg.n;
    let kind = cfg.model;
    let t_grid = cfg.t_grid.clone();
    let bundles = stats::sample_map(cfg.samples, Seed::new(cfg.seed), move |s| {
        let base = models::sample_base_model(kind, n, s.salted(SALT_BASE))?;
        let v = sampling::sample_unit_vector(n, s.salted(SALT_DIRECTION))?;
        dynamics::trajectories(&base, &v, &t_grid)
    })?;

    let mut csv = Vec::new();
    writeln!(csv, "{}", dynamics::TrajectoryBundle::csv_header())?;
    for (i, bundle) in bundles.iter().enumerate() {
        bundle.write_csv_rows(&mut csv, i as u64)?;
    }
    sink.write("trajectories.csv", &csv)?;

    let max_modulus = bundles
        .iter()
        .flat_map(|b| b.paths.iter().flatten())
        .map(|z| z.norm())
        .fold(0.0f64, f64::max);
    let mut rows = vec![CheckRow::real("max_modulus", max_modulus)
        .samples(cfg.samples)
        .against(1.0, max_modulus <= 1.0 + 1e-12)];

    for (t, name) in [(1.0, "unit_time_deviation"), (-1.0, "reflection_time_deviation")] {
        if let Some(idx) = cfg.t_grid.iter().position(|&g| g == t) {
            let deviation = bundles
                .iter()
                .flat_map(|b| b.slice(idx))
                .map(|z| (z.norm() - 1.0).abs())
                .fold(0.0f64, f64::max);
            rows.push(
                CheckRow::real(name, deviation)
                    .samples(cfg.samples)
                    .against(1e-10, deviation <= 1e-10),
            );
        }
    }
    if let Some(idx) = cfg.t_grid.iter().position(|&g| g == 0.0) {
        let hits = bundles
            .iter()
            .filter(|b| b.slice(idx).iter().filter(|z| z.norm() <= 1e-10).count() == 1)
            .count() as f64;
        let fraction = hits / cfg.samples as f64;
        rows.push(
            CheckRow::real("kernel_fraction", fraction)
                .samples(cfg.samples)
                .against(1.0, fraction == 1.0),
        );
    }
    Ok(rows)
}

fn run_sweep(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Vec<CheckRow>, RunError> {
    let report = dynamics::separation_sweep(
        cfg.model,
        cfg.n,
        cfg.alpha,
        cfg.epsilon,
        cfg.samples,
        Seed::new(cfg.seed),
    )?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    sink.write("sweep.csv", &csv)?;
    Ok(vec![
        CheckRow::real("separated_fraction", report.separated_fraction)
            .stderr(binomial_stderr(report.separated_fraction, cfg.samples))
            .samples(cfg.samples)
            .against(cfg.gate, report.separated_fraction >= cfg.gate),
        CheckRow::real("near_circle_fraction", report.near_circle_fraction)
            .stderr(binomial_stderr(report.near_circle_fraction, cfg.samples))
            .samples(cfg.samples)
            .against(cfg.gate, report.near_circle_fraction >= cfg.gate),
    ])
}

fn run_critical_time(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Vec<CheckRow>, RunError> {
    let report =
        dynamics::critical_time_test(cfg.model, cfg.n, cfg.a, cfg.q, cfg.samples, Seed::new(cfg.seed))?;
    let mut hist_csv = String::from("count,hits\n");
    for (count, hits) in report.histogram.iter().enumerate() {
        hist_csv.push_str(&format!("{count},{hits}\n"));
    }
    sink.write("histogram.csv", hist_csv.as_bytes())?;
    Ok(vec![
        CheckRow::real("p0_hat", report.p0_hat)
            .stderr(binomial_stderr(report.p0_hat, cfg.samples))
            .samples(cfg.samples)
            .against(0.5 * report.p0_bound, report.p0_pass),
        CheckRow::real("p2_hat", report.p2_hat)
            .stderr(binomial_stderr(report.p2_hat, cfg.samples))
            .samples(cfg.samples)
            .against(0.5 * report.p2_bound, report.p2_pass),
    ])
}

fn run_supnorm(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>, RunError> {
    let degree = cfg.degree;
    let radius = cfg.radius;
    let delta = cfg.delta;
    let p = cfg.p;
    let holds = stats::sample_map(cfg.samples, Seed::new(cfg.seed), move |s| {
        let mut rng = s.rng();
        let coeffs: Vec<Complex64> = (0..=degree)
            .map(|_| sampling::complex_gaussian(&mut rng))
            .collect();
        let f = CharFn::from_series(coeffs)?;
        let region = Disk::new(Complex64::new(0.0, 0.0), radius)?;
        charfn::supnorm_integral_check(&f, &region, delta, p)
    })?;
    let hits = holds.iter().filter(|ok| **ok).count() as f64;
    let fraction = hits / cfg.samples as f64;
    Ok(vec![CheckRow::real("holds_fraction", fraction)
        .stderr(binomial_stderr(fraction, cfg.samples))
        .samples(cfg.samples)
        .against(1.0, fraction == 1.0)])
}
