//! Plain key=value experiment configs. Every key must be known to the
//! selected experiment and every numeric field is checked against the
//! owning operation's preconditions before any sampling starts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_complex::Complex64;
use spectra_core::models::BaseModelKind;
use spectra_core::sampling::CircularLaw;
use spectra_core::{gaf, stats};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Moments,
    Coefficients,
    Tightness,
    OracleEquivalence,
    GafCompare,
    Trajectories,
    SeparationSweep,
    CriticalTime,
    SupnormCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Moments,
        Experiment::Coefficients,
        Experiment::Tightness,
        Experiment::OracleEquivalence,
        Experiment::GafCompare,
        Experiment::Trajectories,
        Experiment::SeparationSweep,
        Experiment::CriticalTime,
        Experiment::SupnormCheck,
    ];

    pub fn parse(s: &str) -> Option<Experiment> {
        Experiment::ALL.iter().copied().find(|e| e.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Moments => "moments",
            Experiment::Coefficients => "coefficients",
            Experiment::Tightness => "tightness",
            Experiment::OracleEquivalence => "oracle-equivalence",
            Experiment::GafCompare => "gaf-compare",
            Experiment::Trajectories => "trajectories",
            Experiment::SeparationSweep => "separation-sweep",
            Experiment::CriticalTime => "critical-time",
            Experiment::SupnormCheck => "supnorm-check",
        }
    }

    /// Artifact files this experiment writes, with their schema line.
    pub fn artifacts(self) -> Vec<(&'static str, &'static str)> {
        let results = (
            "results.csv",
            "experiment_id,quantity,value_re,value_im,stderr,samples,reference_value,pass",
        );
        let summary = (
            "summary.json",
            "JSON: experiment, pass, config echo, checks, wall_time_seconds, artifacts",
        );
        let mut files = vec![results];
        match self {
            Experiment::GafCompare => {
                files.push(("histogram.csv", "count,model_hits,gaf_hits"));
                files.push((
                    "certificate.json",
                    "JSON: q, M, margin, tailbound, valid (smallest-margin certificate of the run)",
                ));
            }
            Experiment::CriticalTime => files.push(("histogram.csv", "count,hits")),
            Experiment::SeparationSweep => files.push((
                "sweep.csv",
                "n,t,alpha,inner_count,annulus_count,outer_count,pass",
            )),
            Experiment::Trajectories => {
                files.push(("trajectories.csv", "sample_id,t,path_id,re,im"))
            }
            _ => {}
        }
        files.push(summary);
        files
    }
}

/// Command line overrides applied on top of the file.
#[derive(Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// Fully resolved run configuration. Fields not used by the selected
/// experiment keep their defaults and are absent from the echo.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: BaseModelKind,
    pub n: usize,
    pub a: Complex64,
    pub q: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub t_grid: Vec<f64>,
    pub z_grid: Vec<f64>,
    pub l_max: u32,
    pub k_max: usize,
    pub radius: f64,
    pub delta: f64,
    pub p: u32,
    pub degree: usize,
    pub gate: f64,
    pub threshold: f64,
    /// Resolved key=value view of everything above, for the summary.
    pub echo: BTreeMap<String, String>,
}

pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value, got `{line}`", idx + 1));
        };
        let key = k.trim().to_owned();
        let value = v.trim().to_owned();
        if key.is_empty() || value.is_empty() {
            return Err(format!("line {}: empty key or value", idx + 1));
        }
        if map.insert(key, value).is_some() {
            return Err(format!("line {}: duplicate key", idx + 1));
        }
    }
    if map.is_empty() {
        return Err("config file defines no keys".to_owned());
    }
    Ok(map)
}

/// Key store that tracks consumption so leftovers can be rejected.
struct Keys(BTreeMap<String, String>);

impl Keys {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String, String> {
        self.take(key)
            .ok_or_else(|| format!("missing required key `{key}`"))
    }

    fn finish(self, experiment: Experiment) -> Result<(), String> {
        match self.0.into_keys().next() {
            None => Ok(()),
            Some(key) => Err(format!(
                "unknown key `{key}` for experiment {}",
                experiment.name()
            )),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("key `{key}`: cannot parse `{value}`"))
}

fn parse_complex(key: &str, value: &str) -> Result<Complex64, String> {
    let Some((re, im)) = value.split_once(',') else {
        return Err(format!("key `{key}`: complex values are written re,im"));
    };
    Ok(Complex64::new(
        parse_num::<f64>(key, re.trim())?,
        parse_num::<f64>(key, im.trim())?,
    ))
}

/// Either `start:stop:count` or a comma-separated list.
fn parse_grid(key: &str, value: &str) -> Result<Vec<f64>, String> {
    if value.contains(':') {
        let parts: Vec<&str> = value.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("key `{key}`: grid specs are start:stop:count"));
        }
        let start: f64 = parse_num(key, parts[0].trim())?;
        let stop: f64 = parse_num(key, parts[1].trim())?;
        let count: usize = parse_num(key, parts[2].trim())?;
        if count < 2 || !(start < stop) {
            return Err(format!("key `{key}`: need start < stop and count >= 2"));
        }
        let step = (stop - start) / (count - 1) as f64;
        return Ok((0..count)
            .map(|i| {
                if i + 1 == count {
                    stop
                } else {
                    start + step * i as f64
                }
            })
            .collect());
    }
    value
        .split(',')
        .map(|tok| parse_num::<f64>(key, tok.trim()))
        .collect()
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn resolve(
    map: BTreeMap<String, String>,
    overrides: Overrides,
) -> Result<ExperimentConfig, String> {
    let mut keys = Keys(map);
    let experiment_name = keys.require("experiment")?;
    let experiment = Experiment::parse(&experiment_name).ok_or_else(|| {
        let known: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
        format!(
            "key `experiment`: `{experiment_name}` is not one of {}",
            known.join(", ")
        )
    })?;

    let mut echo = BTreeMap::new();
    echo.insert("experiment".to_owned(), experiment.name().to_owned());

    let seed = match overrides.seed {
        Some(s) => {
            keys.take("seed");
            s
        }
        None => match keys.take("seed") {
            Some(v) => parse_num("seed", &v)?,
            None => 1,
        },
    };
    echo.insert("seed".to_owned(), seed.to_string());

    let out_dir = match overrides.out {
        Some(dir) => {
            keys.take("out");
            dir
        }
        None => keys.take("out").map(PathBuf::from).unwrap_or_else(|| ".".into()),
    };
    echo.insert("out".to_owned(), out_dir.display().to_string());

    let workers = match overrides.workers {
        Some(w) => {
            keys.take("workers");
            w
        }
        None => match keys.take("workers") {
            Some(v) => parse_num("workers", &v)?,
            None => 0,
        },
    };
    echo.insert("workers".to_owned(), workers.to_string());

    let mut cfg = ExperimentConfig {
        experiment,
        model: BaseModelKind::HaarUnitary,
        n: 0,
        a: Complex64::new(1.0, 0.0),
        q: 0.0,
        alpha: 0.0,
        epsilon: 0.0,
        samples: 0,
        seed,
        workers,
        out_dir,
        t_grid: Vec::new(),
        z_grid: Vec::new(),
        l_max: 12,
        k_max: 4,
        radius: 0.0,
        delta: 0.0,
        p: 2,
        degree: 10,
        gate: 0.9,
        threshold: 0.05,
        echo,
    };

    let uses_model = !matches!(
        experiment,
        Experiment::Moments | Experiment::SupnormCheck
    );
    if uses_model {
        resolve_model(&mut cfg, &mut keys)?;
    }
    if experiment != Experiment::SupnormCheck {
        cfg.n = parse_num("n", &keys.require("n")?)?;
        if cfg.n == 0 {
            return Err("key `n`: must be at least 1".to_owned());
        }
        cfg.echo.insert("n".to_owned(), cfg.n.to_string());
    }
    cfg.samples = parse_num("samples", &keys.require("samples")?)?;
    if cfg.samples == 0 {
        return Err("key `samples`: must be at least 1".to_owned());
    }
    cfg.echo
        .insert("samples".to_owned(), cfg.samples.to_string());

    match experiment {
        Experiment::Moments => {
            if let Some(v) = keys.take("l_max") {
                cfg.l_max = parse_num("l_max", &v)?;
            }
            if cfg.l_max == 0 {
                return Err("key `l_max`: must be at least 1".to_owned());
            }
            cfg.echo.insert("l_max".to_owned(), cfg.l_max.to_string());
        }
        Experiment::Coefficients => {
            if let Some(v) = keys.take("k_max") {
                cfg.k_max = parse_num("k_max", &v)?;
            }
            if cfg.k_max == 0 || cfg.k_max > stats::MAX_COEFF_ORDER {
                return Err(format!(
                    "key `k_max`: must lie in 1..={}",
                    stats::MAX_COEFF_ORDER
                ));
            }
            cfg.echo.insert("k_max".to_owned(), cfg.k_max.to_string());
        }
        Experiment::Tightness => {
            cfg.z_grid = match keys.take("z_grid") {
                Some(v) => parse_grid("z_grid", &v)?,
                None => vec![0.1, 0.3, 0.5, 0.7, 0.9],
            };
            if cfg.z_grid.is_empty()
                || cfg.z_grid.iter().any(|r| !(*r > 0.0 && *r <= 0.95))
            {
                return Err("key `z_grid`: radii must lie in (0, 0.95]".to_owned());
            }
            cfg.echo.insert(
                "z_grid".to_owned(),
                cfg.z_grid
                    .iter()
                    .map(|r| fmt_f64(*r))
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        Experiment::OracleEquivalence => {
            resolve_amplitude(&mut cfg, &mut keys)?;
            cfg.radius = match keys.take("radius") {
                Some(v) => parse_num("radius", &v)?,
                None => 0.9,
            };
            if !(cfg.radius > 0.0 && cfg.radius <= 0.99) {
                return Err("key `radius`: must lie in (0, 0.99]".to_owned());
            }
            cfg.echo.insert("radius".to_owned(), fmt_f64(cfg.radius));
        }
        Experiment::GafCompare => {
            resolve_amplitude(&mut cfg, &mut keys)?;
            resolve_q(&mut cfg, &mut keys)?;
            if let Some(v) = keys.take("threshold") {
                cfg.threshold = parse_num("threshold", &v)?;
            }
            if !(cfg.threshold > 0.0) {
                return Err("key `threshold`: must be positive".to_owned());
            }
            cfg.echo
                .insert("threshold".to_owned(), fmt_f64(cfg.threshold));
        }
        Experiment::Trajectories => {
            cfg.t_grid = parse_grid("t_grid", &keys.require("t_grid")?)?;
            if cfg.t_grid.iter().any(|t| !t.is_finite() || t.abs() > 1.0) {
                return Err("key `t_grid`: times must lie in [-1, 1]".to_owned());
            }
            if cfg.t_grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err("key `t_grid`: must be strictly increasing".to_owned());
            }
            cfg.echo.insert(
                "t_grid".to_owned(),
                cfg.t_grid
                    .iter()
                    .map(|t| fmt_f64(*t))
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        Experiment::SeparationSweep => {
            cfg.alpha = parse_num("alpha", &keys.require("alpha")?)?;
            cfg.epsilon = parse_num("epsilon", &keys.require("epsilon")?)?;
            if cfg.n < 16 {
                return Err("key `n`: the sweep needs n >= 16".to_owned());
            }
            if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
                return Err("key `alpha`: must be positive".to_owned());
            }
            if !(cfg.epsilon > 0.0 && cfg.epsilon < cfg.alpha) {
                return Err("key `epsilon`: must lie in (0, alpha)".to_owned());
            }
            if (cfg.n as f64).powf(-0.5 + cfg.alpha) > 1.0 {
                return Err("key `alpha`: n^(-1/2 + alpha) exceeds 1".to_owned());
            }
            if let Some(v) = keys.take("gate") {
                cfg.gate = parse_num("gate", &v)?;
            }
            if !(cfg.gate > 0.0 && cfg.gate <= 1.0) {
                return Err("key `gate`: must lie in (0, 1]".to_owned());
            }
            cfg.echo.insert("alpha".to_owned(), fmt_f64(cfg.alpha));
            cfg.echo.insert("epsilon".to_owned(), fmt_f64(cfg.epsilon));
            cfg.echo.insert("gate".to_owned(), fmt_f64(cfg.gate));
        }
        Experiment::CriticalTime => {
            resolve_amplitude(&mut cfg, &mut keys)?;
            resolve_q(&mut cfg, &mut keys)?;
            // the limiting-model bounds must exist for this (a, q)
            let a_prime = match cfg.model {
                BaseModelKind::HaarUnitary => cfg.a,
                BaseModelKind::IidPhases(_) => cfg.a * std::f64::consts::FRAC_1_SQRT_2,
            };
            gaf::lemma_event_probabilities(a_prime, cfg.q, 2.0 * a_prime.norm())
                .map_err(|e| format!("key `q`: {e}"))?;
        }
        Experiment::SupnormCheck => {
            if let Some(v) = keys.take("degree") {
                cfg.degree = parse_num("degree", &v)?;
            }
            if cfg.degree == 0 {
                return Err("key `degree`: must be at least 1".to_owned());
            }
            cfg.radius = match keys.take("radius") {
                Some(v) => parse_num("radius", &v)?,
                None => 0.5,
            };
            if !(cfg.radius > 0.0 && cfg.radius.is_finite()) {
                return Err("key `radius`: must be positive".to_owned());
            }
            cfg.delta = match keys.take("delta") {
                Some(v) => parse_num("delta", &v)?,
                None => 0.2,
            };
            if !(cfg.delta > 0.0 && cfg.delta.is_finite()) {
                return Err("key `delta`: must be positive".to_owned());
            }
            if let Some(v) = keys.take("p") {
                cfg.p = parse_num("p", &v)?;
            }
            if cfg.p == 0 {
                return Err("key `p`: must be at least 1".to_owned());
            }
            cfg.echo.insert("degree".to_owned(), cfg.degree.to_string());
            cfg.echo.insert("radius".to_owned(), fmt_f64(cfg.radius));
            cfg.echo.insert("delta".to_owned(), fmt_f64(cfg.delta));
            cfg.echo.insert("p".to_owned(), cfg.p.to_string());
        }
    }

    keys.finish(experiment)?;
    Ok(cfg)
}

fn resolve_amplitude(cfg: &mut ExperimentConfig, keys: &mut Keys) -> Result<(), String> {
    if let Some(v) = keys.take("a") {
        cfg.a = parse_complex("a", &v)?;
    }
    if !cfg.a.re.is_finite() || !cfg.a.im.is_finite() || cfg.a.norm() == 0.0 {
        return Err("key `a`: must be finite and nonzero".to_owned());
    }
    cfg.echo
        .insert("a".to_owned(), format!("{},{}", cfg.a.re, cfg.a.im));
    Ok(())
}

fn resolve_q(cfg: &mut ExperimentConfig, keys: &mut Keys) -> Result<(), String> {
    cfg.q = parse_num("q", &keys.require("q")?)?;
    if !(cfg.q > 0.0 && cfg.q < 1.0) {
        return Err("key `q`: must lie in (0, 1)".to_owned());
    }
    cfg.echo.insert("q".to_owned(), fmt_f64(cfg.q));
    Ok(())
}

fn resolve_model(cfg: &mut ExperimentConfig, keys: &mut Keys) -> Result<(), String> {
    let model = keys.take("model").unwrap_or_else(|| "haar".to_owned());
    match model.as_str() {
        "haar" => {
            cfg.model = BaseModelKind::HaarUnitary;
            cfg.echo.insert("model".to_owned(), "haar".to_owned());
            Ok(())
        }
        "vdv" => {
            let law_name = keys.take("law").unwrap_or_else(|| "uniform".to_owned());
            let law = match law_name.as_str() {
                "uniform" => CircularLaw::UniformCircle,
                "wrapped-normal" => {
                    let mu = match keys.take("mu") {
                        Some(v) => parse_num("mu", &v)?,
                        None => 0.0,
                    };
                    let sigma2 = parse_num("sigma2", &keys.require("sigma2")?)?;
                    cfg.echo.insert("mu".to_owned(), fmt_f64(mu));
                    cfg.echo.insert("sigma2".to_owned(), fmt_f64(sigma2));
                    CircularLaw::WrappedNormal { mu, sigma2 }
                }
                "wrapped-cauchy" => {
                    let x0 = match keys.take("x0") {
                        Some(v) => parse_num("x0", &v)?,
                        None => 0.0,
                    };
                    let gamma = parse_num("gamma", &keys.require("gamma")?)?;
                    cfg.echo.insert("x0".to_owned(), fmt_f64(x0));
                    cfg.echo.insert("gamma".to_owned(), fmt_f64(gamma));
                    CircularLaw::WrappedCauchy { x0, gamma }
                }
                other => {
                    return Err(format!(
                        "key `law`: `{other}` is not uniform, wrapped-normal, or wrapped-cauchy"
                    ))
                }
            };
            cfg.model = BaseModelKind::IidPhases(law);
            cfg.echo.insert("model".to_owned(), "vdv".to_owned());
            cfg.echo.insert("law".to_owned(), law_name);
            Ok(())
        }
        other => Err(format!("key `model`: `{other}` is not haar or vdv")),
    }
}

/// The phase-decay gate for the iid-phase model: called after `n` is
/// known, once per resolve.
pub fn validate_model_gate(cfg: &ExperimentConfig) -> Result<(), String> {
    if let BaseModelKind::IidPhases(law) = cfg.model {
        stats::validate_phase_law(&law, cfg.n).map_err(|e| format!("key `law`: {e}"))?;
    }
    Ok(())
}
