use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::read_json;
use crate::model::MixingMeasure;
use crate::selection::default_omega;

use super::builtin_g0;

/// How the DSC weight `ω_N` is chosen for a sample of size `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaRule {
    LogN,
    Constant(f64),
}

impl OmegaRule {
    pub fn omega(&self, n: usize) -> Result<f64> {
        match *self {
            OmegaRule::LogN => default_omega(n),
            OmegaRule::Constant(w) => Ok(w),
        }
    }

    fn describe(&self) -> String {
        match self {
            OmegaRule::LogN => "log-n".into(),
            OmegaRule::Constant(w) => format!("{w:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub g0: MixingMeasure,
    pub n_min: usize,
    pub n_max: usize,
    pub n_num: usize,
    pub n_rep: usize,
    pub k_fit: usize,
    pub omega_rule: OmegaRule,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub tol: f64,
    pub max_iter: usize,
    pub cov_floor: f64,
    /// Scale of the favorable-initialization perturbations.
    pub spread: f64,
    pub jobs: usize,
}

impl ExperimentConfig {
    /// Desk-scale convergence-rate study: K = 5, N from 10² to 10⁴ on five points, 10 replications.
    pub fn desk_convergence() -> Self {
        Self {
            g0: builtin_g0(),
            n_min: 100,
            n_max: 10_000,
            n_num: 5,
            n_rep: 10,
            k_fit: 5,
            omega_rule: OmegaRule::LogN,
            base_seed: 2025,
            out_dir: PathBuf::from("out"),
            tol: 1e-5,
            max_iter: 2000,
            cov_floor: 1e-8,
            spread: 0.02,
            jobs: 1,
        }
    }

    /// Desk-scale model-selection study: K = 10, N = 5000, 20 replications.
    pub fn desk_selection() -> Self {
        Self {
            n_min: 5000,
            n_max: 5000,
            n_num: 1,
            n_rep: 20,
            k_fit: 10,
            ..Self::desk_convergence()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rep == 0 {
            return Err(Error::InvalidConfig("n_rep must be at least 1".into()));
        }
        if self.n_num == 0 {
            return Err(Error::InvalidConfig("n_num must be at least 1".into()));
        }
        if self.k_fit < self.g0.len() {
            return Err(Error::InvalidConfig(format!(
                "k_fit = {} is below the reference order {}",
                self.k_fit,
                self.g0.len()
            )));
        }
        if self.n_min < 10 * self.k_fit {
            return Err(Error::InvalidConfig(format!(
                "n_min = {} must be at least 10 * k_fit = {}",
                self.n_min,
                10 * self.k_fit
            )));
        }
        if self.n_max < self.n_min {
            return Err(Error::InvalidConfig("n_max must not be below n_min".into()));
        }
        if !(self.spread >= 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig("invalid EM settings".into()));
        }
        if let OmegaRule::Constant(w) = self.omega_rule {
            if !(w > 0.0) {
                return Err(Error::InvalidConfig("omega must be positive".into()));
            }
        }
        Ok(())
    }

    /// Sample sizes log-spaced between `n_min` and `n_max`, rounded to integers.
    pub fn n_grid(&self) -> Vec<usize> {
        if self.n_num == 1 {
            return vec![self.n_min];
        }
        let (lo, hi) = ((self.n_min as f64).log10(), (self.n_max as f64).log10());
        let mut grid: Vec<usize> = (0..self.n_num)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / (self.n_num - 1) as f64;
                10f64.powf(t).round() as usize
            })
            .collect();
        grid.dedup();
        grid
    }

    /// Canonical text form; the basis of the config hash.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_min={}", self.n_min);
        let _ = writeln!(s, "n_max={}", self.n_max);
        let _ = writeln!(s, "n_num={}", self.n_num);
        let _ = writeln!(s, "n_rep={}", self.n_rep);
        let _ = writeln!(s, "k_fit={}", self.k_fit);
        let _ = writeln!(s, "omega={}", self.omega_rule.describe());
        let _ = writeln!(s, "base_seed={}", self.base_seed);
        let _ = writeln!(s, "tol={:?}", self.tol);
        let _ = writeln!(s, "max_iter={}", self.max_iter);
        let _ = writeln!(s, "cov_floor={:?}", self.cov_floor);
        let _ = writeln!(s, "spread={:?}", self.spread);
        let _ = writeln!(
            s,
            "g0={}",
            serde_json::to_string(&self.g0).unwrap_or_default()
        );
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Applies a TOML config file on top of `self`. Relative paths in the file
    /// resolve against `base_dir`.
    pub fn apply_toml(mut self, text: &str, origin: &Path, base_dir: &Path) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() as u64 + 1);
            Error::input(origin, line, e.message().to_string())
        })?;
        if let Some(g) = file.grid {
            self.n_min = g.n_min.unwrap_or(self.n_min);
            self.n_max = g.n_max.unwrap_or(self.n_max);
            self.n_num = g.n_num.unwrap_or(self.n_num);
            self.n_rep = g.n_rep.unwrap_or(self.n_rep);
        }
        if let Some(m) = file.model {
            self.k_fit = m.k_fit.unwrap_or(self.k_fit);
            if let Some(p) = m.g0 {
                let path = base_dir.join(p);
                self.g0 = read_json::<MixingMeasure>(&path)?;
            }
        }
        if let Some(e) = file.em {
            self.tol = e.tol.unwrap_or(self.tol);
            self.max_iter = e.max_iter.unwrap_or(self.max_iter);
            self.cov_floor = e.cov_floor.unwrap_or(self.cov_floor);
            self.spread = e.spread.unwrap_or(self.spread);
        }
        if let Some(s) = file.selection {
            if let Some(o) = s.omega {
                self.omega_rule = match o {
                    OmegaValue::Name(n) if n == "log-n" => OmegaRule::LogN,
                    OmegaValue::Name(n) => {
                        return Err(Error::input(
                            origin,
                            None,
                            format!("unknown omega rule `{n}`"),
                        ))
                    }
                    OmegaValue::Number(w) => OmegaRule::Constant(w),
                };
            }
        }
        if let Some(r) = file.run {
            self.base_seed = r.base_seed.unwrap_or(self.base_seed);
            if let Some(o) = r.out_dir {
                self.out_dir = base_dir.join(o);
            }
            self.jobs = r.jobs.unwrap_or(self.jobs);
        }
        Ok(self)
    }
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    grid: Option<GridSection>,
    model: Option<ModelSection>,
    em: Option<EmSection>,
    selection: Option<SelectionSection>,
    run: Option<RunSection>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    n_min: Option<usize>,
    n_max: Option<usize>,
    n_num: Option<usize>,
    n_rep: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    k_fit: Option<usize>,
    g0: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct EmSection {
    tol: Option<f64>,
    max_iter: Option<usize>,
    cov_floor: Option<f64>,
    spread: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum OmegaValue {
    Number(f64),
    Name(String),
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SelectionSection {
    omega: Option<OmegaValue>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    base_seed: Option<u64>,
    out_dir: Option<PathBuf>,
    jobs: Option<usize>,
}
