//! `key = value` run configuration with per-key provenance, so that every
//! error can echo the line or flag that caused it.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hilo::ansatz::AnsatzParams;
use hilo::solver::{SolverConfig, TimeStep};
use hilo::state::{GasConstants, GuardMargins};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Norms,
    Ansatz,
    Residual,
    Evolve,
    Demo,
    Fit,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Norms, Command::Ansatz, Command::Residual, Command::Evolve, Command::Demo, Command::Fit];

    pub fn name(self) -> &'static str {
        match self {
            Command::Norms => "norms",
            Command::Ansatz => "ansatz",
            Command::Residual => "residual",
            Command::Evolve => "evolve",
            Command::Demo => "demo",
            Command::Fit => "fit",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command '{s}'"))
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("n", "carrier frequency for single-n commands (evolve)"),
    ("n_list", "comma-separated n values for scans"),
    ("delta", "envelope exponent, in (0,1)"),
    ("s", "Sobolev index of the data, > 2"),
    ("sigma", "error index, inside (max{1, s-3/2+delta}, s-1)"),
    ("tau", "upper interpolation index, > s"),
    ("omega", "sign of the phase speed for evolve, +1 or -1"),
    ("rho0", "background density"),
    ("h0", "background enthalpy"),
    ("gamma", "adiabatic exponent, > 1"),
    ("cfl", "Courant number in (0,1) for adaptive steps"),
    ("dt", "fixed time step; overrides cfl when set"),
    ("t_end", "final time"),
    ("dealias", "two-thirds dealiasing, true or false"),
    ("guard_rho", "floor fraction for rho0 + rho"),
    ("guard_h", "floor fraction for h0 + h"),
    ("blowup_factor", "gradient growth factor that ends a run"),
    ("stop_at_doubling", "stop when the s-norm doubles, true or false"),
    ("snapshots", "snapshots per unit time"),
    ("band_x", "scaled envelope band kept along x by solver grids"),
    ("band_y", "scaled envelope band kept around the carrier along y"),
    ("trials", "random fields per inequality check"),
    ("lab_grid", "grid size of the inequality lab, a power of two"),
    ("seed", "seed for randomized checks"),
    ("threads", "worker threads"),
    ("out", "output root directory"),
    ("from", "result directory to re-fit (fit command)"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    Default,
    Line { number: usize, text: String },
    Flag { value: String },
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => write!(f, "default"),
            Origin::Line { number, text } => write!(f, "line {number}: `{text}`"),
            Origin::Flag { value } => write!(f, "flag value `{value}`"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{origin}: {message}")]
pub struct ConfigError {
    pub key: Option<String>,
    pub origin: Origin,
    pub message: String,
}

impl ConfigError {
    fn new(key: Option<&str>, origin: Origin, message: impl Into<String>) -> Self {
        Self { key: key.map(str::to_string), origin, message: message.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub params: AnsatzParams,
    pub constants: GasConstants,
    pub solver: SolverConfig,
    pub n_list: Vec<u32>,
    pub tau: f64,
    pub snapshots: usize,
    pub band_x: f64,
    pub band_y: f64,
    pub trials: usize,
    pub lab_grid: usize,
    pub seed: u64,
    pub threads: usize,
    pub output_dir: PathBuf,
    pub from: Option<PathBuf>,
    #[serde(skip)]
    origins: HashMap<String, Origin>,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let params = AnsatzParams::default();
        Self {
            command,
            params,
            constants: GasConstants::default(),
            solver: SolverConfig { monitor_indices: vec![params.s], doubling_index: params.s, ..SolverConfig::default() },
            n_list: vec![16, 32, 64, 128],
            tau: params.tau(),
            snapshots: 16,
            band_x: 36.0,
            band_y: 12.0,
            trials: 100,
            lab_grid: 64,
            seed: 0,
            threads: 1,
            output_dir: PathBuf::from("results"),
            from: None,
            origins: HashMap::new(),
        }
    }

    pub fn origin(&self, key: &str) -> Origin {
        self.origins.get(key).cloned().unwrap_or(Origin::Default)
    }

    fn parse<T: FromStr>(key: &str, value: &str, origin: &Origin, what: &str) -> Result<T, ConfigError> {
        value
            .parse()
            .map_err(|_| ConfigError::new(Some(key), origin.clone(), format!("{key} expects {what}, got '{value}'")))
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        let value = value.trim();
        let num = |o: &Origin| Self::parse::<f64>(key, value, o, "a number");
        let int = |o: &Origin| Self::parse::<usize>(key, value, o, "a non-negative integer");
        let flag = |o: &Origin| Self::parse::<bool>(key, value, o, "true or false");
        let o = &origin;
        match key {
            "n" => self.params.n = Self::parse(key, value, o, "a positive integer")?,
            "n_list" => {
                self.n_list = value
                    .split(',')
                    .map(|v| Self::parse::<u32>(key, v.trim(), o, "comma-separated positive integers"))
                    .collect::<Result<_, _>>()?
            }
            "delta" => self.params.delta = num(o)?,
            "s" => {
                self.params.s = num(o)?;
                if !self.origins.contains_key("tau") {
                    self.tau = self.params.s.floor() + 1.0;
                }
            }
            "sigma" => self.params.sigma = num(o)?,
            "tau" => self.tau = num(o)?,
            "omega" => self.params.omega = num(o)?,
            "rho0" => self.constants.rho0 = num(o)?,
            "h0" => self.constants.h0 = num(o)?,
            "gamma" => self.constants.gamma = num(o)?,
            "cfl" => {
                let c = num(o)?;
                if !self.origins.contains_key("dt") {
                    self.solver.time_step = TimeStep::Cfl(c)
                }
            }
            "dt" => self.solver.time_step = TimeStep::Fixed(num(o)?),
            "t_end" => self.solver.t_end = num(o)?,
            "dealias" => self.solver.dealias = flag(o)?,
            "guard_rho" => self.solver.guard.rho_fraction = num(o)?,
            "guard_h" => self.solver.guard.h_fraction = num(o)?,
            "blowup_factor" => self.solver.blowup_gradient_factor = num(o)?,
            "stop_at_doubling" => self.solver.stop_at_doubling = flag(o)?,
            "snapshots" => self.snapshots = int(o)?,
            "band_x" => self.band_x = num(o)?,
            "band_y" => self.band_y = num(o)?,
            "trials" => self.trials = int(o)?,
            "lab_grid" => self.lab_grid = int(o)?,
            "seed" => self.seed = Self::parse(key, value, o, "a non-negative integer")?,
            "threads" => self.threads = int(o)?,
            "out" => self.output_dir = PathBuf::from(value),
            "from" => self.from = Some(PathBuf::from(value)),
            _ => return Err(ConfigError::new(None, origin, format!("unknown key '{key}'"))),
        }
        self.origins.insert(key.to_string(), origin);
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = Origin::Line { number: i + 1, text: raw.trim().to_string() };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(None, origin.clone(), "expected `key = value`"))?;
            self.set(key.trim(), value, origin)?;
        }
        Ok(())
    }

    /// Re-validates every module precondition, blaming the key that set the
    /// offending value.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        self.solver.monitor_indices = vec![self.params.s];
        self.solver.doubling_index = self.params.s;
        let blame = |cfg: &Self, key: &str, msg: String| ConfigError::new(Some(key), cfg.origin(key), msg);
        if let Err(e) = self.params.validate() {
            let msg = e.to_string();
            let key = ["delta", "sigma", "omega", "n"]
                .into_iter()
                .find(|k| msg.contains(&format!("{k} ")))
                .unwrap_or("s");
            return Err(blame(self, key, msg));
        }
        if let Err(e) = GasConstants::new(self.constants.rho0, self.constants.h0, self.constants.gamma) {
            let msg = e.to_string();
            let key = ["rho0", "h0"].into_iter().find(|k| msg.contains(k)).unwrap_or("gamma");
            return Err(blame(self, key, msg));
        }
        if let Err(e) = self.solver.validate() {
            let msg = e.to_string();
            let key = ["dt", "cfl"].into_iter().find(|k| msg.contains(k)).unwrap_or("t_end");
            return Err(blame(self, key, msg));
        }
        let g = self.solver.guard;
        for (key, v) in [("guard_rho", g.rho_fraction), ("guard_h", g.h_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(blame(self, key, format!("{key} must lie in (0,1), got {v}")));
            }
        }
        if !(self.solver.blowup_gradient_factor > 1.0) {
            return Err(blame(self, "blowup_factor", "blowup_factor must exceed 1".into()));
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|n| *n < 2) {
            return Err(blame(self, "n_list", "n_list needs values >= 2".into()));
        }
        if !(self.tau > self.params.s) {
            return Err(blame(self, "tau", format!("tau = {} must exceed s = {}", self.tau, self.params.s)));
        }
        if self.snapshots == 0 {
            return Err(blame(self, "snapshots", "snapshots must be positive".into()));
        }
        for (key, v) in [("band_x", self.band_x), ("band_y", self.band_y)] {
            if !(v > 0.0) {
                return Err(blame(self, key, format!("{key} must be positive, got {v}")));
            }
        }
        if self.trials == 0 {
            return Err(blame(self, "trials", "trials must be positive".into()));
        }
        if self.lab_grid < 16 || !self.lab_grid.is_power_of_two() {
            return Err(blame(self, "lab_grid", format!("lab_grid must be a power of two >= 16, got {}", self.lab_grid)));
        }
        if self.threads == 0 {
            return Err(blame(self, "threads", "threads must be positive".into()));
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then flags in order.
    pub fn load(command: Command, file: Option<&Path>, flags: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults(command);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                ConfigError::new(None, Origin::Default, format!("cannot read {}: {e}", path.display()))
            })?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in flags {
            cfg.set(k, v, Origin::Flag { value: v.clone() })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Snapshot times `k / snapshots` up to `t_end`, always including it.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let t_end = self.solver.t_end;
        let mut v: Vec<f64> = (0..)
            .map(|k| k as f64 / self.snapshots as f64)
            .take_while(|t| *t < t_end - 1e-12)
            .collect();
        v.push(t_end);
        v
    }

    pub fn guard(&self) -> GuardMargins {
        self.solver.guard
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_text(text: &str) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::defaults(Command::Demo);
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = from_text("").unwrap();
        assert_eq!(c.params.s, 2.5);
        assert_eq!(c.params.delta, 0.25);
        assert_eq!(c.params.sigma, 1.45);
        assert_eq!(c.n_list, vec![16, 32, 64, 128]);
        assert_eq!(c.constants, GasConstants::new(1.0, 1.0, 1.4).unwrap());
        assert_eq!(c.tau, 3.0);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn comments_and_overrides() {
        let c = from_text("# header\n\nn_list = 16, 32,64 # trailing\ngamma=1.6\ndealias = false\n").unwrap();
        assert_eq!(c.n_list, vec![16, 32, 64]);
        assert_eq!(c.constants.gamma, 1.6);
        assert!(!c.solver.dealias);
    }

    #[test]
    fn delta_out_of_range_echoes_line() {
        let err = from_text("s = 2.5\ndelta = 1.5\n").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("delta"));
        assert!(err.message.contains("delta must lie in (0,1)"), "{err}");
        assert!(err.to_string().contains("line 2: `delta = 1.5`"), "{err}");
    }

    #[test]
    fn sigma_window_violation() {
        let err = from_text("sigma = 1.0").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("sigma"));
        assert!(err.message.contains("(1.25, 1.5)"), "{err}");
        assert!(err.to_string().contains("line 1: `sigma = 1.0`"));
    }

    #[test]
    fn unknown_key_and_type_mismatch() {
        let err = from_text("foo = 3").unwrap_err();
        assert!(err.to_string().contains("unknown key 'foo'"));
        assert!(err.to_string().contains("line 1: `foo = 3`"));
        let err = from_text("\ns = abc").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(err.message.contains("expects a number"));
        assert!(from_text("just words").unwrap_err().message.contains("key = value"));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "gamma = 1.6\nseed = 4\n").unwrap();
        let c = RunConfig::load(Command::Norms, Some(&path), &[("gamma".into(), "1.3".into())]).unwrap();
        assert_eq!(c.constants.gamma, 1.3);
        assert_eq!(c.seed, 4);
        let err = RunConfig::load(Command::Norms, Some(&path), &[("gamma".into(), "0.9".into())]).unwrap_err();
        assert_eq!(err.origin, Origin::Flag { value: "0.9".into() });
    }

    #[test]
    fn every_key_is_settable() {
        let sample = |k: &str| match k {
            "n_list" => "16,32,64,128",
            "dealias" | "stop_at_doubling" => "true",
            "out" | "from" => "somewhere",
            "omega" => "-1",
            "n" | "snapshots" | "trials" | "threads" | "seed" => "16",
            "lab_grid" => "32",
            "tau" => "3",
            "cfl" => "0.5",
            "dt" => "0.01",
            "guard_rho" | "guard_h" => "0.4",
            "delta" => "0.25",
            "s" => "2.5",
            "sigma" => "1.45",
            "gamma" => "1.4",
            _ => "2",
        };
        let mut c = RunConfig::defaults(Command::Demo);
        for (k, _) in KEYS {
            c.set(k, sample(k), Origin::Default).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        c.validate().unwrap();
        assert_eq!(c.solver.time_step, TimeStep::Fixed(0.01));
    }

    #[test]
    fn snapshot_times_end_at_t_end() {
        let mut c = RunConfig::defaults(Command::Evolve);
        assert_eq!(c.snapshot_times().len(), 17);
        c.solver.t_end = 0.3;
        c.snapshots = 10;
        let t = c.snapshot_times();
        assert_eq!(t.len(), 4);
        assert_eq!(*t.last().unwrap(), 0.3);
    }
}
