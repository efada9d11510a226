use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use oqs::algebra::{c, hermiticity_residual, Operator};
use oqs::bath::{BathModel, ChannelMatrix, Tabulated};
use oqs::tcl2::{PropagateOptions, SystemModel};

/// `[re, im]` rows.
pub type CMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical { kind: &'static str, message: String },
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Io(m) => write!(f, "{m}"),
            CliError::Numerical { kind, message } => write!(f, "{kind}: {message}"),
        }
    }
}

impl From<oqs::Error> for CliError {
    fn from(e: oqs::Error) -> Self {
        match &e {
            oqs::Error::Singular(_) => CliError::Numerical {
                kind: "singular",
                message: e.to_string(),
            },
            oqs::Error::NoConvergence(_) => CliError::Numerical {
                kind: "no_convergence",
                message: e.to_string(),
            },
            oqs::Error::Numerical(_) => CliError::Numerical {
                kind: "numerical",
                message: e.to_string(),
            },
            oqs::Error::Io(_) | oqs::Error::Csv(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub system: Option<SystemSpec>,
    pub bath: Option<BathSpec>,
    #[serde(default)]
    pub run: RunSpec,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub hamiltonian: CMatrix,
    pub couplings: Vec<CMatrix>,
}

#[derive(Deserialize, Debug)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BathSpec {
    WhiteNoise { strength: CMatrix },
    Ou { strength: CMatrix, lambda: f64 },
    Thermal { gamma0: Vec<f64>, cutoff: f64, temperature: f64 },
    Tabulated { path: PathBuf },
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub times: Option<Vec<f64>>,
    pub t_max: Option<f64>,
    pub points: Option<usize>,
    /// `"full"` (default) or `"stationary"`.
    pub mode: Option<String>,
    pub initial_state: Option<CMatrix>,
    pub rtol: Option<f64>,
    pub seed: Option<u64>,
    pub x1: Option<CMatrix>,
    pub x2: Option<CMatrix>,
    pub t2: Option<f64>,
    pub correction: Option<bool>,
    pub frequency_points: Option<usize>,
    pub liouvillian_csv: Option<PathBuf>,
    pub seeds: Option<usize>,
    pub g: Option<f64>,
    pub horizon: Option<f64>,
}

pub struct Loaded {
    pub path: PathBuf,
    text: String,
    pub file: ModelFile,
}

fn to_operator(m: &CMatrix, what: &str) -> Result<Operator, String> {
    let d = m.len();
    if d == 0 {
        return Err(format!("{what} is empty"));
    }
    if let Some((r, row)) = m.iter().enumerate().find(|(_, row)| row.len() != d) {
        return Err(format!("{what} row {r} has {} entries, expected {d}", row.len()));
    }
    Ok(Operator::from_fn(d, d, |i, j| c(m[i][j][0], m[i][j][1])))
}

impl Loaded {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        })?;
        Ok(Loaded {
            path: path.to_path_buf(),
            text,
            file,
        })
    }

    /// First line mentioning `"key"`, 1-based; 1 when absent.
    pub fn line_of(&self, key: &str) -> usize {
        let pat = format!("\"{key}\"");
        self.text.lines().position(|l| l.contains(&pat)).map_or(1, |p| p + 1)
    }

    pub fn invalid(&self, key: &str, msg: impl fmt::Display) -> CliError {
        CliError::Validation(format!("{}:{}: {msg}", self.path.display(), self.line_of(key)))
    }

    fn operator(&self, m: &CMatrix, key: &str, what: &str) -> CliResult<Operator> {
        to_operator(m, what).map_err(|e| self.invalid(key, e))
    }

    fn hermitian(&self, m: &CMatrix, key: &str, what: &str) -> CliResult<Operator> {
        let op = self.operator(m, key, what)?;
        let r = hermiticity_residual(&op);
        let scale = op.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        if r > 1e-10 * scale {
            return Err(self.invalid(key, format!("{what} is not Hermitian: max|X - X^dag| = {r:e}")));
        }
        Ok(op)
    }

    fn channel_matrix(&self, m: &CMatrix, key: &str) -> CliResult<ChannelMatrix> {
        self.operator(m, key, "bath strength")
    }

    pub fn bath(&self) -> CliResult<BathModel> {
        let spec = self
            .file
            .bath
            .as_ref()
            .ok_or_else(|| self.invalid("bath", "model file has no bath section"))?;
        let b = match spec {
            BathSpec::WhiteNoise { strength } => BathModel::white_noise(self.channel_matrix(strength, "strength")?),
            BathSpec::Ou { strength, lambda } => BathModel::ou(self.channel_matrix(strength, "strength")?, *lambda),
            BathSpec::Thermal {
                gamma0,
                cutoff,
                temperature,
            } => BathModel::thermal(gamma0.clone(), *cutoff, *temperature),
            BathSpec::Tabulated { path } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    self.path.parent().unwrap_or(Path::new(".")).join(path)
                };
                Tabulated::from_csv(&full).map(BathModel::Tabulated)
            }
        };
        b.map_err(|e| match CliError::from(e) {
            CliError::Validation(m) => self.invalid("bath", m),
            other => other,
        })
    }

    pub fn system_model(&self) -> CliResult<SystemModel> {
        let sys = self
            .file
            .system
            .as_ref()
            .ok_or_else(|| self.invalid("system", "model file has no system section"))?;
        let h = self.hermitian(&sys.hamiltonian, "hamiltonian", "system.hamiltonian")?;
        let mut ls = Vec::with_capacity(sys.couplings.len());
        for (k, l) in sys.couplings.iter().enumerate() {
            let op = self.hermitian(l, "couplings", &format!("system.couplings[{k}]"))?;
            if op.nrows() != h.nrows() {
                return Err(self.invalid(
                    "couplings",
                    format!("system.couplings[{k}] is {0}x{0}, expected {1}x{1}", op.nrows(), h.nrows()),
                ));
            }
            ls.push(op);
        }
        let bath = self.bath()?;
        SystemModel::new(h, ls, bath).map_err(|e| match CliError::from(e) {
            CliError::Validation(m) => self.invalid("system", m),
            other => other,
        })
    }

    pub fn times(&self, default_t_max: f64, default_points: usize) -> CliResult<Vec<f64>> {
        let run = &self.file.run;
        if let Some(t) = &run.times {
            if t.is_empty() || t.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || t.windows(2).any(|w| w[1] < w[0]) {
                return Err(self.invalid("times", "run.times must be non-empty, finite, non-negative and ascending"));
            }
            return Ok(t.clone());
        }
        let t_max = run.t_max.unwrap_or(default_t_max);
        let n = run.points.unwrap_or(default_points);
        if !(t_max > 0.0 && t_max.is_finite()) || n < 2 {
            return Err(self.invalid("run", "run.t_max must be positive and run.points at least 2"));
        }
        Ok((0..n).map(|k| t_max * k as f64 / (n - 1) as f64).collect())
    }

    pub fn options(&self, tol: Option<f64>) -> CliResult<PropagateOptions> {
        let mut o = match self.file.run.mode.as_deref() {
            None | Some("full") => PropagateOptions::default(),
            Some("stationary") => PropagateOptions::stationary(),
            Some(other) => {
                return Err(self.invalid("mode", format!("run.mode must be \"full\" or \"stationary\", got {other:?}")))
            }
        };
        if let Some(r) = tol.or(self.file.run.rtol) {
            if !(r > 0.0) {
                return Err(self.invalid("rtol", "integration tolerance must be positive"));
            }
            o.rtol = r;
        }
        Ok(o)
    }

    /// `run.initial_state`, or the first basis state.
    pub fn initial_state(&self, d: usize) -> CliResult<Operator> {
        match &self.file.run.initial_state {
            Some(m) => {
                let op = self.hermitian(m, "initial_state", "run.initial_state")?;
                if op.nrows() != d {
                    return Err(self.invalid("initial_state", format!("run.initial_state must be {d}x{d}")));
                }
                Ok(op)
            }
            None => Ok(Operator::from_fn(d, d, |i, j| if i == 0 && j == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) })),
        }
    }

    pub fn operator_field(&self, key: &str, m: &Option<CMatrix>, d: usize) -> CliResult<Operator> {
        let m = m.as_ref().ok_or_else(|| self.invalid(key, format!("run.{key} is required")))?;
        let op = self.operator(m, key, &format!("run.{key}"))?;
        if op.nrows() != d {
            return Err(self.invalid(key, format!("run.{key} must be {d}x{d}")));
        }
        Ok(op)
    }
}
