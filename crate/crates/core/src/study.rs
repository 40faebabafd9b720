//! Convergence studies: configuration, execution and report I/O.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frac_ode::{ode_error_norms, solve_ode, OdeProblem, TimeNorm};
use crate::frac_time::{stability_constant_on, TemporalMesh};
use crate::published::{ERROR_ALPHAS, ERROR_KS, STABILITY_ALPHAS, STABILITY_KS};
use crate::source::{Case, TimeSource};
use crate::spacetime::{
    assemble_load, spacetime_error, step_solve, ReferenceSamples, SpatialSetup, DEFAULT_SOLVE_TOL,
};

pub const CSV_HEADER: [&str; 8] = ["mode", "case", "alpha", "K", "h", "err_l2", "err_aux", "rate"];

/// Default number of reference cells.
pub const DEFAULT_K_REF: usize = 2000;
/// `K_ref` cap in fast mode.
pub const FAST_K_REF: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Ode,
    Pde1d,
    Pde2d,
    Infsup,
}

impl Mode {
    pub fn dim(self) -> Option<usize> {
        match self {
            Mode::Pde1d => Some(1),
            Mode::Pde2d => Some(2),
            _ => None,
        }
    }

    pub fn default_subdivisions(self) -> Option<usize> {
        match self {
            Mode::Pde1d => Some(2000),
            Mode::Pde2d => Some(100),
            _ => None,
        }
    }

    fn fast_subdivisions(self) -> Option<usize> {
        match self {
            Mode::Pde1d => Some(512),
            Mode::Pde2d => Some(32),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ode => "ode",
            Mode::Pde1d => "pde1d",
            Mode::Pde2d => "pde2d",
            Mode::Infsup => "infsup",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ode" => Ok(Mode::Ode),
            "pde1d" => Ok(Mode::Pde1d),
            "pde2d" => Ok(Mode::Pde2d),
            "infsup" => Ok(Mode::Infsup),
            _ => Err(Error::Config(format!("unknown mode '{s}' (expected ode, pde1d, pde2d or infsup)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::Config(format!("unknown format '{s}' (expected csv or markdown)"))),
        }
    }
}

fn parse_norm(s: &str) -> Result<TimeNorm> {
    let s = s.trim().to_ascii_lowercase();
    if s == "nodal" {
        return Ok(TimeNorm::Nodal);
    }
    if let Some(n) = s.strip_prefix("gauss:") {
        if let Ok(n) = n.parse::<usize>() {
            if n > 0 {
                return Ok(TimeNorm::Gauss(n));
            }
        }
    }
    Err(Error::Config(format!("unknown time norm '{s}' (expected nodal or gauss:<order>)")))
}

/// One convergence study: a grid of `(case, α)` groups, each swept over `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub mode: Mode,
    pub alphas: Vec<f64>,
    pub ks: Vec<usize>,
    /// Spatial subdivisions per side; `None` selects the mode default.
    pub m: Option<usize>,
    /// Benchmark cases (PDE modes only).
    pub cases: Vec<Case>,
    /// Reaction coefficient (ODE mode).
    pub lambda: f64,
    /// Source (ODE mode).
    pub source: TimeSource,
    pub k_ref: usize,
    pub final_time: f64,
    pub norm: TimeNorm,
    pub jobs: usize,
    pub output: Option<PathBuf>,
    pub format: ReportFormat,
}

impl StudyConfig {
    /// Defaults of the published experiments for `mode`.
    pub fn for_mode(mode: Mode) -> Self {
        let (alphas, ks) = match mode {
            Mode::Infsup => (STABILITY_ALPHAS.to_vec(), STABILITY_KS.to_vec()),
            _ => (ERROR_ALPHAS.to_vec(), ERROR_KS.to_vec()),
        };
        let cases = match mode {
            Mode::Pde1d => vec![Case::A, Case::B, Case::C, Case::D],
            Mode::Pde2d => vec![Case::E, Case::F],
            _ => Vec::new(),
        };
        StudyConfig {
            mode,
            alphas,
            ks,
            m: None,
            cases,
            lambda: 1.0,
            source: TimeSource::Exp,
            k_ref: DEFAULT_K_REF,
            final_time: 1.0,
            norm: TimeNorm::Nodal,
            jobs: 1,
            output: None,
            format: ReportFormat::Csv,
        }
    }

    pub fn subdivisions(&self) -> Option<usize> {
        self.m.or(self.mode.default_subdivisions())
    }

    /// Smaller spatial meshes and a capped reference grid.
    pub fn make_fast(&mut self) {
        if self.m.is_none() {
            self.m = self.mode.fast_subdivisions();
        }
        self.k_ref = self.k_ref.min(FAST_K_REF);
    }

    /// Set one `key = value` pair. Lists are comma separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("bad value '{value}' for {what}"));
        match key.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "mode" => {
                let mode: Mode = value.parse()?;
                if mode != self.mode {
                    return Err(Error::Config(format!("config is for mode {mode}, not {}", self.mode)));
                }
            }
            "alpha" | "alphas" => {
                self.alphas = parse_list(value).map_err(|_| bad("alpha"))?;
            }
            "k" | "ks" => self.ks = parse_list(value).map_err(|_| bad("K"))?,
            "m" => self.m = Some(value.parse().map_err(|_| bad("M"))?),
            "case" | "cases" => {
                self.cases = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?;
            }
            "lambda" => self.lambda = value.parse().map_err(|_| bad("lambda"))?,
            "source" => self.source = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "ref_k" | "k_ref" => self.k_ref = value.parse().map_err(|_| bad("ref-K"))?,
            "t" | "final_time" => self.final_time = value.parse().map_err(|_| bad("T"))?,
            "norm" => self.norm = parse_norm(value)?,
            "jobs" => self.jobs = value.parse().map_err(|_| bad("jobs"))?,
            "out" | "output" => self.output = Some(PathBuf::from(value)),
            "format" => self.format = value.parse()?,
            "fast" => match value.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => self.make_fast(),
                "false" | "0" | "no" => {}
                _ => return Err(bad("fast")),
            },
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file; `#` starts a comment.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.alphas.is_empty() {
            return err("no fractional orders given".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return err(format!("fractional order {a} outside (0, 1)"));
        }
        if self.ks.is_empty() {
            return err("no time grids given".into());
        }
        if self.ks[0] == 0 {
            return err("K must be positive".into());
        }
        if self.ks.windows(2).any(|w| w[1] <= w[0]) {
            return err(format!("K list {:?} is not strictly increasing", self.ks));
        }
        if self.ks.windows(2).any(|w| w[1] != 2 * w[0]) {
            log::warn!("K list {:?} does not double; rates use log(e_i/e_(i+1)) / log(K_(i+1)/K_i)", self.ks);
        }
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return err(format!("final time {} must be positive", self.final_time));
        }
        if self.jobs == 0 {
            return err("jobs must be at least 1".into());
        }
        if let TimeNorm::Gauss(0) = self.norm {
            return err("Gauss order must be positive".into());
        }
        let max_k = *self.ks.last().expect("nonempty");
        if self.mode != Mode::Infsup && self.k_ref <= max_k {
            return err(format!("reference grid K_ref = {} must exceed max K = {max_k}", self.k_ref));
        }
        match self.mode.dim() {
            Some(dim) => {
                if self.cases.is_empty() {
                    return err(format!("mode {} needs at least one case", self.mode));
                }
                if let Some(c) = self.cases.iter().find(|c| c.dim() != dim) {
                    return err(format!("case ({c}) is a {}-D problem, not valid for {}", c.dim(), self.mode));
                }
                let m = self.subdivisions().expect("pde modes have a default");
                if m < 2 {
                    return err(format!("M = {m} must be at least 2"));
                }
            }
            None => {
                if !self.cases.is_empty() {
                    return err(format!("cases are not used by mode {}", self.mode));
                }
                if self.m.is_some() {
                    return err(format!("M is not used by mode {}", self.mode));
                }
            }
        }
        if self.mode == Mode::Ode {
            if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
                return err(format!("lambda = {} must be nonnegative", self.lambda));
            }
            self.source.validate().map_err(|e| Error::Config(strip_prefix(&e)))?;
        }
        Ok(())
    }

    fn groups(&self) -> Vec<(Option<Case>, f64)> {
        let cases: Vec<Option<Case>> = if self.cases.is_empty() {
            vec![None]
        } else {
            self.cases.iter().copied().map(Some).collect()
        };
        cases
            .into_iter()
            .flat_map(|c| self.alphas.iter().map(move |&a| (c, a)))
            .collect()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Domain(m) | Error::Numeric(m) => m.clone(),
        other => other.to_string(),
    }
}

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect()
}

/// Preset reproducing one of the published Tables 1-5.
pub fn table_config(table: u8, fast: bool) -> Result<StudyConfig> {
    let mut c = match table {
        1 => StudyConfig::for_mode(Mode::Infsup),
        2 => StudyConfig::for_mode(Mode::Ode),
        3 => StudyConfig::for_mode(Mode::Pde1d),
        4 => {
            let mut c = StudyConfig::for_mode(Mode::Pde1d);
            c.cases = vec![Case::C, Case::D];
            c
        }
        5 => StudyConfig::for_mode(Mode::Pde2d),
        _ => return Err(Error::Config(format!("no table {table} (expected 1-5)"))),
    };
    if fast {
        c.make_fast();
    }
    Ok(c)
}

/// One line of a convergence report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub mode: Mode,
    pub case: Option<Case>,
    pub alpha: f64,
    pub k: usize,
    /// Spatial mesh width (PDE modes).
    pub h: Option<f64>,
    /// Relative `L²` error, or `c(α, K)` in inf-sup mode.
    pub err_l2: f64,
    /// `H^α` error (ODE) or final-time error (PDE).
    pub err_aux: Option<f64>,
    /// Observed rate of `err_l2` against the previous row of the group.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
}

/// Rows of one `(mode, case, α)` group with mean rates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub mode: Mode,
    pub case: Option<Case>,
    pub alpha: f64,
    pub ks: Vec<usize>,
    pub err_l2: Vec<f64>,
    pub err_aux: Vec<Option<f64>>,
    pub mean_rate_l2: Option<f64>,
    pub mean_rate_aux: Option<f64>,
    pub theory_l2: Option<f64>,
    pub theory_aux: Option<f64>,
}

/// Predicted `(L², auxiliary)` rates.
pub fn theoretical_rates(mode: Mode, case: Option<Case>, alpha: f64) -> (Option<f64>, Option<f64>) {
    match (mode, case) {
        (Mode::Ode, _) => (Some(alpha + (alpha + 0.5).min(1.0)), Some((alpha + 0.5).min(1.0))),
        (Mode::Pde1d | Mode::Pde2d, Some(c)) => (Some(c.theoretical_rate(alpha)), None),
        _ => (None, None),
    }
}

/// Rates `log(e_i/e_{i+1}) / log(K_{i+1}/K_i)`; `log₂` ratios for doubling grids.
pub fn observed_rates(ks: &[usize], errors: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None];
    for i in 1..errors.len() {
        let ok = errors[i] > 0.0 && errors[i - 1] > 0.0;
        out.push(ok.then(|| (errors[i - 1] / errors[i]).ln() / (ks[i] as f64 / ks[i - 1] as f64).ln()));
    }
    out.truncate(errors.len());
    out
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl ConvergenceReport {
    pub fn summaries(&self) -> Vec<GroupSummary> {
        let mut out: Vec<GroupSummary> = Vec::new();
        for r in &self.rows {
            let same = out
                .last()
                .is_some_and(|g| g.mode == r.mode && g.case == r.case && g.alpha == r.alpha);
            if !same {
                let (theory_l2, theory_aux) = theoretical_rates(r.mode, r.case, r.alpha);
                out.push(GroupSummary {
                    mode: r.mode,
                    case: r.case,
                    alpha: r.alpha,
                    ks: Vec::new(),
                    err_l2: Vec::new(),
                    err_aux: Vec::new(),
                    mean_rate_l2: None,
                    mean_rate_aux: None,
                    theory_l2,
                    theory_aux,
                });
            }
            let g = out.last_mut().expect("pushed above");
            g.ks.push(r.k);
            g.err_l2.push(r.err_l2);
            g.err_aux.push(r.err_aux);
        }
        let rows = &self.rows;
        let mut offset = 0;
        for g in &mut out {
            let n = g.ks.len();
            if g.mode != Mode::Infsup {
                g.mean_rate_l2 = mean(rows[offset..offset + n].iter().filter_map(|r| r.rate));
                if let Some(aux) = g.err_aux.iter().copied().collect::<Option<Vec<f64>>>() {
                    g.mean_rate_aux = mean(observed_rates(&g.ks, &aux).into_iter().flatten());
                }
            }
            offset += n;
        }
        out
    }
}

/// Run a validated study. Each `(case, α)` group computes its reference once.
pub fn run_study(config: &StudyConfig) -> Result<ConvergenceReport> {
    run_study_counted(config).map(|(r, _)| r)
}

/// [`run_study`] that also returns the number of reference solves performed.
pub fn run_study_counted(config: &StudyConfig) -> Result<(ConvergenceReport, usize)> {
    config.validate()?;
    let setup = match (config.mode.dim(), config.subdivisions()) {
        (Some(dim), Some(m)) => Some(SpatialSetup::new(dim, m)?),
        _ => None,
    };
    let groups = config.groups();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.jobs)))?;
    let results: Vec<(Vec<ReportRow>, usize)> = pool.install(|| {
        groups
            .par_iter()
            .map(|&(case, alpha)| run_group(config, setup.as_ref(), case, alpha))
            .collect::<Result<_>>()
    })?;
    let refs = results.iter().map(|(_, n)| n).sum();
    let rows = results.into_iter().flat_map(|(r, _)| r).collect();
    Ok((ConvergenceReport { rows }, refs))
}

fn with_context(e: Error, case: Option<Case>, alpha: f64, k: Option<usize>) -> Error {
    let mut ctx = String::new();
    if let Some(c) = case {
        let _ = write!(ctx, "case ({c}), ");
    }
    let _ = write!(ctx, "alpha = {alpha}");
    match k {
        Some(k) => {
            let _ = write!(ctx, ", K = {k}");
        }
        None => ctx.push_str(", reference"),
    }
    match e {
        Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
        Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
        other => other,
    }
}

fn run_group(
    config: &StudyConfig,
    setup: Option<&SpatialSetup>,
    case: Option<Case>,
    alpha: f64,
) -> Result<(Vec<ReportRow>, usize)> {
    let t = config.final_time;
    let ctx = |k: Option<usize>| move |e| with_context(e, case, alpha, k);
    let mut errors: Vec<(f64, Option<f64>)> = Vec::with_capacity(config.ks.len());
    let mut refs = 0;
    match config.mode {
        Mode::Infsup => {
            for &k in &config.ks {
                let mesh = TemporalMesh::new(t, k, alpha).map_err(ctx(Some(k)))?;
                errors.push((stability_constant_on(&mesh).map_err(ctx(Some(k)))?, None));
            }
        }
        Mode::Ode => {
            let problem = |k: usize| {
                OdeProblem::new(TemporalMesh::new(t, k, alpha)?, config.lambda, config.source)
            };
            let reference = problem(config.k_ref)
                .and_then(|p| solve_ode(&p))
                .map_err(ctx(None))?;
            refs += 1;
            for &k in &config.ks {
                let sol = problem(k).and_then(|p| solve_ode(&p)).map_err(ctx(Some(k)))?;
                let (l2, ha) = ode_error_norms(&sol, &reference, config.norm).map_err(ctx(Some(k)))?;
                errors.push((l2, Some(ha)));
            }
        }
        Mode::Pde1d | Mode::Pde2d => {
            let sp = setup.expect("spatial setup for PDE modes");
            let case = case.expect("validated: PDE groups carry a case");
            let solve = |k: usize| {
                let tm = TemporalMesh::new(t, k, alpha)?;
                let f = assemble_load(&case.source(), &tm, &sp.mesh)?;
                step_solve(&f, &tm, &sp.mass, &sp.stiffness, DEFAULT_SOLVE_TOL)
            };
            let reference = solve(config.k_ref).map_err(ctx(None))?;
            refs += 1;
            log::info!("case ({case}), alpha = {alpha}: reference on {} cells ready", config.k_ref);
            match config.norm {
                TimeNorm::Nodal => {
                    let samples = ReferenceSamples::from_solution(reference, &sp.mass).map_err(ctx(None))?;
                    for &k in &config.ks {
                        let sol = solve(k).map_err(ctx(Some(k)))?;
                        let (l2, fin) = samples.errors(&sol, &sp.mass).map_err(ctx(Some(k)))?;
                        errors.push((l2, Some(fin)));
                    }
                }
                TimeNorm::Gauss(_) => {
                    for &k in &config.ks {
                        let sol = solve(k).map_err(ctx(Some(k)))?;
                        let (l2, fin) =
                            spacetime_error(&sol, &reference, &sp.mass, config.norm).map_err(ctx(Some(k)))?;
                        errors.push((l2, Some(fin)));
                    }
                }
            }
        }
    }
    let h = config.mode.dim().and(config.subdivisions()).map(|m| 1.0 / m as f64);
    let l2: Vec<f64> = errors.iter().map(|e| e.0).collect();
    let rates = if config.mode == Mode::Infsup {
        vec![None; l2.len()]
    } else {
        observed_rates(&config.ks, &l2)
    };
    let rows = config
        .ks
        .iter()
        .zip(errors)
        .zip(rates)
        .map(|((&k, (err_l2, err_aux)), rate)| ReportRow {
            mode: config.mode,
            case,
            alpha,
            k,
            h,
            err_l2,
            err_aux,
            rate,
        })
        .collect();
    Ok((rows, refs))
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// The report as CSV text (LF line endings, 17 significant digits).
pub fn render_csv(report: &ConvergenceReport) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("writing to memory");
    for r in &report.rows {
        w.write_record([
            r.mode.to_string(),
            r.case.map(|c| c.to_string()).unwrap_or_default(),
            r.alpha.to_string(),
            r.k.to_string(),
            r.h.map(|h| h.to_string()).unwrap_or_default(),
            format!("{:.16e}", r.err_l2),
            opt_num(r.err_aux),
            opt_num(r.rate),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ASCII output")
}

fn sig3(x: f64) -> String {
    format!("{x:.2e}")
}

fn rate_cell(observed: Option<f64>, theory: Option<f64>) -> String {
    let o = observed.map_or("-".to_string(), |r| format!("{r:.2}"));
    let t = theory.map_or("-".to_string(), |r| format!("{r:.2}"));
    format!("{o} ({t})")
}

fn greek(alpha: f64) -> String {
    format!("{alpha}")
}

fn error_table(
    out: &mut String,
    title: &str,
    groups: &[&GroupSummary],
    pick: impl Fn(&GroupSummary) -> (Vec<Option<f64>>, Option<f64>, Option<f64>),
) {
    let ks = &groups[0].ks;
    let _ = writeln!(out, "### {title}\n");
    let _ = write!(out, "| α |");
    for k in ks {
        let _ = write!(out, " K={k} |");
    }
    let _ = writeln!(out, " rate |");
    let _ = writeln!(out, "|---|{}---|", "---:|".repeat(ks.len()));
    for g in groups {
        let (errs, rate, theory) = pick(g);
        let _ = write!(out, "| {} |", greek(g.alpha));
        for k in ks {
            let cell = g.ks.iter().position(|x| x == k).and_then(|i| errs[i]);
            let _ = write!(out, " {} |", cell.map(sig3).unwrap_or_default());
        }
        let _ = writeln!(out, " {} |", rate_cell(rate, theory));
    }
    out.push('\n');
}

/// The report laid out like the published tables, with theoretical rates in parentheses.
pub fn render_markdown(report: &ConvergenceReport) -> String {
    let summaries = report.summaries();
    let mut out = String::new();
    let mut i = 0;
    while i < summaries.len() {
        let head = &summaries[i];
        let mut j = i;
        while j < summaries.len() && summaries[j].mode == head.mode && summaries[j].case == head.case {
            j += 1;
        }
        let block: Vec<&GroupSummary> = summaries[i..j].iter().collect();
        let h = report
            .rows
            .iter()
            .find(|r| r.mode == head.mode && r.case == head.case)
            .and_then(|r| r.h);
        let mesh = h.map(|h| format!(", h = 1/{}", (1.0 / h).round())).unwrap_or_default();
        match head.mode {
            Mode::Infsup => {
                let ks = &block[0].ks;
                let _ = writeln!(out, "### Stability constant c(α, K)\n");
                let _ = write!(out, "| α |");
                for k in ks {
                    let _ = write!(out, " K={k} |");
                }
                let _ = writeln!(out, "\n|---|{}", "---:|".repeat(ks.len()));
                for g in &block {
                    let _ = write!(out, "| {} |", greek(g.alpha));
                    for k in ks {
                        let cell = g.ks.iter().position(|x| x == k).map(|i| g.err_l2[i]);
                        let _ = write!(out, " {} |", cell.map(|c| format!("{c:.4}")).unwrap_or_default());
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
            Mode::Ode => {
                error_table(&mut out, "Relative L²(0,T) error", &block, |g| {
                    (g.err_l2.iter().copied().map(Some).collect(), g.mean_rate_l2, g.theory_l2)
                });
                error_table(&mut out, "Relative H^α(0,T) error", &block, |g| {
                    (g.err_aux.clone(), g.mean_rate_aux, g.theory_aux)
                });
            }
            Mode::Pde1d | Mode::Pde2d => {
                let c = head.case.map(|c| c.to_string()).unwrap_or_default();
                error_table(&mut out, &format!("Case ({c}): relative L²(Q_T) error{mesh}"), &block, |g| {
                    (g.err_l2.iter().copied().map(Some).collect(), g.mean_rate_l2, g.theory_l2)
                });
                error_table(&mut out, &format!("Case ({c}): relative L²(Ω) error at t = T{mesh}"), &block, |g| {
                    (g.err_aux.clone(), g.mean_rate_aux, None)
                });
            }
        }
        i = j;
    }
    out
}

pub fn render_report(report: &ConvergenceReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

/// Write the report to `path`.
pub fn emit_report(report: &ConvergenceReport, format: ReportFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render_report(report, format))
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Parse CSV produced by [`render_csv`].
pub fn parse_report(text: &str) -> Result<ConvergenceReport> {
    let bad = |m: String| Error::Parse { what: "report", path: PathBuf::new(), message: m };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let field = |j: usize| rec.get(j).unwrap_or("").trim();
        let num = |j: usize| -> Result<f64> {
            field(j)
                .parse()
                .map_err(|_| bad(format!("line {line}: bad {} '{}'", CSV_HEADER[j], field(j))))
        };
        let opt = |j: usize| -> Result<Option<f64>> {
            if field(j).is_empty() { Ok(None) } else { num(j).map(Some) }
        };
        let mode: Mode = field(0).parse().map_err(|e| bad(format!("line {line}: {}", strip_prefix(&e))))?;
        let case = if field(1).is_empty() {
            None
        } else {
            Some(field(1).parse().map_err(|e| bad(format!("line {line}: {}", strip_prefix(&e))))?)
        };
        let k = field(3)
            .parse()
            .map_err(|_| bad(format!("line {line}: bad K '{}'", field(3))))?;
        rows.push(ReportRow {
            mode,
            case,
            alpha: num(2)?,
            k,
            h: opt(4)?,
            err_l2: num(5)?,
            err_aux: opt(6)?,
            rate: opt(7)?,
        });
    }
    Ok(ConvergenceReport { rows })
}

pub fn read_report(path: &Path) -> Result<ConvergenceReport> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_report(&text).map_err(|e| match e {
        Error::Parse { what, message, .. } => Error::Parse { what, path: path.to_path_buf(), message },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn small(mode: Mode) -> StudyConfig {
        let mut c = StudyConfig::for_mode(mode);
        c.alphas = vec![0.4, 0.8];
        c.ks = vec![4, 8, 16];
        c.k_ref = 64;
        if mode.dim().is_some() {
            c.m = Some(6);
        }
        if mode == Mode::Pde1d {
            c.cases = vec![Case::A, Case::C];
        }
        c
    }

    #[test]
    fn presets_validate() {
        for t in 1..=5 {
            for fast in [false, true] {
                table_config(t, fast).unwrap().validate().unwrap();
            }
        }
        assert!(table_config(6, false).is_err());
        let c = table_config(3, true).unwrap();
        assert_eq!((c.subdivisions(), c.k_ref), (Some(512), 1024));
        let c = table_config(5, true).unwrap();
        assert_eq!((c.subdivisions(), c.k_ref), (Some(32), 1024));
        assert_eq!(table_config(5, false).unwrap().subdivisions(), Some(100));
        assert_eq!(table_config(4, false).unwrap().cases, vec![Case::C, Case::D]);
    }

    #[test]
    fn malformed_configs_are_rejected() {
        let base = StudyConfig::for_mode(Mode::Pde1d);
        let mut bad = Vec::new();
        let mut c = base.clone();
        c.ks = vec![10, 20, 20];
        bad.push(c);
        let mut c = base.clone();
        c.ks = vec![40, 20];
        bad.push(c);
        let mut c = base.clone();
        c.ks = vec![];
        bad.push(c);
        let mut c = base.clone();
        c.k_ref = 320;
        bad.push(c);
        let mut c = base.clone();
        c.cases = vec![Case::E];
        bad.push(c);
        let mut c = base.clone();
        c.cases = vec![];
        bad.push(c);
        let mut c = base.clone();
        c.alphas = vec![1.0];
        bad.push(c);
        let mut c = base.clone();
        c.alphas = vec![];
        bad.push(c);
        let mut c = base.clone();
        c.m = Some(1);
        bad.push(c);
        let mut c = base.clone();
        c.jobs = 0;
        bad.push(c);
        let mut c = StudyConfig::for_mode(Mode::Pde2d);
        c.cases = vec![Case::B];
        bad.push(c);
        let mut c = StudyConfig::for_mode(Mode::Ode);
        c.lambda = -1.0;
        bad.push(c);
        let mut c = StudyConfig::for_mode(Mode::Ode);
        c.cases = vec![Case::A];
        bad.push(c);
        let mut c = StudyConfig::for_mode(Mode::Infsup);
        c.m = Some(10);
        bad.push(c);
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
        let mut c = StudyConfig::for_mode(Mode::Infsup);
        c.ks = vec![20, 30, 70];
        c.validate().unwrap();
    }

    #[test]
    fn config_text() {
        let mut c = StudyConfig::for_mode(Mode::Pde1d);
        c.apply_config_text("# comment\nalpha = 0.3, 0.7\nK=10,20\nM = 64\ncase = a,(c)\nref-K = 100\nformat=markdown\nnorm = gauss:4\n")
            .unwrap();
        assert_eq!(c.alphas, vec![0.3, 0.7]);
        assert_eq!(c.ks, vec![10, 20]);
        assert_eq!(c.m, Some(64));
        assert_eq!(c.cases, vec![Case::A, Case::C]);
        assert_eq!(c.k_ref, 100);
        assert_eq!(c.format, ReportFormat::Markdown);
        assert_eq!(c.norm, TimeNorm::Gauss(4));
        for text in ["alpha 0.3", "colour = red", "K = ten", "case = z", "mode = ode", "norm = simpson", "fast = maybe"] {
            assert!(matches!(c.clone().apply_config_text(text), Err(Error::Config(_))), "{text}");
        }
        let mut o = StudyConfig::for_mode(Mode::Ode);
        o.apply_config_text("mode = ode\nlambda = 2.5\nsource = pow:-0.3\nfast = yes").unwrap();
        assert_eq!((o.lambda, o.source, o.k_ref), (2.5, TimeSource::Power(-0.3), FAST_K_REF));
    }

    #[test]
    fn rates_examples() {
        let r = observed_rates(&[10, 20, 40], &[1.0, 0.5, 0.25]);
        assert_eq!(r, vec![None, Some(1.0), Some(1.0)]);
        let r = observed_rates(&[10, 20], &[1.0, 1.0]);
        assert_eq!(r[1], Some(0.0));
        let r = observed_rates(&[10, 30], &[1.0, 1.0 / 9.0]);
        assert!((r[1].unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_studies_run_in_every_mode() {
        for mode in [Mode::Ode, Mode::Pde1d, Mode::Pde2d, Mode::Infsup] {
            let c = small(mode);
            let (report, refs) = run_study_counted(&c).unwrap();
            let groups = c.alphas.len() * c.cases.len().max(1);
            assert_eq!(report.rows.len(), groups * 3);
            assert_eq!(refs, if mode == Mode::Infsup { 0 } else { groups });
            for r in &report.rows {
                assert!(r.err_l2 >= 0.0 && r.err_aux.unwrap_or(0.0) >= 0.0);
                assert_eq!(r.rate.is_some(), mode != Mode::Infsup && r.k != 4);
                assert_eq!(r.h.is_some(), mode.dim().is_some());
            }
            let s = report.summaries();
            assert_eq!(s.len(), groups);
            assert!(s.iter().all(|g| g.ks == vec![4, 8, 16]));
        }
    }

    #[test]
    fn studies_are_deterministic_across_job_counts() {
        let mut c = small(Mode::Pde1d);
        let a = run_study(&c).unwrap();
        c.jobs = 3;
        let b = run_study(&c).unwrap();
        assert_eq!(render_csv(&a), render_csv(&b));
        assert_eq!(a, run_study(&c).unwrap());
    }

    #[test]
    fn gauss_norm_study_runs() {
        let mut c = small(Mode::Pde1d);
        c.norm = TimeNorm::Gauss(3);
        c.cases = vec![Case::A];
        let r = run_study(&c).unwrap();
        assert!(r.rows.iter().all(|r| r.err_l2 > 0.0));
    }

    #[test]
    fn empty_report_is_header_only() {
        let text = render_csv(&ConvergenceReport::default());
        assert_eq!(text, "mode,case,alpha,K,h,err_l2,err_aux,rate\n");
        assert_eq!(parse_report(&text).unwrap(), ConvergenceReport::default());
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(parse_report("a,b\n").is_err());
        let head = "mode,case,alpha,K,h,err_l2,err_aux,rate\n";
        assert!(parse_report(&format!("{head}pde9,a,0.5,10,,1,,\n")).is_err());
        assert!(parse_report(&format!("{head}ode,,0.5,ten,,1,,\n")).is_err());
        assert!(parse_report(&format!("{head}ode,,0.5,10,,x,,\n")).is_err());
        assert!(parse_report(&format!("{head}pde1d,q,0.5,10,,1,,\n")).is_err());
        assert!(read_report(Path::new("/nonexistent/report.csv")).is_err());
    }

    fn random_report(rng: &mut rand::rngs::StdRng) -> ConvergenceReport {
        let modes = [Mode::Ode, Mode::Pde1d, Mode::Pde2d, Mode::Infsup];
        let n = rng.gen_range(0..12);
        let rows = (0..n)
            .map(|_| {
                let mode = modes[rng.gen_range(0..4)];
                let case = match mode {
                    Mode::Pde1d => Some(Case::ALL[rng.gen_range(0..4)]),
                    Mode::Pde2d => Some(Case::ALL[rng.gen_range(4..6)]),
                    _ => None,
                };
                ReportRow {
                    mode,
                    case,
                    alpha: rng.gen_range(0.01..0.99),
                    k: rng.gen_range(1..5000),
                    h: case.map(|_| 1.0 / rng.gen_range(2..3000) as f64),
                    err_l2: rng.gen_range(0.0..1.0f64).powi(5),
                    err_aux: rng.gen_bool(0.5).then(|| rng.gen_range(0.0..1e-3)),
                    rate: rng.gen_bool(0.7).then(|| rng.gen_range(-1.0..3.0)),
                }
            })
            .collect();
        ConvergenceReport { rows }
    }

    #[test]
    fn csv_round_trip_on_random_reports() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2024);
        for _ in 0..20 {
            let r = random_report(&mut rng);
            assert_eq!(parse_report(&render_csv(&r)).unwrap(), r);
        }
    }

    #[test]
    fn emit_and_read_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_study(&small(Mode::Ode)).unwrap();
        let p = dir.path().join("r.csv");
        emit_report(&r, ReportFormat::Csv, &p).unwrap();
        assert_eq!(read_report(&p).unwrap(), r);
        let md = dir.path().join("r.md");
        emit_report(&r, ReportFormat::Markdown, &md).unwrap();
        let text = std::fs::read_to_string(&md).unwrap();
        assert!(text.contains("| α | K=4 | K=8 | K=16 | rate |"));
        assert!(text.contains("H^α"));
        assert!(emit_report(&r, ReportFormat::Csv, &dir.path().join("no/such/dir.csv")).is_err());
    }

    #[test]
    fn markdown_layouts() {
        let mut c = table_config(1, false).unwrap();
        c.ks = vec![20, 40];
        let md = render_markdown(&run_study(&c).unwrap());
        let lines: Vec<&str> = md.lines().filter(|l| l.starts_with("| 0")).collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("| 0.3 | 0.771"), "{md}");
        let md = render_markdown(&run_study(&small(Mode::Pde1d)).unwrap());
        assert!(md.contains("### Case (a): relative L²(Q_T) error, h = 1/6"));
        assert!(md.contains("(1.40)"), "{md}");
        assert!(md.contains("t = T"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn csv_round_trip(seed in 0u64..1_000_000) {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let r = random_report(&mut rng);
            prop_assert_eq!(parse_report(&render_csv(&r)).unwrap(), r);
        }
    }
}
