use std::fs;
use std::path::{Path, PathBuf};

use duality_core::benchmarks::{hjb_residual, interior_times, BenchmarkProblem};
use duality_core::dual::{degeneracy_diagnostic, dual_v1, dual_v2, PathwiseDPConfig, SpatialBox};
use duality_core::model::check_test_function;
use duality_core::primal::primal_bound;
use duality_core::registry::{self, check_points};
use duality_core::search::{gap_report, minimize_dual, SearchConfig};
use duality_core::{BoundEstimate, Error, Policy, TestFunction, TimeGrid};

use crate::config::{HKind, RunConfig, Subcommand};
use crate::report::{Report, Status};
use crate::series::{write_convergence_series, write_search_series, ConvergenceRow};

pub const REPORT_FILE: &str = "report.json";
pub const SERIES_FILE: &str = "series.csv";

/// Failure with a machine-readable code.
#[derive(Debug)]
pub struct Failure {
    pub code: String,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: "INVALID_CONFIG".into(),
            message: message.into(),
        }
    }

    fn io(e: std::io::Error) -> Self {
        Self {
            code: "IO_ERROR".into(),
            message: e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

/// Where the run wrote its files, with the final report.
#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub output_dir: PathBuf,
    pub exit_code: i32,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Runs `subcommand` on the config at `config_path`. Relative output
/// directories are taken relative to the config file.
pub fn run(subcommand: Subcommand, config_path: &Path) -> Outcome {
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let parsed = fs::read_to_string(config_path)
        .map_err(Failure::io)
        .and_then(|text| RunConfig::parse(&text).map_err(Failure::config));
    let config = match parsed {
        Ok(mut c) => {
            let clash = c.subcommand.filter(|s| *s != subcommand);
            c.subcommand = Some(subcommand);
            match clash {
                Some(s) => Err((
                    Some(c),
                    Failure::config(format!("config is for `{s}`, not `{subcommand}`")),
                )),
                None => Ok(c),
            }
        }
        Err(f) => Err((None, f)),
    };

    let (mut report, output_dir, series) = match config {
        Ok(cfg) => {
            let dir = resolve(&base, &cfg.output_dir);
            let mut report = Report::new(subcommand.name(), Some(cfg.clone()));
            let series = match execute(subcommand, &cfg, &mut report) {
                Ok(s) => s,
                Err(f) => {
                    report.fail(&f.code, f.message);
                    Series::None
                }
            };
            (report, dir, series)
        }
        Err((cfg, f)) => {
            let dir = resolve(&base, cfg.as_ref().map_or(Path::new("out"), |c| c.output_dir.as_path()));
            let mut report = Report::new(subcommand.name(), cfg);
            report.fail(&f.code, f.message);
            (report, dir, Series::None)
        }
    };

    if let Err(e) = write_outputs(&report, &output_dir, &series) {
        report.fail("IO_ERROR", e.to_string());
    }
    let exit_code = report.status.exit_code();
    Outcome {
        report,
        output_dir,
        exit_code,
    }
}

enum Series {
    None,
    Search(duality_core::search::SearchTrace),
    Convergence(Vec<ConvergenceRow>),
}

fn write_outputs(report: &Report, dir: &Path, series: &Series) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(SERIES_FILE);
    match series {
        Series::None => {}
        Series::Search(trace) => write_search_series(trace, &path)?,
        Series::Convergence(rows) => write_convergence_series(rows, &path)?,
    }
    report.write(&dir.join(REPORT_FILE))
}

struct Context<'a> {
    cfg: &'a RunConfig,
    bench: BenchmarkProblem,
    sbox: SpatialBox,
    dp: PathwiseDPConfig,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, Failure> {
        cfg.check_ranges().map_err(Failure::config)?;
        let bench = registry::benchmark(&cfg.problem)?;
        let d = bench.problem.state_dim();
        if cfg.x.len() != d {
            return Err(Failure::config(format!(
                "x has {} entries, problem `{}` has dimension {d}",
                cfg.x.len(),
                cfg.problem
            )));
        }
        let lower = cfg.sbox.lower.clone().unwrap_or_else(|| bench.state_lower.clone());
        let upper = cfg.sbox.upper.clone().unwrap_or_else(|| bench.state_upper.clone());
        let sbox = SpatialBox::new(&lower, &upper, cfg.sbox.points, cfg.sbox.refinement)?;
        let mut dp = PathwiseDPConfig::new(&lower, &upper, cfg.dp.state_points).with_terminal(cfg.dp.terminal);
        dp.control_points = cfg.dp.control_points;
        dp.use_hook = cfg.dp.use_hook;
        dp.validate(d)?;
        Ok(Self { cfg, bench, sbox, dp })
    }

    fn grid(&self, n_steps: usize) -> Result<TimeGrid, Failure> {
        Ok(TimeGrid::for_problem(&self.bench.problem, self.cfg.t, n_steps)?)
    }

    fn h(&self) -> Result<TestFunction, Failure> {
        let hc = &self.cfg.h;
        let mut h = match hc.kind {
            HKind::Oracle => self
                .bench
                .oracle
                .clone()
                .ok_or_else(|| Failure::config(format!("problem `{}` has no oracle", self.cfg.problem)))?,
            HKind::Family => {
                let id = hc
                    .family
                    .as_deref()
                    .ok_or_else(|| Failure::config("h.family is required for h.kind = \"family\""))?;
                let fam = registry::family(id, &self.bench)?;
                let params = hc.params.clone().unwrap_or_else(|| fam.initial().to_vec());
                if params.len() != fam.dim() {
                    return Err(Failure::config(format!(
                        "family `{id}` takes {} parameters, got {}",
                        fam.dim(),
                        params.len()
                    )));
                }
                fam.build(&params)
            }
            HKind::Perturbed => registry::perturbed_candidates(&self.bench, hc.index + 1, hc.seed)?
                .pop()
                .expect("index + 1 candidates"),
        };
        if hc.time_shift != 0.0 {
            let p = &self.bench.problem;
            let bump = TestFunction::quadratic(p.state_dim(), p.horizon(), 0.0, 0.0, hc.time_shift, 0.0);
            let label = format!("{} + {}(T - t)", h.label(), hc.time_shift);
            h = h.plus(&bump).with_label(label);
        }
        if hc.shift != 0.0 {
            h = h.shifted(hc.shift);
        }
        check_test_function(&h, &self.bench.problem, &check_points(&self.bench))?;
        Ok(h)
    }

    fn policy(&self) -> Result<Policy, Failure> {
        let controls = self.bench.problem.controls();
        match &self.cfg.policy.constant {
            Some(u) if u.len() != controls.dim() => Err(Failure::config("policy.constant has the wrong dimension")),
            Some(u) => Ok(Policy::constant(controls, u)),
            None => self
                .bench
                .policy
                .clone()
                .ok_or_else(|| Failure::config(format!("problem `{}` has no reference policy", self.cfg.problem))),
        }
    }

    fn primal(&self, n_steps: usize) -> Result<BoundEstimate, Failure> {
        let c = self.cfg;
        Ok(primal_bound(
            &self.bench.problem,
            &self.policy()?,
            c.t,
            &c.x,
            c.n_paths,
            &self.grid(n_steps)?,
            c.seed,
        )?)
    }

    fn dual1(&self, h: &TestFunction, n_steps: usize) -> Result<BoundEstimate, Failure> {
        let c = self.cfg;
        Ok(dual_v1(
            &self.bench.problem,
            h,
            c.t,
            &c.x,
            c.n_paths,
            &self.grid(n_steps)?,
            &self.dp,
            c.seed,
        )?)
    }

    fn dual2(&self, h: &TestFunction, n_steps: usize) -> Result<BoundEstimate, Failure> {
        let c = self.cfg;
        Ok(dual_v2(
            &self.bench.problem,
            h,
            c.t,
            &c.x,
            &self.sbox,
            &self.grid(n_steps)?,
        )?)
    }
}

fn execute(sub: Subcommand, cfg: &RunConfig, report: &mut Report) -> Result<Series, Failure> {
    let ctx = Context::new(cfg)?;
    let n = cfg.n_steps;
    let single = |est: &BoundEstimate| ConvergenceRow {
        n_steps: est.n_steps,
        dt: est.dt,
        ..Default::default()
    };
    match sub {
        Subcommand::Primal => {
            let p = ctx.primal(n)?;
            let row = ConvergenceRow {
                primal: Some((p.value, p.std_error)),
                ..single(&p)
            };
            report.estimates.push(p);
            Ok(Series::Convergence(vec![row]))
        }
        Subcommand::Dual1 => {
            let d = ctx.dual1(&ctx.h()?, n)?;
            let row = ConvergenceRow {
                dual1: Some((d.value, d.std_error)),
                ..single(&d)
            };
            report.estimates.push(d);
            Ok(Series::Convergence(vec![row]))
        }
        Subcommand::Dual2 => {
            let d = ctx.dual2(&ctx.h()?, n)?;
            let row = ConvergenceRow {
                dual2: Some(d.value),
                ..single(&d)
            };
            report.estimates.push(d);
            Ok(Series::Convergence(vec![row]))
        }
        Subcommand::Bench => {
            let h = ctx.h()?;
            if let Some(v) = ctx.bench.oracle_value(cfg.t, &cfg.x) {
                report
                    .estimates
                    .push(BoundEstimate::oracle(ctx.bench.id(), "oracle", cfg.t, &cfg.x, v));
            }
            let mut rows = Vec::new();
            for steps in cfg.study_steps() {
                let p = ctx.primal(steps)?;
                let d1 = ctx.dual1(&h, steps)?;
                let d2 = ctx.dual2(&h, steps)?;
                for (lo, hi) in [(&p, &d1), (&p, &d2), (&d1, &d2)] {
                    report.gaps.push(gap_report(lo, hi)?);
                }
                rows.push(ConvergenceRow {
                    n_steps: steps,
                    dt: p.dt,
                    primal: Some((p.value, p.std_error)),
                    dual1: Some((d1.value, d1.std_error)),
                    dual2: Some(d2.value),
                });
                report.estimates.extend([p, d1, d2]);
            }
            if report.gaps.iter().any(|g| g.failed) {
                report.status = Status::Failed;
            }
            Ok(Series::Convergence(rows))
        }
        Subcommand::Search => {
            let id = cfg
                .search
                .family
                .clone()
                .unwrap_or_else(|| registry::default_family(ctx.bench.id()).to_string());
            let mut fam = registry::family(&id, &ctx.bench)?;
            if cfg.search.initial.is_some() || cfg.search.scale.is_some() {
                let initial = cfg.search.initial.clone().unwrap_or_else(|| fam.initial().to_vec());
                let scale = cfg.search.scale.clone().unwrap_or_else(|| fam.scale().to_vec());
                fam = fam.with_start(initial, scale)?;
            }
            let sc = SearchConfig {
                sbox: ctx.sbox.clone(),
                grid: ctx.grid(n)?,
                dp: ctx.dp.clone(),
                n_paths: cfg.n_paths,
                check_points: check_points(&ctx.bench),
            };
            let trace = minimize_dual(
                &ctx.bench.problem,
                &fam,
                cfg.search.objective,
                cfg.t,
                &cfg.x,
                cfg.search.budget,
                cfg.seed,
                &sc,
            )?;
            if let Some(best) = trace.best().and_then(|e| e.estimate.clone()) {
                let p = ctx.primal(n)?;
                let gap = gap_report(&p, &best)?;
                if gap.failed {
                    report.status = Status::Failed;
                }
                report.gaps.push(gap);
                report.estimates.extend([p, best]);
            }
            report.trace = Some(trace.clone());
            Ok(Series::Search(trace))
        }
        Subcommand::HjbCheck => {
            let h = ctx.h()?;
            let tau = cfg.hjb.tolerance.unwrap_or(ctx.bench.residual_tolerance);
            let times = interior_times(&ctx.bench.problem, cfg.hjb.time_points.max(1));
            report.hjb = Some(hjb_residual(&ctx.bench.problem, &h, &times, &ctx.sbox, tau)?);
            Ok(Series::None)
        }
        Subcommand::DiagnoseDegeneracy => {
            let h = ctx.h()?;
            let grid = ctx.grid(n)?;
            report.degeneracy = Some(degeneracy_diagnostic(
                &ctx.bench.problem,
                &h,
                cfg.t,
                &cfg.x,
                cfg.n_paths,
                &grid,
                &ctx.dp,
                &ctx.sbox,
                cfg.seed,
                cfg.degeneracy.tolerance,
            )?);
            Ok(Series::None)
        }
    }
}
