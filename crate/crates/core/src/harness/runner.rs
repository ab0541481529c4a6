//! Macro-replications of one configuration, in parallel, with per-trial
//! random streams.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::composite::{boost_algc, boost_ermc, force_odd};
use crate::engine::{
    alg_r, boost_alg, geometric_schedule, geometric_stage_count, MinimizationOracle, OracleQuery, Schedule, Variant,
};
use crate::erm::{boost_erm, make_composite_erm, make_nonneg_erm, ErmProblem, ErmSpec};
use crate::error::{Error, Result};
use crate::harness::config::{OracleKind, ProblemFamily, RunConfig};
use crate::linalg::norm;
use crate::oracles::{AccSgdOracle, ExactCompositeOracle, ExactOracle, ProxSgdOracle, SgdOracle};
use crate::problem::{CompositeProblem, ProblemInstance};
use crate::problems::{make_composite, make_quadratic, point_at_gap, true_composite_gap, true_gap, QuadraticSpec};
use crate::rng::{derive_rng, RngStream};
use crate::trace::{Method, StageTrace, TrialRecord};

enum Setting {
    Streaming {
        problem: ProblemInstance,
        oracle: Arc<dyn MinimizationOracle>,
    },
    Composite {
        problem: CompositeProblem,
        oracle: Arc<dyn MinimizationOracle>,
    },
    Erm(ErmProblem),
    CompositeErm(ErmProblem),
}

/// A configuration with its problem built, ready to run trials.
pub struct Workload {
    config: RunConfig,
    setting: Setting,
    start: Vec<f64>,
    delta_in: f64,
    epsilon: f64,
}

/// What a single method run produced.
struct Outcome {
    point: Vec<f64>,
    samples: u64,
    stages: usize,
    m: usize,
    trace: Option<StageTrace>,
}

fn erm_spec(cfg: &RunConfig) -> ErmSpec {
    ErmSpec {
        dim: cfg.dim,
        n_pop: cfg.n_pop.unwrap_or(0),
        mu: cfg.mu,
        lip_grad: cfg.lip_grad,
        lip_grad_hat: cfg.lip_grad_hat.unwrap_or(cfg.lip_grad),
        residual: cfg.residual.unwrap_or(1.0),
        n_min: cfg.n_min,
    }
}

impl Workload {
    pub fn build(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let spec = QuadraticSpec {
            dim: config.dim,
            mu: config.mu,
            lip_grad: config.lip_grad,
            sigma2: config.sigma2,
            tail: config.tail()?,
        };
        let zeros = vec![0.0; config.dim];
        let (setting, start, delta_in) = match config.problem {
            ProblemFamily::Quadratic => {
                let problem = make_quadratic(&spec, config.problem_seed)?;
                let start = match config.initial_gap {
                    Some(g) => point_at_gap(&problem, g, config.problem_seed)?,
                    None => zeros,
                };
                let delta_in = true_gap(&problem, &start)?;
                let oracle: Arc<dyn MinimizationOracle> = match config.oracle {
                    OracleKind::Sgd => Arc::new(SgdOracle(problem.clone())),
                    OracleKind::AccSgd => Arc::new(AccSgdOracle(problem.clone())),
                    OracleKind::Exact => Arc::new(ExactOracle(problem.clone())),
                    OracleKind::ProxSgd => unreachable!("rejected by validation"),
                };
                (Setting::Streaming { problem, oracle }, start, delta_in)
            }
            ProblemFamily::Composite => {
                let problem = make_composite(&spec, config.constraint()?, config.problem_seed)?;
                let start = problem.prox(&zeros, 1.0);
                let delta_in = true_composite_gap(&problem, &start)?;
                let oracle: Arc<dyn MinimizationOracle> = match config.oracle {
                    OracleKind::ProxSgd => Arc::new(ProxSgdOracle(problem.clone())),
                    OracleKind::Exact => Arc::new(ExactCompositeOracle(problem.clone())),
                    _ => unreachable!("rejected by validation"),
                };
                (Setting::Composite { problem, oracle }, start, delta_in)
            }
            ProblemFamily::Erm => {
                let problem = make_nonneg_erm(&erm_spec(config), config.problem_seed)?;
                let delta_in = problem.gap(&zeros);
                (Setting::Erm(problem), zeros, delta_in)
            }
            ProblemFamily::CompositeErm => {
                let nu = config.nu.unwrap_or(1.0);
                let radius = config.radius.unwrap_or(1.0);
                let problem = make_composite_erm(&erm_spec(config), nu, radius, config.problem_seed)?;
                let delta_in = problem.gap(&zeros);
                (Setting::CompositeErm(problem), zeros, delta_in)
            }
        };
        let epsilon = match (config.epsilon, config.epsilon_rel, config.gamma, &setting) {
            (Some(e), _, _, _) => e,
            (_, Some(r), _, _) => r * delta_in,
            (_, _, Some(g), Setting::Erm(p)) => g * p.min_value(),
            _ => return Err(Error::Config("no target accuracy".into())),
        };
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("target accuracy {epsilon} is not positive")));
        }
        Ok(Workload {
            config: config.clone(),
            setting,
            start,
            delta_in,
            epsilon,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Absolute gap target.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Gap of the starting point.
    pub fn initial_gap(&self) -> f64 {
        self.delta_in
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    /// The geometric schedule a continuation method would use, with the
    /// configured overrides applied.
    pub fn schedule(&self, variant: Variant) -> Result<Schedule> {
        let cfg = &self.config;
        let target = match variant {
            Variant::BoostErm => cfg.gamma.ok_or_else(|| Error::Config("BoostERM needs gamma".into()))?,
            _ => self.epsilon,
        };
        let base = geometric_schedule(cfg.mu, cfg.lip_grad, target, cfg.p, variant)?;
        if cfg.t_override.is_none() && cfg.m_override.is_none() {
            return Ok(base);
        }
        let t = cfg
            .t_override
            .unwrap_or_else(|| geometric_stage_count(cfg.lip_grad / cfg.mu));
        let lambdas = (0..=t).map(|i| cfg.mu * 2f64.powi(i as i32)).collect();
        let m = cfg.m_override.unwrap_or_else(|| variant.trial_count(t, cfg.p));
        Schedule::new(lambdas, m, variant.delta(t, target), cfg.p, cfg.mu)
    }

    /// True gap of `x` on the configured problem.
    pub fn gap(&self, x: &[f64]) -> Result<f64> {
        match &self.setting {
            Setting::Streaming { problem, .. } => true_gap(problem, x),
            Setting::Composite { problem, .. } => true_composite_gap(problem, x),
            Setting::Erm(p) | Setting::CompositeErm(p) => Ok(p.gap(x)),
        }
    }

    fn oracle_call(&self, oracle: &dyn MinimizationOracle, delta: f64, m: usize, rng: &RngStream) -> Result<Outcome> {
        let q = OracleQuery {
            delta,
            lambda: 0.0,
            delta_init: self.delta_in,
            center: &self.start,
        };
        let out = alg_r(oracle, &q, m, rng)?;
        Ok(Outcome {
            point: out.point,
            samples: out.samples,
            stages: 1,
            m,
            trace: None,
        })
    }

    /// `m` independent calls at accuracy `ε`, keeping the candidate with the
    /// smallest estimated gradient norm.
    fn best_of_m(
        &self,
        problem: &ProblemInstance,
        oracle: &dyn MinimizationOracle,
        rng: &RngStream,
    ) -> Result<Outcome> {
        let p = self.config.p;
        let m = ((18.0 * (1.0 / p).ln()).ceil() as usize).max(1);
        let q = OracleQuery {
            delta: self.epsilon,
            lambda: 0.0,
            delta_init: self.delta_in,
            center: &self.start,
        };
        let batch = ((problem.sigma2() / (problem.mu() * self.epsilon)).ceil() as u64).max(1);
        let mut est_rng = rng.child(m as u64);
        let mut buf = vec![0.0; problem.dim()];
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut samples = 0;
        for i in 0..m {
            let out = oracle.query(&q, rng.child(i as u64))?;
            samples += out.samples + batch;
            let mut mean = vec![0.0; problem.dim()];
            for _ in 0..batch {
                problem.stoch_grad_into(&out.point, &mut est_rng, &mut buf);
                for (a, b) in mean.iter_mut().zip(&buf) {
                    *a += b / batch as f64;
                }
            }
            let g = norm(&mean);
            if best.as_ref().is_none_or(|(b, _)| g < *b) {
                best = Some((g, out.point));
            }
        }
        Ok(Outcome {
            point: best.expect("m >= 1").1,
            samples,
            stages: 1,
            m,
            trace: None,
        })
    }

    fn execute(&self, method: Method, rng: &RngStream) -> Result<Outcome> {
        let cfg = &self.config;
        let eps = self.epsilon;
        let from_trace = |point: Vec<f64>, trace: StageTrace, m: usize| Outcome {
            point,
            samples: trace.total_samples(),
            stages: trace.len(),
            m,
            trace: Some(trace),
        };
        match (&self.setting, method) {
            (Setting::Streaming { oracle, .. }, Method::NaiveMarkov)
            | (Setting::Composite { oracle, .. }, Method::NaiveMarkov) => {
                self.oracle_call(oracle.as_ref(), 3.0 * eps * cfg.p, 1, rng)
            }
            (Setting::Streaming { problem, oracle }, Method::RobustDistance) => {
                let m = ((18.0 * (1.0 / cfg.p).ln()).ceil() as usize).max(1);
                self.oracle_call(oracle.as_ref(), eps / (9.0 * problem.condition_number()), m, rng)
            }
            (Setting::Streaming { problem, oracle }, Method::BestOfM) => self.best_of_m(problem, oracle.as_ref(), rng),
            (Setting::Streaming { problem, oracle }, Method::Proxboost | Method::BoostAlg) => {
                let s = self.schedule(Variant::BoostAlg)?;
                let (x, trace) = boost_alg(oracle.as_ref(), problem.lip_grad(), &s, self.delta_in, &self.start, rng)?;
                Ok(from_trace(x, trace, s.m))
            }
            (Setting::Composite { problem, oracle }, Method::BoostAlgc) => {
                let s = self.schedule(Variant::BoostAlgc)?;
                let (x, trace) = boost_algc(oracle.as_ref(), problem, &s, self.delta_in, &self.start, rng)?;
                Ok(from_trace(x, trace, force_odd(s.m)))
            }
            (Setting::Erm(problem), Method::BoostErm) => {
                let s = self.schedule(Variant::BoostErm)?;
                let (x, trace) = boost_erm(problem, s.delta, &s.lambdas, s.m, rng)?;
                Ok(from_trace(x, trace, s.m))
            }
            (Setting::CompositeErm(problem), Method::BoostErmc) => {
                let s = self.schedule(Variant::BoostErmc)?;
                let (x, trace) = boost_ermc(problem, s.delta, &s.lambdas, s.m, rng)?;
                Ok(from_trace(x, trace, force_odd(s.m)))
            }
            _ => Err(Error::Config(format!(
                "method `{method}` does not apply to this problem family"
            ))),
        }
    }

    /// Runs `method` on trial `trial_id`. Algorithm errors are recorded in
    /// the returned record rather than propagated.
    pub fn trial(&self, method: Method, trial_id: u64) -> (TrialRecord, Option<StageTrace>) {
        let rng = derive_rng(self.config.base_seed, &[trial_id]);
        let clock = Instant::now();
        let result = self.execute(method, &rng).and_then(|o| Ok((self.gap(&o.point)?, o)));
        let wall_ms = clock.elapsed().as_millis() as u64;
        let mut rec = TrialRecord {
            trial_id,
            method,
            epsilon_target: self.epsilon,
            p: self.config.p,
            stages: 0,
            m: 0,
            samples_used: 0,
            final_gap: f64::NAN,
            success: false,
            wall_ms,
            seed: rng.seed(),
            error: None,
        };
        match result {
            Ok((gap, out)) => {
                rec.stages = out.stages;
                rec.m = out.m;
                rec.samples_used = out.samples;
                rec.final_gap = gap;
                rec.success = TrialRecord::success_for(gap, self.epsilon);
                (rec, out.trace)
            }
            Err(e) => {
                rec.error = Some(e.to_string());
                (rec, None)
            }
        }
    }
}

/// Worker count: the given value, else `PROXBOOST_JOBS`, else all cores.
pub fn resolve_jobs(jobs: Option<usize>) -> Option<usize> {
    jobs.or_else(|| std::env::var("PROXBOOST_JOBS").ok().and_then(|v| v.parse().ok()))
        .filter(|&j| j > 0)
}

/// Runs every configured method for trials `0..R`. Records are ordered by
/// method (as configured) and then by trial id, whatever the worker count.
pub fn run_workload(workload: &Workload, jobs: Option<usize>) -> Result<Vec<TrialRecord>> {
    let cfg = workload.config();
    let tasks: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..cfg.replications).map(move |i| (m, i)))
        .collect();
    let run = || {
        tasks
            .par_iter()
            .map(|&(m, i)| workload.trial(m, i).0)
            .collect::<Vec<_>>()
    };
    match resolve_jobs(jobs) {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

/// Builds the problem and runs all trials of `config`.
pub fn run_trials(config: &RunConfig) -> Result<Vec<TrialRecord>> {
    run_workload(&Workload::build(config)?, config.jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(methods: &str, reps: u64) -> RunConfig {
        RunConfig::from_toml(&format!(
            "problem = \"quadratic\"\ndim = 4\nmu = 1.0\nlip_grad = 8.0\nsigma2 = 0.5\n\
             methods = [{methods}]\nepsilon_rel = 0.05\np = 0.2\ninitial_gap = 10.0\n\
             replications = {reps}\nbase_seed = 11\nproblem_seed = 5\n"
        ))
        .unwrap()
    }

    #[test]
    fn parallel_matches_sequential() {
        let cfg = quad("\"boost-alg\", \"naive-markov\", \"robust-distance\", \"best-of-m\"", 6);
        let w = Workload::build(&cfg).unwrap();
        let mask = |v: Vec<TrialRecord>| {
            v.into_iter()
                .map(|mut r| {
                    r.wall_ms = 0;
                    r
                })
                .collect::<Vec<_>>()
        };
        let a = mask(run_workload(&w, Some(1)).unwrap());
        let b = mask(run_workload(&w, Some(4)).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 24);
        for m in &cfg.methods {
            assert_eq!(a.iter().filter(|r| r.method == *m).count(), 6);
        }
        assert!(a.iter().all(|r| r.error.is_none() && r.samples_used > 0));
    }

    #[test]
    fn single_trial_reproduces_direct_call() {
        let cfg = quad("\"boost-alg\"", 1);
        let w = Workload::build(&cfg).unwrap();
        let (rec, trace) = w.trial(Method::BoostAlg, 0);
        let trace = trace.unwrap();
        let problem = make_quadratic(
            &QuadraticSpec {
                dim: 4,
                mu: 1.0,
                lip_grad: 8.0,
                sigma2: 0.5,
                tail: cfg.tail().unwrap(),
            },
            5,
        )
        .unwrap();
        let s = geometric_schedule(1.0, 8.0, w.epsilon(), 0.2, Variant::BoostAlg).unwrap();
        let (x, direct) = boost_alg(
            &SgdOracle(problem.clone()),
            8.0,
            &s,
            w.initial_gap(),
            w.start(),
            &derive_rng(11, &[0]),
        )
        .unwrap();
        assert_eq!(trace, direct);
        assert_eq!(rec.final_gap, true_gap(&problem, &x).unwrap());
        assert_eq!(rec.samples_used, trace.total_samples());
        assert_eq!(rec.stages, s.t() + 2);
    }

    #[test]
    fn overrides_change_the_schedule() {
        let cfg = quad("\"boost-alg\"", 1)
            .with_override("t_override", "1")
            .unwrap()
            .with_override("m_override", "3")
            .unwrap();
        let w = Workload::build(&cfg).unwrap();
        let s = w.schedule(Variant::BoostAlg).unwrap();
        assert_eq!((s.t(), s.m), (1, 3));
        let (rec, _) = w.trial(Method::BoostAlg, 0);
        assert_eq!((rec.stages, rec.m), (3, 3));
    }

    #[test]
    fn errors_are_recorded_not_fatal() {
        let cfg = quad("\"boost-alg\"", 2).with_override("m_override", "0").unwrap();
        let recs = run_trials(&cfg).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs
            .iter()
            .all(|r| r.error.is_some() && !r.success && r.final_gap.is_nan()));
    }

    #[test]
    fn erm_families_run() {
        let erm = RunConfig::from_toml(
            "problem = \"erm\"\ndim = 3\nmu = 1.0\nlip_grad = 4.0\nlip_grad_hat = 8.0\nn_pop = 64\nn_min = 10\n\
             methods = [\"boost-erm\"]\ngamma = 0.5\np = 0.3\nreplications = 2\n",
        )
        .unwrap();
        let recs = run_trials(&erm).unwrap();
        assert!(recs.iter().all(|r| r.error.is_none()), "{recs:?}");
        let c = RunConfig::from_toml(
            "problem = \"composite-erm\"\ndim = 3\nmu = 1.0\nlip_grad = 4.0\nlip_grad_hat = 8.0\nn_pop = 64\n\
             methods = [\"boost-ermc\"]\nepsilon_rel = 0.5\np = 0.3\nreplications = 1\n",
        )
        .unwrap();
        let recs = run_trials(&c).unwrap();
        assert!(recs.iter().all(|r| r.error.is_none() && r.m % 2 == 1), "{recs:?}");
    }

    #[test]
    fn composite_exact_oracle_succeeds() {
        let cfg = RunConfig::from_toml(
            "problem = \"composite\"\ndim = 3\nmu = 1.0\nlip_grad = 4.0\nconstraint = \"ball(1)\"\noracle = \"exact\"\n\
             methods = [\"boost-algc\", \"naive-markov\"]\nepsilon_rel = 0.01\np = 0.1\nreplications = 2\n",
        )
        .unwrap();
        let recs = run_trials(&cfg).unwrap();
        assert!(recs.iter().all(|r| r.success), "{recs:?}");
    }
}
