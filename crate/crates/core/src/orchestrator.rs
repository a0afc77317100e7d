//! Round loop: predict every point once, then refine every point against the
//! frozen previous round, `rounds` times, persisting each round as it lands.
//!
//! Run directory layout:
//!
//! * `config.snapshot`: the resolved configuration (TOML)
//! * `dataset.fingerprint`: content hash of the dataset
//! * `round_<k>.csv`: `id,score` sorted by id, `REFUSED` for refusals
//! * `refsets_<k>.csv`: `id,mandatory,extra` with `;`-joined ids (k >= 1)
//! * `variables_<k>.csv`: `id,variables` selected covariates (k >= 1)
//! * `calls.jsonl`: every backend call, one JSON object per line

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::agents::{
    Agents, PointSelectOptions, PromptTemplates, ReferenceInput, ReferenceSet, RefineDecision, Score, TemplateError,
};
use crate::backend::{Backend, BackendError, CallRecord, LiveBackend, MockBackend, Recorder};
use crate::config::{BackendMode, RunConfig};
use crate::context::{write_atomic, ContextError, ContextProvider};
use crate::covariates::{project, CovariateCode};
use crate::dataset::Dataset;
use crate::index::{IndexError, SpatialIndex};

pub const CONFIG_FILE: &str = "config.snapshot";
pub const FINGERPRINT_FILE: &str = "dataset.fingerprint";
pub const CALLS_FILE: &str = "calls.jsonl";

pub fn round_file(k: usize) -> String {
    format!("round_{k}.csv")
}

pub fn refsets_file(k: usize) -> String {
    format!("refsets_{k}.csv")
}

pub fn variables_file(k: usize) -> String {
    format!("variables_{k}.csv")
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("map context: {0}")]
    Context(#[from] ContextError),
    #[error("templates: {0}")]
    Template(#[from] TemplateError),
    #[error("index: {0}")]
    Index(#[from] IndexError),
    #[error("dataset fingerprint mismatch: run was made with {expected}, dataset is {actual}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("corrupt run file {path}: {message}")]
    CorruptRound { path: PathBuf, message: String },
    #[error("no complete round in {0}")]
    NoCompleteRound(PathBuf),
    #[error("{0} already holds a run; resume it or pick another directory")]
    RunDirInUse(PathBuf),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Every point's score after one round. Index-aligned with the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundState {
    pub round: usize,
    pub scores: Vec<Score>,
}

impl RoundState {
    pub fn score_of(&self, dataset: &Dataset, id: &str) -> Option<Score> {
        dataset.index_of(id).map(|i| self.scores[i])
    }

    pub fn n_answered(&self) -> usize {
        self.scores.iter().filter(|s| !s.is_refused()).count()
    }

    /// `id,score` rows sorted by id.
    pub fn to_csv(&self, dataset: &Dataset) -> String {
        let mut rows: Vec<(&str, Score)> =
            dataset.points().iter().zip(&self.scores).map(|(p, s)| (p.id(), *s)).collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::from("id,score\n");
        for (id, s) in rows {
            out.push_str(&format!("{id},{s}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, round: usize, dataset: &Dataset) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next().map(str::trim_end) != Some("id,score") {
            return Err("missing header id,score".into());
        }
        let mut scores: Vec<Option<Score>> = vec![None; dataset.len()];
        for (n, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (id, score) = line.split_once(',').ok_or_else(|| format!("line {}: expected id,score", n + 2))?;
            let i = dataset.index_of(id).ok_or_else(|| format!("line {}: unknown id {id:?}", n + 2))?;
            let s = score.parse::<Score>().map_err(|e| format!("line {}: {e}", n + 2))?;
            if scores[i].replace(s).is_some() {
                return Err(format!("line {}: duplicate id {id:?}", n + 2));
            }
        }
        let missing = scores.iter().filter(|s| s.is_none()).count();
        if missing > 0 {
            return Err(format!("{missing} dataset points have no score"));
        }
        Ok(Self { round, scores: scores.into_iter().map(Option::unwrap).collect() })
    }

    pub fn read(path: &Path, round: usize, dataset: &Dataset) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)?;
        Self::from_csv(&text, round, dataset)
            .map_err(|message| RunError::CorruptRound { path: path.to_path_buf(), message })
    }
}

fn join_ids(ids: &[String]) -> String {
    ids.join(";")
}

fn split_ids(s: &str) -> Vec<String> {
    s.split(';').filter(|x| !x.is_empty()).map(str::to_string).collect()
}

/// `id,mandatory,extra` rows sorted by id.
pub fn refsets_to_csv(refsets: &BTreeMap<String, ReferenceSet>) -> String {
    let mut out = String::from("id,mandatory,extra\n");
    for (id, r) in refsets {
        out.push_str(&format!("{id},{},{}\n", join_ids(&r.mandatory), join_ids(&r.extra)));
    }
    out
}

pub fn read_refsets(path: &Path) -> Result<BTreeMap<String, ReferenceSet>, RunError> {
    let corrupt = |message: String| RunError::CorruptRound { path: path.to_path_buf(), message };
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some("id,mandatory,extra") {
        return Err(corrupt("missing header id,mandatory,extra".into()));
    }
    let mut out = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let [id, mandatory, extra] = parts[..] else {
            return Err(corrupt(format!("line {}: expected 3 fields", n + 2)));
        };
        out.insert(id.to_string(), ReferenceSet { mandatory: split_ids(mandatory), extra: split_ids(extra) });
    }
    Ok(out)
}

fn variables_to_csv(vars: &BTreeMap<String, BTreeSet<CovariateCode>>) -> String {
    let mut out = String::from("id,variables\n");
    for (id, set) in vars {
        let codes: Vec<String> = set.iter().map(|c| c.to_string()).collect();
        out.push_str(&format!("{id},{}\n", codes.join(";")));
    }
    out
}

pub fn read_variables(path: &Path) -> Result<BTreeMap<String, BTreeSet<CovariateCode>>, RunError> {
    let corrupt = |message: String| RunError::CorruptRound { path: path.to_path_buf(), message };
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (id, codes) =
            line.split_once(',').ok_or_else(|| corrupt(format!("line {}: expected id,variables", n + 1)))?;
        let set = codes
            .split(';')
            .filter(|c| !c.is_empty())
            .map(|c| {
                c.parse::<CovariateCode>().map_err(|_| corrupt(format!("line {}: unknown covariate {c:?}", n + 1)))
            })
            .collect::<Result<_, _>>()?;
        out.insert(id.to_string(), set);
    }
    Ok(out)
}

pub fn read_calls(path: &Path) -> Result<Vec<CallRecord>, RunError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RunError::CorruptRound {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

/// Hooks for instrumentation. Called from worker threads.
pub trait RoundObserver: Send + Sync {
    /// A refine call in `round` is about to read `refs`' scores from the
    /// snapshot of `snapshot_round`.
    fn refine_read(&self, _round: usize, _snapshot_round: usize, _target: &str, _refs: &[String]) {}

    fn round_complete(&self, _state: &RoundState) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Stopped on request after committing this round.
    Halted {
        after: usize,
    },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub final_state: RoundState,
    /// Rounds actually computed by this call (replicated rounds not counted).
    pub rounds_computed: Vec<usize>,
}

/// The backend described by the configuration.
pub fn backend_from_config(config: &RunConfig) -> Result<Arc<dyn Backend>, RunError> {
    Ok(match config.backend.mode {
        BackendMode::Mock => Arc::new(MockBackend::new(config.backend.mock.clone(), config.seed)),
        BackendMode::Live => Arc::new(LiveBackend::from_env(config.backend.live.clone())?),
    })
}

pub struct Runner<'a> {
    dataset: &'a Dataset,
    config: RunConfig,
    backend: Option<Arc<dyn Backend>>,
    observer: Option<&'a dyn RoundObserver>,
    halt_after: Option<usize>,
}

struct Shared<'a> {
    dataset: &'a Dataset,
    config: &'a RunConfig,
    index: SpatialIndex,
    backend: Arc<dyn Backend>,
    templates: PromptTemplates,
    observer: Option<&'a dyn RoundObserver>,
    pool: rayon::ThreadPool,
}

struct PointResult {
    score: Score,
    refs: ReferenceSet,
    vars: BTreeSet<CovariateCode>,
    updated: bool,
    calls: Vec<CallRecord>,
}

type Selections = BTreeMap<String, (BTreeSet<CovariateCode>, ReferenceSet)>;
type VariableSets = BTreeMap<String, BTreeSet<CovariateCode>>;

impl<'a> Runner<'a> {
    pub fn new(dataset: &'a Dataset, config: RunConfig) -> Self {
        Self { dataset, config, backend: None, observer: None, halt_after: None }
    }

    /// Use this backend instead of the one the configuration describes.
    pub fn with_backend(mut self, backend: Arc<dyn Backend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn with_observer(mut self, observer: &'a dyn RoundObserver) -> Self {
        self.observer = Some(observer);
        self
    }

    /// Stop after committing round `k`, as if interrupted.
    pub fn halt_after(mut self, k: usize) -> Self {
        self.halt_after = Some(k);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn shared(&self) -> Result<Shared<'_>, RunError> {
        self.config.validate().map_err(|e| RunError::Config(e.to_string()))?;
        let backend = match &self.backend {
            Some(b) => b.clone(),
            None => backend_from_config(&self.config)?,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.concurrency)
            .build()
            .map_err(|e| RunError::Config(format!("worker pool: {e}")))?;
        Ok(Shared {
            dataset: self.dataset,
            config: &self.config,
            index: SpatialIndex::build(self.dataset)?,
            backend,
            templates: PromptTemplates::load(self.config.templates_dir.as_deref())?,
            observer: self.observer,
            pool,
        })
    }

    /// Starts a fresh run in `run_dir`, which must be empty or absent.
    pub fn run(&self, run_dir: &Path) -> Result<RunOutcome, RunError> {
        if run_dir.join(CONFIG_FILE).exists() {
            return Err(RunError::RunDirInUse(run_dir.to_path_buf()));
        }
        let shared = self.shared()?;
        fs::create_dir_all(run_dir)?;
        write_atomic(&run_dir.join(CONFIG_FILE), self.config.to_toml().as_bytes())?;
        write_atomic(&run_dir.join(FINGERPRINT_FILE), format!("{}\n", self.dataset.fingerprint()).as_bytes())?;
        fs::write(run_dir.join(CALLS_FILE), b"")?;

        let state = self.round_zero(&shared, run_dir)?;
        if self.halt_after == Some(0) {
            return Ok(RunOutcome {
                status: RunStatus::Halted { after: 0 },
                final_state: state,
                rounds_computed: vec![0],
            });
        }
        let mut outcome = self.refine_rounds(&shared, run_dir, state, None)?;
        outcome.rounds_computed.insert(0, 0);
        Ok(outcome)
    }

    /// Continues a run from its last complete round. A finished run is left untouched.
    pub fn resume(&self, run_dir: &Path) -> Result<RunOutcome, RunError> {
        check_fingerprint(run_dir, self.dataset)?;
        let last = last_complete_round(run_dir).ok_or_else(|| RunError::NoCompleteRound(run_dir.to_path_buf()))?;
        let state = RoundState::read(&run_dir.join(round_file(last)), last, self.dataset)?;
        if last >= self.config.rounds {
            log::info!("run in {} is already complete", run_dir.display());
            return Ok(RunOutcome { status: RunStatus::Completed, final_state: state, rounds_computed: Vec::new() });
        }
        let shared = self.shared()?;
        // Calls from a round that never committed would otherwise appear twice.
        let calls_path = run_dir.join(CALLS_FILE);
        let kept: Vec<CallRecord> = read_calls(&calls_path)?.into_iter().filter(|c| c.round <= last).collect();
        let mut text = String::new();
        for c in &kept {
            text.push_str(&serde_json::to_string(c).expect("call record serialises"));
            text.push('\n');
        }
        write_atomic(&calls_path, text.as_bytes())?;

        let cache = if self.config.cache_selections && last >= 1 { Some(load_selections(run_dir)?) } else { None };
        self.refine_rounds(&shared, run_dir, state, cache)
    }

    fn round_zero(&self, s: &Shared<'_>, run_dir: &Path) -> Result<RoundState, RunError> {
        let provider = ContextProvider::new(s.config.context.clone());
        let results: Vec<(Score, Vec<CallRecord>)> = s.pool.install(|| {
            (0..s.dataset.len())
                .into_par_iter()
                .map(|i| {
                    let p = s.dataset.point(i);
                    let ctx = provider.build_context(p)?;
                    let rec = Recorder::new(s.backend.as_ref(), 0);
                    let score = Agents::new(&rec, &s.templates, 0).predict(p, &ctx, &s.config.task)?;
                    Ok((score, rec.into_records()))
                })
                .collect::<Result<_, RunError>>()
        })?;
        let (scores, calls): (Vec<Score>, Vec<Vec<CallRecord>>) = results.into_iter().unzip();
        let state = RoundState { round: 0, scores };
        self.commit(s, run_dir, &state, calls, None)?;
        Ok(state)
    }

    fn refine_rounds(
        &self,
        s: &Shared<'_>,
        run_dir: &Path,
        mut prev: RoundState,
        mut cache: Option<Selections>,
    ) -> Result<RunOutcome, RunError> {
        let mut computed = Vec::new();
        let start = prev.round + 1;
        for k in start..=s.config.rounds {
            let results = self.refine_round(s, k, &prev, cache.as_ref())?;
            let updates = results.iter().filter(|r| r.updated).count();
            let mut refsets = BTreeMap::new();
            let mut vars = BTreeMap::new();
            let mut scores = Vec::with_capacity(results.len());
            let mut calls = Vec::with_capacity(results.len());
            for (i, r) in results.into_iter().enumerate() {
                let id = s.dataset.point(i).id().to_string();
                refsets.insert(id.clone(), r.refs);
                vars.insert(id, r.vars);
                scores.push(r.score);
                calls.push(r.calls);
            }
            if s.config.cache_selections && cache.is_none() {
                cache = Some(vars.iter().map(|(id, v)| (id.clone(), (v.clone(), refsets[id].clone()))).collect());
            }
            let state = RoundState { round: k, scores };
            self.commit(s, run_dir, &state, calls, Some((&refsets, &vars)))?;
            computed.push(k);
            log::info!("round {k}: {updates} of {} scores updated", s.dataset.len());
            prev = state;

            if self.halt_after == Some(k) && k < s.config.rounds {
                return Ok(RunOutcome {
                    status: RunStatus::Halted { after: k },
                    final_state: prev,
                    rounds_computed: computed,
                });
            }
            if s.config.early_stop && updates == 0 && k < s.config.rounds {
                log::info!("no updates in round {k}; replicating it through round {}", s.config.rounds);
                for j in k + 1..=s.config.rounds {
                    let copy = RoundState { round: j, scores: prev.scores.clone() };
                    self.commit(s, run_dir, &copy, Vec::new(), None)?;
                    prev = copy;
                }
                break;
            }
        }
        Ok(RunOutcome { status: RunStatus::Completed, final_state: prev, rounds_computed: computed })
    }

    fn refine_round(
        &self,
        s: &Shared<'_>,
        k: usize,
        prev: &RoundState,
        cache: Option<&Selections>,
    ) -> Result<Vec<PointResult>, RunError> {
        let variant = s.config.variant;
        let opts = PointSelectOptions {
            k_near: s.config.k_near,
            p_far: s.config.p_far,
            menu_size: s.config.menu_size,
            mandatory: variant.uses_mandatory(),
            agent: variant.uses_point_agent(),
        };
        s.pool.install(|| {
            (0..s.dataset.len())
                .into_par_iter()
                .map(|i| {
                    let p = s.dataset.point(i);
                    let rec = Recorder::new(s.backend.as_ref(), k);
                    let agents = Agents::new(&rec, &s.templates, k);
                    let (vars, refs) = match cache.and_then(|c| c.get(p.id())) {
                        Some((v, r)) => (v.clone(), r.clone()),
                        None => {
                            let vars = if variant.uses_covariates() {
                                agents.select_variables(p, &s.config.task, s.config.d_max)?
                            } else {
                                BTreeSet::new()
                            };
                            let refs = agents.select_points(p, &s.config.task, &s.index, opts)?;
                            (vars, refs)
                        }
                    };
                    let ids: Vec<String> = refs.ids().map(str::to_string).collect();
                    if let Some(o) = s.observer {
                        o.refine_read(k, prev.round, p.id(), &ids);
                    }
                    let inputs: Vec<ReferenceInput> = ids
                        .iter()
                        .map(|id| {
                            let j = s.dataset.index_of(id).expect("reference ids come from the dataset");
                            ReferenceInput {
                                id: id.clone(),
                                distance_km: s.index.distance_km(i, j),
                                score: prev.scores[j],
                                covariates: project(s.dataset.covariates(j), &vars),
                            }
                        })
                        .collect();
                    let current = prev.scores[i];
                    let target_cov = project(s.dataset.covariates(i), &vars);
                    let decision = agents.refine(p, current, &s.config.task, &inputs, &target_cov)?;
                    let score = decision.apply(current);
                    Ok(PointResult {
                        score,
                        refs,
                        vars,
                        updated: matches!(decision, RefineDecision::Update(_)) && score != current,
                        calls: rec.into_records(),
                    })
                })
                .collect::<Result<Vec<_>, RunError>>()
        })
    }

    /// Appends the round's calls in id order, then writes the selections and,
    /// last, the round file itself. A round counts as complete once its round
    /// file exists.
    fn commit(
        &self,
        s: &Shared<'_>,
        run_dir: &Path,
        state: &RoundState,
        calls: Vec<Vec<CallRecord>>,
        selections: Option<(&BTreeMap<String, ReferenceSet>, &VariableSets)>,
    ) -> Result<(), RunError> {
        let mut order: Vec<usize> = (0..calls.len()).collect();
        order.sort_by(|&a, &b| s.dataset.point(a).id().cmp(s.dataset.point(b).id()));
        let mut text = String::new();
        for i in order {
            for c in &calls[i] {
                text.push_str(&serde_json::to_string(c).expect("call record serialises"));
                text.push('\n');
            }
        }
        if !text.is_empty() {
            let mut f = OpenOptions::new().create(true).append(true).open(run_dir.join(CALLS_FILE))?;
            f.write_all(text.as_bytes())?;
            f.sync_data()?;
        }
        if let Some((refsets, vars)) = selections {
            write_atomic(&run_dir.join(refsets_file(state.round)), refsets_to_csv(refsets).as_bytes())?;
            write_atomic(&run_dir.join(variables_file(state.round)), variables_to_csv(vars).as_bytes())?;
        }
        write_atomic(&run_dir.join(round_file(state.round)), state.to_csv(s.dataset).as_bytes())?;
        if let Some(o) = s.observer {
            o.round_complete(state);
        }
        Ok(())
    }
}

fn load_selections(run_dir: &Path) -> Result<Selections, RunError> {
    let refsets = read_refsets(&run_dir.join(refsets_file(1)))?;
    let vars = read_variables(&run_dir.join(variables_file(1)))?;
    Ok(refsets.into_iter().map(|(id, r)| (id.clone(), (vars.get(&id).cloned().unwrap_or_default(), r))).collect())
}

pub fn check_fingerprint(run_dir: &Path, dataset: &Dataset) -> Result<(), RunError> {
    let expected = fs::read_to_string(run_dir.join(FINGERPRINT_FILE))?.trim().to_string();
    let actual = dataset.fingerprint();
    if expected != actual {
        return Err(RunError::FingerprintMismatch { expected, actual });
    }
    Ok(())
}

/// Highest `k` such that `round_0.csv` through `round_k.csv` all exist.
pub fn last_complete_round(run_dir: &Path) -> Option<usize> {
    let mut last = None;
    let mut k = 0;
    while run_dir.join(round_file(k)).is_file() {
        last = Some(k);
        k += 1;
    }
    last
}

pub fn load_snapshot(run_dir: &Path) -> Result<RunConfig, RunError> {
    let path = run_dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path)?;
    RunConfig::from_toml(&text).map_err(|e| RunError::CorruptRound { path, message: e.to_string() })
}

/// Resumes `run_dir` with the configuration snapshotted there.
pub fn resume(run_dir: &Path, dataset: &Dataset) -> Result<RunOutcome, RunError> {
    let config = load_snapshot(run_dir)?;
    Runner::new(dataset, config).resume(run_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ScoreValue;
    use crate::backend::{MockConfig, RefinePolicy};
    use crate::field::FieldSpec;
    use crate::synth::synth_data;

    fn cfg(rounds: usize) -> RunConfig {
        RunConfig { rounds, seed: 3, ..RunConfig::default() }
    }

    #[test]
    fn round_csv_round_trip() {
        let d = synth_data(5, 1, &FieldSpec::Wave).unwrap();
        let st = RoundState {
            round: 2,
            scores: vec![
                Score::Refused,
                Score::Value(ScoreValue::from_tenths(10).unwrap()),
                Score::Value(ScoreValue::from_tenths(99).unwrap()),
                Score::Value(ScoreValue::from_tenths(0).unwrap()),
                Score::Refused,
            ],
        };
        let text = st.to_csv(&d);
        assert!(text.starts_with("id,score\n"));
        assert_eq!(RoundState::from_csv(&text, 2, &d).unwrap(), st);
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(RoundState::from_csv(&truncated, 2, &d).is_err());
    }

    #[test]
    fn k_zero_writes_only_round_zero() {
        let d = synth_data(20, 4, &FieldSpec::Wave).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = Runner::new(&d, cfg(0)).run(dir.path()).unwrap();
        assert_eq!(out.status, RunStatus::Completed);
        assert_eq!(out.final_state.round, 0);
        assert!(dir.path().join("round_0.csv").exists());
        assert!(!dir.path().join("round_1.csv").exists());
        assert!(!dir.path().join("refsets_0.csv").exists());
    }

    #[test]
    fn always_keep_is_a_fixed_point() {
        let d = synth_data(30, 4, &FieldSpec::Wave).unwrap();
        let mut c = cfg(3);
        c.backend.mock = MockConfig { refine: RefinePolicy::Keep, ..MockConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        Runner::new(&d, c.clone()).run(dir.path()).unwrap();
        let r0 = fs::read(dir.path().join("round_0.csv")).unwrap();
        for k in 1..=3 {
            assert_eq!(fs::read(dir.path().join(round_file(k))).unwrap(), r0);
        }

        c.early_stop = true;
        let dir2 = tempfile::tempdir().unwrap();
        let out = Runner::new(&d, c).run(dir2.path()).unwrap();
        assert_eq!(out.rounds_computed, [0, 1]);
        for k in 1..=3 {
            assert_eq!(fs::read(dir2.path().join(round_file(k))).unwrap(), r0);
        }
        assert!(!dir2.path().join("refsets_2.csv").exists());
        let calls = read_calls(&dir2.path().join(CALLS_FILE)).unwrap();
        assert!(calls.iter().all(|c| c.round <= 1));
    }

    #[test]
    fn refuses_to_clobber_a_run() {
        let d = synth_data(5, 1, &FieldSpec::Wave).unwrap();
        let dir = tempfile::tempdir().unwrap();
        Runner::new(&d, cfg(0)).run(dir.path()).unwrap();
        assert!(matches!(Runner::new(&d, cfg(0)).run(dir.path()), Err(RunError::RunDirInUse(_))));
    }

    #[test]
    fn refusal_persists_unless_updated() {
        let d = synth_data(25, 9, &FieldSpec::Wave).unwrap();
        let mut c = cfg(2);
        c.backend.mock = MockConfig { refusal_rate: 1.0, refine: RefinePolicy::Keep, ..MockConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let out = Runner::new(&d, c).run(dir.path()).unwrap();
        assert!(out.final_state.scores.iter().all(|s| s.is_refused()));
    }

    #[test]
    fn concurrency_does_not_change_outputs() {
        let d = synth_data(60, 2, &FieldSpec::Wave).unwrap();
        let run = |threads| {
            let dir = tempfile::tempdir().unwrap();
            let c = RunConfig { concurrency: threads, ..cfg(2) };
            Runner::new(&d, c).run(dir.path()).unwrap();
            ["round_2.csv", "refsets_2.csv", "calls.jsonl"].map(|f| fs::read(dir.path().join(f)).unwrap())
        };
        assert_eq!(run(1), run(8));
    }
}
