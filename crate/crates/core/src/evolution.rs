//! Regularized evolution with a surrogate filtering each batch of offspring.
//!
//! Every iteration draws `n_candidates` offspring (tournament parent, subtree
//! mutation), scores them with the surrogate in one batch, keeps the `k` best
//! predictions, evaluates those for real and pushes them into the population,
//! evicting the oldest members.

use std::cmp::Ordering;
use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Architecture;
use crate::compiler::TensorShape;
use crate::evaluator::Evaluator;
use crate::grammar::{mutate_subtree, sample_tree, Grammar, DEFAULT_MAX_DEPTH, DEFAULT_MUTATION_RETRIES};
use crate::surrogate::{NormalizationMethod, Normalizer, Surrogate, SurrogateError, SurrogateKind, TrainingSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Standard,
    /// Predictions replace true evaluation; only a final shortlist is evaluated.
    SurrogateAsObjective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Population size `p`.
    pub population_size: usize,
    pub n_candidates: usize,
    /// Offspring accepted per iteration.
    pub k: usize,
    pub tournament_size: usize,
    pub iterations: usize,
    /// Iterations between surrogate refits; defaults to 20 for the forest and 100 for external models.
    pub refit_interval: Option<usize>,
    pub surrogate: SurrogateKind,
    pub mode: SearchMode,
    pub k_final: usize,
    pub seed: u64,
    pub max_depth: usize,
    pub mutation_retries: usize,
    pub input_shape: TensorShape,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population_size: 100,
            n_candidates: 20,
            k: 5,
            tournament_size: 10,
            iterations: 300,
            refit_interval: None,
            surrogate: SurrogateKind::None,
            mode: SearchMode::Standard,
            k_final: 5,
            seed: 0,
            max_depth: DEFAULT_MAX_DEPTH,
            mutation_retries: DEFAULT_MUTATION_RETRIES,
            input_shape: TensorShape::im(3, 32, 32),
        }
    }
}

impl SearchConfig {
    pub fn effective_refit_interval(&self) -> usize {
        self.refit_interval.unwrap_or(match self.surrogate {
            SurrogateKind::External => 100,
            _ => 20,
        })
    }

    /// Checks the field constraints; errors name the offending field.
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |field: &str, msg: String| Err(SearchError::Config(format!("{field}: {msg}")));
        if self.population_size == 0 {
            return bad("population_size", "must be at least 1".into());
        }
        if self.n_candidates == 0 {
            return bad("n_candidates", "must be at least 1".into());
        }
        if self.k == 0 || self.k > self.n_candidates {
            return bad(
                "k",
                format!("must be in 1..={} (n_candidates), got {}", self.n_candidates, self.k),
            );
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return bad(
                "tournament_size",
                format!(
                    "must be in 1..={} (population_size), got {}",
                    self.population_size, self.tournament_size
                ),
            );
        }
        if self.refit_interval == Some(0) {
            return bad("refit_interval", "must be at least 1".into());
        }
        if self.k_final == 0 {
            return bad("k_final", "must be at least 1".into());
        }
        if self.max_depth == 0 {
            return bad("max_depth", "must be at least 1".into());
        }
        if self.mode == SearchMode::SurrogateAsObjective && self.surrogate == SurrogateKind::None {
            return bad("mode", "surrogate_as_objective needs a surrogate".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("could not sample a compiling initial architecture after {0} attempts")]
    NoInitialArchitecture(usize),
    #[error("warm start: {0}")]
    WarmStart(#[source] SurrogateError),
}

#[derive(Clone, Debug)]
pub struct Individual {
    pub arch: Arc<Architecture>,
    pub accuracy: Option<f64>,
    pub prediction: Option<f64>,
    pub birth_index: u64,
}

impl Individual {
    /// The score used for selection: true accuracy when known, else the prediction.
    pub fn fitness(&self) -> f64 {
        self.accuracy.or(self.prediction).unwrap_or(0.0)
    }
}

/// Bounded FIFO of individuals, oldest first.
#[derive(Clone, Debug)]
pub struct Population {
    members: VecDeque<Individual>,
    capacity: usize,
}

impl Population {
    pub fn new(capacity: usize) -> Self {
        Population {
            members: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Appends `ind`, returning the evicted oldest member when over capacity.
    pub fn push(&mut self, ind: Individual) -> Option<Individual> {
        self.members.push_back(ind);
        if self.members.len() > self.capacity {
            self.members.pop_front()
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = &Individual> {
        self.members.iter()
    }
}

fn better(a: &Individual, b: &Individual) -> bool {
    match a.fitness().total_cmp(&b.fitness()) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.birth_index < b.birth_index,
    }
}

/// Best of a uniform subset of `min(tau, |pop|)` members drawn without replacement.
/// Ties go to the older member.
pub fn tournament_select<'p, R: Rng + ?Sized>(
    pop: &'p Population,
    tau: usize,
    rng: &mut R,
) -> Result<&'p Individual, SearchError> {
    if pop.is_empty() {
        return Err(SearchError::EmptyPopulation);
    }
    let size = tau.clamp(1, pop.len());
    let mut best: Option<&Individual> = None;
    for i in index::sample(rng, pop.len(), size) {
        let cand = &pop.members[i];
        if best.is_none_or(|b| better(cand, b)) {
            best = Some(cand);
        }
    }
    Ok(best.expect("non-empty subset"))
}

/// Transfer rows, already normalized, used before and alongside the run's own data.
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub rows: Vec<(Architecture, f64)>,
    /// How the run's own accuracies are normalized before merging with the transfer rows.
    pub method: NormalizationMethod,
}

/// Normalizes transfer rows per dataset.
pub fn warm_start(history: &TrainingSet, nrm: &Normalizer) -> Result<WarmStart, SurrogateError> {
    if history.is_empty() {
        return Err(SurrogateError::InvalidData("warm start needs at least one row".into()));
    }
    let normalized = history.normalized(nrm)?;
    Ok(WarmStart {
        rows: normalized.rows.into_iter().map(|r| (r.arch, r.target)).collect(),
        method: nrm.method,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub encoding: String,
    pub prediction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedRecord {
    pub encoding: String,
    pub accuracy: f64,
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub candidates: Vec<CandidateRecord>,
    pub accepted: Vec<String>,
    pub evaluated: Vec<EvaluatedRecord>,
    /// Running best: true accuracy in standard mode, prediction otherwise.
    pub best: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub refit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    /// `None` during initialization and final evaluation.
    pub iter: Option<usize>,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BestArchitecture {
    pub encoding: String,
    pub fitness: f64,
    pub tree: crate::grammar::DerivationTree,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub initial: Vec<EvaluatedRecord>,
    pub iterations: Vec<IterationRecord>,
    /// The shortlist truly evaluated at the end of a surrogate-as-objective run.
    pub final_evaluations: Vec<EvaluatedRecord>,
    pub best: BestArchitecture,
    pub true_evaluations: usize,
    pub incidents: Vec<Incident>,
}

struct Run<'a> {
    cfg: &'a SearchConfig,
    grammar: &'a Grammar,
    evaluator: &'a Evaluator,
    surrogate: Option<&'a mut dyn Surrogate>,
    warm: Option<&'a WarmStart>,
    rng: ChaCha8Rng,
    births: u64,
    incidents: Vec<Incident>,
    true_evaluations: usize,
    /// Every truly evaluated architecture, in evaluation order.
    history: Vec<(Arc<Architecture>, f64)>,
    /// Encodings that have entered the population.
    seen: HashSet<String>,
}

impl Run<'_> {
    fn incident(&mut self, iter: Option<usize>, stage: &str, message: impl ToString) {
        self.incidents.push(Incident {
            iter,
            stage: stage.into(),
            message: message.to_string(),
        });
    }

    fn build(&self, tree: crate::grammar::DerivationTree) -> Architecture {
        Architecture::build(self.grammar, tree, self.cfg.input_shape, None)
    }

    fn random_architecture(&mut self) -> Result<Architecture, SearchError> {
        const ATTEMPTS: usize = 1000;
        for _ in 0..ATTEMPTS {
            if let Ok(tree) = sample_tree(self.grammar, self.cfg.max_depth, &mut self.rng) {
                let arch = self.build(tree);
                if arch.compiles() {
                    return Ok(arch);
                }
            }
        }
        Err(SearchError::NoInitialArchitecture(ATTEMPTS))
    }

    /// Mutates a tournament winner, retrying while the child repeats an
    /// architecture already in the run or fails to compile. When every retry
    /// fails the last child is kept as is.
    fn offspring(&mut self, pop: &Population) -> Result<Option<Architecture>, SearchError> {
        let parent = Arc::clone(&tournament_select(pop, self.cfg.tournament_size, &mut self.rng)?.arch);
        let mut last = None;
        for _ in 0..self.cfg.mutation_retries.max(1) {
            let Ok(tree) = mutate_subtree(self.grammar, &parent.tree, self.cfg.max_depth, 1, &mut self.rng) else {
                continue;
            };
            if tree == parent.tree {
                continue;
            }
            let arch = self.build(tree);
            if arch.compiles() && !self.seen.contains(&arch.encoding) {
                return Ok(Some(arch));
            }
            last = Some(arch);
        }
        Ok(last)
    }

    fn evaluate(&mut self, iter: Option<usize>, archs: &[Arc<Architecture>]) -> Vec<f64> {
        let refs: Vec<&Architecture> = archs.iter().map(|a| a.as_ref()).collect();
        let results = self.evaluator.evaluate_batch(&refs);
        self.true_evaluations += archs.len();
        let mut out = Vec::with_capacity(results.len());
        for (a, r) in archs.iter().zip(results) {
            let acc = match r {
                Ok(v) => v,
                Err(e) => {
                    self.incident(iter, "evaluate", format!("{}: {e}", a.encoding));
                    0.0
                }
            };
            self.history.push((Arc::clone(a), acc));
            out.push(acc);
        }
        out
    }

    fn predict(&mut self, iter: Option<usize>, archs: &[Arc<Architecture>]) -> Option<Vec<f64>> {
        let surrogate = self.surrogate.as_mut()?;
        if !surrogate.is_fitted() {
            return None;
        }
        let refs: Vec<&Architecture> = archs.iter().map(|a| a.as_ref()).collect();
        match surrogate.predict(&refs) {
            Ok(p) => Some(p),
            Err(e) => {
                self.incident(iter, "predict", e);
                None
            }
        }
    }

    /// Fits on the transfer rows plus the run's own history.
    fn refit(&mut self, iter: Option<usize>) -> bool {
        let Some(surrogate) = self.surrogate.as_mut() else {
            return false;
        };
        let own: Vec<f64> = match self.warm {
            Some(w) if w.method != NormalizationMethod::None && !self.history.is_empty() => {
                let ys = self.history.iter().map(|(_, y)| ("run", *y));
                match Normalizer::fit(w.method, ys.clone()).and_then(|n| n.normalize(ys)) {
                    Ok(v) => v,
                    Err(e) => {
                        let msg = e.to_string();
                        self.incidents.push(Incident {
                            iter,
                            stage: "fit".into(),
                            message: msg,
                        });
                        return false;
                    }
                }
            }
            _ => self.history.iter().map(|(_, y)| *y).collect(),
        };
        let mut rows: Vec<(&Architecture, f64)> = Vec::new();
        if let Some(w) = self.warm {
            rows.extend(w.rows.iter().map(|(a, y)| (a, *y)));
        }
        rows.extend(self.history.iter().zip(own).map(|((a, _), y)| (a.as_ref(), y)));
        let seed = fit_seed(self.cfg.seed, iter);
        match surrogate.fit(&rows, seed) {
            Ok(()) => true,
            Err(e) => {
                self.incident(iter, "fit", e);
                false
            }
        }
    }

    fn admit(&mut self, pop: &mut Population, ind: Individual) {
        self.seen.insert(ind.arch.encoding.clone());
        pop.push(ind);
    }

    fn birth(&mut self) -> u64 {
        self.births += 1;
        self.births - 1
    }
}

fn fit_seed(seed: u64, iter: Option<usize>) -> u64 {
    let i = iter.map_or(0, |i| i as u64 + 1);
    seed ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Indices of the `k` highest predictions, ties to the earlier candidate.
fn top_k(predictions: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..predictions.len()).collect();
    idx.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Runs the search. `surrogate` must be present exactly when `cfg.surrogate` is not `None`.
pub fn run_search<'a>(
    cfg: &'a SearchConfig,
    grammar: &'a Grammar,
    evaluator: &'a Evaluator,
    surrogate: Option<&'a mut dyn Surrogate>,
    warm: Option<&'a WarmStart>,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    if surrogate.is_some() != (cfg.surrogate != SurrogateKind::None) {
        return Err(SearchError::Config(format!(
            "surrogate: config says {:?} but {} model was supplied",
            cfg.surrogate,
            if surrogate.is_some() { "a" } else { "no" }
        )));
    }
    if cfg.mode == SearchMode::SurrogateAsObjective && warm.is_none_or(|w| w.rows.is_empty()) {
        return Err(SearchError::Config(
            "mode: surrogate_as_objective needs warm-start data".into(),
        ));
    }
    let mut run = Run {
        cfg,
        grammar,
        evaluator,
        surrogate,
        warm,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        births: 0,
        incidents: Vec::new(),
        true_evaluations: 0,
        history: Vec::new(),
        seen: HashSet::new(),
    };
    match cfg.mode {
        SearchMode::Standard => standard(&mut run),
        SearchMode::SurrogateAsObjective => surrogate_as_objective(&mut run),
    }
}

fn standard(run: &mut Run<'_>) -> Result<SearchResult, SearchError> {
    let cfg = run.cfg;
    let initial: Vec<Arc<Architecture>> = (0..cfg.population_size)
        .map(|_| run.random_architecture().map(Arc::new))
        .collect::<Result<_, _>>()?;
    let accs = run.evaluate(None, &initial);
    let mut pop = Population::new(cfg.population_size);
    let mut best_idx = 0;
    for (i, (a, acc)) in initial.iter().zip(&accs).enumerate() {
        if *acc > accs[best_idx] {
            best_idx = i;
        }
        let birth_index = run.birth();
        run.admit(
            &mut pop,
            Individual {
                arch: Arc::clone(a),
                accuracy: Some(*acc),
                prediction: None,
                birth_index,
            },
        );
    }
    let mut best = (Arc::clone(&initial[best_idx]), accs[best_idx]);
    run.refit(None);

    let mut iterations = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let mut candidates = Vec::with_capacity(cfg.n_candidates);
        for _ in 0..cfg.n_candidates {
            match run.offspring(&pop)? {
                Some(a) => candidates.push(Arc::new(a)),
                None => run.incident(Some(iter), "mutate", "no offspring after all retries"),
            }
        }
        let predictions = run.predict(Some(iter), &candidates);
        let k = cfg.k.min(candidates.len());
        let chosen = match &predictions {
            Some(p) => top_k(p, k),
            None => index::sample(&mut run.rng, candidates.len(), k).into_vec(),
        };
        if chosen.len() < cfg.k {
            run.incident(Some(iter), "select", format!("accepted {} of {}", chosen.len(), cfg.k));
        }
        let accepted: Vec<Arc<Architecture>> = chosen.iter().map(|&i| Arc::clone(&candidates[i])).collect();
        let accs = run.evaluate(Some(iter), &accepted);
        for (&ci, (a, acc)) in chosen.iter().zip(accepted.iter().zip(&accs)) {
            if *acc > best.1 {
                best = (Arc::clone(a), *acc);
            }
            let birth_index = run.birth();
            run.admit(
                &mut pop,
                Individual {
                    arch: Arc::clone(a),
                    accuracy: Some(*acc),
                    prediction: predictions.as_ref().map(|p| p[ci]),
                    birth_index,
                },
            );
        }
        let refit = (iter + 1) % cfg.effective_refit_interval() == 0 && run.refit(Some(iter));
        iterations.push(IterationRecord {
            iter,
            candidates: candidates
                .iter()
                .enumerate()
                .map(|(i, a)| CandidateRecord {
                    encoding: a.encoding.clone(),
                    prediction: predictions.as_ref().map(|p| p[i]),
                })
                .collect(),
            accepted: accepted.iter().map(|a| a.encoding.clone()).collect(),
            evaluated: accepted
                .iter()
                .zip(&accs)
                .map(|(a, acc)| EvaluatedRecord {
                    encoding: a.encoding.clone(),
                    accuracy: *acc,
                })
                .collect(),
            best: best.1,
            refit,
        });
    }
    Ok(SearchResult {
        initial: initial
            .iter()
            .zip(&accs_of(&run.history, initial.len()))
            .map(|(a, acc)| EvaluatedRecord {
                encoding: a.encoding.clone(),
                accuracy: *acc,
            })
            .collect(),
        iterations,
        final_evaluations: Vec::new(),
        best: BestArchitecture {
            encoding: best.0.encoding.clone(),
            fitness: best.1,
            tree: best.0.tree.clone(),
        },
        true_evaluations: run.true_evaluations,
        incidents: std::mem::take(&mut run.incidents),
    })
}

fn accs_of(history: &[(Arc<Architecture>, f64)], n: usize) -> Vec<f64> {
    history[..n].iter().map(|(_, y)| *y).collect()
}

fn surrogate_as_objective(run: &mut Run<'_>) -> Result<SearchResult, SearchError> {
    let cfg = run.cfg;
    // the surrogate is fitted once on the transfer rows and then frozen
    if !run.refit(None) {
        let msg = run.incidents.last().map(|i| i.message.clone()).unwrap_or_default();
        return Err(SearchError::WarmStart(SurrogateError::InvalidData(msg)));
    }
    let initial: Vec<Arc<Architecture>> = (0..cfg.population_size)
        .map(|_| run.random_architecture().map(Arc::new))
        .collect::<Result<_, _>>()?;
    let preds = run.predict(None, &initial).unwrap_or_else(|| vec![0.0; initial.len()]);
    let mut pop = Population::new(cfg.population_size);
    // every architecture that entered the population, with its prediction
    let mut seen: Vec<(Arc<Architecture>, f64)> = Vec::new();
    for (a, p) in initial.iter().zip(&preds) {
        let birth_index = run.birth();
        run.admit(
            &mut pop,
            Individual {
                arch: Arc::clone(a),
                accuracy: None,
                prediction: Some(*p),
                birth_index,
            },
        );
        seen.push((Arc::clone(a), *p));
    }
    let mut best = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut iterations = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let mut candidates = Vec::with_capacity(cfg.n_candidates);
        for _ in 0..cfg.n_candidates {
            match run.offspring(&pop)? {
                Some(a) => candidates.push(Arc::new(a)),
                None => run.incident(Some(iter), "mutate", "no offspring after all retries"),
            }
        }
        let predictions = run
            .predict(Some(iter), &candidates)
            .unwrap_or_else(|| vec![0.0; candidates.len()]);
        let chosen = top_k(&predictions, cfg.k.min(candidates.len()));
        for &ci in &chosen {
            let birth_index = run.birth();
            run.admit(
                &mut pop,
                Individual {
                    arch: Arc::clone(&candidates[ci]),
                    accuracy: None,
                    prediction: Some(predictions[ci]),
                    birth_index,
                },
            );
            seen.push((Arc::clone(&candidates[ci]), predictions[ci]));
            best = best.max(predictions[ci]);
        }
        iterations.push(IterationRecord {
            iter,
            candidates: candidates
                .iter()
                .zip(&predictions)
                .map(|(a, p)| CandidateRecord {
                    encoding: a.encoding.clone(),
                    prediction: Some(*p),
                })
                .collect(),
            accepted: chosen.iter().map(|&i| candidates[i].encoding.clone()).collect(),
            evaluated: Vec::new(),
            best,
            refit: false,
        });
    }

    // shortlist: the k_final distinct encodings with the highest predictions, earliest first on ties
    let mut order: Vec<usize> = (0..seen.len()).collect();
    order.sort_by(|&a, &b| seen[b].1.total_cmp(&seen[a].1).then(a.cmp(&b)));
    let mut names = HashSet::new();
    let shortlist: Vec<Arc<Architecture>> = order
        .into_iter()
        .filter(|&i| names.insert(seen[i].0.encoding.clone()))
        .take(cfg.k_final)
        .map(|i| Arc::clone(&seen[i].0))
        .collect();
    let accs = run.evaluate(None, &shortlist);
    let mut best_i = 0;
    for (i, acc) in accs.iter().enumerate() {
        if *acc > accs[best_i] {
            best_i = i;
        }
    }
    Ok(SearchResult {
        initial: Vec::new(),
        iterations,
        final_evaluations: shortlist
            .iter()
            .zip(&accs)
            .map(|(a, acc)| EvaluatedRecord {
                encoding: a.encoding.clone(),
                accuracy: *acc,
            })
            .collect(),
        best: BestArchitecture {
            encoding: shortlist[best_i].encoding.clone(),
            fitness: accs[best_i],
            tree: shortlist[best_i].tree.clone(),
        },
        true_evaluations: run.true_evaluations,
        incidents: std::mem::take(&mut run.incidents),
    })
}
