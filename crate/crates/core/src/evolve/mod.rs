//! Multi-objective GP over `(composite fitness, node count)`.
//!
//! Each generation: binary tournaments on `(rank, crowding)` pick parents,
//! subtree crossover and mixed mutation produce `population_size` offspring,
//! every offspring's constants are refined against the training objective,
//! and the `(mu + lambda)` union is truncated by non-domination rank and
//! crowding. All randomness is drawn from streams keyed by
//! `(seed, generation, index)`, so results do not depend on how rayon
//! schedules the evaluations.

mod nsga;
mod search;
mod variation;

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::const_opt::Refiner;
use crate::datasets::MappingDataset;
use crate::expr::{Expr, Program, DEFAULT_CLIP_BOUND};
use crate::fitness::{r_squared, FitnessConfig, FitnessError, FitnessParams, Objective};
use crate::rng::stream;

pub use nsga::{
    assign_rank_and_crowding, crowding_distance, crowding_objectives, dominates, dominates_objectives,
    nondominated_sort, sort_objectives,
};
pub use search::{
    read_front_csv, run_search, write_front_csv, FrontRecord, SearchFailure, SearchOutcome, SearchResult, FRONT_COLUMNS,
};
pub use variation::{MutationKind, Variation};

const INIT_STREAM: u64 = 0x1417;
const VARIATION_STREAM: u64 = 0x7a21;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid GP configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error("every individual of the initial population failed to evaluate")]
    EmptyPopulation,
    #[error("the final front is empty")]
    EmptyFront,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub population_size: usize,
    pub generations: usize,
    pub max_init_depth: usize,
    pub max_nodes: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub refinement_steps: usize,
    pub refinement_step_size: f64,
    pub fitness: FitnessConfig,
    pub seed: u64,
    /// Ephemeral constants are drawn from `U(-const_range, const_range)`.
    pub const_range: f64,
    /// Probability that a generated leaf is `x` rather than a constant.
    pub var_probability: f64,
    pub clip_bound: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population_size: 500,
            generations: 50,
            max_init_depth: 4,
            max_nodes: 20,
            crossover_rate: 0.8,
            mutation_rate: 0.2,
            tournament_size: 2,
            refinement_steps: 10,
            refinement_step_size: 0.05,
            fitness: FitnessConfig::default(),
            seed: 0,
            const_range: 3.0,
            var_probability: 0.5,
            clip_bound: DEFAULT_CLIP_BOUND,
        }
    }
}

impl GpConfig {
    /// Reduced scale for quick runs: 200 individuals, 30 generations.
    pub fn desk() -> Self {
        GpConfig {
            population_size: 200,
            generations: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |msg: String| Err(EvolveError::InvalidConfig(msg));
        if self.population_size < 2 {
            return bad(format!("population_size {} < 2", self.population_size));
        }
        if self.generations < 1 {
            return bad("generations must be >= 1".into());
        }
        if self.max_nodes < 3 {
            return bad(format!("max_nodes {} < 3", self.max_nodes));
        }
        if self.max_init_depth < 1 {
            return bad("max_init_depth must be >= 1".into());
        }
        if self.tournament_size < 1 {
            return bad("tournament_size must be >= 1".into());
        }
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
            ("var_probability", self.var_probability),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        if !(self.refinement_step_size > 0.0 && self.refinement_step_size.is_finite()) {
            return bad(format!("refinement_step_size {}", self.refinement_step_size));
        }
        if !(self.const_range > 0.0 && self.const_range.is_finite()) {
            return bad(format!("const_range {}", self.const_range));
        }
        if !(self.clip_bound > 0.0 && self.clip_bound.is_finite()) {
            return bad(format!("clip_bound {}", self.clip_bound));
        }
        if !(self.fitness.gamma >= 0.0 && self.fitness.gamma.is_finite()) {
            return bad(format!("gamma {}", self.fitness.gamma));
        }
        Ok(())
    }

    pub fn refiner(&self) -> Refiner {
        Refiner {
            steps: self.refinement_steps,
            step_size: self.refinement_step_size,
            ..Refiner::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub expr: Expr,
    /// Composite training fitness.
    pub fitness: f64,
    /// Node count.
    pub complexity: usize,
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn new(expr: Expr, fitness: f64) -> Self {
        let complexity = expr.node_count();
        Individual {
            expr,
            fitness,
            complexity,
            rank: 0,
            crowding: 0.0,
        }
    }

    pub fn objectives(&self) -> [f64; 2] {
        [self.fitness, self.complexity as f64]
    }
}

/// A front member with its held-out scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontMember {
    pub individual: Individual,
    pub fitness_val: f64,
    pub mse_val: f64,
    pub r2_val: f64,
}

impl FrontMember {
    pub fn expression(&self) -> String {
        self.individual.expr.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    pub layer_id: String,
    pub seed: u64,
    pub members: Vec<FrontMember>,
}

/// Result of one layer search.
#[derive(Debug, Clone)]
pub struct LayerRun {
    pub front: ParetoFront,
    /// Minimum training fitness of the population after initialization and
    /// after each generation.
    pub best_fitness: Vec<f64>,
    pub params: FitnessParams,
}

/// Refines and scores `exprs`; trees that cannot be evaluated are dropped.
fn evaluate_all(exprs: Vec<Expr>, objective: &Objective, refiner: &Refiner) -> Vec<Individual> {
    exprs
        .into_par_iter()
        .filter_map(|e| {
            let r = refiner.refine(&e, objective).ok()?;
            r.fitness.is_finite().then(|| Individual::new(r.expr, r.fitness))
        })
        .collect()
}

/// Unevaluated initial trees, ramped half-and-half.
pub fn init_trees(config: &GpConfig) -> Vec<Expr> {
    let v = Variation::from(config);
    (0..config.population_size)
        .map(|i| v.init_tree(i, &mut stream(config.seed, &[INIT_STREAM, i as u64])))
        .collect()
}

/// Initial population, evaluated and refined against `objective`.
pub fn init_population(config: &GpConfig, objective: &Objective) -> Vec<Individual> {
    let mut pop = evaluate_all(init_trees(config), objective, &config.refiner());
    assign_rank_and_crowding(&mut pop);
    pop
}

fn tournament<'a>(pop: &'a [Individual], k: usize, rng: &mut impl Rng) -> &'a Individual {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..k {
        let c = &pop[rng.random_range(0..pop.len())];
        if (c.rank, -c.crowding) < (best.rank, -best.crowding) {
            best = c;
        }
    }
    best
}

fn offspring(pop: &[Individual], config: &GpConfig, generation: usize) -> Vec<Expr> {
    let v = Variation::from(config);
    let pairs = config.population_size.div_ceil(2);
    let mut out: Vec<Expr> = (0..pairs)
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut rng = stream(config.seed, &[VARIATION_STREAM, generation as u64, p as u64]);
            let a = tournament(pop, config.tournament_size, &mut rng);
            let b = tournament(pop, config.tournament_size, &mut rng);
            let (ca, cb) = if rng.random_bool(config.crossover_rate) {
                v.crossover(&a.expr, &b.expr, &mut rng)
            } else {
                (a.expr.clone(), b.expr.clone())
            };
            [v.mutate(&ca, &mut rng), v.mutate(&cb, &mut rng)]
        })
        .collect();
    out.truncate(config.population_size);
    out
}

fn selection_order(pop: &[Individual], a: usize, b: usize) -> std::cmp::Ordering {
    let (x, y) = (&pop[a], &pop[b]);
    x.rank
        .cmp(&y.rank)
        .then(y.crowding.total_cmp(&x.crowding))
        .then(x.fitness.total_cmp(&y.fitness))
        .then(x.complexity.cmp(&y.complexity))
        .then(a.cmp(&b))
}

/// `(mu + lambda)` truncation by rank, then crowding (larger first), then
/// fitness, complexity and position for a total order.
///
/// Clones (same expression string as an earlier member of the union) are
/// ranked among themselves and only fill slots the unique trees leave free.
/// Otherwise the first front, which has at most `max_nodes` distinct
/// objective vectors, floods the population with copies and every new tree
/// is truncated on arrival.
fn environmental_selection(union: Vec<Individual>, mu: usize) -> Vec<Individual> {
    let mut seen = HashSet::new();
    let (mut unique, mut clones): (Vec<Individual>, Vec<Individual>) =
        union.into_iter().partition(|i| seen.insert(i.expr.to_string()));
    assign_rank_and_crowding(&mut unique);
    assign_rank_and_crowding(&mut clones);
    let mut order_u: Vec<usize> = (0..unique.len()).collect();
    order_u.sort_by(|&a, &b| selection_order(&unique, a, b));
    let mut order_c: Vec<usize> = (0..clones.len()).collect();
    order_c.sort_by(|&a, &b| selection_order(&clones, a, b));

    let mut slots_u: Vec<Option<Individual>> = unique.into_iter().map(Some).collect();
    let mut slots_c: Vec<Option<Individual>> = clones.into_iter().map(Some).collect();
    let mut next: Vec<Individual> = order_u
        .into_iter()
        .map(|i| slots_u[i].take().expect("visited once"))
        .chain(order_c.into_iter().map(|i| slots_c[i].take().expect("visited once")))
        .take(mu)
        .collect();
    // Ranks and crowding among the survivors drive the next tournaments.
    assign_rank_and_crowding(&mut next);
    next
}

fn best_fitness(pop: &[Individual]) -> f64 {
    pop.iter().map(|i| i.fitness).fold(f64::INFINITY, f64::min)
}

/// Runs one complete search for one layer.
///
/// `delta` is frozen from the training inputs (unless overridden in the
/// config); the final first front is deduplicated by expression string and
/// scored on `val` with the same objective.
pub fn evolve_layer(train: &MappingDataset, val: &MappingDataset, config: &GpConfig) -> Result<LayerRun, EvolveError> {
    evolve_layer_observed(train, val, config, |_, _| {})
}

/// [`evolve_layer`], calling `observe(generation, individuals)` with the
/// initial population (generation 0) and with parents plus evaluated
/// offspring before each selection (generations 1..).
pub fn evolve_layer_observed(
    train: &MappingDataset,
    val: &MappingDataset,
    config: &GpConfig,
    mut observe: impl FnMut(usize, &[Individual]),
) -> Result<LayerRun, EvolveError> {
    config.validate()?;
    let params = config.fitness.resolve(train.inputs())?;
    let objective = Objective::new(train.inputs(), train.targets(), params)?;
    let refiner = config.refiner();

    let mut pop = init_population(config, &objective);
    if pop.is_empty() {
        return Err(EvolveError::EmptyPopulation);
    }
    observe(0, &pop);
    let mut history = vec![best_fitness(&pop)];
    for generation in 0..config.generations {
        let children = evaluate_all(offspring(&pop, config, generation), &objective, &refiner);
        pop.extend(children);
        observe(generation + 1, &pop);
        pop = environmental_selection(pop, config.population_size);
        history.push(best_fitness(&pop));
    }

    let front = final_front(&pop, train, val, config, params)?;
    Ok(LayerRun {
        front,
        best_fitness: history,
        params,
    })
}

fn final_front(
    pop: &[Individual],
    train: &MappingDataset,
    val: &MappingDataset,
    config: &GpConfig,
    params: FitnessParams,
) -> Result<ParetoFront, EvolveError> {
    let val_objective = Objective::new(val.inputs(), val.targets(), config.fitness.validation_params(params))?;
    let mut first: Vec<&Individual> = pop.iter().filter(|i| i.rank == 0).collect();
    first.sort_by(|a, b| {
        a.complexity
            .cmp(&b.complexity)
            .then(a.fitness.total_cmp(&b.fitness))
            .then_with(|| a.expr.to_string().cmp(&b.expr.to_string()))
    });
    let mut seen = HashSet::new();
    let mut members = Vec::new();
    for ind in first {
        if !seen.insert(ind.expr.to_string()) {
            continue;
        }
        let program = Program::compile(&ind.expr);
        // A tree that only overflows on held-out inputs cannot be selected.
        let Ok(tape) = val_objective.forward(&program) else {
            continue;
        };
        let pred = &tape.output()[..val.len()];
        members.push(FrontMember {
            individual: ind.clone(),
            fitness_val: val_objective.loss_from_tape(&tape),
            mse_val: val_objective.mse_from_tape(&tape),
            r2_val: r_squared(pred, val.targets())?,
        });
    }
    if members.is_empty() {
        return Err(EvolveError::EmptyFront);
    }
    Ok(ParetoFront {
        layer_id: train.layer_id.clone(),
        seed: config.seed,
        members,
    })
}

/// Lowest validation fitness; ties go to fewer nodes, then the
/// lexicographically smaller expression string.
pub fn select_best(front: &ParetoFront) -> Result<&FrontMember, EvolveError> {
    front
        .members
        .iter()
        .min_by(|a, b| {
            a.fitness_val
                .total_cmp(&b.fitness_val)
                .then(a.individual.complexity.cmp(&b.individual.complexity))
                .then_with(|| a.expression().cmp(&b.expression()))
        })
        .ok_or(EvolveError::EmptyFront)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Provenance, SplitTag};
    use crate::expr::parse;

    fn member(expr: &str, fitness_val: f64) -> FrontMember {
        FrontMember {
            individual: Individual::new(parse(expr).unwrap(), 0.0),
            fitness_val,
            mse_val: 0.0,
            r2_val: 0.0,
        }
    }

    fn front(members: Vec<FrontMember>) -> ParetoFront {
        ParetoFront {
            layer_id: "l".into(),
            seed: 0,
            members,
        }
    }

    #[test]
    fn select_best_rules() {
        let f = front(vec![member("x", 0.3)]);
        assert_eq!(select_best(&f).unwrap().expression(), "x");
        let f = front(vec![member("x", 0.1), member("tanh(x)", 0.2)]);
        assert_eq!(select_best(&f).unwrap().expression(), "x");
        // 5 nodes vs 9 nodes at equal fitness
        let f = front(vec![member("tanh(x)*tanh(x)+x", 0.1), member("2*x+1", 0.1)]);
        assert_eq!(select_best(&f).unwrap().individual.complexity, 5);
        let f = front(vec![member("tanh(x)", 0.1), member("clip(x)", 0.1)]);
        assert_eq!(select_best(&f).unwrap().expression(), "clip(x)");
        assert!(select_best(&front(vec![])).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GpConfig::default().validate().is_ok());
        assert!(GpConfig {
            population_size: 1,
            ..GpConfig::default()
        }
        .validate()
        .is_err());
        assert!(GpConfig {
            max_nodes: 2,
            ..GpConfig::default()
        }
        .validate()
        .is_err());
        assert!(GpConfig {
            mutation_rate: 1.5,
            ..GpConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!(GpConfig::desk().population_size, 200);
        assert_eq!(GpConfig::desk().generations, 30);
    }

    fn toy_data(n: usize) -> (MappingDataset, MappingDataset) {
        let xs: Vec<f64> = (0..n).map(|i| -3.0 + 6.0 * i as f64 / (n - 1) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (1.5 * x).tanh()).collect();
        let tr: Vec<usize> = (0..n).filter(|i| i % 5 != 0).collect();
        let va: Vec<usize> = (0..n).filter(|i| i % 5 == 0).collect();
        let pick = |rows: &[usize], split| {
            MappingDataset::new(
                "toy",
                rows.iter().map(|&i| xs[i]).collect(),
                rows.iter().map(|&i| ys[i]).collect(),
                split,
                Provenance::Synthetic,
            )
            .unwrap()
        };
        (pick(&tr, SplitTag::Train), pick(&va, SplitTag::Val))
    }

    #[test]
    fn one_generation_front_is_valid() {
        let (tr, va) = toy_data(200);
        let cfg = GpConfig {
            population_size: 30,
            generations: 1,
            ..GpConfig::default()
        };
        let run = evolve_layer(&tr, &va, &cfg).unwrap();
        assert!(!run.front.members.is_empty());
        for m in &run.front.members {
            assert!(m.individual.complexity <= 20);
        }
        for a in &run.front.members {
            for b in &run.front.members {
                assert!(!dominates(&a.individual, &b.individual));
            }
        }
        assert_eq!(run.best_fitness.len(), 2);
    }

    #[test]
    fn elitism_and_determinism() {
        let (tr, va) = toy_data(300);
        let cfg = GpConfig {
            population_size: 40,
            generations: 6,
            seed: 11,
            ..GpConfig::default()
        };
        let a = evolve_layer(&tr, &va, &cfg).unwrap();
        let b = evolve_layer(&tr, &va, &cfg).unwrap();
        assert_eq!(a.front, b.front);
        assert!(a.best_fitness.windows(2).all(|w| w[1] <= w[0]));
    }
}
