//! The generational loop as a resumable state machine.
//!
//! `GpRunState` holds everything a run needs between generations (population,
//! PRNG state, best-so-far, statistics); a checkpoint is a serialized copy of
//! that state, so resuming and continuing is indistinguishable from never
//! having stopped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::breed::{breed, init_population};
use super::checkpoint::{Checkpoint, CheckpointPolicy, CheckpointSink};
use super::multiplexer::MuxEval;
use super::params::{ProblemId, RunSpec};
use super::primitives::PrimitiveSet;
use super::santa_fe::{evaluate_santa_fe_on, Trail};
use super::tree::ProgramTree;
use super::{EvalReport, GpError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub generation: usize,
    pub best_hits: u64,
    pub mean_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpRunResult {
    pub best_sexpr: String,
    pub best: EvalReport,
    pub gen_stats: Vec<GenStats>,
    /// Wall-clock seconds spent inside the run. Not part of the canonical
    /// artifact (it differs between hosts).
    pub cpu_time: f64,
    pub evaluations: u64,
}

#[allow(clippy::large_enum_variant)] // one per run, MuxEval dominates
enum Evaluator {
    Mux(MuxEval),
    Ant(Trail),
}

impl Evaluator {
    fn for_problem(problem: ProblemId) -> Result<Evaluator, GpError> {
        match problem {
            ProblemId::Multiplexer(k) => Ok(Evaluator::Mux(MuxEval::new(k)?)),
            ProblemId::SantaFe => Ok(Evaluator::Ant(Trail::default_trail())),
        }
    }

    fn evaluate(&self, tree: &ProgramTree, spec: &RunSpec, pset: &PrimitiveSet) -> EvalReport {
        match self {
            Evaluator::Mux(m) => m.evaluate(tree, pset),
            Evaluator::Ant(trail) => evaluate_santa_fe_on(tree, &spec.params, pset, trail),
        }
    }

    fn total_cases(&self) -> u64 {
        match self {
            Evaluator::Mux(m) => m.total_cases(),
            Evaluator::Ant(trail) => trail.total_food(),
        }
    }
}

pub struct GpRunState {
    spec: RunSpec,
    spec_digest: String,
    pset: PrimitiveSet,
    evaluator: Evaluator,
    /// Generations fully evaluated so far.
    generation: usize,
    population: Vec<ProgramTree>,
    rng: ChaCha8Rng,
    best: Option<(ProgramTree, EvalReport)>,
    gen_stats: Vec<GenStats>,
    evaluations: u64,
}

impl GpRunState {
    pub fn new(spec: RunSpec) -> Result<GpRunState, GpError> {
        spec.validate()?;
        let pset = PrimitiveSet::for_problem(spec.problem)?;
        let evaluator = Evaluator::for_problem(spec.problem)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.params.seed);
        let population = init_population(&spec.params, &pset, &mut rng)?;
        Ok(GpRunState {
            spec_digest: spec.digest(),
            pset,
            evaluator,
            generation: 0,
            population,
            rng,
            best: None,
            gen_stats: Vec::new(),
            evaluations: 0,
            spec,
        })
    }

    /// Rebuild a run from a checkpoint. Refused when the checkpoint belongs
    /// to a different parameter set.
    pub fn resume(spec: RunSpec, cp: Checkpoint) -> Result<GpRunState, GpError> {
        spec.validate()?;
        let digest = spec.digest();
        if cp.spec_digest != digest {
            return Err(GpError::CheckpointParamsMismatch);
        }
        let pset = PrimitiveSet::for_problem(spec.problem)?;
        let evaluator = Evaluator::for_problem(spec.problem)?;
        Ok(GpRunState {
            spec_digest: digest,
            pset,
            evaluator,
            generation: cp.generation,
            population: cp.population,
            rng: cp.rng,
            best: cp.best,
            gen_stats: cp.gen_stats,
            evaluations: cp.evaluations,
            spec,
        })
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn finished(&self) -> bool {
        self.generation >= self.spec.params.generations
    }

    pub fn spec(&self) -> &RunSpec {
        &self.spec
    }

    pub fn pset(&self) -> &PrimitiveSet {
        &self.pset
    }

    /// Progress fraction for heartbeats.
    pub fn progress(&self) -> f64 {
        self.generation as f64 / self.spec.params.generations as f64
    }

    /// Evaluate the current population, record stats, and (unless this was
    /// the final generation) breed the next one.
    pub fn step(&mut self) {
        if self.finished() {
            return;
        }
        let fits: Vec<EvalReport> = self
            .population
            .iter()
            .map(|t| self.evaluator.evaluate(t, &self.spec, &self.pset))
            .collect();
        self.evaluations += fits.len() as u64;
        let mut best_i = 0;
        let mut raw_sum = 0.0f64;
        for (i, f) in fits.iter().enumerate() {
            raw_sum += f.raw;
            if f.hits > fits[best_i].hits {
                best_i = i;
            }
        }
        let gen_best = &fits[best_i];
        if self.best.as_ref().is_none_or(|(_, b)| gen_best.hits > b.hits) {
            self.best = Some((self.population[best_i].clone(), *gen_best));
        }
        self.gen_stats.push(GenStats {
            generation: self.generation,
            best_hits: gen_best.hits,
            mean_raw: raw_sum / fits.len() as f64,
        });
        self.generation += 1;
        if !self.finished() {
            self.population = breed(&self.population, &fits, &self.spec.params, &self.pset, &mut self.rng);
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec_digest: self.spec_digest.clone(),
            generation: self.generation,
            population: self.population.clone(),
            rng: self.rng.clone(),
            best: self.best.clone(),
            gen_stats: self.gen_stats.clone(),
            evaluations: self.evaluations,
        }
    }

    pub fn into_result(self, cpu_time: f64) -> GpRunResult {
        let (best_tree, best) = self.best.unwrap_or_else(|| {
            // only possible for a run interrogated before its first step
            let tree = self.population[0].clone();
            let report = EvalReport::from_hits(0, self.evaluator.total_cases());
            (tree, report)
        });
        GpRunResult {
            best_sexpr: best_tree.to_sexpr(&self.pset),
            best,
            gen_stats: self.gen_stats,
            cpu_time,
            evaluations: self.evaluations,
        }
    }
}

/// Run to completion, honoring the checkpoint policy, optionally resuming.
pub fn run_gp(
    spec: &RunSpec,
    mut sink: Option<&mut dyn CheckpointSink>,
    resume: Option<Checkpoint>,
) -> Result<GpRunResult, GpError> {
    let start = std::time::Instant::now();
    let mut state = match resume {
        Some(cp) => GpRunState::resume(spec.clone(), cp)?,
        None => GpRunState::new(spec.clone())?,
    };
    let policy = CheckpointPolicy::default();
    let mut last_checkpoint = std::time::Instant::now();
    let mut gens_since_checkpoint = 0usize;
    while !state.finished() {
        state.step();
        gens_since_checkpoint += 1;
        if let Some(sink) = sink.as_deref_mut() {
            let due = gens_since_checkpoint >= policy.every_generations
                || last_checkpoint.elapsed().as_secs_f64() >= policy.every_seconds;
            if due && !state.finished() {
                sink.save(&state.checkpoint())?;
                gens_since_checkpoint = 0;
                last_checkpoint = std::time::Instant::now();
            }
        }
    }
    Ok(state.into_result(start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::checkpoint::{checkpoint_load, checkpoint_save};
    use crate::gp::params::GpParams;

    fn spec(problem: ProblemId, pop: usize, gens: usize, seed: u64) -> RunSpec {
        RunSpec {
            problem,
            params: GpParams {
                population_size: pop,
                generations: gens,
                mutation_prob: 0.05,
                crossover_prob: 0.85,
                reproduction_prob: 0.1,
                seed,
                ..GpParams::default()
            },
        }
    }

    #[test]
    fn evaluations_invariant_and_determinism() {
        let s = spec(ProblemId::Multiplexer(1), 20, 5, 7);
        let r1 = run_gp(&s, None, None).unwrap();
        let r2 = run_gp(&s, None, None).unwrap();
        assert_eq!(r1.evaluations, 100);
        assert_eq!(r1.best_sexpr, r2.best_sexpr);
        assert_eq!(r1.gen_stats, r2.gen_stats);
    }

    #[test]
    fn single_generation_returns_best_of_initial() {
        let s = spec(ProblemId::Multiplexer(1), 2, 1, 3);
        let r = run_gp(&s, None, None).unwrap();
        assert_eq!(r.evaluations, 2);
        assert_eq!(r.gen_stats.len(), 1);
    }

    #[test]
    fn interrupted_and_resumed_matches_uninterrupted() {
        let s = spec(ProblemId::Multiplexer(1), 50, 10, 7);
        let full = run_gp(&s, None, None).unwrap();

        let mut state = GpRunState::new(s.clone()).unwrap();
        for _ in 0..5 {
            state.step();
        }
        let bytes = checkpoint_save(&state.checkpoint());
        drop(state);
        let cp = checkpoint_load(&bytes).unwrap();
        let resumed = run_gp(&s, None, Some(cp)).unwrap();

        assert_eq!(full.best_sexpr, resumed.best_sexpr);
        assert_eq!(full.best, resumed.best);
        assert_eq!(full.gen_stats, resumed.gen_stats);
        assert_eq!(full.evaluations, resumed.evaluations);
    }

    #[test]
    fn resume_refused_for_different_params() {
        let s1 = spec(ProblemId::Multiplexer(1), 20, 5, 7);
        let s2 = spec(ProblemId::Multiplexer(1), 20, 5, 8);
        let mut state = GpRunState::new(s1).unwrap();
        state.step();
        let cp = state.checkpoint();
        assert!(matches!(
            GpRunState::resume(s2, cp),
            Err(GpError::CheckpointParamsMismatch)
        ));
    }

    #[test]
    fn santa_fe_run_smoke() {
        let s = spec(ProblemId::SantaFe, 30, 3, 1);
        let r = run_gp(&s, None, None).unwrap();
        assert_eq!(r.evaluations, 90);
        assert!(r.best.hits <= 89);
    }
}
