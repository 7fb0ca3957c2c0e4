//! Population initialization and breeding: ramped half-and-half, tournament
//! selection, subtree crossover and subtree mutation with reject-and-retry
//! depth enforcement.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::GpParams;
use super::primitives::{PrimId, PrimitiveSet};
use super::tree::ProgramTree;
use super::{EvalReport, GpError};

/// Probability of picking an internal node as a variation point, when the
/// tree has any (Koza's 90/10 node bias).
const FUNCTION_POINT_BIAS: f64 = 0.9;

/// Attempts before a depth-violating crossover/mutation falls back to
/// reproducing the first parent.
const DEPTH_RETRIES: usize = 10;

fn grow_nodes(pset: &PrimitiveSet, depth: usize, full: bool, rng: &mut ChaCha8Rng, out: &mut Vec<PrimId>) {
    let nf = pset.num_functions();
    let nt = pset.terminals.len();
    let pick_terminal = if depth <= 1 {
        true
    } else if full {
        false
    } else {
        // grow: uniform over all primitives
        rng.gen_range(0..nf + nt) >= nf
    };
    let id = if pick_terminal {
        (nf + rng.gen_range(0..nt)) as PrimId
    } else {
        rng.gen_range(0..nf) as PrimId
    };
    out.push(id);
    for _ in 0..pset.arity(id) {
        grow_nodes(pset, depth - 1, full, rng, out);
    }
}

/// Generate one tree of at most `depth`; `full` forces functions down to the
/// depth limit.
pub fn random_tree(pset: &PrimitiveSet, depth: usize, full: bool, rng: &mut ChaCha8Rng) -> ProgramTree {
    let mut nodes = Vec::new();
    grow_nodes(pset, depth, full, rng, &mut nodes);
    ProgramTree::from_prefix(nodes)
}

/// Ramped half-and-half over depths `2..=max_initial_depth`, alternating
/// grow and full.
pub fn init_population(params: &GpParams, pset: &PrimitiveSet, rng: &mut ChaCha8Rng) -> Result<Vec<ProgramTree>, GpError> {
    params.validate()?;
    pset.validate()?;
    let min_depth = 2usize;
    let n_depths = params.max_initial_depth - min_depth + 1;
    let mut pop = Vec::with_capacity(params.population_size);
    for i in 0..params.population_size {
        let depth = min_depth + i % n_depths;
        let full = (i / n_depths).is_multiple_of(2);
        pop.push(random_tree(pset, depth, full, rng));
    }
    Ok(pop)
}

/// Tournament over adjusted fitness; ties broken by earlier index.
fn tournament<'a>(
    pop: &'a [ProgramTree],
    fits: &[EvalReport],
    size: usize,
    rng: &mut ChaCha8Rng,
) -> &'a ProgramTree {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..size {
        let i = rng.gen_range(0..pop.len());
        if fits[i].hits > fits[best].hits || (fits[i].hits == fits[best].hits && i < best) {
            best = i;
        }
    }
    &pop[best]
}

/// Variation point with Koza's function-node bias.
fn pick_point(tree: &ProgramTree, pset: &PrimitiveSet, rng: &mut ChaCha8Rng) -> usize {
    let internals: Vec<usize> = (0..tree.len())
        .filter(|&i| !pset.is_terminal(tree.nodes()[i]))
        .collect();
    if !internals.is_empty() && rng.gen_bool(FUNCTION_POINT_BIAS) {
        internals[rng.gen_range(0..internals.len())]
    } else {
        rng.gen_range(0..tree.len())
    }
}

fn crossover(
    a: &ProgramTree,
    b: &ProgramTree,
    params: &GpParams,
    pset: &PrimitiveSet,
    rng: &mut ChaCha8Rng,
) -> ProgramTree {
    for _ in 0..DEPTH_RETRIES {
        let pa = pick_point(a, pset, rng);
        let pb = pick_point(b, pset, rng);
        let donor = &b.nodes()[b.subtree_range(pb, pset)];
        let child = a.with_replaced_subtree(pa, donor, pset);
        if child.depth(pset) <= params.max_depth {
            return child;
        }
    }
    a.clone()
}

/// Subtree-mutation replacement depth (Koza's grow limit for new subtrees).
const MUTATION_SUBTREE_DEPTH: usize = 4;

fn mutate(
    a: &ProgramTree,
    params: &GpParams,
    pset: &PrimitiveSet,
    rng: &mut ChaCha8Rng,
) -> ProgramTree {
    for _ in 0..DEPTH_RETRIES {
        let pa = pick_point(a, pset, rng);
        let replacement = random_tree(pset, MUTATION_SUBTREE_DEPTH, false, rng);
        let child = a.with_replaced_subtree(pa, replacement.nodes(), pset);
        if child.depth(pset) <= params.max_depth {
            return child;
        }
    }
    a.clone()
}

/// One generational breeding cycle: produces a same-sized population from an
/// evaluated one. Deterministic given the RNG state.
pub fn breed(
    pop: &[ProgramTree],
    fits: &[EvalReport],
    params: &GpParams,
    pset: &PrimitiveSet,
    rng: &mut ChaCha8Rng,
) -> Vec<ProgramTree> {
    debug_assert_eq!(pop.len(), fits.len());
    let mut next = Vec::with_capacity(pop.len());
    while next.len() < pop.len() {
        let r: f64 = rng.gen();
        let child = if r < params.crossover_prob {
            let a = tournament(pop, fits, params.tournament_size, rng).clone();
            let b = tournament(pop, fits, params.tournament_size, rng).clone();
            crossover(&a, &b, params, pset, rng)
        } else if r < params.crossover_prob + params.mutation_prob {
            let a = tournament(pop, fits, params.tournament_size, rng).clone();
            mutate(&a, params, pset, rng)
        } else {
            tournament(pop, fits, params.tournament_size, rng).clone()
        };
        next.push(child);
    }
    next
}
