//! Boolean multiplexer fitness: exhaustive evaluation over all
//! 2^(k + 2^k) input assignments.
//!
//! Evaluation is bit-sliced: each signal is a column of 2^(k+2^k) truth bits
//! packed into u64 words, and every tree node becomes a handful of word-wide
//! boolean ops. Case index bit `i` is the value of input `i`, with inputs
//! ordered `a0..a(k-1), d0..d(2^k - 1)`.

use super::primitives::PrimitiveSet;
use super::tree::ProgramTree;
use super::{EvalReport, GpError};

/// Number of fitness cases for the k-multiplexer.
pub fn total_cases(k: u32) -> u64 {
    1u64 << (k as u64 + (1u64 << k))
}

fn num_words(cases: u64) -> usize {
    cases.div_ceil(64) as usize
}

/// Truth column of input variable `var` (0-based case-index bit).
fn input_column(var: usize, cases: u64) -> Vec<u64> {
    let words = num_words(cases);
    let mut col = vec![0u64; words];
    if var < 6 {
        // pattern repeats within a word
        let mut pattern = 0u64;
        for bit in 0..64 {
            if (bit >> var) & 1 == 1 {
                pattern |= 1 << bit;
            }
        }
        col.fill(pattern);
    } else {
        for (w, word) in col.iter_mut().enumerate() {
            if (w >> (var - 6)) & 1 == 1 {
                *word = !0;
            }
        }
    }
    // mask tail beyond the case count
    let tail = (cases % 64) as u32;
    if tail != 0 {
        *col.last_mut().unwrap() &= (1u64 << tail) - 1;
    }
    col
}

/// The target column: for each case, the data bit selected by the address bits.
fn target_column(k: u32, cases: u64) -> Vec<u64> {
    let words = num_words(cases);
    let mut col = vec![0u64; words];
    for case in 0..cases {
        let addr = (case & ((1u64 << k) - 1)) as usize;
        let data_bit = (case >> (k as u64 + addr as u64)) & 1;
        if data_bit == 1 {
            col[(case / 64) as usize] |= 1 << (case % 64);
        }
    }
    col
}

/// Precomputed evaluation context for one multiplexer size.
pub struct MuxEval {
    k: u32,
    cases: u64,
    inputs: Vec<Vec<u64>>,
    target: Vec<u64>,
}

impl MuxEval {
    pub fn new(k: u32) -> Result<MuxEval, GpError> {
        // reuse the primitive-set size guard
        PrimitiveSet::multiplexer(k)?;
        let cases = total_cases(k);
        let n_inputs = k as usize + (1usize << k);
        let inputs = (0..n_inputs).map(|v| input_column(v, cases)).collect();
        Ok(MuxEval { k, cases, inputs, target: target_column(k, cases) })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn total_cases(&self) -> u64 {
        self.cases
    }

    pub fn evaluate(&self, tree: &ProgramTree, pset: &PrimitiveSet) -> EvalReport {
        let words = num_words(self.cases);
        let mut pos = 0usize;
        let out = self.eval_node(tree, pset, &mut pos);
        debug_assert_eq!(pos, tree.len());
        let mut hits = 0u64;
        let tail = (self.cases % 64) as u32;
        for (w, (&o, &t)) in out.iter().zip(self.target.iter()).enumerate() {
            let mut agree = !(o ^ t);
            if tail != 0 && w == words - 1 {
                agree &= (1u64 << tail) - 1;
            }
            hits += agree.count_ones() as u64;
        }
        EvalReport::from_hits(hits, self.cases)
    }

    fn eval_node(
        &self,
        tree: &ProgramTree,
        pset: &PrimitiveSet,
        pos: &mut usize,
    ) -> Vec<u64> {
        let id = tree.nodes()[*pos];
        *pos += 1;
        if pset.is_terminal(id) {
            return self.inputs[pset.terminal_index(id)].clone();
        }
        match pset.name(id) {
            "AND" => {
                let mut a = self.eval_node(tree, pset, pos);
                let b = self.eval_node(tree, pset, pos);
                for (x, y) in a.iter_mut().zip(&b) {
                    *x &= y;
                }
                a
            }
            "OR" => {
                let mut a = self.eval_node(tree, pset, pos);
                let b = self.eval_node(tree, pset, pos);
                for (x, y) in a.iter_mut().zip(&b) {
                    *x |= y;
                }
                a
            }
            "NOT" => {
                let mut a = self.eval_node(tree, pset, pos);
                for x in a.iter_mut() {
                    *x = !*x;
                }
                a
            }
            "IF" => {
                let c = self.eval_node(tree, pset, pos);
                let mut t = self.eval_node(tree, pset, pos);
                let e = self.eval_node(tree, pset, pos);
                for ((x, &cw), &ew) in t.iter_mut().zip(&c).zip(&e) {
                    *x = (cw & *x) | (!cw & ew);
                }
                t
            }
            other => unreachable!("unknown multiplexer function {other}"),
        }
    }
}

/// One-shot evaluation; builds the context each call. Long runs should reuse
/// a [`MuxEval`].
pub fn evaluate_multiplexer(tree: &ProgramTree, k: u32, pset: &PrimitiveSet) -> Result<EvalReport, GpError> {
    Ok(MuxEval::new(k)?.evaluate(tree, pset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Independent per-case interpreter used as the truth-table oracle.
    /// Kept deliberately naive: walks the tree once per input assignment.
    pub fn oracle_hits(tree: &ProgramTree, k: u32, pset: &PrimitiveSet) -> u64 {
        fn eval_case(tree: &ProgramTree, pset: &PrimitiveSet, pos: &mut usize, case: u64) -> bool {
            let id = tree.nodes()[*pos];
            *pos += 1;
            if pset.is_terminal(id) {
                let var = pset.terminal_index(id);
                return (case >> var) & 1 == 1;
            }
            match pset.name(id) {
                "AND" => {
                    let a = eval_case(tree, pset, pos, case);
                    let b = eval_case(tree, pset, pos, case);
                    a && b
                }
                "OR" => {
                    let a = eval_case(tree, pset, pos, case);
                    let b = eval_case(tree, pset, pos, case);
                    a || b
                }
                "NOT" => !eval_case(tree, pset, pos, case),
                "IF" => {
                    let c = eval_case(tree, pset, pos, case);
                    let t = eval_case(tree, pset, pos, case);
                    let e = eval_case(tree, pset, pos, case);
                    if c {
                        t
                    } else {
                        e
                    }
                }
                _ => unreachable!(),
            }
        }
        let mut hits = 0;
        for case in 0..total_cases(k) {
            let addr = case & ((1u64 << k) - 1);
            let want = (case >> (k as u64 + addr)) & 1 == 1;
            let mut pos = 0;
            if eval_case(tree, pset, &mut pos, case) == want {
                hits += 1;
            }
        }
        hits
    }

    /// Random well-formed tree over `pset`, grown to at most `depth`.
    pub fn random_tree(pset: &PrimitiveSet, depth: usize, rng: &mut impl Rng) -> ProgramTree {
        fn grow(pset: &PrimitiveSet, depth: usize, rng: &mut impl Rng, out: &mut Vec<u16>) {
            let nf = pset.num_functions();
            let nt = pset.terminals.len();
            let id = if depth <= 1 || rng.gen_bool(0.4) {
                (nf + rng.gen_range(0..nt)) as u16
            } else {
                rng.gen_range(0..nf) as u16
            };
            out.push(id);
            for _ in 0..pset.arity(id) {
                grow(pset, depth - 1, rng, out);
            }
        }
        let mut nodes = Vec::new();
        grow(pset, depth, rng, &mut nodes);
        ProgramTree::from_prefix(nodes)
    }

    #[test]
    fn constant_true_k3_hits_half() {
        // d-bit selected is 1 in exactly half of all assignments
        let pset = PrimitiveSet::multiplexer(3).unwrap();
        let tree = ProgramTree::from_sexpr("(OR d0 (NOT d0))", &pset).unwrap();
        let report = evaluate_multiplexer(&tree, 3, &pset).unwrap();
        assert_eq!(report.hits, 1024);
        assert_eq!(total_cases(3), 2048);
    }

    #[test]
    fn perfect_if_solution_k1_and_k2() {
        let pset = PrimitiveSet::multiplexer(1).unwrap();
        let tree = ProgramTree::from_sexpr("(IF a0 d1 d0)", &pset).unwrap();
        let report = evaluate_multiplexer(&tree, 1, &pset).unwrap();
        assert_eq!(report.hits, 8);
        assert_eq!(report.raw, 0.0);
        assert_eq!(report.adjusted, 1.0);

        let pset = PrimitiveSet::multiplexer(2).unwrap();
        let tree = ProgramTree::from_sexpr(
            "(IF a1 (IF a0 d3 d2) (IF a0 d1 d0))",
            &pset,
        )
        .unwrap();
        let report = evaluate_multiplexer(&tree, 2, &pset).unwrap();
        assert_eq!(report.hits, 64);
        assert_eq!(report.adjusted, 1.0);
    }

    #[test]
    fn perfect_nested_if_solution_k3() {
        let pset = PrimitiveSet::multiplexer(3).unwrap();
        let tree = ProgramTree::from_sexpr(
            "(IF a2 (IF a1 (IF a0 d7 d6) (IF a0 d5 d4)) (IF a1 (IF a0 d3 d2) (IF a0 d1 d0)))",
            &pset,
        )
        .unwrap();
        let report = evaluate_multiplexer(&tree, 3, &pset).unwrap();
        assert_eq!(report.hits, 2048);
        assert_eq!(report.raw, 0.0);
        assert_eq!(report.adjusted, 1.0);
    }

    #[test]
    fn reported_k4_fitness_triple() {
        // 1048576 - 868352 = 180224; 1/(1+180224) = 5.54862e-06
        let report = EvalReport::from_hits(868_352, total_cases(4));
        assert_eq!(report.raw, 180224.0);
        assert_eq!(format!("{:.5e}", report.adjusted), "5.54862e-6");
    }

    #[test]
    fn matches_oracle_on_random_trees_k1() {
        let pset = PrimitiveSet::multiplexer(1).unwrap();
        let eval = MuxEval::new(1).unwrap();
        let mut rng = rand::thread_rng();
        for _ in 0..200 {
            let tree = random_tree(&pset, 5, &mut rng);
            let fast = eval.evaluate(&tree, &pset);
            assert_eq!(fast.hits, oracle_hits(&tree, 1, &pset), "tree {}", tree.to_sexpr(&pset));
        }
    }

    #[test]
    fn matches_oracle_on_random_trees_k2() {
        let pset = PrimitiveSet::multiplexer(2).unwrap();
        let eval = MuxEval::new(2).unwrap();
        let mut rng = rand::thread_rng();
        for _ in 0..100 {
            let tree = random_tree(&pset, 6, &mut rng);
            let fast = eval.evaluate(&tree, &pset);
            assert_eq!(fast.hits, oracle_hits(&tree, 2, &pset), "tree {}", tree.to_sexpr(&pset));
        }
    }
}
