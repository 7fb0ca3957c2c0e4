//! Artificial Ant on the Santa Fe trail.
//!
//! The trail is a 32x32 toroidal grid with 89 food pellets, shipped as a text
//! data file (`.` empty, `#` food, `S` start cell facing east). The program
//! is executed from the root repeatedly until the step budget is exhausted;
//! `MOVE`, `LEFT` and `RIGHT` each consume one step, sensing is free.

use super::params::GpParams;
use super::primitives::{PrimId, PrimitiveSet};
use super::tree::ProgramTree;
use super::{EvalReport, GpError};

pub const TRAIL_SIZE: usize = 32;
pub const TRAIL_FOOD: u64 = 89;

/// The canonical trail, embedded so standalone runs need no data directory.
pub const DEFAULT_TRAIL: &str = include_str!("../../data/santafe_trail.txt");

#[derive(Debug, Clone)]
pub struct Trail {
    food: [[bool; TRAIL_SIZE]; TRAIL_SIZE],
    start: (usize, usize),
    total_food: u64,
}

impl Trail {
    pub fn parse(text: &str) -> Result<Trail, GpError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != TRAIL_SIZE {
            return Err(GpError::Config(format!(
                "trail must have {TRAIL_SIZE} lines, got {}",
                lines.len()
            )));
        }
        let mut food = [[false; TRAIL_SIZE]; TRAIL_SIZE];
        let mut start = None;
        let mut total = 0u64;
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != TRAIL_SIZE {
                return Err(GpError::Config(format!("trail line {} is not {TRAIL_SIZE} chars", r + 1)));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '.' => {}
                    '#' => {
                        food[r][c] = true;
                        total += 1;
                    }
                    'S' => {
                        if start.replace((r, c)).is_some() {
                            return Err(GpError::Config("trail has two start cells".into()));
                        }
                    }
                    other => return Err(GpError::Config(format!("bad trail char {other:?}"))),
                }
            }
        }
        let start = start.ok_or_else(|| GpError::Config("trail has no start cell".into()))?;
        if total != TRAIL_FOOD {
            return Err(GpError::Config(format!("trail has {total} pellets, expected {TRAIL_FOOD}")));
        }
        Ok(Trail { food, start, total_food: total })
    }

    pub fn default_trail() -> Trail {
        Trail::parse(DEFAULT_TRAIL).expect("embedded trail is valid")
    }

    pub fn total_food(&self) -> u64 {
        self.total_food
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Heading {
    East,
    South,
    West,
    North,
}

impl Heading {
    fn left(self) -> Heading {
        match self {
            Heading::East => Heading::North,
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
        }
    }
    fn right(self) -> Heading {
        match self {
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
            Heading::North => Heading::East,
        }
    }
    fn delta(self) -> (isize, isize) {
        match self {
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
            Heading::North => (-1, 0),
        }
    }
}

struct Ant {
    food: [[bool; TRAIL_SIZE]; TRAIL_SIZE],
    row: usize,
    col: usize,
    heading: Heading,
    steps_left: usize,
    eaten: u64,
}

impl Ant {
    fn ahead(&self) -> (usize, usize) {
        let (dr, dc) = self.heading.delta();
        let n = TRAIL_SIZE as isize;
        (
            ((self.row as isize + dr).rem_euclid(n)) as usize,
            ((self.col as isize + dc).rem_euclid(n)) as usize,
        )
    }

    fn food_ahead(&self) -> bool {
        let (r, c) = self.ahead();
        self.food[r][c]
    }

    /// Returns false once the step budget is exhausted.
    fn spend(&mut self) -> bool {
        if self.steps_left == 0 {
            return false;
        }
        self.steps_left -= 1;
        true
    }

    fn exec(&mut self, tree: &ProgramTree, pset: &PrimitiveSet, pos: &mut usize, ops: &SantaFeOps) -> bool {
        let id = tree.nodes()[*pos];
        *pos += 1;
        if id == ops.move_ {
            if !self.spend() {
                return false;
            }
            let (r, c) = self.ahead();
            self.row = r;
            self.col = c;
            if self.food[r][c] {
                self.food[r][c] = false;
                self.eaten += 1;
            }
            true
        } else if id == ops.left {
            if !self.spend() {
                return false;
            }
            self.heading = self.heading.left();
            true
        } else if id == ops.right {
            if !self.spend() {
                return false;
            }
            self.heading = self.heading.right();
            true
        } else if id == ops.if_food {
            let taken = self.food_ahead();
            let first = *pos;
            if taken {
                let alive = self.exec(tree, pset, pos, ops);
                *pos = tree.subtree_range(first, pset).end;
                *pos = tree.subtree_range(*pos, pset).end;
                alive
            } else {
                *pos = tree.subtree_range(first, pset).end;
                self.exec(tree, pset, pos, ops)
            }
        } else {
            // PROGN2 / PROGN3
            let arity = pset.arity(id);
            for _ in 0..arity {
                if !self.exec(tree, pset, pos, ops) {
                    return false;
                }
            }
            true
        }
    }
}

struct SantaFeOps {
    move_: PrimId,
    left: PrimId,
    right: PrimId,
    if_food: PrimId,
}

/// Evaluate a Santa Fe ant program on `trail` with `params.steps_limit` steps.
pub fn evaluate_santa_fe_on(tree: &ProgramTree, params: &GpParams, pset: &PrimitiveSet, trail: &Trail) -> EvalReport {
    let ops = SantaFeOps {
        move_: pset.id_by_name("MOVE").expect("santa fe set"),
        left: pset.id_by_name("LEFT").expect("santa fe set"),
        right: pset.id_by_name("RIGHT").expect("santa fe set"),
        if_food: pset.id_by_name("IF-FOOD-AHEAD").expect("santa fe set"),
    };
    let mut ant = Ant {
        food: trail.food,
        row: trail.start.0,
        col: trail.start.1,
        heading: Heading::East,
        steps_left: params.steps_limit,
        eaten: 0,
    };
    while ant.steps_left > 0 && ant.eaten < trail.total_food {
        let mut pos = 0;
        if !ant.exec(tree, pset, &mut pos, &ops) {
            break;
        }
        // every pass reaches a terminal and terminals always spend a step,
        // so the loop terminates
    }
    EvalReport::from_hits(ant.eaten, trail.total_food)
}

pub fn evaluate_santa_fe(tree: &ProgramTree, params: &GpParams, pset: &PrimitiveSet) -> EvalReport {
    evaluate_santa_fe_on(tree, params, pset, &Trail::default_trail())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Koza's published solution for the Santa Fe trail.
    pub const KOZA_SOLUTION: &str = "(IF-FOOD-AHEAD MOVE (PROGN3 LEFT (PROGN2 (IF-FOOD-AHEAD MOVE RIGHT) (PROGN2 RIGHT (PROGN2 LEFT RIGHT))) (PROGN2 (IF-FOOD-AHEAD MOVE LEFT) MOVE)))";

    fn eval(sexpr: &str, steps: usize) -> EvalReport {
        let pset = PrimitiveSet::santa_fe();
        let tree = ProgramTree::from_sexpr(sexpr, &pset).unwrap();
        let params = GpParams { steps_limit: steps, ..GpParams::default() };
        evaluate_santa_fe(&tree, &params, &pset)
    }

    #[test]
    fn single_left_eats_nothing() {
        assert_eq!(eval("LEFT", 400).hits, 0);
    }

    #[test]
    fn single_move_eats_straight_path() {
        // Expected value computed by hand-simulating the trail file: the
        // straight easterly path from the start crosses pellets (0,1..3)
        // and then wraps over empty cells only.
        assert_eq!(eval("MOVE", 400).hits, 3);
    }

    #[test]
    fn koza_solution_clears_trail_within_400() {
        // Verified against an independent step-by-step oracle before being
        // frozen here: 89 pellets in 272 steps.
        let report = eval(KOZA_SOLUTION, 400);
        assert_eq!(report.hits, 89);
        assert_eq!(report.adjusted, 1.0);
    }

    #[test]
    fn food_monotone_in_steps_limit() {
        let mut last = 0;
        for steps in [0, 50, 100, 200, 272, 400, 1000] {
            let hits = eval(KOZA_SOLUTION, steps).hits;
            assert!(hits >= last, "steps={steps}");
            assert!(hits <= 89);
            last = hits;
        }
        assert_eq!(last, 89);
    }

    #[test]
    fn bad_trail_rejected() {
        assert!(Trail::parse("short").is_err());
        let no_start = DEFAULT_TRAIL.replacen('S', ".", 1);
        assert!(Trail::parse(&no_start).is_err());
        let wrong_count = DEFAULT_TRAIL.replacen('#', ".", 1);
        assert!(Trail::parse(&wrong_count).is_err());
    }
}
