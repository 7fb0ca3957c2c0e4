//! Primitive sets for the two benchmark problems.

use serde::{Deserialize, Serialize};

use super::params::ProblemId;
use super::GpError;

/// Index into a [`PrimitiveSet`]. Functions come first, then terminals.
pub type PrimId = u16;

/// The typed alphabet a run's trees are built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveSet {
    pub functions: Vec<(String, usize)>,
    pub terminals: Vec<String>,
    pub problem: ProblemId,
}

impl PrimitiveSet {
    pub fn for_problem(problem: ProblemId) -> Result<PrimitiveSet, GpError> {
        match problem {
            ProblemId::SantaFe => Ok(PrimitiveSet::santa_fe()),
            ProblemId::Multiplexer(k) => PrimitiveSet::multiplexer(k),
        }
    }

    /// Santa Fe ant set: `IF-FOOD-AHEAD/2, PROGN2/2, PROGN3/3` over
    /// `{MOVE, LEFT, RIGHT}`.
    pub fn santa_fe() -> PrimitiveSet {
        PrimitiveSet {
            functions: vec![
                ("IF-FOOD-AHEAD".into(), 2),
                ("PROGN2".into(), 2),
                ("PROGN3".into(), 3),
            ],
            terminals: vec!["MOVE".into(), "LEFT".into(), "RIGHT".into()],
            problem: ProblemId::SantaFe,
        }
    }

    /// Boolean multiplexer set: `AND/2, OR/2, NOT/1, IF/3` over the k address
    /// terminals `a0..a(k-1)` and 2^k data terminals `d0..d(2^k - 1)`.
    pub fn multiplexer(k: u32) -> Result<PrimitiveSet, GpError> {
        if k == 0 {
            return Err(GpError::Config("multiplexer k must be >= 1".into()));
        }
        // k + 2^k inputs must stay exhaustively enumerable.
        if k as u64 + (1u64 << k) > 24 {
            return Err(GpError::Unsupported(format!(
                "multiplexer k={k} needs 2^{} fitness cases",
                k as u64 + (1u64 << k)
            )));
        }
        let mut terminals: Vec<String> = (0..k).map(|i| format!("a{i}")).collect();
        terminals.extend((0..(1u64 << k)).map(|i| format!("d{i}")));
        Ok(PrimitiveSet {
            functions: vec![
                ("AND".into(), 2),
                ("OR".into(), 2),
                ("NOT".into(), 1),
                ("IF".into(), 3),
            ],
            terminals,
            problem: ProblemId::Multiplexer(k),
        })
    }

    pub fn num_functions(&self) -> usize {
        self.functions.len()
    }

    pub fn num_primitives(&self) -> usize {
        self.functions.len() + self.terminals.len()
    }

    pub fn is_terminal(&self, id: PrimId) -> bool {
        (id as usize) >= self.functions.len()
    }

    /// Arity of a primitive; terminals have arity 0.
    pub fn arity(&self, id: PrimId) -> usize {
        if self.is_terminal(id) {
            0
        } else {
            self.functions[id as usize].1
        }
    }

    pub fn name(&self, id: PrimId) -> &str {
        let id = id as usize;
        if id < self.functions.len() {
            &self.functions[id].0
        } else {
            &self.terminals[id - self.functions.len()]
        }
    }

    pub fn id_by_name(&self, name: &str) -> Option<PrimId> {
        self.functions
            .iter()
            .position(|(n, _)| n == name)
            .or_else(|| {
                self.terminals
                    .iter()
                    .position(|n| n == name)
                    .map(|i| i + self.functions.len())
            })
            .map(|i| i as PrimId)
    }

    /// Terminal index (0-based within the terminal list) for a primitive id.
    pub fn terminal_index(&self, id: PrimId) -> usize {
        debug_assert!(self.is_terminal(id));
        id as usize - self.functions.len()
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if self.terminals.is_empty() {
            return Err(GpError::Config("primitive set has no terminals".into()));
        }
        if self.functions.iter().any(|(_, a)| *a == 0) {
            return Err(GpError::Config("function with arity 0".into()));
        }
        let mut names: Vec<&str> = self
            .functions
            .iter()
            .map(|(n, _)| n.as_str())
            .chain(self.terminals.iter().map(|n| n.as_str()))
            .collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(GpError::Config("duplicate primitive name".into()));
        }
        if self.num_primitives() > u16::MAX as usize {
            return Err(GpError::Config("too many primitives".into()));
        }
        Ok(())
    }
}
