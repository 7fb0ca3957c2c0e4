//! GP individuals as prefix-order primitive arrays.
//!
//! Storing trees flat keeps crossover cheap: a subtree is a contiguous slice,
//! so swapping subtrees is a splice. Arities come from the run's
//! [`PrimitiveSet`], which every tree is built against.

use serde::{Deserialize, Serialize};

use super::primitives::{PrimId, PrimitiveSet};
use super::GpError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProgramTree {
    nodes: Vec<PrimId>,
}

impl ProgramTree {
    pub fn from_prefix(nodes: Vec<PrimId>) -> ProgramTree {
        ProgramTree { nodes }
    }

    pub fn single(id: PrimId) -> ProgramTree {
        ProgramTree { nodes: vec![id] }
    }

    pub fn nodes(&self) -> &[PrimId] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Half-open range of the subtree rooted at prefix position `at`.
    pub fn subtree_range(&self, at: usize, pset: &PrimitiveSet) -> std::ops::Range<usize> {
        let mut remaining = 1usize;
        let mut i = at;
        while remaining > 0 {
            remaining += pset.arity(self.nodes[i]);
            remaining -= 1;
            i += 1;
        }
        at..i
    }

    /// Replace the subtree at `at` with `replacement`, returning a new tree.
    pub fn with_replaced_subtree(
        &self,
        at: usize,
        replacement: &[PrimId],
        pset: &PrimitiveSet,
    ) -> ProgramTree {
        let range = self.subtree_range(at, pset);
        let mut nodes = Vec::with_capacity(self.nodes.len() - range.len() + replacement.len());
        nodes.extend_from_slice(&self.nodes[..range.start]);
        nodes.extend_from_slice(replacement);
        nodes.extend_from_slice(&self.nodes[range.end..]);
        ProgramTree { nodes }
    }

    /// Depth counted in nodes: a single terminal has depth 1.
    pub fn depth(&self, pset: &PrimitiveSet) -> usize {
        let mut max = 0usize;
        let mut i = 0usize;
        // stack of remaining-children counters along the current path
        let mut stack: Vec<usize> = Vec::new();
        while i < self.nodes.len() {
            let arity = pset.arity(self.nodes[i]);
            max = max.max(stack.len() + 1);
            if arity > 0 {
                stack.push(arity);
            } else {
                while let Some(top) = stack.last_mut() {
                    *top -= 1;
                    if *top == 0 {
                        stack.pop();
                    } else {
                        break;
                    }
                }
            }
            i += 1;
        }
        max
    }

    /// Structural validity: every node's children are present and every id
    /// belongs to `pset`.
    pub fn validate(&self, pset: &PrimitiveSet) -> Result<(), GpError> {
        if self.nodes.is_empty() {
            return Err(GpError::Config("empty tree".into()));
        }
        if self.nodes.iter().any(|&id| (id as usize) >= pset.num_primitives()) {
            return Err(GpError::Config("primitive id out of range".into()));
        }
        let mut remaining = 1i64;
        for &id in &self.nodes {
            if remaining <= 0 {
                return Err(GpError::Config("trailing nodes after complete tree".into()));
            }
            remaining += pset.arity(id) as i64 - 1;
        }
        if remaining != 0 {
            return Err(GpError::Config("truncated tree".into()));
        }
        Ok(())
    }

    /// Render as an s-expression, e.g. `(IF (a0) (d0) (d1))` -> `(IF a0 d0 d1)`.
    pub fn to_sexpr(&self, pset: &PrimitiveSet) -> String {
        fn rec(tree: &ProgramTree, pset: &PrimitiveSet, i: &mut usize, out: &mut String) {
            let id = tree.nodes[*i];
            *i += 1;
            let arity = pset.arity(id);
            if arity == 0 {
                out.push_str(pset.name(id));
            } else {
                out.push('(');
                out.push_str(pset.name(id));
                for _ in 0..arity {
                    out.push(' ');
                    rec(tree, pset, i, out);
                }
                out.push(')');
            }
        }
        let mut out = String::new();
        let mut i = 0;
        rec(self, pset, &mut i, &mut out);
        out
    }

    pub fn from_sexpr(text: &str, pset: &PrimitiveSet) -> Result<ProgramTree, GpError> {
        let mut tokens = Vec::new();
        let mut cur = String::new();
        for c in text.chars() {
            match c {
                '(' | ')' => {
                    if !cur.is_empty() {
                        tokens.push(std::mem::take(&mut cur));
                    }
                    tokens.push(c.to_string());
                }
                c if c.is_whitespace() => {
                    if !cur.is_empty() {
                        tokens.push(std::mem::take(&mut cur));
                    }
                }
                c => cur.push(c),
            }
        }
        if !cur.is_empty() {
            tokens.push(cur);
        }
        let mut nodes = Vec::new();
        for tok in &tokens {
            if tok == "(" || tok == ")" {
                continue;
            }
            let id = pset
                .id_by_name(tok)
                .ok_or_else(|| GpError::Config(format!("unknown primitive: {tok}")))?;
            nodes.push(id);
        }
        let tree = ProgramTree { nodes };
        tree.validate(pset)?;
        Ok(tree)
    }
}
