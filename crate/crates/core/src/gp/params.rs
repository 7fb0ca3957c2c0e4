//! Run parameters, the flat `key=value` parameter file, and the params digest.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemId {
    SantaFe,
    Multiplexer(u32),
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemId::SantaFe => write!(f, "santafe"),
            ProblemId::Multiplexer(k) => write!(f, "multiplexer{k}"),
        }
    }
}

impl std::str::FromStr for ProblemId {
    type Err = GpError;
    fn from_str(s: &str) -> Result<Self, GpError> {
        if s == "santafe" {
            Ok(ProblemId::SantaFe)
        } else if let Some(k) = s.strip_prefix("multiplexer") {
            k.parse::<u32>()
                .map(ProblemId::Multiplexer)
                .map_err(|_| GpError::Config(format!("bad problem id: {s}")))
        } else {
            Err(GpError::Config(format!("bad problem id: {s}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub reproduction_prob: f64,
    pub tournament_size: usize,
    pub max_depth: usize,
    pub max_initial_depth: usize,
    pub steps_limit: usize,
    pub seed: u64,
}

impl Default for GpParams {
    /// Koza-standard defaults: tournament 7, ramped half-and-half up to
    /// depth 6, max depth 17, 90% crossover 10% reproduction.
    fn default() -> GpParams {
        GpParams {
            population_size: 500,
            generations: 50,
            crossover_prob: 0.9,
            mutation_prob: 0.0,
            reproduction_prob: 0.1,
            tournament_size: 7,
            max_depth: 17,
            max_initial_depth: 6,
            steps_limit: 400,
            seed: 0,
        }
    }
}

impl GpParams {
    pub fn validate(&self) -> Result<(), GpError> {
        let probs = [self.crossover_prob, self.mutation_prob, self.reproduction_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(GpError::Config("operator probabilities must be in [0,1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GpError::Config(format!("operator probabilities sum to {sum}, expected 1")));
        }
        if self.population_size < 2 {
            return Err(GpError::Config("population_size must be >= 2".into()));
        }
        if self.generations < 1 {
            return Err(GpError::Config("generations must be >= 1".into()));
        }
        if self.tournament_size < 1 {
            return Err(GpError::Config("tournament_size must be >= 1".into()));
        }
        if self.max_initial_depth < 2 || self.max_initial_depth > self.max_depth {
            return Err(GpError::Config("need 2 <= max_initial_depth <= max_depth".into()));
        }
        Ok(())
    }
}

/// A problem plus its parameters: everything a run needs besides the RNG seed
/// (the seed lives in `GpParams` so a sweep can vary it per work unit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub problem: ProblemId,
    pub params: GpParams,
}

impl RunSpec {
    pub fn validate(&self) -> Result<(), GpError> {
        self.params.validate()
    }

    /// Canonical `key=value` rendering, one key per line, sorted.
    /// This is both the parameter file format and the digest input.
    pub fn to_param_file(&self) -> String {
        let p = &self.params;
        let mut kv = BTreeMap::new();
        kv.insert("crossover_prob", format!("{}", p.crossover_prob));
        kv.insert("generations", p.generations.to_string());
        kv.insert("max_depth", p.max_depth.to_string());
        kv.insert("max_initial_depth", p.max_initial_depth.to_string());
        kv.insert("mutation_prob", format!("{}", p.mutation_prob));
        kv.insert("population_size", p.population_size.to_string());
        kv.insert("problem", self.problem.to_string());
        kv.insert("reproduction_prob", format!("{}", p.reproduction_prob));
        kv.insert("seed", p.seed.to_string());
        kv.insert("steps_limit", p.steps_limit.to_string());
        kv.insert("tournament_size", p.tournament_size.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn from_param_file(text: &str) -> Result<RunSpec, GpError> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GpError::Config(format!("line {}: expected key=value", lineno + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let defaults = GpParams::default();
        let get_usize = |map: &BTreeMap<String, String>, k: &str, d: usize| -> Result<usize, GpError> {
            match map.get(k) {
                Some(v) => v.parse().map_err(|_| GpError::Config(format!("bad {k}: {v}"))),
                None => Ok(d),
            }
        };
        let get_f64 = |map: &BTreeMap<String, String>, k: &str, d: f64| -> Result<f64, GpError> {
            match map.get(k) {
                Some(v) => v.parse().map_err(|_| GpError::Config(format!("bad {k}: {v}"))),
                None => Ok(d),
            }
        };
        let problem: ProblemId = map
            .get("problem")
            .ok_or_else(|| GpError::Config("missing problem=".into()))?
            .parse()?;
        let params = GpParams {
            population_size: get_usize(&map, "population_size", defaults.population_size)?,
            generations: get_usize(&map, "generations", defaults.generations)?,
            crossover_prob: get_f64(&map, "crossover_prob", defaults.crossover_prob)?,
            mutation_prob: get_f64(&map, "mutation_prob", defaults.mutation_prob)?,
            reproduction_prob: get_f64(&map, "reproduction_prob", defaults.reproduction_prob)?,
            tournament_size: get_usize(&map, "tournament_size", defaults.tournament_size)?,
            max_depth: get_usize(&map, "max_depth", defaults.max_depth)?,
            max_initial_depth: get_usize(&map, "max_initial_depth", defaults.max_initial_depth)?,
            steps_limit: get_usize(&map, "steps_limit", defaults.steps_limit)?,
            seed: match map.get("seed") {
                Some(v) => v.parse().map_err(|_| GpError::Config(format!("bad seed: {v}")))?,
                None => 0,
            },
        };
        let spec = RunSpec { problem, params };
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 over the canonical parameter file, hex encoded. Identifies a
    /// run for checkpoint/resume guards and quorum validation.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_param_file().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_file_round_trip() {
        let spec = RunSpec {
            problem: ProblemId::Multiplexer(3),
            params: GpParams { seed: 42, ..GpParams::default() },
        };
        let text = spec.to_param_file();
        let back = RunSpec::from_param_file(&text).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.digest(), back.digest());
    }

    #[test]
    fn digest_changes_with_seed() {
        let mut spec = RunSpec { problem: ProblemId::SantaFe, params: GpParams::default() };
        let d1 = spec.digest();
        spec.params.seed = 1;
        assert_ne!(d1, spec.digest());
    }

    #[test]
    fn bad_probability_sum_rejected() {
        let text = "problem=santafe\ncrossover_prob=0.5\nmutation_prob=0.0\nreproduction_prob=0.1\n";
        assert!(RunSpec::from_param_file(text).is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# a comment\n\nproblem=multiplexer2\nseed=9\n";
        let spec = RunSpec::from_param_file(text).unwrap();
        assert_eq!(spec.problem, ProblemId::Multiplexer(2));
        assert_eq!(spec.params.seed, 9);
    }
}
