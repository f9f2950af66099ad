//! The `verify` subcommand: selected suites and a pass/fail table.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use filmflow_core::constitutive::{strong_monotonicity_residual, SymTensor};

use crate::studies::{self, Check};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Constitutive,
    Oracle,
    Energy,
    Complementarity,
    Mms,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Constitutive,
        Suite::Oracle,
        Suite::Energy,
        Suite::Complementarity,
        Suite::Mms,
    ];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Constitutive => "constitutive",
            Suite::Oracle => "oracle",
            Suite::Energy => "energy",
            Suite::Complementarity => "complementarity",
            Suite::Mms => "mms",
        })
    }
}

/// `all` or a single suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    All,
    One(Suite),
}

impl Selector {
    pub fn suites(&self) -> Vec<Suite> {
        match self {
            Selector::All => Suite::ALL.to_vec(),
            Selector::One(s) => vec![*s],
        }
    }
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Selector::All);
        }
        Suite::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .map(Selector::One)
            .ok_or_else(|| format!("unknown suite {s:?} (expected constitutive, oracle, energy, complementarity, mms or all)"))
    }
}

/// Deliberate defects, used to confirm that the suites can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    pub flip_strong_monotonicity: bool,
}

/// Random pairs per exponent in the constitutive suite.
pub const CONSTITUTIVE_PAIRS: usize = 100_000;

pub fn run_suite(suite: Suite, faults: Faults) -> Vec<Check> {
    match suite {
        Suite::Constitutive => {
            let flipped = |p: f64, mu0: f64, a: SymTensor, b: SymTensor| -strong_monotonicity_residual(p, mu0, a, b);
            let residual: &studies::InegpResidual = if faults.flip_strong_monotonicity {
                &flipped
            } else {
                &strong_monotonicity_residual
            };
            studies::constitutive_suite(CONSTITUTIVE_PAIRS, 7, residual)
        }
        Suite::Oracle => studies::oracle_suite(),
        Suite::Energy => studies::energy_suite(),
        Suite::Complementarity => studies::complementarity_suite(),
        Suite::Mms => studies::mms_suite(),
    }
}

/// Runs the selected suites, printing one line per check. Returns whether
/// every check passed.
pub fn verify<W: Write>(selector: Selector, faults: Faults, mut out: W) -> io::Result<bool> {
    let mut all = true;
    let mut total = 0;
    let mut failed = 0;
    for suite in selector.suites() {
        for c in run_suite(suite, faults) {
            writeln!(out, "{:<16} {}", suite.to_string(), c.line())?;
            total += 1;
            if !c.passed {
                failed += 1;
                all = false;
            }
        }
    }
    writeln!(out, "{} of {total} checks passed", total - failed)?;
    Ok(all)
}
