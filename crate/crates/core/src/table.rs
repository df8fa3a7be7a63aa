//! Dense state-action tables (occupancies, η, action values).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl SaTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                got: values.len(),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    #[inline]
    pub fn add(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Divides every entry by the table sum. Returns `None` if the sum is not positive.
    pub fn normalized(&self) -> Option<Self> {
        let z = self.sum();
        if !(z > 0.0) {
            return None;
        }
        Some(Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|v| v / z).collect(),
        })
    }

    /// Expectation of `f` under the table read as a distribution.
    pub fn expect(&self, f: &SaTable) -> f64 {
        self.values
            .iter()
            .zip(&f.values)
            .filter(|(p, _)| **p != 0.0)
            .map(|(p, v)| p * v)
            .sum()
    }

    /// Half the L1 distance between two tables.
    pub fn total_variation(&self, other: &SaTable) -> f64 {
        0.5 * self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// Long-format CSV: `state,action,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "state,action,value")?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                writeln!(w, "{s},{a},{}", self.get(s, a))?;
            }
        }
        Ok(())
    }
}
