//! Per-(unit, instance) response counters for one task.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};

/// A claimable response slot: `(unit, instance)` positions in the task lists.
pub type Slot = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    unit_keys: Vec<String>,
    target_per_instance: usize,
    /// Slots neither claimed by a running session nor fulfilled.
    open: Vec<Vec<usize>>,
    fulfilled: Vec<Vec<usize>>,
    participants: Vec<BTreeSet<String>>,
}

impl Scheduler {
    pub fn new(unit_keys: Vec<String>, instances: usize, target_per_instance: usize) -> Self {
        let n = unit_keys.len();
        Self {
            unit_keys,
            target_per_instance,
            open: vec![vec![target_per_instance; instances]; n],
            fulfilled: vec![vec![0; instances]; n],
            participants: vec![BTreeSet::new(); n],
        }
    }

    pub fn open_slots(&self) -> usize {
        self.open.iter().flatten().sum()
    }

    pub fn units_with_open_slots(&self) -> usize {
        self.open.iter().filter(|u| u.iter().any(|&c| c > 0)).count()
    }

    pub fn is_complete(&self) -> bool {
        self.fulfilled
            .iter()
            .flatten()
            .all(|&c| c == self.target_per_instance)
    }

    pub fn fulfilled(&self, unit: usize, instance: usize) -> usize {
        self.fulfilled[unit][instance]
    }

    pub fn open(&self, unit: usize, instance: usize) -> usize {
        self.open[unit][instance]
    }

    pub fn participants(&self, unit: usize) -> &BTreeSet<String> {
        &self.participants[unit]
    }

    /// Takes one slot from each of the `n` most under-served units (most
    /// open slots, ties by unit key); within a unit, the instance with the
    /// most open slots, ties by lowest index.
    pub fn claim(&mut self, n: usize) -> Result<Vec<Slot>> {
        let mut units: Vec<(usize, usize)> = self
            .open
            .iter()
            .enumerate()
            .map(|(u, inst)| (u, inst.iter().sum::<usize>()))
            .filter(|&(_, open)| open > 0)
            .collect();
        if units.len() < n {
            return Err(ImiError::NoCapacity(format!(
                "{n} units needed, {} have open slots",
                units.len()
            )));
        }
        units.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| self.unit_keys[a.0].cmp(&self.unit_keys[b.0])));
        let slots: Vec<Slot> = units[..n]
            .iter()
            .map(|&(u, _)| {
                let row = &self.open[u];
                let best = row.iter().copied().max().unwrap_or(0);
                let i = row.iter().position(|&c| c == best).expect("row has a maximum");
                (u, i)
            })
            .collect();
        for &(u, i) in &slots {
            self.open[u][i] -= 1;
        }
        Ok(slots)
    }

    pub fn release(&mut self, slots: &[Slot]) {
        for &(u, i) in slots {
            self.open[u][i] += 1;
        }
    }

    pub fn fulfill(&mut self, slots: &[Slot], participant: &str) {
        for &(u, i) in slots {
            self.fulfilled[u][i] += 1;
            self.participants[u].insert(participant.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i:02}")).collect()
    }

    #[test]
    fn fresh_plan_counts_all_slots() {
        let s = Scheduler::new(keys(84), 10, 3);
        assert_eq!(s.open_slots(), 2520);
        assert!(!s.is_complete());
    }

    #[test]
    fn claims_are_distinct_units() {
        let mut s = Scheduler::new(keys(84), 10, 3);
        let slots = s.claim(40).unwrap();
        let units: BTreeSet<usize> = slots.iter().map(|s| s.0).collect();
        assert_eq!(units.len(), 40);
        assert_eq!(s.open_slots(), 2480);
    }

    #[test]
    fn greedy_prefers_under_served() {
        let mut s = Scheduler::new(keys(4), 1, 2);
        let first = s.claim(2).unwrap();
        assert_eq!(first, vec![(0, 0), (1, 0)]);
        let second = s.claim(2).unwrap();
        assert_eq!(second, vec![(2, 0), (3, 0)]);
    }

    #[test]
    fn release_restores_counts() {
        let mut s = Scheduler::new(keys(5), 2, 3);
        let slots = s.claim(5).unwrap();
        s.release(&slots);
        assert_eq!(s.open_slots(), 30);
    }

    #[test]
    fn exhausted_units_refuse() {
        let mut s = Scheduler::new(keys(3), 1, 1);
        let slots = s.claim(3).unwrap();
        assert!(matches!(s.claim(1), Err(ImiError::NoCapacity(_))));
        s.fulfill(&slots, "a");
        assert!(s.is_complete());
    }
}
