use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Continuous action as stored for the critic.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
}

/// Fixed-capacity FIFO of transitions with uniform sampling (with
/// replacement).
#[derive(Clone, Debug)]
pub struct ReplayMemory {
    buf: VecDeque<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be at least 1"));
        }
        Ok(ReplayMemory {
            buf: VecDeque::with_capacity(capacity),
            capacity,
            inserted: 0,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions since creation, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    pub fn sample_indices(&self, n: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
        if self.buf.is_empty() {
            return Err(Error::EmptyInput("replay memory is empty".into()));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.buf.len())).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut SimRng) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| &self.buf[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn t(i: usize) -> Transition {
        Transition {
            obs: vec![i as f64],
            action: vec![],
            reward: -(i as f64),
            next_obs: vec![],
        }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut m = ReplayMemory::new(10).unwrap();
        for i in 0..13 {
            m.push(t(i));
        }
        assert_eq!(m.len(), 10);
        let kept: Vec<f64> = m.iter().map(|x| x.obs[0]).collect();
        assert_eq!(kept, (3..13).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(m.inserted(), 13);
        assert!(ReplayMemory::new(0).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let mut m = ReplayMemory::new(50).unwrap();
        assert!(m.sample(3, &mut rng_from_seed(1)).is_err());
        for i in 0..50 {
            m.push(t(i));
        }
        let a = m.sample_indices(20, &mut rng_from_seed(4)).unwrap();
        assert_eq!(a, m.sample_indices(20, &mut rng_from_seed(4)).unwrap());
        assert!(a.iter().all(|&i| i < 50));
    }
}
