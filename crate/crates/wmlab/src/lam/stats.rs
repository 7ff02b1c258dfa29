use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Codebook health metrics over a window of quantization events.
/// utilization = distinct codes / K; max_usage = largest single-code
/// frequency; entropy = Shannon entropy over used codes, in nats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodebookStats {
    pub utilization: f32,
    pub max_usage: f32,
    pub entropy: f32,
}

pub fn stats_from_counts(counts: &[u64]) -> Result<CodebookStats> {
    let k = counts.len();
    let total: u64 = counts.iter().sum();
    if k == 0 || total == 0 {
        return Err(Error::Shape("codebook stats over an empty window".into()));
    }
    let mut distinct = 0usize;
    let mut max_n = 0u64;
    let mut entropy = 0.0f64;
    for &n in counts {
        if n == 0 {
            continue;
        }
        distinct += 1;
        max_n = max_n.max(n);
        let p = n as f64 / total as f64;
        entropy -= p * p.ln();
    }
    Ok(CodebookStats {
        utilization: distinct as f32 / k as f32,
        max_usage: max_n as f32 / total as f32,
        entropy: entropy as f32,
    })
}

pub fn codebook_stats(indices: &[usize], k: usize) -> Result<CodebookStats> {
    if indices.is_empty() {
        return Err(Error::Shape("codebook stats over an empty stream".into()));
    }
    let mut counts = vec![0u64; k];
    for &i in indices {
        counts[i] += 1;
    }
    stats_from_counts(&counts)
}

/// Sliding window over the last `cap` optimizer steps' quantization events.
#[derive(Clone, Debug)]
pub struct UsageWindow {
    k: usize,
    cap: usize,
    steps: VecDeque<Vec<u32>>,
    counts: Vec<u64>,
}

impl UsageWindow {
    pub fn new(k: usize, cap: usize) -> Self {
        Self { k, cap, steps: VecDeque::new(), counts: vec![0; k] }
    }

    /// Record one optimizer step's code indices.
    pub fn push(&mut self, indices: &[usize]) {
        let mut hist = vec![0u32; self.k];
        for &i in indices {
            hist[i] += 1;
            self.counts[i] += 1;
        }
        self.steps.push_back(hist);
        if self.steps.len() > self.cap {
            let old = self.steps.pop_front().unwrap();
            for (c, o) in self.counts.iter_mut().zip(old) {
                *c -= o as u64;
            }
        }
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() == self.cap
    }

    pub fn stats(&self) -> Result<CodebookStats> {
        stats_from_counts(&self.counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_stream_over_k4() {
        let s = codebook_stats(&[0, 1, 2, 3], 4).unwrap();
        assert_eq!(s.utilization, 1.0);
        assert_eq!(s.max_usage, 0.25);
        assert!((s.entropy - (4.0f32).ln()).abs() < 1e-6);
    }

    #[test]
    fn degenerate_single_code_stream() {
        let s = codebook_stats(&[2, 2, 2, 2, 2], 8).unwrap();
        assert_eq!(s.utilization, 1.0 / 8.0);
        assert_eq!(s.max_usage, 1.0);
        assert_eq!(s.entropy, 0.0);
    }

    #[test]
    fn definitional_example_two_thirds() {
        let s = codebook_stats(&[0, 0, 1], 4).unwrap();
        assert_eq!(s.utilization, 0.5);
        assert!((s.max_usage - 2.0 / 3.0).abs() < 1e-6);
        let expect = -(2.0f64 / 3.0 * (2.0f64 / 3.0).ln() + 1.0 / 3.0 * (1.0f64 / 3.0).ln());
        assert!((s.entropy as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(codebook_stats(&[], 4).is_err());
        assert!(stats_from_counts(&[0, 0]).is_err());
    }

    #[test]
    fn entropy_stays_within_bounds() {
        use wmlab_nn::CounterRng;
        let mut rng = CounterRng::new(8);
        for _ in 0..300 {
            let k = 2 + rng.range(16);
            let n = 1 + rng.range(64);
            let stream: Vec<usize> = (0..n).map(|_| rng.range(k)).collect();
            let s = codebook_stats(&stream, k).unwrap();
            assert!(s.entropy >= 0.0 && s.entropy <= (k as f32).ln() + 1e-5);
            assert!(s.utilization > 0.0 && s.utilization <= 1.0);
            assert!(s.max_usage > 0.0 && s.max_usage <= 1.0);
        }
    }

    #[test]
    fn window_slides_and_matches_direct_computation() {
        let mut w = UsageWindow::new(4, 3);
        w.push(&[0, 0]);
        w.push(&[1]);
        w.push(&[2, 2, 2]);
        assert!(w.is_full());
        // pushing a fourth step evicts the first
        w.push(&[3]);
        let direct = codebook_stats(&[1, 2, 2, 2, 3], 4).unwrap();
        assert_eq!(w.stats().unwrap(), direct);
    }
}
