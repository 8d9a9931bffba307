use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{Generator, ProbeConfig, ProbeError, Rollout};

type Key = (String, [u8; 32], usize);

/// Memoized rollouts keyed by (query id, prompt hash, max_tokens).
///
/// A rollout probed at Top-K can serve any request with a smaller or equal
/// K by truncating each step, because greedy decoding does not depend on K.
/// A change of max_tokens always needs a fresh probe.
#[derive(Debug, Default)]
pub struct RolloutCache {
    entries: Mutex<HashMap<Key, (usize, Rollout)>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

fn prompt_hash(prompt: &str) -> [u8; 32] {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

impl RolloutCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the cached rollout (truncated to `cfg.top_k`) or probes and
    /// stores a new one. The boolean reports a cache hit.
    pub fn get_or_probe(
        &self,
        generator: &dyn Generator,
        query_id: &str,
        prompt: &str,
        cfg: &ProbeConfig,
    ) -> Result<(Rollout, bool), ProbeError> {
        let key = (query_id.to_string(), prompt_hash(prompt), cfg.max_tokens);
        if let Some((k, r)) = self.entries.lock().expect("cache lock").get(&key) {
            if *k >= cfg.top_k {
                self.hits.fetch_add(1, Ordering::Relaxed);
                let r = if *k == cfg.top_k {
                    r.clone()
                } else {
                    r.truncated_k(cfg.top_k)
                };
                return Ok((r, true));
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let fresh = generator.greedy_rollout(prompt, cfg)?;
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key, (cfg.top_k, fresh.clone()));
        Ok((fresh, false))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{StubGenerator, StubScript, StubSpec, StubStep};

    fn stub() -> StubGenerator {
        let step = StubStep::new([("a", -0.1), ("b", -0.7), ("c", -1.2), ("d", -2.0)]);
        StubGenerator::new(StubSpec {
            fallback: Some(StubScript {
                steps: vec![step.clone(), step.clone(), step],
                ..Default::default()
            }),
            ..Default::default()
        })
    }

    #[test]
    fn reuses_and_truncates_k() {
        let g = stub();
        let cache = RolloutCache::new();
        let big = ProbeConfig::new(4, 8).unwrap();
        let small = ProbeConfig::new(2, 8).unwrap();
        let (r4, hit) = cache.get_or_probe(&g, "q", "p", &big).unwrap();
        assert!(!hit);
        let (r2, hit) = cache.get_or_probe(&g, "q", "p", &small).unwrap();
        assert!(hit);
        assert_eq!(g.calls(), 1);
        assert_eq!(r2, g.greedy_rollout("p", &small).unwrap());
        assert_eq!(r4.steps[0].entries.len(), 4);
    }

    #[test]
    fn max_tokens_change_reprobes() {
        let g = stub();
        let cache = RolloutCache::new();
        cache
            .get_or_probe(&g, "q", "p", &ProbeConfig::new(4, 8).unwrap())
            .unwrap();
        let (_, hit) = cache
            .get_or_probe(&g, "q", "p", &ProbeConfig::new(4, 2).unwrap())
            .unwrap();
        assert!(!hit);
        let (_, hit) = cache
            .get_or_probe(&g, "q", "p", &ProbeConfig::new(8, 8).unwrap())
            .unwrap();
        assert!(!hit);
        assert_eq!(cache.misses(), 3);
    }
}
