use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use super::{PredictiveDistribution, Predictor};
use crate::error::{Error, Result};

/// Remembers a fingerprint of every answer and fails hard when an identical
/// query ever produces a different one. With `probe` set, each query is
/// also issued twice up front.
#[derive(Debug)]
pub struct DeterminismGuard<P> {
    inner: P,
    probe: bool,
    seen: Mutex<HashMap<u64, u64>>,
}

impl<P: Predictor> DeterminismGuard<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            probe: false,
            seen: Mutex::new(HashMap::new()),
        }
    }

    pub fn probing(inner: P) -> Self {
        Self {
            probe: true,
            ..Self::new(inner)
        }
    }

    pub fn into_inner(self) -> P {
        self.inner
    }

    fn record(&self, query: u64, answer: u64) -> Result<()> {
        let mut seen = self.seen.lock().expect("guard poisoned");
        match seen.get(&query) {
            Some(&prev) if prev != answer => Err(Error::Nondeterministic),
            Some(_) => Ok(()),
            None => {
                seen.insert(query, answer);
                Ok(())
            }
        }
    }

    fn checked<T>(&self, query: u64, fingerprint: impl Fn(&T) -> u64, call: impl Fn() -> Result<T>) -> Result<T> {
        let answer = call()?;
        let print = fingerprint(&answer);
        if self.probe && fingerprint(&call()?) != print {
            return Err(Error::Nondeterministic);
        }
        self.record(query, print)?;
        Ok(answer)
    }
}

fn hash_of(parts: impl Hash) -> u64 {
    let mut h = DefaultHasher::new();
    parts.hash(&mut h);
    h.finish()
}

fn dists_fingerprint(dists: &Vec<PredictiveDistribution>) -> u64 {
    let mut h = DefaultHasher::new();
    for d in dists {
        d.position.hash(&mut h);
        d.tail_mass.to_bits().hash(&mut h);
        for &(t, p) in &d.top {
            t.hash(&mut h);
            p.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

impl<P: Predictor> Predictor for DeterminismGuard<P> {
    fn vocab_size(&self) -> u32 {
        self.inner.vocab_size()
    }

    fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.checked(
            hash_of(("surprisal", tokens)),
            |s: &Vec<f64>| hash_of(s.iter().map(|v| v.to_bits()).collect::<Vec<_>>()),
            || self.inner.surprisal(tokens),
        )
    }

    fn predict(
        &self,
        tokens: &[u32],
        masked: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        let blind = super::blind_query(tokens, masked);
        self.checked(
            hash_of(("predict", &blind, masked, top_k)),
            dists_fingerprint,
            || self.inner.predict(tokens, masked, top_k),
        )
    }

    fn static_bytes(&self) -> u64 {
        self.inner.static_bytes()
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::BuiltinModel;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky(AtomicU32);

    impl Predictor for Flaky {
        fn vocab_size(&self) -> u32 {
            4
        }
        fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>> {
            Ok(vec![1.0; tokens.len()])
        }
        fn predict(&self, _: &[u32], masked: &[usize], top_k: usize) -> Result<Vec<PredictiveDistribution>> {
            let bump = self.0.fetch_add(1, Ordering::SeqCst) as f64;
            Ok(masked
                .iter()
                .map(|&i| PredictiveDistribution::from_scores(i, vec![(0, 0.5 + bump * 1e-3), (1, 0.2)], top_k))
                .collect())
        }
        fn describe(&self) -> String {
            "flaky".into()
        }
    }

    #[test]
    fn stable_model_passes() {
        let g = DeterminismGuard::probing(BuiltinModel::new(8, 1, 1.0).unwrap());
        let tokens = [1, 2, 3, 4, 5, 6];
        for _ in 0..3 {
            g.predict(&tokens, &[2, 4], 8).unwrap();
            g.surprisal(&tokens).unwrap();
        }
    }

    #[test]
    fn drifting_model_is_a_hard_error() {
        let g = DeterminismGuard::new(Flaky(AtomicU32::new(0)));
        g.predict(&[0, 0], &[1], 2).unwrap();
        assert_eq!(g.predict(&[0, 0], &[1], 2), Err(Error::Nondeterministic));
        let probing = DeterminismGuard::probing(Flaky(AtomicU32::new(0)));
        assert_eq!(probing.predict(&[0, 0], &[1], 2), Err(Error::Nondeterministic));
    }
}
