//! Discrete trajectory action space: K prototype trajectories fitted by
//! k-means over expert futures, plus nearest-prototype queries.
//!
//! Distances are squared Euclidean over flattened waypoint vectors (the sum
//! over waypoints of squared point distances). Argmins are unchanged by the
//! 1/T normalization used for rewards, so the raw sum is used throughout.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::{Digest32, Hasher};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("need at least {needed} distinct trajectories for k={needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("trajectory length mismatch: expected {expected} waypoints, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("trajectory contains a non-finite coordinate")]
    NonFinite,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("vocabulary contains duplicate prototypes at indices {0} and {1}")]
    DuplicatePrototypes(usize, usize),
}

/// A fixed-horizon future: T ordered (x, y) waypoints in the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub waypoints: Vec<[S; 2]>,
}

impl<S: Real> Trajectory<S> {
    pub fn new(waypoints: Vec<[S; 2]>) -> Result<Self, VocabError> {
        if waypoints.iter().any(|w| !w[0].is_finite() || !w[1].is_finite()) {
            return Err(VocabError::NonFinite);
        }
        Ok(Trajectory { waypoints })
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// All-zero trajectory (stay in place) with the given horizon.
    pub fn zeros(t: usize) -> Self {
        Trajectory { waypoints: vec![[S::zero(); 2]; t] }
    }

    /// Squared Euclidean distance over flattened waypoints.
    pub fn dist_sq(&self, other: &Trajectory<S>) -> Result<S, VocabError> {
        if self.len() != other.len() {
            return Err(VocabError::LengthMismatch { expected: self.len(), got: other.len() });
        }
        let mut acc = S::zero();
        for (a, b) in self.waypoints.iter().zip(&other.waypoints) {
            let dx = a[0] - b[0];
            let dy = a[1] - b[1];
            acc = acc + dx * dx + dy * dy;
        }
        Ok(acc)
    }
}

/// The discrete action space: K trajectory prototypes of uniform horizon T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVocabulary<S> {
    prototypes: Vec<Trajectory<S>>,
    horizon: usize,
    seed: u64,
    #[serde(with = "crate::io::digest_hex")]
    source_hash: Digest32,
}

impl<S: Real> ActionVocabulary<S> {
    pub fn new(
        prototypes: Vec<Trajectory<S>>,
        seed: u64,
        source_hash: Digest32,
    ) -> Result<Self, VocabError> {
        if prototypes.is_empty() {
            return Err(VocabError::ZeroK);
        }
        let horizon = prototypes[0].len();
        for p in &prototypes {
            if p.len() != horizon {
                return Err(VocabError::LengthMismatch { expected: horizon, got: p.len() });
            }
        }
        for i in 0..prototypes.len() {
            for j in (i + 1)..prototypes.len() {
                if prototypes[i] == prototypes[j] {
                    return Err(VocabError::DuplicatePrototypes(i, j));
                }
            }
        }
        Ok(ActionVocabulary { prototypes, horizon, seed, source_hash })
    }

    pub fn k(&self) -> usize {
        self.prototypes.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prototypes(&self) -> &[Trajectory<S>] {
        &self.prototypes
    }

    pub fn prototype(&self, index: usize) -> &Trajectory<S> {
        &self.prototypes[index]
    }

    pub fn source_hash(&self) -> &Digest32 {
        &self.source_hash
    }

    /// Digest of the vocabulary content itself (prototypes, seed, source).
    /// Consumers store this to detect vocabulary/artifact mismatches.
    pub fn content_hash(&self) -> Digest32 {
        let mut h = Hasher::new();
        h.update_u64(self.k() as u64);
        h.update_u64(self.horizon as u64);
        h.update_u64(self.seed);
        h.update(&self.source_hash);
        for p in &self.prototypes {
            for w in &p.waypoints {
                h.update_f64(w[0].to_f64().unwrap());
                h.update_f64(w[1].to_f64().unwrap());
            }
        }
        h.finish()
    }
}

/// Digest of a trajectory training set, recorded as the vocabulary's
/// `source_hash`.
pub fn hash_trajectories<S: Real>(trajectories: &[Trajectory<S>]) -> Digest32 {
    let mut h = Hasher::new();
    h.update_u64(trajectories.len() as u64);
    for t in trajectories {
        h.update_u64(t.len() as u64);
        for w in &t.waypoints {
            h.update_f64(w[0].to_f64().unwrap());
            h.update_f64(w[1].to_f64().unwrap());
        }
    }
    h.finish()
}

fn flatten<S: Real>(t: &Trajectory<S>) -> Vec<S> {
    t.waypoints.iter().flat_map(|w| [w[0], w[1]]).collect()
}

fn vec_dist_sq<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops at `max_iters` or when the relative inertia change drops below 1e-6.
/// Empty clusters are reseeded to the point farthest from its assigned
/// centroid. Returns the fitted vocabulary and the per-iteration inertia
/// sequence (which is non-increasing).
pub fn kmeans_fit_traced<S: Real>(
    trajectories: &[Trajectory<S>],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(ActionVocabulary<S>, Vec<S>), VocabError> {
    if k == 0 {
        return Err(VocabError::ZeroK);
    }
    let horizon = trajectories.first().map(|t| t.len()).unwrap_or(0);
    for t in trajectories {
        if t.len() != horizon {
            return Err(VocabError::LengthMismatch { expected: horizon, got: t.len() });
        }
    }
    let data: Vec<Vec<S>> = trajectories.iter().map(flatten).collect();
    let distinct = count_distinct(&data);
    if distinct < k {
        return Err(VocabError::TooFewSamples { needed: k, got: distinct });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(&data, k, &mut rng);
    let mut assignment = vec![0usize; data.len()];
    let mut inertia_trace = Vec::new();
    let mut prev_inertia = S::infinity();
    let tol = S::of(1e-6);

    for _ in 0..max_iters {
        // assignment step
        let mut inertia = S::zero();
        for (i, x) in data.iter().enumerate() {
            let (best, d2) = nearest_vec(&centroids, x);
            assignment[i] = best;
            inertia = inertia + d2;
        }
        debug_assert!(inertia <= prev_inertia * (S::one() + S::of(1e-12)) || !prev_inertia.is_finite());
        inertia_trace.push(inertia);

        // update step
        let mut sums = vec![vec![S::zero(); 2 * horizon]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(x) {
                *s = *s + v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed to the point farthest from its assigned centroid
                let far = data
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (i, vec_dist_sq(x, &centroids[assignment[i]])))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[c] = data[far].clone();
            } else {
                let n = S::of(counts[c] as f64);
                for (dst, &s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *dst = s / n;
                }
            }
        }

        let rel_change = if prev_inertia.is_finite() {
            (prev_inertia - inertia).abs() / prev_inertia.max(S::of(1e-300))
        } else {
            S::infinity()
        };
        prev_inertia = inertia;
        if rel_change < tol {
            break;
        }
    }

    let prototypes: Vec<Trajectory<S>> = centroids
        .into_iter()
        .map(|c| Trajectory { waypoints: c.chunks(2).map(|p| [p[0], p[1]]).collect() })
        .collect();
    let vocab = ActionVocabulary::new(prototypes, seed, hash_trajectories(trajectories))?;
    Ok((vocab, inertia_trace))
}

pub fn kmeans_fit<S: Real>(
    trajectories: &[Trajectory<S>],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<ActionVocabulary<S>, VocabError> {
    kmeans_fit_traced(trajectories, k, max_iters, seed).map(|(v, _)| v)
}

fn count_distinct<S: Real>(data: &[Vec<S>]) -> usize {
    let mut keys: Vec<Vec<u64>> = data
        .iter()
        .map(|x| x.iter().map(|v| v.to_f64().unwrap().to_bits()).collect())
        .collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

fn kmeans_pp_init<S: Real>(data: &[Vec<S>], k: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<S>> {
    let mut centroids: Vec<Vec<S>> = Vec::with_capacity(k);
    centroids.push(data[rng.random_range(0..data.len())].clone());
    let mut d2: Vec<S> = data.iter().map(|x| vec_dist_sq(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: S = d2.iter().copied().sum();
        let next = if total > S::zero() {
            // weighted draw proportional to squared distance
            let r = S::of(rng.random::<f64>()) * total;
            let mut acc = S::zero();
            let mut chosen = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc = acc + w;
                if acc >= r {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all remaining mass at existing centroids: pick any unused point
            rng.random_range(0..data.len())
        };
        centroids.push(data[next].clone());
        let c = centroids.last().unwrap();
        for (slot, x) in d2.iter_mut().zip(data) {
            let d = vec_dist_sq(x, c);
            if d < *slot {
                *slot = d;
            }
        }
    }
    centroids
}

fn nearest_vec<S: Real>(centroids: &[Vec<S>], x: &[S]) -> (usize, S) {
    let mut best = 0usize;
    let mut best_d2 = S::infinity();
    for (i, c) in centroids.iter().enumerate() {
        let d2 = vec_dist_sq(c, x);
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    (best, best_d2)
}

/// Index and squared distance of the prototype nearest to `query`.
/// Ties break to the lowest index.
pub fn nearest_prototype<S: Real>(
    vocab: &ActionVocabulary<S>,
    query: &Trajectory<S>,
) -> Result<(usize, S), VocabError> {
    if query.len() != vocab.horizon() {
        return Err(VocabError::LengthMismatch { expected: vocab.horizon(), got: query.len() });
    }
    let mut best = 0usize;
    let mut best_d2 = S::infinity();
    for (i, p) in vocab.prototypes().iter().enumerate() {
        let d2 = p.dist_sq(query)?;
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    Ok((best, best_d2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(points: &[[f64; 2]]) -> Trajectory<f64> {
        Trajectory::new(points.to_vec()).unwrap()
    }

    #[test]
    fn k1_returns_coordinate_mean() {
        let data = vec![
            traj(&[[0.0, 0.0], [1.0, 0.0]]),
            traj(&[[2.0, 2.0], [3.0, 4.0]]),
            traj(&[[4.0, 4.0], [5.0, 8.0]]),
        ];
        let (vocab, _) = kmeans_fit_traced(&data, 1, 50, 7).unwrap();
        let p = &vocab.prototype(0).waypoints;
        assert!((p[0][0] - 2.0).abs() < 1e-12);
        assert!((p[0][1] - 2.0).abs() < 1e-12);
        assert!((p[1][0] - 3.0).abs() < 1e-12);
        assert!((p[1][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_separated_clusters_recover_means() {
        let mut data = Vec::new();
        for i in 0..10 {
            let e = 0.01 * i as f64;
            data.push(traj(&[[e, 0.0], [e, 1.0]]));
            data.push(traj(&[[100.0 + e, 0.0], [100.0 + e, 1.0]]));
        }
        let (vocab, trace) = kmeans_fit_traced(&data, 2, 100, 3).unwrap();
        let mean_a = 0.045; // mean of 0.00..0.09
        let mut xs: Vec<f64> = vocab.prototypes().iter().map(|p| p.waypoints[0][0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((xs[0] - mean_a).abs() < 1e-9, "{xs:?}");
        assert!((xs[1] - (100.0 + mean_a)).abs() < 1e-9, "{xs:?}");
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn kmeans_deterministic_across_runs() {
        let data: Vec<Trajectory<f64>> = (0..40)
            .map(|i| traj(&[[i as f64, (i * i % 7) as f64], [(i % 5) as f64, i as f64 * 0.5]]))
            .collect();
        let a = kmeans_fit(&data, 4, 100, 99).unwrap();
        let b = kmeans_fit(&data, 4, 100, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn too_few_distinct_samples_is_an_error() {
        let data = vec![traj(&[[1.0, 1.0]]), traj(&[[1.0, 1.0]]), traj(&[[2.0, 2.0]])];
        let err = kmeans_fit(&data, 3, 10, 0).unwrap_err();
        assert_eq!(err, VocabError::TooFewSamples { needed: 3, got: 2 });
    }

    #[test]
    fn nearest_prototype_exact_member_and_ties() {
        let protos: Vec<Trajectory<f64>> =
            (0..10).map(|i| traj(&[[i as f64, 0.0], [i as f64, 1.0]])).collect();
        let vocab = ActionVocabulary::new(protos, 0, [0u8; 32]).unwrap();
        let (idx, d) = nearest_prototype(&vocab, vocab.prototype(7)).unwrap();
        assert_eq!(idx, 7);
        assert_eq!(d, 0.0);
        // equidistant between prototypes 3 and 4: lower index wins
        let q = traj(&[[3.5, 0.0], [3.5, 1.0]]);
        let (idx, _) = nearest_prototype(&vocab, &q).unwrap();
        assert_eq!(idx, 3);
    }

    #[test]
    fn nearest_prototype_length_mismatch() {
        let vocab =
            ActionVocabulary::new(vec![traj(&[[0.0, 0.0], [1.0, 1.0]]), traj(&[[5.0, 5.0], [6.0, 6.0]])], 0, [0u8; 32])
                .unwrap();
        let err = nearest_prototype(&vocab, &traj(&[[0.0, 0.0]])).unwrap_err();
        assert_eq!(err, VocabError::LengthMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        let p = traj(&[[1.0, 2.0], [3.0, 4.0]]);
        let err = ActionVocabulary::new(vec![p.clone(), p], 0, [0u8; 32]).unwrap_err();
        assert_eq!(err, VocabError::DuplicatePrototypes(0, 1));
    }

    #[test]
    fn fixed_point_at_convergence() {
        let data: Vec<Trajectory<f64>> = (0..60)
            .map(|i| {
                let a = i as f64 * 0.7;
                traj(&[[a.sin() * 5.0, a.cos() * 5.0], [a.sin() * 9.0, a.cos() * 9.0]])
            })
            .collect();
        let vocab = kmeans_fit(&data, 5, 500, 11).unwrap();
        // reassign and recompute means: prototypes should move < 1e-6
        let mut sums = vec![[0.0f64; 4]; 5];
        let mut counts = vec![0usize; 5];
        for t in &data {
            let (idx, _) = nearest_prototype(&vocab, t).unwrap();
            counts[idx] += 1;
            for (j, w) in t.waypoints.iter().enumerate() {
                sums[idx][2 * j] += w[0];
                sums[idx][2 * j + 1] += w[1];
            }
        }
        for (c, p) in vocab.prototypes().iter().enumerate() {
            assert!(counts[c] > 0);
            for (j, w) in p.waypoints.iter().enumerate() {
                let mx = sums[c][2 * j] / counts[c] as f64;
                let my = sums[c][2 * j + 1] / counts[c] as f64;
                assert!((w[0] - mx).abs() < 1e-6 && (w[1] - my).abs() < 1e-6);
            }
        }
        // prototypes of a converged fit are their own nearest match
        for (i, p) in vocab.prototypes().iter().enumerate() {
            let (idx, d) = nearest_prototype(&vocab, p).unwrap();
            assert_eq!(idx, i);
            assert_eq!(d, 0.0);
        }
    }
}
