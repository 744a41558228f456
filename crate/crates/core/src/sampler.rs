//! Sparse temporal segment sampling.
//!
//! A clip of `n_frames` is split into `k` contiguous segments whose lengths
//! differ by at most one; one snippet of `snippet_len` consecutive frames is
//! taken from each segment.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Uniformly random snippet start inside each segment.
    TrainRandom,
    /// Snippet centred in each segment.
    TestUniform,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePlan {
    pub segment_starts: Vec<usize>,
    pub snippet_len: usize,
    pub mode: SampleMode,
    pub n_frames: usize,
}

impl SamplePlan {
    pub fn k(&self) -> usize {
        self.segment_starts.len()
    }

    /// Frame indices (relative to the clip start) of every snippet.
    ///
    /// Indices past the clip end repeat the last frame.
    pub fn frame_indices(&self) -> Vec<Vec<usize>> {
        let last = self.n_frames - 1;
        self.segment_starts
            .iter()
            .map(|&s| (s..s + self.snippet_len).map(|i| i.min(last)).collect())
            .collect()
    }
}

/// Start of segment `i` when `[0, n)` is cut into `k` near-equal parts.
fn boundary(i: usize, n: usize, k: usize) -> usize {
    i * n / k
}

/// Plans one snippet per segment. `rng` is only consumed in [`SampleMode::TrainRandom`].
pub fn sample_segments_with<R: RngCore + ?Sized>(
    n_frames: usize,
    k: usize,
    snippet_len: usize,
    mode: SampleMode,
    rng: &mut R,
) -> SamplePlan {
    assert!(n_frames >= 1, "clip has no frames");
    assert!(k >= 1 && snippet_len >= 1, "k and snippet_len must be positive");
    let last = n_frames - 1;
    let segment_starts = (0..k)
        .map(|i| {
            let lo = boundary(i, n_frames, k);
            let hi = boundary(i + 1, n_frames, k);
            let seg_len = hi - lo;
            let start = if seg_len < snippet_len {
                lo
            } else {
                let slack = seg_len - snippet_len;
                match mode {
                    SampleMode::TestUniform => lo + slack / 2,
                    SampleMode::TrainRandom => lo + rng.random_range(0..=slack),
                }
            };
            start.min(last)
        })
        .collect();
    SamplePlan {
        segment_starts,
        snippet_len,
        mode,
        n_frames,
    }
}

/// Convenience wrapper seeding a fresh generator; `seed` is ignored for test mode.
pub fn sample_segments(
    n_frames: usize,
    k: usize,
    snippet_len: usize,
    mode: SampleMode,
    seed: Option<u64>,
) -> SamplePlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    sample_segments_with(n_frames, k, snippet_len, mode, &mut rng)
}
