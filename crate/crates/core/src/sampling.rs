//! Frame-index schedules over a video.
//!
//! The engine never touches pixels: a schedule is a sorted list of frame
//! indices that a backend decodes on its side. Four strategies exist:
//!
//! * bin-wise random: `k` equal temporal bins, one random frame per bin;
//! * fully random: `k` distinct frames drawn without replacement;
//! * uniform: `k` midpoint-spaced frames, no randomness;
//! * segment-uniform: uniform placement restricted to one [`Segment`].
//!
//! All bin and segment boundaries use integer floor arithmetic, so
//! `[floor(b * n / k), floor((b + 1) * n / k))` is the `b`-th of `k` bins
//! of an `n`-frame video.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_from_seed, uniform_below};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplingError {
    #[error("frame count must be at least 1")]
    ZeroFrames,
    #[error("segment count must be at least 1")]
    ZeroSegments,
    #[error("cannot draw {k} distinct frames from a {n_frames}-frame video")]
    NotEnoughFrames { k: usize, n_frames: u64 },
    #[error("segment {index} is empty")]
    EmptySegment { index: usize },
    #[error("invalid video metadata: {0}")]
    InvalidMeta(String),
}

/// Identity and temporal extent of a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub n_frames: u64,
    pub fps: f64,
}

impl VideoMeta {
    pub fn new(video_id: impl Into<String>, n_frames: u64, fps: f64) -> Result<Self, SamplingError> {
        let meta = VideoMeta {
            video_id: video_id.into(),
            n_frames,
            fps,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.n_frames == 0 {
            return Err(SamplingError::InvalidMeta("n_frames must be >= 1".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(SamplingError::InvalidMeta("fps must be a positive number".into()));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.fps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    BinWise,
    FullyRandom,
    Uniform,
    SegmentUniform,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Strategy::BinWise => "bin_wise",
            Strategy::FullyRandom => "fully_random",
            Strategy::Uniform => "uniform",
            Strategy::SegmentUniform => "segment_uniform",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSchedule {
    pub indices: Vec<u64>,
    pub strategy: Strategy,
    pub seed: u64,
}

/// Half-open frame range `[lo, hi)` for temporal segment `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub lo: u64,
    pub hi: u64,
}

impl Segment {
    pub fn len(&self) -> u64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, frame: u64) -> bool {
        (self.lo..self.hi).contains(&frame)
    }
}

/// `floor(part * n / parts)` without overflow.
fn boundary(part: u64, n: u64, parts: u64) -> u64 {
    (u128::from(part) * u128::from(n) / u128::from(parts)) as u64
}

/// One random frame from each of `k` equal bins, ascending.
///
/// When the video has fewer frames than bins, an empty bin contributes its
/// left boundary `floor(b * n / k)`, so neighbouring bins may repeat a frame.
pub fn bin_wise_sample(meta: &VideoMeta, k: usize, seed: u64) -> Result<FrameSchedule, SamplingError> {
    if k == 0 {
        return Err(SamplingError::ZeroFrames);
    }
    let n = meta.n_frames;
    let bins = k as u64;
    let mut rng = rng_from_seed(seed);
    let indices: Vec<u64> = (0..bins)
        .map(|b| {
            let lo = boundary(b, n, bins);
            let hi = boundary(b + 1, n, bins);
            if hi > lo {
                lo + uniform_below(&mut rng, hi - lo)
            } else {
                lo.min(n.saturating_sub(1))
            }
        })
        .collect();
    debug_assert!(indices.windows(2).all(|w| w[0] <= w[1]));
    Ok(FrameSchedule {
        indices,
        strategy: Strategy::BinWise,
        seed,
    })
}

/// `k` distinct frames drawn uniformly without replacement, ascending.
pub fn fully_random_sample(meta: &VideoMeta, k: usize, seed: u64) -> Result<FrameSchedule, SamplingError> {
    if k == 0 {
        return Err(SamplingError::ZeroFrames);
    }
    let n = meta.n_frames;
    if k as u64 > n {
        return Err(SamplingError::NotEnoughFrames { k, n_frames: n });
    }
    // Floyd's algorithm: k draws, no O(n) shuffle buffer.
    let mut rng = rng_from_seed(seed);
    let mut chosen = BTreeSet::new();
    for j in (n - k as u64)..n {
        let t = uniform_below(&mut rng, j + 1);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    Ok(FrameSchedule {
        indices: chosen.into_iter().collect(),
        strategy: Strategy::FullyRandom,
        seed,
    })
}

fn midpoints(lo: u64, len: u64, k: usize) -> Vec<u64> {
    let k = k as u64;
    (0..k)
        .map(|j| lo + (u128::from(2 * j + 1) * u128::from(len) / u128::from(2 * k)) as u64)
        .collect()
}

/// Frame `floor((j + 0.5) * n / k)` for each `j` in `0..k`.
pub fn uniform_sample(meta: &VideoMeta, k: usize) -> Result<FrameSchedule, SamplingError> {
    if k == 0 {
        return Err(SamplingError::ZeroFrames);
    }
    Ok(FrameSchedule {
        indices: midpoints(0, meta.n_frames, k),
        strategy: Strategy::Uniform,
        seed: 0,
    })
}

/// Splits the video into `t` contiguous segments whose sizes differ by at most one.
///
/// Segments are empty when `t > n_frames`.
pub fn split_segments(meta: &VideoMeta, t: usize) -> Result<Vec<Segment>, SamplingError> {
    if t == 0 {
        return Err(SamplingError::ZeroSegments);
    }
    let n = meta.n_frames;
    let parts = t as u64;
    Ok((0..parts)
        .map(|i| Segment {
            index: i as usize,
            lo: boundary(i, n, parts),
            hi: boundary(i + 1, n, parts),
        })
        .collect())
}

/// Midpoint-uniform frames inside one segment; repeats frames when the segment is shorter than `k`.
pub fn segment_uniform_sample(seg: &Segment, k: usize) -> Result<FrameSchedule, SamplingError> {
    if k == 0 {
        return Err(SamplingError::ZeroFrames);
    }
    if seg.is_empty() {
        return Err(SamplingError::EmptySegment { index: seg.index });
    }
    Ok(FrameSchedule {
        indices: midpoints(seg.lo, seg.len(), k),
        strategy: Strategy::SegmentUniform,
        seed: 0,
    })
}

/// Whole-video schedule for `strategy`; `seed` is ignored by the uniform strategy.
pub fn sample(strategy: Strategy, meta: &VideoMeta, k: usize, seed: u64) -> Result<FrameSchedule, SamplingError> {
    match strategy {
        Strategy::BinWise => bin_wise_sample(meta, k, seed),
        Strategy::FullyRandom => fully_random_sample(meta, k, seed),
        Strategy::Uniform => uniform_sample(meta, k),
        Strategy::SegmentUniform => {
            let whole = Segment {
                index: 0,
                lo: 0,
                hi: meta.n_frames,
            };
            segment_uniform_sample(&whole, k)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn video(n: u64) -> VideoMeta {
        VideoMeta::new("v", n, 30.0).unwrap()
    }

    #[test]
    fn meta_rejects_bad_values() {
        assert!(VideoMeta::new("v", 0, 30.0).is_err());
        assert!(VideoMeta::new("v", 10, 0.0).is_err());
        assert!(VideoMeta::new("v", 10, f64::NAN).is_err());
        assert_eq!(video(300).duration_s(), 10.0);
    }

    #[test]
    fn bin_wise_320_frames_32_bins() {
        for seed in 0..50 {
            let s = bin_wise_sample(&video(320), 32, seed).unwrap();
            assert_eq!(s.indices.len(), 32);
            for (b, &i) in s.indices.iter().enumerate() {
                let b = b as u64;
                assert!(10 * b <= i && i < 10 * b + 10, "bin {b} got {i}");
            }
        }
    }

    #[test]
    fn bin_wise_singleton_bins_are_identity() {
        for seed in [0, 1, 99, u64::MAX] {
            let s = bin_wise_sample(&video(32), 32, seed).unwrap();
            assert_eq!(s.indices, (0..32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn bin_wise_fewer_frames_than_bins_duplicates() {
        let s = bin_wise_sample(&video(3), 8, 5).unwrap();
        assert_eq!(s.indices.len(), 8);
        assert!(s.indices.iter().all(|&i| i < 3));
        assert!(s.indices.windows(2).all(|w| w[0] <= w[1]));
        // bins 0,1,2 of [0,3) are empty except where floor boundaries advance
        let s1 = bin_wise_sample(&video(1), 4, 0).unwrap();
        assert_eq!(s1.indices, vec![0, 0, 0, 0]);
    }

    #[test]
    fn zero_k_is_rejected() {
        assert_eq!(bin_wise_sample(&video(10), 0, 0), Err(SamplingError::ZeroFrames));
        assert_eq!(fully_random_sample(&video(10), 0, 0), Err(SamplingError::ZeroFrames));
        assert_eq!(uniform_sample(&video(10), 0), Err(SamplingError::ZeroFrames));
        assert_eq!(split_segments(&video(10), 0), Err(SamplingError::ZeroSegments));
    }

    #[test]
    fn fully_random_exhaustive_and_deterministic() {
        assert_eq!(
            fully_random_sample(&video(5), 5, 123).unwrap().indices,
            vec![0, 1, 2, 3, 4]
        );
        let a = fully_random_sample(&video(1000), 32, 0).unwrap();
        let b = fully_random_sample(&video(1000), 32, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.indices.len(), 32);
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn fully_random_rejects_oversized_draw() {
        assert_eq!(
            fully_random_sample(&video(4), 5, 0),
            Err(SamplingError::NotEnoughFrames { k: 5, n_frames: 4 })
        );
    }

    #[test]
    fn uniform_examples() {
        let s = uniform_sample(&video(320), 32).unwrap();
        assert_eq!(s.indices, (0..32).map(|j| 10 * j + 5).collect::<Vec<_>>());
        assert_eq!(
            uniform_sample(&video(8), 8).unwrap().indices,
            (0..8).collect::<Vec<_>>()
        );
        assert_eq!(uniform_sample(&video(100), 3).unwrap().indices, vec![16, 50, 83]);
    }

    #[test]
    fn split_examples() {
        let segs = split_segments(&video(80), 8).unwrap();
        for (t, s) in segs.iter().enumerate() {
            assert_eq!((s.lo, s.hi), (10 * t as u64, 10 * t as u64 + 10));
        }
        let segs = split_segments(&video(10), 8).unwrap();
        let sizes: Vec<u64> = segs.iter().map(Segment::len).collect();
        assert_eq!(sizes, vec![1, 1, 1, 2, 1, 1, 1, 2]);
        let segs = split_segments(&video(3600 * 30), 8).unwrap();
        assert!(segs.iter().all(|s| s.len() == 13_500));
    }

    #[test]
    fn segment_uniform_examples() {
        let seg = Segment {
            index: 0,
            lo: 100,
            hi: 420,
        };
        let s = segment_uniform_sample(&seg, 32).unwrap();
        assert_eq!(s.indices, (0..32).map(|j| 100 + 10 * j + 5).collect::<Vec<_>>());
        let one = Segment { index: 0, lo: 0, hi: 1 };
        assert_eq!(segment_uniform_sample(&one, 4).unwrap().indices, vec![0, 0, 0, 0]);
        let ten = Segment {
            index: 0,
            lo: 10,
            hi: 20,
        };
        assert_eq!(segment_uniform_sample(&ten, 2).unwrap().indices, vec![12, 17]);
        let empty = Segment { index: 3, lo: 5, hi: 5 };
        assert_eq!(
            segment_uniform_sample(&empty, 2),
            Err(SamplingError::EmptySegment { index: 3 })
        );
    }

    proptest! {
        #[test]
        fn every_scheduler_stays_in_range(n in 1u64..5000, k in 1usize..64, seed: u64) {
            let meta = video(n);
            for strategy in [super::Strategy::BinWise, super::Strategy::Uniform, super::Strategy::SegmentUniform] {
                let s = sample(strategy, &meta, k, seed).unwrap();
                prop_assert_eq!(s.indices.len(), k);
                prop_assert!(s.indices.iter().all(|&i| i < n));
                prop_assert!(s.indices.windows(2).all(|w| w[0] <= w[1]));
                prop_assert_eq!(&s, &sample(strategy, &meta, k, seed).unwrap());
            }
            if k as u64 <= n {
                let s = fully_random_sample(&meta, k, seed).unwrap();
                prop_assert!(s.indices.iter().all(|&i| i < n));
                prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn segments_partition_the_video(n in 1u64..100_000, t in 1usize..40) {
            let segs = split_segments(&video(n), t).unwrap();
            prop_assert_eq!(segs.len(), t);
            prop_assert_eq!(segs[0].lo, 0);
            prop_assert_eq!(segs[t - 1].hi, n);
            for w in segs.windows(2) {
                prop_assert_eq!(w[0].hi, w[1].lo);
            }
            let min = segs.iter().map(Segment::len).min().unwrap();
            let max = segs.iter().map(Segment::len).max().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
