use serde::{Deserialize, Serialize};

use super::logmel::MEL_BANDS;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Segment length choice: 960 ms (96 frames) or 4960 ms (496 frames).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Short,
    Long,
}

impl SegmentKind {
    pub fn frames(self) -> usize {
        match self {
            SegmentKind::Short => 96,
            SegmentKind::Long => 496,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "short" => Some(SegmentKind::Short),
            "long" => Some(SegmentKind::Long),
            _ => None,
        }
    }
}

/// One `k×64` window of a clip's log-mel spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelPatch {
    pub frames: Tensor<f32>,
    pub clip_id: String,
    pub start_frame: usize,
}

impl LogMelPatch {
    pub fn new(frames: Tensor<f32>, clip_id: impl Into<String>, start_frame: usize) -> Result<Self> {
        if frames.rank() != 2 || frames.shape()[1] != MEL_BANDS {
            return Err(Error::shape("log-mel patch", format!("expected [k, 64], got {:?}", frames.shape())));
        }
        if !frames.all_finite() {
            return Err(Error::NonFinite("log-mel patch".into()));
        }
        Ok(Self {
            frames,
            clip_id: clip_id.into(),
            start_frame,
        })
    }

    pub fn k(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// Non-overlapping consecutive `k`-frame windows; the incomplete tail is dropped.
pub fn partition_patches(spec: &Tensor<f32>, k: usize, clip_id: &str) -> Result<Vec<LogMelPatch>> {
    if spec.rank() != 2 || spec.shape()[1] != MEL_BANDS {
        return Err(Error::shape("partition_patches", format!("expected [T, 64], got {:?}", spec.shape())));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("patch length must be positive".into()));
    }
    let t = spec.shape()[0];
    (0..t / k)
        .map(|p| {
            let start = p * k;
            let data = spec.data()[start * MEL_BANDS..(start + k) * MEL_BANDS].to_vec();
            LogMelPatch::new(Tensor::new(vec![k, MEL_BANDS], data)?, clip_id, start)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(t: usize) -> Tensor<f32> {
        Tensor::from_fn(&[t, MEL_BANDS], |i| i as f32)
    }

    #[test]
    fn counts() {
        let p = partition_patches(&spec(998), 96, "c").unwrap();
        assert_eq!(p.len(), 10);
        assert_eq!(998 - 10 * 96, 38);
        assert_eq!(partition_patches(&spec(96), 96, "c").unwrap().len(), 1);
        assert!(partition_patches(&spec(95), 96, "c").unwrap().is_empty());
    }

    #[test]
    fn patches_are_consecutive() {
        let s = spec(200);
        let p = partition_patches(&s, 96, "c").unwrap();
        assert_eq!(p[1].start_frame, 96);
        assert_eq!(p[1].frames.data()[0], s.data()[96 * MEL_BANDS]);
        assert_eq!(p[1].k(), 96);
    }
}
