use super::ImuSample;
use crate::error::ImuError;

/// Tolerance for time-range coverage checks, seconds.
const COVERAGE_EPS: f64 = 1e-9;

/// Append-only, time-ordered IMU sample queue.
#[derive(Debug, Clone, Default)]
pub struct ImuBuffer {
    samples: Vec<ImuSample>,
}

impl ImuBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<ImuSample>) -> Result<Self, ImuError> {
        let mut buf = Self::new();
        for s in samples {
            buf.push(s)?;
        }
        Ok(buf)
    }

    pub fn push(&mut self, sample: ImuSample) -> Result<(), ImuError> {
        if let Some(last) = self.samples.last() {
            if !(sample.t > last.t) {
                return Err(ImuError::NonMonotonic {
                    index: self.samples.len(),
                    t: sample.t,
                });
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.t)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Samples covering `[start, end]`, with end points interpolated onto the bounds.
    pub fn slice(&self, start: f64, end: f64) -> Result<Vec<ImuSample>, ImuError> {
        let uncovered = ImuError::Uncovered { start, end };
        let (Some(first), Some(last)) = (self.samples.first(), self.samples.last()) else {
            return Err(uncovered);
        };
        if start < first.t - COVERAGE_EPS || end > last.t + COVERAGE_EPS || end < start {
            return Err(uncovered);
        }
        let sample_at = |t: f64| -> ImuSample {
            let idx = self.samples.partition_point(|s| s.t <= t);
            if idx == 0 {
                return ImuSample { t, ..self.samples[0] };
            }
            if idx >= self.samples.len() {
                return ImuSample { t, ..*last };
            }
            self.samples[idx - 1].lerp(&self.samples[idx], t)
        };
        let mut out = vec![sample_at(start)];
        for s in &self.samples {
            if s.t > start + COVERAGE_EPS && s.t < end - COVERAGE_EPS {
                out.push(*s);
            }
        }
        if end > start {
            out.push(sample_at(end));
        }
        Ok(out)
    }
}
