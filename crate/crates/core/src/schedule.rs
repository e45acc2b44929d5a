//! Piecewise-constant-in-time controls.

use crate::error::{Error, Result};
use crate::fields::VectorField;

#[derive(Clone, Debug, PartialEq)]
pub struct Segment<const D: usize> {
    pub start: f64,
    pub end: f64,
    pub field: VectorField<D>,
}

/// Ordered segments partitioning `[start, end]`. Past the last segment the
/// control is extended by the zero field.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSchedule<const D: usize> {
    segments: Vec<Segment<D>>,
}

const TIME_EPS: f64 = 1e-9;

impl<const D: usize> ControlSchedule<D> {
    pub fn new(segments: Vec<Segment<D>>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument("schedule has no segments".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.end > s.start) {
                return Err(Error::InvalidArgument(format!("segment {i} has nonpositive length")));
            }
            if i > 0 && (s.start - segments[i - 1].end).abs() > TIME_EPS {
                return Err(Error::InvalidArgument(format!("gap or overlap before segment {i}")));
            }
        }
        Ok(Self { segments })
    }

    pub fn constant(field: VectorField<D>, start: f64, end: f64) -> Self {
        Self::new(vec![Segment { start, end, field }]).expect("valid constant schedule")
    }

    /// Equal-length segments on `[start, end]`, one per field.
    pub fn piecewise(fields: &[VectorField<D>], start: f64, end: f64) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidArgument("no fields".into()));
        }
        let len = (end - start) / fields.len() as f64;
        let segs = fields
            .iter()
            .enumerate()
            .map(|(i, f)| Segment {
                start: start + i as f64 * len,
                end: if i + 1 == fields.len() { end } else { start + (i + 1) as f64 * len },
                field: f.clone(),
            })
            .collect();
        Self::new(segs)
    }

    pub fn segments(&self) -> &[Segment<D>] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].end
    }

    /// Right-continuous evaluation: the field active on `[t, t + dt)`.
    pub fn field_at(&self, t: f64) -> VectorField<D> {
        self.segments
            .iter()
            .find(|s| t >= s.start - TIME_EPS && t < s.end - TIME_EPS)
            .map_or(VectorField::Zero, |s| s.field.clone())
    }

    /// Segment boundaries strictly inside `(a, b)`, ascending.
    pub fn breakpoints_between(&self, a: f64, b: f64) -> Vec<f64> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut pts: Vec<f64> = self
            .segments
            .iter()
            .flat_map(|s| [s.start, s.end])
            .filter(|&x| x > lo + TIME_EPS && x < hi - TIME_EPS)
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|x, y| (*x - *y).abs() <= TIME_EPS);
        pts
    }

    /// The schedule restricted to `[a, b]`, zero-extended past its end.
    pub fn restrict(&self, a: f64, b: f64) -> Result<Self> {
        let mut out = Vec::new();
        for s in &self.segments {
            let lo = s.start.max(a);
            let hi = s.end.min(b);
            if hi - lo > TIME_EPS {
                out.push(Segment {
                    start: lo,
                    end: hi,
                    field: s.field.clone(),
                });
            }
        }
        let covered = out.last().map(|s| s.end).unwrap_or(a);
        if b - covered > TIME_EPS {
            out.push(Segment {
                start: covered,
                end: b,
                field: VectorField::Zero,
            });
        }
        Self::new(out)
    }

    /// The same controls delayed by `by`: segment times shifted right.
    pub fn shifted(&self, by: f64) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    start: s.start + by,
                    end: s.end + by,
                    field: s.field.clone(),
                })
                .collect(),
        }
    }

    /// Concatenation; `other` must start where `self` ends.
    pub fn then(&self, other: &Self) -> Result<Self> {
        let mut segs = self.segments.clone();
        segs.extend(other.segments.iter().cloned());
        Self::new(segs)
    }

    /// Adjacent segments carrying the same field joined into one.
    pub fn merged(&self) -> Self {
        let mut out: Vec<Segment<D>> = Vec::with_capacity(self.segments.len());
        for s in &self.segments {
            match out.last_mut() {
                Some(prev) if prev.field == s.field => prev.end = s.end,
                _ => out.push(s.clone()),
            }
        }
        Self { segments: out }
    }

    pub fn fields(&self) -> impl Iterator<Item = &VectorField<D>> {
        self.segments.iter().map(|s| &s.field)
    }
}
