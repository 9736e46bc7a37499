use rand::Rng;

use crate::error::{Error, Result};

/// Location of one named array inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

impl Span {
    pub fn of<'a>(&self, flat: &'a [f64]) -> &'a [f64] {
        &flat[self.offset..self.offset + self.len]
    }

    pub fn of_mut<'a>(&self, flat: &'a mut [f64]) -> &'a mut [f64] {
        &mut flat[self.offset..self.offset + self.len]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub span: Span,
}

/// Named real arrays backed by one flat buffer, with a gradient buffer of the
/// same layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    segments: Vec<Segment>,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserves a zero-initialized array.
    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize]) -> Span {
        let len = shape.iter().product();
        let span = Span {
            offset: self.values.len(),
            len,
        };
        self.values.resize(self.values.len() + len, 0.0);
        self.grads.resize(self.grads.len() + len, 0.0);
        self.segments.push(Segment {
            name: name.into(),
            shape: shape.to_vec(),
            span,
        });
        span
    }

    /// Fills `span` with `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn init_glorot(&mut self, span: Span, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in span.of_mut(&mut self.values) {
            *v = rng.gen_range(-a..a);
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    /// Simultaneous access for forward/backward passes.
    pub fn split_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.values, &mut self.grads)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn same_layout(&self, other: &ParameterStore) -> bool {
        self.segments == other.segments
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "parameter {} is not finite",
                self.describe(i)
            )));
        }
        Ok(())
    }

    /// Human-readable name for a flat index.
    pub fn describe(&self, index: usize) -> String {
        self.segments
            .iter()
            .find(|s| index >= s.span.offset && index < s.span.offset + s.span.len)
            .map_or_else(
                || format!("#{index}"),
                |s| format!("{}[{}]", s.name, index - s.span.offset),
            )
    }

    /// Polyak averaging: `self <- (1 - tau) * self + tau * online`.
    pub fn soft_update(&mut self, online: &ParameterStore, tau: f64) -> Result<()> {
        if !self.same_layout(online) {
            return Err(Error::Shape {
                context: "soft_update layout",
                expected: self.len(),
                got: online.len(),
            });
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::domain(format!("tau must lie in [0, 1], got {tau}")));
        }
        for (t, o) in self.values.iter_mut().zip(&online.values) {
            *t = (1.0 - tau) * *t + tau * o;
        }
        Ok(())
    }

    /// Copies values from another store with the same layout.
    pub fn copy_from(&mut self, other: &ParameterStore) -> Result<()> {
        self.soft_update(other, 1.0)
    }
}
