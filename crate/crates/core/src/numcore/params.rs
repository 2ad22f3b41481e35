use crate::error::{Error, Result};

/// Named, shaped slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat trainable parameter store with a gradient slot per value.
///
/// Segments partition `values` in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    segments: Vec<Segment>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl ParamVector {
    pub fn new() -> Self {
        ParamVector {
            segments: Vec::new(),
            values: Vec::new(),
            grad: Vec::new(),
        }
    }

    /// Appends a segment initialised with `init`.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Vec<f64>) -> Result<()> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n == 0 || n != init.len() {
            return Err(Error::shape(
                "param segment",
                format!("{name}: shape {shape:?} with {} values", init.len()),
            ));
        }
        if self.segments.iter().any(|s| s.name == name) {
            return Err(Error::config(format!("duplicate segment {name}")));
        }
        self.segments.push(Segment {
            name,
            shape,
            offset: self.values.len(),
        });
        self.values.extend(init);
        self.grad.resize(self.values.len(), 0.0);
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.segment(name)?.range();
        Some(&mut self.values[r])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Replaces the values with those of `other`, which must share the layout.
    pub fn copy_from(&mut self, other: &ParamVector) -> Result<()> {
        if self.segments != other.segments {
            return Err(Error::shape("copy_from", "parameter layouts differ"));
        }
        self.values.copy_from_slice(&other.values);
        Ok(())
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.segments == other.segments
    }
}

impl Default for ParamVector {
    fn default() -> Self {
        Self::new()
    }
}
