use serde::{Deserialize, Serialize};

use crate::error::{PacerError, Result};

/// Name and shape of one contiguous block of a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerShape {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        LayerShape {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter storage with a layer layout.
///
/// Layers are stored back to back in layout order; a `[rows, cols]` layer is
/// row-major, a `[n]` layer is treated as a `1 x n` row.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerShape>,
    offsets: Vec<usize>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayerShape>) -> Result<Self> {
        let total: usize = layout.iter().map(LayerShape::numel).sum();
        if total != values.len() {
            return Err(PacerError::config(format!(
                "parameter layout describes {total} values but {} were given",
                values.len()
            )));
        }
        if let Some(bad) = layout.iter().find(|l| l.shape.is_empty() || l.shape.len() > 2) {
            return Err(PacerError::config(format!(
                "layer `{}` must have rank 1 or 2, got {:?}",
                bad.name, bad.shape
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PacerError::config(format!("parameter {i} is not finite")));
        }
        let mut offsets = Vec::with_capacity(layout.len());
        let mut acc = 0;
        for l in &layout {
            offsets.push(acc);
            acc += l.numel();
        }
        Ok(ParamVector {
            values,
            layout,
            offsets,
        })
    }

    pub fn zeros(layout: Vec<LayerShape>) -> Self {
        let total = layout.iter().map(LayerShape::numel).sum();
        ParamVector::new(vec![0.0; total], layout).expect("zero vector matches its own layout")
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
            offsets: self.offsets.clone(),
        }
    }

    /// Concatenates layouts and values in order.
    pub fn concat(parts: &[ParamVector]) -> Self {
        let mut values = Vec::new();
        let mut layout = Vec::new();
        for p in parts {
            values.extend_from_slice(&p.values);
            layout.extend(p.layout.iter().cloned());
        }
        ParamVector::new(values, layout).expect("concatenation of valid vectors is valid")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        let start = self.offsets[i];
        &self.values[start..start + self.layout[i].numel()]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [f64] {
        let start = self.offsets[i];
        let n = self.layout[i].numel();
        &mut self.values[start..start + n]
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layout.iter().position(|l| l.name == name)
    }

    pub fn layer_matrix_shape(&self, i: usize) -> (usize, usize) {
        match self.layout[i].shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    /// Name of the layer containing flat index `idx`.
    pub fn layer_name_at(&self, idx: usize) -> &str {
        let i = match self.offsets.binary_search(&idx) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        // zero-sized layers share offsets with their successor
        let mut i = i;
        while self.layout[i].numel() == 0 && i + 1 < self.layout.len() {
            i += 1;
        }
        &self.layout[i].name
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    /// `self <- (1 - rate) * self + rate * source`
    pub fn blend_from(&mut self, source: &ParamVector, rate: f64) {
        assert!(self.same_layout(source), "blend between different layouts");
        for (t, s) in self.values.iter_mut().zip(&source.values) {
            *t = (1.0 - rate) * *t + rate * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Vec<LayerShape> {
        vec![LayerShape::new("w", vec![2, 3]), LayerShape::new("b", vec![3])]
    }

    #[test]
    fn length_must_match_layout() {
        assert!(ParamVector::new(vec![0.0; 8], layout()).is_err());
        let p = ParamVector::new((0..9).map(f64::from).collect(), layout()).unwrap();
        assert_eq!(p.layer(1), &[6.0, 7.0, 8.0]);
        assert_eq!(p.layer_matrix_shape(1), (1, 3));
        assert_eq!(p.layer_name_at(5), "w");
        assert_eq!(p.layer_name_at(6), "b");
    }

    #[test]
    fn non_finite_values_rejected() {
        let mut v = vec![0.0; 9];
        v[4] = f64::NAN;
        assert!(ParamVector::new(v, layout()).is_err());
    }

    #[test]
    fn blend_interpolates() {
        let mut t = ParamVector::zeros(layout());
        let mut s = ParamVector::zeros(layout());
        s.values_mut().iter_mut().for_each(|v| *v = 1.0);
        t.blend_from(&s, 0.005);
        assert!(t.values().iter().all(|&v| (v - 0.005).abs() < 1e-15));
        t.blend_from(&s, 1.0);
        assert_eq!(t.values(), s.values());
    }
}
