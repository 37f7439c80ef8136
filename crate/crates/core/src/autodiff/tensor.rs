use super::{AutodiffError, Scalar};

/// Dense row-major array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self, AutodiffError> {
        check_shape(&shape, values.len())?;
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    /// A tensor that participates in gradient computation.
    pub fn parameter(shape: Vec<usize>, values: Vec<T>) -> Result<Self, AutodiffError> {
        let mut t = Self::new(shape, values)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![T::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, AutodiffError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AutodiffError::InvalidShape {
                reason: "ragged rows".into(),
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `grad` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, grad: &[T]) -> Result<(), AutodiffError> {
        if grad.len() != self.values.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "accumulate_grad",
                left: self.shape.clone(),
                right: vec![grad.len()],
            });
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row count and column count of a 2-D view. Rank-1 tensors read as one row.
    pub fn dims2(&self) -> (usize, usize) {
        dims2(&self.shape)
    }

    /// Entry `(r, c)` of a 2-D tensor.
    pub fn at(&self, r: usize, c: usize) -> T {
        let (_, cols) = self.dims2();
        self.values[r * cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let (_, cols) = self.dims2();
        &self.values[r * cols..(r + 1) * cols]
    }
}

pub(crate) fn check_shape(shape: &[usize], len: usize) -> Result<(), AutodiffError> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(AutodiffError::InvalidShape {
            reason: format!("dimensions must be positive, got {shape:?}"),
        });
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(AutodiffError::InvalidShape {
            reason: format!("shape {shape:?} holds {n} values, got {len}"),
        });
    }
    Ok(())
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => {
            let c = *shape.last().unwrap_or(&1);
            (shape.iter().product::<usize>() / c.max(1), c)
        }
    }
}
