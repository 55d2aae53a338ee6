use serde::{Deserialize, Serialize};

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data.len()` does not match the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = numel(shape);
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// 1-D tensor holding `values`.
    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        let offset = index
            .iter()
            .zip(self.strides())
            .map(|(i, s)| i * s)
            .sum::<usize>();
        self.data[offset]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Drops leading unit dimensions until at most `rank` remain.
    pub fn squeeze_leading(&self, rank: usize) -> Tensor {
        let mut shape = self.shape.clone();
        while shape.len() > rank && shape[0] == 1 {
            shape.remove(0);
        }
        Tensor::new(shape, self.data.clone())
    }

    /// Interprets the elements as exact integers (shape vectors, indices).
    pub fn as_indices(&self) -> Option<Vec<i64>> {
        self.data
            .iter()
            .map(|&v| (v.fract() == 0.0 && v.abs() < 9.0e15).then_some(v as i64))
            .collect()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Numpy-style broadcast of two shapes; dimensions must agree or be 1.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to `out_shape`, zeroed on broadcast dimensions.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Calls `f(out_offset, offsets)` for every element of `out_shape`, where
/// `offsets[k]` is the matching element offset inside operand `k`.
pub(crate) fn for_each_broadcast(
    operands: &[&[usize]],
    out_shape: &[usize],
    mut f: impl FnMut(usize, &[usize]),
) {
    let n = numel(out_shape);
    if n == 0 {
        return;
    }
    let op_strides: Vec<Vec<usize>> = operands
        .iter()
        .map(|s| broadcast_strides(s, out_shape))
        .collect();
    let rank = out_shape.len();
    let mut index = vec![0usize; rank];
    let mut offsets = vec![0usize; operands.len()];
    for out in 0..n {
        f(out, &offsets);
        // odometer increment
        for d in (0..rank).rev() {
            index[d] += 1;
            for (k, s) in op_strides.iter().enumerate() {
                offsets[k] += s[d];
            }
            if index[d] < out_shape[d] {
                break;
            }
            for (k, s) in op_strides.iter().enumerate() {
                offsets[k] -= s[d] * index[d];
            }
            index[d] = 0;
        }
    }
}

/// Elementwise binary op with broadcasting. Returns `None` on incompatible shapes.
pub fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Option<Tensor> {
    let shape = broadcast_shapes(&a.shape, &b.shape)?;
    let mut data = vec![0.0; numel(&shape)];
    for_each_broadcast(&[&a.shape, &b.shape], &shape, |o, offs| {
        data[o] = f(a.data[offs[0]], b.data[offs[1]]);
    });
    Some(Tensor { shape, data })
}

/// Materializes `t` broadcast to `shape`.
pub fn broadcast_to(t: &Tensor, shape: &[usize]) -> Option<Tensor> {
    if broadcast_shapes(&t.shape, shape)?.as_slice() != shape {
        return None;
    }
    let mut data = vec![0.0; numel(shape)];
    for_each_broadcast(&[&t.shape], shape, |o, offs| data[o] = t.data[offs[0]]);
    Some(Tensor {
        shape: shape.to_vec(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[1, 3, 8, 8], &[1, 3, 1, 1]), Some(vec![1, 3, 8, 8]));
        assert_eq!(broadcast_shapes(&[4], &[2, 1]), Some(vec![2, 4]));
        assert_eq!(broadcast_shapes(&[3], &[4]), None);
    }

    #[test]
    fn broadcast_add_row_and_column() {
        let col = Tensor::new(vec![2, 1], vec![10.0, 20.0]);
        let row = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]);
        let sum = broadcast_binary(&col, &row, |a, b| a + b).unwrap();
        assert_eq!(sum.shape, vec![2, 3]);
        assert_eq!(sum.data, vec![11.0, 12.0, 13.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn indices_reject_fractions() {
        assert_eq!(Tensor::vector(vec![1.0, -2.0]).as_indices(), Some(vec![1, -2]));
        assert_eq!(Tensor::vector(vec![0.5]).as_indices(), None);
    }
}
