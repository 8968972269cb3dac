//! Shape helpers: element counts, trailing-dimension broadcasting and the
//! outer/extent/inner decomposition used by axis-wise ops.

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Broadcast two shapes with trailing-dimension alignment (numpy rules).
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
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

/// Whether `from` can be broadcast to exactly `to`.
pub(crate) fn broadcastable_to(from: &[usize], to: &[usize]) -> bool {
    broadcast_shapes(from, to).is_some_and(|s| s == to)
}

/// For every flat index of `out_shape`, the flat index of the element of
/// `in_shape` it reads under broadcasting.
pub(crate) fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let mut in_strides = vec![0usize; rank];
    let mut stride = 1;
    for d in (0..in_shape.len()).rev() {
        if in_shape[d] != 1 {
            in_strides[d + offset] = stride;
        }
        stride *= in_shape[d];
    }
    let total = numel(out_shape);
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut current = 0usize;
    for _ in 0..total {
        map.push(current);
        for d in (0..rank).rev() {
            counter[d] += 1;
            current += in_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            current -= in_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

/// Split a shape around `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}
