use super::DemoError;

/// Result of a DTW alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `(reference index, query index)` pairs from `(0, 0)` to `(n-1, m-1)`.
    pub path: Vec<(usize, usize)>,
    /// Sum of `dist` along `path`.
    pub cost: f64,
}

/// Dynamic time warping with full backtracking.
///
/// The path is monotone, contiguous (steps of (1,0), (0,1) or (1,1)) and
/// anchored at both ends. Ties in the backtrack prefer the diagonal step.
pub fn dtw_align<T, F>(reference: &[T], query: &[T], dist: F) -> Result<Alignment, DemoError>
where
    F: Fn(&T, &T) -> f64,
{
    let n = reference.len();
    let m = query.len();
    if n == 0 || m == 0 {
        return Err(DemoError::EmptySequence);
    }

    // acc[i * m + j]: cheapest cost of a path ending at (i, j)
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = dist(&reference[i], &query[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 && j > 0 {
                    b = b.min(acc[(i - 1) * m + j - 1]);
                }
                if i > 0 {
                    b = b.min(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    b = b.min(acc[i * m + j - 1]);
                }
                b
            };
            acc[i * m + j] = d + best;
        }
    }

    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    path.push((i, j));
    while i > 0 || j > 0 {
        let step = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        (i, j) = step;
        path.push(step);
    }
    path.reverse();

    Ok(Alignment {
        path,
        cost: acc[n * m - 1],
    })
}
