use super::NumericsError;

/// Query × key visibility pattern for attention.
///
/// A blocked entry receives exactly zero weight after the softmax. Every query
/// row must see at least one key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    visible: Vec<bool>,
}

impl AttentionMask {
    /// All keys visible to all queries.
    pub fn full(queries: usize, keys: usize) -> Self {
        Self { queries, keys, visible: vec![true; queries * keys] }
    }

    /// Padding-only mask: key `k` is visible iff `key_valid[k]`.
    pub fn key_padding(queries: usize, key_valid: &[bool]) -> Result<Self, NumericsError> {
        let keys = key_valid.len();
        let mut visible = Vec::with_capacity(queries * keys);
        for _ in 0..queries {
            visible.extend_from_slice(key_valid);
        }
        Self::from_visible(queries, keys, visible)
    }

    /// Causal mask over `n` positions: `(q, k)` visible iff `k <= q`.
    pub fn causal(n: usize) -> Self {
        let mut visible = vec![false; n * n];
        for q in 0..n {
            for k in 0..=q {
                visible[q * n + k] = true;
            }
        }
        Self { queries: n, keys: n, visible }
    }

    pub fn from_fn(queries: usize, keys: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self, NumericsError> {
        let mut visible = Vec::with_capacity(queries * keys);
        for q in 0..queries {
            for k in 0..keys {
                visible.push(f(q, k));
            }
        }
        Self::from_visible(queries, keys, visible)
    }

    pub fn from_visible(queries: usize, keys: usize, visible: Vec<bool>) -> Result<Self, NumericsError> {
        if visible.len() != queries * keys {
            return Err(NumericsError::Shape(format!(
                "mask has {} entries, expected {queries}x{keys}",
                visible.len()
            )));
        }
        let mask = Self { queries, keys, visible };
        if let Some(row) = (0..queries).find(|&q| mask.row(q).iter().all(|v| !v)) {
            return Err(NumericsError::FullyBlockedRow(row));
        }
        Ok(mask)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.queries, self.keys)
    }

    #[inline]
    pub fn is_visible(&self, q: usize, k: usize) -> bool {
        self.visible[q * self.keys + k]
    }

    #[inline]
    pub fn row(&self, q: usize) -> &[bool] {
        &self.visible[q * self.keys..(q + 1) * self.keys]
    }
}
