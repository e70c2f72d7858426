use super::ModelConfig;

/// Keys and values of every processed position, per layer, laid out as
/// `[kv_head][position][head_dim]`.
#[derive(Debug, Clone)]
pub struct KvCache {
    pub(super) keys: Vec<Vec<f32>>,
    pub(super) values: Vec<Vec<f32>>,
    pub(super) head_dim: usize,
    capacity: usize,
    filled: usize,
}

impl KvCache {
    /// Cache for the model's full context window.
    pub fn new(config: &ModelConfig) -> Self {
        Self::with_capacity(config, config.context_len)
    }

    /// Cache holding at most `capacity` positions, clamped to
    /// `1..=context_len`. Smaller caches save memory for short turns.
    pub fn with_capacity(config: &ModelConfig, capacity: usize) -> Self {
        let capacity = capacity.clamp(1, config.context_len);
        let head_dim = config.head_dim();
        let per_layer = config.n_kv_heads * capacity * head_dim;
        KvCache {
            keys: vec![vec![0.0; per_layer]; config.n_layers],
            values: vec![vec![0.0; per_layer]; config.n_layers],
            head_dim,
            capacity,
            filled: 0,
        }
    }

    pub fn filled_len(&self) -> usize {
        self.filled
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn remaining(&self) -> usize {
        self.capacity - self.filled
    }

    /// Forgets every position. Stored data is left in place and overwritten
    /// by later writes; nothing past `filled_len` is ever read.
    pub fn clear(&mut self) {
        self.filled = 0;
    }

    pub(super) fn advance(&mut self, n: usize) {
        debug_assert!(self.filled + n <= self.capacity);
        self.filled += n;
    }

    #[inline]
    pub(super) fn slot(&self, kv_head: usize, pos: usize) -> usize {
        (kv_head * self.capacity + pos) * self.head_dim
    }
}
