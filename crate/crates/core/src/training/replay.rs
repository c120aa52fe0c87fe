use rand::Rng;

/// Pool of past generator outputs shown to a discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<I> {
    capacity: usize,
    items: Vec<I>,
}

impl<I: Clone> ReplayBuffer<I> {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    /// Rebuilds a buffer from stored items, e.g. after a checkpoint load.
    pub fn with_items(capacity: usize, mut items: Vec<I>) -> Self {
        items.truncate(capacity);
        ReplayBuffer { capacity, items }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[I] {
        &self.items
    }

    /// Below capacity the fresh item is stored and returned. At capacity it
    /// is returned with probability 0.5; otherwise a uniformly chosen stored
    /// item is returned and replaced by the fresh one.
    pub fn draw<R: Rng>(&mut self, fresh: I, rng: &mut R) -> I {
        if self.capacity == 0 {
            return fresh;
        }
        if self.items.len() < self.capacity {
            self.items.push(fresh.clone());
            return fresh;
        }
        if rng.random::<f64>() < 0.5 {
            return fresh;
        }
        let i = rng.random_range(0..self.items.len());
        std::mem::replace(&mut self.items[i], fresh)
    }
}

/// Free-function form of [`ReplayBuffer::draw`].
pub fn buffer_draw<I: Clone, R: Rng>(buf: &mut ReplayBuffer<I>, fresh: I, rng: &mut R) -> I {
    buf.draw(fresh, rng)
}
