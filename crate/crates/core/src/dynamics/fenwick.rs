/// Binary indexed tree over exact integer weights.
#[derive(Debug, Clone)]
pub struct Fenwick {
    tree: Vec<i128>,
}

impl Fenwick {
    pub fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    pub fn add(&mut self, index: usize, value: i128) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += value;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over indices `< end`.
    pub fn prefix(&self, end: usize) -> i128 {
        let mut i = end;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i];
            i &= i - 1;
        }
        acc
    }
}
