use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::Contract;

/// Block inclusion order: higher fee first, then earlier submission, then
/// lexicographically smaller id.
pub fn pool_order(a: &Contract, b: &Contract) -> Ordering {
    b.fee
        .cmp(&a.fee)
        .then(a.submitted_at.cmp(&b.submitted_at))
        .then_with(|| a.id.cmp(&b.id))
}

/// Returns the contracts sorted in block inclusion order.
pub fn order_pending(pool: &[Contract]) -> Vec<&Contract> {
    let mut out: Vec<&Contract> = pool.iter().collect();
    out.sort_by(|a, b| pool_order(a, b));
    out
}

#[derive(Debug, Clone)]
struct Entry(Contract);

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        pool_order(&self.0, &other.0) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        pool_order(&self.0, &other.0)
    }
}

/// Pending contracts kept in inclusion order.
#[derive(Debug, Clone, Default)]
pub struct PendingPool {
    entries: BTreeSet<Entry>,
}

impl PendingPool {
    pub fn insert(&mut self, contract: Contract) {
        self.entries.insert(Entry(contract));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Contract> {
        self.entries.iter().map(|e| &e.0)
    }

    pub fn take_top(&mut self, n: usize) -> Vec<Contract> {
        let mut out = Vec::with_capacity(n.min(self.entries.len()));
        while out.len() < n {
            match self.entries.pop_first() {
                Some(Entry(c)) => out.push(c),
                None => break,
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::contract;
    use super::*;

    #[test]
    fn fee_then_time_then_id() {
        let pool = vec![
            contract("b", 5, 1),
            contract("a", 5, 1),
            contract("c", 5, 0),
            contract("d", 9, 3),
            contract("e", 0, 0),
        ];
        let ids: Vec<&str> = order_pending(&pool).iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["d", "c", "a", "b", "e"]);

        let mut p = PendingPool::default();
        for c in pool {
            p.insert(c);
        }
        let top: Vec<String> = p.take_top(2).into_iter().map(|c| c.id.to_string()).collect();
        assert_eq!(top, ["d", "c"]);
        assert_eq!(p.len(), 3);
    }
}
