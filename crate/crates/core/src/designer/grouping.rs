use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::outcome_chain::OutcomeChain;

use super::Strategy;

/// Group index per outcome state; `None` marks the implicit zero gain.
pub type Grouping = Vec<Option<usize>>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    All,
    Count(usize),
    Pattern(usize),
    State(usize),
}

/// Assign outcome states to gain groups for a preset strategy.
///
/// Group ids are numbered in order of first appearance along the state
/// enumeration. States receiving nothing map to the zero gain.
pub fn group_assignment(chain: &OutcomeChain, strategy: Strategy) -> Result<Grouping> {
    let blocks = chain.layout.d_max + 1;
    let key = |i: usize| -> Result<Key> {
        let pattern = chain.pattern(i);
        Ok(match strategy {
            Strategy::S1 => Key::All,
            Strategy::S2 => Key::Count(
                pattern
                    .chunks(blocks)
                    .filter(|sensor| sensor.iter().any(|&on| on))
                    .count(),
            ),
            Strategy::S3 => Key::Count(pattern.iter().filter(|&&on| on).count()),
            Strategy::S4 => Key::Pattern(chain.avail[i]),
            Strategy::S5 => Key::State(i),
            Strategy::Custom => {
                return Err(Error::UnknownStrategy(
                    "custom strategies need an explicit grouping".into(),
                ))
            }
        })
    };

    let mut ids: HashMap<Key, usize> = HashMap::new();
    let mut grouping = Vec::with_capacity(chain.len());
    for i in 0..chain.len() {
        if chain.is_empty_reception(i) {
            grouping.push(None);
            continue;
        }
        let next = ids.len();
        grouping.push(Some(*ids.entry(key(i)?).or_insert(next)));
    }
    Ok(grouping)
}

/// Normalize a user-supplied grouping: empty-reception states are forced to
/// the zero gain and group ids are renumbered by first appearance.
pub fn custom_grouping(chain: &OutcomeChain, raw: &[Option<usize>]) -> Result<Grouping> {
    if raw.len() != chain.len() {
        return Err(Error::ScheduleMismatch(format!(
            "custom grouping has {} entries, chain has {} states",
            raw.len(),
            chain.len()
        )));
    }
    let mut ids: HashMap<usize, usize> = HashMap::new();
    Ok(raw
        .iter()
        .enumerate()
        .map(|(i, g)| match g {
            Some(g) if !chain.is_empty_reception(i) => {
                let next = ids.len();
                Some(*ids.entry(*g).or_insert(next))
            }
            _ => None,
        })
        .collect())
}
