use std::collections::BTreeSet;

use super::InteractionLog;

/// Items with at most this many interactions are cold.
pub const COLD_THRESHOLD: usize = 5;

/// Items/users flagged as cold-start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColdStartTags {
    pub threshold: usize,
    pub cs_items: BTreeSet<usize>,
    pub cs_users: BTreeSet<usize>,
}

impl ColdStartTags {
    pub fn is_cold_item(&self, item: usize) -> bool {
        self.cs_items.contains(&item)
    }

    pub fn is_cold_user(&self, user: usize) -> bool {
        self.cs_users.contains(&user)
    }
}

/// An item is cold when it has at most `threshold` interactions in the whole
/// log; a user is cold when they touched at least one cold item.
pub fn tag_cold_start(log: &InteractionLog, threshold: usize) -> ColdStartTags {
    let counts = log.item_counts();
    let cs_items: BTreeSet<usize> = counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c <= threshold)
        .map(|(i, _)| i)
        .collect();
    let cs_users = log
        .timelines()
        .iter()
        .enumerate()
        .filter(|(_, t)| t.iter().any(|i| cs_items.contains(i)))
        .map(|(j, _)| j)
        .collect();
    ColdStartTags {
        threshold,
        cs_items,
        cs_users,
    }
}

/// Leave-last-out split.
#[derive(Debug, Clone)]
pub struct Split {
    /// Training timelines; same id maps as the source log.
    pub train: InteractionLog,
    /// `(user, item)` held out as second-to-last interaction.
    pub validation: Vec<(usize, usize)>,
    /// `(user, item)` held out as last interaction.
    pub test: Vec<(usize, usize)>,
}

impl Split {
    /// History visible when predicting the test target: train plus the
    /// validation item, if any.
    pub fn test_history(&self, full: &InteractionLog, user: usize) -> Vec<usize> {
        let t = full.timeline(user);
        t[..t.len() - 1].to_vec()
    }
}

/// Per user: `>= 3` interactions gives train/validation/test, exactly 2 gives
/// train/test and a single interaction stays in train only.
pub fn split_leave_last_out(log: &InteractionLog) -> Split {
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let timelines = log
        .timelines()
        .iter()
        .enumerate()
        .map(|(j, t)| match t.len() {
            0 | 1 => t.clone(),
            2 => {
                test.push((j, t[1]));
                t[..1].to_vec()
            }
            n => {
                validation.push((j, t[n - 2]));
                test.push((j, t[n - 1]));
                t[..n - 2].to_vec()
            }
        })
        .collect();
    Split {
        train: log.with_timelines(timelines),
        validation,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_of(timelines: Vec<Vec<usize>>, n_items: usize) -> InteractionLog {
        let users = (0..timelines.len()).map(|j| format!("u{j}")).collect();
        let items = (0..n_items).map(|i| format!("i{i}")).collect();
        InteractionLog::from_timelines(users, items, timelines).unwrap()
    }

    #[test]
    fn cold_start_threshold_is_inclusive() {
        // item 0: 6 interactions, item 1: exactly 5
        let mut tl = vec![vec![0]; 6];
        for t in tl.iter_mut().take(5) {
            t.push(1);
        }
        tl.push(vec![2]);
        let log = log_of(tl, 3);
        let tags = tag_cold_start(&log, 5);
        assert!(!tags.is_cold_item(0));
        assert!(tags.is_cold_item(1));
        assert!(tags.is_cold_item(2));
        assert_eq!(tags.cs_users.len(), 6);
    }

    #[test]
    fn three_way_split() {
        let log = log_of(vec![vec![0, 1, 2]], 3);
        let s = split_leave_last_out(&log);
        assert_eq!(s.train.timeline(0), &[0]);
        assert_eq!(s.validation, vec![(0, 1)]);
        assert_eq!(s.test, vec![(0, 2)]);
    }

    #[test]
    fn short_timelines() {
        let log = log_of(vec![vec![0, 1], vec![2]], 3);
        let s = split_leave_last_out(&log);
        assert_eq!(s.train.timeline(0), &[0]);
        assert_eq!(s.test, vec![(0, 1)]);
        assert!(s.validation.is_empty());
        assert_eq!(s.train.timeline(1), &[2]);
    }

    #[test]
    fn test_history_includes_validation() {
        let log = log_of(vec![vec![0, 1, 2, 3]], 4);
        let s = split_leave_last_out(&log);
        assert_eq!(s.test_history(&log, 0), vec![0, 1, 2]);
    }
}
