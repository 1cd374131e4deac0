use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One implicit interaction. `time` is the 1-based rank within the user's
/// timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub time: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Skip the first line of the file.
    pub header: bool,
}

/// Time-ordered user timelines over a fixed item catalog.
///
/// The timeline of user `j` is `timelines[j]`; the item at position `p` has
/// time `p + 1`, so times are always exactly `1..=T_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionLog {
    users: Vec<String>,
    items: Vec<String>,
    timelines: Vec<Vec<usize>>,
}

impl InteractionLog {
    /// Builds a log from already-indexed timelines.
    pub fn from_timelines(
        users: Vec<String>,
        items: Vec<String>,
        timelines: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if users.len() != timelines.len() {
            return Err(Error::Parameter(format!(
                "{} user tokens for {} timelines",
                users.len(),
                timelines.len()
            )));
        }
        for (j, t) in timelines.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&i| i >= items.len()) {
                return Err(Error::Index {
                    index: bad,
                    len: items.len(),
                });
            }
            if t.is_empty() {
                return Err(Error::Parameter(format!("user {} has no interactions", users[j])));
            }
        }
        Ok(Self {
            users,
            items,
            timelines,
        })
    }

    pub(crate) fn with_timelines(&self, timelines: Vec<Vec<usize>>) -> Self {
        Self {
            users: self.users.clone(),
            items: self.items.clone(),
            timelines,
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.timelines.iter().map(Vec::len).sum()
    }

    pub fn user_token(&self, user: usize) -> &str {
        &self.users[user]
    }

    pub fn item_token(&self, item: usize) -> &str {
        &self.items[item]
    }

    pub fn item_tokens(&self) -> &[String] {
        &self.items
    }

    pub fn user_tokens(&self) -> &[String] {
        &self.users
    }

    /// Items of user `j` in time order.
    pub fn timeline(&self, user: usize) -> &[usize] {
        &self.timelines[user]
    }

    pub fn timelines(&self) -> &[Vec<usize>] {
        &self.timelines
    }

    /// Items user `j` interacted with strictly before time `t`.
    pub fn history_before(&self, user: usize, time: usize) -> &[usize] {
        let t = &self.timelines[user];
        &t[..time.saturating_sub(1).min(t.len())]
    }

    pub fn interactions(&self) -> impl Iterator<Item = Interaction> + '_ {
        self.timelines.iter().enumerate().flat_map(|(user, t)| {
            t.iter().enumerate().map(move |(p, &item)| Interaction {
                user,
                item,
                time: p + 1,
            })
        })
    }

    /// Interaction count per item over the whole log.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.items.len()];
        for t in &self.timelines {
            for &i in t {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Persists the log with its id maps (JSON).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::Format(e.to_string()))?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let log: Self = serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_timelines(log.users, log.items, log.timelines)
    }

    /// Writes the log back out in the plain interactions format, using the
    /// time rank as timestamp.
    pub fn write_interactions(&self, mut w: impl Write) -> Result<()> {
        for x in self.interactions() {
            writeln!(w, "{}\t{}\t{}", self.users[x.user], self.items[x.item], x.time)?;
        }
        Ok(())
    }
}

/// Reads an interactions file (`user item timestamp`, tab or comma separated).
pub fn load_interactions(path: impl AsRef<Path>, opts: LoadOptions) -> Result<InteractionLog> {
    let f = File::open(path)?;
    parse_interactions(f, opts)
}

pub fn parse_interactions(reader: impl Read, opts: LoadOptions) -> Result<InteractionLog> {
    let reader = BufReader::new(reader);
    let mut delim: Option<char> = None;

    let mut user_ids: HashMap<String, usize> = HashMap::new();
    let mut item_ids: HashMap<String, usize> = HashMap::new();
    let mut users = Vec::new();
    let mut items = Vec::new();
    // (timestamp, item) in file order per user
    let mut raw: Vec<Vec<(i64, usize)>> = Vec::new();

    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        let d = *delim.get_or_insert(if line.contains('\t') { '\t' } else { ',' });
        if n == 0 && opts.header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(d).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let (u, i) = (fields[0].trim(), fields[1].trim());
        if u.is_empty() || i.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty user or item token".into(),
            });
        }
        let ts: i64 = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad timestamp {:?}", fields[2]),
        })?;

        let uid = *user_ids.entry(u.to_string()).or_insert_with(|| {
            users.push(u.to_string());
            raw.push(Vec::new());
            users.len() - 1
        });
        let iid = *item_ids.entry(i.to_string()).or_insert_with(|| {
            items.push(i.to_string());
            items.len() - 1
        });
        raw[uid].push((ts, iid));
    }

    if users.is_empty() {
        return Err(Error::EmptyInput("no interactions".into()));
    }

    let timelines = raw
        .into_iter()
        .map(|mut v| {
            // stable: equal timestamps keep file order
            v.sort_by_key(|&(ts, _)| ts);
            v.into_iter().map(|(_, i)| i).collect()
        })
        .collect();

    Ok(InteractionLog {
        users,
        items,
        timelines,
    })
}
