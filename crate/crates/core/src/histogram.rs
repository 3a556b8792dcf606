//! Count data in histogram form.
//!
//! A domain with `N` positions is summarised by `n_j`, the number of
//! positions carrying exactly `j` mutations. Only counts with `n_j > 0` are
//! stored.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest per-position count accepted from input files.
pub const DEFAULT_COUNT_CEILING: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    counts: BTreeMap<u64, u64>,
    total: u64,
    max_count: u64,
}

impl CountHistogram {
    /// Tally per-position counts.
    pub fn from_positions(positions: &[u64]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::NoPositions);
        }
        let mut counts = BTreeMap::new();
        for &a in positions {
            *counts.entry(a).or_insert(0u64) += 1;
        }
        Ok(Self::from_map_unchecked(counts))
    }

    /// Build from `(count, n_positions)` pairs. Repeated counts are merged and
    /// zero multiplicities dropped.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, u64)>,
    {
        let mut counts = BTreeMap::new();
        for (j, n) in pairs {
            if n > 0 {
                *counts.entry(j).or_insert(0u64) += n;
            }
        }
        if counts.is_empty() {
            return Err(Error::NoPositions);
        }
        Ok(Self::from_map_unchecked(counts))
    }

    fn from_map_unchecked(counts: BTreeMap<u64, u64>) -> Self {
        let total = counts.values().sum();
        let max_count = *counts.keys().next_back().expect("non-empty");
        Self {
            counts,
            total,
            max_count,
        }
    }

    /// Total number of positions `N`.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Largest observed count `K`.
    pub fn max_count(&self) -> u64 {
        self.max_count
    }

    /// `n_j`, zero when `j` was not observed.
    pub fn n_at(&self, j: u64) -> u64 {
        self.counts.get(&j).copied().unwrap_or(0)
    }

    /// Number of distinct observed counts `L`.
    pub fn support_len(&self) -> usize {
        self.counts.len()
    }

    /// Observed counts in increasing order.
    pub fn support(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts.keys().copied()
    }

    /// `(j, n_j)` pairs in increasing `j`.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&j, &n)| (j, n))
    }

    /// `(j, n_j)` pairs with `j <= cutoff`.
    pub fn iter_upto(&self, cutoff: u64) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.range(..=cutoff).map(|(&j, &n)| (j, n))
    }

    /// Relative frequency `n_j / N`.
    pub fn relative_freq(&self, j: u64) -> f64 {
        self.n_at(j) as f64 / self.total as f64
    }

    /// Number of distinct observed counts at or below `cutoff`.
    pub fn support_len_upto(&self, cutoff: u64) -> usize {
        self.counts.range(..=cutoff).count()
    }

    /// Split the positions into the null sample (`j <= C`) and the rest.
    pub fn null_mass_split(&self, cutoff: u64) -> Result<(u64, u64)> {
        if cutoff > self.max_count {
            return Err(Error::CutoffBeyondSupport {
                cutoff,
                max_count: self.max_count,
            });
        }
        let n: u64 = self.counts.range(..=cutoff).map(|(_, &n)| n).sum();
        Ok((n, self.total - n))
    }

    /// Expand back into a sorted position vector.
    pub fn to_positions(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.total as usize);
        for (&j, &n) in &self.counts {
            out.extend(std::iter::repeat(j).take(n as usize));
        }
        out
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        Self::read_tsv_with_ceiling(reader, DEFAULT_COUNT_CEILING)
    }

    /// Read either of the two accepted TSV layouts, chosen by header:
    /// `position<TAB>count` (one row per position) or
    /// `count<TAB>n_positions` (one row per distinct count).
    pub fn read_tsv_with_ceiling<R: BufRead>(reader: R, ceiling: u64) -> Result<Self> {
        let mut layout: Option<Layout> = None;
        let mut positions = Vec::new();
        let mut pairs = Vec::new();

        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
            let Some(current) = layout else {
                layout = Some(Layout::from_header(&fields).ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!(
                        "unrecognised header {trimmed:?}; expected `position\\tcount` or `count\\tn_positions`"
                    ),
                })?);
                continue;
            };
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected 2 tab-separated fields, found {}", fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<u64> {
                s.parse::<u64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("{what} {s:?} is not a nonnegative integer"),
                })
            };
            match current {
                Layout::PerPosition => {
                    let count = parse(fields[1], "count")?;
                    if count > ceiling {
                        return Err(Error::CountAboveCeiling { count, ceiling });
                    }
                    positions.push(count);
                }
                Layout::Histogram => {
                    let count = parse(fields[0], "count")?;
                    let n = parse(fields[1], "n_positions")?;
                    if count > ceiling {
                        return Err(Error::CountAboveCeiling { count, ceiling });
                    }
                    pairs.push((count, n));
                }
            }
        }

        match layout {
            Some(Layout::PerPosition) => Self::from_positions(&positions),
            Some(Layout::Histogram) => Self::from_pairs(pairs),
            None => Err(Error::NoPositions),
        }
    }

    /// Write as `count<TAB>n_positions`.
    pub fn write_tsv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "count\tn_positions")?;
        for (j, n) in self.iter() {
            writeln!(w, "{j}\t{n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Layout {
    PerPosition,
    Histogram,
}

impl Layout {
    fn from_header(fields: &[&str]) -> Option<Self> {
        let lower: Vec<String> = fields.iter().map(|f| f.to_ascii_lowercase()).collect();
        match lower.as_slice() {
            [a, b] if a == "position" && b == "count" => Some(Layout::PerPosition),
            [a, b] if a == "count" && b == "n_positions" => Some(Layout::Histogram),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_small() {
        let h = CountHistogram::from_positions(&[0, 0, 1, 3]).unwrap();
        assert_eq!(h.iter().collect::<Vec<_>>(), vec![(0, 2), (1, 1), (3, 1)]);
        assert_eq!(h.total(), 4);
        assert_eq!(h.max_count(), 3);
        assert_eq!(h.support_len(), 3);
    }

    #[test]
    fn tally_singleton() {
        let h = CountHistogram::from_positions(&[5]).unwrap();
        assert_eq!(h.iter().collect::<Vec<_>>(), vec![(5, 1)]);
        assert_eq!(h.total(), 1);
        assert_eq!(h.max_count(), 5);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(
            CountHistogram::from_positions(&[]),
            Err(Error::NoPositions)
        ));
        assert!(matches!(
            CountHistogram::from_pairs(vec![(3, 0)]),
            Err(Error::NoPositions)
        ));
    }

    #[test]
    fn split_examples() {
        let h = CountHistogram::from_positions(&[0, 0, 1, 3]).unwrap();
        assert_eq!(h.null_mass_split(1).unwrap(), (3, 1));
        assert_eq!(h.null_mass_split(3).unwrap(), (4, 0));
        assert!(matches!(
            h.null_mass_split(4),
            Err(Error::CutoffBeyondSupport { .. })
        ));

        let h = CountHistogram::from_pairs(vec![(0, 800), (1, 90), (2, 40), (5, 70)]).unwrap();
        assert_eq!(h.null_mass_split(2).unwrap(), (930, 70));
    }

    #[test]
    fn reads_per_position_layout() {
        let text = "# domain cd0\nposition\tcount\n1\t0\n2\t0\n3\t4\n\n4\t1\n";
        let h = CountHistogram::read_tsv(text.as_bytes()).unwrap();
        assert_eq!(h.iter().collect::<Vec<_>>(), vec![(0, 2), (1, 1), (4, 1)]);
    }

    #[test]
    fn reads_histogram_layout() {
        let text = "count\tn_positions\n0\t800\n1\t90\n2\t40\n5\t70\n";
        let h = CountHistogram::read_tsv(text.as_bytes()).unwrap();
        assert_eq!(h.total(), 1000);
        assert_eq!(h.max_count(), 5);
        assert_eq!(h.n_at(3), 0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            CountHistogram::read_tsv("foo\tbar\n1\t2\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            CountHistogram::read_tsv("count\tn_positions\n1\tx\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            CountHistogram::read_tsv_with_ceiling("position\tcount\n1\t11\n".as_bytes(), 10),
            Err(Error::CountAboveCeiling { count: 11, .. })
        ));
    }

    #[test]
    fn tsv_write_read_roundtrip() {
        let h = CountHistogram::from_pairs(vec![(0, 7), (2, 1), (9, 3)]).unwrap();
        let mut buf = Vec::new();
        h.write_tsv(&mut buf).unwrap();
        assert_eq!(CountHistogram::read_tsv(buf.as_slice()).unwrap(), h);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn positions_roundtrip(mut a in proptest::collection::vec(0u64..60, 1..200)) {
                let h = CountHistogram::from_positions(&a).unwrap();
                a.sort_unstable();
                prop_assert_eq!(h.to_positions(), a);
            }

            #[test]
            fn split_sums_to_total(a in proptest::collection::vec(0u64..30, 1..200), c in 0u64..30) {
                let h = CountHistogram::from_positions(&a).unwrap();
                let c = c.min(h.max_count());
                let (n, rest) = h.null_mass_split(c).unwrap();
                prop_assert_eq!(n + rest, h.total());
            }
        }
    }
}
