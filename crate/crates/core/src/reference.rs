//! Published statistics of the benchmark splits, used to validate local copies.

use crate::kg::GraphStats;

pub struct SplitReference {
    pub dataset: &'static str,
    pub split: &'static str,
    pub stats: GraphStats,
}

const fn row(dataset: &'static str, split: &'static str, relations: usize, entities: usize, triples: usize) -> SplitReference {
    SplitReference {
        dataset,
        split,
        stats: GraphStats {
            relations,
            entities,
            triples,
        },
    }
}

pub const DATASETS: [&str; 3] = ["WN18RR", "FB15k-237", "NELL-995"];
pub const SPLITS: [&str; 5] = ["train", "train-2000", "train-1000", "test-transductive", "test-inductive"];

pub const BENCHMARK_STATS: [SplitReference; 15] = [
    row("WN18RR", "train", 9, 2746, 6670),
    row("WN18RR", "train-2000", 9, 1970, 2002),
    row("WN18RR", "train-1000", 9, 1362, 1001),
    row("WN18RR", "test-transductive", 7, 962, 638),
    row("WN18RR", "test-inductive", 8, 922, 1991),
    row("FB15k-237", "train", 180, 1594, 5223),
    row("FB15k-237", "train-2000", 180, 1280, 2008),
    row("FB15k-237", "train-1000", 180, 923, 1027),
    row("FB15k-237", "test-transductive", 102, 550, 492),
    row("FB15k-237", "test-inductive", 142, 1093, 2404),
    row("NELL-995", "train", 88, 2564, 10063),
    row("NELL-995", "train-2000", 88, 1346, 2011),
    row("NELL-995", "train-1000", 88, 893, 1020),
    row("NELL-995", "test-transductive", 60, 1936, 968),
    row("NELL-995", "test-inductive", 79, 2086, 6621),
];

/// Query triples of the FB15k-237 inductive test split without any reasoning
/// path between head and tail, out of all its query triples.
pub const FB_INDUCTIVE_ZERO_PATH: (usize, usize) = (61, 205);

pub fn lookup(dataset: &str, split: &str) -> Option<GraphStats> {
    BENCHMARK_STATS
        .iter()
        .find(|r| r.dataset.eq_ignore_ascii_case(dataset) && r.split == split)
        .map(|r| r.stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_rows() {
        assert_eq!(lookup("wn18rr", "train").unwrap().triples, 6670);
        assert_eq!(lookup("NELL-995", "test-inductive").unwrap().entities, 2086);
        assert!(lookup("WN18RR", "valid").is_none());
        for d in DATASETS {
            for s in SPLITS {
                assert!(lookup(d, s).is_some());
            }
        }
    }
}
