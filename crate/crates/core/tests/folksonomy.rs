use std::path::Path;

use ngramconv::embeddings::{cosine_f32, load_vectors, EmbeddingTable};
use ngramconv::folksonomy::{
    annotate_quadrant, best_subset, cluster_similarity, select_cluster_tags, Cluster, ClusterModel, Label, TagProfile,
};
use proptest::prelude::*;

fn fixture_vectors() -> EmbeddingTable {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference-clusters-100d.txt");
    load_vectors(&path, None).unwrap()
}

#[test]
fn reference_clusters_are_tighter_than_their_mix() {
    let sim = cluster_similarity(&ClusterModel::reference(), &fixture_vectors()).unwrap();
    assert!(sim.missing.is_empty(), "{:?}", sim.missing);
    for (c, intra) in ClusterModel::reference().clusters().iter().zip(&sim.intra) {
        assert!(*intra > sim.inter, "{}: intra {intra:.4} vs inter {:.4}", c.name, sim.inter);
    }
}

#[test]
fn selection_over_reference_pools_keeps_the_pool_when_sizes_match() {
    let table = fixture_vectors();
    let pools = ClusterModel::reference().clusters().to_vec();
    let model = select_cluster_tags(&pools, 10, &table).unwrap();
    for (picked, pool) in model.clusters().iter().zip(&pools) {
        let mut a = picked.terms.clone();
        let mut b = pool.terms.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}

/// Every `size`-subset of `0..n` in lexicographic order.
fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    fn extend(n: usize, size: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            extend(n, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    extend(n, size, 0, &mut Vec::new(), &mut out);
    out
}

fn mean_pairwise(table: &EmbeddingTable, terms: &[String]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..terms.len() {
        for j in i + 1..terms.len() {
            sum += cosine_f32(table.vector(&terms[i]).unwrap(), table.vector(&terms[j]).unwrap()).unwrap();
            n += 1;
        }
    }
    sum / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn selection_matches_brute_force(raw in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 5), 12)) {
        prop_assume!(raw.iter().all(|v| v.iter().map(|x| x * x).sum::<f32>() > 1e-3));
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let mut pairs: Vec<(String, Vec<f32>)> = words.iter().cloned().zip(raw).collect();
        // Three fixed ten-term pools complete the four-cluster model.
        let mut pools = vec![Cluster { name: "c0".into(), terms: words.clone() }];
        for c in 1..4 {
            let terms: Vec<String> = (0..10).map(|i| format!("e{c}x{i}")).collect();
            for (i, t) in terms.iter().enumerate() {
                pairs.push((t.clone(), vec![c as f32, i as f32 + 1.0, 1.0, 0.0, 0.5]));
            }
            pools.push(Cluster { name: format!("c{c}"), terms });
        }
        let table = EmbeddingTable::from_pairs(5, pairs).unwrap();

        let model = select_cluster_tags(&pools, 10, &table).unwrap();
        let best = subsets(12, 10)
            .iter()
            .map(|s| mean_pairwise(&table, &s.iter().map(|&i| words[i].clone()).collect::<Vec<_>>()))
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((mean_pairwise(&table, &model.clusters()[0].terms) - best).abs() < 1e-9);
    }

    #[test]
    fn best_subset_matches_exhaustive_search(raw in prop::collection::vec(-1.0f64..1.0, 66), size in 2usize..=6) {
        let n = 12;
        let mut sim = vec![vec![0.0; n]; n];
        let mut it = raw.into_iter();
        for i in 0..n {
            for j in i + 1..n {
                let v = it.next().unwrap();
                sim[i][j] = v;
                sim[j][i] = v;
            }
        }
        let score = |s: &[usize]| -> f64 {
            let mut t = 0.0;
            for a in 0..s.len() {
                for b in a + 1..s.len() {
                    t += sim[s[a]][s[b]];
                }
            }
            t
        };
        let mut best: Option<(f64, Vec<usize>)> = None;
        for s in subsets(n, size) {
            let v = score(&s);
            if best.as_ref().is_none_or(|b| v > b.0 + 1e-12) {
                best = Some((v, s));
            }
        }
        let got = best_subset(&sim, size);
        let (want_score, want) = best.unwrap();
        prop_assert!((score(&got) - want_score).abs() < 1e-9);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn more_tags_for_the_winner_keep_the_label(counts in prop::array::uniform4(0u32..=30), extra in 1u32..10) {
        let profile = TagProfile { song_id: "s".into(), counts };
        let before = annotate_quadrant(&profile);
        if let Some(i) = Label::QUADRANTS.iter().position(|&l| l == before.label) {
            let mut more = counts;
            more[i] += extra;
            let after = annotate_quadrant(&TagProfile { song_id: "s".into(), counts: more });
            prop_assert_eq!(after.label, before.label);
            prop_assert!(after.purity >= before.purity);
        }
    }
}
