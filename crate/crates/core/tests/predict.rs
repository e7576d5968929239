mod common;

use common::*;
use credgraph::graph::{EdgeId, NodeId};
use credgraph::predict::{
    candidate_lists, classification_metrics, classify, edge_probability, f1_score, mse, ndcg_at_k, precision_at_k,
    ranking_metrics, risk_scores, tune_threshold, Candidate, EdgeHead, Prediction, RiskReport, Truth,
};
use ndgrad::{ParamSet, Tape};
use proptest::prelude::*;

fn pred(edge: u32, u: u32, v: u32, p_hat: f64, label: bool, rate: f64) -> Prediction {
    Prediction {
        edge: EdgeId(edge),
        u: NodeId(u),
        v: NodeId(v),
        p_hat,
        decision: classify(p_hat, 0.5),
        truth: Some(Truth {
            label,
            reuse_rate: rate,
        }),
    }
}

fn cand(edge: u32, p_hat: f64, relevance: f64) -> Candidate {
    Candidate {
        edge: EdgeId(edge),
        p_hat,
        positive: relevance > 0.5,
        relevance,
    }
}

#[test]
fn headline_f1() {
    assert!((f1_score(0.9425, 0.8896) - 0.9153).abs() <= 0.0005);
    assert_eq!(f1_score(0.0, 0.0), 0.0);
}

#[test]
fn classification_examples() {
    let perfect: Vec<Prediction> = (0..6)
        .map(|i| pred(i, 0, i + 1, if i % 2 == 0 { 0.9 } else { 0.1 }, i % 2 == 0, 0.5))
        .collect();
    let m = classification_metrics(&perfect);
    assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

    let all_pos: Vec<Prediction> = (0..10).map(|i| pred(i, 0, i + 1, 0.8, i < 5, 0.5)).collect();
    let m = classification_metrics(&all_pos);
    assert_eq!((m.precision, m.recall), (0.5, 1.0));
    assert_eq!((m.tp, m.fp, m.fn_, m.tn), (5, 5, 0, 0));
}

#[test]
fn decision_boundary() {
    assert!(classify(0.5, 0.5));
    assert!(!classify(0.49, 0.5));
}

#[test]
fn risk_examples() {
    let exact = vec![pred(0, 0, 1, 0.3, false, 0.3), pred(1, 1, 2, 0.7, true, 0.7)];
    assert_eq!(mse(&exact), Some(0.0));
    let rates = [0.1, 0.4, 0.9, 0.65];
    let constant: Vec<Prediction> = rates
        .iter()
        .enumerate()
        .map(|(i, &r)| pred(i as u32, 0, i as u32 + 1, 0.5, r > 0.5, r))
        .collect();
    let want = rates.iter().map(|r| (r - 0.5f64).powi(2)).sum::<f64>() / 4.0;
    assert!((mse(&constant).unwrap() - want).abs() < 1e-15);

    let node = vec![pred(0, 3, 4, 0.2, false, 0.1), pred(1, 3, 5, 0.8, true, 0.9)];
    let scores = risk_scores(&node);
    assert_eq!(scores[0], (NodeId(3), 0.5));
    assert_eq!(scores[1], (NodeId(4), 0.2));
    assert_eq!(mse(&[]), None);
}

#[test]
fn ranking_examples() {
    let perfect = vec![cand(0, 0.9, 0.8), cand(1, 0.7, 0.6), cand(2, 0.2, 0.1)];
    for k in 1..=3 {
        assert!((ndcg_at_k(&perfect, k).unwrap() - 1.0).abs() < 1e-15);
    }
    assert_eq!(precision_at_k(&perfect, 1).unwrap(), 1.0);
    assert!(precision_at_k(&perfect, 4).is_err());
    assert!(ndcg_at_k(&perfect, 0).is_err());
    // p_hat ties resolve by edge id.
    let tied = vec![cand(5, 0.5, 0.9), cand(2, 0.5, 0.1)];
    assert_eq!(precision_at_k(&tied, 1).unwrap(), 0.0);
}

/// Order by p_hat descending, ties by ascending edge id, by repeated selection.
fn predicted_order(c: &[Candidate]) -> Vec<Candidate> {
    let mut left = c.to_vec();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for (i, x) in left.iter().enumerate() {
            let b = &left[best];
            if x.p_hat > b.p_hat || (x.p_hat == b.p_hat && x.edge < b.edge) {
                best = i;
            }
        }
        out.push(left.remove(best));
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn dcg(rel: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, r) in rel.iter().enumerate() {
        s += r / ((i + 2) as f64).log2();
    }
    s
}

fn brute_force(c: &[Candidate], k: usize) -> (f64, f64) {
    let order = predicted_order(c);
    let hits = order[..k].iter().filter(|x| x.positive).count();
    let got: Vec<f64> = order[..k].iter().map(|x| x.relevance).collect();
    let ideal = permutations(c.len())
        .into_iter()
        .map(|p| dcg(&p[..k].iter().map(|&i| c[i].relevance).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    let ndcg = if ideal == 0.0 { 1.0 } else { dcg(&got) / ideal };
    (hits as f64 / k as f64, ndcg)
}

#[test]
fn five_candidates_match_all_permutations() {
    let mut r = rng(5);
    for _ in 0..20 {
        let c: Vec<Candidate> = (0..5)
            .map(|i| cand(i, rand_vec(&mut r, 1)[0].abs(), rand_vec(&mut r, 1)[0].abs()))
            .collect();
        assert_eq!(permutations(5).len(), 120);
        for k in 1..=5 {
            let (p, n) = brute_force(&c, k);
            assert_eq!(precision_at_k(&c, k).unwrap(), p);
            assert_eq!(ndcg_at_k(&c, k).unwrap(), n);
        }
    }
}

#[test]
fn ranking_averages_over_lists() {
    let a = vec![cand(0, 0.9, 0.9), cand(1, 0.1, 0.2)];
    let b = vec![cand(2, 0.1, 0.9), cand(3, 0.9, 0.2)];
    let rows = ranking_metrics(&[a.clone(), b.clone()], &[1, 2]).unwrap();
    assert_eq!(rows[0].k, 1);
    assert_eq!(rows[0].precision_at_k, 0.5);
    let want = (ndcg_at_k(&a, 1).unwrap() + ndcg_at_k(&b, 1).unwrap()) / 2.0;
    assert_eq!(rows[0].ndcg_at_k, want);
    assert!(ranking_metrics(&[], &[1]).is_err());
    assert!(ranking_metrics(&[a], &[3]).is_err());
}

#[test]
fn candidate_lists_group_and_sample() {
    let preds: Vec<Prediction> = (0..10)
        .map(|i| pred(i, 0, i + 1, 0.1 * i as f64, i % 2 == 0, 0.05 * i as f64))
        .collect();
    let lists = candidate_lists(&preds, 64, 1, 0).unwrap();
    assert_eq!(lists.len(), 11);
    assert_eq!(lists[0].len(), 10);
    assert!(lists[1..].iter().all(|l| l.len() == 1));

    let hub_only = candidate_lists(&preds, 4, 2, 0).unwrap();
    assert_eq!(hub_only.len(), 1);
    assert_eq!(hub_only[0].len(), 4);
    assert!(hub_only[0].windows(2).all(|w| w[0].edge < w[1].edge));
    assert_eq!(hub_only, candidate_lists(&preds, 4, 2, 0).unwrap());

    assert!(candidate_lists(&preds, 4, 5, 0).is_err());
    assert!(candidate_lists(&preds, 64, 11, 0).is_err());
    assert!(candidate_lists(&preds, 64, 0, 0).is_err());
}

#[test]
fn threshold_tuning_finds_separating_cut() {
    let preds: Vec<Prediction> = (0..20)
        .map(|i| {
            let p = 0.05 + 0.01 * i as f64 + if i >= 10 { 0.3 } else { 0.0 };
            pred(i, 0, i + 1, p, i >= 10, 0.5)
        })
        .collect();
    let tau = tune_threshold(&preds);
    let relabeled: Vec<Prediction> = preds
        .iter()
        .map(|p| Prediction {
            decision: classify(p.p_hat, tau),
            ..*p
        })
        .collect();
    assert_eq!(classification_metrics(&relabeled).f1, 1.0);
    assert!((tau - 0.15).abs() < 1e-9, "{tau}");
}

fn sample_report() -> RiskReport {
    let preds = vec![
        pred(0, 0, 1, 0.8125, true, 0.7),
        pred(1, 0, 2, 0.25, false, 0.1),
        pred(2, 1, 2, 0.6, false, 0.45),
        Prediction {
            truth: None,
            ..pred(3, 2, 3, 0.3, false, 0.0)
        },
    ];
    let ranking = ranking_metrics(&candidate_lists(&preds, 64, 2, 0).unwrap(), &[1, 2]).unwrap();
    RiskReport::new(serde_json::json!({"seed": 0}), &preds, ranking)
}

#[test]
fn report_json_and_csv_agree() {
    let report = sample_report();
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    for key in ["config", "metrics", "ranking", "nodes", "edges"] {
        assert!(json.get(key).is_some(), "{key}");
    }

    let read = |name: &str| {
        let mut r = csv::Reader::from_path(dir.path().join(name)).unwrap();
        let headers: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
        let rows: Vec<Vec<String>> = r
            .records()
            .map(|x| x.unwrap().iter().map(String::from).collect())
            .collect();
        (headers, rows)
    };
    let num = |s: &str| s.parse::<f64>().unwrap();

    let (h, rows) = read("metrics.csv");
    for (i, name) in h.iter().enumerate() {
        assert_eq!(num(&rows[0][i]), json["metrics"][name].as_f64().unwrap(), "{name}");
    }
    let (h, rows) = read("ranking.csv");
    assert_eq!(rows.len(), 2);
    for (r, row) in rows.iter().enumerate() {
        for (i, name) in h.iter().enumerate() {
            assert_eq!(num(&row[i]), json["ranking"][r][name].as_f64().unwrap());
        }
    }
    let (_, rows) = read("nodes.csv");
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(num(&row[0]), json["nodes"][r]["node_id"].as_f64().unwrap());
        assert_eq!(num(&row[1]), json["nodes"][r]["risk_score"].as_f64().unwrap());
    }
    let (h, rows) = read("edges.csv");
    assert_eq!(h, ["u", "v", "p_hat", "decision", "label", "reuse_rate"]);
    for (r, row) in rows.iter().enumerate() {
        let e = &json["edges"][r];
        assert_eq!(num(&row[2]), e["p_hat"].as_f64().unwrap());
        assert_eq!(row[3] == "1", e["decision"].as_bool().unwrap());
        match e.get("truth") {
            Some(t) => {
                assert_eq!(row[4] == "1", t["label"].as_bool().unwrap());
                assert_eq!(num(&row[5]), t["reuse_rate"].as_f64().unwrap());
            }
            None => assert!(row[4].is_empty() && row[5].is_empty()),
        }
    }
}

#[test]
fn report_re_emission_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    sample_report().write(a.path()).unwrap();
    sample_report().write(b.path()).unwrap();
    for name in ["report.json", "metrics.csv", "ranking.csv", "nodes.csv", "edges.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
    let parsed: RiskReport = serde_json::from_slice(&sample_report().to_json().unwrap()).unwrap();
    assert_eq!(parsed.to_json().unwrap(), sample_report().to_json().unwrap());
}

#[test]
fn empty_report_is_valid() {
    let report = RiskReport::new(serde_json::json!({}), &[], Vec::new());
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["edges"].as_array().unwrap().len(), 0);
    assert_eq!(json["nodes"].as_array().unwrap().len(), 0);
    assert!(json["metrics"]["mse"].is_null());
}

#[test]
fn tape_probabilities_match_the_scalar_path() {
    let mut params = ParamSet::new();
    let head = EdgeHead::register(3, &mut params, &mut rng(9)).unwrap();
    let h = rand_mat(&mut rng(10), 4, 3);
    let pairs = [(0, 1), (2, 3), (3, 0), (1, 1)];
    let mut tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|e| tape.constant(e.value.clone()).unwrap()).collect();
    let hv = tape.constant(tensor(&h)).unwrap();
    let p = head.probabilities(&mut tape, &vars, hv, &pairs, 0.2).unwrap();
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let want = edge_probability(&h[a], &h[b], &params, 0.2).unwrap();
        assert!((tape.value(p).data()[i] - want).abs() < 1e-12);
    }
}

fn candidates() -> impl Strategy<Value = Vec<Candidate>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>()), 1..7).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (p, r, tie))| Candidate {
                edge: EdgeId(i as u32 * 3 % 7),
                // Coarse scores so ties in p_hat occur often.
                p_hat: if tie { (p * 4.0).round() / 4.0 } else { p },
                positive: r > 0.5,
                relevance: r,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn small_lists_equal_brute_force(c in candidates()) {
        let mut ids: Vec<u32> = c.iter().map(|x| x.edge.0).collect();
        ids.sort();
        ids.dedup();
        prop_assume!(ids.len() == c.len());
        for k in 1..=c.len() {
            let (p, n) = brute_force(&c, k);
            prop_assert_eq!(precision_at_k(&c, k).unwrap(), p);
            prop_assert_eq!(ndcg_at_k(&c, k).unwrap(), n);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        }
    }

    #[test]
    fn ideal_order_scores_one(rel in prop::collection::vec(0.01f64..1.0, 1..7)) {
        let c: Vec<Candidate> = rel.iter().enumerate().map(|(i, &r)| cand(i as u32, r, r)).collect();
        for k in 1..=c.len() {
            prop_assert!((ndcg_at_k(&c, k).unwrap() - 1.0).abs() < 1e-12);
        }
        if c.len() >= 2 {
            // Reversing a strictly ordered list is no longer ideal at full depth.
            let mut sorted = rel.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            sorted.dedup();
            prop_assume!(sorted.len() == rel.len());
            let rev: Vec<Candidate> = rel.iter().enumerate().map(|(i, &r)| cand(i as u32, 1.0 - r, r)).collect();
            prop_assert!(ndcg_at_k(&rev, rev.len()).unwrap() < 1.0);
        }
    }

    #[test]
    fn metric_bounds(rows in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..40), tau in 0.01f64..0.99) {
        let preds: Vec<Prediction> = rows
            .iter()
            .enumerate()
            .map(|(i, &(p, l))| Prediction { decision: classify(p, tau), ..pred(i as u32, 0, i as u32 + 1, p, l, 0.5) })
            .collect();
        let m = classification_metrics(&preds);
        for x in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        let lo = m.precision.min(m.recall);
        prop_assert!(m.f1 <= 2.0 * lo / (1.0 + lo) + 1e-12);
    }

    #[test]
    fn raising_tau_never_adds_positives(ps in prop::collection::vec(0.0f64..1.0, 1..30)) {
        let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let mut last = usize::MAX;
        for w in grid.windows(2) {
            for &p in &ps {
                prop_assert!(!(classify(p, w[1]) && !classify(p, w[0])));
            }
            let count = ps.iter().filter(|&&p| classify(p, w[0])).count();
            prop_assert!(count <= last);
            last = count;
        }
    }

    #[test]
    fn edge_probability_is_symmetric(seed in 0u64..100_000, d in 1usize..6) {
        let mut params = ParamSet::new();
        EdgeHead::register(d, &mut params, &mut rng(seed)).unwrap();
        let mut r = rng(seed + 1);
        let (a, b) = (rand_vec(&mut r, d), rand_vec(&mut r, d));
        let p = edge_probability(&a, &b, &params, 0.2).unwrap();
        prop_assert_eq!(p, edge_probability(&b, &a, &params, 0.2).unwrap());
        prop_assert!(p > 0.0 && p < 1.0);
    }
}
