//! Retrieval metrics: nearest neighbour, first and second tier, average
//! precision, and 11-point interpolated precision-recall curves.
//!
//! AUC is the trapezoidal area under the mean 11-point interpolated PR
//! curve.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PR_POINTS: usize = 11;

pub const AUC_DEFINITION: &str =
    "trapezoidal area under the mean 11-point interpolated precision-recall curve";

/// A query's ranking over every other database shape, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRanking {
    pub query_id: String,
    pub query_label: String,
    /// `(shape id, class label)`, query excluded.
    pub items: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub nn: f64,
    pub ft: f64,
    pub st: f64,
    pub ap: f64,
    /// Interpolated precision at recall 0, 0.1, ..., 1.
    pub pr: [f64; PR_POINTS],
}

/// Unevaluated sum `hi + lo`, so that AP is correctly rounded for the
/// rankings that matter in practice.
#[derive(Debug, Default, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (x - bb);
        self.hi = s;
        self.lo += err;
    }

    /// Adds `a / b` including the rounding error of the quotient.
    fn add_ratio(&mut self, a: f64, b: f64) {
        let q = a / b;
        let r = (-q).mul_add(b, a);
        self.add(q);
        self.lo += r / b;
    }

    fn div(self, d: f64) -> f64 {
        let q = self.hi / d;
        let r = (-q).mul_add(d, self.hi) + self.lo;
        q + r / d
    }
}

/// Scores one ranking. `class_size` counts the query itself, so the number
/// of relevant items is `class_size - 1`.
pub fn score_ranking(r: &LabeledRanking, class_size: usize) -> Result<QueryMetrics> {
    if class_size < 2 {
        return Err(Error::SingletonClass);
    }
    let relevant = (class_size - 1) as f64;
    let tier = class_size - 1;
    let mut hits = 0usize;
    let (mut ft_hits, mut st_hits) = (0usize, 0usize);
    let mut ap = DoubleDouble::default();
    let mut points = Vec::new();
    for (k, (_, label)) in r.items.iter().enumerate() {
        if *label != r.query_label {
            continue;
        }
        hits += 1;
        if k < tier {
            ft_hits += 1;
        }
        if k < 2 * tier {
            st_hits += 1;
        }
        let precision = hits as f64 / (k + 1) as f64;
        ap.add_ratio(hits as f64, (k + 1) as f64);
        points.push((hits as f64 / relevant, precision));
    }
    let nn = match r.items.first() {
        Some((_, l)) if *l == r.query_label => 1.0,
        _ => 0.0,
    };
    let mut pr = [0.0; PR_POINTS];
    for (l, slot) in pr.iter_mut().enumerate() {
        let level = l as f64 / (PR_POINTS - 1) as f64;
        *slot = points
            .iter()
            .filter(|p| p.0 >= level - 1e-12)
            .map(|p| p.1)
            .fold(0.0, f64::max);
    }
    Ok(QueryMetrics {
        nn,
        ft: ft_hits as f64 / relevant,
        st: st_hits as f64 / relevant,
        ap: ap.div(relevant),
        pr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    /// Queries dropped because their class has no other member.
    pub skipped: usize,
    pub nn: f64,
    pub ft: f64,
    pub st: f64,
    pub map: f64,
    pub auc: f64,
    pub auc_definition: String,
    /// `(recall, mean interpolated precision)`.
    pub pr_curve: Vec<(f64, f64)>,
}

/// Averages per-query metrics.
pub fn aggregate_report(metrics: &[QueryMetrics], skipped: usize) -> Result<EvalReport> {
    if metrics.is_empty() {
        return Err(Error::NoValidQueries);
    }
    let n = metrics.len() as f64;
    let mean = |f: fn(&QueryMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    let mut curve = [0.0; PR_POINTS];
    for m in metrics {
        for (c, p) in curve.iter_mut().zip(m.pr) {
            *c += p;
        }
    }
    curve.iter_mut().for_each(|c| *c /= n);
    let step = 1.0 / (PR_POINTS - 1) as f64;
    let auc = curve.windows(2).map(|w| step * 0.5 * (w[0] + w[1])).sum();
    Ok(EvalReport {
        queries: metrics.len(),
        skipped,
        nn: mean(|m| m.nn),
        ft: mean(|m| m.ft),
        st: mean(|m| m.st),
        map: mean(|m| m.ap),
        auc,
        auc_definition: AUC_DEFINITION.to_owned(),
        pr_curve: curve
            .iter()
            .enumerate()
            .map(|(i, &p)| (i as f64 * step, p))
            .collect(),
    })
}

/// Database ordinals sorted by score descending, ties by shape id, with
/// `exclude` removed.
pub fn rank_by_scores(scores: &[f64], ids: &[String], exclude: Option<usize>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| Some(i) != exclude).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order
}

/// Evaluates a full score matrix: `score_row(q)` is query `q`'s score
/// against every database shape. Every shape is taken in turn as the query.
pub fn evaluate<F>(ids: &[String], labels: &[String], score_row: F) -> Result<EvalReport>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    let mut class_size = std::collections::HashMap::new();
    for l in labels {
        *class_size.entry(l.as_str()).or_insert(0usize) += 1;
    }
    let per_query = crate::par::map_range(ids.len(), |q| -> Result<Option<QueryMetrics>> {
        let scores = score_row(q)?;
        let order = rank_by_scores(&scores, ids, Some(q));
        let ranking = LabeledRanking {
            query_id: ids[q].clone(),
            query_label: labels[q].clone(),
            items: order
                .into_iter()
                .map(|i| (ids[i].clone(), labels[i].clone()))
                .collect(),
        };
        match score_ranking(&ranking, class_size[labels[q].as_str()]) {
            Ok(m) => Ok(Some(m)),
            Err(Error::SingletonClass) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut metrics = Vec::with_capacity(ids.len());
    let mut skipped = 0;
    for m in per_query {
        match m? {
            Some(m) => metrics.push(m),
            None => skipped += 1,
        }
    }
    aggregate_report(&metrics, skipped)
}

/// PR samples as `recall,precision` CSV rows under a header.
pub fn pr_curve_csv(curves: &[(&str, &EvalReport)]) -> String {
    let mut s = String::from("series,recall,precision\n");
    for (name, r) in curves {
        for (rec, prec) in &r.pr_curve {
            let _ = writeln!(s, "{name},{rec:.1},{prec:.6}");
        }
    }
    s
}

/// Minimal SVG line plot of one or more PR curves.
pub fn pr_curve_svg(curves: &[(&str, &EvalReport)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 40.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
    ];
    let x = |r: f64| M + r * (W - 2.0 * M);
    let y = |p: f64| H - M - p * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Recall</text>"#,
        W / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">Precision</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, (name, r)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = r
            .pr_curve
            .iter()
            .map(|&(rc, p)| format!("{:.1},{:.1}", x(rc), y(p)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            W - M - 140.0,
            M + 16.0 + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ranking(pattern: &str) -> LabeledRanking {
        LabeledRanking {
            query_id: "q".into(),
            query_label: "R".into(),
            items: pattern
                .chars()
                .enumerate()
                .map(|(i, c)| (format!("s{i}"), c.to_string()))
                .collect(),
        }
    }

    #[test]
    fn perfect_ranking() {
        let m = score_ranking(&ranking("RRRIII"), 4).unwrap();
        assert_eq!((m.nn, m.ft, m.st, m.ap), (1.0, 1.0, 1.0, 1.0));
        assert!(m.pr.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn worst_ranking() {
        let m = score_ranking(&ranking("IIIRRR"), 4).unwrap();
        assert_eq!(m.nn, 0.0);
        assert_eq!(m.ft, 0.0);
        assert_eq!(m.st, 1.0);
    }

    #[test]
    fn hand_computed_ap() {
        let m = score_ranking(&ranking("RIRIII"), 3).unwrap();
        assert_eq!(m.ft, 0.5);
        assert_eq!(m.st, 1.0);
        assert_eq!(m.ap, 5.0 / 6.0);
        assert_eq!(m.pr[5], 1.0);
        assert_eq!(m.pr[6], 2.0 / 3.0);
    }

    #[test]
    fn singleton_class() {
        assert!(matches!(
            score_ranking(&ranking("IIIIII"), 1),
            Err(Error::SingletonClass)
        ));
        assert!(matches!(
            aggregate_report(&[], 3),
            Err(Error::NoValidQueries)
        ));
    }

    #[test]
    fn reversed_perfect_ranking() {
        let mut r = ranking("RRIIII");
        r.items.reverse();
        let m = score_ranking(&r, 3).unwrap();
        assert_eq!(m.nn, 0.0);
    }

    #[test]
    fn report_means() {
        let one = score_ranking(&ranking("RRIIII"), 3).unwrap();
        let rep = aggregate_report(&[one], 0).unwrap();
        assert_eq!(
            (rep.nn, rep.ft, rep.st, rep.map),
            (one.nn, one.ft, one.st, one.ap)
        );
        assert!((rep.auc - 1.0).abs() < 1e-12);

        let half = score_ranking(&ranking("IRIIII"), 2).unwrap();
        assert_eq!(half.ap, 0.5);
        let rep = aggregate_report(&[one, half], 1).unwrap();
        assert_eq!(rep.map, 0.75);
        assert_eq!(rep.skipped, 1);
        assert!(rep.pr_curve.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn ties_broken_by_id_and_rank_only() {
        let ids: Vec<String> = ["b", "a", "c", "d"].iter().map(|s| s.to_string()).collect();
        let scores = [0.5, 0.5, 0.9, 0.1];
        assert_eq!(rank_by_scores(&scores, &ids, None), vec![2, 1, 0, 3]);
        assert_eq!(rank_by_scores(&scores, &ids, Some(2)), vec![1, 0, 3]);
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        assert_eq!(
            rank_by_scores(&warped, &ids, None),
            rank_by_scores(&scores, &ids, None)
        );
    }

    /// Naive AP: precision at every rank, summed where the item is relevant.
    fn naive_ap(rel: &[bool], total_relevant: usize) -> f64 {
        let mut sum = 0.0;
        for k in 0..rel.len() {
            if rel[k] {
                let hits = rel[..=k].iter().filter(|&&x| x).count();
                sum += hits as f64 / (k + 1) as f64;
            }
        }
        sum / total_relevant as f64
    }

    #[test]
    fn map_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let n = 30;
            let ids: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
            let labels: Vec<String> = (0..n)
                .map(|_| format!("c{}", rng.gen_range(0..4)))
                .collect();
            let matrix: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen()).collect())
                .collect();
            let rep = evaluate(&ids, &labels, |q| Ok(matrix[q].clone())).unwrap();

            let mut aps = Vec::new();
            for q in 0..n {
                let size = labels.iter().filter(|l| **l == labels[q]).count();
                if size < 2 {
                    continue;
                }
                let mut order: Vec<usize> = (0..n).filter(|&i| i != q).collect();
                order.sort_by(|&a, &b| matrix[q][b].partial_cmp(&matrix[q][a]).unwrap());
                let rel: Vec<bool> = order.iter().map(|&i| labels[i] == labels[q]).collect();
                aps.push(naive_ap(&rel, size - 1));
            }
            let want = aps.iter().sum::<f64>() / aps.len() as f64;
            assert!((rep.map - want).abs() < 1e-12);
            assert!(rep.ft <= rep.st);
        }
    }

    #[test]
    fn csv_and_svg_render() {
        let m = score_ranking(&ranking("RIRIII"), 3).unwrap();
        let rep = aggregate_report(&[m], 0).unwrap();
        let csv = pr_curve_csv(&[("gift", &rep)]);
        assert_eq!(csv.lines().count(), 12);
        assert!(csv.starts_with("series,recall,precision\ngift,0.0,1.000000"));
        let svg = pr_curve_svg(&[("gift", &rep), ("base", &rep)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
