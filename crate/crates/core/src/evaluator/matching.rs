use serde::{Deserialize, Serialize};

/// Result of matching one prediction at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MatchOutcome {
    /// Counted as a true positive against GT column `gt`.
    Matched {
        gt: usize,
        similarity: f64,
    },
    /// Matched an ignore/crowd GT; excluded from precision/recall accounting.
    MatchedIgnored {
        gt: usize,
        similarity: f64,
    },
    FalsePositive,
}

impl MatchOutcome {
    pub fn gt(&self) -> Option<usize> {
        match *self {
            MatchOutcome::Matched { gt, .. } | MatchOutcome::MatchedIgnored { gt, .. } => Some(gt),
            MatchOutcome::FalsePositive => None,
        }
    }
}

/// Greedy assignment for one image at one threshold.
///
/// `similarity[d][g]` rows must already be in descending score order (ties in
/// input order). Each prediction takes the still-free non-ignored GT of
/// highest similarity at or above `threshold`; only when none qualifies may it
/// fall onto an ignored GT. Crowd GTs can absorb any number of predictions.
/// Equal similarities resolve to the later GT column, as the reference
/// evaluator does.
pub fn match_greedy(
    similarity: &[Vec<f64>],
    gt_ignore: &[bool],
    gt_crowd: &[bool],
    threshold: f64,
) -> Vec<MatchOutcome> {
    let n_gt = gt_ignore.len();
    // non-ignored GTs first, stable
    let mut order: Vec<usize> = (0..n_gt).collect();
    order.sort_by_key(|&g| gt_ignore[g]);
    let mut gt_taken = vec![false; n_gt];
    let mut out = Vec::with_capacity(similarity.len());
    for row in similarity {
        let mut best = threshold.min(1.0 - 1e-10);
        let mut m: Option<usize> = None;
        for &g in &order {
            if gt_taken[g] && !gt_crowd[g] {
                continue;
            }
            if let Some(cur) = m {
                if !gt_ignore[cur] && gt_ignore[g] {
                    break;
                }
            }
            if row[g] < best {
                continue;
            }
            best = row[g];
            m = Some(g);
        }
        out.push(match m {
            None => MatchOutcome::FalsePositive,
            Some(g) => {
                gt_taken[g] = true;
                if gt_ignore[g] {
                    MatchOutcome::MatchedIgnored { gt: g, similarity: row[g] }
                } else {
                    MatchOutcome::Matched { gt: g, similarity: row[g] }
                }
            }
        });
    }
    out
}
