//! Summary evaluation: ROUGE recall, word mover's distance, VERT, the
//! reference holdout baseline and Pearson correlation.

mod rouge;
mod stats;
pub mod transport;
mod vert;

pub use rouge::{lcs_len, lcs_recall, ngram_recall, rouge_multi, RougeResult};
pub use stats::{correlation_p_value, ln_gamma, pearson, reg_inc_beta, Correlation};
pub use transport::{transport_solve, TransportPlan};
pub use vert::{
    dis_subscore, holdout_stats, nbow, sim_subscore, vert_combine, vert_score, wmd, wmd_bin, HoldoutStats, Nbow,
    VertConfig, VertResult, DEFAULT_ALPHA, HOLDOUT_BINS,
};

use thiserror::Error;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::embeddings::EmbedError;
use crate::textproc::preprocess;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no reference summaries")]
    NoReferences,
    #[error("unbalanced masses: supply {supply} vs demand {demand}")]
    Unbalanced { supply: f64, demand: f64 },
    #[error("transport: {0}")]
    Transport(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Default byte budget for scored summaries.
pub const BYTE_CAP: usize = 75;

/// Tokens used for scoring: normalized, tokenized, with pure punctuation
/// tokens dropped. `#` counts as a word character since digits become `#`.
pub fn scoring_tokens(text: &str) -> Vec<String> {
    preprocess(text)
        .into_iter()
        .filter(|t| {
            !t.chars().all(|c| c != '#' && c.general_category_group() == GeneralCategoryGroup::Punctuation)
        })
        .collect()
}

/// One scored example.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub rouge: RougeResult,
    pub vert: VertResult,
}

pub const REPORT_HEADER: &str = "id\tr1\tr2\trl\tsim\tdis\tvert";

/// Header, one line per row, and a final `mean` line, 6 decimals throughout.
pub fn score_report(rows: &[ScoreRow]) -> String {
    let line = |id: &str, r: &RougeResult, v: &VertResult| {
        format!("{id}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n", r.r1, r.r2, r.rl, v.sim, v.dis, v.vert)
    };
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    let mut sum_r = RougeResult::default();
    let mut sum_v = VertResult::default();
    for row in rows {
        out.push_str(&line(&row.id, &row.rouge, &row.vert));
        sum_r.r1 += row.rouge.r1;
        sum_r.r2 += row.rouge.r2;
        sum_r.rl += row.rouge.rl;
        sum_v.sim += row.vert.sim;
        sum_v.dis += row.vert.dis;
        sum_v.vert += row.vert.vert;
    }
    let k = rows.len().max(1) as f64;
    let mean_r = RougeResult { r1: sum_r.r1 / k, r2: sum_r.r2 / k, rl: sum_r.rl / k };
    let mean_v = VertResult { sim: sum_v.sim / k, dis: sum_v.dis / k, vert: sum_v.vert / k };
    out.push_str(&line("mean", &mean_r, &mean_v));
    out
}
