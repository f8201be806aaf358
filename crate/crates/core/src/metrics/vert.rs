use std::collections::BTreeMap;

use super::transport::transport_solve;
use super::MetricError;
use crate::embeddings::{cosine, SentenceEncoder, WordVectorStore};
use crate::textproc::Stopwords;

pub const DEFAULT_ALPHA: f64 = 5.0;

/// Everything VERT needs besides the two sentences.
#[derive(Clone, Copy)]
pub struct VertConfig<'a> {
    pub alpha: f64,
    pub stopwords: &'a Stopwords,
    /// Ground space for the word mover's distance.
    pub words: &'a WordVectorStore,
    pub encoder: &'a dyn SentenceEncoder,
}

impl VertConfig<'_> {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(MetricError::Invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VertResult {
    pub sim: f64,
    pub dis: f64,
    pub vert: f64,
}

/// Normalized bag of words: distinct content words in sorted order with
/// relative-frequency weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Nbow {
    pub words: Vec<String>,
    pub weights: Vec<f64>,
}

/// Drops stopwords and tokens missing from `store`; `None` when nothing is left.
pub fn nbow<S: AsRef<str>>(tokens: &[S], stopwords: &Stopwords, store: &WordVectorStore) -> Option<Nbow> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tokens {
        let t = t.as_ref();
        if !stopwords.contains(t) && store.contains(t) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return None;
    }
    let (words, weights) = counts.into_iter().map(|(w, c)| (w.to_string(), c as f64 / total as f64)).unzip();
    Some(Nbow { words, weights })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Word mover's distance, or `alpha` when either side has no content word
/// in the store.
pub fn wmd<S: AsRef<str>, T: AsRef<str>>(s1: &[S], s2: &[T], cfg: &VertConfig) -> Result<f64, MetricError> {
    let (Some(a), Some(b)) = (nbow(s1, cfg.stopwords, cfg.words), nbow(s2, cfg.stopwords, cfg.words)) else {
        return Ok(cfg.alpha);
    };
    let vec = |w: &str| cfg.words.get(w).expect("nbow keeps in-store words only");
    let mut cost = Vec::with_capacity(a.words.len() * b.words.len());
    for wa in &a.words {
        for wb in &b.words {
            cost.push(if wa == wb { 0.0 } else { euclid(vec(wa), vec(wb)) });
        }
    }
    Ok(transport_solve(&a.weights, &b.weights, &cost)?.objective)
}

pub fn dis_subscore<S: AsRef<str>, T: AsRef<str>>(s1: &[S], s2: &[T], cfg: &VertConfig) -> Result<f64, MetricError> {
    Ok(wmd(s1, s2, cfg)?.min(cfg.alpha))
}

/// Cosine of the encoded sentences, clamped to `[0, 1]`.
pub fn sim_subscore<S: AsRef<str>, T: AsRef<str>>(s1: &[S], s2: &[T], cfg: &VertConfig) -> Result<f64, MetricError> {
    let u = cfg.encoder.encode(&own_slice(s1))?;
    let v = cfg.encoder.encode(&own_slice(s2))?;
    Ok(cosine(&u, &v)?.clamp(0.0, 1.0))
}

fn own_slice<S: AsRef<str>>(s: &[S]) -> Vec<String> {
    s.iter().map(|t| t.as_ref().to_string()).collect()
}

/// `(1 + sim - dis / alpha) / 2`.
pub fn vert_combine(sim: f64, dis: f64, alpha: f64) -> Result<f64, MetricError> {
    if !(alpha > 0.0) {
        return Err(MetricError::Invalid(format!("alpha must be positive, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&sim) {
        return Err(MetricError::Invalid(format!("sim {sim} outside [0, 1]")));
    }
    if !(0.0..=alpha).contains(&dis) {
        return Err(MetricError::Invalid(format!("dis {dis} outside [0, {alpha}]")));
    }
    Ok(0.5 * (1.0 + (sim - dis / alpha)))
}

/// Mean over references of the per-reference sub-scores and VERT.
pub fn vert_score<S: AsRef<str>, T: AsRef<str>>(
    hyp: &[S],
    refs: &[Vec<T>],
    cfg: &VertConfig,
) -> Result<VertResult, MetricError> {
    cfg.validate()?;
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let mut acc = VertResult::default();
    for r in refs {
        let one = vert_single(hyp, r, cfg)?;
        acc.sim += one.sim;
        acc.dis += one.dis;
        acc.vert += one.vert;
    }
    let k = refs.len() as f64;
    Ok(VertResult { sim: acc.sim / k, dis: acc.dis / k, vert: acc.vert / k })
}

fn vert_single<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], r: &[T], cfg: &VertConfig) -> Result<VertResult, MetricError> {
    let sim = sim_subscore(hyp, r, cfg)?;
    let dis = dis_subscore(hyp, r, cfg)?;
    Ok(VertResult { sim, dis, vert: vert_combine(sim, dis, cfg.alpha)? })
}

/// Raw-WMD histogram edges: `[0,1) [1,2) [2,3) [3,4) [4,5) [5,inf)`.
pub const HOLDOUT_BINS: usize = 6;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HoldoutStats {
    pub wmd_bins: [usize; HOLDOUT_BINS],
    pub mean_wmd: f64,
    pub mean_sim: f64,
    pub mean_dis: f64,
    pub mean_vert: f64,
    pub comparisons: usize,
}

pub fn wmd_bin(w: f64) -> usize {
    (w.max(0.0).floor() as usize).min(HOLDOUT_BINS - 1)
}

/// Holds out each reference of each document as the target and scores
/// every other reference of that document against it.
pub fn holdout_stats<S: AsRef<str>>(docs: &[Vec<Vec<S>>], cfg: &VertConfig) -> Result<HoldoutStats, MetricError> {
    cfg.validate()?;
    let mut st = HoldoutStats::default();
    for (d, refs) in docs.iter().enumerate() {
        if refs.len() < 2 {
            return Err(MetricError::Invalid(format!("document {d} has {} references, need 2", refs.len())));
        }
        for (t, target) in refs.iter().enumerate() {
            for (o, other) in refs.iter().enumerate() {
                if o == t {
                    continue;
                }
                let w = wmd(other, target, cfg)?;
                let sim = sim_subscore(other, target, cfg)?;
                let dis = w.min(cfg.alpha);
                st.wmd_bins[wmd_bin(w)] += 1;
                st.mean_wmd += w;
                st.mean_sim += sim;
                st.mean_dis += dis;
                st.mean_vert += vert_combine(sim, dis, cfg.alpha)?;
                st.comparisons += 1;
            }
        }
    }
    if st.comparisons > 0 {
        let k = st.comparisons as f64;
        st.mean_wmd /= k;
        st.mean_sim /= k;
        st.mean_dis /= k;
        st.mean_vert /= k;
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::MeanSentenceEncoder;
    use crate::metrics::transport::tests::brute_force;
    use crate::numeric::Rng;
    use std::collections::HashMap;

    fn store(entries: &[(&str, Vec<f64>)]) -> WordVectorStore {
        let map: HashMap<String, Vec<f64>> = entries.iter().map(|(t, v)| (t.to_string(), v.clone())).collect();
        WordVectorStore::from_map(entries[0].1.len(), map).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn nbow_weights() {
        let sw = Stopwords::parse("the\n");
        let st = store(&[("cat", vec![1.0]), ("dog", vec![2.0]), ("the", vec![0.0])]);
        let b = nbow(&toks("the cat the cat dog"), &sw, &st).unwrap();
        assert_eq!(b.words, vec!["cat", "dog"]);
        assert!((b.weights[0] - 2.0 / 3.0).abs() < 1e-15 && (b.weights[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(nbow(&toks("the the"), &sw, &st).is_none());
        let b = nbow(&toks("dog cat"), &sw, &st).unwrap();
        assert_eq!(b.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn wmd_cases() {
        let sw = Stopwords::empty();
        let st = store(&[("a", vec![0.0, 0.0]), ("b", vec![1.5, 2.0]), ("c", vec![1.0, 1.0])]);
        let enc = MeanSentenceEncoder { store: &st };
        let cfg = VertConfig { alpha: 5.0, stopwords: &sw, words: &st, encoder: &enc };
        assert_eq!(wmd(&toks("a b c"), &toks("c b a"), &cfg).unwrap(), 0.0);
        assert_eq!(wmd(&toks("a"), &toks("b"), &cfg).unwrap(), 2.5);
        assert_eq!(wmd(&toks("zz qq"), &toks("a"), &cfg).unwrap(), 5.0);
        assert_eq!(dis_subscore(&toks("zz"), &toks("a"), &cfg).unwrap(), 5.0);
    }

    #[test]
    fn dis_caps_at_alpha() {
        let sw = Stopwords::empty();
        let st = store(&[("a", vec![0.0]), ("b", vec![7.2]), ("c", vec![0.418])]);
        let enc = MeanSentenceEncoder { store: &st };
        let cfg = VertConfig { alpha: 5.0, stopwords: &sw, words: &st, encoder: &enc };
        assert_eq!(dis_subscore(&toks("a"), &toks("b"), &cfg).unwrap(), 5.0);
        assert_eq!(dis_subscore(&toks("a"), &toks("c"), &cfg).unwrap(), 0.418);
        assert_eq!(dis_subscore(&toks("b a"), &toks("a b"), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn sim_cases() {
        let sw = Stopwords::empty();
        let st = store(&[("up", vec![1.0, 0.0]), ("down", vec![-1.0, 0.0])]);
        let enc = MeanSentenceEncoder { store: &st };
        let cfg = VertConfig { alpha: 5.0, stopwords: &sw, words: &st, encoder: &enc };
        assert_eq!(sim_subscore(&toks("up"), &toks("up"), &cfg).unwrap(), 1.0);
        assert_eq!(sim_subscore(&toks("x"), &toks("y"), &cfg).unwrap(), 0.0);
        assert_eq!(sim_subscore(&toks("up"), &toks("down"), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn combine_table_rows() {
        assert!((vert_combine(0.979, 0.418, 5.0).unwrap() - 0.9477).abs() < 1e-4);
        assert!((vert_combine(0.924, 0.512, 5.0).unwrap() - 0.9108).abs() < 1e-4);
        assert_eq!(vert_combine(1.0, 0.0, 5.0).unwrap(), 1.0);
        assert_eq!(vert_combine(0.0, 5.0, 5.0).unwrap(), 0.0);
        assert!(vert_combine(1.1, 0.0, 5.0).is_err());
        assert!(vert_combine(0.5, 5.1, 5.0).is_err());
        assert!(vert_combine(0.5, -0.1, 5.0).is_err());
    }

    #[test]
    fn vert_averages_references() {
        let sw = Stopwords::empty();
        let st = store(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![1.0, 1.0])]);
        let enc = MeanSentenceEncoder { store: &st };
        let cfg = VertConfig { alpha: 5.0, stopwords: &sw, words: &st, encoder: &enc };
        let hyp = toks("a c");
        let (r1, r2) = (toks("b"), toks("a"));
        let one = |r: &Vec<String>| vert_score(&hyp, std::slice::from_ref(r), &cfg).unwrap();
        let both = vert_score(&hyp, &[r1.clone(), r2.clone()], &cfg).unwrap();
        assert!((both.vert - (one(&r1).vert + one(&r2).vert) / 2.0).abs() < 1e-15);
        let single = one(&r1);
        let sim = sim_subscore(&hyp, &r1, &cfg).unwrap();
        let dis = dis_subscore(&hyp, &r1, &cfg).unwrap();
        assert_eq!(single.vert, vert_combine(sim, dis, 5.0).unwrap());
        assert_eq!(vert_score(&hyp, std::slice::from_ref(&hyp), &cfg).unwrap().vert, 1.0);
        assert!(vert_score::<_, String>(&hyp, &[], &cfg).is_err());
    }

    #[test]
    fn holdout_counts() {
        let sw = Stopwords::empty();
        let st = store(&[("a", vec![0.0]), ("b", vec![1.0])]);
        let enc = MeanSentenceEncoder { store: &st };
        let cfg = VertConfig { alpha: 5.0, stopwords: &sw, words: &st, encoder: &enc };
        let same = vec![vec![toks("a b"), toks("b a")]];
        let h = holdout_stats(&same, &cfg).unwrap();
        assert_eq!(h.comparisons, 2);
        assert_eq!(h.wmd_bins, [2, 0, 0, 0, 0, 0]);
        assert_eq!(h.mean_vert, 1.0);
        let three = vec![vec![toks("a"), toks("b"), toks("a b")]];
        assert_eq!(holdout_stats(&three, &cfg).unwrap().comparisons, 6);
        assert!(holdout_stats(&[vec![toks("a")]], &cfg).is_err());
    }

    #[test]
    fn wmd_agrees_with_brute_force_transport() {
        let mut rng = Rng::new(5);
        let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
        let st = WordVectorStore::random(&words, 3, 8);
        let sw = Stopwords::empty();
        let enc = MeanSentenceEncoder { store: &st };
        let cfg = VertConfig { alpha: 100.0, stopwords: &sw, words: &st, encoder: &enc };
        for _ in 0..30 {
            let mut pick = |k: usize| (0..k).map(|_| words[rng.below(6)].clone()).collect::<Vec<_>>();
            let (a, b) = (pick(3), pick(4));
            let (na, nb) = (nbow(&a, &sw, &st).unwrap(), nbow(&b, &sw, &st).unwrap());
            if na.words.len() * nb.words.len() > 9 {
                continue;
            }
            let cost: Vec<f64> = na
                .words
                .iter()
                .flat_map(|x| nb.words.iter().map(|y| euclid(st.get(x).unwrap(), st.get(y).unwrap())))
                .collect();
            let oracle = brute_force(&na.weights, &nb.weights, &cost);
            assert!((wmd(&a, &b, &cfg).unwrap() - oracle).abs() < 1e-9);
        }
    }
}
