use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Object mentions extracted from one caption plus the image's gold objects.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CaptionMentions {
    pub caption_id: String,
    pub mentions: Vec<String>,
    pub gold_objects: Vec<String>,
}

/// Surface form to canonical object name. Unknown forms map to themselves.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct SynonymMap(pub BTreeMap<String, String>);

impl SynonymMap {
    pub fn canonical(&self, surface: &str) -> String {
        let key = surface.trim().to_lowercase();
        match self.0.get(&key) {
            Some(c) => c.trim().to_lowercase(),
            None => key,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChairReport {
    pub chair_s: f64,
    pub chair_i: f64,
    pub captions: usize,
    pub captions_with_hallucination: usize,
    pub mentioned_objects: usize,
    pub hallucinated_objects: usize,
    /// Set when no caption mentions any object; `chair_i` is then reported as 0.
    pub no_mentions: bool,
}

/// Corpus-level CHAIR: mentions are canonicalized and deduplicated per caption.
pub fn chair_scores(corpus: &[CaptionMentions], synonyms: &SynonymMap) -> Result<ChairReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut mentioned = 0;
    let mut hallucinated = 0;
    let mut bad_captions = 0;
    for caption in corpus {
        let gold: BTreeSet<String> = caption.gold_objects.iter().map(|g| synonyms.canonical(g)).collect();
        let objects: BTreeSet<String> = caption.mentions.iter().map(|m| synonyms.canonical(m)).collect();
        let fake = objects.iter().filter(|o| !gold.contains(*o)).count();
        mentioned += objects.len();
        hallucinated += fake;
        if fake > 0 {
            bad_captions += 1;
        }
    }
    let no_mentions = mentioned == 0;
    Ok(ChairReport {
        chair_s: bad_captions as f64 / corpus.len() as f64,
        chair_i: if no_mentions { 0.0 } else { hallucinated as f64 / mentioned as f64 },
        captions: corpus.len(),
        captions_with_hallucination: bad_captions,
        mentioned_objects: mentioned,
        hallucinated_objects: hallucinated,
        no_mentions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn caption(id: &str, mentions: &[&str], gold: &[&str]) -> CaptionMentions {
        CaptionMentions {
            caption_id: id.to_string(),
            mentions: mentions.iter().map(|s| s.to_string()).collect(),
            gold_objects: gold.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn worked_example() {
        let corpus = vec![
            caption("a", &["dog", "cat", "sofa", "table"], &["dog", "cat", "sofa"]),
            caption("b", &["car", "road"], &["car", "road", "tree"]),
        ];
        let r = chair_scores(&corpus, &SynonymMap::default()).unwrap();
        assert_eq!(r.chair_i, 1.0 / 6.0);
        assert_eq!(r.chair_s, 0.5);
    }

    #[test]
    fn clean_and_fully_hallucinated_corpora() {
        let clean = vec![caption("a", &["dog"], &["dog"])];
        let r = chair_scores(&clean, &SynonymMap::default()).unwrap();
        assert_eq!((r.chair_s, r.chair_i), (0.0, 0.0));
        let bad = vec![caption("a", &["dog"], &["cat"]), caption("b", &["car", "bus"], &[])];
        let r = chair_scores(&bad, &SynonymMap::default()).unwrap();
        assert_eq!((r.chair_s, r.chair_i), (1.0, 1.0));
    }

    #[test]
    fn synonyms_and_duplicates() {
        let mut map = BTreeMap::new();
        map.insert("puppy".to_string(), "dog".to_string());
        map.insert("kitten".to_string(), "cat".to_string());
        let corpus = vec![caption("a", &["Puppy", "dog", "dog", "kitten"], &["dog"])];
        let r = chair_scores(&corpus, &SynonymMap(map)).unwrap();
        assert_eq!(r.mentioned_objects, 2);
        assert_eq!(r.hallucinated_objects, 1);
    }

    #[test]
    fn no_mentions_is_flagged_not_an_error() {
        let r = chair_scores(&[caption("a", &[], &["dog"])], &SynonymMap::default()).unwrap();
        assert!(r.no_mentions);
        assert_eq!(r.chair_i, 0.0);
        assert_eq!(chair_scores(&[], &SynonymMap::default()), Err(Error::EmptyInput));
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<CaptionMentions>> {
        let names = ["dog", "cat", "car", "tree", "cup"];
        proptest::collection::vec(
            (proptest::collection::vec(0usize..5, 1..5), proptest::collection::vec(0usize..5, 0..5)),
            1..6,
        )
        .prop_map(move |caps| {
            caps.into_iter()
                .enumerate()
                .map(|(i, (m, g))| CaptionMentions {
                    caption_id: alloc::format!("{i}"),
                    mentions: m.into_iter().map(|j| names[j].to_string()).collect(),
                    gold_objects: g.into_iter().map(|j| names[j].to_string()).collect(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(corpus in corpus_strategy()) {
            let syn = SynonymMap::default();
            let r = chair_scores(&corpus, &syn).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.chair_s) && (0.0..=1.0).contains(&r.chair_i));
            prop_assert_eq!(r.chair_s == 0.0, r.chair_i == 0.0);
            let mut more = corpus.clone();
            more.push(caption("clean", &["dog"], &["dog"]));
            let r2 = chair_scores(&more, &syn).unwrap();
            prop_assert!(r2.chair_s <= r.chair_s && r2.chair_i <= r.chair_i);
        }
    }
}
