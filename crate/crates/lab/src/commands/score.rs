use std::path::Path;

use dleaf_core::eval::{chair_scores, pope_score, CaptionMentions, ChairReport, PopeItem, PopeReport, SynonymMap};

use crate::error::{LabError, LabResult};
use crate::trace_io::read_ndjson;

pub fn load_synonyms(path: &Path) -> LabResult<SynonymMap> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Parse {
        origin: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn score_chair(captions: &Path, synonyms: Option<&Path>) -> LabResult<ChairReport> {
    let corpus: Vec<CaptionMentions> = read_ndjson(captions)?;
    let map = match synonyms {
        Some(p) => load_synonyms(p)?,
        None => SynonymMap::default(),
    };
    Ok(chair_scores(&corpus, &map)?)
}

pub fn score_pope(items: &Path) -> LabResult<PopeReport> {
    let items: Vec<PopeItem> = read_ndjson(items)?;
    Ok(pope_score(&items)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chair_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let captions = dir.path().join("c.ndjson");
        std::fs::write(
            &captions,
            "{\"caption_id\":\"a\",\"mentions\":[\"puppy\",\"cat\"],\"gold_objects\":[\"dog\"]}\n\n{\"caption_id\":\"b\",\"mentions\":[],\"gold_objects\":[]}\n",
        )
        .unwrap();
        let syn = dir.path().join("s.json");
        std::fs::write(&syn, "{\"puppy\": \"dog\"}").unwrap();
        let r = score_chair(&captions, Some(&syn)).unwrap();
        assert_eq!((r.chair_s, r.chair_i), (0.5, 0.5));
    }

    #[test]
    fn malformed_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let items = dir.path().join("p.ndjson");
        std::fs::write(
            &items,
            "{\"image_id\":\"i\",\"turn\":0,\"object\":\"dog\",\"gold\":\"yes\",\"pred\":\"no\"}\n{\"image_id\":\"i\",\"turn\":1,\"object\":\"dog\",\"gold\":\"maybe\",\"pred\":\"no\"}\n",
        )
        .unwrap();
        let err = score_pope(&items).unwrap_err();
        assert!(matches!(err, LabError::Parse { line: 2, .. }), "{err}");
    }
}
