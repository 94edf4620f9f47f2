use rust_stemmers::{Algorithm, Stemmer};

use super::IndexParams;

/// Lucene's classic English stop set.
pub const STOPWORDS: [&str; 33] = [
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it", "no", "not", "of",
    "on", "or", "such", "that", "the", "their", "then", "there", "these", "they", "this", "to", "was", "will", "with",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Lowercases, splits on non-alphanumerics, drops stopwords and stems,
/// according to `params`. Token order follows the input.
pub fn tokenize(text: &str, params: &IndexParams) -> Vec<String> {
    Analyzer::new(params).tokenize(text)
}

pub struct Analyzer {
    stemmer: Option<Stemmer>,
    stopwords: bool,
}

impl Analyzer {
    pub fn new(params: &IndexParams) -> Self {
        Self {
            stemmer: params.stemming.then(|| Stemmer::create(Algorithm::English)),
            stopwords: params.stopwords,
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .filter(|t| !(self.stopwords && is_stopword(t)))
            .map(|t| match &self.stemmer {
                Some(stemmer) => stemmer.stem(&t).into_owned(),
                None => t,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(stemming: bool, stopwords: bool) -> IndexParams {
        IndexParams {
            stemming,
            stopwords,
            ..IndexParams::default()
        }
    }

    #[test]
    fn lowercase_and_split() {
        assert_eq!(tokenize("Diet Soda!", &params(false, false)), vec!["diet", "soda"]);
        assert!(tokenize("", &params(true, true)).is_empty());
    }

    #[test]
    fn all_stopwords() {
        assert!(tokenize("the of a", &params(false, true)).is_empty());
        assert_eq!(tokenize("the of a", &params(false, false)), vec!["the", "of", "a"]);
    }

    #[test]
    fn stemming_conflates_inflections() {
        assert_eq!(tokenize("running runs", &params(true, false)), vec!["run", "run"]);
        // reference outputs of the Porter family on the classic test words
        assert_eq!(
            tokenize("caresses ponies meeting agreed", &params(true, false)),
            vec!["caress", "poni", "meet", "agre"]
        );
    }

    #[test]
    fn stop_set_has_33_entries() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 33);
    }
}
