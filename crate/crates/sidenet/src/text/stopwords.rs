//! Stopword list used by the knowledge-similarity metric. A default
//! 120-word English list ships with the crate; callers may supply their own
//! file with one lowercase word per line.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT: &str = "\
a about above after again all am an and any are as at be because been before \
being below between both but by could did do does doing down during each few \
for from further had has have having he her here hers herself him himself his \
how i if in into is it its itself just me more most my myself no nor not now \
of off on once only or other our ours ourselves out over own same she so some \
such than that the their theirs them themselves then there these they this \
those through to too under until up very was we were what when where which \
while who whom why with you your yours yourself";

pub fn default_stopwords() -> HashSet<String> {
    DEFAULT.split_whitespace().map(|s| s.to_string()).collect()
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

pub fn write_default_stopwords(path: &Path) -> Result<()> {
    let mut words: Vec<&str> = DEFAULT.split_whitespace().collect();
    words.sort_unstable();
    fs::write(path, words.join("\n") + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_list_has_120_words() {
        assert_eq!(default_stopwords().len(), 120);
    }

    #[test]
    fn common_words_present() {
        let sw = default_stopwords();
        for w in ["the", "i", "my", "and", "is", "a"] {
            assert!(sw.contains(w), "missing '{w}'");
        }
    }
}
