/// Porter (1980) stemmer.
pub fn porter(word: &str) -> String {
    porter_stemmer::stem(word)
}

/// A light inflectional stemmer in the spirit of KStem: it only strips
/// plural, past-tense and progressive suffixes and never produces a
/// stem shorter than three characters. Unlike KStem it has no lexicon, so
/// it cannot tell "news" from a plural; treat it as best effort.
pub fn kstem_like(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    if n <= 3 || !chars.iter().all(|c| c.is_alphabetic()) {
        return word.to_string();
    }
    let s: &str = word;
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u');

    // plurals
    if let Some(stem) = s.strip_suffix("ies") {
        if stem.chars().count() >= 2 {
            return format!("{stem}y");
        }
    }
    if s.ends_with("sses") || s.ends_with("xes") || s.ends_with("ches") || s.ends_with("shes") {
        return s[..s.len() - 2].to_string();
    }
    if s.ends_with('s') && !s.ends_with("ss") && !s.ends_with("us") && !s.ends_with("is") {
        return s[..s.len() - 1].to_string();
    }

    // past tense / progressive
    for suffix in ["ing", "ed"] {
        if let Some(stem) = s.strip_suffix(suffix) {
            let stem_chars: Vec<char> = stem.chars().collect();
            if stem_chars.len() < 3 || !stem_chars.iter().any(|&c| is_vowel(c)) {
                continue;
            }
            let m = stem_chars.len();
            let last = stem_chars[m - 1];
            // "stopped" -> "stop"
            if last == stem_chars[m - 2] && !matches!(last, 'l' | 's' | 'z') && !is_vowel(last) {
                return stem_chars[..m - 1].iter().collect();
            }
            if suffix == "ed" && stem.ends_with('i') {
                return format!("{}y", &stem[..stem.len() - 1]);
            }
            return stem.to_string();
        }
    }
    word.to_string()
}
