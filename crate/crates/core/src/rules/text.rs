use unicode_normalization::UnicodeNormalization;

/// Canonical form used for semantic text comparison: NFC composition, trim,
/// case fold (unless `strict`), internal whitespace collapsed to one space.
pub fn normalize(text: &str, strict: bool) -> String {
    let composed: String = text.nfc().collect();
    let folded = if strict { composed } else { composed.to_lowercase() };
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}
