/// The universal part-of-speech inventory, in canonical order.
pub const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

pub const NUM_UPOS: usize = UPOS_TAGS.len();

pub const ADJ: usize = 0;
pub const ADP: usize = 1;
pub const DET: usize = 5;
pub const NOUN: usize = 7;
pub const PUNCT: usize = 12;
pub const VERB: usize = 15;

pub fn upos_id(tag: &str) -> Option<usize> {
    UPOS_TAGS.iter().position(|t| *t == tag)
}

pub fn upos_name(id: usize) -> &'static str {
    UPOS_TAGS[id]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_constants_match_inventory() {
        for (id, name) in [
            (ADJ, "ADJ"),
            (ADP, "ADP"),
            (DET, "DET"),
            (NOUN, "NOUN"),
            (PUNCT, "PUNCT"),
            (VERB, "VERB"),
        ] {
            assert_eq!(upos_name(id), name);
            assert_eq!(upos_id(name), Some(id));
        }
        assert_eq!(upos_id("FOO"), None);
    }
}
