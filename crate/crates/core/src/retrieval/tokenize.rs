use unicode_segmentation::UnicodeSegmentation;

/// Lowercased word tokens. Runs of CJK characters are emitted as one token
/// per character followed by the run's character bigrams.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run: Vec<char> = Vec::new();
    let mut run_end = 0usize;

    for (start, word) in text.unicode_word_indices() {
        if word.chars().all(is_cjk) {
            if start != run_end {
                flush_run(&mut run, &mut tokens);
            }
            run.extend(word.chars());
            run_end = start + word.len();
            continue;
        }
        flush_run(&mut run, &mut tokens);
        tokens.push(word.to_lowercase());
    }
    flush_run(&mut run, &mut tokens);
    tokens
}

fn flush_run(run: &mut Vec<char>, tokens: &mut Vec<String>) {
    tokens.extend(run.iter().map(|c| c.to_string()));
    tokens.extend(run.windows(2).map(|pair| pair.iter().collect::<String>()));
    run.clear();
}

/// Han ideographs, kana and Hangul syllables.
pub(crate) fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xAC00..=0xD7AF    // Hangul syllables
        | 0xF900..=0xFAFF    // CJK compatibility ideographs
        | 0x20000..=0x3134F  // CJK extensions B..G
    )
}
