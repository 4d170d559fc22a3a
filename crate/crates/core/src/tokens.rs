//! Token estimation used for every context budget in the engine.

/// Counts tokens for budgeting purposes.
///
/// The default [`CharEstimate`] is backend independent. A backend that knows
/// its tokenizer can supply a tighter counter.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// `ceil(chars / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharEstimate;

impl TokenCounter for CharEstimate {
    fn count(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Longest char prefix of `text` whose count under `counter` is at most `budget`.
pub fn clip_to_budget<'a>(text: &'a str, budget: usize, counter: &dyn TokenCounter) -> &'a str {
    if counter.count(text) <= budget {
        return text;
    }
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    // bounds[k] is the byte offset of the k-char prefix
    let (mut lo, mut hi) = (0usize, bounds.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if counter.count(&text[..bounds[mid]]) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    &text[..bounds[lo]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("a"), 1);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
        // chars, not bytes
        assert_eq!(estimate_tokens("ééééé"), 2);
    }

    #[test]
    fn clip_keeps_longest_fitting_prefix() {
        let text = "abcdefghij";
        assert_eq!(clip_to_budget(text, 1, &CharEstimate), "abcd");
        assert_eq!(clip_to_budget(text, 0, &CharEstimate), "");
        assert_eq!(clip_to_budget(text, 100, &CharEstimate), text);
        assert_eq!(clip_to_budget("héllo wörld", 2, &CharEstimate), "héllo wö");
    }
}
