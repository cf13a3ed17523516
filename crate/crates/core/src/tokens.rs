/// Heuristic token count: one token per four characters, rounded up.
///
/// Used whenever a provider does not report usage. Both sides of any
/// strategy comparison go through this same counter.
pub fn count_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formula() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("abcd"), 1);
        assert_eq!(count_tokens("abcde"), 2);
        assert_eq!(count_tokens("é"), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn concatenation_is_subadditive(a in ".{0,64}", b in ".{0,64}") {
            let joined = alloc::format!("{a}{b}");
            prop_assert!(count_tokens(&joined) <= count_tokens(&a) + count_tokens(&b) + 1);
        }

        #[test]
        fn monotone_and_zero_only_on_empty(a in ".{0,64}", ext in ".{0,16}") {
            let longer = alloc::format!("{a}{ext}");
            prop_assert!(count_tokens(&longer) >= count_tokens(&a));
            prop_assert_eq!(count_tokens(&a) == 0, a.is_empty());
        }
    }
}
