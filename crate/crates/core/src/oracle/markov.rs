use crate::backend::{check_request, BackendError, DistTable, LogProbProvider, ProviderInfo};
use crate::corpus::BYTE_TOKENIZER_ID;

use super::synth::{markov_table, MarkovSpec, SynthSpec, MARKOV_SYMBOLS};
use super::OracleError;

/// The exact conditional distribution of a synthetic Markov source, over
/// byte tokens. Positions with fewer than `order` preceding tokens are
/// uniform over the alphabet, matching how documents are generated.
#[derive(Debug, Clone)]
pub struct MarkovProvider {
    spec: MarkovSpec,
    table: Vec<Vec<f64>>,
}

impl MarkovProvider {
    pub fn new(spec: &MarkovSpec) -> Result<Self, OracleError> {
        SynthSpec::Markov(spec.clone()).validate()?;
        Ok(Self {
            spec: spec.clone(),
            table: markov_table(spec),
        })
    }

    fn symbol_index(&self, token: u32) -> Option<usize> {
        MARKOV_SYMBOLS[..self.spec.alphabet_size]
            .iter()
            .position(|&b| u32::from(b) == token)
    }

    fn indices(&self, tokens: &[u32]) -> Result<Vec<usize>, BackendError> {
        tokens
            .iter()
            .enumerate()
            .map(|(pos, &t)| {
                self.symbol_index(t).ok_or_else(|| {
                    BackendError::Argument(format!("token {t} at position {pos} is outside the markov alphabet"))
                })
            })
            .collect()
    }

    /// Next-symbol probabilities given the alphabet indices of the prefix.
    fn row(&self, prefix: &[usize]) -> Vec<f64> {
        let a = self.spec.alphabet_size;
        let k = self.spec.order;
        if prefix.len() < k {
            return vec![1.0 / a as f64; a];
        }
        let row = prefix[prefix.len() - k..].iter().fold(0, |acc, &x| acc * a + x);
        self.table[row].clone()
    }

    /// Full next-token distribution over the 256 byte ids.
    pub fn full_next_distribution(&self, prefix: &[u32]) -> Result<DistTable, BackendError> {
        let idx = self.indices(prefix)?;
        let mut probs = vec![0.0; 256];
        for (i, p) in self.row(&idx).into_iter().enumerate() {
            probs[usize::from(MARKOV_SYMBOLS[i])] = p;
        }
        DistTable::new(probs)
    }
}

impl LogProbProvider for MarkovProvider {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            vocab_size: 256,
            max_context: usize::MAX,
            tokenizer_id: BYTE_TOKENIZER_ID.to_string(),
        }
    }

    fn logprobs(&self, tokens: &[u32], eval_start: usize, eval_end: usize) -> Result<Vec<f64>, BackendError> {
        check_request(tokens, eval_start, eval_end, 256)?;
        let idx = self.indices(&tokens[..eval_end])?;
        Ok((eval_start..eval_end)
            .map(|i| self.row(&idx[..i])[idx[i]].ln())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_prefixes_are_uniform() {
        let p = MarkovProvider::new(&MarkovSpec::default()).unwrap();
        let toks: Vec<u32> = b"abcd".iter().map(|&b| u32::from(b)).collect();
        let lp = p.logprobs(&toks, 1, 4).unwrap();
        assert!((lp[0] - (1.0f64 / 16.0).ln()).abs() < 1e-15);
        let d = p.full_next_distribution(&toks[..2]).unwrap();
        assert!((d.probs[usize::from(b'c')].ln() - lp[1]).abs() < 1e-15);
        assert!((d.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn only_last_order_tokens_matter() {
        let p = MarkovProvider::new(&MarkovSpec::default()).unwrap();
        let a: Vec<u32> = b"ppabc".iter().map(|&b| u32::from(b)).collect();
        let b: Vec<u32> = b"oiabc".iter().map(|&b| u32::from(b)).collect();
        assert_eq!(p.logprobs(&a, 4, 5).unwrap(), p.logprobs(&b, 4, 5).unwrap());
    }

    #[test]
    fn rejects_foreign_tokens() {
        let p = MarkovProvider::new(&MarkovSpec::default()).unwrap();
        assert!(p.logprobs(&[97, 200, 97], 1, 3).is_err());
    }
}
