use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AttentionSpec;

/// Page tokens allowed per page when `pages` pages share a decoder input of
/// `decoder_budget` positions: `floor(S / P)`.
pub fn page_budget(decoder_budget: usize, pages: usize) -> Result<usize> {
    if pages == 0 {
        return Err(Error::Validation("page_budget needs at least one page".into()));
    }
    if decoder_budget == 0 {
        return Err(Error::Validation("page_budget needs a positive decoder budget".into()));
    }
    Ok(decoder_budget / pages)
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HiVt5Config {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Filled from the vocabulary when the model is built.
    pub vocab_size: usize,
    /// M: [PAGE] tokens per page.
    pub page_tokens: usize,
    /// L: encoder positions per page ([PAGE] + visual + question + OCR).
    pub page_len: usize,
    /// S: decoder memory positions.
    pub decoder_budget: usize,
    /// P_max: most pages per document.
    pub max_pages: usize,
    pub patch_size: usize,
    pub use_visual: bool,
    /// λ: weight of the page-identification loss.
    pub page_loss_weight: f64,
    /// Page cross-entropy over all `max_pages` slots (absent slots score
    /// their bias only) rather than over present pages.
    pub page_loss_all_slots: bool,
    pub coord_buckets: usize,
    pub rel_buckets: usize,
    pub rel_max_distance: usize,
    pub max_answer_len: usize,
    pub n_sentinels: usize,
    pub token_init_std: f64,
    pub coord_init_std: f64,
}

impl Default for HiVt5Config {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 4,
            d_ff: 256,
            vocab_size: 0,
            page_tokens: 10,
            page_len: 128,
            decoder_budget: 1024,
            max_pages: 20,
            patch_size: 16,
            use_visual: true,
            page_loss_weight: 1.0,
            page_loss_all_slots: true,
            coord_buckets: 32,
            rel_buckets: 32,
            rel_max_distance: 128,
            max_answer_len: 8,
            n_sentinels: crate::model::vocab::DEFAULT_SENTINELS,
            token_init_std: 0.5,
            coord_init_std: 0.1,
        }
    }
}

impl HiVt5Config {
    pub fn attention_spec(&self) -> Result<AttentionSpec> {
        AttentionSpec::new(self.d_model, self.n_heads, self.rel_buckets, self.rel_max_distance)
    }

    /// Total encoder positions over a maximal document, `L · P_max`.
    pub fn encoder_capacity(&self) -> usize {
        self.page_len * self.max_pages
    }

    pub fn validate(&self) -> Result<()> {
        self.attention_spec()?;
        let positive = [
            ("d_model", self.d_model),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_ff", self.d_ff),
            ("page_tokens", self.page_tokens),
            ("page_len", self.page_len),
            ("decoder_budget", self.decoder_budget),
            ("max_pages", self.max_pages),
            ("patch_size", self.patch_size),
            ("coord_buckets", self.coord_buckets),
            ("max_answer_len", self.max_answer_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let m_max = page_budget(self.decoder_budget, self.max_pages)?;
        if self.page_tokens > m_max {
            return Err(Error::Config(format!(
                "page_tokens {} exceeds decoder_budget / max_pages = {} / {} = {m_max}",
                self.page_tokens, self.decoder_budget, self.max_pages
            )));
        }
        if self.page_tokens >= self.page_len {
            return Err(Error::Config(format!(
                "page_len {} leaves no room after {} page tokens",
                self.page_len, self.page_tokens
            )));
        }
        if !(self.page_loss_weight >= 0.0 && self.page_loss_weight.is_finite()) {
            return Err(Error::Config(format!("page_loss_weight {} must be finite and >= 0", self.page_loss_weight)));
        }
        if !(self.token_init_std >= 0.0 && self.coord_init_std >= 0.0) {
            return Err(Error::Config("init std must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::{prop_assert, proptest};

    use super::*;

    #[test]
    fn budget_examples() {
        assert_eq!(page_budget(1024, 20).unwrap(), 51);
        assert_eq!(page_budget(1024, 1).unwrap(), 1024);
        assert_eq!(page_budget(1024, 1024).unwrap(), 1);
        assert!(matches!(page_budget(1024, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn capacity_and_page_token_limit() {
        let cfg = HiVt5Config {
            page_len: 1024,
            max_pages: 20,
            page_tokens: 10,
            decoder_budget: 1024,
            ..Default::default()
        };
        assert_eq!(cfg.encoder_capacity(), 20480);
        cfg.validate().unwrap();
        let too_many = HiVt5Config {
            page_tokens: 52,
            ..cfg.clone()
        };
        assert!(matches!(too_many.validate(), Err(Error::Config(_))));
        let ok = HiVt5Config { page_tokens: 51, ..cfg };
        ok.validate().unwrap();
    }

    proptest! {
        #[test]
        fn budget_law(s in 1usize..1_000_000, p in 1usize..5_000) {
            let m = page_budget(s, p).unwrap();
            prop_assert!(m * p <= s && s < (m + 1) * p);
        }
    }
}
